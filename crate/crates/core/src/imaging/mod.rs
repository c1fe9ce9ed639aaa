//! Radiometry, quality metrics and image files.

pub mod ldr;
pub mod metrics;
pub mod pfm;
pub mod radiometry;

pub use ldr::{read_ldr8, write_ldr8};
pub use metrics::{mse, psnr, psnr_mu, PSNR_CAP_DB};
pub use pfm::{read_pfm, write_pfm};
pub use radiometry::{
    gamma_adjust, gamma_inverse, mu_law, percentile, TanhNorm, DEFAULT_GAMMA, DEFAULT_MU,
};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Three brackets of one scene, each (1, 3, h, w), with their exposure
/// times and optionally the linear ground truth aligned to bracket 2.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposureStack {
    pub ldr: [Tensor; 3],
    pub exposure_times: [f32; 3],
    pub gt: Option<Tensor>,
}

impl ExposureStack {
    pub fn new(ldr: [Tensor; 3], exposure_times: [f32; 3], gt: Option<Tensor>) -> Result<Self> {
        let s = ldr[1].shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::shape("ExposureStack", format!("bracket shape {s}")));
        }
        for (i, b) in ldr.iter().enumerate() {
            if b.shape() != s {
                return Err(Error::shape(
                    "ExposureStack",
                    format!("bracket {} is {} but bracket 2 is {s}", i + 1, b.shape()),
                ));
            }
        }
        if let Some(g) = &gt {
            if g.shape() != s {
                return Err(Error::shape(
                    "ExposureStack",
                    format!("ground truth {} vs brackets {s}", g.shape()),
                ));
            }
        }
        let [t1, t2, t3] = exposure_times;
        if !(t1 > 0.0 && t1 < t2 && t2 < t3) {
            return Err(Error::Degenerate(format!(
                "exposure times must be positive and increasing, got {exposure_times:?}"
            )));
        }
        Ok(ExposureStack {
            ldr,
            exposure_times,
            gt,
        })
    }

    pub fn height(&self) -> usize {
        self.ldr[1].shape().h
    }

    pub fn width(&self) -> usize {
        self.ldr[1].shape().w
    }

    /// Per-bracket network inputs `[ldr_i, ldr_i^gamma / t_i]`, six channels each.
    pub fn network_inputs(&self, gamma: f32) -> Result<[Tensor; 3]> {
        let enc = |i: usize| -> Result<Tensor> {
            let h = gamma_adjust(&self.ldr[i], self.exposure_times[i], gamma)?;
            Tensor::concat_channels(&[&self.ldr[i], &h])
        };
        Ok([enc(0)?, enc(1)?, enc(2)?])
    }

    /// The reference bracket mapped to linear radiance: the trivial
    /// "no fusion" estimate.
    pub fn reference_passthrough(&self, gamma: f32) -> Result<Tensor> {
        gamma_adjust(&self.ldr[1], self.exposure_times[1], gamma)
    }

    /// Applies one spatial transform to every bracket and the ground truth.
    pub fn map_images(&self, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Self> {
        Ok(ExposureStack {
            ldr: [f(&self.ldr[0])?, f(&self.ldr[1])?, f(&self.ldr[2])?],
            exposure_times: self.exposure_times,
            gt: self.gt.as_ref().map(&f).transpose()?,
        })
    }

    pub fn shape(&self) -> Shape {
        self.ldr[1].shape()
    }
}
