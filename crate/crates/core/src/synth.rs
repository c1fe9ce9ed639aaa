//! Procedural exposure stacks with ghosting, patch extraction, augmentation
//! and dataset splitting.
//!
//! A scene is a continuous RGB radiance function: a smooth log-luminance
//! background plus tinted Gaussian highlights. The reference bracket and the
//! ground truth sample it on the pixel grid; brackets 1 and 3 sample a
//! translated copy so that fusing them naively produces ghosts.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ExposureStack, DEFAULT_GAMMA};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub seed: u64,
    pub size: (usize, usize),
    pub n_blobs: usize,
    /// Linear radiance range `[lo, hi]`.
    pub luminance_range: (f32, f32),
    /// Largest per-axis translation of brackets 1 and 3, in pixels.
    pub motion_px: f32,
    pub noise_sigma: f32,
    pub exposure_times: [f32; 3],
    pub gamma: f32,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            seed: 0,
            size: (64, 64),
            n_blobs: 6,
            luminance_range: (0.02, 8.0),
            motion_px: 4.0,
            noise_sigma: 0.005,
            exposure_times: [0.25, 1.0, 4.0],
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.size;
        let (lo, hi) = self.luminance_range;
        if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidArgument(format!("scene size {h}x{w} must be even and non-zero")));
        }
        if !(lo >= 0.0 && hi > lo) {
            return Err(Error::InvalidArgument(format!("luminance range [{lo}, {hi}]")));
        }
        if !(self.motion_px >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument("motion and noise must be non-negative".into()));
        }
        Ok(())
    }
}

struct Blob {
    y: f64,
    x: f64,
    inv_two_sigma2: f64,
    rgb: [f64; 3],
}

struct Wave {
    ky: f64,
    kx: f64,
    phase: f64,
}

struct Scene {
    waves: Vec<Wave>,
    blobs: Vec<Blob>,
    tint: [f64; 3],
    log_lo: f64,
    log_span: f64,
}

impl Scene {
    fn random(p: &SceneParams, rng: &mut ChaCha8Rng) -> Scene {
        let (h, w) = (p.size.0 as f64, p.size.1 as f64);
        let (lo, hi) = (p.luminance_range.0.max(1e-6) as f64, p.luminance_range.1 as f64);
        let waves = (0..3)
            .map(|_| {
                let periods: f64 = rng.gen_range(0.3..1.5);
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU * periods / h.max(w);
                Wave {
                    ky: k * angle.sin(),
                    kx: k * angle.cos(),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                }
            })
            .collect();
        let blobs = (0..p.n_blobs)
            .map(|_| {
                let sigma = rng.gen_range(0.04..0.15) * h.min(w);
                let peak = rng.gen_range(0.25..1.0) * hi;
                let tint: [f64; 3] = [rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0)];
                Blob {
                    y: rng.gen_range(0.0..h),
                    x: rng.gen_range(0.0..w),
                    inv_two_sigma2: 1.0 / (2.0 * sigma * sigma),
                    rgb: tint.map(|t| t * peak),
                }
            })
            .collect();
        let tint = [rng.gen_range(0.7..1.0), rng.gen_range(0.7..1.0), rng.gen_range(0.7..1.0)];
        // Background spans the lower part of the range; highlights reach the top.
        let bg_hi = (hi / 4.0).max(lo * 1.0001);
        Scene {
            waves,
            blobs,
            tint,
            log_lo: lo.ln(),
            log_span: bg_hi.ln() - lo.ln(),
        }
    }

    fn radiance(&self, y: f64, x: f64) -> [f64; 3] {
        let s = self
            .waves
            .iter()
            .map(|w| (w.ky * y + w.kx * x + w.phase).sin())
            .sum::<f64>()
            / self.waves.len() as f64;
        let bg = (self.log_lo + self.log_span * 0.5 * (s + 1.0)).exp();
        let mut rgb = self.tint.map(|t| t * bg);
        for b in &self.blobs {
            let d2 = (y - b.y).powi(2) + (x - b.x).powi(2);
            let g = (-d2 * b.inv_two_sigma2).exp();
            for c in 0..3 {
                rgb[c] += b.rgb[c] * g;
            }
        }
        rgb
    }

    /// Radiance image of the scene translated by `(dy, dx)`.
    fn render(&self, h: usize, w: usize, dy: f64, dx: f64) -> Tensor {
        let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
        let plane = h * w;
        let data = t.data_mut();
        for y in 0..h {
            for x in 0..w {
                let rgb = self.radiance(y as f64 - dy, x as f64 - dx);
                for c in 0..3 {
                    data[c * plane + y * w + x] = rgb[c] as f32;
                }
            }
        }
        t
    }
}

/// Camera response: `clamp((radiance * t)^(1/gamma) + noise, 0, 1)`.
fn expose(radiance: &Tensor, t: f32, gamma: f32, sigma: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let inv_g = 1.0 / gamma as f64;
    let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma as f64).expect("sigma is finite"));
    let data = radiance
        .data()
        .iter()
        .map(|&v| {
            let clean = ((v as f64 * t as f64).max(0.0)).powf(inv_g);
            let n = noise.as_ref().map_or(0.0, |d| d.sample(rng));
            (clean + n).clamp(0.0, 1.0) as f32
        })
        .collect();
    Tensor::new(radiance.shape(), data).expect("same shape")
}

/// Bracket translations drawn for a scene: `[(dy1, dx1), (dy3, dx3)]`.
pub fn bracket_shifts(p: &SceneParams) -> [(f64, f64); 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let _ = Scene::random(p, &mut rng);
    draw_shifts(p, &mut rng)
}

fn draw_shifts(p: &SceneParams, rng: &mut ChaCha8Rng) -> [(f64, f64); 2] {
    let m = p.motion_px as f64;
    let mut d = || if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
    [(d(), d()), (d(), d())]
}

/// Deterministic stack for `p.seed`.
pub fn gen_scene(p: &SceneParams) -> Result<ExposureStack> {
    p.validate()?;
    let (h, w) = p.size;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let scene = Scene::random(p, &mut rng);
    let shifts = draw_shifts(p, &mut rng);
    let gt = scene.render(h, w, 0.0, 0.0);
    let r1 = scene.render(h, w, shifts[0].0, shifts[0].1);
    let r3 = scene.render(h, w, shifts[1].0, shifts[1].1);
    let t = p.exposure_times;
    let ldr = [
        expose(&r1, t[0], p.gamma, p.noise_sigma, &mut rng),
        expose(&gt, t[1], p.gamma, p.noise_sigma, &mut rng),
        expose(&r3, t[2], p.gamma, p.noise_sigma, &mut rng),
    ];
    ExposureStack::new(ldr, t, Some(gt))
}

/// Patch origins along one axis: multiples of `stride`, plus a final origin
/// flush with the far edge when the grid leaves a remainder.
pub fn patch_anchors(len: usize, size: usize, stride: usize) -> Result<Vec<usize>> {
    if size == 0 || stride == 0 {
        return Err(Error::InvalidArgument("patch size and stride must be positive".into()));
    }
    if len < size {
        return Err(Error::shape("crop_patches", format!("image edge {len} smaller than patch {size}")));
    }
    let mut a: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o + size <= len).collect();
    let last = *a.last().expect("at least origin 0");
    if last + size < len {
        a.push(len - size);
    }
    Ok(a)
}

pub fn crop_patches(stack: &ExposureStack, size: usize, stride: usize) -> Result<Vec<ExposureStack>> {
    let rows = patch_anchors(stack.height(), size, stride)?;
    let cols = patch_anchors(stack.width(), size, stride)?;
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &y in &rows {
        for &x in &cols {
            out.push(stack.map_images(|t| t.crop(y, x, size, size))?);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Augment {
    Identity,
    FlipV,
    FlipH,
    Rot90,
}

impl Augment {
    pub const ALL: [Augment; 4] = [Augment::Identity, Augment::FlipV, Augment::FlipH, Augment::Rot90];

    pub fn apply_tensor(self, t: &Tensor) -> Result<Tensor> {
        match self {
            Augment::Identity => Ok(t.clone()),
            Augment::FlipV => Ok(t.flip_v()),
            Augment::FlipH => Ok(t.flip_h()),
            Augment::Rot90 => t.rot90(),
        }
    }

    pub fn apply(self, stack: &ExposureStack) -> Result<ExposureStack> {
        stack.map_images(|t| self.apply_tensor(t))
    }
}

/// Applies one uniformly chosen transform to all brackets and the ground truth.
pub fn augment<R: Rng + ?Sized>(stack: &ExposureStack, rng: &mut R) -> Result<(ExposureStack, Augment)> {
    let a = Augment::ALL[rng.gen_range(0..4)];
    Ok((a.apply(stack)?, a))
}

/// Seeded shuffle, then the first `n_val` items become the validation set.
pub fn split_dataset<T>(mut items: Vec<T>, n_val: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if n_val > 0 && n_val >= items.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot hold out {n_val} of {} stacks",
            items.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let train = items.split_off(n_val);
    Ok((train, items))
}

/// Per-stack seeds derived from a dataset seed.
pub fn stack_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::gamma_adjust;

    fn small(seed: u64) -> SceneParams {
        SceneParams {
            seed,
            size: (32, 48),
            ..SceneParams::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(gen_scene(&small(3)).unwrap(), gen_scene(&small(3)).unwrap());
        assert_ne!(gen_scene(&small(3)).unwrap(), gen_scene(&small(4)).unwrap());
    }

    #[test]
    fn no_motion_no_noise_inverts() {
        let p = SceneParams {
            motion_px: 0.0,
            noise_sigma: 0.0,
            ..small(11)
        };
        let s = gen_scene(&p).unwrap();
        let gt = s.gt.as_ref().unwrap();
        for i in 0..3 {
            let lin = gamma_adjust(&s.ldr[i], s.exposure_times[i], p.gamma).unwrap();
            for (a, (b, l)) in lin.data().iter().zip(gt.data().iter().zip(s.ldr[i].data())) {
                if *l < 0.999 {
                    assert!((a - b).abs() < 1e-3, "bracket {i}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn long_exposure_saturates() {
        let s = gen_scene(&small(5)).unwrap();
        let sat = s.ldr[2].data().iter().filter(|&&v| v >= 1.0).count();
        assert!(sat > 0);
    }

    #[test]
    fn paper_size_anchor_grid() {
        assert_eq!(patch_anchors(1060, 250, 250).unwrap(), vec![0, 250, 500, 750, 810]);
        assert_eq!(
            patch_anchors(1900, 250, 250).unwrap(),
            vec![0, 250, 500, 750, 1000, 1250, 1500, 1650]
        );
        assert_eq!(patch_anchors(1000, 250, 250).unwrap().len(), 4);
        assert_eq!(patch_anchors(250, 250, 250).unwrap(), vec![0]);
        assert!(patch_anchors(249, 250, 250).is_err());
    }

    #[test]
    fn split_sizes() {
        let (tr, va) = split_dataset((0..100).collect::<Vec<_>>(), 25, 1).unwrap();
        assert_eq!((tr.len(), va.len()), (75, 25));
        let (tr, va) = split_dataset((0..10).collect::<Vec<_>>(), 0, 1).unwrap();
        assert_eq!((tr.len(), va.len()), (10, 0));
        assert!(split_dataset((0..3).collect::<Vec<_>>(), 3, 1).is_err());
    }

    #[test]
    fn rotation_needs_square() {
        let s = gen_scene(&small(1)).unwrap();
        assert!(Augment::Rot90.apply(&s).is_err());
    }
}
