//! Elementwise activations and their derivatives.
//!
//! Derivatives at the kink of ReLU and leaky ReLU take the value from the
//! positive side.

use crate::tensor::Tensor;

#[inline]
pub fn leaky_relu_scalar(x: f32, slope: f32) -> f32 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn sigmoid_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f32) -> Tensor {
    x.map(|v| leaky_relu_scalar(v, slope))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f32::tanh)
}

/// `g * d/dx leaky_relu(x)` given the forward input.
pub fn leaky_relu_grad(x: &Tensor, g: &Tensor, slope: f32) -> Tensor {
    zip(x, g, |x, g| if x >= 0.0 { g } else { slope * g })
}

pub fn relu_grad(x: &Tensor, g: &Tensor) -> Tensor {
    zip(x, g, |x, g| if x >= 0.0 { g } else { 0.0 })
}

/// Uses the forward output `y = sigmoid(x)`.
pub fn sigmoid_grad(y: &Tensor, g: &Tensor) -> Tensor {
    zip(y, g, |y, g| g * y * (1.0 - y))
}

/// Uses the forward output `y = tanh(x)`.
pub fn tanh_grad(y: &Tensor, g: &Tensor) -> Tensor {
    zip(y, g, |y, g| g * (1.0 - y * y))
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    a.zip_map(b, f).expect("activation gradient shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn scalar_fixtures() {
        assert_eq!(leaky_relu_scalar(-1.0, 0.1), -0.1);
        assert_eq!(leaky_relu_scalar(2.0, 0.1), 2.0);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!(sigmoid_scalar(-100.0) >= 0.0);
        assert!(sigmoid_scalar(100.0) <= 1.0);
    }

    #[test]
    fn relu_pair_is_abs() {
        let x = Tensor::from_fn(Shape::new(1, 1, 1, 7), |_, _, _, i| i as f32 - 3.5);
        let neg = x.map(|v| -v);
        let sum = relu(&x).zip_map(&relu(&neg), |a, b| a + b).unwrap();
        assert_eq!(sum, x.map(f32::abs));
    }

    #[test]
    fn kink_uses_positive_side() {
        let x = Tensor::zeros(Shape::new(1, 1, 1, 1));
        let g = Tensor::ones(Shape::new(1, 1, 1, 1));
        assert_eq!(relu_grad(&x, &g).data(), &[1.0]);
        assert_eq!(leaky_relu_grad(&x, &g, 0.1).data(), &[1.0]);
    }
}
