use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Binary entropy in nats.
pub fn binary_entropy(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

/// `x · W + b` for a batch of row vectors.
pub fn affine_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = x.matmul(w)?;
    let d_out = out.cols();
    if b.len() != d_out {
        return Err(Error::Dimension(format!(
            "bias has {} entries but weight axis 1 = {d_out}",
            b.len()
        )));
    }
    for row in out.data_mut().chunks_mut(d_out) {
        for (o, bias) in row.iter_mut().zip(b.data()) {
            *o += bias;
        }
    }
    Ok(out)
}

/// Gradients of [`affine_forward`]: returns `(dx, dW, db)`.
pub fn affine_backward(x: &Tensor, w: &Tensor, d_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let dx = d_out.matmul_t(w)?;
    let dw = x.t_matmul(d_out)?;
    let db = d_out.sum_rows();
    Ok((dx, dw, db))
}

/// Glorot/Xavier uniform initialisation for a `fan_in × fan_out` weight.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("positive extents")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::seeded;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn affine_identity() {
        let out = affine_forward(
            &t(&[&[1.0, 2.0]]),
            &t(&[&[1.0, 0.0], &[0.0, 1.0]]),
            &Tensor::vector(vec![0.0, 0.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn affine_zero_input_returns_bias() {
        let out = affine_forward(
            &t(&[&[0.0, 0.0]]),
            &t(&[&[9.0, -1.0], &[2.5, 7.0]]),
            &Tensor::vector(vec![3.0, 4.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(out.data(), &[3.0, 4.0]);
    }

    #[test]
    fn affine_hand_multiply() {
        let out = affine_forward(
            &t(&[&[1.0, 1.0]]),
            &t(&[&[2.0, 3.0], &[4.0, 5.0]]),
            &Tensor::vector(vec![1.0, 1.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(out.data(), &[7.0, 9.0]);
    }

    #[test]
    fn affine_shape_errors() {
        let x = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[2]);
        assert!(affine_forward(&x, &w, &b).is_err());
        let x = Tensor::zeros(&[1, 2]);
        let b = Tensor::zeros(&[3]);
        assert!(affine_forward(&x, &w, &b).is_err());
    }

    #[test]
    fn affine_matches_triple_loop() {
        use rand::Rng;
        let mut rng = seeded(11);
        for _ in 0..50 {
            let mut r = |n| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
            let x = Tensor::matrix(8, 8, r(64)).unwrap();
            let w = Tensor::matrix(8, 8, r(64)).unwrap();
            let b = Tensor::vector(r(8)).unwrap();
            let out = affine_forward(&x, &w, &b).unwrap();
            for i in 0..8 {
                for k in 0..8 {
                    let mut acc = b.data()[k];
                    for j in 0..8 {
                        acc += x.at(i, j) * w.at(j, k);
                    }
                    assert!((out.at(i, k) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!(sigmoid(-800.0).is_finite());
    }
}
