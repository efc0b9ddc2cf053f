use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub reconstruction: f64,
    pub triplet: f64,
    pub total: f64,
}

/// Mean over rows of `‖x − x̂‖²`.
pub fn reconstruction_loss<T: Real>(x: &[T], xhat: &[T], dim: usize) -> Result<f64> {
    if x.len() != xhat.len() || dim == 0 || !x.len().is_multiple_of(dim) {
        return Err(Error::shape("reconstruction loss needs equal shapes"));
    }
    let n = x.len() / dim;
    if n == 0 {
        return Ok(0.0);
    }
    let sse: f64 = x
        .iter()
        .zip(xhat)
        .map(|(&a, &b)| {
            let t = a.f64() - b.f64();
            t * t
        })
        .sum();
    Ok(sse / n as f64)
}

/// `max(0, ‖x − q⁺‖² − ‖x − q⁻‖² + δ)` for one triplet.
pub fn triplet_loss<T: Real>(x: &[T], pos: &[T], neg: &[T], margin: f64) -> f64 {
    let d2 = |q: &[T]| -> f64 {
        x.iter()
            .zip(q)
            .map(|(&a, &b)| {
                let t = a.f64() - b.f64();
                t * t
            })
            .sum()
    };
    (d2(pos) - d2(neg) + margin).max(0.0)
}

/// Loss and its gradient with respect to the network output.
///
/// Without triplets, `out` holds `n` reconstructions of the `n` target rows.
/// With `Some((weight, margin))`, `out` is `[anchors; positives; negatives]`
/// (`3n` rows) and the loss is the anchor reconstruction loss plus `weight`
/// times the mean hinge.
pub fn loss_and_grad<T: Real>(
    out: &[T],
    targets: &[T],
    n: usize,
    dim: usize,
    triplet: Option<(f64, f64)>,
) -> Result<(LossParts, Vec<T>)> {
    let rows = if triplet.is_some() { 3 * n } else { n };
    if out.len() != rows * dim || targets.len() != n * dim || n == 0 {
        return Err(Error::shape("loss inputs do not match the batch layout"));
    }
    let mut grad = vec![T::zero(); out.len()];
    let scale = 2.0 / n as f64;
    let reconstruction = reconstruction_loss(targets, &out[..n * dim], dim)?;
    for i in 0..n * dim {
        grad[i] = T::of(scale * (out[i].f64() - targets[i].f64()));
    }
    let mut parts = LossParts {
        reconstruction,
        triplet: 0.0,
        total: reconstruction,
    };
    if let Some((weight, margin)) = triplet {
        let mut sum = 0.0;
        for a in 0..n {
            let x = &targets[a * dim..(a + 1) * dim];
            let p = (n + a) * dim;
            let q = (2 * n + a) * dim;
            let h = triplet_loss(x, &out[p..p + dim], &out[q..q + dim], margin);
            sum += h;
            if h > 0.0 {
                let s = weight * scale;
                for j in 0..dim {
                    let xj = x[j].f64();
                    grad[p + j] = T::of(s * (out[p + j].f64() - xj));
                    grad[q + j] = T::of(-s * (out[q + j].f64() - xj));
                }
            }
        }
        parts.triplet = sum / n as f64;
        parts.total = reconstruction + weight * parts.triplet;
    }
    Ok((parts, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn reconstruction_values() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        assert_eq!(reconstruction_loss(&x, &x, 2).unwrap(), 0.0);
        assert_eq!(
            reconstruction_loss(&[0.0f64, 0.0], &[3.0, 4.0], 2).unwrap(),
            25.0
        );
        assert!(reconstruction_loss(&x, &x[..2], 2).is_err());

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let a: Vec<f32> = (0..7 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..7 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut total = 0.0f64;
        for r in 0..7 {
            let mut s = 0.0f64;
            for j in 0..5 {
                s += (a[r * 5 + j] as f64 - b[r * 5 + j] as f64).powi(2);
            }
            total += s;
        }
        assert!((reconstruction_loss(&a, &b, 5).unwrap() - total / 7.0).abs() < 1e-12);
    }

    #[test]
    fn triplet_values() {
        let x = [0.0f64];
        assert_eq!(triplet_loss(&x, &[2.0], &[2.0], 0.3), 0.3);
        assert_eq!(triplet_loss(&x, &[1.0], &[5.0], 0.3), 0.0);
        let root2 = 2.0f64.sqrt();
        assert!(triplet_loss(&x, &[1.0], &[root2], 0.5).abs() < 1e-12);
        assert!((triplet_loss(&x, &[1.0], &[root2], 1.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn combined_loss_is_non_negative() {
        let out = [1.0f64, 0.0, 0.0];
        let x = [0.5f64];
        let (parts, _) = loss_and_grad(&out, &x, 1, 1, Some((1.0, 0.1))).unwrap();
        assert!((parts.reconstruction - 0.25).abs() < 1e-12);
        // d+ = 0.25, d- = 0.25
        assert!((parts.triplet - 0.1).abs() < 1e-12);
        assert!((parts.total - 0.35).abs() < 1e-12);
    }
}
