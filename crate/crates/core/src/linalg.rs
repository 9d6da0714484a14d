//! Dense affine layers and flat parameter-set helpers shared by the embedding
//! and policy networks.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// `y = W x + b` with `W` stored row-major as `rows × cols`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    /// Uniform in `[-1/sqrt(cols), 1/sqrt(cols)]` for weights and biases.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        let weight = (0..rows * cols).map(|_| draw()).collect();
        let bias = (0..rows).map(|_| draw()).collect();
        Self {
            rows,
            cols,
            weight,
            bias,
        }
    }

    #[inline]
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weight[r * self.cols..(r + 1) * self.cols];
            *o = self.bias[r] + dot(row, x);
        }
    }

    /// `out += Wᵀ g`.
    #[inline]
    pub fn add_transpose_apply(&self, g: &[f64], out: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            let row = &self.weight[r * self.cols..(r + 1) * self.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += gr * w;
            }
        }
    }

    /// Gradient accumulation: `W += g xᵀ`, `b += g`.
    #[inline]
    pub fn accumulate(&mut self, g: &[f64], x: &[f64]) {
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            self.bias[r] += gr;
            let row = &mut self.weight[r * self.cols..(r + 1) * self.cols];
            for (w, &xi) in row.iter_mut().zip(x) {
                *w += gr * xi;
            }
        }
    }
}

/// Inner product with four independent partial sums.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// A model whose parameters can be viewed as a list of flat slices.
pub trait ParamSet {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for s in self.slices_mut() {
            for v in s.iter_mut() {
                *v = *it.next().expect("flat vector too short");
            }
        }
        assert!(it.next().is_none(), "flat vector too long");
    }

    fn l2_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn scale(&mut self, k: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= k);
        }
    }

    /// `self += k * other`; both must share one layout.
    fn add_scaled(&mut self, other: &Self, k: f64)
    where
        Self: Sized,
    {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            assert_eq!(dst.len(), src.len(), "parameter layout mismatch");
            for (d, s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }
}

impl ParamSet for Affine {
    fn slices(&self) -> Vec<&[f64]> {
        vec![&self.weight, &self.bias]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Numerically stable normalized exponential. Entries are floored at the
/// smallest normal `f64` so a log-probability is always finite.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| (e / total).max(f64::MIN_POSITIVE)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_and_transpose_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Affine::uniform(3, 4, &mut rng);
        let x = [0.5, -1.0, 2.0, 0.25];
        let g = [1.0, -2.0, 0.5];
        let mut y = [0.0; 3];
        a.apply(&x, &mut y);
        let mut wt_g = [0.0; 4];
        a.add_transpose_apply(&g, &mut wt_g);
        // <g, Wx> = <Wᵀg, x>
        let lhs: f64 = dot(&g, &y) - dot(&g, &a.bias);
        assert!((lhs - dot(&wt_g, &x)).abs() < 1e-12);
    }

    #[test]
    fn init_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Affine::uniform(8, 16, &mut rng);
        assert!(a.weight.iter().chain(&a.bias).all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn softmax_shift_invariant() {
        let p = softmax(&[1.0, 2.0, 3.0]);
        let q = softmax(&[101.0, 102.0, 103.0]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_never_underflows() {
        let p = softmax(&[0.0, -1e4, 1e4]);
        assert!(p.iter().all(|&v| v > 0.0));
        assert_eq!(p[2], 1.0);
        assert!(p[1].ln().is_finite());
    }

    #[test]
    fn flat_round_trip() {
        let mut a = Affine::zeros(2, 2);
        a.set_flat(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(a.weight, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.flat(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(a.num_params(), 6);
    }
}
