//! Transition probability matrices over patch nodes.
//!
//! A raw similarity matrix (e.g. head-averaged self-attention) is scaled to
//! doubly-stochastic form with Sinkhorn-Knopp, symmetrized as `(A + Aᵀ)/2`,
//! and then propagated either for a fixed number of hops (`T^α`) or to the
//! absorbing-chain limit `(1-β)(I - βT)⁻¹`.
//!
//! Storage is dense and row-major. Products are parallel over output rows
//! with a fixed summation order per element, so results do not depend on the
//! number of threads.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::{Error, Result};

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::BadDimensions("empty matrix".into()));
        }
        if data.len() != n * n {
            return Err(Error::size_mismatch(n * n, data.len()));
        }
        Ok(Matrix { n, data })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Matrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            n: self.n,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.n != other.n {
            return Err(Error::size_mismatch(self.n, other.n));
        }
        let n = self.n;
        let mut out = vec![0.0; n * n];
        out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
            for (k, &a) in self.row(i).iter().enumerate() {
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        });
        Ok(Matrix { n, data: out })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for i in 0..self.n {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += v;
            }
        }
        sums
    }

    /// Largest `|sum - 1|` over all rows and columns.
    pub fn stochastic_deviation(&self) -> f64 {
        self.row_sums()
            .into_iter()
            .chain(self.col_sums())
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// Nonnegative affinities between patch nodes; every row has a positive entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(Matrix);

impl SimilarityMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        for (index, &value) in m.as_slice().iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("similarity entry {index}")));
            }
            if value < 0.0 {
                return Err(Error::NegativeEntry { index, value });
            }
        }
        if let Some(i) = (0..m.n()).find(|&i| m.row(i).iter().all(|&v| v == 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "similarity row {i} has no positive entry"
            )));
        }
        Ok(SimilarityMatrix(m))
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Symmetric doubly-stochastic transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix(Matrix);

impl TransitionMatrix {
    /// Row/column sum tolerance accepted when validating a stored matrix.
    pub const TOLERANCE: f64 = 1e-6;

    /// Validates exact symmetry, entries in `[0, 1]`, and sums within [`Self::TOLERANCE`].
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        for (index, &value) in m.as_slice().iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ValueOutOfRange { index, value });
            }
        }
        if !m.is_symmetric() {
            return Err(Error::InvalidParameter(
                "transition matrix is not symmetric".into(),
            ));
        }
        let dev = m.stochastic_deviation();
        if dev > Self::TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "transition matrix is not doubly stochastic (deviation {dev:e})"
            )));
        }
        Ok(TransitionMatrix(m))
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Allowed deviation of every row and column sum from 1.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            tolerance: 1e-8,
            max_iterations: 200,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidParameter(format!(
                "sinkhorn tolerance {} / max iterations {}",
                self.tolerance, self.max_iterations
            )));
        }
        Ok(())
    }
}

/// Output of [`sinkhorn`].
#[derive(Debug, Clone)]
pub struct Balanced {
    pub matrix: Matrix,
    /// Row-then-column sweeps performed.
    pub iterations: usize,
    pub deviation: f64,
}

/// Entrywise mean of several head matrices.
pub fn average_heads(heads: &[SimilarityMatrix]) -> Result<SimilarityMatrix> {
    let first = heads.first().ok_or(Error::EmptyList)?;
    let n = first.n();
    if let Some(bad) = heads.iter().find(|h| h.n() != n) {
        return Err(Error::size_mismatch(n, bad.n()));
    }
    let mut sum = vec![0.0; n * n];
    for head in heads {
        for (s, v) in sum.iter_mut().zip(head.matrix().as_slice()) {
            *s += v;
        }
    }
    let k = heads.len() as f64;
    let mean = sum.into_iter().map(|s| s / k).collect();
    SimilarityMatrix::new(Matrix::from_vec(n, mean)?)
}

/// Sinkhorn-Knopp scaling: alternately normalize rows then columns until every
/// row and column sum is within `cfg.tolerance` of 1.
///
/// Zero entries stay exactly zero. A zero pattern without total support never
/// converges and is reported as [`Error::NoConvergence`].
pub fn sinkhorn(s: &SimilarityMatrix, cfg: &SinkhornConfig) -> Result<Balanced> {
    cfg.validate()?;
    let n = s.n();
    let mut a = s.matrix().clone();
    let mut iterations = 0;
    loop {
        let deviation = a.stochastic_deviation();
        if deviation <= cfg.tolerance {
            return Ok(Balanced {
                matrix: a,
                iterations,
                deviation,
            });
        }
        if iterations == cfg.max_iterations || !deviation.is_finite() {
            return Err(Error::NoConvergence {
                iterations,
                deviation,
            });
        }

        for row in a.data.chunks_mut(n) {
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let col_sums = a.col_sums();
        if col_sums.contains(&0.0) {
            return Err(Error::NoConvergence {
                iterations,
                deviation: 1.0,
            });
        }
        for row in a.data.chunks_mut(n) {
            for (v, c) in row.iter_mut().zip(&col_sums) {
                *v /= c;
            }
        }
        iterations += 1;
    }
}

/// `(A + Aᵀ) / 2`; symmetric bit-for-bit.
pub fn symmetrize(a: &Matrix) -> TransitionMatrix {
    TransitionMatrix(Matrix::from_fn(a.n(), |i, j| (a.get(i, j) + a.get(j, i)) / 2.0))
}

/// Sinkhorn followed by symmetrization.
pub fn build_transition(s: &SimilarityMatrix, cfg: &SinkhornConfig) -> Result<(TransitionMatrix, Balanced)> {
    let balanced = sinkhorn(s, cfg)?;
    Ok((symmetrize(&balanced.matrix), balanced))
}

/// `T^α` by repeated multiplication.
pub fn propagate_power(t: &TransitionMatrix, alpha: u32) -> Result<Matrix> {
    if alpha == 0 {
        return Err(Error::InvalidParameter("hop count must be at least 1".into()));
    }
    let mut out = t.matrix().clone();
    for _ in 1..alpha {
        out = out.matmul(t.matrix())?;
    }
    Ok(out)
}

/// Absorbing-chain limit `(1-β)(I - βT)⁻¹`, one LU factorization and a
/// column-by-column solve against the identity.
pub fn propagate_absorbing(t: &TransitionMatrix, beta: f64) -> Result<Matrix> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!(
            "blending coefficient {beta} outside [0, 1)"
        )));
    }
    let n = t.n();
    let system = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - beta * t.matrix().get(i, j)
    });
    let lu = system.lu();
    let solved = lu
        .solve(&DMatrix::<f64>::identity(n, n))
        .ok_or(Error::SingularSystem)?;
    let scale = 1.0 - beta;
    let out = Matrix::from_fn(n, |i, j| scale * solved[(i, j)]);
    if out.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(n: usize, v: &[f64]) -> SimilarityMatrix {
        SimilarityMatrix::new(Matrix::from_vec(n, v.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn identity_and_permutations_are_fixed_points() {
        let id = sim(3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let out = sinkhorn(&id, &SinkhornConfig::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(&out.matrix, id.matrix());

        let perm = sim(3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let out = sinkhorn(&perm, &SinkhornConfig::default()).unwrap();
        assert_eq!(&out.matrix, perm.matrix());
    }

    #[test]
    fn two_by_two_matches_bisection_oracle() {
        // cross ratio a^2/(1-a)^2 = (1*2)/(3*2) is invariant under diagonal scaling
        let target = (1.0 * 2.0) / (3.0 * 2.0);
        let (mut lo, mut hi) = (0.0_f64, 0.5_f64);
        while hi - lo > 1e-14 {
            let mid = 0.5 * (lo + hi);
            let f = mid * mid / ((1.0 - mid) * (1.0 - mid)) - target;
            if f > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let a = 0.5 * (lo + hi);
        assert!((a - 0.366_025_403_784).abs() < 1e-10);

        let s = sim(2, &[1.0, 3.0, 2.0, 2.0]);
        let cfg = SinkhornConfig {
            tolerance: 1e-13,
            max_iterations: 500,
        };
        let out = sinkhorn(&s, &cfg).unwrap().matrix;
        assert!((out.get(0, 0) - a).abs() < 1e-12);
        assert!((out.get(0, 1) - (1.0 - a)).abs() < 1e-12);
        assert!((out.get(1, 0) - (1.0 - a)).abs() < 1e-12);
        assert!((out.get(1, 1) - a).abs() < 1e-12);
    }

    #[test]
    fn pattern_without_support_does_not_converge() {
        // upper triangular: the (0,1) entry must vanish in any doubly-stochastic limit
        let s = sim(2, &[1.0, 1.0, 0.0, 1.0]);
        let err = sinkhorn(&s, &SinkhornConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. }));
        assert!(err.is_numerical());

        let zero_col = sim(2, &[1.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            sinkhorn(&zero_col, &SinkhornConfig::default()),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn similarity_validation() {
        let neg = SimilarityMatrix::new(Matrix::from_vec(2, vec![1.0, -1.0, 1.0, 1.0]).unwrap());
        assert!(matches!(neg, Err(Error::NegativeEntry { index: 1, .. })));
        let zero_row = SimilarityMatrix::new(Matrix::from_vec(2, vec![0.0, 0.0, 1.0, 1.0]).unwrap());
        assert!(zero_row.is_err());
    }

    #[test]
    fn average_heads_examples() {
        let m = sim(2, &[0.5, 1.5, 2.0, 0.25]);
        assert_eq!(average_heads(std::slice::from_ref(&m)).unwrap(), m);
        // M and 2c - M average to c
        let c = 1.0;
        let mirror = sim(2, &[2.0 * c - 0.5, 2.0 * c - 1.5, 0.0, 2.0 * c - 0.25]);
        let avg = average_heads(&[m, mirror]).unwrap();
        assert!(avg.matrix().as_slice().iter().all(|&v| v == c));
        assert!(matches!(average_heads(&[]), Err(Error::EmptyList)));
        let small = sim(1, &[1.0]);
        let big = sim(2, &[1.0; 4]);
        assert!(matches!(
            average_heads(&[small, big]),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn symmetrize_examples() {
        let swap = Matrix::from_vec(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(symmetrize(&swap).matrix(), &swap);

        // 3-cycle 0->1->2->0
        let cycle = Matrix::from_vec(3, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let t = symmetrize(&cycle);
        for i in 0..3 {
            assert_eq!(t.matrix().get(i, i), 0.0);
            for j in 0..3 {
                if i != j {
                    assert_eq!(t.matrix().get(i, j), 0.5);
                }
            }
        }
    }

    #[test]
    fn power_examples() {
        let swap = symmetrize(&Matrix::from_vec(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap());
        assert_eq!(&propagate_power(&swap, 1).unwrap(), swap.matrix());
        assert_eq!(propagate_power(&swap, 2).unwrap(), Matrix::identity(2));
        assert!(propagate_power(&swap, 0).is_err());
    }

    #[test]
    fn absorbing_examples() {
        let id = TransitionMatrix::from_matrix(Matrix::identity(3)).unwrap();
        for beta in [0.0, 0.25, 0.9] {
            let out = propagate_absorbing(&id, beta).unwrap();
            assert!(out.max_abs_diff(&Matrix::identity(3)) < 1e-15);
        }

        let swap = symmetrize(&Matrix::from_vec(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap());
        assert!(propagate_absorbing(&swap, 0.0).unwrap().max_abs_diff(&Matrix::identity(2)) < 1e-15);
        let out = propagate_absorbing(&swap, 0.25).unwrap();
        let expected = Matrix::from_vec(2, vec![0.8, 0.2, 0.2, 0.8]).unwrap();
        assert!(out.max_abs_diff(&expected) < 1e-15);

        assert!(propagate_absorbing(&swap, 1.0).is_err());
        assert!(propagate_absorbing(&swap, -0.1).is_err());
    }

    #[test]
    fn transition_validation_rejects_asymmetry() {
        let m = Matrix::from_vec(2, vec![0.3, 0.7, 0.7, 0.3]).unwrap();
        assert!(TransitionMatrix::from_matrix(m).is_ok());
        let asym = Matrix::from_vec(3, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(TransitionMatrix::from_matrix(asym).is_err());
    }
}
