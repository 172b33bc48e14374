//! Online vector balancing with the Self-Balancing Walk, and its balanced
//! pairing variant.
//!
//! The walk keeps the signed running sum `w = Σ x_j v^j`. For an incoming
//! vector `v` it computes `λ = ⟨w, v⟩` and picks `x = -1` with probability
//! `1/2 + λ/(2c)`, so the walk drifts back towards the origin along every
//! direction it is pushed in. If `|λ|` ever exceeds `c` the walk has failed;
//! the caller decides whether to restart.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Sparse real vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub entries: Vec<(u128, f64)>,
    pub dim: u128,
}

impl SparseVector {
    pub fn new(mut entries: Vec<(u128, f64)>, dim: u128) -> Self {
        entries.retain(|e| e.1 != 0.0);
        entries.sort_by_key(|e| e.0);
        debug_assert!(
            entries.windows(2).all(|w| w[0].0 < w[1].0),
            "duplicate index"
        );
        debug_assert!(entries.last().map_or(true, |e| e.0 < dim));
        SparseVector { entries, dim }
    }

    pub fn basis(i: u128, dim: u128) -> Self {
        SparseVector {
            entries: vec![(i, 1.0)],
            dim,
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }

    /// `(a - b) * scale`, merging sorted entries and dropping cancellations.
    pub fn scaled_difference(a: &SparseVector, b: &SparseVector, scale: f64) -> SparseVector {
        let mut out = SparseVector {
            entries: Vec::with_capacity(a.nnz() + b.nnz()),
            dim: a.dim.max(b.dim),
        };
        merge_difference(&a.entries, &b.entries, scale, &mut out.entries);
        out
    }
}

/// Writes `(a - b) * scale` into `out`; both inputs sorted by index.
pub(crate) fn merge_difference(
    a: &[(u128, f64)],
    b: &[(u128, f64)],
    scale: f64,
    out: &mut Vec<(u128, f64)>,
) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let take_a = j == b.len() || (i < a.len() && a[i].0 < b[j].0);
        let take_b = i == a.len() || (j < b.len() && b[j].0 < a[i].0);
        if take_a {
            out.push((a[i].0, a[i].1 * scale));
            i += 1;
        } else if take_b {
            out.push((b[j].0, -b[j].1 * scale));
            j += 1;
        } else {
            let v = (a[i].1 - b[j].1) * scale;
            if v != 0.0 {
                out.push((a[i].0, v));
            }
            i += 1;
            j += 1;
        }
    }
}

/// A `±1` coloring.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ColorVector {
    pub colors: Vec<i8>,
}

impl ColorVector {
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn sum(&self) -> i64 {
        self.colors.iter().map(|&c| c as i64).sum()
    }
}

/// Running signed sum. Dense storage is used when the logical dimension is
/// small enough to allocate; otherwise a hash map over touched coordinates.
#[derive(Debug, Clone)]
pub enum Accumulator {
    Dense(Vec<f64>),
    Sparse(FxHashMap<u128, f64>),
}

/// Largest logical dimension stored densely.
pub const DENSE_LIMIT: u128 = 1 << 22;

impl Accumulator {
    /// Picks a representation for a walk over `dim` coordinates that is
    /// expected to touch about `touched` of them.
    pub fn for_dimension(dim: u128, touched: usize) -> Self {
        if dim <= DENSE_LIMIT && dim <= 2 * touched as u128 {
            Accumulator::Dense(vec![0.0; dim as usize])
        } else {
            Accumulator::Sparse(FxHashMap::with_capacity_and_hasher(
                touched,
                Default::default(),
            ))
        }
    }

    #[inline]
    pub fn get(&self, i: u128) -> f64 {
        match self {
            Accumulator::Dense(v) => v[i as usize],
            Accumulator::Sparse(m) => m.get(&i).copied().unwrap_or(0.0),
        }
    }

    #[inline]
    fn add(&mut self, i: u128, x: f64) {
        match self {
            Accumulator::Dense(v) => v[i as usize] += x,
            Accumulator::Sparse(m) => *m.entry(i).or_insert(0.0) += x,
        }
    }

    /// Non-zero coordinates, sorted by index.
    pub fn to_sorted(&self) -> Vec<(u128, f64)> {
        let mut out: Vec<(u128, f64)> = match self {
            Accumulator::Dense(v) => v
                .iter()
                .enumerate()
                .filter(|e| *e.1 != 0.0)
                .map(|(i, &x)| (i as u128, x))
                .collect(),
            Accumulator::Sparse(m) => m
                .iter()
                .filter(|e| *e.1 != 0.0)
                .map(|(&i, &x)| (i, x))
                .collect(),
        };
        out.sort_by_key(|e| e.0);
        out
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            Accumulator::Dense(v) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            Accumulator::Sparse(m) => m.values().fold(0.0, |a, x| a.max(x.abs())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WalkState {
    pub accumulator: Accumulator,
    pub threshold: f64,
    pub failed: bool,
    /// Steps taken so far.
    pub steps: usize,
    /// Non-zero entries touched so far (an operation counter).
    pub ops: u64,
    /// Largest `|λ|` observed.
    pub max_lambda: f64,
}

impl WalkState {
    pub fn new(threshold: f64, dim: u128, expected_touched: usize) -> Self {
        assert!(threshold > 0.0, "walk threshold must be positive");
        WalkState {
            accumulator: Accumulator::for_dimension(dim, expected_touched),
            threshold,
            failed: false,
            steps: 0,
            ops: 0,
            max_lambda: 0.0,
        }
    }

    /// Colors one vector (`‖v‖₂ ≤ 1`) and folds it into the running sum.
    pub fn step(&mut self, v: &[(u128, f64)], rng: &mut Rng) -> Result<i8> {
        let lambda: f64 = v.iter().map(|&(i, x)| x * self.accumulator.get(i)).sum();
        self.ops += v.len() as u64;
        self.max_lambda = self.max_lambda.max(lambda.abs());
        if lambda.abs() > self.threshold {
            self.failed = true;
            return Err(Error::WalkFailure {
                lambda,
                threshold: self.threshold,
                step: self.steps,
            });
        }
        let p_minus = 0.5 + lambda / (2.0 * self.threshold);
        let color: i8 = if rng.gen::<f64>() < p_minus { -1 } else { 1 };
        let s = color as f64;
        for &(i, x) in v {
            self.accumulator.add(i, s * x);
        }
        self.ops += v.len() as u64;
        self.steps += 1;
        Ok(color)
    }
}

/// Default walk threshold for `n` vectors in `m` dimensions.
pub fn default_threshold(m: u128, n: usize, constant: f64) -> f64 {
    constant * ((m as f64) * (n.max(2) as f64)).ln()
}

/// Runs the walk over a stream of vectors. On failure, returns the state
/// with `failed` set and the colors assigned so far.
pub fn self_balancing_walk<'a, I>(
    vectors: I,
    dim: u128,
    c: f64,
    rng: &mut Rng,
) -> (ColorVector, WalkState)
where
    I: IntoIterator<Item = &'a SparseVector>,
{
    let vectors: Vec<&SparseVector> = vectors.into_iter().collect();
    let touched: usize = vectors.iter().map(|v| v.nnz()).sum();
    let mut state = WalkState::new(c, dim, touched);
    let mut colors = Vec::with_capacity(vectors.len());
    for v in vectors {
        debug_assert!(
            v.norm() <= 1.0 + 1e-9,
            "walk input must have norm at most 1"
        );
        match state.step(&v.entries, rng) {
            Ok(x) => colors.push(x),
            Err(_) => break,
        }
    }
    (ColorVector { colors }, state)
}

/// Balanced coloring: pairs `(v¹,v²), (v³,v⁴), …`, walks on the halved
/// differences and expands each pair color `y` into `(y, -y)`.
pub fn bal_subg_disc(
    vectors: &[SparseVector],
    c: f64,
    rng: &mut Rng,
) -> Result<(ColorVector, WalkState)> {
    if vectors.len() % 2 != 0 {
        return Err(Error::UnbalancedInput(vectors.len()));
    }
    let dim = vectors.iter().map(|v| v.dim).max().unwrap_or(0);
    let touched: usize = vectors.iter().map(|v| v.nnz()).sum();
    let mut state = WalkState::new(c, dim, touched);
    let mut colors = Vec::with_capacity(vectors.len());
    let mut diff = Vec::new();
    for pair in vectors.chunks_exact(2) {
        merge_difference(&pair[0].entries, &pair[1].entries, 0.5, &mut diff);
        let y = state.step(&diff, rng)?;
        colors.push(y);
        colors.push(-y);
    }
    Ok((ColorVector { colors }, state))
}

/// Estimate of the subgaussian constant of a sample of random vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgaussianEstimate {
    pub sigma2: f64,
    /// `(direction id, scale, log of the empirical MGF)` per evaluation.
    pub records: Vec<(usize, f64, f64)>,
    /// Directions whose MGF evaluation overflowed.
    pub skipped: Vec<usize>,
}

pub const MGF_SCALES: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

/// Estimates `σ̂² = max_{θ,s} 2·ln(mean exp(s⟨u,θ⟩))/s²`.
///
/// Direction 0 is always the normalized all-ones direction, which exposes
/// fully correlated coordinates; directions `1..=extra` are uniform random
/// unit vectors.
pub fn empirical_subgaussian_constant(
    samples: &[Vec<f64>],
    extra: usize,
    rng: &mut Rng,
) -> Result<SubgaussianEstimate> {
    const MIN_SAMPLES: usize = 100;
    if samples.len() < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            need: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    let m = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: bad.len(),
        });
    }
    let mut directions = vec![vec![1.0 / (m.max(1) as f64).sqrt(); m]];
    for _ in 0..extra {
        let mut g: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            g.iter_mut().for_each(|x| *x /= norm);
        }
        directions.push(g);
    }
    subgaussian_constant_along(samples, &directions)
}

/// Same estimator over explicit unit directions.
pub fn subgaussian_constant_along(
    samples: &[Vec<f64>],
    directions: &[Vec<f64>],
) -> Result<SubgaussianEstimate> {
    let n = samples.len() as f64;
    let mut est = SubgaussianEstimate {
        sigma2: 0.0,
        records: Vec::new(),
        skipped: Vec::new(),
    };
    for (id, theta) in directions.iter().enumerate() {
        let proj: Vec<f64> = samples
            .iter()
            .map(|u| u.iter().zip(theta).map(|(a, b)| a * b).sum())
            .collect();
        let mut overflow = false;
        let mut rows = Vec::new();
        for &s in &MGF_SCALES {
            let mean: f64 = proj.iter().map(|p| (s * p).exp()).sum::<f64>() / n;
            if !mean.is_finite() {
                overflow = true;
                break;
            }
            rows.push((id, s, mean.ln()));
        }
        if overflow {
            est.skipped.push(id);
            continue;
        }
        for &(_, s, log_mgf) in &rows {
            est.sigma2 = est.sigma2.max(2.0 * log_mgf / (s * s));
        }
        est.records.extend(rows);
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn single_vector_is_symmetric() {
        let v = SparseVector::basis(0, 1);
        let plus = (0..4000)
            .filter(|&s| {
                let mut rng = substream(s, &[]);
                self_balancing_walk([&v], 1, 1.0, &mut rng).0.colors[0] == 1
            })
            .count();
        assert!((plus as f64 - 2000.0).abs() < 4.0 * 31.7, "plus = {plus}");
    }

    #[test]
    fn repeated_vector_anticorrelates() {
        let v = SparseVector::basis(0, 1);
        let c = 2.0;
        let runs = 20000;
        let opposite = (0..runs)
            .filter(|&s| {
                let mut rng = substream(s, &[1]);
                let (x, st) = self_balancing_walk([&v, &v], 1, c, &mut rng);
                assert!(!st.failed);
                x.colors[0] != x.colors[1]
            })
            .count() as f64
            / runs as f64;
        let expected = 0.5 + 1.0 / (2.0 * c);
        assert!(
            (opposite - expected).abs() < 4.0 * (expected * (1.0 - expected) / runs as f64).sqrt()
        );
    }

    #[test]
    fn accumulator_stays_below_threshold_on_basis_stream() {
        let n = 10_000u128;
        let c = 30.0 * ((n * n) as f64).ln();
        let vs: Vec<SparseVector> = (0..n).map(|i| SparseVector::basis(i, n)).collect();
        for seed in 0..100 {
            let mut rng = substream(seed, &[2]);
            let (x, st) = self_balancing_walk(&vs, n, c, &mut rng);
            assert!(!st.failed);
            assert_eq!(x.len(), n as usize);
            assert!(st.accumulator.max_abs() <= c);
        }
    }

    #[test]
    fn accumulator_equals_signed_sum() {
        let mut rng = substream(4, &[]);
        let vs: Vec<SparseVector> = (0..50)
            .map(|i| SparseVector::new(vec![(i % 7, 0.5), (7 + i % 3, -0.5), (20 + i, 0.5)], 80))
            .collect();
        let (x, st) = self_balancing_walk(&vs, 80, 5.0, &mut rng);
        assert!(!st.failed);
        let mut expect = vec![0.0; 80];
        for (v, &c) in vs.iter().zip(&x.colors) {
            for &(i, a) in &v.entries {
                expect[i as usize] += c as f64 * a;
            }
        }
        for i in 0..80u128 {
            assert!((st.accumulator.get(i) - expect[i as usize]).abs() < 1e-12);
        }
        assert_eq!(st.ops, 2 * vs.iter().map(|v| v.nnz() as u64).sum::<u64>());
    }

    #[test]
    fn failure_is_flagged() {
        let v = SparseVector::basis(0, 1);
        let vs = vec![v; 50];
        let mut rng = substream(0, &[]);
        let (x, st) = self_balancing_walk(&vs, 1, 0.5, &mut rng);
        assert!(st.failed);
        assert!(x.len() < 50);
    }

    #[test]
    fn bal_rejects_odd_input() {
        let mut rng = substream(0, &[]);
        let vs = vec![SparseVector::basis(0, 2); 3];
        assert!(matches!(
            bal_subg_disc(&vs, 1.0, &mut rng),
            Err(Error::UnbalancedInput(3))
        ));
    }

    #[test]
    fn bal_pairs_and_identical_vectors() {
        let a = SparseVector::new(vec![(0, 0.6), (3, 0.8)], 4);
        let mut first_plus = 0;
        for seed in 0..2000 {
            let mut rng = substream(seed, &[3]);
            let (x, st) = bal_subg_disc(&[a.clone(), a.clone()], 1.0, &mut rng).unwrap();
            assert_eq!(x.colors[0], -x.colors[1]);
            assert_eq!(st.max_lambda, 0.0);
            first_plus += (x.colors[0] == 1) as i32;
        }
        assert!((first_plus - 1000).abs() < 4 * 23);
    }

    #[test]
    fn scaled_difference_cancels() {
        let a = SparseVector::new(vec![(0, 1.0), (2, 1.0)], 5);
        let b = SparseVector::new(vec![(1, 1.0), (2, 1.0)], 5);
        let d = SparseVector::scaled_difference(&a, &b, 0.5);
        assert_eq!(d.entries, vec![(0, 0.5), (1, -0.5)]);
    }

    #[test]
    fn runtime_is_linear_in_nonzeros() {
        let mut rng = substream(1, &[]);
        let count = |n: usize, rng: &mut Rng| {
            let vs: Vec<SparseVector> = (0..n)
                .map(|i| {
                    SparseVector::new(
                        (0..4).map(|k| ((i * 4 + k) as u128 % 997, 0.5)).collect(),
                        997,
                    )
                })
                .collect();
            bal_subg_disc(&vs, 40.0, rng).unwrap().1.ops as f64
        };
        let base = count(100, &mut rng);
        for factor in [10.0, 100.0] {
            let ratio = count((100.0 * factor) as usize, &mut rng) / base;
            assert!(
                ratio <= 1.5 * factor && ratio >= factor / 1.5,
                "ratio {ratio}"
            );
        }
    }

    #[test]
    fn subgaussian_estimator_cases() {
        let mut rng = substream(8, &[]);
        let zeros = vec![vec![0.0; 4]; 200];
        assert_eq!(
            empirical_subgaussian_constant(&zeros, 8, &mut rng)
                .unwrap()
                .sigma2,
            0.0
        );
        assert!(empirical_subgaussian_constant(&zeros[..50], 8, &mut rng).is_err());

        let normals: Vec<Vec<f64>> = (0..100_000)
            .map(|_| (0..4).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let est = empirical_subgaussian_constant(&normals, 16, &mut rng).unwrap();
        assert!((0.8..=1.3).contains(&est.sigma2), "sigma2 = {}", est.sigma2);
    }

    #[test]
    fn estimator_reports_overflow() {
        let big = vec![vec![1e3; 2]; 100];
        let est = subgaussian_constant_along(&big, &[vec![1.0, 0.0]]).unwrap();
        assert_eq!(est.skipped, vec![0]);
    }

    #[test]
    fn symmetric_color_means() {
        let runs = 10_000;
        let vs: Vec<SparseVector> = (0..6)
            .map(|i| SparseVector::new(vec![(i % 3, 0.5), (3 + i, 0.5)], 10))
            .collect();
        let mut sums = [0i64; 6];
        for seed in 0..runs {
            let mut rng = substream(seed, &[9]);
            let (x, _) = bal_subg_disc(&vs, 3.0, &mut rng).unwrap();
            assert_eq!(x.sum(), 0);
            for (s, &c) in sums.iter_mut().zip(&x.colors) {
                *s += c as i64;
            }
        }
        for s in sums {
            assert!((s as f64 / runs as f64).abs() <= 4.0 / (runs as f64).sqrt());
        }
    }
}
