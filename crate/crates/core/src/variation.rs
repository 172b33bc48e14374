//! Fourier test functions, the variation measures `σ`, `σ_SO` and `σ_HK`,
//! derivative vectors on the dyadic grid, the shift-averaged general
//! `σ_SO`, and the 1-d Hlawka–Zaremba identity.

use num_complex::Complex64;
use rand::Rng as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::dyadic::{build_p_bar, DecompositionMatrix};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::transference::{fold, PointSet};

/// `e_k(x) = exp(2πi k x)` with the phase reduced mod 1 before scaling.
#[inline]
pub fn e_k(k: i64, x: f64) -> Complex64 {
    let phase = (k as f64 * x).rem_euclid(1.0);
    Complex64::from_polar(1.0, 2.0 * PI * phase)
}

/// `e_k(j / 2^h)`, exact in the grid index.
fn e_k_grid(k: i64, j: u64, h: u32) -> Complex64 {
    let modulus = 1i128 << h;
    let r = (k as i128 * j as i128).rem_euclid(modulus);
    Complex64::from_polar(1.0, 2.0 * PI * r as f64 / modulus as f64)
}

/// A real-valued integrand on `[0,1]^d`.
pub trait Integrand: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, z: &[f64]) -> f64;
}

/// Finite trigonometric series `Σ_k f̂(k) e_k(z)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FourierFunction {
    pub d: usize,
    pub terms: BTreeMap<Vec<i64>, Complex64>,
}

impl FourierFunction {
    pub fn new(d: usize) -> Self {
        FourierFunction {
            d,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(d: usize, c: f64) -> Self {
        let mut f = Self::new(d);
        f.add_term(vec![0; d], Complex64::new(c, 0.0));
        f
    }

    /// Adds `coef · e_k`, merging with an existing coefficient.
    pub fn add_term(&mut self, k: Vec<i64>, coef: Complex64) {
        assert_eq!(k.len(), self.d);
        *self.terms.entry(k).or_insert(Complex64::new(0.0, 0.0)) += coef;
    }

    pub fn with_term(mut self, k: Vec<i64>, coef: Complex64) -> Self {
        self.add_term(k, coef);
        self
    }

    /// `amp · sin(2π⟨k, z⟩)`.
    pub fn add_sine(&mut self, k: &[i64], amp: f64) {
        let c = Complex64::new(0.0, -amp / 2.0);
        self.add_term(k.to_vec(), c);
        self.add_term(k.iter().map(|x| -x).collect(), c.conj());
    }

    /// `amp · cos(2π⟨k, z⟩)`.
    pub fn add_cosine(&mut self, k: &[i64], amp: f64) {
        self.add_term(k.to_vec(), Complex64::new(amp / 2.0, 0.0));
        self.add_term(
            k.iter().map(|x| -x).collect(),
            Complex64::new(amp / 2.0, 0.0),
        );
    }

    /// `amp · sin(2π m x)` in 1-d.
    pub fn sine(m: i64, amp: f64) -> Self {
        let mut f = Self::new(1);
        f.add_sine(&[m], amp);
        f
    }

    /// Product of 1-d series, one per coordinate.
    pub fn product(factors: &[FourierFunction]) -> Self {
        let mut f = Self::constant(0, 1.0);
        for g in factors {
            assert_eq!(g.d, 1);
            let mut next = Self::new(f.d + 1);
            for (k, a) in &f.terms {
                for (kg, b) in &g.terms {
                    let mut kk = k.clone();
                    kk.push(kg[0]);
                    next.add_term(kk, a * b);
                }
            }
            f = next;
        }
        f
    }

    pub fn coefficient(&self, k: &[i64]) -> Complex64 {
        self.terms.get(k).copied().unwrap_or_default()
    }

    pub fn mean(&self) -> f64 {
        self.coefficient(&vec![0; self.d]).re
    }

    pub fn is_conjugate_symmetric(&self, tol: f64) -> bool {
        self.terms.iter().all(|(k, c)| {
            let neg: Vec<i64> = k.iter().map(|x| -x).collect();
            (self.coefficient(&neg).conj() - c).norm() <= tol
        })
    }

    pub fn evaluate_complex(&self, z: &[f64]) -> Complex64 {
        assert_eq!(z.len(), self.d);
        self.terms
            .iter()
            .map(|(k, c)| {
                let phase: f64 = k
                    .iter()
                    .zip(z)
                    .map(|(&kj, &zj)| (kj as f64 * zj).rem_euclid(1.0))
                    .sum();
                c * Complex64::from_polar(1.0, 2.0 * PI * phase)
            })
            .sum()
    }

    pub fn evaluate(&self, z: &[f64]) -> f64 {
        self.evaluate_complex(z).re
    }

    /// `f_s(z) = f((z + s) mod 1)`, evaluated through the phase `e_k(s)`.
    pub fn shifted(&self, s: &[f64]) -> FourierFunction {
        let terms = self
            .terms
            .iter()
            .map(|(k, c)| {
                let phase: f64 = k
                    .iter()
                    .zip(s)
                    .map(|(&kj, &sj)| (kj as f64 * sj).rem_euclid(1.0))
                    .sum();
                (k.clone(), c * Complex64::from_polar(1.0, 2.0 * PI * phase))
            })
            .collect();
        FourierFunction { d: self.d, terms }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("function serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl Integrand for FourierFunction {
    fn dim(&self) -> usize {
        self.d
    }
    fn eval(&self, z: &[f64]) -> f64 {
        self.evaluate(z)
    }
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    k: Vec<i64>,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct FunctionRepr {
    d: usize,
    terms: Vec<TermRepr>,
}

impl Serialize for FourierFunction {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        FunctionRepr {
            d: self.d,
            terms: self
                .terms
                .iter()
                .map(|(k, c)| TermRepr {
                    k: k.clone(),
                    re: c.re,
                    im: c.im,
                })
                .collect(),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for FourierFunction {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let repr = FunctionRepr::deserialize(de)?;
        let mut f = FourierFunction::new(repr.d);
        for t in repr.terms {
            if t.k.len() != repr.d {
                return Err(serde::de::Error::custom(format!(
                    "frequency {:?} has the wrong dimension",
                    t.k
                )));
            }
            f.add_term(t.k, Complex64::new(t.re, t.im));
        }
        Ok(f)
    }
}

fn weighted_sum(f: &FourierFunction, weight: impl Fn(&[i64]) -> f64) -> f64 {
    f.terms
        .iter()
        .filter(|(k, _)| k.iter().any(|&x| x != 0))
        .map(|(k, c)| c.norm_sqr() * weight(k))
        .sum()
}

/// `σ(f)² = Σ_{k≠0} |f̂(k)|²`.
pub fn sigma(f: &FourierFunction) -> f64 {
    weighted_sum(f, |_| 1.0).sqrt()
}

/// Weight `∏ max(1, |k_j|)`.
pub fn sigma_so_fourier(f: &FourierFunction) -> f64 {
    weighted_sum(f, |k| {
        k.iter()
            .map(|&x| (x.unsigned_abs() as f64).max(1.0))
            .product()
    })
    .sqrt()
}

/// Weight `∏ max(1, k_j²)`, without factors of `2π`.
pub fn sigma_hk_unnormalized(f: &FourierFunction) -> f64 {
    weighted_sum(f, |k| {
        k.iter().map(|&x| ((x * x) as f64).max(1.0)).product()
    })
    .sqrt()
}

/// Weight `∏ max(1, k_j²) · (2π)^{2·#{j: k_j ≠ 0}}`; in 1-d this is
/// `(∫|f'|²)^{1/2}`.
pub fn sigma_hk(f: &FourierFunction) -> f64 {
    let two_pi_sq = 4.0 * PI * PI;
    weighted_sum(f, |k| {
        k.iter()
            .map(|&x| {
                if x == 0 {
                    1.0
                } else {
                    (x * x) as f64 * two_pi_sq
                }
            })
            .product()
    })
    .sqrt()
}

/// Frequencies too fine for resolution `h`, i.e. `|k_j| > 2^{h-2}`.
pub fn frequency_warnings(f: &FourierFunction, h: u32) -> Vec<String> {
    let limit = if h >= 2 { 1i64 << (h - 2) } else { 0 };
    f.terms
        .keys()
        .filter(|k| k.iter().any(|&x| x.abs() > limit))
        .map(|k| format!("frequency {k:?} exceeds 2^(h-2) = {limit} at h = {h}"))
        .collect()
}

/// `u_j = f_s((j+1)/2^h) - f_s(j/2^h)` by direct evaluation.
pub fn u_vector_1d(f: &FourierFunction, s: f64, h: u32) -> Vec<Complex64> {
    assert_eq!(f.d, 1);
    let g = f.shifted(&[s]);
    let size = 1u64 << h;
    let vals: Vec<Complex64> = (0..=size)
        .map(|j| g.evaluate_complex(&[j as f64 / size as f64]))
        .collect();
    vals.windows(2).map(|w| w[1] - w[0]).collect()
}

/// `u^{e_k}` on the grid, with exact phases.
pub fn u_vector_e_k(k: i64, h: u32) -> Vec<Complex64> {
    (0..1u64 << h)
        .map(|j| e_k_grid(k, j + 1, h) - e_k_grid(k, j, h))
        .collect()
}

/// `u^{f_s,S}` for `S` given as sorted 0-based coordinates, as a row-major
/// tensor with side `2^h`, built term by term from tensor products of 1-d
/// vectors. Coordinates outside `S` are pinned at 1.
pub fn u_vector_high_dim(f: &FourierFunction, s: &[f64], face: &[usize], h: u32) -> Vec<Complex64> {
    assert!(
        !face.is_empty() && face.windows(2).all(|w| w[0] < w[1]) && *face.last().unwrap() < f.d
    );
    let side = 1usize << h;
    let mut out = vec![Complex64::new(0.0, 0.0); side.pow(face.len() as u32)];
    let g = f.shifted(s);
    let mut cache: BTreeMap<i64, Vec<Complex64>> = BTreeMap::new();
    for (k, c) in &g.terms {
        if face.iter().any(|&i| k[i] == 0) {
            continue;
        }
        // e_{k_j}(1) = 1 off the face.
        let mut tensor = vec![*c];
        for &i in face {
            let u = cache.entry(k[i]).or_insert_with(|| u_vector_e_k(k[i], h));
            tensor = tensor
                .iter()
                .flat_map(|&a| u.iter().map(move |&b| a * b))
                .collect();
        }
        for (o, t) in out.iter_mut().zip(tensor) {
            *o += t;
        }
    }
    out
}

/// Mixed differences of `f_s` over the grid cells of the face `S`, by
/// pointwise evaluation.
pub fn mixed_differences<F: Integrand + ?Sized>(
    f: &F,
    s: &[f64],
    face: &[usize],
    h: u32,
) -> Vec<f64> {
    let d = f.dim();
    let side = 1usize << h;
    let k = face.len();
    let npts = (side + 1).pow(k as u32);
    let mut z = vec![0.0; d];
    let mut grid = Vec::with_capacity(npts);
    for flat in 0..npts {
        for j in 0..d {
            z[j] = fold(1.0 + s[j]);
        }
        let mut rem = flat;
        for &axis in face.iter().rev() {
            let idx = rem % (side + 1);
            rem /= side + 1;
            z[axis] = fold(idx as f64 / side as f64 + s[axis]);
        }
        grid.push(f.eval(&z));
    }
    let mut shape = vec![side + 1; k];
    let mut cur = grid;
    for axis in 0..k {
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let mut next = Vec::with_capacity(outer * (len - 1) * inner);
        for o in 0..outer {
            for r in 0..len - 1 {
                for i in 0..inner {
                    next.push(cur[(o * len + r + 1) * inner + i] - cur[(o * len + r) * inner + i]);
                }
            }
        }
        shape[axis] = len - 1;
        cur = next;
    }
    cur
}

/// Both routes to `‖P̄_hᵀ u^{e_k}‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuredSum {
    pub closed_form: f64,
    pub matrix: f64,
}

impl StructuredSum {
    pub fn relative_gap(&self) -> f64 {
        (self.closed_form - self.matrix).abs()
            / self.closed_form.abs().max(self.matrix.abs()).max(1.0)
    }
}

/// `4 Σ_{j=0}^h 2^j sin²(πk/2^j)`, with `|k|` reduced mod `2^j`.
pub fn structured_sum_closed_form(k: i64, h: u32) -> f64 {
    (0..=h)
        .map(|j| {
            let m = 1i128 << j;
            let r = (k.unsigned_abs() as i128 % m) as f64 / m as f64;
            4.0 * m as f64 * (PI * r).sin().powi(2)
        })
        .sum()
}

pub fn structured_sum_with(k: i64, pbar: &DecompositionMatrix) -> StructuredSum {
    let u = u_vector_e_k(k, pbar.h);
    let matrix = pbar
        .apply_transpose(&u)
        .iter()
        .map(Complex64::norm_sqr)
        .sum();
    StructuredSum {
        closed_form: structured_sum_closed_form(k, pbar.h),
        matrix,
    }
}

pub fn structured_sum(k: i64, h: u32) -> StructuredSum {
    structured_sum_with(k, &build_p_bar(h))
}

/// `Σ_{∅≠S} ‖(P̄_hᵀ)^{⊗S} u^{f_s,S}‖²` for one shift.
pub fn sigma_so_general_at<F: Integrand + ?Sized>(
    f: &F,
    h: u32,
    s: &[f64],
    pbar: &DecompositionMatrix,
) -> f64 {
    let d = f.dim();
    let mut total = 0.0;
    for mask in 1u32..1 << d {
        let face: Vec<usize> = (0..d).filter(|&j| mask >> j & 1 == 1).collect();
        let u = mixed_differences(f, s, &face, h);
        total += pbar
            .apply_transpose_tensor(&u, face.len())
            .iter()
            .map(|x| x * x)
            .sum::<f64>();
    }
    total
}

/// Square root of the average of [`sigma_so_general_at`] over the given
/// shifts.
pub fn sigma_so_general_with_shifts<F: Integrand + ?Sized>(
    f: &F,
    h: u32,
    shifts: &[Vec<f64>],
) -> f64 {
    let pbar = build_p_bar(h);
    let sum: f64 = shifts
        .iter()
        .map(|s| sigma_so_general_at(f, h, s, &pbar))
        .sum();
    (sum / shifts.len().max(1) as f64).sqrt()
}

/// Monte Carlo estimate of the shift-averaged general `σ_SO` at
/// resolution `h`.
pub fn sigma_so_general<F: Integrand + ?Sized>(
    f: &F,
    h: u32,
    shift_samples: usize,
    rng: &mut Rng,
) -> f64 {
    let shifts: Vec<Vec<f64>> = (0..shift_samples)
        .map(|_| (0..f.dim()).map(|_| rng.gen::<f64>()).collect())
        .collect();
    sigma_so_general_with_shifts(f, h, &shifts)
}

/// `err(A, f) = mean_A f - ∫f`.
pub fn err(points: &PointSet, f: &FourierFunction) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if points.d != f.d {
        return Err(Error::DimensionMismatch {
            expected: f.d,
            got: points.d,
        });
    }
    let sum: f64 = points.iter().map(|p| f.evaluate(p)).sum();
    Ok(sum / points.len() as f64 - f.mean())
}

/// Antiderivative `F(x) = f̂(0)x + Σ_{k≠0} f̂(k) e_k(x)/(2πik)`.
fn antiderivative(f: &FourierFunction, x: f64) -> Complex64 {
    f.terms
        .iter()
        .map(|(k, c)| {
            if k[0] == 0 {
                c * x
            } else {
                c * e_k(k[0], x) / Complex64::new(0.0, 2.0 * PI * k[0] as f64)
            }
        })
        .sum()
}

/// `∫₀¹ h(x) f'(x) dx` with `h(x) = x - |A ∩ [0,x]|/n`, integrated exactly
/// between consecutive points.
pub fn hlawka_zaremba_error_1d(points: &PointSet, f: &FourierFunction) -> Result<f64> {
    if points.d != 1 || f.d != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: points.d.max(f.d),
        });
    }
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let n = points.len() as f64;
    let mut xs = points.coords.clone();
    xs.sort_by(f64::total_cmp);
    let value = |x: f64| f.evaluate_complex(&[x]);
    let mut breaks = vec![0.0];
    breaks.extend(xs.iter().copied());
    breaks.push(1.0);
    let mut total = Complex64::new(0.0, 0.0);
    for (i, w) in breaks.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let (fa, fb) = (value(a), value(b));
        // ∫_a^b (x - i/n) f'(x) dx
        let x_fprime = fb * b - fa * a - (antiderivative(f, b) - antiderivative(f, a));
        total += x_fprime - (fb - fa) * (i as f64 / n);
    }
    Ok(total.re)
}

/// `mean_s conj(f̂_s(k)) f̂_s(k')`, using `f̂_s(k) = e_k(s) f̂(k)`.
pub fn fourier_orthogonality_check(
    f: &FourierFunction,
    k: &[i64],
    k2: &[i64],
    shift_samples: usize,
    rng: &mut Rng,
) -> Complex64 {
    let base = f.coefficient(k).conj() * f.coefficient(k2);
    let diff: Vec<i64> = k2.iter().zip(k).map(|(a, b)| a - b).collect();
    let mut acc = Complex64::new(0.0, 0.0);
    for _ in 0..shift_samples {
        let phase: Complex64 = diff.iter().map(|&m| e_k(m, rng.gen::<f64>())).product();
        acc += phase;
    }
    base * acc / shift_samples.max(1) as f64
}

/// The same quantity with the shift integrated analytically:
/// `∫₀¹ e_m(s) ds = (e_m(1) - 1)/(2πim)` per coordinate.
pub fn fourier_orthogonality_analytic(f: &FourierFunction, k: &[i64], k2: &[i64]) -> Complex64 {
    let base = f.coefficient(k).conj() * f.coefficient(k2);
    let integral: Complex64 = k2
        .iter()
        .zip(k)
        .map(|(a, b)| {
            let m = a - b;
            if m == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                let w = 2.0 * PI * m as f64;
                Complex64::new(w.sin(), 1.0 - w.cos()) / w
            }
        })
        .product();
    base * integral
}

/// Uniformly random real series with `terms` conjugate pairs and
/// frequencies in `[-max_freq, max_freq]^d`.
pub fn random_series(d: usize, terms: usize, max_freq: i64, rng: &mut Rng) -> FourierFunction {
    let mut f = FourierFunction::new(d);
    f.add_term(vec![0; d], Complex64::new(rng.gen_range(-1.0..1.0), 0.0));
    for _ in 0..terms {
        let k: Vec<i64> = (0..d)
            .map(|_| rng.gen_range(-max_freq..=max_freq))
            .collect();
        if k.iter().all(|&x| x == 0) {
            continue;
        }
        let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let neg: Vec<i64> = k.iter().map(|x| -x).collect();
        f.add_term(k, c);
        f.add_term(neg, c.conj());
    }
    f
}
