//! Dyadic intervals and boxes, prefix intervals and corners, and the prefix
//! decomposition matrices `P_h` and `P̄_h`.
//!
//! Conventions used everywhere in the crate:
//!
//! * Intervals of `D_{≤h}` are ordered level-major, index-minor. The linear
//!   index of `(level, index)` is `2^level - 1 + index`.
//! * Decomposition matrices drop `(0,1]`, so their column index is the
//!   linear index minus one.
//! * Row `ℓ` of a decomposition matrix is the prefix `(0, ℓ/2^h]`,
//!   `ℓ = 0..2^h`.
//! * A `d`-dimensional box is keyed by the mixed-radix combination of its
//!   per-dimension linear indices, dimension 0 most significant.

use num_traits::Zero;
use serde::{Deserialize, Serialize};
use std::ops::Add;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Openness {
    /// `(ℓ/2^j, (ℓ+1)/2^j]`
    #[serde(rename = "left")]
    LeftOpen,
    /// `[ℓ/2^j, (ℓ+1)/2^j)`
    #[serde(rename = "right")]
    RightOpen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicInterval {
    pub level: u32,
    pub index: u64,
    #[serde(rename = "open")]
    pub openness: Openness,
}

impl DyadicInterval {
    pub fn new(level: u32, index: u64, openness: Openness) -> Self {
        assert!(level < 63, "dyadic level {level} too deep");
        assert!(
            index < 1u64 << level,
            "index {index} out of range for level {level}"
        );
        DyadicInterval {
            level,
            index,
            openness,
        }
    }

    pub fn left_open(level: u32, index: u64) -> Self {
        Self::new(level, index, Openness::LeftOpen)
    }

    pub fn right_open(level: u32, index: u64) -> Self {
        Self::new(level, index, Openness::RightOpen)
    }

    pub fn left(&self) -> f64 {
        self.index as f64 / (1u64 << self.level) as f64
    }

    pub fn right(&self) -> f64 {
        (self.index + 1) as f64 / (1u64 << self.level) as f64
    }

    pub fn length(&self) -> f64 {
        1.0 / (1u64 << self.level) as f64
    }

    pub fn contains(&self, x: f64) -> bool {
        match self.openness {
            Openness::LeftOpen => self.left() < x && x <= self.right(),
            Openness::RightOpen => self.left() <= x && x < self.right(),
        }
    }

    /// "Odd" intervals are the leftmost of their sibling pair (even index).
    /// Only meaningful for level ≥ 1.
    pub fn is_odd(&self) -> bool {
        self.index % 2 == 0
    }

    pub fn sibling(&self) -> Option<Self> {
        (self.level > 0).then(|| Self::new(self.level, self.index ^ 1, self.openness))
    }

    pub fn with_openness(&self, openness: Openness) -> Self {
        Self { openness, ..*self }
    }

    pub fn linear_index(&self) -> u64 {
        (1u64 << self.level) - 1 + self.index
    }

    pub fn from_linear(lin: u64, openness: Openness) -> Self {
        let level = 63 - (lin + 1).leading_zeros();
        Self::new(level, lin + 1 - (1u64 << level), openness)
    }
}

/// All intervals of levels `0..=h` in canonical order.
pub fn enumerate_dyadic(h: u32, openness: Openness) -> Vec<DyadicInterval> {
    (0..=h)
        .flat_map(|level| (0..1u64 << level).map(move |i| DyadicInterval::new(level, i, openness)))
        .collect()
}

/// Number of intervals in `D_{≤h}`.
pub fn dyadic_count(h: u32) -> u64 {
    (1u64 << (h + 1)) - 1
}

/// Minimal disjoint dyadic cover of `(0, ℓ/2^h]`, coarsest interval first.
pub fn decompose_prefix_index(ell: u64, h: u32) -> Result<Vec<DyadicInterval>> {
    if ell >= 1u64 << h {
        return Err(Error::PrefixOutOfRange { index: ell, h });
    }
    let mut out = Vec::with_capacity(h as usize);
    for level in 1..=h {
        let head = ell >> (h - level);
        if head & 1 == 1 {
            out.push(DyadicInterval::left_open(level, head - 1));
        }
    }
    Ok(out)
}

/// Grid index of `z` on the `2^-h` grid, or an off-grid error.
pub fn grid_index(z: f64, h: u32) -> Result<u64> {
    let scaled = z * (1u64 << h) as f64;
    if !(0.0..=(1u64 << h) as f64).contains(&scaled) || scaled.fract() != 0.0 {
        return Err(Error::OffGridPrefix { value: z, h });
    }
    Ok(scaled as u64)
}

/// [`decompose_prefix_index`] for a grid point given as a real number.
pub fn decompose_prefix(z: f64, h: u32) -> Result<Vec<DyadicInterval>> {
    decompose_prefix_index(grid_index(z, h)?, h)
}

/// Left-open index of the level-`level` interval containing `x`.
///
/// `x = 0` is identified with `1` (the torus point), so every coordinate in
/// `[0,1)` lies in exactly one interval per level.
#[inline]
pub fn containing_index(x: f64, level: u32) -> u64 {
    let cells = (1u64 << level) as f64;
    if x <= 0.0 {
        return (1u64 << level) - 1;
    }
    let c = (x * cells).ceil();
    (c.min(cells) as u64).saturating_sub(1)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DyadicBox {
    pub dims: Vec<DyadicInterval>,
}

impl DyadicBox {
    pub fn contains(&self, point: &[f64]) -> bool {
        debug_assert_eq!(point.len(), self.dims.len());
        self.dims.iter().zip(point).all(|(iv, &x)| iv.contains(x))
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().map(DyadicInterval::length).product()
    }

    /// Number of boxes whose every level is at most `h`.
    pub fn count_up_to(h: u32, d: usize) -> u128 {
        (dyadic_count(h) as u128).pow(d as u32)
    }
}

/// Anchored box `(0, z_1] × … × (0, z_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corner {
    pub anchor: Vec<f64>,
    pub h: u32,
}

impl Corner {
    pub fn new(anchor: Vec<f64>, h: u32) -> Self {
        Corner { anchor, h }
    }

    /// Corner at grid indices `ℓ_j / 2^h`.
    pub fn from_grid(indices: &[u64], h: u32) -> Self {
        let scale = (1u64 << h) as f64;
        Corner {
            anchor: indices.iter().map(|&l| l as f64 / scale).collect(),
            h,
        }
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        self.anchor
            .iter()
            .zip(point)
            .all(|(&z, &x)| x > 0.0 && x <= z)
    }

    pub fn volume(&self) -> f64 {
        self.anchor.iter().product()
    }

    pub fn grid_indices(&self) -> Result<Vec<u64>> {
        self.anchor.iter().map(|&z| grid_index(z, self.h)).collect()
    }

    /// Dyadic boxes tiling the corner, as products of the per-dimension
    /// prefix decompositions. Every anchor coordinate must lie on the grid;
    /// a coordinate equal to 1 contributes `(0,1]` itself.
    pub fn decompose(&self) -> Result<Vec<DyadicBox>> {
        let per_dim: Vec<Vec<DyadicInterval>> = self
            .anchor
            .iter()
            .map(|&z| {
                if z == 1.0 {
                    Ok(vec![DyadicInterval::left_open(0, 0)])
                } else {
                    decompose_prefix(z, self.h)
                }
            })
            .collect::<Result<_>>()?;
        let mut boxes = vec![Vec::new()];
        for ivs in &per_dim {
            boxes = boxes
                .into_iter()
                .flat_map(|prefix: Vec<DyadicInterval>| {
                    ivs.iter().map(move |iv| {
                        let mut b = prefix.clone();
                        b.push(*iv);
                        b
                    })
                })
                .collect();
        }
        Ok(boxes.into_iter().map(|dims| DyadicBox { dims }).collect())
    }
}

/// Keys for left-open dyadic boxes of `D_{≤h}^{⊗d}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxIndex {
    pub h: u32,
    pub d: usize,
}

impl BoxIndex {
    pub fn new(h: u32, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        if (h as usize + 1) * d > 127 {
            return Err(Error::InvalidConfig(format!(
                "box index space 2^({}·{d}) does not fit in 128 bits",
                h + 1
            )));
        }
        Ok(BoxIndex { h, d })
    }

    fn radix_bits(&self) -> u32 {
        self.h + 1
    }

    /// Size of the key space (an upper bound on every key, exclusive).
    pub fn key_space(&self) -> u128 {
        1u128 << (self.radix_bits() as usize * self.d)
    }

    pub fn key_from_linear(&self, lins: &[u64]) -> u128 {
        lins.iter()
            .fold(0u128, |acc, &l| (acc << self.radix_bits()) | l as u128)
    }

    pub fn key(&self, b: &DyadicBox) -> u128 {
        let lins: Vec<u64> = b.dims.iter().map(DyadicInterval::linear_index).collect();
        self.key_from_linear(&lins)
    }

    pub fn decode(&self, key: u128) -> DyadicBox {
        let mask = (1u128 << self.radix_bits()) - 1;
        let mut dims: Vec<DyadicInterval> = (0..self.d)
            .map(|j| {
                let shift = self.radix_bits() as usize * j;
                DyadicInterval::from_linear(((key >> shift) & mask) as u64, Openness::LeftOpen)
            })
            .collect();
        dims.reverse();
        DyadicBox { dims }
    }

    /// Keys of the `(h+1)^d` boxes containing `point`, in increasing order.
    pub fn incidence(&self, point: &[f64], out: &mut Vec<u128>) {
        debug_assert_eq!(point.len(), self.d);
        out.clear();
        out.push(0);
        let bits = self.radix_bits();
        for &x in point {
            let fine = containing_index(x, self.h);
            let n = out.len();
            for i in 0..n {
                let base = out[i] << bits;
                for level in 0..=self.h {
                    let lin = (1u64 << level) - 1 + (fine >> (self.h - level));
                    out.push(base | lin as u128);
                }
            }
            out.drain(..n);
        }
    }
}

/// Sparse 0/1 incidence of a point against `D_{≤h}^{⊗d}`: the sorted keys
/// of the boxes containing it.
pub fn incidence_vector(point: &[f64], h: u32) -> Result<Vec<u128>> {
    let index = BoxIndex::new(h, point.len())?;
    let mut out = Vec::new();
    index.incidence(point, &mut out);
    Ok(out)
}

/// Consecutive run of ones in a column: rows `start..start+len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub start: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    /// The left-open interval of `D_{≤h} \ {(0,1]}` labelling the column.
    pub interval: DyadicInterval,
    pub run: Run,
}

/// A prefix decomposition matrix stored column-wise as runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionMatrix {
    pub h: u32,
    pub columns: Vec<Column>,
}

fn column_labels(h: u32) -> impl Iterator<Item = DyadicInterval> {
    (1..=h).flat_map(|level| (0..1u64 << level).map(move |i| DyadicInterval::left_open(level, i)))
}

/// `P_h`: row `ℓ` has ones at the dyadic decomposition of `(0, ℓ/2^h]`.
/// Columns of even intervals are empty; an odd interval at level `L` is
/// used by the prefixes ending in the right-open right sibling.
pub fn build_p(h: u32) -> DecompositionMatrix {
    assert!(h >= 1);
    let columns = column_labels(h)
        .map(|iv| {
            let len = 1u64 << (h - iv.level);
            let run = if iv.is_odd() {
                Run {
                    start: (iv.index + 1) * len,
                    len,
                }
            } else {
                Run { start: 0, len: 0 }
            };
            Column { interval: iv, run }
        })
        .collect();
    DecompositionMatrix { h, columns }
}

/// `P̄_h`: odd columns as in `P_h`; each even column is filled with the rows
/// lying in the right-open sibling interval.
pub fn build_p_bar(h: u32) -> DecompositionMatrix {
    assert!(h >= 1);
    let columns = column_labels(h)
        .map(|iv| {
            let len = 1u64 << (h - iv.level);
            Column {
                interval: iv,
                run: Run {
                    start: (iv.index ^ 1) * len,
                    len,
                },
            }
        })
        .collect();
    DecompositionMatrix { h, columns }
}

impl DecompositionMatrix {
    pub fn rows(&self) -> usize {
        1usize << self.h
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn entry(&self, row: usize, col: usize) -> bool {
        let r = self.columns[col].run;
        (row as u64) >= r.start && (row as u64) < r.start + r.len
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut m = vec![vec![0u8; self.cols()]; self.rows()];
        for (c, col) in self.columns.iter().enumerate() {
            for r in col.run.start..col.run.start + col.run.len {
                m[r as usize][c] = 1;
            }
        }
        m
    }

    /// The right-open interval occupied by a column's run, if the run is a
    /// non-empty dyadic interval of level ≥ 1.
    pub fn run_interval(&self, col: usize) -> Option<DyadicInterval> {
        let Run { start, len } = self.columns[col].run;
        if len == 0 || !len.is_power_of_two() || start % len != 0 {
            return None;
        }
        let level = self.h - len.trailing_zeros();
        if level == 0 || start + len > 1u64 << self.h {
            return None;
        }
        Some(DyadicInterval::right_open(level, start / len))
    }

    /// `Mᵀu`, summing each run in row order.
    pub fn apply_transpose<T: Copy + Zero + Add<Output = T>>(&self, u: &[T]) -> Vec<T> {
        assert_eq!(u.len(), self.rows());
        self.columns
            .iter()
            .map(|c| {
                u[c.run.start as usize..(c.run.start + c.run.len) as usize]
                    .iter()
                    .fold(T::zero(), |acc, &x| acc + x)
            })
            .collect()
    }

    /// `M·v`, accumulating columns in order.
    pub fn apply<T: Copy + Zero + Add<Output = T>>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols());
        let mut out = vec![T::zero(); self.rows()];
        for (c, col) in self.columns.iter().enumerate() {
            for r in col.run.start..col.run.start + col.run.len {
                out[r as usize] = out[r as usize] + v[c];
            }
        }
        out
    }

    /// Applies `Mᵀ` along one axis of a row-major tensor. Returns the new
    /// tensor and its shape.
    pub fn apply_transpose_along<T: Copy + Zero + Add<Output = T>>(
        &self,
        data: &[T],
        shape: &[usize],
        axis: usize,
    ) -> (Vec<T>, Vec<usize>) {
        assert_eq!(shape[axis], self.rows());
        assert_eq!(data.len(), shape.iter().product::<usize>());
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let rows = self.rows();
        let cols = self.cols();
        let mut out = vec![T::zero(); outer * cols * inner];
        let mut fiber = vec![T::zero(); rows];
        for o in 0..outer {
            for i in 0..inner {
                for (r, f) in fiber.iter_mut().enumerate() {
                    *f = data[(o * rows + r) * inner + i];
                }
                for (c, v) in self.apply_transpose(&fiber).into_iter().enumerate() {
                    out[(o * cols + c) * inner + i] = v;
                }
            }
        }
        let mut new_shape = shape.to_vec();
        new_shape[axis] = cols;
        (out, new_shape)
    }

    /// `(Mᵀ)^{⊗k}` applied to a `k`-way tensor with side `2^h`.
    pub fn apply_transpose_tensor<T: Copy + Zero + Add<Output = T>>(
        &self,
        data: &[T],
        ways: usize,
    ) -> Vec<T> {
        let mut shape = vec![self.rows(); ways];
        let mut cur = data.to_vec();
        for axis in 0..ways {
            let (next, s) = self.apply_transpose_along(&cur, &shape, axis);
            cur = next;
            shape = s;
        }
        cur
    }

    /// Checks both structural properties of a structured matrix: every
    /// column is a right-open dyadic run, and each level `1..=h` appears in
    /// exactly `2^ℓ` columns tiling `[0,1)`.
    pub fn check_structured(&self) -> std::result::Result<(), String> {
        let expected = (1usize << (self.h + 1)) - 2;
        if self.cols() != expected {
            return Err(format!(
                "expected {expected} columns, found {}",
                self.cols()
            ));
        }
        let mut seen: Vec<Vec<bool>> = (0..=self.h).map(|l| vec![false; 1 << l]).collect();
        for c in 0..self.cols() {
            let iv = self
                .run_interval(c)
                .ok_or_else(|| format!("column {c} is not a right-open dyadic run"))?;
            let slot = &mut seen[iv.level as usize][iv.index as usize];
            if *slot {
                return Err(format!("interval {iv:?} covered twice"));
            }
            *slot = true;
        }
        for (level, row) in seen.iter().enumerate().skip(1) {
            if !row.iter().all(|&b| b) {
                return Err(format!("level {level} runs do not tile [0,1)"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("matrix serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
