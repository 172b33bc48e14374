//! Recursive halving of `n²` uniform samples into `n` point sets of size `n`
//! by balanced subgaussian colorings of stacked dyadic incidence vectors.
//!
//! The dyadic system is randomly shifted; equivalently the points are
//! shifted (mod 1) before their incidence vectors are computed, and the sets
//! themselves always hold the original, unshifted samples.

use crate::clock::Stopwatch;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::balancing::{merge_difference, ColorVector, SparseVector, WalkState};
use crate::discrepancy::{DiscrepancyVector, IndexSpace};
use crate::dyadic::{containing_index, BoxIndex};
use crate::error::{Error, Result};
use crate::rng::{substream, tag, Rng};

/// How the walk threshold `c` is chosen for each split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkThreshold {
    /// `c = constant · ln(m · pairs)` for a walk over `pairs` vectors in `m`
    /// logical dimensions.
    LogScaled {
        constant: f64,
    },
    Fixed {
        c: f64,
    },
}

impl Default for WalkThreshold {
    fn default() -> Self {
        WalkThreshold::LogScaled {
            constant: DEFAULT_THRESHOLD_CONSTANT,
        }
    }
}

/// Order in which the points of a set are paired before the walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingOrder {
    /// Consecutive points in storage order.
    Input,
    /// Consecutive points along the Z-order of their finest dyadic cells.
    #[default]
    Dyadic,
}

pub const DEFAULT_THRESHOLD_CONSTANT: f64 = 30.0;
pub const DEFAULT_H_CONSTANT: f64 = 2.0;
pub const DEFAULT_MAX_ATTEMPTS: usize = 5;

impl WalkThreshold {
    pub fn resolve(&self, dim: u128, pairs: usize) -> f64 {
        match *self {
            WalkThreshold::LogScaled { constant } => {
                crate::balancing::default_threshold(dim, pairs, constant)
            }
            WalkThreshold::Fixed { c } => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferenceConfig {
    /// Output set size, a power of two ≥ 2. The sample has `n²` points.
    pub n: usize,
    pub d: usize,
    /// Dyadic resolution.
    pub h: u32,
    #[serde(default)]
    pub threshold: WalkThreshold,
    pub seed: u64,
    #[serde(default)]
    pub record_discrepancy: bool,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
    #[serde(default)]
    pub pairing: PairingOrder,
}

fn default_attempts() -> usize {
    DEFAULT_MAX_ATTEMPTS
}

/// `ceil(constant · log2(d·n))`, at least 1.
pub fn default_h(n: usize, d: usize, constant: f64) -> u32 {
    ((constant * ((d * n) as f64).log2()).ceil() as u32).max(1)
}

impl TransferenceConfig {
    pub fn new(n: usize, d: usize, seed: u64) -> Result<Self> {
        let cfg = TransferenceConfig {
            n,
            d,
            h: default_h(n.max(1), d.max(1), DEFAULT_H_CONSTANT),
            threshold: WalkThreshold::default(),
            seed,
            record_discrepancy: false,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            pairing: PairingOrder::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_h(mut self, h: u32) -> Self {
        self.h = h;
        self
    }

    pub fn with_threshold(mut self, t: WalkThreshold) -> Self {
        self.threshold = t;
        self
    }

    pub fn with_pairing(mut self, pairing: PairingOrder) -> Self {
        self.pairing = pairing;
        self
    }

    pub fn with_recording(mut self, on: bool) -> Self {
        self.record_discrepancy = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || !self.n.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "n = {} must be a power of two ≥ 2",
                self.n
            )));
        }
        if self.d == 0 {
            return Err(Error::InvalidConfig("d must be at least 1".into()));
        }
        if self.h == 0 {
            return Err(Error::InvalidConfig("h must be at least 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidConfig(
                "max_attempts must be at least 1".into(),
            ));
        }
        BoxIndex::new(self.h, self.d)?;
        Ok(())
    }

    /// `T = log2 n`.
    pub fn levels(&self) -> usize {
        self.n.trailing_zeros() as usize
    }

    pub fn sample_size(&self) -> usize {
        self.n * self.n
    }
}

/// Points in `[0,1)^d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet {
    pub d: usize,
    pub coords: Vec<f64>,
}

impl PointSet {
    pub fn new(d: usize, coords: Vec<f64>) -> Self {
        assert!(d > 0 && coords.len() % d == 0);
        PointSet { d, coords }
    }

    pub fn from_points(d: usize, points: &[Vec<f64>]) -> Self {
        PointSet::new(d, points.iter().flat_map(|p| p.iter().copied()).collect())
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.d)
    }

    pub fn select(&self, members: &[u32]) -> PointSet {
        let mut coords = Vec::with_capacity(members.len() * self.d);
        for &m in members {
            coords.extend_from_slice(self.point(m as usize));
        }
        PointSet { d: self.d, coords }
    }

    /// CSV with one point per row and shortest round-trip decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.coords.len() * 20);
        for p in self.iter() {
            for (j, x) in p.iter().enumerate() {
                if j > 0 {
                    s.push(',');
                }
                s.push_str(&format!("{x:?}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<PointSet> {
        let mut d = 0;
        let mut coords = Vec::new();
        for (lineno, line) in text.lines().enumerate().filter(|l| !l.1.trim().is_empty()) {
            let row: Vec<f64> = line
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
                })
                .collect::<Result<_>>()?;
            if d == 0 {
                d = row.len();
            } else if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            coords.extend(row);
        }
        if d == 0 {
            return Err(Error::EmptyPointSet);
        }
        Ok(PointSet { d, coords })
    }
}

/// `n²` i.i.d. uniform points in `[0,1)^d`.
pub fn sample_initial(config: &TransferenceConfig) -> PointSet {
    let mut rng = substream(config.seed, &[tag::SAMPLE]);
    let coords = (0..config.sample_size() * config.d)
        .map(|_| rng.gen::<f64>())
        .collect();
    PointSet::new(config.d, coords)
}

pub fn draw_shift(config: &TransferenceConfig) -> Vec<f64> {
    let mut rng = substream(config.seed, &[tag::SHIFT]);
    (0..config.d).map(|_| rng.gen::<f64>()).collect()
}

/// `x ↦ x - floor(x)`, folding into `[0,1)`.
#[inline]
pub fn fold(x: f64) -> f64 {
    let y = x - x.floor();
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Maps every coordinate `x_j ↦ (x_j + s_j) mod 1`.
pub fn apply_shift(points: &PointSet, s: &[f64]) -> PointSet {
    assert_eq!(s.len(), points.d);
    let coords = points
        .coords
        .chunks_exact(points.d)
        .flat_map(|p| p.iter().zip(s).map(|(&x, &sj)| fold(x + sj)))
        .collect();
    PointSet {
        d: points.d,
        coords,
    }
}

/// The stacked vector of a point: the basis vector `e_j` of the current
/// set followed by its dyadic incidence, scaled to unit norm. Box
/// coordinates are offset by the set size `m`.
pub fn stacked_vector(point: &[f64], j: usize, m: usize, h: u32) -> Result<SparseVector> {
    let index = BoxIndex::new(h, point.len())?;
    let mut keys = Vec::new();
    index.incidence(point, &mut keys);
    let w = 1.0 / ((1 + keys.len()) as f64).sqrt();
    let mut entries = Vec::with_capacity(keys.len() + 1);
    entries.push((j as u128, w));
    entries.extend(keys.into_iter().map(|k| (m as u128 + k, w)));
    Ok(SparseVector {
        entries,
        dim: m as u128 + index.key_space(),
    })
}

/// Result of splitting one set.
#[derive(Debug, Clone)]
pub struct Split {
    /// Positions (within the input set) colored `-1`, in pairing order.
    pub left: Vec<usize>,
    /// Positions colored `+1`.
    pub right: Vec<usize>,
    pub colors: ColorVector,
    pub attempts: usize,
    pub ops: u64,
    pub threshold: f64,
    pub max_lambda: f64,
}

fn walk_once(
    shifted: &PointSet,
    index: &BoxIndex,
    c: f64,
    rng: &mut Rng,
    ops: &mut u64,
) -> Result<(ColorVector, WalkState)> {
    let m = shifted.len();
    let per_point = (index.h as usize + 1).pow(index.d as u32);
    let dim = m as u128 + index.key_space();
    let mut state = WalkState::new(c, dim, m * (per_point + 1));
    let w = 0.5 / ((1 + per_point) as f64).sqrt();
    let (mut ka, mut kb) = (Vec::with_capacity(per_point), Vec::with_capacity(per_point));
    let (mut ea, mut eb) = (Vec::with_capacity(per_point), Vec::with_capacity(per_point));
    let mut diff = Vec::with_capacity(2 * per_point + 2);
    let mut colors = Vec::with_capacity(m);
    let offset = m as u128;
    for pair in 0..m / 2 {
        let (a, b) = (2 * pair, 2 * pair + 1);
        index.incidence(shifted.point(a), &mut ka);
        index.incidence(shifted.point(b), &mut kb);
        ea.clear();
        ea.extend(ka.iter().map(|&k| (offset + k, 1.0)));
        eb.clear();
        eb.extend(kb.iter().map(|&k| (offset + k, 1.0)));
        merge_difference(&ea, &eb, w, &mut diff);
        diff.push((a as u128, w));
        diff.push((b as u128, -w));
        let result = state.step(&diff, rng);
        *ops = state.ops;
        let y = result?;
        colors.push(y);
        colors.push(-y);
    }
    Ok((ColorVector { colors }, state))
}

/// Z-order key of the level-`h` cell containing `point`.
pub fn morton_key(point: &[f64], h: u32) -> u128 {
    let cells: Vec<u64> = point.iter().map(|&x| containing_index(x, h)).collect();
    let mut key = 0u128;
    for bit in (0..h).rev() {
        for &c in &cells {
            key = (key << 1) | ((c >> bit) & 1) as u128;
        }
    }
    key
}

/// Positions of the set's points in pairing order.
pub fn pairing_permutation(shifted: &PointSet, h: u32, order: PairingOrder) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..shifted.len() as u32).collect();
    if order == PairingOrder::Dyadic {
        let keys: Vec<u128> = shifted.iter().map(|p| morton_key(p, h)).collect();
        idx.sort_unstable_by_key(|&i| (keys[i as usize], i));
    }
    idx
}

/// Splits one (already shifted) set into the `-1` and `+1` halves, retrying
/// the whole walk on failure up to `config.max_attempts` times.
pub fn split_once(shifted: &PointSet, config: &TransferenceConfig, rng: &mut Rng) -> Result<Split> {
    split_once_tagged(shifted, config, rng, 0, 0)
}

fn split_once_tagged(
    shifted: &PointSet,
    config: &TransferenceConfig,
    rng: &mut Rng,
    level: usize,
    set: usize,
) -> Result<Split> {
    let m = shifted.len();
    if m % 2 != 0 {
        return Err(Error::UnbalancedInput(m));
    }
    let index = BoxIndex::new(config.h, shifted.d)?;
    let c = config
        .threshold
        .resolve(m as u128 + index.key_space(), m / 2);
    let order = pairing_permutation(shifted, config.h, config.pairing);
    let arranged = shifted.select(&order);
    let mut total_ops = 0u64;
    let mut last = None;
    for attempt in 1..=config.max_attempts {
        let mut ops = 0u64;
        match walk_once(&arranged, &index, c, rng, &mut ops) {
            Ok((walked, state)) => {
                total_ops += ops;
                let mut colors = ColorVector { colors: vec![0; m] };
                for (&pos, &x) in order.iter().zip(&walked.colors) {
                    colors.colors[pos as usize] = x;
                }
                let (mut left, mut right) = (Vec::with_capacity(m / 2), Vec::with_capacity(m / 2));
                // Children keep the pairing order, so the next sort is nearly free.
                for &pos in &order {
                    let j = pos as usize;
                    if colors.colors[j] < 0 {
                        left.push(j)
                    } else {
                        right.push(j)
                    }
                }
                return Ok(Split {
                    left,
                    right,
                    colors,
                    attempts: attempt,
                    ops: total_ops,
                    threshold: c,
                    max_lambda: state.max_lambda,
                });
            }
            Err(e) => {
                total_ops += ops;
                last = Some(e);
            }
        }
    }
    Err(Error::SplitFailed {
        seed: config.seed,
        level,
        set,
        attempts: config.max_attempts,
        last: Box::new(last.expect("at least one attempt")),
    })
}

/// Combinatorial discrepancy `Σ_{j ∈ B} x_j` of every touched dyadic box,
/// i.e. `|B ∩ A_t| - 2|B ∩ A_{t+1}|` for the `-1` child.
pub fn dyadic_discrepancy(
    shifted: &PointSet,
    colors: &ColorVector,
    h: u32,
) -> Result<DiscrepancyVector<i64>> {
    let index = BoxIndex::new(h, shifted.d)?;
    let mut map: rustc_hash::FxHashMap<u128, i64> = Default::default();
    let mut keys = Vec::new();
    for (p, &x) in shifted.iter().zip(&colors.colors) {
        index.incidence(p, &mut keys);
        for &k in &keys {
            *map.entry(k).or_insert(0) += x as i64;
        }
    }
    let values: BTreeMap<u128, i64> = map.into_iter().filter(|e| e.1 != 0).collect();
    Ok(DiscrepancyVector {
        space: IndexSpace::DyadicBoxes { h, d: shifted.d },
        values,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeStats {
    pub ops: u64,
    pub splits: usize,
    pub retries: usize,
    pub wall_seconds: f64,
    pub max_lambda_over_c: f64,
}

/// Levels `t = 0..=T` of point sets. A tree built for a single leaf holds
/// only that leaf's ancestors.
#[derive(Debug, Clone)]
pub struct PartitionTree {
    pub config: TransferenceConfig,
    pub shift: Vec<f64>,
    /// The original i.i.d. sample `A_0`.
    pub initial: PointSet,
    /// `A_0` after the shift, used for every incidence computation.
    pub shifted: PointSet,
    /// `levels[t][i]` lists the members of `A_t^{(i)}` as indices into `A_0`.
    pub levels: Vec<BTreeMap<usize, Vec<u32>>>,
    /// `colorings[t][i]` colors `A_t^{(i)}` in member order.
    pub colorings: Vec<BTreeMap<usize, ColorVector>>,
    /// `disc_records[t][i]`: dyadic-box discrepancy of the split of
    /// `A_t^{(i)}`, relative to its `-1` child `A_{t+1}^{(2i)}`.
    pub disc_records: Option<Vec<BTreeMap<usize, DiscrepancyVector<i64>>>>,
    pub stats: TreeStats,
}

impl PartitionTree {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn members(&self, t: usize, i: usize) -> Option<&[u32]> {
        self.levels.get(t)?.get(&i).map(Vec::as_slice)
    }

    pub fn set_points(&self, t: usize, i: usize) -> Option<PointSet> {
        self.members(t, i).map(|m| self.initial.select(m))
    }

    pub fn set_points_shifted(&self, t: usize, i: usize) -> Option<PointSet> {
        self.members(t, i).map(|m| self.shifted.select(m))
    }

    pub fn leaf(&self, i: usize) -> Option<PointSet> {
        self.set_points(self.depth(), i)
    }

    /// Indices of the leaves present in the tree.
    pub fn leaf_indices(&self) -> Vec<usize> {
        self.levels[self.depth()].keys().copied().collect()
    }

    /// Set index at each level `0..=T` on the path to `leaf`.
    pub fn path(&self, leaf: usize) -> Vec<usize> {
        let t = self.depth();
        (0..=t).map(|l| leaf >> (t - l)).collect()
    }

    /// Writes `meta.json` and `level_<t>/set_<i>.csv` for the given levels.
    pub fn write_dir(&self, dir: &Path, levels: &[usize]) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = TreeMeta {
            config: self.config.clone(),
            shift: self.shift.clone(),
            seed: self.config.seed,
            levels: self
                .levels
                .iter()
                .map(|l| l.keys().copied().collect())
                .collect(),
            stats: self.stats.clone(),
        };
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        for &t in levels {
            let ldir = dir.join(format!("level_{t}"));
            std::fs::create_dir_all(&ldir)?;
            for &i in self.levels[t].keys() {
                let pts = self.set_points(t, i).expect("present");
                std::fs::write(ldir.join(format!("set_{i}.csv")), pts.to_csv())?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeMeta {
    pub config: TransferenceConfig,
    pub shift: Vec<f64>,
    pub seed: u64,
    pub levels: Vec<Vec<usize>>,
    pub stats: TreeStats,
}

struct NodeOutcome {
    set: usize,
    split: Split,
    record: Option<DiscrepancyVector<i64>>,
}

fn split_node(
    tree_shifted: &PointSet,
    members: &[u32],
    config: &TransferenceConfig,
    level: usize,
    set: usize,
) -> Result<NodeOutcome> {
    let pts = tree_shifted.select(members);
    let mut rng = substream(config.seed, &[tag::SPLIT, level as u64, set as u64]);
    let split = split_once_tagged(&pts, config, &mut rng, level, set)?;
    let record = if config.record_discrepancy {
        Some(dyadic_discrepancy(&pts, &split.colors, config.h)?)
    } else {
        None
    };
    Ok(NodeOutcome { set, split, record })
}

fn build(config: &TransferenceConfig, only_leaf: Option<usize>) -> Result<PartitionTree> {
    config.validate()?;
    let start = Stopwatch::start();
    let initial = sample_initial(config);
    let shift = draw_shift(config);
    let shifted = apply_shift(&initial, &shift);
    let t_max = config.levels();
    if let Some(leaf) = only_leaf {
        if leaf >= config.n {
            return Err(Error::InvalidConfig(format!(
                "leaf {leaf} out of range for n = {}",
                config.n
            )));
        }
    }
    let mut levels = vec![BTreeMap::from([(
        0usize,
        (0..initial.len() as u32).collect::<Vec<u32>>(),
    )])];
    let mut colorings = Vec::with_capacity(t_max);
    let mut records = config.record_discrepancy.then(Vec::new);
    let mut stats = TreeStats::default();
    for t in 0..t_max {
        let current = &levels[t];
        let wanted: Vec<(usize, &Vec<u32>)> = current
            .iter()
            .filter(|(&i, _)| only_leaf.map_or(true, |leaf| leaf >> (t_max - t) == i))
            .map(|(&i, m)| (i, m))
            .collect();
        let outcomes: Vec<NodeOutcome> = wanted
            .par_iter()
            .map(|&(i, m)| split_node(&shifted, m, config, t, i))
            .collect::<Result<_>>()?;
        let mut next = BTreeMap::new();
        let mut level_colors = BTreeMap::new();
        let mut level_records = BTreeMap::new();
        for out in outcomes {
            let parent = &current[&out.set];
            let left: Vec<u32> = out.split.left.iter().map(|&j| parent[j]).collect();
            let right: Vec<u32> = out.split.right.iter().map(|&j| parent[j]).collect();
            let keep =
                |child: usize| only_leaf.map_or(true, |leaf| leaf >> (t_max - t - 1) == child);
            if keep(2 * out.set) {
                next.insert(2 * out.set, left);
            }
            if keep(2 * out.set + 1) {
                next.insert(2 * out.set + 1, right);
            }
            stats.ops += out.split.ops;
            stats.splits += 1;
            stats.retries += out.split.attempts - 1;
            stats.max_lambda_over_c = stats
                .max_lambda_over_c
                .max(out.split.max_lambda / out.split.threshold);
            level_colors.insert(out.set, out.split.colors);
            if let Some(r) = out.record {
                level_records.insert(out.set, r);
            }
        }
        levels.push(next);
        colorings.push(level_colors);
        if let Some(r) = records.as_mut() {
            r.push(level_records);
        }
    }
    stats.wall_seconds = start.seconds();
    Ok(PartitionTree {
        config: config.clone(),
        shift,
        initial,
        shifted,
        levels,
        colorings,
        disc_records: records,
        stats,
    })
}

/// Full partition of `A_0` into `n` leaves of `n` points each.
pub fn subg_transference(config: &TransferenceConfig) -> Result<PartitionTree> {
    build(config, None)
}

/// Only the splits on the path to `leaf`. The leaf is identical to the one
/// the full tree produces for the same configuration.
pub fn subg_transference_leaf(config: &TransferenceConfig, leaf: usize) -> Result<PartitionTree> {
    build(config, Some(leaf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::incidence_vector;

    fn cfg(n: usize, d: usize, seed: u64) -> TransferenceConfig {
        TransferenceConfig::new(n, d, seed).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TransferenceConfig::new(6, 1, 0).is_err());
        assert!(TransferenceConfig::new(1, 1, 0).is_err());
        assert!(TransferenceConfig::new(8, 0, 0).is_err());
        let c = cfg(64, 2, 0);
        assert_eq!(c.h, 14);
        assert_eq!(c.levels(), 6);
    }

    #[test]
    fn sample_is_reproducible() {
        let a = sample_initial(&cfg(4, 2, 9));
        assert_eq!(a.len(), 16);
        assert!(a.coords.iter().all(|&x| (0.0..1.0).contains(&x)));
        assert_eq!(a, sample_initial(&cfg(4, 2, 9)));
        assert_ne!(a, sample_initial(&cfg(4, 2, 10)));
        let big = sample_initial(&cfg(64, 1, 3));
        let mean = big.coords.iter().sum::<f64>() / big.len() as f64;
        assert!((mean - 0.5).abs() <= 0.025);
    }

    #[test]
    fn shift_examples() {
        let p = PointSet::new(1, vec![0.9, 0.1, 0.0]);
        assert_eq!(apply_shift(&p, &[0.0]), p);
        assert!((apply_shift(&p, &[0.3]).coords[0] - 0.2).abs() < 1e-15);
        let pts = sample_initial(&cfg(8, 3, 1));
        let s = [0.3, 0.77, 0.01];
        let back = apply_shift(&apply_shift(&pts, &s), &s.map(|x| 1.0 - x));
        for (a, b) in back.coords.iter().zip(&pts.coords) {
            let diff = (a - b).abs();
            assert!(diff < 1e-15 || (1.0 - diff) < 1e-15);
        }
    }

    #[test]
    fn stacked_vector_shape() {
        let v = stacked_vector(&[0.3], 2, 8, 2).unwrap();
        assert_eq!(v.nnz(), 4);
        assert_eq!(stacked_vector(&[0.3, 0.6], 0, 8, 2).unwrap().nnz(), 10);
        assert!((v.norm() - 1.0).abs() < 1e-15);
        let w = stacked_vector(&[0.7], 3, 8, 2).unwrap();
        assert_eq!(v.entries[0].0, 2);
        assert_eq!(w.entries[0].0, 3);
        let keys = incidence_vector(&[0.3], 2).unwrap();
        assert_eq!(
            v.entries[1..].iter().map(|e| e.0 - 8).collect::<Vec<_>>(),
            keys
        );
    }

    #[test]
    fn two_point_split_is_fair() {
        let pts = PointSet::new(1, vec![0.2, 0.8]);
        let config = cfg(2, 1, 0);
        let mut first_left = 0;
        for seed in 0..2000 {
            let mut rng = substream(seed, &[]);
            let s = split_once(&pts, &config, &mut rng).unwrap();
            assert_eq!(s.left.len(), 1);
            assert_eq!(s.right.len(), 1);
            first_left += (s.left[0] == 0) as i32;
        }
        assert!((first_left - 1000).abs() < 4 * 23);
    }

    #[test]
    fn whole_cube_has_zero_discrepancy() {
        let config = cfg(16, 1, 5);
        let pts = apply_shift(&sample_initial(&config), &draw_shift(&config));
        let mut rng = substream(1, &[]);
        let s = split_once(&pts, &config, &mut rng).unwrap();
        let disc = dyadic_discrepancy(&pts, &s.colors, config.h).unwrap();
        assert_eq!(disc.values.get(&0).copied().unwrap_or(0), 0);
    }

    #[test]
    fn tree_shape_and_partition() {
        let config = cfg(4, 2, 77);
        let tree = subg_transference(&config).unwrap();
        let sizes: Vec<(usize, usize)> = tree
            .levels
            .iter()
            .map(|l| (l.len(), l.values().next().unwrap().len()))
            .collect();
        assert_eq!(sizes, vec![(1, 16), (2, 8), (4, 4)]);
        for t in 0..tree.depth() {
            for (&i, parent) in &tree.levels[t] {
                let mut kids: Vec<u32> = tree.levels[t + 1][&(2 * i)]
                    .iter()
                    .chain(&tree.levels[t + 1][&(2 * i + 1)])
                    .copied()
                    .collect();
                kids.sort();
                let mut p = parent.clone();
                p.sort();
                assert_eq!(kids, p);
            }
        }
    }

    #[test]
    fn leaf_path_matches_full_tree() {
        let config = cfg(16, 1, 4);
        let full = subg_transference(&config).unwrap();
        for leaf in [0, 5, 15] {
            let path = subg_transference_leaf(&config, leaf).unwrap();
            assert_eq!(path.leaf_indices(), vec![leaf]);
            assert_eq!(path.leaf(leaf), full.leaf(leaf));
        }
        assert!(full
            .leaf_indices()
            .iter()
            .all(|&i| full.leaf(i).unwrap().len() == 16));
    }

    #[test]
    fn failing_threshold_reports_seed() {
        let config = cfg(8, 1, 3).with_threshold(WalkThreshold::Fixed { c: 1e-9 });
        match subg_transference(&config) {
            Err(Error::SplitFailed { seed, attempts, .. }) => {
                assert_eq!(seed, 3);
                assert_eq!(attempts, DEFAULT_MAX_ATTEMPTS);
            }
            other => panic!("expected split failure, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let pts = sample_initial(&cfg(4, 3, 2));
        assert_eq!(PointSet::from_csv(&pts.to_csv()).unwrap(), pts);
    }
}
