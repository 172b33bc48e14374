//! Combinatorial and continuous discrepancy, star-discrepancy evaluation,
//! the telescoping identity along a partition tree, and two constructions
//! on which prefix or corner discrepancy fails to be subgaussian.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::balancing::{ColorVector, SubgaussianEstimate};
use crate::dyadic::{BoxIndex, Corner, DyadicBox};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::transference::{PartitionTree, PointSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexSpace {
    /// Keys from [`BoxIndex`].
    DyadicBoxes { h: u32, d: usize },
    /// Key `ℓ` for the prefix `(0, ℓ/2^h]`.
    Prefixes { h: u32 },
    /// Mixed-radix grid indices (base `2^h + 1`), dimension 0 most
    /// significant.
    Corners { h: u32, d: usize },
}

/// Discrepancy values keyed by region. Absent keys are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyVector<T> {
    pub space: IndexSpace,
    pub values: BTreeMap<u128, T>,
}

impl<T: Copy + Default> DiscrepancyVector<T> {
    pub fn new(space: IndexSpace) -> Self {
        DiscrepancyVector {
            space,
            values: BTreeMap::new(),
        }
    }

    pub fn get(&self, key: u128) -> T {
        self.values.get(&key).copied().unwrap_or_default()
    }
}

impl DiscrepancyVector<i64> {
    /// Discrepancy of a corner, summed over its dyadic decomposition. Only
    /// defined for dyadic-box records.
    pub fn corner_value(&self, corner: &Corner) -> Result<i64> {
        let IndexSpace::DyadicBoxes { h, d } = self.space else {
            return Err(Error::InvalidConfig(
                "corner values need a dyadic-box record".into(),
            ));
        };
        if corner.anchor.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: corner.anchor.len(),
            });
        }
        if corner.anchor.iter().any(|&z| z == 0.0) {
            return Ok(0);
        }
        let index = BoxIndex::new(h, d)?;
        let aligned = Corner::new(corner.anchor.clone(), h);
        Ok(aligned
            .decompose()?
            .iter()
            .map(|b| self.get(index.key(b)))
            .sum())
    }
}

/// Key of a grid corner in [`IndexSpace::Corners`].
pub fn corner_key(corner: &Corner) -> Result<u128> {
    let base = (1u128 << corner.h) + 1;
    Ok(corner
        .grid_indices()?
        .iter()
        .fold(0u128, |acc, &l| acc * base + l as u128))
}

pub trait Region {
    fn contains(&self, point: &[f64]) -> bool;
    fn volume(&self) -> f64;
}

impl Region for Corner {
    fn contains(&self, point: &[f64]) -> bool {
        Corner::contains(self, point)
    }
    fn volume(&self) -> f64 {
        Corner::volume(self)
    }
}

impl Region for DyadicBox {
    fn contains(&self, point: &[f64]) -> bool {
        DyadicBox::contains(self, point)
    }
    fn volume(&self) -> f64 {
        DyadicBox::volume(self)
    }
}

/// The whole cube; contains every point.
#[derive(Debug, Clone, Copy)]
pub struct FullCube;

impl Region for FullCube {
    fn contains(&self, _point: &[f64]) -> bool {
        true
    }
    fn volume(&self) -> f64 {
        1.0
    }
}

pub fn count_in<R: Region + ?Sized>(points: &PointSet, region: &R) -> usize {
    points.iter().filter(|p| region.contains(p)).count()
}

/// `|R ∩ parent| - 2|R ∩ child|`.
pub fn comb_disc<R: Region + ?Sized>(
    parent: &PointSet,
    child: &PointSet,
    region: &R,
) -> Result<i64> {
    if parent.d != child.d {
        return Err(Error::DimensionMismatch {
            expected: parent.d,
            got: child.d,
        });
    }
    let key = |p: &[f64]| p.iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
    let mut pool: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    for p in parent.iter() {
        *pool.entry(key(p)).or_default() += 1;
    }
    for p in child.iter() {
        match pool.get_mut(&key(p)) {
            Some(c) if *c > 0 => *c -= 1,
            _ => return Err(Error::NotSubset),
        }
    }
    Ok(count_in(parent, region) as i64 - 2 * count_in(child, region) as i64)
}

/// `Σ_{j: z^j ∈ R} x_j`.
pub fn coloring_disc<R: Region + ?Sized>(
    points: &PointSet,
    colors: &ColorVector,
    region: &R,
) -> i64 {
    points
        .iter()
        .zip(&colors.colors)
        .filter(|(p, _)| region.contains(p))
        .map(|(_, &x)| x as i64)
        .sum()
}

/// `|A|·vol(C) - |A ∩ C|`.
pub fn continuous_disc(points: &PointSet, corner: &Corner) -> f64 {
    points.len() as f64 * corner.volume() - count_in(points, corner) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StarMode {
    /// Exact supremum, 1-d only.
    Exact,
    /// Maximum over corners whose coordinates are point coordinates or
    /// multiples of `2^-h`, evaluated both closed and as a limit from below.
    /// A lower bound on the true value.
    Grid { h: u32 },
}

/// Star discrepancy `sup_z |n·vol(C_z) - |A ∩ C_z||`.
pub fn star_disc(points: &PointSet, mode: StarMode) -> Result<f64> {
    match mode {
        StarMode::Exact if points.d == 1 => Ok(star_exact_1d(&points.coords)),
        StarMode::Exact => Err(Error::ExactStarUnsupported(points.d)),
        StarMode::Grid { h } => Ok(star_grid(points, h)),
    }
}

fn star_exact_1d(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mut inside: Vec<f64> = xs.iter().copied().filter(|&x| x > 0.0).collect();
    inside.sort_by(f64::total_cmp);
    let mut best = (n - inside.len() as f64).abs();
    let mut i = 0;
    while i < inside.len() {
        let x = inside[i];
        let mut j = i;
        while j < inside.len() && inside[j] == x {
            j += 1;
        }
        best = best
            .max((n * x - i as f64).abs())
            .max((n * x - j as f64).abs());
        i = j;
    }
    best
}

fn candidates(points: &PointSet, dim: usize, h: u32) -> Vec<f64> {
    let scale = (1u64 << h) as f64;
    let mut c: Vec<f64> = (1..=1u64 << h).map(|l| l as f64 / scale).collect();
    c.extend(
        points
            .iter()
            .map(|p| p[dim])
            .filter(|&x| x > 0.0 && x <= 1.0),
    );
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

fn star_grid(points: &PointSet, h: u32) -> f64 {
    let inside: Vec<&[f64]> = points
        .iter()
        .filter(|p| p.iter().all(|&x| x > 0.0))
        .collect();
    let n = points.len() as f64;
    let cands: Vec<Vec<f64>> = (0..points.d).map(|j| candidates(points, j, h)).collect();
    if points.d == 2 {
        return star_grid_2d(&inside, n, &cands[0], &cands[1]);
    }
    let mut best = 0.0f64;
    let mut idx = vec![0usize; points.d];
    loop {
        let z: Vec<f64> = idx.iter().enumerate().map(|(j, &i)| cands[j][i]).collect();
        let vol: f64 = z.iter().product();
        let closed = inside
            .iter()
            .filter(|p| p.iter().zip(&z).all(|(x, zj)| x <= zj))
            .count();
        let open = inside
            .iter()
            .filter(|p| p.iter().zip(&z).all(|(x, zj)| x < zj))
            .count();
        best = best
            .max((n * vol - closed as f64).abs())
            .max((n * vol - open as f64).abs());
        let mut j = 0;
        loop {
            if j == idx.len() {
                return best;
            }
            idx[j] += 1;
            if idx[j] < cands[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

struct Fenwick(Vec<u32>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }
    /// Sum over positions `< i`.
    fn prefix(&self, mut i: usize) -> u32 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i &= i - 1;
        }
        s
    }
}

fn star_grid_2d(inside: &[&[f64]], n: f64, cx: &[f64], cy: &[f64]) -> f64 {
    let mut ys: Vec<f64> = inside.iter().map(|p| p[1]).collect();
    ys.sort_by(f64::total_cmp);
    let rank = |y: f64| ys.partition_point(|&v| v < y);
    let upper: Vec<usize> = cy
        .iter()
        .map(|&y| ys.partition_point(|&v| v <= y))
        .collect();
    let lower: Vec<usize> = cy.iter().map(|&y| rank(y)).collect();
    let mut by_x: Vec<&[f64]> = inside.to_vec();
    by_x.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut closed = Fenwick(vec![0; ys.len() + 1]);
    let mut open = Fenwick(vec![0; ys.len() + 1]);
    let (mut ic, mut io) = (0, 0);
    let mut best = 0.0f64;
    for &x in cx {
        while ic < by_x.len() && by_x[ic][0] <= x {
            closed.add(rank(by_x[ic][1]));
            ic += 1;
        }
        while io < by_x.len() && by_x[io][0] < x {
            open.add(rank(by_x[io][1]));
            io += 1;
        }
        for (k, &y) in cy.iter().enumerate() {
            let v = n * x * y;
            best = best
                .max((v - closed.prefix(upper[k]) as f64).abs())
                .max((v - open.prefix(lower[k]) as f64).abs());
        }
    }
    best
}

/// Maximum over present leaves and the given corners of
/// `|h_T(C) - h_0(C) - Σ_t disc_t(C)/n_t|`, where `h_t(C) = vol(C) -
/// |C ∩ A_t|/n_t`. Corners are taken in the shifted frame in which the
/// records were computed.
pub fn telescoping_check(tree: &PartitionTree, corners: &[Corner]) -> Result<f64> {
    let records = tree
        .disc_records
        .as_ref()
        .ok_or(Error::MissingDiscRecords)?;
    let depth = tree.depth();
    let root = tree.set_points_shifted(0, 0).expect("root present");
    let n0 = root.len() as f64;
    let mut worst = 0.0f64;
    for leaf in tree.leaf_indices() {
        let path = tree.path(leaf);
        let leaf_pts = tree.set_points_shifted(depth, leaf).expect("leaf present");
        let n_leaf = leaf_pts.len() as f64;
        for corner in corners {
            let h0 = corner.volume() - count_in(&root, corner) as f64 / n0;
            let ht = corner.volume() - count_in(&leaf_pts, corner) as f64 / n_leaf;
            let mut sum = 0.0;
            for t in 0..depth {
                let record = records[t].get(&path[t]).ok_or(Error::MissingDiscRecords)?;
                let sign = if path[t + 1] % 2 == 0 { 1 } else { -1 };
                let n_t = tree.members(t, path[t]).expect("present").len() as f64;
                sum += (sign * record.corner_value(corner)?) as f64 / n_t;
            }
            worst = worst.max((ht - h0 - sum).abs());
        }
    }
    Ok(worst)
}

/// The 1-d paired construction: one point in each of the `2n` intervals
/// of length `1/2n`, colors paired across `(I_2, I_3), (I_4, I_5), …`.
#[derive(Debug, Clone)]
pub struct PairedConstruction {
    pub points: PointSet,
    pub colors: ColorVector,
    /// Prefix discrepancies at the odd grid points `(2j-1)/2n`.
    pub prefix: DiscrepancyVector<i64>,
}

pub fn paired_prefix_coloring(n: usize, rng: &mut Rng) -> Result<PairedConstruction> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::UnbalancedInput(n));
    }
    let m = 2 * n;
    let width = 1.0 / m as f64;
    let coords: Vec<f64> = (0..m)
        .map(|i| (i as f64 + 1.0 - rng.gen::<f64>()) * width)
        .collect();
    let sign = |rng: &mut Rng| if rng.gen::<bool>() { 1i8 } else { -1 };
    let mut colors = vec![0i8; m];
    colors[0] = sign(rng);
    colors[m - 1] = sign(rng);
    for pair in 0..n - 1 {
        let y = sign(rng);
        colors[2 * pair + 1] = y;
        colors[2 * pair + 2] = -y;
    }
    let points = PointSet::new(1, coords);
    let colors = ColorVector { colors };
    let h = m.trailing_zeros();
    let mut prefix = DiscrepancyVector::new(IndexSpace::Prefixes { h });
    if m.is_power_of_two() {
        for j in 1..=n {
            let ell = (2 * j - 1) as u64;
            let corner = Corner::from_grid(&[ell], h);
            prefix
                .values
                .insert(ell as u128, coloring_disc(&points, &colors, &corner));
        }
    } else {
        for j in 1..=n {
            let corner = Corner::new(vec![(2 * j - 1) as f64 * width], h);
            prefix.values.insert(
                (2 * j - 1) as u128,
                coloring_disc(&points, &colors, &corner),
            );
        }
    }
    Ok(PairedConstruction {
        points,
        colors,
        prefix,
    })
}

/// Points `z^1 = (1, 1/n)` and `z^i = (x_i, i/n)` with `x_i` uniform in
/// `(0, 1 - 1/n]`.
pub fn staircase_layout(n: usize, rng: &mut Rng) -> PointSet {
    let nf = n as f64;
    let mut coords = vec![1.0, 1.0 / nf];
    for i in 2..=n {
        coords.push((1.0 - rng.gen::<f64>()) * (1.0 - 1.0 / nf));
        coords.push(i as f64 / nf);
    }
    PointSet::new(2, coords)
}

/// `Σ_i (disc(C_{i,1}) - disc(C_{i,0}))` with `C_{i,0} = (0, 1-1/n] ×
/// (0, i/n]` and `C_{i,1} = (0,1] × (0, i/n]`.
pub fn staircase_corner_sum(points: &PointSet, coloring: &ColorVector) -> Result<i64> {
    let n = points.len();
    let nf = n as f64;
    if points.d != 2 || n < 2 || coloring.len() != n {
        return Err(Error::MalformedLayout(
            "expected n ≥ 2 planar points with one color each".into(),
        ));
    }
    let first = points.point(0);
    if first[0] != 1.0 || (first[1] - 1.0 / nf).abs() > 1e-12 {
        return Err(Error::MalformedLayout(
            "first point must be (1, 1/n)".into(),
        ));
    }
    for i in 1..n {
        let p = points.point(i);
        if !(p[0] > 0.0 && p[0] <= 1.0 - 1.0 / nf) || (p[1] - (i + 1) as f64 / nf).abs() > 1e-12 {
            return Err(Error::MalformedLayout(format!(
                "point {} is {:?}",
                i + 1,
                p
            )));
        }
    }
    let mut total = 0;
    for i in 1..=n {
        let y = i as f64 / nf;
        let c0 = Corner::new(vec![1.0 - 1.0 / nf, y], 0);
        let c1 = Corner::new(vec![1.0, y], 0);
        total += coloring_disc(points, coloring, &c1) - coloring_disc(points, coloring, &c0);
    }
    Ok(total)
}

/// The same sum for arbitrary points: the pivot is the point with the
/// largest first coordinate, the corners are cut at the pivot's second
/// coordinate and at every higher one, and `C_{·,0}` stops at the second
/// largest first coordinate.
pub fn pivot_corner_sum(points: &PointSet, coloring: &ColorVector) -> Result<i64> {
    let n = points.len();
    if points.d != 2 || n < 2 || coloring.len() != n {
        return Err(Error::MalformedLayout(
            "expected n ≥ 2 planar points with one color each".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points.point(b)[0].total_cmp(&points.point(a)[0]));
    let pivot = points.point(order[0]);
    let runner_up = points.point(order[1])[0];
    let mut total = 0;
    for q in points.iter().filter(|q| q[1] >= pivot[1]) {
        let c0 = Corner::new(vec![runner_up, q[1]], 0);
        let c1 = Corner::new(vec![1.0, q[1]], 0);
        total += coloring_disc(points, coloring, &c1) - coloring_disc(points, coloring, &c0);
    }
    Ok(total)
}

/// `region_id,level_t,disc_value` rows.
pub fn disc_csv(rows: &[(u128, usize, f64)]) -> String {
    let mut s = String::from("region_id,level_t,disc_value\n");
    for (id, t, v) in rows {
        writeln!(s, "{id},{t},{v:?}").expect("string write");
    }
    s
}

pub fn parse_disc_csv(text: &str) -> Result<Vec<(u128, usize, f64)>> {
    parse_rows(text, "region_id,level_t,disc_value", |f| {
        Ok((parse_field(f[0])?, parse_field(f[1])?, parse_field(f[2])?))
    })
}

/// `direction_id,scale,mgf_estimate` rows; the estimate is the log of the
/// empirical moment generating function.
pub fn mgf_csv(estimate: &SubgaussianEstimate) -> String {
    let mut s = String::from("direction_id,scale,mgf_estimate\n");
    for (id, scale, v) in &estimate.records {
        writeln!(s, "{id},{scale:?},{v:?}").expect("string write");
    }
    s
}

pub fn parse_mgf_csv(text: &str) -> Result<Vec<(usize, f64, f64)>> {
    parse_rows(text, "direction_id,scale,mgf_estimate", |f| {
        Ok((parse_field(f[0])?, parse_field(f[1])?, parse_field(f[2])?))
    })
}

fn parse_field<T: std::str::FromStr>(s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.trim()
        .parse()
        .map_err(|e: T::Err| Error::Parse(format!("{s:?}: {e}")))
}

fn parse_rows<R>(text: &str, header: &str, row: impl Fn(&[&str]) -> Result<R>) -> Result<Vec<R>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(header) {
        return Err(Error::Parse(format!("expected header {header}")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let fields: Vec<&str> = l.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Parse(format!("expected 3 fields in {l:?}")));
            }
            row(&fields)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balancing::empirical_subgaussian_constant;
    use crate::dyadic::{enumerate_dyadic, Openness};
    use crate::rng::substream;
    use crate::transference::{subg_transference, TransferenceConfig};

    fn pts1(xs: &[f64]) -> PointSet {
        PointSet::new(1, xs.to_vec())
    }

    fn brute_star_1d(xs: &[f64]) -> f64 {
        // Dense scan with left and right limits at every point.
        let n = xs.len() as f64;
        let mut best = 0.0f64;
        let mut zs: Vec<f64> = xs.to_vec();
        zs.push(1.0);
        for z in zs {
            let le = xs.iter().filter(|&&x| x > 0.0 && x <= z).count() as f64;
            let lt = xs.iter().filter(|&&x| x > 0.0 && x < z).count() as f64;
            best = best.max((n * z - le).abs()).max((n * z - lt).abs());
        }
        best
    }

    #[test]
    fn comb_disc_examples() {
        let parent = pts1(&[0.1, 0.2, 0.3, 0.9]);
        let region = Corner::new(vec![0.5], 1);
        assert_eq!(comb_disc(&parent, &parent, &region).unwrap(), -3);
        assert_eq!(comb_disc(&parent, &pts1(&[0.2, 0.9]), &region).unwrap(), 1);
        assert_eq!(
            comb_disc(&parent, &pts1(&[0.2, 0.9]), &FullCube).unwrap(),
            0
        );
        assert!(matches!(
            comb_disc(&parent, &pts1(&[0.4]), &region),
            Err(Error::NotSubset)
        ));
        assert!(matches!(
            comb_disc(&parent, &pts1(&[0.2, 0.2]), &region),
            Err(Error::NotSubset)
        ));
    }

    #[test]
    fn continuous_disc_examples() {
        let a = pts1(&[0.25, 0.75]);
        assert_eq!(continuous_disc(&a, &Corner::new(vec![1.0], 1)), 0.0);
        assert_eq!(continuous_disc(&a, &Corner::new(vec![0.0], 1)), 0.0);
        assert_eq!(continuous_disc(&a, &Corner::new(vec![0.5], 1)), 0.0);
    }

    #[test]
    fn star_disc_1d_examples() {
        for n in [1usize, 4, 16, 100] {
            let mid: Vec<f64> = (1..=n)
                .map(|i| (2 * i - 1) as f64 / (2 * n) as f64)
                .collect();
            assert!((star_disc(&pts1(&mid), StarMode::Exact).unwrap() - 0.5).abs() < 1e-12);
        }
        let vdc = [0.5, 0.25, 0.75, 0.125, 0.625, 0.375, 0.875, 0.0625];
        let v = star_disc(&pts1(&vdc), StarMode::Exact).unwrap();
        assert!((v - brute_star_1d(&vdc)).abs() < 1e-12);
        assert!(v <= 3.0);
        let mut rng = substream(1, &[]);
        for _ in 0..50 {
            let xs: Vec<f64> = (0..30).map(|_| rng.gen::<f64>()).collect();
            assert!(
                (star_disc(&pts1(&xs), StarMode::Exact).unwrap() - brute_star_1d(&xs)).abs() < 1e-9
            );
        }
        let with_ties = [0.5, 0.5, 0.5, 0.0];
        assert!(
            (star_disc(&pts1(&with_ties), StarMode::Exact).unwrap() - brute_star_1d(&with_ties))
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn star_disc_iid_is_order_sqrt_n() {
        let n = 1024;
        let mut values: Vec<f64> = (0..100)
            .map(|s| {
                let mut rng = substream(s, &[7]);
                let xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
                star_disc(&pts1(&xs), StarMode::Exact).unwrap()
            })
            .collect();
        let root = (n as f64).sqrt();
        assert!(values.iter().all(|&v| v >= 0.05 * root && v <= 3.0 * root));
        values.sort_by(f64::total_cmp);
        let median = values[50];
        assert!(
            median > 0.5 * root && median < 1.5 * root,
            "median {median}"
        );
    }

    #[test]
    fn exact_star_rejects_2d() {
        let a = PointSet::new(2, vec![0.1, 0.2]);
        assert!(matches!(
            star_disc(&a, StarMode::Exact),
            Err(Error::ExactStarUnsupported(2))
        ));
    }

    #[test]
    fn grid_star_2d_matches_brute_force() {
        let mut rng = substream(3, &[]);
        for _ in 0..10 {
            let a = PointSet::new(2, (0..40).map(|_| rng.gen::<f64>()).collect());
            let fast = star_disc(&a, StarMode::Grid { h: 3 }).unwrap();
            let cx = candidates(&a, 0, 3);
            let cy = candidates(&a, 1, 3);
            let n = a.len() as f64;
            let mut slow = 0.0f64;
            for &x in &cx {
                for &y in &cy {
                    let le = a
                        .iter()
                        .filter(|p| p[0] <= x && p[1] <= y && p[0] > 0.0 && p[1] > 0.0)
                        .count() as f64;
                    let lt = a
                        .iter()
                        .filter(|p| p[0] < x && p[1] < y && p[0] > 0.0 && p[1] > 0.0)
                        .count() as f64;
                    slow = slow.max((n * x * y - le).abs()).max((n * x * y - lt).abs());
                }
            }
            assert!((fast - slow).abs() < 1e-9);
            // The 1-d grid estimate never exceeds the exact value.
            let line = PointSet::new(1, a.coords.iter().step_by(2).copied().collect());
            assert!(
                star_disc(&line, StarMode::Grid { h: 4 }).unwrap()
                    <= star_disc(&line, StarMode::Exact).unwrap() + 1e-12
            );
        }
        let cube = PointSet::new(3, (0..24).map(|_| rng.gen::<f64>()).collect());
        assert!(star_disc(&cube, StarMode::Grid { h: 2 }).unwrap() > 0.0);
    }

    #[test]
    fn corner_values_match_direct_counts() {
        let config = TransferenceConfig::new(8, 2, 11)
            .unwrap()
            .with_recording(true);
        let tree = subg_transference(&config).unwrap();
        let records = tree.disc_records.as_ref().unwrap();
        let h = config.h;
        let mut rng = substream(5, &[]);
        for (t, level) in records.iter().enumerate() {
            for (&i, record) in level {
                let parent = tree.set_points_shifted(t, i).unwrap();
                let child = tree.set_points_shifted(t + 1, 2 * i).unwrap();
                for _ in 0..10 {
                    let corner = Corner::from_grid(
                        &[rng.gen_range(0..=1u64 << h), rng.gen_range(0..=1u64 << h)],
                        h,
                    );
                    let direct = comb_disc(&parent, &child, &corner).unwrap();
                    assert_eq!(record.corner_value(&corner).unwrap(), direct);
                    let inside = count_in(&parent, &corner) as i64;
                    assert_eq!(direct.rem_euclid(2), inside.rem_euclid(2));
                }
                for (&key, &v) in &record.values {
                    let b = BoxIndex::new(h, 2).unwrap().decode(key);
                    assert_eq!(
                        v.rem_euclid(2),
                        (count_in(&parent, &b) as i64).rem_euclid(2)
                    );
                }
            }
        }
    }

    #[test]
    fn telescoping_identity() {
        for d in [1usize, 2] {
            let config = TransferenceConfig::new(8, d, 2)
                .unwrap()
                .with_recording(true);
            let tree = subg_transference(&config).unwrap();
            let mut rng = substream(9, &[d as u64]);
            let mut corners: Vec<Corner> = (0..50)
                .map(|_| {
                    Corner::from_grid(
                        &(0..d)
                            .map(|_| rng.gen_range(0..=1u64 << config.h))
                            .collect::<Vec<_>>(),
                        config.h,
                    )
                })
                .collect();
            corners.push(Corner::new(vec![1.0; d], config.h));
            assert!(telescoping_check(&tree, &corners).unwrap() <= 1e-12);
            assert_eq!(telescoping_check(&tree, &corners[50..]).unwrap(), 0.0);
        }
        let bare = subg_transference(&TransferenceConfig::new(4, 1, 0).unwrap()).unwrap();
        assert!(matches!(
            telescoping_check(&bare, &[]),
            Err(Error::MissingDiscRecords)
        ));
    }

    #[test]
    fn paired_construction_prefixes_are_correlated() {
        let n = 64;
        let mut samples = Vec::new();
        let mut dyadic_samples = Vec::new();
        for seed in 0..400 {
            let mut rng = substream(seed, &[]);
            let c = paired_prefix_coloring(n, &mut rng).unwrap();
            assert_eq!(c.points.len(), 2 * n);
            let first = c.colors.colors[0] as i64;
            assert!(c.prefix.values.values().all(|&v| v == first));
            assert_eq!(c.prefix.values.len(), n);
            let h = (2 * n).trailing_zeros();
            let mut dyadic = Vec::new();
            for iv in enumerate_dyadic(h, Openness::LeftOpen) {
                let b = DyadicBox { dims: vec![iv] };
                let v = coloring_disc(&c.points, &c.colors, &b);
                let touches_end = iv.index == 0 || iv.index == (1u64 << iv.level) - 1;
                if iv.level < h && !touches_end {
                    // Pairs straddle boundaries of coarser intervals.
                    assert!(v.abs() <= 2 && v % 2 == 0);
                }
                dyadic.push(v as f64);
            }
            dyadic_samples.push(dyadic);
            samples.push(
                c.prefix
                    .values
                    .values()
                    .map(|&v| v as f64)
                    .collect::<Vec<f64>>(),
            );
        }
        let mut rng = substream(0, &[1]);
        let prefix = empirical_subgaussian_constant(&samples, 0, &mut rng).unwrap();
        assert!(prefix.sigma2 >= n as f64 / 4.0, "{}", prefix.sigma2);
        assert!(prefix.sigma2 >= 10.0);
        let dyadic = empirical_subgaussian_constant(&dyadic_samples, 20, &mut rng).unwrap();
        assert!(dyadic.sigma2 <= 8.0, "{}", dyadic.sigma2);
    }

    #[test]
    fn planar_layout_sum_is_n() {
        let n = 8;
        for seed in 0..50 {
            let mut rng = substream(seed, &[]);
            let pts = staircase_layout(n, &mut rng);
            let colors: Vec<i8> = (0..n)
                .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
                .collect();
            let mut coloring = ColorVector { colors };
            let v = staircase_corner_sum(&pts, &coloring).unwrap();
            assert_eq!(v, n as i64 * coloring.colors[0] as i64);
            coloring.colors[0] *= -1;
            assert_eq!(staircase_corner_sum(&pts, &coloring).unwrap(), -v);
        }
        let mut bad = staircase_layout(n, &mut substream(0, &[]));
        bad.coords[0] = 0.5;
        let colors = ColorVector { colors: vec![1; n] };
        assert!(matches!(
            staircase_corner_sum(&bad, &colors),
            Err(Error::MalformedLayout(_))
        ));
    }

    #[test]
    fn pivot_sum_on_uniform_points() {
        // |sum| = 1 + #{points above the pivot}; for n = 8 the probability
        // that this reaches n/4 = 2 is 1 - 1/n.
        let n = 8;
        let runs = 2000;
        let mut hits = 0;
        for seed in 0..runs {
            let mut rng = substream(seed, &[2]);
            let pts = PointSet::new(2, (0..2 * n).map(|_| 1.0 - rng.gen::<f64>()).collect());
            let colors: Vec<i8> = (0..n)
                .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
                .collect();
            let coloring = ColorVector { colors };
            let v = pivot_corner_sum(&pts, &coloring).unwrap();
            let pivot = (0..n)
                .max_by(|&a, &b| pts.point(a)[0].total_cmp(&pts.point(b)[0]))
                .unwrap();
            let above = pts.iter().filter(|q| q[1] >= pts.point(pivot)[1]).count() as i64;
            assert_eq!(v, above * coloring.colors[pivot] as i64);
            hits += (v.abs() >= n as i64 / 4) as usize;
        }
        let p = 1.0 - 1.0 / n as f64;
        let se = (p * (1.0 - p) / runs as f64).sqrt();
        assert!((hits as f64 / runs as f64 - p).abs() <= 4.0 * se);
    }

    #[test]
    fn csv_round_trips() {
        let rows = vec![(3u128, 0usize, -2.0), (1u128 << 100, 5, 0.1 + 0.2)];
        assert_eq!(parse_disc_csv(&disc_csv(&rows)).unwrap(), rows);
        let est = SubgaussianEstimate {
            sigma2: 1.0,
            records: vec![(0, 0.25, 1e-3), (2, 2.0, 0.7)],
            skipped: vec![],
        };
        assert_eq!(parse_mgf_csv(&mgf_csv(&est)).unwrap(), est.records);
        assert!(parse_mgf_csv("bad\n").is_err());
    }
}
