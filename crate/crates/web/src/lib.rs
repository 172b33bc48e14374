//! Browser bindings: draw a transference leaf next to an i.i.d. sample,
//! compare integration errors on `sin(2πkx)`, and inspect the structured
//! prefix decomposition matrix.
//!
//! Every export returns a JSON string; failures are reported as
//! `{"error": "..."}` so the page never has to catch exceptions.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use subgqmc::dyadic::build_p_bar;
use subgqmc::harness::{estimator_points, star_discrepancy, Estimator};
use subgqmc::transference::{PairingOrder, PointSet, WalkThreshold};
use subgqmc::variation::{err, sigma, sigma_so_fourier};
use subgqmc::FourierFunction;

/// Largest `n` the page may request; a leaf costs `O(n²)` work on one thread.
pub const MAX_N: usize = 256;
pub const MAX_TRIALS: usize = 200;
pub const MAX_H: u32 = 7;

#[derive(Serialize)]
struct ErrorReply {
    error: String,
}

fn reply<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| reply::<()>(Err(e.to_string()))),
        Err(error) => {
            serde_json::to_string(&ErrorReply { error }).expect("plain string serializes")
        }
    }
}

fn check_n(n: usize) -> Result<(), String> {
    if n < 2 || n > MAX_N || !n.is_power_of_two() {
        return Err(format!("n must be a power of two between 2 and {MAX_N}"));
    }
    Ok(())
}

fn points(e: Estimator, n: usize, d: usize, seed: u32, trial: usize) -> Result<PointSet, String> {
    estimator_points(
        e,
        n,
        d,
        seed as u64,
        trial,
        WalkThreshold::default(),
        PairingOrder::default(),
    )
    .map_err(|e| e.to_string())
}

#[derive(Serialize)]
pub struct PointsReply {
    pub n: usize,
    pub leaf: Vec<[f64; 2]>,
    pub iid: Vec<[f64; 2]>,
    pub star_leaf: f64,
    pub star_iid: f64,
}

fn pairs(p: &PointSet) -> Vec<[f64; 2]> {
    p.iter().map(|q| [q[0], q[1]]).collect()
}

pub fn compare_points(n: usize, seed: u32) -> Result<PointsReply, String> {
    check_n(n)?;
    let leaf = points(Estimator::Transference, n, 2, seed, 0)?;
    let iid = points(Estimator::Mc, n, 2, seed, 0)?;
    Ok(PointsReply {
        n,
        star_leaf: star_discrepancy(&leaf).map_err(|e| e.to_string())?,
        star_iid: star_discrepancy(&iid).map_err(|e| e.to_string())?,
        leaf: pairs(&leaf),
        iid: pairs(&iid),
    })
}

/// One transference leaf and one i.i.d. set of `n` points in the unit
/// square, with their star discrepancies.
#[wasm_bindgen]
pub fn leaf_vs_iid(n: usize, seed: u32) -> String {
    reply(compare_points(n, seed))
}

#[derive(Serialize)]
pub struct ErrorsReply {
    pub k: i64,
    pub n: usize,
    pub trials: usize,
    pub sigma: f64,
    pub sigma_so: f64,
    pub mc_rmse: f64,
    pub transference_rmse: f64,
    /// `σ/√n`.
    pub mc_prediction: f64,
}

pub fn compare_errors(k: i64, n: usize, trials: usize, seed: u32) -> Result<ErrorsReply, String> {
    check_n(n)?;
    if k == 0 || trials == 0 || trials > MAX_TRIALS {
        return Err(format!("need k ≠ 0 and 1 ≤ trials ≤ {MAX_TRIALS}"));
    }
    let f = FourierFunction::sine(k, 1.0);
    let rmse = |e: Estimator| -> Result<f64, String> {
        let mut sq = 0.0;
        for t in 0..trials {
            let x = err(&points(e, n, 1, seed, t)?, &f).map_err(|e| e.to_string())?;
            sq += x * x;
        }
        Ok((sq / trials as f64).sqrt())
    };
    Ok(ErrorsReply {
        k,
        n,
        trials,
        sigma: sigma(&f),
        sigma_so: sigma_so_fourier(&f),
        mc_rmse: rmse(Estimator::Mc)?,
        transference_rmse: rmse(Estimator::Transference)?,
        mc_prediction: sigma(&f) / (n as f64).sqrt(),
    })
}

/// Root-mean-square error of Monte Carlo and of transference leaves for
/// `f = sin(2πkx)`.
#[wasm_bindgen]
pub fn error_comparison(k: i32, n: usize, trials: usize, seed: u32) -> String {
    reply(compare_errors(k as i64, n, trials, seed))
}

#[derive(Serialize)]
pub struct MatrixReply {
    pub h: u32,
    /// Row-major 0/1 entries, `2^h` rows.
    pub dense: Vec<Vec<u8>>,
    /// The run-table serialization.
    pub runs: serde_json::Value,
}

pub fn matrix(h: u32) -> Result<MatrixReply, String> {
    if h == 0 || h > MAX_H {
        return Err(format!("h must be between 1 and {MAX_H}"));
    }
    let m = build_p_bar(h);
    let runs = serde_json::from_str(&m.to_json()).map_err(|e| e.to_string())?;
    Ok(MatrixReply {
        h,
        dense: m.to_dense(),
        runs,
    })
}

/// The structured prefix decomposition matrix at resolution `h`.
#[wasm_bindgen]
pub fn structured_matrix(h: u32) -> String {
    reply(matrix(h))
}
