use serde_json::Value;
use subgqmc_web::{error_comparison, leaf_vs_iid, structured_matrix};

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn points_reply() {
    let v = parse(leaf_vs_iid(64, 1));
    assert_eq!(v["leaf"].as_array().unwrap().len(), 64);
    assert_eq!(v["iid"].as_array().unwrap().len(), 64);
    assert!(v["star_leaf"].as_f64().unwrap() < v["star_iid"].as_f64().unwrap());
    assert_eq!(leaf_vs_iid(64, 1), leaf_vs_iid(64, 1));
}

#[test]
fn errors_reply() {
    let v = parse(error_comparison(4, 64, 20, 3));
    assert!((v["sigma"].as_f64().unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    assert!(v["transference_rmse"].as_f64().unwrap() < v["mc_rmse"].as_f64().unwrap());
}

#[test]
fn matrix_reply() {
    let v = parse(structured_matrix(3));
    let dense = v["dense"].as_array().unwrap();
    assert_eq!(dense.len(), 8);
    assert_eq!(dense[0].as_array().unwrap().len(), 14);
    assert_eq!(v["runs"]["columns"].as_array().unwrap().len(), 14);
}

#[test]
fn bad_input_is_an_error_object() {
    for s in [
        leaf_vs_iid(48, 0),
        leaf_vs_iid(1024, 0),
        error_comparison(0, 64, 5, 0),
        structured_matrix(0),
    ] {
        assert!(parse(s)["error"].is_string());
    }
}
