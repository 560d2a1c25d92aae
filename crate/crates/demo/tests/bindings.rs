use seqscreen_demo::{compare_json, dass_json, dome_json};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn dome_matches_hand_example() {
    // q = (2, 0), r^2 = 2.05, n = (0.8, -0.6), c = 0.3
    let v = parse(dome_json(2.0, 0.0, 2.05f64.sqrt(), 0.8, -0.6, 0.3, 1.0, 0.0).unwrap());
    let chord = v["chord"].as_array().unwrap();
    let len = {
        let p = |i: usize, j: usize| chord[i][j].as_f64().unwrap();
        ((p(0, 0) - p(1, 0)).powi(2) + (p(0, 1) - p(1, 1)).powi(2)).sqrt()
    };
    // 2 sqrt(2.05 - 1.3^2) = 1.2
    assert!((len - 1.2).abs() < 1e-12);
    assert!((v["diameter"].as_f64().unwrap() - 1.2).abs() < 1e-12);

    // every outline point lies on the sphere and inside the half-space
    for pt in v["outline"].as_array().unwrap() {
        let (x, y) = (pt[0].as_f64().unwrap(), pt[1].as_f64().unwrap());
        assert!((((x - 2.0).powi(2) + y * y).sqrt() - 2.05f64.sqrt()).abs() < 1e-9);
        assert!(0.8 * x - 0.6 * y <= 0.3 + 1e-9);
    }
}

#[test]
fn uncut_ball_is_a_full_circle() {
    let v = parse(dome_json(0.0, 0.0, 1.0, 1.0, 0.0, 5.0, 0.0, 1.0).unwrap());
    assert!(v["chord"].is_null());
    assert!((v["diameter"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!((v["mu"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["kept"].as_bool(), Some(true));
}

#[test]
fn empty_dome_is_an_error() {
    assert!(dome_json(0.0, 0.0, 1.0, 1.0, 0.0, -2.0, 1.0, 0.0).is_err());
}

#[test]
fn dass_run_reaches_target() {
    let v = parse(dass_json(20, 100, 11, 0.1, 0.4).unwrap());
    let steps = v["steps"].as_array().unwrap();
    assert_eq!(steps.len() as u64, v["n"].as_u64().unwrap());
    let last = steps.last().unwrap()["lambda_ratio"].as_f64().unwrap();
    assert!((last - 0.1).abs() < 1e-12);
    assert!(dass_json(20, 100, 11, 1.5, 0.4).is_err());
    assert!(dass_json(4000, 4000, 1, 0.1, 0.4).is_err());
}

#[test]
fn compare_uses_equal_lengths() {
    let v = parse(compare_json(20, 100, 3, 0.2, 0.4).unwrap());
    assert_eq!(v["dass"]["n"], v["geometric"]["n"]);
    assert!(v["geometric"]["label"].as_str().unwrap().starts_with("geometric-dome"));
}
