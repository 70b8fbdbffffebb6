use diamond_web::{scatter_json, schedule_json, trajectory_pair_json, Knobs};
use serde_json::Value;

fn flow() -> Knobs {
    Knobs {
        diffusion: false,
        steps: 10,
        lambda_start: 1.0,
        lambda_end: 0.04,
        power: 2.0,
        tau_start: 0,
        tau_end: 0,
        normalize: true,
    }
}

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.unwrap()).unwrap()
}

#[test]
fn schedule_endpoints_and_window() {
    let k = Knobs {
        steps: 30,
        lambda_start: 20.0,
        lambda_end: 1.0,
        power: 4.0,
        tau_start: 5,
        tau_end: 5,
        ..flow()
    };
    let v = parse(schedule_json(&k));
    let lambda: Vec<f64> = serde_json::from_value(v["lambda"].clone()).unwrap();
    let corrected: Vec<bool> = serde_json::from_value(v["corrected"].clone()).unwrap();
    assert_eq!((lambda[0], lambda[29]), (20.0, 1.0));
    assert!(lambda.windows(2).all(|w| w[1] <= w[0]));
    assert!(corrected.iter().enumerate().all(|(i, c)| *c == (5..25).contains(&i)));
}

#[test]
fn pair_shares_the_start_and_has_one_point_per_knot() {
    let v = parse(trajectory_pair_json(&flow(), 3));
    for side in ["baseline", "guided"] {
        assert_eq!(v[side]["points"].as_array().unwrap().len(), 11);
        assert_eq!(v[side]["delta_norm"].as_array().unwrap().len(), 10);
    }
    assert_eq!(v["baseline"]["points"][0], v["guided"]["points"][0]);
    assert!(v["baseline"]["delta_norm"].as_array().unwrap().iter().all(|d| d == 0.0));
}

#[test]
fn scatter_reports_lower_maf_with_guidance() {
    for diffusion in [false, true] {
        let k = if diffusion {
            Knobs {
                diffusion,
                steps: 30,
                lambda_start: 4.0,
                lambda_end: 0.16,
                power: 4.0,
                tau_end: 5,
                ..flow()
            }
        } else {
            flow()
        };
        let v = parse(scatter_json(&k, 0, 60));
        assert_eq!(v["guided"].as_array().unwrap().len(), 60);
        let (b, g) = (v["maf_baseline"].as_f64().unwrap(), v["maf_guided"].as_f64().unwrap());
        assert!(b > 20.0 && g < b / 2.0, "diffusion={diffusion}: {b} -> {g}");
    }
}

#[test]
fn zero_lambda_leaves_endpoints_unchanged() {
    let k = Knobs {
        lambda_start: 0.0,
        lambda_end: 0.0,
        ..flow()
    };
    let v = parse(scatter_json(&k, 10, 20));
    assert_eq!(v["baseline"], v["guided"]);
}

#[test]
fn invalid_knobs_are_rejected() {
    let bad = Knobs {
        lambda_start: 0.5,
        lambda_end: 1.0,
        ..flow()
    };
    assert!(schedule_json(&bad).is_err());
    assert!(trajectory_pair_json(&Knobs { steps: 0, ..flow() }, 0).is_err());
    assert!(scatter_json(&flow(), 0, 0).is_err());
}
