use serde_json::Value;

use sdnas_web::{dataset_json, search_json, vote_json};

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn dataset_has_points_and_labels() {
    let v = parse(&dataset_json(r#"{"kind":"spirals","n":90,"noise":0.1,"classes":3,"seed":4}"#).unwrap());
    assert_eq!(v["points"].as_array().unwrap().len(), 90);
    assert_eq!(v["labels"].as_array().unwrap().len(), 90);
    assert_eq!(v["classes"], 3);
}

#[test]
fn dataset_rejects_unknown_kind_and_huge_n() {
    assert!(dataset_json(r#"{"kind":"rings","n":10,"noise":0.1}"#).is_err());
    assert!(dataset_json(r#"{"kind":"moons","n":50000,"noise":0.1}"#).is_err());
}

#[test]
fn vote_averages_normalized_teachers() {
    let v = parse(&vote_json(r#"{"teachers":[[1,0],[1,1]],"student":[3,1]}"#).unwrap());
    let vote: Vec<f64> = serde_json::from_value(v["vote"].clone()).unwrap();
    assert!((vote[0] - 0.75).abs() < 1e-15 && (vote[1] - 0.25).abs() < 1e-15);
    // the student equals the vote, so every metric is zero
    for m in v["metrics"].as_array().unwrap() {
        assert!(m[1].as_f64().unwrap().abs() < 1e-12, "{m}");
    }
}

#[test]
fn vote_kl_matches_direct_sum() {
    let v = parse(&vote_json(r#"{"teachers":[[0.6,0.4]],"student":[0.9,0.1]}"#).unwrap());
    let kl = v["metrics"][0][1].as_f64().unwrap();
    assert_eq!(v["metrics"][0][0], "KL");
    let direct = 0.9 * (0.9f64 / 0.6).ln() + 0.1 * (0.1f64 / 0.4).ln();
    assert!((kl - direct).abs() < 1e-12);
}

#[test]
fn vote_rejects_mismatched_classes() {
    assert!(vote_json(r#"{"teachers":[[1,0,0]],"student":[1,0]}"#).is_err());
    assert!(vote_json(r#"{"teachers":[[0,0]],"student":[1,0]}"#).is_err());
}

#[test]
fn small_search_returns_drawable_output() {
    let req = r#"{"dataset":{"kind":"moons","n":120,"noise":0.2,"seed":1},
                  "epochs":4,"warmup_epochs":2,"window":2,"lambda":1.0,"seed":2}"#;
    let text = search_json(req).unwrap();
    let v = parse(&text);
    assert_eq!(v["logs"].as_array().unwrap().len(), 4);
    assert_eq!(v["lambda_max"].as_array().unwrap().len(), 4);
    let size = v["grid"]["size"].as_u64().unwrap() as usize;
    assert_eq!(v["grid"]["classes"].as_array().unwrap().len(), size * size);
    assert_eq!(v["edges"].as_array().unwrap().len(), 3);
    assert!(v["genotype"].as_str().unwrap().starts_with("genotype v1"));
    // same request, same answer
    assert_eq!(search_json(req).unwrap(), text);
}

#[test]
fn search_rejects_bad_schedule() {
    let req = r#"{"dataset":{"kind":"moons","n":120,"noise":0.2},
                  "epochs":4,"warmup_epochs":4,"window":2,"lambda":1.0}"#;
    assert!(search_json(req).unwrap_err().contains("warmup_epochs"));
}
