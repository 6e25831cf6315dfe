use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn capsim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capsim"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CAPSIM_OUT_DIR")
        .output()
        .unwrap()
}

fn scenario_path() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios/health_inequity").display().to_string()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn validate_bundled_and_broken() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = capsim(&["validate", &scenario_path()], tmp.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    let broken = capsim::bundled::HEALTH_INEQUITY_TOML.replace("pain_relief = 1.0", "warmth = 1.0").replace("unit_cost = 50", "unit_cost = -5");
    fs::write(tmp.path().join("broken.toml"), broken).unwrap();
    let bad = capsim(&["validate", "broken.toml"], tmp.path());
    assert_eq!(bad.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&bad.stderr);
    assert!(stderr.contains("warmth") && stderr.contains("2 violation"), "{stderr}");

    let structured = capsim(&["validate", "broken.toml", "--format", "structured"], tmp.path());
    assert_eq!(structured.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&structured.stdout).unwrap();
    assert_eq!(v["valid"], false);
    assert_eq!(v["violations"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_scenario_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(capsim(&["run", "no/such/file"], tmp.path()).status.code(), Some(2));
}

#[test]
fn unknown_norm_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = capsim(&["run", "health_inequity", "--disable-norm", "curfew"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("curfew"));
}

#[test]
fn run_matches_non_registered_share_and_reform_compares() {
    let tmp = tempfile::tempdir().unwrap();
    let base = capsim(&["run", &scenario_path(), "--seed", "42", "--out-dir", "base"], tmp.path());
    assert_eq!(base.status.code(), Some(0), "{}", String::from_utf8_lossy(&base.stderr));
    let reform =
        capsim(&["run", &scenario_path(), "--seed", "42", "--out-dir", "reform", "--disable-norm", "registration_gate"], tmp.path());
    assert_eq!(reform.status.code(), Some(0));

    let report = json(&tmp.path().join("base/run_report.json"));
    let agents = report["initial_agents"].as_array().unwrap();
    let non = agents.iter().filter(|a| a["state"]["registration"] == "non_registered").count();
    let share = non as f64 / agents.len() as f64;

    let m = json(&tmp.path().join("base/metrics.json"));
    assert_eq!(m["capabilities"]["bodily_health"]["deprivation_ratio"].as_f64(), Some(share));
    let r = json(&tmp.path().join("reform/metrics.json"));
    assert_eq!(r["capabilities"]["bodily_health"]["deprivation_ratio"].as_f64(), Some(0.0));

    let cmp = capsim(&["compare", "base/metrics.json", "reform/metrics.json", "--out", "delta.json"], tmp.path());
    assert_eq!(cmp.status.code(), Some(0));
    let d = json(&tmp.path().join("delta.json"));
    assert_eq!(d["capabilities"]["bodily_health"]["deprivation_ratio"].as_f64(), Some(-share));
    for f in ["trajectories.csv", "series.csv"] {
        assert!(tmp.path().join("base").join(f).is_file());
    }
}

#[test]
fn outputs_are_byte_identical_across_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let mut stdouts = Vec::new();
    for dir in ["a", "b"] {
        let cwd = tmp.path().join(dir);
        fs::create_dir_all(&cwd).unwrap();
        let out = capsim(&["run", "health_inequity", "--seed", "7", "--out-dir", "run", "--format", "structured"], &cwd);
        assert_eq!(out.status.code(), Some(0));
        stdouts.push(out.stdout);
        let s = capsim(&["sample", "health_inequity", "--n", "50", "--seed", "7", "--out", "pop.csv"], &cwd);
        assert_eq!(s.status.code(), Some(0));
    }
    assert_eq!(stdouts[0], stdouts[1]);
    for f in ["run/run_report.json", "run/metrics.json", "run/trajectories.csv", "run/series.csv", "pop.csv"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
    // Structured stdout is the metrics document itself.
    assert_eq!(stdouts[0], fs::read(tmp.path().join("a/run/metrics.json")).unwrap());
}

#[test]
fn output_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_capsim"))
        .args(["run", "health_inequity", "--horizon", "1"])
        .current_dir(tmp.path())
        .env("CAPSIM_OUT_DIR", "from_env")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(tmp.path().join("from_env/metrics.json").is_file());
}

#[test]
fn inspect_dumps_the_reference_mdp() {
    let tmp = tempfile::tempdir().unwrap();
    let out = capsim(&["inspect", "health_inequity", "--registration", "non_registered"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let dump: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(dump["states"].as_array().unwrap().len(), 2);
    let gated = dump["mask"].as_array().unwrap().iter().filter(|m| m["possible"] == false).count();
    assert_eq!(gated, 2);
}

#[tokio::test]
async fn service_and_cli_agree() {
    use axum::body::Body;
    use axum::http::Request;
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    let tmp = tempfile::tempdir().unwrap();
    let out = capsim(
        &["run", "health_inequity", "--seed", "21", "--disable-norm", "registration_gate", "--aggregation", "weighted", "--weight", "0.7"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let from_cli = json(&tmp.path().join("out/metrics.json"));

    let app = capsim_service::router(capsim_service::AppState::new(Default::default()));
    let body = serde_json::json!({
        "scenario_id": "health_inequity",
        "seed": 21,
        "norm_overrides": { "registration_gate": "disabled" },
        "aggregation": { "mode": "weighted", "weight": 0.7 }
    });
    let send = |req: Request<Body>| {
        let app = app.clone();
        async move {
            let resp = app.oneshot(req).await.unwrap();
            let status = resp.status();
            let bytes = resp.into_body().collect().await.unwrap().to_bytes();
            (status, serde_json::from_slice::<Value>(&bytes).unwrap())
        }
    };
    let post = Request::post("/runs").header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
    let (_, created) = send(post).await;
    let id = created["id"].as_str().unwrap().to_string();
    loop {
        let (status, v) = send(Request::get(format!("/runs/{id}/metrics")).body(Body::empty()).unwrap()).await;
        if status == 200 {
            assert_eq!(v, from_cli);
            break;
        }
        assert_eq!(status, 409, "{v}");
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }
}
