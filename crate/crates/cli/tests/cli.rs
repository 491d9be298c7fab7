use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mssl_core::io::{write_labeled_csv, write_matrix_csv, write_pool_binary};
use mssl_core::ols::alpha_star_ols;
use mssl_core::rng::{standard_normal_matrix, stream};
use mssl_core::{DMatrix, DVector, LabeledSet, UnlabeledPool};
use serde_json::Value;
use tempfile::TempDir;

fn mssl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mssl")).args(args).env_remove("MSSL_SEED").output().unwrap()
}

fn schema() -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/output.schema.json");
    let s: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&s).unwrap()
}

/// Parse stdout, check success and the committed schema.
fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let errors: Vec<String> = schema().iter_errors(&v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "schema errors {errors:?} for {v}");
    assert_eq!(v["schema_version"], 1);
    v
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

struct Files {
    dir: TempDir,
}

impl Files {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn labeled(&self, name: &str, d: &LabeledSet) -> String {
        let p = self.path(name);
        write_labeled_csv(fs::File::create(&p).unwrap(), d).unwrap();
        p.display().to_string()
    }

    fn pool(&self, name: &str, z: &DMatrix<f64>) -> String {
        let p = self.path(name);
        write_matrix_csv(fs::File::create(&p).unwrap(), z).unwrap();
        p.display().to_string()
    }

    fn text(&self, name: &str, body: &str) -> String {
        let p = self.path(name);
        fs::write(&p, body).unwrap();
        p.display().to_string()
    }
}

fn linear_data(seed: u64, n: usize, p: usize, noise: f64) -> LabeledSet {
    let mut r = stream(seed, &[]);
    let x = standard_normal_matrix(n, p, &mut r);
    let e = standard_normal_matrix(n, 1, &mut r);
    let y = &x * DVector::from_element(p, 1.0) + DVector::from_column_slice(e.as_slice()) * noise;
    LabeledSet::new(x, y).unwrap()
}

fn gaussian(seed: u64, m: usize, p: usize) -> DMatrix<f64> {
    standard_normal_matrix(m, p, &mut stream(seed, &[1]))
}

#[test]
fn ols_auto_uses_the_ratio_formula() {
    let f = Files::new();
    let lab = f.labeled("lab.csv", &linear_data(1, 8, 2, 1.0));
    let pool = f.pool("pool.csv", &gaussian(2, 400, 2));
    let v = ok_json(&mssl(&["fit", "--labeled", &lab, "--pool", &pool]));
    assert_eq!(v["command"], "fit");
    assert_eq!(v["alpha"]["source"], "formula");
    let d = &v["diagnostics"];
    let f64_of = |k: &str| d[k].as_f64().unwrap();
    let (expect, _) = alpha_star_ols(f64_of("sigma2_hat"), f64_of("B_hat"), f64_of("v_l"), f64_of("v_u")).unwrap();
    let got = v["alpha"]["value"].as_f64().unwrap();
    assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    let c = &v["coefficients"];
    let (sup, semi, mixed) = (floats(&c["supervised"]), floats(&c["semisupervised"]), floats(&c["mixed"]));
    for j in 0..2 {
        assert!((mixed[j] - ((1.0 - got) * sup[j] + got * semi[j])).abs() < 1e-12);
    }
}

#[test]
fn fixed_zero_is_supervised() {
    let f = Files::new();
    let lab = f.labeled("lab.csv", &linear_data(3, 30, 4, 1.0));
    let pool = f.pool("pool.csv", &gaussian(4, 500, 4));
    for model in ["ols", "glm:identity", "glm"] {
        let v = ok_json(&mssl(&["fit", "--labeled", &lab, "--pool", &pool, "--model", model, "--alpha", "0"]));
        assert_eq!(v["alpha"]["source"], "fixed");
        assert_eq!(floats(&v["coefficients"]["mixed"]), floats(&v["coefficients"]["supervised"]), "{model}");
    }
    let v = ok_json(&mssl(&["fit", "--labeled", &lab, "--pool", &pool, "--alpha", "fixed(1)"]));
    assert_eq!(floats(&v["coefficients"]["mixed"]), floats(&v["coefficients"]["semisupervised"]));
}

#[test]
fn interp_with_isotropic_pool_gives_identical_fits() {
    let (n, p, lambda) = (15, 40, 2.5);
    let f = Files::new();
    let lab = f.labeled("lab.csv", &linear_data(5, n, p, 0.5));
    // rows ±c e_j give ZᵀZ/m = c²/p · I
    let c = (lambda * p as f64).sqrt();
    let mut z = DMatrix::zeros(2 * p, p);
    for j in 0..p {
        z[(2 * j, j)] = c;
        z[(2 * j + 1, j)] = -c;
    }
    let pool = f.pool("pool.csv", &z);
    let v = ok_json(&mssl(&["fit", "--labeled", &lab, "--pool", &pool, "--model", "interp"]));
    let c = &v["coefficients"];
    let (a, b, mixed) = (floats(&c["min_norm"]), floats(&c["min_variance"]), floats(&c["mixed"]));
    for j in 0..p {
        assert!((a[j] - b[j]).abs() < 1e-10);
        assert!((mixed[j] - a[j]).abs() < 1e-10);
    }
    assert_eq!(v["pool_mean_removed"], false);
}

#[test]
fn glm_grid_and_diagnose() {
    let f = Files::new();
    let mut r = stream(6, &[]);
    let x = standard_normal_matrix(60, 3, &mut r) * 0.5;
    let eta = &x * DVector::from_element(3, 1.0);
    let e = standard_normal_matrix(60, 1, &mut r);
    let y = DVector::from_fn(60, |i, _| eta[i].exp_m1().min(eta[i].max(0.0)) + 0.5 * e[(i, 0)]);
    let lab = f.labeled("glm.csv", &LabeledSet::new(x, y).unwrap());
    let pool = f.pool("pool.csv", &(gaussian(7, 800, 3) * 0.5));
    let v = ok_json(&mssl(&["fit", "--labeled", &lab, "--pool", &pool, "--model", "glm", "--alpha", "grid", "--grid-size", "11"]));
    assert_eq!(v["link"], "elu");
    assert_eq!(v["alpha"]["mixing"], "loss");
    assert_eq!(v["converged"], true);
    assert!(v["diagnostics"]["alpha_tilde"].is_number());

    let d = ok_json(&mssl(&["diagnose", "--labeled", &lab, "--pool", &pool, "--model", "glm", "--link", "elu", "--grid-size", "6"]));
    assert_eq!(d["command"], "diagnose");
    assert_eq!(d["risk_curve"].as_array().unwrap().len(), 6);
    assert!(d.get("coefficients").is_none());
    assert!(d["diagnostics"]["v_s"].is_number());
}

#[test]
fn binary_pool_matches_csv_pool() {
    let f = Files::new();
    let lab = f.labeled("lab.csv", &linear_data(8, 25, 3, 1.0));
    let z = gaussian(9, 300, 3);
    let csv = f.pool("pool.csv", &z);
    let bin = f.path("pool.bin");
    write_pool_binary(fs::File::create(&bin).unwrap(), &UnlabeledPool::new(z).unwrap()).unwrap();
    let a = mssl(&["fit", "--labeled", &lab, "--pool", &csv]);
    let b = mssl(&["fit", "--labeled", &lab, "--pool", bin.to_str().unwrap()]);
    assert_eq!(ok_json(&a)["coefficients"], ok_json(&b)["coefficients"]);
}

#[test]
fn fit_is_deterministic_and_seeded_from_env() {
    let f = Files::new();
    let lab = f.labeled("lab.csv", &linear_data(10, 30, 3, 2.0));
    let pool = f.pool("pool.csv", &gaussian(11, 600, 3));
    let args = ["fit", "--labeled", lab.as_str(), "--pool", pool.as_str(), "--seed", "5"];
    assert_eq!(mssl(&args).stdout, mssl(&args).stdout);
    let env = Command::new(env!("CARGO_BIN_EXE_mssl"))
        .args(&args[..5])
        .env("MSSL_SEED", "5")
        .output()
        .unwrap();
    assert_eq!(env.stdout, mssl(&args).stdout);
    let other = mssl(&[&args[..5], &["--seed", "6"]].concat());
    assert_ne!(other.stdout, mssl(&args).stdout);
}

#[test]
fn fit_error_codes() {
    let f = Files::new();
    let wide = f.labeled("wide.csv", &linear_data(12, 10, 20, 1.0));
    let pool20 = f.pool("pool20.csv", &gaussian(13, 100, 20));
    let out = mssl(&["fit", "--labeled", &wide, "--pool", &pool20, "--model", "ols"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("n > p"));
    assert_eq!(code(&mssl(&["fit", "--labeled", &wide, "--pool", &pool20, "--model", "glm"])), 2);

    let tall = f.labeled("tall.csv", &linear_data(14, 30, 3, 1.0));
    let pool3 = f.pool("pool3.csv", &gaussian(15, 100, 3));
    assert_eq!(code(&mssl(&["fit", "--labeled", &tall, "--pool", &pool3, "--model", "interp"])), 2);
    assert_eq!(code(&mssl(&["fit", "--labeled", &tall, "--pool", &pool20])), 2);
    assert_eq!(code(&mssl(&["fit", "--labeled", &tall, "--pool", &pool3, "--link", "elu"])), 2);
    assert_eq!(code(&mssl(&["fit", "--labeled", &tall, "--pool", &pool3, "--alpha", "1.5"])), 2);
    assert_eq!(code(&mssl(&["fit", "--labeled", &tall, "--pool", &pool3, "--model", "glm:probit"])), 2);

    let bad = f.text("bad.csv", "1,2,3\n4,x,6\n");
    let out = mssl(&["fit", "--labeled", &bad, "--pool", &pool3]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv"));
    let missing = f.path("missing.csv").display().to_string();
    assert_eq!(code(&mssl(&["fit", "--labeled", &missing, "--pool", &pool3])), 1);
    assert_eq!(code(&mssl(&["fit"])), 2);
    assert_eq!(code(&mssl(&[])), 2);
}

#[test]
fn preset_list() {
    let v = ok_json(&mssl(&["simulate", "--list"]));
    let names: Vec<&str> = v["presets"].as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    assert_eq!(
        names,
        ["ols_constant_beta", "ols_random_beta", "glm_elu", "glm_alpha_sweep", "interp_fixed", "interp_growth"]
    );
}

#[test]
fn unknown_preset_lists_choices() {
    let out = mssl(&["simulate", "--preset", "nope"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ols_constant_beta") && err.contains("interp_growth"), "{err}");
    assert_eq!(code(&mssl(&["simulate"])), 2);
}

const SMALL: &str = "pool_size = 2000\nfit_pool_size = 500\noracle_blocks = 20\nfit_blocks = 10\ngrid_size = 11\n";

#[test]
fn glm_smoke_run_writes_valid_csvs() {
    let f = Files::new();
    let cfg = f.text("glm.toml", &format!("preset = \"glm_elu\"\nsigma2 = [1.0, 25.0]\n{SMALL}"));
    let out_dir = f.path("out");
    let v = ok_json(&mssl(&["simulate", "--config", &cfg, "-K", "2", "--out-dir", out_dir.to_str().unwrap()]));
    assert_eq!(v["replications"], 2);
    let results = fs::read_to_string(out_dir.join("glm_elu.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(lines.next().unwrap(), "preset,estimator,grid_name,grid_value,mean_error,se,k_effective");
    assert_eq!(lines.count(), v["rows"].as_array().unwrap().len());
    let pairs = fs::read_to_string(out_dir.join("glm_elu_pairs.csv")).unwrap();
    assert_eq!(pairs.lines().next().unwrap(), "estimator_a,estimator_b,grid_value,mean_diff,se_diff,t,p");
    assert_eq!(v["pairs_csv"].as_str().unwrap(), out_dir.join("glm_elu_pairs.csv").display().to_string());
}

#[test]
fn random_beta_row_count() {
    let f = Files::new();
    let cfg = f.text("ols.toml", &format!("preset = \"ols_random_beta\"\nreplications = 2\n{SMALL}"));
    let out_dir = f.path("o");
    let v = ok_json(&mssl(&["simulate", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap(), "--threads", "1"]));
    assert_eq!(v["grid_name"], "n");
    let estimators = 5;
    assert_eq!(v["rows"].as_array().unwrap().len(), 3 * estimators);
}

#[test]
fn simulate_seed_from_env_and_flags() {
    let f = Files::new();
    let cfg = f.text("i.toml", &format!("preset = \"interp_fixed\"\nsigma2 = [4.0]\n{SMALL}"));
    let run = |seed_env: Option<&str>, extra: &[&str]| {
        let out_dir = f.path("s");
        let mut c = Command::new(env!("CARGO_BIN_EXE_mssl"));
        c.args(["simulate", "--config", &cfg, "-K", "3", "--out-dir", out_dir.to_str().unwrap()]).args(extra);
        c.env_remove("MSSL_SEED");
        if let Some(s) = seed_env {
            c.env("MSSL_SEED", s);
        }
        ok_json(&c.output().unwrap())
    };
    assert_eq!(run(Some("77"), &[])["seed"], 77);
    assert_eq!(run(Some("77"), &["--seed", "78"])["seed"], 78);
    assert_eq!(run(None, &[])["seed"], 20240101);
    assert_eq!(run(Some("77"), &[])["rows"], run(None, &["--seed", "77"])["rows"]);
    assert_eq!(run(None, &["--preset", "interp_fixed"])["preset"], "interp_fixed");
    let out = mssl(&["simulate", "--config", &cfg, "--preset", "glm_elu"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_config_errors() {
    let f = Files::new();
    let bad_key = f.text("a.toml", "preset = \"glm_elu\"\nbogus = 3\n");
    assert_eq!(code(&mssl(&["simulate", "--config", &bad_key])), 1);
    let bad_value = f.text("b.toml", "preset = \"glm_elu\"\nreplications = 1\n");
    assert_eq!(code(&mssl(&["simulate", "--config", &bad_value])), 2);
    let missing = f.path("none.toml").display().to_string();
    assert_eq!(code(&mssl(&["simulate", "--config", &missing])), 1);
    assert_eq!(code(&mssl(&["simulate", "--preset", "glm_elu", "-K", "1"])), 2);
}

#[test]
fn limits_examples() {
    let v = ok_json(&mssl(&["limits", "ols", "--gamma", "0.5", "--sigma2", "25", "--tau2", "1", "--c2", "25"]));
    assert!((v["eta_inf"].as_f64().unwrap() - 0.75).abs() < 1e-12);
    assert_eq!(v["mode"], "ols");

    let out = mssl(&["limits", "interp", "--gamma", "2", "--gamma-tilde", "2", "--sigma2", "1", "--c2", "1"]);
    assert_eq!(code(&out), 2);
    let v = ok_json(&mssl(&["limits", "interp", "--gamma", "2", "--gamma-tilde", "1.6", "--sigma2", "25", "--c2", "25"]));
    assert!(v["eta_inf"].as_f64().unwrap() < 1.0);

    let args = ["--gamma", "0.3", "--sigma2", "4", "--tau2", "2", "--c2", "10"];
    let ols = ok_json(&mssl(&[&["limits", "ols"][..], &args].concat()));
    let fm = ok_json(&mssl(&[&["limits", "finite_m"][..], &args, &["--gamma-tilde", "0"]].concat()));
    for k in ["v_l", "v_u", "b_u"] {
        let (a, b) = (ols["term_limits"][k].as_f64().unwrap(), fm["term_limits"][k].as_f64().unwrap());
        assert!((a - b).abs() <= 1e-12, "{k}: {a} vs {b}");
    }
    assert!((ols["eta_inf"].as_f64().unwrap() - fm["eta_inf"].as_f64().unwrap()).abs() <= 1e-12);
    assert_eq!(code(&mssl(&["limits", "ols", "--gamma", "1.2", "--sigma2", "1", "--c2", "1"])), 2);
    assert_eq!(code(&mssl(&["limits", "bogus", "--gamma", "0.5", "--sigma2", "1", "--c2", "1"])), 2);
}
