use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output};

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn preset(name: &str) -> PathBuf {
    repo().join("configs").join(name)
}

fn infersim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infersim"))
        .args(args)
        .env_remove(infersim::CATALOG_ENV)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn temp_file(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("infersim-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::File::create(&path)
        .unwrap()
        .write_all(contents.as_bytes())
        .unwrap();
    path
}

#[test]
fn every_preset_runs_or_is_rejected_as_documented() {
    for entry in std::fs::read_dir(repo().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let out = infersim(&["estimate", path.to_str().unwrap()]);
        let want = if name == "kv-on-hbf.toml" { 3 } else { 0 };
        assert_eq!(out.status.code(), Some(want), "{name}: {}", stderr(&out));
    }
}

#[test]
fn estimate_json_embeds_config_hash() {
    let out = infersim(&["estimate", preset("golden.toml").to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let text = std::fs::read_to_string(preset("golden.toml")).unwrap();
    let cfg = infersim_core::scenario::ScenarioConfig::from_toml(&text).unwrap();
    assert_eq!(report["provenance"]["config_hash"], cfg.hash());
    assert_eq!(report["provenance"]["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn markdown_row_has_marks() {
    let out = infersim(&[
        "estimate",
        preset("moe-256-on-hbm.toml").to_str().unwrap(),
        "--format",
        "md",
    ]);
    assert!(out.status.success());
    let md = stdout(&out);
    let row = md.lines().nth(2).unwrap();
    assert!(row.starts_with("| MoE-256 on accel-hbm-small"), "{row}");
    assert_eq!(row.matches('✓').count(), 2, "{row}");
    assert!(row.trim_end().ends_with("| ? |"), "{row}");
}

#[test]
fn kv_on_hbf_exits_3_naming_endurance() {
    let out = infersim(&["estimate", preset("kv-on-hbf.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("Endurance"));
    assert!(out.stdout.is_empty());
}

#[test]
fn config_error_exits_2_with_field_path() {
    let text = std::fs::read_to_string(preset("golden.toml"))
        .unwrap()
        .replace("batch = 4", "batch = \"four\"");
    let path = temp_file("bad.toml", &text);
    let out = infersim(&["estimate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("request.batch"), "{}", stderr(&out));
}

#[test]
fn batch_sweep_rows_in_order_with_rising_intensity() {
    let out = infersim(&[
        "sweep",
        preset("golden.toml").to_str().unwrap(),
        "--axis",
        "request.batch=1,2,4,8",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let headers = rdr.headers().unwrap().clone();
    let ai_col = headers
        .iter()
        .position(|h| h == "decode_arithmetic_intensity")
        .unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    let axis: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(axis, vec![1.0, 2.0, 4.0, 8.0]);
    let ai: Vec<f64> = rows.iter().map(|r| r[ai_col].parse().unwrap()).collect();
    assert!(ai.windows(2).all(|w| w[1] > w[0]), "{ai:?}");
}

#[test]
fn bandwidth_sweep_never_slows_decode() {
    let out = infersim(&[
        "sweep",
        preset("dense-on-hbm.toml").to_str().unwrap(),
        "--axis",
        "device.HBM4.read_bw_gbps=400,800,1638,3276,6552",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let col = rdr
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == "decode_step_time")
        .unwrap();
    let t: Vec<f64> = rdr
        .records()
        .map(|r| r.unwrap()[col].parse().unwrap())
        .collect();
    assert_eq!(t.len(), 5);
    assert!(t.windows(2).all(|w| w[1] <= w[0]), "{t:?}");
}

#[test]
fn empty_sweep_is_header_only() {
    let out = infersim(&[
        "sweep",
        preset("golden.toml").to_str().unwrap(),
        "--axis",
        "request.batch=",
    ]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().count(), 1);
    assert!(stdout(&out).starts_with("request.batch,chips,"));
}

#[test]
fn unknown_sweep_axis_exits_2() {
    let out = infersim(&[
        "sweep",
        preset("golden.toml").to_str().unwrap(),
        "--axis",
        "request.speed=1,2",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("request.speed"));
}

#[test]
fn fit_trend_on_shipped_history() {
    let csv = repo().join("data/ddr_price_history.csv");
    let out = infersim(&["fit-trend", csv.to_str().unwrap(), "--window", "2022,2025"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let factor: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("window_factor="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.45..=0.65).contains(&factor), "{factor}");
}

#[test]
fn fit_trend_constant_prices_give_factor_one() {
    let path = temp_file(
        "flat.csv",
        "year,usd_per_gb\n2020,3\n2021,3\n2022,3\n2023,3\n",
    );
    let out = infersim(&["fit-trend", path.to_str().unwrap(), "--window", "2020,2023"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("annual_factor=1.000000"));
}

#[test]
fn fit_trend_single_row_exits_2() {
    let path = temp_file("one.csv", "year,usd_per_gb\n2023,3\n");
    let out = infersim(&["fit-trend", path.to_str().unwrap(), "--window", "2020,2025"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("at least 2 points"));
}

#[test]
fn catalog_list_and_env_override() {
    let out = infersim(&["catalog", "list"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["hbm_generations"].as_array().unwrap().len(), 6);

    let extra = temp_file(
        "cat.toml",
        "[[nodes]]\nname = \"tiny\"\npeak_tflops = 10\nchip_power_w = 50\ncapex_usd = 100\ntiers = [{ device = \"LPDDR5\", stacks = 2 }]\n",
    );
    let out = Command::new(env!("CARGO_BIN_EXE_infersim"))
        .args(["catalog", "list"])
        .env(infersim::CATALOG_ENV, &extra)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("\"tiny\""));
}

#[test]
fn explore_prints_pareto_front() {
    let out = infersim(&["explore", preset("explore-moe.toml").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let front = v.as_array().unwrap();
    assert!(!front.is_empty());
    assert!(front.iter().all(|p| p["chips"].as_u64().unwrap() <= 32));
}
