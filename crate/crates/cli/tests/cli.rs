use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const HEAT: &str = r#"
[equation]
type = "advdiff"
bc = "neumann"
a11 = "const:4"
a1 = "sin2pix"
c0 = 0.125

[kernel]
type = "white"

[study]
T = 1.0
coupling = "h=sqrt(dt)"
levels = "1..3"
reference = 4
seed = 7
n_samples = 200
"#;

const WAVE: &str = r#"
[equation]
type = "wave"
g = "zero"

[kernel]
type = "white"

[study]
coupling = "h=dt"
levels = [2, 3]
reference = 4
oracle_modes = 32
"#;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spde-cov"));
    cmd.env_remove("SPDE_COV_THREADS");
    cmd
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str], config: &Path) -> Output {
    bin().args(args).arg("--config").arg(config).output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn without_wall_time(csv: &str) -> String {
    csv.lines()
        .map(|l| match l.starts_with('#') {
            true => l.to_string(),
            false => l.rsplit_once(',').map_or(l, |(head, _)| head).to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn sweep_csv_is_deterministic_apart_from_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "heat.toml", HEAT);
    let out_path = dir.path().join("sweep.csv");
    let first = stdout(&run(&["sweep"], &cfg));
    let status = bin()
        .args(["sweep", "--out"])
        .arg(&out_path)
        .arg("--config")
        .arg(&cfg)
        .env("SPDE_COV_THREADS", "1")
        .status()
        .unwrap();
    assert!(status.success());
    let second = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(without_wall_time(&first), without_wall_time(&second));

    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines[0], "level,h,dt,err_L1,err_L2,wall_time_s");
    assert_eq!(lines.iter().filter(|l| !l.starts_with('#')).count(), 1 + 3);
    assert!(lines[lines.len() - 2].starts_with("# slope_L1="));
    assert!(lines[lines.len() - 1].starts_with("# slope_L2="));
}

#[test]
fn sweep_formats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "heat.toml", HEAT);
    let jsonl = stdout(&run(&["sweep", "--format", "jsonl"], &cfg));
    let rows: Vec<serde_json::Value> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0]["level"], 1);
    assert!(rows[3]["fit_L1"]["slope"].is_f64());
    let gnuplot = stdout(&run(&["sweep", "--format", "gnuplot"], &cfg));
    assert_eq!(gnuplot.lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn single_runs_emit_nodal_covariance() {
    let dir = tempfile::tempdir().unwrap();
    let heat = write_config(dir.path(), "heat.toml", HEAT);
    let text = stdout(&run(&["advdiff"], &heat));
    // Finest level has 8 cells, so 9 nodes.
    assert_eq!(
        text.lines().filter(|l| !l.starts_with('#') && *l != "x,y,cov").count(),
        81
    );
    assert_eq!(text.lines().last(), Some("# t=1"));

    let wave = write_config(dir.path(), "wave.toml", WAVE);
    let text = stdout(&run(&["wave", "--format", "gnuplot"], &wave));
    let corner: Vec<&str> = text
        .lines()
        .find(|l| l.starts_with("0 0 "))
        .unwrap()
        .split(' ')
        .collect();
    assert_eq!(corner[2], "0");
}

#[test]
fn snapshot_shortens_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let text = HEAT.replace("n_samples = 200", "n_samples = 200\nsnapshot_t = 0.25");
    let cfg = write_config(dir.path(), "snap.toml", &text);
    let out = stdout(&run(&["advdiff"], &cfg));
    assert_eq!(out.lines().last(), Some("# t=0.25"));
}

#[test]
fn oracle_is_close_to_the_wave_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "wave.toml", WAVE);
    let parse = |text: String| -> Vec<f64> {
        text.lines()
            .filter(|l| !l.starts_with('#') && *l != "x,y,cov")
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect()
    };
    let fem = parse(stdout(&run(&["wave"], &cfg)));
    let oracle = parse(stdout(&run(&["oracle"], &cfg)));
    assert_eq!(fem.len(), oracle.len());
    let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = fem.iter().zip(&oracle).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(scale > 0.0);
    assert!(diff < 0.05 * scale, "max nodal difference {diff} vs scale {scale}");
}

#[test]
fn mc_is_reproducible_and_flags_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "heat.toml", HEAT);
    let a = stdout(&run(&["mc", "--format", "jsonl"], &cfg));
    let b = stdout(&run(&["mc", "--format", "jsonl"], &cfg));
    assert_eq!(a, b);
    let report: serde_json::Value = serde_json::from_str(a.trim()).unwrap();
    assert_eq!(report["n_samples"], 200);
    assert_eq!(report["seed"], 7);
    let c = stdout(&run(&["mc", "--samples", "50", "--seed", "9"], &cfg));
    let lines: Vec<&str> = c.lines().collect();
    assert!(lines[0].starts_with("n_samples,seed,hs_distance"));
    assert!(lines[1].starts_with("50,9,"));
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("bad_kernel.toml", HEAT.replace("type = \"white\"", "type = \"pink\"")),
        ("coarse_ref.toml", HEAT.replace("reference = 4", "reference = 2")),
        ("not_toml.toml", "[equation\n".to_string()),
        ("unknown_key.toml", HEAT.replace("seed = 7", "seed = 7\ncolour = 1")),
    ];
    for (name, text) in cases {
        let cfg = write_config(dir.path(), name, &text);
        let out = run(&["sweep"], &cfg);
        assert_eq!(
            out.status.code(),
            Some(1),
            "{name}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let missing = run(&["sweep"], &dir.path().join("absent.toml"));
    assert_eq!(missing.status.code(), Some(1));

    let heat = write_config(dir.path(), "heat.toml", HEAT);
    assert_eq!(run(&["wave"], &heat).status.code(), Some(1));
    assert_eq!(bin().arg("sweep").output().unwrap().status.code(), Some(1));
    let threads = bin()
        .args(["sweep", "--config"])
        .arg(&heat)
        .env("SPDE_COV_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(1));
}

#[test]
fn missed_expected_rate_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = HEAT.replace("seed = 7", "seed = 7\nexpected_rate = 5.0");
    let cfg = write_config(dir.path(), "rate.toml", &text);
    let out = run(&["sweep"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    // The report is still written before the check fails.
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("level,h,dt"));
}
