use std::fs;
use std::path::Path;

use selnet::cli::run;

const CONFIG: &str = r#"
seeds = [4]

[data]
kind = "synthetic"
samples = 400
classes = 3
dim = 4
noise_fraction = 0.2

[model]
hidden = [16]
selection_hidden = 8

[train]
epochs = 4
batch_size = 64
optimizer = { kind = "adam", lr = 1e-2, weight_decay = 1e-4 }

[baselines]
mc_passes = 5
"#;

fn sel(args: &[&str]) -> i32 {
    run(std::iter::once("selnet").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn non_empty(path: &Path) -> String {
    let bytes = fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(!bytes.is_empty(), "{} is empty", path.display());
    String::from_utf8_lossy(&bytes).into_owned()
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    assert_eq!(sel(&["train", "--bogus"]), 2);
    assert_eq!(sel(&["frobnicate"]), 2);
    assert_eq!(sel(&[]), 2);
    assert_eq!(sel(&["train", "--config", "/nonexistent/run.toml"]), 1);
    assert_eq!(sel(&["evaluate", "--model", "/nonexistent/model.ckpt"]), 1);
}

#[test]
fn train_calibrate_evaluate_curve_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();

    let mut models = Vec::new();
    for c in ["0.7", "0.9"] {
        let out = d.join(format!("train{c}"));
        assert_eq!(
            sel(&["train", "--config", p(&cfg), "--coverage", c, "--out", p(&out)]),
            0
        );
        for f in ["model.ckpt", "history.csv", "config.toml"] {
            non_empty(&out.join(f));
        }
        let history = non_empty(&out.join("history.csv"));
        assert!(history.starts_with("# selnet format=1 config="));
        assert_eq!(history.lines().count(), 2 + 4);
        models.push(out.join("model.ckpt"));
    }

    let cal = d.join("cal");
    assert_eq!(
        sel(&[
            "calibrate",
            "--model",
            p(&models[0]),
            "--coverage",
            "0.7",
            "--out",
            p(&cal)
        ]),
        0
    );
    let report = non_empty(&cal.join("calibration.toml"));
    assert!(report.contains("target_coverage = 0.7"));

    let ev = d.join("ev");
    assert_eq!(
        sel(&[
            "evaluate",
            "--model",
            p(&cal.join("model.ckpt")),
            "--tau",
            "0",
            "--out",
            p(&ev)
        ]),
        0
    );
    let text = non_empty(&ev.join("report.toml"));
    assert!(text.contains("coverage = 1\n"), "{text}");

    let base = d.join("base");
    assert_eq!(sel(&["train", "--config", p(&cfg), "--baseline", "--out", p(&base)]), 0);
    let base = base.join("model.ckpt");
    assert_eq!(
        sel(&["curve", "--model", p(&base), "--coverages", "0.5", "--score", "g"]),
        1
    );

    for (score, model) in [("g", &models[0]), ("sr", &base), ("mcdropout", &base)] {
        let out = d.join(format!("curve-{score}"));
        let args = [
            "curve",
            "--model",
            p(model),
            "--coverages",
            "1,0.8,0.5",
            "--score",
            score,
            "--passes",
            "5",
        ];
        assert_eq!(sel(&[&args[..], &["--out", p(&out)]].concat()), 0);
        let curve = non_empty(&out.join("curve.csv"));
        assert_eq!(curve.lines().count(), 2 + 3);
        assert!(curve.lines().nth(2).unwrap().starts_with("1,1,"));
    }

    let grid = d.join("grid");
    let list = format!("{},{}", p(&models[0]), p(&models[1]));
    assert_eq!(
        sel(&["grid", "--models", &list, "--coverages", "0.7,0.9", "--out", p(&grid)]),
        0
    );
    let g = non_empty(&grid.join("grid.csv"));
    assert_eq!(g.lines().nth(1), Some("train_c,calib_0.7,calib_0.9"));
    assert_eq!(g.lines().count(), 4);
}

#[test]
fn compare_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let code = sel(&[
            "compare",
            "--config",
            p(&cfg),
            "--coverages",
            "1,0.8",
            "--seeds",
            "1,2",
            "--out",
            p(&out),
        ]);
        assert_eq!(code, 0);
        non_empty(&out.join("config.toml"));
        outputs.push(fs::read(out.join("compare.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.swap_remove(0)).unwrap();
    assert!(text.lines().next().unwrap().ends_with("seed=1;2"));
    assert_eq!(text.lines().count(), 4);
    assert!(!text.contains("NA"), "{text}");
}

#[test]
fn csv_models_evaluate_external_files_in_original_units() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut rows = String::from("u,v,target\n");
    for i in 0..120 {
        let (u, v) = ((i % 11) as f64, (i % 7) as f64);
        rows.push_str(&format!("{u},{v},{}\n", 100.0 + 10.0 * u - 5.0 * v));
    }
    fs::write(d.join("data.csv"), &rows).unwrap();
    fs::write(d.join("fresh.csv"), "u,v,target\n1,1,105\n2,3,105\n").unwrap();
    let cfg = d.join("run.toml");
    fs::write(
        &cfg,
        r#"
[data]
kind = "csv"
path = "data.csv"
target = "target"
task = "regression"

[model]
hidden = [8]
selection_hidden = 4

[train]
epochs = 3
batch_size = 32
optimizer = { kind = "adam", lr = 1e-2, weight_decay = 0.0 }
"#,
    )
    .unwrap();
    let out = d.join("t");
    assert_eq!(sel(&["train", "--config", p(&cfg), "--out", p(&out)]), 0);
    let model = out.join("model.ckpt");
    let ev = d.join("ev");
    let fresh = d.join("fresh.csv");
    let args = ["evaluate", "--model", p(&model), "--data", p(&fresh), "--tau=-inf"];
    assert_eq!(sel(&[&args[..], &["--out", p(&ev)]].concat()), 0);
    let text = non_empty(&ev.join("report.toml"));
    assert!(text.contains("covered = 2\n"), "{text}");
    let risk: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("risk = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(risk > 1.0, "MSE should be in original units, got {risk}");
    assert_eq!(
        sel(&["evaluate", "--model", p(&model), "--data", p(&d.join("missing.csv"))]),
        1
    );
}
