use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use tic_cli::config::{Format, RunConfig};
use tic_cli::output::embedded_header;
use tic_core::model::LqrParams;

fn shipped_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.ini")
}

fn tic(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tic"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.ini");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

/// Numeric rows of a CSV file, skipping comments and the column line.
fn rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let cols = lines.next().unwrap().split(',').map(str::to_string).collect();
    let data = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    (cols, data)
}

#[test]
fn shipped_config_is_the_reference_problem() {
    let cfg = RunConfig::load(&shipped_config()).unwrap();
    assert_eq!(cfg.model, LqrParams::reference());
    assert_eq!(cfg, RunConfig::default());
}

#[test]
fn gains_table_starts_at_zero_and_ends_with_vanishing_gains() {
    let dir = tempfile::tempdir().unwrap();
    let out = tic(dir.path(), &["gains"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (cols, data) = rows(&dir.path().join("out/gains.csv"));
    assert_eq!(cols, ["t", "k_equilibrium", "k_naive", "k_pre_state", "c_pre_offset"]);
    assert_eq!(data.len(), 1001);
    assert_eq!(data[0][0], 0.0);
    let last = data.last().unwrap();
    assert_eq!((last[0], last[1], last[2]), (1.0, 0.0, 0.0));
}

#[test]
fn sweep_rows_respect_dominance_and_plot_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    assert!(tic(dir.path(), &["sweep"]).status.success());
    let (cols, data) = rows(&dir.path().join("out/sweep.csv"));
    assert_eq!(cols, ["gamma", "j_equilibrium", "j_naive", "j_precommitted"]);
    assert_eq!(data.len(), 20);
    assert_eq!((data[0][0], data[19][0]), (0.0, 10.0));
    assert!(data.iter().all(|r| r[1] <= r[2]));
    let first = std::fs::read(dir.path().join("out/sweep.svg")).unwrap();
    assert!(tic(dir.path(), &["sweep"]).status.success());
    assert_eq!(first, std::fs::read(dir.path().join("out/sweep.svg")).unwrap());
}

#[test]
fn config_errors_exit_with_code_two_and_a_json_record() {
    let dir = tempfile::tempdir().unwrap();
    for (text, needle) in [
        ("[model]\ngamma = -1\n", "gamma must be >= 0"),
        ("[model]\n\ngama = 5\n", "line 3: unknown key `gama`"),
        ("[output]\nformats = csv,xml\n", "xml"),
        ("[numerics]\node_steps = 1000\nsim_steps = 300\n", "multiple"),
    ] {
        let cfg = write_config(dir.path(), text);
        let out = tic(dir.path(), &["--config", &cfg, "gains"]);
        assert_eq!(out.status.code(), Some(2), "{text}");
        let record: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(record["kind"], "config");
        assert_eq!(record["exit_code"], 2);
        assert!(record["message"].as_str().unwrap().contains(needle), "{record}");
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unstable_explicit_time_step_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[pde]\nn_t = 3\nn_x = 40\nn_y = 40\n");
    let out = tic(dir.path(), &["--config", &cfg, "pde"]);
    assert_eq!(out.status.code(), Some(2));
    let record: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(record["chain"][0], "grid sweep");
}

#[test]
fn every_output_echoes_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[numerics]\node_steps = 400\nsim_steps = 200\nn_paths = 400\nantithetic = true\n\
         [pde]\nn_x = 40\nn_y = 40\nx_lo = -2.5\n[sweep]\ngamma_steps = 5\n[output]\nformats = csv,json\n",
    );
    let runs: [&[&str]; 7] = [
        &["gains"],
        &["cost", "--strategy", "precommitted"],
        &["sweep"],
        &["simulate", "--strategy", "naive"],
        &["compare"],
        &["pde", "--mode", "sweep"],
        &["pde", "--mode", "picard"],
    ];
    for args in runs {
        let mut full = vec!["--config", cfg.as_str(), "--seed", "7", "--out", "res"];
        full.extend_from_slice(args);
        let out = tic(dir.path(), &full);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let mut expected = RunConfig::load(Path::new(&cfg)).unwrap();
    expected.numerics.seed = 7;
    expected.output.directory = "res".into();
    assert_eq!(expected.output.formats, [Format::Csv, Format::Json]);

    let mut files: Vec<_> = std::fs::read_dir(dir.path().join("res")).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    let svgs = files.iter().filter(|f| f.extension().unwrap() == "svg").count();
    let jsons = files.iter().filter(|f| f.extension().unwrap() == "json").count();
    let csvs = files.iter().filter(|f| f.extension().unwrap() == "csv").count();
    assert_eq!((svgs, jsons), (2, csvs));
    for f in &files {
        let text = std::fs::read_to_string(f).unwrap();
        let header = embedded_header(&text).unwrap();
        assert_eq!(RunConfig::from_header(&header).unwrap(), expected, "{}", f.display());
    }
}

fn config_strategy() -> impl Strategy<Value = RunConfig> {
    (
        (-2.0..2.0f64, 0.1..3.0f64, 0.01..2.0f64, 0.0..20.0f64, 0.1..5.0f64, -5.0..5.0f64),
        (1usize..50, 1usize..5000, any::<u64>(), any::<bool>()),
        (0usize..500, 4usize..400, -10.0..0.0f64, 0.1..10.0f64, 1e-14..1e-2f64, 1usize..1000),
        (0.0..5.0f64, 0.0..5.0f64, 1usize..100),
        (prop::sample::select(vec!["out", "a/b", "runs 1", "x-y_z"]), 0usize..3),
    )
        .prop_map(|(m, n, p, s, o)| {
            let mut cfg = RunConfig::default();
            cfg.model = LqrParams {
                a_bar: m.0,
                b_bar: m.1,
                sigma: m.2,
                gamma: m.3,
                horizon: m.4,
                x0: m.5,
            };
            cfg.numerics.sim_steps = n.0;
            cfg.numerics.ode_steps = n.0 * 3;
            cfg.numerics.n_paths = 2 * n.1;
            cfg.numerics.seed = n.2;
            cfg.numerics.antithetic = n.3;
            cfg.pde.n_t = p.0;
            cfg.pde.n_x = p.1;
            cfg.pde.n_y = p.1;
            cfg.pde.x_lo = p.2;
            cfg.pde.x_hi = p.2 + p.3;
            cfg.pde.tol = p.4;
            cfg.pde.max_iter = p.5;
            cfg.sweep.gamma_min = s.0;
            cfg.sweep.gamma_max = s.0 + s.1;
            cfg.sweep.gamma_steps = s.2;
            cfg.output.directory = o.0.to_string();
            cfg.output.formats = [vec![Format::Csv], vec![Format::Json], vec![Format::Json, Format::Csv]][o.1].clone();
            cfg
        })
}

proptest! {
    #[test]
    fn header_reproduces_config(cfg in config_strategy()) {
        prop_assert_eq!(&RunConfig::parse(&cfg.to_ini()).unwrap(), &cfg);
        prop_assert_eq!(&RunConfig::from_header(&cfg.header()).unwrap(), &cfg);
    }
}
