use std::io::Write;
use std::process::{Command, Output as ProcOutput, Stdio};

use robustfit::asymptotics::normal_kl_variances;
use robustfit_cli::{
    cmd_asymptotics, cmd_fit, cmd_influence, cmd_simulate, influence_rows, parse_csv, CliError,
    EstimatorKind, Family, FitArgs, FitMethod, Format, Grid, InfluenceArgs, InfluenceMethod,
    ModelKind, Printer, SimulateArgs, Tuning, WeightKind,
};
use serde_json::Value;

fn run_bin(args: &[&str], stdin: &str) -> ProcOutput {
    let mut child = Command::new(env!("CARGO_BIN_EXE_robustfit"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary starts");
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn json(s: &str) -> Value {
    serde_json::from_str(s).expect("valid JSON")
}

fn fit_args(method: FitMethod) -> FitArgs {
    FitArgs {
        model: ModelKind::Normal,
        method,
        tuning: Tuning::default(),
    }
}

#[test]
fn csv_header_detection_and_errors() {
    assert_eq!(parse_csv("x\n1\n2\n", Some(1)).unwrap(), vec![vec![1.0], vec![2.0]]);
    assert_eq!(parse_csv("1\n2\n", None).unwrap().len(), 2);
    assert_eq!(parse_csv("a,b\n1,2\n3,4\n", None).unwrap(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    let e = parse_csv("1\n2\nfoo\n", Some(1)).unwrap_err();
    assert!(e.to_string().contains("line 3"), "{e}");
    let e = parse_csv("1,2\n3\n", None).unwrap_err();
    assert!(e.to_string().contains("line 2"), "{e}");
    assert!(matches!(parse_csv("", Some(1)), Err(CliError::Input(_))));
    assert!(matches!(parse_csv("header\n", Some(1)), Err(CliError::Input(_))));
    assert!(parse_csv("1\nNaN\n", Some(1)).is_err());
}

#[test]
fn fit_ml_closed_form() {
    let out = cmd_fit(&fit_args(FitMethod::Ml), "0\n1\n-1\n", &Printer::default()).unwrap();
    assert_eq!(out.exit_code, 0);
    let v = json(&out.text);
    assert_eq!(v["schema"], 1);
    assert_eq!(v["estimate"][0].as_f64().unwrap(), 0.0);
    assert_eq!(v["estimate"][1].as_f64().unwrap(), 0.816497);
    assert_eq!(v["converged"], true);
}

#[test]
fn fit_l2_on_symmetric_data() {
    let out = cmd_fit(&fit_args(FitMethod::L2), "0\n1\n-1\n", &Printer::default()).unwrap();
    assert_eq!(out.exit_code, 0);
    let v = json(&out.text);
    assert!(v["estimate"][0].as_f64().unwrap().abs() < 1e-10);
    assert_eq!(v["converged"], true);
}

#[test]
fn fit_variants_run() {
    let data: String = (0..200).map(|i| format!("{}\n", ((i * 7919) % 200) as f64 / 50.0 - 2.0)).collect();
    for tuning in [
        Tuning { weight: WeightKind::ExpDelta, delta: Some(0.5), ..Tuning::default() },
        Tuning { weight: WeightKind::Kernel, x0: Some(0.0), h: Some(2.0), ..Tuning::default() },
    ] {
        let args = FitArgs { tuning, ..fit_args(FitMethod::L2) };
        assert_eq!(cmd_fit(&args, &data, &Printer::default()).unwrap().exit_code, 0);
    }
    assert_eq!(cmd_fit(&fit_args(FitMethod::Kl), &data, &Printer::default()).unwrap().exit_code, 0);
    let missing = FitArgs {
        tuning: Tuning { weight: WeightKind::ExpDelta, ..Tuning::default() },
        ..fit_args(FitMethod::L2)
    };
    assert!(matches!(cmd_fit(&missing, &data, &Printer::default()), Err(CliError::Input(_))));
}

#[test]
fn fit_mvn() {
    let rows: String = (0..300)
        .map(|i| {
            let a = ((i * 7919) % 300) as f64 / 100.0 - 1.5;
            let b = ((i * 104729) % 300) as f64 / 100.0 - 1.5;
            format!("{a},{b}\n")
        })
        .collect();
    for method in [FitMethod::Ml, FitMethod::Kl] {
        let args = FitArgs { model: ModelKind::Mvn, ..fit_args(method) };
        let out = cmd_fit(&args, &format!("x,y\n{rows}"), &Printer::default()).unwrap();
        assert_eq!(out.exit_code, 0);
        let v = json(&out.text);
        assert_eq!(v["parameters"].as_array().unwrap().len(), 5);
    }
    let args = FitArgs { model: ModelKind::Mvn, ..fit_args(FitMethod::L2) };
    assert!(cmd_fit(&args, &rows, &Printer::default()).is_err());
}

#[test]
fn fit_csv_output_round_trips() {
    let out = Printer { format: Format::Csv, precision: 6 };
    let text = cmd_fit(&fit_args(FitMethod::Ml), "0\n1\n-1\n", &out).unwrap().text;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["parameter", "estimate", "standard_error", "iterations", "converged"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][1].parse::<f64>().unwrap(), 0.816497);
}

#[test]
fn influence_examples() {
    let l2 = InfluenceArgs {
        method: InfluenceMethod::L2,
        tuning: Tuning::default(),
        theta: (0.0, 1.0),
        grid: "-2:2:1".parse().unwrap(),
    };
    let (rows, _) = influence_rows(&l2).unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[2][0], 0.0);
    assert!(rows[2][1].abs() < 1e-12);

    // At |x| = 50 the kernel term has vanished and only the constant remains.
    let kl = InfluenceArgs {
        method: InfluenceMethod::Kl,
        grid: "-50:50:100".parse().unwrap(),
        ..l2
    };
    let (rows, limit) = influence_rows(&kl).unwrap();
    for r in rows {
        assert!((r[1] - limit[0]).abs() < 1e-3 && (r[2] - limit[1]).abs() < 1e-3);
    }

    let csv_out = cmd_influence(&l2, &Printer { format: Format::Csv, precision: 6 }).unwrap().text;
    assert!(csv_out.starts_with("x,I_mu,I_sigma\n"));
    assert_eq!(csv_out.lines().count(), 6);

    let bad = InfluenceArgs { grid: Grid { lo: 0.0, hi: 1.0, step: 0.0 }, ..l2 };
    assert!(matches!(cmd_influence(&bad, &Printer::default()), Err(CliError::Input(_))));
    assert!("1:2".parse::<Grid>().is_err());
}

#[test]
fn asymptotics_examples() {
    let out = Printer::default();
    let kl2 = json(&cmd_asymptotics(Family::KlK { k: 2.0 }, 1.0, &out).unwrap().text);
    assert!((kl2["closed_form"]["var_mu"].as_f64().unwrap() - 1.063).abs() < 5e-4);
    assert!((kl2["closed_form"]["var_sigma"].as_f64().unwrap() - 0.563).abs() < 5e-4);
    assert_eq!(kl2["self_check"], "pass");

    let l2 = cmd_asymptotics(Family::L2Delta { delta: 0.0 }, 1.0, &out).unwrap();
    let kl1 = cmd_asymptotics(Family::KlK { k: 1.0 }, 1.0, &out).unwrap();
    assert_eq!(l2.exit_code, 0);
    let (a, b) = (json(&l2.text), json(&kl1.text));
    assert_eq!(a["closed_form"], b["closed_form"]);
    assert!((a["closed_form"]["var_mu"].as_f64().unwrap() - 1.5396).abs() < 5e-4);
    assert!((a["closed_form"]["var_sigma"].as_f64().unwrap() - 0.9241).abs() < 5e-4);

    assert!(matches!(cmd_asymptotics(Family::L2Delta { delta: 1.0 }, 1.0, &out), Err(CliError::Input(_))));
    assert!(matches!(cmd_asymptotics(Family::KlK { k: 2.0 }, -1.0, &out), Err(CliError::Input(_))));
}

#[test]
fn simulate_reports_theoretical_column() {
    let args = SimulateArgs {
        n: 100,
        reps: 10,
        estimators: vec![EstimatorKind::Kl],
        ..SimulateArgs::default()
    };
    let v = json(&cmd_simulate(&args, &Printer { format: Format::Json, precision: 17 }).unwrap().text);
    let (a, b) = normal_kl_variances(1.0, 2.0).unwrap();
    let theory = &v["estimators"][0]["theoretical_n_variance"];
    assert_eq!(theory[0].as_f64().unwrap(), a);
    assert_eq!(theory[1].as_f64().unwrap(), b);
    assert_eq!(v["schema"], 1);
}

#[test]
fn simulate_contamination_ordering() {
    let args = SimulateArgs {
        n: 500,
        reps: 20,
        estimators: vec![EstimatorKind::Ml, EstimatorKind::Kl],
        epsilon: 0.05,
        contaminant_point: Some(10.0),
        ..SimulateArgs::default()
    };
    let v = json(&cmd_simulate(&args, &Printer::default()).unwrap().text);
    let ml = v["estimators"][0]["mean_estimate"][1].as_f64().unwrap();
    let kl = v["estimators"][1]["mean_estimate"][1].as_f64().unwrap();
    assert!(ml > kl, "{ml} vs {kl}");
}

#[test]
fn simulate_rejects_invalid_specs() {
    let base = SimulateArgs { n: 50, reps: 2, ..SimulateArgs::default() };
    for bad in [
        SimulateArgs { n: 5, ..base.clone() },
        SimulateArgs { reps: 0, ..base.clone() },
        SimulateArgs { epsilon: 0.6, contaminant_point: Some(1.0), ..base.clone() },
        SimulateArgs { epsilon: 0.1, ..base.clone() },
        SimulateArgs { estimators: vec![EstimatorKind::L2ExpDelta], ..base.clone() },
        SimulateArgs { estimators: vec![EstimatorKind::MvnKl], ..base.clone() },
    ] {
        assert!(matches!(cmd_simulate(&bad, &Printer::default()), Err(CliError::Input(_))), "{bad:?}");
    }
}

#[test]
fn binary_exit_codes() {
    let ok = run_bin(&["fit", "--method", "ml"], "0\n1\n-1\n");
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(json(&String::from_utf8(ok.stdout).unwrap())["n"], 3);

    let empty = run_bin(&["fit", "--method", "ml"], "");
    assert_eq!(empty.status.code(), Some(1));
    assert!(String::from_utf8(empty.stderr).unwrap().contains("no data rows"));

    let malformed = run_bin(&["fit", "--method", "ml"], "1\n2\nx\n");
    assert_eq!(malformed.status.code(), Some(1));
    assert!(String::from_utf8(malformed.stderr).unwrap().contains("line 3"));

    let bad_flag = run_bin(&["fit", "--method", "nope"], "");
    assert_eq!(bad_flag.status.code(), Some(1));

    let grid = run_bin(&["influence", "--method", "l2", "--theta", "0,1", "--grid", "0:1:-1"], "");
    assert_eq!(grid.status.code(), Some(1));

    let infl = run_bin(
        &["--format", "csv", "influence", "--method", "kl", "--k", "2", "--theta", "-0.5,1", "--grid", "-1:1:0.5"],
        "",
    );
    assert_eq!(infl.status.code(), Some(0));
    assert_eq!(String::from_utf8(infl.stdout).unwrap().lines().count(), 6);

    let asym = run_bin(&["asymptotics", "--family", "kl-k", "--k", "3"], "");
    assert_eq!(asym.status.code(), Some(0));
}

#[test]
fn binary_is_deterministic() {
    let args = ["simulate", "--n", "200", "--reps", "30", "--estimator", "ml,l2", "--seed", "9"];
    let a = run_bin(&args, "");
    let b = run_bin(&args, "");
    let mut serial = args.to_vec();
    serial.push("--serial");
    let c = run_bin(&serial, "");
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
}
