use std::path::PathBuf;
use std::process::Command;

use metreg::control::trajectory_from_csv;
use metreg::moduli::{certificates_from_csv, certificates_to_csv, format_real};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn problem(name: &str, json: &str) -> PathBuf {
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("{name}.json"));
    std::fs::write(&path, json).unwrap();
    path
}

fn run(args: &[&str], input: &PathBuf) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_metreg"))
        .args(&args[..1])
        .arg("--input")
        .arg(input)
        .args(&args[1..])
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

/// `quantity,value` table from `solve`.
fn quantity(text: &str, key: &str) -> Option<String> {
    text.lines().skip(1).find_map(|l| l.split_once(',').filter(|(k, _)| *k == key).map(|(_, v)| v.to_string()))
}

fn number(text: &str, key: &str) -> f64 {
    quantity(text, key).unwrap_or_else(|| panic!("no {key} in\n{text}")).parse().unwrap()
}

/// `key=value` token from a summary line on standard error.
fn summary(stderr: &str, key: &str) -> String {
    let prefix = format!("{key}=");
    stderr
        .split_whitespace()
        .find_map(|t| t.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no {key} in\n{stderr}"))
        .to_string()
}

fn data_rows(csv_text: &str) -> Vec<csv::StringRecord> {
    csv::Reader::from_reader(csv_text.as_bytes()).records().map(|r| r.unwrap()).collect()
}

const SCALAR: &str = r#"{"kind":"generalized","version":1,"matrix":[[1.0]],
 "perturbation":{"input_dim":1,"rows":[[{"coeff":0.3,"exponents":[1]}]]},"base_x":[0.0]}"#;

const IDENTITY: &str = r#"{"kind":"linear","version":1,"matrix":[[1,0],[0,1]]}"#;

const WIDE: &str = r#"{"kind":"linear","version":1,"matrix":[[2,1]],"base_x":[0.3,-0.2]}"#;

const DOUBLE_INTEGRATOR: &str = r#"{"kind":"control","version":1,"dynamics":{"fixture":"double_integrator"},
 "control_set":{"box":{"lower":[-1],"upper":[1]}}}"#;

const TWO_X: &str = r#"{"kind":"linear","version":1,"matrix":[[2]],"radius":0.1}"#;

#[test]
fn moduli_of_the_identity() {
    let r = run(&["moduli"], &problem("identity", IDENTITY));
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.lines().nth(1).unwrap().starts_with("reg,1.0,"), "{}", r.stdout);
    let rows = certificates_from_csv(&r.stdout).unwrap();
    assert_eq!(rows.iter().map(|c| c.kind.as_str()).collect::<Vec<_>>(), ["reg", "lip", "clm"]);
    assert_eq!(certificates_to_csv(&rows).unwrap(), r.stdout);
}

#[test]
fn moduli_of_a_quadratic_remainder() {
    let file = problem(
        "quadratic",
        r#"{"kind":"smooth","version":1,"base_x":[0.0],
          "map":{"input_dim":1,"rows":[[{"coeff":1,"exponents":[1]},{"coeff":0.5,"exponents":[2]}]]}}"#,
    );
    let r = run(&["moduli", "--radius", "0.1"], &file);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows = certificates_from_csv(&r.stdout).unwrap();
    let lip = rows.iter().find(|c| c.kind == "lip").unwrap().value;
    // Difference quotients of x^2/2 over a 1-D grid of [-0.1, 0.1].
    let grid: Vec<f64> = (0..=400).map(|i| -0.1 + 0.2 * i as f64 / 400.0).collect();
    let mut oracle = 0.0f64;
    for &p in &grid {
        for &q in &grid {
            if p != q {
                oracle = oracle.max(((p * p - q * q) / 2.0 / (p - q)).abs());
            }
        }
    }
    assert!((oracle - 0.1).abs() < 1e-3);
    assert!(lip <= oracle + 1e-12 && lip >= 0.9 * oracle, "lip {lip} vs {oracle}");
}

#[test]
fn malformed_input_exits_2() {
    let cases = [
        ("truncated", r#"{"kind":"linear","#),
        ("unknown_field", r#"{"kind":"linear","version":1,"matrix":[[1]],"colour":1}"#),
        ("bad_version", r#"{"kind":"linear","version":7,"matrix":[[1]]}"#),
        ("bad_kind", r#"{"kind":"cubic","version":1}"#),
        ("ragged", r#"{"kind":"linear","version":1,"matrix":[[1,2],[3]]}"#),
        ("base_dim", r#"{"kind":"linear","version":1,"matrix":[[1,2]],"base_x":[1]}"#),
        (
            "perturbation_dim",
            r#"{"kind":"generalized","version":1,"matrix":[[1]],"base_x":[0],
              "perturbation":{"input_dim":2,"rows":[[{"coeff":1,"exponents":[1,0]}]]}}"#,
        ),
        (
            "fixture",
            r#"{"kind":"control","version":1,"dynamics":{"fixture":"unicycle"},"control_set":{"ball":{"center":[0],"radius":1}}}"#,
        ),
    ];
    for (name, json) in cases {
        let r = run(&["moduli"], &problem(name, json));
        assert_eq!(r.code, 2, "{name}: {}", r.stderr);
        assert!(r.stderr.starts_with("error:"), "{name}");
    }
    let r = run(&["moduli"], &problem("truncated", r#"{"kind":"linear","#));
    assert!(r.stderr.contains("line 1"), "{}", r.stderr);
    let r = run(&["solve", "--target", "1,2"], &problem("scalar", SCALAR));
    assert_eq!(r.code, 2);
    let r = run(&["solve", "--target", "abc"], &problem("scalar", SCALAR));
    assert_eq!(r.code, 2);
}

#[test]
fn solves_the_scalar_fixture() {
    let r = run(&["solve", "--target", "0.1"], &problem("scalar", SCALAR));
    assert_eq!(r.code, 0, "{}", r.stderr);
    // x + 0.3 x = 0.1.
    assert!((number(&r.stdout, "x0") - 0.1 / 1.3).abs() < 1e-9);
    assert_eq!(quantity(&r.stdout, "calm_ok").as_deref(), Some("true"));
    assert_eq!(quantity(&r.stdout, "contraction").as_deref(), Some("true"));
    assert!(number(&r.stdout, "iterations") >= 5.0);
}

#[test]
fn reference_value_returns_the_base_point() {
    let r = run(&["solve"], &problem("wide", WIDE));
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(quantity(&r.stdout, "x0").as_deref(), Some("0.29999999999999999"));
    assert_eq!(quantity(&r.stdout, "x1").as_deref(), Some("-0.20000000000000001"));
    assert_eq!(number(&r.stdout, "iterations"), 0.0);
}

#[test]
fn target_outside_tau_exits_4_with_the_certificate() {
    let r = run(&["solve", "--target", "1.0"], &problem("scalar", SCALAR));
    assert_eq!(r.code, 4);
    assert!(r.stderr.contains("tau"), "{}", r.stderr);
    assert!(quantity(&r.stdout, "x0").is_none());
    let tau = number(&r.stdout, "tau");
    assert!(tau > 0.0 && tau < 1.0);
}

#[test]
fn solve_least_norm_matches_the_normal_equations() {
    let r = run(&["solve", "--target", "0.45"], &problem("wide", WIDE));
    assert_eq!(r.code, 0, "{}", r.stderr);
    // ȳ = 0.4; x = x̄ + Bᵀ (B Bᵀ)^{-1} (y - ȳ) with B = [2 1].
    let t = 0.05 / 5.0;
    assert!((number(&r.stdout, "x0") - (0.3 + 2.0 * t)).abs() < 1e-12);
    assert!((number(&r.stdout, "x1") - (-0.2 + t)).abs() < 1e-12);
}

#[test]
fn solve_with_a_parameter() {
    let file = problem(
        "implicit",
        r#"{"kind":"generalized","version":1,"matrix":[[1]],"base_x":[0],"parameter":{"base":[0]},
          "perturbation":{"input_dim":2,"rows":[[{"coeff":0.2,"exponents":[1,0]},{"coeff":1,"exponents":[0,1]}]]}}"#,
    );
    let r = run(&["solve", "--param", "0.05"], &file);
    assert_eq!(r.code, 0, "{}", r.stderr);
    // x + 0.2 x + p = 0.
    assert!((number(&r.stdout, "x0") + 0.05 / 1.2).abs() < 1e-9);
    assert_eq!(run(&["solve", "--target", "0.1"], &file).code, 2);
}

#[test]
fn solve_with_an_active_box() {
    let boxed = |kappa: &str| {
        format!(
            r#"{{"kind":"generalized","version":1,"matrix":[[1,1]],"base_x":[0.5,0.5],{kappa}
              "constraints":{{"box":{{"lower":[null,null],"upper":[0.5,1.0]}}}}}}"#
        )
    };
    // The default kappa is set by B alone; with x1 pinned the inverse moves at rate 1.
    let r = run(&["solve", "--target", "1.05"], &problem("boxed_default", &boxed("")));
    assert_eq!(r.code, 4);
    assert!(r.stderr.contains("kappa is too small"), "{}", r.stderr);

    let r = run(&["solve", "--target", "1.05"], &problem("boxed", &boxed(r#""kappa":1.2,"#)));
    assert_eq!(r.code, 0, "{}{}", r.stderr, r.stdout);
    // Nearest point to x̄ on {x1 + x2 = 1.05} with x1 <= 0.5.
    assert!((number(&r.stdout, "x0") - 0.5).abs() < 1e-7);
    assert!((number(&r.stdout, "x1") - 0.55).abs() < 1e-7);
}

#[test]
fn sweep_singleton_and_empty_grids() {
    let file = problem("identity", IDENTITY);
    let r = run(&["sweep", "--grid", "0.1,0"], &file);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows = data_rows(&r.stdout);
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][1], "ok");
    assert_eq!(summary(&r.stderr, "max_continuity_ratio"), "none");
    for spec in ["linspace:0:1:0", ""] {
        assert_eq!(run(&["sweep", "--grid", spec], &file).code, 2);
    }
}

#[test]
fn linear_sweep_continuity_is_below_kappa() {
    let r = run(&["sweep", "--grid", "linspace:-0.2:0.2:11"], &problem("wide", WIDE));
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows = data_rows(&r.stdout);
    assert_eq!(rows.len(), 11);
    let kappa: f64 = summary(&r.stderr, "kappa").parse().unwrap();
    let ratio: f64 = summary(&r.stderr, "max_continuity_ratio").parse().unwrap();
    assert!(ratio <= kappa, "{ratio} > {kappa}");
    // Oracle: the least-norm map has Lipschitz constant 1/|B| = 1/sqrt(5).
    assert!((ratio - 1.0 / 5f64.sqrt()).abs() < 1e-9);
    for row in &rows {
        let y: f64 = row[2].parse().unwrap();
        let t = (y - 0.4) / 5.0;
        assert!((row[3].parse::<f64>().unwrap() - (0.3 + 2.0 * t)).abs() < 1e-12);
        assert!((row[4].parse::<f64>().unwrap() - (-0.2 + t)).abs() < 1e-12);
    }
}

#[test]
fn sweep_rows_outside_tau_exit_4() {
    let r = run(&["sweep", "--grid", "linspace:0:1:3"], &problem("scalar", SCALAR));
    assert_eq!(r.code, 4);
    assert!(r.stderr.contains("tau"));
}

/// Endpoint and trapezoid defect recomputed from the emitted trajectory with
/// `f(x, u) = (x1, u)`.
fn check_double_integrator(csv_text: &str, b: [f64; 2]) -> f64 {
    let rows = trajectory_from_csv(csv_text, 2).unwrap();
    assert_eq!(rows.len(), 65);
    let n = (rows.len() - 1) as f64;
    let mut defect = 0.0f64;
    for w in rows.windows(2) {
        let (x0, x1, u) = (&w[0].1, &w[1].1, w[0].2.as_ref().unwrap());
        assert!(u[0].abs() <= 1.0 + 1e-9);
        let avg = [(x0[1] + x1[1]) / 2.0, u[0]];
        for k in 0..2 {
            defect = defect.max((x1[k] - x0[k] - avg[k] / n).abs());
        }
    }
    assert!(rows[64].2.is_none());
    let end = &rows[64].1;
    assert!(defect <= 1e-10, "defect {defect}");
    ((end[0] - b[0]).powi(2) + (end[1] - b[1]).powi(2)).sqrt()
}

#[test]
fn control_double_integrator() {
    let file = problem("di", DOUBLE_INTEGRATOR);
    let r = run(&["control", "--target", "0.1,0"], &file);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.contains("kalman_rank=2 controllable=true"));
    assert!(r.stderr.contains("reachable_interior=true"));
    assert!(check_double_integrator(&r.stdout, [0.1, 0.0]) <= 1e-9);

    let r = run(&["control", "--target", "0,0"], &file);
    assert_eq!(r.code, 0, "{}", r.stderr);
    for (_, x, u) in trajectory_from_csv(&r.stdout, 2).unwrap() {
        assert!(x.iter().chain(u.iter().flatten()).all(|&v| v == 0.0));
    }
}

#[test]
fn control_grid_is_calm() {
    let r = run(&["control", "--grid", "circle:0.05:8"], &problem("di", DOUBLE_INTEGRATOR));
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows = data_rows(&r.stdout);
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| &r[1] == "ok"));
    let gamma: f64 = summary(&r.stderr, "gamma").parse().unwrap();
    for row in &rows {
        assert!(row[4].parse::<f64>().unwrap() <= 1e-6);
        assert!(row[6].parse::<f64>().unwrap() <= gamma);
    }
}

#[test]
fn zero_input_matrix_is_uncontrollable() {
    let file = problem(
        "b_zero",
        r#"{"kind":"control","version":1,"dynamics":{"polynomial":{"state_dim":1,"control_dim":1,"rows":[[]]}},
          "control_set":{"box":{"lower":[-1],"upper":[1]}}}"#,
    );
    let r = run(&["control", "--target", "0.1"], &file);
    assert_eq!(r.code, 5);
    assert!(r.stderr.contains("kalman=false") && r.stderr.contains("reachable_interior=false"), "{}", r.stderr);
    assert!(r.stdout.is_empty());
}

#[test]
fn verify_two_x() {
    let file = problem("two_x", TWO_X);
    let r = run(&["verify", "--kappa", "0.5"], &file);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows = certificates_from_csv(&r.stdout).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|c| c.verdict == "true"));

    let r = run(&["verify", "--kappa", "0.4"], &file);
    assert_eq!(r.code, 6);
    assert!(r.stderr.contains("witness"), "{}", r.stderr);
    let rows = certificates_from_csv(&r.stdout).unwrap();
    assert!(rows.iter().all(|c| c.verdict == "false" && !c.witness.is_empty()));
}

#[test]
fn verify_generalized_includes_the_perturbation_bound() {
    let file = problem(
        "lg",
        r#"{"kind":"generalized","version":1,"matrix":[[1]],"base_x":[0],"radii":{"a":0.1,"b":0.1,"c":0.1},
          "perturbation":{"input_dim":1,"rows":[[{"coeff":0.2,"exponents":[2]}]]}}"#,
    );
    let r = run(&["verify", "--kappa", "1.5"], &file);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows = certificates_from_csv(&r.stdout).unwrap();
    let lg = rows.iter().find(|c| c.kind == "lg").unwrap();
    let bound = rows.iter().find(|c| c.kind == "lg_bound").unwrap();
    assert_eq!(lg.verdict, "true");
    assert!(lg.value <= bound.value);
    // kappa below reg F: the bound does not apply.
    assert_eq!(run(&["verify", "--kappa", "0.9"], &file).code, 6);
}

#[test]
fn counterexample_probe_is_informational() {
    let file = problem(
        "counterexample",
        r#"{"kind":"sampled","version":1,"mapping":{"counterexample":{"k_max":10}},"base_x":[0.0],
          "a":0.1,"b":0.1,"graph_radius":0.35,"lsc_radius":0.5}"#,
    );
    let r = run(&["verify", "--kappa", "1", "--grid", "505"], &file);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows = certificates_from_csv(&r.stdout).unwrap();
    let lsc = rows.iter().find(|c| c.kind == "lsc").unwrap();
    assert_eq!(lsc.verdict, "lsc-violated");
    assert!(lsc.value >= 1e-3 && lsc.samples >= 10);
}

#[test]
fn identical_runs_are_byte_identical() {
    let cases: [(&[&str], &str); 4] = [
        (&["moduli", "--seed", "7"], SCALAR),
        (&["solve", "--target", "0.1"], SCALAR),
        (&["sweep", "--grid", "linspace:-0.1:0.1:7"], SCALAR),
        (&["control", "--grid", "circle:0.05:4"], DOUBLE_INTEGRATOR),
    ];
    for (i, (args, json)) in cases.iter().enumerate() {
        let file = problem(&format!("det{i}"), json);
        let (a, b) = (run(args, &file), run(args, &file));
        assert_eq!(a.code, 0);
        assert_eq!(a.stdout, b.stdout);
        assert_eq!(a.stderr, b.stderr);
    }
}

#[test]
fn emitted_floats_round_trip() {
    let r = run(&["sweep", "--grid", "linspace:-0.1:0.1:11"], &problem("scalar", SCALAR));
    for row in data_rows(&r.stdout) {
        // y0 and x0.
        for field in row.iter().skip(2).take(2) {
            let v: f64 = field.parse().unwrap();
            assert_eq!(format_real(v), field);
        }
    }
    let r = run(&["solve", "--target", "0.1"], &problem("scalar", SCALAR));
    for line in r.stdout.lines().skip(1) {
        let (_, v) = line.split_once(',').unwrap();
        if let Ok(x) = v.parse::<f64>() {
            if v.contains('.') || v.contains('e') {
                assert_eq!(format_real(x), v);
            }
        }
    }
}

#[test]
fn out_flag_writes_the_file() {
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("moduli_out.csv");
    let r = run(&["moduli", "--out", out.to_str().unwrap()], &problem("identity", IDENTITY));
    assert_eq!(r.code, 0);
    assert!(r.stdout.is_empty());
    assert!(std::fs::read_to_string(out).unwrap().starts_with("kind,value"));
}
