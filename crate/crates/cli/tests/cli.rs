use std::path::Path;
use std::process::{Command, Output};

fn dbanova(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbanova"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn coeffs_central_difference() {
    let o = dbanova(&["coeffs", "--order", "1", "--scheme", "rate_optimal", "--rstar", "0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("item,index,value"));
    let coefs: Vec<f64> = text
        .lines()
        .filter(|l| l.starts_with("coefficient,"))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(coefs, vec![0.5, -0.5]);
    assert!(text.lines().any(|l| l.starts_with("gamma,2,")));
}

#[test]
fn exit_codes() {
    // Parameter errors.
    assert_eq!(code(&dbanova(&["coeffs", "--order", "1", "--nodes", "1,1"])), 2);
    assert_eq!(
        code(&dbanova(&["derivative", "--function", "ishigami", "--point", "0.5,1", "--subset", "1"])),
        2
    );
    assert_eq!(code(&dbanova(&["indices", "--function", "nope", "--budget", "100"])), 2);
    // A bandwidth that breaks the step bound.
    assert_eq!(
        code(&dbanova(&[
            "derivative", "--function", "ishigami", "--point", "0.5,1,0.2", "--subset", "1", "--xi", "10000",
        ])),
        3
    );
    // Coincident constraint rows.
    assert_eq!(
        code(&dbanova(&["coeffs", "--order", "2", "--scheme", "custom", "--exponents", "0,2", "--nodes", "1,-1"])),
        4
    );
}

#[test]
fn derivative_of_a_quadratic_is_within_its_stderr() {
    let o = dbanova(&[
        "derivative", "--function", "poly:2;3*x1*x2;x1^2", "--point", "0.3,-0.4", "--subset", "1,2", "--N", "200",
        "--seed", "5",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let row = text.lines().nth(1).unwrap();
    let fields: Vec<f64> = row.split("\",").nth(1).unwrap().split(',').take(2).map(|c| c.parse().unwrap()).collect();
    let (value, se) = (fields[0], fields[1]);
    assert!(se > 0.0 && se < 1.0, "{row}");
    assert!((value - 3.0).abs() < 4.0 * se, "{row}");
}

#[test]
fn design_round_trip_matches_direct_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("design.csv");
    let outputs = dir.path().join("outputs.csv");
    let common = ["--point", "0.2,0.7", "--subset", "1,2", "--N", "40", "--seed", "11"];

    let mut args = vec!["derivative"];
    args.extend(common);
    args.extend(["--export-design", design.to_str().unwrap()]);
    assert_eq!(code(&dbanova(&args)), 0);

    let table = std::fs::read_to_string(&design).unwrap();
    let mut out = String::from("row,output\n");
    for (k, line) in table.lines().skip(1).enumerate() {
        let f: Vec<f64> = line.split(',').skip(3).map(|c| c.parse().unwrap()).collect();
        out.push_str(&format!("{k},{:?}\n", f[0] * f[0] * f[1] + f[1]));
    }
    std::fs::write(&outputs, out).unwrap();

    let mut args = vec!["derivative"];
    args.extend(common);
    args.extend(["--outputs", outputs.to_str().unwrap(), "--design", design.to_str().unwrap()]);
    let imported = dbanova(&args);
    assert_eq!(code(&imported), 0, "{}", String::from_utf8_lossy(&imported.stderr));

    let mut args = vec!["derivative", "--function", "poly:2;x1^2*x2;x2"];
    args.extend(common);
    let direct = dbanova(&args);
    assert_eq!(stdout(&imported), stdout(&direct));

    // A design drawn with another seed is refused.
    let mut args = vec!["--seed", "12", "derivative"];
    args.extend(&common[..6]);
    args.extend(["--outputs", outputs.to_str().unwrap(), "--design", design.to_str().unwrap()]);
    assert_eq!(code(&dbanova(&args)), 2);
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn indices_table_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ishigami.csv");
    let o = dbanova(&[
        "indices", "--function", "ishigami", "--budget", "600", "--replicates", "2", "--seed", "3", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = read(&out);
    let mut lines = table.lines();
    assert_eq!(
        lines.next(),
        Some("function,estimator,L,budget,replicate,seed,j,quantity,raw,normalized,stderr,runs_used")
    );
    // Two replicates, three inputs, two quantities.
    assert_eq!(lines.count(), 12);
    // 100 points x 6 runs per gradient, plus the 100-run variance sample.
    for line in table.lines().skip(1) {
        let runs: usize = line.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(runs, 700, "{line}");
    }
    let meta: serde_json::Value = serde_json::from_str(&read(&dir.path().join("ishigami.meta.json"))).unwrap();
    assert!(meta.is_object());
    assert!(read(&dir.path().join("ishigami.aggregate.csv")).starts_with("function,estimator,L,budget,quantity,value,n_replicates"));
}

#[test]
fn thread_count_does_not_change_results() {
    let run = |extra: &[&str]| {
        let mut args = vec!["indices", "--function", "gfun_c", "--budget", "800", "--replicates", "3", "--seed", "21"];
        args.extend(extra);
        let o = dbanova(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    let a = run(&["--deterministic"]);
    assert_eq!(a, run(&["--threads", "4"]));
    assert_eq!(a, run(&["--deterministic"]));
}

#[test]
fn experiment_writes_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = dbanova(&[
        "experiment", "--function", "ishigami", "--budgets", "300,600", "--replicates", "3", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let agg = read(&dir.path().join("sweep.aggregate.csv"));
    // mse and gap for each budget.
    assert_eq!(agg.lines().count(), 1 + 4);
    assert!(agg.lines().skip(1).all(|l| l.ends_with(",3")));
}

#[test]
fn emulator_state_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("em.state");
    let pts = dir.path().join("pts.csv");
    std::fs::write(&pts, "a,b,c\n0.1,0.2,0.3\n-1,2,0.5\n").unwrap();
    let built = dir.path().join("built.csv");
    let o = dbanova(&[
        "emulate", "--function", "ishigami", "--s", "2", "--budget", "500", "--seed", "4", "--eval-points",
        pts.to_str().unwrap(), "--out", built.to_str().unwrap(), "--save-state", state.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("built.meta.json").exists());

    let o = dbanova(&["emulate", "--load-state", state.to_str().unwrap(), "--eval-points", pts.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let strip = |t: &str| -> Vec<String> {
        t.lines().map(|l| l.split(',').take(5).collect::<Vec<_>>().join(",")).collect()
    };
    assert_eq!(strip(&read(&built)), strip(&stdout(&o)));
    assert_eq!(stdout(&o).lines().count(), 3);

    std::fs::write(&state, "garbage").unwrap();
    let o = dbanova(&["emulate", "--load-state", state.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}
