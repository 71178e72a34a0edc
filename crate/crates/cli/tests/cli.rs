use std::fs;
use std::process::{Command, Output};

fn cdag(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cdag"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL: &[&str] = &[
    "--n",
    "16",
    "--alpha",
    "2",
    "--k",
    "8",
    "--slots",
    "6",
    "--tau-s",
    "10",
    "--block-bytes",
    "200000",
];

#[test]
fn run_then_replay_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["run", "--seeds", "1,2", "--trace", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    let csv = stdout(&cdag(&args, &[]));
    assert_eq!(csv, fs::read_to_string(out.join("results.csv")).unwrap());
    assert_eq!(csv.lines().count(), 4, "header, two runs, mean row:\n{csv}");
    assert!(out.join("trace-1.ndjson").exists());

    let again = dir.path().join("again");
    let o = cdag(
        &["replay", out.to_str().unwrap(), "--out", again.to_str().unwrap()],
        &[],
    );
    assert_eq!(stdout(&o).trim(), "identical");

    // A tampered results file no longer matches.
    fs::write(out.join("results.csv"), csv.replace(",1,", ",9,")).unwrap();
    let o = cdag(
        &[
            "replay",
            out.to_str().unwrap(),
            "--out",
            dir.path().join("third").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn environment_sets_keys_and_flags_win() {
    let env = [
        ("CDAG_N", "16"),
        ("CDAG_ALPHA", "2"),
        ("CDAG_K", "8"),
        ("CDAG_SLOTS", "4"),
        ("CDAG_TAU_S", "10"),
    ];
    let csv = stdout(&cdag(&["run", "--block-bytes", "200000"], &env));
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..2], ["16", "2"]);
    let csv = stdout(&cdag(&["run", "--block-bytes", "200000", "--alpha", "1"], &env));
    assert_eq!(csv.lines().nth(1).unwrap().split(',').nth(1), Some("1"));
}

#[test]
fn export_writes_dot_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let dot = dir.path().join("ledger.dot");
    let mut args = vec!["export", "--format", "dot", "--out", dot.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    stdout(&cdag(&args, &[]));
    assert!(fs::read_to_string(&dot).unwrap().starts_with("digraph"));

    let mut args = vec!["export"];
    args.extend_from_slice(SMALL);
    let json: serde_json::Value = serde_json::from_str(&stdout(&cdag(&args, &[]))).unwrap();
    assert!(json.is_object());
}

#[test]
fn sweep_expands_plan() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.toml");
    fs::write(
        &plan,
        "name = \"tiny\"\nseeds = [1]\n[base]\nn = 16\nalpha = 2\nk = 8\nslots = 4\ntau_s = 10.0\nblock_bytes = 200000\n[sweep]\nalpha = [1, 2]\n",
    )
    .unwrap();
    let csv = stdout(&cdag(&["sweep", "--plan", plan.to_str().unwrap()], &[]));
    let alphas: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(alphas, ["1", "2"]);
}

#[test]
fn bad_input_is_reported() {
    let o = cdag(&["run", "--n", "3", "--alpha", "4"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}
