use std::fs::File;
use std::path::Path;
use std::process::{Command, Output};

use verify::{History, Val};

fn dsbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsbench")).args(args).output().expect("dsbench runs")
}

fn path(dir: &tempfile::TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_prints_a_summary_and_appends_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(&dir, "m.csv");
    for seed in ["1", "2"] {
        let o = dsbench(&["run", "--algo", "cqueue", "--islands", "2", "--cores", "4", "--ops", "40", "--seed", seed, "--csv", &csv]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let s = stdout(&o);
        assert!(s.starts_with("cqueue m=2 c=4 N=40 W=0"), "{s}");
        assert!(s.contains("ops=40") && s.contains("sf=1.0000"), "{s}");
    }
    let mut r = csv::Reader::from_path(&csv).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, dsbench::metrics::CSV_HEADER);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!((&rows[0][0], &rows[0][5], &rows[1][5]), ("cqueue", "1", "2"));
}

#[test]
fn recorded_history_checks_out() {
    let dir = tempfile::tempdir().unwrap();
    let hist = path(&dir, "h.csv");
    let events = path(&dir, "e.csv");
    let o = dsbench(&[
        "run", "--algo", "dstack", "--islands", "1", "--cores", "8", "--clients", "3", "--ops", "9", "--mix", "random", "--seed", "4",
        "--history", &hist, "--events", &events,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let h = History::read_csv(std::io::BufReader::new(File::open(&hist).unwrap())).unwrap();
    assert_eq!(h.operations().len(), 9);
    assert!(std::fs::read_to_string(&events).unwrap().lines().count() > 9);

    let o = dsbench(&["check", "--history", &hist, "--spec", "stack"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "linearizable (9 operations)");
}

fn write_history(p: &Path, h: &History) {
    h.write_csv(File::create(p).unwrap()).unwrap();
}

#[test]
fn check_rejects_a_bad_history_with_its_failing_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let hist = path(&dir, "bad.csv");
    let mut h = History::new();
    h.invoke(0, "push", &[1]).unwrap();
    h.respond(0, Val::Unit).unwrap();
    h.invoke(0, "push", &[2]).unwrap();
    h.respond(0, Val::Unit).unwrap();
    h.invoke(1, "pop", &[]).unwrap();
    h.respond(1, Val::Int(1)).unwrap();
    write_history(Path::new(&hist), &h);
    let o = dsbench(&["check", "--history", &hist, "--spec", "stack"]);
    assert_eq!(o.status.code(), Some(1));
    let s = stdout(&o);
    assert!(s.starts_with("not linearizable"), "{s}");
    assert!(s.contains("pop"), "{s}");
}

#[test]
fn bad_arguments_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsbench(&["check", "--history", &path(&dir, "missing.csv"), "--spec", "set"]);
    assert_eq!(o.status.code(), Some(2));
    let o = dsbench(&["run", "--algo", "tqueue", "--hier", "on"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("island batches"));
}
