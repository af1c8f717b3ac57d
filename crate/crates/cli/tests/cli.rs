use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spincat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spincat")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn repeated_runs_write_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiment ahtcheck\nsystem preset benzene6\naht_tc 2e-5 1e-4 3\n");
    let out = tmp.path().join("a");
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let o = spincat(&["ahtcheck", "--config", &cfg, "--out", out.to_str().unwrap(), "--no-header"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        snapshots.push(read_dir_sorted(&out));
    }
    let (fa, fb) = (&snapshots[0], &snapshots[1]);
    assert!(fa.iter().any(|(n, _)| n == "aht.csv"));
    assert_eq!(fa, fb);
}

#[test]
fn unknown_key_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiment run\nsytem preset benzene6\n");
    let o = spincat(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error code=2 kind="), "{err}");
    assert!(err.contains("message=\""), "{err}");
}

#[test]
fn missing_config_file_is_a_config_error() {
    let o = spincat(&["run", "--config", "/nonexistent/none.cfg"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oversized_dense_request_is_a_physics_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiment run\nsystem preset benzene12\ninitial thermal\n");
    let o = spincat(&["run", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn subcommand_and_flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiment lifetime\nsystem preset benzene6\noutput elsewhere\nheader on\n");
    let out = tmp.path().join("aht");
    let o = spincat(&["ahtcheck", "--config", &cfg, "--out", out.to_str().unwrap(), "--no-header"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("aht.csv").exists());
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(!report.starts_with('#'));
    let echoed = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echoed.contains("experiment ahtcheck"));
    assert!(!tmp.path().join("elsewhere").exists());
}

#[test]
fn header_line_is_written_by_default() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiment ahtcheck\nsystem preset benzene6\naht_tc 2e-5 1e-4 3\n");
    let out = tmp.path().join("o");
    let o = spincat(&["ahtcheck", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.starts_with("# spincat "), "{report}");
}

#[test]
fn plot_prints_a_gnuplot_script() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiment catdemo\n");
    let o = spincat(&["plot", "--config", &cfg, "--out", "demo"]);
    assert!(o.status.success());
    let script = String::from_utf8_lossy(&o.stdout);
    assert!(script.contains("plot"), "{script}");
    assert!(script.contains("demo"), "{script}");
}

#[test]
fn help_lists_exit_codes() {
    let o = spincat(&["--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("Exit codes"));
}
