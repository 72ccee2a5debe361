use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "benchmark,size,reps,median_seconds,metric";

fn streamforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamforge"))
        .args(args)
        .env_remove("STREAMFORGE_DEVICES")
        .output()
        .unwrap()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn transfer_benchmark_under_the_timing_model() {
    let o = streamforge(&[
        "--latency-us", "50", "--bandwidth", "6e9", "bench", "transfer", "--min-bytes", "1024", "--max-bytes", "1048576",
        "--factor", "4", "--reps", "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some(HEADER));
    let rows = rows(&out);
    // Six sizes, three paths.
    assert_eq!(rows.len(), 18);
    for path in ["copyin", "copyout", "bind"] {
        let bw: Vec<f64> = rows.iter().filter(|r| r[0] == path).map(|r| r[4].parse().unwrap()).collect();
        assert_eq!(bw.len(), 6);
        assert!(bw.windows(2).all(|w| w[1] >= w[0]), "{path}: {bw:?}");
    }
    let metric = |path: &str| -> Vec<f64> { rows.iter().filter(|r| r[0] == path).map(|r| r[4].parse().unwrap()).collect() };
    assert!(metric("bind").iter().zip(metric("copyin")).all(|(b, c)| *b <= c));
    assert!(rows.iter().all(|r| r[2] == "3"));
}

#[test]
fn csv_is_written_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let o = streamforge(&[
        "bench", "transfer", "--min-bytes", "1", "--max-bytes", "64", "--factor", "8", "--csv", path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some(HEADER));
    assert_eq!(rows(&text).len(), 9);
}

#[test]
fn too_few_repetitions_is_a_usage_error() {
    let o = streamforge(&["bench", "transfer", "--reps", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("reps"));
    assert_eq!(streamforge(&["bench", "gemm", "--reps", "2"]).status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_with_two() {
    assert_eq!(streamforge(&["bench", "frobnicate"]).status.code(), Some(2));
    assert_eq!(streamforge(&["bench", "transfer", "--min-bytes", "100", "--max-bytes", "10"]).status.code(), Some(2));
    assert_eq!(streamforge(&["bench", "gemm", "--sizes", "8"]).status.code(), Some(2));
    assert_eq!(streamforge(&["--device", "5", "bench", "gemm", "--sizes", "16"]).status.code(), Some(2));
    assert_eq!(streamforge(&["--latency-us", "5", "bench", "transfer"]).status.code(), Some(2));
    assert_eq!(streamforge(&["solve", "run", "--config", "/nonexistent.toml"]).status.code(), Some(2));
    assert_eq!(streamforge(&["solve", "converge", "--orders", "0"]).status.code(), Some(2));
    assert_eq!(streamforge(&["--help"]).status.code(), Some(0));
}

#[test]
fn unwritable_output_exits_with_one() {
    let o = streamforge(&["bench", "gemm", "--sizes", "16", "--csv", "/nonexistent/dir/out.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gemm_benchmark_rows() {
    let o = streamforge(&["bench", "gemm", "--sizes", "16,32,64", "--reps", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some(HEADER));
    let rows = rows(&out);
    assert_eq!(rows.len(), 6);
    for size in ["16", "32", "64"] {
        let get = |b: &str| -> f64 { rows.iter().find(|r| r[0] == b && r[1] == size).unwrap()[4].parse().unwrap() };
        assert!(get("gemm-kernel") >= get("gemm-transfers"), "size {size}");
    }
}

fn write_config(dir: &Path, t_end: f64) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("p = 2\nn_elements = 8\ndt = 0.01\nt_end = {t_end}\n")).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn solve_run_reports_throughput_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.2);
    let diag = dir.path().join("diag.csv");
    let o = streamforge(&["solve", "run", "--config", &cfg, "--diagnostics", diag.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some(HEADER));
    let rows = rows(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1], "24");
    let summary = String::from_utf8_lossy(&o.stderr);
    assert!(summary.contains("steps=20"), "{summary}");
    assert!(summary.contains("4.6e11"), "{summary}");
    let d = std::fs::read_to_string(&diag).unwrap();
    assert!(d.starts_with("step,t,l2_error,conserved_integral\n"));
    assert_eq!(d.lines().count(), 3);
}

#[test]
fn zero_step_run_still_prints_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.0);
    let o = streamforge(&["solve", "run", "--config", &cfg, "--reps", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("steps=0"));
    assert_eq!(rows(&stdout(&o)).len(), 1);
}

#[test]
fn convergence_table() {
    let o = streamforge(&["solve", "converge", "--orders", "1,2", "--meshes", "8,16,32"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 7, "{out}");
    let header: Vec<&str> = lines[0].split(',').collect();
    let order_col = header.iter().position(|h| *h == "order").unwrap();
    for l in &lines[1..] {
        let cells: Vec<&str> = l.split(',').collect();
        let p: f64 = cells[0].parse().unwrap();
        if let Ok(order) = cells[order_col].parse::<f64>() {
            assert!(order >= p + 0.5, "{l}");
        }
    }
}
