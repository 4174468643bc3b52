use std::path::Path;
use std::process::{Command, Output};

fn wentropy(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wentropy"))
        .args(args)
        .current_dir(cwd)
        .env_remove("WENTROPY_OUT_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn template_dry_run_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let t = wentropy(&["template"], dir.path());
    assert!(t.status.success());
    std::fs::write(dir.path().join("run.toml"), &t.stdout).unwrap();
    let dry = wentropy(&["trace", "-c", "run.toml", "--set", "lattice.n=4", "--dry-run"], dir.path());
    assert!(dry.status.success());
    let text = stdout(&dry);
    assert!(text.contains("n = 4"), "{text}");
    assert!(text.contains("init_sites = [0]"));
    assert!(std::fs::read_dir(dir.path()).unwrap().count() == 1, "dry run wrote files");
}

#[test]
fn trace_analyze_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "[lattice]\nn = 3\n[physics]\nt_max = 8.0\n").unwrap();
    let o = wentropy(&["trace", "-c", "run.toml", "--out", "a"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = dir.path().join("a/trace_chain_n3_N1_s0.csv");
    let first = std::fs::read(&csv).unwrap();
    assert!(String::from_utf8_lossy(&first).starts_with("# n=3,N=1,shape=chain"));

    // the sidecar alone reproduces the trace
    let o = wentropy(&["trace", "-c", "a/trace_chain_n3_N1_s0.json", "--out", "b"], dir.path());
    assert!(o.status.success());
    assert_eq!(std::fs::read(dir.path().join("b/trace_chain_n3_N1_s0.csv")).unwrap(), first);

    let o = wentropy(
        &["analyze", "a/trace_chain_n3_N1_s0.csv", "--fit", "linear,period", "--period-column", "s_f", "--out", "a"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(dir.path().join("a/analysis.csv")).unwrap();
    let row = report.lines().last().unwrap();
    assert!(row.starts_with("3,1,chain,0,"), "{row}");
    assert!(row.ends_with(",true"), "{row}");
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_wentropy"))
        .args(["trace", "--set", "lattice.n=2", "--set", "physics.t_max=1.0", "--set", "entropy.enable_w=false"])
        .current_dir(dir.path())
        .env("WENTROPY_OUT_DIR", "env-out")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("env-out/trace_chain_n2_N1_s0.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_key = wentropy(&["trace", "--set", "physics.speed=2"], dir.path());
    assert_eq!(bad_key.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("config:"));
    let bad_sites = wentropy(&["trace", "--set", "physics.init_sites=[9]"], dir.path());
    assert_eq!(bad_sites.status.code(), Some(2));
    let unknown = wentropy(&["figure", "fig99"], dir.path());
    assert_eq!(unknown.status.code(), Some(2));
    std::fs::write(dir.path().join("broken.csv"), "# n=3,N=1\nt,s_f,s_x,dropped_mass,error_bound\n").unwrap();
    let schema = wentropy(&["analyze", "broken.csv"], dir.path());
    assert_eq!(schema.status.code(), Some(2));
    // a frame whose window cannot hold the levels fails numerically
    let small = wentropy(&["frame-build", "--set", "frame.window_x=1", "--set", "frame.window_k=1"], dir.path());
    assert_eq!(small.status.code(), Some(3), "{}", String::from_utf8_lossy(&small.stderr));
    assert!(String::from_utf8_lossy(&small.stderr).contains("wannier:"));
}

#[test]
fn frame_build_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let o = wentropy(&["frame-build", "--out", "f"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = {
        let entry = std::fs::read_dir(dir.path().join("f"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .find(|p| p.extension().is_some_and(|e| e == "json"))
            .unwrap();
        serde_json::from_str(&std::fs::read_to_string(entry).unwrap()).unwrap()
    };
    assert!(json["report"]["gram_deviation"].as_f64().unwrap() < 1e-8);

    let args = [
        "sweep", "--family", "sites", "--values", "2,3,4", "--fit", "period", "--set", "analysis.period_column=\"s_f\"",
        "--set", "entropy.enable_w=false", "--out", "s", "--workers", "2",
    ];
    let o = wentropy(&args, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "n,N,shape,init_sites,k,b,r2_lin,A,omega,r2_sat,T,found");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("2,1,chain,0,"));

    // a point that cannot run is reported and the rest still complete
    let o = wentropy(&["sweep", "--family", "particles", "--values", "1,9", "--set", "entropy.enable_w=false", "--out", "p"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let csv = std::fs::read_to_string(dir.path().join("p/sweep.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 3);
}
