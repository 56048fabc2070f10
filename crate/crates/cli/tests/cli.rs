use std::process::{Command, Output};

fn growamq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_growamq")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const HEADER: &str = "variant,epsilon,w,seed,trial,n,level,records,space_bits,bits_per_element,fpr,fpr_stderr,mean_probes,p99_probes,rebuilds,wall_ns_per_op";

#[test]
fn fpr_writes_csv_to_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fpr.csv");
    let o = growamq(&["fpr", "--inserts", "4096", "--queries", "20000", "--trials", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let csv = std::fs::read_to_string(&out).unwrap();
    let body: Vec<_> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], HEADER);
    assert_eq!(body.len(), 1 + 3 + 1);
    assert!(body[4].starts_with("grow,0.015625,32,1,pooled,4096,"));
    assert!(csv.lines().any(|l| l.starts_with("# hash_params trial=2 ")));
}

#[test]
fn identical_specs_give_identical_bytes() {
    let args = ["space", "--variant", "grow-bucketed", "--inserts", "5000", "--seed", "9"];
    let a = growamq(&args);
    let b = growamq(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("grow-bucketed/interleaved,"));
}

#[test]
fn space_rows_per_checkpoint() {
    let o = growamq(&["space", "--inserts", "20000", "--i0", "10"]);
    assert!(o.status.success());
    let rows: Vec<_> = stdout(&o).lines().filter(|l| l.starts_with("grow,")).map(String::from).collect();
    let ns: Vec<u64> = rows.iter().map(|r| r.split(',').nth(5).unwrap().parse().unwrap()).collect();
    assert_eq!(ns, [1024, 2048, 4096, 8192, 16384, 20000]);
}

#[test]
fn bench_fills_wall_time() {
    let o = growamq(&["bench", "--inserts", "2048", "--queries", "10000"]);
    assert!(o.status.success());
    let pooled = stdout(&o).lines().find(|l| l.contains(",pooled,")).unwrap().to_string();
    assert!(!pooled.ends_with(','));
}

#[test]
fn verify_passes_on_file_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("stream.txt");
    let mut text = String::new();
    for x in 0..3000u32 {
        text.push_str(&format!("{:08x}\n", x.wrapping_mul(2_654_435_761)));
        if x % 5 == 4 {
            text.push_str(&format!("-{:08x}\n", (x - 2).wrapping_mul(2_654_435_761)));
        }
    }
    std::fs::write(&input, text).unwrap();
    for variant in ["grow", "grow-deletions"] {
        let mut args = vec!["verify", "--variant", variant, "--i0", "3", "--input", input.to_str().unwrap()];
        if variant == "grow" {
            args.push("--deletions");
        }
        let o = growamq(&args);
        assert!(o.status.success(), "{variant}: {}", stderr(&o));
    }
}

#[test]
fn verify_reports_an_injected_fault() {
    let o = growamq(&["verify", "--inserts", "2000", "--i0", "3", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("false negative") && err.contains("key 0x") && err.contains("level"), "{err}");
}

#[test]
fn malformed_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.txt");
    std::fs::write(&input, "0000dead\n-0000dead\nDEAD\n").unwrap();
    let o = growamq(&["fpr", "--queries", "10000", "--input", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"));

    let o = growamq(&["fpr", "--input", dir.path().join("missing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_arguments_are_usage_errors() {
    for args in [
        &["fpr", "--queries", "100"][..],
        &["fpr", "--epsilon", "2"],
        &["fpr", "--epsilon", "1/0x"],
        &["fpr", "--variant", "bogus"],
        &["fpr", "--trials", "0"],
        &["space", "--variant", "grow-deamortized", "--deletions"],
        &["space", "--variant", "chain", "--deletions"],
    ] {
        let o = growamq(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn empty_filter_has_zero_fpr() {
    let o = growamq(&["fpr", "--inserts", "0", "--queries", "10000", "--variant", "chain"]);
    assert!(o.status.success());
    let pooled = stdout(&o).lines().find(|l| l.contains(",pooled,")).unwrap().to_string();
    assert_eq!(pooled.split(',').nth(10), Some("0.000000000"));
}
