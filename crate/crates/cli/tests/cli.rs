use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pbsim(args: &[&str], out_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pbsim"));
    cmd.args(args);
    cmd.env_remove("PBSIM_OUT_DIR");
    if let Some(d) = out_dir {
        cmd.env("PBSIM_OUT_DIR", d);
    }
    cmd.output().expect("binary runs")
}

fn write_params(dir: &Path) -> String {
    let p = dir.join("params.toml");
    fs::write(&p, "page_pool = 64\naccesses = 3000\nseed = 7\n").unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn gen_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let params = write_params(dir.path());
    let trace = dir.path().join("t.trace");
    let out = pbsim(&["gen", "--params", &params, "--out", trace.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = pbsim(&["inspect", "--trace", trace.to_str().unwrap()], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("records      3000"), "{text}");

    let bin = dir.path().join("t.bin");
    let out = pbsim(&["gen", "--params", &params, "--out", bin.to_str().unwrap(), "--binary"], None);
    assert!(out.status.success());
    let again = pbsim(&["inspect", "--trace", bin.to_str().unwrap()], None);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn run_plan_with_env_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let params = write_params(dir.path());
    let trace = dir.path().join("t.trace");
    assert!(pbsim(&["gen", "--params", &params, "--out", trace.to_str().unwrap()], None).status.success());
    let plan = dir.path().join("plan.toml");
    fs::write(
        &plan,
        "output_dir = \"unused\"\nparallelism = 2\nbaseline = \"t/baseline\"\n\
         [[run]]\nlabel = \"t\"\ntrace = \"t.trace\"\nschemes = [\"baseline\", \"page-buffer\"]\n",
    )
    .unwrap();
    let out_dir = dir.path().join("env-out");
    let out = pbsim(&["run", "--plan", plan.to_str().unwrap()], Some(&out_dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(out_dir.join("speedup.tsv").exists());
    assert!(!dir.path().join("unused").exists());

    let out2 = dir.path().join("env-out2");
    assert!(pbsim(&["run", "--plan", plan.to_str().unwrap(), "--jobs", "1"], Some(&out2)).status.success());
    assert_eq!(fs::read_to_string(out2.join("summary.csv")).unwrap(), csv);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_trace = dir.path().join("bad.trace");
    fs::write(&bad_trace, "0 R 0x40\n1 X 0x80\n").unwrap();
    let out = pbsim(&["inspect", "--trace", bad_trace.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let missing = dir.path().join("nope.trace");
    assert_eq!(pbsim(&["inspect", "--trace", missing.to_str().unwrap()], None).status.code(), Some(3));

    let plan = dir.path().join("plan.toml");
    fs::write(&plan, "[[run]]\nlabel = \"a\"\ntrace = \"bad.trace\"\nscheme = \"warp-drive\"\n").unwrap();
    assert_eq!(pbsim(&["run", "--plan", plan.to_str().unwrap()], Some(dir.path())).status.code(), Some(2));

    fs::write(&plan, "[[run]]\nlabel = \"a\"\ntrace = \"bad.trace\"\n").unwrap();
    assert_eq!(pbsim(&["run", "--plan", plan.to_str().unwrap()], Some(dir.path())).status.code(), Some(3));

    let params = dir.path().join("p.toml");
    fs::write(&params, "revisit_prob = 2.0\n").unwrap();
    let out = pbsim(&["gen", "--params", params.to_str().unwrap(), "--out", "/dev/null"], None);
    assert_eq!(out.status.code(), Some(2));
}
