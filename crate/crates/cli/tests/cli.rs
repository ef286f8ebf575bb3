//! Drives the `crossreg` binary: outputs, determinism and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const FAST_CONFIG: &str = "\
# small runs for tests
[suite]
pairs = 2
seed = 5

[estimator]
ransac_iterations = 1000
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_crossreg"));
    c.env_remove("CROSSREG_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("fast.ini");
    fs::write(&config, FAST_CONFIG).unwrap();
    let data = root.join("data");
    let o = run(&["gen", "--config", s(&config), "--out", s(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    Fixture {
        _dir: dir,
        root,
        config,
        data,
    }
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.txt" {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_layout_and_determinism() {
    let f = fixture();
    let pairs: Vec<_> = fs::read_dir(&f.data)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(pairs.len(), 2);
    for p in &pairs {
        assert_eq!(fs::read_dir(p).unwrap().count(), 4);
    }
    let manifest = fs::read_to_string(f.data.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed.suite = 5"));
    assert!(manifest.contains("[encoder]"));

    let again = f.root.join("again");
    let o = bin()
        .args(["gen", "--config", s(&f.config), "--out", s(&again)])
        .env("CROSSREG_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(files_under(&f.data), files_under(&again));

    let other = f.root.join("other");
    assert_eq!(
        code(&run(&[
            "gen",
            "--config",
            s(&f.config),
            "--out",
            s(&other),
            "--seed",
            "6",
            "--count",
            "1"
        ])),
        0
    );
    let a = fs::read(f.data.join("pair_0000/meta.txt")).unwrap();
    let b = fs::read(other.join("pair_0000/meta.txt")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn register_then_eval() {
    let f = fixture();
    let out = f.root.join("res");
    let args = [
        "register",
        s(&f.data),
        "--config",
        s(&f.config),
        "--estimator",
        "all",
        "--out",
        s(&out),
    ];
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(out.join("table.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), table);
    for label in ["LGR", "RANSAC-1K", "Weighted SVD"] {
        assert!(table.contains(label), "{table}");
    }
    let records = out.join("records.tsv");
    let text = fs::read_to_string(&records).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3);
    assert!(fs::read_to_string(out.join("manifest.txt"))
        .unwrap()
        .contains("input = "));

    // same inputs, same bytes
    let out2 = f.root.join("res2");
    let mut args2 = args;
    args2[7] = s(&out2);
    assert_eq!(code(&run(&args2)), 0);
    assert_eq!(files_under(&out), files_under(&out2));

    // defaults reproduce the registration table
    let e = run(&["eval", s(&records)]);
    assert_eq!(code(&e), 0);
    assert_eq!(String::from_utf8_lossy(&e.stdout), table);

    let e = run(&[
        "eval",
        s(&records),
        "--sweep",
        "--out",
        s(&f.root.join("ev")),
    ]);
    assert_eq!(code(&e), 0);
    let stdout = String::from_utf8_lossy(&e.stdout).into_owned();
    let sweep: Vec<&str> = stdout
        .lines()
        .skip_while(|l| !l.starts_with("rre_deg"))
        .skip(1)
        .collect();
    assert_eq!(sweep.len(), 12 * 3);
    for label in ["LGR", "RANSAC-1K", "Weighted SVD"] {
        let recalls: Vec<f64> = sweep
            .iter()
            .filter(|l| l.split('\t').nth(2) == Some(label))
            .map(|l| l.split('\t').nth(3).unwrap().parse().unwrap())
            .collect();
        assert!(
            recalls.windows(2).all(|w| w[1] >= w[0]),
            "{label}: {recalls:?}"
        );
    }
    assert!(f.root.join("ev/eval.txt").is_file());
    assert!(f.root.join("ev/manifest.txt").is_file());
}

#[test]
fn ablation_flags_on_a_single_pair() {
    let f = fixture();
    let pair = f.data.join("pair_0001");
    let out = f.root.join("abl");
    let o = run(&[
        "register",
        s(&pair),
        "--config",
        s(&f.config),
        "--no-omp",
        "--attention",
        "geo_self",
        "--estimator",
        "weighted_svd",
        "--out",
        s(&out),
        "--seed",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.join("records.tsv")).unwrap();
    assert!(text
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("pair_0001\tWeighted SVD\tok\t"));
    assert!(text.contains("\tdisabled\t"));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("attention = geo_self"));
    assert!(manifest.contains("seed.estimator = 3"));
}

#[test]
fn pairs_without_meta_still_register() {
    let f = fixture();
    let pair = f.data.join("pair_0000");
    fs::remove_file(pair.join("meta.txt")).unwrap();
    fs::remove_file(pair.join("view.pgm")).unwrap();
    let out = f.root.join("res");
    let o = run(&[
        "register",
        s(&pair),
        "--config",
        s(&f.config),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.join("records.tsv")).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[2], "ok");
    assert_eq!(row[3], "-");
    assert_eq!(row[8], "fallback_no_image");
    assert_ne!(row[14], "-");
}

#[test]
fn malformed_ply_names_file_and_offset() {
    let f = fixture();
    let ply = f.data.join("pair_0001/target.ply");
    let text = fs::read_to_string(&ply).unwrap();
    let header_end = text.find("end_header\n").unwrap() + "end_header\n".len();
    let mut broken = text[..header_end].to_string();
    broken.push_str("1.0 2.0 oops\n");
    fs::write(&ply, broken).unwrap();
    let o = run(&[
        "register",
        s(&f.data),
        "--config",
        s(&f.config),
        "--out",
        s(&f.root.join("r")),
    ]);
    assert_eq!(code(&o), 4);
    let err = stderr(&o);
    assert!(err.contains("target.ply"), "{err}");
    assert!(err.contains(&format!("byte {}", header_end + 8)), "{err}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let o = run(&["register", "--bogus"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(code(&run(&["frobnicate"])), 3);
    assert_eq!(code(&run(&["--help"])), 0);

    let bad = root.join("bad.ini");
    fs::write(
        &bad,
        "[suite]\npairs = 2\n\n[estimator]\nransac_iterations = many\n",
    )
    .unwrap();
    let o = run(&["gen", "--config", s(&bad), "--out", s(&root.join("g"))]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("bad.ini:5"), "{}", stderr(&o));

    let o = bin()
        .args(["gen", "--out", s(&root.join("g")), "--count", "1"])
        .env("CROSSREG_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);

    // output path blocked by a regular file
    let blocker = root.join("file");
    fs::write(&blocker, "x").unwrap();
    assert_eq!(
        code(&run(&[
            "gen",
            "--out",
            s(&blocker.join("sub")),
            "--count",
            "1"
        ])),
        2
    );
    assert_eq!(code(&run(&["register", s(&root.join("missing"))])), 2);
    assert_eq!(code(&run(&["eval", s(&root.join("missing.tsv"))])), 2);

    let empty = root.join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(code(&run(&["register", s(&empty)])), 5);
    let header_only = root.join("r.tsv");
    let o = run(&["eval", s(&header_only)]);
    assert_eq!(code(&o), 2);
    fs::write(&header_only, "").unwrap();
    assert_eq!(code(&run(&["eval", s(&header_only)])), 5);
    fs::write(&header_only, "not\ta\theader\n").unwrap();
    assert_eq!(code(&run(&["eval", s(&header_only)])), 4);
    assert_eq!(
        code(&run(&["eval", s(&header_only), "--rre-thresh", "-1"])),
        3
    );
}

#[test]
fn selftest_and_fault_injection() {
    let o = run(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 10);

    let o = run(&["selftest", "--inject-fault", "sinkhorn_marginals"]);
    assert_eq!(code(&o), 1);
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(stdout
        .lines()
        .any(|l| l.starts_with("FAIL sinkhorn_marginals")));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("FAIL")).count(), 1);
    assert_eq!(code(&run(&["selftest", "--inject-fault", "nope"])), 3);
    let help = run(&["selftest", "--help"]);
    assert!(!String::from_utf8_lossy(&help.stdout).contains("inject"));
}
