use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

const SMALL: &str = "\
synthetic.n_source_docs = 6
synthetic.n_target_docs = 4
synthetic.n_pretrain_pages = 20
synthetic.n_domains = 20
";

const TINY_MODEL: &str = "\
model.d_model = 16
model.n_layers = 1
model.n_heads = 2
model.ffn_dim = 32
steps = 4
batch_size = 2
";

fn docquery(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docquery"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = docquery(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    docquery(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn gen_and_mine_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("small.conf");
    fs::write(&conf, SMALL).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["gen", "--out", p(out), "--config", p(&conf), "--seed", "3"]);
    }
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));
    assert_eq!(read_dir_bytes(&a.join("pages")), read_dir_bytes(&b.join("pages")));

    let (ma, mb) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let summary = ok(&["mine", "--in", p(&a.join("pages")), "--out", p(&ma)]);
    assert!(summary.starts_with("20 groups"), "{summary}");
    ok(&["mine", "--in", p(&b.join("pages")), "--out", p(&mb)]);
    assert_eq!(fs::read(&ma).unwrap(), fs::read(&mb).unwrap());
}

#[test]
fn train_eval_and_predict_round() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let conf = d.join("small.conf");
    fs::write(&conf, SMALL).unwrap();
    let tiny = d.join("tiny.conf");
    fs::write(&tiny, TINY_MODEL).unwrap();
    ok(&["gen", "--out", p(&d.join("data")), "--config", p(&conf)]);
    ok(&[
        "mine",
        "--in",
        p(&d.join("data/pages")),
        "--out",
        p(&d.join("web.jsonl")),
    ]);

    let source = d.join("data/source.jsonl");
    let target = d.join("data/target.jsonl");
    ok(&[
        "pretrain",
        "--in",
        p(&d.join("web.jsonl")),
        "--config",
        p(&tiny),
        "--vocab-corpus",
        p(&source),
        "--params-out",
        p(&d.join("pre.bin")),
        "--trace-out",
        p(&d.join("pre.csv")),
    ]);
    let trace = fs::read_to_string(d.join("pre.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("step,loss"));
    assert_eq!(trace.lines().count(), 5);

    ok(&[
        "finetune",
        "--in",
        p(&source),
        "--config",
        p(&tiny),
        "--params-in",
        p(&d.join("pre.bin")),
        "--params-out",
        p(&d.join("ft.bin")),
    ]);
    let table = ok(&[
        "eval",
        "--in",
        p(&target),
        "--params-in",
        p(&d.join("ft.bin")),
        "--report-out",
        p(&d.join("report.txt")),
    ]);
    assert!(table.contains("macro-F1"), "{table}");
    assert_eq!(fs::read_to_string(d.join("report.txt")).unwrap(), table);
    assert!(d.join("report.json").exists());

    ok(&[
        "predict",
        "--in",
        p(&target),
        "--params-in",
        p(&d.join("ft.bin")),
        "--out",
        p(&d.join("pred.jsonl")),
    ]);
    assert_eq!(
        fs::read_to_string(d.join("pred.jsonl")).unwrap().lines().count(),
        4
    );

    let summary = ok(&["params-summary", "--params-in", p(&d.join("ft.bin"))]);
    assert!(summary.contains("s_prompt"), "{summary}");

    // A partial entity map names what is missing.
    let map = d.join("map.conf");
    fs::write(&map, "answer = answer\n").unwrap();
    let out = docquery(&[
        "eval",
        "--in",
        p(&target),
        "--params-in",
        p(&d.join("ft.bin")),
        "--entity-map",
        p(&map),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("header"));
}

#[test]
fn fewshot_keeps_k_documents() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let conf = d.join("small.conf");
    fs::write(&conf, SMALL).unwrap();
    ok(&["gen", "--out", p(&d.join("data")), "--config", p(&conf)]);
    let src = d.join("data/source.jsonl");
    ok(&[
        "fewshot",
        "--in",
        p(&src),
        "--out",
        p(&d.join("k3.jsonl")),
        "--k",
        "3",
        "--seed",
        "1",
    ]);
    assert_eq!(fs::read_to_string(d.join("k3.jsonl")).unwrap().lines().count(), 3);
    assert_eq!(
        code(&[
            "fewshot",
            "--in",
            p(&src),
            "--out",
            p(&d.join("k.jsonl")),
            "--k",
            "60"
        ]),
        2
    );
}

#[test]
fn decode_debug_reads_stdin() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_docquery"))
        .args(["decode-debug", "--in", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    // Columns are B O I S E; rows favour O B E.
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"0 5 0 0 0\n5 0 0 0 0\n0 0 0 0 5\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, "O B E\nspan 1 3\n");
}

#[test]
fn exit_codes_separate_validation_config_and_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let bad_conf = d.join("bad.conf");
    fs::write(&bad_conf, "synthetic.no_such_key = 1\n").unwrap();
    assert_eq!(
        code(&["gen", "--out", p(&d.join("x")), "--config", p(&bad_conf)]),
        3
    );
    assert_eq!(code(&["gen", "--no-such-flag"]), 3);

    let corpus = d.join("bad.jsonl");
    fs::write(&corpus, "{\"doc_id\": \"a\"}\n").unwrap();
    assert_eq!(
        code(&[
            "fewshot",
            "--in",
            p(&corpus),
            "--out",
            p(&d.join("y")),
            "--k",
            "1"
        ]),
        2
    );

    let matrix = d.join("m.txt");
    fs::write(&matrix, "1 2 3\n").unwrap();
    assert_eq!(code(&["decode-debug", "--in", p(&matrix)]), 2);

    assert_eq!(
        code(&["params-summary", "--params-in", p(&d.join("missing.bin"))]),
        4
    );
}
