use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use distcomp::codecs::{read_model, DistModel};
use distcomp::eval::gap_report;
use distcomp::ltf::read_ltf;
use distcomp::LatentTensor;

const SMALL: &[&str] = &[
    "--set", "corpus.channels=8", "--set", "corpus.images=12", "--set", "corpus.height=16", "--set", "corpus.width=16",
    "--set", "spec.bins=32", "--set", "model.N_q=8", "--set", "model.M_q=4", "--set", "model.groups=4",
    "--set", "train.max_steps=30", "--set", "train.eval_every=10", "--set", "train.batch=4", "--set", "train.lr=1e-3",
];

fn distcomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distcomp")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = distcomp(args);
    assert!(out.status.success(), "distcomp {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SMALL.iter().copied()).collect()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }

    fn corpus(&self) -> String {
        let data = self.path("data");
        ok(&with_small(&["gen-data", "--out", &data]));
        data
    }
}

fn ltfs(dir: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "ltf"))
        .collect();
    v.sort();
    v
}

fn load_latent(path: &Path) -> LatentTensor {
    read_ltf(&std::fs::read(path).unwrap()).unwrap().latent
}

#[test]
fn gen_data_writes_latents_and_truth() {
    let ws = Workspace::new();
    let data = ws.corpus();
    let files = ltfs(&data);
    assert_eq!(files.len(), 12);
    let l = load_latent(&files[0]);
    assert_eq!((l.channels(), l.height(), l.width()), (8, 16, 16));
    let truth = std::fs::read_to_string(format!("{data}/img_0000.pmf.csv")).unwrap();
    assert_eq!(truth.lines().count(), 8);
    for line in truth.lines() {
        let sum: f64 = line.split(',').map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}

#[test]
fn every_backend_round_trips_through_files() {
    let ws = Workspace::new();
    let data = ws.corpus();
    let (st, gm, le) = (ws.path("static.dcm"), ws.path("gmm.dcm"), ws.path("learned.dcm"));
    ok(&["fit", "--kind", "static", "--data", &data, "--out", &st]);
    ok(&["fit", "--kind", "gmm", "--data", &data, "--out", &gm, "--set", "model.K_g=3"]);
    ok(&with_small(&["train", "--data", &data, "--out", &le]));
    let input = ltfs(&data)[3].to_string_lossy().into_owned();
    for (model, expect_side) in [(&st, Some(0)), (&gm, Some((3 * 3 - 1) * 8 * 8)), (&le, None)] {
        let stream = ws.path("x.dcs");
        let out = ws.path("x.ltf");
        let report = ok(&["compress", "--model", model, "--in", &input, "--out", &stream]);
        let side: u64 = report.split_whitespace().find_map(|t| t.strip_prefix("side_bits=")).unwrap().parse().unwrap();
        if let Some(want) = expect_side {
            assert_eq!(side, want, "{model}");
        } else {
            assert!(side > 0);
        }
        ok(&["decompress", "--model", model, "--in", &stream, "--out", &out]);
        assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&input).unwrap());
    }
}

#[test]
fn dump_nll_lists_code_lengths() {
    let ws = Workspace::new();
    let data = ws.corpus();
    let st = ws.path("static.dcm");
    ok(&["fit", "--kind", "static", "--data", &data, "--out", &st]);
    let input = ltfs(&data)[0].to_string_lossy().into_owned();
    let nll = ws.path("nll.csv");
    ok(&["compress", "--model", &st, "--in", &input, "--out", &ws.path("s.dcs"), "--dump-nll", &nll]);
    let text = std::fs::read_to_string(&nll).unwrap();
    assert_eq!(text.lines().count(), 8);
    for line in text.lines() {
        let mass: f64 = line.split(',').map(|v| (-v.parse::<f64>().unwrap()).exp2()).sum();
        assert!((mass - 1.0).abs() < 1e-9);
    }
}

#[test]
fn gap_csv_matches_library_report() {
    let ws = Workspace::new();
    let data = ws.path("data");
    ok(&[
        "gen-data", "--out", &data, "--set", "corpus.images=64", "--set", "corpus.channels=8", "--set", "corpus.height=8",
        "--set", "corpus.width=8", "--set", "spec.bins=32",
    ]);
    let (st, gm, csv) = (ws.path("static.dcm"), ws.path("gmm.dcm"), ws.path("gap.csv"));
    ok(&["fit", "--kind", "static", "--data", &data, "--out", &st]);
    ok(&["fit", "--kind", "gmm", "--data", &data, "--out", &gm]);
    let table = ok(&["analyze-gap", "--baseline", &st, "--model", &gm, "--data", &data, "--out", &csv]);
    assert!(table.lines().count() >= 66);

    let latents: Vec<LatentTensor> = ltfs(&data).iter().map(|p| load_latent(p)).collect();
    let base = match read_model(&std::fs::read(&st).unwrap()).unwrap() {
        DistModel::Static(m) => m,
        _ => unreachable!(),
    };
    let model = read_model(&std::fs::read(&gm).unwrap()).unwrap();
    let want = gap_report(&latents, &model, &base).unwrap().to_csv();
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), want);
}

#[test]
fn train_writes_loss_curve() {
    let ws = Workspace::new();
    let data = ws.corpus();
    let log = ws.path("loss.csv");
    ok(&with_small(&["train", "--data", &data, "--out", &ws.path("m.dcm"), "--log", &log]));
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "step,lr,train_rate_y,train_rate_q,train_total,val_rate_y,val_rate_q,val_total");
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty() && rows.len() <= 30);
    assert!(rows.iter().any(|r| !r.ends_with(",,,")));
}

#[test]
fn runs_are_deterministic() {
    let ws = Workspace::new();
    let data = ws.corpus();
    let other = ws.path("data2");
    ok(&with_small(&["gen-data", "--out", &other]));
    for (a, b) in ltfs(&data).iter().zip(ltfs(&other)) {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
    let (ma, mb) = (ws.path("a.dcm"), ws.path("b.dcm"));
    ok(&with_small(&["train", "--data", &data, "--out", &ma]));
    ok(&with_small(&["train", "--data", &data, "--out", &mb]));
    assert_eq!(std::fs::read(&ma).unwrap(), std::fs::read(&mb).unwrap());
    let input = ltfs(&data)[0].to_string_lossy().into_owned();
    let (sa, sb) = (ws.path("a.dcs"), ws.path("b.dcs"));
    ok(&["compress", "--model", &ma, "--in", &input, "--out", &sa]);
    ok(&["compress", "--model", &ma, "--in", &input, "--out", &sb]);
    assert_eq!(std::fs::read(&sa).unwrap(), std::fs::read(&sb).unwrap());
}

fn code_and_stderr(args: &[&str]) -> (i32, String) {
    let out = distcomp(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn failures_map_to_exit_codes() {
    let ws = Workspace::new();
    let data = ws.corpus();

    let (code, err) = code_and_stderr(&["gen-data", "--out", &ws.path("x"), "--set", "train.speed=3"]);
    assert_eq!(code, 2);
    assert!(err.contains("error[Config]"), "{err}");
    let (code, _) = code_and_stderr(&["compress"]);
    assert_eq!(code, 2);

    let st = ws.path("static.dcm");
    ok(&["fit", "--kind", "static", "--data", &data, "--out", &st]);
    let (code, err) = code_and_stderr(&["compress", "--model", &st, "--in", &ws.path("missing.ltf"), "--out", &ws.path("o")]);
    assert_eq!(code, 3);
    assert!(err.starts_with("distcomp: error[Io]"), "{err}");
    let junk = ws.path("junk.ltf");
    std::fs::write(&junk, b"LTF1 but not really").unwrap();
    let (code, _) = code_and_stderr(&["compress", "--model", &st, "--in", &junk, "--out", &ws.path("o")]);
    assert_eq!(code, 3);

    let bad_model = ws.path("bad.dcm");
    std::fs::write(&bad_model, &std::fs::read(&st).unwrap()[..20]).unwrap();
    let input = ltfs(&data)[0].to_string_lossy().into_owned();
    let (code, _) = code_and_stderr(&["compress", "--model", &bad_model, "--in", &input, "--out", &ws.path("o")]);
    assert_eq!(code, 4);
    let trained = ws.path("m.dcm");
    let mut diverge = with_small(&["train", "--data", &data, "--out", &trained]);
    diverge.extend(["--set", "train.lr=1e9"]);
    let (code, err) = code_and_stderr(&diverge);
    assert_eq!(code, 4, "{err}");

    let gm = ws.path("gmm.dcm");
    ok(&["fit", "--kind", "gmm", "--data", &data, "--out", &gm]);
    let stream = ws.path("g.dcs");
    ok(&["compress", "--model", &gm, "--in", &input, "--out", &stream]);
    let (code, err) = code_and_stderr(&["decompress", "--model", &st, "--in", &stream, "--out", &ws.path("o.ltf")]);
    assert_eq!(code, 3);
    assert!(err.contains("error[SpecMismatch]"), "{err}");
}
