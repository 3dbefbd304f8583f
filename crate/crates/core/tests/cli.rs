use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
speakers = 6
utterances_per_speaker = 4
min_frames = 60
max_frames = 70
pool_speakers = 1
external_speakers = 2
n_s = 16
n_q = 8
lm_width = 16
lm_heads = 2
lm_blocks = 1
coarse_steps = 3
fine_steps = 2
prompt_frames = 20
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nac-anon"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn help_lists_every_config_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["n_s", "q_coarse", "anon_seed", "attacker_seed", "fine_temperature", "level"] {
        assert!(text.contains(&format!("  {key} = ")), "missing {key}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(run(p, &["train", "--manifest", "nope.tsv", "--out", "b"]).status.code(), Some(2));
    assert_eq!(run(p, &["--set", "bogus=1", "gen-corpus", "--out", "c"]).status.code(), Some(2));
    assert_eq!(run(p, &["--set", "q_coarse=8", "gen-corpus", "--out", "c"]).status.code(), Some(2));
    assert_eq!(run(p, &["--config", "missing.txt", "gen-corpus", "--out", "c"]).status.code(), Some(2));
    assert_eq!(run(p, &["anonymize", "--bundle", "b", "--out", "x.wav"]).status.code(), Some(2));
}

#[test]
fn tiny_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("tiny.txt"), TINY).unwrap();
    let cfg = ["--config", "tiny.txt"];

    let out = run(p, &[&cfg[..], &["gen-corpus", "--out", "corpus"]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(p.join("corpus/manifest.tsv").is_file());
    let again = run(p, &[&cfg[..], &["gen-corpus", "--out", "corpus"]].concat());
    assert_eq!(again.status.code(), Some(2));
    assert!(run(p, &[&cfg[..], &["gen-corpus", "--out", "corpus", "--force"]].concat()).status.success());

    let out = run(p, &[&cfg[..], &["train", "--manifest", "corpus/manifest.tsv", "--out", "bundle"]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("coarse loss"));
    for f in ["semantic.semq", "codec.nacq", "coarse.clmq", "fine.flmq", "pool.pool", "config.txt"] {
        assert!(p.join("bundle").join(f).is_file(), "{f}");
    }

    let wav = fs::read_dir(p.join("corpus/wav")).unwrap().next().unwrap().unwrap().path();
    let wav = wav.to_str().unwrap();
    let a = run(p, &["anonymize", "--bundle", "bundle", "--wav", wav, "--out", "a.wav", "--speaker", "x"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(p, &["anonymize", "--bundle", "bundle", "--wav", wav, "--out", "b.wav", "--speaker", "x"]);
    assert!(b.status.success());
    assert_eq!(fs::read(p.join("a.wav")).unwrap(), fs::read(p.join("b.wav")).unwrap());

    let out = run(p, &["anonymize", "--bundle", "bundle", "--manifest", "corpus/manifest.tsv", "--out", "anon"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(p.join("anon/manifest.tsv").is_file());

    let out = run(p, &["attack", "--bundle", "bundle", "--manifest", "corpus/manifest.tsv", "--out", "scores.tsv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scores = fs::read_to_string(p.join("scores.tsv")).unwrap();
    assert!(scores.lines().all(|l| l.split('\t').count() == 4));

    let out = run(
        p,
        &[
            "evaluate",
            "--bundle",
            "bundle",
            "--manifest",
            "corpus/manifest.tsv",
            "--out",
            "report.txt",
            "--attacker-seed",
            "1001",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("attacker seed equals defender seed"));
    let report = fs::read_to_string(p.join("report.txt")).unwrap();
    for key in ["eer_original", "eer_anonymized", "rho_f0", "g_vd_db", "content_error_anonymized"] {
        assert!(report.contains(key), "{key}");
    }
}
