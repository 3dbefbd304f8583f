use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use nac_anon::anon::{AnonPolicy, AnonSystem};
use nac_anon::config::{Config, Level};
use nac_anon::corpus::{load_manifest, Corpus, Utterance};
use nac_anon::dsp::{read_wav, write_wav};
use nac_anon::eval::{self, Labeled, Protocol};
use nac_anon::pipeline::{train_system, Split};
use nac_anon::Error;

/// Speaker anonymization with codec-token language models.
#[derive(Parser, Debug)]
#[command(name = "nac-anon", version)]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set n_s=128`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Train all models and write a system bundle.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Anonymize one WAV or every utterance of a manifest.
    Anonymize(AnonymizeArgs),
    /// Run the semi-informed attack and write a score file.
    Attack {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        attacker_seed: Option<u64>,
        /// Score unanonymized trials instead.
        #[arg(long)]
        original: bool,
    },
    /// Compute every privacy and utility metric.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Report path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        attacker_seed: Option<u64>,
        /// Also write score files and anonymized trial WAVs here.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct AnonymizeArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Single input WAV.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    wav: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output WAV for `--wav`, output directory for `--manifest`.
    #[arg(long)]
    out: PathBuf,
    /// Speaker id of `--wav` (default: file stem).
    #[arg(long)]
    speaker: Option<String>,
    /// Utterance id of `--wav` (default: file stem).
    #[arg(long)]
    utterance: Option<String>,
    #[arg(long)]
    level: Option<Level>,
    /// Master seed (default: the bundle's `anon_seed`).
    #[arg(long)]
    seed: Option<u64>,
}

/// Usage and configuration problems exit with 2, everything else with 1.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            e => Failure::Runtime(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn key_listing() -> String {
    let mut s = String::from("Config keys (default):\n");
    for (k, d, doc) in Config::keys() {
        s.push_str(&format!("  {k} = {d}\n      {doc}\n"));
    }
    s
}

fn load_config(cli: &Cli) -> CliResult<Config> {
    let mut text = match &cli.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        // later lines win: drop any earlier assignment of the same key
        text = text
            .lines()
            .filter(|l| l.split('=').next().map(str::trim) != Some(k.trim()))
            .map(|l| format!("{l}\n"))
            .collect();
        text.push_str(&format!("{} = {}\n", k.trim(), v.trim()));
    }
    Ok(Config::parse(&text)?)
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} not found", path.display())))
    }
}

fn load_bundle(dir: &Path) -> CliResult<AnonSystem> {
    if !dir.is_dir() {
        return Err(Failure::Usage(format!("bundle directory {} not found", dir.display())));
    }
    Ok(AnonSystem::load(dir)?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Failure::Runtime(Error::io(path, e)))
}

fn labeled(utts: &[&Utterance]) -> Vec<Labeled> {
    utts.iter()
        .map(|u| Labeled {
            id: u.utt_id.clone(),
            speaker: u.speaker_id.clone(),
            waveform: u.waveform.clone(),
        })
        .collect()
}

fn gen_corpus(config: &Config, out: &Path, force: bool) -> CliResult<()> {
    let occupied = out.is_dir() && fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some();
    if occupied && !force {
        return Err(Failure::Usage(format!(
            "{} exists and is not empty (use --force)",
            out.display()
        )));
    }
    let corpus = Corpus::generate(&config.corpus_spec())?;
    let manifest = corpus.write(out)?;
    write_text(&out.join("config.txt"), &config.render())?;
    println!("{} utterances -> {}", corpus.utterances.len(), manifest.display());
    Ok(())
}

fn train(config: &Config, manifest: &Path, out: &Path) -> CliResult<()> {
    require_file(manifest, "manifest")?;
    let corpus = load_manifest(manifest)?;
    let (system, report) = train_system(config, &corpus)?;
    system.save(out)?;
    print!("{report}");
    println!("bundle written to {}", out.display());
    Ok(())
}

fn anonymize(args: &AnonymizeArgs) -> CliResult<()> {
    let system = load_bundle(&args.bundle)?;
    let policy = AnonPolicy {
        level: args.level.unwrap_or(system.config.level),
        master_seed: args.seed.unwrap_or(system.config.anon_seed),
    };
    if let Some(wav) = &args.wav {
        require_file(wav, "input")?;
        let stem = wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let speaker = args.speaker.clone().unwrap_or_else(|| stem.clone());
        let utt = args.utterance.clone().unwrap_or(stem);
        let out = system.anonymize(&read_wav(wav)?, &speaker, &utt, &policy)?;
        log::info!("{utt}: prompt {}", system.pool.entries[out.prompt_index].prompt_id);
        write_wav(&out.waveform, &args.out)?;
        println!("{} frames -> {}", out.tokens.frames(), args.out.display());
        return Ok(());
    }
    let manifest = args.manifest.as_ref().expect("clap enforces --wav or --manifest");
    require_file(manifest, "manifest")?;
    let mut corpus = load_manifest(manifest)?;
    for u in corpus.utterances.iter_mut() {
        let out = system.anonymize(&u.waveform, &u.speaker_id, &u.utt_id, &policy)?;
        log::info!("{}: prompt {}", u.utt_id, system.pool.entries[out.prompt_index].prompt_id);
        u.waveform = out.waveform;
    }
    let path = corpus.write(&args.out)?;
    println!("{} utterances -> {}", corpus.utterances.len(), path.display());
    Ok(())
}

fn warn_same_seed(system: &AnonSystem) {
    if system.config.attacker_seed == system.config.anon_seed {
        log::warn!(
            "attacker seed equals defender seed {}: the attacker reproduces every pseudo-speaker choice",
            system.config.anon_seed
        );
    }
}

fn attack(bundle: &Path, manifest: &Path, out: &Path, seed: Option<u64>, original: bool) -> CliResult<()> {
    let mut system = load_bundle(bundle)?;
    require_file(manifest, "manifest")?;
    if let Some(s) = seed {
        system.config.attacker_seed = s;
    }
    warn_same_seed(&system);
    let corpus = load_manifest(manifest)?;
    let config = &system.config;
    let split = Split::new(config, &corpus)?;
    let protocol = Protocol::new(config, &corpus, &split)?;
    let enroll = labeled(&protocol.enroll);
    let trials = labeled(&protocol.trials);
    let external = labeled(&protocol.external);
    let scores = if original {
        eval::score_trials(&enroll, &trials, &external, &system.rvq.analysis)?
    } else {
        let anon = eval::anonymize_all(&system, &trials, config.level, config.anon_seed)?;
        eval::semi_informed_attack(&system, &enroll, &anon, &external, config.attacker_seed)?
    };
    eval::save_scores(out, &scores)?;
    println!("EER {:.4} over {} trials -> {}", eval::scores_eer(&scores)?, scores.len(), out.display());
    Ok(())
}

fn evaluate(
    bundle: &Path,
    manifest: &Path,
    out: &Path,
    seed: Option<u64>,
    artifacts: Option<&Path>,
) -> CliResult<()> {
    let mut system = load_bundle(bundle)?;
    require_file(manifest, "manifest")?;
    if let Some(s) = seed {
        system.config.attacker_seed = s;
    }
    warn_same_seed(&system);
    let corpus = load_manifest(manifest)?;
    let ev = eval::evaluate(&system, &corpus)?;
    let report = ev.report.to_string();
    write_text(out, &report)?;
    if let Some(dir) = artifacts {
        let wav_dir = dir.join("anonymized");
        fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
        eval::save_scores(&dir.join("scores_original.tsv"), &ev.scores_original)?;
        eval::save_scores(&dir.join("scores_anonymized.tsv"), &ev.scores_anonymized)?;
        for t in &ev.anonymized_trials {
            write_wav(&t.waveform, wav_dir.join(format!("{}.wav", t.id)))?;
        }
    }
    print!("{report}");
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenCorpus { out, force } => gen_corpus(&load_config(cli)?, out, *force),
        Command::Train { manifest, out } => train(&load_config(cli)?, manifest, out),
        Command::Anonymize(args) => anonymize(args),
        Command::Attack {
            bundle,
            manifest,
            out,
            attacker_seed,
            original,
        } => attack(bundle, manifest, out, *attacker_seed, *original),
        Command::Evaluate {
            bundle,
            manifest,
            out,
            attacker_seed,
            artifacts,
        } => evaluate(bundle, manifest, out, *attacker_seed, artifacts.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = Cli::command().after_long_help(key_listing()).after_help(key_listing()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
