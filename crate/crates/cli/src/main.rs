mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use mfpot::model::Model;
use mfpot::structures::{
    parse_frames, split_dataset, write_frames, LabeledFrame, StructureRecord, EV_PER_A3_TO_GPA,
};
use mfpot::synthdata::{make_dataset, Template};
use mfpot::train::{
    ablate, evaluate, evaluate_at, save_history_csv, train_model, train_multi_fidelity,
    transfer_train, ExperimentData, Metrics, MetricsReport, HIGH,
};
use serde::Serialize;

use config::{pick, RunConfig};

/// An error caused by bad flags, configuration or input data (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "mfpot",
    version,
    about = "Multi-fidelity graph neural network interatomic potential"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-fidelity dataset (fidelity 1 = low, 2 = high).
    GenSynth {
        /// Number of low-fidelity frames (no magnetic moment labels).
        #[arg(long, default_value_t = 0)]
        n_lf: usize,
        /// Number of high-fidelity frames.
        #[arg(long, default_value_t = 0)]
        n_hf: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cell sizes to draw from: "standard" (8 to 48 atoms) or "small" (8 atoms).
        #[arg(long, default_value = "standard")]
        template: String,
        /// Output JSON-lines file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the per-fidelity linear composition model and write it as JSON.
    FitComposition {
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON-lines frame file.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output JSON file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.json, metrics.csv and summary.json.
    Train {
        /// Run configuration JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON-lines frame file; a test share is held out.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print metrics of a checkpoint on a frame file as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Predict energy, forces, stress and magnetic moments of one structure.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON file with "lattice", "species" and "positions"; other keys are ignored.
        #[arg(long)]
        structure: PathBuf,
        #[arg(long, default_value_t = 1)]
        fidelity: usize,
    },
    /// Run the ten fidelity-mechanism configurations over every seed; writes a CSV.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_lf: Option<PathBuf>,
        #[arg(long)]
        data_hf: Option<PathBuf>,
        /// Output CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare multi-fidelity training with frozen-layer transfer learning; writes a CSV.
    Transfer {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_lf: Option<PathBuf>,
        #[arg(long)]
        data_hf: Option<PathBuf>,
        /// Output CSV file; the frozen tensor list goes next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective run configuration as JSON.
    ShowConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<mfpot::Error>() {
        Some(
            mfpot::Error::Parse { .. }
            | mfpot::Error::InvalidStructure(_)
            | mfpot::Error::InvalidFrame(_)
            | mfpot::Error::FidelityOutOfRange { .. }
            | mfpot::Error::ElementOutOfRange(_)
            | mfpot::Error::Shape(_)
            | mfpot::Error::EmptyFidelity(_)
            | mfpot::Error::Config(_)
            | mfpot::Error::Checkpoint(_)
            | mfpot::Error::CheckpointVersion { .. }
            | mfpot::Error::TooManyImages { .. }
            | mfpot::Error::Json(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::GenSynth {
            n_lf,
            n_hf,
            seed,
            template,
            out,
        } => gen_synth(n_lf, n_hf, seed, &template, &out),
        Command::FitComposition { config, data, out } => {
            let cfg = RunConfig::load(config.as_deref())?;
            fit_composition(&cfg, &pick(data, &cfg.data, "data")?, &out)
        }
        Command::Train { config, data, out } => {
            let cfg = RunConfig::load(config.as_deref())?;
            train(
                &cfg,
                &pick(data, &cfg.data, "data")?,
                &pick(out, &cfg.out, "out")?,
            )
        }
        Command::Eval { checkpoint, data } => eval(&checkpoint, &data),
        Command::Predict {
            checkpoint,
            structure,
            fidelity,
        } => predict(&checkpoint, &structure, fidelity),
        Command::Ablate {
            config,
            data_lf,
            data_hf,
            out,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let lf = pick(data_lf, &cfg.data_lf, "data-lf")?;
            let hf = pick(data_hf, &cfg.data_hf, "data-hf")?;
            ablation(&cfg, &lf, &hf, &pick(out, &cfg.out, "out")?)
        }
        Command::Transfer {
            config,
            data_lf,
            data_hf,
            out,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let lf = pick(data_lf, &cfg.data_lf, "data-lf")?;
            let hf = pick(data_hf, &cfg.data_hf, "data-hf")?;
            transfer(&cfg, &lf, &hf, &pick(out, &cfg.out, "out")?)
        }
        Command::ShowConfig { config } => {
            let cfg = RunConfig::load(config.as_deref())?;
            emit(&serde_json::to_string_pretty(&cfg)?)?;
            Ok(())
        }
    }
}

fn load_frames(path: &Path, n_fidelities: usize) -> anyhow::Result<Vec<LabeledFrame>> {
    let frames =
        parse_frames(path, n_fidelities).with_context(|| format!("reading {}", path.display()))?;
    if frames.is_empty() {
        bail!(UsageError(format!("{} contains no frames", path.display())));
    }
    Ok(frames)
}

/// Prints to stdout; a closed pipe (e.g. `| head`) ends output quietly.
fn emit(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn count_by_fidelity(frames: &[LabeledFrame]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for f in frames {
        *counts.entry(f.fidelity).or_insert(0) += 1;
    }
    counts
}

fn gen_synth(
    n_lf: usize,
    n_hf: usize,
    seed: u64,
    template: &str,
    out: &Path,
) -> anyhow::Result<()> {
    let template = match template {
        "standard" => Template::standard(),
        "small" => Template::small(),
        other => bail!(UsageError(format!(
            "unknown template {other:?}; use standard or small"
        ))),
    };
    let frames = make_dataset(n_lf, n_hf, seed, &template)?;
    write_frames(&frames, out).with_context(|| format!("writing {}", out.display()))?;
    for (f, n) in count_by_fidelity(&frames) {
        println!("fidelity {f}: {n} frames");
    }
    println!("total: {} frames", frames.len());
    Ok(())
}

#[derive(Serialize)]
struct CompositionFile {
    n_fidelities: usize,
    pooled: bool,
    /// Per fidelity, eV/atom weights of the elements present in the data.
    weights: BTreeMap<usize, BTreeMap<u8, f64>>,
}

fn fit_composition(cfg: &RunConfig, data: &Path, out: &Path) -> anyhow::Result<()> {
    let frames = load_frames(data, cfg.model.fidelity.n_fidelities)?;
    let mut model = Model::new(cfg.model, 0)?;
    model.fit_composition(&frames)?;
    let mut present: Vec<u8> = frames
        .iter()
        .flat_map(|f| f.structure.species().to_vec())
        .collect();
    present.sort_unstable();
    present.dedup();
    let n_f = cfg.model.fidelity.n_fidelities;
    let weights = (1..=n_f)
        .map(|f| {
            let col = model.composition_index(f) - 1;
            let w = present
                .iter()
                .map(|&z| (z, model.composition.get(z as usize - 1, col)))
                .collect();
            (f, w)
        })
        .collect();
    let file = CompositionFile {
        n_fidelities: n_f,
        pooled: !cfg.model.fidelity.composition,
        weights,
    };
    write_json(out, &file)?;
    println!("fitted composition weights for {} elements", present.len());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    config: &'a RunConfig,
    n_train: usize,
    n_test: usize,
    final_loss: f64,
    test: Option<MetricsReport>,
}

fn train(cfg: &RunConfig, data: &Path, out: &Path) -> anyhow::Result<()> {
    let frames = load_frames(data, cfg.model.fidelity.n_fidelities)?;
    let (train_frames, test_frames) = split_dataset(&frames, cfg.test_fraction, cfg.seed);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let checkpoint = out.join("checkpoint.json");
    let model = Model::new(cfg.model, cfg.train.seed)?;
    let outcome = train_model(model, &train_frames, &cfg.train, &mut |record, model| {
        model.save(&checkpoint)?;
        eprintln!(
            "epoch {:>3}  lr {:.3e}  loss {:.5}",
            record.epoch, record.lr, record.loss
        );
        Ok(())
    })?;
    outcome.model.save(&checkpoint)?;
    save_history_csv(&outcome.history, out.join("metrics.csv"))?;
    let test = if test_frames.is_empty() {
        None
    } else {
        Some(evaluate(&outcome.model, &test_frames)?)
    };
    let summary = TrainSummary {
        config: cfg,
        n_train: train_frames.len(),
        n_test: test_frames.len(),
        final_loss: outcome.history.last().map_or(f64::NAN, |r| r.loss),
        test,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn eval(checkpoint: &Path, data: &Path) -> anyhow::Result<()> {
    let model = Model::load(checkpoint)?;
    let frames = load_frames(data, model.config.fidelity.n_fidelities)?;
    let report = evaluate(&model, &frames)?;
    emit(&serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

#[derive(Serialize)]
struct PredictionOutput {
    fidelity: usize,
    /// eV.
    energy: f64,
    /// eV/Å.
    forces: Vec<[f64; 3]>,
    /// eV/Å³.
    stress: [[f64; 3]; 3],
    stress_gpa: [[f64; 3]; 3],
    /// μB.
    magmoms: Vec<f64>,
}

fn predict(checkpoint: &Path, structure: &Path, fidelity: usize) -> anyhow::Result<()> {
    let model = Model::load(checkpoint)?;
    model.config.fidelity.check_fidelity(fidelity)?;
    let text = fs::read_to_string(structure)
        .with_context(|| format!("reading {}", structure.display()))?;
    let record: StructureRecord = serde_json::from_str(text.trim())
        .map_err(|e| UsageError(format!("{}: {e}", structure.display())))?;
    let s = record.into_structure()?;
    let p = model.predict(&s, fidelity)?;
    let out = PredictionOutput {
        fidelity,
        energy: p.energy,
        forces: p.forces,
        stress: p.stress,
        stress_gpa: p.stress.map(|row| row.map(|x| x * EV_PER_A3_TO_GPA)),
        magmoms: p.magmoms,
    };
    emit(&serde_json::to_string_pretty(&out)?)?;
    Ok(())
}

/// Low-fidelity frames plus the high-fidelity frames split into train and test.
fn experiment_data(
    cfg: &RunConfig,
    lf: &Path,
    hf: &Path,
) -> anyhow::Result<(Vec<LabeledFrame>, Vec<LabeledFrame>, Vec<LabeledFrame>)> {
    let lf = load_frames(lf, 2)?;
    let hf = load_frames(hf, 2)?;
    let (hf_train, hf_test) = split_dataset(&hf, cfg.test_fraction, cfg.seed);
    if hf_test.is_empty() {
        bail!(UsageError("the high-fidelity test split is empty".into()));
    }
    Ok((lf, hf_train, hf_test))
}

fn ablation(cfg: &RunConfig, lf: &Path, hf: &Path, out: &Path) -> anyhow::Result<()> {
    let (lf, hf_train, hf_test) = experiment_data(cfg, lf, hf)?;
    let n_hf = cfg.ablation_hf.min(hf_train.len());
    let data = ExperimentData {
        lf: &lf,
        hf_train: &hf_train[..n_hf],
        hf_test: &hf_test,
    };
    let table = ablate(data, cfg.model, &cfg.train, &cfg.seeds)?;
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    table.write_csv(std::io::BufWriter::new(file))?;
    for row in &table.rows {
        println!(
            "{:<3} force MAE {:.4} ± {:.4} eV/Å",
            row.variant.label(),
            row.mean(2),
            row.half_range(2)
        );
    }
    Ok(())
}

fn metric_cells(m: &Metrics) -> Vec<String> {
    let mag = m.magmom.map_or((String::new(), String::new()), |s| {
        (s.mae.to_string(), s.rmse.to_string())
    });
    vec![
        m.energy.mae.to_string(),
        m.energy.rmse.to_string(),
        m.force.mae.to_string(),
        m.force.rmse.to_string(),
        m.stress.mae.to_string(),
        m.stress.rmse.to_string(),
        mag.0,
        mag.1,
    ]
}

fn transfer(cfg: &RunConfig, lf: &Path, hf: &Path, out: &Path) -> anyhow::Result<()> {
    let (lf, hf_train, hf_test) = experiment_data(cfg, lf, hf)?;
    let mut header = vec!["n_hf".to_string(), "seed".to_string()];
    for method in ["mf", "tl"] {
        for m in mfpot::train::ABLATION_METRICS {
            header.push(format!("{method}_{m}"));
        }
    }
    let mut rows = vec![header.join(",")];
    let mut manifest = None;
    for &n in &cfg.transfer_sweep {
        if n > hf_train.len() {
            eprintln!(
                "skipping sweep point {n}: only {} high-fidelity training frames",
                hf_train.len()
            );
            continue;
        }
        let hf_n = &hf_train[..n];
        for &seed in &cfg.seeds {
            let tc = mfpot::train::TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let mf = train_multi_fidelity(&lf, hf_n, cfg.model, cfg.model.fidelity, &tc)?;
            let mf_metrics = evaluate_at(&mf.model, &hf_test, HIGH)?;
            let tl = transfer_train(&lf, hf_n, cfg.model, &tc)?;
            let tl_metrics = evaluate_at(&tl.model, &hf_test, 1)?;
            manifest.get_or_insert(tl.frozen);
            let mut row = vec![n.to_string(), seed.to_string()];
            row.extend(metric_cells(&mf_metrics));
            row.extend(metric_cells(&tl_metrics));
            rows.push(row.join(","));
            println!(
                "n_hf {n:>4} seed {seed}: force MAE mf {:.4} tl {:.4}, magmom MAE mf {:.4} tl {:.4}",
                mf_metrics.force.mae,
                tl_metrics.force.mae,
                mf_metrics.magmom.map_or(f64::NAN, |s| s.mae),
                tl_metrics.magmom.map_or(f64::NAN, |s| s.mae),
            );
        }
    }
    let mut file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    for r in &rows {
        writeln!(file, "{r}")?;
    }
    if let Some(frozen) = manifest {
        let path = out.with_extension("frozen.txt");
        fs::write(&path, frozen.join("\n") + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        eprintln!(
            "frozen during fine-tuning: {} tensors, listed in {}",
            frozen.len(),
            path.display()
        );
    }
    Ok(())
}
