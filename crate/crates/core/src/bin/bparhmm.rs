//! Command-line surface: simulate, preprocess, fit, select, evaluate,
//! predict. Every command is deterministic given (inputs, config, seed).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use bparhmm::driver::{
    default_mniw_prior, initialize, joint_log_prob, sweep, SampleRecord,
};
use bparhmm::error::{Error, Result};
use bparhmm::evaluation::{
    hamming_matched, heldout_predictive_loglik, select_min_expected_hamming,
};
use bparhmm::io::{
    block_average, first_difference_scales, apply_scales, read_checkpoint, read_config,
    read_dataset_csv, read_labels_csv, read_sample_log, write_checkpoint, write_dataset_csv,
    write_feature_matrix_csv, write_labels_csv, write_manifest, FileConfig, Manifest,
    SampleLogWriter, TransformParams,
};
use bparhmm::model::{BehaviorLibrary, FeatureMatrix, VarBehavior};
use bparhmm::synthetic::preset;

#[derive(Parser)]
#[command(
    name = "bparhmm",
    about = "Joint segmentation of related time series into shared autoregressive behaviors",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth from a named preset.
    Simulate {
        /// Preset name: paper-6.1, paper-6.2, or paper-6.2-heldout.
        #[arg(long)]
        preset: String,
        /// Seed for observation noise and mode paths (ground truth is fixed
        /// per preset).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
    },
    /// Block-average downsample and/or rescale a dataset CSV.
    Preprocess {
        /// Input dataset CSV.
        #[arg(long)]
        input: PathBuf,
        /// Non-overlapping averaging window (1 = no downsampling).
        #[arg(long, default_value_t = 1)]
        window: usize,
        /// Rescale each dimension so pooled first-difference variance is 1.
        #[arg(long, default_value_t = false)]
        rescale: bool,
        /// Autoregressive order recorded with the dataset.
        #[arg(long, default_value_t = 1)]
        lag: usize,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
    },
    /// Run MCMC chains on a dataset, writing sample logs and checkpoints.
    Fit {
        /// Input dataset CSV.
        #[arg(long)]
        data: PathBuf,
        /// TOML configuration file (defaults apply when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config chain count.
        #[arg(long)]
        chains: Option<usize>,
        /// Override the config iteration count.
        #[arg(long)]
        iterations: Option<u64>,
        /// Resume each chain from its checkpoint in the output directory.
        #[arg(long, default_value_t = false)]
        resume: bool,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
    },
    /// Pick the sample minimizing expected matched-Hamming distance to a
    /// reference set of samples.
    Select {
        /// Sample log holding the candidate samples.
        #[arg(long)]
        log: PathBuf,
        /// Sample log holding the reference set (defaults to the candidates).
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Dataset CSV the samples were fit to (for series ids and lag).
        #[arg(long)]
        data: PathBuf,
        /// Autoregressive order used during fitting.
        #[arg(long, default_value_t = 1)]
        lag: usize,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
    },
    /// Score segmentations against ground-truth labels.
    Evaluate {
        /// Sample log: scores every record.
        #[arg(long, conflicts_with = "labels")]
        log: Option<PathBuf>,
        /// Single labels CSV to score instead of a log.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Ground-truth labels CSV.
        #[arg(long)]
        truth: PathBuf,
        /// Output CSV of scores.
        #[arg(long)]
        output: PathBuf,
    },
    /// Held-out predictive log-likelihood of a dataset under each sample.
    Predict {
        /// Sample log from a fit.
        #[arg(long)]
        log: PathBuf,
        /// Held-out dataset CSV (one series per training series, in order).
        #[arg(long)]
        data: PathBuf,
        /// Autoregressive order used during fitting.
        #[arg(long, default_value_t = 1)]
        lag: usize,
        /// Output CSV of per-sample log-likelihoods.
        #[arg(long)]
        output: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code() as i32);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            preset: name,
            seed,
            output,
        } => cmd_simulate(&name, seed, &output),
        Command::Preprocess {
            input,
            window,
            rescale,
            lag,
            output,
        } => cmd_preprocess(&input, window, rescale, lag, &output),
        Command::Fit {
            data,
            config,
            seed,
            chains,
            iterations,
            resume,
            output,
        } => cmd_fit(&data, config.as_deref(), seed, chains, iterations, resume, &output),
        Command::Select {
            log,
            reference,
            data,
            lag,
            output,
        } => cmd_select(&log, reference.as_deref(), &data, lag, &output),
        Command::Evaluate {
            log,
            labels,
            truth,
            output,
        } => cmd_evaluate(log.as_deref(), labels.as_deref(), &truth, &output),
        Command::Predict {
            log,
            data,
            lag,
            output,
        } => cmd_predict(&log, &data, lag, &output),
    }
}

fn cmd_simulate(name: &str, seed: u64, output: &Path) -> Result<()> {
    std::fs::create_dir_all(output)?;
    let truth = preset(name, seed)?;
    write_dataset_csv(output.join("dataset.csv").as_path(), &truth.dataset)?;

    let ids: Vec<String> = truth.dataset.series().iter().map(|s| s.id.clone()).collect();
    let labels: Vec<Vec<usize>> = truth.truth_modes.iter().map(|m| m.states.clone()).collect();
    write_labels_csv(
        output.join("truth_labels.csv").as_path(),
        &ids,
        truth.dataset.lag(),
        &labels,
    )?;
    write_feature_matrix_csv(
        output.join("truth_features.csv").as_path(),
        &ids,
        &truth.truth_features,
    )?;

    let mut hasher = Sha256::new();
    hasher.update(format!("simulate:{name}:{seed}").as_bytes());
    let mut extra = BTreeMap::new();
    extra.insert("num_series".into(), truth.dataset.num_series().to_string());
    extra.insert(
        "num_behaviors".into(),
        truth.truth_features.num_features().to_string(),
    );
    write_manifest(
        output.join("manifest.json").as_path(),
        &Manifest {
            command: "simulate".into(),
            config_hash: hex::encode(hasher.finalize()),
            seed,
            chains: 0,
            chain_seeds: vec![],
            preset: Some(name.to_string()),
            extra,
        },
    )?;
    println!("wrote dataset, truth labels, truth features to {}", output.display());
    Ok(())
}

fn cmd_preprocess(
    input: &Path,
    window: usize,
    rescale: bool,
    lag: usize,
    output: &Path,
) -> Result<()> {
    std::fs::create_dir_all(output)?;
    let data = read_dataset_csv::<f64>(input, lag)?;
    let averaged = block_average(&data, window)?;
    let (transformed, params) = if rescale {
        let scales = first_difference_scales(&averaged)?;
        let scaled = apply_scales(&averaged, &scales, false)?;
        (scaled, TransformParams { window, scales })
    } else {
        let d = data.dim();
        (
            averaged,
            TransformParams {
                window,
                scales: vec![1.0; d],
            },
        )
    };
    write_dataset_csv(output.join("dataset.csv").as_path(), &transformed)?;
    std::fs::write(
        output.join("transform.json"),
        serde_json::to_string_pretty(&params).map_err(Error::from)?,
    )?;
    println!(
        "wrote preprocessed dataset (window={window}, rescale={rescale}) to {}",
        output.display()
    );
    Ok(())
}

fn cmd_fit(
    data_path: &Path,
    config_path: Option<&Path>,
    seed: Option<u64>,
    chains: Option<usize>,
    iterations: Option<u64>,
    resume: bool,
    output: &Path,
) -> Result<()> {
    std::fs::create_dir_all(output)?;
    let mut file_cfg = match config_path {
        Some(p) => read_config(p)?,
        None => FileConfig::default(),
    };
    if let Some(s) = seed {
        file_cfg.run.seed = s;
    }
    if let Some(c) = chains {
        file_cfg.run.chains = c;
    }
    if let Some(it) = iterations {
        file_cfg.run.iterations = it;
    }
    let run_cfg = file_cfg.to_run_config();
    run_cfg
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;
    let config_hash = file_cfg.hash();

    let dataset = read_dataset_csv::<f64>(data_path, file_cfg.model.lag)?;
    let prior = default_mniw_prior(&dataset, &run_cfg)?;

    let chain_seeds: Vec<u64> = (0..run_cfg.chains).map(|c| run_cfg.chain_seed(c)).collect();
    write_manifest(
        output.join("manifest.json").as_path(),
        &Manifest {
            command: "fit".into(),
            config_hash: config_hash.clone(),
            seed: run_cfg.seed,
            chains: run_cfg.chains,
            chain_seeds: chain_seeds.clone(),
            preset: None,
            extra: BTreeMap::new(),
        },
    )?;

    for chain in 0..run_cfg.chains {
        let log_path = output.join(format!("chain_{chain}.jsonl"));
        let ckpt_path = output.join(format!("chain_{chain}.ckpt"));

        let (mut state, mut log) = if resume {
            let state = read_checkpoint::<f64>(&ckpt_path, &config_hash)?;
            (state, SampleLogWriter::append(&log_path)?)
        } else {
            let state = initialize(&dataset, &run_cfg, &prior, chain_seeds[chain])?;
            (state, SampleLogWriter::create(&log_path)?)
        };

        if state.iteration == 0 {
            log.write(&SampleRecord::from_state(&state, &dataset, &prior)?)?;
        }
        while state.iteration < run_cfg.iterations {
            let last_valid = state.clone();
            if let Err(e) = sweep(&mut state, &dataset, &prior) {
                // keep the last valid state recoverable before bailing out
                write_checkpoint(&ckpt_path, &last_valid, &config_hash)?;
                log.finish()?;
                return Err(e);
            }
            let it = state.iteration;
            if it > run_cfg.burn_in && (it - run_cfg.burn_in) % run_cfg.thinning == 0 {
                log.write(&SampleRecord::from_state(&state, &dataset, &prior)?)?;
            }
            if run_cfg.checkpoint_every > 0 && it % run_cfg.checkpoint_every == 0 {
                write_checkpoint(&ckpt_path, &state, &config_hash)?;
            }
        }
        write_checkpoint(&ckpt_path, &state, &config_hash)?;
        log.finish()?;
        println!(
            "chain {chain}: {} iterations, K+ = {}, log joint = {:.3}",
            state.iteration,
            state.features.num_features(),
            joint_log_prob(&state, &dataset, &prior)?
        );
    }
    Ok(())
}

fn cmd_select(
    log: &Path,
    reference: Option<&Path>,
    data_path: &Path,
    lag: usize,
    output: &Path,
) -> Result<()> {
    std::fs::create_dir_all(output)?;
    let dataset = read_dataset_csv::<f64>(data_path, lag)?;
    let candidates = read_sample_log::<f64>(log)?;
    if candidates.is_empty() {
        return Err(Error::Data(format!("{}: empty sample log", log.display())));
    }
    let cand_modes: Vec<Vec<Vec<usize>>> =
        candidates.iter().map(|r| r.mode_sequences()).collect();
    let ref_modes: Vec<Vec<Vec<usize>>> = match reference {
        Some(p) => read_sample_log::<f64>(p)?
            .iter()
            .map(|r| r.mode_sequences())
            .collect(),
        None => cand_modes.clone(),
    };
    let (best, score) = select_min_expected_hamming(&cand_modes, &ref_modes)?;

    let mut w = csv::Writer::from_path(output.join("selection.csv"))?;
    w.write_record(["sample_index", "iteration", "mean_hamming"])?;
    w.write_record([
        best.to_string(),
        candidates[best].iteration.to_string(),
        format!("{score}"),
    ])?;
    w.flush()?;

    let ids: Vec<String> = dataset.series().iter().map(|s| s.id.clone()).collect();
    write_labels_csv(
        output.join("selected_labels.csv").as_path(),
        &ids,
        dataset.lag(),
        &cand_modes[best],
    )?;
    println!(
        "selected sample {best} (iteration {}) with mean matched-Hamming {score:.6}",
        candidates[best].iteration
    );
    Ok(())
}

fn cmd_evaluate(
    log: Option<&Path>,
    labels: Option<&Path>,
    truth_path: &Path,
    output: &Path,
) -> Result<()> {
    let truth: Vec<Vec<usize>> = read_labels_csv(truth_path)?
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    let mut w = csv::Writer::from_path(output)?;
    w.write_record(["iteration", "hamming", "mismatches", "total"])?;
    match (log, labels) {
        (Some(log), None) => {
            for rec in read_sample_log::<f64>(log)? {
                let h = hamming_matched(&rec.mode_sequences(), &truth)?;
                w.write_record([
                    rec.iteration.to_string(),
                    format!("{}", h.distance),
                    h.mismatches.to_string(),
                    h.total.to_string(),
                ])?;
            }
        }
        (None, Some(labels)) => {
            let est: Vec<Vec<usize>> = read_labels_csv(labels)?
                .into_iter()
                .map(|(_, v)| v)
                .collect();
            let h = hamming_matched(&est, &truth)?;
            w.write_record([
                "0".to_string(),
                format!("{}", h.distance),
                h.mismatches.to_string(),
                h.total.to_string(),
            ])?;
        }
        _ => {
            return Err(Error::InvalidInput(
                "evaluate needs exactly one of --log or --labels".into(),
            ))
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_predict(log: &Path, data_path: &Path, lag: usize, output: &Path) -> Result<()> {
    let heldout = read_dataset_csv::<f64>(data_path, lag)?;
    let records = read_sample_log::<f64>(log)?;
    let mut w = csv::Writer::from_path(output)?;
    w.write_record(["iteration", "log_likelihood"])?;
    for rec in records {
        let features = FeatureMatrix::from_flags_unchecked(rec.features.clone());
        let behaviors = rec
            .coeffs
            .iter()
            .zip(&rec.noise_covs)
            .map(|(a, s)| VarBehavior::new(a.clone(), s.clone()))
            .collect::<Result<Vec<_>>>()?;
        let library = BehaviorLibrary::new(behaviors);
        let ll = heldout_predictive_loglik(&features, &rec.eta, &library, &heldout)?;
        w.write_record([rec.iteration.to_string(), format!("{ll:?}")])?;
    }
    w.flush()?;
    Ok(())
}
