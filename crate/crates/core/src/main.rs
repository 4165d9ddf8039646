use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use repsim::diagnostics::{
    collapse_similarity_signature, latent_probe_with, latent_stats, per_dim_kl, progressive_decoder_retrain,
    retrain_to_csv, signature_to_csv, transfer_reconstruction_grid, RetrainOrder,
};
use repsim::heatmap::{average_heatmap, render, render_mask, RenderFormat};
use repsim::io::{
    matrix_from_csv, read_act_file, read_checkpoint_file, write_act_file, write_capture, write_checkpoint_file,
    write_pgm_file, ActivationFile, ExperimentConfig, ModelCheckpoint,
};
use repsim::metrics::{similarity, MetricKind};
use repsim::rng::SplitMix64;
use repsim::synthbench::{run_limitation_sweep, sweep_to_csv};
use repsim::synthdata::{factor_bins, make_domain_with_width, parse_labels_csv, DomainId, Factor};
use repsim::vae::{capture_activations, train, ActivationCapture, FreezeMask, ObjectiveSpec, VaeModel};
use repsim::{Error, Matrix, Result};

#[derive(Parser)]
#[command(
    name = "repsim",
    version,
    about = "Representational similarity experiments on small VAEs"
)]
struct Cli {
    /// Flat `key = value` file overriding built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Similarity score between two activation matrices.
    Sim {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "cka")]
        metric: MetricKind,
        /// Read both inputs as CSV matrices instead of .act files.
        #[arg(long)]
        csv: bool,
    },
    /// Feature-overlap sweep comparing CKA and Procrustes.
    BenchFig1 {
        #[arg(long, value_delimiter = ',', default_values_t = [100, 500, 2000, 5000])]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 0.8])]
        fractions: Vec<f64>,
        /// Number of seeds (0, 1, ..).
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generates a sprite dataset as an .act matrix plus a labels CSV.
    MakeData {
        #[arg(long)]
        domain: DomainId,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains a VAE and writes its checkpoint (and optional captures).
    Train {
        #[arg(long)]
        domain: DomainId,
        /// e.g. `vanilla`, `beta:4`, `annealed:c_max=5`, `beta_tc:4`, `dip_ii:5`.
        #[arg(long)]
        objective: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        /// Save a checkpoint and per-layer captures every K steps (0: only the final model).
        #[arg(long, default_value_t = 0)]
        capture_every: u64,
        /// Evaluation images for captures; defaults to a generated set from the same domain.
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Writes one .act file per layer of a model evaluated on `--eval`.
    Capture {
        model: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Seed-averaged layer-by-layer similarity between two model families.
    Heatmap {
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long, default_value = "cka")]
        metric: MetricKind,
        /// Output prefix, or an existing directory for `<A>_<B>_<metric>.*` names.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-dimension latent statistics and a collapse verdict.
    Diagnose {
        model: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        /// Healthy reference model for the mean/variance/sampled similarity signature.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Image grid of target inputs beside their reconstructions.
    TransferGrid {
        model: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrains progressively more decoder layers on a target domain.
    RetrainDecoder {
        model: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long, default_value = "target")]
        domain: DomainId,
        /// Training images; defaults to a generated set from `--domain`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "innermost_first")]
        order: RetrainOrder,
        #[arg(long)]
        stages: Option<usize>,
        #[arg(long)]
        steps_per_stage: Option<u64>,
        #[arg(long, default_value = "vanilla")]
        objective: String,
    },
    /// Linear probe predicting a binned factor from one captured layer.
    Probe {
        model: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        /// Labels CSV; defaults to the `.labels.csv` next to `--eval`.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value = "pos_x")]
        factor: Factor,
        #[arg(long, default_value = "mean")]
        layer: String,
        #[arg(long)]
        bins: Option<usize>,
        /// Shuffle the labels with this seed (a chance-level control).
        #[arg(long)]
        shuffle_seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::Sim { a, b, metric, csv } => {
            let x = load_matrix(&a, csv)?;
            let y = load_matrix(&b, csv)?;
            let s = similarity(metric, &x, &y)?;
            println!("metric={} score={:.6} n={}", s.kind, s.value, s.n_examples);
        }
        Command::BenchFig1 {
            n,
            fractions,
            seeds,
            out,
        } => {
            let seeds: Vec<u64> = (0..seeds).collect();
            let rows = run_limitation_sweep(&n, &fractions, &seeds, cfg.bench_features)?;
            fs::write(&out, sweep_to_csv(&rows))?;
            println!("rows={} out={}", rows.len(), out.display());
        }
        Command::MakeData { domain, n, seed, out } => {
            let data = make_domain_with_width(domain, n, seed, cfg.data_width)?;
            write_images(&out, &domain.to_string(), &data.images)?;
            let labels = labels_path(&out);
            fs::write(&labels, data.labels_csv())?;
            println!("examples={n} out={} labels={}", out.display(), labels.display());
        }
        Command::Train {
            domain,
            objective,
            seed,
            out,
            steps,
            capture_every,
            eval,
        } => cmd_train(
            &cfg,
            domain,
            &objective,
            seed,
            &out,
            steps,
            capture_every,
            eval.as_deref(),
        )?,
        Command::Capture { model, eval, out_dir } => {
            let ckpt = read_checkpoint_file(&model)?;
            let images = load_matrix(&eval, false)?;
            let cap = capture_model(&ckpt, &model_id(&model), &images)?;
            fs::create_dir_all(&out_dir)?;
            let written = write_capture(&out_dir, &model_id(&model), &cap)?;
            println!("files={} out_dir={}", written.len(), out_dir.display());
        }
        Command::Heatmap {
            a,
            b,
            eval,
            metric,
            out,
        } => cmd_heatmap(&a, &b, &eval, metric, &out)?,
        Command::Diagnose { model, eval, reference } => {
            let ckpt = read_checkpoint_file(&model)?;
            let images = load_matrix(&eval, false)?;
            let cap = capture_model(&ckpt, &model_id(&model), &images)?;
            let diag = latent_stats(&cap, &per_dim_kl(&cap)?, &cfg.thresholds)?;
            print!("{}", diag.to_csv());
            println!("{}", diag.verdict_record());
            if let Some(reference) = reference {
                let ref_ckpt = read_checkpoint_file(&reference)?;
                let ref_cap = capture_model(&ref_ckpt, &model_id(&reference), &images)?;
                print!("{}", signature_to_csv(&collapse_similarity_signature(&ref_cap, &cap)?));
            }
        }
        Command::TransferGrid { model, eval, n, out } => {
            let ckpt = read_checkpoint_file(&model)?;
            let images = load_matrix(&eval, false)?;
            let width = (images.cols() as f64).sqrt().round() as usize;
            let grid = transfer_reconstruction_grid(&ckpt.model, &images, width, n, ckpt.seed)?;
            write_pgm_file(&out, &grid.pixels)?;
            println!("rows={} out={}", grid.n_examples, out.display());
        }
        Command::RetrainDecoder {
            model,
            eval,
            domain,
            data,
            order,
            stages,
            steps_per_stage,
            objective,
        } => {
            let ckpt = read_checkpoint_file(&model)?;
            let eval_images = load_matrix(&eval, false)?;
            let train_images = match data {
                Some(p) => load_matrix(&p, false)?,
                None => make_domain_with_width(domain, cfg.data_train_examples, cfg.data_seed, cfg.data_width)?.images,
            };
            let objective = ObjectiveSpec::parse_with_base(&objective, &cfg.objective)?;
            let steps = steps_per_stage.unwrap_or(cfg.retrain_steps_per_stage);
            let config = cfg.train_config(steps, ckpt.seed, 0);
            let result = progressive_decoder_retrain(
                &ckpt.model,
                &train_images,
                &eval_images,
                order,
                stages.unwrap_or(cfg.retrain_stages),
                &objective,
                &config,
            )?;
            print!("{}", retrain_to_csv(order, &result));
        }
        Command::Probe {
            model,
            eval,
            labels,
            factor,
            layer,
            bins,
            shuffle_seed,
        } => {
            let ckpt = read_checkpoint_file(&model)?;
            let images = load_matrix(&eval, false)?;
            let labels_file = labels.unwrap_or_else(|| labels_path(&eval));
            let specs = parse_labels_csv(&repsim::io::read_text(&labels_file)?)?;
            let width = (images.cols() as f64).sqrt().round() as usize;
            let mut classes = factor_bins(&specs, factor, bins.unwrap_or(cfg.probe_bins), width);
            if let Some(seed) = shuffle_seed {
                SplitMix64::new(seed).shuffle(&mut classes);
            }
            let cap = capture_model(&ckpt, &model_id(&model), &images)?;
            let latents = cap
                .layer(&layer)
                .ok_or_else(|| Error::InvalidInput(format!("no layer named '{layer}'")))?;
            let r = latent_probe_with(latents, &classes, &cfg.probe)?;
            println!(
                "layer={layer} classes={} train_accuracy={:.6} test_accuracy={:.6} chance={:.6}",
                r.n_classes, r.train_accuracy, r.test_accuracy, r.chance
            );
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    cfg: &ExperimentConfig,
    domain: DomainId,
    objective: &str,
    seed: u64,
    out: &Path,
    steps: Option<u64>,
    capture_every: u64,
    eval: Option<&Path>,
) -> Result<()> {
    let objective = ObjectiveSpec::parse_with_base(objective, &cfg.objective)?;
    let steps = steps.unwrap_or(cfg.train.steps);
    let interval = if capture_every > 0 {
        capture_every
    } else {
        cfg.train.checkpoint_interval
    };
    let data = make_domain_with_width(domain, cfg.data_train_examples, cfg.data_seed, cfg.data_width)?;
    let init = VaeModel::new(cfg.architecture(), seed)?;
    let config = cfg.train_config(steps, seed, interval);
    let (model, checkpoints, last_loss) = if steps == 0 {
        (init, Vec::new(), None)
    } else {
        let outcome = train(&init, &data.images, &objective, &config, &FreezeMask::none())?;
        (outcome.model, outcome.checkpoints, outcome.losses.last().copied())
    };
    write_checkpoint_file(
        out,
        &ModelCheckpoint {
            model,
            objective,
            step: steps,
            seed,
        },
    )?;
    if capture_every > 0 {
        let eval_images = match eval {
            Some(p) => load_matrix(p, false)?,
            None => make_domain_with_width(domain, cfg.eval_examples, cfg.eval_seed, cfg.data_width)?.images,
        };
        let dir = out.parent().unwrap_or(Path::new("."));
        let stem = model_id(out);
        for c in checkpoints {
            let ckpt = ModelCheckpoint {
                model: c.model,
                objective,
                step: c.step,
                seed,
            };
            let name = format!("{stem}_step{}", c.step);
            write_checkpoint_file(&dir.join(format!("{name}.vaec")), &ckpt)?;
            write_capture(dir, &name, &capture_model(&ckpt, &name, &eval_images)?)?;
        }
    }
    match last_loss {
        Some(l) => println!("steps={steps} final_loss={l:.6} out={}", out.display()),
        None => println!("steps=0 out={}", out.display()),
    }
    Ok(())
}

fn cmd_heatmap(a: &str, b: &str, eval: &Path, metric: MetricKind, out: &Path) -> Result<()> {
    let images = load_matrix(eval, false)?;
    let family = |pattern: &str| -> Result<(Vec<PathBuf>, Vec<ActivationCapture>)> {
        let paths = expand_glob(pattern)?;
        let caps = paths
            .iter()
            .map(|p| capture_model(&read_checkpoint_file(p)?, &model_id(p), &images))
            .collect::<Result<Vec<_>>>()?;
        Ok((paths, caps))
    };
    let (paths_a, caps_a) = family(a)?;
    let (paths_b, caps_b) = family(b)?;
    let h = average_heatmap(&caps_a, &caps_b, metric)?;
    if out.as_os_str().to_string_lossy().ends_with(std::path::MAIN_SEPARATOR) {
        fs::create_dir_all(out)?;
    }
    let prefix = if out.is_dir() {
        out.join(format!(
            "{}_{}_{metric}",
            family_name(&paths_a[0]),
            family_name(&paths_b[0])
        ))
    } else {
        out.to_path_buf()
    };
    for format in [RenderFormat::Csv, RenderFormat::Pgm, RenderFormat::Svg] {
        fs::write(with_suffix(&prefix, format.extension()), render(&h, format))?;
    }
    if let Some(mask) = render_mask(&h) {
        fs::write(with_suffix(&prefix, "mask.pgm"), mask)?;
    }
    let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.6}"));
    println!(
        "pairs={} encoder_block_mean={} decoder_block_mean={} out={}",
        h.n_seed_pairs,
        fmt(h.encoder_block_mean()),
        fmt(h.decoder_block_mean()),
        prefix.display()
    );
    Ok(())
}

fn expand_glob(pattern: &str) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| Error::InvalidInput(format!("bad glob '{pattern}': {e}")))?
        .filter_map(|p| p.ok())
        .collect();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!("no files match '{pattern}'")));
    }
    Ok(paths)
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn model_id(path: &Path) -> String {
    path.file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

/// Model id with a trailing seed marker (`_3`, `-seed3`, `seed3`) removed.
fn family_name(path: &Path) -> String {
    let id = model_id(path);
    let rest = id.trim_end_matches(|c: char| c.is_ascii_digit());
    if rest.len() == id.len() {
        return id;
    }
    let stripped = match rest.strip_suffix("seed") {
        Some(r) => r.trim_end_matches(['_', '-']),
        None if rest.ends_with(['_', '-']) => &rest[..rest.len() - 1],
        None => return id,
    };
    if stripped.is_empty() {
        id
    } else {
        stripped.to_string()
    }
}

fn labels_path(images: &Path) -> PathBuf {
    images.with_extension("labels.csv")
}

fn load_matrix(path: &Path, csv: bool) -> Result<Matrix> {
    if csv || path.extension().is_some_and(|e| e == "csv") {
        matrix_from_csv(&repsim::io::read_text(path)?)
    } else {
        Ok(read_act_file(path)?.matrix)
    }
}

fn write_images(path: &Path, id: &str, images: &Matrix) -> Result<()> {
    write_act_file(
        path,
        &ActivationFile {
            layer_name: "images".into(),
            model_id: id.into(),
            epoch: 0,
            matrix: images.clone(),
        },
    )
}

/// Captures with the model's training seed driving the evaluation noise.
fn capture_model(ckpt: &ModelCheckpoint, id: &str, images: &Matrix) -> Result<ActivationCapture> {
    let mut cap = capture_activations(&ckpt.model, images, ckpt.seed)?;
    cap.model_id = id.to_string();
    cap.epoch = u32::try_from(ckpt.step).unwrap_or(u32::MAX);
    Ok(cap)
}
