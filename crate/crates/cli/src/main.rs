use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlcvae::autograd::{grad_check, GradCheckReport};
use mlcvae::conditioning::{AttributeSpec, LabelCombo};
use mlcvae::data::LabeledDataset;
use mlcvae::eval::{write_ppm_grid, AttributeClassifier, EvalReport};
use mlcvae::experiment::{sweep_missing, ExperimentConfig};
use mlcvae::model::{metrics_toml, standard_normal, Batch, ImageShape, MlcVaeModel};
use mlcvae::par::Exec;
use mlcvae::{rng, Error, Result};

/// Multilinear latent conditioning for VAEs: data preparation, training,
/// generation and evaluation on colored MNIST.
#[derive(Parser, Debug)]
#[command(name = "mlcvae", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, default_value = "mlcvae.toml")]
    config: PathBuf,
    /// Overrides the training and evaluation seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the benchmark dataset and write a preview grid.
    Prepare {
        #[arg(long, default_value_t = 8)]
        per_combo: usize,
    },
    /// Train a model and save `model.ckpt` and `metrics.toml`.
    Train,
    /// Sample images of one combination.
    Sample {
        #[command(flatten)]
        ckpt: Checkpoint,
        /// Class names separated by commas, e.g. `2,orange`.
        #[arg(long)]
        combo: String,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        cols: usize,
    },
    /// Re-attribute a training image.
    Transfer {
        #[command(flatten)]
        ckpt: Checkpoint,
        /// Index into the prepared (pre-holdout) dataset.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Target combinations; every combination when omitted.
        #[arg(long)]
        to: Vec<String>,
    },
    /// Decode the segment between two class means.
    Interpolate {
        #[command(flatten)]
        ckpt: Checkpoint,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long, default_value_t = 8)]
        steps: usize,
    },
    /// Classifier-measured generation accuracy; writes `report.toml`.
    Eval {
        #[command(flatten)]
        ckpt: Checkpoint,
    },
    /// Accuracy on unseen combinations as more combinations are removed.
    Sweep {
        /// Comma-separated counts of removed combinations.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Finite-difference check of the training loss gradients.
    Gradcheck {
        /// Use the configured architecture instead of a reduced one.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Coordinates checked per parameter array.
        #[arg(long, default_value_t = 20)]
        coords: usize,
    },
    /// Dump posterior means and labels as tab-separated text.
    Latents {
        #[command(flatten)]
        ckpt: Checkpoint,
    },
}

#[derive(Args, Debug)]
struct Checkpoint {
    /// Model checkpoint; defaults to `<out>/model.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl Checkpoint {
    fn load(&self, out: &Path) -> Result<MlcVaeModel> {
        MlcVaeModel::load(&self.checkpoint.clone().unwrap_or_else(|| out.join("model.ckpt")))
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    exec: Exec,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| Error::file(&p, e))?;
        Ok(p)
    }

    fn grid(&self, name: &str, images: &[Vec<f64>], cols: usize) -> Result<PathBuf> {
        let shape = self.cfg.image_shape();
        let cols = cols.max(1);
        let rows = images.len().div_ceil(cols).max(1);
        let refs: Vec<&[f64]> = images.iter().map(Vec::as_slice).collect();
        let p = self.path(name);
        write_ppm_grid(&refs, shape.height, shape.width, rows, cols, &p)?;
        Ok(p)
    }

    /// Loads classifiers from `<out>/classifiers`, training and saving
    /// them first when absent.
    fn classifiers(&self) -> Result<Vec<AttributeClassifier>> {
        let dir = self.path("classifiers");
        let (train, test) = self.cfg.classifier_data()?;
        let names: Vec<String> = train.spec().attributes().iter().map(|a| a.name.clone()).collect();
        let paths: Vec<PathBuf> = names.iter().map(|n| dir.join(format!("{n}.ckpt"))).collect();
        let clfs = if paths.iter().all(|p| p.exists()) {
            paths.iter().map(|p| AttributeClassifier::load(p)).collect::<Result<Vec<_>>>()?
        } else {
            fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
            let clfs = self.cfg.train_classifiers(&train, self.exec)?;
            for (c, p) in clfs.iter().zip(&paths) {
                c.save(p)?;
            }
            clfs
        };
        for c in &clfs {
            println!("classifier {:<10} test accuracy {:6.2}%", c.attribute(), c.accuracy(&test, self.exec)?);
        }
        Ok(clfs)
    }
}

fn parse_combo(spec: &AttributeSpec, text: &str) -> Result<LabelCombo> {
    let names: Vec<&str> = text.split(',').map(str::trim).collect();
    spec.parse_combo(&names)
}

fn print_report(r: &EvalReport) {
    if !r.note.is_empty() {
        println!("note: {}", r.note);
    }
    for (i, a) in r.attributes.iter().enumerate() {
        let unseen = r.unseen_accuracy.get(i).map_or("-".to_string(), |v| format!("{v:.2}"));
        let seen = r.seen_accuracy.get(i).map_or("-".to_string(), |v| format!("{v:.2}"));
        println!("{a:<10} unseen {unseen:>6}  seen {seen:>6}");
    }
}

fn gradcheck(ctx: &Ctx, full: bool, step: f64, coords: usize) -> Result<GradCheckReport> {
    let cfg = &ctx.cfg;
    let attrs = cfg.spec()?;
    let mut model_cfg = cfg.model.clone();
    let image = if full {
        cfg.image_shape()
    } else {
        model_cfg.hidden = vec![16, 8];
        model_cfg.latent_dim = model_cfg.latent_dim.min(4);
        if let mlcvae::conditioning::Variant::Tucker { ranks } = &mut model_cfg.variant {
            ranks[0] = ranks[0].min(model_cfg.latent_dim);
        }
        ImageShape {
            height: 4,
            width: 4,
            channels: 3,
        }
    };
    let model = MlcVaeModel::new(attrs.clone(), image, model_cfg, cfg.train.seed)?;
    let rows = 4;
    let mut r = rng::stream(cfg.train.seed, rng::streams::CHECK);
    let combos: Vec<LabelCombo> = attrs.combos().into_iter().take(rows).collect();
    let x = standard_normal(&mut r, (combos.len(), image.len())).mapv(|v| 1.0 / (1.0 + (-v).exp()));
    let eps = standard_normal(&mut r, (combos.len(), model.latent_dim()));
    let gumbel_u = model.unlabeled_attribute().map(|u| {
        let d = attrs.cardinalities()[u];
        standard_normal(&mut r, (combos.len(), d)).mapv(|v| 1.0 / (1.0 + (-v).exp()))
    });
    let batch = Batch {
        x,
        ys: attrs.one_hot_batch(&combos)?,
        eps,
        gumbel_u,
    };
    let mut store = model.store.clone();
    grad_check(&mut store, step, Some(coords), |tape| Ok(model.elbo_graph(tape, &batch)?.total))
}

fn write_latents(ctx: &Ctx, model: &MlcVaeModel, ds: &LabeledDataset) -> Result<PathBuf> {
    let spec = ds.spec();
    let mut text = spec.attributes().iter().map(|a| a.name.clone()).collect::<Vec<_>>().join("\t");
    for j in 0..model.latent_dim() {
        text.push_str(&format!("\tz{j}"));
    }
    text.push('\n');
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(1000) {
        let combos: Vec<LabelCombo> = chunk.iter().map(|&i| ds.combo(i)).collect();
        let z = model.encode_means(&ds.image_batch(chunk, ctx.exec), &combos)?;
        for (c, row) in combos.iter().zip(z.rows()) {
            let mut fields = spec.combo_names(c);
            fields.extend(row.iter().map(|v| format!("{v:.6}")));
            text.push_str(&fields.join("\t"));
            text.push('\n');
        }
    }
    ctx.write("latents.tsv", &text)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.eval.seed = seed;
    }
    fs::create_dir_all(&cli.out).map_err(|e| Error::file(&cli.out, e))?;
    let ctx = Ctx {
        cfg,
        out: cli.out,
        exec: if cli.sequential { Exec::Sequential } else { Exec::Parallel },
    };
    match cli.command {
        Command::Prepare { per_combo } => {
            let prep = ctx.cfg.prepare()?;
            let spec = prep.full.spec();
            println!("{} images, {} after holdout", prep.full.len(), prep.split.train.len());
            let counts = prep.full.combo_counts();
            let mut images = Vec::new();
            for (combo, count) in spec.combos().iter().zip(&counts) {
                let held = prep.split.heldout_combos.contains(combo);
                println!("{:<24} {count:>6}{}", spec.combo_names(combo).join(","), if held { "  held out" } else { "" });
                let mut shown = 0;
                for i in 0..prep.full.len() {
                    if shown == per_combo {
                        break;
                    }
                    if &prep.full.combo(i) == combo {
                        images.push(prep.full.image(i));
                        shown += 1;
                    }
                }
                images.resize(images.len() + per_combo - shown, vec![0.0; prep.full.pixel_len()]);
            }
            println!("wrote {}", ctx.grid("prepare.ppm", &images, per_combo)?.display());
        }
        Command::Train => {
            let prep = ctx.cfg.prepare()?;
            let mut metrics = Vec::new();
            let model = ctx.cfg.train_model(&prep.split.train, ctx.exec, |m| {
                println!(
                    "epoch {:>3}  loss {:9.3}  recon {:9.3}  label {:7.4}  kl {:8.3}",
                    m.epoch, m.mean.total, m.mean.recon, m.mean.label_ce, m.mean.kl
                );
                metrics.push(m.clone());
            })?;
            let p = ctx.path("model.ckpt");
            model.save(&p)?;
            ctx.write("metrics.toml", &metrics_toml(&metrics)?)?;
            println!("wrote {}", p.display());
        }
        Command::Sample { ckpt, combo, n, cols } => {
            let model = ckpt.load(&ctx.out)?;
            let c = parse_combo(model.spec(), &combo)?;
            let imgs = model.sample_combo(&c, n, ctx.cfg.eval.seed)?;
            let images: Vec<Vec<f64>> = imgs.rows().into_iter().map(|r| r.to_vec()).collect();
            let name = format!("sample-{}.ppm", model.spec().combo_names(&c).join("-"));
            println!("wrote {}", ctx.grid(&name, &images, cols)?.display());
        }
        Command::Transfer { ckpt, index, to } => {
            let model = ckpt.load(&ctx.out)?;
            let prep = ctx.cfg.prepare()?;
            if index >= prep.full.len() {
                return Err(Error::Config(format!("index {index} outside dataset of {}", prep.full.len())));
            }
            let spec = model.spec();
            let targets = if to.is_empty() {
                spec.combos()
            } else {
                to.iter().map(|t| parse_combo(spec, t)).collect::<Result<Vec<_>>>()?
            };
            let x = prep.full.image(index);
            let src = prep.full.combo(index);
            let mut images = vec![x.clone()];
            for t in &targets {
                images.push(model.transfer(&x, &src, t)?);
            }
            println!("source {} → {} targets", spec.combo_names(&src).join(","), targets.len());
            println!("wrote {}", ctx.grid("transfer.ppm", &images, images.len().min(11))?.display());
        }
        Command::Interpolate { ckpt, from, to, steps } => {
            let model = ckpt.load(&ctx.out)?;
            let a = parse_combo(model.spec(), &from)?;
            let b = parse_combo(model.spec(), &to)?;
            let imgs = model.interpolate(&a, &b, steps)?;
            let images: Vec<Vec<f64>> = imgs.rows().into_iter().map(|r| r.to_vec()).collect();
            println!("wrote {}", ctx.grid("interpolate.ppm", &images, steps)?.display());
        }
        Command::Eval { ckpt } => {
            let model = ckpt.load(&ctx.out)?;
            let clfs = ctx.classifiers()?;
            let unseen = ctx.cfg.holdout_combos(model.spec())?;
            let report = ctx.cfg.evaluate(&model, &clfs, &unseen, ctx.exec)?;
            print_report(&report);
            println!("wrote {}", ctx.write("report.toml", &report.to_toml()?)?.display());
        }
        Command::Sweep { ks, trials } => {
            let prep = ctx.cfg.prepare()?;
            let clfs = ctx.classifiers()?;
            let ks = ks.unwrap_or_else(|| ctx.cfg.sweep.ks.clone());
            let trials = trials.unwrap_or(ctx.cfg.sweep.trials);
            let table = sweep_missing(&ctx.cfg, &prep.full, &clfs, &ks, trials, ctx.cfg.eval.seed, ctx.exec)?;
            for row in &table.rows {
                let accs: Vec<String> = table
                    .attributes
                    .iter()
                    .zip(&row.mean_unseen_accuracy)
                    .map(|(a, v)| format!("{a} {v:.2}"))
                    .collect();
                println!("k={:<3} {} {}", row.k, accs.join("  "), row.note);
            }
            println!("wrote {}", ctx.write("sweep.toml", &table.to_toml()?)?.display());
        }
        Command::Gradcheck { full, step, coords } => {
            let report = gradcheck(&ctx, full, step, coords)?;
            println!(
                "max relative error {:.3e} ({} coordinates; worst {}[{}]: analytic {:.6e}, numeric {:.6e})",
                report.max_rel_error, report.coords_checked, report.worst_param, report.worst_index, report.analytic, report.numeric
            );
            return Ok(if report.max_rel_error <= 1e-4 { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Latents { ckpt } => {
            let model = ckpt.load(&ctx.out)?;
            let prep = ctx.cfg.prepare()?;
            println!("wrote {}", write_latents(&ctx, &model, &prep.split.train)?.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Keeps freed memory in the heap instead of returning large blocks to the
/// OS, which otherwise happens for every temporary array of a training step.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn retain_heap() {
    // glibc caps the mmap threshold at 32 MiB.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn retain_heap() {}

fn main() -> ExitCode {
    retain_heap();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::File { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
