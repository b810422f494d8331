//! Experiment configuration and the end-to-end protocols: dataset
//! preparation, classifier training, model training, evaluation and the
//! missing-combination sweep.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conditioning::{Attribute, AttributeSpec, LabelCombo};
use crate::data::{
    digit_attribute, draw_combos, load_mnist, make_colored, make_mixed_up, make_three_attribute, split_holdout, HoldoutSplit,
    LabeledDataset, Palette, RawImageSet, Split,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_unseen, AttributeClassifier, ClassifierConfig, EvalReport, FeatureMode};
use crate::model::{EpochMetrics, ImageShape, MlcVaeModel, ModelConfig, TrainConfig};
use crate::par::Exec;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    /// Digit × color, color drawn uniformly per image.
    Colored,
    /// Two colors with the color label of odd digits flipped.
    MixedUp,
    /// Digit × color × thickness.
    ThreeAttribute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub mnist_dir: PathBuf,
    #[serde(default = "default_train_count")]
    pub train_count: usize,
    pub benchmark: Benchmark,
    pub colors: Vec<String>,
    /// Held-out combinations by class name, one list per combination.
    #[serde(default)]
    pub holdout: Vec<Vec<String>>,
    #[serde(default)]
    pub data_seed: u64,
    /// Extra or replacement palette entries.
    #[serde(default)]
    pub palette: BTreeMap<String, [u8; 3]>,
}

fn default_train_count() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSection {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Real training images drawn from the MNIST training split.
    pub train_count: usize,
    /// Real test images drawn from the MNIST test split.
    pub test_count: usize,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let c = ClassifierConfig::default();
        Self {
            hidden: c.hidden,
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr: c.lr,
            seed: c.seed,
            train_count: 60_000,
            test_count: 10_000,
        }
    }
}

impl ClassifierSection {
    pub fn config(&self) -> ClassifierConfig {
        ClassifierConfig {
            hidden: self.hidden,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub n_per_combo: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_per_combo: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub ks: Vec<usize>,
    pub trials: usize,
    /// Overrides `train.epochs` for sweep models.
    pub epochs: Option<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            ks: vec![3, 9, 20],
            trials: 3,
            epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

/// The benchmark's training data and its holdout split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub full: LabeledDataset,
    pub split: HoldoutSplit,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The config as a TOML table, for echoing into reports.
    pub fn to_table(&self) -> Result<toml::Table> {
        toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.colors.len() < 2 {
            return Err(Error::Config("at least two colors are needed".into()));
        }
        if self.data.benchmark == Benchmark::MixedUp && self.data.colors.len() != 2 {
            return Err(Error::Config("the mixed-up benchmark uses exactly two colors".into()));
        }
        if self.data.train_count == 0 {
            return Err(Error::Config("train_count must be positive".into()));
        }
        if self.eval.n_per_combo == 0 {
            return Err(Error::Config("n_per_combo must be positive".into()));
        }
        let palette = self.palette();
        for c in &self.data.colors {
            palette.rgb(c).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn palette(&self) -> Palette {
        let mut p = Palette::default();
        for (name, rgb) in &self.data.palette {
            match p.colors.iter_mut().find(|(n, _)| n == name) {
                Some(entry) => entry.1 = *rgb,
                None => p.colors.push((name.clone(), *rgb)),
            }
        }
        p
    }

    pub fn image_shape(&self) -> ImageShape {
        ImageShape {
            height: 28,
            width: 28,
            channels: 3,
        }
    }

    fn colors(&self) -> Vec<&str> {
        self.data.colors.iter().map(String::as_str).collect()
    }

    fn load_split(&self, split: Split, count: usize) -> Result<(RawImageSet, Vec<u8>)> {
        let (mut raw, mut labels) = load_mnist(&self.data.mnist_dir, split)?;
        if count < raw.count {
            raw.truncate(count);
            labels.truncate(count);
        }
        Ok((raw, labels))
    }

    /// Builds the benchmark from raw images. `true_colors` keeps color
    /// labels equal to the rendered color even for the mixed-up benchmark.
    fn build(&self, raw: &RawImageSet, digits: &[u8], seed: u64, true_colors: bool) -> Result<LabeledDataset> {
        let palette = self.palette();
        match self.data.benchmark {
            Benchmark::Colored => make_colored(raw, digits, &self.colors(), &palette, seed),
            Benchmark::MixedUp => {
                let ds = make_colored(raw, digits, &self.colors(), &palette, seed)?;
                if true_colors {
                    Ok(ds)
                } else {
                    make_mixed_up(&ds)
                }
            }
            Benchmark::ThreeAttribute => make_three_attribute(raw, digits, &self.colors(), &palette, seed),
        }
    }

    /// The benchmark's attributes, without loading any images.
    pub fn spec(&self) -> Result<AttributeSpec> {
        let mut attrs = vec![digit_attribute(), Attribute::new("color", &self.colors())];
        if self.data.benchmark == Benchmark::ThreeAttribute {
            attrs.push(Attribute::new("thickness", &["thin", "thick"]));
        }
        AttributeSpec::new(attrs)
    }

    pub fn holdout_combos(&self, spec: &AttributeSpec) -> Result<Vec<LabelCombo>> {
        self.data.holdout.iter().map(|names| spec.parse_combo(names)).collect()
    }

    /// The benchmark's training data with the configured combinations held out.
    pub fn prepare(&self) -> Result<Prepared> {
        let (raw, digits) = self.load_split(Split::Train, self.data.train_count)?;
        let full = self.build(&raw, &digits, self.data.data_seed, false)?;
        let combos = self.holdout_combos(full.spec())?;
        let split = split_holdout(&full, &combos)?;
        Ok(Prepared { full, split })
    }

    /// Real images with labels matching their pixels, for classifier
    /// training (MNIST training split) and testing (MNIST test split).
    pub fn classifier_data(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let (raw, digits) = self.load_split(Split::Train, self.classifier.train_count)?;
        let train = self.build(&raw, &digits, rng::derive(self.data.data_seed, 1), true)?;
        let (raw, digits) = self.load_split(Split::Test, self.classifier.test_count)?;
        let test = self.build(&raw, &digits, rng::derive(self.data.data_seed, 2), true)?;
        Ok((train, test))
    }

    /// One classifier per attribute, each trained on `train`.
    pub fn train_classifiers(&self, train: &LabeledDataset, exec: Exec) -> Result<Vec<AttributeClassifier>> {
        let cfg = self.classifier.config();
        let names: Vec<String> = train.spec().attributes().iter().map(|a| a.name.clone()).collect();
        exec.map(names.len(), |i| {
            AttributeClassifier::train(train, &names[i], FeatureMode::for_attribute(&names[i]), &cfg)
        })
        .into_iter()
        .collect()
    }

    pub fn new_model(&self, spec: &AttributeSpec, seed: u64) -> Result<MlcVaeModel> {
        MlcVaeModel::new(spec.clone(), self.image_shape(), self.model.clone(), seed)
    }

    /// Trains a fresh model on `train` for `self.train.epochs` epochs.
    pub fn train_model(
        &self,
        train: &LabeledDataset,
        exec: Exec,
        on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<MlcVaeModel> {
        let mut model = self.new_model(train.spec(), self.train.seed)?;
        model.train(train, &self.train, exec, on_epoch)?;
        Ok(model)
    }

    /// Classifier-measured accuracy of `model`'s samples on all combinations.
    pub fn evaluate(
        &self,
        model: &MlcVaeModel,
        classifiers: &[AttributeClassifier],
        unseen: &[LabelCombo],
        exec: Exec,
    ) -> Result<EvalReport> {
        let mut report = evaluate_unseen(
            model,
            model.spec(),
            classifiers,
            unseen,
            self.eval.n_per_combo,
            self.eval.seed,
            exec,
        )?;
        report.config = self.to_table()?;
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTrial {
    pub k: usize,
    pub trial: usize,
    pub unseen_combos: Vec<Vec<String>>,
    pub note: String,
    pub unseen_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub trials: usize,
    pub note: String,
    /// Mean over trials, per attribute in [`SweepTable::attributes`] order.
    pub mean_unseen_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub seed: u64,
    pub attributes: Vec<String>,
    pub rows: Vec<SweepRow>,
    pub trials: Vec<SweepTrial>,
}

impl SweepTable {
    pub fn mean(&self, k: usize, attribute: &str) -> Option<f64> {
        let a = self.attributes.iter().position(|x| x == attribute)?;
        self.rows.iter().find(|r| r.k == k)?.mean_unseen_accuracy.get(a).copied()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("sweep table: {e}")))
    }
}

/// For each `k`, removes `k` uniformly drawn combinations from `full`,
/// trains a fresh model and measures unseen-combination accuracy; repeated
/// `trials` times with independent draws and seeds. Trials run in parallel
/// under `exec`; each trial is internally sequential.
pub fn sweep_missing(
    cfg: &ExperimentConfig,
    full: &LabeledDataset,
    classifiers: &[AttributeClassifier],
    ks: &[usize],
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<SweepTable> {
    if trials == 0 {
        return Err(Error::contract("sweep needs at least one trial"));
    }
    let total = full.spec().num_combos();
    if let Some(&k) = ks.iter().find(|&&k| k >= total) {
        return Err(Error::contract(format!("cannot hold out {k} of {total} combinations")));
    }
    let mut trial_cfg = cfg.clone();
    if let Some(e) = cfg.sweep.epochs {
        trial_cfg.train.epochs = e;
    }
    let jobs: Vec<(usize, usize)> = ks.iter().flat_map(|&k| (0..trials).map(move |t| (k, t))).collect();
    let results = exec.map(jobs.len(), |j| -> Result<SweepTrial> {
        let (k, t) = jobs[j];
        let trial_seed = rng::derive(seed, (k * 1000 + t) as u64);
        let combos = if k == 0 {
            vec![]
        } else {
            draw_combos(full.spec(), k, trial_seed)?
        };
        let split = split_holdout(full, &combos)?;
        let mut c = trial_cfg.clone();
        c.train.seed = trial_seed;
        let model = c.train_model(&split.train, Exec::Sequential, |_| {})?;
        let report = evaluate_unseen(
            &model,
            full.spec(),
            classifiers,
            &combos,
            cfg.eval.n_per_combo,
            rng::derive(trial_seed, 1),
            Exec::Sequential,
        )?;
        Ok(SweepTrial {
            k,
            trial: t,
            unseen_combos: report.unseen_combos,
            note: report.note,
            unseen_accuracy: report.unseen_accuracy,
        })
    });
    let trials_out = results.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = ks
        .iter()
        .map(|&k| {
            let of_k: Vec<&SweepTrial> = trials_out.iter().filter(|t| t.k == k).collect();
            let mean = if k == 0 {
                vec![]
            } else {
                (0..classifiers.len())
                    .map(|a| of_k.iter().map(|t| t.unseen_accuracy[a]).sum::<f64>() / of_k.len() as f64)
                    .collect()
            };
            SweepRow {
                k,
                trials: of_k.len(),
                note: of_k.first().map(|t| t.note.clone()).unwrap_or_default(),
                mean_unseen_accuracy: mean,
            }
        })
        .collect();
    Ok(SweepTable {
        seed,
        attributes: classifiers.iter().map(|c| c.attribute().to_string()).collect(),
        rows,
        trials: trials_out,
    })
}

/// Best agreement (percent) between predicted cluster indices and true
/// classes over all relabelings of the clusters, and the relabeling that
/// achieves it (`perm[cluster] = class`).
pub fn cluster_agreement(pred: &[usize], truth: &[usize], k: usize) -> Result<(f64, Vec<usize>)> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::dim(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if k == 0 || k > 8 {
        return Err(Error::contract(format!("cluster matching supports 1..=8 classes, got {k}")));
    }
    if pred.iter().chain(truth).any(|&v| v >= k) {
        return Err(Error::label(format!("cluster or class index outside 0..{k}")));
    }
    let mut counts = vec![vec![0usize; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[p][t] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = (0usize, perm.clone());
    permute(&mut perm, 0, &mut |p| {
        let hits = (0..k).map(|c| counts[c][p[c]]).sum::<usize>();
        if hits > best.0 {
            best = (hits, p.to_vec());
        }
    });
    Ok((100.0 * best.0 as f64 / pred.len() as f64, best.1))
}

fn permute(p: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == p.len() {
        visit(p);
        return;
    }
    for i in start..p.len() {
        p.swap(start, i);
        permute(p, start + 1, visit);
        p.swap(start, i);
    }
}
