//! Attribute classifiers and the generation-accuracy protocol.
//!
//! Generated images are judged by classifiers trained on real data: a
//! pixel MLP for shape attributes and a color-histogram MLP for color.
//! Accuracy is the percentage of samples of a combination whose predicted
//! class equals the requested one, reported separately for combinations
//! seen and unseen during generator training.

use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{AdamConfig, Mlp, ParamStore, Tape};
use crate::checkpoint::{decode_container, encode_container, load_store};
use crate::conditioning::{AttributeSpec, LabelCombo};
use crate::data::{make_batches, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::MlcVaeModel;
use crate::par::Exec;
use crate::rng;

pub const HIST_BINS: usize = 8;

/// Per-channel intensity histogram of an interleaved RGB image with values
/// in [0, 1]: 8 equal-width bins per channel, each channel normalized.
pub fn color_histogram(img: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; 3 * HIST_BINS];
    let pixels = img.len() / 3;
    if pixels == 0 {
        return h;
    }
    for px in img.chunks_exact(3) {
        for (c, &v) in px.iter().enumerate() {
            let bin = ((v * HIST_BINS as f64).floor().max(0.0) as usize).min(HIST_BINS - 1);
            h[c * HIST_BINS + bin] += 1.0;
        }
    }
    let inv = 1.0 / pixels as f64;
    h.iter_mut().for_each(|v| *v *= inv);
    h
}

/// Channel-wise maximum of an interleaved image: one value per pixel,
/// independent of the tint's hue.
pub fn intensity(img: &[f64], channels: usize) -> Vec<f64> {
    img.chunks_exact(channels)
        .map(|px| px.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Pixels,
    ColorHistogram,
}

impl FeatureMode {
    /// Color attributes are classified from histograms, others from pixels.
    pub fn for_attribute(name: &str) -> Self {
        if name == "color" {
            FeatureMode::ColorHistogram
        } else {
            FeatureMode::Pixels
        }
    }

    fn dim(self, pixels: usize) -> usize {
        match self {
            FeatureMode::Pixels => pixels,
            FeatureMode::ColorHistogram => 3 * HIST_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            epochs: 10,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassifierMeta {
    kind: String,
    attribute: String,
    classes: Vec<String>,
    feature: FeatureMode,
    channels: usize,
    pixels: usize,
    hidden: usize,
}

/// A one-hidden-layer MLP predicting one attribute from image features.
#[derive(Debug, Clone)]
pub struct AttributeClassifier {
    meta: ClassifierMeta,
    mlp: Mlp,
    store: ParamStore,
}

impl AttributeClassifier {
    fn build(meta: ClassifierMeta) -> Self {
        let mlp = Mlp::new("clf", &[meta.feature.dim(meta.pixels), meta.hidden, meta.classes.len()]);
        Self {
            meta,
            mlp,
            store: ParamStore::new(),
        }
    }

    /// Trains on every sample of `ds` with softmax cross-entropy.
    pub fn train(ds: &LabeledDataset, attribute: &str, feature: FeatureMode, cfg: &ClassifierConfig) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::data("classifier training set is empty"));
        }
        if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.hidden == 0 {
            return Err(Error::Config("classifier epochs, batch size and width must be positive".into()));
        }
        let attr = ds
            .spec()
            .index_of(attribute)
            .ok_or_else(|| Error::label(format!("dataset has no attribute {attribute:?}")))?;
        let meta = ClassifierMeta {
            kind: "classifier".into(),
            attribute: attribute.to_string(),
            classes: ds.spec().attributes()[attr].classes.clone(),
            feature,
            channels: 3,
            pixels: ds.height() * ds.width(),
            hidden: cfg.hidden,
        };
        let mut clf = Self::build(meta);
        let mut init = rng::stream(cfg.seed, rng::streams::CLASSIFIER);
        clf.mlp.init(&mut clf.store, &mut init)?;
        let adam = AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        };
        let labels = ds.labels(attr);
        for epoch in 0..cfg.epochs {
            for idx in make_batches(ds.len(), cfg.batch_size, rng::derive(cfg.seed, epoch as u64))? {
                let x = clf.features(ds.image_batch(&idx, Exec::Sequential).view());
                let mut y = Array2::zeros((idx.len(), clf.meta.classes.len()));
                for (r, &i) in idx.iter().enumerate() {
                    y[[r, labels[i]]] = 1.0;
                }
                let grads = {
                    let mut tape = Tape::with_params(&clf.store);
                    let xv = tape.constant(x);
                    let yv = tape.constant(y);
                    let logits = clf.mlp.forward(&mut tape, xv)?;
                    let ls = tape.log_softmax(logits);
                    let picked = tape.mul(ls, yv)?;
                    let s = tape.sum(picked);
                    let loss = tape.scale(s, -1.0 / idx.len() as f64);
                    tape.backward(loss)?
                };
                grads.accumulate_into(&mut clf.store);
                clf.store.adam_step(&adam);
            }
        }
        Ok(clf)
    }

    pub fn attribute(&self) -> &str {
        &self.meta.attribute
    }

    pub fn classes(&self) -> &[String] {
        &self.meta.classes
    }

    pub fn feature_mode(&self) -> FeatureMode {
        self.meta.feature
    }

    /// Feature rows for interleaved images (one image per row).
    pub fn features(&self, images: ArrayView2<f64>) -> Array2<f64> {
        let dim = self.meta.feature.dim(self.meta.pixels);
        let mut out = Array2::zeros((images.nrows(), dim));
        for (img, mut row) in images.rows().into_iter().zip(out.rows_mut()) {
            let img = img.as_slice().map(<[f64]>::to_vec).unwrap_or_else(|| img.to_vec());
            let f = match self.meta.feature {
                FeatureMode::Pixels => intensity(&img, self.meta.channels),
                FeatureMode::ColorHistogram => color_histogram(&img),
            };
            row.assign(&ArrayView1::from(&f[..]));
        }
        out
    }

    pub fn logits(&self, images: ArrayView2<f64>) -> Result<Array2<f64>> {
        let expected = self.meta.pixels * self.meta.channels;
        if images.ncols() != expected {
            return Err(Error::dim(format!("images have {} values, classifier expects {expected}", images.ncols())));
        }
        let mut tape = Tape::with_params(&self.store);
        let x = tape.constant(self.features(images));
        let out = self.mlp.forward(&mut tape, x)?;
        Ok(tape.value(out).clone())
    }

    pub fn predict(&self, images: ArrayView2<f64>) -> Result<Vec<usize>> {
        let logits = self.logits(images)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                    .0
            })
            .collect())
    }

    /// Percentage of `ds` classified correctly.
    pub fn accuracy(&self, ds: &LabeledDataset, exec: Exec) -> Result<f64> {
        if ds.is_empty() {
            return Err(Error::data("accuracy of an empty dataset"));
        }
        let attr = ds
            .spec()
            .index_of(&self.meta.attribute)
            .ok_or_else(|| Error::label(format!("dataset has no attribute {:?}", self.meta.attribute)))?;
        let chunks: Vec<Vec<usize>> = (0..ds.len()).collect::<Vec<_>>().chunks(1000).map(<[usize]>::to_vec).collect();
        let counts = exec.map(chunks.len(), |c| -> Result<usize> {
            let idx = &chunks[c];
            let pred = self.predict(ds.image_batch(idx, Exec::Sequential).view())?;
            Ok(idx.iter().zip(pred).filter(|(&i, p)| ds.labels(attr)[i] == *p).count())
        });
        let correct: usize = counts.into_iter().sum::<Result<usize>>()?;
        Ok(100.0 * correct as f64 / ds.len() as f64)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arrays: Vec<(&str, &Array2<f64>)> = self.store.iter().map(|p| (p.name.as_str(), &p.value)).collect();
        encode_container(&self.meta, &arrays)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, arrays): (ClassifierMeta, _) = decode_container(bytes)?;
        if meta.kind != "classifier" {
            return Err(Error::Format(format!("expected a classifier checkpoint, found {:?}", meta.kind)));
        }
        let mut clf = Self::build(meta);
        let mut reference = ParamStore::new();
        clf.mlp.init(&mut reference, &mut rng::stream(0, rng::streams::CLASSIFIER))?;
        clf.store = load_store(&reference, arrays)?;
        Ok(clf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::file(path, e))?)
    }
}

/// Anything that produces images of a requested attribute combination.
pub trait ComboGenerator: Sync {
    fn generate(&self, combo: &LabelCombo, n: usize, seed: u64) -> Result<Array2<f64>>;
}

impl ComboGenerator for MlcVaeModel {
    fn generate(&self, combo: &LabelCombo, n: usize, seed: u64) -> Result<Array2<f64>> {
        self.sample_combo(combo, n, seed)
    }
}

/// Replays real images of the requested combination, drawn with replacement.
pub struct ReplayGenerator<'a> {
    pub data: &'a LabeledDataset,
}

impl ComboGenerator for ReplayGenerator<'_> {
    fn generate(&self, combo: &LabelCombo, n: usize, seed: u64) -> Result<Array2<f64>> {
        self.data.spec().validate(combo)?;
        let pool: Vec<usize> = (0..self.data.len()).filter(|&i| &self.data.combo(i) == combo).collect();
        if pool.is_empty() {
            return Err(Error::data(format!("no real images of combination {:?}", combo.0)));
        }
        let mut r = rng::stream(seed, rng::streams::SAMPLE);
        let idx: Vec<usize> = (0..n).map(|_| pool[r.gen_range(0..pool.len())]).collect();
        Ok(self.data.image_batch(&idx, Exec::Sequential))
    }
}

/// Uniform pixel noise, ignoring the combination.
pub struct NoiseGenerator {
    pub pixel_len: usize,
}

impl ComboGenerator for NoiseGenerator {
    fn generate(&self, _combo: &LabelCombo, n: usize, seed: u64) -> Result<Array2<f64>> {
        let mut r = rng::stream(seed, rng::streams::SAMPLE);
        Ok(Array2::from_shape_simple_fn((n, self.pixel_len), || r.gen::<f64>()))
    }
}

pub const NO_UNSEEN: &str = "no unseen combos";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub combo: Vec<String>,
    pub unseen: bool,
    pub count: usize,
    /// Per classified attribute, in the order of [`EvalReport::attributes`].
    pub accuracy: Vec<f64>,
}

/// Classifier-measured accuracy of generated samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub n_per_combo: usize,
    pub attributes: Vec<String>,
    pub unseen_combos: Vec<Vec<String>>,
    pub note: String,
    pub unseen_accuracy: Vec<f64>,
    pub seen_accuracy: Vec<f64>,
    #[serde(default)]
    pub config: toml::Table,
    pub cells: Vec<CellReport>,
}

impl EvalReport {
    fn position(&self, attribute: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == attribute)
    }

    /// Accuracy on unseen combinations, `None` when there are none or the
    /// attribute was not classified.
    pub fn unseen(&self, attribute: &str) -> Option<f64> {
        self.position(attribute).and_then(|i| self.unseen_accuracy.get(i).copied())
    }

    pub fn seen(&self, attribute: &str) -> Option<f64> {
        self.position(attribute).and_then(|i| self.seen_accuracy.get(i).copied())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("report: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("report: {e}")))
    }
}

/// Generates `n_per_combo` samples of every combination of `spec` and
/// scores them with each classifier. Combinations in `unseen` are reported
/// separately from the rest.
pub fn evaluate_unseen(
    generator: &dyn ComboGenerator,
    spec: &AttributeSpec,
    classifiers: &[AttributeClassifier],
    unseen: &[LabelCombo],
    n_per_combo: usize,
    seed: u64,
    exec: Exec,
) -> Result<EvalReport> {
    if n_per_combo == 0 {
        return Err(Error::contract("n_per_combo must be at least 1"));
    }
    for c in unseen {
        spec.validate(c)?;
    }
    let mut attrs = Vec::with_capacity(classifiers.len());
    for clf in classifiers {
        let i = spec
            .index_of(clf.attribute())
            .ok_or_else(|| Error::label(format!("no attribute {:?} to classify", clf.attribute())))?;
        if spec.attributes()[i].classes != clf.classes() {
            return Err(Error::label(format!("classifier classes for {:?} differ from the spec", clf.attribute())));
        }
        attrs.push(i);
    }
    let combos = spec.combos();
    let cells = exec.map(combos.len(), |ci| -> Result<CellReport> {
        let combo = &combos[ci];
        let images = generator.generate(combo, n_per_combo, rng::derive(seed, ci as u64))?;
        let mut accuracy = Vec::with_capacity(classifiers.len());
        for (clf, &a) in classifiers.iter().zip(&attrs) {
            let pred = clf.predict(images.view())?;
            let hits = pred.iter().filter(|&&p| p == combo.0[a]).count();
            accuracy.push(100.0 * hits as f64 / n_per_combo as f64);
        }
        Ok(CellReport {
            combo: spec.combo_names(combo),
            unseen: unseen.contains(combo),
            count: n_per_combo,
            accuracy,
        })
    });
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    let mean_of = |want_unseen: bool| -> Vec<f64> {
        let chosen: Vec<&CellReport> = cells.iter().filter(|c| c.unseen == want_unseen).collect();
        if chosen.is_empty() {
            return vec![];
        }
        (0..classifiers.len())
            .map(|a| chosen.iter().map(|c| c.accuracy[a]).sum::<f64>() / chosen.len() as f64)
            .collect()
    };
    Ok(EvalReport {
        seed,
        n_per_combo,
        attributes: classifiers.iter().map(|c| c.attribute().to_string()).collect(),
        unseen_combos: unseen.iter().map(|c| spec.combo_names(c)).collect(),
        note: if unseen.is_empty() { NO_UNSEEN.to_string() } else { String::new() },
        unseen_accuracy: mean_of(true),
        seen_accuracy: mean_of(false),
        config: toml::Table::new(),
        cells,
    })
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM of images (interleaved RGB in [0, 1], each `height × width`)
/// placed row-major on a `rows × cols` grid; empty cells are black.
pub fn encode_ppm_grid(images: &[&[f64]], height: usize, width: usize, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if images.len() > rows * cols {
        return Err(Error::contract(format!("{} images do not fit a {rows}×{cols} grid", images.len())));
    }
    let pix = height * width * 3;
    if let Some(bad) = images.iter().find(|im| im.len() != pix) {
        return Err(Error::dim(format!("image of {} values, expected {pix}", bad.len())));
    }
    let (w, h) = (cols * width, rows * height);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let header = out.len();
    out.resize(header + w * h * 3, 0);
    for (k, img) in images.iter().enumerate() {
        let (gr, gc) = (k / cols, k % cols);
        for y in 0..height {
            for x in 0..width {
                let dst = header + (((gr * height + y) * w) + gc * width + x) * 3;
                let src = (y * width + x) * 3;
                for c in 0..3 {
                    out[dst + c] = to_byte(img[src + c]);
                }
            }
        }
    }
    Ok(out)
}

pub fn write_ppm_grid(images: &[&[f64]], height: usize, width: usize, rows: usize, cols: usize, path: &Path) -> Result<()> {
    let bytes = encode_ppm_grid(images, height, width, rows, cols)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::file(path, e))
}

/// Parses a binary PPM with maxval 255 into `(width, height, rgb bytes)`.
pub fn read_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse {
                offset: pos,
                msg: "truncated PPM header".into(),
            });
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("expected a P6 image with maxval 255, got {} / {}", fields[0], fields[3]),
        });
    }
    let parse = |s: &str| {
        s.parse::<usize>().map_err(|_| Error::Parse {
            offset: 0,
            msg: format!("bad dimension {s:?}"),
        })
    };
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() != w * h * 3 {
        return Err(Error::Parse {
            offset: pos + 1,
            msg: format!("expected {} pixel bytes, found {}", w * h * 3, data.len()),
        });
    }
    Ok((w, h, data.to_vec()))
}
