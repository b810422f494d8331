//! Dataset ingestion and benchmark construction.
//!
//! Images are kept compact: a grayscale byte plane per image plus the RGB
//! tint it is rendered with, so a colored 28×28 digit costs 787 bytes
//! instead of 2352 floats. Rendering follows `channel_c = (p/255)·(tint_c/255)`.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{Attribute, AttributeSpec, LabelCombo};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::rng;

pub const CHANNELS: usize = 3;

/// Grayscale images as read from an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImageSet {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl RawImageSet {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn truncate(&mut self, count: usize) {
        if count < self.count {
            self.count = count;
            self.pixels.truncate(count * self.height * self.width);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxData {
    Images(RawImageSet),
    Labels(Vec<u8>),
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        msg: msg.into(),
    }
}

/// Parses an unsigned-byte IDX container: magic `00 00 08 03` for an image
/// stack or `00 00 08 01` for a label vector, big-endian extents, payload.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    if bytes.len() < 4 {
        return Err(parse_err(bytes.len(), "truncated magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(parse_err(0, format!("bad magic {:02x}{:02x}{:02x}{:02x}", bytes[0], bytes[1], bytes[2], bytes[3])));
    }
    if bytes[2] != 0x08 {
        return Err(parse_err(2, format!("unsupported dtype 0x{:02x}", bytes[2])));
    }
    let ndim = bytes[3] as usize;
    if ndim != 1 && ndim != 3 {
        return Err(parse_err(3, format!("bad magic 0000080{ndim:x}: expected 1 or 3 dimensions")));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(parse_err(bytes.len(), "truncated dimension header"));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|d| {
            let o = 4 + 4 * d;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let payload: usize = dims.iter().product();
    let available = bytes.len() - header;
    if available < payload {
        return Err(parse_err(bytes.len(), format!("truncated payload: {payload} bytes declared, {available} present")));
    }
    if available > payload {
        return Err(parse_err(header + payload, format!("{} trailing bytes after payload", available - payload)));
    }
    let data = bytes[header..].to_vec();
    Ok(match ndim {
        1 => IdxData::Labels(data),
        _ => IdxData::Images(RawImageSet {
            count: dims[0],
            height: dims[1],
            width: dims[2],
            pixels: data,
        }),
    })
}

pub fn encode_idx_images(set: &RawImageSet) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, 0x03];
    for d in [set.count, set.height, set.width] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&set.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, 0x01];
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::file(path, e))
}

pub fn read_idx_images(path: &Path) -> Result<RawImageSet> {
    match parse_idx(&read_file(path)?)? {
        IdxData::Images(set) => Ok(set),
        IdxData::Labels(_) => Err(Error::data(format!("{} holds labels, not images", path.display()))),
    }
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    match parse_idx(&read_file(path)?)? {
        IdxData::Labels(l) => Ok(l),
        IdxData::Images(_) => Err(Error::data(format!("{} holds images, not labels", path.display()))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Loads an MNIST-layout directory (`train-images-idx3-ubyte`, …).
pub fn load_mnist(dir: &Path, split: Split) -> Result<(RawImageSet, Vec<u8>)> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = read_idx_images(&dir.join(format!("{prefix}-images-idx3-ubyte")))?;
    let labels = read_idx_labels(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
    if labels.len() != images.count {
        return Err(Error::data(format!(
            "{} images but {} labels in {}",
            images.count,
            labels.len(),
            dir.display()
        )));
    }
    Ok((images, labels))
}

/// Named RGB colors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub colors: Vec<(String, [u8; 3])>,
}

impl Default for Palette {
    fn default() -> Self {
        let c = |n: &str, rgb: [u8; 3]| (n.to_string(), rgb);
        Self {
            colors: vec![
                c("orange", [255, 165, 0]),
                c("purple", [128, 0, 128]),
                c("green", [0, 200, 0]),
                c("red", [220, 30, 30]),
                c("blue", [40, 60, 220]),
            ],
        }
    }
}

impl Palette {
    pub fn rgb(&self, name: &str) -> Result<[u8; 3]> {
        self.colors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, rgb)| *rgb)
            .ok_or_else(|| Error::label(format!("color {name:?} is not in the palette")))
    }

    /// Tints a grayscale image with palette entry `color`; returns the
    /// interleaved RGB image in [0, 1] and the color label.
    pub fn colorize(&self, gray: &[u8], color: usize) -> Result<(Vec<f64>, usize)> {
        let (_, rgb) = self
            .colors
            .get(color)
            .ok_or_else(|| Error::label(format!("color index {color} outside palette of {}", self.colors.len())))?;
        let mut out = Vec::with_capacity(gray.len() * CHANNELS);
        render_into(gray, *rgb, &mut out);
        Ok((out, color))
    }
}

fn render_into(gray: &[u8], tint: [u8; 3], out: &mut Vec<f64>) {
    let scale = tint.map(|c| c as f64 / 255.0);
    for &p in gray {
        let v = p as f64 / 255.0;
        out.extend(scale.iter().map(|s| v * s));
    }
}

/// 3×3 grayscale dilation with clamped borders.
pub fn thicken(gray: &[u8], height: usize, width: usize) -> Vec<u8> {
    let mut out = vec![0u8; gray.len()];
    for r in 0..height {
        for c in 0..width {
            let mut m = 0u8;
            for rr in r.saturating_sub(1)..=(r + 1).min(height - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(width - 1) {
                    m = m.max(gray[rr * width + cc]);
                }
            }
            out[r * width + c] = m;
        }
    }
    out
}

/// Images with one label per attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    spec: AttributeSpec,
    height: usize,
    width: usize,
    gray: Vec<u8>,
    tints: Vec<[u8; 3]>,
    labels: Vec<Vec<usize>>,
}

impl LabeledDataset {
    pub fn new(
        spec: AttributeSpec,
        height: usize,
        width: usize,
        gray: Vec<u8>,
        tints: Vec<[u8; 3]>,
        labels: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let count = tints.len();
        if gray.len() != count * height * width {
            return Err(Error::data(format!("{} pixel bytes for {count} images of {height}×{width}", gray.len())));
        }
        if labels.len() != spec.len() {
            return Err(Error::data(format!("{} label arrays for {} attributes", labels.len(), spec.len())));
        }
        for (a, l) in spec.attributes().iter().zip(&labels) {
            if l.len() != count {
                return Err(Error::data(format!("attribute {:?} has {} labels for {count} images", a.name, l.len())));
            }
            if let Some(&bad) = l.iter().find(|&&j| j >= a.cardinality()) {
                return Err(Error::label(format!("label {bad} out of range for attribute {:?}", a.name)));
            }
        }
        Ok(Self {
            spec,
            height,
            width,
            gray,
            tints,
            labels,
        })
    }

    pub fn spec(&self) -> &AttributeSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.tints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tints.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Length of a flattened `H × W × C` image.
    pub fn pixel_len(&self) -> usize {
        self.height * self.width * CHANNELS
    }

    pub fn gray(&self, i: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.gray[i * n..(i + 1) * n]
    }

    pub fn tint(&self, i: usize) -> [u8; 3] {
        self.tints[i]
    }

    pub fn labels(&self, attr: usize) -> &[usize] {
        &self.labels[attr]
    }

    pub fn combo(&self, i: usize) -> LabelCombo {
        LabelCombo(self.labels.iter().map(|l| l[i]).collect())
    }

    /// Interleaved RGB values in [0, 1].
    pub fn image(&self, i: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.pixel_len());
        render_into(self.gray(i), self.tints[i], &mut out);
        out
    }

    /// Rendered images as rows of a `B × (H·W·C)` matrix.
    pub fn image_batch(&self, indices: &[usize], exec: Exec) -> Array2<f64> {
        let len = self.pixel_len();
        let mut data = vec![0.0; indices.len() * len];
        if len > 0 {
            exec.for_each_chunk(&mut data, len, |r, row| {
                let i = indices[r];
                let gray = self.gray(i);
                let scale = self.tints[i].map(|c| c as f64 / 255.0);
                for (px, out) in gray.iter().zip(row.chunks_exact_mut(CHANNELS)) {
                    let v = *px as f64 / 255.0;
                    for (o, s) in out.iter_mut().zip(&scale) {
                        *o = v * s;
                    }
                }
            });
        }
        Array2::from_shape_vec((indices.len(), len), data).expect("buffer sized to shape")
    }

    /// One-hot label rows per attribute for the given samples.
    pub fn one_hot_batch(&self, indices: &[usize]) -> Vec<Array2<f64>> {
        self.spec
            .attributes()
            .iter()
            .enumerate()
            .map(|(a, attr)| {
                let mut m = Array2::zeros((indices.len(), attr.cardinality()));
                for (r, &i) in indices.iter().enumerate() {
                    m[[r, self.labels[a][i]]] = 1.0;
                }
                m
            })
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let n = self.height * self.width;
        let mut gray = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            gray.extend_from_slice(self.gray(i));
        }
        Self {
            spec: self.spec.clone(),
            height: self.height,
            width: self.width,
            gray,
            tints: indices.iter().map(|&i| self.tints[i]).collect(),
            labels: self.labels.iter().map(|l| indices.iter().map(|&i| l[i]).collect()).collect(),
        }
    }

    /// Samples per combination, indexed like [`AttributeSpec::combos`].
    pub fn combo_counts(&self) -> Vec<usize> {
        let combos = self.spec.combos();
        let mut counts = vec![0; combos.len()];
        for i in 0..self.len() {
            let c = self.combo(i);
            let pos = combos.iter().position(|x| *x == c).expect("labels validated");
            counts[pos] += 1;
        }
        counts
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.spec
            .index_of(name)
            .ok_or_else(|| Error::contract(format!("dataset has no {name:?} attribute")))
    }
}

pub fn digit_attribute() -> Attribute {
    Attribute::new("digit", &["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"])
}

fn check_raw(raw: &RawImageSet, digits: &[u8]) -> Result<()> {
    if raw.count != digits.len() {
        return Err(Error::data(format!("{} images but {} digit labels", raw.count, digits.len())));
    }
    if let Some(&d) = digits.iter().find(|&&d| d > 9) {
        return Err(Error::label(format!("digit label {d} out of range")));
    }
    Ok(())
}

/// Colored digits: each image gets a color drawn uniformly from `colors`,
/// independent of its digit.
pub fn make_colored(raw: &RawImageSet, digits: &[u8], colors: &[&str], palette: &Palette, seed: u64) -> Result<LabeledDataset> {
    check_raw(raw, digits)?;
    let tints_by_class = colors.iter().map(|c| palette.rgb(c)).collect::<Result<Vec<_>>>()?;
    let spec = AttributeSpec::new(vec![digit_attribute(), Attribute::new("color", colors)])?;
    let mut rng = rng::stream(seed, rng::streams::DATA);
    let color_labels: Vec<usize> = (0..raw.count).map(|_| rng.gen_range(0..colors.len())).collect();
    LabeledDataset::new(
        spec,
        raw.height,
        raw.width,
        raw.pixels.clone(),
        color_labels.iter().map(|&c| tints_by_class[c]).collect(),
        vec![digits.iter().map(|&d| d as usize).collect(), color_labels],
    )
}

/// Flips the color label of every odd digit; pixels are untouched.
pub fn make_mixed_up(ds: &LabeledDataset) -> Result<LabeledDataset> {
    let digit = ds.require("digit")?;
    let color = ds.require("color")?;
    if ds.spec.cardinalities()[color] != 2 {
        return Err(Error::contract(format!(
            "mixed-up relabeling needs 2 colors, got {}",
            ds.spec.cardinalities()[color]
        )));
    }
    let mut out = ds.clone();
    for (c, &d) in out.labels[color].iter_mut().zip(&ds.labels[digit]) {
        if d % 2 == 1 {
            *c = 1 - *c;
        }
    }
    Ok(out)
}

/// Digit × color × thickness: each image is independently drawn thin
/// (original) or thick (dilated), after coloring.
pub fn make_three_attribute(raw: &RawImageSet, digits: &[u8], colors: &[&str], palette: &Palette, seed: u64) -> Result<LabeledDataset> {
    let colored = make_colored(raw, digits, colors, palette, seed)?;
    let mut rng = rng::stream(seed, rng::streams::DATA + 100);
    let thick: Vec<usize> = (0..raw.count).map(|_| rng.gen_range(0..2)).collect();
    let n = raw.height * raw.width;
    let mut gray = colored.gray.clone();
    for (i, &t) in thick.iter().enumerate() {
        if t == 1 {
            let dilated = thicken(raw.image(i), raw.height, raw.width);
            gray[i * n..(i + 1) * n].copy_from_slice(&dilated);
        }
    }
    let mut attrs = colored.spec.attributes().to_vec();
    attrs.push(Attribute::new("thickness", &["thin", "thick"]));
    let mut labels = colored.labels;
    labels.push(thick);
    LabeledDataset::new(AttributeSpec::new(attrs)?, raw.height, raw.width, gray, colored.tints, labels)
}

/// Training data with some attribute combinations removed.
#[derive(Debug, Clone)]
pub struct HoldoutSplit {
    pub train: LabeledDataset,
    pub heldout_combos: Vec<LabelCombo>,
    /// Samples of combinations that remain in training.
    pub eval_seen: LabeledDataset,
    /// The removed samples.
    pub eval_unseen: LabeledDataset,
}

/// Partitions `ds` into the samples whose combination is not held out
/// and those whose combination is.
pub fn split_holdout(ds: &LabeledDataset, combos: &[LabelCombo]) -> Result<HoldoutSplit> {
    for c in combos {
        ds.spec.validate(c)?;
    }
    let (removed, kept): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| combos.contains(&ds.combo(i)));
    let train = ds.subset(&kept);
    Ok(HoldoutSplit {
        eval_seen: train.clone(),
        train,
        heldout_combos: combos.to_vec(),
        eval_unseen: ds.subset(&removed),
    })
}

/// `k` distinct combinations drawn uniformly.
pub fn draw_combos(spec: &AttributeSpec, k: usize, seed: u64) -> Result<Vec<LabelCombo>> {
    let mut all = spec.combos();
    if k >= all.len() {
        return Err(Error::contract(format!("cannot hold out {k} of {} combinations", all.len())));
    }
    let mut rng = rng::stream(seed, rng::streams::HOLDOUT);
    all.shuffle(&mut rng);
    all.truncate(k);
    all.sort();
    Ok(all)
}

/// A seeded permutation of `0..n` cut into batches; the last batch may be short.
pub fn make_batches(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::data("cannot batch an empty dataset"));
    }
    if batch_size == 0 {
        return Err(Error::contract("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, rng::streams::SHUFFLE));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_raw() -> (RawImageSet, Vec<u8>) {
        let count = 40;
        let pixels = (0..count * 4).map(|i| (i * 37 % 256) as u8).collect();
        (
            RawImageSet {
                count,
                height: 2,
                width: 2,
                pixels,
            },
            (0..count).map(|i| (i % 10) as u8).collect(),
        )
    }

    #[test]
    fn parse_image_fixture() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend([1, 2, 3, 4, 5, 6, 7, 8]);
        let IdxData::Images(set) = parse_idx(&bytes).unwrap() else { panic!("expected images") };
        assert_eq!((set.count, set.height, set.width), (2, 2, 2));
        assert_eq!(set.image(1), &[5, 6, 7, 8]);
        assert_eq!(encode_idx_images(&set), bytes);
    }

    #[test]
    fn parse_label_fixture() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9];
        assert_eq!(parse_idx(&bytes).unwrap(), IdxData::Labels(vec![7, 0, 9]));
        assert_eq!(encode_idx_labels(&[7, 0, 9]), bytes);
    }

    #[test]
    fn parse_rejections_carry_offsets() {
        let bad_magic = [0, 0, 8, 2, 0, 0, 0, 1, 0, 0, 0, 1, 5];
        assert!(matches!(parse_idx(&bad_magic), Err(Error::Parse { offset: 3, .. })));
        let bad_dtype = [0, 0, 9, 1, 0, 0, 0, 1, 5];
        assert!(matches!(parse_idx(&bad_dtype), Err(Error::Parse { offset: 2, .. })));
        let truncated = [0, 0, 8, 1, 0, 0, 0, 3, 7];
        assert!(matches!(parse_idx(&truncated), Err(Error::Parse { offset: 9, .. })));
        assert!(matches!(parse_idx(&[0, 0]), Err(Error::Parse { .. })));
    }

    #[test]
    fn colorize_rules() {
        let p = Palette::default();
        let (zero, label) = p.colorize(&[0, 0, 0], 0).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        assert_eq!(label, 0);
        let (full, _) = p.colorize(&[255], 0).unwrap();
        assert_eq!(full, vec![1.0, 165.0 / 255.0, 0.0]);
        let (ramp, _) = p.colorize(&[10, 50, 200], 1).unwrap();
        let red: Vec<f64> = ramp.iter().step_by(3).copied().collect();
        assert!(red.windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(p.colorize(&[1], 9), Err(Error::Label(_))));
    }

    #[test]
    fn thicken_rules() {
        assert_eq!(thicken(&[0; 16], 4, 4), vec![0; 16]);
        let mut img = vec![0u8; 25];
        img[12] = 200;
        let out = thicken(&img, 5, 5);
        for r in 0..5 {
            for c in 0..5 {
                let expected = if (1..=3).contains(&r) && (1..=3).contains(&c) { 200 } else { 0 };
                assert_eq!(out[r * 5 + c], expected);
            }
        }
        let corner = thicken(&[9, 0, 0, 0], 2, 2);
        assert_eq!(corner, vec![9, 9, 9, 9]);
    }

    #[test]
    fn mixed_up_flips_odd_digits_only() {
        let (raw, digits) = tiny_raw();
        let ds = make_colored(&raw, &digits, &["red", "blue"], &Palette::default(), 3).unwrap();
        let mixed = make_mixed_up(&ds).unwrap();
        for i in 0..ds.len() {
            let (d, c, c2) = (ds.labels(0)[i], ds.labels(1)[i], mixed.labels(1)[i]);
            if d % 2 == 0 {
                assert_eq!(c, c2);
            } else {
                assert_eq!(c, 1 - c2);
            }
            assert_eq!(ds.image(i), mixed.image(i));
        }
        assert_eq!(make_mixed_up(&mixed).unwrap(), ds);

        let three = make_colored(&raw, &digits, &["orange", "purple", "green"], &Palette::default(), 3).unwrap();
        assert!(matches!(make_mixed_up(&three), Err(Error::Contract(_))));
    }

    #[test]
    fn holdout_partitions() {
        let (raw, digits) = tiny_raw();
        let ds = make_colored(&raw, &digits, &["orange", "purple", "green"], &Palette::default(), 5).unwrap();
        let orange2 = ds.spec().parse_combo(&["2", "orange"]).unwrap();
        let split = split_holdout(&ds, &[orange2.clone()]).unwrap();
        assert_eq!(split.train.len() + split.eval_unseen.len(), ds.len());
        assert!((0..split.train.len()).all(|i| split.train.combo(i) != orange2));
        assert!((0..split.eval_unseen.len()).all(|i| split.eval_unseen.combo(i) == orange2));

        let none = split_holdout(&ds, &[]).unwrap();
        assert_eq!(none.train, ds);
        assert!(none.eval_unseen.is_empty());

        let all = split_holdout(&ds, &ds.spec().combos()).unwrap();
        assert!(all.train.is_empty());
        assert!(split_holdout(&ds, &[LabelCombo(vec![10, 0])]).is_err());
    }

    #[test]
    fn batches() {
        let b = make_batches(10, 4, 1).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(make_batches(10, 4, 1).unwrap(), b);
        assert!(matches!(make_batches(0, 4, 1), Err(Error::Data(_))));
    }

    #[test]
    fn image_batch_matches_single_images() {
        let (raw, digits) = tiny_raw();
        let ds = make_three_attribute(&raw, &digits, &["orange", "purple", "green"], &Palette::default(), 2).unwrap();
        let idx = [3, 0, 17];
        for exec in [Exec::Sequential, Exec::Parallel] {
            let m = ds.image_batch(&idx, exec);
            for (r, &i) in idx.iter().enumerate() {
                assert_eq!(m.row(r).to_vec(), ds.image(i));
            }
        }
    }

    #[test]
    fn draw_combos_rejects_all() {
        let (raw, digits) = tiny_raw();
        let ds = make_colored(&raw, &digits, &["orange", "purple", "green"], &Palette::default(), 5).unwrap();
        assert_eq!(draw_combos(ds.spec(), 3, 1).unwrap().len(), 3);
        assert!(draw_combos(ds.spec(), 30, 1).is_err());
    }
}
