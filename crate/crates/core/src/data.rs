//! Datasets: the Bernoulli bit-string distribution and binarized MNIST.

use std::fs;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodel::{Input, Sequence, Vocab};

/// Largest string length accepted by [`synthetic_enumerate`].
pub const MAX_ENUMERATE_LEN: usize = 20;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Strings of `length` independent bits, each 1 with probability `p_one`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_length")]
    pub length: usize,
    #[serde(default = "default_p_one")]
    pub p_one: f64,
}

fn default_length() -> usize {
    6
}

fn default_p_one() -> f64 {
    0.8
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            length: default_length(),
            p_one: default_p_one(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_one > 0.0 && self.p_one < 1.0) {
            return Err(Error::Config(format!("p_one must lie in (0, 1), got {}", self.p_one)));
        }
        Ok(())
    }

    /// Probability of one string under the product measure.
    pub fn probability(&self, seq: &Sequence) -> f64 {
        seq.ids()
            .iter()
            .map(|&b| if b == 1 { self.p_one } else { 1.0 - self.p_one })
            .product()
    }
}

/// All `2^length` strings in lexicographic order of token ids, with their
/// exact probabilities.
pub fn synthetic_enumerate(spec: &SyntheticSpec) -> Result<Vec<(Sequence, f64)>> {
    spec.validate()?;
    if spec.length > MAX_ENUMERATE_LEN {
        return Err(Error::Dataset(format!(
            "refusing to enumerate strings of length {} (limit {MAX_ENUMERATE_LEN})",
            spec.length
        )));
    }
    let vocab = Vocab::binary();
    let n = spec.length;
    (0..1usize << n)
        .map(|code| {
            let ids = (0..n).map(|i| (code >> (n - 1 - i)) & 1).collect();
            let seq = Sequence::new(ids, &vocab, n)?;
            let p = spec.probability(&seq);
            Ok((seq, p))
        })
        .collect()
}

/// `n` i.i.d. strings from the product measure.
pub fn synthetic_sample<R: Rng + ?Sized>(spec: &SyntheticSpec, n: usize, rng: &mut R) -> Result<Vec<Sequence>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Dataset("sample size must be at least 1".into()));
    }
    let vocab = Vocab::binary();
    (0..n)
        .map(|_| {
            let ids = (0..spec.length).map(|_| rng.random_bool(spec.p_one) as usize).collect();
            Sequence::new(ids, &vocab, spec.length)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinarizedImage {
    pub pixels: Vec<u8>,
    pub label: u8,
}

/// `1` iff `raw / 255 > threshold`.
pub fn binarize_pixel(raw: u8, threshold: f64) -> u8 {
    (raw as f64 / 255.0 > threshold) as u8
}

pub fn binarize(raw: &[u8], threshold: f64) -> Vec<u8> {
    raw.iter().map(|&p| binarize_pixel(p, threshold)).collect()
}

/// Image tensor of an IDX file: `count` images of `rows x cols` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<u8>>,
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0, "image file")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image file: bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4, "image file")? as usize;
    let rows = be_u32(bytes, 8, "image file")? as usize;
    let cols = be_u32(bytes, 12, "image file")? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() != count * size {
        return Err(Error::Format(format!(
            "image file: expected {} pixel bytes for {count} images, found {}",
            count * size,
            body.len()
        )));
    }
    let images = if size == 0 {
        vec![Vec::new(); count]
    } else {
        body.chunks_exact(size).map(<[u8]>::to_vec).collect()
    };
    Ok(IdxImages { rows, cols, images })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "label file")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label file: bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4, "label file")? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Format(format!(
            "label file: expected {count} labels, found {}",
            body.len()
        )));
    }
    Ok(body.to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.images.len() * images.rows * images.cols);
    for v in [
        IDX_IMAGES_MAGIC,
        images.images.len() as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in &images.images {
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads one image/label file pair, binarizes, and keeps the first `limit`
/// examples.
pub fn mnist_load(
    images: &Path,
    labels: &Path,
    threshold: f64,
    limit: Option<usize>,
) -> Result<Vec<BinarizedImage>> {
    let imgs = parse_idx_images(&read(images)?)?;
    let labs = parse_idx_labels(&read(labels)?)?;
    if imgs.images.len() != labs.len() {
        return Err(Error::Dataset(format!(
            "count mismatch: {} images in {} but {} labels in {}",
            imgs.images.len(),
            images.display(),
            labs.len(),
            labels.display()
        )));
    }
    if let Some(&bad) = labs.iter().find(|&&l| l > 9) {
        return Err(Error::Dataset(format!("label {bad} is not a digit")));
    }
    let n = limit.unwrap_or(labs.len()).min(labs.len());
    Ok(imgs
        .images
        .iter()
        .zip(&labs)
        .take(n)
        .map(|(img, &label)| BinarizedImage {
            pixels: binarize(img, threshold),
            label,
        })
        .collect())
}

/// Location and subset sizes of the MNIST IDX files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistSpec {
    pub dir: PathBuf,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// First `n` training images; `null` keeps all of them.
    #[serde(default = "default_train_limit")]
    pub train_limit: Option<usize>,
    #[serde(default = "default_test_limit")]
    pub test_limit: Option<usize>,
}

fn default_threshold() -> f64 {
    0.3
}

fn default_train_limit() -> Option<usize> {
    Some(10_000)
}

fn default_test_limit() -> Option<usize> {
    Some(2_000)
}

/// Finds `stem` in `dir`, accepting both the `-idx3-ubyte` and `.idx3-ubyte`
/// spellings.
fn locate(dir: &Path, stem: &str, kind: &str) -> PathBuf {
    let dash = dir.join(format!("{stem}-{kind}"));
    let dot = dir.join(format!("{stem}.{kind}"));
    if !dash.exists() && dot.exists() {
        dot
    } else {
        dash
    }
}

#[derive(Clone, Debug)]
pub struct MnistData {
    pub train: Vec<BinarizedImage>,
    pub test: Vec<BinarizedImage>,
}

pub fn mnist_load_dir(spec: &MnistSpec) -> Result<MnistData> {
    let d = &spec.dir;
    Ok(MnistData {
        train: mnist_load(
            &locate(d, "train-images", "idx3-ubyte"),
            &locate(d, "train-labels", "idx1-ubyte"),
            spec.threshold,
            spec.train_limit,
        )?,
        test: mnist_load(
            &locate(d, "t10k-images", "idx3-ubyte"),
            &locate(d, "t10k-labels", "idx1-ubyte"),
            spec.threshold,
            spec.test_limit,
        )?,
    })
}

#[derive(Clone, Debug)]
enum Items {
    Seqs(Vec<Sequence>),
    Images(Vec<BinarizedImage>),
}

/// Examples with their data measure: exact probabilities for an enumerated
/// distribution, otherwise the empirical uniform measure.
#[derive(Clone, Debug)]
pub struct Dataset {
    items: Items,
    probs: Option<Vec<f64>>,
    sampler: Option<WeightedIndex<f64>>,
}

impl Dataset {
    /// Every string of the synthetic distribution with its exact probability.
    pub fn synthetic(spec: &SyntheticSpec) -> Result<Self> {
        let (seqs, probs): (Vec<_>, Vec<_>) = synthetic_enumerate(spec)?.into_iter().unzip();
        Self::weighted(seqs, probs)
    }

    /// Enumerated sequences with explicit probabilities (normalized here).
    pub fn weighted(seqs: Vec<Sequence>, probs: Vec<f64>) -> Result<Self> {
        if seqs.len() != probs.len() || seqs.is_empty() {
            return Err(Error::Dataset("need one probability per sequence".into()));
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) || probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Dataset("probabilities must be nonnegative with positive sum".into()));
        }
        let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
        let sampler = WeightedIndex::new(&probs).map_err(|e| Error::Dataset(e.to_string()))?;
        Ok(Self {
            items: Items::Seqs(seqs),
            probs: Some(probs),
            sampler: Some(sampler),
        })
    }

    /// Sequences under the empirical uniform measure.
    pub fn sequences(seqs: Vec<Sequence>) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::Dataset("empty dataset".into()));
        }
        Ok(Self {
            items: Items::Seqs(seqs),
            probs: None,
            sampler: None,
        })
    }

    pub fn images(images: Vec<BinarizedImage>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Dataset("empty dataset".into()));
        }
        Ok(Self {
            items: Items::Images(images),
            probs: None,
            sampler: None,
        })
    }

    pub fn len(&self) -> usize {
        match &self.items {
            Items::Seqs(s) => s.len(),
            Items::Images(i) => i.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, i: usize) -> Input<'_> {
        match &self.items {
            Items::Seqs(s) => Input::Seq(&s[i]),
            Items::Images(im) => Input::Pixels(&im[i].pixels),
        }
    }

    pub fn inputs(&self, idx: &[usize]) -> Vec<Input<'_>> {
        idx.iter().map(|&i| self.input(i)).collect()
    }

    pub fn all_inputs(&self) -> Vec<Input<'_>> {
        (0..self.len()).map(|i| self.input(i)).collect()
    }

    /// Exact probabilities when the dataset enumerates its whole support.
    pub fn probabilities(&self) -> Option<&[f64]> {
        self.probs.as_deref()
    }

    pub fn is_enumerable(&self) -> bool {
        self.probs.is_some()
    }

    pub fn label(&self, i: usize) -> Option<u8> {
        match &self.items {
            Items::Seqs(_) => None,
            Items::Images(im) => Some(im[i].label),
        }
    }

    pub fn has_labels(&self) -> bool {
        matches!(self.items, Items::Images(_))
    }

    /// Human readable form of example `i`: the string itself, or the digit
    /// label for images.
    pub fn describe(&self, i: usize) -> String {
        match &self.items {
            Items::Seqs(s) => s[i].to_string(),
            Items::Images(im) => im[i].label.to_string(),
        }
    }

    /// `n` i.i.d. indices from the data measure.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        match &self.sampler {
            Some(w) => (0..n).map(|_| w.sample(rng)).collect(),
            None => (0..n).map(|_| rng.random_range(0..self.len())).collect(),
        }
    }

    /// Example order for one epoch. Weighted datasets draw `epoch_size`
    /// indices from the measure (default: one draw per example); uniform
    /// datasets are shuffled and optionally truncated.
    pub fn epoch_order<R: Rng + ?Sized>(&self, rng: &mut R, epoch_size: Option<usize>) -> Vec<usize> {
        match &self.sampler {
            Some(_) => self.draw(rng, epoch_size.unwrap_or(self.len())),
            None => {
                let mut idx: Vec<usize> = (0..self.len()).collect();
                idx.shuffle(rng);
                if let Some(n) = epoch_size {
                    idx.truncate(n);
                }
                idx
            }
        }
    }

    /// Writes one row per example: index, probability (if known), label (if
    /// any) and the example in token form.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["index", "probability", "label", "value"])
            .map_err(|e| csv_err(path, e))?;
        for i in 0..self.len() {
            let p = self.probs.as_ref().map(|p| p[i].to_string()).unwrap_or_default();
            let l = self.label(i).map(|l| l.to_string()).unwrap_or_default();
            let v: String = self.input(i).tokens().iter().map(|t| t.to_string()).collect();
            w.write_record([i.to_string(), p, l, v])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}
