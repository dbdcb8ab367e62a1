//! Classification datasets: the synthetic 10-class Gaussian task and a
//! loader for the 3073-byte-record image batch format.

use std::path::Path;

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Flat features with integer labels, split into train and validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: usize,
    pub classes: usize,
    pub train_x: Vec<f64>,
    pub train_y: Vec<usize>,
    pub val_x: Vec<f64>,
    pub val_y: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    pub dim: usize,
    pub classes: usize,
    /// Standard deviation of each class-mean coordinate, in units of the
    /// within-class noise.
    pub separation: f64,
    pub train: usize,
    pub val: usize,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self { dim: 32, classes: 10, separation: 0.5, train: 12_800, val: 2_560 }
    }
}

impl Dataset {
    pub fn train_len(&self) -> usize {
        self.train_y.len()
    }

    pub fn val_len(&self) -> usize {
        self.val_y.len()
    }

    /// Check that samples can be fed to networks built from `spec`.
    pub fn check_spec(&self, spec: &ArchSpec) -> Result<()> {
        let per_sample: usize = spec.input_shape(1).iter().product();
        if per_sample != self.features {
            return Err(Error::Invalid(format!(
                "dataset has {} features per sample but the network expects {per_sample}",
                self.features
            )));
        }
        if spec.outputs != self.classes {
            return Err(Error::Invalid(format!("dataset has {} classes, network {} outputs", self.classes, spec.outputs)));
        }
        Ok(())
    }

    fn gather(&self, x: &[f64], y: &[usize], idx: &[usize], spec: &ArchSpec) -> Result<(Tensor, Tensor)> {
        let f = self.features;
        let mut xs = Vec::with_capacity(idx.len() * f);
        let mut ys = vec![0.0; idx.len() * self.classes];
        for (s, &i) in idx.iter().enumerate() {
            xs.extend_from_slice(&x[i * f..(i + 1) * f]);
            ys[s * self.classes + y[i]] = 1.0;
        }
        Ok((Tensor::from_vec(&spec.input_shape(idx.len()), xs)?, Tensor::from_vec(&[idx.len(), self.classes], ys)?))
    }

    /// Training inputs and one-hot targets for the given sample indices.
    pub fn train_batch(&self, idx: &[usize], spec: &ArchSpec) -> Result<(Tensor, Tensor)> {
        self.gather(&self.train_x, &self.train_y, idx, spec)
    }

    pub fn val_batch(&self, idx: &[usize], spec: &ArchSpec) -> Result<(Tensor, Tensor)> {
        self.gather(&self.val_x, &self.val_y, idx, spec)
    }
}

/// Gaussian class clusters: class means drawn once from N(0, sep²·I), samples
/// are mean + N(0, I), and everything is rescaled to unit variance per feature.
pub fn synthetic(params: SyntheticParams, seed: u64) -> Result<Dataset> {
    let SyntheticParams { dim, classes, separation, train, val } = params;
    if dim == 0 || classes < 2 || train == 0 || val == 0 || !(separation >= 0.0) {
        return Err(Error::Invalid("synthetic task needs dim, train, val > 0, classes >= 2, separation >= 0".into()));
    }
    let mut rng = Rng::new(seed);
    let means = rng.normal_vec(classes * dim, separation);
    let scale = 1.0 / (1.0 + separation * separation).sqrt();
    let draw = |n: usize, rng: &mut Rng| {
        let mut x = Vec::with_capacity(n * dim);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let c = rng.below(classes);
            y.push(c);
            for j in 0..dim {
                x.push((means[c * dim + j] + rng.normal()) * scale);
            }
        }
        (x, y)
    };
    let (train_x, train_y) = draw(train, &mut rng);
    let (val_x, val_y) = draw(val, &mut rng);
    Ok(Dataset { features: dim, classes, train_x, train_y, val_x, val_y })
}

/// The default 10-class task: 12,800 training and 2,560 validation samples.
pub fn synthetic10(seed: u64) -> Result<Dataset> {
    synthetic(SyntheticParams::default(), seed)
}

/// Zero-mean Gaussian regression targets with standard deviation σ_y.
pub fn regression_targets(n: usize, outputs: usize, sigma_y: f64, seed: u64) -> Result<Tensor> {
    if !(sigma_y > 0.0) {
        return Err(Error::Invalid("sigma_y must be positive".into()));
    }
    Tensor::from_vec(&[n, outputs], Rng::new(seed).normal_vec(n * outputs, sigma_y))
}

/// Bytes per record: one label byte and a 3×32×32 channel-major image.
pub const IMAGE_RECORD: usize = 3073;
/// Records in one standard batch file.
pub const IMAGE_BATCH_RECORDS: usize = 10_000;

/// Decode one batch file holding exactly `records` records.
pub fn load_image_batch(path: &Path, records: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    if bytes.len() != records * IMAGE_RECORD {
        return Err(Error::Dataset(format!(
            "{}: {} bytes, expected {} ({} records of {IMAGE_RECORD} bytes)",
            path.display(),
            bytes.len(),
            records * IMAGE_RECORD,
            records
        )));
    }
    let mut x = Vec::with_capacity(records * (IMAGE_RECORD - 1));
    let mut y = Vec::with_capacity(records);
    for rec in bytes.chunks_exact(IMAGE_RECORD) {
        let label = rec[0] as usize;
        if label >= 10 {
            return Err(Error::Dataset(format!("{}: label {label} out of range", path.display())));
        }
        y.push(label);
        x.extend(rec[1..].iter().map(|&p| (f64::from(p) / 255.0 - 0.5) / 0.25));
    }
    Ok((x, y))
}

/// Load `data_batch_1.bin` … `data_batch_5.bin` and `test_batch.bin` from a
/// local directory. Nothing is ever downloaded.
pub fn load_image_dir(dir: &Path) -> Result<Dataset> {
    let mut train_x = Vec::new();
    let mut train_y = Vec::new();
    for i in 1..=5 {
        let (x, y) = load_image_batch(&dir.join(format!("data_batch_{i}.bin")), IMAGE_BATCH_RECORDS)?;
        train_x.extend(x);
        train_y.extend(y);
    }
    let (val_x, val_y) = load_image_batch(&dir.join("test_batch.bin"), IMAGE_BATCH_RECORDS)?;
    Ok(Dataset { features: IMAGE_RECORD - 1, classes: 10, train_x, train_y, val_x, val_y })
}
