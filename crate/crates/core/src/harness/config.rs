//! Line-oriented `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key may appear once,
//! except `segment`, which may repeat. Unknown keys are rejected.
//!
//! ```text
//! family      = mlp            # mlp | cnn1d | cnn2d | resnet_dense | resnet_conv1d
//! depths      = 4, 6, 8, 12
//! width       = 64             # neurons or channels per layer
//! seeds       = 0, 1, 2
//! segment     = 4, 6 -> 12, 16
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::arch::{Activation, ArchSpec, Grid, Kernel, Padding, Readout};
use crate::data::SyntheticParams;
use crate::error::{Error, Result};
use crate::scaling::{Budget, SelectionRule, SweepGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Mlp,
    Cnn1d,
    Cnn2d,
    ResnetDense,
    ResnetConv1d,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Synthetic10,
    /// Local directory in the standard 3073-byte-record batch format.
    ImageBinary(PathBuf),
}

/// Anchor depths and the depths predicted from them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub anchors: Vec<usize>,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: NetKind,
    pub depths: Vec<usize>,
    pub width: usize,
    pub input: usize,
    pub length: usize,
    pub plane: (usize, usize),
    pub kernel: (usize, usize),
    pub padding: Padding,
    pub activation: Activation,
    pub readout: Readout,
    pub c: f64,
    pub branch_depth: usize,
    pub outputs: usize,
    pub task: Task,
    pub separation: f64,
    pub train_samples: usize,
    pub val_samples: usize,
    pub sigma_y: f64,
    pub grid: SweepGrid,
    pub budget: Budget,
    pub selection: SelectionRule,
    pub seeds: Vec<u64>,
    pub replicates: usize,
    pub probe_eta: f64,
    pub probe_batch: usize,
    pub segments: Vec<Segment>,
    pub l_eff_factor: f64,
    pub out: PathBuf,
    /// Canonical text the config hash is computed from.
    pub canonical: String,
}

const KEYS: &[&str] = &[
    "family",
    "depths",
    "width",
    "input",
    "length",
    "plane",
    "kernel",
    "padding",
    "activation",
    "readout",
    "c",
    "branch_depth",
    "outputs",
    "task",
    "image_dir",
    "separation",
    "train_samples",
    "val_samples",
    "sigma_y",
    "eta_min",
    "eta_max",
    "eta_count",
    "batch",
    "epochs",
    "selection",
    "seeds",
    "replicates",
    "probe_eta",
    "probe_batch",
    "segment",
    "l_eff_factor",
    "out",
];

fn field(name: &str, msg: impl Into<String>) -> Error {
    Error::ConfigField { field: name.to_string(), msg: msg.into() }
}

struct Entries {
    values: HashMap<String, (usize, String)>,
    segments: Vec<(usize, String)>,
}

impl Entries {
    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(_, v)| v.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| field(key, format!("cannot parse `{v}`"))),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.get(key).map(|v| parse_list(key, v)).transpose()
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| s.trim().parse().map_err(|_| field(key, format!("cannot parse list item `{}`", s.trim())))).collect()
}

fn pair(key: &str, v: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = v.split('x').map(str::trim).collect();
    let num = |s: &str| s.parse::<usize>().map_err(|_| field(key, format!("cannot parse `{v}`")));
    match parts.as_slice() {
        [a] => {
            let a = num(a)?;
            Ok((a, a))
        }
        [a, b] => Ok((num(a)?, num(b)?)),
        _ => Err(field(key, format!("expected N or HxW, got `{v}`"))),
    }
}

fn tokenize(text: &str) -> Result<Entries> {
    let mut values = HashMap::new();
    let mut segments = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::ConfigParse { line, msg: format!("expected `key = value`, got `{content}`") });
        };
        let key = key.trim();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::ConfigParse { line, msg: "missing key before `=`".into() });
        }
        if !KEYS.contains(&key) {
            return Err(Error::ConfigParse { line, msg: format!("unknown key `{key}`") });
        }
        if key == "segment" {
            segments.push((line, value));
        } else if let Some((first, _)) = values.insert(key.to_string(), (line, value)) {
            return Err(Error::ConfigParse { line, msg: format!("duplicate key `{key}` (first set on line {first})") });
        }
    }
    Ok(Entries { values, segments })
}

fn parse_segment(line: usize, v: &str) -> Result<Segment> {
    let Some((a, t)) = v.split_once("->") else {
        return Err(Error::ConfigParse { line, msg: format!("segment must look like `4, 6 -> 12, 16`, got `{v}`") });
    };
    let anchors: Vec<usize> = parse_list("segment", a)?;
    let targets: Vec<usize> = parse_list("segment", t)?;
    Ok(Segment { anchors, targets })
}

impl ExperimentConfig {
    /// Parse and validate config text.
    pub fn parse(text: &str) -> Result<Self> {
        let e = tokenize(text)?;
        let kind = match e.get("family").unwrap_or("mlp") {
            "mlp" => NetKind::Mlp,
            "cnn1d" => NetKind::Cnn1d,
            "cnn2d" => NetKind::Cnn2d,
            "resnet_dense" => NetKind::ResnetDense,
            "resnet_conv1d" => NetKind::ResnetConv1d,
            other => return Err(field("family", format!("unknown family `{other}`"))),
        };
        let depths: Vec<usize> = e.list("depths")?.ok_or_else(|| field("depths", "required"))?;
        let padding = match e.get("padding").unwrap_or("circular") {
            "circular" => Padding::Circular,
            "zero" => Padding::Zero,
            other => return Err(field("padding", format!("expected circular or zero, got `{other}`"))),
        };
        let activation = match e.get("activation").unwrap_or("relu") {
            "relu" => Activation::Relu,
            "gelu" => Activation::Gelu,
            other => return Err(field("activation", format!("expected relu or gelu, got `{other}`"))),
        };
        let readout = match e.get("readout").unwrap_or("mup") {
            "mup" => Readout::MuP,
            "he" => Readout::He,
            other => return Err(field("readout", format!("expected mup or he, got `{other}`"))),
        };
        let task = match e.get("task").unwrap_or("synthetic10") {
            "synthetic10" => Task::Synthetic10,
            "image" => Task::ImageBinary(PathBuf::from(e.get("image_dir").ok_or_else(|| field("image_dir", "required when task = image"))?)),
            other => return Err(field("task", format!("expected synthetic10 or image, got `{other}`"))),
        };
        let selection = match e.get("selection").unwrap_or("val_accuracy") {
            "val_accuracy" => SelectionRule::ValAccuracy,
            "val_loss" => SelectionRule::ValLoss,
            other => return Err(field("selection", format!("expected val_accuracy or val_loss, got `{other}`"))),
        };
        let conv = !matches!(kind, NetKind::Mlp | NetKind::ResnetDense);
        let eta_min = e.parse("eta_min", 1e-4)?;
        let eta_max = e.parse("eta_max", 1e1)?;
        let eta_count = e.parse("eta_count", 40usize)?;
        let grid = SweepGrid::geometric(eta_count, eta_min, eta_max).map_err(|err| field("eta_min/eta_max/eta_count", err.to_string()))?;
        let segments = e.segments.iter().map(|(l, v)| parse_segment(*l, v)).collect::<Result<Vec<_>>>()?;
        let cfg = Self {
            kind,
            depths,
            width: e.parse("width", 64)?,
            input: e.parse("input", if conv { 4 } else { 32 })?,
            length: e.parse("length", 8)?,
            plane: e.get("plane").map(|v| pair("plane", v)).transpose()?.unwrap_or((4, 2)),
            kernel: e.get("kernel").map(|v| pair("kernel", v)).transpose()?.unwrap_or((3, 3)),
            padding,
            activation,
            readout,
            c: e.parse("c", 2.0)?,
            branch_depth: e.parse("branch_depth", 1)?,
            outputs: e.parse("outputs", 10)?,
            task,
            separation: e.parse("separation", SyntheticParams::default().separation)?,
            train_samples: e.parse("train_samples", SyntheticParams::default().train)?,
            val_samples: e.parse("val_samples", SyntheticParams::default().val)?,
            sigma_y: e.parse("sigma_y", 1.0)?,
            grid,
            budget: Budget { epochs: e.parse("epochs", 1)?, batch: e.parse("batch", 128)? },
            selection,
            seeds: e.list("seeds")?.unwrap_or_else(|| vec![0]),
            replicates: e.parse("replicates", 64)?,
            probe_eta: e.parse("probe_eta", 1e-4)?,
            probe_batch: e.parse("probe_batch", 1)?,
            segments,
            l_eff_factor: e.parse("l_eff_factor", 1.0)?,
            out: PathBuf::from(e.get("out").unwrap_or("out")),
            canonical: String::new(),
        };
        cfg.validate()?;
        Ok(Self { canonical: cfg.render(), ..cfg })
    }

    fn validate(&self) -> Result<()> {
        if self.depths.is_empty() {
            return Err(field("depths", "must list at least one depth"));
        }
        if self.depths.contains(&0) {
            return Err(field("depths", "depths must be positive"));
        }
        if self.depths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(field("depths", "must be sorted strictly ascending"));
        }
        if self.seeds.is_empty() {
            return Err(field("seeds", "must list at least one seed"));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(field("seeds", "seeds must be distinct"));
        }
        let positive = [
            ("width", self.width),
            ("input", self.input),
            ("length", self.length),
            ("outputs", self.outputs),
            ("branch_depth", self.branch_depth),
            ("train_samples", self.train_samples),
            ("val_samples", self.val_samples),
            ("batch", self.budget.batch),
            ("epochs", self.budget.epochs),
            ("probe_batch", self.probe_batch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(field(name, "must be positive"));
            }
        }
        if self.replicates < 2 {
            return Err(field("replicates", "need at least 2"));
        }
        if self.kernel.0 % 2 == 0 || self.kernel.1 % 2 == 0 {
            return Err(field("kernel", "kernel sizes must be odd"));
        }
        for (name, v) in [("c", self.c), ("sigma_y", self.sigma_y), ("probe_eta", self.probe_eta), ("l_eff_factor", self.l_eff_factor)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(field(name, "must be positive and finite"));
            }
        }
        if !(self.separation >= 0.0) {
            return Err(field("separation", "must be non-negative"));
        }
        if self.outputs < 2 {
            return Err(field("outputs", "classification needs at least 2 outputs"));
        }
        if self.budget.batch > self.train_samples {
            return Err(field("batch", "larger than the training set"));
        }
        for seg in &self.segments {
            if seg.anchors.len() < 2 {
                return Err(field("segment", "needs at least two anchors"));
            }
            if seg.targets.is_empty() {
                return Err(field("segment", "needs at least one target"));
            }
            let mut a = seg.anchors.clone();
            a.sort_unstable();
            a.dedup();
            if a.len() != seg.anchors.len() {
                return Err(field("segment", "anchors must be distinct depths"));
            }
            if let Some(d) = seg.anchors.iter().chain(&seg.targets).find(|d| !self.depths.contains(d)) {
                return Err(field("segment", format!("depth {d} is not in `depths`")));
            }
        }
        if let Task::ImageBinary(_) = self.task {
            if self.features() != crate::data::IMAGE_RECORD - 1 || self.outputs != 10 {
                return Err(field("task", "image batches need 3072 input features and 10 outputs"));
            }
        }
        self.spec(self.depths[0])?.validate().map_err(|err| field("family", err.to_string()))
    }

    /// Architecture at depth `depth`.
    pub fn spec(&self, depth: usize) -> Result<ArchSpec> {
        let (kh, kw) = self.kernel;
        let spec = match self.kind {
            NetKind::Mlp => ArchSpec::mlp(self.input, self.width, depth, self.outputs),
            NetKind::Cnn1d => ArchSpec::cnn1d(self.input, self.length, self.width, depth, kw, self.outputs),
            NetKind::Cnn2d => ArchSpec::cnn2d(self.input, Grid::plane(self.plane.0, self.plane.1), self.width, depth, (kh, kw), self.outputs),
            NetKind::ResnetDense => ArchSpec::resnet_dense(self.input, self.width, depth, self.outputs).with_residual(self.branch_depth, self.c),
            NetKind::ResnetConv1d => {
                ArchSpec::resnet_conv1d(self.input, self.length, self.width, depth, kw, self.outputs).with_residual(self.branch_depth, self.c)
            }
        };
        let spec = spec.with_padding(self.padding).with_activation(self.activation).with_readout(self.readout);
        let spec = if matches!(self.kind, NetKind::Cnn2d) { spec.with_kernels(vec![Kernel::rect(kh, kw); depth]) } else { spec };
        spec.validate()?;
        Ok(spec)
    }

    /// Flat input features per sample.
    pub fn features(&self) -> usize {
        self.spec(self.depths[0]).map(|s| s.input_shape(1).iter().product()).unwrap_or(0)
    }

    pub fn synthetic_params(&self) -> SyntheticParams {
        SyntheticParams {
            dim: self.features(),
            classes: self.outputs,
            separation: self.separation,
            train: self.train_samples,
            val: self.val_samples,
        }
    }

    /// Normalized `key = value` text, one key per line in schema order.
    pub fn render(&self) -> String {
        let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
        let kind = match self.kind {
            NetKind::Mlp => "mlp",
            NetKind::Cnn1d => "cnn1d",
            NetKind::Cnn2d => "cnn2d",
            NetKind::ResnetDense => "resnet_dense",
            NetKind::ResnetConv1d => "resnet_conv1d",
        };
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        put("family", kind.into());
        put("depths", join(&self.depths));
        put("width", self.width.to_string());
        put("input", self.input.to_string());
        put("length", self.length.to_string());
        put("plane", format!("{}x{}", self.plane.0, self.plane.1));
        put("kernel", format!("{}x{}", self.kernel.0, self.kernel.1));
        put("padding", if self.padding == Padding::Circular { "circular" } else { "zero" }.into());
        put("activation", if self.activation == Activation::Gelu { "gelu" } else { "relu" }.into());
        put("readout", if self.readout == Readout::MuP { "mup" } else { "he" }.into());
        put("c", format!("{:?}", self.c));
        put("branch_depth", self.branch_depth.to_string());
        put("outputs", self.outputs.to_string());
        match &self.task {
            Task::Synthetic10 => put("task", "synthetic10".into()),
            Task::ImageBinary(dir) => {
                put("task", "image".into());
                put("image_dir", dir.display().to_string());
            }
        }
        put("separation", format!("{:?}", self.separation));
        put("train_samples", self.train_samples.to_string());
        put("val_samples", self.val_samples.to_string());
        put("sigma_y", format!("{:?}", self.sigma_y));
        let etas = self.grid.etas();
        put("eta_min", format!("{:?}", etas[0]));
        put("eta_max", format!("{:?}", etas[etas.len() - 1]));
        put("eta_count", etas.len().to_string());
        put("batch", self.budget.batch.to_string());
        put("epochs", self.budget.epochs.to_string());
        put("selection", self.selection.id().into());
        put("seeds", self.seeds.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "));
        put("replicates", self.replicates.to_string());
        put("probe_eta", format!("{:?}", self.probe_eta));
        put("probe_batch", self.probe_batch.to_string());
        for seg in &self.segments {
            put("segment", format!("{} -> {}", join(&seg.anchors), join(&seg.targets)));
        }
        put("l_eff_factor", format!("{:?}", self.l_eff_factor));
        put("out", self.out.display().to_string());
        s
    }

    /// Replace the seed list, as the CLI `--seed` flag does.
    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Result<Self> {
        self.seeds = seeds;
        self.validate()?;
        self.canonical = self.render();
        Ok(self)
    }

    /// Hex SHA-256 of the canonical text, excluding the output directory.
    pub fn hash(&self) -> String {
        let body: String = self.canonical.lines().filter(|l| !l.starts_with("out =")).map(|l| format!("{l}\n")).collect();
        Sha256::digest(body.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Read and validate a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| field("path", format!("{}: {e}", path.display())))?;
    ExperimentConfig::parse(&text)
}
