//! Experiment configuration: a flat `key = value` file with dotted keys.
//!
//! Every key is optional. Validation collects every problem before
//! reporting, so a broken file is fixed in one pass.
//!
//! ```text
//! run.seed              u64                        0
//! run.mode              theory | epoch             theory
//! network.layers        comma list, e.g. 4,8,1     4,1
//! network.output        sigmoid | identity         sigmoid
//! network.init          zeros | uniform            uniform
//! network.init_scale    > 0                        0.5
//! network.law           auto | single | mlp        auto
//! loss.kind             lyapunov | l1 | l2         lyapunov
//! loss.alpha            (0, 1); 0 needs --unsafe-alpha
//! loss.beta             (0, 1) with alpha+beta < 1 (multi-layer only)
//! gains.k               > 0                        1
//! integrator.method     rk4 | euler                rk4
//! integrator.dt         > 0 | auto                 auto
//! integrator.t_max      > 0 | auto                 auto
//! integrator.step_budget                           10000000
//! integrator.record_stride                         1
//! stop.epsilon          > 0                        1e-9
//! data.source           sample | csv | blobs | linreg     sample
//! data.x, data.y        comma lists (sample source)
//! data.path, data.features, data.targets (csv source)
//! data.class_column, data.class_labels   e.g. setosa:0,versicolor:1
//! data.per_class, data.separation        (blobs)
//! data.count, data.noise_sd, data.coeffs (linreg)
//! data.normalize        minmax | none              minmax for csv, none otherwise
//! data.split            true | false               false
//! data.sample_index     sample used by theory mode 0
//! data.order            sequential | shuffled      sequential
//! perturb.mode          none | vanishing | amplitude      none
//! perturb.m, perturb.alpha, perturb.hold, perturb.seed
//! bound.gamma           auto | bias | data | <number>    auto
//! sweep.m, sweep.alpha, sweep.k          comma lists
//! output.svg            true | false               true
//! output.log_y          true | false               true
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::data::{ClassMap, CsvSchema, Normalization};
use crate::dynamics::{Method, SampleOrder, DEFAULT_EPSILON, DEFAULT_STEP_BUDGET};
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::loss::{default_multilayer_beta, LossKind, LyapunovLoss, DEFAULT_ALPHA};
use crate::net::Activation;
use crate::perturb::{PerturbationMode, PerturbationSpec};

const KNOWN_KEYS: &[&str] = &[
    "run.seed",
    "run.mode",
    "network.layers",
    "network.output",
    "network.init",
    "network.init_scale",
    "network.law",
    "loss.kind",
    "loss.alpha",
    "loss.beta",
    "gains.k",
    "integrator.method",
    "integrator.dt",
    "integrator.t_max",
    "integrator.step_budget",
    "integrator.record_stride",
    "stop.epsilon",
    "data.source",
    "data.x",
    "data.y",
    "data.path",
    "data.features",
    "data.targets",
    "data.class_column",
    "data.class_labels",
    "data.per_class",
    "data.separation",
    "data.count",
    "data.noise_sd",
    "data.coeffs",
    "data.normalize",
    "data.split",
    "data.sample_index",
    "data.order",
    "perturb.mode",
    "perturb.m",
    "perturb.alpha",
    "perturb.hold",
    "perturb.seed",
    "bound.gamma",
    "sweep.m",
    "sweep.alpha",
    "sweep.k",
    "output.svg",
    "output.log_y",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Theory,
    Epoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawChoice {
    Auto,
    Single,
    Multilayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossChoice {
    Lyapunov,
    L1,
    L2,
}

impl LossChoice {
    pub fn name(self) -> &'static str {
        match self {
            LossChoice::Lyapunov => "lyapunov",
            LossChoice::L1 => "l1",
            LossChoice::L2 => "l2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Uniform { scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub layers: Vec<usize>,
    pub output: Activation,
    pub init: Init,
    pub law: LawChoice,
}

impl NetworkConfig {
    /// Whether the run uses the single-neuron law.
    pub fn single_law(&self) -> bool {
        match self.law {
            LawChoice::Single => true,
            LawChoice::Multilayer => false,
            LawChoice::Auto => self.layers.len() == 2 && self.layers[1] == 1 && self.output == Activation::Sigmoid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub kind: LossChoice,
    pub alpha: f64,
    /// Explicit β for the multi-layer law.
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Auto {
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    pub dt: Auto,
    pub t_max: Auto,
    pub step_budget: u64,
    pub record_stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Sample { x: Vec<f64>, y: Vec<f64> },
    Csv { path: PathBuf, schema: CsvSchema },
    Blobs { per_class: usize, separation: f64 },
    Linreg { count: usize, noise_sd: f64, coeffs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub normalize: Normalization,
    pub split: bool,
    pub sample_index: usize,
    pub shuffled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbConfig {
    pub mode: PerturbationMode,
    pub hold_steps: usize,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaChoice {
    /// Data minimum for the single-neuron law, bias unit otherwise.
    Auto,
    Bias,
    Data,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepConfig {
    pub m: Vec<f64>,
    pub alpha: Vec<f64>,
    pub k: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: RunMode,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub k: f64,
    pub integrator: IntegratorConfig,
    pub epsilon: f64,
    pub data: DataConfig,
    pub perturb: Option<PerturbConfig>,
    pub gamma: GammaChoice,
    pub sweep: SweepConfig,
    pub svg: bool,
    pub log_y: bool,
    pub unsafe_alpha: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: RunMode::Theory,
            network: NetworkConfig {
                layers: vec![4, 1],
                output: Activation::Sigmoid,
                init: Init::Uniform { scale: 0.5 },
                law: LawChoice::Auto,
            },
            loss: LossConfig {
                kind: LossChoice::Lyapunov,
                alpha: DEFAULT_ALPHA,
                beta: None,
            },
            k: 1.0,
            integrator: IntegratorConfig {
                method: Method::Rk4,
                dt: Auto::Auto,
                t_max: Auto::Auto,
                step_budget: DEFAULT_STEP_BUDGET,
                record_stride: 1,
            },
            epsilon: DEFAULT_EPSILON,
            data: DataConfig {
                source: DataSource::Sample {
                    x: vec![0.8, -0.5, 0.3, 0.6],
                    y: vec![0.6],
                },
                normalize: Normalization::None,
                split: false,
                sample_index: 0,
                shuffled: false,
            },
            perturb: None,
            gamma: GammaChoice::Auto,
            sweep: SweepConfig::default(),
            svg: true,
            log_y: true,
            unsafe_alpha: false,
        }
    }
}

/// Collects parse errors while reading typed values out of a [`KvDoc`].
struct Reader<'a> {
    doc: &'a KvDoc,
    errors: Vec<String>,
}

impl<'a> Reader<'a> {
    fn raw(&self, key: &str) -> Option<&'a str> {
        self.doc.get(key)
    }

    fn fail(&mut self, key: &str, msg: impl std::fmt::Display) {
        let line = self
            .doc
            .entries()
            .iter()
            .find(|e| e.key == key)
            .map(|e| e.line)
            .unwrap_or(0);
        self.errors.push(format!("line {line}: {key}: {msg}"));
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key)?;
        match v.parse::<T>() {
            Ok(x) => Some(x),
            Err(e) => {
                self.fail(key, format!("cannot parse `{v}`: {e}"));
                None
            }
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Option<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key)?;
        let mut out = Vec::new();
        for part in v.split(',').map(str::trim) {
            match part.parse::<T>() {
                Ok(x) => out.push(x),
                Err(e) => {
                    self.fail(key, format!("cannot parse list item `{part}`: {e}"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn words(&self, key: &str) -> Option<Vec<String>> {
        self.raw(key)
            .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)]) -> Option<T> {
        let v = self.raw(key)?;
        match options.iter().find(|(name, _)| name.eq_ignore_ascii_case(v)) {
            Some(&(_, t)) => Some(t),
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.fail(key, format!("`{v}` is not one of {}", names.join(", ")));
                None
            }
        }
    }

    fn auto_f64(&mut self, key: &str) -> Option<Auto> {
        match self.raw(key)? {
            "auto" => Some(Auto::Auto),
            _ => self.parse::<f64>(key).map(Auto::Value),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path, unsafe_alpha: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, unsafe_alpha)
    }

    pub fn parse(text: &str, unsafe_alpha: bool) -> Result<Self> {
        let doc = KvDoc::parse(text)?;
        Self::from_kv(&doc, unsafe_alpha)
    }

    pub fn from_kv(doc: &KvDoc, unsafe_alpha: bool) -> Result<Self> {
        let mut r = Reader {
            doc,
            errors: Vec::new(),
        };
        let known: HashSet<&str> = KNOWN_KEYS.iter().copied().collect();
        for e in doc.entries() {
            if !known.contains(e.key.as_str()) {
                r.errors.push(format!("line {}: unknown key `{}`", e.line, e.key));
            }
        }

        let mut cfg = ExperimentConfig {
            unsafe_alpha,
            ..Default::default()
        };
        if let Some(v) = r.parse("run.seed") {
            cfg.seed = v;
        }
        if let Some(v) = r.choice("run.mode", &[("theory", RunMode::Theory), ("epoch", RunMode::Epoch)]) {
            cfg.mode = v;
        }

        if let Some(v) = r.list::<usize>("network.layers") {
            cfg.network.layers = v;
        }
        if let Some(v) = r.choice(
            "network.output",
            &[("sigmoid", Activation::Sigmoid), ("identity", Activation::Identity)],
        ) {
            cfg.network.output = v;
        }
        let scale = r.parse::<f64>("network.init_scale").unwrap_or(0.5);
        if let Some(zeros) = r.choice("network.init", &[("zeros", true), ("uniform", false)]) {
            cfg.network.init = if zeros { Init::Zeros } else { Init::Uniform { scale } };
        } else {
            cfg.network.init = Init::Uniform { scale };
        }
        if let Some(v) = r.choice(
            "network.law",
            &[
                ("auto", LawChoice::Auto),
                ("single", LawChoice::Single),
                ("mlp", LawChoice::Multilayer),
            ],
        ) {
            cfg.network.law = v;
        }

        if let Some(v) = r.choice(
            "loss.kind",
            &[("lyapunov", LossChoice::Lyapunov), ("l1", LossChoice::L1), ("l2", LossChoice::L2)],
        ) {
            cfg.loss.kind = v;
        }
        if let Some(v) = r.parse("loss.alpha") {
            cfg.loss.alpha = v;
        }
        cfg.loss.beta = r.parse("loss.beta");
        if let Some(v) = r.parse("gains.k") {
            cfg.k = v;
        }

        if let Some(v) = r.choice("integrator.method", &[("rk4", Method::Rk4), ("euler", Method::Euler)]) {
            cfg.integrator.method = v;
        }
        if let Some(v) = r.auto_f64("integrator.dt") {
            cfg.integrator.dt = v;
        }
        if let Some(v) = r.auto_f64("integrator.t_max") {
            cfg.integrator.t_max = v;
        }
        if let Some(v) = r.parse("integrator.step_budget") {
            cfg.integrator.step_budget = v;
        }
        if let Some(v) = r.parse("integrator.record_stride") {
            cfg.integrator.record_stride = v;
        }
        if let Some(v) = r.parse("stop.epsilon") {
            cfg.epsilon = v;
        }

        read_data(&mut r, &mut cfg);
        read_perturb(&mut r, &mut cfg);

        if let Some(v) = r.raw("bound.gamma") {
            cfg.gamma = match v {
                "auto" => GammaChoice::Auto,
                "bias" => GammaChoice::Bias,
                "data" => GammaChoice::Data,
                _ => match r.parse::<f64>("bound.gamma") {
                    Some(g) => GammaChoice::Value(g),
                    None => GammaChoice::Auto,
                },
            };
        }
        cfg.sweep.m = r.list("sweep.m").unwrap_or_default();
        cfg.sweep.alpha = r.list("sweep.alpha").unwrap_or_default();
        cfg.sweep.k = r.list("sweep.k").unwrap_or_default();
        if let Some(v) = r.parse("output.svg") {
            cfg.svg = v;
        }
        if let Some(v) = r.parse("output.log_y") {
            cfg.log_y = v;
        }

        let mut errors = r.errors;
        errors.extend(cfg.problems());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    /// Every semantic problem with the configuration; empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let layers = &self.network.layers;
        if layers.len() < 2 {
            p.push(format!("network.layers: need at least an input and an output layer, got {layers:?}"));
        } else if layers.contains(&0) {
            p.push(format!("network.layers: layer sizes must be positive, got {layers:?}"));
        }
        if let Init::Uniform { scale } = self.network.init {
            if !(scale.is_finite() && scale > 0.0) {
                p.push(format!("network.init_scale: must be finite and > 0, got {scale}"));
            }
        }
        if self.network.law == LawChoice::Single
            && !(layers.len() == 2 && layers.get(1) == Some(&1) && self.network.output == Activation::Sigmoid)
        {
            p.push("network.law: single needs layers n,1 with a sigmoid output".into());
        }
        p.extend(self.exponent_problems(self.loss.alpha));
        if !(self.k.is_finite() && self.k > 0.0) {
            p.push(format!("gains.k: must be finite and > 0, got {}", self.k));
        }
        for (key, v) in [("integrator.dt", self.integrator.dt), ("integrator.t_max", self.integrator.t_max)] {
            if let Auto::Value(x) = v {
                if !(x.is_finite() && x > 0.0) {
                    p.push(format!("{key}: must be finite and > 0, got {x}"));
                }
            }
        }
        if self.integrator.step_budget == 0 {
            p.push("integrator.step_budget: must be positive".into());
        }
        if self.integrator.record_stride == 0 {
            p.push("integrator.record_stride: must be at least 1".into());
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            p.push(format!("stop.epsilon: must be finite and > 0, got {}", self.epsilon));
        }
        p.extend(self.data_problems());
        if let Some(pc) = &self.perturb {
            if let Err(e) = self.perturbation_spec(pc.mode).validate() {
                p.push(e.to_string());
            }
        }
        if let GammaChoice::Value(g) = self.gamma {
            if !(g.is_finite() && g > 0.0) {
                p.push(format!("bound.gamma: must be finite and > 0, got {g}"));
            }
        }
        for &m in &self.sweep.m {
            if !(m.is_finite() && m >= 0.0) {
                p.push(format!("sweep.m: entries must be finite and >= 0, got {m}"));
            }
        }
        for &a in &self.sweep.alpha {
            p.extend(self.exponent_problems(a).into_iter().map(|e| format!("sweep.alpha: {e}")));
        }
        for &k in &self.sweep.k {
            if !(k.is_finite() && k > 0.0) {
                p.push(format!("sweep.k: entries must be finite and > 0, got {k}"));
            }
        }
        p
    }

    fn exponent_problems(&self, alpha: f64) -> Vec<String> {
        let mut p = Vec::new();
        if alpha == 0.0 {
            if !self.unsafe_alpha {
                p.push("loss.alpha: 0 gives a discontinuous law and is only allowed with --unsafe-alpha".into());
            }
        } else if !(alpha > 0.0 && alpha < 1.0) {
            p.push(format!("loss.alpha: must lie in (0, 1), got {alpha}"));
        }
        if let Some(beta) = self.loss.beta {
            if self.network.single_law() {
                p.push("loss.beta: the single-neuron law fixes beta = alpha/(alpha+1)".into());
            } else if !(beta > 0.0 && beta < 1.0) {
                p.push(format!("loss.beta: must lie in (0, 1), got {beta}"));
            } else if alpha + beta >= 1.0 && !self.unsafe_alpha {
                p.push(format!("loss.beta: alpha + beta must be < 1, got {}", alpha + beta));
            }
        }
        p
    }

    fn data_problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let layers = &self.network.layers;
        let (n, m) = (layers.first().copied(), layers.last().copied());
        match &self.data.source {
            DataSource::Sample { x, y } => {
                if Some(x.len()) != n {
                    p.push(format!("data.x: has {} values but the network takes {n:?} inputs", x.len()));
                }
                if Some(y.len()) != m {
                    p.push(format!("data.y: has {} values but the network has {m:?} outputs", y.len()));
                }
                if x.iter().chain(y).any(|v| !v.is_finite()) {
                    p.push("data.x/data.y: values must be finite".into());
                }
                if self.mode == RunMode::Epoch {
                    p.push("run.mode: epoch needs a dataset source (csv, blobs or linreg)".into());
                }
            }
            DataSource::Csv { schema, .. } => {
                if Some(schema.features.len()) != n {
                    p.push(format!(
                        "data.features: {} columns but the network takes {n:?} inputs",
                        schema.features.len()
                    ));
                }
                let outputs = schema.targets.len() + usize::from(schema.class_map.is_some());
                if Some(outputs) != m {
                    p.push(format!("data.targets: {outputs} target values but the network has {m:?} outputs"));
                }
            }
            DataSource::Blobs { per_class, separation } => {
                if n != Some(crate::data::BLOB_DIMS) || m != Some(1) {
                    p.push(format!("data.source: blobs need layers {},...,1", crate::data::BLOB_DIMS));
                }
                if *per_class == 0 {
                    p.push("data.per_class: must be positive".into());
                }
                if !separation.is_finite() {
                    p.push("data.separation: must be finite".into());
                }
            }
            DataSource::Linreg {
                count,
                noise_sd,
                coeffs,
            } => {
                if Some(coeffs.len()) != n || m != Some(1) {
                    p.push(format!(
                        "data.coeffs: {} coefficients need layers {},...,1",
                        coeffs.len(),
                        coeffs.len()
                    ));
                }
                if *count == 0 {
                    p.push("data.count: must be positive".into());
                }
                if !(noise_sd.is_finite() && *noise_sd >= 0.0) {
                    p.push(format!("data.noise_sd: must be finite and >= 0, got {noise_sd}"));
                }
            }
        }
        p
    }

    pub fn order(&self) -> SampleOrder {
        if self.data.shuffled {
            SampleOrder::Shuffled(self.seed)
        } else {
            SampleOrder::Sequential
        }
    }

    /// Perturbation spec for `mode` with the configured hold and seed.
    pub fn perturbation_spec(&self, mode: PerturbationMode) -> PerturbationSpec {
        let (hold_steps, seed) = match &self.perturb {
            Some(pc) => (pc.hold_steps, pc.seed.unwrap_or(self.seed)),
            None => (1, self.seed),
        };
        PerturbationSpec { mode, seed, hold_steps }
    }

    pub fn lyapunov_loss(&self, alpha: f64) -> Result<LyapunovLoss> {
        if self.network.single_law() {
            if alpha == 0.0 {
                LyapunovLoss::unsafe_exponents(0.0, 0.0)
            } else {
                LyapunovLoss::single_neuron(alpha)
            }
        } else {
            let beta = self.loss.beta.unwrap_or_else(|| default_multilayer_beta(alpha));
            if alpha == 0.0 || alpha + beta >= 1.0 {
                LyapunovLoss::unsafe_exponents(alpha, beta)
            } else {
                LyapunovLoss::multilayer_with_beta(alpha, beta)
            }
        }
    }

    pub fn loss_kind(&self, choice: LossChoice, alpha: f64) -> Result<LossKind> {
        Ok(match choice {
            LossChoice::Lyapunov => LossKind::Lyapunov(self.lyapunov_loss(alpha)?),
            LossChoice::L1 => LossKind::L1,
            LossChoice::L2 => LossKind::L2,
        })
    }
}

fn read_data(r: &mut Reader<'_>, cfg: &mut ExperimentConfig) {
    let source = r
        .choice(
            "data.source",
            &[("sample", 0u8), ("csv", 1), ("blobs", 2), ("linreg", 3)],
        )
        .unwrap_or(0);
    cfg.data.source = match source {
        1 => {
            let path = r.raw("data.path").map(PathBuf::from);
            if path.is_none() {
                r.errors.push("data.path: required for the csv source".into());
            }
            let features = r.words("data.features").unwrap_or_default();
            if features.is_empty() {
                r.errors.push("data.features: required for the csv source".into());
            }
            let targets = r.words("data.targets").unwrap_or_default();
            if targets.is_empty() && r.raw("data.class_column").is_none() {
                r.errors.push("data.targets: required for the csv source unless data.class_column is set".into());
            }
            let mut schema = CsvSchema::new(features, targets);
            if let Some(column) = r.raw("data.class_column") {
                let mut labels = Vec::new();
                for item in r.words("data.class_labels").unwrap_or_default() {
                    match item.rsplit_once(':').map(|(l, v)| (l.trim(), v.trim().parse::<f64>())) {
                        Some((label, Ok(v))) => labels.push((label.to_string(), v)),
                        _ => r.fail("data.class_labels", format!("expected `label:value`, got `{item}`")),
                    }
                }
                if labels.is_empty() {
                    r.errors.push("data.class_labels: required with data.class_column".into());
                }
                schema = schema.with_class_map(ClassMap {
                    column: column.to_string(),
                    labels,
                });
            }
            DataSource::Csv {
                path: path.unwrap_or_default(),
                schema,
            }
        }
        2 => DataSource::Blobs {
            per_class: r.parse("data.per_class").unwrap_or(50),
            separation: r.parse("data.separation").unwrap_or(6.0),
        },
        3 => {
            let coeffs = r.list("data.coeffs").unwrap_or_else(|| vec![0.5, -0.3, 0.2, 0.1]);
            DataSource::Linreg {
                count: r.parse("data.count").unwrap_or(20),
                noise_sd: r.parse("data.noise_sd").unwrap_or(0.0),
                coeffs,
            }
        }
        _ => {
            let (x, y) = match &cfg.data.source {
                DataSource::Sample { x, y } => (x.clone(), y.clone()),
                _ => unreachable!("default source is a sample"),
            };
            DataSource::Sample {
                x: r.list("data.x").unwrap_or(x),
                y: r.list("data.y").unwrap_or(y),
            }
        }
    };
    cfg.data.normalize = if source == 1 {
        Normalization::MinMaxUnit
    } else {
        Normalization::None
    };
    if let Some(v) = r.choice(
        "data.normalize",
        &[("minmax", Normalization::MinMaxUnit), ("none", Normalization::None)],
    ) {
        cfg.data.normalize = v;
    }
    if let Some(v) = r.parse("data.split") {
        cfg.data.split = v;
    }
    if let Some(v) = r.parse("data.sample_index") {
        cfg.data.sample_index = v;
    }
    if let Some(shuffled) = r.choice("data.order", &[("sequential", false), ("shuffled", true)]) {
        cfg.data.shuffled = shuffled;
    }
}

fn read_perturb(r: &mut Reader<'_>, cfg: &mut ExperimentConfig) {
    let kind = r
        .choice("perturb.mode", &[("none", 0u8), ("vanishing", 1), ("amplitude", 2)])
        .unwrap_or(0);
    let m = r.parse::<f64>("perturb.m");
    let alpha = r.parse::<f64>("perturb.alpha");
    let hold = r.parse::<usize>("perturb.hold").unwrap_or(1);
    let seed = r.parse::<u64>("perturb.seed");
    let mode = match kind {
        1 => PerturbationMode::Vanishing {
            m: m.unwrap_or(0.5),
            alpha: alpha.unwrap_or(cfg.loss.alpha),
        },
        2 => PerturbationMode::Amplitude { m: m.unwrap_or(0.5) },
        _ => return,
    };
    cfg.perturb = Some(PerturbConfig {
        mode,
        hold_steps: hold,
        seed,
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::parse("# nothing\n", false).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert!(cfg.network.single_law());
    }

    #[test]
    fn full_file_parses() {
        let text = "\
run.seed = 9
run.mode = epoch
network.layers = 4,8,1
network.output = identity
loss.kind = l2
loss.alpha = 0.6
loss.beta = 0.2
gains.k = 5
integrator.method = euler
integrator.dt = 1e-3
integrator.t_max = 40
data.source = linreg
data.count = 12
data.coeffs = 1,2,3,4
data.order = shuffled
perturb.mode = vanishing
perturb.m = 0.2
bound.gamma = 0.5
sweep.m = 0.1, 0.5, 2
output.svg = false
";
        let cfg = ExperimentConfig::parse(text, false).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.mode, RunMode::Epoch);
        assert!(!cfg.network.single_law());
        assert_eq!(cfg.loss.beta, Some(0.2));
        assert_eq!(cfg.integrator.dt, Auto::Value(1e-3));
        assert_eq!(cfg.order(), SampleOrder::Shuffled(9));
        assert_eq!(cfg.gamma, GammaChoice::Value(0.5));
        assert_eq!(cfg.sweep.m, vec![0.1, 0.5, 2.0]);
        let pc = cfg.perturb.unwrap();
        assert_eq!(pc.mode, PerturbationMode::Vanishing { m: 0.2, alpha: 0.6 });
        assert_eq!(cfg.perturbation_spec(pc.mode).seed, 9);
        assert!(!cfg.svg);
    }

    #[test]
    fn errors_are_listed_exhaustively() {
        let text = "\
loss.alpha = 1.5
gains.k = -1
network.output = tanh
bogus.key = 1
stop.epsilon = abc
";
        let Err(Error::Config(errs)) = ExperimentConfig::parse(text, false) else {
            panic!("expected a config error");
        };
        assert_eq!(errs.len(), 5, "{errs:#?}");
        assert!(errs.iter().any(|e| e.contains("unknown key `bogus.key`")));
        assert!(errs.iter().any(|e| e.starts_with("line 3: network.output")));
    }

    #[test]
    fn zero_alpha_needs_unsafe_flag() {
        assert!(ExperimentConfig::parse("loss.alpha = 0", false).is_err());
        let cfg = ExperimentConfig::parse("loss.alpha = 0", true).unwrap();
        assert_eq!(cfg.lyapunov_loss(0.0).unwrap().beta(), 0.0);
        assert!(ExperimentConfig::parse("sweep.alpha = 0.5, 0", false).is_err());
    }

    #[test]
    fn beta_rules() {
        assert!(ExperimentConfig::parse("loss.beta = 0.2", false).is_err());
        let mlp = "network.layers = 4,8,1\ndata.x = 1,2,3,4\n";
        assert!(ExperimentConfig::parse(&format!("{mlp}loss.beta = 0.5\n"), false).is_err());
        let cfg = ExperimentConfig::parse(&format!("{mlp}loss.beta = 0.25\n"), false).unwrap();
        assert_eq!(cfg.lyapunov_loss(0.7).unwrap().beta(), 0.25);
    }

    #[test]
    fn shape_mismatch_reported() {
        let Err(Error::Config(errs)) = ExperimentConfig::parse("network.layers = 3,1\n", false) else {
            panic!("expected a config error");
        };
        assert!(errs[0].contains("data.x"));
    }

    #[test]
    fn csv_source_requires_columns() {
        let Err(Error::Config(errs)) = ExperimentConfig::parse("data.source = csv\n", false) else {
            panic!("expected a config error");
        };
        assert!(errs.iter().any(|e| e.contains("data.path")));
        assert!(errs.iter().any(|e| e.contains("data.features")));
    }

    #[test]
    fn class_column_supplies_the_target() {
        let text = "\
data.source = csv
data.path = iris.csv
data.features = a,b,c,d
data.class_column = species
data.class_labels = setosa:0, versicolor:1
";
        let cfg = ExperimentConfig::parse(text, false).unwrap();
        let DataSource::Csv { schema, .. } = &cfg.data.source else {
            panic!("csv source expected");
        };
        assert_eq!(schema.class_map.as_ref().unwrap().labels[1], ("versicolor".to_string(), 1.0));
        assert_eq!(cfg.data.normalize, Normalization::MinMaxUnit);
    }

    #[test]
    fn syntax_error_propagates() {
        assert!(matches!(
            ExperimentConfig::parse("loss.alpha 0.7", false),
            Err(Error::Syntax { line: 1, .. })
        ));
    }
}
