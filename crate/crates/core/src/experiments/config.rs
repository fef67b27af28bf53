//! Plain-text experiment configuration: `key = value` lines grouped under
//! `[section]` headers. Every key is optional; unknown sections or keys are
//! rejected so that typos surface as configuration errors.

use std::str::FromStr;

use ini::{Ini, Properties};

use crate::drift::{KernelConfig, SelfInclusion};
use crate::encoder::EncoderSpec;
use crate::error::{Error, Result};
use crate::generator::{Activation, NoiseSchedule, Paradigm};
use crate::signal::{CleanKind, Compression, StftConfig};
use crate::trainer::{NegativeScope, Pairing, SigmaMode, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Toy2d,
    Denoise,
    Unpaired,
    DriftEval,
    StftCheck,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Toy2d, Task::Denoise, Task::Unpaired, Task::DriftEval, Task::StftCheck];

    pub fn name(self) -> &'static str {
        match self {
            Task::Toy2d => "toy2d",
            Task::Denoise => "denoise",
            Task::Unpaired => "unpaired",
            Task::DriftEval => "drift-eval",
            Task::StftCheck => "stft-check",
        }
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown task `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyTarget {
    /// `components` Gaussians evenly spaced on a circle.
    Ring,
    /// A single standard Gaussian, identical to the prior.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub target: ToyTarget,
    pub components: usize,
    pub radius: f64,
    pub std: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine-anneal the learning rate to zero over the run.
    pub cosine_decay: bool,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    pub temperatures: Vec<f64>,
    pub eval_every: usize,
    pub eval_points: usize,
    /// Steps at which the pushforward point cloud is written.
    pub snapshot_steps: Vec<usize>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            target: ToyTarget::Ring,
            components: 8,
            radius: 2.0,
            std: 0.1,
            steps: 5000,
            batch_size: 256,
            lr: 2e-3,
            cosine_decay: true,
            weight_decay: 0.0,
            hidden: vec![128, 128],
            temperatures: vec![0.1, 0.5, 1.0],
            eval_every: 25,
            eval_points: 1000,
            snapshot_steps: vec![0, 500, 1000, 2500, 5000],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSection {
    pub paradigm: Paradigm,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub skip: bool,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self { paradigm: Paradigm::DirectMapping, hidden: vec![256, 256, 256], activation: Activation::Silu, skip: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub clean_kind: CleanKind,
    /// Family of the independent clean pool used by the unpaired task.
    pub pool_kind: CleanKind,
    pub train_items: usize,
    pub pool_items: usize,
    pub test_items: usize,
    /// Samples per utterance.
    pub length: usize,
    pub train_snrs: Vec<f64>,
    pub eval_snr: f64,
    /// RMS level every clean utterance is scaled to.
    pub level: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            clean_kind: CleanKind::Harmonic,
            pool_kind: CleanKind::Harmonic,
            train_items: 128,
            pool_items: 128,
            test_items: 16,
            length: 8000,
            train_snrs: vec![0.0, 5.0, 10.0, 15.0],
            eval_snr: 0.0,
            level: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub snapshot_epochs: Vec<usize>,
    /// Kernel temperature of the held-out MMD.
    pub mmd_tau: MmdBandwidth,
    /// Held-out evaluation period in epochs. Epoch 0 (the untrained model)
    /// is always evaluated.
    pub eval_every: usize,
    pub wav_examples: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { snapshot_epochs: vec![1, 10, 25, 100], mmd_tau: MmdBandwidth::Fixed(0.5), eval_every: 5, wav_examples: 2 }
    }
}

/// Temperature of the evaluation MMD kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MmdBandwidth {
    Fixed(f64),
    /// Median pairwise distance of the reference frames, per tap, computed
    /// once per run.
    Median,
}

impl std::str::FromStr for MmdBandwidth {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "median" {
            return Ok(Self::Median);
        }
        match s.parse::<f64>() {
            Ok(t) if t > 0.0 && t.is_finite() => Ok(Self::Fixed(t)),
            _ => Err(Error::InvalidConfig(format!("mmd_tau must be `median` or a positive number, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub instances: usize,
    /// Corrupts the decomposed reference; the suite must then fail.
    pub perturb: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { instances: 1000, perturb: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: Option<u64>,
    pub train: TrainConfig,
    pub generator: GeneratorSection,
    pub encoder: EncoderSpec,
    pub stft: StftConfig,
    pub compression: Compression,
    pub data: DataConfig,
    pub toy: ToyConfig,
    pub output: OutputConfig,
    pub suite: SuiteConfig,
}

impl ExperimentConfig {
    pub fn new(task: Task) -> Self {
        let mut train = TrainConfig { epochs: 100, ..TrainConfig::default() };
        let mut data = DataConfig::default();
        if task == Task::Unpaired {
            train.pairing = Pairing::Unpaired;
            data.pool_kind = CleanKind::AmChirp;
        }
        Self {
            task,
            seed: None,
            train,
            generator: GeneratorSection::default(),
            encoder: EncoderSpec::default(),
            stft: StftConfig::default(),
            compression: Compression::default(),
            data,
            toy: ToyConfig::default(),
            output: OutputConfig::default(),
            suite: SuiteConfig::default(),
        }
    }

    /// The seed after command-line overrides; a run without one is a
    /// configuration error.
    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::InvalidConfig("a seed is required (`seed` key or --seed)".into()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_for(text, None)
    }

    /// Parses `text` for `task`. The file's own `task` key may be omitted,
    /// but must agree with `task` when both are present.
    pub fn parse_for(text: &str, task: Option<Task>) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let general = Reader::new("", ini.general_section(), &["task", "seed"])?;
        let task = match (general.get::<Task>("task")?, task) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::InvalidConfig(format!("config is for `{}`, not `{}`", a.name(), b.name())))
            }
            (Some(t), _) | (None, Some(t)) => t,
            (None, None) => return Err(Error::InvalidConfig("missing `task`".into())),
        };
        let mut cfg = Self::new(task);
        cfg.seed = general.get("seed")?;
        for (name, props) in ini.iter() {
            let Some(name) = name else { continue };
            match name {
                "train" => cfg.read_train(props)?,
                "generator" => cfg.read_generator(props)?,
                "encoder" => cfg.encoder = EncoderSpec::from_properties(props)?,
                "signal" => cfg.read_signal(props)?,
                "data" => cfg.read_data(props)?,
                "toy" => cfg.read_toy(props)?,
                "output" => cfg.read_output(props)?,
                "suite" => cfg.read_suite(props)?,
                other => return Err(Error::InvalidConfig(format!("unknown section [{other}]"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>, task: Option<Task>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.as_ref().display())))?;
        Self::parse_for(&text, task)
    }

    fn read_train(&mut self, p: &Properties) -> Result<()> {
        let r = Reader::new(
            "train",
            p,
            &[
                "batch_size", "lr", "weight_decay", "epochs", "temperatures", "sigma", "sigma_mu", "sigma_log",
                "sigma_lo", "sigma_hi", "pairing", "negatives", "self_inclusion",
            ],
        )?;
        let t = &mut self.train;
        r.set(&mut t.batch_size, "batch_size")?;
        r.set(&mut t.lr, "lr")?;
        r.set(&mut t.weight_decay, "weight_decay")?;
        r.set(&mut t.epochs, "epochs")?;
        if let Some(temps) = r.list::<f64>("temperatures")? {
            t.kernel = KernelConfig::new(temps)?;
        }
        let mut sched = NoiseSchedule::default();
        r.set(&mut sched.mu, "sigma_mu")?;
        r.set(&mut sched.sigma_log, "sigma_log")?;
        r.set(&mut sched.lo, "sigma_lo")?;
        r.set(&mut sched.hi, "sigma_hi")?;
        t.sigma = match r.raw("sigma") {
            None | Some("schedule") => SigmaMode::Schedule(sched),
            Some(v) => SigmaMode::Fixed(parse_value("sigma", v)?),
        };
        if let Some(v) = r.raw("pairing") {
            t.pairing = match v {
                "paired" => Pairing::Paired,
                "unpaired" => Pairing::Unpaired,
                _ => return Err(Error::InvalidConfig(format!("pairing: unknown value `{v}`"))),
            };
        }
        if let Some(v) = r.raw("negatives") {
            t.negatives = match v {
                "batch" => NegativeScope::Batch,
                "utterance" => NegativeScope::Utterance,
                _ => return Err(Error::InvalidConfig(format!("negatives: unknown value `{v}`"))),
            };
        }
        if let Some(v) = r.raw("self_inclusion") {
            t.self_inclusion = match v {
                "include" => SelfInclusion::Include,
                "exclude" => SelfInclusion::Exclude,
                _ => return Err(Error::InvalidConfig(format!("self_inclusion: unknown value `{v}`"))),
            };
        }
        Ok(())
    }

    fn read_generator(&mut self, p: &Properties) -> Result<()> {
        let r = Reader::new("generator", p, &["paradigm", "hidden", "activation", "skip"])?;
        let g = &mut self.generator;
        r.set(&mut g.paradigm, "paradigm")?;
        r.set_list(&mut g.hidden, "hidden")?;
        r.set(&mut g.activation, "activation")?;
        r.set(&mut g.skip, "skip")?;
        Ok(())
    }

    fn read_signal(&mut self, p: &Properties) -> Result<()> {
        let r = Reader::new("signal", p, &["window", "hop", "fft_size", "compress_exponent", "compress_factor"])?;
        r.set(&mut self.stft.window_len, "window")?;
        r.set(&mut self.stft.hop, "hop")?;
        r.set(&mut self.stft.fft_size, "fft_size")?;
        let mut a = self.compression.exponent;
        let mut c = self.compression.factor;
        r.set(&mut a, "compress_exponent")?;
        r.set(&mut c, "compress_factor")?;
        self.compression = Compression::new(a, c)?;
        Ok(())
    }

    fn read_data(&mut self, p: &Properties) -> Result<()> {
        let r = Reader::new(
            "data",
            p,
            &["clean_kind", "pool_kind", "train_items", "pool_items", "test_items", "length", "train_snrs", "eval_snr", "level"],
        )?;
        let d = &mut self.data;
        r.set(&mut d.clean_kind, "clean_kind")?;
        r.set(&mut d.pool_kind, "pool_kind")?;
        r.set(&mut d.train_items, "train_items")?;
        r.set(&mut d.pool_items, "pool_items")?;
        r.set(&mut d.test_items, "test_items")?;
        r.set(&mut d.length, "length")?;
        r.set_list(&mut d.train_snrs, "train_snrs")?;
        r.set(&mut d.eval_snr, "eval_snr")?;
        r.set(&mut d.level, "level")?;
        Ok(())
    }

    fn read_toy(&mut self, p: &Properties) -> Result<()> {
        let r = Reader::new(
            "toy",
            p,
            &[
                "target", "components", "radius", "std", "steps", "batch_size", "lr", "cosine_decay", "weight_decay", "hidden",
                "temperatures", "eval_every", "eval_points", "snapshot_steps",
            ],
        )?;
        let t = &mut self.toy;
        if let Some(v) = r.raw("target") {
            t.target = match v {
                "ring" => ToyTarget::Ring,
                "gaussian" => ToyTarget::Gaussian,
                _ => return Err(Error::InvalidConfig(format!("target: unknown value `{v}`"))),
            };
        }
        r.set(&mut t.components, "components")?;
        r.set(&mut t.radius, "radius")?;
        r.set(&mut t.std, "std")?;
        r.set(&mut t.steps, "steps")?;
        r.set(&mut t.batch_size, "batch_size")?;
        r.set(&mut t.lr, "lr")?;
        r.set(&mut t.cosine_decay, "cosine_decay")?;
        r.set(&mut t.weight_decay, "weight_decay")?;
        r.set_list(&mut t.hidden, "hidden")?;
        r.set_list(&mut t.temperatures, "temperatures")?;
        r.set(&mut t.eval_every, "eval_every")?;
        r.set(&mut t.eval_points, "eval_points")?;
        r.set_list(&mut t.snapshot_steps, "snapshot_steps")?;
        Ok(())
    }

    fn read_output(&mut self, p: &Properties) -> Result<()> {
        let r = Reader::new("output", p, &["snapshot_epochs", "mmd_tau", "eval_every", "wav_examples"])?;
        r.set(&mut self.output.mmd_tau, "mmd_tau")?;
        r.set_list(&mut self.output.snapshot_epochs, "snapshot_epochs")?;
        r.set(&mut self.output.eval_every, "eval_every")?;
        r.set(&mut self.output.wav_examples, "wav_examples")?;
        Ok(())
    }

    fn read_suite(&mut self, p: &Properties) -> Result<()> {
        let r = Reader::new("suite", p, &["instances", "perturb"])?;
        r.set(&mut self.suite.instances, "instances")?;
        r.set(&mut self.suite.perturb, "perturb")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        self.train.validate()?;
        self.encoder.validate()?;
        self.stft.validate()?;
        let d = &self.data;
        if d.train_items == 0 || d.test_items == 0 || d.pool_items == 0 {
            return bad("corpus sizes must be positive");
        }
        if d.train_snrs.is_empty() || d.train_snrs.iter().chain([&d.eval_snr]).any(|s| !s.is_finite()) {
            return bad("train_snrs must be a non-empty list of finite values");
        }
        if !(d.level > 0.0 && d.level.is_finite()) {
            return bad("level must be positive and finite");
        }
        if d.length < self.encoder.frame_len.max(self.stft.window_len) {
            return bad("utterance length is shorter than an encoder frame or STFT window");
        }
        let t = &self.toy;
        if t.components == 0 || t.steps == 0 || t.batch_size == 0 || t.eval_every == 0 || t.eval_points == 0 {
            return bad("toy counts must be positive");
        }
        if !(t.std > 0.0 && t.radius >= 0.0 && t.lr > 0.0 && t.weight_decay >= 0.0) {
            return bad("toy std and lr must be positive; radius and weight_decay non-negative");
        }
        KernelConfig::new(t.temperatures.clone())?;
        if self.output.eval_every == 0 {
            return bad("output eval_every must be positive");
        }
        if self.suite.instances == 0 {
            return bad("suite instances must be positive");
        }
        Ok(())
    }
}


fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse::<T>().map_err(|e| Error::InvalidConfig(format!("{key}: cannot parse `{v}`: {e}")))
}

/// Key lookup within one section, after checking for unknown keys.
struct Reader<'a> {
    props: &'a Properties,
}

impl<'a> Reader<'a> {
    fn new(section: &str, props: &'a Properties, known: &[&str]) -> Result<Self> {
        if let Some((k, _)) = props.iter().find(|(k, _)| !known.contains(k)) {
            let at = if section.is_empty() { String::new() } else { format!(" in [{section}]") };
            return Err(Error::InvalidConfig(format!("unknown key `{k}`{at}")));
        }
        Ok(Self { props })
    }

    fn raw(&self, key: &str) -> Option<&'a str> {
        self.props.get(key).map(str::trim)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key).map(|v| parse_value(key, v)).transpose()
    }

    fn set<T: FromStr>(&self, slot: &mut T, key: &str) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_value(key, s)).collect())
            .transpose()
    }

    fn set_list<T: FromStr>(&self, slot: &mut Vec<T>, key: &str) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.list(key)? {
            *slot = v;
        }
        Ok(())
    }
}
