//! Plain-text run configs: `key = value` lines grouped under `[section]`
//! headers, `#` comments, no nesting. Keys before the first header belong
//! to the top level, which holds the run seed.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::{Ini, ParseOption};

use super::data::{DatasetDescriptor, DatasetKind};
use crate::convnn::{AggregationKind, ConvNNConfig, Positional, Rho};
use crate::error::{config_err, Error, Result};
use crate::model::{LayerKind, MixerKind, SearchOptions, TrainConfig, VggConfig, VitConfig};
use crate::neighbor::{candidates_spatial, Layout, Strategy};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "CONVNN_SEED";

/// A parsed config file with typed, section-scoped lookups.
#[derive(Clone, Debug)]
pub struct ConfigFile {
    ini: Ini,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let opt = ParseOption {
            enabled_quote: false,
            enabled_escape: false,
            ..ParseOption::default()
        };
        let stripped: String = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .collect::<Vec<_>>()
            .join("\n");
        let ini = Ini::load_from_str_opt(&stripped, opt).map_err(|e| usage(format!("malformed config: {e}")))?;
        Ok(Self { ini })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Raw value of `key` in `section` (`None` for the top level).
    pub fn raw(&self, section: Option<&str>, key: &str) -> Option<&str> {
        self.ini.section(section).and_then(|p| p.get(key)).map(str::trim)
    }

    pub fn get<T: FromStr>(&self, section: Option<&str>, key: &str) -> Result<Option<T>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|_| {
                usage(format!("cannot parse {}{key} = `{s}`", prefix(section)))
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, section: Option<&str>, key: &str, default: T) -> Result<T> {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn list<T: FromStr>(&self, section: Option<&str>, key: &str) -> Result<Option<Vec<T>>> {
        let Some(s) = self.raw(section, key) else {
            return Ok(None);
        };
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse()
                    .map_err(|_| usage(format!("cannot parse `{t}` in {}{key}", prefix(section))))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Rejects sections and keys outside `allowed`, given as
    /// `(section, keys)` pairs with `None` for the top level.
    pub fn expect_keys(&self, allowed: &[(Option<&str>, &[&str])]) -> Result<()> {
        for (section, props) in self.ini.iter() {
            let Some((_, keys)) = allowed.iter().find(|(s, _)| *s == section) else {
                if props.is_empty() {
                    continue;
                }
                return Err(usage(format!("unknown section [{}]", section.unwrap_or(""))));
            };
            let keys: BTreeSet<&str> = keys.iter().copied().collect();
            for (k, _) in props.iter() {
                if !keys.contains(k) {
                    return Err(usage(format!("unknown key {}{k}", prefix(section))));
                }
            }
        }
        Ok(())
    }

    /// Top-level `seed`, replaced by `CONVNN_SEED` when set.
    pub fn seed(&self) -> Result<u64> {
        if let Ok(s) = std::env::var(SEED_ENV) {
            return s.trim().parse().map_err(|_| usage(format!("{SEED_ENV}=`{s}` is not a u64")));
        }
        self.get_or(None, "seed", 0)
    }
}

fn prefix(section: Option<&str>) -> String {
    section.map_or(String::new(), |s| format!("[{s}] "))
}

/// Everything `cmd_train` needs, validated up front.
#[derive(Clone, Debug)]
pub struct TrainSpec {
    pub seed: u64,
    pub dataset: DatasetDescriptor,
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Write measured epoch times into the metrics CSV. Off by default so
    /// that repeated runs produce identical files.
    pub record_wall_time: bool,
}

#[derive(Clone, Debug)]
pub enum ModelSpec {
    Vgg(VggConfig),
    Vit(VitConfig),
}

const DATASET_KEYS: &[&str] = &["kind", "path", "train", "test", "image_size"];
const MODEL_KEYS: &[&str] = &[
    "arch", "layer", "lambda", "k", "kernel", "channels", "strategy", "r", "positional", "normalize",
    "mixer", "window", "patch", "dim", "depth", "mlp", "rho", "aggregation", "frozen_unit",
];
const TRAIN_KEYS: &[&str] = &[
    "epochs", "batch", "lr", "weight_decay", "clip_norm", "target_train_accuracy", "record_wall_time",
];

impl TrainSpec {
    pub fn from_config(cfg: &ConfigFile) -> Result<Self> {
        cfg.expect_keys(&[
            (None, &["seed"]),
            (Some("dataset"), DATASET_KEYS),
            (Some("model"), MODEL_KEYS),
            (Some("train"), TRAIN_KEYS),
        ])?;
        let seed = cfg.seed()?;
        let dataset = parse_dataset(cfg, seed)?;
        let model = parse_model(cfg, &dataset)?;
        let t = Some("train");
        let base = TrainConfig::default();
        let train = TrainConfig {
            lr: cfg.get_or(t, "lr", base.lr)?,
            weight_decay: cfg.get_or(t, "weight_decay", base.weight_decay)?,
            epochs: cfg.get_or(t, "epochs", base.epochs)?,
            batch: cfg.get_or(t, "batch", base.batch)?,
            clip_norm: cfg.get_or(t, "clip_norm", base.clip_norm)?,
            seed,
            target_train_accuracy: cfg.get(t, "target_train_accuracy")?,
        };
        let spec = Self {
            seed,
            dataset,
            model,
            train,
            record_wall_time: cfg.get_or(t, "record_wall_time", false)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        match &self.model {
            ModelSpec::Vgg(v) => v.validate(),
            ModelSpec::Vit(v) => v.validate(),
        }
    }
}

fn parse_dataset(cfg: &ConfigFile, seed: u64) -> Result<DatasetDescriptor> {
    let d = Some("dataset");
    let path = || -> Result<PathBuf> {
        cfg.raw(d, "path")
            .map(PathBuf::from)
            .ok_or_else(|| config_err("CIFAR datasets need [dataset] path"))
    };
    let kind = match cfg.raw(d, "kind").unwrap_or("synthetic") {
        "synthetic" => DatasetKind::Synthetic,
        "cifar10" => DatasetKind::Cifar10 { path: path()? },
        "cifar100" => DatasetKind::Cifar100 { path: path()? },
        other => return Err(config_err(format!("unknown dataset kind `{other}`"))),
    };
    let default_size = if kind == DatasetKind::Synthetic { 8 } else { 32 };
    Ok(DatasetDescriptor {
        kind,
        train: cfg.get_or(d, "train", 1024)?,
        test: cfg.get_or(d, "test", 256)?,
        image_size: cfg.get_or(d, "image_size", default_size)?,
        seed,
    })
}

fn parse_search(cfg: &ConfigFile) -> Result<SearchOptions> {
    let m = Some("model");
    let base = SearchOptions::default();
    Ok(SearchOptions {
        strategy: cfg.raw(m, "strategy").map_or(Ok(base.strategy), Strategy::parse)?,
        r: cfg.get_or(m, "r", base.r)?,
        positional: cfg.raw(m, "positional").map_or(Ok(base.positional), Positional::parse)?,
        normalize: cfg.get_or(m, "normalize", base.normalize)?,
    })
}

fn parse_model(cfg: &ConfigFile, dataset: &DatasetDescriptor) -> Result<ModelSpec> {
    let m = Some("model");
    let classes = dataset.classes();
    match cfg.raw(m, "arch").unwrap_or("vgg") {
        "vgg" => {
            let kind = match cfg.raw(m, "layer").unwrap_or("branching") {
                "conv" => LayerKind::Conv,
                "convnn" => LayerKind::ConvNN,
                "branching" => LayerKind::Branching(cfg.get_or(m, "lambda", 0.5)?),
                other => return Err(config_err(format!("unknown layer `{other}`"))),
            };
            let mut v = VggConfig::new(kind, dataset.image_size, classes);
            v.k = cfg.get_or(m, "k", v.k)?;
            v.kernel = cfg.get_or(m, "kernel", v.kernel)?;
            v.channels = cfg.list(m, "channels")?.unwrap_or(v.channels);
            v.search = parse_search(cfg)?;
            Ok(ModelSpec::Vgg(v))
        }
        "vit" => {
            let mixer = match cfg.raw(m, "mixer").unwrap_or("attention") {
                "attention" => MixerKind::Attention { cosine: false },
                "cosine-attention" => MixerKind::Attention { cosine: true },
                "local" => MixerKind::LocalWindow(cfg.get_or(m, "window", 4)?),
                "kvt" => MixerKind::Kvt(cfg.get_or(m, "k", 9)?),
                "convnn" => {
                    let dim = cfg.get_or(m, "dim", 64)?;
                    let s = parse_search(cfg)?;
                    let mut c = ConvNNConfig::new(cfg.get_or(m, "k", 9)?, dim).with_strategy(s.strategy, s.r);
                    c.normalize = s.normalize;
                    c.positional = s.positional;
                    c.rho = cfg.raw(m, "rho").map_or(Ok(Rho::Softmax), Rho::parse)?;
                    c.aggregation = cfg
                        .raw(m, "aggregation")
                        .map_or(Ok(AggregationKind::Depthwise), AggregationKind::parse)?;
                    MixerKind::ConvNN {
                        cfg: c,
                        frozen_unit: cfg.get_or(m, "frozen_unit", false)?,
                    }
                }
                other => return Err(config_err(format!("unknown mixer `{other}`"))),
            };
            let mut v = VitConfig::new(mixer, classes);
            v.image_size = dataset.image_size;
            v.patch = cfg.get_or(m, "patch", v.patch)?;
            v.dim = cfg.get_or(m, "dim", v.dim)?;
            v.depth = cfg.get_or(m, "depth", v.depth)?;
            v.mlp = cfg.get_or(m, "mlp", v.mlp)?;
            Ok(ModelSpec::Vit(v))
        }
        other => Err(config_err(format!("unknown arch `{other}`"))),
    }
}

/// Grid for `cmd_equiv`. `k` entries may be the literal `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivSpec {
    pub seed: u64,
    pub n: Vec<usize>,
    pub c: Vec<usize>,
    pub k: Vec<KChoice>,
    pub seeds: usize,
    /// Conv-reduction grid sides; each entry runs a square grid.
    pub conv_grids: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KChoice {
    Fixed(usize),
    /// `n / 2`
    Half,
    /// `n`
    All,
}

impl FromStr for KChoice {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "n" => Ok(KChoice::All),
            "n/2" => Ok(KChoice::Half),
            _ => s.parse().map(KChoice::Fixed).map_err(|_| ()),
        }
    }
}

impl KChoice {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            KChoice::Fixed(k) => k,
            KChoice::Half => n / 2,
            KChoice::All => n,
        }
    }
}

impl EquivSpec {
    pub fn from_config(cfg: &ConfigFile) -> Result<Self> {
        cfg.expect_keys(&[(None, &["seed"]), (Some("grid"), &["n", "c", "k", "seeds", "conv_grids"])])?;
        let g = Some("grid");
        let spec = Self {
            seed: cfg.seed()?,
            n: cfg.list(g, "n")?.unwrap_or_else(|| vec![4, 8, 16]),
            c: cfg.list(g, "c")?.unwrap_or_else(|| vec![4]),
            k: cfg
                .list(g, "k")?
                .unwrap_or_else(|| vec![KChoice::Fixed(1), KChoice::Fixed(3), KChoice::All]),
            seeds: cfg.get_or(g, "seeds", 1)?,
            conv_grids: cfg.list(g, "conv_grids")?.unwrap_or_default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n.contains(&0) || self.c.contains(&0) {
            return Err(config_err("grid n and c must be positive"));
        }
        if let Some(&s) = self.conv_grids.iter().find(|&&s| s < 5) {
            return Err(config_err(format!("conv grid side {s} is below 5")));
        }
        Ok(())
    }

    /// `(n, c, k)` points with `k` clamped into `1..=n`; duplicates removed.
    pub fn points(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &c in &self.c {
                for &k in &self.k {
                    let p = (n, c, k.resolve(n).clamp(1, n));
                    if !out.contains(&p) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

/// Sweep for `cmd_bench`: ConvNN points over `strategy x r x k`, plus
/// attention baselines.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchSpec {
    pub seed: u64,
    /// Tokens per forward pass, laid out as a square grid.
    pub n: usize,
    pub c: usize,
    pub k: Vec<usize>,
    pub r: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub attention: bool,
    pub repeats: usize,
}

impl BenchSpec {
    pub fn from_config(cfg: &ConfigFile) -> Result<Self> {
        cfg.expect_keys(&[
            (None, &["seed"]),
            (Some("bench"), &["n", "c", "k", "r", "strategy", "attention", "repeats"]),
        ])?;
        let b = Some("bench");
        let strategies = match cfg.list::<String>(b, "strategy")? {
            None => vec![Strategy::All, Strategy::Random],
            Some(v) => v.iter().map(|s| Strategy::parse(s)).collect::<Result<_>>()?,
        };
        let spec = Self {
            seed: cfg.seed()?,
            n: cfg.get_or(b, "n", 1024)?,
            c: cfg.get_or(b, "c", 64)?,
            k: cfg.list(b, "k")?.unwrap_or_else(|| vec![9]),
            r: cfg.list(b, "r")?.unwrap_or_else(|| vec![16, 32, 64, 128]),
            strategies,
            attention: cfg.get_or(b, "attention", true)?,
            repeats: cfg.get_or(b, "repeats", 5)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let side = (self.n as f64).sqrt() as usize;
        if side * side != self.n || self.n == 0 {
            return Err(config_err(format!("bench n={} is not a positive square", self.n)));
        }
        if self.c == 0 || self.k.contains(&0) || self.r.contains(&0) {
            return Err(config_err("bench c, k and r must be positive"));
        }
        if self.strategies.contains(&Strategy::Spatial) {
            let layout = Layout::Grid { rows: side, cols: side };
            for &r in &self.r {
                candidates_spatial(layout, r)?;
            }
        }
        if self.repeats < 5 {
            return Err(config_err(format!("bench needs at least 5 repeats, got {}", self.repeats)));
        }
        Ok(())
    }

    pub fn side(&self) -> usize {
        (self.n as f64).sqrt() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_lists() {
        let cfg = ConfigFile::parse(
            "# run\nseed = 9\n[grid]\nn = 4, 8 # trailing\nk = 1, n/2, n\nc =\n",
        )
        .unwrap();
        assert_eq!(cfg.get::<u64>(None, "seed").unwrap(), Some(9));
        assert_eq!(cfg.list::<usize>(Some("grid"), "n").unwrap(), Some(vec![4, 8]));
        assert_eq!(cfg.list::<usize>(Some("grid"), "c").unwrap(), Some(vec![]));
        let k = cfg.list::<KChoice>(Some("grid"), "k").unwrap().unwrap();
        assert_eq!(k, vec![KChoice::Fixed(1), KChoice::Half, KChoice::All]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let cfg = ConfigFile::parse("[grid]\nm = 3\n").unwrap();
        assert!(matches!(EquivSpec::from_config(&cfg), Err(Error::Usage(_))));
        let cfg = ConfigFile::parse("[train]\nlr = fast\n").unwrap();
        assert!(matches!(TrainSpec::from_config(&cfg), Err(Error::Usage(_))));
    }

    #[test]
    fn train_spec_validates_lambda() {
        let cfg = ConfigFile::parse("[model]\nlayer = branching\nlambda = 1.5\n").unwrap();
        assert!(matches!(TrainSpec::from_config(&cfg), Err(Error::Config(_))));
        let cfg = ConfigFile::parse("seed = 3\n[model]\nlayer = convnn\nstrategy = random\nr = 16\n").unwrap();
        let spec = TrainSpec::from_config(&cfg).unwrap();
        assert_eq!(spec.seed, 3);
        assert_eq!(spec.train.seed, 3);
        match spec.model {
            ModelSpec::Vgg(v) => {
                assert_eq!(v.kind, LayerKind::ConvNN);
                assert_eq!(v.search.strategy, Strategy::Random);
                assert_eq!(v.search.r, 16);
            }
            ModelSpec::Vit(_) => panic!("expected vgg"),
        }
    }

    #[test]
    fn empty_grid_has_no_points() {
        let cfg = ConfigFile::parse("[grid]\nn =\n").unwrap();
        assert!(EquivSpec::from_config(&cfg).unwrap().points().is_empty());
        let cfg = ConfigFile::parse("").unwrap();
        assert_eq!(EquivSpec::from_config(&cfg).unwrap().points().len(), 9);
    }
}
