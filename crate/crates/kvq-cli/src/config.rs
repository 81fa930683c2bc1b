//! Flat key-value experiment configs with sections.
//!
//! One assignment per line, `[section]` headers, `#` comments. Unknown
//! sections or keys are errors. Configs round-trip: parse -> serialize ->
//! parse yields an identical config.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use kvq::codebook::Metric;
use kvq::error::{KvqError, Result};
use kvq::neighborhood::NeighborhoodKind;
use kvq::quantizer::Algorithm;

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub dims: u8,
    pub width: usize,
    pub height: usize,
}

impl GridConfig {
    pub fn k(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataConfig {
    GaussianMixture { components: usize, dim: usize, separation: f64 },
    UniformSquare { dim: usize },
    Cifar10 { paths: Vec<String>, patch_size: usize, stride: usize, normalize: bool },
    RawVectors { path: String, dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub steps: u64,
    pub batch_size: usize,
    pub eval_interval: u64,
    pub seeds: Vec<u64>,
    pub beta: f64,
    pub n_init: u8,
    pub update_empty: bool,
    pub epsilon: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub out: String,
    pub metric: Metric,
    pub init: String,
    pub grid: GridConfig,
    pub neighborhood: NeighborhoodKind,
    pub tau: f64,
    pub grid_threshold: Option<f64>,
    pub n_latents: usize,
    pub d_hidden: usize,
    pub d_emb: usize,
    pub data: DataConfig,
    /// Sweep axes: ordered (key, values) pairs; empty outside `sweep` mode.
    pub sweep: Vec<(String, Vec<String>)>,
}

fn parse_bool(value: &str, key: &str) -> Result<bool> {
    match value {
        "yes" | "true" => Ok(true),
        "no" | "false" => Ok(false),
        _ => Err(KvqError::Config(format!("{key}: expected yes/no, got {value:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| KvqError::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        // section -> ordered key/value pairs
        let mut sections: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                KvqError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            if current.is_empty() {
                return Err(KvqError::Config(format!(
                    "line {}: assignment before any [section]",
                    lineno + 1
                )));
            }
            sections
                .get_mut(&current)
                .unwrap()
                .push((key.trim().to_string(), value.trim().to_string()));
        }

        let known = ["train", "grid", "neighborhood", "model", "data", "sweep"];
        for section in sections.keys() {
            if !known.contains(&section.as_str()) {
                return Err(KvqError::Config(format!("unknown section [{section}]")));
            }
        }

        let take = |section: &str| -> BTreeMap<String, String> {
            sections
                .get(section)
                .map(|kvs| kvs.iter().cloned().collect())
                .unwrap_or_default()
        };
        let check_keys = |section: &str, allowed: &[&str]| -> Result<()> {
            if let Some(kvs) = sections.get(section) {
                for (k, _) in kvs {
                    if !allowed.contains(&k.as_str()) {
                        return Err(KvqError::Config(format!(
                            "unknown key {k:?} in [{section}]"
                        )));
                    }
                }
            }
            Ok(())
        };

        check_keys(
            "train",
            &[
                "algorithm", "steps", "batch-size", "eval-interval", "seeds", "beta",
                "n-init", "update-empty", "epsilon", "alpha", "learning-rate", "out",
                "metric", "init",
            ],
        )?;
        check_keys("grid", &["dims", "width", "height", "length"])?;
        check_keys("neighborhood", &["neighborhood", "tau", "grid-threshold"])?;
        check_keys("model", &["n-latents", "d-hidden", "d-emb"])?;
        check_keys(
            "data",
            &["data", "components", "dim", "separation", "path", "patch-size", "stride", "normalize"],
        )?;

        let train = take("train");
        let get = |map: &BTreeMap<String, String>, key: &str| -> Result<String> {
            map.get(key)
                .cloned()
                .ok_or_else(|| KvqError::Config(format!("missing required key {key:?}")))
        };

        let algorithm = match get(&train, "algorithm")?.as_str() {
            "ema-vq" => Algorithm::EmaVq,
            "ksom-online" => Algorithm::KsomOnline,
            "ksom-batch" => Algorithm::KsomBatch,
            "ksom-minibatch" => Algorithm::KsomMinibatch,
            other => return Err(KvqError::Config(format!("unknown algorithm {other:?}"))),
        };
        let seeds: Vec<u64> = get(&train, "seeds")?
            .split(',')
            .map(|s| parse_num(s.trim(), "seeds"))
            .collect::<Result<_>>()?;
        if seeds.is_empty() {
            return Err(KvqError::Config("seeds must be nonempty".into()));
        }
        let metric = match train.get("metric").map(String::as_str).unwrap_or("euclidean") {
            "euclidean" => Metric::Euclidean,
            "negative-dot" => Metric::NegativeDot,
            other => return Err(KvqError::Config(format!("unknown metric {other:?}"))),
        };
        let init = train.get("init").cloned().unwrap_or_else(|| "gaussian".to_string());
        if init != "gaussian" && init != "data-sample" {
            return Err(KvqError::Config(format!("unknown init scheme {init:?}")));
        }

        let grid_map = take("grid");
        let dims: u8 = parse_num(&get(&grid_map, "dims")?, "dims")?;
        let grid = match dims {
            1 => {
                let length: usize = parse_num(&get(&grid_map, "length")?, "length")?;
                GridConfig { dims: 1, width: length, height: 1 }
            }
            2 => GridConfig {
                dims: 2,
                width: parse_num(&get(&grid_map, "width")?, "width")?,
                height: parse_num(&get(&grid_map, "height")?, "height")?,
            },
            _ => return Err(KvqError::Config("grid dims must be 1 or 2".into())),
        };

        let nb = take("neighborhood");
        let neighborhood =
            match nb.get("neighborhood").map(String::as_str).unwrap_or("identity") {
                "identity" => NeighborhoodKind::Identity,
                "hard" => NeighborhoodKind::Hard,
                "gaussian" => NeighborhoodKind::Gaussian,
                other => {
                    return Err(KvqError::Config(format!("unknown neighborhood {other:?}")))
                }
            };

        let model = take("model");
        let data_map = take("data");
        let data = match get(&data_map, "data")?.as_str() {
            "gaussian-mixture" => DataConfig::GaussianMixture {
                components: parse_num(&get(&data_map, "components")?, "components")?,
                dim: parse_num(&get(&data_map, "dim")?, "dim")?,
                separation: parse_num(&get(&data_map, "separation")?, "separation")?,
            },
            "uniform-square" => DataConfig::UniformSquare {
                dim: parse_num(&get(&data_map, "dim")?, "dim")?,
            },
            "cifar10" => DataConfig::Cifar10 {
                paths: get(&data_map, "path")?
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .collect(),
                patch_size: parse_num(&get(&data_map, "patch-size")?, "patch-size")?,
                stride: parse_num(&get(&data_map, "stride")?, "stride")?,
                normalize: parse_bool(
                    data_map.get("normalize").map(String::as_str).unwrap_or("yes"),
                    "normalize",
                )?,
            },
            "raw-vectors" => DataConfig::RawVectors {
                path: get(&data_map, "path")?,
                dim: parse_num(&get(&data_map, "dim")?, "dim")?,
            },
            other => return Err(KvqError::Config(format!("unknown data source {other:?}"))),
        };

        // sweep axes keep file order
        let sweep = sections
            .get("sweep")
            .map(|kvs| {
                kvs.iter()
                    .map(|(k, v)| {
                        (k.clone(), v.split(',').map(|s| s.trim().to_string()).collect())
                    })
                    .collect()
            })
            .unwrap_or_default();

        Ok(TrainConfig {
            algorithm,
            steps: parse_num(&get(&train, "steps")?, "steps")?,
            batch_size: parse_num(&get(&train, "batch-size")?, "batch-size")?,
            eval_interval: train
                .get("eval-interval")
                .map(|v| parse_num(v, "eval-interval"))
                .transpose()?
                .unwrap_or(50),
            seeds,
            beta: train.get("beta").map(|v| parse_num(v, "beta")).transpose()?.unwrap_or(0.01),
            n_init: train
                .get("n-init")
                .map(|v| parse_num(v, "n-init"))
                .transpose()?
                .unwrap_or(1),
            update_empty: train
                .get("update-empty")
                .map(|v| parse_bool(v, "update-empty"))
                .transpose()?
                .unwrap_or(true),
            epsilon: train
                .get("epsilon")
                .map(|v| parse_num(v, "epsilon"))
                .transpose()?
                .unwrap_or(1e-5),
            alpha: train
                .get("alpha")
                .map(|v| parse_num(v, "alpha"))
                .transpose()?
                .unwrap_or(0.25),
            learning_rate: train
                .get("learning-rate")
                .map(|v| parse_num(v, "learning-rate"))
                .transpose()?
                .unwrap_or(0.01),
            out: train.get("out").cloned().unwrap_or_else(|| "runs".to_string()),
            metric,
            init,
            grid,
            neighborhood,
            tau: nb.get("tau").map(|v| parse_num(v, "tau")).transpose()?.unwrap_or(0.1),
            grid_threshold: nb
                .get("grid-threshold")
                .map(|v| parse_num(v, "grid-threshold"))
                .transpose()?,
            n_latents: model
                .get("n-latents")
                .map(|v| parse_num(v, "n-latents"))
                .transpose()?
                .unwrap_or(4),
            d_hidden: model
                .get("d-hidden")
                .map(|v| parse_num(v, "d-hidden"))
                .transpose()?
                .unwrap_or(16),
            d_emb: model
                .get("d-emb")
                .map(|v| parse_num(v, "d-emb"))
                .transpose()?
                .unwrap_or(8),
            data,
            sweep,
        })
    }

    pub fn serialize(&self) -> String {
        let mut s = String::new();
        writeln!(s, "[train]").unwrap();
        writeln!(s, "algorithm = {}", self.algorithm.name()).unwrap();
        writeln!(s, "steps = {}", self.steps).unwrap();
        writeln!(s, "batch-size = {}", self.batch_size).unwrap();
        writeln!(s, "eval-interval = {}", self.eval_interval).unwrap();
        let seeds: Vec<String> = self.seeds.iter().map(|v| v.to_string()).collect();
        writeln!(s, "seeds = {}", seeds.join(",")).unwrap();
        writeln!(s, "beta = {}", self.beta).unwrap();
        writeln!(s, "n-init = {}", self.n_init).unwrap();
        writeln!(s, "update-empty = {}", if self.update_empty { "yes" } else { "no" }).unwrap();
        writeln!(s, "epsilon = {}", self.epsilon).unwrap();
        writeln!(s, "alpha = {}", self.alpha).unwrap();
        writeln!(s, "learning-rate = {}", self.learning_rate).unwrap();
        writeln!(s, "out = {}", self.out).unwrap();
        writeln!(s, "metric = {}", self.metric.name()).unwrap();
        writeln!(s, "init = {}", self.init).unwrap();
        writeln!(s, "\n[grid]").unwrap();
        writeln!(s, "dims = {}", self.grid.dims).unwrap();
        if self.grid.dims == 1 {
            writeln!(s, "length = {}", self.grid.width).unwrap();
        } else {
            writeln!(s, "width = {}", self.grid.width).unwrap();
            writeln!(s, "height = {}", self.grid.height).unwrap();
        }
        writeln!(s, "\n[neighborhood]").unwrap();
        writeln!(s, "neighborhood = {}", self.neighborhood.name()).unwrap();
        writeln!(s, "tau = {}", self.tau).unwrap();
        if let Some(th) = self.grid_threshold {
            writeln!(s, "grid-threshold = {th}").unwrap();
        }
        writeln!(s, "\n[model]").unwrap();
        writeln!(s, "n-latents = {}", self.n_latents).unwrap();
        writeln!(s, "d-hidden = {}", self.d_hidden).unwrap();
        writeln!(s, "d-emb = {}", self.d_emb).unwrap();
        writeln!(s, "\n[data]").unwrap();
        match &self.data {
            DataConfig::GaussianMixture { components, dim, separation } => {
                writeln!(s, "data = gaussian-mixture").unwrap();
                writeln!(s, "components = {components}").unwrap();
                writeln!(s, "dim = {dim}").unwrap();
                writeln!(s, "separation = {separation}").unwrap();
            }
            DataConfig::UniformSquare { dim } => {
                writeln!(s, "data = uniform-square").unwrap();
                writeln!(s, "dim = {dim}").unwrap();
            }
            DataConfig::Cifar10 { paths, patch_size, stride, normalize } => {
                writeln!(s, "data = cifar10").unwrap();
                writeln!(s, "path = {}", paths.join(",")).unwrap();
                writeln!(s, "patch-size = {patch_size}").unwrap();
                writeln!(s, "stride = {stride}").unwrap();
                writeln!(s, "normalize = {}", if *normalize { "yes" } else { "no" }).unwrap();
            }
            DataConfig::RawVectors { path, dim } => {
                writeln!(s, "data = raw-vectors").unwrap();
                writeln!(s, "path = {path}").unwrap();
                writeln!(s, "dim = {dim}").unwrap();
            }
        }
        if !self.sweep.is_empty() {
            writeln!(s, "\n[sweep]").unwrap();
            for (key, values) in &self.sweep {
                writeln!(s, "{key} = {}", values.join(",")).unwrap();
            }
        }
        s
    }

    /// Apply a `key=value` override; keys use the same names as the file and
    /// must be unambiguous across sections.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| KvqError::Config(format!("override {spec:?} is not key=value")))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "algorithm" => {
                self.algorithm = match value {
                    "ema-vq" => Algorithm::EmaVq,
                    "ksom-online" => Algorithm::KsomOnline,
                    "ksom-batch" => Algorithm::KsomBatch,
                    "ksom-minibatch" => Algorithm::KsomMinibatch,
                    _ => return Err(KvqError::Config(format!("unknown algorithm {value:?}"))),
                }
            }
            "steps" => self.steps = parse_num(value, key)?,
            "batch-size" => self.batch_size = parse_num(value, key)?,
            "eval-interval" => self.eval_interval = parse_num(value, key)?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| parse_num(s.trim(), key))
                    .collect::<Result<_>>()?
            }
            "beta" => self.beta = parse_num(value, key)?,
            "n-init" => self.n_init = parse_num(value, key)?,
            "update-empty" => self.update_empty = parse_bool(value, key)?,
            "epsilon" => self.epsilon = parse_num(value, key)?,
            "alpha" => self.alpha = parse_num(value, key)?,
            "learning-rate" => self.learning_rate = parse_num(value, key)?,
            "out" => self.out = value.to_string(),
            "init" => {
                if value != "gaussian" && value != "data-sample" {
                    return Err(KvqError::Config(format!("unknown init scheme {value:?}")));
                }
                self.init = value.to_string();
            }
            "metric" => {
                self.metric = match value {
                    "euclidean" => Metric::Euclidean,
                    "negative-dot" => Metric::NegativeDot,
                    _ => return Err(KvqError::Config(format!("unknown metric {value:?}"))),
                }
            }
            "tau" => self.tau = parse_num(value, key)?,
            "width" => self.grid.width = parse_num(value, key)?,
            "height" => self.grid.height = parse_num(value, key)?,
            "length" => {
                self.grid = GridConfig { dims: 1, width: parse_num(value, key)?, height: 1 }
            }
            "grid-threshold" => self.grid_threshold = Some(parse_num(value, key)?),
            "neighborhood" => {
                self.neighborhood = match value {
                    "identity" => NeighborhoodKind::Identity,
                    "hard" => NeighborhoodKind::Hard,
                    "gaussian" => NeighborhoodKind::Gaussian,
                    _ => return Err(KvqError::Config(format!("unknown neighborhood {value:?}"))),
                }
            }
            "components" => match &mut self.data {
                DataConfig::GaussianMixture { components, .. } => {
                    *components = parse_num(value, key)?
                }
                _ => {
                    return Err(KvqError::Config(
                        "components only applies to gaussian-mixture data".into(),
                    ))
                }
            },
            "separation" => match &mut self.data {
                DataConfig::GaussianMixture { separation, .. } => {
                    *separation = parse_num(value, key)?
                }
                _ => {
                    return Err(KvqError::Config(
                        "separation only applies to gaussian-mixture data".into(),
                    ))
                }
            },
            "dim" => match &mut self.data {
                DataConfig::GaussianMixture { dim, .. }
                | DataConfig::UniformSquare { dim }
                | DataConfig::RawVectors { dim, .. } => *dim = parse_num(value, key)?,
                DataConfig::Cifar10 { .. } => {
                    return Err(KvqError::Config(
                        "dim is fixed by patch-size for cifar10 data".into(),
                    ))
                }
            },
            "n-latents" => self.n_latents = parse_num(value, key)?,
            "d-hidden" => self.d_hidden = parse_num(value, key)?,
            "d-emb" => self.d_emb = parse_num(value, key)?,
            _ => return Err(KvqError::Config(format!("unknown override key {key:?}"))),
        }
        Ok(())
    }
}
