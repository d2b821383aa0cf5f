//! Run configuration: flat `key=value` files overlaid by command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use mbcgcn::cascade::{Aggregation, ModelConfig};
use mbcgcn::train::TrainConfig;

/// Keys accepted in config files and their matching flags.
pub const KEYS: &[&str] = &[
    "behaviors",
    "inputs",
    "order",
    "layers",
    "dim",
    "batch",
    "lr",
    "lambda",
    "epochs",
    "patience",
    "eval_k",
    "seed",
    "agg",
    "ft",
    "topk",
    "out",
];

/// Raw settings before interpretation. Later layers win.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut settings = Settings::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("config line {}: expected key=value", n + 1))?;
            settings
                .set(key.trim(), value.trim())
                .with_context(|| format!("config line {}", n + 1))?;
        }
        Ok(settings)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        ensure!(KEYS.contains(&key), "unknown config key {key:?}");
        self.values.insert(key.to_owned(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: Settings) {
        self.values.extend(other.values);
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow::anyhow!("invalid {key} {v:?}: {e}")))
            .transpose()
    }
}

/// Splits `view>cart>buy` or `view,cart,buy` into names.
pub fn parse_chain(text: &str) -> Vec<String> {
    text.split([',', '>'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn parse_list<T: FromStr>(key: &str, text: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| anyhow::anyhow!("invalid {key} entry {s:?}: {e}"))
        })
        .collect()
}

pub fn parse_switch(text: &str) -> Result<bool> {
    match text.trim() {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => bail!("expected on or off, found {other:?}"),
    }
}

fn switch_name(on: bool) -> &'static str {
    if on {
        "on"
    } else {
        "off"
    }
}

/// Per-behavior depths used when none are given.
pub fn default_layers(num_behaviors: usize) -> Vec<usize> {
    if num_behaviors == 3 {
        vec![3, 4, 3]
    } else {
        vec![3; num_behaviors]
    }
}

/// A single value applies to every behavior.
pub fn fit_layers(layers: &[usize], num_behaviors: usize) -> Result<Vec<usize>> {
    match layers.len() {
        1 => Ok(vec![layers[0]; num_behaviors]),
        n if n == num_behaviors => Ok(layers.to_vec()),
        n => bail!("layer list has {n} entries for {num_behaviors} behaviors"),
    }
}

/// Everything one train or evaluate run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Behavior names paired with `inputs`, in file loading order.
    pub behaviors: Vec<String>,
    pub inputs: Vec<PathBuf>,
    /// Behaviors actually cascaded, target last. Defaults to `behaviors`.
    pub chain: Vec<String>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ks: Vec<usize>,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let behaviors = parse_chain(s.get("behaviors").unwrap_or("view,cart,buy"));
        ensure!(!behaviors.is_empty(), "behavior chain is empty");
        let inputs: Vec<PathBuf> = match s.get("inputs") {
            Some(v) => parse_list::<String>("inputs", v)?
                .into_iter()
                .map(PathBuf::from)
                .collect(),
            None => Vec::new(),
        };
        ensure!(
            inputs.len() == behaviors.len(),
            "{} behaviors but {} input files",
            behaviors.len(),
            inputs.len()
        );
        let chain = match s.get("order") {
            Some(v) => parse_chain(v),
            None => behaviors.clone(),
        };
        ensure!(!chain.is_empty(), "behavior order is empty");
        let layers = match s.get("layers") {
            Some(v) => fit_layers(&parse_list("layers", v)?, chain.len())?,
            None => default_layers(chain.len()),
        };

        let defaults = TrainConfig::default();
        let train = TrainConfig {
            learning_rate: s.parsed("lr")?.unwrap_or(defaults.learning_rate),
            lambda: s.parsed("lambda")?.unwrap_or(defaults.lambda),
            batch_size: s.parsed("batch")?.unwrap_or(defaults.batch_size),
            max_epochs: s.parsed("epochs")?.unwrap_or(defaults.max_epochs),
            patience: s.parsed("patience")?.unwrap_or(defaults.patience),
            eval_k: s.parsed("eval_k")?.unwrap_or(defaults.eval_k),
            seed: s.parsed("seed")?.unwrap_or(defaults.seed),
            adam: defaults.adam,
        };
        train.validate()?;

        let model = ModelConfig {
            dim: s.parsed("dim")?.unwrap_or(64),
            layers,
            transform: s.get("ft").map(parse_switch).transpose()?.unwrap_or(true),
            aggregation: s.parsed::<Aggregation>("agg")?.unwrap_or(Aggregation::Sum),
        };
        model.validate()?;

        let ks = match s.get("topk") {
            Some(v) => parse_list("topk", v)?,
            None => vec![10, 20, 50],
        };
        ensure!(!ks.is_empty(), "topk list is empty");
        ensure!(
            ks[0] >= 1 && ks.windows(2).all(|w| w[0] < w[1]),
            "topk list must be positive and strictly ascending"
        );

        Ok(RunConfig {
            behaviors,
            inputs,
            chain,
            model,
            train,
            ks,
            out: PathBuf::from(s.get("out").unwrap_or("out")),
        })
    }

    /// Flat `key=value` text that reproduces this configuration.
    pub fn to_settings_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let inputs: Vec<String> = self.inputs.iter().map(|p| p.display().to_string()).collect();
        let mut text = String::new();
        let t = &self.train;
        let m = &self.model;
        let _ = writeln!(text, "behaviors={}", self.behaviors.join(","));
        let _ = writeln!(text, "inputs={}", inputs.join(","));
        let _ = writeln!(text, "order={}", self.chain.join(">"));
        let _ = writeln!(text, "layers={}", join(&m.layers));
        let _ = writeln!(text, "dim={}", m.dim);
        let _ = writeln!(text, "agg={}", m.aggregation);
        let _ = writeln!(text, "ft={}", switch_name(m.transform));
        let _ = writeln!(text, "batch={}", t.batch_size);
        let _ = writeln!(text, "lr={}", t.learning_rate);
        let _ = writeln!(text, "lambda={}", t.lambda);
        let _ = writeln!(text, "epochs={}", t.max_epochs);
        let _ = writeln!(text, "patience={}", t.patience);
        let _ = writeln!(text, "eval_k={}", t.eval_k);
        let _ = writeln!(text, "seed={}", t.seed);
        let _ = writeln!(text, "topk={}", join(&self.ks));
        let _ = writeln!(text, "out={}", self.out.display());
        text
    }

    /// Short settings label used in reports.
    pub fn label(&self) -> String {
        label_for(&self.chain.join(">"), &self.model)
    }
}

pub fn label_for(order: &str, model: &ModelConfig) -> String {
    let layers: Vec<String> = model.layers.iter().map(ToString::to_string).collect();
    format!(
        "order={order} ft={} agg={} layers={}",
        switch_name(model.transform),
        model.aggregation,
        layers.join("-")
    )
}

/// Variant lists of an ablation run. An empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AblationGrid {
    pub transforms: Vec<bool>,
    pub aggregations: Vec<Aggregation>,
    /// Behavior chains, each a `>`-separated string kept verbatim for labels.
    pub orders: Vec<String>,
    /// Uniform depth applied to every behavior of a variant.
    pub layers: Vec<usize>,
}

impl AblationGrid {
    pub fn parse(ft: Option<&str>, agg: Option<&str>, orders: Option<&str>, layers: Option<&str>) -> Result<Self> {
        Ok(AblationGrid {
            transforms: ft
                .map(|v| {
                    v.split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(parse_switch)
                        .collect()
                })
                .transpose()?
                .unwrap_or_default(),
            aggregations: agg.map(|v| parse_list("grid agg", v)).transpose()?.unwrap_or_default(),
            orders: orders
                .map(|v| {
                    v.split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_owned)
                        .collect()
                })
                .unwrap_or_default(),
            layers: layers
                .map(|v| parse_list("grid layers", v))
                .transpose()?
                .unwrap_or_default(),
        })
    }

    /// Number of variants: the product of the non-empty list lengths.
    pub fn num_variants(&self) -> usize {
        [
            self.transforms.len(),
            self.aggregations.len(),
            self.orders.len(),
            self.layers.len(),
        ]
        .iter()
        .map(|&n| n.max(1))
        .product()
    }
}
