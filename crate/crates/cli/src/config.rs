//! Run configuration: defaults, a flat `key = value` file, then flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};

use elicit_core::gmm::{DropPolicy, SpecKind};
use elicit_core::mrt::OrderingRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    EstimateLe,
    TestLe,
    EstimateMrt,
    MonteCarlo,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::EstimateLe => "estimate-le",
            Command::TestLe => "test-le",
            Command::EstimateMrt => "estimate-mrt",
            Command::MonteCarlo => "montecarlo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Text,
    Csv,
}

impl Format {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            other => bail!("unknown format {other:?}; expected json, text or csv"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrtMode {
    Discrete,
    Continuous,
}

/// Every key the configuration accepts, with its default when it has one.
const KEYS: &[(&str, Option<&str>)] = &[
    ("input", None),
    ("output", None),
    ("plot", None),
    ("format", Some("json")),
    ("seed", None),
    ("j_count", None),
    ("spec", None),
    ("drop", Some("min")),
    ("ordering", Some("x1-higher")),
    ("n_boot", Some("200")),
    ("design", None),
    ("n", Some("2000")),
    ("reps", Some("1000")),
    ("sigma", Some("0")),
    ("mode", Some("discrete")),
    ("delta", Some("0.3")),
    ("p0", Some("0")),
    ("p1", Some("0")),
    ("p", Some("0")),
    ("control", None),
    ("share", Some("0.5")),
    ("q1", None),
    ("q0", None),
    ("truthful_yes", Some("1,1,1")),
    ("x2_fix", Some("1")),
    ("extra_covariates", Some("0")),
    ("estimators", None),
    ("intercept", Some("true")),
    ("starts", Some("6")),
];

/// Keys that only steer where and how results are written.
const PRESENTATION_KEYS: &[&str] = &["output", "plot", "format"];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key = value", i + 1))?;
        out.insert(normalize_key(k.trim()), v.trim().to_string());
    }
    Ok(out)
}

fn normalize_key(k: &str) -> String {
    k.replace('-', "_")
}

/// Splits a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("override {s:?} is not key=value"))?;
    Ok((normalize_key(k.trim()), v.trim().to_string()))
}

/// Effective configuration of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Layers defaults, the config file and overrides, in increasing priority.
    pub fn build(
        command: Command,
        file: Option<&Path>,
        overrides: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut values: BTreeMap<String, String> = KEYS
            .iter()
            .filter_map(|(k, d)| d.map(|d| (k.to_string(), d.to_string())))
            .collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            values.extend(parse_config_text(&text)?);
        }
        values.extend(overrides);
        for k in values.keys() {
            if !KEYS.iter().any(|(known, _)| known == k) {
                bail!("unknown configuration key {k:?}");
            }
        }
        let config = Self { command, values };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if let Some(input) = self.get("input") {
            if !Path::new(input).is_file() {
                bail!("input file {input} does not exist");
            }
        }
        if self.is_stochastic()? && self.get("seed").is_none() {
            bail!("{} draws random numbers and needs a seed (--seed)", self.command.name());
        }
        self.format()?;
        Ok(())
    }

    fn is_stochastic(&self) -> Result<bool> {
        Ok(match self.command {
            Command::EstimateLe | Command::TestLe => self.n_boot()? > 0,
            _ => true,
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| anyhow!("{} needs {key}", self.command.name()))
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("{key} = {v:?}: {e}")))
            .transpose()
    }

    pub fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parsed(key)?.ok_or_else(|| anyhow!("{} needs {key}", self.command.name()))
    }

    pub fn list_f64(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|x| x.trim().parse::<f64>().map_err(|e| anyhow!("{key} = {v:?}: {e}")))
                    .collect()
            })
            .transpose()
    }

    pub fn seed(&self) -> Result<Option<u64>> {
        self.parsed("seed")
    }

    pub fn n_boot(&self) -> Result<usize> {
        let b: usize = self.required("n_boot")?;
        if b != 0 && b < 100 {
            bail!("n_boot = {b}: use 0 to skip the bootstrap or at least 100 replicates");
        }
        Ok(b)
    }

    pub fn format(&self) -> Result<Format> {
        Format::parse(self.require("format")?)
    }

    pub fn output(&self) -> Option<PathBuf> {
        self.get("output").map(PathBuf::from)
    }

    pub fn plot(&self) -> Option<PathBuf> {
        self.get("plot").map(PathBuf::from)
    }

    pub fn specs(&self) -> Result<Vec<SpecKind>> {
        match self.get("spec") {
            None => Ok(SpecKind::ALL.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| SpecKind::parse(s.trim()).ok_or_else(|| anyhow!("unknown specification {s:?}")))
                .collect(),
        }
    }

    pub fn drop_policy(&self) -> Result<DropPolicy> {
        match self.require("drop")? {
            "min" => Ok(DropPolicy::MinPValueOverDrops),
            v => v
                .parse::<usize>()
                .map(DropPolicy::Fixed)
                .map_err(|_| anyhow!("drop = {v:?}: expected \"min\" or a moment index")),
        }
    }

    pub fn ordering(&self) -> Result<OrderingRule> {
        let v = self.require("ordering")?;
        OrderingRule::parse(v).ok_or_else(|| anyhow!("unknown ordering rule {v:?}"))
    }

    pub fn mode(&self) -> Result<MrtMode> {
        match self.require("mode")? {
            "discrete" => Ok(MrtMode::Discrete),
            "continuous" => Ok(MrtMode::Continuous),
            other => bail!("mode = {other:?}: expected discrete or continuous"),
        }
    }

    pub fn truthful_yes(&self) -> Result<[u8; 3]> {
        let v = self.require("truthful_yes")?;
        let parts: Vec<u8> = v
            .split(',')
            .map(|s| match s.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(anyhow!("truthful_yes entry {other:?} is not 0 or 1")),
            })
            .collect::<Result<_>>()?;
        parts.try_into().map_err(|_| anyhow!("truthful_yes needs one class per question"))
    }

    /// Settings that determine the computed tables, as sorted `key=value` lines.
    pub fn canonical(&self) -> String {
        self.values
            .iter()
            .filter(|(k, _)| !PRESENTATION_KEYS.contains(&k.as_str()))
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect::<String>()
            + &format!("command={}\n", self.command.name())
    }

    /// SHA-256 of [`RunConfig::canonical`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}
