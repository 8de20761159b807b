//! Run configuration: a flat JSON object whose keys mirror the `run` flags.
//! Flags given on the command line win over the file, which wins over
//! the built-in defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use microadam::quantize::Rounding;
use microadam::{HyperParams, OptimizerKind, Schedule};
use serde_json::{Map, Value};

use crate::RunArgs;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: String,
    pub optimizers: Vec<OptimizerKind>,
    pub steps: usize,
    pub seed: u64,
    pub schedule: Schedule,
    pub dim: Option<usize>,
    pub clip: Option<f64>,
    pub hyper: HyperParams,
}

const KEYS: &[&str] = &[
    "problem",
    "optimizer",
    "steps",
    "seed",
    "schedule",
    "dim",
    "clip",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "window",
    "density",
    "bits",
    "block",
    "bucket",
    "rounding",
];

pub fn parse_rounding(s: &str) -> Result<Rounding> {
    match s {
        "nearest" => Ok(Rounding::Nearest),
        "stochastic" => Ok(Rounding::Stochastic),
        _ => bail!("unknown rounding '{s}' (expected nearest or stochastic)"),
    }
}

fn parse_optimizers(list: &str) -> Result<Vec<OptimizerKind>> {
    let kinds = list
        .split(',')
        .map(|s| s.trim().parse::<OptimizerKind>())
        .collect::<Result<Vec<_>, _>>()?;
    if kinds.is_empty() {
        bail!("no optimizer given");
    }
    Ok(kinds)
}

struct FileValues(Map<String, Value>);

impl FileValues {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let value: Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let Value::Object(map) = value else {
            bail!("config {} must be a JSON object", path.display());
        };
        for (key, v) in &map {
            if !KEYS.contains(&key.as_str()) {
                bail!("unknown config key '{key}'");
            }
            if v.is_object() || v.is_array() {
                bail!("config key '{key}' must be a scalar");
            }
        }
        Ok(Self(map))
    }

    fn str(&self, key: &str) -> Result<Option<String>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => bail!("config key '{key}' must be a string, got {v}"),
        }
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.0.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .with_context(|| format!("config key '{key}' must be a number, got {v}")),
        }
    }

    fn u64(&self, key: &str) -> Result<Option<u64>> {
        match self.0.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v.as_u64().map(Some).with_context(|| {
                format!("config key '{key}' must be a non-negative integer, got {v}")
            }),
        }
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.u64(key)?
            .map(|v| usize::try_from(v).context("value too large"))
            .transpose()
    }
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => FileValues::load(p)?,
            None => FileValues(Map::new()),
        };
        let d = HyperParams::default();
        let bits = match args.bits {
            Some(b) => Some(b),
            None => file
                .u64("bits")?
                .map(|b| u32::try_from(b).context("bits too large"))
                .transpose()?,
        };
        let rounding = match args.rounding.clone().or(file.str("rounding")?) {
            Some(s) => parse_rounding(&s)?,
            None => d.rounding,
        };
        let hyper = HyperParams {
            beta1: args.beta1.or(file.f64("beta1")?).unwrap_or(d.beta1),
            beta2: args.beta2.or(file.f64("beta2")?).unwrap_or(d.beta2),
            eps: args.eps.or(file.f64("eps")?).unwrap_or(d.eps),
            lr: args.lr.or(file.f64("lr")?).unwrap_or(d.lr),
            weight_decay: args
                .weight_decay
                .or(file.f64("weight_decay")?)
                .unwrap_or(d.weight_decay),
            window: args.window.or(file.usize("window")?).unwrap_or(d.window),
            density: args.density.or(file.f64("density")?).unwrap_or(d.density),
            bits: bits.unwrap_or(d.bits),
            block: args.block.or(file.usize("block")?).or(d.block),
            bucket: args.bucket.or(file.usize("bucket")?).unwrap_or(d.bucket),
            rounding,
        };
        hyper.validate()?;

        let optimizer_list = match (&args.sweep, &args.optimizer) {
            (Some(_), Some(_)) => bail!("--sweep and --optimizer are mutually exclusive"),
            (Some(list), None) | (None, Some(list)) => list.clone(),
            (None, None) => file.str("optimizer")?.unwrap_or_else(|| "microadam".into()),
        };
        let schedule = match args.schedule.clone().or(file.str("schedule")?) {
            Some(s) => s.parse()?,
            None => Schedule::default(),
        };
        let steps = args.steps.or(file.usize("steps")?).unwrap_or(500);
        if steps == 0 {
            bail!("steps must be at least 1");
        }
        let clip = args.clip.or(file.f64("clip")?);
        if let Some(c) = clip {
            if !(c > 0.0) {
                bail!("clip {c} must be positive");
            }
        }
        Ok(Self {
            problem: args
                .problem
                .clone()
                .or(file.str("problem")?)
                .unwrap_or_else(|| "rosenbrock".into()),
            optimizers: parse_optimizers(&optimizer_list)?,
            steps,
            seed: args.seed.or(file.u64("seed")?).unwrap_or(0),
            schedule,
            dim: args.dim.or(file.usize("dim")?),
            clip,
            hyper,
        })
    }
}
