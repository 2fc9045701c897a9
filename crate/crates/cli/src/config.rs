//! Run configuration: built-in defaults, overridden by a TOML file,
//! overridden by command-line flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use psyphy_core::extshepherd::{Endpoint, ExternalShepherd, DEFAULT_TIMEOUT};
use psyphy_core::perturb::{log_space, FrameSequence};
use psyphy_core::{Error, LevelSchedule, Matcher, Optimizer, PerturbationKind, Result, Shepherd, TpeConfig};
use serde::{Deserialize, Serialize};

/// Everything a pipeline command needs. Serialized into every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    /// `pixels`, `lbp`, `random-projection` or `external`.
    pub matcher: String,
    /// Resize side of the pixel matcher.
    pub side: usize,
    /// LBP cells per image side.
    pub grid: usize,
    /// Output dimension of the random projection.
    pub dim: usize,
    /// Seed of the projection weights; defaults to `seed`.
    pub projection_seed: Option<u64>,
    /// Command line of an external shepherd.
    pub external: Option<String>,
    /// `host:port` of a listening external shepherd.
    pub external_address: Option<String>,
    /// Seconds to wait for an external shepherd reply.
    pub timeout: f64,
    /// `tpe` or `grid`.
    pub optimizer: String,
    pub iterations: usize,
    pub perturbation: String,
    /// Lower schedule bound; per-kind default when absent.
    pub lower: Option<f64>,
    /// Upper schedule bound; per-kind default when absent.
    pub upper: Option<f64>,
    pub levels: usize,
    /// Frame sequence for `precomputed`; falls back to the manifest's.
    pub frames: Option<PathBuf>,
    pub seed: u64,
    pub output: PathBuf,
    pub runs: usize,
    pub weight_fraction: Option<f64>,
    /// Probes examined per level; all sheep when absent.
    pub sample: Option<usize>,
    pub rank_one: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            matcher: "pixels".into(),
            side: 32,
            grid: 4,
            dim: 64,
            projection_seed: None,
            external: None,
            external_address: None,
            timeout: DEFAULT_TIMEOUT.as_secs_f64(),
            optimizer: "tpe".into(),
            iterations: 250,
            perturbation: "gaussian-blur".into(),
            lower: None,
            upper: None,
            levels: 200,
            frames: None,
            seed: 0,
            output: PathBuf::from("out"),
            runs: 5,
            weight_fraction: None,
            sample: None,
            rank_one: false,
        }
    }
}

/// The same keys as [`RunConfig`], all optional. Used for the config file
/// and for command-line overrides.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigLayer {
    pub dataset: Option<PathBuf>,
    pub matcher: Option<String>,
    pub side: Option<usize>,
    pub grid: Option<usize>,
    pub dim: Option<usize>,
    pub projection_seed: Option<u64>,
    pub external: Option<String>,
    pub external_address: Option<String>,
    pub timeout: Option<f64>,
    pub optimizer: Option<String>,
    pub iterations: Option<usize>,
    pub perturbation: Option<String>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub levels: Option<usize>,
    pub frames: Option<PathBuf>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub runs: Option<usize>,
    pub weight_fraction: Option<f64>,
    pub sample: Option<usize>,
    pub rank_one: Option<bool>,
}

impl ConfigLayer {
    /// Parses a TOML config file. Relative paths inside it are resolved
    /// against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut layer: ConfigLayer = toml::from_str(&text).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: format!("invalid config: {e}"),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut layer.dataset, &mut layer.frames, &mut layer.output]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(layer)
    }

    pub fn apply(self, config: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field { config.$field = v; }
            )*};
        }
        macro_rules! set_opt {
            ($($field:ident),*) => {$(
                if self.$field.is_some() { config.$field = self.$field; }
            )*};
        }
        set!(
            matcher,
            side,
            grid,
            dim,
            timeout,
            optimizer,
            iterations,
            perturbation,
            levels,
            seed,
            output,
            runs,
            rank_one
        );
        set_opt!(
            dataset,
            projection_seed,
            external,
            external_address,
            lower,
            upper,
            frames,
            weight_fraction,
            sample
        );
    }
}

impl RunConfig {
    /// Defaults, then the file (if any), then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: ConfigLayer) -> Result<Self> {
        let mut config = RunConfig::default();
        if let Some(path) = file {
            ConfigLayer::from_file(path)?.apply(&mut config);
        }
        overrides.apply(&mut config);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match self.matcher.as_str() {
            "pixels" | "lbp" | "random-projection" => {}
            "external" => {
                if self.external.is_some() == self.external_address.is_some() {
                    return Err(Error::Config(
                        "the external matcher needs exactly one of `external` (command) or `external-address`".into(),
                    ));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown matcher '{other}' (expected pixels, lbp, random-projection or external)"
                )))
            }
        }
        if self.side == 0 || self.grid == 0 || self.dim == 0 {
            return Err(Error::Config("side, grid and dim must be at least 1".into()));
        }
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err(Error::Config(format!("timeout {} must be positive", self.timeout)));
        }
        self.optimizer()?;
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.perturbation != "precomputed" {
            self.perturbation.parse::<PerturbationKind>()?;
            if self.levels < 2 {
                return Err(Error::Config(format!("levels must be at least 2, got {}", self.levels)));
            }
        }
        if let Some(f) = self.weight_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("weight fraction {f} is outside [0, 1]")));
            }
        }
        if self.sample == Some(0) {
            return Err(Error::Config("sample must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset given (use --dataset or `dataset` in the config file)".into()))
    }

    pub fn optimizer(&self) -> Result<Optimizer> {
        match self.optimizer.as_str() {
            "tpe" => Ok(Optimizer::Tpe(TpeConfig::default())),
            "grid" => Ok(Optimizer::grid()),
            other => Err(Error::Config(format!(
                "unknown optimizer '{other}' (expected tpe or grid)"
            ))),
        }
    }

    /// A built-in matcher, or `None` for an external one.
    pub fn builtin_matcher(&self) -> Result<Option<Matcher>> {
        Ok(match self.matcher.as_str() {
            "pixels" => Some(Matcher::pixels(self.side)),
            "lbp" => Some(Matcher::lbp(self.grid)),
            "random-projection" => Some(Matcher::random_projection(
                self.dim,
                self.projection_seed.unwrap_or(self.seed),
            )?),
            _ => None,
        })
    }

    pub fn external_shepherd(&self) -> Result<ExternalShepherd> {
        let endpoint = match (&self.external, &self.external_address) {
            (Some(cmd), None) => Endpoint::command_line(cmd)?,
            (None, Some(address)) => Endpoint::Tcp {
                address: address.clone(),
            },
            _ => return Err(Error::Config("external shepherd endpoint is ambiguous".into())),
        };
        ExternalShepherd::connect(endpoint, Duration::from_secs_f64(self.timeout))
    }

    /// The configured shepherd, connecting to an external one if needed.
    pub fn shepherd(&self) -> Result<Box<dyn Shepherd>> {
        match self.builtin_matcher()? {
            Some(m) => Ok(Box::new(m)),
            None => Ok(Box::new(self.external_shepherd()?)),
        }
    }

    /// Perturbation kind and level schedule. `manifest_frames` is the frame
    /// root named by the dataset manifest, if any.
    pub fn perturbation(&self, manifest_frames: Option<&Path>) -> Result<(PerturbationKind, LevelSchedule)> {
        if self.perturbation == "precomputed" {
            let root = self.frames.as_deref().or(manifest_frames).ok_or_else(|| {
                Error::Config("precomputed perturbation needs `frames` or a manifest `precomputed` entry".into())
            })?;
            let seq = FrameSequence::open(root)?;
            let schedule = seq.schedule();
            return Ok((PerturbationKind::Precomputed(seq.into()), schedule));
        }
        let kind: PerturbationKind = self.perturbation.parse()?;
        let (lo, hi) = kind.default_bounds();
        let lower = self.lower.unwrap_or(lo);
        let upper = self.upper.unwrap_or(hi);
        kind.validate_level(lower)?;
        kind.validate_level(upper)?;
        Ok((kind, log_space(lower, upper, self.levels)?))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
