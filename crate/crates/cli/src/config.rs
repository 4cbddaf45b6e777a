//! Run configuration: defaults, flat `key = value` config files, and flag
//! overrides.
//!
//! Precedence, lowest to highest: built-in defaults, config file,
//! NRSFM_THREADS, command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use nrsfm_core::{DegeneracyGate, GridSpec, ReferencePolicy, DEFAULT_LAMBDA_REG, DEFAULT_TAU};

/// Reference-image policy as written in configs and flags.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceArg {
    All,
    Single(u32),
}

impl ReferenceArg {
    pub fn policy(self) -> ReferencePolicy {
        match self {
            ReferenceArg::All => ReferencePolicy::AllImages,
            ReferenceArg::Single(image) => ReferencePolicy::Single(image),
        }
    }
}

impl FromStr for ReferenceArg {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(ReferenceArg::All);
        }
        let image = s
            .parse()
            .with_context(|| format!("reference must be `all` or an image id, got {s:?}"))?;
        Ok(ReferenceArg::Single(image))
    }
}

impl fmt::Display for ReferenceArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferenceArg::All => write!(f, "all"),
            ReferenceArg::Single(image) => write!(f, "{image}"),
        }
    }
}

/// Pipeline knobs shared by the commands.
#[derive(Clone, Debug)]
pub struct RunConfig {
    /// Degeneracy threshold on cond(H); pairs at or below it are rejected.
    pub tau: f64,
    /// Warp control grid size, n for an n x n grid.
    pub grid: usize,
    /// Warp fit regularization weight.
    pub lambda_reg: f64,
    /// Which images take the reference role.
    pub reference: ReferenceArg,
    /// Pixel noise sigma applied by synth.
    pub noise_px: f64,
    /// RNG seed used by synth.
    pub seed: u64,
    /// Worker threads; 0 lets the pool pick.
    pub threads: usize,
    /// Output directory.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            grid: 8,
            lambda_reg: DEFAULT_LAMBDA_REG,
            reference: ReferenceArg::All,
            noise_px: 0.0,
            seed: 0,
            threads: 0,
            out: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{}: line {}: expected key = value", path.display(), i + 1))?;
            config
                .set(key.trim(), value.trim())
                .with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        }
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T>(key: &str, value: &str) -> Result<T>
        where
            T: FromStr,
            T::Err: std::error::Error + Send + Sync + 'static,
        {
            value
                .parse()
                .with_context(|| format!("bad value {value:?} for {key}"))
        }
        // Keys match the flag names; hyphens and underscores are equivalent.
        match key.replace('-', "_").as_str() {
            "tau" => self.tau = parse("tau", value)?,
            "grid" => self.grid = parse("grid", value)?,
            "lambda_reg" => self.lambda_reg = parse("lambda_reg", value)?,
            "reference" => self.reference = value.parse()?,
            "noise_px" => self.noise_px = parse("noise_px", value)?,
            "seed" => self.seed = parse("seed", value)?,
            "threads" => self.threads = parse("threads", value)?,
            "out" => self.out = PathBuf::from(value),
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau >= 1.0) {
            bail!("tau must be finite and >= 1, got {}", self.tau);
        }
        if self.grid < 4 {
            bail!("grid must be at least 4, got {}", self.grid);
        }
        if !(self.lambda_reg.is_finite() && self.lambda_reg >= 0.0) {
            bail!("lambda_reg must be finite and >= 0, got {}", self.lambda_reg);
        }
        if !(self.noise_px.is_finite() && self.noise_px >= 0.0) {
            bail!("noise_px must be finite and >= 0, got {}", self.noise_px);
        }
        Ok(())
    }

    pub fn gate(&self) -> Result<DegeneracyGate> {
        Ok(DegeneracyGate::new(self.tau)?)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        Ok(GridSpec::new(self.grid, self.grid)?)
    }
}

/// The config-file keys, exposed uniformly as flags on every command that
/// carries a [`RunConfig`].
#[derive(Args, Debug)]
pub struct ConfigFlags {
    /// Config file with flat `key = value` lines.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Degeneracy threshold on cond(H).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Warp control grid size (n for an n x n grid).
    #[arg(long)]
    pub grid: Option<usize>,
    /// Warp fit regularization weight.
    #[arg(long)]
    pub lambda_reg: Option<f64>,
    /// Reference-image policy: `all` or one image id.
    #[arg(long)]
    pub reference: Option<ReferenceArg>,
    /// Pixel noise sigma for synthetic scenes.
    #[arg(long)]
    pub noise_px: Option<f64>,
    /// RNG seed for synthetic scenes.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 = automatic. NRSFM_THREADS sets the same knob.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl ConfigFlags {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Ok(raw) = std::env::var("NRSFM_THREADS") {
            config.threads = raw
                .trim()
                .parse()
                .with_context(|| format!("bad NRSFM_THREADS value {raw:?}"))?;
        }
        if let Some(tau) = self.tau {
            config.tau = tau;
        }
        if let Some(grid) = self.grid {
            config.grid = grid;
        }
        if let Some(lambda_reg) = self.lambda_reg {
            config.lambda_reg = lambda_reg;
        }
        if let Some(reference) = self.reference {
            config.reference = reference;
        }
        if let Some(noise_px) = self.noise_px {
            config.noise_px = noise_px;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(threads) = self.threads {
            config.threads = threads;
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        config.validate()?;
        Ok(config)
    }
}
