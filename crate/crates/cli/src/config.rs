//! Flat `key=value` experiment configuration.
//!
//! A file holds one assignment per line; blank lines and `#` comments are
//! skipped. Command-line `--set key=value` assignments are applied on top.
//! Unknown keys, repeated keys within one file and malformed values are
//! rejected. Optional values accept `none`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ctdict::ConstraintSet;

use crate::error::{CliError, CliResult};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "CTDICT_OUTPUT_DIR";

pub const SOLVERS: [&str; 4] = ["main", "nnls", "l1ball", "art"];

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "angle_end",
    "angle_start",
    "art_relax",
    "art_sweeps",
    "atoms",
    "constraint",
    "delta",
    "dictionary",
    "exact_image",
    "gamma",
    "lambda",
    "learn_max_iterations",
    "learn_seed",
    "learn_tolerance",
    "mu",
    "mu_over_q",
    "noise_seed",
    "output_dir",
    "patch_cols",
    "patch_limit",
    "patch_rows",
    "patch_seed",
    "pgm_bits",
    "projections",
    "recon_max_iterations",
    "recon_tolerance",
    "rel_noise",
    "rho",
    "sinogram",
    "solver",
    "stride",
    "support_threshold",
    "training_image",
    "training_region",
];

/// Sparsity weight, given directly or relative to the number of blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuSetting {
    Absolute(f64),
    OverQ(f64),
}

impl MuSetting {
    pub fn resolve(self, q: usize) -> f64 {
        match self {
            MuSetting::Absolute(mu) => mu,
            MuSetting::OverQ(r) => r * q as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub training_image: Option<PathBuf>,
    /// `row,col,height,width` window of the training image used for patches.
    pub training_region: Option<[usize; 4]>,
    pub exact_image: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub dictionary: Option<PathBuf>,
    pub sinogram: Option<PathBuf>,
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub atoms: usize,
    pub constraint: ConstraintSet,
    pub lambda: f64,
    pub rho: Option<f64>,
    pub learn_tolerance: f64,
    pub learn_max_iterations: usize,
    pub stride: usize,
    pub patch_limit: Option<usize>,
    pub patch_seed: u64,
    pub learn_seed: u64,
    pub projections: usize,
    pub angle_start: f64,
    pub angle_end: f64,
    pub rel_noise: f64,
    pub noise_seed: u64,
    pub mu: MuSetting,
    pub delta: f64,
    pub gamma: Option<f64>,
    pub solver: String,
    pub recon_tolerance: f64,
    pub recon_max_iterations: usize,
    pub support_threshold: f64,
    pub art_sweeps: usize,
    pub art_relax: f64,
    pub pgm_bits: u8,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            training_image: None,
            training_region: None,
            exact_image: None,
            output_dir: PathBuf::from("out"),
            dictionary: None,
            sinogram: None,
            patch_rows: 8,
            patch_cols: 8,
            atoms: 128,
            constraint: ConstraintSet::Ball2,
            lambda: 3.0,
            rho: None,
            learn_tolerance: 1e-4,
            learn_max_iterations: 500,
            stride: 1,
            patch_limit: Some(5000),
            patch_seed: 1,
            learn_seed: 2,
            projections: 20,
            angle_start: 0.0,
            angle_end: 180.0,
            rel_noise: 0.01,
            noise_seed: 3,
            mu: MuSetting::OverQ(0.01),
            delta: 0.0,
            gamma: None,
            solver: "main".into(),
            recon_tolerance: 1e-6,
            recon_max_iterations: 5000,
            support_threshold: 1e-8,
            art_sweeps: 10,
            art_relax: 1.0,
            pgm_bits: 16,
        }
    }
}

fn bad(key: &str, value: &str) -> CliError {
    CliError::Config(format!("invalid value '{value}' for '{key}'"))
}

fn num<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn optional<T>(value: &str, parse: impl FnOnce(&str) -> CliResult<T>) -> CliResult<Option<T>> {
    if value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(value).map(Some)
    }
}

fn path(value: &str) -> Option<PathBuf> {
    if value.eq_ignore_ascii_case("none") || value.is_empty() {
        None
    } else {
        Some(PathBuf::from(value))
    }
}

fn fmt_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("none".into(), T::to_string)
}

fn fmt_path(v: &Option<PathBuf>) -> String {
    v.as_ref()
        .map_or("none".into(), |p| p.display().to_string())
}

/// Parses `key=value` lines, rejecting repeated keys.
pub fn parse_assignments(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = parse_assignment(line)
            .map_err(|_| CliError::Config(format!("line {}: expected key=value", n + 1)))?;
        if seen.insert(k.clone(), n + 1).is_some() {
            return Err(CliError::Config(format!("line {}: '{k}' set twice", n + 1)));
        }
        out.push((k, v));
    }
    Ok(out)
}

/// Splits one `key=value` assignment.
pub fn parse_assignment(s: &str) -> CliResult<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("expected key=value, got '{s}'")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(CliError::Config(format!("empty key in '{s}'")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

impl ExperimentConfig {
    /// Reads an optional config file and applies `key=value` overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            cfg.apply(&parse_assignments(&text)?)?;
        }
        let pairs = overrides
            .iter()
            .map(|s| parse_assignment(s))
            .collect::<CliResult<Vec<_>>>()?;
        cfg.apply(&pairs)?;
        Ok(cfg)
    }

    /// Applies assignments in order, then validates.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> CliResult<()> {
        let has_mu = pairs.iter().any(|(k, _)| k == "mu");
        let has_ratio = pairs.iter().any(|(k, _)| k == "mu_over_q");
        if has_mu && has_ratio {
            return Err(CliError::Config(
                "'mu' and 'mu_over_q' are alternatives; set only one".into(),
            ));
        }
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value;
        match key {
            "training_image" => self.training_image = path(v),
            "training_region" => {
                self.training_region = optional(v, |s| {
                    let parts = s
                        .split(',')
                        .map(|t| num::<usize>(key, t.trim()))
                        .collect::<CliResult<Vec<_>>>()?;
                    <[usize; 4]>::try_from(parts).map_err(|_| bad(key, s))
                })?
            }
            "exact_image" => self.exact_image = path(v),
            "output_dir" => {
                self.output_dir = path(v).ok_or_else(|| bad(key, v))?;
            }
            "dictionary" => self.dictionary = path(v),
            "sinogram" => self.sinogram = path(v),
            "patch_rows" => self.patch_rows = num(key, v)?,
            "patch_cols" => self.patch_cols = num(key, v)?,
            "atoms" => self.atoms = num(key, v)?,
            "constraint" => {
                self.constraint = v.parse().map_err(|_| bad(key, v))?;
            }
            "lambda" => self.lambda = num(key, v)?,
            "rho" => self.rho = optional(v, |s| num(key, s))?,
            "learn_tolerance" => self.learn_tolerance = num(key, v)?,
            "learn_max_iterations" => self.learn_max_iterations = num(key, v)?,
            "stride" => self.stride = num(key, v)?,
            "patch_limit" => self.patch_limit = optional(v, |s| num(key, s))?,
            "patch_seed" => self.patch_seed = num(key, v)?,
            "learn_seed" => self.learn_seed = num(key, v)?,
            "projections" => self.projections = num(key, v)?,
            "angle_start" => self.angle_start = num(key, v)?,
            "angle_end" => self.angle_end = num(key, v)?,
            "rel_noise" => self.rel_noise = num(key, v)?,
            "noise_seed" => self.noise_seed = num(key, v)?,
            "mu" => self.mu = MuSetting::Absolute(num(key, v)?),
            "mu_over_q" => self.mu = MuSetting::OverQ(num(key, v)?),
            "delta" => self.delta = num(key, v)?,
            "gamma" => self.gamma = optional(v, |s| num(key, s))?,
            "solver" => self.solver = v.to_ascii_lowercase(),
            "recon_tolerance" => self.recon_tolerance = num(key, v)?,
            "recon_max_iterations" => self.recon_max_iterations = num(key, v)?,
            "support_threshold" => self.support_threshold = num(key, v)?,
            "art_sweeps" => self.art_sweeps = num(key, v)?,
            "art_relax" => self.art_relax = num(key, v)?,
            "pgm_bits" => self.pgm_bits = num(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let fail = |msg: &str| Err(CliError::Config(msg.to_string()));
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if self.patch_rows == 0 || self.patch_cols == 0 {
            return fail("patch_rows and patch_cols must be positive");
        }
        if self.atoms == 0 {
            return fail("atoms must be positive");
        }
        if !positive(self.lambda) {
            return fail("lambda must be positive");
        }
        if self.rho.is_some_and(|r| !positive(r)) {
            return fail("rho must be positive");
        }
        if !positive(self.learn_tolerance) || !positive(self.recon_tolerance) {
            return fail("tolerances must be positive");
        }
        if self.stride == 0 {
            return fail("stride must be positive");
        }
        if self.patch_limit == Some(0) {
            return fail("patch_limit must be positive");
        }
        if self.training_region.is_some_and(|r| r[2] == 0 || r[3] == 0) {
            return fail("training_region must have positive height and width");
        }
        if self.projections == 0 {
            return fail("projections must be positive");
        }
        if !(self.angle_start.is_finite() && self.angle_end.is_finite())
            || self.angle_end <= self.angle_start
        {
            return fail("angle_end must exceed angle_start");
        }
        if !nonneg(self.rel_noise) {
            return fail("rel_noise must be nonnegative");
        }
        let mu = match self.mu {
            MuSetting::Absolute(m) | MuSetting::OverQ(m) => m,
        };
        if !nonneg(mu) || !nonneg(self.delta) {
            return fail("mu and delta must be nonnegative");
        }
        if self.gamma.is_some_and(|g| !positive(g)) {
            return fail("gamma must be positive");
        }
        if !SOLVERS.contains(&self.solver.as_str()) {
            return Err(CliError::Config(format!(
                "unknown solver '{}' (expected one of {})",
                self.solver,
                SOLVERS.join(", ")
            )));
        }
        if !nonneg(self.support_threshold) {
            return fail("support_threshold must be nonnegative");
        }
        if !(self.art_relax > 0.0 && self.art_relax < 2.0) {
            return fail("art_relax must lie in (0, 2)");
        }
        if self.pgm_bits != 8 && self.pgm_bits != 16 {
            return fail("pgm_bits must be 8 or 16");
        }
        Ok(())
    }

    /// `output_dir`, unless overridden by the environment.
    pub fn effective_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn dictionary_path(&self) -> PathBuf {
        self.dictionary
            .clone()
            .unwrap_or_else(|| self.effective_output_dir().join("dictionary.mat"))
    }

    pub fn sinogram_path(&self) -> PathBuf {
        self.sinogram
            .clone()
            .unwrap_or_else(|| self.effective_output_dir().join("sinogram.mat"))
    }

    /// Effective values of all keys except `output_dir`, which depends on
    /// where a run writes rather than on what it computes.
    pub fn echo(&self) -> Vec<(String, String)> {
        let (mu_key, mu_val) = match self.mu {
            MuSetting::Absolute(m) => ("mu", m),
            MuSetting::OverQ(r) => ("mu_over_q", r),
        };
        let mut out = vec![
            ("angle_end", self.angle_end.to_string()),
            ("angle_start", self.angle_start.to_string()),
            ("art_relax", self.art_relax.to_string()),
            ("art_sweeps", self.art_sweeps.to_string()),
            ("atoms", self.atoms.to_string()),
            ("constraint", self.constraint.to_string()),
            ("delta", self.delta.to_string()),
            ("dictionary", fmt_path(&self.dictionary)),
            ("exact_image", fmt_path(&self.exact_image)),
            ("gamma", fmt_opt(&self.gamma)),
            ("lambda", self.lambda.to_string()),
            (
                "learn_max_iterations",
                self.learn_max_iterations.to_string(),
            ),
            ("learn_seed", self.learn_seed.to_string()),
            ("learn_tolerance", self.learn_tolerance.to_string()),
            (mu_key, mu_val.to_string()),
            ("noise_seed", self.noise_seed.to_string()),
            ("patch_cols", self.patch_cols.to_string()),
            ("patch_limit", fmt_opt(&self.patch_limit)),
            ("patch_rows", self.patch_rows.to_string()),
            ("patch_seed", self.patch_seed.to_string()),
            ("pgm_bits", self.pgm_bits.to_string()),
            ("projections", self.projections.to_string()),
            (
                "recon_max_iterations",
                self.recon_max_iterations.to_string(),
            ),
            ("recon_tolerance", self.recon_tolerance.to_string()),
            ("rel_noise", self.rel_noise.to_string()),
            ("rho", fmt_opt(&self.rho)),
            ("sinogram", fmt_path(&self.sinogram)),
            ("solver", self.solver.clone()),
            ("stride", self.stride.to_string()),
            ("support_threshold", self.support_threshold.to_string()),
            ("training_image", fmt_path(&self.training_image)),
            (
                "training_region",
                self.training_region.map_or("none".into(), |r| {
                    format!("{},{},{},{}", r[0], r[1], r[2], r[3])
                }),
            ),
        ];
        out.sort();
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}
