//! Parameter sweeps over the full pipeline.
//!
//! A grid is a list of axes `key=v1,v2,...`. Cells are the cross product,
//! enumerated with the first axis outermost. Dictionaries are learned once
//! per distinct `(patch, atoms, lambda)`, cells run concurrently and rows are
//! written in grid order.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ctdict::eval::{mean_approximation_error, reconstruction_error};
use ctdict::projector::simulate;
use ctdict::recon::{ReconProblem, SolverRegistry};
use ctdict::{CsrMatrix, Dictionary, GrayImage, PatchGeometry};
use log::warn;
use rayon::prelude::*;

use crate::artifacts::read_image;
use crate::commands::{learn_from_config, settings, system_matrix, Outcome};
use crate::config::{ExperimentConfig, MuSetting};
use crate::error::{CliError, CliResult};

/// Keys a grid may vary. `patch` sets square patches, `mu_fraction` sets
/// `mu` as a fraction of the problem's `mu_max`.
pub const GRID_KEYS: [&str; 7] = [
    "lambda",
    "mu_over_q",
    "mu_fraction",
    "delta",
    "gamma",
    "atoms",
    "patch",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<f64>,
}

pub fn parse_axis(axis: &str) -> CliResult<GridAxis> {
    let (key, list) = axis
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("grid axis '{axis}' is not key=v1,v2,...")))?;
    let key = key.trim();
    if !GRID_KEYS.contains(&key) {
        return Err(CliError::Config(format!(
            "cannot sweep '{key}' (allowed: {})",
            GRID_KEYS.join(", ")
        )));
    }
    let values = list
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::Config(format!("bad grid value '{v}' for '{key}'")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    if values.is_empty() {
        return Err(CliError::Config(format!("grid axis '{key}' has no values")));
    }
    if matches!(key, "atoms" | "patch") && values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
        return Err(CliError::Config(format!(
            "'{key}' values must be positive integers"
        )));
    }
    if key == "mu_fraction" && values.iter().any(|v| *v < 0.0) {
        return Err(CliError::Config(
            "mu_fraction values must be nonnegative".into(),
        ));
    }
    Ok(GridAxis {
        key: key.to_string(),
        values,
    })
}

pub fn parse_grid(specs: &[String]) -> CliResult<Vec<GridAxis>> {
    let axes = specs
        .iter()
        .map(|s| parse_axis(s))
        .collect::<CliResult<Vec<_>>>()?;
    let mut seen = Vec::new();
    for a in &axes {
        if seen.contains(&a.key.as_str()) {
            return Err(CliError::Config(format!(
                "grid axis '{}' given twice",
                a.key
            )));
        }
        seen.push(a.key.as_str());
    }
    if seen.contains(&"mu_over_q") && seen.contains(&"mu_fraction") {
        return Err(CliError::Config(
            "mu_over_q and mu_fraction cannot both be swept".into(),
        ));
    }
    Ok(axes)
}

/// Cross product of the axis values, first axis outermost.
pub fn cells(axes: &[GridAxis]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |&v| {
                    let mut row = prefix.clone();
                    row.push(v);
                    row
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub params: Vec<f64>,
    pub mu_over_q: f64,
    pub re: f64,
    pub mae: f64,
    pub psi: f64,
    pub l1_norm: f64,
    pub support: f64,
    pub iterations: f64,
    pub converged: bool,
}

impl SweepRow {
    fn failed(params: Vec<f64>) -> Self {
        Self {
            params,
            mu_over_q: f64::NAN,
            re: f64::NAN,
            mae: f64::NAN,
            psi: f64::NAN,
            l1_norm: f64::NAN,
            support: f64::NAN,
            iterations: f64::NAN,
            converged: false,
        }
    }

    fn fields(&self) -> Vec<String> {
        let mut f: Vec<String> = self.params.iter().map(f64::to_string).collect();
        f.extend(
            [
                self.mu_over_q,
                self.re,
                self.mae,
                self.psi,
                self.l1_norm,
                self.support,
                self.iterations,
            ]
            .iter()
            .map(f64::to_string),
        );
        f.push(u8::from(self.converged).to_string());
        f
    }
}

/// Config for one cell; `mu_fraction` is returned separately since it
/// needs `mu_max`.
fn cell_config(
    base: &ExperimentConfig,
    axes: &[GridAxis],
    values: &[f64],
) -> CliResult<(ExperimentConfig, Option<f64>)> {
    let mut cfg = base.clone();
    let mut fraction = None;
    for (axis, &v) in axes.iter().zip(values) {
        match axis.key.as_str() {
            "patch" => {
                cfg.patch_rows = v as usize;
                cfg.patch_cols = v as usize;
            }
            "atoms" => cfg.atoms = v as usize,
            "mu_fraction" => fraction = Some(v),
            key => cfg.set(key, &v.to_string())?,
        }
    }
    cfg.validate()?;
    Ok((cfg, fraction))
}

type DictKey = (usize, usize, usize, u64);

fn dict_key(cfg: &ExperimentConfig) -> DictKey {
    (
        cfg.patch_rows,
        cfg.patch_cols,
        cfg.atoms,
        cfg.lambda.to_bits(),
    )
}

struct Prepared {
    dictionary: Dictionary,
    mae: f64,
}

fn run_cell(
    cfg: &ExperimentConfig,
    fraction: Option<f64>,
    prepared: Option<&Prepared>,
    a: &Arc<CsrMatrix>,
    b: &[f64],
    exact: &GrayImage,
) -> CliResult<SweepRow> {
    let size = exact.rows();
    let geom = PatchGeometry::new(size, size, cfg.patch_rows, cfg.patch_cols)?;
    let atoms = match prepared {
        Some(p) => p.dictionary.atoms().clone(),
        None => Dictionary::identity(cfg.patch_rows, cfg.patch_cols)
            .atoms()
            .clone(),
    };
    let base = ReconProblem::new(Arc::clone(a), b.to_vec(), atoms, geom)?;
    let mu = match fraction {
        Some(f) => f * base.mu_max(),
        None => cfg.mu.resolve(base.q()),
    };
    let problem = base.with_mu(mu)?.with_delta(cfg.delta)?;
    let out = SolverRegistry::with_builtins()
        .get(&cfg.solver)?
        .reconstruct(&problem, &settings(cfg))?;
    let r = &out.report;
    Ok(SweepRow {
        params: Vec::new(),
        mu_over_q: mu / problem.q() as f64,
        re: reconstruction_error(&out.x, exact.as_slice())?,
        mae: prepared.map_or(f64::NAN, |p| p.mae),
        psi: r.psi,
        l1_norm: r.l1_norm,
        support: r.support as f64,
        iterations: r.iterations as f64,
        converged: r.converged,
    })
}

/// Runs every cell; failed cells give NaN rows.
pub fn run_sweep(cfg: &ExperimentConfig, axes: &[GridAxis]) -> CliResult<Vec<SweepRow>> {
    let exact_path = cfg
        .exact_image
        .as_deref()
        .ok_or_else(|| CliError::Config("'exact_image' must be set for sweep".into()))?;
    let exact = read_image(exact_path)?;
    if exact.rows() != exact.cols() {
        return Err(CliError::Geometry(
            "sweep needs a square exact image".into(),
        ));
    }
    let a = Arc::new(system_matrix(cfg, exact.rows())?);
    let sino = simulate(&a, &exact, cfg.rel_noise, cfg.noise_seed)?;

    let grid = cells(axes);
    let cell_cfgs = grid
        .iter()
        .map(|v| cell_config(cfg, axes, v))
        .collect::<CliResult<Vec<_>>>()?;

    let mut needed: BTreeMap<DictKey, ExperimentConfig> = BTreeMap::new();
    if cfg.solver != "art" {
        for (c, _) in &cell_cfgs {
            needed.entry(dict_key(c)).or_insert_with(|| c.clone());
        }
    }
    let learned: BTreeMap<DictKey, Option<Prepared>> = needed
        .into_par_iter()
        .map(|(key, c)| {
            let prepared = learn_from_config(&c).and_then(|(outcome, _)| {
                let geom =
                    PatchGeometry::new(exact.rows(), exact.cols(), c.patch_rows, c.patch_cols)?;
                let mae = mean_approximation_error(outcome.dictionary.atoms(), &exact, &geom)?;
                Ok(Prepared {
                    dictionary: outcome.dictionary,
                    mae,
                })
            });
            match prepared {
                Ok(p) => (key, Some(p)),
                Err(e) => {
                    warn!(
                        "dictionary for patch {}x{}, s={}, lambda={} failed: {e}",
                        key.0,
                        key.1,
                        key.2,
                        f64::from_bits(key.3)
                    );
                    (key, None)
                }
            }
        })
        .collect();

    let rows = grid
        .par_iter()
        .zip(cell_cfgs.par_iter())
        .map(|(values, (c, fraction))| {
            let prepared = if c.solver == "art" {
                None
            } else {
                match learned.get(&dict_key(c)) {
                    Some(Some(p)) => Some(p),
                    _ => return SweepRow::failed(values.clone()),
                }
            };
            match run_cell(c, *fraction, prepared, &a, &sino.data, &exact) {
                Ok(mut row) => {
                    row.params = values.clone();
                    row
                }
                Err(e) => {
                    warn!("sweep cell {values:?} failed: {e}");
                    SweepRow::failed(values.clone())
                }
            }
        })
        .collect();
    Ok(rows)
}

fn header(axes: &[GridAxis]) -> Vec<String> {
    let mut h: Vec<String> = axes.iter().map(|a| a.key.clone()).collect();
    h.extend(
        [
            "mu_over_q_value",
            "re",
            "mae",
            "psi",
            "l1_norm",
            "support",
            "iterations",
            "converged",
        ]
        .map(String::from),
    );
    h
}

pub fn to_csv(axes: &[GridAxis], rows: &[SweepRow]) -> String {
    let mut s = header(axes).join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.fields().join(","));
        s.push('\n');
    }
    s
}

/// Whitespace-separated columns with a blank line each time the outermost
/// axis changes, as gnuplot's `splot` expects for gridded data.
pub fn to_gnuplot(axes: &[GridAxis], rows: &[SweepRow]) -> String {
    let mut s = format!("# {}\n", header(axes).join(" "));
    let mut prev: Option<f64> = None;
    for r in rows {
        let first = r.params.first().copied();
        if axes.len() > 1 && prev.is_some() && first != prev {
            s.push('\n');
        }
        prev = first;
        s.push_str(&r.fields().join(" "));
        s.push('\n');
    }
    s
}

pub fn cmd_sweep(cfg: &ExperimentConfig, specs: &[String]) -> CliResult<Outcome> {
    let axes = parse_grid(specs)?;
    if axes.is_empty() {
        return Err(CliError::Config(
            "sweep needs at least one --grid axis".into(),
        ));
    }
    if matches!(cfg.mu, MuSetting::Absolute(_)) && axes.iter().any(|a| a.key == "mu_over_q") {
        warn!("grid mu_over_q overrides the configured absolute mu");
    }
    let rows = run_sweep(cfg, &axes)?;
    let dir = cfg.effective_output_dir();
    std::fs::create_dir_all(&dir)?;
    let csv = dir.join("sweep.csv");
    let dat = dir.join("sweep.dat");
    write(&csv, &to_csv(&axes, &rows))?;
    write(&dat, &to_gnuplot(&axes, &rows))?;
    let best = rows
        .iter()
        .filter(|r| r.re.is_finite())
        .min_by(|a, b| a.re.total_cmp(&b.re));
    let mut lines = vec![format!("{} cells -> {}", rows.len(), csv.display())];
    if let Some(b) = best {
        lines.push(format!("lowest RE {:.6} at {:?}", b.re, b.params));
    }
    Ok(Outcome {
        files: vec![csv, dat],
        lines,
    })
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_cross_product_order() {
        let axes = parse_grid(&["lambda=1,2,3".into(), "delta=0,0.5,1".into()]).unwrap();
        let c = cells(&axes);
        assert_eq!(c.len(), 9);
        assert_eq!(c[0], vec![1.0, 0.0]);
        assert_eq!(c[1], vec![1.0, 0.5]);
        assert_eq!(c[3], vec![2.0, 0.0]);
        assert_eq!(c[8], vec![3.0, 1.0]);
    }

    #[test]
    fn grid_validation() {
        assert!(parse_axis("rho=1,2").is_err());
        assert!(parse_axis("lambda").is_err());
        assert!(parse_axis("lambda=1,x").is_err());
        assert!(parse_axis("patch=2.5").is_err());
        assert!(parse_grid(&["delta=1".into(), "delta=2".into()]).is_err());
        assert!(parse_grid(&["mu_over_q=1".into(), "mu_fraction=0.5".into()]).is_err());
    }

    #[test]
    fn gnuplot_blocks_split_on_outer_axis() {
        let axes = parse_grid(&["lambda=1,2".into(), "delta=0,1".into()]).unwrap();
        let rows: Vec<SweepRow> = cells(&axes).into_iter().map(SweepRow::failed).collect();
        let text = to_gnuplot(&axes, &rows);
        let blocks: Vec<&str> = text.split("\n\n").collect();
        assert_eq!(blocks.len(), 2);
        let csv = to_csv(&axes, &rows);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("lambda,delta,mu_over_q_value,re"));
    }
}
