//! Subcommand implementations. Each returns the files it wrote and a few
//! summary lines for the terminal.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ctdict::dictlearn::{learn_detailed, LearnConfig, LearnOutcome};
use ctdict::eval::{block_approximation_errors, reconstruction_error, EvalReport};
use ctdict::image::extract_patches;
use ctdict::io::{self, Metadata};
use ctdict::phantom::{grains, GrainParams};
use ctdict::projector::{assemble_matrix, make_geometry, simulate};
use ctdict::recon::{ReconOutput, ReconProblem, SolverRegistry, SolverSettings};
use ctdict::{CsrMatrix, Dictionary, GrayImage, PatchGeometry};

use crate::artifacts::{
    echo_config, encode_raw_image, file_sha256, geometry_sha256, load_dictionary, load_sinogram,
    pgm_depth, read_image, read_raw_image, write_artifact, RawImage,
};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("'{key}' must be set for this command")))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Writes a `rows x cols` grain phantom as PGM.
pub fn cmd_phantom(
    rows: usize,
    cols: usize,
    seed: u64,
    out: &Path,
    bits: u8,
) -> CliResult<Outcome> {
    let img = grains(rows, cols, &GrainParams::default(), seed)?;
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    io::write_pgm(out, &img, pgm_depth(bits))
        .map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    Ok(Outcome {
        files: vec![out.to_path_buf()],
        lines: vec![format!("phantom {rows}x{cols} seed {seed}")],
    })
}

/// Loads the training image, crops the configured region and extracts
/// patches, then learns the dictionary.
pub fn learn_from_config(cfg: &ExperimentConfig) -> CliResult<(LearnOutcome, String)> {
    let path = require(&cfg.training_image, "training_image")?;
    let source_sha = file_sha256(path)?;
    let mut img = read_image(path)?;
    if let Some([r, c, h, w]) = cfg.training_region {
        img = img.crop(r, c, h, w)?;
    }
    let patches = extract_patches(
        &img,
        cfg.patch_rows,
        cfg.patch_cols,
        cfg.stride,
        cfg.patch_limit,
        cfg.patch_seed,
    )?;
    let learn_cfg = LearnConfig {
        lambda: cfg.lambda,
        rho: cfg.rho,
        tolerance: cfg.learn_tolerance,
        max_iterations: cfg.learn_max_iterations,
        seed: cfg.learn_seed,
        constraint: cfg.constraint,
    };
    let mut outcome = learn_detailed(&patches, cfg.atoms, &learn_cfg)?;
    outcome.dictionary.provenance.source = source_sha.clone();
    Ok((outcome, source_sha))
}

pub fn dictionary_metadata(
    dict: &Dictionary,
    h_max: f64,
    cfg: &ExperimentConfig,
) -> CliResult<Metadata> {
    let prov = &dict.provenance;
    let mut meta = Metadata::new();
    meta.set("kind", "dictionary")?;
    meta.set("patch_rows", dict.patch_rows())?;
    meta.set("patch_cols", dict.patch_cols())?;
    meta.set("atoms", dict.num_atoms())?;
    meta.set("constraint", dict.constraint())?;
    meta.set("lambda", prov.lambda)?;
    meta.set("rho", prov.rho)?;
    meta.set("tolerance", prov.tolerance)?;
    meta.set("iterations", prov.iterations)?;
    for (i, name) in [
        "residual_d_u",
        "residual_h_v",
        "residual_pi",
        "residual_lambda",
    ]
    .iter()
    .enumerate()
    {
        meta.set(name, prov.residuals[i])?;
    }
    meta.set("objective", prov.objective)?;
    meta.set("converged", prov.converged)?;
    meta.set("support", prov.support)?;
    meta.set("h_max", h_max)?;
    meta.set("training_image_sha256", &prov.source)?;
    echo_config(&mut meta, cfg)?;
    Ok(meta)
}

pub fn cmd_learn(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let start = Instant::now();
    let (outcome, _) = learn_from_config(cfg)?;
    let dict = &outcome.dictionary;
    let h_max = outcome.representation.iter().fold(0.0f64, |a, v| a.max(*v));
    let meta = dictionary_metadata(dict, h_max, cfg)?;
    let path = cfg.effective_output_dir().join("dictionary.mat");
    write_artifact(&path, &io::encode_dense(dict.atoms()), meta)?;
    let prov = &dict.provenance;
    let r = prov.residuals;
    Ok(Outcome {
        files: vec![path.clone()],
        lines: vec![
            format!(
                "dictionary {}x{} ({}x{} patches, {}) -> {}",
                dict.patch_len(),
                dict.num_atoms(),
                dict.patch_rows(),
                dict.patch_cols(),
                dict.constraint(),
                path.display()
            ),
            format!(
                "iterations {} converged {} objective {:.6e}",
                prov.iterations, prov.converged, prov.objective
            ),
            format!(
                "kkt residuals {:.3e} {:.3e} {:.3e} {:.3e}",
                r[0], r[1], r[2], r[3]
            ),
            format!(
                "representation support {} h_max {:.3e}",
                prov.support, h_max
            ),
            format!("wall time {:.2?}", start.elapsed()),
        ],
    })
}

fn square_size(img: &GrayImage) -> CliResult<usize> {
    if img.rows() != img.cols() {
        return Err(CliError::Geometry(format!(
            "parallel-beam geometry needs a square image, got {}x{}",
            img.rows(),
            img.cols()
        )));
    }
    Ok(img.rows())
}

pub fn system_matrix(cfg: &ExperimentConfig, size: usize) -> CliResult<CsrMatrix> {
    let geom = make_geometry(size, size, cfg.projections, cfg.angle_start, cfg.angle_end)?;
    Ok(assemble_matrix(&geom))
}

pub fn cmd_simulate(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let path = require(&cfg.exact_image, "exact_image")?;
    let img = read_image(path)?;
    let size = square_size(&img)?;
    let a = system_matrix(cfg, size)?;
    let sino = simulate(&a, &img, cfg.rel_noise, cfg.noise_seed)?;

    let mut meta = Metadata::new();
    meta.set("kind", "sinogram")?;
    meta.set("size", size)?;
    meta.set("projections", cfg.projections)?;
    meta.set("angle_start", cfg.angle_start)?;
    meta.set("angle_end", cfg.angle_end)?;
    meta.set("rays_per_projection", a.rows() / cfg.projections)?;
    meta.set("measurements", a.rows())?;
    meta.set("rel_noise", sino.rel_noise)?;
    meta.set("achieved_noise", sino.achieved_noise)?;
    meta.set("noise_seed", sino.seed)?;
    meta.set("exact_image_sha256", file_sha256(path)?)?;
    meta.set(
        "geometry_sha256",
        geometry_sha256(size, cfg.projections, cfg.angle_start, cfg.angle_end),
    )?;
    echo_config(&mut meta, cfg)?;
    let out = cfg.effective_output_dir().join("sinogram.mat");
    write_artifact(&out, &io::encode_vector(&sino.data), meta)?;
    Ok(Outcome {
        files: vec![out.clone()],
        lines: vec![
            format!(
                "sinogram m={} (N={size}, {} projections x {} rays) -> {}",
                a.rows(),
                cfg.projections,
                a.rows() / cfg.projections,
                out.display()
            ),
            format!(
                "relative noise requested {} achieved {:.15}",
                sino.rel_noise, sino.achieved_noise
            ),
        ],
    })
}

fn check_same<T: PartialEq + std::fmt::Display>(
    what: &str,
    config: T,
    artifact: T,
) -> CliResult<()> {
    if config != artifact {
        return Err(CliError::Consistency(format!(
            "{what}: config has {config}, artifact has {artifact}"
        )));
    }
    Ok(())
}

pub fn settings(cfg: &ExperimentConfig) -> SolverSettings {
    SolverSettings {
        config: ctdict::recon::ReconConfig {
            tolerance: cfg.recon_tolerance,
            max_iterations: cfg.recon_max_iterations,
            support_threshold: cfg.support_threshold,
            ..Default::default()
        },
        gamma: cfg.gamma,
        art_sweeps: cfg.art_sweeps,
        art_relax: cfg.art_relax,
    }
}

/// Loads the exact image and checks it is the one the sinogram was
/// simulated from.
fn load_exact(
    cfg: &ExperimentConfig,
    sinogram_meta: Option<&Metadata>,
) -> CliResult<Option<GrayImage>> {
    let Some(path) = cfg.exact_image.as_deref() else {
        return Ok(None);
    };
    if let Some(meta) = sinogram_meta {
        let sha = file_sha256(path)?;
        if meta.get("exact_image_sha256") != Some(sha.as_str()) {
            return Err(CliError::Consistency(format!(
                "{} is not the image the sinogram was simulated from",
                path.display()
            )));
        }
    }
    Ok(Some(read_image(path)?))
}

fn eval_report(
    output: &ReconOutput,
    exact: &GrayImage,
    dict: Option<&Dictionary>,
    geom: &PatchGeometry,
) -> CliResult<EvalReport> {
    if exact.rows() != output.rows || exact.cols() != output.cols {
        return Err(CliError::Geometry(format!(
            "exact image is {}x{}, reconstruction is {}x{}",
            exact.rows(),
            exact.cols(),
            output.rows,
            output.cols
        )));
    }
    let re = reconstruction_error(&output.x, exact.as_slice())?;
    let mut report = EvalReport {
        re: Some(re),
        ..Default::default()
    };
    if let Some(d) = dict {
        let blocks = block_approximation_errors(d.atoms(), exact, geom)?;
        report.mae = Some(blocks.iter().sum::<f64>() / blocks.len() as f64);
        report.block_errors = blocks;
    }
    Ok(report)
}

fn blocks_csv(errors: &[f64]) -> String {
    let mut s = String::from("block,error\n");
    for (j, e) in errors.iter().enumerate() {
        s.push_str(&format!("{j},{e}\n"));
    }
    s
}

pub fn cmd_reconstruct(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let start = Instant::now();
    let sino = load_sinogram(&cfg.sinogram_path())?;
    check_same("projections", cfg.projections, sino.projections)?;
    check_same("angle_start", cfg.angle_start, sino.angle_start)?;
    check_same("angle_end", cfg.angle_end, sino.angle_end)?;
    let geom = PatchGeometry::new(sino.size, sino.size, cfg.patch_rows, cfg.patch_cols)?;

    let loaded = if cfg.solver == "art" {
        None
    } else {
        let d = load_dictionary(&cfg.dictionary_path())?;
        check_same("patch_rows", cfg.patch_rows, d.dictionary.patch_rows())?;
        check_same("patch_cols", cfg.patch_cols, d.dictionary.patch_cols())?;
        Some(d)
    };
    let atoms = match &loaded {
        Some(d) => d.dictionary.atoms().clone(),
        None => Dictionary::identity(cfg.patch_rows, cfg.patch_cols)
            .atoms()
            .clone(),
    };

    let a = system_matrix(cfg, sino.size)?;
    if a.rows() != sino.data.len() {
        return Err(CliError::Consistency(format!(
            "sinogram has {} samples, geometry implies {}",
            sino.data.len(),
            a.rows()
        )));
    }
    let base = ReconProblem::new(a, sino.data.clone(), atoms, geom)?;
    let mu = cfg.mu.resolve(base.q());
    let problem = base.with_mu(mu)?.with_delta(cfg.delta)?;
    let registry = SolverRegistry::with_builtins();
    let output = registry
        .get(&cfg.solver)?
        .reconstruct(&problem, &settings(cfg))?;
    let rep = &output.report;

    let out_dir = cfg.effective_output_dir();
    let data_path = out_dir.join("reconstruction.mat");
    let mut meta = Metadata::new();
    meta.set("kind", "reconstruction")?;
    meta.set("rows", output.rows)?;
    meta.set("cols", output.cols)?;
    meta.set("solver", &rep.solver)?;
    meta.set("sinogram_sha256", &sino.sha256)?;
    meta.set(
        "dictionary_sha256",
        loaded.as_ref().map_or("none", |d| d.sha256.as_str()),
    )?;
    meta.set("mu", mu)?;
    meta.set("mu_max", problem.mu_max())?;
    echo_config(&mut meta, cfg)?;
    let raw = RawImage {
        rows: output.rows,
        cols: output.cols,
        data: output.x.clone(),
    };
    write_artifact(&data_path, &encode_raw_image(&raw), meta)?;
    let display_path = out_dir.join("reconstruction.pgm");
    io::write_pgm(
        &display_path,
        &output.display_image(),
        pgm_depth(cfg.pgm_bits),
    )
    .map_err(|e| CliError::Io(e.to_string()))?;

    let mut report = Metadata::new();
    report.set("solver", &rep.solver)?;
    report.set("iterations", rep.iterations)?;
    report.set("converged", rep.converged)?;
    report.set("objective", rep.objective)?;
    report.set("data_fidelity", rep.data_fidelity)?;
    report.set("psi", rep.psi)?;
    report.set("l1_norm", rep.l1_norm)?;
    report.set("l1_weight", rep.l1_weight)?;
    report.set("delta", rep.delta)?;
    report.set("mu", mu)?;
    report.set("mu_over_q", mu / problem.q() as f64)?;
    report.set("mu_max", problem.mu_max())?;
    report.set("support", rep.support)?;
    report.set("fixed_point_residual", rep.fixed_point_residual)?;
    report.set("restarts", rep.restarts)?;
    report.set(
        "noise_level",
        sino.meta.get("achieved_noise").unwrap_or("unknown"),
    )?;
    report.set(
        "geometry",
        format!(
            "{}x{} image, {} projections on [{}, {}), m={}",
            sino.size,
            sino.size,
            sino.projections,
            sino.angle_start,
            sino.angle_end,
            sino.data.len()
        ),
    )?;
    let mut files = vec![data_path, display_path];
    let mut lines = vec![format!(
        "{}: {} iterations, converged {}, objective {:.6e}, support {}",
        rep.solver, rep.iterations, rep.converged, rep.objective, rep.support
    )];
    if let Some(exact) = load_exact(cfg, Some(&sino.meta))? {
        let ev = eval_report(
            &output,
            &exact,
            loaded.as_ref().map(|d| &d.dictionary),
            &geom,
        )?;
        if let Some(re) = ev.re {
            report.set("re", re)?;
            lines.push(format!("RE {re:.6}"));
        }
        if let Some(mae) = ev.mae {
            report.set("mae", mae)?;
            lines.push(format!("MAE {mae:.6}"));
            let csv = out_dir.join("blocks.csv");
            write_text(&csv, &blocks_csv(&ev.block_errors))?;
            files.push(csv);
        }
    }
    let report_path = out_dir.join("report.txt");
    write_text(&report_path, &report.encode())?;
    files.push(report_path);
    lines.push(format!("wall time {:.2?}", start.elapsed()));
    Ok(Outcome { files, lines })
}

/// Scores an image file against the exact image; MAE needs a dictionary.
pub fn cmd_evaluate(cfg: &ExperimentConfig, image: Option<&Path>) -> CliResult<Outcome> {
    let out_dir = cfg.effective_output_dir();
    let image_path = image
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join("reconstruction.mat"));
    let raw = read_raw_image(&image_path)?;
    let exact = load_exact(cfg, None)?
        .ok_or_else(|| CliError::Config("'exact_image' must be set for evaluate".into()))?;
    if exact.rows() != raw.rows || exact.cols() != raw.cols {
        return Err(CliError::Geometry(format!(
            "image is {}x{}, exact image is {}x{}",
            raw.rows,
            raw.cols,
            exact.rows(),
            exact.cols()
        )));
    }
    let mut report = Metadata::new();
    let mut lines = Vec::new();
    let mut files = Vec::new();
    let re = reconstruction_error(&raw.data, exact.as_slice())?;
    report.set("re", re)?;
    report.set("image_sha256", file_sha256(&image_path)?)?;
    lines.push(format!("RE {re:.6}"));
    let dict_path = cfg.dictionary_path();
    if dict_path.exists() {
        let d = load_dictionary(&dict_path)?;
        let geom = PatchGeometry::new(
            exact.rows(),
            exact.cols(),
            d.dictionary.patch_rows(),
            d.dictionary.patch_cols(),
        )?;
        let blocks = block_approximation_errors(d.dictionary.atoms(), &exact, &geom)?;
        let mae = blocks.iter().sum::<f64>() / blocks.len() as f64;
        report.set("mae", mae)?;
        report.set("dictionary_sha256", &d.sha256)?;
        lines.push(format!("MAE {mae:.6}"));
        let csv = out_dir.join("evaluation_blocks.csv");
        write_text(&csv, &blocks_csv(&blocks))?;
        files.push(csv);
    }
    let path = out_dir.join("evaluation.txt");
    write_text(&path, &report.encode())?;
    files.push(path);
    Ok(Outcome { files, lines })
}
