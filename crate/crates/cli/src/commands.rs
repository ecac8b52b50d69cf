//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use facdiff_core::eval::blur_sweep;
use facdiff_core::oracle::{MixtureFile, OraclePredictor};
use facdiff_core::png::{load_image, save_image};
use facdiff_core::remote::{RemoteClient, RemoteEndpoint, ENV_TOKEN};
use facdiff_core::sampler::{sample_factorized, sample_inverse};
use facdiff_core::{
    BackendError, Condition, ConditionPayload, Decomposition, DecompositionSpec, NoisePredictor,
    PixelTensor, SampleRun, SamplerConfig, Schedule,
};
use serde::Serialize;

use crate::config::{BackendKind, MixtureSource, RunConfig};
use crate::error::CliError;

pub type Shape = (usize, usize, usize);

pub enum Backend {
    Oracle(OraclePredictor),
    Remote(RemoteClient),
}

impl NoisePredictor for Backend {
    fn predict(
        &self,
        x_t: &PixelTensor,
        t: usize,
        conditions: &[Condition],
    ) -> Result<Vec<PixelTensor>, BackendError> {
        match self {
            Backend::Oracle(o) => o.predict(x_t, t, conditions),
            Backend::Remote(r) => r.predict(x_t, t, conditions),
        }
    }
}

/// A validated configuration with its backend ready.
pub struct Prepared {
    pub backend: Backend,
    pub schedule: Schedule,
    pub shape: Shape,
    pub model: String,
}

/// `--endpoint` wins, then `FD_ENDPOINT`, then the config value.
pub fn resolve_endpoint(flag: Option<&str>, configured: Option<&str>) -> Result<RemoteEndpoint, CliError> {
    match flag {
        Some(url) => {
            let mut e = RemoteEndpoint::new(url)?;
            e.token = std::env::var(ENV_TOKEN).ok().filter(|t| !t.is_empty());
            Ok(e)
        }
        None => Ok(RemoteEndpoint::from_env(configured)?),
    }
}

fn load_mixtures(src: &MixtureSource, base_dir: &Path) -> Result<(MixtureFile, PathBuf), String> {
    match src {
        MixtureSource::Inline(m) => Ok((m.clone(), base_dir.to_path_buf())),
        MixtureSource::Path(p) => {
            let path = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
            let text = std::fs::read_to_string(&path)
                .map_err(|e| format!("cannot read mixtures {}: {e}", path.display()))?;
            let m = serde_json::from_str(&text)
                .map_err(|e| format!("mixtures {}: {e}", path.display()))?;
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((m, dir))
        }
    }
}

/// Validates everything checkable locally, then connects the backend.
pub fn prepare(cfg: &RunConfig, base_dir: &Path, endpoint_flag: Option<&str>) -> Result<Prepared, CliError> {
    let mut problems = cfg.static_problems();
    match cfg.backend {
        BackendKind::Oracle => {
            let schedule = Schedule::default();
            let shape = cfg.local_shape();
            if cfg.sampler.steps > schedule.train_steps() {
                problems.push(format!(
                    "sampler.steps must be <= {}, got {}",
                    schedule.train_steps(),
                    cfg.sampler.steps
                ));
            }
            let mut predictor = None;
            if let Some(src) = &cfg.mixtures {
                match load_mixtures(src, base_dir) {
                    Err(e) => problems.push(e),
                    Ok((file, dir)) => match file.build(shape, &dir) {
                        Err(errs) => problems.extend(errs),
                        Ok(built) => {
                            check_mixture_refs(cfg, &built, file.unconditional.is_some(), &mut problems);
                            let mut o = OraclePredictor::new(schedule.clone(), built);
                            if let Some(u) = &file.unconditional {
                                o = o.with_unconditional(u.clone());
                            }
                            predictor = Some(o);
                        }
                    },
                }
            }
            match predictor {
                Some(o) if problems.is_empty() => Ok(Prepared {
                    backend: Backend::Oracle(o),
                    schedule,
                    shape,
                    model: "oracle".into(),
                }),
                _ => Err(CliError::Validation(problems)),
            }
        }
        BackendKind::Remote => {
            let endpoint = match resolve_endpoint(endpoint_flag, cfg.endpoint.as_deref()) {
                Ok(e) => Some(e),
                Err(CliError::Validation(p)) => {
                    problems.extend(p);
                    None
                }
                Err(e) => return Err(e),
            };
            if !problems.is_empty() {
                return Err(CliError::Validation(problems));
            }
            let client = RemoteClient::new(endpoint.expect("checked above"));
            let info = client.fetch_info()?;
            let shape = match cfg.sampler.resolution {
                Some([c, h, w]) if (c, h, w) != info.resolution => {
                    return Err(CliError::invalid(format!(
                        "sampler.resolution {:?} differs from the served resolution {:?}",
                        [c, h, w],
                        info.resolution
                    )))
                }
                _ => info.resolution,
            };
            let mut late = Vec::new();
            if cfg.sampler.resolution.is_none() {
                late.extend(cfg.decomposition.problems(shape.0));
            }
            if cfg.sampler.steps > info.schedule.train_steps() {
                late.push(format!(
                    "sampler.steps must be <= {}, got {}",
                    info.schedule.train_steps(),
                    cfg.sampler.steps
                ));
            }
            if !late.is_empty() {
                return Err(CliError::Validation(late));
            }
            Ok(Prepared {
                backend: Backend::Remote(client),
                schedule: info.schedule,
                shape,
                model: info.model,
            })
        }
    }
}

fn check_mixture_refs(
    cfg: &RunConfig,
    built: &BTreeMap<String, facdiff_core::oracle::MixtureCondition>,
    has_uncond: bool,
    problems: &mut Vec<String>,
) {
    for (i, c) in cfg.conditions.iter().enumerate() {
        if let ConditionPayload::Mixture(id) = &c.payload {
            if !built.contains_key(id) {
                let known: Vec<_> = built.keys().map(String::as_str).collect();
                problems.push(format!(
                    "conditions[{i}] names mixture {id:?}; defined: {}",
                    known.join(", ")
                ));
            }
            if c.guidance != 1.0 && !has_uncond {
                problems.push(format!(
                    "conditions[{i}] has guidance {} but no unconditional mixture is defined",
                    c.guidance
                ));
            }
        }
    }
}

pub fn build_decomposition(spec: &DecompositionSpec, shape: Shape, base_dir: &Path) -> Result<Decomposition, CliError> {
    Ok(spec.build(shape.1, shape.2, base_dir)?)
}

fn sampler_config(cfg: &RunConfig, shape: Shape) -> SamplerConfig {
    SamplerConfig {
        steps: cfg.sampler.steps,
        kind: cfg.sampler.kind,
        seed: cfg.seed,
        channels: shape.0,
        height: shape.1,
        width: shape.2,
    }
}

#[derive(Debug, Serialize)]
struct ComponentFile {
    label: String,
    file: String,
    /// `raw` or `min_max` (display rescaling of zero-mean residuals).
    display: &'static str,
}

#[derive(Debug, Serialize)]
struct InverseRecord {
    reference: String,
    fixed: String,
    residual: f64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a RunConfig,
    seed: u64,
    backend: &'static str,
    model: &'a str,
    schedule_hash: String,
    train_steps: usize,
    resolution: [usize; 3],
    output: &'static str,
    image_sha256: String,
    components: Vec<ComponentFile>,
    timesteps: Vec<usize>,
    step_millis: Vec<f64>,
    total_millis: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    inverse: Option<InverseRecord>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("manifest serializes");
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Writes `output.png`, one PNG per component and `manifest.json` into `cfg.out`.
fn write_run(
    command: &str,
    cfg: &RunConfig,
    prep: &Prepared,
    d: &Decomposition,
    run: &SampleRun,
    total_millis: f64,
    inverse: Option<InverseRecord>,
) -> Result<(), CliError> {
    let dir = cfg.out.as_path();
    create_dir(dir)?;
    save_image(&run.image, dir.join("output.png"))?;
    let mut components = Vec::new();
    for (i, label) in d.labels().iter().enumerate() {
        let part = d.apply_one(i, &run.image)?;
        let residual = d.components()[i].is_residual();
        let shown = if residual { part.min_max_normalized() } else { part };
        let file = format!("component_{label}.png");
        save_image(&shown, dir.join(&file))?;
        components.push(ComponentFile {
            label: label.clone(),
            file,
            display: if residual { "min_max" } else { "raw" },
        });
    }
    let (c, h, w) = prep.shape;
    let manifest = Manifest {
        command,
        config: cfg,
        seed: cfg.seed,
        backend: cfg.backend.name(),
        model: &prep.model,
        schedule_hash: prep.schedule.hash(),
        train_steps: prep.schedule.train_steps(),
        resolution: [c, h, w],
        output: "output.png",
        image_sha256: run.image.digest(),
        components,
        timesteps: run.steps.iter().map(|s| s.t).collect(),
        step_millis: run.step_millis.clone(),
        total_millis,
        inverse,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn generate(cfg: &RunConfig, base_dir: &Path, endpoint_flag: Option<&str>) -> Result<(), CliError> {
    let prep = prepare(cfg, base_dir, endpoint_flag)?;
    let d = build_decomposition(&cfg.decomposition, prep.shape, base_dir)?;
    let started = Instant::now();
    let run = sample_factorized(&prep.backend, &d, &cfg.conditions, &sampler_config(cfg, prep.shape), &prep.schedule)?;
    let ms = started.elapsed().as_secs_f64() * 1e3;
    write_run("generate", cfg, &prep, &d, &run, ms, None)?;
    println!("wrote {}", cfg.out.join("output.png").display());
    Ok(())
}

fn unknown_label(label: &str, labels: &[String]) -> CliError {
    CliError::invalid(format!(
        "unknown component label {label:?}; valid labels: {}",
        labels.join(", ")
    ))
}

pub fn inverse(
    cfg: &RunConfig,
    base_dir: &Path,
    endpoint_flag: Option<&str>,
    reference: &Path,
    fixed: &str,
) -> Result<(), CliError> {
    let labels = cfg.decomposition.labels();
    let fixed_idx = labels.iter().position(|l| l == fixed);
    let mut problems = cfg.static_problems();
    if fixed_idx.is_none() {
        if let CliError::Validation(p) = unknown_label(fixed, &labels) {
            problems.extend(p);
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Validation(problems));
    }
    let fixed_idx = fixed_idx.expect("checked above");
    let prep = prepare(cfg, base_dir, endpoint_flag)?;
    let (c, h, w) = prep.shape;
    let x_ref = facdiff_core::resample(&load_image(reference)?.with_channels(c)?, h, w)?;
    let d = build_decomposition(&cfg.decomposition, prep.shape, base_dir)?;
    let started = Instant::now();
    let run = sample_inverse(
        &prep.backend,
        &d,
        &cfg.conditions,
        &x_ref,
        fixed_idx,
        &sampler_config(cfg, prep.shape),
        &prep.schedule,
    )?;
    let ms = started.elapsed().as_secs_f64() * 1e3;
    let residual = d
        .apply_one(fixed_idx, &run.image)?
        .max_abs_diff(&d.apply_one(fixed_idx, &x_ref)?)
        .map_err(CliError::from)?;
    let record = InverseRecord {
        reference: reference.display().to_string(),
        fixed: fixed.to_string(),
        residual,
    };
    write_run("inverse", cfg, &prep, &d, &run, ms, Some(record))?;
    println!(
        "wrote {} (fixed {fixed}, residual {residual:.3e})",
        cfg.out.join("output.png").display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepEntry {
    sigma: f64,
    dir: String,
    image_sha256: String,
}

#[derive(Debug, Serialize)]
struct SweepManifest {
    seed: u64,
    sigmas: Vec<f64>,
    grid: &'static str,
    runs: Vec<SweepEntry>,
}

pub fn sweep_sigma(
    cfg: &RunConfig,
    base_dir: &Path,
    endpoint_flag: Option<&str>,
    sigmas: &[f64],
) -> Result<(), CliError> {
    let mut problems = cfg.static_problems();
    if sigmas.is_empty() {
        problems.push("sigma list is empty".into());
    }
    for (i, s) in sigmas.iter().enumerate() {
        if !(s.is_finite() && *s > 0.0) {
            problems.push(format!("sigma[{i}] must be positive, got {s}"));
        }
    }
    if cfg.decomposition.with_sigma(1.0).is_none() {
        problems.push(format!(
            "sweep-sigma needs a hybrid decomposition, config has {}",
            cfg.decomposition.kind_name()
        ));
    }
    if !problems.is_empty() {
        return Err(CliError::Validation(problems));
    }
    let prep = prepare(cfg, base_dir, endpoint_flag)?;
    let mut images = Vec::new();
    let mut runs = Vec::new();
    for (i, &sigma) in sigmas.iter().enumerate() {
        let mut sub = cfg.clone();
        sub.decomposition = cfg.decomposition.with_sigma(sigma).expect("hybrid checked");
        let dir_name = format!("sigma_{i:02}");
        sub.out = cfg.out.join(&dir_name);
        let d = build_decomposition(&sub.decomposition, prep.shape, base_dir)?;
        let started = Instant::now();
        let run = sample_factorized(&prep.backend, &d, &sub.conditions, &sampler_config(&sub, prep.shape), &prep.schedule)?;
        let ms = started.elapsed().as_secs_f64() * 1e3;
        write_run("sweep-sigma", &sub, &prep, &d, &run, ms, None)?;
        runs.push(SweepEntry {
            sigma,
            dir: dir_name,
            image_sha256: run.image.digest(),
        });
        images.push(run.image);
    }
    let grid = PixelTensor::hconcat(&images)?;
    save_image(&grid, cfg.out.join("grid.png"))?;
    write_json(
        &cfg.out.join("sweep.json"),
        &SweepManifest {
            seed: cfg.seed,
            sigmas: sigmas.to_vec(),
            grid: "grid.png",
            runs,
        },
    )?;
    println!("wrote {} runs and {}", sigmas.len(), cfg.out.join("grid.png").display());
    Ok(())
}

pub fn eval(image: &Path, prompts: &[String], endpoint: RemoteEndpoint, out: &Path) -> Result<(), CliError> {
    if prompts.is_empty() {
        return Err(CliError::invalid("at least one prompt is required"));
    }
    let x = load_image(image)?;
    create_dir(out)?;
    let client = RemoteClient::new(endpoint);
    let mut failures = Vec::new();
    for (i, prompt) in prompts.iter().enumerate() {
        match blur_sweep(&x, prompt, &client) {
            Ok(report) => {
                report.write_json(&out.join(format!("report_{i:02}.json")))?;
                report.write_csv(&out.join(format!("report_{i:02}.csv")))?;
                println!(
                    "{prompt:?}: max score {:.4} at factor {:.3}",
                    report.max_score, report.argmax_factor
                );
            }
            Err(e) => {
                let err = CliError::from(e);
                if let CliError::Io(_) = err {
                    return Err(err);
                }
                failures.push(format!("prompt {prompt:?}: {err}"));
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Backend(failures.join("; ")))
    }
}

#[derive(Debug, Serialize)]
struct InfoOut {
    source: String,
    model: String,
    #[serde(rename = "T")]
    train_steps: usize,
    resolution: Option<[usize; 3]>,
    schedule_hash: String,
}

pub fn info(endpoint: Option<RemoteEndpoint>) -> Result<(), CliError> {
    let out = match endpoint {
        Some(e) => {
            let source = e.base_url.clone();
            let info = RemoteClient::new(e).fetch_info()?;
            let (c, h, w) = info.resolution;
            InfoOut {
                source,
                model: info.model,
                train_steps: info.schedule.train_steps(),
                resolution: Some([c, h, w]),
                schedule_hash: info.schedule.hash(),
            }
        }
        None => {
            let s = Schedule::default();
            InfoOut {
                source: "local".into(),
                model: "oracle".into(),
                train_steps: s.train_steps(),
                resolution: None,
                schedule_hash: s.hash(),
            }
        }
    };
    println!("{}", serde_json::to_string_pretty(&out).expect("serializes"));
    Ok(())
}
