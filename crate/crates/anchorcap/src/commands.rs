//! The five subcommands, operating on files and an effective config.

use std::fs;
use std::path::{Path, PathBuf};

use anchorcap_core::kinematics::SkeletonModel;
use anchorcap_core::metrics::evaluate;
use anchorcap_core::motion_prior::{corpus_fingerprint, fit_pca_prior, train_vae, PriorKind, PriorModel, VaeConfig};
use anchorcap_core::objective::loss_terms;
use anchorcap_core::pipeline::fit_sequence;
use anchorcap_core::synth::{build_prior_corpus, generate_scene, SceneSpec};

use crate::config::Config;
use crate::error::{CliError, Result};
use crate::executor::RayonExecutor;
use crate::export::{build_cloud, write_csv, write_ply};
use crate::formats::{
    csv_text, log_rows, write_document, write_text, CorpusInfo, Fingerprint, MetricCsvRow, PriorFile, PriorRef,
    ResultFile, SceneFile, TrainingSummary, TruthFile, PRIOR, RESULT, TRUTH,
};
use crate::skeleton::active_model;

fn say(verbose: bool, msg: impl FnOnce() -> String) {
    if verbose {
        eprintln!("{}", msg());
    }
}

fn skeleton_of(model: &SkeletonModel) -> Fingerprint {
    Fingerprint(model.def.fingerprint())
}

/// Read a scene-spec TOML file.
pub fn read_scene_spec(path: &Path) -> Result<SceneSpec> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| {
        let location = match e.span() {
            Some(span) => format!("line {}", text[..span.start.min(text.len())].matches('\n').count() + 1),
            None => "document".to_string(),
        };
        CliError::format(path, location, e.message())
    })
}

pub struct SynthOutputs {
    pub scene: PathBuf,
    pub truth: PathBuf,
}

/// Generate a synthetic scene into `out_dir` as `scene.json` and `truth.json`.
pub fn synth(config: &Config, out_dir: &Path, verbose: bool) -> Result<SynthOutputs> {
    let model = active_model(config.skeleton.as_deref())?;
    let spec = &config.scene;
    let scene = generate_scene(spec, &model).map_err(|e| CliError::core("generating scene", e))?;
    let intrinsics: Vec<_> = scene.cameras.iter().map(|c| c.intrinsics).collect();
    let out = SynthOutputs { scene: out_dir.join("scene.json"), truth: out_dir.join("truth.json") };
    write_document(&out.scene, &SceneFile::new(&scene.observations, &intrinsics, spec.fps, Some(config.clone())))?;
    let truth = TruthFile {
        schema: TRUTH.tag(),
        skeleton: skeleton_of(&model),
        spec: spec.clone(),
        config: config.clone(),
        trajectory: scene.trajectory,
        cameras: scene.cameras,
    };
    write_document(&out.truth, &truth)?;
    say(verbose, || format!("wrote {} frames x {} cameras to {}", spec.frames, spec.cameras.len(), out_dir.display()));
    Ok(out)
}

/// Build the synthetic corpus and fit the configured prior.
pub fn train_prior(config: &Config, out: &Path, verbose: bool) -> Result<()> {
    let model = active_model(config.skeleton.as_deref())?;
    let mut config = config.clone();
    config.prior.vae.latent_dim = config.prior.latent_dim;
    let settings = &config.prior;
    let corpus = build_prior_corpus(settings.windows, settings.seed, &model)
        .map_err(|e| CliError::core("building the training corpus", e))?;
    say(verbose, || format!("corpus: {} windows", corpus.len()));
    let (prior, training) = match settings.kind {
        PriorKind::Pca => {
            let p = fit_pca_prior(&corpus, settings.latent_dim).map_err(|e| CliError::core("fitting the PCA prior", e))?;
            (PriorModel::Pca(p), None)
        }
        PriorKind::Vae => {
            let vae_config = VaeConfig { latent_dim: settings.latent_dim, ..settings.vae.clone() };
            let (v, report) = train_vae(&corpus, &vae_config).map_err(|e| CliError::core("training the VAE prior", e))?;
            if let Some(w) = &report.warning {
                eprintln!("warning: {w}");
            }
            let summary = TrainingSummary {
                epochs: report.epochs,
                final_rec: report.final_rec,
                pca_rec: report.pca_rec,
                warning: report.warning,
            };
            (PriorModel::Vae(v), Some(summary))
        }
    };
    let file = PriorFile {
        schema: PRIOR.tag(),
        kind: prior.kind(),
        latent_dim: prior.latent_dim(),
        skeleton: skeleton_of(&model),
        corpus: CorpusInfo {
            windows: corpus.len(),
            seed: settings.seed,
            fingerprint: Fingerprint(corpus_fingerprint(&corpus)),
        },
        config: config.clone(),
        training,
        model: prior,
    };
    write_document(out, &file)?;
    say(verbose, || format!("wrote prior to {}", out.display()));
    Ok(())
}

/// Default optimisation-log path next to a result file.
pub fn default_log_path(result: &Path) -> PathBuf {
    result.with_extension("log.csv")
}

/// Run the full pipeline on a scene file.
pub fn fit(
    config: &Config,
    scene_path: &Path,
    prior_path: &Path,
    out: &Path,
    log: &Path,
    threads: usize,
    verbose: bool,
) -> Result<()> {
    let model = active_model(config.skeleton.as_deref())?;
    let scene = SceneFile::read(scene_path)?;
    let (obs, intrinsics) = scene.decode(scene_path)?;
    let prior = PriorFile::read(prior_path)?;
    prior.check_skeleton(prior_path, skeleton_of(&model))?;
    let executor = RayonExecutor::new(threads).map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    say(verbose, || {
        format!("fitting {} frames x {} cameras on {} threads", obs.frames, obs.cameras, executor.threads())
    });
    let outcome = fit_sequence(&obs, &intrinsics, &prior.model, &model, &config.weights, &config.fit, &executor);
    let (traces, result) = match outcome {
        Ok(r) => (r.traces.clone(), Ok(r)),
        Err(f) => (f.traces, Err(f.error)),
    };
    let rows = log_rows(&traces);
    let text = csv_text(&rows).map_err(|e| CliError::format(log, "document", e.to_string()))?;
    write_text(log, &text)?;
    let result = result.map_err(|e| CliError::core(format!("fitting {}", scene_path.display()), e))?;
    let losses = loss_terms(&result.trajectory, &result.cameras, &obs, &prior.model, &model)
        .map_err(|e| CliError::core("evaluating the final loss", e))?;
    say(verbose, || {
        format!("{} iterations, final loss {:.6e}", result.diagnostics.iterations, losses.total(&config.weights))
    });
    let file = ResultFile {
        schema: RESULT.tag(),
        config: config.clone(),
        skeleton: skeleton_of(&model),
        prior: PriorRef { kind: prior.kind, latent_dim: prior.latent_dim, corpus: prior.corpus.fingerprint },
        total_loss: losses.total(&config.weights),
        losses,
        diagnostics: result.diagnostics,
        trajectory: result.trajectory,
        cameras: result.cameras,
    };
    write_document(out, &file)
}

/// Compare a result with ground truth and write the metrics CSV.
pub fn eval(config: &Config, result_path: &Path, truth_path: &Path, out: &Path, verbose: bool) -> Result<()> {
    let model = active_model(config.skeleton.as_deref())?;
    let fp = skeleton_of(&model);
    let result = ResultFile::read(result_path)?;
    let truth = TruthFile::read(truth_path)?;
    for (path, got) in [(result_path, result.skeleton), (truth_path, truth.skeleton)] {
        if got != fp {
            return Err(CliError::format(path, "field `skeleton`", format!("{got} does not match the active skeleton {fp}")));
        }
    }
    if result.trajectory.len() != truth.trajectory.len() {
        return Err(CliError::format(
            result_path,
            "field `trajectory.frames`",
            format!("{} frames, ground truth has {}", result.trajectory.len(), truth.trajectory.len()),
        ));
    }
    if result.cameras.len() != truth.cameras.len() {
        return Err(CliError::format(
            result_path,
            "field `cameras`",
            format!("{} cameras, ground truth has {}", result.cameras.len(), truth.cameras.len()),
        ));
    }
    let ev = evaluate(&result.trajectory, &result.cameras, &truth.trajectory, &truth.cameras, &model, config.eval.skip)
        .map_err(|e| CliError::core("computing metrics", e))?;
    let rows: Vec<MetricCsvRow> = ev
        .rows
        .iter()
        .map(|r| MetricCsvRow { metric: r.metric, mean: r.stat.mean, std: r.stat.std, variant: r.variant })
        .collect();
    let text = csv_text(&rows).map_err(|e| CliError::format(out, "document", e.to_string()))?;
    write_text(out, &text)?;
    say(verbose, || text.clone());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Ply,
    Csv,
}

impl ExportFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(ExportFormat::Ply),
            "csv" => Some(ExportFormat::Csv),
            _ => None,
        }
    }
}

/// Write skeleton points and camera frusta of a result.
pub fn export(config: &Config, result_path: &Path, out: &Path, format: Option<ExportFormat>, verbose: bool) -> Result<()> {
    let format = format
        .or_else(|| ExportFormat::from_path(out))
        .ok_or_else(|| CliError::Usage(format!("cannot infer export format of {}; pass --format", out.display())))?;
    let model = active_model(config.skeleton.as_deref())?;
    let result = ResultFile::read(result_path)?;
    if result.skeleton != skeleton_of(&model) {
        return Err(CliError::format(result_path, "field `skeleton`", "does not match the active skeleton"));
    }
    let cloud = build_cloud(&result.trajectory, &result.cameras, &model, config.export.frustum_depth, config.export.stride)
        .map_err(|e| CliError::core("building the point cloud", e))?;
    let mut bytes = Vec::new();
    match format {
        ExportFormat::Ply => {
            let comments = [
                "anchorcap export".to_string(),
                format!("skeleton {}", result.skeleton),
                format!("frames {} cameras {}", result.trajectory.len(), result.cameras.len()),
            ];
            write_ply(&cloud, &comments, &mut bytes).expect("writing to memory succeeds");
        }
        ExportFormat::Csv => write_csv(&cloud, &mut bytes).map_err(|e| CliError::format(out, "document", e.to_string()))?,
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(out, bytes).map_err(|e| CliError::io(out, e))?;
    say(verbose, || format!("wrote {} points, {} edges to {}", cloud.points.len(), cloud.edges.len(), out.display()));
    Ok(())
}
