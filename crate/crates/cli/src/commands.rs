use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hybrid_st::experiments::{
    cv_models, fit_base, spatiotemporal_model, split_metrics, stress_point_report, temporal_model, SeedPlan,
};
use hybrid_st::forest::ForestConfig;
use hybrid_st::hybrid::run_hybrid;
use hybrid_st::lgm::{LgmFit, LgmSpec};
use hybrid_st::metrics::{contiguous_time_groups, st_blocks, MetricReport};
use hybrid_st::sim::{simulate_spatiotemporal, simulate_temporal_jumps, StDataset};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{RunConfig, Study};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
    #[error("numerical failure: {0}")]
    Numerical(hybrid_st::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Output { .. } => 2,
            Self::Numerical(_) => 3,
        }
    }
}

fn numerical(e: hybrid_st::Error) -> CliError {
    CliError::Numerical(e)
}

fn output_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Output { path: path.to_path_buf(), source }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    fs::create_dir_all(dir).map_err(output_err(dir))?;
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(output_err(&path))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(dir, name)?;
    let path = dir.join(name);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| output_err(&path)(e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(output_err(&path))
}

/// Write a CSV built by `fill`.
fn write_csv<F>(dir: &Path, name: &str, header: &[&str], fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut csv::Writer<BufWriter<File>>) -> csv::Result<()>,
{
    let path = dir.join(name);
    let mut wr = csv::Writer::from_writer(create(dir, name)?);
    let res = wr.write_record(header).and_then(|_| fill(&mut wr)).and_then(|_| Ok(wr.flush()?));
    res.map_err(|e| output_err(&path)(e.into()))
}

/// Everything needed to rerun a command: pass `config` back via `--config`.
#[derive(Debug, Serialize)]
struct Provenance<'a> {
    command: &'a str,
    generator: String,
    seed: u64,
    seeds: SeedPlan,
    study: Study,
    data: Option<&'a Path>,
    warm_start: Option<&'a Path>,
    config: &'a RunConfig,
}

fn write_provenance(cfg: &RunConfig, command: &str, study: Study, data: Option<&Path>, warm: Option<&Path>) -> Result<(), CliError> {
    let p = Provenance {
        command,
        generator: format!("hybrid-st {}", env!("CARGO_PKG_VERSION")),
        seed: cfg.simulation.seed,
        seeds: SeedPlan::from_seed(cfg.simulation.seed),
        study,
        data,
        warm_start: warm,
        config: cfg,
    };
    write_json(&cfg.output.dir, "provenance.json", &p)
}

pub fn write_diagnostics(dir: &Path, err: &CliError) {
    let doc = json!({ "error": err.to_string(), "exit_code": err.exit_code() });
    if let Err(e) = write_json(dir, "diagnostics.json", &doc) {
        log::error!("{e}");
    }
}

fn rf_config(cfg: &RunConfig) -> ForestConfig {
    ForestConfig { seed: SeedPlan::from_seed(cfg.simulation.seed).rf, ..cfg.rf }
}

fn load_data(path: &Path) -> Result<StDataset, CliError> {
    let f = File::open(path).map_err(|e| CliError::Config(format!("cannot open dataset {}: {e}", path.display())))?;
    StDataset::read_csv(f).map_err(|e| CliError::Config(format!("dataset {}: {e}", path.display())))
}

fn build_model(cfg: &RunConfig, study: Study, data: &StDataset) -> Result<LgmSpec, CliError> {
    let spec = match study {
        Study::Spatiotemporal => spatiotemporal_model(data, &cfg.model.mesh).map(|(s, _)| s),
        Study::TemporalJumps => temporal_model(data),
    };
    spec.map_err(|e| CliError::Config(format!("cannot build the {study:?} model: {e}")))
}

fn metric_rows(wr: &mut csv::Writer<BufWriter<File>>, model: &str, split: &str, m: &MetricReport) -> csv::Result<()> {
    wr.write_record([model, split, &m.rmse.to_string(), &m.mae.to_string(), &m.cp.to_string(), &m.aiw.to_string()])
}

fn write_metrics(dir: &Path, models: &[(&str, &StDataset, &[f64], &[f64])]) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for &(name, data, mean, sd) in models {
        let (train, test) = split_metrics(data, mean, sd).map_err(numerical)?;
        rows.push((name, "train", train));
        if let Some(t) = test {
            rows.push((name, "test", t));
        }
    }
    for (name, split, m) in &rows {
        log::info!("{name} {split}: rmse {:.4} mae {:.4} cp {:.3} aiw {:.4}", m.rmse, m.mae, m.cp, m.aiw);
    }
    write_csv(dir, "metrics.csv", &["model", "split", "rmse", "mae", "cp", "aiw"], |wr| {
        rows.iter().try_for_each(|(name, split, m)| metric_rows(wr, name, split, m))
    })
}

fn write_predictive(dir: &Path, mean: &[f64], sd: &[f64]) -> Result<(), CliError> {
    write_csv(dir, "predictive.csv", &["row", "mean", "sd"], |wr| {
        mean.iter().zip(sd).enumerate().try_for_each(|(i, (m, s))| wr.write_record([i.to_string(), m.to_string(), s.to_string()]))
    })
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = SeedPlan::from_seed(cfg.simulation.seed).data;
    let data = match cfg.simulation.study {
        Study::Spatiotemporal => simulate_spatiotemporal(&cfg.simulation.spatiotemporal, seed),
        Study::TemporalJumps => simulate_temporal_jumps(&cfg.simulation.temporal_jumps, seed),
    }
    .map_err(|e| CliError::Config(format!("simulation settings: {e}")))?;
    let dir = &cfg.output.dir;
    let path = dir.join("dataset.csv");
    let mut w = create(dir, "dataset.csv")?;
    data.write_csv(&mut w).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    w.flush().map_err(output_err(&path))?;
    log::info!("wrote {} rows to {}", data.len(), path.display());
    write_provenance(cfg, "simulate", cfg.simulation.study, None, None)
}

/// Mode of the hyperparameters as written by `fit`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ThetaFile {
    pub names: Vec<String>,
    pub theta_mode: Vec<f64>,
    pub natural: Vec<(String, f64)>,
    pub optimizer_iterations: usize,
    pub optimizer_converged: bool,
    pub log_marginal: f64,
}

fn read_warm_start(path: &Path, spec: &LgmSpec) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let t: ThetaFile = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if t.names != spec.hyper_names() {
        return Err(CliError::Config(format!("{}: hyperparameters {:?} do not match the model's {:?}", path.display(), t.names, spec.hyper_names())));
    }
    Ok(t.theta_mode)
}

fn write_latent(dir: &Path, fit: &LgmFit) -> Result<(), CliError> {
    write_csv(dir, "latent.csv", &["node", "mean", "sd"], |wr| {
        fit.latent_mean
            .iter()
            .zip(&fit.latent_var)
            .enumerate()
            .try_for_each(|(i, (m, v))| wr.write_record([i.to_string(), m.to_string(), v.sqrt().to_string()]))
    })
}

pub fn fit(cfg: &RunConfig, study: Study, data_path: &Path, warm: Option<&Path>) -> Result<(), CliError> {
    let data = load_data(data_path)?;
    let spec = build_model(cfg, study, &data)?;
    let init = warm.map(|p| read_warm_start(p, &spec)).transpose()?;
    let opts = cfg.hybrid_for(study).fit;
    let fit = fit_base(&spec, &data, init.as_deref(), &opts).map_err(numerical)?;
    log::info!("optimizer iterations: {} (converged: {})", fit.optim.iterations, fit.optim.converged);
    let dir = &cfg.output.dir;
    let theta = ThetaFile {
        names: spec.hyper_names(),
        theta_mode: fit.theta_mode.clone(),
        natural: spec.natural_hyper(&fit.theta_mode),
        optimizer_iterations: fit.optim.iterations,
        optimizer_converged: fit.optim.converged,
        log_marginal: fit.log_marginal,
    };
    write_json(dir, "theta.json", &theta)?;
    write_latent(dir, &fit)?;
    write_predictive(dir, &fit.pred_mean, &fit.pred_sd())?;
    let basis = cfg.metrics.interval;
    write_metrics(dir, &[("base", &data, &fit.pred_mean, &basis.base_sd(&fit))])?;
    write_provenance(cfg, "fit", study, Some(data_path), warm)
}

pub fn hybrid(cfg: &RunConfig, study: Study, data_path: &Path) -> Result<(), CliError> {
    let data = load_data(data_path)?;
    let spec = build_model(cfg, study, &data)?;
    let hcfg = cfg.hybrid_for(study);
    let r = run_hybrid(&spec, &data, &rf_config(cfg), &hcfg).map_err(numerical)?;
    let dir = &cfg.output.dir;
    write_csv(dir, "trace.csv", &["iter", "d_kl", "sigma2_rf", "train_rmse"], |wr| {
        r.trace.iter().try_for_each(|t| {
            let d = t.d_kl.map(|d| d.to_string()).unwrap_or_default();
            wr.write_record([t.iter.to_string(), d, t.sigma2_rf.to_string(), t.train_rmse.to_string()])
        })
    })?;
    write_predictive(dir, &r.pred_mean, &r.pred_sd())?;
    let basis = cfg.metrics.interval;
    let (base_sd, sd) = (basis.base_sd(&r.base_fit), basis.hybrid_sd(&r));
    let label = match hcfg.algorithm {
        hybrid_st::hybrid::Algorithm::Rf1 => "INLA-RF1",
        hybrid_st::hybrid::Algorithm::Rf2 => "INLA-RF2",
    };
    write_metrics(dir, &[("base", &data, &r.base_fit.pred_mean, &base_sd), (label, &data, &r.pred_mean, &sd)])?;
    if let Some(s) = stress_point_report(&data, &r) {
        write_csv(dir, "stress.csv", &["node", "base_mean", "base_sd", "corrected_mean", "corrected_sd", "truth"], |wr| {
            s.rows.iter().try_for_each(|p| {
                let vals = [p.base_mean, p.base_sd, p.corrected_mean, p.corrected_sd, p.truth];
                wr.write_record(std::iter::once(p.node.to_string()).chain(vals.iter().map(f64::to_string)))
            })
        })?;
        log::info!("stress points: rmse {:.4} -> {:.4}, cp {:.3} -> {:.3}", s.base.rmse, s.corrected.rmse, s.base.cp, s.corrected.cp);
    }
    let report = json!({
        "algorithm": hcfg.algorithm,
        "converged": r.converged,
        "iterations": r.iterations(),
        "final_d_kl": r.trace.last().and_then(|t| t.d_kl),
        "sigma2_rf": r.sigma2_rf,
    });
    write_json(dir, "report.json", &report)?;
    if !r.converged {
        log::warn!("stopping rule not met after {} iterations (delta {}); results are from the last iteration", r.iterations(), hcfg.delta);
    }
    write_provenance(cfg, "hybrid", study, Some(data_path), None)
}

pub fn cv(cfg: &RunConfig, study: Study, data_path: &Path) -> Result<(), CliError> {
    if study != Study::Spatiotemporal {
        return Err(CliError::Config("block cross-validation needs spatio-temporal data".into()));
    }
    let data = load_data(data_path)?;
    let spec = build_model(cfg, study, &data)?;
    let seeds = SeedPlan::from_seed(cfg.simulation.seed);
    let groups = contiguous_time_groups(data.n_times(), cfg.cv.time_groups).map_err(|e| CliError::Config(format!("cv: {e}")))?;
    let blocks = st_blocks(&data, &groups, cfg.cv.spatial_clusters, seeds.kmeans).map_err(|e| CliError::Config(format!("cv: {e}")))?;
    log::info!("{} blocks", blocks.n_blocks);
    let reports = cv_models(&spec, &data, &blocks, &rf_config(cfg), &cfg.hybrid_for(study), cfg.metrics.interval)
        .map_err(numerical)?;
    write_csv(&cfg.output.dir, "cv.csv", &["model", "block", "split", "metric", "value"], |wr| {
        for (model, rep) in &reports {
            let folds = rep.folds.iter().flat_map(|f| [(f.block.to_string(), "train", f.train), (f.block.to_string(), "test", f.test)]);
            let means = [("mean".to_string(), "train", rep.mean_train), ("mean".to_string(), "test", rep.mean_test)];
            for (block, split, m) in folds.chain(means) {
                for (metric, v) in m.as_pairs() {
                    wr.write_record([model.label(), &block, split, metric, &v.to_string()])?;
                }
            }
        }
        Ok(())
    })?;
    for (model, rep) in &reports {
        log::info!("{}: mean test rmse {:.4}", model.label(), rep.mean_test.rmse);
    }
    write_provenance(cfg, "cv", study, Some(data_path), None)
}
