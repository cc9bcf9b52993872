use std::fmt;
use std::path::{Path, PathBuf};

use corrdyn::corrwin::{mean_correlation, rolling_correlations, CorrelationWindowSeries, MeanCorrelationSeries};
use corrdyn::export;
use corrdyn::geometry::{kappa_estimate, lambda_max_series, pca, PcaOptions};
use corrdyn::ingest::{compute_returns, load_prices, locally_normalize, NormalizedReturns, PriceFormat};
use corrdyn::kramers::{
    estimate_drift_diffusion, fit_bounded_diffusion, integrate_potential, sliding_window_potentials, WindowEstimate,
};
use corrdyn::states::{bisect_kmeans, label_states, merge_short_states, steps_and_increments, StateAssignment};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use crate::manifest::Manifest;
use crate::{CliError, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Correlate,
    Pca,
    Cluster,
    Estimate,
    Fitdiff,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Correlate,
        Stage::Pca,
        Stage::Cluster,
        Stage::Estimate,
        Stage::Fitdiff,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Correlate => "correlate",
            Stage::Pca => "pca",
            Stage::Cluster => "cluster",
            Stage::Estimate => "estimate",
            Stage::Fitdiff => "fitdiff",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const NORMALIZED_RETURNS: &str = "normalized_returns.csv";
pub const MEAN_CORRELATION: &str = "mean_correlation.csv";
pub const SPECTRAL: &str = "spectral.csv";
pub const SPECTRAL_SUMMARY: &str = "spectral.json";
pub const CORRELATIONS: &str = "correlations.csv";
pub const STATES: &str = "states.csv";
pub const DENDROGRAM: &str = "dendrogram.txt";
pub const CLUSTER_TREE: &str = "cluster_tree.json";
pub const STATE_SUMMARY: &str = "state_summary.json";
pub const STEPS: &str = "steps.csv";
pub const STEP_HISTOGRAMS: &str = "step_histograms.csv";
pub const KM_FULL: &str = "km_full.csv";
pub const POTENTIALS: &str = "potentials.csv";
pub const DIFFUSION_POINTS: &str = "diffusion_points.csv";
pub const STATE_POTENTIALS: &str = "state_potentials.csv";
pub const POTENTIAL_ENVELOPE: &str = "potential_envelope.csv";
pub const DIFFUSION_FIT: &str = "diffusion_fit.json";
pub const REPORT: &str = "report.json";

/// A pipeline run that failed part way. The manifest lists what was written
/// before the failure and has been saved to the output directory.
#[derive(Debug)]
pub struct PipelineFailure {
    pub error: CliError,
    pub manifest: Manifest,
}

impl fmt::Display for PipelineFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} artifacts written before the failure)", self.error, self.manifest.artifacts.len())
    }
}

impl std::error::Error for PipelineFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Runs every stage in order into a fresh manifest.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Manifest, PipelineFailure> {
    let mut session = match Session::fresh(cfg.clone()) {
        Ok(s) => s,
        Err(error) => {
            return Err(PipelineFailure {
                error,
                manifest: Manifest::default(),
            })
        }
    };
    for stage in Stage::ALL {
        if let Err(error) = session.run(stage) {
            return Err(PipelineFailure {
                error,
                manifest: session.manifest().clone(),
            });
        }
    }
    Ok(session.manifest().clone())
}

#[derive(Debug, Serialize)]
struct SpectralSummary {
    instruments: usize,
    dimension: usize,
    windows: usize,
    correlation_window: usize,
    correlation_step: usize,
    degenerate_cells: usize,
    kappa: Option<f64>,
    lambda_cbar_correlation: Option<f64>,
}

/// Output directory plus results already computed in this process. Stages
/// that find a result missing load it from the directory.
pub struct Session {
    cfg: RunConfig,
    dir: PathBuf,
    manifest: Manifest,
    normalized: Option<NormalizedReturns>,
    windows: Option<CorrelationWindowSeries>,
    cbar: Option<MeanCorrelationSeries>,
    assign: Option<StateAssignment>,
}

fn io_err(stage: Stage) -> impl Fn(std::io::Error) -> CliError {
    move |e| CliError::Stage {
        stage,
        source: corrdyn::Error::Io(e),
    }
}

fn st(stage: Stage) -> impl Fn(corrdyn::Error) -> CliError {
    move |source| CliError::Stage { stage, source }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> corrdyn::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn read_json(path: &Path) -> corrdyn::Result<serde_json::Value> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text).map_err(std::io::Error::other)?)
}

fn interpolate(x: &[f64], y: &[f64], at: f64) -> Option<f64> {
    if x.is_empty() || at < x[0] || at > x[x.len() - 1] {
        return None;
    }
    let i = x.partition_point(|&v| v <= at);
    if i == x.len() {
        return Some(y[x.len() - 1]);
    }
    let (x0, x1) = (x[i - 1], x[i]);
    Some(y[i - 1] + (y[i] - y[i - 1]) * (at - x0) / (x1 - x0))
}

impl Session {
    /// Continues in `cfg.output_dir`, keeping the manifest found there.
    pub fn open(cfg: RunConfig) -> Result<Self, CliError> {
        let mut s = Self::fresh(cfg)?;
        if let Some(m) = Manifest::load(&s.dir).map_err(|e| CliError::Config(format!("{}: {e}", s.dir.display())))? {
            s.manifest = m;
        }
        Ok(s)
    }

    /// Starts with an empty manifest, ignoring any earlier run in the
    /// directory.
    pub fn fresh(cfg: RunConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let dir = cfg.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            cfg,
            dir,
            manifest: Manifest::default(),
            normalized: None,
            windows: None,
            cbar: None,
            assign: None,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Runs one stage and saves the manifest, also on failure.
    pub fn run(&mut self, stage: Stage) -> Result<(), CliError> {
        info!("stage {stage}");
        self.manifest.begin_stage(stage.name());
        let result = match stage {
            Stage::Ingest => self.ingest(),
            Stage::Correlate => self.correlate(),
            Stage::Pca => self.pca(),
            Stage::Cluster => self.cluster(),
            Stage::Estimate => self.estimate(),
            Stage::Fitdiff => self.fitdiff(),
            Stage::Report => self.report(),
        };
        match &result {
            Ok(()) => self.manifest.finish_stage(stage.name()),
            Err(_) => self.manifest.failed_stage = Some(stage.name().to_string()),
        }
        self.manifest.save(&self.dir).map_err(io_err(stage))?;
        result
    }

    fn record(&mut self, stage: Stage, rel: &str, group: &str) -> Result<(), CliError> {
        self.manifest.record(&self.dir, rel, group, stage.name()).map_err(io_err(stage))
    }

    fn diagnostic(&mut self, stage: Stage, msg: String) {
        warn!("{stage}: {msg}");
        self.manifest.diagnostics.push(format!("{stage}: {msg}"));
    }

    fn require(&self, stage: Stage, rel: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(rel);
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::MissingArtifact { stage, file: path })
        }
    }

    fn normalized(&mut self, stage: Stage) -> Result<&NormalizedReturns, CliError> {
        if self.normalized.is_none() {
            let path = self.require(stage, NORMALIZED_RETURNS)?;
            let nr = export::read_normalized_returns(&path, self.cfg.normalization_window).map_err(st(stage))?;
            self.normalized = Some(nr);
        }
        Ok(self.normalized.as_ref().unwrap())
    }

    fn windows(&mut self, stage: Stage) -> Result<&CorrelationWindowSeries, CliError> {
        if self.windows.is_none() {
            let (t, step) = (self.cfg.correlation_window, self.cfg.correlation_step);
            let cw = rolling_correlations(self.normalized(stage)?, t, step).map_err(st(Stage::Correlate))?;
            self.windows = Some(cw);
        }
        Ok(self.windows.as_ref().unwrap())
    }

    fn cbar(&mut self, stage: Stage) -> Result<&MeanCorrelationSeries, CliError> {
        if self.cbar.is_none() {
            let path = self.require(stage, MEAN_CORRELATION)?;
            self.cbar = Some(export::read_series(&path).map_err(st(stage))?);
        }
        Ok(self.cbar.as_ref().unwrap())
    }

    fn assignment(&mut self, stage: Stage) -> Result<&StateAssignment, CliError> {
        if self.assign.is_none() {
            let path = self.require(stage, STATES)?;
            let cbar = self.cbar(stage)?;
            self.assign = Some(export::read_state_timeline(&path, cbar).map_err(st(stage))?);
        }
        Ok(self.assign.as_ref().unwrap())
    }

    fn ingest(&mut self) -> Result<(), CliError> {
        let stage = Stage::Ingest;
        let input = self.cfg.input.clone().ok_or_else(|| CliError::Config("no input price file given".into()))?;
        let format: PriceFormat = self.cfg.format.parse().map_err(|e: corrdyn::Error| CliError::Config(e.to_string()))?;
        let panel = load_prices(&input, format).map_err(st(stage))?;
        info!("{} dates, {} instruments", panel.dates().len(), panel.n_instruments());
        let ret = compute_returns(&panel).map_err(st(stage))?;
        let nr = locally_normalize(&ret, self.cfg.normalization_window).map_err(st(stage))?;
        export::write_normalized_returns(&self.dir.join(NORMALIZED_RETURNS), &nr).map_err(st(stage))?;
        self.record(stage, NORMALIZED_RETURNS, "returns")?;
        self.normalized = Some(nr);
        self.windows = None;
        Ok(())
    }

    fn correlate(&mut self) -> Result<(), CliError> {
        let stage = Stage::Correlate;
        self.windows = None;
        let cw = self.windows(stage)?.clone();
        let cbar = mean_correlation(&cw).map_err(st(stage))?;
        export::write_series(&self.dir.join(MEAN_CORRELATION), &cbar).map_err(st(stage))?;
        self.record(stage, MEAN_CORRELATION, "mean_correlation")?;

        let lambdas = lambda_max_series(&cw);
        let mut w = csv::Writer::from_path(self.dir.join(SPECTRAL)).map_err(|e| st(stage)(e.into()))?;
        let rows: csv::Result<()> = (|| {
            w.write_record(["date", "lambda_max", "cbar"])?;
            for ((d, l), c) in cbar.dates.iter().zip(&lambdas).zip(&cbar.values) {
                w.write_record([d.as_str(), &l.to_string(), &c.to_string()])?;
            }
            w.flush()?;
            Ok(())
        })();
        rows.map_err(|e| st(stage)(e.into()))?;
        self.record(stage, SPECTRAL, "mean_correlation")?;

        let kappa = match kappa_estimate(&lambdas, &cbar) {
            Ok(k) => Some(k),
            Err(e) => {
                self.diagnostic(stage, format!("no eigenvalue relation: {e}"));
                None
            }
        };
        let summary = SpectralSummary {
            instruments: cw.k,
            dimension: cw.d(),
            windows: cw.len(),
            correlation_window: cw.window,
            correlation_step: cw.step,
            degenerate_cells: cw.degenerate.len(),
            kappa: kappa.map(|k| k.ratio),
            lambda_cbar_correlation: kappa.map(|k| k.correlation),
        };
        write_json(&self.dir.join(SPECTRAL_SUMMARY), &summary).map_err(st(stage))?;
        self.record(stage, SPECTRAL_SUMMARY, "mean_correlation")?;

        if self.cfg.write_matrices {
            export::write_correlation_vectors(&self.dir.join(CORRELATIONS), &cw.vectors).map_err(st(stage))?;
            self.record(stage, CORRELATIONS, "correlations")?;
        }
        self.cbar = Some(cbar);
        self.assign = None;
        Ok(())
    }

    fn pca(&mut self) -> Result<(), CliError> {
        let stage = Stage::Pca;
        let opts = PcaOptions {
            components: Some(self.cfg.pca_components),
            centered: self.cfg.pca_centered,
        };
        let cw = self.windows(stage)?;
        let result = pca(&cw.vectors, opts).map_err(st(stage))?;
        let dates = cw.dates();
        export::write_pca(&self.dir, "pca", &dates, &result).map_err(st(stage))?;
        for rel in ["pca_variances.csv", "pca_components.csv", "pca_projections.csv"] {
            self.record(stage, rel, "pca")?;
        }
        Ok(())
    }

    fn cluster(&mut self) -> Result<(), CliError> {
        let stage = Stage::Cluster;
        let (threshold, seed, bins) = (self.cfg.threshold, self.cfg.seed, self.cfg.histogram_bins);
        let cbar = self.cbar(stage)?.clone();
        let cw = self.windows(stage)?;
        let tree = bisect_kmeans(&cw.vectors, threshold, seed).map_err(st(stage))?;
        let assign = label_states(&tree, &cbar).map_err(st(stage))?;
        let steps = steps_and_increments(&cw.vectors, &cbar, &assign).map_err(st(stage))?;
        info!("{} states", assign.n_states());

        export::write_state_timeline(&self.dir.join(STATES), &assign).map_err(st(stage))?;
        export::write_text(&self.dir.join(DENDROGRAM), &tree.dendrogram()).map_err(st(stage))?;
        write_json(&self.dir.join(CLUSTER_TREE), &tree).map_err(st(stage))?;
        let (within, transition) = steps.mean_increments();
        let summary = json!({
            "threshold": threshold,
            "seed": seed,
            "n_states": assign.n_states(),
            "states": &assign.states,
            "mean_increment_within": within,
            "mean_increment_transition": transition,
        });
        write_json(&self.dir.join(STATE_SUMMARY), &summary).map_err(st(stage))?;
        for rel in [STATES, DENDROGRAM, CLUSTER_TREE, STATE_SUMMARY] {
            self.record(stage, rel, "states")?;
        }

        export::write_steps(&self.dir.join(STEPS), &steps).map_err(st(stage))?;
        export::write_histograms(&self.dir.join(STEP_HISTOGRAMS), &steps.histograms(bins)).map_err(st(stage))?;
        self.record(stage, STEPS, "steps")?;
        self.record(stage, STEP_HISTOGRAMS, "steps")?;
        self.assign = Some(assign);
        Ok(())
    }

    fn estimate(&mut self) -> Result<(), CliError> {
        let stage = Stage::Estimate;
        let km = self.cfg.km();
        let (win, step) = (self.cfg.sliding_window, self.cfg.sliding_step);
        let cbar = self.cbar(stage)?.clone();

        let full = estimate_drift_diffusion(&cbar.values, &km, None).map_err(st(stage))?;
        let full_pot = integrate_potential(&full).map_err(st(stage))?;
        export::write_km(&self.dir.join(KM_FULL), &full).map_err(st(stage))?;
        self.record(stage, KM_FULL, "full_series")?;

        let sliding = sliding_window_potentials(&cbar, win, step, &km).map_err(st(stage))?;
        info!("{} sliding windows", sliding.len());
        export::write_potentials(&self.dir.join(POTENTIALS), &sliding).map_err(st(stage))?;
        self.record(stage, POTENTIALS, "windowed_potentials")?;
        export::write_diffusion_points(&self.dir.join(DIFFUSION_POINTS), &sliding).map_err(st(stage))?;
        self.record(stage, DIFFUSION_POINTS, "diffusion")?;

        let explicit = self.cfg.merge.clone();
        let min_days = self.cfg.min_state_days;
        let assign = self.assignment(stage)?.clone();
        let groups = merge_short_states(&assign, &explicit, min_days).map_err(st(stage))?;
        let mut curves = Vec::new();
        for g in &groups {
            let mask = g.mask(&assign);
            let pot = estimate_drift_diffusion(&cbar.values, &km, Some(&mask)).and_then(|e| integrate_potential(&e));
            match pot {
                Ok(p) => curves.push((g.name(), p.c, p.v)),
                Err(e @ corrdyn::Error::InsufficientData { .. }) => {
                    self.diagnostic(stage, format!("{} skipped: {e}", g.name()))
                }
                Err(e) => return Err(st(stage)(e)),
            }
        }
        export::write_labelled_curves(&self.dir.join(STATE_POTENTIALS), "state", &curves).map_err(st(stage))?;
        self.record(stage, STATE_POTENTIALS, "state_potentials")?;

        self.write_envelope(&full_pot.c, &sliding).map_err(st(stage))?;
        self.record(stage, POTENTIAL_ENVELOPE, "state_potentials")?;
        Ok(())
    }

    /// Pointwise range of the windowed potentials on the full-series grid.
    fn write_envelope(&self, grid: &[f64], windows: &[WindowEstimate]) -> corrdyn::Result<()> {
        let mut w = csv::Writer::from_path(self.dir.join(POTENTIAL_ENVELOPE))?;
        w.write_record(["c", "v_min", "v_max", "windows"])?;
        for &c in grid {
            let vals: Vec<f64> = windows
                .iter()
                .filter_map(|win| interpolate(&win.potential.c, &win.potential.v, c))
                .collect();
            if vals.is_empty() {
                continue;
            }
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            w.write_record([c.to_string(), lo.to_string(), hi.to_string(), vals.len().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    fn fitdiff(&mut self) -> Result<(), CliError> {
        let stage = Stage::Fitdiff;
        let points = export::read_diffusion_points(&self.require(stage, DIFFUSION_POINTS)?).map_err(st(stage))?;
        let fit = fit_bounded_diffusion(&points).map_err(st(stage))?;
        info!("lambda {:.5}, c_min {:.4}, c_max {:.4}", fit.lambda, fit.c_min, fit.c_max);
        write_json(&self.dir.join(DIFFUSION_FIT), &fit).map_err(st(stage))?;
        self.record(stage, DIFFUSION_FIT, "diffusion")
    }

    fn report(&mut self) -> Result<(), CliError> {
        let stage = Stage::Report;
        let spectral = read_json(&self.require(stage, SPECTRAL_SUMMARY)?).map_err(st(stage))?;
        let states = read_json(&self.require(stage, STATE_SUMMARY)?).map_err(st(stage))?;
        let fit = read_json(&self.require(stage, DIFFUSION_FIT)?).map_err(st(stage))?;
        let report = json!({
            "windows": spectral["windows"],
            "dimension": spectral["dimension"],
            "instruments": spectral["instruments"],
            "kappa": spectral["kappa"],
            "lambda_cbar_correlation": spectral["lambda_cbar_correlation"],
            "n_states": states["n_states"],
            "states": states["states"],
            "mean_increment_within": states["mean_increment_within"],
            "mean_increment_transition": states["mean_increment_transition"],
            "diffusion_fit": {
                "lambda": fit["lambda"],
                "c_min": fit["c_min"],
                "c_max": fit["c_max"],
                "t0": fit["t0"],
                "residual": fit["residual"],
            },
            "diagnostics": &self.manifest.diagnostics,
        });
        write_json(&self.dir.join(REPORT), &report).map_err(st(stage))?;
        self.record(stage, REPORT, "report")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation() {
        let x = [0.0, 1.0, 3.0];
        let y = [0.0, 2.0, 0.0];
        assert_eq!(interpolate(&x, &y, 0.5), Some(1.0));
        assert_eq!(interpolate(&x, &y, 2.0), Some(1.0));
        assert_eq!(interpolate(&x, &y, 3.0), Some(0.0));
        assert_eq!(interpolate(&x, &y, 0.0), Some(0.0));
        assert_eq!(interpolate(&x, &y, -0.1), None);
        assert_eq!(interpolate(&x, &y, 3.1), None);
    }

    #[test]
    fn stage_names_are_unique() {
        let mut names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
        names.dedup();
        assert_eq!(names.len(), 7);
    }
}
