//! End-to-end pipeline, scoring and the benchmark experiments.
//!
//! For one window the pipeline computes residuals, builds the correlation
//! matrix, runs the spectral-gap test and, only if it fires, localizes a
//! group of `k` sensors and ranks their label tags.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corr::{correlation_matrix, CorrelationMatrix, Excluded};
use crate::detrend::{dataset_residuals, ResidualSeries};
use crate::error::{Error, Result};
use crate::identify::{enrich, CauseReport};
use crate::ingest::{Dataset, LabelRegistry};
use crate::localize::{
    default_group_size, elbow_size, igp, las, lowrank_from, rank1_from_decomposition, Algorithm,
    LocalizationResult, DEFAULT_RESTARTS_SQRT_N,
};
use crate::spectral::{decompose, SpectrumReport};
use crate::synth::{generate_walks, WalkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSize {
    /// `round(√N)` over the included sensors.
    SqrtN,
    Fixed(usize),
    /// Elbow rule with the given threshold.
    Elbow(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub tau_av: usize,
    pub tau_corr: usize,
    pub group_size: GroupSize,
    pub algorithm: Algorithm,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            tau_av: 10,
            tau_corr: 200,
            group_size: GroupSize::SqrtN,
            algorithm: Algorithm::LowRank,
            restarts: DEFAULT_RESTARTS_SQRT_N,
            seed: 0,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        if self.tau_av < 2 || !self.tau_av.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "tau_av must be even and >= 2, got {}",
                self.tau_av
            )));
        }
        if self.tau_corr < 3 {
            return Err(Error::InvalidParameter(format!(
                "tau_corr must be >= 3, got {}",
                self.tau_corr
            )));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidParameter("restarts must be >= 1".into()));
        }
        match self.group_size {
            GroupSize::Fixed(0) => Err(Error::InvalidParameter("k must be >= 1".into())),
            GroupSize::Elbow(e) if e.is_nan() || e <= 0.0 => Err(Error::InvalidParameter(format!(
                "elbow threshold must be positive, got {e}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Score {
    /// Selected sensors outside the ground truth.
    pub mismatches: usize,
    /// Share of the ground truth that was selected.
    pub recovered_fraction: f64,
}

pub fn score(selected: &[usize], truth: &[usize]) -> Score {
    let hits = selected.iter().filter(|i| truth.contains(i)).count();
    Score {
        mismatches: selected.len() - hits,
        recovered_fraction: if truth.is_empty() {
            0.0
        } else {
            hits as f64 / truth.len() as f64
        },
    }
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub correlation_ms: f64,
    pub spectral_ms: f64,
    pub localization_ms: f64,
    pub identification_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationSummary {
    pub algorithm: Algorithm,
    pub k: usize,
    pub selected_ids: Vec<String>,
    pub score: f64,
    pub restarts: usize,
    pub seed: Option<u64>,
}

impl LocalizationSummary {
    pub fn new(result: &LocalizationResult, ids: &[String]) -> Self {
        Self {
            algorithm: result.algorithm,
            k: result.k,
            selected_ids: result.selected.iter().map(|&i| ids[i].clone()).collect(),
            score: result.score,
            restarts: result.restarts,
            seed: result.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowRecord {
    pub t_end: usize,
    pub detected: bool,
    pub margin: f64,
    pub excluded: Vec<Excluded>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub localization: Option<LocalizationSummary>,
    /// Selected sensors as dataset indices.
    #[serde(skip)]
    pub selected: Vec<usize>,
    pub selected_ids: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub causes: Option<CauseReport>,
    pub untagged_selected: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mismatches: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovered_fraction: Option<f64>,
    /// Set when the group size came from an elbow without a clear cusp.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub low_confidence_k: bool,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub params: PipelineParams,
    pub n_sensors: usize,
    pub detrend_ms: f64,
    pub records: Vec<WindowRecord>,
}

impl ExperimentReport {
    pub fn detections(&self) -> usize {
        self.records.iter().filter(|r| r.detected).count()
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Output of one window, including the intermediate matrix and spectrum.
#[derive(Debug, Clone)]
pub struct WindowAnalysis {
    pub record: WindowRecord,
    pub matrix: CorrelationMatrix,
    pub spectrum: SpectrumReport,
    pub localization: Option<LocalizationResult>,
}

/// Dataset with residuals computed once, ready for windowed analysis.
pub struct Pipeline<'a> {
    dataset: &'a Dataset,
    labels: &'a LabelRegistry,
    params: PipelineParams,
    residuals: Vec<ResidualSeries>,
    truth: Option<Vec<usize>>,
    detrend_ms: f64,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        dataset: &'a Dataset,
        labels: &'a LabelRegistry,
        params: PipelineParams,
    ) -> Result<Self> {
        params.validate()?;
        let start = Instant::now();
        let residuals =
            dataset_residuals(dataset, params.tau_av).map_err(|e| e.in_stage("detrend"))?;
        Ok(Self {
            dataset,
            labels,
            params,
            residuals,
            truth: None,
            detrend_ms: ms(start),
        })
    }

    /// Ground-truth dataset indices used to score localizations.
    pub fn with_truth(mut self, truth: Vec<usize>) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn params(&self) -> &PipelineParams {
        &self.params
    }

    pub fn residuals(&self) -> &[ResidualSeries] {
        &self.residuals
    }

    /// Inclusive range of window end steps the residuals can support.
    pub fn t_end_range(&self) -> Result<(usize, usize)> {
        let (lo, hi) = self.residuals[0].valid_range();
        let first = lo + self.params.tau_corr - 1;
        if first > hi {
            return Err(Error::Range(format!(
                "series of length {} too short for tau_av = {} and tau_corr = {}",
                self.dataset.len(),
                self.params.tau_av,
                self.params.tau_corr
            )));
        }
        Ok((first, hi))
    }

    pub fn correlation(&self, t_end: usize) -> Result<CorrelationMatrix> {
        correlation_matrix(&self.residuals, t_end, self.params.tau_corr)
            .map_err(|e| e.in_stage("correlation"))
    }

    pub fn analyze(&self, t_end: usize) -> Result<WindowAnalysis> {
        self.analyze_inner(t_end, false)
    }

    /// Like [`Pipeline::analyze`], but localizes even when detection is negative.
    pub fn analyze_forced(&self, t_end: usize) -> Result<WindowAnalysis> {
        self.analyze_inner(t_end, true)
    }

    fn analyze_inner(&self, t_end: usize, force: bool) -> Result<WindowAnalysis> {
        let mut timings = StageTimings::default();
        let start = Instant::now();
        let cm = self.correlation(t_end)?;
        timings.correlation_ms = ms(start);

        let start = Instant::now();
        let decomposition = decompose(cm.matrix()).map_err(|e| e.in_stage("spectral"))?;
        let spectrum = SpectrumReport::from_eigenvalues(decomposition.eigenvalues.clone())
            .map_err(|e| e.in_stage("spectral"))?;
        timings.spectral_ms = ms(start);

        let mut record = WindowRecord {
            t_end,
            detected: spectrum.detected,
            margin: spectrum.margin,
            excluded: cm.excluded().to_vec(),
            localization: None,
            selected: Vec::new(),
            selected_ids: Vec::new(),
            causes: None,
            untagged_selected: 0,
            mismatches: None,
            recovered_fraction: None,
            low_confidence_k: false,
            timings,
        };
        if !spectrum.detected && !force {
            return Ok(WindowAnalysis {
                record,
                matrix: cm,
                spectrum,
                localization: None,
            });
        }

        let start = Instant::now();
        let m = cm.matrix();
        let n = cm.n();
        let rank1 = rank1_from_decomposition(&decomposition);
        let k = match self.params.group_size {
            GroupSize::SqrtN => default_group_size(n),
            GroupSize::Fixed(k) => k,
            GroupSize::Elbow(eps) => {
                let elbow = elbow_size(m, eps).map_err(|e| e.in_stage("localization"))?;
                record.low_confidence_k = !elbow.pronounced;
                elbow.k
            }
        }
        .min(n);
        let p = &self.params;
        let result = match p.algorithm {
            Algorithm::LowRank => lowrank_from(m, &rank1, k),
            Algorithm::Las => las(m, k, p.restarts, p.seed),
            Algorithm::Igp => igp(m, k, p.restarts, p.seed),
        }
        .map_err(|e| e.in_stage("localization"))?;
        record.timings.localization_ms = ms(start);

        record.selected = result.selected.iter().map(|&i| cm.positions()[i]).collect();
        record.selected_ids = result
            .selected
            .iter()
            .map(|&i| cm.sensors()[i].clone())
            .collect();
        record.localization = Some(LocalizationSummary::new(&result, cm.sensors()));

        let start = Instant::now();
        let causes = enrich(&record.selected_ids, self.labels, self.dataset.sensors())
            .map_err(|e| e.in_stage("identification"))?;
        record.untagged_selected = causes.untagged_selected;
        record.causes = Some(causes);
        record.timings.identification_ms = ms(start);

        if let Some(truth) = &self.truth {
            let s = score(&record.selected, truth);
            record.mismatches = Some(s.mismatches);
            record.recovered_fraction = Some(s.recovered_fraction);
        }
        Ok(WindowAnalysis {
            record,
            matrix: cm,
            spectrum,
            localization: Some(result),
        })
    }

    pub fn run_window(&self, t_end: usize) -> Result<WindowRecord> {
        self.analyze(t_end).map(|a| a.record)
    }

    /// Window ends `first, first + stride, ...` up to the last valid step.
    pub fn sweep(&self, stride: usize) -> Result<ExperimentReport> {
        if stride == 0 {
            return Err(Error::InvalidParameter("stride must be >= 1".into()));
        }
        let (first, last) = self.t_end_range()?;
        let ends: Vec<usize> = (first..=last).step_by(stride).collect();
        let records = ends
            .into_par_iter()
            .map(|t| self.run_window(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentReport {
            params: self.params.clone(),
            n_sensors: self.dataset.n_sensors(),
            detrend_ms: self.detrend_ms,
            records,
        })
    }
}

/// One pipeline pass for the window ending at `t_end`.
pub fn run_pipeline(
    dataset: &Dataset,
    labels: &LabelRegistry,
    params: &PipelineParams,
    t_end: usize,
) -> Result<WindowRecord> {
    Pipeline::new(dataset, labels, params.clone())?.run_window(t_end)
}

/// Default sweep stride: half the running-mean window.
pub fn default_stride(params: &PipelineParams) -> usize {
    (params.tau_av / 2).max(1)
}

pub fn sweep(
    dataset: &Dataset,
    labels: &LabelRegistry,
    params: &PipelineParams,
    stride: usize,
) -> Result<ExperimentReport> {
    Pipeline::new(dataset, labels, params.clone())?.sweep(stride)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTransitionConfig {
    pub k0: usize,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub params: PipelineParams,
    /// Walk parameters; `n`, `k0` and `seed` are overridden per trial.
    pub walks: WalkConfig,
    pub seed: u64,
}

impl Default for PhaseTransitionConfig {
    fn default() -> Self {
        Self {
            k0: 16,
            n_grid: vec![32, 64, 128, 256, 512],
            trials: 100,
            params: PipelineParams::default(),
            walks: WalkConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhasePoint {
    pub n: usize,
    /// Localization size `round(√N)`.
    pub k: usize,
    pub trials: usize,
    pub detections: usize,
    /// Detected and `|selected ∩ truth| = min(k, k0)`.
    pub full_recoveries: usize,
    /// Detected and `|selected ∩ truth| ≥ min(k, k0) / 2`.
    pub half_recoveries: usize,
    pub p_detection: f64,
    pub p_full: f64,
    pub p_half: f64,
    /// `P(half recovery | detection)`; 0 when nothing was detected.
    pub p_half_given_detection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseTransitionReport {
    pub k0: usize,
    pub trials: usize,
    pub seed: u64,
    pub points: Vec<PhasePoint>,
}

impl PhaseTransitionReport {
    /// Largest grid `N` whose full-recovery probability is still >= 0.5,
    /// interpolated linearly in `log N` to the 0.5 crossing.
    pub fn half_crossing(&self) -> Option<f64> {
        self.points.windows(2).find_map(|w| {
            let (a, b) = (&w[0], &w[1]);
            if a.p_full >= 0.5 && b.p_full < 0.5 {
                let (la, lb) = ((a.n as f64).ln(), (b.n as f64).ln());
                let f = (a.p_full - 0.5) / (a.p_full - b.p_full);
                Some((la + f * (lb - la)).exp())
            } else {
                None
            }
        })
    }

    /// Pooled `P(half recovery | detection)` over the whole grid.
    pub fn pooled_half_given_detection(&self) -> f64 {
        let det: usize = self.points.iter().map(|p| p.detections).sum();
        let half: usize = self.points.iter().map(|p| p.half_recoveries).sum();
        if det == 0 {
            0.0
        } else {
            half as f64 / det as f64
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record([
            "n",
            "k",
            "trials",
            "detections",
            "full_recoveries",
            "half_recoveries",
            "p_detection",
            "p_full",
            "p_half",
            "p_half_given_detection",
        ])
        .map_err(io)?;
        for p in &self.points {
            w.write_record([
                p.n.to_string(),
                p.k.to_string(),
                p.trials.to_string(),
                p.detections.to_string(),
                p.full_recoveries.to_string(),
                p.half_recoveries.to_string(),
                p.p_detection.to_string(),
                p.p_full.to_string(),
                p.p_half.to_string(),
                p.p_half_given_detection.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive per-trial seeds.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
struct TrialOutcome {
    detected: bool,
    full: bool,
    half: bool,
}

fn phase_trial(
    config: &PhaseTransitionConfig,
    n: usize,
    trial: usize,
) -> Result<(usize, TrialOutcome)> {
    let walks = WalkConfig {
        n,
        k0: config.k0,
        seed: derive_seed(config.seed, n as u64, trial as u64),
        ..config.walks.clone()
    };
    let synth = generate_walks(&walks)?;
    let params = PipelineParams {
        group_size: GroupSize::SqrtN,
        algorithm: Algorithm::LowRank,
        ..config.params.clone()
    };
    let pipeline =
        Pipeline::new(&synth.dataset, &synth.labels, params)?.with_truth(synth.truth.clone());
    let (_, last) = pipeline.t_end_range()?;
    let record = pipeline.run_window(last)?;
    let k = record.selected.len();
    let hits = record
        .selected
        .iter()
        .filter(|i| synth.truth.contains(i))
        .count();
    let best = k.min(config.k0);
    Ok((
        k,
        TrialOutcome {
            detected: record.detected,
            full: record.detected && hits == best,
            half: record.detected && 2 * hits >= best,
        },
    ))
}

/// Success probabilities of detection plus `√N` lowrank localization of a
/// planted group of `k0` walks among `N`, for each `N` in the grid.
pub fn phase_transition(config: &PhaseTransitionConfig) -> Result<PhaseTransitionReport> {
    config.params.validate()?;
    if config.trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    if config.n_grid.iter().any(|&n| n < config.k0 || n < 4) {
        return Err(Error::InvalidParameter(format!(
            "every grid size must be >= max(k0, 4) = {}",
            config.k0.max(4)
        )));
    }
    let mut points = Vec::with_capacity(config.n_grid.len());
    for &n in &config.n_grid {
        let outcomes = (0..config.trials)
            .into_par_iter()
            .map(|t| phase_trial(config, n, t))
            .collect::<Result<Vec<_>>>()?;
        let count = |f: fn(&TrialOutcome) -> bool| outcomes.iter().filter(|(_, o)| f(o)).count();
        let detections = count(|o| o.detected);
        let full = count(|o| o.full);
        let half = count(|o| o.half);
        let trials = config.trials as f64;
        points.push(PhasePoint {
            n,
            k: default_group_size(n),
            trials: config.trials,
            detections,
            full_recoveries: full,
            half_recoveries: half,
            p_detection: detections as f64 / trials,
            p_full: full as f64 / trials,
            p_half: half as f64 / trials,
            p_half_given_detection: if detections == 0 {
                0.0
            } else {
                half as f64 / detections as f64
            },
        });
    }
    Ok(PhaseTransitionReport {
        k0: config.k0,
        trials: config.trials,
        seed: config.seed,
        points,
    })
}
