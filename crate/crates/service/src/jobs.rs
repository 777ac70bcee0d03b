//! Asynchronous measurement jobs run against the simulated hardware on a
//! bounded worker pool, away from the scheduler writer.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use qisp_core::analysis::{
    build_histogram, coincidence_metrics, compensation_grid, fit_gaussian, run_dispersion_sweep, CoincidenceMetrics,
    GaussianFit, Histogram, HistogramParams, SweepResult,
};
use qisp_core::fabric::{FabricState, UserId};
use qisp_core::scenario::{build_scenario, ArmSpec, Scenario};
use qisp_core::QispConfig;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

pub const DEFAULT_WORKERS: usize = 4;
pub const DEFAULT_TTL_MS: u64 = 24 * 3600 * 1000;
const MAX_DURATION_S: f64 = 10.0;
const MAX_PAIRS: u64 = 10_000_000;
const PEAK_HALFWIDTH_PS: f64 = 1000.0;

fn default_signal_eps() -> u8 {
    2
}
fn default_idler_eps() -> u8 {
    3
}
fn default_duration() -> f64 {
    0.1
}
fn default_to() -> f64 {
    -22.0
}
fn default_step() -> f64 {
    1.0
}
fn default_pairs() -> u64 {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramJob {
    #[serde(default = "default_signal_eps")]
    pub signal_eps: u8,
    #[serde(default = "default_idler_eps")]
    pub idler_eps: u8,
    pub signal_spd: u8,
    pub idler_spd: u8,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default)]
    pub compensation_ps_nm: f64,
    #[serde(default)]
    pub bin_ps: Option<f64>,
    #[serde(default)]
    pub window_ps: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepJob {
    #[serde(default = "default_signal_eps")]
    pub signal_eps: u8,
    #[serde(default = "default_idler_eps")]
    pub idler_eps: u8,
    pub signal_spd: u8,
    pub idler_spd: u8,
    #[serde(default)]
    pub from_ps_nm: f64,
    #[serde(default = "default_to")]
    pub to_ps_nm: f64,
    #[serde(default = "default_step")]
    pub step_ps_nm: f64,
    #[serde(default = "default_pairs")]
    pub pairs: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasurementSpec {
    Histogram(HistogramJob),
    DispersionSweep(SweepJob),
}

impl MeasurementSpec {
    /// Detector channels the job reads.
    pub fn spd_channels(&self) -> [u8; 2] {
        match self {
            MeasurementSpec::Histogram(j) => [j.signal_spd, j.idler_spd],
            MeasurementSpec::DispersionSweep(j) => [j.signal_spd, j.idler_spd],
        }
    }

    fn eps_channels(&self) -> [u8; 2] {
        match self {
            MeasurementSpec::Histogram(j) => [j.signal_eps, j.idler_eps],
            MeasurementSpec::DispersionSweep(j) => [j.signal_eps, j.idler_eps],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            MeasurementSpec::Histogram(j) => {
                if !(j.duration_s > 0.0 && j.duration_s <= MAX_DURATION_S) {
                    return Err(format!("duration_s must be in (0, {MAX_DURATION_S}]"));
                }
                if !j.compensation_ps_nm.is_finite() {
                    return Err("compensation_ps_nm must be finite".into());
                }
                let p = self.histogram_params(&HistogramParams::default());
                if !(p.bin_ps > 0.0 && p.window_ps > 0.0 && p.window_ps / p.bin_ps <= 1e6) {
                    return Err("bin_ps and window_ps must be positive with at most 10^6 bins".into());
                }
                Ok(())
            }
            MeasurementSpec::DispersionSweep(j) => {
                if !(1000..=MAX_PAIRS).contains(&j.pairs) {
                    return Err(format!("pairs must be in [1000, {MAX_PAIRS}]"));
                }
                compensation_grid(j.from_ps_nm, j.to_ps_nm, j.step_ps_nm)
                    .map(|_| ())
                    .map_err(|e| e.to_string())
            }
        }
    }

    fn histogram_params(&self, defaults: &HistogramParams) -> HistogramParams {
        match self {
            MeasurementSpec::Histogram(j) => HistogramParams {
                bin_ps: j.bin_ps.unwrap_or(defaults.bin_ps),
                window_ps: j.window_ps.unwrap_or(defaults.window_ps),
            },
            MeasurementSpec::DispersionSweep(_) => defaults.clone(),
        }
    }

    /// Binds the job to the fabric as routed right now: an arm whose EPS and
    /// SPD channels are not switched to the same user records dark counts only.
    pub fn scenario(&self, config: &QispConfig, fabric: &FabricState) -> Result<Scenario, String> {
        let [se, ie] = self.eps_channels();
        let [ss, is] = self.spd_channels();
        let mut signal = ArmSpec::from_fabric(fabric, se, ss);
        if let MeasurementSpec::Histogram(j) = self {
            signal.compensation_ps_nm = j.compensation_ps_nm;
        }
        build_scenario(config, &signal, &ArmSpec::from_fabric(fabric, ie, is)).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum MeasurementResult {
    Histogram {
        histogram: Histogram,
        fit: Option<GaussianFit>,
        fit_error: Option<String>,
        metrics: Option<CoincidenceMetrics>,
        signal_events: usize,
        idler_events: usize,
        saturated: bool,
    },
    DispersionSweep(SweepResult),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementJob {
    pub id: String,
    pub owner: UserId,
    pub spec: MeasurementSpec,
    pub state: JobState,
    pub submitted_ms: u64,
    pub finished_ms: Option<u64>,
    pub result: Option<MeasurementResult>,
    pub error: Option<String>,
}

pub fn run(spec: &MeasurementSpec, scenario: &Scenario, defaults: &HistogramParams) -> Result<MeasurementResult, String> {
    match spec {
        MeasurementSpec::Histogram(j) => {
            let p = spec.histogram_params(defaults);
            let out = scenario.simulate(j.duration_s, j.seed).map_err(|e| e.to_string())?;
            let histogram = build_histogram(&out.signal, &out.idler, p.bin_ps, p.window_ps).map_err(|e| e.to_string())?;
            let (fit, fit_error) = match fit_gaussian(&histogram) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let center = fit.as_ref().map_or(0.0, |f| f.center_ps);
            let halfwidth = PEAK_HALFWIDTH_PS.min(p.window_ps / 2.0);
            let metrics = coincidence_metrics(&histogram, center, halfwidth, j.duration_s).ok();
            Ok(MeasurementResult::Histogram {
                histogram,
                fit,
                fit_error,
                metrics,
                signal_events: out.signal.len(),
                idler_events: out.idler.len(),
                saturated: out.saturated,
            })
        }
        MeasurementSpec::DispersionSweep(j) => {
            let grid = compensation_grid(j.from_ps_nm, j.to_ps_nm, j.step_ps_nm).map_err(|e| e.to_string())?;
            run_dispersion_sweep(scenario, defaults, &grid, j.pairs, j.seed)
                .map(MeasurementResult::DispersionSweep)
                .map_err(|e| e.to_string())
        }
    }
}

/// Job table plus the worker-pool permits. Finished jobs are dropped once
/// older than the time-to-live.
pub struct JobStore {
    jobs: Mutex<HashMap<String, MeasurementJob>>,
    next: AtomicU64,
    pub(crate) permits: Arc<Semaphore>,
    ttl_ms: u64,
}

impl JobStore {
    pub fn new(workers: usize, ttl_ms: u64) -> Self {
        JobStore {
            jobs: Mutex::new(HashMap::new()),
            next: AtomicU64::new(1),
            permits: Arc::new(Semaphore::new(workers.max(1))),
            ttl_ms,
        }
    }

    fn table(&self) -> std::sync::MutexGuard<'_, HashMap<String, MeasurementJob>> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn expire(&self, table: &mut HashMap<String, MeasurementJob>, now_ms: u64) {
        table.retain(|_, j| j.finished_ms.is_none_or(|t| now_ms < t.saturating_add(self.ttl_ms)));
    }

    pub fn create(&self, owner: UserId, spec: MeasurementSpec, now_ms: u64) -> MeasurementJob {
        let id = format!("m{}", self.next.fetch_add(1, Ordering::SeqCst));
        let job = MeasurementJob {
            id: id.clone(),
            owner,
            spec,
            state: JobState::Queued,
            submitted_ms: now_ms,
            finished_ms: None,
            result: None,
            error: None,
        };
        let mut table = self.table();
        self.expire(&mut table, now_ms);
        table.insert(id, job.clone());
        job
    }

    pub fn get(&self, id: &str, now_ms: u64) -> Option<MeasurementJob> {
        let mut table = self.table();
        self.expire(&mut table, now_ms);
        table.get(id).cloned()
    }

    pub fn update(&self, id: &str, f: impl FnOnce(&mut MeasurementJob)) {
        if let Some(j) = self.table().get_mut(id) {
            f(j);
        }
    }
}
