//! Scenario configuration, the per-frame tracking loop, sweep and
//! Monte-Carlo drivers, and the CSV/JSON outputs.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector4, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::beamform::{alternating_optimize, initial_precoder_problem, AltOptSettings, BeamDesign, Combiner, Precoder, QosSpec, Reflection, SensingContext};
use crate::channel::{assemble_channels, effective_channels, sinr_and_rate, ArraySizes, ChannelSet, SubcarrierGrid};
use crate::ekf::{ekf_predict, ekf_step, invert_measurement, measure, measurement_variances, Measurement, propagate_truth, synthesize_measurement, MotionModel, UeKinematicState};
use crate::error::{Error, Result};
use crate::fim::{accumulate, frame_fim, invert_information, peb, FimRecursionState, ParamCrbs, Peb};
use crate::geometry::{measurement_gradients, BsHrisParams, GainModel, Position3, UeLinkParams, Velocity3};
use crate::linalg::CMatrix;
use crate::sdp::SdpProblem;

/// What to do when a frame's QoS targets cannot be met.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InfeasiblePolicy {
    /// Stop the run and report the frame.
    #[default]
    Abort,
    /// Design that frame for sensing alone and log the QoS miss.
    BestEffort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Carrier (Hz).
    pub f_c: f64,
    /// Subcarrier spacing (Hz).
    pub delta_f: f64,
    #[serde(rename = "K")]
    pub k: usize,
    /// Snapshots per frame.
    #[serde(rename = "T")]
    pub t: usize,
    /// Frames per run.
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N_T")]
    pub n_t: usize,
    #[serde(rename = "N_RF")]
    pub n_rf: usize,
    #[serde(rename = "N_E")]
    pub n_e: usize,
    #[serde(rename = "U")]
    pub u: usize,
    pub noise_dbm: f64,
    pub p_max_dbm: f64,
    pub gamma_db: f64,
    pub rho: f64,
    pub p_h: [f64; 3],
    pub t_s: f64,
    /// Process-noise intensity assumed by the filter.
    pub sigma_dot: f64,
    /// Process-noise intensity of the true trajectories; defaults to `sigma_dot`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_dot_truth: Option<f64>,
    pub init_x: [f64; 2],
    pub init_y: [f64; 2],
    pub init_z: [f64; 2],
    /// Per-axis speed magnitude range (m/s); the sign is drawn per axis.
    pub init_speed: [f64; 2],
    pub seed: u64,
    pub max_outer: usize,
    pub alt_tol: f64,
    /// Keep the uniform precoder, zero-phase combiner and zero reflection.
    pub fixed_beams: bool,
    pub on_infeasible: InfeasiblePolicy,
    /// When false the filter receives noiseless measurements.
    pub measurement_noise: bool,
    pub gain_model: GainModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            f_c: 20e9,
            delta_f: 120e3,
            k: 32,
            t: 200,
            m: 100,
            n_t: 16,
            n_rf: 5,
            n_e: 8,
            u: 3,
            noise_dbm: -100.0,
            p_max_dbm: 15.0,
            gamma_db: 10.0,
            rho: 0.5,
            p_h: [0.0, 50.0, 5.0],
            t_s: 0.1,
            sigma_dot: 0.1,
            sigma_dot_truth: None,
            init_x: [0.0, 10.0],
            init_y: [0.0, 50.0],
            init_z: [0.0, 10.0],
            init_speed: [1.0, 10.0],
            seed: 0,
            max_outer: 20,
            alt_tol: 1e-4,
            fixed_beams: false,
            on_infeasible: InfeasiblePolicy::Abort,
            measurement_noise: true,
            gain_model: GainModel::Squared,
        }
    }
}

fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

impl ScenarioConfig {
    /// Small scenario with UEs close enough to the BS for the 10 dB target
    /// to be reachable at 15 dBm: U=2, K=4, N_T=8, N_RF=2, N_E=4, M=20.
    pub fn desk() -> Self {
        Self {
            k: 4,
            m: 20,
            n_t: 8,
            n_rf: 2,
            n_e: 4,
            u: 2,
            init_x: [2.0, 6.0],
            init_y: [2.0, 8.0],
            init_z: [0.0, 2.0],
            init_speed: [0.2, 1.0],
            ..Self::default()
        }
    }

    pub fn sizes(&self) -> ArraySizes {
        ArraySizes {
            n_t: self.n_t,
            n_rf: self.n_rf,
            n_e: self.n_e,
        }
    }

    /// Noise power (W).
    pub fn sigma2(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }

    /// Power budget (W).
    pub fn p_max(&self) -> f64 {
        dbm_to_watts(self.p_max_dbm)
    }

    pub fn gamma(&self) -> f64 {
        10f64.powf(self.gamma_db / 10.0)
    }

    pub fn truth_sigma_dot(&self) -> f64 {
        self.sigma_dot_truth.unwrap_or(self.sigma_dot)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::validation(field, format!("must be positive and finite, got {v}")))
            }
        };
        let count = |field: &str, v: usize| {
            if v >= 1 {
                Ok(())
            } else {
                Err(Error::validation(field, "must be at least 1"))
            }
        };
        positive("f_c", self.f_c)?;
        positive("delta_f", self.delta_f)?;
        count("K", self.k)?;
        count("T", self.t)?;
        count("M", self.m)?;
        count("N_T", self.n_t)?;
        count("N_RF", self.n_rf)?;
        count("N_E", self.n_e)?;
        count("U", self.u)?;
        if self.u > self.n_t {
            return Err(Error::validation("U", format!("U ≤ N_T violated (U={}, N_T={})", self.u, self.n_t)));
        }
        if self.n_t > self.n_rf * self.n_e {
            return Err(Error::validation(
                "N_T",
                format!("N_T ≤ N_RF·N_E violated (N_T={}, N_RF·N_E={})", self.n_t, self.n_rf * self.n_e),
            ));
        }
        for (field, v) in [("noise_dbm", self.noise_dbm), ("p_max_dbm", self.p_max_dbm), ("gamma_db", self.gamma_db)] {
            if !v.is_finite() {
                return Err(Error::validation(field, "must be finite"));
            }
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::validation("rho", format!("must lie in [0, 1], got {}", self.rho)));
        }
        if self.p_h.iter().any(|v| !v.is_finite()) || Vector3::from(self.p_h).norm() <= 1e-6 {
            return Err(Error::validation("p_h", "must be finite and away from the BS"));
        }
        positive("t_s", self.t_s)?;
        if !(self.sigma_dot.is_finite() && self.sigma_dot >= 0.0) {
            return Err(Error::validation("sigma_dot", "must be non-negative"));
        }
        if let Some(s) = self.sigma_dot_truth {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::validation("sigma_dot_truth", "must be non-negative"));
            }
        }
        for (field, r) in [("init_x", self.init_x), ("init_y", self.init_y), ("init_z", self.init_z)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::validation(field, "range must be finite with min ≤ max"));
            }
        }
        let s = self.init_speed;
        if !(s[0].is_finite() && s[1].is_finite() && 0.0 <= s[0] && s[0] <= s[1]) {
            return Err(Error::validation("init_speed", "range must satisfy 0 ≤ min ≤ max"));
        }
        count("max_outer", self.max_outer)?;
        positive("alt_tol", self.alt_tol)?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    ScenarioConfig::from_toml_str(&fs::read_to_string(path)?)
}

pub fn save_config(cfg: &ScenarioConfig, path: &Path) -> Result<()> {
    fs::write(path, cfg.to_toml_string()?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UeFrameLog {
    pub true_position: Position3,
    pub est_position: Position3,
    pub true_velocity: Velocity3,
    pub est_velocity: Velocity3,
    pub crbs: ParamCrbs,
    /// `√Tr` of the position-domain bound implied by this UE's block of `J̃⁻¹`.
    pub position_bound: f64,
    /// Realized `Σ_k SINR` on the true channel (linear).
    pub sum_sinr: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameLog {
    /// 1-based.
    pub frame: usize,
    pub ues: Vec<UeFrameLog>,
    pub peb: f64,
    pub power: f64,
    pub rank_one_ratios: Vec<f64>,
    pub outer_iterations: usize,
    pub qos_satisfied: bool,
    pub fallback_used: bool,
    /// The frame was designed with the QoS constraints dropped.
    pub best_effort: bool,
}

impl FrameLog {
    pub fn min_rank_one_ratio(&self) -> f64 {
        self.rank_one_ratios.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean_rate(&self) -> f64 {
        self.ues.iter().map(|u| u.rate).sum::<f64>() / self.ues.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameStats {
    pub frame: usize,
    pub peb: f64,
    /// Root mean squared position error over UEs (m).
    pub position_rmse: f64,
    pub mean_position_bound: f64,
    pub mean_rate: f64,
    pub min_sum_sinr_db: f64,
    pub power: f64,
    pub outer_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub config: ScenarioConfig,
    pub seed: u64,
    /// Bounds are oracle quantities evaluated at the true parameters.
    pub fim_evaluated_at: String,
    /// Beams are designed on channels rebuilt at the EKF posterior.
    pub beams_designed_at: String,
    pub frames: Vec<FrameStats>,
    /// Per UE, over all frames (m).
    pub trajectory_rmse: Vec<f64>,
    /// Over all UEs and the last `final_window` frames.
    pub final_window: usize,
    pub final_rmse: f64,
    pub final_mean_position_bound: f64,
    pub best_effort_frames: usize,
    /// Excluded from summary.json so the file stays reproducible.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingRun {
    pub logs: Vec<FrameLog>,
    pub summary: RunSummary,
}

/// A run stopped early; `logs` holds every completed frame.
#[derive(Debug, thiserror::Error)]
#[error("run aborted at frame {frame}: {source}")]
pub struct RunAborted {
    pub frame: usize,
    #[source]
    pub source: Error,
    pub logs: Vec<FrameLog>,
}

impl RunAborted {
    pub fn is_infeasible(&self) -> bool {
        matches!(self.source, Error::InfeasibleQos { .. })
    }

    pub fn is_validation(&self) -> bool {
        matches!(self.source, Error::Validation { .. } | Error::Parse(_))
    }
}

/// Independent random streams so that, e.g., a ρ sweep sees the same
/// trajectories and noise draws at every point.
struct Streams {
    init: ChaCha8Rng,
    truth: ChaCha8Rng,
    meas: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |n: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(n);
            r
        };
        Self {
            init: stream(0),
            truth: stream(1),
            meas: stream(2),
        }
    }
}

struct InitialUe {
    state: Vector6<f64>,
    omega: f64,
}

fn draw_ues(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<InitialUe> {
    let uniform = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.random_range(r[0]..r[1]) };
    (0..cfg.u)
        .map(|_| {
            let p = [uniform(rng, cfg.init_x), uniform(rng, cfg.init_y), uniform(rng, cfg.init_z)];
            let mut v = [0.0; 3];
            for axis in &mut v {
                let mag = uniform(rng, cfg.init_speed);
                *axis = if rng.random_bool(0.5) { mag } else { -mag };
            }
            let omega = rng.random_range(0.0..2.0 * PI);
            InitialUe {
                state: Vector6::new(p[0], v[0], p[1], v[1], p[2], v[2]),
                omega,
            }
        })
        .collect()
}

fn position_of(s: &Vector6<f64>) -> Position3 {
    Vector3::new(s[0], s[2], s[4])
}

fn velocity_of(s: &Vector6<f64>) -> Velocity3 {
    Vector3::new(s[1], s[3], s[5])
}

/// `√Tr{(Gᵀ Σ⁻¹ G)⁻¹}` for one UE, with `Σ` its 4×4 block of `J̃⁻¹` and `G`
/// the measurement gradients at `p`.
pub fn position_bound(j_inv: &DMatrix<f64>, ue: usize, p: &Position3, p_h: &Position3) -> f64 {
    let u = j_inv.nrows() / 4;
    let idx = [ue, u + ue, 2 * u + ue, 3 * u + ue];
    let sigma = DMatrix::from_fn(4, 4, |a, b| j_inv[(idx[a], idx[b])]);
    let Ok(info) = invert_information(&sigma) else {
        return f64::INFINITY;
    };
    let Ok(grads) = measurement_gradients(p, p_h) else {
        return f64::INFINITY;
    };
    let g = DMatrix::from_fn(4, 3, |r, c| grads[r][c]);
    let jp = g.transpose() * info * g;
    match invert_information(&jp) {
        Ok(inv) => {
            let inv = Matrix3::from_iterator(inv.iter().copied());
            inv.trace().max(0.0).sqrt()
        }
        Err(_) => f64::INFINITY,
    }
}

fn centre(cfg: &ScenarioConfig) -> Position3 {
    Vector3::new(
        0.5 * (cfg.init_x[0] + cfg.init_x[1]),
        0.5 * (cfg.init_y[0] + cfg.init_y[1]),
        0.5 * (cfg.init_z[0] + cfg.init_z[1]),
    )
}

/// Prior implied by the initial draw: box centre, uniform-box position
/// variance and the mean square of the per-axis speed draw, at rest.
fn box_prior(cfg: &ScenarioConfig) -> UeKinematicState {
    let var = |r: [f64; 2]| ((r[1] - r[0]).powi(2) / 12.0).max(PRIOR_VARIANCE_FLOOR);
    let [a, b] = cfg.init_speed;
    let v = ((a * a + a * b + b * b) / 3.0).max(PRIOR_VARIANCE_FLOOR);
    let d = Vector6::new(var(cfg.init_x), v, var(cfg.init_y), v, var(cfg.init_z), v);
    UeKinematicState::new(centre(cfg), Velocity3::zeros(), Matrix6::from_diagonal(&d))
}

const PRIOR_VARIANCE_FLOOR: f64 = 1e-6;

/// `√tr((QᵀR⁻¹Q)⁻¹)` for diagonal measurement variances `r` at `p`.
fn measurement_position_std(r: &[f64; 4], p: &Position3, p_h: &Position3) -> f64 {
    let Ok(grads) = measurement_gradients(p, p_h) else {
        return f64::INFINITY;
    };
    let mut info = Matrix3::zeros();
    for (g, v) in grads.iter().zip(r) {
        info += g * g.transpose() / *v;
    }
    info.try_inverse().map_or(f64::INFINITY, |c| c.trace().max(0.0).sqrt())
}

/// First-frame estimate: the inverted measurement when it is exact or pins
/// the UE down better than the initial box does, otherwise the box prior.
fn bootstrap(cfg: &ScenarioConfig, meas: &Measurement, variances: &[f64; 4], p_h: &Position3) -> UeKinematicState {
    let prior = box_prior(cfg);
    let prior_std = prior.position_variance().sum().sqrt();
    if cfg.measurement_noise && !(measurement_position_std(variances, &prior.position(), p_h) < prior_std) {
        return prior;
    }
    let z = Vector4::new(meas.z[0], meas.z[1], meas.z[2], meas.z[3]);
    invert_measurement(&z, p_h, f64::INFINITY).map_or(prior, UeKinematicState::initial)
}

/// Runs `cfg.m` frames of tracking-aided beam design with seed `cfg.seed`.
pub fn run_tracking(cfg: &ScenarioConfig) -> std::result::Result<TrackingRun, RunAborted> {
    let started = std::time::Instant::now();
    let mut logs = Vec::with_capacity(cfg.m);
    let mut frame = 0;
    match frame_loop(cfg, &mut logs, &mut frame) {
        Ok(()) => {
            let mut summary = summarize(cfg, &logs);
            summary.wall_clock_s = started.elapsed().as_secs_f64();
            Ok(TrackingRun { logs, summary })
        }
        Err(source) => {
            let source = match source {
                Error::InfeasibleQos { .. } => Error::InfeasibleQos { frame: Some(frame) },
                e => e,
            };
            Err(RunAborted { frame, source, logs })
        }
    }
}

fn frame_loop(cfg: &ScenarioConfig, logs: &mut Vec<FrameLog>, frame: &mut usize) -> Result<()> {
    cfg.validate()?;
    let sizes = cfg.sizes();
    let (sigma2, p_max) = (cfg.sigma2(), cfg.p_max());
    let p_h: Position3 = Vector3::from(cfg.p_h);
    let grid = SubcarrierGrid::new(cfg.f_c, cfg.delta_f, cfg.k)?;
    let bs_hris = BsHrisParams::from_geometry_with(cfg.gain_model, &p_h, cfg.f_c)?;
    let filter = MotionModel::new(cfg.t_s, cfg.sigma_dot)?;
    let truth_model = MotionModel::new(cfg.t_s, cfg.truth_sigma_dot())?;
    let qos = QosSpec {
        gamma: vec![cfg.gamma(); cfg.u],
        p_max,
    };
    let relaxed = QosSpec {
        gamma: vec![cfg.gamma() * 1e-9; cfg.u],
        p_max,
    };
    let alt = AltOptSettings {
        max_outer: cfg.max_outer,
        tol: cfg.alt_tol,
        ..AltOptSettings::default()
    };

    let mut rng = Streams::new(cfg.seed);
    let init = draw_ues(cfg, &mut rng.init);
    let omegas: Vec<f64> = init.iter().map(|u| u.omega).collect();
    let mut truth: Vec<Vector6<f64>> = init.iter().map(|u| u.state).collect();
    let mut est: Vec<UeKinematicState> = Vec::new();
    let mut fim_state = FimRecursionState::new(cfg.u);
    let (mut w_h, mut precoder) = initial_beams(cfg)?;
    let mut reflection = Reflection::zeros(sizes.n_h());

    let links = |states: &[(Position3, Velocity3)]| -> Result<Vec<UeLinkParams>> {
        states
            .iter()
            .zip(&omegas)
            .map(|((p, v), &w)| UeLinkParams::from_geometry_with(cfg.gain_model, p, v, &p_h, cfg.f_c, w))
            .collect()
    };

    for m in 1..=cfg.m {
        *frame = m;
        for x in &mut truth {
            *x = propagate_truth(&truth_model, x, &mut rng.truth);
        }
        let true_pv: Vec<_> = truth.iter().map(|x| (position_of(x), velocity_of(x))).collect();
        let ch = assemble_channels(&grid, sizes, &links(&true_pv)?, &bs_hris, None)?;

        let j = frame_fim(&ch, &w_h, &precoder.f, cfg.rho, sigma2, cfg.t)?;
        fim_state = accumulate(&fim_state, &j)?;
        let (bound, j_inv) = match (peb(&fim_state), invert_information(&fim_state.j_tilde)) {
            (Ok(b), Ok(inv)) => (b, Some(inv)),
            (Err(Error::SingularInformation { .. }), _) | (_, Err(Error::SingularInformation { .. })) => (Peb::unbounded(cfg.u), None),
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };

        for u in 0..cfg.u {
            let next = match &j_inv {
                Some(_) => {
                    let variances = measurement_variances(&bound.per_param_crbs[u]);
                    let meas = if cfg.measurement_noise {
                        synthesize_measurement(&truth[u], &p_h, &variances, &mut rng.meas)?
                    } else {
                        Measurement::new(DVector::from_column_slice(measure(&truth[u], &p_h)?.as_slice()), &variances)?
                    };
                    if m == 1 {
                        bootstrap(cfg, &meas, &variances, &p_h)
                    } else {
                        ekf_step(&filter, &est[u], &meas, &p_h)?
                    }
                }
                None if m == 1 => box_prior(cfg),
                None => ekf_predict(&filter, &est[u]),
            };
            if m == 1 {
                est.push(next);
            } else {
                est[u] = next;
            }
        }

        let design = if cfg.fixed_beams {
            None
        } else {
            let est_pv: Vec<_> = est.iter().map(|e| (e.position(), e.velocity())).collect();
            let est_ch = assemble_channels(&grid, sizes, &links(&est_pv)?, &bs_hris, None)?;
            let ctx = SensingContext {
                rho: cfg.rho,
                sigma2,
                snapshots: cfg.t,
                prior: &fim_state,
            };
            Some(match alternating_optimize(&est_ch, &qos, &ctx, &alt) {
                Ok(d) => (d, false),
                Err(Error::InfeasibleQos { .. }) if cfg.on_infeasible == InfeasiblePolicy::BestEffort => {
                    (alternating_optimize(&est_ch, &relaxed, &ctx, &alt)?, true)
                }
                Err(e) => return Err(e),
            })
        };
        let (rank_one_ratios, outer_iterations, fallback_used, best_effort, designed_ok) = match design {
            Some((BeamDesign { precoder: f, combiner, reflection: r, report }, best_effort)) => {
                precoder = f;
                w_h = combiner.matrix();
                reflection = r;
                (report.rank_one_ratios, report.outer_iterations, report.fallback_used, best_effort, report.qos_satisfied && !best_effort)
            }
            None => (Vec::new(), 0, false, false, false),
        };

        let h_dir = effective_channels(&ch, &reflection.phi(), cfg.rho)?;
        let realized = sinr_and_rate(&h_dir, &precoder.f, sigma2)?;
        let ues = (0..cfg.u)
            .map(|u| UeFrameLog {
                true_position: true_pv[u].0,
                est_position: est[u].position(),
                true_velocity: true_pv[u].1,
                est_velocity: est[u].velocity(),
                crbs: bound.per_param_crbs[u],
                position_bound: j_inv.as_ref().map_or(f64::INFINITY, |inv| position_bound(inv, u, &true_pv[u].0, &p_h)),
                sum_sinr: realized.sum_sinr[u],
                rate: realized.rate[u],
            })
            .collect();
        logs.push(FrameLog {
            frame: m,
            ues,
            peb: bound.value,
            power: precoder.power(),
            rank_one_ratios,
            outer_iterations,
            qos_satisfied: designed_ok,
            fallback_used,
            best_effort,
        });
    }
    Ok(())
}

/// Rounds to 12 significant digits, the precision of every output file.
pub fn round12(x: f64) -> f64 {
    if x.is_finite() {
        fmt12(x).parse().unwrap_or(x)
    } else {
        x
    }
}

pub fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

pub const FINAL_WINDOW: usize = 5;

fn position_error2(u: &UeFrameLog) -> f64 {
    (u.est_position - u.true_position).norm_squared()
}

fn summarize(cfg: &ScenarioConfig, logs: &[FrameLog]) -> RunSummary {
    let frames = logs
        .iter()
        .map(|f| {
            let n = f.ues.len() as f64;
            FrameStats {
                frame: f.frame,
                peb: round12(f.peb),
                position_rmse: round12((f.ues.iter().map(position_error2).sum::<f64>() / n).sqrt()),
                mean_position_bound: round12(f.ues.iter().map(|u| u.position_bound).sum::<f64>() / n),
                mean_rate: round12(f.mean_rate()),
                min_sum_sinr_db: round12(f.ues.iter().map(|u| 10.0 * u.sum_sinr.log10()).fold(f64::INFINITY, f64::min)),
                power: round12(f.power),
                outer_iterations: f.outer_iterations,
            }
        })
        .collect();
    let trajectory_rmse = (0..cfg.u)
        .map(|u| round12((logs.iter().map(|f| position_error2(&f.ues[u])).sum::<f64>() / logs.len() as f64).sqrt()))
        .collect();
    let window = FINAL_WINDOW.min(logs.len());
    let tail = &logs[logs.len() - window..];
    let samples = (window * cfg.u) as f64;
    RunSummary {
        config: cfg.clone(),
        seed: cfg.seed,
        fim_evaluated_at: "truth".into(),
        beams_designed_at: "ekf_posterior".into(),
        frames,
        trajectory_rmse,
        final_window: window,
        final_rmse: round12((tail.iter().flat_map(|f| f.ues.iter().map(position_error2)).sum::<f64>() / samples).sqrt()),
        final_mean_position_bound: round12(tail.iter().flat_map(|f| f.ues.iter().map(|u| u.position_bound)).sum::<f64>() / samples),
        best_effort_frames: logs.iter().filter(|f| f.best_effort).count(),
        wall_clock_s: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub rho: f64,
    pub final_peb: f64,
    /// Mean over UEs and frames (bit/s/Hz).
    pub mean_rate: f64,
}

/// One run per ρ, all with the configured seed.
pub fn sweep_rho(cfg: &ScenarioConfig, rho_values: &[f64]) -> std::result::Result<Vec<TradeoffRow>, RunAborted> {
    if let Some(&bad) = rho_values.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(RunAborted {
            frame: 0,
            source: Error::validation("rho", format!("sweep value {bad} outside [0, 1]")),
            logs: Vec::new(),
        });
    }
    rho_values
        .par_iter()
        .map(|&rho| {
            let run = run_tracking(&ScenarioConfig { rho, ..cfg.clone() })?;
            let frames = run.logs.len() as f64;
            Ok(TradeoffRow {
                rho,
                final_peb: run.logs.last().map_or(f64::INFINITY, |f| f.peb),
                mean_rate: run.logs.iter().map(FrameLog::mean_rate).sum::<f64>() / frames,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub seeds: Vec<u64>,
    /// Mean over seeds, per frame.
    pub mean_peb: Vec<f64>,
    pub position_rmse: Vec<f64>,
    pub mean_position_bound: Vec<f64>,
    pub mean_rate: Vec<f64>,
    /// Pooled over seeds, UEs and the final window.
    pub final_rmse: f64,
    pub final_mean_position_bound: f64,
}

/// Runs the seeds `cfg.seed, cfg.seed + 1, …` and pools the results.
pub fn monte_carlo(cfg: &ScenarioConfig, runs: usize) -> std::result::Result<MonteCarloSummary, RunAborted> {
    let seeds: Vec<u64> = (0..runs as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let results = seeds
        .par_iter()
        .map(|&seed| run_tracking(&ScenarioConfig { seed, ..cfg.clone() }))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(aggregate(seeds, &results))
}

pub fn aggregate(seeds: Vec<u64>, runs: &[TrackingRun]) -> MonteCarloSummary {
    let n = runs.len() as f64;
    let frames = runs.iter().map(|r| r.logs.len()).min().unwrap_or(0);
    let per_frame = |f: &dyn Fn(&FrameStats) -> f64| -> Vec<f64> {
        (0..frames).map(|m| round12(runs.iter().map(|r| f(&r.summary.frames[m])).sum::<f64>() / n)).collect()
    };
    let rmse = (0..frames)
        .map(|m| round12((runs.iter().map(|r| r.summary.frames[m].position_rmse.powi(2)).sum::<f64>() / n).sqrt()))
        .collect();
    MonteCarloSummary {
        seeds,
        mean_peb: per_frame(&|s| s.peb),
        position_rmse: rmse,
        mean_position_bound: per_frame(&|s| s.mean_position_bound),
        mean_rate: per_frame(&|s| s.mean_rate),
        final_rmse: round12((runs.iter().map(|r| r.summary.final_rmse.powi(2)).sum::<f64>() / n).sqrt()),
        final_mean_position_bound: round12(runs.iter().map(|r| r.summary.final_mean_position_bound).sum::<f64>() / n),
    }
}

pub const FRAMES_HEADER: [&str; 24] = [
    "frame", "ue", "true_x", "true_y", "true_z", "est_x", "est_y", "est_z", "true_vx", "true_vy", "true_vz", "est_vx", "est_vy", "est_vz", "peb",
    "crb_theta", "crb_psi", "crb_phi", "crb_tau", "sum_sinr_db", "rate_bpshz", "power_w", "outer_iters", "rank1_min",
];

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn write_frames_csv(logs: &[FrameLog], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(FRAMES_HEADER).map_err(csv_error)?;
    for f in logs {
        for (u, ue) in f.ues.iter().enumerate() {
            let mut row = vec![f.frame.to_string(), u.to_string()];
            let nums = [
                ue.true_position.x,
                ue.true_position.y,
                ue.true_position.z,
                ue.est_position.x,
                ue.est_position.y,
                ue.est_position.z,
                ue.true_velocity.x,
                ue.true_velocity.y,
                ue.true_velocity.z,
                ue.est_velocity.x,
                ue.est_velocity.y,
                ue.est_velocity.z,
                f.peb,
                ue.crbs.theta,
                ue.crbs.psi,
                ue.crbs.phi,
                ue.crbs.tau,
                10.0 * ue.sum_sinr.log10(),
                ue.rate,
                f.power,
            ];
            row.extend(nums.iter().map(|&x| fmt12(x)));
            row.push(f.outer_iterations.to_string());
            row.push(fmt12(f.min_rank_one_ratio()));
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes `frames.csv` and, when given, `summary.json` into `out_dir`.
pub fn emit_outputs(logs: &[FrameLog], summary: Option<&RunSummary>, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    write_frames_csv(logs, &out_dir.join("frames.csv"))?;
    if let Some(s) = summary {
        write_json(s, &out_dir.join("summary.json"))?;
    }
    Ok(())
}

pub fn write_tradeoff(rows: &[TradeoffRow], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join("tradeoff.csv")).map_err(csv_error)?;
    w.write_record(["rho", "final_peb", "mean_rate_bpshz"]).map_err(csv_error)?;
    for r in rows {
        w.write_record([fmt12(r.rho), fmt12(r.final_peb), fmt12(r.mean_rate)]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate(mc: &MonteCarloSummary, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    write_json(mc, &out_dir.join("aggregate.json"))
}

/// True channels of the initial UE draw of `cfg`.
pub fn initial_channels(cfg: &ScenarioConfig) -> Result<ChannelSet> {
    cfg.validate()?;
    let p_h: Position3 = Vector3::from(cfg.p_h);
    let grid = SubcarrierGrid::new(cfg.f_c, cfg.delta_f, cfg.k)?;
    let bs_hris = BsHrisParams::from_geometry_with(cfg.gain_model, &p_h, cfg.f_c)?;
    let init = draw_ues(cfg, &mut Streams::new(cfg.seed).init);
    let links = init
        .iter()
        .map(|u| UeLinkParams::from_geometry_with(cfg.gain_model, &position_of(&u.state), &velocity_of(&u.state), &p_h, cfg.f_c, u.omega))
        .collect::<Result<Vec<_>>>()?;
    assemble_channels(&grid, cfg.sizes(), &links, &bs_hris, None)
}

/// The first precoder SDP a run of `cfg` would face, built on
/// [`initial_channels`].
pub fn initial_precoder_instance(cfg: &ScenarioConfig) -> Result<SdpProblem> {
    let ch = initial_channels(cfg)?;
    let qos = QosSpec {
        gamma: vec![cfg.gamma(); cfg.u],
        p_max: cfg.p_max(),
    };
    initial_precoder_problem(&ch, &qos, cfg.rho, cfg.sigma2())
}

/// Beams for the first frame: equal-power spread precoder and zero-phase
/// combiner.
pub fn initial_beams(cfg: &ScenarioConfig) -> Result<(CMatrix, Precoder)> {
    Ok((Combiner::zero_phase(cfg.sizes()).matrix(), Precoder::spread(cfg.k, cfg.u, cfg.n_t, cfg.p_max())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ReflectionPath;
    use crate::geometry::BsHrisParams;

    /// Noisy desk runs cannot locate the UEs well enough to meet the target
    /// from the first frame on, so plumbing tests run best effort.
    fn tiny() -> ScenarioConfig {
        ScenarioConfig {
            m: 3,
            on_infeasible: InfeasiblePolicy::BestEffort,
            ..ScenarioConfig::desk()
        }
    }

    #[test]
    fn empty_config_gives_defaults() {
        assert_eq!(ScenarioConfig::from_toml_str("").unwrap(), ScenarioConfig::default());
        let d = ScenarioConfig::default();
        assert_eq!((d.k, d.t, d.m, d.n_t, d.n_rf, d.n_e, d.u), (32, 200, 100, 16, 5, 8, 3));
        assert!((d.sigma2() - 1e-13).abs() < 1e-25);
        assert!((d.p_max() - 0.031_622_776_601_683_79).abs() < 1e-15);
        assert!((d.gamma() - 10.0).abs() < 1e-12);
        assert_eq!(d.p_h, [0.0, 50.0, 5.0]);
        assert_eq!(d.truth_sigma_dot(), 0.1);
    }

    #[test]
    fn validation_names_field() {
        let err = ScenarioConfig::from_toml_str("U = 20\nN_T = 16\n").unwrap_err();
        match err {
            Error::Validation { field, message } => {
                assert_eq!(field, "U");
                assert!(message.contains("U ≤ N_T"));
            }
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(ScenarioConfig::from_toml_str("rho = 1.5"), Err(Error::Validation { field, .. }) if field == "rho"));
        assert!(matches!(ScenarioConfig::from_toml_str("N_T = 50"), Err(Error::Validation { field, .. }) if field == "N_T"));
        assert!(matches!(ScenarioConfig::from_toml_str("bogus = 1"), Err(Error::Parse(_))));
        assert!(matches!(ScenarioConfig::from_toml_str("K = \"many\""), Err(Error::Parse(_))));
    }

    #[test]
    fn config_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        let cfg = ScenarioConfig {
            sigma_dot_truth: Some(0.0),
            rho: 0.3,
            seed: 77,
            on_infeasible: InfeasiblePolicy::BestEffort,
            ..ScenarioConfig::desk()
        };
        save_config(&cfg, &path).unwrap();
        assert_eq!(load_config(&path).unwrap(), cfg);
        assert!(matches!(load_config(&dir.path().join("missing.toml")), Err(Error::Io(_))));
    }

    #[test]
    fn single_frame_peb_is_single_frame_bound() {
        let cfg = ScenarioConfig {
            m: 1,
            u: 1,
            ..ScenarioConfig::desk()
        };
        let run = run_tracking(&cfg).unwrap();
        assert_eq!(run.logs.len(), 1);
        let ue = &run.logs[0].ues[0];

        // rebuild the frame-1 channel from the logged truth; with one UE the gain phase cancels
        let p_h = Vector3::from(cfg.p_h);
        let link = UeLinkParams::from_geometry(&ue.true_position, &ue.true_velocity, &p_h, cfg.f_c, 0.0).unwrap();
        let grid = SubcarrierGrid::new(cfg.f_c, cfg.delta_f, cfg.k).unwrap();
        let br = BsHrisParams::from_geometry(&p_h, cfg.f_c).unwrap();
        let ch = assemble_channels(&grid, cfg.sizes(), &[link], &br, None).unwrap();
        assert_eq!(ch.paths.len(), 1);
        let _: &ReflectionPath = &ch.paths[0];
        let (w, f) = initial_beams(&cfg).unwrap();
        let j = frame_fim(&ch, &w, &f.f, cfg.rho, cfg.sigma2(), cfg.t).unwrap();
        let expected = peb(&accumulate(&FimRecursionState::new(1), &j).unwrap()).unwrap();
        assert!((run.logs[0].peb - expected.value).abs() <= 1e-9 * expected.value, "{} vs {}", run.logs[0].peb, expected.value);
    }

    #[test]
    fn static_fixed_beams_peb_non_increasing() {
        let cfg = ScenarioConfig {
            m: 12,
            sigma_dot: 0.0,
            init_speed: [0.0, 0.0],
            fixed_beams: true,
            ..ScenarioConfig::desk()
        };
        let run = run_tracking(&cfg).unwrap();
        for w in run.logs.windows(2) {
            assert!(w[1].peb <= w[0].peb * (1.0 + 1e-9), "{} -> {}", w[0].peb, w[1].peb);
        }
        // information grows linearly, so the bound falls like 1/√m
        let ratio = run.logs[11].peb / run.logs[0].peb;
        assert!((ratio - (1.0f64 / 12.0).sqrt()).abs() < 1e-6, "{ratio}");
    }

    #[test]
    fn same_seed_same_logs() {
        let a = run_tracking(&tiny()).unwrap();
        let b = run_tracking(&tiny()).unwrap();
        assert_eq!(a.logs, b.logs);
        let c = run_tracking(&ScenarioConfig { seed: 1, ..tiny() }).unwrap();
        assert_ne!(a.logs[0].ues[0].true_position, c.logs[0].ues[0].true_position);
    }

    #[test]
    fn zero_rho_is_unbounded() {
        let rows = sweep_rho(&tiny(), &[0.0]).unwrap();
        assert!(rows[0].final_peb.is_infinite());
        let run = run_tracking(&ScenarioConfig { rho: 0.0, ..tiny() }).unwrap();
        assert!(run.logs.iter().all(|f| f.peb.is_infinite()));
        assert!(sweep_rho(&tiny(), &[1.2]).unwrap_err().is_validation());
    }

    #[test]
    fn full_absorption_rate_uses_direct_link_only() {
        let cfg = ScenarioConfig { rho: 1.0, m: 2, ..tiny() };
        let a = run_tracking(&cfg).unwrap();
        assert!(a.logs.iter().all(|f| f.ues.iter().all(|u| u.rate.is_finite() && u.rate > 0.0)));
        // with ρ = 1 the reflection cannot matter: rebuild h_dir with a different φ
        let p_h = Vector3::from(cfg.p_h);
        let grid = SubcarrierGrid::new(cfg.f_c, cfg.delta_f, cfg.k).unwrap();
        let br = BsHrisParams::from_geometry(&p_h, cfg.f_c).unwrap();
        let links: Vec<_> = a.logs[0]
            .ues
            .iter()
            .map(|u| UeLinkParams::from_geometry(&u.true_position, &u.true_velocity, &p_h, cfg.f_c, 0.0).unwrap())
            .collect();
        let ch = assemble_channels(&grid, cfg.sizes(), &links, &br, None).unwrap();
        let h0 = effective_channels(&ch, &Reflection::zeros(8).phi(), 1.0).unwrap();
        let h1 = effective_channels(&ch, &Reflection { upsilon: vec![1.0; 8] }.phi(), 1.0).unwrap();
        for (x, y) in h0.iter().flatten().zip(h1.iter().flatten()) {
            assert_eq!(x, y);
        }
        for (row, dl) in h0.iter().zip(&ch.h_dl) {
            assert_eq!(row, dl);
        }
    }

    #[test]
    fn noiseless_static_run_meets_qos() {
        let cfg = ScenarioConfig {
            m: 3,
            sigma_dot: 0.0,
            init_speed: [0.0, 0.0],
            measurement_noise: false,
            ..ScenarioConfig::desk()
        };
        let run = run_tracking(&cfg).unwrap();
        let floor_db = cfg.gamma_db - 0.1;
        for f in &run.logs {
            for u in &f.ues {
                assert!((u.est_position - u.true_position).norm() < 1e-6);
                if f.qos_satisfied {
                    assert!(10.0 * u.sum_sinr.log10() >= floor_db - 1e-9, "{}", 10.0 * u.sum_sinr.log10());
                }
            }
            assert!(f.qos_satisfied);
            assert!(f.power <= cfg.p_max() * (1.0 + 1e-6));
        }
    }

    #[test]
    fn infeasible_run_aborts_with_partial_logs() {
        let cfg = ScenarioConfig {
            gamma_db: 60.0,
            on_infeasible: InfeasiblePolicy::Abort,
            ..tiny()
        };
        let err = run_tracking(&cfg).unwrap_err();
        assert!(err.is_infeasible());
        assert_eq!(err.frame, 1);
        assert!(err.logs.is_empty());
        assert!(matches!(err.source, Error::InfeasibleQos { frame: Some(1) }));

        let soft = run_tracking(&ScenarioConfig { on_infeasible: InfeasiblePolicy::BestEffort, ..cfg }).unwrap();
        assert_eq!(soft.logs.len(), 3);
        assert!(soft.logs.iter().all(|f| f.best_effort && !f.qos_satisfied));
        assert_eq!(soft.summary.best_effort_frames, 3);
    }

    #[test]
    fn outputs_round_trip_and_repeat() {
        let cfg = ScenarioConfig { m: 2, u: 1, ..ScenarioConfig::desk() };
        let run = run_tracking(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_outputs(&run.logs, Some(&run.summary), dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("frames.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap(), FRAMES_HEADER.join(","));

        let mut reader = csv::Reader::from_path(dir.path().join("frames.csv")).unwrap();
        for (rec, f) in reader.records().zip(&run.logs) {
            let rec = rec.unwrap();
            let ue = &f.ues[0];
            let get = |i: usize| rec[i].parse::<f64>().unwrap();
            assert_eq!(rec[0].parse::<usize>().unwrap(), f.frame);
            assert_eq!(get(2), round12(ue.true_position.x));
            assert_eq!(get(6), round12(ue.est_position.y));
            assert_eq!(get(14), round12(f.peb));
            assert_eq!(get(18), round12(ue.crbs.tau));
            assert_eq!(get(20), round12(ue.rate));
            assert_eq!(rec[22].parse::<usize>().unwrap(), f.outer_iterations);
            assert_eq!(get(23), round12(f.min_rank_one_ratio()));
        }

        let again = run_tracking(&cfg).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        emit_outputs(&again.logs, Some(&again.summary), dir2.path()).unwrap();
        for name in ["frames.csv", "summary.json"] {
            assert_eq!(fs::read(dir.path().join(name)).unwrap(), fs::read(dir2.path().join(name)).unwrap());
        }
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(json["fim_evaluated_at"], "truth");
        assert!(json.get("wall_clock_s").is_none());
    }

    #[test]
    fn twelve_digit_rounding() {
        assert_eq!(fmt12(1.0), "1.00000000000e0");
        assert_eq!(round12(0.123_456_789_012_345), 0.123_456_789_012);
        assert!(round12(f64::INFINITY).is_infinite());
    }

    #[test]
    fn monte_carlo_pools_seeds() {
        let cfg = ScenarioConfig { m: 2, ..tiny() };
        let mc = monte_carlo(&cfg, 2).unwrap();
        assert_eq!(mc.seeds, vec![0, 1]);
        assert_eq!(mc.mean_peb.len(), 2);
        let a = run_tracking(&cfg).unwrap();
        let b = run_tracking(&ScenarioConfig { seed: 1, ..cfg }).unwrap();
        let expect = round12((a.summary.frames[1].peb + b.summary.frames[1].peb) / 2.0);
        assert_eq!(mc.mean_peb[1], expect);
    }

    #[test]
    fn position_bound_matches_direct_inverse() {
        let p_h = Vector3::new(0.0, 50.0, 5.0);
        let p = Vector3::new(4.0, 7.0, 1.0);
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-6, 2e-6, 3e-6, 1e-20]));
        let grads = measurement_gradients(&p, &p_h).unwrap();
        let g = DMatrix::from_fn(4, 3, |r, c| grads[r][c]);
        let info = g.transpose() * sigma.clone().try_inverse().unwrap() * g;
        let direct = info.try_inverse().unwrap().trace().sqrt();
        let got = position_bound(&sigma, 0, &p, &p_h);
        assert!((got - direct).abs() <= 1e-9 * direct, "{got} vs {direct}");
    }
}
