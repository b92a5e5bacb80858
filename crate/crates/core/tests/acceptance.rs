//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! stderr (uncaptured, so it shows in a plain `cargo test` log) and then
//! asserts.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Display;
use std::io::Write;
use std::time::Instant;

use hrisim::beamform::{
    combiner_sensing_matrices, communication_matrices, precoder_sensing_matrices, reflection_objective, reflection_updates,
    solve_combiner, solve_precoder, solve_reflection, AltOptSettings, Combiner, Precoder, QosSpec, Reflection, SensingDerivatives,
};
use hrisim::channel::{
    assemble_channels, complex_gaussian, effective_channels, sinr_and_rate, symbol_block, ArraySizes, ChannelSet, SubcarrierGrid,
};
use hrisim::ekf::{
    ekf_step, ekf_step_with, invert_measurement, synthesize_measurement, Measurement, MeasurementModel, MotionModel, UeKinematicState,
};
use hrisim::fim::{accumulate, frame_fim, FimRecursionState};
use hrisim::geometry::{BsHrisParams, Position3, UeLinkParams, Velocity3, SPEED_OF_LIGHT};
use hrisim::linalg::CMatrix;
use hrisim::sdp::{residuals, solve, BlockSpec, Constraint, SdpProblem, SdpSettings, SdpStatus, Sense};
use hrisim::sim::{
    aggregate, emit_outputs, initial_beams, initial_channels, run_tracking, sweep_rho, FrameLog, InfeasiblePolicy, ScenarioConfig,
    TrackingRun,
};
use nalgebra::{DMatrix, DVector, Vector4, Vector6};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn report(id: u32, title: &str, started: Instant, outcome: Outcome) {
    let secs = started.elapsed().as_secs_f64();
    let line = match &outcome {
        Ok(detail) => format!("acceptance {id:>2} PASS  {title}: {detail} [{secs:.1} s]"),
        Err(detail) => format!("acceptance {id:>2} FAIL  {title}: {detail} [{secs:.1} s]"),
    };
    let _ = writeln!(std::io::stderr(), "{line}");
    if let Err(detail) = outcome {
        panic!("{title}: {detail}");
    }
}

fn ok<T, E: Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn p_h() -> Position3 {
    Position3::new(0.0, 50.0, 5.0)
}

fn channels(
    sizes: ArraySizes,
    k: usize,
    ues: &[(Position3, Velocity3, f64)],
    phases: Option<&[Complex64]>,
) -> Result<ChannelSet, String> {
    let f_c = 20e9;
    let grid = ok(SubcarrierGrid::new(f_c, 120e3, k))?;
    let links = ues
        .iter()
        .map(|(p, v, w)| ok(UeLinkParams::from_geometry(p, v, &p_h(), f_c, *w)))
        .collect::<Result<Vec<_>, _>>()?;
    let br = ok(BsHrisParams::from_geometry(&p_h(), f_c))?;
    ok(assemble_channels(&grid, sizes, &links, &br, phases))
}

fn random_combiner<R: Rng>(sizes: ArraySizes, rng: &mut R) -> CMatrix {
    Combiner {
        phases: (0..sizes.n_rf).map(|_| (0..sizes.n_e).map(|_| rng.random_range(-PI..PI)).collect()).collect(),
    }
    .matrix()
}

fn random_ue<R: Rng>(rng: &mut R) -> (Position3, Velocity3, f64) {
    (
        Position3::new(rng.random_range(1.0..10.0), rng.random_range(0.0..45.0), rng.random_range(0.0..10.0)),
        Velocity3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)),
        rng.random_range(0.0..TAU),
    )
}

fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = ((m + m.transpose()) * 0.5).symmetric_eigenvalues();
    (ev.min(), ev.max())
}

/// Noiseless received block of every subcarrier, stacked.
fn stacked_mean(ch: &ChannelSet, w_h: &CMatrix, f: &[CMatrix], rho: f64, t: usize) -> Vec<Complex64> {
    let u = ch.num_ues();
    (0..ch.num_subcarriers())
        .flat_map(|k| {
            let s = symbol_block(k, u, t).unwrap();
            let y = (w_h.adjoint() * &ch.h_h[k] * &f[k] * s) * Complex64::new(rho, 0.0);
            y.iter().copied().collect::<Vec<_>>()
        })
        .collect()
}

fn perturbed(ch: &ChannelSet, param: usize, delta: f64) -> ChannelSet {
    let mut c = ch.clone();
    let p = &mut c.paths[0];
    match param {
        0 => p.theta += delta,
        1 => p.psi += delta,
        2 => p.phi += delta,
        _ => p.tau_h += delta,
    }
    c.rebuild_bistatic();
    c
}

#[test]
fn c01_fim_matches_finite_differences() {
    let started = Instant::now();
    let run = || -> Outcome {
        let sizes = ArraySizes { n_t: 4, n_rf: 2, n_e: 2 };
        let phases = [Complex64::from_polar(1.0, 0.3), Complex64::from_polar(1.0, -1.1)];
        let ue = (Position3::new(6.0, 20.0, 1.5), Velocity3::new(1.0, -2.0, 0.5), 0.7);
        let ch = channels(sizes, 2, &[ue], Some(&phases))?;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w_h = random_combiner(sizes, &mut rng);
        let f: Vec<CMatrix> = (0..2).map(|_| complex_gaussian(4, 1, 1.0, &mut rng)).collect();
        let (rho, sigma2, t) = (0.6, 1e-13, 8);
        let analytic = ok(frame_fim(&ch, &w_h, &f, rho, sigma2, t))?;

        // fourth-order central differences of the stacked mean
        let steps = [1e-5, 1e-5, 1e-5, 1e-5 / (TAU * 20e9)];
        let derivs: Vec<Vec<Complex64>> = (0..4)
            .map(|i| {
                let h = steps[i];
                let at = |d: f64| stacked_mean(&perturbed(&ch, i, d), &w_h, &f, rho, t);
                let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
                (0..p1.len()).map(|n| (m2[n] - p2[n] + (p1[n] - m1[n]) * 8.0) / (12.0 * h)).collect()
            })
            .collect();
        let fd = DMatrix::from_fn(4, 4, |i, j| {
            2.0 / sigma2 * derivs[i].iter().zip(&derivs[j]).map(|(a, b)| (a.conj() * b).re).sum::<f64>()
        });
        let err = rel_frobenius(&analytic, &fd);
        // the delay entries dominate the plain norm; also compare after equilibration
        let d = DVector::from_fn(4, |i, _| 1.0 / fd[(i, i)].sqrt());
        let eq = |m: &DMatrix<f64>| DMatrix::from_fn(4, 4, |i, j| m[(i, j)] * d[i] * d[j]);
        let err_eq = rel_frobenius(&eq(&analytic), &eq(&fd));
        let secs = started.elapsed().as_secs_f64();
        let detail = format!("relative Frobenius error {err:.2e} (equilibrated {err_eq:.2e}), {secs:.2} s");
        if err <= 1e-5 && err_eq <= 1e-5 && secs < 5.0 {
            Ok(detail)
        } else {
            Err(detail)
        }
    };
    report(1, "FIM matches finite differences", started, run());
}

#[test]
fn c02_fim_structure_over_random_scenarios() {
    let started = Instant::now();
    let run = || -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut worst_asym, mut worst_psd, mut worst_scale) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..200 {
            let n_rf = rng.random_range(1..=3);
            let n_e = rng.random_range(1..=3);
            let n_t = rng.random_range(1..=(n_rf * n_e).min(6));
            let u = rng.random_range(1..=n_t.min(3));
            let k = rng.random_range(1..=4);
            let sizes = ArraySizes { n_t, n_rf, n_e };
            let ues: Vec<_> = (0..u).map(|_| random_ue(&mut rng)).collect();
            let phases: Vec<Complex64> = (0..k).map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..TAU))).collect();
            let ch = channels(sizes, k, &ues, Some(&phases))?;
            let w_h = random_combiner(sizes, &mut rng);
            let f: Vec<CMatrix> = (0..k).map(|_| complex_gaussian(n_t, u, 1.0, &mut rng)).collect();
            let rho = rng.random_range(0.05..1.0);
            let sigma2 = 10f64.powf(rng.random_range(-14.0..-10.0));
            let t = rng.random_range(1..=300);
            let j = ok(frame_fim(&ch, &w_h, &f, rho, sigma2, t))?;
            worst_asym = worst_asym.max((&j - j.transpose()).norm() / j.norm());
            let (lo, hi) = eigen_range(&j);
            worst_psd = worst_psd.max(-lo / hi);
            let scaled = [
                (ok(frame_fim(&ch, &w_h, &f, 2.0 * rho, sigma2, t))?, 4.0),
                (ok(frame_fim(&ch, &w_h, &f, rho, sigma2, 3 * t))?, 3.0),
                (ok(frame_fim(&ch, &w_h, &f, rho, 2.0 * sigma2, t))?, 0.5),
            ];
            for (m, factor) in scaled {
                worst_scale = worst_scale.max(rel_frobenius(&m, &(&j * factor)));
            }
        }
        let detail = format!("max asymmetry {worst_asym:.1e}, max -λmin/λmax {worst_psd:.1e}, max scaling error {worst_scale:.1e}");
        if worst_asym <= 1e-10 && worst_psd <= 1e-9 && worst_scale <= 1e-12 {
            Ok(detail)
        } else {
            Err(detail)
        }
    };
    report(2, "FIM symmetric, PSD and scales as ρ², T, 1/σ²", started, run());
}

#[test]
fn c03_peb_recursion_static_fixed_beams() {
    let started = Instant::now();
    let run = || -> Outcome {
        let cfg = ScenarioConfig {
            m: 20,
            init_speed: [0.0, 0.0],
            sigma_dot_truth: Some(0.0),
            fixed_beams: true,
            ..ScenarioConfig::desk()
        };
        let logs = ok(run_tracking(&cfg))?.logs;
        let mut worst_rise = f64::NEG_INFINITY;
        for w in logs.windows(2) {
            worst_rise = worst_rise.max((w[1].peb - w[0].peb) / w[0].peb);
        }
        // the same recursion evaluated directly
        let ch = ok(initial_channels(&cfg))?;
        let (w_h, pre) = ok(initial_beams(&cfg))?;
        let j = ok(frame_fim(&ch, &w_h, &pre.f, cfg.rho, cfg.sigma2(), cfg.t))?;
        let mut state = FimRecursionState::new(cfg.u);
        let mut worst_increment = 0.0f64;
        for _ in 0..20 {
            let next = ok(accumulate(&state, &j))?;
            let (lo, hi) = eigen_range(&(&next.j_tilde - &state.j_tilde));
            worst_increment = worst_increment.max(-lo / hi);
            state = next;
        }
        let detail = format!(
            "{} frames, PEB {:.3e} → {:.3e}, largest relative rise {worst_rise:.1e}, worst increment -λmin/λmax {worst_increment:.1e}",
            logs.len(),
            logs[0].peb,
            logs[logs.len() - 1].peb
        );
        if logs.len() == 20 && worst_rise <= 1e-9 && worst_increment <= 1e-9 {
            Ok(detail)
        } else {
            Err(detail)
        }
    };
    report(3, "PEB non-increasing for static UEs and fixed beams", started, run());
}

/// Measures an arbitrary linear map of the state.
struct LinearMap(DMatrix<f64>);

impl MeasurementModel for LinearMap {
    fn predict(&self, s: &Vector6<f64>) -> hrisim::Result<DVector<f64>> {
        Ok(&self.0 * DVector::from_column_slice(s.as_slice()))
    }

    fn jacobian(&self, _: &Vector6<f64>) -> hrisim::Result<DMatrix<f64>> {
        Ok(self.0.clone())
    }
}

/// Textbook Kalman filter with an explicit inverse.
fn reference_kf(x: &DVector<f64>, p: &DMatrix<f64>, f: &DMatrix<f64>, q: &DMatrix<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let xp = f * x;
    let pp = f * p * f.transpose() + q;
    let s = h * &pp * h.transpose() + r;
    let k = &pp * h.transpose() * s.try_inverse().unwrap();
    let xn = &xp + &k * (z - h * &xp);
    let pn = (DMatrix::identity(6, 6) - &k * h) * &pp;
    (xn, (&pn + pn.transpose()) * 0.5)
}

#[test]
fn c04_ekf_reduction_and_static_convergence() {
    let started = Instant::now();
    let run = || -> Outcome {
        // (a) linear measurement model against the reference filter
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let motion = ok(MotionModel::new(0.1, 0.3))?;
        let h = DMatrix::from_fn(4, 6, |_, _| rng.random_range(-1.0..1.0));
        let var = [0.5, 0.2, 0.8, 1.3];
        let r = DMatrix::from_diagonal(&DVector::from_column_slice(&var));
        let f = DMatrix::from_column_slice(6, 6, motion.f_xi.as_slice());
        let q = DMatrix::from_column_slice(6, 6, motion.p_u.as_slice());
        let mut st = UeKinematicState::initial(Position3::new(1.0, 2.0, 3.0));
        let mut x = DVector::from_column_slice(st.state.as_slice());
        let mut p = DMatrix::from_column_slice(6, 6, st.mse.as_slice());
        let mut worst_a = 0.0f64;
        for _ in 0..30 {
            let z = DVector::from_fn(4, |_, _| rng.random_range(-5.0..5.0));
            st = ok(ekf_step_with(&motion, &LinearMap(h.clone()), &st, &ok(Measurement::new(z.clone(), &var))?))?;
            (x, p) = reference_kf(&x, &p, &f, &q, &h, &r, &z);
            let dx = (DVector::from_column_slice(st.state.as_slice()) - &x).amax() / x.amax().max(1.0);
            let dp = (DMatrix::from_column_slice(6, 6, st.mse.as_slice()) - &p).amax() / p.amax().max(1.0);
            worst_a = worst_a.max(dx).max(dp);
        }

        // (b) static UE, σ̇ = 0, fixed measurement noise
        let motion = ok(MotionModel::new(0.1, 0.0))?;
        let truth = Vector6::new(4.0, 0.0, 20.0, 0.0, 1.5, 0.0);
        let p_true = Position3::new(4.0, 20.0, 1.5);
        let var = [4e-6, 4e-6, 4e-6, (0.05 / SPEED_OF_LIGHT).powi(2)];
        let (mut ekf_sq, mut ekf_n, mut raw_sq, mut raw_n) = (0.0, 0usize, 0.0, 0usize);
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let mut est: Option<UeKinematicState> = None;
            for m in 1..=50 {
                let meas = ok(synthesize_measurement(&truth, &p_h(), &var, &mut rng))?;
                let z = Vector4::new(meas.z[0], meas.z[1], meas.z[2], meas.z[3]);
                let raw = ok(invert_measurement(&z, &p_h(), f64::INFINITY))?;
                raw_sq += (raw - p_true).norm_squared();
                raw_n += 1;
                let next = match &est {
                    None => UeKinematicState::initial(raw),
                    Some(prev) => ok(ekf_step(&motion, prev, &meas, &p_h()))?,
                };
                if m >= 40 {
                    ekf_sq += (next.position() - p_true).norm_squared();
                    ekf_n += 1;
                }
                est = Some(next);
            }
        }
        let ratio = (ekf_sq / ekf_n as f64).sqrt() / (raw_sq / raw_n as f64).sqrt();
        let secs = started.elapsed().as_secs_f64();
        let detail = format!("(a) max deviation {worst_a:.1e}; (b) RMSE frames 40-50 / raw inversion RMSE = {ratio:.3}, {secs:.1} s");
        if worst_a <= 1e-12 && ratio <= 0.2 && secs < 30.0 {
            Ok(detail)
        } else {
            Err(detail)
        }
    };
    report(4, "EKF reduces to Kalman filter and converges on static UE", started, run());
}

fn real_sym(n: usize, f: impl Fn(usize, usize) -> f64) -> CMatrix {
    DMatrix::from_fn(n, n, |i, j| Complex64::new(if i <= j { f(i, j) } else { f(j, i) }, 0.0))
}

fn unit_diagonal_problem(cost: CMatrix) -> SdpProblem {
    let n = cost.nrows();
    let mut p = SdpProblem::new(vec![BlockSpec { dim: n, hermitian: false }]);
    p.set_objective(0, cost);
    for i in 0..n {
        let mut e = CMatrix::zeros(n, n);
        e[(i, i)] = Complex64::new(1.0, 0.0);
        p.add_constraint(Constraint::new(Sense::Eq, 1.0).with(0, e));
    }
    p
}

/// Maximum of `Σ C_ij cos(a_i − a_j)` over planar unit vectors. Some optimal
/// solution of a real unit-diagonal SDP with n ≤ 4 has rank ≤ 2, so this is
/// the SDP optimum.
fn planar_grid_optimum(c: &DMatrix<f64>) -> f64 {
    let n = c.nrows();
    let value = |a: &[f64]| {
        let mut v = 0.0;
        for i in 0..n {
            for j in 0..n {
                v += c[(i, j)] * (a[i] - a[j]).cos();
            }
        }
        v
    };
    if n == 1 {
        return c[(0, 0)];
    }
    let steps: usize = 90;
    let free = n - 1;
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    let total = steps.pow(free as u32);
    let mut a = vec![0.0; n];
    for idx in 0..total {
        let mut r = idx;
        for slot in a.iter_mut().skip(1) {
            *slot = TAU * (r % steps) as f64 / steps as f64;
            r /= steps;
        }
        let v = value(&a);
        if v > best.0 {
            best = (v, a.clone());
        }
    }
    // pattern search from the best cell
    let mut h = TAU / steps as f64;
    while h > 1e-10 {
        let mut improved = false;
        for i in 1..n {
            for s in [-1.0, 1.0] {
                let mut trial = best.1.clone();
                trial[i] += s * h;
                let v = value(&trial);
                if v > best.0 {
                    best = (v, trial);
                    improved = true;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    best.0
}

#[test]
fn c05_sdp_solver_validation() {
    let started = Instant::now();
    let run = || -> Outcome {
        let settings = SdpSettings::default();
        // minimize Tr(CX) with C = [[0,1],[1,0]] as maximize Tr(−CX)
        let cut = unit_diagonal_problem(real_sym(2, |i, j| if i == j { 0.0 } else { -1.0 }));
        let s = ok(solve(&cut, &settings))?;
        let cut_err = (-s.objective_value - (-2.0)).abs();

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut worst_rel, mut worst_violation, mut worst_eig) = (0.0f64, 0.0f64, 0.0f64);
        let mut not_optimal = 0;
        for i in 0..50 {
            let n = 1 + i % 4;
            let vals = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let cost = real_sym(n, |a, b| vals[(a, b)]);
            let p = unit_diagonal_problem(cost.clone());
            let sol = ok(solve(&p, &settings))?;
            if sol.status != SdpStatus::Optimal {
                not_optimal += 1;
            }
            let oracle = planar_grid_optimum(&cost.map(|z| z.re));
            worst_rel = worst_rel.max((sol.objective_value - oracle).abs() / oracle.abs());
            let r = ok(residuals(&p, &sol.x))?;
            worst_violation = worst_violation.max(r.max_violation());
            worst_eig = worst_eig.max(r.min_eigenvalues.iter().map(|l| -l).fold(0.0, f64::max));
        }
        let detail = format!(
            "2×2 cut error {cut_err:.1e}; 50 random instances: max relative gap to grid {worst_rel:.1e}, max violation {worst_violation:.1e}, most negative eigenvalue {:.1e}, non-optimal {not_optimal}",
            -worst_eig
        );
        if cut_err <= 1e-4 && worst_rel <= 1e-3 && worst_violation <= 1e-6 && worst_eig <= 1e-6 && not_optimal == 0 {
            Ok(detail)
        } else {
            Err(detail)
        }
    };
    report(5, "SDP solver matches analytic and grid optima", started, run());
}

fn desk_best_effort() -> ScenarioConfig {
    ScenarioConfig {
        on_infeasible: InfeasiblePolicy::BestEffort,
        ..ScenarioConfig::desk()
    }
}

#[test]
fn c06_op1_feasible_on_desk_scenario() {
    let started = Instant::now();
    let run = || -> Outcome {
        let seeds = 10u64;
        let (mut worst_margin_db, mut worst_power, mut ratio_sum, mut ratio_n) = (f64::INFINITY, 0.0f64, 0.0, 0usize);
        let mut randomized = 0;
        for seed in 0..seeds {
            let cfg = ScenarioConfig { seed, ..ScenarioConfig::desk() };
            let ch = ok(initial_channels(&cfg))?;
            let derivs = ok(SensingDerivatives::new(&ch))?;
            let w_h = Combiner::zero_phase(cfg.sizes()).matrix();
            let b: Vec<CMatrix> = ok(precoder_sensing_matrices(&derivs, &w_h))?
                .iter()
                .map(|per_i| per_i.iter().fold(CMatrix::zeros(cfg.n_t, cfg.n_t), |acc, m| acc + m))
                .collect();
            let h_dir = ok(effective_channels(&ch, &Reflection::zeros(cfg.sizes().n_h()).phi(), cfg.rho))?;
            let qos = QosSpec {
                gamma: vec![cfg.gamma(); cfg.u],
                p_max: cfg.p_max(),
            };
            let out = ok(solve_precoder(&b, &communication_matrices(&h_dir), &qos, cfg.sigma2(), &AltOptSettings::default().sdp))
                .map_err(|e| format!("seed {seed}: {e}"))?;
            let realized = ok(sinr_and_rate(&h_dir, &out.precoder.f, cfg.sigma2()))?;
            for s in &realized.sum_sinr {
                worst_margin_db = worst_margin_db.min(10.0 * s.log10() - cfg.gamma_db);
            }
            worst_power = worst_power.max(out.precoder.power() / cfg.p_max());
            ratio_sum += out.rank_one_ratios.iter().sum::<f64>();
            ratio_n += out.rank_one_ratios.len();
            randomized += usize::from(out.fallback_used);
        }
        let mean_ratio = ratio_sum / ratio_n as f64;
        let soft = if mean_ratio >= 0.9 { "met" } else { "not met" };
        let detail = format!(
            "{seeds} draws: worst Σ_k SINR margin {worst_margin_db:+.3} dB, max power/P_max {worst_power:.7}, mean rank-one ratio {mean_ratio:.4} (soft ≥ 0.9 {soft}), randomization used {randomized}×"
        );
        if worst_margin_db >= -0.1 && worst_power <= 1.0 + 1e-6 {
            Ok(detail)
        } else {
            Err(detail)
        }
    };
    report(6, "OP1 precoders meet QoS and power on the desk scenario", started, run());
}

#[test]
fn c07_op2_matches_phase_grid() {
    let started = Instant::now();
    let run = || -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sizes = ArraySizes { n_t: 4, n_rf: 2, n_e: 2 };
        let mut worst = 0.0f64;
        let mut chains = 0;
        for _ in 0..20 {
            let ues: Vec<_> = (0..2).map(|_| random_ue(&mut rng)).collect();
            let ch = channels(sizes, 2, &ues, None)?;
            let derivs = ok(SensingDerivatives::new(&ch))?;
            let pre = Precoder {
                f: (0..2).map(|_| complex_gaussian(4, 2, 1.0, &mut rng)).collect(),
            };
            let d = ok(combiner_sensing_matrices(&derivs, &pre))?;
            let comb = ok(solve_combiner(&d, sizes, &SdpSettings::default()))?;
            let total = d.iter().flatten().fold(CMatrix::zeros(4, 4), |acc, m| acc + m);
            for l in 0..sizes.n_rf {
                let block = total.view((2 * l, 2 * l), (2, 2)).into_owned();
                let quad = |a: f64, b: f64| {
                    let v = DVector::from_vec(vec![Complex64::from_polar(1.0, a), Complex64::from_polar(1.0, b)]);
                    (v.adjoint() * &block * v)[(0, 0)].re
                };
                let got = quad(comb.phases[l][0], comb.phases[l][1]);
                let best = (0..10_000).map(|i| quad(0.0, TAU * i as f64 / 10_000.0)).fold(f64::NEG_INFINITY, f64::max);
                worst = worst.max((best - got).abs() / best.abs());
                chains += 1;
            }
        }
        let detail = format!("{chains} chains, max relative gap to 10⁴-point grid {worst:.1e}");
        if worst <= 1e-3 {
            Ok(detail)
        } else {
            Err(detail)
        }
    };
    report(7, "OP2 per-chain optimum matches phase grid at N_E = 2", started, run());
}

#[test]
fn c08_op3_monotone_and_scalar_optimum() {
    let started = Instant::now();
    let run = || -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sizes = ArraySizes { n_t: 4, n_rf: 2, n_e: 2 };
        let (mut updates, mut worst_drop) = (0usize, 0.0f64);
        for _ in 0..100 {
            let ues: Vec<_> = (0..2).map(|_| random_ue(&mut rng)).collect();
            let ch = channels(sizes, 2, &ues, None)?;
            let pre = Precoder {
                f: (0..2).map(|_| complex_gaussian(4, 2, 1.0, &mut rng)).collect(),
            };
            let rho = rng.random_range(0.0..1.0);
            let init = Reflection {
                upsilon: (0..4).map(|_| rng.random_range(-FRAC_PI_2..FRAC_PI_2)).collect(),
            };
            let mut prev = ok(reflection_objective(&ch, &pre, rho, &init))?;
            for it in ok(reflection_updates(&ch, &pre, rho, &init))? {
                let v = ok(reflection_objective(&ch, &pre, rho, &it))?;
                // recomputed from scratch, so allow floating-point rounding only
                worst_drop = worst_drop.max((prev - v) / prev);
                prev = v;
                updates += 1;
            }
        }

        // scalar case: |a + b e^{jυ}|² peaks at υ = arg a − arg b, clipped to [−π/2, π/2]
        let one = ArraySizes { n_t: 1, n_rf: 1, n_e: 1 };
        let mut worst_phase = 0.0f64;
        for _ in 0..50 {
            let ue = random_ue(&mut rng);
            let ch = channels(one, 1, &[ue], None)?;
            let pre = Precoder {
                f: vec![CMatrix::from_element(1, 1, Complex64::from_polar(1.0, rng.random_range(0.0..TAU)))],
            };
            let rho = rng.random_range(0.0..0.9);
            let a = ch.h_dl[0][0][0] * pre.f[0][(0, 0)];
            let b = ch.h_hu[0][0][0] * ch.h_bh[0][(0, 0)] * pre.f[0][(0, 0)] * (1.0 - rho);
            let mut target = (a.arg() - b.arg()).rem_euclid(TAU);
            if target > PI {
                target -= TAU;
            }
            let target = target.clamp(-FRAC_PI_2, FRAC_PI_2);
            let got = ok(solve_reflection(&ch, &pre, rho, &Reflection::zeros(1)))?;
            let mut diff = (got.upsilon[0] - target).abs();
            // a co-phased optimum at the starting point is kept exactly
            if target == 0.0 {
                diff = got.upsilon[0].abs();
            }
            worst_phase = worst_phase.max(diff);
        }
        let detail = format!("{updates} element updates, largest relative drop {worst_drop:.1e}; scalar phase error {worst_phase:.1e} rad");
        if worst_drop <= 1e-12 && worst_phase <= 1e-9 {
            Ok(detail)
        } else {
            Err(detail)
        }
    };
    report(8, "OP3 coordinate ascent is monotone and exact in the scalar case", started, run());
}

fn all_finite(f: &FrameLog) -> bool {
    let ue_ok = f.ues.iter().all(|u| {
        let vals = [
            u.crbs.theta,
            u.crbs.psi,
            u.crbs.phi,
            u.crbs.tau,
            u.position_bound,
            u.sum_sinr,
            u.rate,
        ];
        vals.iter().all(|v| v.is_finite())
            && [u.true_position, u.est_position, u.true_velocity, u.est_velocity].iter().all(|v| v.iter().all(|x| x.is_finite()))
    });
    ue_ok && f.peb.is_finite() && f.power.is_finite() && f.rank_one_ratios.iter().all(|r| r.is_finite())
}

#[test]
fn c09_end_to_end_desk_runs() {
    let started = Instant::now();
    let run = || -> Outcome {
        let cfg = desk_best_effort();
        let seeds: Vec<u64> = (0..50).collect();
        let mut runs: Vec<TrackingRun> = Vec::with_capacity(seeds.len());
        let mut slowest = 0.0f64;
        for &seed in &seeds {
            let t0 = Instant::now();
            let r = ok(run_tracking(&ScenarioConfig { seed, ..cfg.clone() })).map_err(|e| format!("seed {seed}: {e}"))?;
            slowest = slowest.max(t0.elapsed().as_secs_f64());
            runs.push(r);
        }
        let again = ok(run_tracking(&cfg))?;
        let deterministic = again.logs == runs[0].logs;
        let finite = runs.iter().all(|r| r.logs.len() == 20 && r.logs.iter().all(all_finite));
        let best_effort: usize = runs.iter().map(|r| r.summary.best_effort_frames).sum();
        let mc = aggregate(seeds, &runs);
        let detail = format!(
            "50 seeds, slowest run {slowest:.1} s, deterministic {deterministic}, all finite {finite}; final-window RMSE {:.3} m vs 3 × mean CRB-implied error {:.3e} m; best-effort frames {best_effort}/1000",
            mc.final_rmse,
            3.0 * mc.final_mean_position_bound
        );
        if slowest < 300.0 && deterministic && finite && mc.final_rmse <= 3.0 * mc.final_mean_position_bound {
            Ok(detail)
        } else {
            Err(detail)
        }
    };
    report(9, "End-to-end desk tracking runs", started, run());
}

/// At most one adjacent rise, and that rise within 2 %.
fn non_increasing_with_slack(v: &[f64]) -> (bool, usize, f64) {
    let rises: Vec<f64> = v.windows(2).filter(|w| w[1] > w[0]).map(|w| (w[1] - w[0]) / w[0].abs()).collect();
    let worst = rises.iter().copied().fold(0.0, f64::max);
    (rises.len() <= 1 && worst <= 0.02, rises.len(), worst)
}

#[test]
fn c10_rho_tradeoff_trend() {
    let started = Instant::now();
    let run = || -> Outcome {
        let rhos = [0.1, 0.3, 0.5, 0.7, 0.9];
        let rows = ok(sweep_rho(&desk_best_effort(), &rhos))?;
        let pebs: Vec<f64> = rows.iter().map(|r| r.final_peb).collect();
        let rates: Vec<f64> = rows.iter().map(|r| r.mean_rate).collect();
        let (peb_ok, peb_rises, peb_worst) = non_increasing_with_slack(&pebs);
        let (rate_ok, rate_rises, rate_worst) = non_increasing_with_slack(&rates);
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ");
        let detail = format!(
            "PEB [{}] ({peb_rises} rises, worst {:.2}%); rate [{}] ({rate_rises} rises, worst {:.2}%)",
            fmt(&pebs),
            100.0 * peb_worst,
            fmt(&rates),
            100.0 * rate_worst
        );
        if peb_ok && rate_ok {
            Ok(detail)
        } else {
            Err(detail)
        }
    };
    report(10, "PEB and rate both non-increasing in ρ", started, run());
}

#[test]
fn c11_byte_identical_outputs() {
    let started = Instant::now();
    let run = || -> Outcome {
        let cfg = desk_best_effort();
        let dirs = [ok(tempfile::tempdir())?, ok(tempfile::tempdir())?];
        for d in &dirs {
            let r = ok(run_tracking(&cfg))?;
            ok(emit_outputs(&r.logs, Some(&r.summary), d.path()))?;
        }
        let mut sizes = Vec::new();
        for name in ["frames.csv", "summary.json"] {
            let a = ok(std::fs::read(dirs[0].path().join(name)))?;
            let b = ok(std::fs::read(dirs[1].path().join(name)))?;
            if a != b {
                return Err(format!("{name} differs between runs"));
            }
            sizes.push(format!("{name} {} bytes", a.len()));
        }
        Ok(format!("identical {}", sizes.join(", ")))
    };
    report(11, "Identical config and seed give byte-identical outputs", started, run());
}
