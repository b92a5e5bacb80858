//! Constant-velocity motion model and the extended Kalman filter that tracks
//! each UE from `[θ, ψ, φ, τ_H]` measurements.
//!
//! States are ordered `[x, ẋ, y, ẏ, z, ż]` so the transition is literally
//! `I₃ ⊗ [[1, T_s], [0, 1]]`; [`to_axis_major`] and [`from_axis_major`]
//! convert to and from `[x, y, z, ẋ, ẏ, ż]`.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix6, Vector3, Vector4, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fim::ParamCrbs;
use crate::geometry::{angles_from_position, link_delays, measurement_gradients, Position3, Velocity3, SPEED_OF_LIGHT};
use crate::linalg::wrap_angle;

/// Floor on angle variances (rad²).
pub const ANGLE_VARIANCE_FLOOR: f64 = 1e-12;
/// Floor on the delay variance (s²); `1e-12 m²` once multiplied by `c²`.
pub const DELAY_VARIANCE_FLOOR: f64 = 1e-12 / (SPEED_OF_LIGHT * SPEED_OF_LIGHT);

/// Default prior variances for a freshly initialized filter.
pub const INIT_POSITION_VARIANCE: f64 = 10.0;
pub const INIT_VELOCITY_VARIANCE: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionModel {
    pub f_xi: Matrix6<f64>,
    pub p_u: Matrix6<f64>,
    pub t_s: f64,
    pub sigma_dot: f64,
}

impl MotionModel {
    pub fn new(t_s: f64, sigma_dot: f64) -> Result<Self> {
        if !(t_s > 0.0) || !(sigma_dot >= 0.0) {
            return Err(Error::InvalidProblem(format!("motion model needs T_s > 0 and σ̇ ≥ 0 (got {t_s}, {sigma_dot})")));
        }
        let f = Matrix2::new(1.0, t_s, 0.0, 1.0);
        let q = Matrix2::new(t_s.powi(3) / 3.0, t_s * t_s / 2.0, t_s * t_s / 2.0, t_s) * sigma_dot;
        Ok(Self {
            f_xi: block_diag3(&f),
            p_u: block_diag3(&q),
            t_s,
            sigma_dot,
        })
    }

    /// Lower Cholesky factor of one 2×2 process-noise block.
    fn noise_factor(&self) -> Matrix2<f64> {
        let (s, t) = (self.sigma_dot, self.t_s);
        if s == 0.0 {
            return Matrix2::zeros();
        }
        let l11 = (s * t.powi(3) / 3.0).sqrt();
        let l21 = s * t * t / 2.0 / l11;
        let l22 = (s * t / 4.0).sqrt();
        Matrix2::new(l11, 0.0, l21, l22)
    }
}

fn block_diag3(b: &Matrix2<f64>) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    for a in 0..3 {
        m.fixed_view_mut::<2, 2>(2 * a, 2 * a).copy_from(b);
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeKinematicState {
    pub state: Vector6<f64>,
    pub mse: Matrix6<f64>,
}

impl UeKinematicState {
    pub fn new(position: Position3, velocity: Velocity3, mse: Matrix6<f64>) -> Self {
        let state = Vector6::new(position.x, velocity.x, position.y, velocity.y, position.z, velocity.z);
        Self { state, mse }
    }

    /// Weak prior around `position` with zero velocity.
    pub fn initial(position: Position3) -> Self {
        let d = Vector6::new(
            INIT_POSITION_VARIANCE,
            INIT_VELOCITY_VARIANCE,
            INIT_POSITION_VARIANCE,
            INIT_VELOCITY_VARIANCE,
            INIT_POSITION_VARIANCE,
            INIT_VELOCITY_VARIANCE,
        );
        Self::new(position, Velocity3::zeros(), Matrix6::from_diagonal(&d))
    }

    pub fn position(&self) -> Position3 {
        Vector3::new(self.state[0], self.state[2], self.state[4])
    }

    pub fn velocity(&self) -> Velocity3 {
        Vector3::new(self.state[1], self.state[3], self.state[5])
    }

    pub fn position_variance(&self) -> Vector3<f64> {
        Vector3::new(self.mse[(0, 0)], self.mse[(2, 2)], self.mse[(4, 4)])
    }

    pub fn velocity_variance(&self) -> Vector3<f64> {
        Vector3::new(self.mse[(1, 1)], self.mse[(3, 3)], self.mse[(5, 5)])
    }
}

/// `[x, ẋ, y, ẏ, z, ż]` → `[x, y, z, ẋ, ẏ, ż]`.
pub fn to_axis_major(v: &Vector6<f64>) -> Vector6<f64> {
    Vector6::new(v[0], v[2], v[4], v[1], v[3], v[5])
}

pub fn from_axis_major(v: &Vector6<f64>) -> Vector6<f64> {
    Vector6::new(v[0], v[3], v[1], v[4], v[2], v[5])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub z: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Measurement {
    /// Builds a measurement with diagonal covariance.
    pub fn new(z: DVector<f64>, variances: &[f64]) -> Result<Self> {
        if variances.len() != z.len() {
            return Err(Error::dims(format!("{} variances for {} measurements", variances.len(), z.len())));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidProblem("measurement variances must be positive and finite".into()));
        }
        Ok(Self {
            z,
            cov: DMatrix::from_diagonal(&DVector::from_column_slice(variances)),
        })
    }
}

/// Measurement variances from per-UE CRBs with the floors applied.
pub fn measurement_variances(crbs: &ParamCrbs) -> [f64; 4] {
    let fl = |v: f64, floor: f64| if v.is_finite() { v.max(floor) } else { f64::MAX.sqrt() };
    [
        fl(crbs.theta, ANGLE_VARIANCE_FLOOR),
        fl(crbs.psi, ANGLE_VARIANCE_FLOOR),
        fl(crbs.phi, ANGLE_VARIANCE_FLOOR),
        fl(crbs.tau, DELAY_VARIANCE_FLOOR),
    ]
}

/// Nonlinear measurement map used by [`ekf_step_with`].
pub trait MeasurementModel {
    fn predict(&self, state: &Vector6<f64>) -> Result<DVector<f64>>;

    /// Rows are measurements, columns follow the state ordering.
    fn jacobian(&self, state: &Vector6<f64>) -> Result<DMatrix<f64>>;

    fn innovation(&self, z: &DVector<f64>, predicted: &DVector<f64>) -> DVector<f64> {
        z - predicted
    }
}

/// `g(ξ) = [θ, ψ, φ, τ_H]` for an HRIS at `p_h`.
#[derive(Debug, Clone, Copy)]
pub struct GeometricModel {
    pub p_h: Position3,
}

impl MeasurementModel for GeometricModel {
    fn predict(&self, state: &Vector6<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_column_slice(measure(state, &self.p_h)?.as_slice()))
    }

    fn jacobian(&self, state: &Vector6<f64>) -> Result<DMatrix<f64>> {
        measurement_jacobian(state, &self.p_h)
    }

    fn innovation(&self, z: &DVector<f64>, predicted: &DVector<f64>) -> DVector<f64> {
        let mut d = z - predicted;
        for i in 0..3 {
            d[i] = wrap_angle(d[i]);
        }
        d
    }
}

pub fn transition(model: &MotionModel, state: &Vector6<f64>) -> Vector6<f64> {
    model.f_xi * state
}

/// A draw from `N(0, P_u)`.
pub fn sample_process_noise<R: Rng + ?Sized>(model: &MotionModel, rng: &mut R) -> Vector6<f64> {
    let l = model.noise_factor();
    let mut w = Vector6::zeros();
    for a in 0..3 {
        let e = nalgebra::Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
        w.fixed_rows_mut::<2>(2 * a).copy_from(&(l * e));
    }
    w
}

/// Truth propagation: `F_ξ ξ + w`, `w ~ N(0, P_u)`.
pub fn propagate_truth<R: Rng + ?Sized>(model: &MotionModel, state: &Vector6<f64>, rng: &mut R) -> Vector6<f64> {
    transition(model, state) + sample_process_noise(model, rng)
}

fn position_of(state: &Vector6<f64>) -> Position3 {
    Vector3::new(state[0], state[2], state[4])
}

pub fn measure(state: &Vector6<f64>, p_h: &Position3) -> Result<Vector4<f64>> {
    let p = position_of(state);
    let a = angles_from_position(&p, p_h)?;
    let d = link_delays(&p, p_h, 0.0)?;
    Ok(Vector4::new(a.theta, a.psi, a.phi, d.tau_h))
}

/// 4×6 Jacobian of [`measure`]; velocity columns are zero.
pub fn measurement_jacobian(state: &Vector6<f64>, p_h: &Position3) -> Result<DMatrix<f64>> {
    let grads = measurement_gradients(&position_of(state), p_h)?;
    let mut q = DMatrix::zeros(4, 6);
    for (r, g) in grads.iter().enumerate() {
        for axis in 0..3 {
            q[(r, 2 * axis)] = g[axis];
        }
    }
    Ok(q)
}

/// `z = g(ξ) + w` with `w ~ N(0, diag(variances))`; angles are wrapped.
pub fn synthesize_measurement<R: Rng + ?Sized>(
    true_state: &Vector6<f64>,
    p_h: &Position3,
    variances: &[f64; 4],
    rng: &mut R,
) -> Result<Measurement> {
    let g = measure(true_state, p_h)?;
    let mut z = DVector::zeros(4);
    for i in 0..4 {
        let w: f64 = rng.sample(StandardNormal);
        z[i] = g[i] + variances[i].sqrt() * w;
        if i < 3 {
            z[i] = wrap_angle(z[i]);
        }
    }
    Measurement::new(z, variances)
}

/// Prediction only, for frames without a usable measurement.
pub fn ekf_predict(model: &MotionModel, prev: &UeKinematicState) -> UeKinematicState {
    let a = model.f_xi * prev.mse * model.f_xi.transpose() + model.p_u;
    UeKinematicState {
        state: model.f_xi * prev.state,
        mse: (a + a.transpose()) * 0.5,
    }
}

/// One predict/update cycle with the geometric measurement model.
pub fn ekf_step(model: &MotionModel, prev: &UeKinematicState, meas: &Measurement, p_h: &Position3) -> Result<UeKinematicState> {
    ekf_step_with(model, &GeometricModel { p_h: *p_h }, prev, meas)
}

pub fn ekf_step_with<M: MeasurementModel>(
    motion: &MotionModel,
    g: &M,
    prev: &UeKinematicState,
    meas: &Measurement,
) -> Result<UeKinematicState> {
    let xi_pred = motion.f_xi * prev.state;
    let a_pred = motion.f_xi * prev.mse * motion.f_xi.transpose() + motion.p_u;

    let q = g.jacobian(&xi_pred)?;
    let m = q.nrows();
    if q.ncols() != 6 || meas.z.len() != m || meas.cov.shape() != (m, m) {
        return Err(Error::dims("measurement model, measurement and covariance disagree"));
    }
    let a = DMatrix::from_column_slice(6, 6, a_pred.as_slice());
    let aqt = &a * q.transpose();
    let s = &meas.cov + &q * &aqt;
    let s = (&s + s.transpose()) * 0.5;
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    // K = A Qᵀ S⁻¹, solved as S Kᵀ = Q A
    let k = chol.solve(&aqt.transpose()).transpose();
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularInnovation);
    }

    let nu = g.innovation(&meas.z, &g.predict(&xi_pred)?);
    let dx = &k * nu;
    let state = xi_pred + Vector6::from_column_slice(dx.as_slice());
    let a_new = (DMatrix::identity(6, 6) - &k * &q) * &a;
    let a_new = Matrix6::from_column_slice(a_new.as_slice());
    Ok(UeKinematicState {
        state,
        mse: (a_new + a_new.transpose()) * 0.5,
    })
}

/// Default round-trip tolerance for [`invert_measurement`].
pub const INVERSION_TOL: f64 = 1e-6;

/// Recovers a position from `z = [θ, ψ, φ, τ_H]`.
///
/// The HRIS ray `(ψ, φ)` is intersected with the vertical half-plane at
/// azimuth `θ` through the BS; the point is then slid along the BS bearing
/// until the bistatic delay matches. When the ray is parallel to the plane
/// the range along the HRIS ray is taken from the delay alone. The result is
/// rejected if the measurement residual (angles in rad, delay as `c·Δτ` in
/// metres) exceeds `tol`.
pub fn invert_measurement(z: &Vector4<f64>, p_h: &Position3, tol: f64) -> Result<Position3> {
    let (theta, psi, phi, tau) = (z[0], z[1], z[2], z[3]);
    let ct = SPEED_OF_LIGHT * tau;
    let dh2 = p_h.norm_squared();
    if !ct.is_finite() || ct < p_h.norm() {
        return Err(Error::InconsistentMeasurement(format!(
            "bistatic range {ct} m is shorter than the BS-HRIS baseline {} m",
            p_h.norm()
        )));
    }
    let d = Vector3::new(psi.cos() * phi.cos(), psi.cos() * phi.sin(), psi.sin());
    let n = Vector3::new(-theta.sin(), theta.cos(), 0.0);
    let nd = n.dot(&d);
    let r_plane = if nd.abs() > 1e-12 { -n.dot(p_h) / nd } else { f64::NAN };
    let p = if r_plane.is_finite() && r_plane > 0.0 {
        let p0 = p_h + d * r_plane;
        let u = p0.normalize();
        let denom = 2.0 * (ct - u.dot(p_h));
        if p0.norm() > 0.0 && denom > 0.0 {
            u * ((ct * ct - dh2) / denom)
        } else {
            p0
        }
    } else {
        let r = (ct * ct - dh2) / (2.0 * (ct + d.dot(p_h)));
        p_h + d * r
    };

    let state = Vector6::new(p.x, 0.0, p.y, 0.0, p.z, 0.0);
    let g = measure(&state, p_h).map_err(|e| Error::InconsistentMeasurement(e.to_string()))?;
    let residual = [
        wrap_angle(g[0] - theta).abs(),
        wrap_angle(g[1] - psi).abs(),
        wrap_angle(g[2] - phi).abs(),
        SPEED_OF_LIGHT * (g[3] - tau).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    if !(residual <= tol) {
        return Err(Error::InconsistentMeasurement(format!("round-trip residual {residual:e} exceeds {tol:e}")));
    }
    Ok(p)
}
