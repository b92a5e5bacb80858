//! Fisher information of the HRIS observation over the channel parameters
//! `η̃ = [θ, ψ, φ, τ_H]` (each of length U), its frame-to-frame recursion and
//! the position error bound.
//!
//! The per-frame information is
//!
//! ```text
//! [J]_{ij} = (2Tρ²/σ²) Σ_k Re Tr{ (∂μ̄_k/∂η̃_i)ᴴ (∂μ̄_k/∂η̃_j) },   μ̄_k = W_Hᴴ H_H,k F_k
//! ```
//!
//! and the recursion simply adds the previous frame's matrix.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::channel::{steer_hris, ula, ula_derivative, ChannelSet};
use crate::error::{Error, Result};
use crate::geometry::{angles_from_position, link_delays, measurement_gradients, Position3, Velocity3};
use crate::linalg::{inner, kron, symmetric_eigenvalues, CMatrix, J};

/// Parameter groups of `η̃`, in stacking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelParam {
    Theta,
    Psi,
    Phi,
    TauH,
}

impl ChannelParam {
    pub const ALL: [ChannelParam; 4] = [Self::Theta, Self::Psi, Self::Phi, Self::TauH];

    /// Splits a stacked index into (group, UE).
    pub fn locate(index: usize, u_count: usize) -> Result<(ChannelParam, usize)> {
        if index >= 4 * u_count {
            return Err(Error::IndexOutOfRange {
                index,
                valid: format!("0..{}", 4 * u_count),
            });
        }
        Ok((Self::ALL[index / u_count], index % u_count))
    }
}

/// `η̃` stacked as `[θ, ψ, φ, τ_H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParamVector {
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    pub tau_h: Vec<f64>,
}

impl ChannelParamVector {
    pub fn from_location(loc: &LocationParamVector, p_h: &Position3) -> Result<Self> {
        let mut out = Self {
            theta: Vec::new(),
            psi: Vec::new(),
            phi: Vec::new(),
            tau_h: Vec::new(),
        };
        for p in &loc.positions {
            let a = angles_from_position(p, p_h)?;
            out.theta.push(a.theta);
            out.psi.push(a.psi);
            out.phi.push(a.phi);
            out.tau_h.push(link_delays(p, p_h, 0.0)?.tau_h);
        }
        Ok(out)
    }

    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            4 * self.theta.len(),
            self.theta.iter().chain(&self.psi).chain(&self.phi).chain(&self.tau_h).copied(),
        )
    }
}

/// `η` stacked as `[x, y, z, ẋ, ẏ, ż]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationParamVector {
    pub positions: Vec<Position3>,
    pub velocities: Vec<Velocity3>,
}

impl LocationParamVector {
    pub fn stacked(&self) -> DVector<f64> {
        let u = self.positions.len();
        DVector::from_fn(6 * u, |i, _| {
            let (axis, ue) = (i / u, i % u);
            if axis < 3 {
                self.positions[ue][axis]
            } else {
                self.velocities[ue][axis - 3]
            }
        })
    }

    pub fn from_stacked(v: &DVector<f64>) -> Self {
        let u = v.len() / 6;
        Self {
            positions: (0..u).map(|i| Position3::new(v[i], v[u + i], v[2 * u + i])).collect(),
            velocities: (0..u).map(|i| Velocity3::new(v[3 * u + i], v[4 * u + i], v[5 * u + i])).collect(),
        }
    }
}

/// `∂H_H,k / ∂η̃_i` for subcarrier index `k` (0-based) and stacked index `i`.
pub fn channel_derivative(ch: &ChannelSet, k: usize, i: usize) -> Result<CMatrix> {
    let (param, u) = ChannelParam::locate(i, ch.num_ues())?;
    if k >= ch.num_subcarriers() {
        return Err(Error::IndexOutOfRange {
            index: k,
            valid: format!("0..{}", ch.num_subcarriers()),
        });
    }
    let s = ch.sizes;
    let p = &ch.paths[u];
    let coeff = p.coefficient(ch.freqs[k], ch.subcarrier_phases[k]);
    let a_bs = ula(p.theta, s.n_t);
    let m = match param {
        ChannelParam::Theta => steer_hris(p.psi, p.phi, s.n_rf, s.n_e).entries * ula_derivative(p.theta, s.n_t).adjoint(),
        ChannelParam::Psi => kron(&ula(p.phi, s.n_rf), &ula_derivative(p.psi, s.n_e)) * a_bs.adjoint(),
        ChannelParam::Phi => kron(&ula_derivative(p.phi, s.n_rf), &ula(p.psi, s.n_e)) * a_bs.adjoint(),
        ChannelParam::TauH => {
            let factor = -J * (2.0 * PI * (ch.freqs[k] - p.doppler));
            return Ok(ch.bistatic_term(k, u) * factor);
        }
    };
    Ok(m * coeff)
}

/// `∂μ̄_k / ∂η̃_i = W_Hᴴ (∂H_H,k/∂η̃_i) F_k`.
pub fn d_mu_d_param(ch: &ChannelSet, w_h: &CMatrix, f_k: &CMatrix, k: usize, i: usize) -> Result<CMatrix> {
    check_operands(ch, w_h, std::slice::from_ref(f_k), false)?;
    Ok(w_h.adjoint() * channel_derivative(ch, k, i)? * f_k)
}

fn check_operands(ch: &ChannelSet, w_h: &CMatrix, f: &[CMatrix], all_k: bool) -> Result<()> {
    if w_h.nrows() != ch.sizes.n_h() {
        return Err(Error::dims(format!("combiner has {} rows, N_H = {}", w_h.nrows(), ch.sizes.n_h())));
    }
    if all_k && f.len() != ch.num_subcarriers() {
        return Err(Error::dims(format!("{} precoders for K = {}", f.len(), ch.num_subcarriers())));
    }
    if f.iter().any(|m| m.nrows() != ch.sizes.n_t) {
        return Err(Error::dims("precoder rows must equal N_T"));
    }
    Ok(())
}

/// All `∂μ̄_k/∂η̃_i` for one subcarrier.
fn mean_derivatives(ch: &ChannelSet, w_h: &CMatrix, f_k: &CMatrix, k: usize) -> Vec<CMatrix> {
    let wh = w_h.adjoint();
    (0..4 * ch.num_ues())
        .map(|i| &wh * channel_derivative(ch, k, i).expect("index in range") * f_k)
        .collect()
}

/// Per-frame information matrix over `η̃` (4U × 4U).
pub fn frame_fim(ch: &ChannelSet, w_h: &CMatrix, f: &[CMatrix], rho: f64, sigma2: f64, t: usize) -> Result<DMatrix<f64>> {
    check_operands(ch, w_h, f, true)?;
    if !(sigma2 > 0.0) || t == 0 {
        return Err(Error::InvalidProblem("frame FIM needs σ² > 0 and T ≥ 1".into()));
    }
    let n = 4 * ch.num_ues();
    let per_k: Vec<DMatrix<f64>> = (0..ch.num_subcarriers())
        .into_par_iter()
        .map(|k| {
            let d = mean_derivatives(ch, w_h, &f[k], k);
            let mut g = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = inner(&d[i], &d[j]);
                    g[(i, j)] = v;
                    g[(j, i)] = v;
                }
            }
            g
        })
        .collect();
    // fixed summation order keeps the result reproducible
    let mut total = DMatrix::zeros(n, n);
    for g in &per_k {
        total += g;
    }
    Ok(total * (2.0 * t as f64 * rho * rho / sigma2))
}

/// Accumulated information `J̃_m` after `frame` frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FimRecursionState {
    pub j_tilde: DMatrix<f64>,
    pub frame: usize,
}

impl FimRecursionState {
    /// `J̃_0 = 0`.
    pub fn new(u_count: usize) -> Self {
        Self {
            j_tilde: DMatrix::zeros(4 * u_count, 4 * u_count),
            frame: 0,
        }
    }

    pub fn trace(&self) -> f64 {
        self.j_tilde.trace()
    }
}

pub fn accumulate(prior: &FimRecursionState, frame_fim: &DMatrix<f64>) -> Result<FimRecursionState> {
    if prior.j_tilde.shape() != frame_fim.shape() {
        return Err(Error::dims(format!(
            "prior is {:?}, frame FIM is {:?}",
            prior.j_tilde.shape(),
            frame_fim.shape()
        )));
    }
    Ok(FimRecursionState {
        j_tilde: &prior.j_tilde + frame_fim,
        frame: prior.frame + 1,
    })
}

/// `∂η̃/∂η` (4U × 6U). Velocity columns are zero.
pub fn location_jacobian(loc: &LocationParamVector, p_h: &Position3) -> Result<DMatrix<f64>> {
    let u = loc.positions.len();
    let mut t = DMatrix::zeros(4 * u, 6 * u);
    for (ue, p) in loc.positions.iter().enumerate() {
        let grads = measurement_gradients(p, p_h)?;
        for (g, grad) in grads.iter().enumerate() {
            for axis in 0..3 {
                t[(g * u + ue, axis * u + ue)] = grad[axis];
            }
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamCrbs {
    pub theta: f64,
    pub psi: f64,
    pub phi: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peb {
    pub value: f64,
    pub per_param_crbs: Vec<ParamCrbs>,
}

impl Peb {
    /// Bound reported when the accumulated information is singular.
    pub fn unbounded(u_count: usize) -> Self {
        let inf = f64::INFINITY;
        Self {
            value: inf,
            per_param_crbs: vec![ParamCrbs { theta: inf, psi: inf, phi: inf, tau: inf }; u_count],
        }
    }
}

/// Singularity threshold on the eigenvalue ratio of the equilibrated matrix.
const SINGULAR_RATIO: f64 = 1e-12;

/// Inverse of a symmetric PSD information matrix.
///
/// The matrix is first equilibrated by its diagonal (the parameters mix
/// radians and seconds); a relative ridge of `1e-12` is added when the
/// equilibrated condition number exceeds `1e12`.
pub fn invert_information(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = j.nrows();
    let diag: Vec<f64> = (0..n).map(|i| j[(i, i)]).collect();
    if diag.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::SingularInformation { ratio: 0.0 });
    }
    let scale: Vec<f64> = diag.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut r = DMatrix::from_fn(n, n, |a, b| j[(a, b)] * scale[a] * scale[b]);
    r = (&r + r.transpose()) * 0.5;
    let ratio_of = |m: &DMatrix<f64>| {
        let ev = symmetric_eigenvalues(m);
        ev[0] / ev[n - 1]
    };
    let mut ratio = ratio_of(&r);
    if ratio < SINGULAR_RATIO {
        let ridge = 1e-12 * r.trace() / n as f64;
        for i in 0..n {
            r[(i, i)] += ridge;
        }
        ratio = ratio_of(&r);
        if ratio < SINGULAR_RATIO {
            return Err(Error::SingularInformation { ratio });
        }
    }
    let inv = r.cholesky().ok_or(Error::SingularInformation { ratio })?.inverse();
    Ok(DMatrix::from_fn(n, n, |a, b| inv[(a, b)] * scale[a] * scale[b]))
}

pub fn peb(state: &FimRecursionState) -> Result<Peb> {
    let u = state.j_tilde.nrows() / 4;
    let inv = invert_information(&state.j_tilde)?;
    let per_param_crbs = (0..u)
        .map(|ue| ParamCrbs {
            theta: inv[(ue, ue)],
            psi: inv[(u + ue, u + ue)],
            phi: inv[(2 * u + ue, 2 * u + ue)],
            tau: inv[(3 * u + ue, 3 * u + ue)],
        })
        .collect();
    Ok(Peb {
        value: inv.trace().max(0.0).sqrt(),
        per_param_crbs,
    })
}

/// `Tr{J̃_m}` = prior trace plus the trace of this frame's information.
pub fn fim_trace_surrogate(
    ch: &ChannelSet,
    w_h: &CMatrix,
    f: &[CMatrix],
    rho: f64,
    sigma2: f64,
    t: usize,
    prior: &FimRecursionState,
) -> Result<f64> {
    check_operands(ch, w_h, f, true)?;
    let per_k: Vec<f64> = (0..ch.num_subcarriers())
        .into_par_iter()
        .map(|k| mean_derivatives(ch, w_h, &f[k], k).iter().map(|d| d.norm_squared()).sum())
        .collect();
    let frame: f64 = per_k.iter().sum();
    Ok(prior.trace() + frame * 2.0 * t as f64 * rho * rho / sigma2)
}
