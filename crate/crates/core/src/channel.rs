//! Wideband channel synthesis: steering vectors, per-subcarrier channel
//! matrices, the effective downlink channel, HRIS receive samples and
//! SINR / rate evaluation.
//!
//! Row channels (`h_dl`, `h_hu`, `h_dir`) are stored as `1 × N` rows so that
//! `h · f` is the received amplitude. They carry the conjugated steering
//! vector of the transmitting array, matching `a_BSᴴ` in the matrix channels.

use nalgebra::{DMatrix, RowDVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{BsHrisParams, UeLinkParams};
use crate::linalg::{kron, real, CMatrix, CVector, J};

pub type CRow = RowDVector<Complex64>;

/// Tolerance on `|φ_n| = 1`.
pub const UNIT_MODULUS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubcarrierGrid {
    pub f_c: f64,
    pub delta_f: f64,
    pub k: usize,
}

impl SubcarrierGrid {
    pub fn new(f_c: f64, delta_f: f64, k: usize) -> Result<Self> {
        if k == 0 || !(delta_f > 0.0) || !(f_c > 0.0) {
            return Err(Error::dims("grid needs K ≥ 1, Δf > 0 and f_c > 0"));
        }
        Ok(Self { f_c, delta_f, k })
    }

    /// Frequency of subcarrier `k`, 1-based.
    pub fn frequency(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.k {
            return Err(Error::IndexOutOfRange {
                index: k,
                valid: format!("1..={}", self.k),
            });
        }
        Ok(self.f_c + (k as f64 - (self.k as f64 + 1.0) / 2.0) * self.delta_f)
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (1..=self.k).map(|k| self.frequency(k).unwrap()).collect()
    }
}

pub fn subcarrier_frequency(grid: &SubcarrierGrid, k: usize) -> Result<f64> {
    grid.frequency(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArraySizes {
    pub n_t: usize,
    pub n_rf: usize,
    pub n_e: usize,
}

impl ArraySizes {
    pub fn n_h(&self) -> usize {
        self.n_rf * self.n_e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayKind {
    BsUla,
    HrisUpa,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub entries: CVector,
    pub kind: ArrayKind,
}

/// λ/2 ULA response, `e^{jπ n sin(angle)} / √N` for `n = 0..N-1`.
pub(crate) fn ula(angle: f64, n: usize) -> CVector {
    let norm = 1.0 / (n as f64).sqrt();
    let s = angle.sin();
    CVector::from_fn(n, |i, _| Complex64::from_polar(norm, PI * i as f64 * s))
}

/// Derivative of [`ula`] with respect to the angle.
pub(crate) fn ula_derivative(angle: f64, n: usize) -> CVector {
    let c = angle.cos();
    let mut v = ula(angle, n);
    for (i, e) in v.iter_mut().enumerate() {
        *e *= J * (PI * i as f64 * c);
    }
    v
}

pub fn steer_bs(theta: f64, n_t: usize) -> SteeringVector {
    SteeringVector {
        entries: ula(theta, n_t),
        kind: ArrayKind::BsUla,
    }
}

/// UPA response `a_rows(φ) ⊗ a_cols(ψ)`: the azimuth factor spans the RF
/// chains, the elevation factor the elements of one chain.
pub fn steer_hris(psi: f64, phi: f64, n_rf: usize, n_e: usize) -> SteeringVector {
    SteeringVector {
        entries: kron(&ula(phi, n_rf), &ula(psi, n_e)),
        kind: ArrayKind::HrisUpa,
    }
}

/// One UE's term in the bistatic BS → UE → HRIS channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionPath {
    pub theta: f64,
    pub psi: f64,
    pub phi: f64,
    pub tau_h: f64,
    pub gain: Complex64,
    pub doppler: f64,
}

impl ReflectionPath {
    pub fn from_link(link: &UeLinkParams) -> Self {
        Self {
            theta: link.angles.theta,
            psi: link.angles.psi,
            phi: link.angles.phi,
            tau_h: link.delays.tau_h,
            gain: link.gains.a_h,
            doppler: link.doppler.f_d_bistatic,
        }
    }

    /// Complex coefficient of the path on a subcarrier.
    pub fn coefficient(&self, f_k: f64, beta_k: Complex64) -> Complex64 {
        self.gain * beta_k * Complex64::from_polar(1.0, -2.0 * PI * (f_k - self.doppler) * self.tau_h)
    }
}

/// Per-subcarrier channels of one frame.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub sizes: ArraySizes,
    pub freqs: Vec<f64>,
    /// Unit-amplitude per-subcarrier coefficients of the bistatic path.
    pub subcarrier_phases: Vec<Complex64>,
    pub paths: Vec<ReflectionPath>,
    /// `[k][u]`, 1 × N_T.
    pub h_dl: Vec<Vec<CRow>>,
    /// `[k]`, N_H × N_T.
    pub h_bh: Vec<CMatrix>,
    /// `[k]`, N_H × N_T.
    pub h_h: Vec<CMatrix>,
    /// `[k][u]`, 1 × N_H.
    pub h_hu: Vec<Vec<CRow>>,
}

impl ChannelSet {
    pub fn num_subcarriers(&self) -> usize {
        self.freqs.len()
    }

    pub fn num_ues(&self) -> usize {
        self.paths.len()
    }

    /// Rank-one term of UE `u` in `H_H` on subcarrier index `k` (0-based).
    pub fn bistatic_term(&self, k: usize, u: usize) -> CMatrix {
        let p = &self.paths[u];
        let a_h = steer_hris(p.psi, p.phi, self.sizes.n_rf, self.sizes.n_e).entries;
        let a_bs = ula(p.theta, self.sizes.n_t);
        (a_h * a_bs.adjoint()) * p.coefficient(self.freqs[k], self.subcarrier_phases[k])
    }

    /// Rebuilds `H_H` from `paths`, e.g. after perturbing a parameter.
    pub fn rebuild_bistatic(&mut self) {
        self.h_h = (0..self.freqs.len())
            .map(|k| {
                let mut m = CMatrix::zeros(self.sizes.n_h(), self.sizes.n_t);
                for u in 0..self.paths.len() {
                    m += self.bistatic_term(k, u);
                }
                m
            })
            .collect();
    }
}

pub fn assemble_channels(
    grid: &SubcarrierGrid,
    sizes: ArraySizes,
    ues: &[UeLinkParams],
    bs_hris: &BsHrisParams,
    subcarrier_phases: Option<&[Complex64]>,
) -> Result<ChannelSet> {
    let u_count = ues.len();
    if u_count == 0 || sizes.n_t == 0 || sizes.n_rf == 0 || sizes.n_e == 0 {
        return Err(Error::dims("empty UE set or zero-sized array"));
    }
    if !(u_count <= sizes.n_t && sizes.n_t <= sizes.n_h()) {
        return Err(Error::dims(format!(
            "need U ≤ N_T ≤ N_H, got U={u_count}, N_T={}, N_H={}",
            sizes.n_t,
            sizes.n_h()
        )));
    }
    let freqs = grid.frequencies();
    let phases = match subcarrier_phases {
        Some(p) if p.len() != grid.k => {
            return Err(Error::dims(format!("{} subcarrier phases for K={}", p.len(), grid.k)))
        }
        Some(p) => p.to_vec(),
        None => vec![real(1.0); grid.k],
    };

    let a_bs_br = ula(bs_hris.angles.theta, sizes.n_t);
    let a_h_br = steer_hris(bs_hris.angles.psi, bs_hris.angles.phi, sizes.n_rf, sizes.n_e).entries;
    let br_shape = &a_h_br * a_bs_br.adjoint();

    let dl_rows: Vec<CRow> = ues.iter().map(|l| ula(l.angles.theta, sizes.n_t).adjoint()).collect();
    let hu_rows: Vec<CRow> = ues
        .iter()
        .map(|l| steer_hris(l.angles.psi, l.angles.phi, sizes.n_rf, sizes.n_e).entries.adjoint())
        .collect();

    let mut h_dl = Vec::with_capacity(grid.k);
    let mut h_hu = Vec::with_capacity(grid.k);
    let mut h_bh = Vec::with_capacity(grid.k);
    for &f_k in &freqs {
        h_dl.push(
            ues.iter()
                .zip(&dl_rows)
                .map(|(l, row)| {
                    let c = l.gains.a_dl
                        * Complex64::from_polar(1.0, -2.0 * PI * (f_k - l.doppler.f_d_dl) * l.delays.tau_dl);
                    row * c
                })
                .collect(),
        );
        h_hu.push(
            ues.iter()
                .zip(&hu_rows)
                .map(|(l, row)| {
                    let c = Complex64::from_polar(l.hu_gain, -2.0 * PI * (f_k - l.hu_doppler) * l.hu_delay);
                    row * c
                })
                .collect(),
        );
        h_bh.push(&br_shape * Complex64::from_polar(bs_hris.a_br, -2.0 * PI * f_k * bs_hris.tau_br));
    }

    let mut set = ChannelSet {
        sizes,
        freqs,
        subcarrier_phases: phases,
        paths: ues.iter().map(ReflectionPath::from_link).collect(),
        h_dl,
        h_bh,
        h_h: Vec::new(),
        h_hu,
    };
    set.rebuild_bistatic();
    Ok(set)
}

/// `h_dir = h_DL + (1−ρ) h_HU diag(φ) H_BR`.
pub fn effective_dl_channel(h_dl: &CRow, h_hu: &CRow, phi: &CVector, h_bh: &CMatrix, rho: f64) -> Result<CRow> {
    if phi.len() != h_hu.len() || h_bh.nrows() != phi.len() || h_bh.ncols() != h_dl.len() {
        return Err(Error::dims("effective channel operand sizes"));
    }
    for (index, p) in phi.iter().enumerate() {
        let modulus = p.norm();
        if (modulus - 1.0).abs() > UNIT_MODULUS_TOL {
            return Err(Error::UnitModulusViolation { index, modulus });
        }
    }
    let weighted = CRow::from_fn(phi.len(), |_, n| h_hu[n] * phi[n]);
    Ok(h_dl + (weighted * h_bh) * real(1.0 - rho))
}

/// Effective channels for every `(k, u)`.
pub fn effective_channels(channels: &ChannelSet, phi: &CVector, rho: f64) -> Result<Vec<Vec<CRow>>> {
    (0..channels.num_subcarriers())
        .map(|k| {
            (0..channels.num_ues())
                .map(|u| effective_dl_channel(&channels.h_dl[k][u], &channels.h_hu[k][u], phi, &channels.h_bh[k], rho))
                .collect()
        })
        .collect()
}

/// Symbol block of subcarrier `k` (0-based): rows of a T-point DFT so that
/// `S_k S_kᴴ = T·I_U`. Rows are offset by `k·U` so blocks of different
/// subcarriers are mutually orthogonal whenever `K·U ≤ T`.
pub fn symbol_block(k: usize, u_count: usize, t: usize) -> Result<CMatrix> {
    if u_count > t || t == 0 {
        return Err(Error::dims(format!("need U ≤ T, got U={u_count}, T={t}")));
    }
    Ok(DMatrix::from_fn(u_count, t, |r, c| {
        let row = (k * u_count + r) % t;
        // integer reduction keeps the phase argument small and exact
        let idx = (row * c) % t;
        Complex64::from_polar(1.0, -2.0 * PI * idx as f64 / t as f64)
    }))
}

/// Draws an `rows × cols` matrix of i.i.d. CN(0, σ²) entries.
pub fn complex_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, sigma2: f64, rng: &mut R) -> CMatrix {
    let s = (sigma2 / 2.0).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(s * re, s * im)
    })
}

/// HRIS RF-chain samples `Y_k = ρ W_Hᴴ H_H,k F_k S_k + N`.
pub fn hris_rx_signal<R: Rng + ?Sized>(
    w_h: &CMatrix,
    h_h: &CMatrix,
    f_k: &CMatrix,
    s_k: &CMatrix,
    rho: f64,
    sigma2: f64,
    rng: &mut R,
) -> Result<CMatrix> {
    if w_h.nrows() != h_h.nrows() || h_h.ncols() != f_k.nrows() || f_k.ncols() != s_k.nrows() {
        return Err(Error::dims("receive signal operand sizes"));
    }
    let mean = (w_h.adjoint() * h_h * f_k * s_k) * real(rho);
    if sigma2 == 0.0 {
        return Ok(mean);
    }
    Ok(mean + complex_gaussian(w_h.ncols(), s_k.ncols(), sigma2, rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrReport {
    /// `[k][u]`, linear.
    pub sinr: Vec<Vec<f64>>,
    /// `Σ_k SINR_{k,u}`, linear.
    pub sum_sinr: Vec<f64>,
    /// `Σ_k log2(1 + SINR_{k,u})` in bit/s/Hz.
    pub rate: Vec<f64>,
}

pub fn sinr_and_rate(h_dir: &[Vec<CRow>], precoders: &[CMatrix], sigma2: f64) -> Result<SinrReport> {
    if h_dir.len() != precoders.len() {
        return Err(Error::dims("one precoder per subcarrier required"));
    }
    let u_count = h_dir.first().map_or(0, Vec::len);
    let mut sinr = Vec::with_capacity(h_dir.len());
    for (rows, f) in h_dir.iter().zip(precoders) {
        if rows.len() != u_count || f.ncols() != u_count {
            return Err(Error::dims("precoder columns must match the UE count"));
        }
        let per_k = rows
            .iter()
            .enumerate()
            .map(|(u, h)| {
                if h.len() != f.nrows() {
                    return Err(Error::dims("channel row and precoder length differ"));
                }
                let gains: Vec<f64> = (0..u_count)
                    .map(|i| {
                        let amp: Complex64 = h.iter().zip(f.column(i).iter()).map(|(a, b)| a * b).sum();
                        amp.norm_sqr()
                    })
                    .collect();
                let interference: f64 = gains.iter().enumerate().filter(|(i, _)| *i != u).map(|(_, g)| g).sum();
                let denom = interference + sigma2;
                Ok(if gains[u] == 0.0 { 0.0 } else { gains[u] / denom })
            })
            .collect::<Result<Vec<f64>>>()?;
        sinr.push(per_k);
    }
    let sum_sinr = (0..u_count).map(|u| sinr.iter().map(|s| s[u]).sum()).collect();
    let rate = (0..u_count).map(|u| sinr.iter().map(|s| (1.0 + s[u]).log2()).sum()).collect();
    Ok(SinrReport { sinr, sum_sinr, rate })
}
