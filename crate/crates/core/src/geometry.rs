//! Far-field geometry of the BS / HRIS / UE triangle.
//!
//! The BS sits at the origin with its ULA along the x-axis, the HRIS has its
//! first element at `p_h`. Every UE maps to three angles, a bistatic delay,
//! path gains and Doppler shifts. All arctangents are `atan2`.

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Minimum distance between a UE and the BS or HRIS.
pub const MIN_SEPARATION: f64 = 1e-6;

pub type Position3 = Vector3<f64>;
pub type Velocity3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSet {
    /// Azimuth AoD at the BS.
    pub theta: f64,
    /// Elevation AoA at the HRIS.
    pub psi: f64,
    /// Azimuth AoA at the HRIS.
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkDelays {
    /// BS → UE, including the clock bias.
    pub tau_dl: f64,
    /// BS → UE → HRIS.
    pub tau_h: f64,
    /// BS → HRIS.
    pub tau_br: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathGains {
    pub a_dl: Complex64,
    pub a_br: Complex64,
    pub a_h: Complex64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopplerShift {
    pub f_d_bistatic: f64,
    pub f_d_dl: f64,
}

fn check_ue(p_u: &Position3, p_h: &Position3) -> Result<()> {
    if !(p_u.iter().all(|v| v.is_finite()) && p_h.iter().all(|v| v.is_finite())) {
        return Err(Error::degenerate("non-finite coordinates"));
    }
    if p_u.norm() <= MIN_SEPARATION {
        return Err(Error::degenerate("UE coincides with the BS"));
    }
    if (p_h - p_u).norm() <= MIN_SEPARATION {
        return Err(Error::degenerate("UE coincides with the HRIS"));
    }
    Ok(())
}

pub fn angles_from_position(p_u: &Position3, p_h: &Position3) -> Result<AngleSet> {
    check_ue(p_u, p_h)?;
    let d = p_u - p_h;
    Ok(AngleSet {
        theta: p_u.y.atan2(p_u.x),
        psi: d.z.atan2(d.x.hypot(d.y)),
        phi: d.y.atan2(d.x),
    })
}

/// Angles of the static BS–HRIS link. The azimuth AoD and the azimuth AoA
/// share one expression, so `theta == psi` here.
pub fn bs_hris_angles(p_h: &Position3) -> Result<AngleSet> {
    if p_h.norm() < MIN_SEPARATION {
        return Err(Error::degenerate("HRIS coincides with the BS"));
    }
    let azimuth = p_h.y.atan2(p_h.x);
    Ok(AngleSet {
        theta: azimuth,
        psi: azimuth,
        phi: p_h.z.atan2(p_h.x.hypot(p_h.y)),
    })
}

pub fn link_delays(p_u: &Position3, p_h: &Position3, clock_bias: f64) -> Result<LinkDelays> {
    check_ue(p_u, p_h)?;
    if !clock_bias.is_finite() {
        return Err(Error::degenerate("non-finite clock bias"));
    }
    let d_bu = p_u.norm();
    let d_uh = (p_h - p_u).norm();
    Ok(LinkDelays {
        tau_dl: d_bu / SPEED_OF_LIGHT + clock_bias,
        tau_h: (d_bu + d_uh) / SPEED_OF_LIGHT,
        tau_br: p_h.norm() / SPEED_OF_LIGHT,
    })
}

/// Distance law used in the path-gain formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainModel {
    /// Squared distances: `λ/(4π‖p‖²)` and `λ²/(4π²‖p_u‖²‖p_H−p_u‖²)`.
    #[default]
    Squared,
    /// Plain distances, which makes every gain dimensionless (Friis-like).
    Linear,
}

impl GainModel {
    fn law(self, d2: f64) -> f64 {
        match self {
            GainModel::Squared => d2,
            GainModel::Linear => d2.sqrt(),
        }
    }
}

pub fn path_gains(p_u: &Position3, p_h: &Position3, lambda: f64, omega: f64) -> Result<PathGains> {
    path_gains_with(GainModel::Squared, p_u, p_h, lambda, omega)
}

pub fn path_gains_with(model: GainModel, p_u: &Position3, p_h: &Position3, lambda: f64, omega: f64) -> Result<PathGains> {
    check_ue(p_u, p_h)?;
    let d_bu = model.law(p_u.norm_squared());
    let d_uh = model.law((p_h - p_u).norm_squared());
    let a_h = lambda * lambda / (4.0 * PI * PI * d_bu * d_uh);
    Ok(PathGains {
        a_dl: Complex64::new(lambda / (4.0 * PI * d_bu), 0.0),
        a_br: Complex64::new(lambda / (4.0 * PI * model.law(p_h.norm_squared())), 0.0),
        a_h: Complex64::from_polar(a_h, omega),
        omega,
    })
}

/// Unit vectors BS→UE and UE→HRIS.
fn unit_vectors(p_u: &Position3, p_h: &Position3) -> (Vector3<f64>, Vector3<f64>) {
    (p_u.normalize(), (p_h - p_u).normalize())
}

pub fn doppler(p_u: &Position3, v_u: &Velocity3, p_h: &Position3, f_c: f64) -> Result<DopplerShift> {
    check_ue(p_u, p_h)?;
    let (u_bs, u_h) = unit_vectors(p_u, p_h);
    let scale = f_c / SPEED_OF_LIGHT;
    Ok(DopplerShift {
        f_d_bistatic: scale * (u_bs.dot(v_u) + u_h.dot(v_u)),
        f_d_dl: scale * u_bs.dot(v_u),
    })
}

/// Gradients of `[θ, ψ, φ, τ_H]` with respect to the UE position.
pub fn measurement_gradients(p_u: &Position3, p_h: &Position3) -> Result<[Vector3<f64>; 4]> {
    check_ue(p_u, p_h)?;
    let (x, y) = (p_u.x, p_u.y);
    let r_bs2 = x * x + y * y;
    if r_bs2 <= MIN_SEPARATION * MIN_SEPARATION {
        return Err(Error::degenerate("UE on the BS vertical axis"));
    }
    let d = p_u - p_h;
    let r2 = d.x * d.x + d.y * d.y;
    if r2 <= MIN_SEPARATION * MIN_SEPARATION {
        return Err(Error::degenerate("UE on the HRIS vertical axis"));
    }
    let r = r2.sqrt();
    let s2 = r2 + d.z * d.z;

    let d_theta = Vector3::new(-y / r_bs2, x / r_bs2, 0.0);
    let d_phi = Vector3::new(-d.y / r2, d.x / r2, 0.0);
    let d_psi = Vector3::new(-d.z * d.x / (r * s2), -d.z * d.y / (r * s2), r / s2);
    let (u_bs, u_h) = unit_vectors(p_u, p_h);
    let d_tau = (u_bs - u_h) / SPEED_OF_LIGHT;
    Ok([d_theta, d_psi, d_phi, d_tau])
}

/// Everything the channel builder needs about one UE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeLinkParams {
    pub angles: AngleSet,
    pub delays: LinkDelays,
    pub gains: PathGains,
    pub doppler: DopplerShift,
    /// UE → HRIS delay, gain and Doppler for the HRIS–UE downlink.
    pub hu_delay: f64,
    pub hu_gain: f64,
    pub hu_doppler: f64,
}

impl UeLinkParams {
    pub fn from_geometry(p_u: &Position3, v_u: &Velocity3, p_h: &Position3, f_c: f64, omega: f64) -> Result<Self> {
        Self::from_geometry_with(GainModel::Squared, p_u, v_u, p_h, f_c, omega)
    }

    pub fn from_geometry_with(model: GainModel, p_u: &Position3, v_u: &Velocity3, p_h: &Position3, f_c: f64, omega: f64) -> Result<Self> {
        let lambda = SPEED_OF_LIGHT / f_c;
        let d_uh = (p_h - p_u).norm();
        let (_, u_h) = unit_vectors(p_u, p_h);
        Ok(Self {
            angles: angles_from_position(p_u, p_h)?,
            delays: link_delays(p_u, p_h, 0.0)?,
            gains: path_gains_with(model, p_u, p_h, lambda, omega)?,
            doppler: doppler(p_u, v_u, p_h, f_c)?,
            hu_delay: d_uh / SPEED_OF_LIGHT,
            hu_gain: lambda / (4.0 * PI * model.law(d_uh * d_uh)),
            hu_doppler: f_c / SPEED_OF_LIGHT * u_h.dot(v_u),
        })
    }
}

/// Parameters of the static BS–HRIS link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsHrisParams {
    pub angles: AngleSet,
    pub tau_br: f64,
    pub a_br: f64,
}

impl BsHrisParams {
    pub fn from_geometry(p_h: &Position3, f_c: f64) -> Result<Self> {
        Self::from_geometry_with(GainModel::Squared, p_h, f_c)
    }

    pub fn from_geometry_with(model: GainModel, p_h: &Position3, f_c: f64) -> Result<Self> {
        let lambda = SPEED_OF_LIGHT / f_c;
        Ok(Self {
            angles: bs_hris_angles(p_h)?,
            tau_br: p_h.norm() / SPEED_OF_LIGHT,
            a_br: lambda / (4.0 * PI * model.law(p_h.norm_squared())),
        })
    }
}
