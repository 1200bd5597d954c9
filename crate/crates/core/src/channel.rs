//! Radio channel: element gain pattern, Fresnel ground reflection, path
//! amplitudes and phases, steering vectors and synthesis of the per
//! sub-array observation matrices `Y_k` (M_k x N).

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::deployment::Deployment;
use crate::error::{Error, Result};
use crate::fim::channel_params;
use crate::geometry::{wavenumber, PathKind, Pose, Vec3, VehicleBody};
use crate::scenario::{GainModel, GroundModel, Polarization, ScenarioConfig, SyncOffsets, Waveform, SPEED_OF_LIGHT};

/// Receive element gain (linear); zero outside the front hemisphere.
pub fn element_gain(az: f64, el: f64, model: &GainModel) -> f64 {
    if az.abs() > FRAC_PI_2 || el.abs() > FRAC_PI_2 {
        return 0.0;
    }
    let p = 2.0 * model.beta;
    model.max_gain * az.cos().max(0.0).powf(p) * el.cos().max(0.0).powf(p) + model.min_gain
}

/// Fresnel reflection coefficient of the ground for an incidence angle
/// measured from the surface normal.
///
/// Both polarizations use the convention in which the coefficient tends to
/// −1 at grazing incidence.
pub fn fresnel_coefficient(incidence: f64, ground: &GroundModel) -> Complex64 {
    let eps = ground.permittivity;
    let (sin_i, cos_i) = incidence.sin_cos();
    let root = (eps - sin_i * sin_i).sqrt();
    match ground.polarization {
        Polarization::Perpendicular => (cos_i - root) / (cos_i + root),
        Polarization::Parallel => (eps * cos_i - root) / (eps * cos_i + root),
    }
}

/// Incidence angle (from the normal) of the specular ground bounce for a
/// receiver at global `position`, with the BS at the origin.
pub fn ground_incidence_angle(position: &Vec3, bs_height: f64) -> f64 {
    let vertical = position.z + 2.0 * bs_height;
    let horizontal = position.x.hypot(position.y);
    horizontal.atan2(vertical)
}

/// Free-space amplitude `√(G_tx G_rx) λ / (4π d)`, scaled by `|Γ|` for the
/// ground-reflected path.
pub fn path_gain(
    distance: f64,
    kind: PathKind,
    gains: &GainModel,
    az: f64,
    el: f64,
    reflection: Complex64,
    lambda: f64,
) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::InvalidInput(format!("path distance must be positive, got {distance}")));
    }
    let free_space = (gains.tx_gain * element_gain(az, el, gains)).sqrt() * lambda / (4.0 * PI * distance);
    Ok(match kind {
        PathKind::LineOfSight => free_space,
        PathKind::GroundReflection => reflection.norm() * free_space,
    })
}

/// Spatial steering vector `exp(j q_mᵀ k(az, el))`.
pub fn spatial_steering(elements: &[Vec3], az: f64, el: f64, lambda: f64) -> DVector<Complex64> {
    let k = wavenumber(az, el, lambda);
    DVector::from_iterator(elements.len(), elements.iter().map(|q| Complex64::cis(q.dot(&k))))
}

/// Frequency steering vector `exp(−j 2π Δf n d̆ / c)`, `n = 0..N−1`.
pub fn frequency_steering(pseudo_range: f64, waveform: &Waveform) -> DVector<Complex64> {
    let w = -2.0 * PI * waveform.subcarrier_spacing_hz * pseudo_range / SPEED_OF_LIGHT;
    DVector::from_iterator(waveform.subcarriers, (0..waveform.subcarriers).map(|n| Complex64::cis(w * n as f64)))
}

/// Unwrapped channel phase `−2π f_c d / c + δ_φ (+ ∠Γ for reflections)`.
pub fn phase_response(distance: f64, kind: PathKind, phase_offset: f64, reflection_phase: f64, carrier_hz: f64) -> f64 {
    let base = -2.0 * PI * carrier_hz * distance / SPEED_OF_LIGHT + phase_offset;
    match kind {
        PathKind::LineOfSight => base,
        PathKind::GroundReflection => base + reflection_phase,
    }
}

/// Received observation matrices, one per sub-array.
#[derive(Clone, Debug)]
pub struct Observation {
    pub matrices: Vec<DMatrix<Complex64>>,
    /// Every path of every sub-array is occluded: the data is noise only.
    pub fully_occluded: bool,
}

impl Observation {
    pub fn energy(&self) -> f64 {
        self.matrices.iter().map(|m| m.norm_squared()).sum()
    }
}

/// Synthesize `Y_k = Σ_ℓ α e^{jφ} √P_tx a (b ⊙ x)ᵀ (+ Z_k)` for every
/// sub-array. With `noise_seed`, circular Gaussian noise of variance σ² is
/// added from one generator stream per sub-array index, so the noise of
/// sub-array `k` does not depend on how many sub-arrays are present.
pub fn synthesize_observation(
    deployment: &Deployment,
    vehicle: &Pose,
    scenario: &ScenarioConfig,
    body: &VehicleBody,
    offsets: &SyncOffsets,
    noise_seed: Option<u64>,
) -> Result<Observation> {
    let waveform = &scenario.waveform;
    let lambda = scenario.wavelength();
    let params = channel_params(deployment, vehicle, scenario, body, offsets)?;
    let amp = waveform.tx_power_w.sqrt();
    let mut fully_occluded = true;
    let matrices = deployment
        .sub_arrays
        .iter()
        .zip(&params)
        .enumerate()
        .map(|(k, (spec, sp))| {
            let m = spec.elements.len();
            let mut y = DMatrix::<Complex64>::zeros(m, waveform.subcarriers);
            for path in &sp.paths {
                fully_occluded = false;
                let xi = &path.xi;
                let a = spatial_steering(&spec.elements, xi.azimuth, xi.elevation, lambda);
                let bx = frequency_steering(xi.pseudo_range, waveform).component_mul(&DVector::from_column_slice(&waveform.pilots));
                let coeff = Complex64::from_polar(xi.amplitude * amp, xi.phase);
                y += (a * bx.transpose()) * coeff;
            }
            if let Some(seed) = noise_seed {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                let normal = Normal::new(0.0, (waveform.noise_variance_w / 2.0).sqrt()).expect("finite variance");
                // column-major, matching vec(Y_k)
                for v in y.iter_mut() {
                    *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
                }
            }
            y
        })
        .collect();
    Ok(Observation { matrices, fully_occluded })
}
