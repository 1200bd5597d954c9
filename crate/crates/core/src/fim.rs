//! Fisher information of the positioning parameters.
//!
//! For sub-array `k` the channel parameters `ξ_k = [az, el, d̆, φ, α]` per
//! visible path have the closed-form information matrix `I_ξk`; the chain
//! rule `J_kᵀ I_ξk J_k` maps it onto the positioning vector
//! `η = [x, y, δ_d, phase offsets, α_LOS…, (α_GR, ∠Γ)…]`.
//!
//! Every sub-array touches at most seven entries of `η`: the position, the
//! range bias, its phase offset, and its own path amplitudes and reflection
//! phase. Its contribution is therefore first built as a 7 x 7 "local"
//! matrix and then scattered into the global index map. Because the local
//! matrix does not depend on the synchronization offsets, it can be
//! tabulated once per placement and pose ([`SubArrayInformation`]) and
//! reduced to a Schur complement on the shared parameters
//! ([`Contribution`]) for fast deployment scoring.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SMatrix};
use num_complex::Complex64;

use crate::channel::{fresnel_coefficient, ground_incidence_angle, path_gain, phase_response};
use crate::deployment::Deployment;
use crate::error::{Error, Result};
use crate::geometry::{path_geometries, sub_array_pose, PathGeometry, PathKind, Pose, SubArraySpec, Vec3, VehicleBody};
use crate::linalg::{back_substitute, cholesky_in_place, equilibrated_cholesky, forward_substitute, RCOND_THRESHOLD};
use crate::scenario::{Mode, PhaseOffsets, ScenarioConfig, SyncOffsets, Waveform, SPEED_OF_LIGHT};

/// Channel parameters `ξ = [θ_az, θ_el, d̆, φ, α]` of one path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelParams {
    pub azimuth: f64,
    pub elevation: f64,
    pub pseudo_range: f64,
    /// Unwrapped phase, radians.
    pub phase: f64,
    pub amplitude: f64,
}

impl ChannelParams {
    pub fn to_array(&self) -> [f64; 5] {
        [self.azimuth, self.elevation, self.pseudo_range, self.phase, self.amplitude]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        ChannelParams { azimuth: v[0], elevation: v[1], pseudo_range: v[2], phase: v[3], amplitude: v[4] }
    }
}

/// One visible path at one sub-array.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathParams {
    pub geometry: PathGeometry,
    pub xi: ChannelParams,
    /// Ground reflection coefficient (1 for the LOS path).
    pub reflection: Complex64,
}

impl PathParams {
    pub fn kind(&self) -> PathKind {
        self.geometry.kind
    }
}

/// Channel parameters of one sub-array.
#[derive(Clone, Debug, PartialEq)]
pub struct SubArrayParams {
    /// Global pose of the sub-array.
    pub pose: Pose,
    /// Every modelled path, visible or not.
    pub geometries: Vec<PathGeometry>,
    /// Visible paths (the set `ℒ_k`), LOS first.
    pub paths: Vec<PathParams>,
}

impl SubArrayParams {
    pub fn path(&self, kind: PathKind) -> Option<&PathParams> {
        self.paths.iter().find(|p| p.kind() == kind)
    }

    pub fn sees(&self, kind: PathKind) -> bool {
        self.path(kind).is_some()
    }

    pub fn is_occluded(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Channel parameters of one sub-array for the given range bias and phase
/// offset.
pub fn sub_array_params(
    spec: &SubArraySpec,
    vehicle: &Pose,
    scenario: &ScenarioConfig,
    body: &VehicleBody,
    range_bias: f64,
    phase_offset: f64,
) -> Result<SubArrayParams> {
    let pose = sub_array_pose(vehicle, spec);
    let lambda = scenario.wavelength();
    let geometries = path_geometries(vehicle, spec, scenario.bs_height_m, scenario.ground_reflection, body);
    let mut paths = Vec::with_capacity(geometries.len());
    for g in geometries.iter().filter(|g| g.visible) {
        let reflection = match g.kind {
            PathKind::LineOfSight => Complex64::new(1.0, 0.0),
            PathKind::GroundReflection => {
                fresnel_coefficient(ground_incidence_angle(&pose.position, scenario.bs_height_m), &scenario.ground)
            }
        };
        let amplitude = path_gain(g.distance, g.kind, &scenario.gains, g.azimuth, g.elevation, reflection, lambda)?;
        let phase = phase_response(g.distance, g.kind, phase_offset, reflection.arg(), scenario.waveform.carrier_hz);
        paths.push(PathParams {
            geometry: *g,
            xi: ChannelParams {
                azimuth: g.azimuth,
                elevation: g.elevation,
                pseudo_range: g.distance + range_bias,
                phase,
                amplitude,
            },
            reflection,
        });
    }
    Ok(SubArrayParams { pose, geometries, paths })
}

fn check_offsets(offsets: &SyncOffsets, k: usize) -> Result<()> {
    if let PhaseOffsets::PerSubArray(v) = &offsets.phase {
        if v.len() != k {
            return Err(Error::InvalidInput(format!("expected {k} phase offsets, got {}", v.len())));
        }
    }
    Ok(())
}

/// Channel parameters and visible path sets of every sub-array.
pub fn channel_params(
    deployment: &Deployment,
    vehicle: &Pose,
    scenario: &ScenarioConfig,
    body: &VehicleBody,
    offsets: &SyncOffsets,
) -> Result<Vec<SubArrayParams>> {
    check_offsets(offsets, deployment.len())?;
    deployment
        .sub_arrays
        .iter()
        .enumerate()
        .map(|(k, spec)| sub_array_params(spec, vehicle, scenario, body, offsets.range_bias_m, offsets.phase_for(k)))
        .collect()
}

/// `Σ_{n<N} n^t e^{jwn}`.
fn weighted_phasor_sum(t: u32, w: f64, n: usize) -> Complex64 {
    if w == 0.0 {
        let nf = n as f64;
        return Complex64::new(
            match t {
                0 => nf,
                1 => nf * (nf - 1.0) / 2.0,
                _ => (nf - 1.0) * nf * (2.0 * nf - 1.0) / 6.0,
            },
            0.0,
        );
    }
    (0..n).map(|i| Complex64::cis(w * i as f64) * (i as f64).powi(t as i32)).sum()
}

/// `∂k/∂θ_az` and `∂k/∂θ_el` of the wavenumber vector.
fn wavenumber_derivatives(az: f64, el: f64, lambda: f64) -> (Vec3, Vec3) {
    let (sa, ca) = az.sin_cos();
    let (se, ce) = el.sin_cos();
    let s = -2.0 * PI / lambda;
    (Vec3::new(-sa * ce, -ca * ce, 0.0) * s, Vec3::new(-ca * se, sa * se, ce) * s)
}

/// Information matrix `I_ξ` of the visible paths of one sub-array, ordered
/// `[ξ_0, ξ_1, …]` with `ξ = [az, el, d̆, φ, α]`.
///
/// The mean of path `ℓ` is `α e^{jφ} √P (b ⊙ x) ⊗ a`; every derivative is a
/// scalar times a Kronecker product of a frequency and a spatial factor, so
/// each entry factors into a subcarrier sum and an element sum. Requires
/// unit-modulus pilots.
pub fn channel_fim(paths: &[ChannelParams], waveform: &Waveform, elements: &[Vec3], lambda: f64) -> DMatrix<f64> {
    let kappa = 2.0 * PI * waveform.subcarrier_spacing_hz / SPEED_OF_LIGHT;
    let sqrt_p = waveform.tx_power_w.sqrt();
    let j = Complex64::i();
    // per path: five (coefficient, subcarrier weight power, spatial factor)
    let factors: Vec<Vec<(Complex64, u32, Vec<Complex64>)>> = paths
        .iter()
        .map(|xi| {
            let k = crate::geometry::wavenumber(xi.azimuth, xi.elevation, lambda);
            let (dk_az, dk_el) = wavenumber_derivatives(xi.azimuth, xi.elevation, lambda);
            let a: Vec<Complex64> = elements.iter().map(|q| Complex64::cis(q.dot(&k))).collect();
            let a_az = elements.iter().zip(&a).map(|(q, am)| am * j * q.dot(&dk_az)).collect();
            let a_el = elements.iter().zip(&a).map(|(q, am)| am * j * q.dot(&dk_el)).collect();
            let unit = Complex64::from_polar(sqrt_p, xi.phase);
            let g = unit * xi.amplitude;
            vec![(g, 0, a_az), (g, 0, a_el), (-j * kappa * g, 1, a.clone()), (j * g, 0, a.clone()), (unit, 0, a)]
        })
        .collect();
    let n = 5 * paths.len();
    let mut fim = DMatrix::zeros(n, n);
    let scale = 2.0 / waveform.noise_variance_w;
    for (l1, f1) in factors.iter().enumerate() {
        for (l2, f2) in factors.iter().enumerate().skip(l1) {
            let w = kappa * (paths[l1].pseudo_range - paths[l2].pseudo_range);
            let sums = [0, 1, 2].map(|t| weighted_phasor_sum(t, w, waveform.subcarriers));
            for (i, (c1, t1, v1)) in f1.iter().enumerate() {
                for (jj, (c2, t2, v2)) in f2.iter().enumerate() {
                    let spatial: Complex64 = v1.iter().zip(v2).map(|(x, y)| x.conj() * y).sum();
                    let v = scale * (c1.conj() * c2 * sums[(t1 + t2) as usize] * spatial).re;
                    fim[(5 * l1 + i, 5 * l2 + jj)] = v;
                    fim[(5 * l2 + jj, 5 * l1 + i)] = v;
                }
            }
        }
    }
    fim
}

/// Number of parameters a single sub-array can touch.
pub const LOCAL_DIM: usize = 7;
/// Local parameter indices: position, range bias, phase offset of the
/// sub-array, LOS amplitude, GR amplitude, GR reflection phase.
pub const LOCAL_X: usize = 0;
pub const LOCAL_Y: usize = 1;
pub const LOCAL_RANGE_BIAS: usize = 2;
pub const LOCAL_PHASE: usize = 3;
pub const LOCAL_LOS_AMPLITUDE: usize = 4;
pub const LOCAL_GR_AMPLITUDE: usize = 5;
pub const LOCAL_GR_PHASE: usize = 6;

/// Closed-form `∂ξ/∂η_local` (rows `5ℓ..5ℓ+5` per visible path, seven
/// columns in the local ordering).
pub fn local_jacobian(params: &SubArrayParams, carrier_hz: f64) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(5 * params.paths.len(), LOCAL_DIM);
    let rt = params.pose.rotation.transpose();
    let k0 = 2.0 * PI * carrier_hz / SPEED_OF_LIGHT;
    for (l, path) in params.paths.iter().enumerate() {
        let u = path.geometry.local_source;
        let d = u.norm();
        let rho2 = u.x * u.x + u.y * u.y;
        let rho = rho2.sqrt();
        let daz_du = if rho2 > 0.0 { Vec3::new(u.y, -u.x, 0.0) / rho2 } else { Vec3::zeros() };
        let del_du = if rho > 0.0 { (Vec3::z() * (d * d) - u * u.z) / (d * d * rho) } else { Vec3::zeros() };
        let dd_du = u / d;
        for (col, axis) in [(LOCAL_X, 0), (LOCAL_Y, 1)] {
            // ũ = R̃ᵀ(s − p_k) with p_k = p + RΔ_k
            let du = -rt.column(axis).into_owned();
            let dd = dd_du.dot(&du);
            jac[(5 * l, col)] = daz_du.dot(&du);
            jac[(5 * l + 1, col)] = del_du.dot(&du);
            jac[(5 * l + 2, col)] = dd;
            jac[(5 * l + 3, col)] = -k0 * dd;
        }
        jac[(5 * l + 2, LOCAL_RANGE_BIAS)] = 1.0;
        jac[(5 * l + 3, LOCAL_PHASE)] = 1.0;
        match path.kind() {
            PathKind::LineOfSight => jac[(5 * l + 4, LOCAL_LOS_AMPLITUDE)] = 1.0,
            PathKind::GroundReflection => {
                jac[(5 * l + 3, LOCAL_GR_PHASE)] = 1.0;
                jac[(5 * l + 4, LOCAL_GR_AMPLITUDE)] = 1.0;
            }
        }
    }
    jac
}

/// Horizontal gradient of the distance from the vehicle reference point to
/// the base station at the origin.
pub fn reference_gradient(vehicle: &Pose) -> [f64; 2] {
    let p = vehicle.position;
    let d = p.norm();
    if d > 0.0 {
        [p.x / d, p.y / d]
    } else {
        [0.0, 0.0]
    }
}

/// Local Jacobian in shifted nuisance coordinates.
///
/// The carrier term `−k₀ d` makes the phase rows of [`local_jacobian`]
/// nearly collinear with the phase offsets. Here the range bias absorbs
/// `g·p` for the common `reference` gradient `g`, the phase offset absorbs
/// `k₀ g_k·p` for the sub-array's own gradient `g_k` (LOS when visible, see
/// [`SubArrayInformation::phase_slope`]) and the reflection phase absorbs
/// the rest of its path's carrier term. Nuisance entries shift by linear
/// functions of position only, so the position block of the inverse is
/// unchanged.
pub fn conditioned_jacobian(params: &SubArrayParams, carrier_hz: f64, reference: [f64; 2]) -> DMatrix<f64> {
    let mut jac = local_jacobian(params, carrier_hz);
    let k0 = 2.0 * PI * carrier_hz / SPEED_OF_LIGHT;
    let own = own_gradient(params);
    for (l, path) in params.paths.iter().enumerate() {
        for (col, axis) in [(LOCAL_X, 0), (LOCAL_Y, 1)] {
            let dd = path_gradient(params, path, axis);
            jac[(5 * l + 2, col)] = dd - reference[axis];
            jac[(5 * l + 3, col)] = match path.kind() {
                PathKind::GroundReflection => 0.0,
                PathKind::LineOfSight => -k0 * (dd - own[axis]),
            };
        }
    }
    jac
}

/// Horizontal gradient of one path's length with respect to the vehicle
/// position.
fn path_gradient(params: &SubArrayParams, path: &PathParams, axis: usize) -> f64 {
    let u = path.geometry.local_source;
    -(u / u.norm()).dot(&params.pose.rotation.transpose().column(axis))
}

/// Gradient absorbed by the sub-array's phase offset.
fn own_gradient(params: &SubArrayParams) -> [f64; 2] {
    match params.path(PathKind::LineOfSight).or_else(|| params.paths.first()) {
        Some(p) => [path_gradient(params, p, 0), path_gradient(params, p, 1)],
        None => [0.0; 2],
    }
}

/// `Tᵀ M T` for `T = I + e_phase (t₀ e_xᵀ + t₁ e_yᵀ)`: re-expresses an
/// information matrix after the phase offset `δ` is replaced by
/// `δ + t·p`. `m` is row-major with leading dimension `n`.
fn shear(m: &mut [f64], n: usize, [x, y, phase]: [usize; 3], t: [f64; 2]) {
    for (axis, ti) in [(x, t[0]), (y, t[1])] {
        if ti == 0.0 {
            continue;
        }
        for r in 0..n {
            m[r * n + axis] += ti * m[r * n + phase];
        }
        for c in 0..n {
            m[axis * n + c] += ti * m[phase * n + c];
        }
    }
}

/// Information of one sub-array over its local parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubArrayInformation {
    /// `J_localᵀ I_ξ J_local`.
    pub matrix: SMatrix<f64, LOCAL_DIM, LOCAL_DIM>,
    /// The same information in the coordinates of [`conditioned_jacobian`].
    pub conditioned: SMatrix<f64, LOCAL_DIM, LOCAL_DIM>,
    /// `k₀ g_k`, the phase slope absorbed by the local phase offset.
    /// Sub-arrays sharing one phase offset are brought to a common slope
    /// with [`SubArrayInformation::conditioned_at`].
    pub phase_slope: [f64; 2],
    pub sees_los: bool,
    pub sees_gr: bool,
}

impl SubArrayInformation {
    /// Conditioned information with the phase offset re-expressed at
    /// phase slope `anchor`.
    pub fn conditioned_at(&self, anchor: [f64; 2]) -> SMatrix<f64, LOCAL_DIM, LOCAL_DIM> {
        let mut m = self.conditioned;
        let t = [anchor[0] - self.phase_slope[0], anchor[1] - self.phase_slope[1]];
        // symmetric, so row-major and column-major agree
        shear(m.as_mut_slice(), LOCAL_DIM, [LOCAL_X, LOCAL_Y, LOCAL_PHASE], t);
        m
    }

    pub fn is_occluded(&self) -> bool {
        !(self.sees_los || self.sees_gr)
    }

    /// Whether local parameter `i` is part of `η` for this sub-array.
    pub fn present(&self, i: usize) -> bool {
        match i {
            LOCAL_LOS_AMPLITUDE => self.sees_los,
            LOCAL_GR_AMPLITUDE | LOCAL_GR_PHASE => self.sees_gr,
            _ => !self.is_occluded(),
        }
    }
}

fn congruence(jac: &DMatrix<f64>, ixi: &DMatrix<f64>) -> SMatrix<f64, LOCAL_DIM, LOCAL_DIM> {
    let mut m = SMatrix::<f64, LOCAL_DIM, LOCAL_DIM>::zeros();
    m.copy_from(&(jac.transpose() * ixi * jac));
    // exact symmetry
    (m + m.transpose()) * 0.5
}

/// `J_localᵀ I_ξ J_local` for one sub-array, built from its channel
/// parameters, with `reference` the gradient from [`reference_gradient`].
pub fn local_information(
    params: &SubArrayParams,
    spec: &SubArraySpec,
    scenario: &ScenarioConfig,
    reference: [f64; 2],
) -> SubArrayInformation {
    let zero = SMatrix::<f64, LOCAL_DIM, LOCAL_DIM>::zeros();
    let mut info = SubArrayInformation {
        matrix: zero,
        conditioned: zero,
        phase_slope: [0.0; 2],
        sees_los: params.sees(PathKind::LineOfSight),
        sees_gr: params.sees(PathKind::GroundReflection),
    };
    if !params.is_occluded() {
        let xis: Vec<ChannelParams> = params.paths.iter().map(|p| p.xi).collect();
        let ixi = channel_fim(&xis, &scenario.waveform, &spec.elements, scenario.wavelength());
        let carrier = scenario.waveform.carrier_hz;
        info.matrix = congruence(&local_jacobian(params, carrier), &ixi);
        info.conditioned = congruence(&conditioned_jacobian(params, carrier, reference), &ixi);
        let k0 = 2.0 * PI * carrier / SPEED_OF_LIGHT;
        info.phase_slope = own_gradient(params).map(|g| k0 * g);
    }
    info
}

/// Local information of one sub-array at one vehicle pose. Independent of
/// the synchronization offsets, which are taken as zero.
pub fn sub_array_information(
    spec: &SubArraySpec,
    vehicle: &Pose,
    scenario: &ScenarioConfig,
    body: &VehicleBody,
) -> Result<SubArrayInformation> {
    let params = sub_array_params(spec, vehicle, scenario, body, 0.0, 0.0)?;
    Ok(local_information(&params, spec, scenario, reference_gradient(vehicle)))
}

/// One entry of `η`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EtaParam {
    X,
    Y,
    RangeBias,
    /// Shared phase offset (coherent mode).
    Phase,
    /// Phase offset of sub-array `k` (incoherent mode).
    SubArrayPhase(usize),
    LosAmplitude(usize),
    GrAmplitude(usize),
    GrPhase(usize),
}

impl EtaParam {
    /// Parameters every sub-array shares in the given mode.
    pub fn is_shared(&self) -> bool {
        matches!(self, EtaParam::X | EtaParam::Y | EtaParam::RangeBias | EtaParam::Phase)
    }

    pub fn name(&self) -> String {
        match self {
            EtaParam::X => "x".into(),
            EtaParam::Y => "y".into(),
            EtaParam::RangeBias => "delta_d".into(),
            EtaParam::Phase => "delta_phi".into(),
            EtaParam::SubArrayPhase(k) => format!("delta_phi[{k}]"),
            EtaParam::LosAmplitude(k) => format!("alpha_los[{k}]"),
            EtaParam::GrAmplitude(k) => format!("alpha_gr[{k}]"),
            EtaParam::GrPhase(k) => format!("angle_gamma[{k}]"),
        }
    }
}

/// Index map of `η`. Sub-array indices refer to positions in the
/// deployment; occluded sub-arrays contribute no entries.
#[derive(Clone, Debug, PartialEq)]
pub struct EtaLayout {
    pub mode: Mode,
    pub params: Vec<EtaParam>,
}

impl EtaLayout {
    /// Layout for the given per-sub-array `(sees LOS, sees GR)` flags.
    pub fn new(mode: Mode, visibility: &[(bool, bool)]) -> Self {
        let mut params = vec![EtaParam::X, EtaParam::Y, EtaParam::RangeBias];
        match mode {
            Mode::Coherent => params.push(EtaParam::Phase),
            Mode::Incoherent => params.extend(
                visibility.iter().enumerate().filter(|(_, (l, g))| *l || *g).map(|(k, _)| EtaParam::SubArrayPhase(k)),
            ),
        }
        params.extend(visibility.iter().enumerate().filter(|(_, v)| v.0).map(|(k, _)| EtaParam::LosAmplitude(k)));
        for (k, _) in visibility.iter().enumerate().filter(|(_, v)| v.1) {
            params.push(EtaParam::GrAmplitude(k));
            params.push(EtaParam::GrPhase(k));
        }
        EtaLayout { mode, params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, p: EtaParam) -> Option<usize> {
        self.params.iter().position(|q| *q == p)
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(EtaParam::name).collect()
    }

    /// Global index of each local parameter of sub-array `k`.
    pub fn local_indices(&self, k: usize) -> [Option<usize>; LOCAL_DIM] {
        let phase = match self.mode {
            Mode::Coherent => EtaParam::Phase,
            Mode::Incoherent => EtaParam::SubArrayPhase(k),
        };
        [
            EtaParam::X,
            EtaParam::Y,
            EtaParam::RangeBias,
            phase,
            EtaParam::LosAmplitude(k),
            EtaParam::GrAmplitude(k),
            EtaParam::GrPhase(k),
        ]
        .map(|p| self.index_of(p))
    }

    /// Factorization order: every sub-array's private parameters first,
    /// the shared ones last.
    pub fn factorization_order(&self) -> Vec<usize> {
        let (shared, private): (Vec<usize>, Vec<usize>) = (0..self.len()).partition(|&i| self.params[i].is_shared());
        private.into_iter().chain(shared).collect()
    }
}

/// Fisher information of `η` with conditioning diagnostics.
#[derive(Clone, Debug)]
pub struct FimResult {
    pub matrix: DMatrix<f64>,
    /// `I_η` in the shifted nuisance coordinates of
    /// [`conditioned_jacobian`]; same layout and position block of the
    /// inverse, far better conditioned.
    pub conditioned: DMatrix<f64>,
    pub layout: EtaLayout,
    /// Pivot-ratio estimate of the reciprocal condition number of the
    /// equilibrated conditioned matrix (0 when the factorization fails).
    pub rcond: f64,
    pub identifiable: bool,
}

fn scatter(target: &mut DMatrix<f64>, local: &SMatrix<f64, LOCAL_DIM, LOCAL_DIM>, idx: &[Option<usize>; LOCAL_DIM], info: &SubArrayInformation) {
    for a in 0..LOCAL_DIM {
        let Some(ga) = idx[a].filter(|_| info.present(a)) else { continue };
        for b in 0..LOCAL_DIM {
            let Some(gb) = idx[b].filter(|_| info.present(b)) else { continue };
            target[(ga, gb)] += local[(a, b)];
        }
    }
}

/// Common phase slope for a shared phase offset: that of the first
/// sub-array with a LOS path, else of the first one not occluded. With a
/// single LOS sub-array the coherent problem then needs no shear at all.
fn phase_anchor<'a>(infos: impl Iterator<Item = &'a SubArrayInformation> + Clone) -> Option<[f64; 2]> {
    let mut visible = infos.filter(|i| !i.is_occluded());
    visible.clone().find(|i| i.sees_los).or_else(|| visible.next()).map(|i| i.phase_slope)
}

/// Assemble `I_η = Σ_k J_kᵀ I_ξk J_k` from local information matrices.
pub fn assemble_fim(infos: &[SubArrayInformation], mode: Mode) -> FimResult {
    let vis: Vec<(bool, bool)> = infos.iter().map(|i| (i.sees_los, i.sees_gr)).collect();
    let layout = EtaLayout::new(mode, &vis);
    let p = layout.len();
    let mut matrix = DMatrix::zeros(p, p);
    let mut conditioned = DMatrix::zeros(p, p);
    let anchor = phase_anchor(infos.iter());
    for (k, info) in infos.iter().enumerate() {
        let idx = layout.local_indices(k);
        scatter(&mut matrix, &info.matrix, &idx, info);
        match (mode, anchor) {
            (Mode::Coherent, Some(a)) => scatter(&mut conditioned, &info.conditioned_at(a), &idx, info),
            _ => scatter(&mut conditioned, &info.conditioned, &idx, info),
        }
    }
    let (rcond, identifiable) = match equilibrated_cholesky(&conditioned, &layout.factorization_order()) {
        Some(f) => (f.rcond(), f.rcond() >= RCOND_THRESHOLD),
        None => (0.0, false),
    };
    FimResult { matrix, conditioned, layout, rcond, identifiable }
}

/// Fisher information of the positioning parameters for one deployment at
/// one vehicle pose.
pub fn position_fim(
    deployment: &Deployment,
    vehicle: &Pose,
    scenario: &ScenarioConfig,
    body: &VehicleBody,
    mode: Mode,
) -> Result<FimResult> {
    let infos = deployment
        .sub_arrays
        .iter()
        .map(|spec| sub_array_information(spec, vehicle, scenario, body))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_fim(&infos, mode))
}

/// `J_k = ∂ξ_k/∂η` over the full layout of `deployment` at this pose.
pub fn jacobian(
    deployment: &Deployment,
    vehicle: &Pose,
    scenario: &ScenarioConfig,
    body: &VehicleBody,
    offsets: &SyncOffsets,
    k: usize,
) -> Result<(DMatrix<f64>, EtaLayout)> {
    if k >= deployment.len() {
        return Err(Error::InvalidInput(format!("sub-array index {k} out of range")));
    }
    let params = channel_params(deployment, vehicle, scenario, body, offsets)?;
    let vis: Vec<(bool, bool)> =
        params.iter().map(|p| (p.sees(PathKind::LineOfSight), p.sees(PathKind::GroundReflection))).collect();
    let layout = EtaLayout::new(offsets.mode(), &vis);
    let local = local_jacobian(&params[k], scenario.waveform.carrier_hz);
    let mut jac = DMatrix::zeros(local.nrows(), layout.len());
    for (a, g) in layout.local_indices(k).iter().enumerate() {
        if let Some(g) = g {
            jac.column_mut(*g).copy_from(&local.column(a));
        }
    }
    Ok((jac, layout))
}

/// Position error bound `√tr([I_η⁻¹]_{1:2,1:2})`.
pub fn peb(fim: &FimResult) -> Result<f64> {
    if !fim.identifiable {
        return Err(Error::NonIdentifiable { rcond: fim.rcond });
    }
    let f = equilibrated_cholesky(&fim.conditioned, &fim.layout.factorization_order())
        .ok_or(Error::NonIdentifiable { rcond: 0.0 })?;
    Ok((f.inverse_diagonal(0) + f.inverse_diagonal(1)).sqrt())
}

/// Largest number of shared parameters (coherent mode).
const SHARED_MAX: usize = 4;

fn shared_dim(mode: Mode) -> usize {
    match mode {
        Mode::Coherent => 4,
        Mode::Incoherent => 3,
    }
}

/// One sub-array's information reduced to the shared parameters
/// (`x, y, δ_d` and, coherently, `δ_φ`) by eliminating its private ones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    /// Schur complement `A − B D⁻¹ Bᵀ`, row-major `SHARED_MAX²` (only the
    /// leading `shared_dim` block is used).
    pub schur: [f64; SHARED_MAX * SHARED_MAX],
    /// Shared block `A`, same layout (its diagonal is the equilibration
    /// scale).
    pub block: [f64; SHARED_MAX * SHARED_MAX],
    /// See [`SubArrayInformation::phase_slope`].
    pub phase_slope: [f64; 2],
    pub sees_los: bool,
    pub visible: bool,
    /// Extreme pivots of the equilibrated private block.
    pub min_pivot: f64,
    pub max_pivot: f64,
    /// The private block is positive definite.
    pub ok: bool,
}

impl Contribution {
    pub const NONE: Contribution = Contribution {
        schur: [0.0; SHARED_MAX * SHARED_MAX],
        block: [0.0; SHARED_MAX * SHARED_MAX],
        phase_slope: [0.0; 2],
        sees_los: false,
        visible: false,
        min_pivot: f64::INFINITY,
        max_pivot: 0.0,
        ok: true,
    };

    pub fn new(info: &SubArrayInformation, mode: Mode) -> Self {
        if info.is_occluded() {
            return Self::NONE;
        }
        let ns = shared_dim(mode);
        let private: Vec<usize> = (ns..LOCAL_DIM).filter(|&i| info.present(i)).collect();
        let np = private.len();
        let m = &info.conditioned;
        let mut c = Contribution { phase_slope: info.phase_slope, sees_los: info.sees_los, visible: true, ..Self::NONE };
        for i in 0..ns {
            for j in 0..ns {
                c.block[i * SHARED_MAX + j] = m[(i, j)];
                c.schur[i * SHARED_MAX + j] = m[(i, j)];
            }
        }
        if np == 0 {
            return c;
        }
        let scale: Vec<f64> = private.iter().map(|&i| m[(i, i)]).map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
        if scale.iter().any(|s| *s == 0.0 || !s.is_finite()) {
            c.ok = false;
            return c;
        }
        let mut d = vec![0.0; np * np];
        for a in 0..np {
            for b in 0..np {
                d[a * np + b] = m[(private[a], private[b])] * scale[a] * scale[b];
            }
        }
        let Some((lo, hi)) = cholesky_in_place(&mut d, np) else {
            c.ok = false;
            return c;
        };
        c.min_pivot = lo;
        c.max_pivot = hi;
        // W = L⁻¹ S_p Bᵀ, then A − WᵀW
        let mut w = vec![0.0; np * ns];
        for s in 0..ns {
            let mut col: Vec<f64> = (0..np).map(|a| m[(private[a], s)] * scale[a]).collect();
            forward_substitute(&d, np, &mut col);
            for a in 0..np {
                w[a * ns + s] = col[a];
            }
        }
        for i in 0..ns {
            for j in 0..ns {
                let dot: f64 = (0..np).map(|a| w[a * ns + i] * w[a * ns + j]).sum();
                c.schur[i * SHARED_MAX + j] -= dot;
            }
        }
        c
    }
}

/// Outcome of scoring one deployment at one pose from contributions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FastPeb {
    pub rcond: f64,
    /// `None` when not identifiable.
    pub peb: Option<f64>,
}

/// Running sum of [`Contribution`]s for one deployment at one pose.
/// Coherently the sum is kept at the phase slope [`assemble_fim`] would
/// choose, re-anchoring once when the first LOS contribution arrives.
#[derive(Clone, Copy, Debug)]
pub struct Accumulator {
    mode: Mode,
    schur: [f64; SHARED_MAX * SHARED_MAX],
    block: [f64; SHARED_MAX * SHARED_MAX],
    /// Current phase slope and whether it comes from a LOS sub-array.
    anchor: Option<([f64; 2], bool)>,
    min_pivot: f64,
    max_pivot: f64,
    ok: bool,
}

impl Accumulator {
    pub fn new(mode: Mode) -> Self {
        Accumulator {
            mode,
            schur: [0.0; SHARED_MAX * SHARED_MAX],
            block: [0.0; SHARED_MAX * SHARED_MAX],
            anchor: None,
            min_pivot: f64::INFINITY,
            max_pivot: 0.0,
            ok: true,
        }
    }

    pub fn add(&mut self, c: &Contribution) {
        const SHARED: [usize; 3] = [LOCAL_X, LOCAL_Y, LOCAL_PHASE];
        let (mut schur, mut block) = (c.schur, c.block);
        if self.mode == Mode::Coherent && c.visible {
            let anchor = match self.anchor {
                Some((a, true)) => a,
                Some((a, false)) if c.sees_los => {
                    let t = [c.phase_slope[0] - a[0], c.phase_slope[1] - a[1]];
                    shear(&mut self.schur, SHARED_MAX, SHARED, t);
                    shear(&mut self.block, SHARED_MAX, SHARED, t);
                    c.phase_slope
                }
                Some((a, false)) => a,
                None => c.phase_slope,
            };
            self.anchor = Some((anchor, self.anchor.is_some_and(|a| a.1) || c.sees_los));
            let t = [anchor[0] - c.phase_slope[0], anchor[1] - c.phase_slope[1]];
            shear(&mut schur, SHARED_MAX, SHARED, t);
            shear(&mut block, SHARED_MAX, SHARED, t);
        }
        for (s, v) in self.schur.iter_mut().zip(&schur) {
            *s += v;
        }
        for (s, v) in self.block.iter_mut().zip(&block) {
            *s += v;
        }
        self.min_pivot = self.min_pivot.min(c.min_pivot);
        self.max_pivot = self.max_pivot.max(c.max_pivot);
        self.ok &= c.ok;
    }

    /// Equilibrated Cholesky of the summed Schur complement; identical in
    /// exact arithmetic to [`assemble_fim`] followed by [`peb`].
    pub fn finish(&self) -> FastPeb {
        const FAIL: FastPeb = FastPeb { rcond: 0.0, peb: None };
        if !self.ok {
            return FAIL;
        }
        let ns = shared_dim(self.mode);
        let mut scale = [0.0; SHARED_MAX];
        for i in 0..ns {
            let d = self.block[i * SHARED_MAX + i];
            if !(d > 0.0) || !d.is_finite() {
                return FAIL;
            }
            scale[i] = 1.0 / d.sqrt();
        }
        let mut a = [0.0; SHARED_MAX * SHARED_MAX];
        for i in 0..ns {
            for j in 0..ns {
                a[i * ns + j] = self.schur[i * SHARED_MAX + j] * scale[i] * scale[j];
            }
        }
        let a = &mut a[..ns * ns];
        let Some((lo, hi)) = cholesky_in_place(a, ns) else {
            return FAIL;
        };
        let rcond = self.min_pivot.min(lo) / self.max_pivot.max(hi);
        if !(rcond >= RCOND_THRESHOLD) {
            return FastPeb { rcond, peb: None };
        }
        let mut sum = 0.0;
        for i in 0..2 {
            let mut z = [0.0; SHARED_MAX];
            z[i] = 1.0;
            forward_substitute(a, ns, &mut z[..ns]);
            back_substitute(a, ns, &mut z[..ns]);
            sum += z[i] * scale[i] * scale[i];
        }
        FastPeb { rcond, peb: Some(sum.sqrt()) }
    }
}

/// PEB of a set of per-sub-array information matrices via the fast path.
pub fn fast_peb(infos: &[SubArrayInformation], mode: Mode) -> FastPeb {
    let mut acc = Accumulator::new(mode);
    for info in infos {
        acc.add(&Contribution::new(info, mode));
    }
    acc.finish()
}

/// Mean vector `vec(E[Y_k])` for given channel parameters (helper for
/// tests and the likelihood module).
pub fn mean_vector(paths: &[ChannelParams], waveform: &Waveform, elements: &[Vec3], lambda: f64) -> DVector<Complex64> {
    let m = elements.len();
    let mut y = DVector::zeros(m * waveform.subcarriers);
    for xi in paths {
        let a = crate::channel::spatial_steering(elements, xi.azimuth, xi.elevation, lambda);
        let b = crate::channel::frequency_steering(xi.pseudo_range, waveform);
        let g = Complex64::from_polar(xi.amplitude * waveform.tx_power_w.sqrt(), xi.phase);
        for n in 0..waveform.subcarriers {
            let f = g * b[n] * waveform.pilots[n];
            for e in 0..m {
                y[n * m + e] += f * a[e];
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::deployment::{ElementLayout, Grid, Selection};
    use crate::geometry::Mat3;

    fn facing(distance: f64) -> (Deployment, Pose, ScenarioConfig) {
        let s = ScenarioConfig::default().with_ground_reflection(false);
        let layout = ElementLayout::half_wavelength(4, s.wavelength()).unwrap();
        let rot = crate::geometry::heading_rotation(-std::f64::consts::FRAC_PI_2);
        let spec = SubArraySpec::new(Vec3::zeros(), rot, layout.positions()).unwrap();
        let vehicle = Pose { position: Vec3::new(0.0, distance, 0.0), rotation: Mat3::identity() };
        (Deployment::new(vec![spec]).unwrap(), vehicle, s)
    }

    #[test]
    fn facing_bs_params() {
        let (dep, vehicle, s) = facing(25.0);
        let body = VehicleBody::empty();
        let p = channel_params(&dep, &vehicle, &s, &body, &SyncOffsets::coherent(0.0, 0.0)).unwrap();
        let xi = p[0].paths[0].xi;
        assert_relative_eq!(xi.pseudo_range, 25.0, epsilon = 1e-12);
        assert!(xi.azimuth.abs() < 1e-12 && xi.elevation.abs() < 1e-12);
        let q = channel_params(&dep, &vehicle, &s, &body, &SyncOffsets::coherent(1.5, 0.0)).unwrap();
        assert_relative_eq!(q[0].paths[0].xi.pseudo_range - xi.pseudo_range, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn amplitude_information_single_path() {
        let (dep, vehicle, s) = facing(25.0);
        let p = channel_params(&dep, &vehicle, &s, &VehicleBody::empty(), &SyncOffsets::coherent(0.0, 0.0)).unwrap();
        let fim = channel_fim(&[p[0].paths[0].xi], &s.waveform, &dep.sub_arrays[0].elements, s.wavelength());
        let expected = 2.0 / s.waveform.noise_variance_w * s.waveform.tx_power_w * 4.0 * 792.0;
        assert_relative_eq!(fim[(4, 4)], expected, max_relative = 1e-12);
    }

    #[test]
    fn single_sub_array_coherent_los_only_has_five_parameters() {
        let (dep, vehicle, s) = facing(25.0);
        let f = position_fim(&dep, &vehicle, &s, &VehicleBody::empty(), Mode::Coherent).unwrap();
        assert_eq!(f.layout.len(), 5);
        assert_eq!(f.layout.names(), ["x", "y", "delta_d", "delta_phi", "alpha_los[0]"]);
    }

    #[test]
    fn layout_dimensions() {
        let vis = vec![(true, true); 12];
        assert_eq!(EtaLayout::new(Mode::Incoherent, &vis).len(), 51);
        assert_eq!(EtaLayout::new(Mode::Coherent, &vis).len(), 4 + 12 + 24);
        let mixed = [(true, false), (false, true), (false, false)];
        let l = EtaLayout::new(Mode::Incoherent, &mixed);
        assert_eq!(l.len(), 3 + 2 + 1 + 2);
        let idx: std::collections::HashSet<_> = l.params.iter().collect();
        assert_eq!(idx.len(), l.len());
        assert_eq!(l.local_indices(2), [Some(0), Some(1), Some(2), None, None, None, None]);
    }

    #[test]
    fn diagonal_peb() {
        let layout = EtaLayout::new(Mode::Coherent, &[(true, false)]);
        let matrix = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 16.0, 1.0, 1.0, 1.0]));
        let fim = FimResult { conditioned: matrix.clone(), matrix, layout, rcond: 1.0, identifiable: true };
        assert_relative_eq!(peb(&fim).unwrap(), (0.25f64 + 0.0625).sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn fully_occluded_is_not_identifiable() {
        let (dep, _, s) = facing(25.0);
        let behind = Pose { position: Vec3::new(0.0, -25.0, 0.0), rotation: Mat3::identity() };
        let f = position_fim(&dep, &behind, &s, &VehicleBody::empty(), Mode::Coherent).unwrap();
        assert!(!f.identifiable);
        assert!(f.matrix.iter().all(|v| *v == 0.0));
        assert!(peb(&f).is_err());
    }

    fn equilibrated_condition(m: &DMatrix<f64>) -> f64 {
        let d = DMatrix::from_diagonal(&m.diagonal().map(|v| 1.0 / v.sqrt()));
        let e = (&d * m * &d).symmetric_eigenvalues();
        e.max() / e.min()
    }

    #[test]
    fn shifted_coordinates_preserve_peb() {
        let s = ScenarioConfig::default();
        let grid = Grid::default_grid();
        let layout = ElementLayout::half_wavelength(4, s.wavelength()).unwrap();
        let body = VehicleBody::default_body();
        let dep = grid.deployment(Selection::from_ids(&[0, 3, 6, 9, 14, 17]), &layout).unwrap();
        for (r, phi) in [(8.0, 0.3), (20.0, -0.7)] {
            let vehicle = Pose::vehicle(Vec3::new(0.0, r, -s.bs_height_m + 0.2), phi);
            for mode in [Mode::Coherent, Mode::Incoherent] {
                let f = position_fim(&dep, &vehicle, &s, &body, mode).unwrap();
                let lu = f.matrix.clone().lu().try_inverse().unwrap();
                let direct = (lu[(0, 0)] + lu[(1, 1)]).sqrt();
                // both routes are backward stable; the plain one loses
                // accuracy in proportion to its condition number
                let tol = 1e-13 * equilibrated_condition(&f.matrix);
                assert_relative_eq!(peb(&f).unwrap(), direct, max_relative = tol.max(1e-12));
                assert!(equilibrated_condition(&f.conditioned) < equilibrated_condition(&f.matrix));
            }
        }
    }

    #[test]
    fn fast_path_matches_full_assembly() {
        let s = ScenarioConfig::default();
        let grid = Grid::default_grid();
        let layout = ElementLayout::half_wavelength(4, s.wavelength()).unwrap();
        let body = VehicleBody::default_body();
        let dep = grid.deployment(Selection::from_ids(&[0, 3, 6, 9, 14, 17]), &layout).unwrap();
        for (r, phi) in [(10.0, 0.3), (25.0, -1.2), (60.0, 0.9)] {
            let vehicle = Pose::vehicle(Vec3::new(0.0, r, -s.bs_height_m + 0.2), phi);
            let infos: Vec<_> =
                dep.sub_arrays.iter().map(|a| sub_array_information(a, &vehicle, &s, &body).unwrap()).collect();
            for mode in [Mode::Coherent, Mode::Incoherent] {
                let full = assemble_fim(&infos, mode);
                let fast = fast_peb(&infos, mode);
                assert_eq!(full.identifiable, fast.peb.is_some());
                assert_relative_eq!(full.rcond, fast.rcond, max_relative = 1e-6);
                if let Some(p) = fast.peb {
                    assert_relative_eq!(peb(&full).unwrap(), p, max_relative = 1e-9);
                }
            }
        }
    }

    #[test]
    fn fast_path_is_order_independent() {
        let s = ScenarioConfig::default();
        let layout = ElementLayout::half_wavelength(4, s.wavelength()).unwrap();
        let body = VehicleBody::default_body();
        let all = Grid::default_grid().placements(&layout);
        for (r, phi) in [(12.0, 0.5), (30.0, -1.4), (55.0, 1.5)] {
            let vehicle = Pose::vehicle(Vec3::new(0.0, r, -s.bs_height_m + 0.2), phi);
            let mut infos: Vec<_> = all.iter().map(|a| sub_array_information(a, &vehicle, &s, &body).unwrap()).collect();
            // GR-only and occluded sub-arrays first, so the sum re-anchors
            infos.sort_by_key(|i| (i.sees_los, i.sees_gr));
            let forward = fast_peb(&infos, Mode::Coherent).peb.unwrap();
            infos.reverse();
            let backward = fast_peb(&infos, Mode::Coherent).peb.unwrap();
            let full = peb(&assemble_fim(&infos, Mode::Coherent)).unwrap();
            assert_relative_eq!(forward, backward, max_relative = 1e-9);
            assert_relative_eq!(forward, full, max_relative = 1e-9);
        }
    }

    #[test]
    fn single_sub_array_modes_agree() {
        let s = ScenarioConfig::default();
        let layout = ElementLayout::half_wavelength(4, s.wavelength()).unwrap();
        let body = VehicleBody::default_body();
        for spec in Grid::default_grid().placements(&layout) {
            let dep = Deployment::new(vec![spec]).unwrap();
            for (r, phi) in [(9.0, 0.2), (40.0, -0.8)] {
                let vehicle = Pose::vehicle(Vec3::new(0.0, r, -s.bs_height_m + 0.2), phi);
                let coh = position_fim(&dep, &vehicle, &s, &body, Mode::Coherent).unwrap();
                let inc = position_fim(&dep, &vehicle, &s, &body, Mode::Incoherent).unwrap();
                assert_eq!(coh.identifiable, inc.identifiable);
                if coh.identifiable {
                    assert_relative_eq!(peb(&coh).unwrap(), peb(&inc).unwrap(), max_relative = 1e-12);
                }
            }
        }
    }
}

