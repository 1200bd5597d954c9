//! Compressed maximum-likelihood objectives and ambiguity-surface scans.
//!
//! For a candidate vehicle position `p` and synchronization `s`, the mean of
//! sub-array `k` is linear in its path amplitudes. Those are eliminated by
//! least squares, leaving `L(p, s) = Σ_k ‖y_k − Ω̂_k‖²`:
//!
//! * coherent: LOS column `e^{jφ₀} c₀` with a real amplitude, GR column `c₁`
//!   with a complex one (3 real unknowns);
//! * incoherent: a complex coefficient per visible path (4 real unknowns).
//!
//! Sub-arrays that see only one path use the matching single-column model;
//! sub-arrays that see nothing contribute `‖y_k‖²`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{frequency_steering, spatial_steering, synthesize_observation, Observation};
use crate::deployment::Deployment;
use crate::error::{Error, Result};
use crate::fim::{sub_array_params, SubArrayParams};
use crate::geometry::{PathKind, Pose, Vec3, VehicleBody};
use crate::linalg::{cholesky_in_place, RCOND_THRESHOLD};
use crate::scenario::{Mode, ScenarioConfig, SyncOffsets, Waveform};

/// Value of a compressed objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    /// Some sub-array needed the ridge-regularized solve.
    pub regularized: bool,
}

/// `√P (b ⊙ x) ⊗ a` of one path, column-major over `(element, subcarrier)`.
fn path_column(params: &SubArrayParams, kind: PathKind, elements: &[Vec3], waveform: &Waveform, lambda: f64) -> Option<(DVector<Complex64>, f64)> {
    let path = params.path(kind)?;
    let xi = &path.xi;
    let a = spatial_steering(elements, xi.azimuth, xi.elevation, lambda);
    let b = frequency_steering(xi.pseudo_range, waveform);
    let m = elements.len();
    let amp = waveform.tx_power_w.sqrt();
    let mut c = DVector::zeros(m * waveform.subcarriers);
    for n in 0..waveform.subcarriers {
        let f = b[n] * waveform.pilots[n] * amp;
        for e in 0..m {
            c[n * m + e] = f * a[e];
        }
    }
    Some((c, xi.phase))
}

/// Real least-squares basis of one sub-array: each entry is a complex
/// column whose real multiple is fitted.
fn basis(params: &SubArrayParams, elements: &[Vec3], scenario: &ScenarioConfig, mode: Mode) -> Vec<DVector<Complex64>> {
    let lambda = scenario.wavelength();
    let j = Complex64::i();
    let mut cols = Vec::with_capacity(4);
    for kind in [PathKind::LineOfSight, PathKind::GroundReflection] {
        let Some((c, phase)) = path_column(params, kind, elements, &scenario.waveform, lambda) else { continue };
        match (mode, kind) {
            (Mode::Coherent, PathKind::LineOfSight) => cols.push(c * Complex64::cis(phase)),
            _ => {
                cols.push(&c * j);
                cols.push(c);
            }
        }
    }
    cols
}

/// `min_x ‖y − Σ x_i cols_i‖²` over real `x`. The residual is read off the
/// trailing rows of `Qᵀb` rather than formed as a difference of energies.
/// Returns the residual energy and whether the ridge fallback was used.
pub fn real_least_squares(y: &[Complex64], cols: &[DVector<Complex64>]) -> (f64, bool) {
    let n = y.len();
    let r = cols.len();
    if r == 0 {
        return (y.iter().map(|v| v.norm_sqr()).sum(), false);
    }
    let stacked = || {
        let mut a = DMatrix::<f64>::zeros(2 * n, r);
        for (c, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                a[(i, c)] = v.re;
                a[(n + i, c)] = v.im;
            }
        }
        a
    };
    let mut b = DVector::from_fn(2 * n, |i, _| if i < n { y[i].re } else { y[i - n].im });
    let qr = stacked().qr();
    let diag = qr.r().diagonal().abs();
    let (lo, hi) = (diag.min(), diag.max());
    if hi > 0.0 && (lo / hi).powi(2) >= RCOND_THRESHOLD && 2 * n > r {
        qr.q_tr_mul(&mut b);
        return (b.rows(r, 2 * n - r).norm_squared(), false);
    }
    drop(qr);
    let a = stacked();
    let x = ridge(&a, &b);
    ((&b - &a * x).norm_squared(), true)
}

/// `(AᵀA + 10⁻¹² tr(AᵀA) I)⁻¹ Aᵀ b`.
fn ridge(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let r = a.ncols();
    let mut g = a.transpose() * a;
    let shift = 1e-12 * g.trace();
    if !(shift > 0.0) {
        return DVector::zeros(r);
    }
    for i in 0..r {
        g[(i, i)] += shift;
    }
    let rhs = a.transpose() * b;
    let mut l: Vec<f64> = (0..r * r).map(|i| g[(i / r, i % r)]).collect();
    if cholesky_in_place(&mut l, r).is_none() {
        return DVector::zeros(r);
    }
    let mut z: Vec<f64> = rhs.iter().copied().collect();
    crate::linalg::forward_substitute(&l, r, &mut z);
    crate::linalg::back_substitute(&l, r, &mut z);
    DVector::from_vec(z)
}

/// Compressed objective at the candidate vehicle pose for candidate
/// synchronization `offsets`.
pub fn objective(
    observation: &Observation,
    deployment: &Deployment,
    candidate: &Pose,
    scenario: &ScenarioConfig,
    body: &VehicleBody,
    offsets: &SyncOffsets,
    mode: Mode,
) -> Result<ObjectiveValue> {
    if observation.matrices.len() != deployment.len() {
        return Err(Error::InvalidInput(format!(
            "{} observation matrices for {} sub-arrays",
            observation.matrices.len(),
            deployment.len()
        )));
    }
    let mut out = ObjectiveValue { value: 0.0, regularized: false };
    for (k, (spec, y)) in deployment.sub_arrays.iter().zip(&observation.matrices).enumerate() {
        if y.nrows() != spec.elements.len() || y.ncols() != scenario.waveform.subcarriers {
            return Err(Error::InvalidInput(format!("observation {k} has shape {}x{}", y.nrows(), y.ncols())));
        }
        let params = sub_array_params(spec, candidate, scenario, body, offsets.range_bias_m, offsets.phase_for(k))?;
        let cols = basis(&params, &spec.elements, scenario, mode);
        let (v, reg) = real_least_squares(y.as_slice(), &cols);
        out.value += v;
        out.regularized |= reg;
    }
    Ok(out)
}

pub fn objective_coherent(
    observation: &Observation,
    deployment: &Deployment,
    candidate: &Pose,
    scenario: &ScenarioConfig,
    body: &VehicleBody,
    offsets: &SyncOffsets,
) -> Result<ObjectiveValue> {
    objective(observation, deployment, candidate, scenario, body, offsets, Mode::Coherent)
}

pub fn objective_incoherent(
    observation: &Observation,
    deployment: &Deployment,
    candidate: &Pose,
    scenario: &ScenarioConfig,
    body: &VehicleBody,
    offsets: &SyncOffsets,
) -> Result<ObjectiveValue> {
    objective(observation, deployment, candidate, scenario, body, offsets, Mode::Incoherent)
}

/// Expected objective at the truth under noise of variance σ²: each
/// sub-array keeps `M·N − r_k/2` complex noise dimensions, `r_k` being its
/// number of real unknowns.
pub fn expected_noise_objective(
    deployment: &Deployment,
    truth: &Pose,
    scenario: &ScenarioConfig,
    body: &VehicleBody,
    mode: Mode,
) -> Result<f64> {
    let mut total = 0.0;
    for spec in &deployment.sub_arrays {
        let p = sub_array_params(spec, truth, scenario, body, 0.0, 0.0)?;
        let r: usize = p
            .paths
            .iter()
            .map(|path| match (mode, path.kind()) {
                (Mode::Coherent, PathKind::LineOfSight) => 1,
                _ => 2,
            })
            .sum();
        let mn = (spec.elements.len() * scenario.waveform.subcarriers) as f64;
        total += (mn - r as f64 / 2.0) * scenario.waveform.noise_variance_w;
    }
    Ok(total)
}

/// Observation synthesized at a true pose, with the candidate
/// synchronization fixed at its true value during scans.
#[derive(Clone, Debug)]
pub struct ScanProblem<'a> {
    pub deployment: &'a Deployment,
    pub truth: Pose,
    pub scenario: &'a ScenarioConfig,
    pub body: &'a VehicleBody,
    pub offsets: SyncOffsets,
    pub observation: Observation,
}

impl<'a> ScanProblem<'a> {
    pub fn new(
        deployment: &'a Deployment,
        truth: Pose,
        scenario: &'a ScenarioConfig,
        body: &'a VehicleBody,
        offsets: SyncOffsets,
        noise_seed: Option<u64>,
    ) -> Result<Self> {
        let observation = synthesize_observation(deployment, &truth, scenario, body, &offsets, noise_seed)?;
        Ok(ScanProblem { deployment, truth, scenario, body, offsets, observation })
    }

    /// Objective at vehicle position `(x, y)` with the true heading and
    /// height.
    pub fn at(&self, x: f64, y: f64, mode: Mode) -> Result<ObjectiveValue> {
        let mut candidate = self.truth;
        candidate.position.x = x;
        candidate.position.y = y;
        objective(&self.observation, self.deployment, &candidate, self.scenario, self.body, &self.offsets, mode)
    }
}

/// `center + i·spacing` for `|i·spacing| ≤ half_width`; the centre is
/// always a sample.
pub fn scan_axis(center: f64, half_width: f64, spacing: f64) -> Result<Vec<f64>> {
    if !(spacing > 0.0) || !spacing.is_finite() || !(half_width >= 0.0) || !half_width.is_finite() {
        return Err(Error::InvalidInput(format!("invalid scan spacing {spacing} or half width {half_width}")));
    }
    let n = (half_width / spacing * (1.0 + 1e-12)).floor() as i64;
    if n > 50_000 {
        return Err(Error::InvalidInput(format!("scan axis would have {} samples", 2 * n + 1)));
    }
    Ok((-n..=n).map(|i| center + i as f64 * spacing).collect())
}

/// `√L` over an `(x, y)` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceScan {
    pub mode: Mode,
    pub spacing_m: f64,
    pub wavelength_m: f64,
    pub true_position: [f64; 2],
    pub x_m: Vec<f64>,
    pub y_m: Vec<f64>,
    /// Rows follow `y_m`, columns `x_m`.
    pub values: DMatrix<f64>,
    /// Cells where a regularized solve was needed.
    pub regularized: usize,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    mode: Mode,
    spacing_m: f64,
    wavelength_m: f64,
    true_position_m: [f64; 2],
    axis: Option<Axis>,
    samples: [usize; 2],
    regularized_cells: usize,
    synchronization: &'static str,
}

impl SurfaceScan {
    /// Matrix CSV: first row holds the x axis, first column the y axis.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("y_m\\x_m");
        for x in &self.x_m {
            s.push_str(&format!(",{x:e}"));
        }
        s.push('\n');
        for (i, y) in self.y_m.iter().enumerate() {
            s.push_str(&format!("{y:e}"));
            for j in 0..self.x_m.len() {
                s.push_str(&format!(",{:e}", self.values[(i, j)]));
            }
            s.push('\n');
        }
        s
    }

    pub fn sidecar_json(&self) -> String {
        sidecar(self.mode, self.spacing_m, self.wavelength_m, self.true_position, None, [self.y_m.len(), self.x_m.len()], self.regularized)
    }

    /// Index `(row, col)` and value of the smallest sample.
    pub fn global_minimum(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::INFINITY);
        for j in 0..self.values.ncols() {
            for i in 0..self.values.nrows() {
                if self.values[(i, j)] < best.2 {
                    best = (i, j, self.values[(i, j)]);
                }
            }
        }
        best
    }

    /// Local minima other than the global one: samples no larger than
    /// their eight neighbours and smaller than at least one.
    pub fn secondary_minima(&self) -> Vec<(usize, usize, f64)> {
        let (gi, gj, _) = self.global_minimum();
        let (nr, nc) = self.values.shape();
        let mut out = Vec::new();
        for i in 0..nr {
            for j in 0..nc {
                if (i, j) == (gi, gj) {
                    continue;
                }
                let v = self.values[(i, j)];
                let mut lowest = true;
                let mut strict = false;
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        let (a, b) = (i as i64 + di, j as i64 + dj);
                        if (di, dj) == (0, 0) || a < 0 || b < 0 || a >= nr as i64 || b >= nc as i64 {
                            continue;
                        }
                        let w = self.values[(a as usize, b as usize)];
                        lowest &= v <= w;
                        strict |= v < w;
                    }
                }
                if lowest && strict {
                    out.push((i, j, v));
                }
            }
        }
        out
    }
}

fn sidecar(mode: Mode, spacing: f64, lambda: f64, truth: [f64; 2], axis: Option<Axis>, samples: [usize; 2], regularized: usize) -> String {
    let s = Sidecar {
        mode,
        spacing_m: spacing,
        wavelength_m: lambda,
        true_position_m: truth,
        axis,
        samples,
        regularized_cells: regularized,
        synchronization: "fixed at truth",
    };
    serde_json::to_string_pretty(&s).expect("sidecar serializes")
}

/// Scan `√L` on a grid centred at the true position.
pub fn surface_scan(problem: &ScanProblem, mode: Mode, half_width: [f64; 2], spacing: f64) -> Result<SurfaceScan> {
    let t = problem.truth.position;
    let x_m = scan_axis(t.x, half_width[0], spacing)?;
    let y_m = scan_axis(t.y, half_width[1], spacing)?;
    let cells: Vec<ObjectiveValue> = (0..x_m.len() * y_m.len())
        .into_par_iter()
        .map(|c| problem.at(x_m[c / y_m.len()], y_m[c % y_m.len()], mode))
        .collect::<Result<_>>()?;
    let values = DMatrix::from_fn(y_m.len(), x_m.len(), |i, j| cells[j * y_m.len() + i].value.sqrt());
    Ok(SurfaceScan {
        mode,
        spacing_m: spacing,
        wavelength_m: problem.scenario.wavelength(),
        true_position: [t.x, t.y],
        regularized: cells.iter().filter(|c| c.regularized).count(),
        x_m,
        y_m,
        values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
        })
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            _ => Err(Error::Config(format!("unknown cut axis `{s}` (expected x or y)"))),
        }
    }
}

/// `√L` along one axis through the true position.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisCut {
    pub mode: Mode,
    pub axis: Axis,
    pub spacing_m: f64,
    pub wavelength_m: f64,
    pub true_position: [f64; 2],
    pub coords_m: Vec<f64>,
    pub values: Vec<f64>,
    pub regularized: usize,
}

impl AxisCut {
    pub fn to_csv(&self) -> String {
        let name = match self.axis {
            Axis::X => "x_m",
            Axis::Y => "y_m",
        };
        let mut s = format!("{name},sqrt_objective\n");
        for (c, v) in self.coords_m.iter().zip(&self.values) {
            s.push_str(&format!("{c:e},{v:e}\n"));
        }
        s
    }

    pub fn sidecar_json(&self) -> String {
        sidecar(self.mode, self.spacing_m, self.wavelength_m, self.true_position, Some(self.axis), [self.values.len(), 1], self.regularized)
    }

    /// Coordinates of the interior local minima.
    pub fn local_minima(&self) -> Vec<f64> {
        local_minima(&self.values).into_iter().map(|i| self.coords_m[i]).collect()
    }

    /// Mean distance between adjacent local minima.
    pub fn minima_spacing(&self) -> Option<f64> {
        let m = self.local_minima();
        (m.len() >= 2).then(|| (m[m.len() - 1] - m[0]) / (m.len() - 1) as f64)
    }
}

/// Interior indices no larger than both neighbours and smaller than the
/// left one (a flat bottom counts once).
pub fn local_minima(v: &[f64]) -> Vec<usize> {
    (1..v.len().saturating_sub(1)).filter(|&i| v[i] < v[i - 1] && v[i] <= v[i + 1]).collect()
}

pub fn axis_cut(problem: &ScanProblem, mode: Mode, axis: Axis, half_width: f64, spacing: f64) -> Result<AxisCut> {
    let t = problem.truth.position;
    let center = match axis {
        Axis::X => t.x,
        Axis::Y => t.y,
    };
    let coords_m = scan_axis(center, half_width, spacing)?;
    let cells: Vec<ObjectiveValue> = coords_m
        .par_iter()
        .map(|&c| match axis {
            Axis::X => problem.at(c, t.y, mode),
            Axis::Y => problem.at(t.x, c, mode),
        })
        .collect::<Result<_>>()?;
    Ok(AxisCut {
        mode,
        axis,
        spacing_m: spacing,
        wavelength_m: problem.scenario.wavelength(),
        true_position: [t.x, t.y],
        values: cells.iter().map(|c| c.value.sqrt()).collect(),
        regularized: cells.iter().filter(|c| c.regularized).count(),
        coords_m,
    })
}
