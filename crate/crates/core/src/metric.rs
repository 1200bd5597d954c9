//! PEB maps over sampled vehicle poses, the percentile metric ρ and
//! empirical complementary CDFs.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deployment::Deployment;
use crate::error::{Error, Result};
use crate::fim::{peb, position_fim, sub_array_information, Accumulator, Contribution, SubArrayInformation};
use crate::geometry::{Pose, SubArraySpec, Vec3, VehicleBody};
use crate::scenario::{Mode, ScenarioConfig};

/// Grid of vehicle poses: the vehicle sits at `[0, r, −h_BS + h_ref]`
/// with heading `φ` about `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseSamplingSpec {
    pub r_min_m: f64,
    pub r_step_m: f64,
    pub n_r: usize,
    pub phi_min_deg: f64,
    pub phi_step_deg: f64,
    pub n_phi: usize,
    /// Height of the vehicle reference point above the ground.
    pub reference_height_m: f64,
}

impl Default for PoseSamplingSpec {
    /// 20 ranges from 5 m in 3.6 m steps, 60 headings from −90° in 3° steps.
    fn default() -> Self {
        PoseSamplingSpec {
            r_min_m: 5.0,
            r_step_m: 3.6,
            n_r: 20,
            phi_min_deg: -90.0,
            phi_step_deg: 3.0,
            n_phi: 60,
            reference_height_m: 0.2,
        }
    }
}

impl PoseSamplingSpec {
    /// Coarse grid with `n_r` ranges and `n_phi` headings over the same
    /// intervals as the default grid.
    pub fn coarse(n_r: usize, n_phi: usize) -> Self {
        let d = Self::default();
        PoseSamplingSpec {
            n_r,
            n_phi,
            r_step_m: d.r_step_m * (d.n_r - 1) as f64 / (n_r.max(2) - 1) as f64,
            phi_step_deg: d.phi_step_deg * d.n_phi as f64 / n_phi.max(1) as f64,
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_r == 0 || self.n_phi == 0 {
            return Err(Error::Config("sampling needs at least one range and one heading".into()));
        }
        if !(self.r_min_m > 0.0) || !(self.r_step_m >= 0.0) || !self.r_step_m.is_finite() {
            return Err(Error::Config("ranges must be positive and finite".into()));
        }
        if !self.phi_min_deg.is_finite() || !self.phi_step_deg.is_finite() || !self.reference_height_m.is_finite() {
            return Err(Error::Config("heading grid and reference height must be finite".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.n_r * self.n_phi
    }

    pub fn ranges(&self) -> Vec<f64> {
        (0..self.n_r).map(|j| self.r_min_m + j as f64 * self.r_step_m).collect()
    }

    pub fn headings_deg(&self) -> Vec<f64> {
        (0..self.n_phi).map(|i| self.phi_min_deg + i as f64 * self.phi_step_deg).collect()
    }

    /// Vehicle pose of cell `(i_phi, j_r)`.
    pub fn pose(&self, i_phi: usize, j_r: usize, bs_height: f64) -> Pose {
        let r = self.r_min_m + j_r as f64 * self.r_step_m;
        let phi = (self.phi_min_deg + i_phi as f64 * self.phi_step_deg).to_radians();
        Pose::vehicle(Vec3::new(0.0, r, -bs_height + self.reference_height_m), phi)
    }

    /// Poses in cell order (heading-major: `cell = i_phi * n_r + j_r`).
    pub fn poses(&self, bs_height: f64) -> Vec<Pose> {
        (0..self.n_phi).flat_map(|i| (0..self.n_r).map(move |j| (i, j))).map(|(i, j)| self.pose(i, j, bs_height)).collect()
    }

    /// Heading row holding `−φ_i`, if it is on the grid.
    pub fn mirror_row(&self, i_phi: usize) -> Option<usize> {
        let target = -(self.phi_min_deg + i_phi as f64 * self.phi_step_deg);
        let k = ((target - self.phi_min_deg) / self.phi_step_deg).round();
        (k >= 0.0 && (k as usize) < self.n_phi && (self.phi_min_deg + k * self.phi_step_deg - target).abs() < 1e-9)
            .then_some(k as usize)
    }
}

/// PEB over the pose grid; non-identifiable cells hold `+∞`.
#[derive(Clone, Debug, PartialEq)]
pub struct PebMap {
    pub label: String,
    pub phi_deg: Vec<f64>,
    pub r_m: Vec<f64>,
    /// `n_phi x n_r`.
    pub values: DMatrix<f64>,
    /// Reciprocal condition estimate per cell.
    pub rcond: DMatrix<f64>,
}

impl PebMap {
    pub fn is_ok(&self, i: usize, j: usize) -> bool {
        self.values[(i, j)].is_finite()
    }

    pub fn non_identifiable_cells(&self) -> usize {
        self.values.iter().filter(|v| !v.is_finite()).count()
    }

    pub fn identifiable(&self) -> bool {
        self.non_identifiable_cells() == 0
    }

    /// Cells in row-major order (heading-major).
    pub fn cells(&self) -> Vec<f64> {
        self.values.transpose().iter().copied().collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("phi_deg\\r_m");
        for r in &self.r_m {
            write!(s, ",{r}").unwrap();
        }
        s.push('\n');
        for (i, phi) in self.phi_deg.iter().enumerate() {
            write!(s, "{phi}").unwrap();
            for j in 0..self.r_m.len() {
                let v = self.values[(i, j)];
                if v.is_finite() {
                    write!(s, ",{v:e}").unwrap();
                } else {
                    s.push_str(",inf");
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str, label: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Config(format!("PEB map line {line}: {msg}"));
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let r_m = header
            .split(',')
            .skip(1)
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad(1, &format!("bad range `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        let mut phi_deg = Vec::new();
        let mut rows = Vec::new();
        for (n, line) in lines {
            let mut it = line.split(',');
            let phi = it.next().unwrap_or("").trim();
            phi_deg.push(phi.parse::<f64>().map_err(|_| bad(n + 1, &format!("bad heading `{phi}`")))?);
            let row = it
                .map(|v| match v.trim() {
                    "inf" => Ok(f64::INFINITY),
                    t => t.parse::<f64>().map_err(|_| bad(n + 1, &format!("bad value `{t}`"))),
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != r_m.len() {
                return Err(bad(n + 1, &format!("expected {} values, got {}", r_m.len(), row.len())));
            }
            rows.extend(row);
        }
        if phi_deg.is_empty() || r_m.is_empty() {
            return Err(bad(1, "map has no cells"));
        }
        let values = DMatrix::from_row_slice(phi_deg.len(), r_m.len(), &rows);
        let rcond = values.map(|v| if v.is_finite() { f64::NAN } else { 0.0 });
        Ok(PebMap { label: label.to_owned(), phi_deg, r_m, values, rcond })
    }
}

/// PEB at every pose of `spec`, each cell from a freshly assembled FIM.
pub fn sample_peb_map(
    deployment: &Deployment,
    spec: &PoseSamplingSpec,
    scenario: &ScenarioConfig,
    body: &VehicleBody,
    mode: Mode,
    label: &str,
) -> Result<PebMap> {
    spec.validate()?;
    let poses = spec.poses(scenario.bs_height_m);
    let cells = poses
        .par_iter()
        .map(|pose| {
            let fim = position_fim(deployment, pose, scenario, body, mode)?;
            let value = if fim.identifiable { peb(&fim)? } else { f64::INFINITY };
            Ok((value, fim.rcond))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PebMap {
        label: label.to_owned(),
        phi_deg: spec.headings_deg(),
        r_m: spec.ranges(),
        values: DMatrix::from_row_iterator(spec.n_phi, spec.n_r, cells.iter().map(|c| c.0)),
        rcond: DMatrix::from_row_iterator(spec.n_phi, spec.n_r, cells.iter().map(|c| c.1)),
    })
}

/// 1-based nearest rank of the `(1 − ε)` quantile among `n` samples.
pub fn nearest_rank(n: usize, epsilon: f64) -> usize {
    // the small offset keeps exact products such as 0.9 * 100 on 90
    (((1.0 - epsilon) * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// `(1 − ε)` nearest-rank percentile; `+∞` entries count as the largest.
pub fn percentile(values: &[f64], epsilon: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("percentile of an empty sample".into()));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidInput(format!("epsilon must lie in [0, 1), got {epsilon}")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("percentile of NaN values".into()));
    }
    let mut sorted = values.to_vec();
    let k = nearest_rank(sorted.len(), epsilon) - 1;
    let (_, v, _) = sorted.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*v)
}

/// The metric ρ: `(1 − ε)` percentile of the map's PEB values.
pub fn rho(map: &PebMap, epsilon: f64) -> Result<f64> {
    percentile(map.values.as_slice(), epsilon)
}

/// Empirical complementary CDF `P(PEB > t)` as a step function.
#[derive(Clone, Debug, PartialEq)]
pub struct Eccdf {
    /// Distinct finite sample values, ascending.
    pub thresholds: Vec<f64>,
    /// Fraction of samples strictly above each threshold.
    pub fractions: Vec<f64>,
}

impl Eccdf {
    pub fn eval(&self, t: f64) -> f64 {
        // last threshold ≤ t
        match self.thresholds.partition_point(|v| *v <= t) {
            0 => {
                if self.thresholds.is_empty() {
                    self.fractions.first().copied().unwrap_or(1.0)
                } else {
                    1.0
                }
            }
            i => self.fractions[i - 1],
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold_m,eccdf\n");
        for (t, f) in self.thresholds.iter().zip(&self.fractions) {
            writeln!(s, "{t:e},{f}").unwrap();
        }
        s
    }
}

pub fn eccdf_of(values: &[f64]) -> Result<Eccdf> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("ECCDF of NaN values".into()));
    }
    let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::InvalidInput("ECCDF needs at least one finite sample".into()));
    }
    finite.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mut thresholds = Vec::new();
    let mut fractions = Vec::new();
    let mut i = 0;
    while i < finite.len() {
        let v = finite[i];
        while i < finite.len() && finite[i] == v {
            i += 1;
        }
        thresholds.push(v);
        fractions.push((values.len() - i) as f64 / n);
    }
    Ok(Eccdf { thresholds, fractions })
}

pub fn eccdf(map: &PebMap) -> Result<Eccdf> {
    eccdf_of(map.values.as_slice())
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Write { path: path.to_owned(), source })
}

/// Per-placement, per-pose information, tabulated once so that any
/// deployment drawn from the placements can be scored by summing reduced
/// contributions.
#[derive(Clone, Debug)]
pub struct InformationTable {
    cells: usize,
    infos: Vec<SubArrayInformation>,
}

impl InformationTable {
    pub fn build(
        placements: &[SubArraySpec],
        spec: &PoseSamplingSpec,
        scenario: &ScenarioConfig,
        body: &VehicleBody,
    ) -> Result<Self> {
        spec.validate()?;
        let poses = spec.poses(scenario.bs_height_m);
        let cells = poses.len();
        let infos = (0..placements.len() * cells)
            .into_par_iter()
            .map(|i| sub_array_information(&placements[i / cells], &poses[i % cells], scenario, body))
            .collect::<Result<Vec<_>>>()?;
        Ok(InformationTable { cells, infos })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn placements(&self) -> usize {
        self.infos.len() / self.cells.max(1)
    }

    pub fn get(&self, placement: usize, cell: usize) -> &SubArrayInformation {
        &self.infos[placement * self.cells + cell]
    }

    pub fn contributions(&self, mode: Mode) -> ContributionTable {
        ContributionTable {
            mode,
            cells: self.cells,
            data: self.infos.par_iter().map(|i| Contribution::new(i, mode)).collect(),
        }
    }
}

/// Reduced contributions for one synchronization mode.
#[derive(Clone, Debug)]
pub struct ContributionTable {
    mode: Mode,
    cells: usize,
    data: Vec<Contribution>,
}

impl ContributionTable {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    /// PEB per cell for the deployment made of `placements`, or `None` as
    /// soon as one cell is not identifiable.
    pub fn score(&self, placements: &[usize]) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.cells);
        for c in 0..self.cells {
            let mut acc = Accumulator::new(self.mode);
            for &p in placements {
                acc.add(&self.data[p * self.cells + c]);
            }
            out.push(acc.finish().peb?);
        }
        Some(out)
    }

    /// ρ of the deployment, `None` when it is not identifiable everywhere.
    pub fn rho(&self, placements: &[usize], epsilon: f64) -> Option<f64> {
        let values = self.score(placements)?;
        percentile(&values, epsilon).ok()
    }
}
