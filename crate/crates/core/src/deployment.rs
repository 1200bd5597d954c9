//! Sub-array element layouts, deployments and the candidate mounting grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    axis_angle_rotation, is_rotation, rotation_from_boresight, Mat3, SubArraySpec, Vec3,
};

/// Rectangular element grid in the sub-array `y`-`z` plane, centred on the
/// sub-array origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementLayout {
    /// Elements along local `y`.
    pub columns: usize,
    /// Elements along local `z`.
    pub rows: usize,
    pub spacing_m: f64,
}

impl ElementLayout {
    /// Half-wavelength layout with `m` elements: 1, 2 (2x1), 4 (2x2), 8 (4x2)
    /// or any `n` as an `n`x1 line.
    pub fn half_wavelength(m: usize, lambda: f64) -> Result<Self> {
        let (columns, rows) = match m {
            0 => return Err(Error::Config("element count must be at least 1".into())),
            4 => (2, 2),
            8 => (4, 2),
            n => (n, 1),
        };
        Ok(ElementLayout { columns, rows, spacing_m: lambda / 2.0 })
    }

    pub fn len(&self) -> usize {
        self.columns * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn positions(&self) -> Vec<Vec3> {
        let offset = |i: usize, n: usize| (i as f64 - (n as f64 - 1.0) / 2.0) * self.spacing_m;
        (0..self.rows)
            .flat_map(|r| (0..self.columns).map(move |c| (r, c)))
            .map(|(r, c)| Vec3::new(0.0, offset(c, self.columns), offset(r, self.rows)))
            .collect()
    }
}

/// A set of sub-arrays mounted on the vehicle.
#[derive(Clone, Debug, PartialEq)]
pub struct Deployment {
    pub sub_arrays: Vec<SubArraySpec>,
}

impl Deployment {
    pub fn new(sub_arrays: Vec<SubArraySpec>) -> Result<Self> {
        if sub_arrays.is_empty() {
            return Err(Error::InvalidInput("a deployment needs at least one sub-array".into()));
        }
        Ok(Deployment { sub_arrays })
    }

    pub fn len(&self) -> usize {
        self.sub_arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sub_arrays.is_empty()
    }

    /// Deployment extended by one more sub-array.
    pub fn with(&self, extra: SubArraySpec) -> Deployment {
        let mut sub_arrays = self.sub_arrays.clone();
        sub_arrays.push(extra);
        Deployment { sub_arrays }
    }

    /// Mirror image of the whole deployment across the vehicle centre plane.
    pub fn mirrored(&self) -> Deployment {
        Deployment { sub_arrays: self.sub_arrays.iter().map(SubArraySpec::mirrored).collect() }
    }

    pub fn element_count(&self) -> usize {
        self.sub_arrays.iter().map(|s| s.elements.len()).sum()
    }
}

/// Candidate mounting location. Off-centre points are mirrored and carry
/// two placements.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub id: usize,
    pub label: String,
    pub placements: Vec<(Vec3, Mat3)>,
}

impl GridPoint {
    pub fn placement_count(&self) -> usize {
        self.placements.len()
    }

    pub fn is_mirrored(&self) -> bool {
        self.placements.len() == 2
    }
}

/// Selected grid points as a bitmask over grid-point ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Selection(pub u64);

impl Selection {
    pub fn from_ids(ids: &[usize]) -> Self {
        Selection(ids.iter().fold(0u64, |m, &i| m | (1u64 << i)))
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0 >> id & 1 == 1
    }

    pub fn with(&self, id: usize) -> Self {
        Selection(self.0 | 1u64 << id)
    }

    pub fn ids(&self) -> Vec<usize> {
        (0..64).filter(|&i| self.contains(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }
}

impl std::fmt::Display for Selection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// Maximum number of grid points (selections are stored as `u64` masks).
pub const MAX_GRID_POINTS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub points: Vec<GridPoint>,
}

impl Grid {
    pub fn new(points: Vec<GridPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("grid has no points".into()));
        }
        if points.len() > MAX_GRID_POINTS {
            return Err(Error::Config(format!("grid has more than {MAX_GRID_POINTS} points")));
        }
        for (i, p) in points.iter().enumerate() {
            if p.id != i {
                return Err(Error::Config(format!("grid point {i} has id {}", p.id)));
            }
            if !matches!(p.placements.len(), 1 | 2) {
                return Err(Error::Config(format!("grid point {i} must have 1 or 2 placements")));
            }
            if p.placements.iter().any(|(_, r)| !is_rotation(r)) {
                return Err(Error::Config(format!("grid point {i} has an improper rotation")));
            }
        }
        Ok(Grid { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Total number of placements (sub-array slots).
    pub fn placement_count(&self) -> usize {
        self.points.iter().map(GridPoint::placement_count).sum()
    }

    /// `(singles, pairs)`: centre-line points and mirrored points.
    pub fn split(&self) -> (usize, usize) {
        let pairs = self.points.iter().filter(|p| p.is_mirrored()).count();
        (self.points.len() - pairs, pairs)
    }

    /// Number of sub-arrays realised by a selection.
    pub fn sub_array_count(&self, sel: Selection) -> usize {
        sel.ids().iter().map(|&i| self.points[i].placement_count()).sum()
    }

    /// Global placement index of each (point, side) pair, in grid order.
    pub fn placement_offsets(&self) -> Vec<usize> {
        self.points
            .iter()
            .scan(0, |acc, p| {
                let start = *acc;
                *acc += p.placement_count();
                Some(start)
            })
            .collect()
    }

    /// Every placement as a sub-array with the given element layout.
    pub fn placements(&self, layout: &ElementLayout) -> Vec<SubArraySpec> {
        let elements = layout.positions();
        self.points
            .iter()
            .flat_map(|p| p.placements.iter())
            .map(|(pos, rot)| SubArraySpec { placement: *pos, rotation: *rot, elements: elements.clone() })
            .collect()
    }

    /// Placement indices realised by a selection, in grid order.
    pub fn placement_indices(&self, sel: Selection) -> Vec<usize> {
        let offsets = &self.placement_offsets();
        sel.ids()
            .into_iter()
            .filter(|&i| i < self.points.len())
            .flat_map(|i| (0..self.points[i].placement_count()).map(move |j| offsets[i] + j))
            .collect()
    }

    pub fn deployment(&self, sel: Selection, layout: &ElementLayout) -> Result<Deployment> {
        if sel.ids().iter().any(|&i| i >= self.points.len()) {
            return Err(Error::InvalidInput(format!("selection {sel} refers to unknown grid points")));
        }
        let all = self.placements(layout);
        Deployment::new(self.placement_indices(sel).into_iter().map(|i| all[i].clone()).collect())
    }

    /// Default grid: 6 centre-line points and 14 mirrored pairs (20 points,
    /// 34 placements) on [`crate::geometry::VehicleBody::default_body`].
    /// Mounts sit 5 mm proud of the surface.
    pub fn default_grid() -> Self {
        const OFF: f64 = 0.005;
        let up = Vec3::z();
        let fwd = Vec3::y();
        let tilt = |v: Vec3| v.normalize();
        // (label, placement, boresight, up hint, mirrored)
        let spec: [(&str, Vec3, Vec3, Vec3, bool); 20] = [
            ("front-bumper", Vec3::new(0.0, 2.0 + OFF, 0.5), fwd, up, false),
            ("rear-bumper", Vec3::new(0.0, -2.0 - OFF, 0.5), -fwd, up, false),
            ("hood", Vec3::new(0.0, 1.45, 0.95 + OFF), tilt(Vec3::new(0.0, 0.5, 1.0)), fwd, false),
            ("roof-front", Vec3::new(0.0, 0.6, 1.7 + OFF), up, fwd, false),
            ("roof-rear", Vec3::new(0.0, -0.9, 1.7 + OFF), up, fwd, false),
            ("trunk", Vec3::new(0.0, -1.6, 0.95 + OFF), tilt(Vec3::new(0.0, -0.5, 1.0)), fwd, false),
            ("front-corner", Vec3::new(0.9 + OFF, 2.0 + OFF, 0.5), tilt(Vec3::new(1.0, 1.0, 0.0)), up, true),
            ("rear-corner", Vec3::new(0.9 + OFF, -2.0 - OFF, 0.5), tilt(Vec3::new(1.0, -1.0, 0.0)), up, true),
            ("front-fender", Vec3::new(0.9 + OFF, 1.4, 0.55), Vec3::x(), up, true),
            ("front-door", Vec3::new(0.9 + OFF, 0.4, 0.6), Vec3::x(), up, true),
            ("rear-door", Vec3::new(0.9 + OFF, -0.6, 0.6), Vec3::x(), up, true),
            ("rear-fender", Vec3::new(0.9 + OFF, -1.5, 0.55), Vec3::x(), up, true),
            ("mirror", Vec3::new(0.9 + OFF, 0.8, 0.9), tilt(Vec3::new(1.0, 0.3, 0.0)), up, true),
            ("roof-front-edge", Vec3::new(0.75, 0.8, 1.7 + OFF), tilt(Vec3::new(0.5, 0.0, 1.0)), fwd, true),
            ("roof-center-edge", Vec3::new(0.75, -0.15, 1.7 + OFF), tilt(Vec3::new(0.5, 0.0, 1.0)), fwd, true),
            ("roof-rear-edge", Vec3::new(0.75, -1.1, 1.7 + OFF), tilt(Vec3::new(0.5, 0.0, 1.0)), fwd, true),
            ("pillar", Vec3::new(0.8 + OFF, -0.2, 1.35), Vec3::x(), up, true),
            ("hood-corner", Vec3::new(0.8, 1.8, 0.95 + OFF), tilt(Vec3::new(0.5, 0.5, 1.0)), fwd, true),
            ("trunk-corner", Vec3::new(0.8, -1.8, 0.95 + OFF), tilt(Vec3::new(0.5, -0.5, 1.0)), fwd, true),
            ("headlight", Vec3::new(0.6, 2.0 + OFF, 0.7), tilt(Vec3::new(0.3, 1.0, 0.0)), up, true),
        ];
        let points = spec
            .iter()
            .enumerate()
            .map(|(id, (label, pos, bore, hint, mirrored))| {
                let rot = rotation_from_boresight(bore, hint).expect("default grid orientation");
                let mut placements = vec![(*pos, rot)];
                if *mirrored {
                    let m = SubArraySpec { placement: *pos, rotation: rot, elements: vec![] }.mirrored();
                    placements.push((m.placement, m.rotation));
                }
                GridPoint { id, label: (*label).to_owned(), placements }
            })
            .collect();
        Grid::new(points).expect("default grid is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Read { path: path.to_owned(), source })?;
        let raw: Vec<GridPointFile> =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        Self::from_file(&raw)
    }

    pub fn from_file(raw: &[GridPointFile]) -> Result<Self> {
        let points = raw
            .iter()
            .enumerate()
            .map(|(id, p)| {
                let pos = Vec3::from(p.placement);
                let rot = p.rotation.matrix()?;
                if !is_rotation(&rot) {
                    return Err(Error::Config(format!("grid point {id}: rotation is not proper")));
                }
                let mut placements = vec![(pos, rot)];
                if p.mirrored {
                    if pos.x.abs() < 1e-9 {
                        return Err(Error::Config(format!(
                            "grid point {id} lies on the centre plane and cannot be mirrored"
                        )));
                    }
                    let m = SubArraySpec { placement: pos, rotation: rot, elements: vec![] }.mirrored();
                    placements.push((m.placement, m.rotation));
                }
                Ok(GridPoint { id, label: p.label.clone().unwrap_or_default(), placements })
            })
            .collect::<Result<Vec<_>>>()?;
        Grid::new(points)
    }

    pub fn to_file(&self) -> Vec<GridPointFile> {
        self.points
            .iter()
            .map(|p| {
                let (pos, rot) = p.placements[0];
                GridPointFile {
                    label: (!p.label.is_empty()).then(|| p.label.clone()),
                    placement: pos.into(),
                    rotation: RotationFile::Matrix([
                        [rot[(0, 0)], rot[(0, 1)], rot[(0, 2)]],
                        [rot[(1, 0)], rot[(1, 1)], rot[(1, 2)]],
                        [rot[(2, 0)], rot[(2, 1)], rot[(2, 2)]],
                    ]),
                    mirrored: p.is_mirrored(),
                }
            })
            .collect()
    }

    /// Sub-grid containing only the selected points (ids renumbered).
    pub fn subset(&self, sel: Selection) -> Result<Grid> {
        Grid::new(
            sel.ids()
                .into_iter()
                .filter(|&i| i < self.points.len())
                .enumerate()
                .map(|(new_id, i)| GridPoint { id: new_id, ..self.points[i].clone() })
                .collect(),
        )
    }
}

/// Grid-point rotation: a row-major 3x3 matrix or axis-angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RotationFile {
    Matrix([[f64; 3]; 3]),
    AxisAngle { axis: [f64; 3], angle_rad: f64 },
}

impl RotationFile {
    pub fn matrix(&self) -> Result<Mat3> {
        match self {
            RotationFile::Matrix(m) => Ok(Mat3::new(
                m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
            )),
            RotationFile::AxisAngle { axis, angle_rad } => {
                axis_angle_rotation(&Vec3::from(*axis), *angle_rad).map_err(|e| Error::Config(e.to_string()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPointFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub placement: [f64; 3],
    pub rotation: RotationFile,
    pub mirrored: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::VehicleBody;

    #[test]
    fn default_grid_structure() {
        let g = Grid::default_grid();
        assert_eq!(g.len(), 20);
        assert_eq!(g.split(), (6, 14));
        assert_eq!(g.placement_count(), 34);
    }

    #[test]
    fn default_grid_mounts_lie_outside_body_within_a_centimetre() {
        let body = VehicleBody::default_body();
        let e = body.extents();
        for p in Grid::default_grid().points.iter().flat_map(|p| p.placements.iter()) {
            assert!(p.0.x.abs() <= e.x / 2.0 + 0.01);
            assert!(p.0.y.abs() <= e.y / 2.0 + 0.01);
            assert!(p.0.z <= e.z + 0.01 && p.0.z >= 0.0);
        }
    }

    #[test]
    fn mirrored_pairs_reflect_across_centre_plane() {
        for p in Grid::default_grid().points.iter().filter(|p| p.is_mirrored()) {
            let (a, ra) = p.placements[0];
            let (b, rb) = p.placements[1];
            assert_eq!(Vec3::new(-a.x, a.y, a.z), b);
            let ba = ra * Vec3::x();
            let bb = rb * Vec3::x();
            assert!((bb - Vec3::new(-ba.x, ba.y, ba.z)).amax() < 1e-12);
        }
    }

    #[test]
    fn layouts_are_half_wavelength() {
        let l = ElementLayout::half_wavelength(8, 0.01).unwrap();
        assert_eq!((l.columns, l.rows), (4, 2));
        let pos = l.positions();
        assert_eq!(pos.len(), 8);
        assert!(pos.iter().all(|p| p.x == 0.0));
        assert!((pos[1].y - pos[0].y - 0.005).abs() < 1e-15);
        let c: Vec3 = pos.iter().sum();
        assert!(c.norm() < 1e-15);
        assert!(ElementLayout::half_wavelength(0, 0.01).is_err());
    }

    #[test]
    fn grid_file_round_trip() {
        let g = Grid::default_grid();
        let json = serde_json::to_string(&g.to_file()).unwrap();
        let raw: Vec<GridPointFile> = serde_json::from_str(&json).unwrap();
        let back = Grid::from_file(&raw).unwrap();
        assert_eq!(back.len(), g.len());
        for (a, b) in back.points.iter().zip(&g.points) {
            for (pa, pb) in a.placements.iter().zip(&b.placements) {
                assert!((pa.0 - pb.0).amax() < 1e-15 && (pa.1 - pb.1).amax() < 1e-15);
            }
        }
    }

    #[test]
    fn axis_angle_rotation_parses() {
        let raw: Vec<GridPointFile> = serde_json::from_str(
            r#"[{"placement": [0.5, 0, 1], "rotation": {"axis": [0, 0, 1], "angle_rad": 1.5707963267948966}, "mirrored": true}]"#,
        )
        .unwrap();
        let g = Grid::from_file(&raw).unwrap();
        assert_eq!(g.placement_count(), 2);
        let (_, r) = g.points[0].placements[0];
        assert!((r * Vec3::x() - Vec3::y()).amax() < 1e-12);
    }

    #[test]
    fn selection_to_deployment() {
        let g = Grid::default_grid();
        let layout = ElementLayout::half_wavelength(4, 0.0107).unwrap();
        let sel = Selection::from_ids(&[0, 6]);
        assert_eq!(g.sub_array_count(sel), 3);
        let d = g.deployment(sel, &layout).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.element_count(), 12);
        assert!(g.deployment(Selection::from_ids(&[25]), &layout).is_err());
    }
}
