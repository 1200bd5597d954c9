use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Vec3;
use crate::error::{Error, Result};

/// Minimum triangle area accepted in a body mesh, m².
const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Segment parameter below which a hit counts as the mount point itself.
const SELF_HIT_FRACTION: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangle(pub [Vec3; 3]);

impl Triangle {
    pub fn area(&self) -> f64 {
        let [a, b, c] = self.0;
        0.5 * (b - a).cross(&(c - a)).norm()
    }
}

/// Möller–Trumbore intersection of the ray `origin + t·direction` with a
/// triangle; returns `t` (in units of `direction`) when the ray crosses it.
pub fn ray_hits_triangle(origin: &Vec3, direction: &Vec3, tri: &Triangle) -> Option<f64> {
    let [v0, v1, v2] = tri.0;
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let p = direction.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-15 * e1.norm() * e2.norm() * direction.norm() {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - v0;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = direction.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// Triangle mesh of the vehicle in the vehicle-local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleBody {
    triangles: Vec<Triangle>,
    extents: Vec3,
}

impl VehicleBody {
    pub fn new(triangles: Vec<Triangle>) -> Result<Self> {
        if let Some(i) = triangles.iter().position(|t| !(t.area() > MIN_TRIANGLE_AREA)) {
            return Err(Error::InvalidInput(format!("body triangle {i} is degenerate")));
        }
        let extents = if triangles.is_empty() {
            Vec3::zeros()
        } else {
            let mut lo = Vec3::repeat(f64::INFINITY);
            let mut hi = Vec3::repeat(f64::NEG_INFINITY);
            for v in triangles.iter().flat_map(|t| t.0.iter()) {
                lo = lo.inf(v);
                hi = hi.sup(v);
            }
            hi - lo
        };
        Ok(VehicleBody { triangles, extents })
    }

    pub fn empty() -> Self {
        VehicleBody { triangles: Vec::new(), extents: Vec3::zeros() }
    }

    /// Two-box hull, 1.8 m wide (x), 4.0 m long (y), 1.7 m tall (z): a lower
    /// body up to 0.95 m and a narrower cabin set back from the front.
    pub fn default_body() -> Self {
        let mut tris = box_triangles(Vec3::new(-0.9, -2.0, 0.0), Vec3::new(0.9, 2.0, 0.95));
        tris.extend(box_triangles(Vec3::new(-0.8, -1.2, 0.95), Vec3::new(0.8, 0.9, 1.7)));
        VehicleBody::new(tris).expect("default body is well formed")
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    /// Bounding-box size (width, length, height).
    pub fn extents(&self) -> Vec3 {
        self.extents
    }

    /// Whether any triangle crosses the open segment from `origin` to
    /// `origin + direction`, ignoring hits at the origin itself.
    pub fn segment_blocked(&self, origin: &Vec3, direction: &Vec3) -> bool {
        self.triangles.iter().any(|tri| {
            ray_hits_triangle(origin, direction, tri)
                .is_some_and(|t| t > SELF_HIT_FRACTION && t < 1.0)
        })
    }

    /// Load a JSON list of triangles, nine floats each.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Read { path: path.to_owned(), source })?;
        let raw: BodyFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        Self::from_file(&raw)
    }

    pub fn from_file(raw: &BodyFile) -> Result<Self> {
        let tris = raw
            .0
            .iter()
            .map(|t| {
                Triangle([
                    Vec3::new(t[0], t[1], t[2]),
                    Vec3::new(t[3], t[4], t[5]),
                    Vec3::new(t[6], t[7], t[8]),
                ])
            })
            .collect();
        VehicleBody::new(tris)
    }

    pub fn to_file(&self) -> BodyFile {
        BodyFile(
            self.triangles
                .iter()
                .map(|t| {
                    let [a, b, c] = t.0;
                    [a.x, a.y, a.z, b.x, b.y, b.z, c.x, c.y, c.z]
                })
                .collect(),
        )
    }
}

/// On-disk body mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyFile(pub Vec<[f64; 9]>);

fn box_triangles(lo: Vec3, hi: Vec3) -> Vec<Triangle> {
    let c = |i: usize| {
        Vec3::new(
            if i & 1 == 0 { lo.x } else { hi.x },
            if i & 2 == 0 { lo.y } else { hi.y },
            if i & 4 == 0 { lo.z } else { hi.z },
        )
    };
    // corner quads of each face
    const FACES: [[usize; 4]; 6] = [
        [0, 2, 6, 4], // x = lo
        [1, 5, 7, 3], // x = hi
        [0, 4, 5, 1], // y = lo
        [2, 3, 7, 6], // y = hi
        [0, 1, 3, 2], // z = lo
        [4, 6, 7, 5], // z = hi
    ];
    FACES
        .iter()
        .flat_map(|f| [Triangle([c(f[0]), c(f[1]), c(f[2])]), Triangle([c(f[0]), c(f[2]), c(f[3])])])
        .collect()
}
