//! Coordinate frames, sub-array poses, image sources and arrival angles.
//!
//! Frames: the BS sits at the global origin; the ground is the plane
//! `z = -h_BS`. The vehicle-local frame has its length along `y`, width
//! along `x` and height along `z`; the length-wise vertical centre plane
//! is therefore `x = 0`. A sub-array's local frame has boresight `+x` with
//! its elements in the local `y`-`z` plane.

mod body;

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

pub use body::{ray_hits_triangle, BodyFile, Triangle, VehicleBody};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on `RᵀR - I` and `det R - 1` for accepting a rotation matrix.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

pub fn is_rotation(m: &Mat3) -> bool {
    let gram = m.transpose() * m - Mat3::identity();
    m.iter().all(|v| v.is_finite())
        && gram.amax() <= ROTATION_TOLERANCE
        && (m.determinant() - 1.0).abs() <= ROTATION_TOLERANCE
}

/// Position and orientation of a frame in its parent frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    /// Maps local coordinates to the parent frame.
    pub rotation: Mat3,
}

impl Pose {
    pub fn new(position: Vec3, rotation: Mat3) -> Result<Self> {
        if !position.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("pose position must be finite".into()));
        }
        if !is_rotation(&rotation) {
            return Err(Error::InvalidInput("pose rotation is not a proper rotation".into()));
        }
        Ok(Pose { position, rotation })
    }

    pub fn identity() -> Self {
        Pose { position: Vec3::zeros(), rotation: Mat3::identity() }
    }

    /// Vehicle pose at `position` with heading `heading` about `z`.
    pub fn vehicle(position: Vec3, heading: f64) -> Self {
        Pose { position, rotation: heading_rotation(heading) }
    }

    pub fn to_parent(&self, local: &Vec3) -> Vec3 {
        self.position + self.rotation * local
    }

    pub fn to_local(&self, parent: &Vec3) -> Vec3 {
        self.rotation.transpose() * (parent - self.position)
    }
}

/// Rotation about the `z` axis by `angle`.
pub fn heading_rotation(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn axis_angle_rotation(axis: &Vec3, angle: f64) -> Result<Mat3> {
    if axis.norm() == 0.0 || !axis.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("rotation axis must be a finite non-zero vector".into()));
    }
    Ok(*Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).matrix())
}

/// Rotation whose local `+x` axis points along `boresight` and whose local
/// `+z` axis is as close as possible to `up_hint`.
pub fn rotation_from_boresight(boresight: &Vec3, up_hint: &Vec3) -> Result<Mat3> {
    let x = boresight
        .try_normalize(1e-12)
        .ok_or_else(|| Error::InvalidInput("boresight must be non-zero".into()))?;
    let z = (up_hint - x * x.dot(up_hint))
        .try_normalize(1e-9)
        .ok_or_else(|| Error::InvalidInput("up hint is parallel to boresight".into()))?;
    let y = z.cross(&x);
    Ok(Mat3::from_columns(&[x, y, z]))
}

/// One sub-array: mounting point and rotation in the vehicle-local frame and
/// its element positions in the sub-array frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SubArraySpec {
    pub placement: Vec3,
    pub rotation: Mat3,
    pub elements: Vec<Vec3>,
}

impl SubArraySpec {
    pub fn new(placement: Vec3, rotation: Mat3, elements: Vec<Vec3>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::InvalidInput("a sub-array needs at least one element".into()));
        }
        if !placement.iter().chain(elements.iter().flat_map(|e| e.iter())).all(|v| v.is_finite())
        {
            return Err(Error::InvalidInput("sub-array coordinates must be finite".into()));
        }
        if !is_rotation(&rotation) {
            return Err(Error::InvalidInput("sub-array rotation is not a proper rotation".into()));
        }
        Ok(SubArraySpec { placement, rotation, elements })
    }

    /// Mount pose relative to the vehicle.
    pub fn mount(&self) -> Pose {
        Pose { position: self.placement, rotation: self.rotation }
    }

    /// Mirror image across the vehicle centre plane `x = 0`.
    ///
    /// The placement is reflected and the orientation is mirrored while
    /// remaining a proper rotation: the local `y` axis is flipped so the
    /// boresight maps to its mirror image. The element list is kept; for a
    /// layout symmetric in local `y` this is the mirrored layout.
    pub fn mirrored(&self) -> SubArraySpec {
        SubArraySpec {
            placement: mirror_vehicle_point(&self.placement),
            rotation: mirror_vehicle_rotation(&self.rotation),
            elements: self.elements.clone(),
        }
    }
}

pub fn mirror_vehicle_point(p: &Vec3) -> Vec3 {
    Vec3::new(-p.x, p.y, p.z)
}

pub fn mirror_vehicle_rotation(r: &Mat3) -> Mat3 {
    let s = Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
    let s_local = Mat3::from_diagonal(&Vec3::new(1.0, -1.0, 1.0));
    s * r * s_local
}

/// Global pose of a sub-array: `p_k = p + RΔ_k`, `R̃_k = R R_k`.
pub fn sub_array_pose(vehicle: &Pose, spec: &SubArraySpec) -> Pose {
    Pose {
        position: vehicle.position + vehicle.rotation * spec.placement,
        rotation: vehicle.rotation * spec.rotation,
    }
}

/// Specular reflecting plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReflectorPlane {
    pub point: Vec3,
    pub normal: Vec3,
}

impl ReflectorPlane {
    pub fn new(point: Vec3, normal: Vec3) -> Result<Self> {
        if (normal.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput("plane normal must be unit length".into()));
        }
        Ok(ReflectorPlane { point, normal })
    }

    /// Flat ground `bs_height` below the BS, normal `+z`.
    pub fn ground(bs_height: f64) -> Self {
        ReflectorPlane { point: Vec3::new(0.0, 0.0, -bs_height), normal: Vec3::z() }
    }
}

/// Householder reflection of `source` across `plane`.
pub fn mirror_source(source: &Vec3, plane: &ReflectorPlane) -> Vec3 {
    source - plane.normal * (2.0 * (source - plane.point).dot(&plane.normal))
}

/// Source position expressed in the sub-array frame: `R̃ᵀ(s − p_k)`.
pub fn local_source(sub_array: &Pose, source_global: &Vec3) -> Vec3 {
    sub_array.to_local(source_global)
}

/// Azimuth and elevation of arrival for a local source direction.
///
/// Azimuth is `-atan2(u₂, u₁)` (with `atan2(0, 0) = 0` at the zenith),
/// elevation is `asin(u₃ / |u|)`.
pub fn arrival_angles(u: &Vec3) -> Result<(f64, f64)> {
    let d = u.norm();
    if d == 0.0 || !d.is_finite() {
        return Err(Error::ZeroDirection);
    }
    let az = if u.x == 0.0 && u.y == 0.0 { 0.0 } else { -u.y.atan2(u.x) };
    let el = (u.z / d).clamp(-1.0, 1.0).asin();
    Ok((az, el))
}

/// Wavenumber vector of a plane wave arriving from `(az, el)`.
pub fn wavenumber(az: f64, el: f64, lambda: f64) -> Vec3 {
    let (sa, ca) = az.sin_cos();
    let (se, ce) = el.sin_cos();
    Vec3::new(ca * ce, -sa * ce, se) * (-2.0 * std::f64::consts::PI / lambda)
}

/// Index of a propagation path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PathKind {
    LineOfSight = 0,
    GroundReflection = 1,
}

impl PathKind {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Geometry of one path at one sub-array.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathGeometry {
    pub kind: PathKind,
    /// (Virtual) source in the sub-array frame.
    pub local_source: Vec3,
    pub distance: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub visible: bool,
}

/// Whether a direction lies in the sub-array's front hemisphere.
pub fn in_field_of_view(az: f64, el: f64) -> bool {
    az.abs() <= FRAC_PI_2 && el.abs() <= FRAC_PI_2
}

/// Visibility of the (virtual) source `u_local` from a sub-array mounted at
/// `mount` (vehicle-local pose): outside the field of view, or blocked by a
/// body triangle along the segment towards the source, means occluded.
pub fn occlusion_test(mount: &Pose, u_local: &Vec3, body: &VehicleBody) -> bool {
    let Ok((az, el)) = arrival_angles(u_local) else {
        return false;
    };
    if !in_field_of_view(az, el) {
        return false;
    }
    let direction = mount.rotation * u_local;
    !body.segment_blocked(&mount.position, &direction)
}

/// Geometry of the LOS and (optionally) ground-reflected paths at one
/// sub-array. The BS is at the global origin.
pub fn path_geometries(
    vehicle: &Pose,
    spec: &SubArraySpec,
    bs_height: f64,
    ground_reflection: bool,
    body: &VehicleBody,
) -> Vec<PathGeometry> {
    let pose = sub_array_pose(vehicle, spec);
    let mount = spec.mount();
    let bs = Vec3::zeros();
    let mut sources = vec![(PathKind::LineOfSight, bs)];
    if ground_reflection {
        sources.push((PathKind::GroundReflection, mirror_source(&bs, &ReflectorPlane::ground(bs_height))));
    }
    sources
        .into_iter()
        .filter_map(|(kind, src)| {
            let u = local_source(&pose, &src);
            let (azimuth, elevation) = arrival_angles(&u).ok()?;
            Some(PathGeometry {
                kind,
                local_source: u,
                distance: u.norm(),
                azimuth,
                elevation,
                visible: occlusion_test(&mount, &u, body),
            })
        })
        .collect()
}
