//! The volumetric deformable model: an ellipsoid primitive with per-(u, w)
//! parameter functions, a twist/offset deformation, a rigid pose and an
//! optional local displacement field.
//!
//! Grid nodes are stored row-major over `(u, v, w)` with `w` fastest, so the
//! flat index of node `(i, j, w)` is `(i · N_v + j) · N_w + w`. Material
//! coordinate `u` runs from the apex (`-π/2`) to the base (`π/6`); `v` is
//! periodic on `[-π, π)`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::{self, Vec3};

pub const U_MIN: f64 = -FRAC_PI_2;
pub const U_MAX: f64 = FRAC_PI_6;
pub const V_MIN: f64 = -PI;
pub const V_MAX: f64 = PI;

/// Sizes of the material-coordinate grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub n_u: usize,
    pub n_v: usize,
    pub n_w: usize,
}

impl GridDims {
    pub fn new(n_u: usize, n_v: usize, n_w: usize) -> Result<Self> {
        if n_u < 2 || n_v < 3 || n_w < 1 {
            return Err(Error::Domain(format!(
                "grid needs n_u >= 2, n_v >= 3, n_w >= 1; got ({n_u}, {n_v}, {n_w})"
            )));
        }
        Ok(Self { n_u, n_v, n_w })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_u * self.n_v * self.n_w
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, w: usize) -> usize {
        (i * self.n_v + j) * self.n_w + w
    }

    /// Inverse of [`GridDims::index`].
    #[inline]
    pub fn node(&self, idx: usize) -> (usize, usize, usize) {
        let w = idx % self.n_w;
        let rest = idx / self.n_w;
        (rest / self.n_v, rest % self.n_v, w)
    }

    /// Index of the `(u, w)` ring a node belongs to.
    #[inline]
    pub fn ring_of(&self, idx: usize) -> usize {
        let (i, _, w) = self.node(idx);
        i * self.n_w + w
    }

    pub fn ring_count(&self) -> usize {
        self.n_u * self.n_w
    }

    /// `u` sample `i`; the last sample is exactly `π/6`.
    pub fn u(&self, i: usize) -> f64 {
        if i + 1 == self.n_u {
            U_MAX
        } else {
            U_MIN + i as f64 * (U_MAX - U_MIN) / (self.n_u - 1) as f64
        }
    }

    /// `v` sample `j`; the periodic endpoint `π` is excluded.
    pub fn v(&self, j: usize) -> f64 {
        V_MIN + j as f64 * (V_MAX - V_MIN) / self.n_v as f64
    }

    pub fn coords(&self, idx: usize) -> MaterialCoordinates {
        let (i, j, w) = self.node(idx);
        MaterialCoordinates {
            u: self.u(i),
            v: self.v(j),
            w,
        }
    }

    /// Neighbour pairs of the structured grid: forward differences along `u`
    /// (open), `v` (periodic) and `w` (open).
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(3 * self.len());
        for i in 0..self.n_u {
            for j in 0..self.n_v {
                for w in 0..self.n_w {
                    let a = self.index(i, j, w);
                    if i + 1 < self.n_u {
                        out.push((a, self.index(i + 1, j, w)));
                    }
                    out.push((a, self.index(i, (j + 1) % self.n_v, w)));
                    if w + 1 < self.n_w {
                        out.push((a, self.index(i, j, w + 1)));
                    }
                }
            }
        }
        out
    }
}

/// A single material coordinate `(u, v, w)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialCoordinates {
    pub u: f64,
    pub v: f64,
    pub w: usize,
}

impl MaterialCoordinates {
    pub fn check(&self, n_w: usize) -> Result<()> {
        if !(U_MIN..=U_MAX).contains(&self.u) {
            return Err(Error::Domain(format!("u = {} outside [-π/2, π/6]", self.u)));
        }
        if !(V_MIN..V_MAX).contains(&self.v) {
            return Err(Error::Domain(format!("v = {} outside [-π, π)", self.v)));
        }
        if self.w >= n_w {
            return Err(Error::Domain(format!("layer {} outside 0..{n_w}", self.w)));
        }
        Ok(())
    }
}

/// Rotation as a quaternion `w + xi + yj + zk`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = vec3::norm(axis);
        let (s, c) = (angle / 2.0).sin_cos();
        Self {
            w: c,
            x: axis[0] / n * s,
            y: axis[1] / n * s,
            z: axis[2] / n * s,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let n = self.norm();
        let (w, x, y, z) = (self.w / n, self.x / n, self.y / n, self.z / n);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }
}

fn rotate(m: &[[f64; 3]; 3], p: Vec3) -> Vec3 {
    [vec3::dot(m[0], p), vec3::dot(m[1], p), vec3::dot(m[2], p)]
}

/// Global shape and deformation parameter functions sampled on `(u, w)`,
/// plus the model pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterFunctions {
    pub n_u: usize,
    pub n_w: usize,
    /// Scale per layer.
    pub a0: Vec<f64>,
    /// Aspect ratios per `(u, w)`, index `i · n_w + w`.
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
    /// Twist about the model z axis (radians) per `(u, w)`.
    pub tau: Vec<f64>,
    pub e_xo: Vec<f64>,
    pub e_yo: Vec<f64>,
    pub center: Vec3,
    pub rotation: Quaternion,
}

impl ParameterFunctions {
    /// Constant parameter functions with zero twist and offsets.
    pub fn uniform(n_u: usize, n_w: usize, a0: f64, a: [f64; 3]) -> Self {
        let k = n_u * n_w;
        Self {
            n_u,
            n_w,
            a0: vec![a0; n_w],
            a1: vec![a[0]; k],
            a2: vec![a[1]; k],
            a3: vec![a[2]; k],
            tau: vec![0.0; k],
            e_xo: vec![0.0; k],
            e_yo: vec![0.0; k],
            center: [0.0; 3],
            rotation: Quaternion::IDENTITY,
        }
    }

    #[inline]
    pub fn at(&self, i: usize, w: usize) -> usize {
        i * self.n_w + w
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_u * self.n_w;
        if self.a0.len() != self.n_w {
            return Err(Error::Dimension(format!(
                "a0 has {} entries for {} layers",
                self.a0.len(),
                self.n_w
            )));
        }
        for (name, arr) in [
            ("a1", &self.a1),
            ("a2", &self.a2),
            ("a3", &self.a3),
            ("tau", &self.tau),
            ("e_xo", &self.e_xo),
            ("e_yo", &self.e_yo),
        ] {
            if arr.len() != k {
                return Err(Error::Dimension(format!(
                    "{name} has {} entries, grid needs {k}",
                    arr.len()
                )));
            }
            if arr.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("{name} has non-finite entries")));
            }
        }
        if let Some(a) = self.a0.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Domain(format!("a0 must be positive, got {a}")));
        }
        for (name, arr) in [("a1", &self.a1), ("a2", &self.a2), ("a3", &self.a3)] {
            if let Some(a) = arr.iter().find(|&&a| !(0.0..=1.0).contains(&a)) {
                return Err(Error::Domain(format!("{name} = {a} outside [0, 1]")));
            }
        }
        if (self.rotation.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "rotation quaternion has norm {}",
                self.rotation.norm()
            )));
        }
        Ok(())
    }

    /// Ellipsoid point at grid node `(i, j, w)`.
    pub fn ellipsoid_at(&self, dims: &GridDims, i: usize, j: usize, w: usize) -> Vec3 {
        let k = self.at(i, w);
        ellipsoid_unchecked(
            self.a0[w],
            [self.a1[k], self.a2[k], self.a3[k]],
            dims.u(i),
            dims.v(j),
        )
    }

    /// Shape primitive `s` (ellipsoid with twist and offsets) at a grid node.
    pub fn primitive_at(&self, dims: &GridDims, i: usize, j: usize, w: usize) -> Vec3 {
        let k = self.at(i, w);
        apply_twist_offset(
            self.ellipsoid_at(dims, i, j, w),
            self.tau[k],
            self.e_xo[k],
            self.e_yo[k],
        )
    }
}

#[inline]
fn cos_u(u: f64) -> f64 {
    // The apex must collapse to one point for every v.
    if u == U_MIN {
        0.0
    } else {
        u.cos()
    }
}

fn ellipsoid_unchecked(a0: f64, a: [f64; 3], u: f64, v: f64) -> Vec3 {
    let cu = cos_u(u);
    let (sv, cv) = v.sin_cos();
    [
        a0 * (a[0] * cu * cv),
        a0 * (a[1] * cu * sv),
        a0 * (a[2] * u.sin()),
    ]
}

/// Ellipsoid primitive `a0 · (a1 cos u cos v, a2 cos u sin v, a3 sin u)`.
pub fn eval_ellipsoid(a0: f64, a: [f64; 3], m: MaterialCoordinates, n_w: usize) -> Result<Vec3> {
    m.check(n_w)?;
    Ok(ellipsoid_unchecked(a0, a, m.u, m.v))
}

/// Rotates `e` about z by `tau` and shifts it by the axis offsets.
#[inline]
pub fn apply_twist_offset(e: Vec3, tau: f64, e_xo: f64, e_yo: f64) -> Vec3 {
    let (s, c) = tau.sin_cos();
    [
        e[0] * c - e[1] * s + e_xo,
        e[0] * s + e[1] * c + e_yo,
        e[2],
    ]
}

/// Points of a material grid, one per node.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialGrid {
    pub dims: GridDims,
    pub points: Vec<Vec3>,
}

impl MaterialGrid {
    pub fn new(dims: GridDims, points: Vec<Vec3>) -> Result<Self> {
        if points.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "{} points for a {}x{}x{} grid",
                points.len(),
                dims.n_u,
                dims.n_v,
                dims.n_w
            )));
        }
        Ok(Self { dims, points })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, w: usize) -> Vec3 {
        self.points[self.dims.index(i, j, w)]
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|&p| vec3::is_finite(p))
    }

    /// Sub-grid made of the given layers, in the given order.
    pub fn select_layers(&self, layers: &[usize]) -> Result<MaterialGrid> {
        if let Some(&w) = layers.iter().find(|&&w| w >= self.dims.n_w) {
            return Err(Error::Domain(format!("layer {w} outside 0..{}", self.dims.n_w)));
        }
        let dims = GridDims::new(self.dims.n_u, self.dims.n_v, layers.len())?;
        let mut points = Vec::with_capacity(dims.len());
        for i in 0..dims.n_u {
            for j in 0..dims.n_v {
                for &w in layers {
                    points.push(self.at(i, j, w));
                }
            }
        }
        MaterialGrid::new(dims, points)
    }

    pub fn layer(&self, w: usize) -> Result<MaterialGrid> {
        self.select_layers(&[w])
    }
}

/// Evaluates `M = c + R (s + d)` on every grid node.
pub fn eval_model(
    pf: &ParameterFunctions,
    dims: GridDims,
    local_d: Option<&[Vec3]>,
) -> Result<MaterialGrid> {
    if pf.n_u != dims.n_u || pf.n_w != dims.n_w {
        return Err(Error::Dimension(format!(
            "parameter functions sampled on ({}, {}) but grid is ({}, {})",
            pf.n_u, pf.n_w, dims.n_u, dims.n_w
        )));
    }
    if let Some(d) = local_d {
        if d.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "local deformation has {} rows for {} grid nodes",
                d.len(),
                dims.len()
            )));
        }
    }
    let rot = pf.rotation.to_matrix();
    let mut points = Vec::with_capacity(dims.len());
    for idx in 0..dims.len() {
        let (i, j, w) = dims.node(idx);
        let mut s = pf.primitive_at(&dims, i, j, w);
        if let Some(d) = local_d {
            s = vec3::add(s, d[idx]);
        }
        points.push(vec3::add(pf.center, rotate(&rot, s)));
    }
    MaterialGrid::new(dims, points)
}

/// Fills `n_w` layers by linear interpolation between an inner and an outer
/// single-layer grid; layer 0 is `inner`, layer `n_w - 1` is `outer`.
pub fn interpolate_layers(
    inner: &MaterialGrid,
    outer: &MaterialGrid,
    n_w: usize,
) -> Result<MaterialGrid> {
    if n_w < 2 {
        return Err(Error::Domain(format!("need at least 2 layers, got {n_w}")));
    }
    let (a, b) = (inner.dims, outer.dims);
    if a.n_u != b.n_u || a.n_v != b.n_v || a.n_w != 1 || b.n_w != 1 {
        return Err(Error::Dimension(format!(
            "inner {a:?} and outer {b:?} must be matching single layers"
        )));
    }
    let dims = GridDims::new(a.n_u, a.n_v, n_w)?;
    let mut points = Vec::with_capacity(dims.len());
    for i in 0..a.n_u {
        for j in 0..a.n_v {
            let p_in = inner.at(i, j, 0);
            let p_out = outer.at(i, j, 0);
            for w in 0..n_w {
                let s = w as f64 / (n_w - 1) as f64;
                let t = 1.0 - s;
                points.push([
                    s * p_out[0] + t * p_in[0],
                    s * p_out[1] + t * p_in[1],
                    s * p_out[2] + t * p_in[2],
                ]);
            }
        }
    }
    MaterialGrid::new(dims, points)
}

/// Quadrilateral surface mesh of one material layer.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 4]>,
    pub layer: usize,
    pub n_u: usize,
    pub n_v: usize,
}

impl QuadMesh {
    /// Topological vertex id: the apex row `u = -π/2` is a single pole.
    pub fn canonical_vertex(&self, v: usize) -> usize {
        if v < self.n_v {
            0
        } else {
            v
        }
    }
}

/// Quad mesh of layer `w`: faces `(i,j)-(i+1,j)-(i+1,j+1)-(i,j+1)`, periodic in
/// `v`, open at the base.
pub fn build_layer_mesh(grid: &MaterialGrid, w: usize) -> Result<QuadMesh> {
    let d = grid.dims;
    if w >= d.n_w {
        return Err(Error::Domain(format!("layer {w} outside 0..{}", d.n_w)));
    }
    let vertices = (0..d.n_u)
        .flat_map(|i| (0..d.n_v).map(move |j| (i, j)))
        .map(|(i, j)| grid.at(i, j, w))
        .collect();
    let vid = |i: usize, j: usize| i * d.n_v + j % d.n_v;
    let mut faces = Vec::with_capacity((d.n_u - 1) * d.n_v);
    for i in 0..d.n_u - 1 {
        for j in 0..d.n_v {
            faces.push([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]);
        }
    }
    Ok(QuadMesh {
        vertices,
        faces,
        layer: w,
        n_u: d.n_u,
        n_v: d.n_v,
    })
}
