//! Self-intersection ratio of a deformed layer surface, with exact
//! orientation predicates.

use std::cmp::Ordering;

use robust::{orient2d, orient3d, Coord, Coord3D};

use crate::geometry::QuadMesh;
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiReport {
    /// Intersecting triangles over all triangles.
    pub ratio: f64,
    pub intersecting: usize,
    pub triangles: usize,
    /// Zero-area triangles, counted as non-intersecting.
    pub degenerate: usize,
}

/// Splits each quad `a-b-c-d` along `a-c`. Triangles that repeat a
/// topological vertex (the collapsed apex) are dropped.
pub fn triangulate(mesh: &QuadMesh) -> Vec<[usize; 3]> {
    let mut tris = Vec::with_capacity(mesh.faces.len() * 2);
    for &[a, b, c, d] in &mesh.faces {
        for t in [[a, b, c], [a, c, d]] {
            let k = t.map(|v| mesh.canonical_vertex(v));
            if k[0] != k[1] && k[1] != k[2] && k[0] != k[2] {
                tris.push(t);
            }
        }
    }
    tris
}

fn c3(p: Vec3) -> Coord3D<f64> {
    Coord3D {
        x: p[0],
        y: p[1],
        z: p[2],
    }
}

/// Projection dropping axis `drop`.
fn c2(p: Vec3, drop: usize) -> Coord<f64> {
    let (a, b) = match drop {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    Coord { x: p[a], y: p[b] }
}

fn sign(x: f64) -> i8 {
    match x.partial_cmp(&0.0) {
        Some(Ordering::Greater) => 1,
        Some(Ordering::Less) => -1,
        _ => 0,
    }
}

fn o2(a: Vec3, b: Vec3, c: Vec3, drop: usize) -> i8 {
    sign(orient2d(c2(a, drop), c2(b, drop), c2(c, drop)))
}

fn o3(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> i8 {
    sign(orient3d(c3(a), c3(b), c3(c), c3(d)))
}

/// Exactly zero area: collinear in every coordinate projection.
pub fn is_degenerate(t: [Vec3; 3]) -> bool {
    (0..3).all(|d| o2(t[0], t[1], t[2], d) == 0)
}

/// Closed segment `pq` against closed triangle `t` in 3D.
fn segment_hits_triangle(p: Vec3, q: Vec3, t: [Vec3; 3]) -> bool {
    let sp = o3(t[0], t[1], t[2], p);
    let sq = o3(t[0], t[1], t[2], q);
    if sp != 0 && sp == sq {
        return false;
    }
    if sp == 0 && sq == 0 {
        return false;
    }
    let s = [o3(p, q, t[0], t[1]), o3(p, q, t[1], t[2]), o3(p, q, t[2], t[0])];
    s.iter().all(|&x| x >= 0) || s.iter().all(|&x| x <= 0)
}

fn on_segment_2d(a: Vec3, b: Vec3, p: Vec3, drop: usize) -> bool {
    let (pa, pb, pp) = (c2(a, drop), c2(b, drop), c2(p, drop));
    pp.x >= pa.x.min(pb.x) && pp.x <= pa.x.max(pb.x) && pp.y >= pa.y.min(pb.y) && pp.y <= pa.y.max(pb.y)
}

fn segments_cross_2d(a: Vec3, b: Vec3, c: Vec3, d: Vec3, drop: usize) -> bool {
    let d1 = o2(a, b, c, drop);
    let d2 = o2(a, b, d, drop);
    let d3 = o2(c, d, a, drop);
    let d4 = o2(c, d, b, drop);
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    (d1 == 0 && on_segment_2d(a, b, c, drop))
        || (d2 == 0 && on_segment_2d(a, b, d, drop))
        || (d3 == 0 && on_segment_2d(c, d, a, drop))
        || (d4 == 0 && on_segment_2d(c, d, b, drop))
}

fn inside_2d(p: Vec3, t: [Vec3; 3], drop: usize) -> bool {
    let s = [o2(t[0], t[1], p, drop), o2(t[1], t[2], p, drop), o2(t[2], t[0], p, drop)];
    s.iter().all(|&x| x >= 0) || s.iter().all(|&x| x <= 0)
}

/// Axis to drop for a coplanar pair: one where `t` projects with nonzero area.
fn projection_axis(t: [Vec3; 3]) -> usize {
    (0..3).rev().find(|&d| o2(t[0], t[1], t[2], d) != 0).unwrap_or(2)
}

fn coplanar_intersect(a: [Vec3; 3], b: [Vec3; 3]) -> bool {
    let drop = projection_axis(a);
    for i in 0..3 {
        for j in 0..3 {
            if segments_cross_2d(a[i], a[(i + 1) % 3], b[j], b[(j + 1) % 3], drop) {
                return true;
            }
        }
    }
    inside_2d(b[0], a, drop) || inside_2d(a[0], b, drop)
}

/// Exact closed triangle-triangle intersection for non-degenerate triangles.
pub fn triangles_intersect(a: [Vec3; 3], b: [Vec3; 3]) -> bool {
    let sb = [o3(a[0], a[1], a[2], b[0]), o3(a[0], a[1], a[2], b[1]), o3(a[0], a[1], a[2], b[2])];
    if sb.iter().all(|&s| s > 0) || sb.iter().all(|&s| s < 0) {
        return false;
    }
    if sb.iter().all(|&s| s == 0) {
        return coplanar_intersect(a, b);
    }
    let sa = [o3(b[0], b[1], b[2], a[0]), o3(b[0], b[1], b[2], a[1]), o3(b[0], b[1], b[2], a[2])];
    if sa.iter().all(|&s| s > 0) || sa.iter().all(|&s| s < 0) {
        return false;
    }
    // Non-coplanar: the intersection segment ends on an edge of one of them.
    (0..3).any(|i| segment_hits_triangle(a[i], a[(i + 1) % 3], b))
        || (0..3).any(|i| segment_hits_triangle(b[i], b[(i + 1) % 3], a))
}

#[derive(Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn of(t: [Vec3; 3]) -> Self {
        let mut lo = t[0];
        let mut hi = t[0];
        for p in &t[1..] {
            for c in 0..3 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        Self { lo, hi }
    }

    fn overlaps(&self, o: &Aabb) -> bool {
        (0..3).all(|c| self.lo[c] <= o.hi[c] && o.lo[c] <= self.hi[c])
    }
}

/// Fraction of triangles intersecting a triangle they share no vertex with.
pub fn si_ratio(mesh: &QuadMesh) -> SiReport {
    let tris = triangulate(mesh);
    let geo: Vec<[Vec3; 3]> = tris.iter().map(|t| t.map(|v| mesh.vertices[v])).collect();
    let canon: Vec<[usize; 3]> = tris.iter().map(|t| t.map(|v| mesh.canonical_vertex(v))).collect();
    let degenerate: Vec<bool> = geo.iter().map(|&t| is_degenerate(t)).collect();
    let boxes: Vec<Aabb> = geo.iter().map(|&t| Aabb::of(t)).collect();

    let mut order: Vec<usize> = (0..tris.len()).filter(|&i| !degenerate[i]).collect();
    order.sort_by(|&a, &b| boxes[a].lo[0].total_cmp(&boxes[b].lo[0]).then(a.cmp(&b)));
    let mut hit = vec![false; tris.len()];
    for (n, &i) in order.iter().enumerate() {
        for &j in &order[n + 1..] {
            if boxes[j].lo[0] > boxes[i].hi[0] {
                break;
            }
            if (hit[i] && hit[j]) || !boxes[i].overlaps(&boxes[j]) {
                continue;
            }
            if canon[i].iter().any(|v| canon[j].contains(v)) {
                continue;
            }
            if triangles_intersect(geo[i], geo[j]) {
                hit[i] = true;
                hit[j] = true;
            }
        }
    }
    let intersecting = hit.iter().filter(|&&h| h).count();
    let triangles = tris.len();
    SiReport {
        ratio: if triangles == 0 {
            0.0
        } else {
            intersecting as f64 / triangles as f64
        },
        intersecting,
        triangles,
        degenerate: degenerate.iter().filter(|&&d| d).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_layer_mesh, eval_model, GridDims, ParameterFunctions};

    fn tri(a: Vec3, b: Vec3, c: Vec3) -> [Vec3; 3] {
        [a, b, c]
    }

    #[test]
    fn crossing_triangles() {
        let a = tri([0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0]);
        let b = tri([0.5, 0.5, -1.0], [0.5, 0.5, 1.0], [3.0, 3.0, 0.0]);
        assert!(triangles_intersect(a, b));
        assert!(triangles_intersect(b, a));
    }

    #[test]
    fn separated_and_stacked_triangles() {
        let a = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let up = a.map(|p| [p[0], p[1], p[2] + 1e-9]);
        assert!(!triangles_intersect(a, up));
        let side = tri([2.0, 0.0, -1.0], [2.0, 0.0, 1.0], [3.0, 1.0, 0.0]);
        assert!(!triangles_intersect(a, side));
    }

    #[test]
    fn coplanar_overlap_and_gap() {
        let a = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let inner = tri([0.1, 0.1, 0.0], [0.2, 0.1, 0.0], [0.1, 0.2, 0.0]);
        let far = tri([2.0, 2.0, 0.0], [3.0, 2.0, 0.0], [2.0, 3.0, 0.0]);
        assert!(triangles_intersect(a, inner));
        assert!(!triangles_intersect(a, far));
    }

    #[test]
    fn degenerate_detection() {
        assert!(is_degenerate(tri([0.0; 3], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0])));
        assert!(!is_degenerate(tri([0.0; 3], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0])));
    }

    #[test]
    fn undeformed_ellipsoid_has_no_intersections() {
        let dims = GridDims::new(12, 16, 1).unwrap();
        let pf = ParameterFunctions::uniform(12, 1, 30.0, [0.8, 0.7, 1.0]);
        let grid = eval_model(&pf, dims, None).unwrap();
        let mesh = build_layer_mesh(&grid, 0).unwrap();
        let r = si_ratio(&mesh);
        assert_eq!(r.intersecting, 0);
        assert_eq!(r.ratio, 0.0);
        // 16 apex triangles, two per quad elsewhere.
        assert_eq!(r.triangles, 16 + 2 * 16 * 10);
    }

    /// Brute-force reference over all pairs, no pruning.
    fn brute(mesh: &QuadMesh) -> usize {
        let tris = triangulate(mesh);
        let geo: Vec<[Vec3; 3]> = tris.iter().map(|t| t.map(|v| mesh.vertices[v])).collect();
        let canon: Vec<[usize; 3]> = tris.iter().map(|t| t.map(|v| mesh.canonical_vertex(v))).collect();
        let mut hit = vec![false; tris.len()];
        for i in 0..tris.len() {
            for j in i + 1..tris.len() {
                if is_degenerate(geo[i]) || is_degenerate(geo[j]) {
                    continue;
                }
                if canon[i].iter().any(|v| canon[j].contains(v)) {
                    continue;
                }
                if triangles_intersect(geo[i], geo[j]) {
                    hit[i] = true;
                    hit[j] = true;
                }
            }
        }
        hit.iter().filter(|&&h| h).count()
    }

    #[test]
    fn folded_mesh_matches_brute_force() {
        let dims = GridDims::new(8, 10, 1).unwrap();
        let pf = ParameterFunctions::uniform(8, 1, 10.0, [1.0; 3]);
        let mut grid = eval_model(&pf, dims, None).unwrap();
        // Push one ring through the opposite wall.
        for j in 0..3 {
            let k = dims.index(4, j, 0);
            grid.points[k] = [-grid.points[k][0] * 1.5, -grid.points[k][1] * 1.5, grid.points[k][2]];
        }
        let mesh = build_layer_mesh(&grid, 0).unwrap();
        let r = si_ratio(&mesh);
        assert!(r.intersecting > 0);
        assert_eq!(r.intersecting, brute(&mesh));
    }

    #[test]
    fn one_crossing_pair_among_a_hundred() {
        // Two unused pole vertices, a flat strip of 49 quads along x and one
        // quad whose first triangle pierces the strip.
        let mut vertices = vec![[0.0, 0.0, 50.0], [0.0, 0.0, 50.0]];
        for i in 0..50 {
            vertices.push([i as f64 * 10.0, 0.0, 0.0]);
            vertices.push([i as f64 * 10.0, 1.0, 0.0]);
        }
        let mut faces: Vec<[usize; 4]> = (0..49)
            .map(|i| [2 * i + 4, 2 * i + 2, 2 * i + 3, 2 * i + 5])
            .collect();
        let base = vertices.len();
        vertices.extend([[102.0, 0.2, -1.0], [102.2, 0.2, 1.0], [102.4, 0.2, -1.0], [102.2, 0.2, -3.0]]);
        faces.push([base, base + 1, base + 2, base + 3]);
        let mesh = QuadMesh {
            vertices,
            faces,
            layer: 0,
            n_u: 52,
            n_v: 2,
        };
        let r = si_ratio(&mesh);
        assert_eq!(r.triangles, 100);
        assert_eq!(r.intersecting, 2);
        assert_eq!(r.ratio, 0.02);
        assert_eq!(brute(&mesh), 2);
    }
}
