//! Quantitative stand-ins for visual quality control of a simulated cycle.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::MaterialGrid;
use crate::sequence::MotionSequence;
use crate::vec3::{self, Vec3};

pub const TWIST_NOTE: &str =
    "ES twist uses a configurable default profile, not measured normal-subject values";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QcRule {
    pub name: &'static str,
    pub passed: bool,
    pub values: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QcReport {
    pub subject_id: String,
    pub note: &'static str,
    pub rules: Vec<QcRule>,
}

impl QcReport {
    pub fn passed(&self) -> bool {
        self.rules.iter().all(|r| r.passed)
    }

    pub fn rule(&self, name: &str) -> Option<&QcRule> {
        self.rules.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for QcReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# subject {}", self.subject_id)?;
        writeln!(f, "# note: {}", self.note)?;
        for r in &self.rules {
            write!(f, "{} {}", r.name, if r.passed { "pass" } else { "fail" })?;
            for (k, v) in &r.values {
                write!(f, " {k}={v:.6}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn ring(grid: &MaterialGrid, i: usize) -> Vec<(usize, Vec3)> {
    let d = grid.dims;
    (0..d.n_v)
        .flat_map(|j| (0..d.n_w).map(move |w| d.index(i, j, w)))
        .map(|idx| (idx, grid.points[idx]))
        .collect()
}

fn mean_displacement(a: &MaterialGrid, b: &MaterialGrid, i: usize) -> f64 {
    let r = ring(a, i);
    r.iter().map(|&(idx, p)| vec3::dist(p, b.points[idx])).sum::<f64>() / r.len() as f64
}

/// Rotation about the z axis of the `(i, w)` ring between two frames,
/// measured about each frame's ring centroid.
fn ring_rotation(a: &MaterialGrid, b: &MaterialGrid, i: usize, w: usize) -> f64 {
    let d = a.dims;
    let pa: Vec<Vec3> = (0..d.n_v).map(|j| a.at(i, j, w)).collect();
    let pb: Vec<Vec3> = (0..d.n_v).map(|j| b.at(i, j, w)).collect();
    let (ca, cb) = (vec3::centroid(&pa), vec3::centroid(&pb));
    let (mut cross, mut dot) = (0.0, 0.0);
    for (p, q) in pa.iter().zip(&pb) {
        let (x0, y0) = (p[0] - ca[0], p[1] - ca[1]);
        let (x1, y1) = (q[0] - cb[0], q[1] - cb[1]);
        cross += x0 * y1 - y0 * x1;
        dot += x0 * x1 + y0 * y1;
    }
    cross.atan2(dot)
}

/// u-index ranges of the apical, middle and basal thirds.
fn thirds(n_u: usize) -> [std::ops::Range<usize>; 3] {
    let a = n_u / 3;
    let b = 2 * n_u / 3;
    [0..a.max(1), a.max(1)..b.max(2), b.max(2)..n_u]
}

/// R1 apex nearly immobile, R2 differential torsion, R4 longitudinal
/// displacement decreasing from base to apex.
pub fn quality_check(seq: &MotionSequence) -> Result<QcReport> {
    if seq.len() < 2 {
        return Err(Error::Data(format!("quality check needs 2+ frames, got {}", seq.len())));
    }
    let d = seq.dims();
    if d.n_u < 4 {
        return Err(Error::Dimension(format!("quality check needs n_u >= 4, got {}", d.n_u)));
    }
    let ed = &seq.frames[0];
    let es = &seq.frames[seq.es_index];
    let mut rules = Vec::new();

    let (mut apex, mut base) = (0.0f64, 0.0f64);
    for f in &seq.frames[1..] {
        apex = apex.max(mean_displacement(ed, f, 0));
        base = base.max(mean_displacement(ed, f, d.n_u - 1));
    }
    rules.push(QcRule {
        name: "R1",
        passed: apex <= 0.1 * base,
        values: vec![("apex_mm".into(), apex), ("base_mm".into(), base)],
    });

    let [apical, _, basal] = thirds(d.n_u);
    let mean_rot = |range: std::ops::Range<usize>| {
        let rows: Vec<usize> = range.filter(|&i| i > 0).collect();
        let mut s = 0.0;
        for &i in &rows {
            for w in 0..d.n_w {
                s += ring_rotation(ed, es, i, w);
            }
        }
        s / (rows.len() * d.n_w).max(1) as f64
    };
    let (rot_apex, rot_base) = (mean_rot(apical.clone()), mean_rot(basal.clone()));
    rules.push(QcRule {
        name: "R2",
        passed: (rot_base - rot_apex).abs() >= 0.02,
        values: vec![("apex_rad".into(), rot_apex), ("base_rad".into(), rot_base)],
    });

    let dz = |range: std::ops::Range<usize>| {
        let mut s = 0.0;
        let mut n = 0;
        for i in range {
            for (idx, p) in ring(ed, i) {
                s += (es.points[idx][2] - p[2]).abs();
                n += 1;
            }
        }
        s / n.max(1) as f64
    };
    let [a, m, b] = thirds(d.n_u).map(dz);
    rules.push(QcRule {
        name: "R4",
        passed: b >= m && m >= a,
        values: vec![("base_mm".into(), b), ("mid_mm".into(), m), ("apex_mm".into(), a)],
    });

    Ok(QcReport {
        subject_id: seq.subject_id.clone(),
        note: TWIST_NOTE,
        rules,
    })
}
