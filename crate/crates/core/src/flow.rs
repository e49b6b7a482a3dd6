//! Diffeomorphic point flows: points are carried along a smooth velocity
//! field from pseudo-time `h = 0` to `h = 1` with fixed-step classical RK4,
//! and the displacement `q_d = D(M, 1) - D(M, 0)` is the local deformation.

use crate::error::{Error, Result};
use crate::geometry::GridDims;
use crate::vec3::{self, Vec3};

pub const DEFAULT_STEPS: usize = 8;

/// A state space the RK4 integrator can step through.
///
/// The integrator keeps a running sum `A` of the per-step slope averages
/// `((k1 + k4) + 2 (k2 + k3)) / 6` and places the state at
/// `x0 + A · span / steps`, so constant fields are integrated exactly.
pub trait OdeSystem {
    type State: Clone;

    /// Velocity at `x` and pseudo-time `h`.
    fn velocity(&mut self, x: &Self::State, h: f64, step: usize) -> Result<Self::State>;

    /// `x + a · k`.
    fn shift(&mut self, x: &Self::State, a: f64, k: &Self::State) -> Self::State;

    /// `acc + ((k1 + k4) + 2 (k2 + k3)) / 6`; `acc` is absent on the first step.
    fn accumulate(&mut self, acc: Option<&Self::State>, k: [&Self::State; 4]) -> Self::State;

    /// `x0 + acc · span / steps`.
    fn advance(&mut self, x0: &Self::State, acc: &Self::State, span: f64, steps: usize)
        -> Self::State;
}

/// Classical fourth-order Runge–Kutta from `h_start` to `h_end` in `steps`
/// equal steps (`h_end < h_start` integrates backwards). Returns the final
/// state and the accumulated slope sum.
pub fn rk4<S: OdeSystem>(
    sys: &mut S,
    x0: &S::State,
    h_start: f64,
    h_end: f64,
    steps: usize,
) -> Result<(S::State, S::State)> {
    if steps == 0 {
        return Err(Error::Domain("RK4 needs at least one step".into()));
    }
    let span = h_end - h_start;
    let dt = span / steps as f64;
    let mut acc: Option<S::State> = None;
    let mut x = x0.clone();
    for s in 0..steps {
        let h = h_start + s as f64 * dt;
        let k1 = sys.velocity(&x, h, s)?;
        let x2 = sys.shift(&x, 0.5 * dt, &k1);
        let k2 = sys.velocity(&x2, h + 0.5 * dt, s)?;
        let x3 = sys.shift(&x, 0.5 * dt, &k2);
        let k3 = sys.velocity(&x3, h + 0.5 * dt, s)?;
        let x4 = sys.shift(&x, dt, &k3);
        let k4 = sys.velocity(&x4, h + dt, s)?;
        let a = sys.accumulate(acc.as_ref(), [&k1, &k2, &k3, &k4]);
        x = sys.advance(x0, &a, span, steps);
        acc = Some(a);
    }
    Ok((x, acc.expect("at least one step")))
}

/// Per-point latent codes, `N x C_z` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Latent {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// A velocity field over point sets. Implementations must be side-effect
/// free: the same arguments always produce the same velocities.
pub trait VelocityField {
    fn velocity(&self, points: &[Vec3], h: f64, z: Option<&Latent>) -> Vec<Vec3>;
}

impl<F> VelocityField for F
where
    F: Fn(&[Vec3], f64, Option<&Latent>) -> Vec<Vec3>,
{
    fn velocity(&self, points: &[Vec3], h: f64, z: Option<&Latent>) -> Vec<Vec3> {
        self(points, h, z)
    }
}

/// Result of carrying points along a flow.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowResult {
    pub displaced: Vec<Vec3>,
    pub displacement: Vec<Vec3>,
    pub steps: usize,
}

struct PointSystem<'a, F: ?Sized> {
    field: &'a F,
    z: Option<&'a Latent>,
    n: usize,
}

impl<F: VelocityField + ?Sized> OdeSystem for PointSystem<'_, F> {
    type State = Vec<Vec3>;

    fn velocity(&mut self, x: &Vec<Vec3>, h: f64, step: usize) -> Result<Vec<Vec3>> {
        let v = self.field.velocity(x, h, self.z);
        if v.len() != self.n {
            return Err(Error::Dimension(format!(
                "velocity field returned {} rows for {} points",
                v.len(),
                self.n
            )));
        }
        if let Some(bad) = v.iter().position(|p| !vec3::is_finite(*p)) {
            return Err(Error::Numerical(format!(
                "non-finite velocity at point {bad} in integration step {step} (h = {h})"
            )));
        }
        Ok(v)
    }

    fn shift(&mut self, x: &Vec<Vec3>, a: f64, k: &Vec<Vec3>) -> Vec<Vec3> {
        x.iter().zip(k).map(|(&p, &v)| vec3::add(p, vec3::scale(v, a))).collect()
    }

    fn accumulate(&mut self, acc: Option<&Vec<Vec3>>, k: [&Vec<Vec3>; 4]) -> Vec<Vec3> {
        (0..self.n)
            .map(|i| {
                let mut out = acc.map_or([0.0; 3], |a| a[i]);
                for c in 0..3 {
                    out[c] += ((k[0][i][c] + k[3][i][c]) + 2.0 * (k[1][i][c] + k[2][i][c])) / 6.0;
                }
                out
            })
            .collect()
    }

    fn advance(&mut self, x0: &Vec<Vec3>, acc: &Vec<Vec3>, span: f64, steps: usize) -> Vec<Vec3> {
        x0.iter()
            .zip(acc)
            .map(|(&p, a)| vec3::add(p, displacement_of(*a, span, steps)))
            .collect()
    }
}

#[inline]
fn displacement_of(acc: Vec3, span: f64, steps: usize) -> Vec3 {
    let n = steps as f64;
    [acc[0] * span / n, acc[1] * span / n, acc[2] * span / n]
}

fn check_latent(points: &[Vec3], z: Option<&Latent>) -> Result<()> {
    if let Some(z) = z {
        if z.rows != points.len() || z.data.len() != z.rows * z.cols {
            return Err(Error::Dimension(format!(
                "latent code has {} rows for {} points",
                z.rows,
                points.len()
            )));
        }
    }
    Ok(())
}

/// Integrates `dx/dh = v(x, h; z)` over `[h_start, h_end]`.
pub fn integrate_span<F: VelocityField + ?Sized>(
    field: &F,
    points: &[Vec3],
    h_start: f64,
    h_end: f64,
    steps: usize,
    z: Option<&Latent>,
) -> Result<Vec<Vec3>> {
    check_latent(points, z)?;
    let mut sys = PointSystem {
        field,
        z,
        n: points.len(),
    };
    Ok(rk4(&mut sys, &points.to_vec(), h_start, h_end, steps)?.0)
}

/// Carries `points` from `h = 0` to `h = 1`.
pub fn integrate_flow<F: VelocityField + ?Sized>(
    field: &F,
    points: &[Vec3],
    steps: usize,
    z: Option<&Latent>,
) -> Result<FlowResult> {
    check_latent(points, z)?;
    let mut sys = PointSystem {
        field,
        z,
        n: points.len(),
    };
    let (displaced, acc) = rk4(&mut sys, &points.to_vec(), 0.0, 1.0, steps)?;
    let displacement = acc.iter().map(|&a| displacement_of(a, 1.0, steps)).collect();
    Ok(FlowResult {
        displaced,
        displacement,
        steps,
    })
}

/// Carries displaced points back from `h = 1` to `h = 0` with the same field.
pub fn invert_flow<F: VelocityField + ?Sized>(
    field: &F,
    displaced: &[Vec3],
    steps: usize,
    z: Option<&Latent>,
) -> Result<Vec<Vec3>> {
    integrate_span(field, displaced, 1.0, 0.0, steps, z)
}

/// Local-deformation regularizers `(L_d, L_s)`: the mean squared
/// displacement and the mean squared displacement difference over grid edges.
pub fn regularizers(q_d: &[Vec3], dims: GridDims) -> Result<(f64, f64)> {
    if q_d.len() != dims.len() {
        return Err(Error::Dimension(format!(
            "{} displacements for {} grid nodes",
            q_d.len(),
            dims.len()
        )));
    }
    let l_d = q_d.iter().map(|&d| vec3::norm_sq(d)).sum::<f64>() / q_d.len().max(1) as f64;
    let edges = dims.edges();
    let l_s = edges
        .iter()
        .map(|&(a, b)| vec3::dist_sq(q_d[a], q_d[b]))
        .sum::<f64>()
        / edges.len().max(1) as f64;
    Ok((l_d, l_s))
}
