//! Shared generators and independent oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use lexispray_core::chain_file::{ChainFile, FrameEntry, JointEntry, LimitsEntry, OriginEntry};
use lexispray_core::ptsc::PriorityLevel;
use lexispray_core::KinematicChain;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn random_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| uniform(rng, lo, hi))
}

pub fn random_mat(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| uniform(rng, -1.0, 1.0))
}

pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Random stack of `levels` least-squares levels on `n` variables with at
/// least `n` rows in total, so the lexicographic optimum is unique.
pub fn random_levels(r: &mut impl Rng, n: usize, levels: usize) -> Vec<PriorityLevel> {
    let mut out = Vec::new();
    let mut rows = 0;
    for k in 0..levels {
        let m = if k + 1 == levels {
            r.random_range(n.saturating_sub(rows).max(1)..=n)
        } else {
            r.random_range(1..=n)
        };
        rows += m;
        out.push(PriorityLevel::new(random_mat(r, m, n), random_vec(r, m, -3.0, 3.0)));
    }
    out
}

pub fn random_box(r: &mut impl Rng, n: usize) -> (DVector<f64>, DVector<f64>) {
    (random_vec(r, n, -1.0, -0.2), random_vec(r, n, 0.2, 1.0))
}

/// Raw parameters of a random chain, kept so the oracle can rebuild it.
#[derive(Debug, Clone)]
pub struct RawChain {
    pub file: ChainFile,
}

impl RawChain {
    pub fn chain(&self) -> KinematicChain {
        self.file.clone().into_chain().unwrap()
    }

    pub fn frame_names(&self) -> Vec<String> {
        self.file.frames.keys().cloned().collect()
    }
}

/// Random revolute chain with a frame on the last joint (`tool`) and one on a
/// random intermediate joint (`mid`).
pub fn random_chain(rng: &mut impl Rng, dof: usize) -> RawChain {
    let rpy = |rng: &mut dyn rand::RngCore| {
        let mut r = [0.0; 3];
        for v in &mut r {
            *v = rng.random_range(-3.0..3.0);
        }
        r
    };
    let xyz = |rng: &mut dyn rand::RngCore| {
        let mut r = [0.0; 3];
        for v in &mut r {
            *v = rng.random_range(-0.4..0.4);
        }
        r
    };
    let joints = (0..dof)
        .map(|_| {
            let a = random_unit(rng);
            JointEntry {
                axis: [a.x, a.y, a.z],
                origin: OriginEntry {
                    xyz: xyz(rng),
                    rpy: rpy(rng),
                },
                limits: LimitsEntry::default(),
            }
        })
        .collect();
    let mut frames = BTreeMap::new();
    frames.insert(
        "tool".to_string(),
        FrameEntry {
            parent_joint: dof - 1,
            xyz: xyz(rng),
            rpy: rpy(rng),
        },
    );
    frames.insert(
        "mid".to_string(),
        FrameEntry {
            parent_joint: rng.random_range(0..dof),
            xyz: xyz(rng),
            rpy: rpy(rng),
        },
    );
    RawChain {
        file: ChainFile { joints, frames },
    }
}

// ---- homogeneous-matrix forward kinematics oracle ----

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rodrigues' formula.
fn rot_axis(axis: Vector3<f64>, a: f64) -> Matrix3<f64> {
    let k = axis.normalize();
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * a.sin() + kx * kx * (1.0 - a.cos())
}

fn homogeneous(r: Matrix3<f64>, t: [f64; 3]) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m[(0, 3)] = t[0];
    m[(1, 3)] = t[1];
    m[(2, 3)] = t[2];
    m
}

fn rpy_matrix(rpy: [f64; 3]) -> Matrix3<f64> {
    rot_z(rpy[2]) * rot_y(rpy[1]) * rot_x(rpy[0])
}

/// 4×4 pose of `frame` built as a plain product of homogeneous matrices.
pub fn oracle_fk(raw: &RawChain, q: &DVector<f64>, frame: &str) -> Matrix4<f64> {
    let f = &raw.file.frames[frame];
    let mut t = Matrix4::<f64>::identity();
    for (i, j) in raw.file.joints.iter().take(f.parent_joint + 1).enumerate() {
        t *= homogeneous(rpy_matrix(j.origin.rpy), j.origin.xyz);
        t *= homogeneous(rot_axis(Vector3::from(j.axis), q[i]), [0.0; 3]);
    }
    t * homogeneous(rpy_matrix(f.rpy), f.xyz)
}

// ---- QP oracles ----

/// Projected gradient for `min ½xᵀHx + fᵀx, lb ≤ x ≤ ub` with strictly convex `H`.
pub fn projected_gradient(h: &DMatrix<f64>, f: &DVector<f64>, lb: &DVector<f64>, ub: &DVector<f64>) -> DVector<f64> {
    let lmax = h.clone().symmetric_eigenvalues().max();
    let step = 1.0 / lmax;
    let mut x = DVector::<f64>::zeros(f.len()).zip_zip_map(lb, ub, |v: f64, l, u| v.clamp(l, u));
    for _ in 0..2_000_000 {
        let g = h * &x + f;
        let next = (&x - g * step).zip_zip_map(lb, ub, |v, l, u| v.clamp(l, u));
        let delta = (&next - &x).amax();
        x = next;
        if delta < 1e-15 {
            break;
        }
    }
    x
}

/// Enumerates every active subset of `A x ≥ b` for a strictly convex QP and
/// keeps the feasible KKT point with non-negative multipliers.
pub fn enumerate_active_sets(h: &DMatrix<f64>, f: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = f.len();
    let m = b.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let act: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = act.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&-f);
        for (r, &i) in act.iter().enumerate() {
            for c in 0..n {
                kkt[(n + r, c)] = a[(i, c)];
                kkt[(c, n + r)] = -a[(i, c)];
            }
            rhs[n + r] = b[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, n).into_owned();
        let lambda = sol.rows(n, k);
        let feasible = (a * &x - b).iter().all(|&s| s >= -1e-9);
        if !feasible || lambda.iter().any(|&l| l < -1e-9) {
            continue;
        }
        let obj = 0.5 * x.dot(&(h * &x)) + f.dot(&x);
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, x));
        }
    }
    best.map(|(_, x)| x)
}

/// `min Σ wₖ‖bₖ − Jₖx‖²` subject to box bounds, by enumerating which bound
/// (if any) each variable sits at and solving the scaled stacked least-squares
/// system for the free variables.
pub fn weighted_sum_box_lsq(
    levels: &[(DMatrix<f64>, DVector<f64>)],
    weights: &[f64],
    lb: &DVector<f64>,
    ub: &DVector<f64>,
) -> DVector<f64> {
    let n = lb.len();
    let rows: usize = levels.iter().map(|(j, _)| j.nrows()).sum();
    let mut m = DMatrix::zeros(rows, n);
    let mut c = DVector::zeros(rows);
    let mut r = 0;
    for ((j, b), w) in levels.iter().zip(weights) {
        let s = w.sqrt();
        m.rows_mut(r, j.nrows()).copy_from(&(j * s));
        c.rows_mut(r, j.nrows()).copy_from(&(b * s));
        r += j.nrows();
    }
    let objective = |x: &DVector<f64>| (&c - &m * x).norm_squared();

    let mut best: Option<(f64, DVector<f64>)> = None;
    let patterns = 3usize.pow(n as u32);
    'pattern: for p in 0..patterns {
        let mut code = p;
        let mut x = DVector::zeros(n);
        let mut free = Vec::new();
        for i in 0..n {
            match code % 3 {
                0 => free.push(i),
                1 => x[i] = lb[i],
                _ => x[i] = ub[i],
            }
            code /= 3;
        }
        if free.is_empty() {
            if let Some((o, _)) = &best {
                if objective(&x) >= *o {
                    continue;
                }
            }
            best = Some((objective(&x), x));
            continue;
        }
        let mf = DMatrix::from_fn(rows, free.len(), |r, k| m[(r, free[k])]);
        let rhs = &c - &m * &x;
        let y = mf.svd(true, true).solve(&rhs, 1e-14).unwrap();
        for (k, &i) in free.iter().enumerate() {
            if y[k] < lb[i] - 1e-12 || y[k] > ub[i] + 1e-12 {
                continue 'pattern;
            }
            x[i] = y[k];
        }
        let o = objective(&x);
        if best.as_ref().is_none_or(|(bo, _)| o < *bo) {
            best = Some((o, x));
        }
    }
    best.expect("box is non-empty").1
}
