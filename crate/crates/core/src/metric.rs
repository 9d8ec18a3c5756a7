//! Kinematics-aware metric `R = w_kin (I_3 (x) I_N (x) L) + lambda I`.
//!
//! `L` is the unnormalized graph Laplacian of the skeleton. Because `R` is a
//! Kronecker product with identity factors, every operation reduces to the same
//! `J x J` matrix applied to each contiguous (axis, frame) block of the flat
//! motion vector. The Laplacian is eigendecomposed once at construction.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::motion::{flat_len, Skeleton};

/// Eigenvalues below this are treated as exact zeros of the Laplacian.
const ZERO_EIGENVALUE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct KinematicMetric {
    w_kin: f64,
    lambda: f64,
    frames: usize,
    joints: usize,
    edges: Vec<(usize, usize)>,
    laplacian: DMatrix<f64>,
    eigvecs: DMatrix<f64>,
    eigvals: Vec<f64>,
    /// `(w_kin L + lambda I)^-1`, row-major `J x J`.
    block_inverse: Vec<f64>,
    /// `diag(R^-1)` restricted to one block; depends only on the joint.
    inverse_diag: Vec<f64>,
}

/// Unnormalized graph Laplacian `D - A` of a skeleton.
pub fn laplacian(skeleton: &Skeleton) -> DMatrix<f64> {
    let j = skeleton.joint_count();
    let mut l = DMatrix::zeros(j, j);
    for &(a, b) in skeleton.edges() {
        l[(a, b)] -= 1.0;
        l[(b, a)] -= 1.0;
        l[(a, a)] += 1.0;
        l[(b, b)] += 1.0;
    }
    l
}

impl KinematicMetric {
    pub fn new(skeleton: &Skeleton, frames: usize, w_kin: f64, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParam(format!("ridge lambda must be > 0, got {lambda}")));
        }
        if !(w_kin >= 0.0) || !w_kin.is_finite() {
            return Err(Error::InvalidParam(format!("w_kin must be >= 0, got {w_kin}")));
        }
        if frames == 0 {
            return Err(Error::InvalidParam("metric needs at least one frame".into()));
        }
        let joints = skeleton.joint_count();
        let lap = laplacian(skeleton);
        let eig = SymmetricEigen::new(lap.clone());

        let mut order: Vec<usize> = (0..joints).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigvals: Vec<f64> = order
            .iter()
            .map(|&k| {
                let v = eig.eigenvalues[k];
                if v.abs() < ZERO_EIGENVALUE {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        let eigvecs = DMatrix::from_fn(joints, joints, |r, c| eig.eigenvectors[(r, order[c])]);

        let zero_modes = eigvals.iter().filter(|&&v| v == 0.0).count();
        if zero_modes != 1 {
            return Err(Error::Skeleton(format!(
                "Laplacian has {zero_modes} zero eigenvalues, expected 1 (connected skeleton)"
            )));
        }

        let inv_spectrum: Vec<f64> = eigvals.iter().map(|&e| 1.0 / (w_kin * e + lambda)).collect();
        let mut block_inverse = vec![0.0; joints * joints];
        for r in 0..joints {
            for c in 0..joints {
                block_inverse[r * joints + c] = (0..joints)
                    .map(|k| eigvecs[(r, k)] * inv_spectrum[k] * eigvecs[(c, k)])
                    .sum();
            }
        }
        let inverse_diag = (0..joints)
            .map(|r| (0..joints).map(|k| eigvecs[(r, k)].powi(2) * inv_spectrum[k]).sum())
            .collect();

        Ok(KinematicMetric {
            w_kin,
            lambda,
            frames,
            joints,
            edges: skeleton.edges().to_vec(),
            laplacian: lap,
            eigvecs,
            eigvals,
            block_inverse,
            inverse_diag,
        })
    }

    pub fn w_kin(&self) -> f64 {
        self.w_kin
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn dim(&self) -> usize {
        flat_len(self.frames, self.joints)
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigvals
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    /// Entry `(a, b)` of the per-block inverse `(w_kin L + lambda I)^-1`.
    #[inline]
    pub fn block_inverse_entry(&self, a: usize, b: usize) -> f64 {
        self.block_inverse[a * self.joints + b]
    }

    pub fn block_inverse(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.joints, self.joints, &self.block_inverse)
    }

    /// `[diag(R^-1)]_i` for any flat index `i` on joint `joint`.
    pub fn inverse_diag(&self, joint: usize) -> f64 {
        self.inverse_diag[joint]
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::dim("metric operand", self.dim(), v.len()));
        }
        Ok(())
    }

    /// `(w_kin L + lambda I) x` for one `J`-block, accumulated into `out`.
    fn block_apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = self.lambda * xi;
        }
        if self.w_kin != 0.0 {
            for &(a, b) in &self.edges {
                let diff = self.w_kin * (x[a] - x[b]);
                out[a] += diff;
                out[b] -= diff;
            }
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        let mut out = vec![0.0; v.len()];
        for (x, o) in v.chunks_exact(self.joints).zip(out.chunks_exact_mut(self.joints)) {
            self.block_apply(x, o);
        }
        Ok(out)
    }

    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        let mut out = vec![0.0; v.len()];
        self.solve_into(v, &mut out);
        Ok(out)
    }

    pub(crate) fn solve_into(&self, v: &[f64], out: &mut [f64]) {
        let j = self.joints;
        for (x, o) in v.chunks_exact(j).zip(out.chunks_exact_mut(j)) {
            if x.iter().all(|&e| e == 0.0) {
                o.fill(0.0);
                continue;
            }
            for (r, slot) in o.iter_mut().enumerate() {
                let row = &self.block_inverse[r * j..(r + 1) * j];
                *slot = row.iter().zip(x).map(|(a, b)| a * b).sum();
            }
        }
    }

    pub fn norm(&self, v: &[f64]) -> Result<f64> {
        let rv = self.apply(v)?;
        let q: f64 = v.iter().zip(&rv).map(|(a, b)| a * b).sum();
        Ok(q.max(0.0).sqrt())
    }

    /// Squared norm of a single pose-sized vector (`J` joints x 3 axes) under
    /// the per-frame restriction `I_3 (x) (w_kin L + lambda I)`.
    pub fn frame_norm_sq(&self, pose: &[[f64; 3]]) -> f64 {
        let mut buf = vec![0.0; self.joints];
        let mut out = vec![0.0; self.joints];
        let mut total = 0.0;
        for c in 0..3 {
            for (b, p) in buf.iter_mut().zip(pose) {
                *b = p[c];
            }
            self.block_apply(&buf, &mut out);
            total += buf.iter().zip(&out).map(|(a, b)| a * b).sum::<f64>();
        }
        total
    }

    /// Per-joint influence weights `q_j = 1 / ||column_j((w_kin L + lambda I)^-1)||_2`.
    pub fn joint_influence_weights(&self) -> Vec<f64> {
        let j = self.joints;
        (0..j)
            .map(|c| {
                let norm = (0..j)
                    .map(|r| self.block_inverse[r * j + c].powi(2))
                    .sum::<f64>()
                    .sqrt();
                1.0 / norm
            })
            .collect()
    }

    /// Dense `d x d` materialization. Only sensible for small motions.
    pub fn dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        let j = self.joints;
        let mut r = DMatrix::zeros(d, d);
        for block in 0..3 * self.frames {
            let o = block * j;
            for a in 0..j {
                for b in 0..j {
                    r[(o + a, o + b)] = self.w_kin * self.laplacian[(a, b)];
                }
                r[(o + a, o + a)] += self.lambda;
            }
        }
        r
    }
}
