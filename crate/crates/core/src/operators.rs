//! Structured linear observation operators and stacked constraint systems.
//!
//! Every operator acts on the flat motion vector (see [`crate::motion`]) and
//! exposes exact `apply`/`adjoint` pairs plus a sparse row view used by the
//! projector to assemble `A R^-1 A^T` without touching `d x d` matrices.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};
use crate::motion::{flat_len, VecIndex};

/// Default cap on `m * d` for [`LinOp::materialize`].
pub const MATERIALIZE_CAP: usize = 10_000_000;

/// Orthographic camera `s * P * R_cam` with `P` dropping the third axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    scale: f64,
    rotation: Matrix3<f64>,
}

impl Camera {
    pub fn new(scale: f64, rotation: Matrix3<f64>) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidParam(format!("camera scale must be > 0, got {scale}")));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if ortho > 1e-8 || (rotation.determinant() - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidParam(format!(
                "camera rotation is not in SO(3) (orthogonality error {ortho:e}, det {})",
                rotation.determinant()
            )));
        }
        Ok(Camera { scale, rotation })
    }

    /// Rotation `R_y(yaw) * R_x(pitch) * R_z(roll)`, angles in degrees.
    pub fn from_yaw_pitch_roll(yaw_deg: f64, pitch_deg: f64, roll_deg: f64, scale: f64) -> Result<Self> {
        let (yaw, pitch, roll) = (yaw_deg.to_radians(), pitch_deg.to_radians(), roll_deg.to_radians());
        let ry = Matrix3::new(yaw.cos(), 0.0, yaw.sin(), 0.0, 1.0, 0.0, -yaw.sin(), 0.0, yaw.cos());
        let rx = Matrix3::new(
            1.0,
            0.0,
            0.0,
            0.0,
            pitch.cos(),
            -pitch.sin(),
            0.0,
            pitch.sin(),
            pitch.cos(),
        );
        let rz = Matrix3::new(roll.cos(), -roll.sin(), 0.0, roll.sin(), roll.cos(), 0.0, 0.0, 0.0, 1.0);
        Camera::new(scale, ry * rx * rz)
    }

    pub fn identity() -> Self {
        Camera {
            scale: 1.0,
            rotation: Matrix3::identity(),
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    /// The two rows of `s * P * R_cam`.
    pub fn projection_rows(&self) -> [[f64; 3]; 2] {
        let r = &self.rotation;
        let s = self.scale;
        [
            [s * r[(0, 0)], s * r[(0, 1)], s * r[(0, 2)]],
            [s * r[(1, 0)], s * r[(1, 1)], s * r[(1, 2)]],
        ]
    }

    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        let rows = self.projection_rows();
        rows.map(|row| row[0] * p[0] + row[1] * p[1] + row[2] * p[2])
    }
}

/// A sparse row: `(flat column, coefficient)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub enum LinOp {
    /// Picks coordinates; rows ordered by (frame, joint, axis).
    CoordinateMask {
        dim: usize,
        indices: Vec<usize>,
    },
    /// Two rows of `s P R_cam` per selected (frame, joint), ordered by (frame, joint).
    OrthographicProject {
        frames: usize,
        joints: usize,
        rows: [[f64; 3]; 2],
        pairs: Vec<(usize, usize)>,
    },
    /// `x[frame_a] - x[frame_b]` for every joint and axis, ordered by (joint, axis).
    FrameDifference {
        frames: usize,
        joints: usize,
        frame_a: usize,
        frame_b: usize,
    },
    /// `x[n, joint_a] - x[n, joint_b]` per selected frame, ordered by (frame, axis).
    JointDifference {
        frames: usize,
        joints: usize,
        joint_a: usize,
        joint_b: usize,
        frame_list: Vec<usize>,
    },
    RowStack {
        dim: usize,
        parts: Vec<LinOp>,
    },
    /// Arbitrary `m x d` matrix, for general linear measurements and tests.
    Dense(DMatrix<f64>),
}

impl LinOp {
    pub fn in_dim(&self) -> usize {
        match self {
            LinOp::CoordinateMask { dim, .. } | LinOp::RowStack { dim, .. } => *dim,
            LinOp::OrthographicProject { frames, joints, .. }
            | LinOp::FrameDifference { frames, joints, .. }
            | LinOp::JointDifference { frames, joints, .. } => flat_len(*frames, *joints),
            LinOp::Dense(a) => a.ncols(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            LinOp::CoordinateMask { indices, .. } => indices.len(),
            LinOp::OrthographicProject { pairs, .. } => 2 * pairs.len(),
            LinOp::FrameDifference { joints, .. } => 3 * joints,
            LinOp::JointDifference { frame_list, .. } => 3 * frame_list.len(),
            LinOp::RowStack { parts, .. } => parts.iter().map(LinOp::out_dim).sum(),
            LinOp::Dense(a) => a.nrows(),
        }
    }

    /// Calls `f(row, column, coefficient)` for every structural nonzero.
    fn for_each_entry(&self, row_offset: usize, f: &mut impl FnMut(usize, usize, f64)) {
        match self {
            LinOp::CoordinateMask { indices, .. } => {
                for (r, &i) in indices.iter().enumerate() {
                    f(row_offset + r, i, 1.0);
                }
            }
            LinOp::OrthographicProject {
                frames,
                joints,
                rows,
                pairs,
            } => {
                for (p, &(n, j)) in pairs.iter().enumerate() {
                    for (k, row) in rows.iter().enumerate() {
                        for (c, &coef) in row.iter().enumerate() {
                            if coef != 0.0 {
                                f(
                                    row_offset + 2 * p + k,
                                    VecIndex::new(c, n, j).flat(*frames, *joints),
                                    coef,
                                );
                            }
                        }
                    }
                }
            }
            LinOp::FrameDifference {
                frames,
                joints,
                frame_a,
                frame_b,
            } => {
                for j in 0..*joints {
                    for c in 0..3 {
                        let r = row_offset + 3 * j + c;
                        f(r, VecIndex::new(c, *frame_a, j).flat(*frames, *joints), 1.0);
                        f(r, VecIndex::new(c, *frame_b, j).flat(*frames, *joints), -1.0);
                    }
                }
            }
            LinOp::JointDifference {
                frames,
                joints,
                joint_a,
                joint_b,
                frame_list,
            } => {
                for (k, &n) in frame_list.iter().enumerate() {
                    for c in 0..3 {
                        let r = row_offset + 3 * k + c;
                        f(r, VecIndex::new(c, n, *joint_a).flat(*frames, *joints), 1.0);
                        f(r, VecIndex::new(c, n, *joint_b).flat(*frames, *joints), -1.0);
                    }
                }
            }
            LinOp::RowStack { parts, .. } => {
                let mut offset = row_offset;
                for part in parts {
                    part.for_each_entry(offset, f);
                    offset += part.out_dim();
                }
            }
            LinOp::Dense(a) => {
                for r in 0..a.nrows() {
                    for c in 0..a.ncols() {
                        let coef = a[(r, c)];
                        if coef != 0.0 {
                            f(row_offset + r, c, coef);
                        }
                    }
                }
            }
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.in_dim() {
            return Err(Error::dim("operator input", self.in_dim(), v.len()));
        }
        let mut out = vec![0.0; self.out_dim()];
        self.for_each_entry(0, &mut |r, c, a| out[r] += a * v[c]);
        Ok(out)
    }

    pub fn adjoint(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.out_dim() {
            return Err(Error::dim("adjoint input", self.out_dim(), u.len()));
        }
        let mut out = vec![0.0; self.in_dim()];
        self.for_each_entry(0, &mut |r, c, a| out[c] += a * u[r]);
        Ok(out)
    }

    pub fn sparse_rows(&self) -> Vec<SparseRow> {
        let mut rows = vec![Vec::new(); self.out_dim()];
        self.for_each_entry(0, &mut |r, c, a| rows[r].push((c, a)));
        rows
    }

    /// Dense `m x d` matrix built column by column from `apply`.
    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        self.materialize_with_cap(MATERIALIZE_CAP)
    }

    pub fn materialize_with_cap(&self, cap: usize) -> Result<DMatrix<f64>> {
        let (m, d) = (self.out_dim(), self.in_dim());
        if m.saturating_mul(d) > cap {
            return Err(Error::InvalidParam(format!(
                "materializing a {m} x {d} operator exceeds the cap of {cap} entries"
            )));
        }
        let mut dense = DMatrix::zeros(m, d);
        let mut e = vec![0.0; d];
        for k in 0..d {
            e[k] = 1.0;
            let col = self.apply(&e)?;
            dense.set_column(k, &nalgebra::DVector::from_vec(col));
            e[k] = 0.0;
        }
        Ok(dense)
    }
}

pub fn mask_op(selected: &[VecIndex], frames: usize, joints: usize) -> Result<LinOp> {
    let mut sorted = BTreeSet::new();
    for idx in selected {
        idx.check(frames, joints)?;
        if !sorted.insert((idx.frame, idx.joint, idx.axis)) {
            return Err(Error::InvalidParam(format!("duplicate mask index {idx:?}")));
        }
    }
    let indices = sorted
        .into_iter()
        .map(|(n, j, c)| VecIndex::new(c, n, j).flat(frames, joints))
        .collect();
    Ok(LinOp::CoordinateMask {
        dim: flat_len(frames, joints),
        indices,
    })
}

pub fn orthographic_op(camera: &Camera, pairs: &[(usize, usize)], frames: usize, joints: usize) -> Result<LinOp> {
    let mut sorted = BTreeSet::new();
    for &(n, j) in pairs {
        if n >= frames || j >= joints {
            return Err(Error::OutOfRange(format!(
                "(frame {n}, joint {j}) outside {frames} x {joints}"
            )));
        }
        if !sorted.insert((n, j)) {
            return Err(Error::InvalidParam(format!("duplicate projection pair ({n}, {j})")));
        }
    }
    Ok(LinOp::OrthographicProject {
        frames,
        joints,
        rows: camera.projection_rows(),
        pairs: sorted.into_iter().collect(),
    })
}

pub fn loop_closure_op(frames: usize, joints: usize) -> Result<LinOp> {
    if frames < 2 {
        return Err(Error::InvalidParam(format!("loop closure needs N >= 2, got {frames}")));
    }
    Ok(LinOp::FrameDifference {
        frames,
        joints,
        frame_a: 0,
        frame_b: frames - 1,
    })
}

pub fn relative_offset_op(
    joint_a: usize,
    joint_b: usize,
    frame_list: &[usize],
    frames: usize,
    joints: usize,
) -> Result<LinOp> {
    if joint_a == joint_b {
        return Err(Error::InvalidParam(format!(
            "relative offset needs two distinct joints, got {joint_a} twice"
        )));
    }
    if joint_a >= joints || joint_b >= joints {
        return Err(Error::OutOfRange(format!(
            "joints ({joint_a}, {joint_b}) outside [0, {joints})"
        )));
    }
    let set: BTreeSet<usize> = frame_list.iter().copied().collect();
    if let Some(&n) = set.iter().next_back() {
        if n >= frames {
            return Err(Error::OutOfRange(format!("frame {n} outside [0, {frames})")));
        }
    }
    Ok(LinOp::JointDifference {
        frames,
        joints,
        joint_a,
        joint_b,
        frame_list: set.into_iter().collect(),
    })
}

/// A labelled range of rows inside a [`ConstraintSystem`].
#[derive(Debug, Clone, PartialEq)]
pub struct RowBlock {
    pub label: String,
    pub start: usize,
    pub len: usize,
}

/// Measurement model `y = A x + e`, `e ~ N(0, diag(sigma_sq))`.
/// Rows with `sigma_sq == 0` are hard equalities.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    op: LinOp,
    y: Vec<f64>,
    sigma_sq: Vec<f64>,
    blocks: Vec<RowBlock>,
}

impl ConstraintSystem {
    pub fn new(op: LinOp, y: Vec<f64>, sigma_sq: Vec<f64>) -> Result<Self> {
        Self::labelled("constraints", op, y, sigma_sq)
    }

    pub fn labelled(label: impl Into<String>, op: LinOp, y: Vec<f64>, sigma_sq: Vec<f64>) -> Result<Self> {
        let m = op.out_dim();
        if y.len() != m {
            return Err(Error::dim("constraint targets", m, y.len()));
        }
        if sigma_sq.len() != m {
            return Err(Error::dim("constraint variances", m, sigma_sq.len()));
        }
        if let Some(bad) = sigma_sq.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "variance must be finite and >= 0, got {bad}"
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("constraint targets must be finite".into()));
        }
        Ok(ConstraintSystem {
            op,
            y,
            sigma_sq,
            blocks: vec![RowBlock {
                label: label.into(),
                start: 0,
                len: m,
            }],
        })
    }

    /// All-hard system.
    pub fn hard(label: impl Into<String>, op: LinOp, y: Vec<f64>) -> Result<Self> {
        let m = op.out_dim();
        Self::labelled(label, op, y, vec![0.0; m])
    }

    /// The system with no rows.
    pub fn empty(dim: usize) -> Self {
        ConstraintSystem {
            op: LinOp::RowStack { dim, parts: vec![] },
            y: vec![],
            sigma_sq: vec![],
            blocks: vec![],
        }
    }

    pub fn op(&self) -> &LinOp {
        &self.op
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn sigma_sq(&self) -> &[f64] {
        &self.sigma_sq
    }

    pub fn blocks(&self) -> &[RowBlock] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.op.in_dim()
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn is_hard(&self, row: usize) -> bool {
        self.sigma_sq[row] == 0.0
    }

    pub fn hard_rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.rows()).filter(|&r| self.is_hard(r))
    }

    /// Label of the block containing `row`.
    pub fn block_of(&self, row: usize) -> &str {
        self.blocks
            .iter()
            .find(|b| row >= b.start && row < b.start + b.len)
            .map(|b| b.label.as_str())
            .unwrap_or("?")
    }

    /// `A x - y`.
    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut ax = self.op.apply(x)?;
        for (a, y) in ax.iter_mut().zip(&self.y) {
            *a -= y;
        }
        Ok(ax)
    }

    /// `max_row |(A x - y)_row| / (1 + |y_row|)` over hard rows (0 if none).
    pub fn hard_residual(&self, x: &[f64]) -> Result<f64> {
        let r = self.residual(x)?;
        Ok(self
            .hard_rows()
            .map(|i| r[i].abs() / (1.0 + self.y[i].abs()))
            .fold(0.0, f64::max))
    }

    /// Concatenates rows, targets and variances in order.
    pub fn stack(systems: Vec<ConstraintSystem>) -> Result<ConstraintSystem> {
        let Some(first) = systems.first() else {
            return Err(Error::InvalidParam("cannot stack an empty list of systems".into()));
        };
        let dim = first.dim();
        if systems.len() == 1 {
            return Ok(systems.into_iter().next().unwrap());
        }
        let mut parts = Vec::with_capacity(systems.len());
        let mut y = Vec::new();
        let mut sigma_sq = Vec::new();
        let mut blocks = Vec::new();
        for s in systems {
            if s.dim() != dim {
                return Err(Error::dim("stacked system input", dim, s.dim()));
            }
            let offset = y.len();
            blocks.extend(s.blocks.into_iter().map(|b| RowBlock {
                start: b.start + offset,
                ..b
            }));
            y.extend(s.y);
            sigma_sq.extend(s.sigma_sq);
            parts.push(s.op);
        }
        Ok(ConstraintSystem {
            op: LinOp::RowStack { dim, parts },
            y,
            sigma_sq,
            blocks,
        })
    }
}
