//! Metric-weighted projection of a clean endpoint onto linear measurements.
//!
//! Solves `min_d  1/2 ||d||_R^2 + 1/2 ||y - A (x + d)||^2_{Sigma^-1}` in closed
//! form, `d = R^-1 A^T (A R^-1 A^T + Sigma)^-1 (y - A x)`. Hard rows
//! (`sigma^2 = 0`) enter `Sigma` as exact zeros and come out satisfied to
//! rounding error.
//!
//! `R^-1` is block diagonal over (axis, frame) blocks, so `S = A R^-1 A^T +
//! Sigma` splits into independent sub-systems: two rows interact only if they
//! touch a common block. Each connected group of rows gets its own Cholesky
//! factorization.
//!
//! [`map_oracle`] and [`ddnm_oracle`] are dense reference solvers used to
//! cross-check the structured path.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::metric::KinematicMetric;
use crate::operators::ConstraintSystem;

/// Relative pivot below which a sub-system is declared rank deficient.
const PIVOT_TOL: f64 = 1e-12;

/// Hard-row violation tolerated by [`objective_value`].
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Projection {
    pub x1_star: Vec<f64>,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Component {
    rows: Vec<usize>,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

/// A constraint system with `A R^-1 A^T + Sigma` assembled and factorized.
///
/// Build once and reuse when the system does not change between steps.
#[derive(Debug, Clone)]
pub struct PreparedSystem<'a> {
    system: &'a ConstraintSystem,
    metric: &'a KinematicMetric,
    components: Vec<Component>,
}

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

pub fn prepare<'a>(system: &'a ConstraintSystem, metric: &'a KinematicMetric) -> Result<PreparedSystem<'a>> {
    if system.dim() != metric.dim() {
        return Err(Error::dim("constraint system vs metric", metric.dim(), system.dim()));
    }
    let joints = metric.joints();
    let rows = system.op().sparse_rows();
    let m = rows.len();

    // rows sharing an (axis, frame) block are coupled through R^-1
    let mut sets = DisjointSet((0..m).collect());
    let mut owner: HashMap<usize, usize> = HashMap::new();
    for (r, row) in rows.iter().enumerate() {
        for &(col, _) in row {
            match owner.entry(col / joints) {
                std::collections::hash_map::Entry::Occupied(e) => sets.union(r, *e.get()),
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(r);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut group_of_root: HashMap<usize, usize> = HashMap::new();
    for r in 0..m {
        let root = sets.find(r);
        let g = *group_of_root.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(r);
    }

    let mut components = Vec::with_capacity(groups.len());
    for group in groups {
        let k = group.len();
        let mut by_block: HashMap<usize, Vec<(usize, usize, f64)>> = HashMap::new();
        for (local, &r) in group.iter().enumerate() {
            for &(col, coef) in &rows[r] {
                by_block
                    .entry(col / joints)
                    .or_default()
                    .push((local, col % joints, coef));
            }
        }
        let mut s = DMatrix::<f64>::zeros(k, k);
        for entries in by_block.values() {
            for &(a, ja, ca) in entries {
                for &(b, jb, cb) in entries {
                    s[(a, b)] += ca * cb * metric.block_inverse_entry(ja, jb);
                }
            }
        }
        for (local, &r) in group.iter().enumerate() {
            s[(local, local)] += system.sigma_sq()[r];
        }
        let factor = factorize(&s, &group, system)?;
        components.push(Component { rows: group, factor });
    }
    Ok(PreparedSystem {
        system,
        metric,
        components,
    })
}

fn factorize(
    s: &DMatrix<f64>,
    rows: &[usize],
    system: &ConstraintSystem,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = s.diagonal().amax();
    if let Some(chol) = nalgebra::Cholesky::new(s.clone()) {
        let min_pivot = chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d * d)
            .fold(f64::INFINITY, f64::min);
        if scale > 0.0 && min_pivot > PIVOT_TOL * scale {
            return Ok(chol);
        }
    }
    Err(diagnose(s, rows, system))
}

/// Eigen-analysis of a singular `S` block: reports the rows spanning its
/// near-null direction.
fn diagnose(s: &DMatrix<f64>, rows: &[usize], system: &ConstraintSystem) -> Error {
    let eig = SymmetricEigen::new(s.clone());
    let (k, &lowest) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty block");
    let v = eig.eigenvectors.column(k);
    let peak = v.amax();
    let mut involved: Vec<(usize, f64)> = v
        .iter()
        .enumerate()
        .filter(|(_, w)| w.abs() >= 0.1 * peak)
        .map(|(i, w)| (rows[i], *w))
        .collect();
    involved.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    let block = involved
        .first()
        .map(|&(r, _)| system.block_of(r).to_string())
        .unwrap_or_default();
    let listed: Vec<String> = involved
        .iter()
        .take(8)
        .map(|(r, w)| format!("row {r} ({}) weight {w:.3}", system.block_of(*r)))
        .collect();
    Error::RankDeficient {
        block,
        detail: format!(
            "smallest eigenvalue {lowest:e} of A R^-1 A^T + Sigma (scale {:e}); near-null direction spans {}",
            s.diagonal().amax(),
            listed.join(", ")
        ),
    }
}

impl PreparedSystem<'_> {
    pub fn system(&self) -> &ConstraintSystem {
        self.system
    }

    pub fn project(&self, x1_hat: &[f64]) -> Result<Projection> {
        let system = self.system;
        if x1_hat.len() != system.dim() {
            return Err(Error::dim("clean endpoint", system.dim(), x1_hat.len()));
        }
        if system.rows() == 0 {
            return Ok(Projection {
                x1_star: x1_hat.to_vec(),
                delta: vec![0.0; x1_hat.len()],
            });
        }
        let mut innovation = system.residual(x1_hat)?;
        innovation.iter_mut().for_each(|r| *r = -*r);

        let mut z = vec![0.0; system.rows()];
        for comp in &self.components {
            let rhs = DVector::from_iterator(comp.rows.len(), comp.rows.iter().map(|&r| innovation[r]));
            let sol = comp.factor.solve(&rhs);
            for (&r, v) in comp.rows.iter().zip(sol.iter()) {
                z[r] = *v;
            }
        }
        let back = system.op().adjoint(&z)?;
        let mut delta = vec![0.0; back.len()];
        self.metric.solve_into(&back, &mut delta);
        let x1_star = x1_hat.iter().zip(&delta).map(|(a, b)| a + b).collect();
        Ok(Projection { x1_star, delta })
    }
}

/// Closed-form corrected endpoint `x + R^-1 A^T (A R^-1 A^T + Sigma)^-1 (y - A x)`.
pub fn project_endpoint(x1_hat: &[f64], system: &ConstraintSystem, metric: &KinematicMetric) -> Result<Projection> {
    if x1_hat.len() != system.dim() {
        return Err(Error::dim("clean endpoint", system.dim(), x1_hat.len()));
    }
    prepare(system, metric)?.project(x1_hat)
}

/// Dense MAP solve `(R + A^T Sigma^-1 A) x = R x_hat + A^T Sigma^-1 y`.
/// Soft rows only.
pub fn map_oracle(x1_hat: &[f64], system: &ConstraintSystem, metric: &KinematicMetric) -> Result<Vec<f64>> {
    let d = system.dim();
    if x1_hat.len() != d || metric.dim() != d {
        return Err(Error::dim("clean endpoint", d, x1_hat.len()));
    }
    if system.sigma_sq().iter().any(|&s| s <= 0.0) {
        return Err(Error::InvalidParam(
            "MAP oracle needs strictly positive variances".into(),
        ));
    }
    let r = metric.dense();
    let a = system.op().materialize()?;
    let w = DMatrix::from_diagonal(&DVector::from_iterator(
        system.rows(),
        system.sigma_sq().iter().map(|s| 1.0 / s),
    ));
    let at_w = a.transpose() * &w;
    let normal = &r + &at_w * &a;
    let rhs = &r * DVector::from_column_slice(x1_hat) + &at_w * DVector::from_column_slice(system.y());
    let lu = normal.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular normal equations".into()))?;
    Ok(sol.iter().copied().collect())
}

/// Range/null-space update `A^+ y + (I - A^+ A) x_hat` with an SVD
/// pseudoinverse (singular values below `1e-10 * sigma_max` dropped).
pub fn ddnm_oracle(x1_hat: &[f64], system: &ConstraintSystem) -> Result<Vec<f64>> {
    let d = system.dim();
    if x1_hat.len() != d {
        return Err(Error::dim("clean endpoint", d, x1_hat.len()));
    }
    if system.rows() == 0 {
        return Ok(x1_hat.to_vec());
    }
    let a = system.op().materialize()?;
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.amax();
    let pinv = svd
        .pseudo_inverse(1e-10 * smax)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let x = DVector::from_column_slice(x1_hat);
    let y = DVector::from_column_slice(system.y());
    let out = &pinv * y + &x - &pinv * (&a * &x);
    Ok(out.iter().copied().collect())
}

/// `1/2 ||delta||_R^2 + 1/2 sum_soft (y - A(x_hat + delta))_i^2 / sigma_i^2`,
/// with hard rows treated as equality constraints.
pub fn objective_value(
    delta: &[f64],
    x1_hat: &[f64],
    system: &ConstraintSystem,
    metric: &KinematicMetric,
) -> Result<f64> {
    if delta.len() != x1_hat.len() {
        return Err(Error::dim("correction", x1_hat.len(), delta.len()));
    }
    let x: Vec<f64> = x1_hat.iter().zip(delta).map(|(a, b)| a + b).collect();
    let residual = system.residual(&x)?;
    let mut data = 0.0;
    for (row, (&r, &s)) in residual.iter().zip(system.sigma_sq()).enumerate() {
        if s == 0.0 {
            let violation = r.abs() / (1.0 + system.y()[row].abs());
            if violation > FEASIBILITY_TOL {
                return Err(Error::Infeasible { row, violation });
            }
        } else {
            data += r * r / s;
        }
    }
    let rn = metric.norm(delta)?;
    Ok(0.5 * rn * rn + 0.5 * data)
}
