//! Dynamical systems and quadratic Lyapunov functions.
//!
//! A system is `x' = f(x)` with `f` either linear (`A·x`) or polynomial
//! (sparse monomial lists per coordinate). A Lyapunov function is a quadratic
//! form `ψ(x) = xᵀPx`; its derivative along the flow is
//! `ψ̇(x) = Σⱼ (∂ψ/∂xⱼ)(x)·fʲ(x)`, which for linear fields reduces to
//! `xᵀ(AᵀP + PA)x`. Forms may be embedded: nonzero only on a coordinate
//! subspace, nonsingular there (the blockwise construction for systems whose
//! stable and unstable subspaces are treated separately).

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// One polynomial term: `coeff * x1^e1 * ... * xn^en`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub exps: Vec<u32>,
}

/// Right-hand side of the autonomous system `x' = f(x)`.
#[derive(Debug, Clone)]
pub enum VectorField {
    Linear { a: DMatrix<f64> },
    Polynomial { dim: usize, coords: Vec<Vec<Monomial>> },
}

impl VectorField {
    pub fn linear(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        Ok(VectorField::Linear { a })
    }

    pub fn polynomial(dim: usize, coords: Vec<Vec<Monomial>>) -> Result<Self> {
        if coords.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: coords.len(),
            });
        }
        for terms in &coords {
            for t in terms {
                if t.exps.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: t.exps.len(),
                    });
                }
            }
        }
        Ok(VectorField::Polynomial { dim, coords })
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorField::Linear { a } => a.nrows(),
            VectorField::Polynomial { dim, .. } => *dim,
        }
    }

    /// System matrix, if the field is linear.
    pub fn linear_part(&self) -> Option<&DMatrix<f64>> {
        match self {
            VectorField::Linear { a } => Some(a),
            VectorField::Polynomial { .. } => None,
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        match self {
            VectorField::Linear { a } => Ok(a * x),
            VectorField::Polynomial { dim, coords } => {
                let mut out = DVector::zeros(*dim);
                for (j, terms) in coords.iter().enumerate() {
                    let mut acc = 0.0;
                    for t in terms {
                        let mut v = t.coeff;
                        for (xi, &e) in x.iter().zip(t.exps.iter()) {
                            v *= xi.powi(e as i32);
                        }
                        acc += v;
                    }
                    out[j] = acc;
                }
                Ok(out)
            }
        }
    }
}

/// Quadratic form `ψ(x) = xᵀPx`, possibly embedded on a coordinate subspace.
///
/// `P` is kept exactly symmetric (the upper triangle is mirrored at
/// construction). `support` lists the coordinates the form acts on;
/// nonsingularity is required only on that subspace.
#[derive(Debug, Clone)]
pub struct QuadraticLyapunov {
    p: DMatrix<f64>,
    support: Vec<usize>,
    id: usize,
}

const SINGULARITY_TOL: f64 = 1e-12;

impl QuadraticLyapunov {
    /// Full-space form; `p` must be nonsingular.
    pub fn new(id: usize, p: DMatrix<f64>) -> Result<Self> {
        let n = p.nrows();
        Self::embedded(id, p, (0..n).collect(), n)
    }

    /// Form acting on `support` coordinates, embedded into `dim` dimensions
    /// with zero blocks. `p_sub` is `support.len() × support.len()` or already
    /// full-sized.
    pub fn embedded(id: usize, p_sub: DMatrix<f64>, support: Vec<usize>, dim: usize) -> Result<Self> {
        let s = support.len();
        if p_sub.nrows() != p_sub.ncols() {
            return Err(Error::DimensionMismatch {
                expected: p_sub.nrows(),
                got: p_sub.ncols(),
            });
        }
        let p_sub = if p_sub.nrows() == dim && s != dim {
            // Caller passed a full-size matrix; extract the support block.
            DMatrix::from_fn(s, s, |i, j| p_sub[(support[i], support[j])])
        } else if p_sub.nrows() == s {
            p_sub
        } else {
            return Err(Error::DimensionMismatch {
                expected: s,
                got: p_sub.nrows(),
            });
        };
        // Mirror the upper triangle so P == Pᵀ holds bitwise.
        let mut block = p_sub;
        for i in 0..s {
            for j in 0..i {
                block[(i, j)] = block[(j, i)];
            }
        }
        let scale = block.amax().max(1.0);
        if block.clone().lu().determinant().abs() <= SINGULARITY_TOL * scale.powi(s as i32) {
            return Err(Error::SingularForm);
        }
        let mut p = DMatrix::zeros(dim, dim);
        for i in 0..s {
            for j in 0..s {
                p[(support[i], support[j])] = block[(i, j)];
            }
        }
        Ok(QuadraticLyapunov { p, support, id })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Support block of `P` as a dense `s × s` matrix.
    pub fn support_block(&self) -> DMatrix<f64> {
        let s = self.support.len();
        DMatrix::from_fn(s, s, |i, j| self.p[(self.support[i], self.support[j])])
    }

    /// `ψ(x) = xᵀPx`.
    pub fn eval_psi(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok((x.transpose() * &self.p * x)[(0, 0)])
    }

    /// Gradient `∇ψ(x) = 2Px`.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        2.0 * (&self.p * x)
    }

    /// `ψ̇(x)` along the field: `xᵀ(AᵀP+PA)x` for linear fields, otherwise
    /// the gradient–field inner product.
    pub fn eval_psi_dot(&self, field: &VectorField, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() || field.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len().max(field.dim()),
            });
        }
        match field {
            VectorField::Linear { a } => {
                let q = a.transpose() * &self.p + &self.p * a;
                Ok((x.transpose() * q * x)[(0, 0)])
            }
            VectorField::Polynomial { .. } => {
                let f = field.eval(x)?;
                Ok(self.gradient(x).dot(&f))
            }
        }
    }

    /// `Q = AᵀP + PA`, the matrix of `ψ̇` for a linear field.
    pub fn derivative_matrix(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        a.transpose() * &self.p + &self.p * a
    }
}

/// Sign of `ψ̇` away from the equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// `ψ̇ < 0`: trajectories flow inward through the level sets.
    Decreasing,
    /// `ψ̇ > 0`: trajectories flow outward (anti-Lyapunov direction).
    Increasing,
}

/// Outcome of the sampled Lyapunov-condition check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub orientation: Orientation,
    pub sign_violations: usize,
    /// Grid estimate of the local growth rate near the critical point:
    /// min of |ψ̇(x)|/‖x−p‖ over the nearest noncritical samples.
    pub alpha_bound: f64,
    pub samples_checked: usize,
    pub max_psidot_at_noncritical: f64,
    pub witness: Option<Vec<f64>>,
}

impl LyapunovReport {
    pub fn passed(&self) -> bool {
        self.sign_violations == 0 && self.alpha_bound > 0.0
    }
}

/// Solve `AᵀP + PA = Q` for symmetric `Q` via the vectorized Kronecker
/// system. `A` must be Hurwitz; `P` is symmetrized after the solve and the
/// residual is checked against 1e-9.
pub fn solve_lyapunov_equation(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<QuadraticLyapunov> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.nrows(),
        });
    }
    let asym = (q - q.transpose()).amax();
    if asym > 1e-9 * q.amax().max(1.0) {
        return Err(Error::AsymmetricMatrix { max_abs: asym });
    }
    if !a.complex_eigenvalues().iter().all(|l| l.re < 0.0) {
        return Err(Error::NonHurwitz);
    }
    // vec(AᵀP) = (I⊗Aᵀ)vec(P), vec(PA) = (Aᵀ⊗I)vec(P)
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let m = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().copied());
    let vec_p = m
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularLyapunovSystem)?;
    let p_raw = DMatrix::from_iterator(n, n, vec_p.iter().copied());
    let p = (&p_raw + p_raw.transpose()) * 0.5;
    let residual = (a.transpose() * &p + &p * a - q).amax();
    if residual >= 1e-9 {
        return Err(Error::SingularLyapunovSystem);
    }
    QuadraticLyapunov::new(0, p)
}

/// Axis-aligned box given by per-dimension `[lo, hi]` intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Box {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| l >= h) {
            return Err(Error::Spec("invalid box: need lo < hi per dimension".into()));
        }
        Ok(Box { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Closed-box membership with a relative slack absorbing the float
    /// round-off of lattice-generated points on the boundary.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(d, &v)| {
                let eps = 1e-9 * (self.hi[d] - self.lo[d]).max(1.0);
                v >= self.lo[d] - eps && v <= self.hi[d] + eps
            })
    }

    pub fn diagonal(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }
}

/// Points with `‖f(x)‖` below this (relative) threshold count as critical.
const CRITICAL_FIELD_TOL: f64 = 1e-9;

/// Sample the Lyapunov condition of the form over a grid on `domain ∩ support
/// subspace`: `ψ̇` must keep one sign at all noncritical samples. Mixed signs
/// fail with a witness; a uniformly increasing `ψ̇` passes with the
/// orientation flag set. The critical point is taken at the origin.
pub fn verify_lyapunov(
    lyap: &QuadraticLyapunov,
    field: &VectorField,
    domain: &Box,
    grid_step: f64,
) -> Result<LyapunovReport> {
    if domain.dim() != lyap.dim() || grid_step <= 0.0 {
        return Err(Error::Spec("verify_lyapunov: bad domain or step".into()));
    }
    // Sample on the form's own subspace; off-support coordinates stay zero.
    let support = lyap.support();
    let counts: Vec<usize> = support
        .iter()
        .map(|&d| ((domain.hi[d] - domain.lo[d]) / grid_step).floor() as usize + 1)
        .collect();
    let mut samples: Vec<(DVector<f64>, f64, f64)> = Vec::new(); // (x, dist, psidot)
    let mut idx = vec![0usize; support.len()];
    loop {
        let mut x = DVector::zeros(lyap.dim());
        for (k, &d) in support.iter().enumerate() {
            x[d] = domain.lo[d] + idx[k] as f64 * grid_step;
        }
        let fx = field.eval(&x)?;
        let dist = x.norm();
        let critical = fx.norm() <= CRITICAL_FIELD_TOL * (1.0 + dist) || dist <= 1e-12;
        if !critical {
            let pd = lyap.eval_psi_dot(field, &x)?;
            samples.push((x, dist, pd));
        }
        // advance the odometer
        let mut k = 0;
        loop {
            if k == idx.len() {
                break;
            }
            idx[k] += 1;
            if idx[k] < counts[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == idx.len() {
            break;
        }
    }
    let samples_checked = samples.len();
    let neg = samples.iter().filter(|(_, _, pd)| *pd < 0.0).count();
    let pos = samples.iter().filter(|(_, _, pd)| *pd > 0.0).count();
    let orientation = if pos > neg {
        Orientation::Increasing
    } else {
        Orientation::Decreasing
    };
    let violating = |pd: f64| match orientation {
        Orientation::Decreasing => pd > 0.0,
        Orientation::Increasing => pd < 0.0,
    };
    let sign_violations = samples.iter().filter(|(_, _, pd)| violating(*pd)).count();
    let witness = samples
        .iter()
        .find(|(_, _, pd)| violating(*pd))
        .map(|(x, _, _)| x.iter().copied().collect());

    // α estimate from the 10% of samples nearest the critical point.
    let mut by_dist: Vec<(f64, f64)> = samples.iter().map(|(_, d, pd)| (*d, *pd)).collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
    let near = (by_dist.len() / 10).max(1).min(by_dist.len());
    let alpha_bound = by_dist[..near]
        .iter()
        .map(|(d, pd)| pd.abs() / d)
        .fold(f64::INFINITY, f64::min);
    let alpha_bound = if alpha_bound.is_finite() { alpha_bound } else { 0.0 };
    let max_psidot = samples
        .iter()
        .map(|(_, _, pd)| *pd)
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(LyapunovReport {
        orientation,
        sign_violations,
        alpha_bound,
        samples_checked,
        max_psidot_at_noncritical: max_psidot,
        witness,
    })
}

/// Smallest admissible angle between gradients on a shared level set.
const TRANSVERSALITY_TOL: f64 = 1e-6;

/// True iff the level sets `ψᵢ⁻¹(a)` and `ψⱼ⁻¹(a)` meet transversally at
/// every sampled intersection point (vacuously true when the intersection is
/// empty).
///
/// Intersection points are found on the cone `dᵀ(Pᵢ−Pⱼ)d = 0`: rays there hit
/// both level sets at the same radius.
pub fn check_transversal_pair(
    lyap_i: &QuadraticLyapunov,
    lyap_j: &QuadraticLyapunov,
    level_a: f64,
    samples: usize,
    rng: &mut impl rand::Rng,
) -> Result<bool> {
    if level_a == 0.0 {
        return Err(Error::Spec("transversality level must be nonzero".into()));
    }
    let n = lyap_i.dim();
    if lyap_j.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: lyap_j.dim(),
        });
    }
    let m = lyap_i.matrix() - lyap_j.matrix();
    let se = nalgebra::SymmetricEigen::new(m.clone());
    let scale = se.eigenvalues.amax().max(1.0);
    let mut pos: Vec<DVector<f64>> = Vec::new();
    let mut negv: Vec<DVector<f64>> = Vec::new();
    let mut null: Vec<DVector<f64>> = Vec::new();
    for (k, &ev) in se.eigenvalues.iter().enumerate() {
        let v = se.eigenvectors.column(k).into_owned();
        if ev > 1e-10 * scale {
            pos.push(v / ev.sqrt());
        } else if ev < -1e-10 * scale {
            negv.push(v / (-ev).sqrt());
        } else {
            null.push(v);
        }
    }

    fn random_combo<R: rand::Rng>(rng: &mut R, n: usize, basis: &[DVector<f64>]) -> DVector<f64> {
        let mut acc = DVector::zeros(n);
        for b in basis {
            let c: f64 = rng.random_range(-1.0..1.0);
            acc += b * c;
        }
        acc
    }

    let mut checked = 0usize;
    let mut attempts = 0usize;
    while checked < samples && attempts < samples * 50 {
        attempts += 1;
        // Directions with dᵀMd = 0: balance the positive and negative parts
        // (the scaled bases make the two quadratic contributions ±‖·‖²),
        // optionally mixed with a null component.
        let d = if pos.is_empty() && negv.is_empty() {
            // M = 0 on its whole space (or only null directions): any ray works.
            let d = random_combo(&mut *rng, n, &null);
            if d.norm() < 1e-9 {
                continue;
            }
            d
        } else if pos.is_empty() || negv.is_empty() {
            // Definite nonzero part: the cone is the null space alone.
            if null.is_empty() {
                return Ok(true); // empty intersection, vacuous
            }
            let d = random_combo(&mut *rng, n, &null);
            if d.norm() < 1e-9 {
                continue;
            }
            d
        } else {
            let p = random_combo(&mut *rng, n, &pos);
            let q = random_combo(&mut *rng, n, &negv);
            if p.norm() < 1e-9 || q.norm() < 1e-9 {
                continue;
            }
            let pn = (p.transpose() * &m * &p)[(0, 0)];
            let qn = -(q.transpose() * &m * &q)[(0, 0)];
            if pn <= 0.0 || qn <= 0.0 {
                continue;
            }
            let mut d = p / pn.sqrt() + q / qn.sqrt();
            if !null.is_empty() && rng.random_bool(0.5) {
                d += random_combo(&mut *rng, n, &null);
            }
            d
        };
        let di = (d.transpose() * lyap_i.matrix() * &d)[(0, 0)];
        if di * level_a <= 1e-12 {
            continue; // ray misses the level set
        }
        let t = (level_a / di).sqrt();
        let x = d * t;
        let gi = lyap_i.gradient(&x);
        let gj = lyap_j.gradient(&x);
        let ni = gi.norm();
        let nj = gj.norm();
        if ni < 1e-12 || nj < 1e-12 {
            return Ok(false); // vanishing gradient: no transversal crossing
        }
        // sin²θ via the Gram determinant, stable near parallel.
        let dot = gi.dot(&gj);
        let sin2 = ((ni * nj).powi(2) - dot * dot) / (ni * nj).powi(2);
        if sin2.max(0.0).sqrt() < TRANSVERSALITY_TOL {
            return Ok(false);
        }
        checked += 1;
    }
    Ok(true)
}

/// If `ψ = α·ψ̇` holds exactly (entrywise on the form matrices), return `α`;
/// otherwise `None`. `α` is fitted by least squares over matrix entries and
/// accepted when `‖P − αQ‖_max / ‖P‖_max < 1e-9`.
pub fn completeness_ratio(lyap: &QuadraticLyapunov, field: &VectorField) -> Option<f64> {
    let a = field.linear_part()?;
    let q = lyap.derivative_matrix(a);
    let pq: f64 = lyap.matrix().iter().zip(q.iter()).map(|(p, q)| p * q).sum();
    let qq: f64 = q.iter().map(|q| q * q).sum();
    if qq == 0.0 {
        return None;
    }
    let alpha = pq / qq;
    let residual = (lyap.matrix() - q.scale(alpha)).amax();
    if residual / lyap.matrix().amax().max(f64::MIN_POSITIVE) < 1e-9 {
        Some(alpha)
    } else {
        None
    }
}
