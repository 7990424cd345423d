//! Per-slice ranges of |ψ̇| and the transit-time bounds derived from them.
//!
//! On a level set `xᵀPx = a` the extremes of `ψ̇ = xᵀQx` (with
//! `Q = AᵀP + PA`) are `a·μ_min` and `a·μ_max`, where `μ` are the
//! eigenvalues of the pencil `det(Q − μP) = 0`. Over the slice
//! `ψ ∈ [a_lo, a_hi]` this gives `|ψ̇| ∈ [a_lo·min|μ|, a_hi·max|μ|]`,
//! provided all `μ` share one sign (otherwise `ψ̇` changes sign inside the
//! slice and the slice carries no valid time bounds). Polynomial fields fall
//! back to grid sampling with multiplicative safety padding.
//!
//! Transit times: a trajectory entering a slice of width `Δa = a_hi − a_lo`
//! crosses it in `t ∈ [Δa / max|ψ̇|, Δa / min|ψ̇|]`; when `ψ = α·ψ̇` holds the
//! crossing time is exactly `|α·ln(a_from/a_to)|` for every trajectory.

use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::system::{completeness_ratio, Orientation, QuadraticLyapunov, VectorField};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Which route produced a slice's |ψ̇| range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMethod {
    Pencil,
    Sampled,
}

/// Transit-time data for one slice of one family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceBounds {
    pub family: usize,
    pub slice: usize,
    pub psidot_abs_min: f64,
    pub psidot_abs_max: f64,
    pub t_lower: f64,
    pub t_upper: f64,
    pub method: BoundMethod,
    /// True when `t_lower == t_upper` comes from the `ψ = αψ̇` route.
    pub exact: bool,
}

/// Transit-time interval from one |ψ̇| range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitTimes {
    pub t_lower: f64,
    pub t_upper: f64,
    /// Zero-width slice: both times are 0 and the result carries no meaning.
    pub degenerate: bool,
}

const PENCIL_SIGN_TOL: f64 = 1e-10;

/// Exact range of |ψ̇| over the slice `ψ ∈ [a_lo, a_hi]` for a linear field,
/// via the eigenvalues of the pencil `(Q, P)` on the form's subspace.
///
/// Fails when `ψ̇` depends on directions outside the form's subspace, when
/// the pencil has mixed-sign eigenvalues (`ψ̇` not sign-definite on the
/// slice), or when an eigenvalue vanishes (`ψ̇` vanishes on the slice).
pub fn psidot_range_pencil(
    lyap: &QuadraticLyapunov,
    a: &DMatrix<f64>,
    a_lo: f64,
    a_hi: f64,
    family: usize,
    slice: usize,
) -> Result<(f64, f64)> {
    if !(0.0 < a_lo && a_lo <= a_hi) {
        return Err(Error::BadLevels);
    }
    let q = lyap.derivative_matrix(a);
    let support = lyap.support();
    let in_support = |i: usize| support.contains(&i);
    let scale = q.amax().max(1e-300);
    for i in 0..q.nrows() {
        for j in 0..q.ncols() {
            if (!in_support(i) || !in_support(j)) && q[(i, j)].abs() > 1e-9 * scale {
                return Err(Error::PencilUnavailable {
                    family,
                    reason: "ψ̇ involves directions outside the form's subspace".into(),
                });
            }
        }
    }
    let s = support.len();
    let p_s = lyap.support_block();
    let q_s = DMatrix::from_fn(s, s, |i, j| q[(support[i], support[j])]);
    let chol = p_s.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    // B = L⁻¹ Q L⁻ᵀ is symmetric with the pencil eigenvalues.
    let w = l.solve_lower_triangular(&q_s).ok_or(Error::SingularForm)?;
    let z = l
        .solve_lower_triangular(&w.transpose())
        .ok_or(Error::SingularForm)?;
    let b = (z.transpose() + &z) * 0.5;
    let eigs = nalgebra::SymmetricEigen::new(b).eigenvalues;
    let mu_scale = eigs.amax();
    if eigs.iter().any(|&m| m.abs() <= PENCIL_SIGN_TOL * mu_scale.max(1.0)) {
        return Err(Error::VanishingPsidot { family, slice });
    }
    let pos = eigs.iter().any(|&m| m > 0.0);
    let neg = eigs.iter().any(|&m| m < 0.0);
    if pos && neg {
        return Err(Error::MixedSignPsidot { family, slice });
    }
    let abs: Vec<f64> = eigs.iter().map(|m| m.abs()).collect();
    let mu_min = abs.iter().copied().fold(f64::INFINITY, f64::min);
    let mu_max = abs.iter().copied().fold(0.0, f64::max);
    Ok((a_lo * mu_min, a_hi * mu_max))
}

/// Safety padding applied to sampled ranges (min deflated, max inflated).
pub const DEFAULT_SAMPLE_PADDING: f64 = 0.10;

const MIN_SLICE_SAMPLES: usize = 100;

/// Min/max of |ψ̇| over the partition-grid points of slice `g` of family
/// `family_idx`, deflated/inflated by the padding factor. Fails if the
/// slice holds a sampled critical point (`ψ̇ = 0`).
pub fn psidot_range_sampled(
    lyap: &QuadraticLyapunov,
    field: &VectorField,
    partition: &Partition,
    family_idx: usize,
    slice: usize,
    padding: f64,
) -> Result<(f64, f64)> {
    let fam = &partition.families()[family_idx];
    let grid = partition.grid();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    let mut count = 0usize;
    for flat in 0..grid.len() {
        let x = grid.point(flat);
        let g = fam.region_index(fam.lyap().eval_psi(&x)?);
        if g != slice {
            continue;
        }
        count += 1;
        let pd = lyap.eval_psi_dot(field, &x)?;
        if pd.abs() <= 1e-12 {
            return Err(Error::VanishingPsidot {
                family: family_idx,
                slice,
            });
        }
        lo = lo.min(pd.abs());
        hi = hi.max(pd.abs());
    }
    if count < MIN_SLICE_SAMPLES {
        return Err(Error::TooFewSamples {
            family: family_idx,
            slice,
            min: MIN_SLICE_SAMPLES,
        });
    }
    Ok((lo * (1.0 - padding), hi * (1.0 + padding)))
}

/// Tightest sound transit-time bounds for a slice `[a_lo, a_hi]` given a
/// range of |ψ̇| over it.
pub fn transit_time_bounds(a_lo: f64, a_hi: f64, range: (f64, f64)) -> TransitTimes {
    let width = a_hi - a_lo;
    if width <= 0.0 {
        return TransitTimes {
            t_lower: 0.0,
            t_upper: 0.0,
            degenerate: true,
        };
    }
    TransitTimes {
        t_lower: width / range.1,
        t_upper: width / range.0,
        degenerate: false,
    }
}

/// Level-to-level crossing time under `ψ = α·ψ̇` (so `ψ(t) = ψ(0)·e^{t/α}`):
/// `t = |α·ln(a_from/a_to)|`. The flow direction must match the sign of `α`.
pub fn exact_transit_time(alpha: f64, a_from: f64, a_to: f64) -> Result<f64> {
    if alpha == 0.0 || a_from <= 0.0 || a_to <= 0.0 {
        return Err(Error::DirectionMismatch);
    }
    let consistent = (alpha < 0.0 && a_to < a_from) || (alpha > 0.0 && a_to > a_from);
    if !consistent {
        return Err(Error::DirectionMismatch);
    }
    Ok((alpha * (a_from / a_to).ln()).abs())
}

/// Abstraction mode: bracketed sound bounds, or exact transit times under
/// the proportionality condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sound,
    Complete,
}

/// All slice bounds of a partition, ordered by (family, slice).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsTable {
    pub entries: Vec<SliceBounds>,
}

impl BoundsTable {
    pub fn get(&self, family: usize, slice: usize) -> Option<&SliceBounds> {
        self.entries
            .iter()
            .find(|b| b.family == family && b.slice == slice)
    }
}

/// Compute transit bounds for every slice of every family.
///
/// Linear fields use the pencil route and fall back to sampling if the
/// pencil is unavailable for an embedded form; polynomial fields always
/// sample. Complete mode requires `ψ = αψ̇` for every family and pins
/// `t_lower = t_upper` to the exact transit time.
pub fn compute_bounds(
    partition: &Partition,
    field: &VectorField,
    mode: Mode,
    padding: f64,
) -> Result<BoundsTable> {
    let mut entries = Vec::new();
    for (i, fam) in partition.families().iter().enumerate() {
        let lyap = fam.lyap();
        let alpha = match mode {
            Mode::Complete => Some(
                completeness_ratio(lyap, field).ok_or(Error::NotCompleteForm { family: i })?,
            ),
            Mode::Sound => None,
        };
        for g in 1..=fam.slice_count() {
            let (a_lo, a_hi) = fam.slice_range(g);
            let entry = if let Some(alpha) = alpha {
                let (from, to) = match fam.orientation() {
                    Orientation::Decreasing => (a_hi, a_lo),
                    Orientation::Increasing => (a_lo, a_hi),
                };
                let t = exact_transit_time(alpha, from, to)?;
                SliceBounds {
                    family: i,
                    slice: g,
                    psidot_abs_min: a_lo / alpha.abs(),
                    psidot_abs_max: a_hi / alpha.abs(),
                    t_lower: t,
                    t_upper: t,
                    method: BoundMethod::Pencil,
                    exact: true,
                }
            } else {
                let (range, method) = match field.linear_part() {
                    Some(a) => match psidot_range_pencil(lyap, a, a_lo, a_hi, i, g) {
                        Ok(r) => (r, BoundMethod::Pencil),
                        Err(Error::PencilUnavailable { .. }) => (
                            psidot_range_sampled(lyap, field, partition, i, g, padding)?,
                            BoundMethod::Sampled,
                        ),
                        Err(e) => return Err(e),
                    },
                    None => (
                        psidot_range_sampled(lyap, field, partition, i, g, padding)?,
                        BoundMethod::Sampled,
                    ),
                };
                let t = transit_time_bounds(a_lo, a_hi, range);
                SliceBounds {
                    family: i,
                    slice: g,
                    psidot_abs_min: range.0,
                    psidot_abs_max: range.1,
                    t_lower: t.t_lower,
                    t_upper: t.t_upper,
                    method,
                    exact: false,
                }
            };
            entries.push(entry);
        }
    }
    Ok(BoundsTable { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{build_partition, SliceFamily};
    use crate::system::{Box, Monomial};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn form_1d() -> QuadraticLyapunov {
        QuadraticLyapunov::new(0, DMatrix::from_row_slice(1, 1, &[1.0])).unwrap()
    }

    #[test]
    fn pencil_1d_slice() {
        let a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let r = psidot_range_pencil(&form_1d(), &a, 2.0, 4.0, 0, 2).unwrap();
        assert_relative_eq!(r.0, 4.0);
        assert_relative_eq!(r.1, 8.0);
    }

    #[test]
    fn pencil_lagrange_oracle() {
        // P = diag(2,1), Q = diag(-4,-1): mu = {-2, -1}; slice [1,3] -> (1, 6).
        // A = diag(-1, -1/2) gives exactly that Q.
        let p = QuadraticLyapunov::new(0, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0]))).unwrap();
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -0.5]));
        let r = psidot_range_pencil(&p, &a, 1.0, 3.0, 0, 1).unwrap();
        assert_relative_eq!(r.0, 1.0, max_relative = 1e-12);
        assert_relative_eq!(r.1, 6.0, max_relative = 1e-12);
    }

    #[test]
    fn pencil_sphere_radial_flow() {
        let p = QuadraticLyapunov::new(0, DMatrix::identity(2, 2)).unwrap();
        let a = -DMatrix::identity(2, 2);
        let r = psidot_range_pencil(&p, &a, 1.5, 1.5, 0, 1).unwrap();
        assert_relative_eq!(r.0, 3.0, max_relative = 1e-12);
        assert_relative_eq!(r.1, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn pencil_mixed_sign_rejected() {
        // Saddle with a full-space form: psi_dot changes sign.
        let p = QuadraticLyapunov::new(0, DMatrix::identity(2, 2)).unwrap();
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 2.0]));
        assert!(matches!(
            psidot_range_pencil(&p, &a, 1.0, 2.0, 0, 1),
            Err(Error::MixedSignPsidot { .. })
        ));
    }

    fn partition_1d(step: f64) -> Partition {
        let fam = SliceFamily::new(
            0,
            form_1d(),
            vec![1.0, 2.0, 4.0],
            crate::system::Orientation::Decreasing,
        )
        .unwrap();
        build_partition(vec![fam], Box::new(vec![-2.5], vec![2.5]).unwrap(), step).unwrap()
    }

    #[test]
    fn sampled_matches_pencil_within_padding() {
        let p = partition_1d(0.01);
        let field = VectorField::linear(DMatrix::from_row_slice(1, 1, &[-1.0])).unwrap();
        let (lo, hi) = psidot_range_sampled(&form_1d(), &field, &p, 0, 2, 0.1).unwrap();
        // Unpadded sample range sits inside the exact pencil range; padding
        // pushes it back out around (4, 8).
        assert!(lo <= 4.0 && lo >= 4.0 * 0.9 * 0.98);
        assert!(hi >= 8.0 * 0.98 && hi <= 8.0 * 1.1);
    }

    #[test]
    fn sampled_contains_pencil_range_as_grid_refines() {
        let field = VectorField::linear(DMatrix::from_row_slice(1, 1, &[-1.0])).unwrap();
        for step in [0.01, 0.0025] {
            let p = partition_1d(step);
            let (lo, hi) = psidot_range_sampled(&form_1d(), &field, &p, 0, 2, 0.1).unwrap();
            assert!(lo <= 4.0 && 8.0 <= hi, "step {step}: ({lo}, {hi})");
        }
        // Finer grids tighten the raw sample range toward the pencil values.
        let coarse = psidot_range_sampled(&form_1d(), &field, &partition_1d(0.01), 0, 2, 0.0).unwrap();
        let fine = psidot_range_sampled(&form_1d(), &field, &partition_1d(0.0025), 0, 2, 0.0).unwrap();
        assert!(fine.0 <= coarse.0 && fine.1 >= coarse.1);
        assert!(coarse.0 >= 4.0 && coarse.1 <= 8.0);
    }

    #[test]
    fn sampled_cubic_field() {
        // x' = -x^3, psi = x^2: |psi_dot| = 2x^4 in [2, 32] on x in [1, 2].
        let p = partition_1d(0.005);
        let field = VectorField::polynomial(
            1,
            vec![vec![Monomial {
                coeff: -1.0,
                exps: vec![3],
            }]],
        )
        .unwrap();
        // Slice psi in [1, 4) is slices 1..=2 of the levels (1,2,4); check both.
        let (lo1, _) = psidot_range_sampled(&form_1d(), &field, &p, 0, 1, 0.1).unwrap();
        let (_, hi2) = psidot_range_sampled(&form_1d(), &field, &p, 0, 2, 0.1).unwrap();
        assert!(lo1 <= 2.0 && lo1 > 2.0 * 0.85);
        assert!(hi2 >= 32.0 * 0.95 && hi2 <= 32.0 * 1.1);
    }

    #[test]
    fn sampled_rejects_equilibrium_in_slice() {
        // x' = 1 - x has an equilibrium at x = 1 inside psi in [0.25, 4].
        let lyap = form_1d();
        let fam = SliceFamily::new(
            0,
            lyap.clone(),
            vec![0.25, 4.0],
            crate::system::Orientation::Decreasing,
        )
        .unwrap();
        let p = build_partition(vec![fam], Box::new(vec![-2.5], vec![2.5]).unwrap(), 0.01).unwrap();
        let field = VectorField::polynomial(
            1,
            vec![vec![
                Monomial { coeff: 1.0, exps: vec![0] },
                Monomial { coeff: -1.0, exps: vec![1] },
            ]],
        )
        .unwrap();
        assert!(matches!(
            psidot_range_sampled(&lyap, &field, &p, 0, 1, 0.1),
            Err(Error::VanishingPsidot { .. })
        ));
    }

    #[test]
    fn transit_times_from_ranges() {
        let t = transit_time_bounds(2.0, 4.0, (4.0, 8.0));
        assert_relative_eq!(t.t_lower, 0.25);
        assert_relative_eq!(t.t_upper, 0.5);
        let t = transit_time_bounds(1.0, 2.0, (2.0, 4.0));
        assert_relative_eq!(t.t_lower, 0.25);
        assert_relative_eq!(t.t_upper, 0.5);
        let t = transit_time_bounds(2.0, 2.0, (4.0, 8.0));
        assert!(t.degenerate);
        assert_eq!((t.t_lower, t.t_upper), (0.0, 0.0));
    }

    #[test]
    fn exact_transit_examples() {
        assert_relative_eq!(
            exact_transit_time(-0.5, 4.0, 2.0).unwrap(),
            0.5 * 2f64.ln(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            exact_transit_time(-0.5, 4.0, 1.0).unwrap(),
            0.5 * 4f64.ln(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            exact_transit_time(0.25, 1.0, 2.0).unwrap(),
            0.25 * 2f64.ln(),
            max_relative = 1e-15
        );
        assert!(matches!(
            exact_transit_time(-0.5, 1.0, 2.0),
            Err(Error::DirectionMismatch)
        ));
    }

    #[test]
    fn bisection_tightens_transit_intervals() {
        // Parent slice [a, b] vs geometric halves [a, m], [m, b] under the
        // pencil range of the 1D stable system (mu = -2).
        let (a0, b0) = (2.0f64, 4.0f64);
        let m = (a0 * b0).sqrt();
        let parent = transit_time_bounds(a0, b0, (2.0 * a0, 2.0 * b0));
        let left = transit_time_bounds(a0, m, (2.0 * a0, 2.0 * m));
        let right = transit_time_bounds(m, b0, (2.0 * m, 2.0 * b0));
        assert!(left.t_lower + right.t_lower >= parent.t_lower - 1e-12);
        assert!(left.t_upper + right.t_upper <= parent.t_upper + 1e-12);
    }

    #[test]
    fn compute_bounds_sound_1d() {
        let p = partition_1d(0.01);
        let field = VectorField::linear(DMatrix::from_row_slice(1, 1, &[-1.0])).unwrap();
        let table = compute_bounds(&p, &field, Mode::Sound, 0.1).unwrap();
        for g in 1..=2 {
            let b = table.get(0, g).unwrap();
            assert_relative_eq!(b.t_lower, 0.25, max_relative = 1e-12);
            assert_relative_eq!(b.t_upper, 0.5, max_relative = 1e-12);
            assert_eq!(b.method, BoundMethod::Pencil);
            assert!(!b.exact);
        }
    }

    #[test]
    fn compute_bounds_complete_1d() {
        let p = partition_1d(0.01);
        let field = VectorField::linear(DMatrix::from_row_slice(1, 1, &[-1.0])).unwrap();
        let table = compute_bounds(&p, &field, Mode::Complete, 0.1).unwrap();
        for g in 1..=2 {
            let b = table.get(0, g).unwrap();
            assert!(b.exact);
            assert_relative_eq!(b.t_lower, 0.5 * 2f64.ln(), max_relative = 1e-14);
            assert_eq!(b.t_lower, b.t_upper);
        }
    }

    #[test]
    fn compute_bounds_complete_rejects_nonproportional() {
        let lyap = QuadraticLyapunov::new(
            0,
            DMatrix::from_row_slice(2, 2, &[1.25, 0.25, 0.25, 0.25]),
        )
        .unwrap();
        let fam = SliceFamily::new(
            0,
            lyap,
            vec![0.5, 1.0, 2.0],
            crate::system::Orientation::Decreasing,
        )
        .unwrap();
        let p = build_partition(
            vec![fam],
            Box::new(vec![-1.5, -3.25], vec![1.5, 3.25]).unwrap(),
            0.025,
        )
        .unwrap();
        let field = VectorField::linear(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]))
            .unwrap();
        assert!(matches!(
            compute_bounds(&p, &field, Mode::Complete, 0.1),
            Err(Error::NotCompleteForm { family: 0 })
        ));
    }
}
