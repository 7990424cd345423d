//! Problem documents and the abstraction pipeline.
//!
//! A problem is a single TOML document: the system (matrix or polynomial
//! terms), the Lyapunov entries (explicit `P` matrices or `solve_q`
//! directives), per-family level lists, the domain box and grid step, the
//! initial box, query windows, and the mode. [`build`] runs the pipeline:
//! verify the Lyapunov conditions, partition, bound, and emit the cell
//! automaton together with the structural summary (determinism,
//! bisimilarity condition, refinability precondition).

use crate::automaton::{
    build_cell_automaton, initial_locations, AbstractionMap, TimedAutomaton,
};
use crate::bounds::{compute_bounds, BoundsTable, Mode, DEFAULT_SAMPLE_PADDING};
use crate::error::{Error, Result};
use crate::partition::{build_partition, DeterminismCheck, Partition, SliceFamily};
use crate::system::{
    check_transversal_pair, verify_lyapunov, Box, LyapunovReport, Monomial, QuadraticLyapunov,
    VectorField,
};
use nalgebra::DMatrix;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub kind: String,
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub coords: Option<Vec<Vec<Monomial>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSpec {
    /// Explicit form matrix, row-major; on the support block when `support`
    /// is given.
    #[serde(default)]
    pub p: Option<Vec<Vec<f64>>>,
    /// Solve `AᵀP + PA = Q` for this symmetric negative-definite `Q` instead
    /// of giving `P` directly.
    #[serde(default)]
    pub solve_q: Option<Vec<Vec<f64>>>,
    pub levels: Vec<f64>,
    #[serde(default)]
    pub support: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(rename = "box")]
    pub box_: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    #[serde(default)]
    pub windows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RefineSpec {
    #[serde(default)]
    pub depths: Vec<usize>,
    #[serde(default)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSpec {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_times")]
    pub times_per_trajectory: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_horizon() -> f64 {
    1.0
}
fn default_trajectories() -> usize {
    1000
}
fn default_times() -> usize {
    20
}
fn default_seed() -> u64 {
    42
}
fn default_dt() -> f64 {
    1e-3
}

impl Default for ValidateSpec {
    fn default() -> Self {
        ValidateSpec {
            horizon: default_horizon(),
            trajectories: default_trajectories(),
            times_per_trajectory: default_times(),
            seed: default_seed(),
            dt: default_dt(),
        }
    }
}

/// The problem document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub name: String,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub system: SystemSpec,
    pub domain: DomainRaw,
    pub lyapunov: Vec<LyapunovSpec>,
    pub initial: InitialSpec,
    #[serde(default)]
    pub query: QuerySpec,
    #[serde(default)]
    pub refine: RefineSpec,
    #[serde(default)]
    pub validate: ValidateSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainRaw {
    #[serde(rename = "box")]
    pub box_: Vec<Vec<f64>>,
    #[serde(default)]
    pub grid_step: Option<f64>,
}

fn default_mode() -> Mode {
    Mode::Sound
}

/// Parse and schema-check a problem document.
pub fn parse_problem(text: &str) -> Result<ProblemSpec> {
    let spec: ProblemSpec = toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
    spec.validate_shape()?;
    Ok(spec)
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::Spec("ragged matrix rows".into()));
    }
    let cols = if n == 0 { 0 } else { rows[0].len() };
    Ok(DMatrix::from_fn(n, cols, |i, j| rows[i][j]))
}

fn box_from_rows(rows: &[Vec<f64>]) -> Result<Box> {
    let mut lo = Vec::with_capacity(rows.len());
    let mut hi = Vec::with_capacity(rows.len());
    for r in rows {
        if r.len() != 2 {
            return Err(Error::Spec("box rows must be [lo, hi]".into()));
        }
        lo.push(r[0]);
        hi.push(r[1]);
    }
    Box::new(lo, hi)
}

impl ProblemSpec {
    fn validate_shape(&self) -> Result<()> {
        match self.system.kind.as_str() {
            "linear" => {
                let m = self
                    .system
                    .matrix
                    .as_ref()
                    .ok_or(Error::Spec("linear system needs `matrix`".into()))?;
                if m.is_empty() || m.iter().any(|r| r.len() != m.len()) {
                    return Err(Error::Spec("system matrix must be square".into()));
                }
            }
            "polynomial" => {
                if self.system.dim.is_none() || self.system.coords.is_none() {
                    return Err(Error::Spec(
                        "polynomial system needs `dim` and `coords`".into(),
                    ));
                }
            }
            other => {
                return Err(Error::Spec(format!(
                    "unknown system kind `{other}` (linear | polynomial)"
                )))
            }
        }
        if self.lyapunov.is_empty() {
            return Err(Error::Spec("at least one lyapunov entry required".into()));
        }
        for (i, l) in self.lyapunov.iter().enumerate() {
            if l.p.is_none() == l.solve_q.is_none() {
                return Err(Error::Spec(format!(
                    "lyapunov entry {i}: give exactly one of `p` or `solve_q`"
                )));
            }
            if l.levels.len() < 2 {
                return Err(Error::Spec(format!(
                    "lyapunov entry {i}: need at least two levels"
                )));
            }
        }
        let dim = self.dim();
        if self.domain.box_.len() != dim || self.initial.box_.len() != dim {
            return Err(Error::Spec(
                "domain/initial box dimension does not match the system".into(),
            ));
        }
        for w in &self.query.windows {
            if w.len() != 2 || w[0] < 0.0 || w[0] > w[1] {
                return Err(Error::InvalidWindow);
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self.system.kind.as_str() {
            "linear" => self.system.matrix.as_ref().map_or(0, |m| m.len()),
            _ => self.system.dim.unwrap_or(0),
        }
    }

    pub fn field(&self) -> Result<VectorField> {
        match self.system.kind.as_str() {
            "linear" => VectorField::linear(matrix_from_rows(
                self.system.matrix.as_ref().unwrap(),
            )?),
            _ => VectorField::polynomial(
                self.system.dim.unwrap(),
                self.system.coords.clone().unwrap(),
            ),
        }
    }

    pub fn domain_box(&self) -> Result<Box> {
        box_from_rows(&self.domain.box_)
    }

    pub fn initial_box(&self) -> Result<Box> {
        box_from_rows(&self.initial.box_)
    }

    /// Grid step; defaults to 1/256 of the box diagonal.
    pub fn grid_step(&self) -> Result<f64> {
        match self.domain.grid_step {
            Some(h) if h > 0.0 => Ok(h),
            Some(_) => Err(Error::Spec("grid_step must be positive".into())),
            None => Ok(self.domain_box()?.diagonal() / 256.0),
        }
    }

    /// Build the Lyapunov forms (solving the Lyapunov equation where asked).
    pub fn forms(&self, field: &VectorField) -> Result<Vec<QuadraticLyapunov>> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(self.lyapunov.len());
        for (i, spec) in self.lyapunov.iter().enumerate() {
            let lyap = if let Some(p_rows) = &spec.p {
                let p = matrix_from_rows(p_rows)?;
                match &spec.support {
                    Some(s) => QuadraticLyapunov::embedded(i, p, s.clone(), dim)?,
                    None => QuadraticLyapunov::embedded(i, p, (0..dim).collect(), dim)?,
                }
            } else {
                let q = matrix_from_rows(spec.solve_q.as_ref().unwrap())?;
                let a = field
                    .linear_part()
                    .ok_or(Error::Spec("solve_q requires a linear system".into()))?;
                let solved = crate::system::solve_lyapunov_equation(a, &q)?;
                QuadraticLyapunov::embedded(i, solved.matrix().clone(), (0..dim).collect(), dim)?
            };
            out.push(lyap);
        }
        Ok(out)
    }
}

/// Structural predicate results printed by the `abstract` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub deterministic: bool,
    pub determinism_witness: Option<String>,
    pub bisimilarity_condition: bool,
    pub refinable_precondition: bool,
    /// Pairwise transversality at the innermost shared level (k ≥ 2 only).
    pub transversal_pairs: Vec<(usize, usize, bool)>,
}

/// Everything the pipeline produces for one problem.
pub struct Abstraction {
    pub spec: ProblemSpec,
    pub field: VectorField,
    pub partition: Partition,
    pub bounds: BoundsTable,
    pub ta: TimedAutomaton,
    pub map: AbstractionMap,
    pub summary: Summary,
    pub lyapunov_reports: Vec<LyapunovReport>,
}

/// Run the abstraction pipeline on a parsed problem. `mode_override` and
/// `grid_step_override` come from the command line; `snap` optionally rounds
/// sound-mode constants outward to multiples of `1/snap`.
pub fn build(
    spec: &ProblemSpec,
    mode_override: Option<Mode>,
    grid_step_override: Option<f64>,
    snap: Option<u64>,
) -> Result<Abstraction> {
    build_with(spec, mode_override, grid_step_override, snap, false)
}

/// Like [`build`], with an explicit override for the bisimilarity
/// precondition of the cell automaton: when the condition fails, cells of
/// one extended cell differ in outgoing behavior and the extended-cell
/// equivalence is lost; the cell automaton itself stays sound.
pub fn build_with(
    spec: &ProblemSpec,
    mode_override: Option<Mode>,
    grid_step_override: Option<f64>,
    snap: Option<u64>,
    allow_non_bisimilar: bool,
) -> Result<Abstraction> {
    let mode = mode_override.unwrap_or(spec.mode);
    let field = spec.field()?;
    let domain = spec.domain_box()?;
    let grid_step = match grid_step_override {
        Some(h) => h,
        None => spec.grid_step()?,
    };
    let forms = spec.forms(&field)?;

    let mut families = Vec::with_capacity(forms.len());
    let mut lyapunov_reports = Vec::with_capacity(forms.len());
    for (i, lyap) in forms.iter().enumerate() {
        let report = verify_lyapunov(lyap, &field, &domain, grid_step)?;
        if !report.passed() {
            return Err(Error::MixedSignDerivative {
                witness: report.witness.clone().unwrap_or_default(),
            });
        }
        families.push(SliceFamily::new(
            i,
            lyap.clone(),
            spec.lyapunov[i].levels.clone(),
            report.orientation,
        )?);
        lyapunov_reports.push(report);
    }

    let mut transversal_pairs = Vec::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xA11CE);
    for i in 0..forms.len() {
        for j in i + 1..forms.len() {
            let level = (spec.lyapunov[i].levels[0] * spec.lyapunov[j].levels[0]).sqrt();
            let ok = check_transversal_pair(&forms[i], &forms[j], level, 64, &mut rng)?;
            transversal_pairs.push((i, j, ok));
        }
    }

    let partition = build_partition(families, domain, grid_step)?;
    let bisimilarity_condition = partition.check_bisimilarity_condition();
    if !bisimilarity_condition && !allow_non_bisimilar {
        return Err(Error::BisimilarityCondition);
    }
    let bounds = compute_bounds(&partition, &field, mode, DEFAULT_SAMPLE_PADDING)?;
    let cell = build_cell_automaton(&partition, &bounds, snap)?;
    let l0 = initial_locations(&partition, &cell.map, &spec.initial_box()?)?;
    let mut ta = cell.ta;
    ta.set_initial(l0);

    let determinism = partition.check_determinism();
    let summary = Summary {
        deterministic: ta.is_deterministic()
            && matches!(determinism, DeterminismCheck::Pass),
        determinism_witness: match &determinism {
            DeterminismCheck::Pass => None,
            DeterminismCheck::Fail { cell, family } => {
                Some(format!("cell {cell}, family {family}"))
            }
        },
        bisimilarity_condition,
        refinable_precondition: partition.check_refinable_precondition(),
        transversal_pairs,
    };

    Ok(Abstraction {
        spec: spec.clone(),
        field,
        partition,
        bounds,
        ta,
        map: cell.map,
        summary,
        lyapunov_reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC_1D: &str = r#"
name = "1d-stable"
mode = "sound"

[system]
kind = "linear"
matrix = [[-1.0]]

[domain]
box = [[-2.5, 2.5]]
grid_step = 0.01

[[lyapunov]]
p = [[1.0]]
levels = [1.0, 2.0, 4.0]

[initial]
box = [[1.415, 1.995]]

[query]
windows = [[0.0, 0.4], [0.0, 0.5]]
"#;

    #[test]
    fn parse_and_build_1d() {
        let spec = parse_problem(SPEC_1D).unwrap();
        assert_eq!(spec.name, "1d-stable");
        assert_eq!(spec.dim(), 1);
        let built = build(&spec, None, None, None).unwrap();
        assert_eq!(built.ta.locations.len(), 6);
        assert!(built.summary.deterministic);
        assert!(built.summary.bisimilarity_condition);
        assert!(built.summary.refinable_precondition);
        assert_eq!(built.ta.initial.len(), 1);
    }

    #[test]
    fn mode_override_to_complete() {
        let spec = parse_problem(SPEC_1D).unwrap();
        let built = build(&spec, Some(Mode::Complete), None, None).unwrap();
        assert!(built.bounds.entries.iter().all(|b| b.exact));
    }

    #[test]
    fn rejects_malformed_documents() {
        assert!(parse_problem("name = 3").is_err());
        let both = SPEC_1D.replace("p = [[1.0]]", "p = [[1.0]]\nsolve_q = [[-2.0]]");
        assert!(matches!(parse_problem(&both), Err(Error::Spec(_))));
        let bad_window = SPEC_1D.replace("[[0.0, 0.4], [0.0, 0.5]]", "[[0.5, 0.1]]");
        assert!(matches!(parse_problem(&bad_window), Err(Error::InvalidWindow)));
        let unknown = SPEC_1D.replace("kind = \"linear\"", "kind = \"affine\"");
        assert!(parse_problem(&unknown).is_err());
    }

    #[test]
    fn solve_q_route() {
        let text = r#"
name = "2d-coupled"

[system]
kind = "linear"
matrix = [[0.0, 1.0], [-2.0, -3.0]]

[domain]
box = [[-1.6, 1.6], [-3.4, 3.4]]
grid_step = 0.05

[[lyapunov]]
solve_q = [[-1.0, 0.0], [0.0, -1.0]]
levels = [0.5, 1.0, 2.0]

[initial]
box = [[-1.6, 1.6], [-3.4, 3.4]]
"#;
        let spec = parse_problem(text).unwrap();
        let built = build(&spec, None, None, None).unwrap();
        // One family in 2D: k != n, not refinable.
        assert!(!built.summary.refinable_precondition);
        assert!(built.summary.bisimilarity_condition);
        // P from the solve matches the hand-worked matrix.
        let p = built.partition.families()[0].lyap().matrix().clone();
        let expected =
            nalgebra::DMatrix::from_row_slice(2, 2, &[1.25, 0.25, 0.25, 0.25]);
        assert!((p - expected).amax() < 1e-12);
    }

    #[test]
    fn default_grid_step_is_fraction_of_diagonal() {
        let no_step = SPEC_1D.replace("grid_step = 0.01\n", "");
        let spec = parse_problem(&no_step).unwrap();
        let h = spec.grid_step().unwrap();
        assert!((h - 5.0 / 256.0).abs() < 1e-12);
    }
}
