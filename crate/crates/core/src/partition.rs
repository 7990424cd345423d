//! Level-set partitions of the state space.
//!
//! Each Lyapunov function together with an increasing list of positive level
//! values generates a slice family: slice `g` covers `ψ ∈ [a_{g-1}, a_g)`
//! (ties go to the outer slice so region labeling is a function). The
//! intersection of one slice per family is an extended cell, indexed by the
//! vector of per-family slice indices; index `0` means "below the innermost
//! level" for that family. Extended cells may be disconnected; their
//! connected components on the grid are the cells, which become the
//! locations of the cell-level timed automaton. The all-inner region is the
//! core, and anything above some family's outermost level is the exterior.
//!
//! Connectivity is grid-based (2n-neighbor flood fill); the toolkit supports
//! grids up to three dimensions.

use crate::error::{Error, Result};
use crate::system::{Box, Orientation, QuadraticLyapunov, VectorField, verify_lyapunov};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::collections::VecDeque;
use std::fmt;

/// Nested slices generated by one Lyapunov function.
#[derive(Debug, Clone)]
pub struct SliceFamily {
    index: usize,
    lyap: QuadraticLyapunov,
    levels: Vec<f64>,
    orientation: Orientation,
}

/// How to add levels to a family.
#[derive(Debug, Clone)]
pub enum Refinement {
    /// Insert the geometric midpoint into every gap, keeping ratio-uniform
    /// slices.
    BisectAll,
    Insert(Vec<f64>),
}

impl SliceFamily {
    pub fn new(
        index: usize,
        lyap: QuadraticLyapunov,
        levels: Vec<f64>,
        orientation: Orientation,
    ) -> Result<Self> {
        if levels.len() < 2
            || levels[0] <= 0.0
            || levels.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::BadLevels);
        }
        Ok(SliceFamily {
            index,
            lyap,
            levels,
            orientation,
        })
    }

    /// Build a family by running the Lyapunov check to determine orientation.
    pub fn verified(
        index: usize,
        lyap: QuadraticLyapunov,
        levels: Vec<f64>,
        field: &VectorField,
        domain: &Box,
        grid_step: f64,
    ) -> Result<Self> {
        let report = verify_lyapunov(&lyap, field, domain, grid_step)?;
        if !report.passed() {
            return Err(Error::MixedSignDerivative {
                witness: report.witness.unwrap_or_default(),
            });
        }
        Self::new(index, lyap, levels, report.orientation)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn lyap(&self) -> &QuadraticLyapunov {
        &self.lyap
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Number of slices (levels minus one).
    pub fn slice_count(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    /// Bounds `[a_{g-1}, a_g]` of slice `g` (1-based).
    pub fn slice_range(&self, g: usize) -> (f64, f64) {
        (self.levels[g - 1], self.levels[g])
    }

    /// Per-family region index of a ψ-value: `0` below the innermost level,
    /// `g` for `ψ ∈ [a_{g-1}, a_g)`, `m+1` at or above the outermost level.
    pub fn region_index(&self, psi: f64) -> usize {
        self.levels.partition_point(|&a| a <= psi)
    }

    /// The level-set value crossed when leaving slice `g` in flow direction,
    /// `None` for per-family sink indices.
    pub fn exit_level(&self, g: usize) -> Option<f64> {
        let m = self.slice_count();
        match self.orientation {
            Orientation::Decreasing if (1..=m).contains(&g) => Some(self.levels[g - 1]),
            Orientation::Increasing if (1..=m).contains(&g) => Some(self.levels[g]),
            _ => None,
        }
    }

    /// New family with strictly more levels; every old level is retained.
    pub fn refine(&self, rule: &Refinement) -> Result<Self> {
        let levels = match rule {
            Refinement::BisectAll => {
                let mut out = Vec::with_capacity(self.levels.len() * 2 - 1);
                for w in self.levels.windows(2) {
                    out.push(w[0]);
                    out.push((w[0] * w[1]).sqrt());
                }
                out.push(*self.levels.last().unwrap());
                out
            }
            Refinement::Insert(values) => {
                let mut out = self.levels.clone();
                for &v in values {
                    let pos = out.partition_point(|&a| a < v);
                    let inside_gap = pos > 0
                        && pos < out.len()
                        && out[pos - 1] < v
                        && v < out[pos];
                    if !inside_gap {
                        return Err(Error::BadLevelInsertion { value: v });
                    }
                    out.insert(pos, v);
                }
                out
            }
        };
        SliceFamily::new(self.index, self.lyap.clone(), levels, self.orientation)
    }
}

/// Identity of a partition region. `Ord` gives the canonical location order:
/// core, then cells by extended index and component, then exterior.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RegionId {
    Core,
    Cell { ext: Vec<u16>, comp: u16 },
    Exterior,
}

impl RegionId {
    pub fn is_cell(&self) -> bool {
        matches!(self, RegionId::Cell { .. })
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionId::Core => write!(f, "core"),
            RegionId::Exterior => write!(f, "ext"),
            RegionId::Cell { ext, comp } => {
                let idx: Vec<String> = ext.iter().map(|g| g.to_string()).collect();
                write!(f, "e({})#{}", idx.join(","), comp)
            }
        }
    }
}

/// Node-centered lattice over an axis-aligned box.
#[derive(Debug, Clone)]
pub struct Grid {
    lo: Vec<f64>,
    step: f64,
    dims: Vec<usize>,
}

impl Grid {
    pub fn new(domain: &Box, step: f64) -> Result<Self> {
        let n = domain.dim();
        if n == 0 || n > 3 {
            return Err(Error::GridDimension { dim: n });
        }
        if step <= 0.0 {
            return Err(Error::Spec("grid step must be positive".into()));
        }
        let dims: Vec<usize> = (0..n)
            .map(|d| ((domain.hi[d] - domain.lo[d]) / step + 1e-9).floor() as usize + 1)
            .collect();
        Ok(Grid {
            lo: domain.lo.clone(),
            step,
            dims,
        })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Measure of one grid node.
    pub fn node_volume(&self) -> f64 {
        self.step.powi(self.dim() as i32)
    }

    pub fn coords(&self, flat: usize) -> Vec<usize> {
        let mut rem = flat;
        self.dims
            .iter()
            .map(|&dim| {
                let c = rem % dim;
                rem /= dim;
                c
            })
            .collect()
    }

    pub fn flat(&self, coords: &[usize]) -> usize {
        let mut acc = 0usize;
        for d in (0..self.dim()).rev() {
            acc = acc * self.dims[d] + coords[d];
        }
        acc
    }

    pub fn point(&self, flat: usize) -> DVector<f64> {
        let c = self.coords(flat);
        DVector::from_iterator(
            self.dim(),
            c.iter()
                .enumerate()
                .map(|(d, &j)| self.lo[d] + j as f64 * self.step),
        )
    }

    /// Flat index of the lattice node nearest to `x` (clamped to the grid).
    pub fn nearest(&self, x: &DVector<f64>) -> usize {
        let coords: Vec<usize> = (0..self.dim())
            .map(|d| {
                let j = ((x[d] - self.lo[d]) / self.step).round();
                (j.max(0.0) as usize).min(self.dims[d] - 1)
            })
            .collect();
        self.flat(&coords)
    }

    /// 2n-adjacent lattice neighbors.
    pub fn neighbors(&self, flat: usize) -> Vec<usize> {
        let c = self.coords(flat);
        let mut out = Vec::with_capacity(2 * self.dim());
        for d in 0..self.dim() {
            if c[d] > 0 {
                let mut cc = c.clone();
                cc[d] -= 1;
                out.push(self.flat(&cc));
            }
            if c[d] + 1 < self.dims[d] {
                let mut cc = c.clone();
                cc[d] += 1;
                out.push(self.flat(&cc));
            }
        }
        out
    }

    /// Full Moore neighborhood (diagonals included). Rasterized thin curves
    /// are connected under this adjacency even where they step diagonally.
    pub fn moore_neighbors(&self, flat: usize) -> Vec<usize> {
        let c = self.coords(flat);
        let n = self.dim();
        let mut out = Vec::new();
        let mut offsets = vec![-1i64; n];
        loop {
            if offsets.iter().any(|&o| o != 0) {
                let mut cc = Vec::with_capacity(n);
                let mut ok = true;
                for d in 0..n {
                    let v = c[d] as i64 + offsets[d];
                    if v < 0 || v >= self.dims[d] as i64 {
                        ok = false;
                        break;
                    }
                    cc.push(v as usize);
                }
                if ok {
                    out.push(self.flat(&cc));
                }
            }
            let mut d = 0;
            loop {
                if d == n {
                    return out;
                }
                offsets[d] += 1;
                if offsets[d] <= 1 {
                    break;
                }
                offsets[d] = -1;
                d += 1;
            }
        }
    }
}

/// One labeled region: a core/exterior record or a connected cell.
#[derive(Debug, Clone)]
pub struct Region {
    pub id: RegionId,
    /// Sorted flat grid indices of the region's mask.
    pub mask: Vec<usize>,
    /// A mask point with all its neighbors in the same region, when one
    /// exists; otherwise the first mask point. `usize::MAX` for empty masks.
    pub representative: usize,
    /// Under 3 grid cells across in some direction: too thin for the grid
    /// connectivity to be reliable.
    pub thin: bool,
}

/// Grid-labeled partition of the analysis domain.
#[derive(Debug, Clone)]
pub struct Partition {
    families: Vec<SliceFamily>,
    domain: Box,
    grid: Grid,
    /// Flat grid index → region table index.
    labels: Vec<u32>,
    regions: Vec<Region>,
    /// Unordered region-index pairs with 2n-adjacent mask points.
    adjacency: BTreeSet<(u32, u32)>,
    fingerprint: String,
}

/// Assign every grid point to a cell, the core, or the exterior, and split
/// extended cells into connected components. Rejects grids too coarse to
/// resolve every slice of every family.
pub fn build_partition(
    families: Vec<SliceFamily>,
    domain: Box,
    grid_step: f64,
) -> Result<Partition> {
    if families.is_empty() {
        return Err(Error::Spec("at least one slice family required".into()));
    }
    for f in &families {
        if f.lyap().dim() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                got: f.lyap().dim(),
            });
        }
    }
    let grid = Grid::new(&domain, grid_step)?;
    let k = families.len();

    // Per-point extended index; exterior collapses to a single label.
    let mut ext_of: Vec<Option<Vec<u16>>> = Vec::with_capacity(grid.len());
    let mut slice_seen = vec![vec![false; 0]; k];
    for (i, fam) in families.iter().enumerate() {
        slice_seen[i] = vec![false; fam.slice_count() + 2];
    }
    for flat in 0..grid.len() {
        let x = grid.point(flat);
        let mut ext = Vec::with_capacity(k);
        let mut exterior = false;
        for (i, fam) in families.iter().enumerate() {
            let g = fam.region_index(fam.lyap().eval_psi(&x)?);
            slice_seen[i][g] = true;
            if g == fam.slice_count() + 1 {
                exterior = true;
            }
            ext.push(g as u16);
        }
        ext_of.push(if exterior { None } else { Some(ext) });
    }
    for (i, fam) in families.iter().enumerate() {
        if let Some(g) = (1..=fam.slice_count()).find(|&g| !slice_seen[i][g]) {
            return Err(Error::GridTooCoarse {
                family: fam.index(),
                slice: g,
            });
        }
    }

    // Group points by extended index, flood-fill each group into components.
    let mut groups: BTreeMap<Vec<u16>, Vec<usize>> = BTreeMap::new();
    let mut exterior_mask: Vec<usize> = Vec::new();
    for (flat, ext) in ext_of.iter().enumerate() {
        match ext {
            None => exterior_mask.push(flat),
            Some(v) => groups.entry(v.clone()).or_default().push(flat),
        }
    }

    let core_key = vec![0u16; k];
    let mut regions: Vec<Region> = Vec::new();
    let core_mask = groups.remove(&core_key).unwrap_or_default();
    regions.push(make_region(RegionId::Core, core_mask, &grid));
    for (ext, points) in &groups {
        let comps = connected_components(points, &grid);
        for (h, comp) in comps.into_iter().enumerate() {
            regions.push(make_region(
                RegionId::Cell {
                    ext: ext.clone(),
                    comp: h as u16,
                },
                comp,
                &grid,
            ));
        }
    }
    regions.push(make_region(RegionId::Exterior, exterior_mask, &grid));

    let mut labels = vec![u32::MAX; grid.len()];
    for (ri, region) in regions.iter().enumerate() {
        for &flat in &region.mask {
            labels[flat] = ri as u32;
        }
    }
    debug_assert!(labels.iter().all(|&l| l != u32::MAX));

    let mut adjacency = BTreeSet::new();
    for flat in 0..grid.len() {
        let a = labels[flat];
        for nb in grid.neighbors(flat) {
            let b = labels[nb];
            if a != b {
                adjacency.insert((a.min(b), a.max(b)));
            }
        }
    }

    let fingerprint = fingerprint_of(&families, &domain, grid_step);
    Ok(Partition {
        families,
        domain,
        grid,
        labels,
        regions,
        adjacency,
        fingerprint,
    })
}

fn make_region(id: RegionId, mask: Vec<usize>, grid: &Grid) -> Region {
    let mut mask = mask;
    mask.sort_unstable();
    let interior = mask.iter().copied().find(|&p| {
        let nbs = grid.neighbors(p);
        nbs.len() == 2 * grid.dim() && nbs.iter().all(|nb| mask.binary_search(nb).is_ok())
    });
    let representative = interior.or(mask.first().copied()).unwrap_or(usize::MAX);
    let thin = if mask.is_empty() {
        false
    } else {
        let mut lo = vec![usize::MAX; grid.dim()];
        let mut hi = vec![0usize; grid.dim()];
        for &flat in &mask {
            for (d, c) in grid.coords(flat).into_iter().enumerate() {
                lo[d] = lo[d].min(c);
                hi[d] = hi[d].max(c);
            }
        }
        lo.iter().zip(&hi).any(|(l, h)| h - l + 1 < 3)
    };
    Region {
        id,
        mask,
        representative,
        thin,
    }
}

fn connected_components(points: &[usize], grid: &Grid) -> Vec<Vec<usize>> {
    let set: BTreeSet<usize> = points.iter().copied().collect();
    let mut visited: BTreeSet<usize> = BTreeSet::new();
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for &start in points {
        if visited.contains(&start) {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        visited.insert(start);
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            for nb in grid.neighbors(p) {
                if set.contains(&nb) && visited.insert(nb) {
                    queue.push_back(nb);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    // Components ordered by smallest grid index.
    comps.sort_by_key(|c| c[0]);
    comps
}

fn fingerprint_of(families: &[SliceFamily], domain: &Box, grid_step: f64) -> String {
    let mut hasher = Sha256::new();
    let mut feed = |s: String| hasher.update(s.as_bytes());
    for f in families {
        feed(format!("family {} orient {:?}\n", f.index(), f.orientation()));
        for v in f.lyap().matrix().iter() {
            feed(format!("{};", v.to_bits()));
        }
        feed(format!("support {:?}\n", f.lyap().support()));
        for l in f.levels() {
            feed(format!("{};", l.to_bits()));
        }
    }
    for (l, h) in domain.lo.iter().zip(&domain.hi) {
        feed(format!("box {} {}\n", l.to_bits(), h.to_bits()));
    }
    feed(format!("step {}", grid_step.to_bits()));
    let digest = hasher.finalize();
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Result of the per-cell determinism condition.
#[derive(Debug, Clone, PartialEq)]
pub enum DeterminismCheck {
    Pass,
    Fail { cell: RegionId, family: usize },
}

impl Partition {
    pub fn families(&self) -> &[SliceFamily] {
        &self.families
    }

    pub fn domain(&self) -> &Box {
        &self.domain
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn region(&self, idx: usize) -> &Region {
        &self.regions[idx]
    }

    pub fn region_index_of(&self, id: &RegionId) -> Option<usize> {
        self.regions.iter().position(|r| &r.id == id)
    }

    pub fn label_at(&self, flat: usize) -> &RegionId {
        &self.regions[self.labels[flat] as usize].id
    }

    /// Unordered adjacency over region-table indices.
    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        let (a, b) = (a as u32, b as u32);
        self.adjacency.contains(&(a.min(b), a.max(b)))
    }

    pub fn node_volume(&self) -> f64 {
        self.grid.node_volume()
    }

    pub fn region_volume(&self, idx: usize) -> f64 {
        self.regions[idx].mask.len() as f64 * self.node_volume()
    }

    /// Extended index of a point from its ψ-values alone; `None` marks the
    /// exterior.
    fn ext_of_point(&self, x: &DVector<f64>) -> Result<Option<Vec<u16>>> {
        let mut ext = Vec::with_capacity(self.families.len());
        for fam in &self.families {
            let g = fam.region_index(fam.lyap().eval_psi(x)?);
            if g == fam.slice_count() + 1 {
                return Ok(None);
            }
            ext.push(g as u16);
        }
        Ok(Some(ext))
    }

    /// Region of a point inside the domain box: extended index by ψ-value
    /// comparison, component by nearest grid point carrying that index.
    pub fn locate(&self, x: &DVector<f64>) -> Result<RegionId> {
        if !self.domain.contains(x) {
            return Err(Error::OutsideDomain);
        }
        let Some(ext) = self.ext_of_point(x)? else {
            return Ok(RegionId::Exterior);
        };
        if ext.iter().all(|&g| g == 0) {
            return Ok(RegionId::Core);
        }
        // Breadth-first ring search from the nearest grid node for a node
        // labeled with the same extended index.
        let start = self.grid.nearest(x);
        let mut visited = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            if let RegionId::Cell { ext: e, comp } = self.label_at(p) {
                if *e == ext {
                    return Ok(RegionId::Cell {
                        ext,
                        comp: *comp,
                    });
                }
            }
            for nb in self.grid.neighbors(p) {
                if visited.insert(nb) {
                    queue.push_back(nb);
                }
            }
        }
        // Index vector never materialized on the grid.
        Err(Error::OutsideDomain)
    }

    /// Like [`Partition::locate`], but classifies points beyond the top
    /// level as exterior even outside the domain box. `None` when the point
    /// left the box while still inside all level ranges (a modeling gap).
    pub fn classify(&self, x: &DVector<f64>) -> Result<Option<RegionId>> {
        if self.ext_of_point(x)?.is_none() {
            return Ok(Some(RegionId::Exterior));
        }
        if !self.domain.contains(x) {
            return Ok(None);
        }
        self.locate(x).map(Some)
    }

    /// Estimated Euclidean distance from a grid node to the level set
    /// `ψ_i = level` (first-order: |ψ−a| / ‖∇ψ‖).
    fn level_distance(&self, family: usize, level: f64, flat: usize) -> f64 {
        let x = self.grid.point(flat);
        let fam = &self.families[family];
        let psi = fam.lyap().eval_psi(&x).unwrap_or(f64::NAN);
        let grad = fam.lyap().gradient(&x).norm().max(1e-12);
        (psi - level).abs() / grad
    }

    /// Mask points of `region` within one grid step of `ψ_i = level`.
    fn exit_collar(&self, region: &Region, family: usize, level: f64) -> Vec<usize> {
        region
            .mask
            .iter()
            .copied()
            .filter(|&p| self.level_distance(family, level, p) <= self.grid.step)
            .collect()
    }

    /// Connectivity of a level-set collar under Moore adjacency (thin
    /// rasterized curves step diagonally).
    fn collar_connected(&self, collar: &[usize]) -> bool {
        if collar.len() <= 1 {
            return true;
        }
        let set: BTreeSet<usize> = collar.iter().copied().collect();
        let mut visited = BTreeSet::from([collar[0]]);
        let mut queue = VecDeque::from([collar[0]]);
        while let Some(p) = queue.pop_front() {
            for nb in self.grid.moore_neighbors(p) {
                if set.contains(&nb) && visited.insert(nb) {
                    queue.push_back(nb);
                }
            }
        }
        visited.len() == collar.len()
    }

    /// Per-cell exit-set connectivity: for a deterministic automaton, the
    /// part of each cell near its family-`i` exit level set must be one
    /// connected piece (otherwise the cell fans out on symbol `σ_i`).
    pub fn check_determinism(&self) -> DeterminismCheck {
        for region in &self.regions {
            let RegionId::Cell { ext, .. } = &region.id else {
                continue;
            };
            for (i, fam) in self.families.iter().enumerate() {
                let Some(level) = fam.exit_level(ext[i] as usize) else {
                    continue;
                };
                let collar = self.exit_collar(region, i, level);
                if !self.collar_connected(&collar) {
                    return DeterminismCheck::Fail {
                        cell: region.id.clone(),
                        family: fam.index(),
                    };
                }
            }
        }
        DeterminismCheck::Pass
    }

    /// For every extended cell and family: all member cells touch the exit
    /// level set, or none do. When this holds the cell automaton and the
    /// extended-cell automaton have matching outgoing behavior per location.
    pub fn check_bisimilarity_condition(&self) -> bool {
        let mut by_ext: BTreeMap<&Vec<u16>, Vec<&Region>> = BTreeMap::new();
        for region in &self.regions {
            if let RegionId::Cell { ext, .. } = &region.id {
                by_ext.entry(ext).or_default().push(region);
            }
        }
        for (ext, cells) in by_ext {
            for (i, fam) in self.families.iter().enumerate() {
                let Some(level) = fam.exit_level(ext[i] as usize) else {
                    continue;
                };
                let touching = cells
                    .iter()
                    .map(|r| !self.exit_collar(r, i, level).is_empty())
                    .collect::<Vec<_>>();
                if touching.iter().any(|&t| t) && !touching.iter().all(|&t| t) {
                    return false;
                }
            }
        }
        true
    }

    /// Refinability precondition: as many slice families as state dimensions.
    pub fn check_refinable_precondition(&self) -> bool {
        self.families.len() == self.domain.dim()
    }

    /// Cells too thin for reliable grid connectivity (under 3 grid cells
    /// across in some direction).
    pub fn thin_cell_count(&self) -> usize {
        self.regions
            .iter()
            .filter(|r| r.id.is_cell() && r.thin)
            .count()
    }

    /// Same partition with each extended cell's components merged into a
    /// single region (the extended-cell view used by the single-location
    /// variants of the predicate checks).
    pub fn extended_cell_view(&self) -> Partition {
        let mut regions: Vec<Region> = Vec::new();
        let mut merged: BTreeMap<Vec<u16>, Vec<usize>> = BTreeMap::new();
        for region in &self.regions {
            if let RegionId::Cell { ext, .. } = &region.id {
                merged
                    .entry(ext.clone())
                    .or_default()
                    .extend(region.mask.iter().copied());
            }
        }
        regions.push(make_region(
            RegionId::Core,
            self.regions[self.region_index_of(&RegionId::Core).unwrap()]
                .mask
                .clone(),
            &self.grid,
        ));
        for (ext, mask) in merged {
            regions.push(make_region(RegionId::Cell { ext, comp: 0 }, mask, &self.grid));
        }
        regions.push(make_region(
            RegionId::Exterior,
            self.regions[self.region_index_of(&RegionId::Exterior).unwrap()]
                .mask
                .clone(),
            &self.grid,
        ));
        let mut labels = vec![u32::MAX; self.grid.len()];
        for (ri, region) in regions.iter().enumerate() {
            for &flat in &region.mask {
                labels[flat] = ri as u32;
            }
        }
        let mut adjacency = BTreeSet::new();
        for flat in 0..self.grid.len() {
            let a = labels[flat];
            for nb in self.grid.neighbors(flat) {
                let b = labels[nb];
                if a != b {
                    adjacency.insert((a.min(b), a.max(b)));
                }
            }
        }
        Partition {
            families: self.families.clone(),
            domain: self.domain.clone(),
            grid: self.grid.clone(),
            labels,
            regions,
            adjacency,
            fingerprint: self.fingerprint.clone(),
        }
    }

    /// Run-length-encoded dump of the grid labels, row-major, one line per
    /// innermost row.
    pub fn dump_rle(&self) -> String {
        let mut out = String::new();
        out.push_str("# partition dump v1\n");
        out.push_str(&format!("# fingerprint: {}\n", self.fingerprint));
        out.push_str(&format!(
            "# dims: {}\n",
            self.grid
                .dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x")
        ));
        for (ri, region) in self.regions.iter().enumerate() {
            out.push_str(&format!("# label {ri}: {}\n", region.id));
        }
        let row = self.grid.dims[0];
        for start in (0..self.grid.len()).step_by(row) {
            let mut runs: Vec<(u32, usize)> = Vec::new();
            for flat in start..start + row {
                let l = self.labels[flat];
                match runs.last_mut() {
                    Some((label, count)) if *label == l => *count += 1,
                    _ => runs.push((l, 1)),
                }
            }
            let line: Vec<String> = runs
                .iter()
                .map(|(l, c)| format!("{l}x{c}"))
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::Box;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn family_1d(levels: Vec<f64>) -> SliceFamily {
        let lyap = QuadraticLyapunov::new(0, DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
        SliceFamily::new(0, lyap, levels, Orientation::Decreasing).unwrap()
    }

    fn partition_1d() -> Partition {
        build_partition(
            vec![family_1d(vec![1.0, 2.0, 4.0])],
            Box::new(vec![-2.5], vec![2.5]).unwrap(),
            0.01,
        )
        .unwrap()
    }

    fn quadrant_families() -> Vec<SliceFamily> {
        let l1 = QuadraticLyapunov::embedded(0, DMatrix::from_row_slice(1, 1, &[1.0]), vec![0], 2)
            .unwrap();
        let l2 = QuadraticLyapunov::embedded(1, DMatrix::from_row_slice(1, 1, &[1.0]), vec![1], 2)
            .unwrap();
        vec![
            SliceFamily::new(0, l1, vec![1.0, 2.0], Orientation::Decreasing).unwrap(),
            SliceFamily::new(1, l2, vec![1.0, 2.0], Orientation::Increasing).unwrap(),
        ]
    }

    fn partition_2d() -> Partition {
        build_partition(
            quadrant_families(),
            Box::new(vec![-2.5, -2.5], vec![2.5, 2.5]).unwrap(),
            0.025,
        )
        .unwrap()
    }

    #[test]
    fn outer_slice_splits_into_two_cells() {
        let p = partition_1d();
        let cells: Vec<&Region> = p
            .regions()
            .iter()
            .filter(|r| matches!(&r.id, RegionId::Cell { ext, .. } if ext == &vec![2u16]))
            .collect();
        assert_eq!(cells.len(), 2);
        // Independent 1D flood-fill oracle: scan the axis for sign-contiguous
        // intervals with psi in [2, 4).
        let mut intervals = 0;
        let mut inside = false;
        for j in 0..p.grid().len() {
            let x = p.grid().point(j)[0];
            let in_slice = (2.0..4.0).contains(&(x * x));
            if in_slice && !inside {
                intervals += 1;
            }
            inside = in_slice;
        }
        assert_eq!(intervals, 2);
    }

    #[test]
    fn quadrant_extended_cell_has_four_components() {
        let p = partition_2d();
        let comps = p
            .regions()
            .iter()
            .filter(|r| matches!(&r.id, RegionId::Cell { ext, .. } if ext == &vec![1u16, 1u16]))
            .count();
        assert_eq!(comps, 4);
    }

    #[test]
    fn connected_annulus_is_one_cell() {
        let lyap = QuadraticLyapunov::new(0, DMatrix::identity(2, 2)).unwrap();
        let fam = SliceFamily::new(0, lyap, vec![1.0, 2.0], Orientation::Decreasing).unwrap();
        let p = build_partition(
            vec![fam],
            Box::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap(),
            0.025,
        )
        .unwrap();
        let comps = p
            .regions()
            .iter()
            .filter(|r| matches!(&r.id, RegionId::Cell { ext, .. } if ext == &vec![1u16]))
            .count();
        assert_eq!(comps, 1);
    }

    #[test]
    fn locate_examples() {
        let p = partition_1d();
        let at = |x: f64| p.locate(&DVector::from_vec(vec![x])).unwrap();
        assert_eq!(
            at(1.7),
            RegionId::Cell {
                ext: vec![2],
                comp: 1
            }
        );
        assert_eq!(at(0.0), RegionId::Core);
        assert_eq!(at(2.4), RegionId::Exterior);
        assert!(matches!(
            p.locate(&DVector::from_vec(vec![3.0])),
            Err(Error::OutsideDomain)
        ));
    }

    #[test]
    fn every_grid_point_has_exactly_one_label() {
        let p = partition_2d();
        let total: usize = p.regions().iter().map(|r| r.mask.len()).sum();
        assert_eq!(total, p.grid().len());
        // Masks are disjoint by construction of the label array; double-check.
        let mut seen = vec![false; p.grid().len()];
        for r in p.regions() {
            for &f in &r.mask {
                assert!(!seen[f]);
                seen[f] = true;
            }
        }
    }

    #[test]
    fn locate_agrees_with_nearest_grid_label() {
        use rand::Rng;
        let p = partition_1d();
        let mut rng = crate::test_rng();
        let mut mismatches_far_from_levels = 0;
        for _ in 0..1000 {
            let x = rng.random_range(-2.5..2.5);
            let xv = DVector::from_vec(vec![x]);
            let located = p.locate(&xv).unwrap();
            let nearest_label = p.label_at(p.grid().nearest(&xv)).clone();
            if located != nearest_label {
                let near_level = [1.0f64, 2.0, 4.0]
                    .iter()
                    .any(|&a| (x * x - a).abs() / (2.0 * x.abs()).max(1e-9) <= p.grid().step());
                if !near_level {
                    mismatches_far_from_levels += 1;
                }
            }
        }
        assert_eq!(mismatches_far_from_levels, 0);
    }

    #[test]
    fn determinism_cellwise_pass_extended_fail() {
        let p = partition_1d();
        assert_eq!(p.check_determinism(), DeterminismCheck::Pass);
        let ext_view = p.extended_cell_view();
        assert!(matches!(
            ext_view.check_determinism(),
            DeterminismCheck::Fail { .. }
        ));
    }

    #[test]
    fn determinism_quadrant_cells_pass() {
        let p = partition_2d();
        assert_eq!(p.check_determinism(), DeterminismCheck::Pass);
    }

    #[test]
    fn bisimilarity_condition_holds_on_examples() {
        assert!(partition_1d().check_bisimilarity_condition());
        assert!(partition_2d().check_bisimilarity_condition());
    }

    #[test]
    fn bisimilarity_condition_fails_on_isolated_component() {
        // Fixture: give slice 2 a synthetic extra component far from the
        // exit level set, mimicking a component isolated from the collar.
        let mut p = partition_1d();
        let fake_mask: Vec<usize> = p.regions()[0].mask.iter().copied().take(3).collect();
        p.regions.push(Region {
            id: RegionId::Cell {
                ext: vec![2],
                comp: 2,
            },
            mask: fake_mask,
            representative: p.regions[0].mask[0],
            thin: true,
        });
        assert!(!p.check_bisimilarity_condition());
    }

    #[test]
    fn refinable_precondition_is_k_equals_n() {
        assert!(partition_1d().check_refinable_precondition());
        assert!(partition_2d().check_refinable_precondition());
        let lyap = QuadraticLyapunov::new(0, DMatrix::identity(2, 2)).unwrap();
        let fam = SliceFamily::new(0, lyap, vec![1.0, 2.0], Orientation::Decreasing).unwrap();
        let p = build_partition(
            vec![fam],
            Box::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap(),
            0.025,
        )
        .unwrap();
        assert!(!p.check_refinable_precondition());
    }

    #[test]
    fn refine_bisect_and_insert() {
        let fam = family_1d(vec![1.0, 2.0, 4.0]);
        let bisected = fam.refine(&Refinement::BisectAll).unwrap();
        let expect = [1.0, 2f64.sqrt(), 2.0, 2.0 * 2f64.sqrt(), 4.0];
        for (a, b) in bisected.levels().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let inserted = fam.refine(&Refinement::Insert(vec![3.0])).unwrap();
        assert_eq!(inserted.levels(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            fam.refine(&Refinement::Insert(vec![2.0])),
            Err(Error::BadLevelInsertion { .. })
        ));
        assert!(matches!(
            fam.refine(&Refinement::Insert(vec![5.0])),
            Err(Error::BadLevelInsertion { .. })
        ));
    }

    #[test]
    fn refinement_nests_cells() {
        let coarse = partition_1d();
        let fine = build_partition(
            vec![family_1d(vec![1.0, 2.0, 4.0])
                .refine(&Refinement::BisectAll)
                .unwrap()],
            Box::new(vec![-2.5], vec![2.5]).unwrap(),
            0.01,
        )
        .unwrap();
        for fr in fine.regions().iter().filter(|r| r.id.is_cell()) {
            let parents: BTreeSet<&RegionId> = fr
                .mask
                .iter()
                .map(|&flat| coarse.label_at(flat))
                .collect();
            assert_eq!(parents.len(), 1, "refined cell spans {parents:?}");
        }
    }

    #[test]
    fn grid_too_coarse_reports_slice() {
        // The gap (1.001, 1.01) falls between consecutive grid-node ψ values.
        let fam = family_1d(vec![1.001, 1.01, 4.0]);
        let err = build_partition(vec![fam], Box::new(vec![-2.5], vec![2.5]).unwrap(), 0.01);
        assert!(matches!(
            err,
            Err(Error::GridTooCoarse { family: 0, slice: 1 })
        ));
    }

    #[test]
    fn dump_rle_reconstructs_labels() {
        let p = partition_1d();
        let dump = p.dump_rle();
        let mut flat = 0usize;
        for line in dump.lines().filter(|l| !l.starts_with('#')) {
            for run in line.split_whitespace() {
                let (label, count) = run.split_once('x').unwrap();
                let label: u32 = label.parse().unwrap();
                let count: usize = count.parse().unwrap();
                for _ in 0..count {
                    assert_eq!(p.labels[flat], label);
                    flat += 1;
                }
            }
        }
        assert_eq!(flat, p.grid().len());
    }

    proptest! {
        // Even quadratic forms in 1D give symmetric cells: components come in
        // ± pairs, so each extended cell has an even component count.
        #[test]
        fn even_component_count_in_1d(a0 in 0.5f64..1.5, r1 in 1.2f64..2.0, r2 in 1.2f64..2.0) {
            let levels = vec![a0, a0 * r1, a0 * r1 * r2];
            let p = build_partition(
                vec![family_1d(levels.clone())],
                Box::new(vec![-3.0], vec![3.0]).unwrap(),
                0.01,
            ).unwrap();
            let mut counts: BTreeMap<Vec<u16>, usize> = BTreeMap::new();
            for rg in p.regions().iter() {
                if let RegionId::Cell { ext, .. } = &rg.id {
                    *counts.entry(ext.clone()).or_default() += 1;
                }
            }
            for (_, c) in counts {
                prop_assert_eq!(c % 2, 0);
            }
        }
    }
}
