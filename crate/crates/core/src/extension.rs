//! The skew products on `X × Z_2`.
//!
//! `S(x, z) = (Rx, z)` and `T(x, z) = (Rx, z + χ_E(x))`. Along an orbit
//! segment that stays inside one tower the level of `T^n(x, z)` is `z` plus
//! the number of marker floors visited, so every orbit question about
//! `A = X_1 × {0}` reduces to counting markers in `[f, f + n)`.

use std::collections::BTreeSet;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tower::{marker_floorset, x1_floorset, FloorSet, StageTable, TowerError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtensionError {
    #[error(transparent)]
    Tower(#[from] TowerError),
    #[error("orbit segment from floor {start} of length {len} leaves tower {stage}")]
    SegmentEscapesTower {
        stage: u32,
        start: BigUint,
        len: BigUint,
    },
    #[error("set at stage {set_stage} is finer than the cocycle context at stage {ctx_stage}")]
    StageMismatch { set_stage: u32, ctx_stage: u32 },
    #[error("lemma windows for j = {j} need stage 2j = {stage} to carry markers")]
    NotAMarkerIndex { j: u32, stage: u32 },
}

pub type Result<T> = std::result::Result<T, ExtensionError>;

/// A subset of `X × Z_2`, both levels written at the same stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeveledSet {
    level0: FloorSet,
    level1: FloorSet,
}

impl LeveledSet {
    pub fn new(level0: FloorSet, level1: FloorSet, table: &StageTable) -> Result<Self> {
        let stage = level0.stage().max(level1.stage());
        Ok(Self {
            level0: level0.refine(stage, table)?,
            level1: level1.refine(stage, table)?,
        })
    }

    /// `A = X_1 × {0}` at `stage`.
    pub fn base_set(table: &StageTable, stage: u32) -> Result<Self> {
        Ok(Self {
            level0: x1_floorset(table, stage)?,
            level1: FloorSet::empty(stage),
        })
    }

    pub fn stage(&self) -> u32 {
        self.level0.stage()
    }

    pub fn level0(&self) -> &FloorSet {
        &self.level0
    }

    pub fn level1(&self) -> &FloorSet {
        &self.level1
    }

    pub fn level(&self, z: bool) -> &FloorSet {
        if z {
            &self.level1
        } else {
            &self.level0
        }
    }

    pub fn refine(&self, stage: u32, table: &StageTable) -> Result<Self> {
        Ok(Self {
            level0: self.level0.refine(stage, table)?,
            level1: self.level1.refine(stage, table)?,
        })
    }

    pub fn measure(&self, table: &StageTable) -> Result<BigRational> {
        Ok(self.level0.measure(table)? + self.level1.measure(table)?)
    }

    pub fn x_projection(&self, table: &StageTable) -> Result<FloorSet> {
        Ok(self.level0.union(&self.level1, table)?)
    }

    pub fn intersect(&self, other: &LeveledSet, table: &StageTable) -> Result<LeveledSet> {
        LeveledSet::new(
            self.level0.intersect(&other.level0, table)?,
            self.level1.intersect(&other.level1, table)?,
            table,
        )
    }

    pub fn same_set(&self, other: &LeveledSet, table: &StageTable) -> Result<bool> {
        Ok(self.level0.same_set(&other.level0, table)?
            && self.level1.same_set(&other.level1, table)?)
    }
}

/// `E ∩ X_J` for a fixed stage `J`, plus the fragments of `X_1` there.
#[derive(Debug, Clone)]
pub struct CocycleContext {
    stage: u32,
    height: BigUint,
    width: BigRational,
    e_indices: Vec<BigUint>,
    fragments: Vec<BigUint>,
    // u64 mirror of the two lists when the tower height fits.
    fast: Option<(Vec<u64>, Vec<u64>)>,
}

impl CocycleContext {
    pub fn new(table: &StageTable, stage: u32) -> Result<Self> {
        let height = table.height(stage)?.clone();
        let width = table.width(stage)?.clone();
        let mut e = FloorSet::empty(stage);
        for j in (1..).take_while(|j| 2 * j < stage) {
            if table.is_marker_stage(2 * j) {
                let m = marker_floorset(table, j)?.refine(stage, table)?;
                e = e.union(&m, table)?;
            }
        }
        let e_indices = e.indices().to_vec();
        let fragments = x1_floorset(table, stage)?.indices().to_vec();
        let fast = height.to_u64().map(|_| {
            (
                e_indices.iter().map(|x| x.to_u64().unwrap()).collect(),
                fragments.iter().map(|x| x.to_u64().unwrap()).collect(),
            )
        });
        Ok(Self {
            stage,
            height,
            width,
            e_indices,
            fragments,
            fast,
        })
    }

    /// The first stage at which every fragment of `X_1` can run `n_max`
    /// steps without leaving the tower.
    pub fn for_orbit(table: &StageTable, n_max: &BigUint) -> Result<Self> {
        Self::new(table, orbit_stage(table, n_max)?)
    }

    pub fn stage(&self) -> u32 {
        self.stage
    }

    pub fn height(&self) -> &BigUint {
        &self.height
    }

    pub fn e_indices(&self) -> &[BigUint] {
        &self.e_indices
    }

    /// Floors of `X_1` at this stage, sorted.
    pub fn fragments(&self) -> &[BigUint] {
        &self.fragments
    }

    pub fn fragment_width(&self) -> &BigRational {
        &self.width
    }

    pub(crate) fn fast(&self) -> Option<(&[u64], &[u64])> {
        self.fast
            .as_ref()
            .map(|(e, x)| (e.as_slice(), x.as_slice()))
    }

    fn escapes(&self, f: &BigUint, n: &BigUint) -> ExtensionError {
        ExtensionError::SegmentEscapesTower {
            stage: self.stage,
            start: f.clone(),
            len: n.clone(),
        }
    }

    /// Parity of `|E ∩ [f, f + n)|`, i.e. the level shift of `T^n` on floor `f`.
    pub fn parity(&self, f: &BigUint, n: &BigUint) -> Result<bool> {
        let end = f + n;
        if end >= self.height {
            return Err(self.escapes(f, n));
        }
        if let (Some((e, _)), Some(a), Some(b)) = (&self.fast, f.to_u64(), end.to_u64()) {
            return Ok(count_in(e, a, b) % 2 == 1);
        }
        let lo = self.e_indices.partition_point(|e| e < f);
        let hi = self.e_indices.partition_point(|e| *e < end);
        Ok((hi - lo) % 2 == 1)
    }

    /// Number of `X_1` fragments whose `T^n` level shift is even.
    pub fn even_fragments(&self, n: &BigUint) -> Result<usize> {
        let Some(top) = self.fragments.last() else {
            return Ok(0);
        };
        if top + n >= self.height {
            return Err(self.escapes(top, n));
        }
        match (&self.fast, n.to_u64()) {
            (Some((e, x)), Some(n)) => Ok(x
                .iter()
                .filter(|&&f| count_in(e, f, f + n).is_multiple_of(2))
                .count()),
            _ => {
                let mut even = 0;
                for f in &self.fragments {
                    if !self.parity(f, n)? {
                        even += 1;
                    }
                }
                Ok(even)
            }
        }
    }
}

fn count_in(sorted: &[u64], lo: u64, hi: u64) -> usize {
    sorted.partition_point(|&e| e < hi) - sorted.partition_point(|&e| e < lo)
}

/// Smallest stage `J` with `max(X_1 at J) + n_max < h_J`.
pub fn orbit_stage(table: &StageTable, n_max: &BigUint) -> Result<u32> {
    let mut top = BigUint::zero();
    let mut stage = 1;
    loop {
        if &top + n_max < *table.height(stage)? {
            return Ok(stage);
        }
        if stage >= table.j_max() {
            return Err(TowerError::StageOverflow {
                j_max: table.j_max(),
            }
            .into());
        }
        top += table.offsets(stage)?.last().expect("columns");
        stage += 1;
    }
}

/// `cocycle_parity`: free-function spelling of [`CocycleContext::parity`].
pub fn cocycle_parity(f: &BigUint, n: &BigUint, ctx: &CocycleContext) -> Result<bool> {
    ctx.parity(f, n)
}

pub fn s_orbit(a: &LeveledSet, n: &BigUint, table: &StageTable) -> Result<LeveledSet> {
    LeveledSet::new(a.level0.shift(n, table)?, a.level1.shift(n, table)?, table)
}

pub fn t_orbit(
    a: &LeveledSet,
    n: &BigUint,
    ctx: &CocycleContext,
    table: &StageTable,
) -> Result<LeveledSet> {
    if a.stage() > ctx.stage {
        return Err(ExtensionError::StageMismatch {
            set_stage: a.stage(),
            ctx_stage: ctx.stage,
        });
    }
    let a = a.refine(ctx.stage, table)?;
    let mut out = [Vec::new(), Vec::new()];
    for z in [false, true] {
        for f in a.level(z).indices() {
            let flip = ctx.parity(f, n)?;
            out[(z ^ flip) as usize].push(f + n);
        }
    }
    let [mut l0, mut l1] = out;
    l0.sort_unstable();
    l1.sort_unstable();
    Ok(LeveledSet {
        level0: FloorSet::new(ctx.stage, l0, table)?,
        level1: FloorSet::new(ctx.stage, l1, table)?,
    })
}

/// `μ(S^n A ∩ T^n A)`: the x-parts agree, so this is the mass of the
/// fragments with even level shift.
pub fn overlap_measure(n: &BigUint, ctx: &CocycleContext) -> Result<BigRational> {
    let even = ctx.even_fragments(n)?;
    Ok(&ctx.width * BigRational::from_integer(BigInt::from(even)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyMode {
    Exhaustive,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    /// Overlap expected to be `0`.
    Disjoint,
    /// Overlap expected to be `μ(A)`.
    Coincide,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WindowReport {
    pub j: u32,
    pub expect: WindowKind,
    /// Open interval `(lo, hi)`.
    pub window: [String; 2],
    pub mode: VerifyMode,
    pub violations: Vec<String>,
    pub checked_count: u64,
}

impl WindowReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Lemma2Report {
    pub j: u32,
    /// `false` for diagnostic runs whose outcome is recorded but not claimed.
    pub asserted: bool,
    pub context_stage: u32,
    pub windows: Vec<WindowReport>,
    /// `2j h_{2j} - max(X_1 at stage 2j)`: past this point the top fragment
    /// of `X_1` has crossed both markers of its column.
    pub exact_disjoint_upper: String,
}

impl Lemma2Report {
    pub fn passed(&self) -> bool {
        self.windows.iter().all(WindowReport::passed)
    }
}

pub const DEFAULT_GRID_POINTS: usize = 10_000;

/// Deterministic probe points strictly inside `(lo, hi)`.
pub fn window_points(lo: &BigUint, hi: &BigUint, mode: VerifyMode, grid: usize) -> Vec<BigUint> {
    let first = lo + 1u32;
    if hi <= &first {
        return Vec::new();
    }
    let last = hi - 1u32;
    match mode {
        VerifyMode::Exhaustive => {
            let mut out = Vec::new();
            let mut i = first;
            while i <= last {
                out.push(i.clone());
                i += 1u32;
            }
            out
        }
        VerifyMode::Sampled => {
            let span = &last - &first;
            let mut pts = BTreeSet::new();
            let g = grid.max(2) as u64;
            for k in 0..g {
                pts.insert(&first + &span * k / (g - 1));
            }
            // first and last two interior points
            pts.insert(first.clone());
            pts.insert(last.clone());
            if span >= BigUint::one() {
                pts.insert(&first + 1u32);
                pts.insert(&last - 1u32);
            }
            pts.into_iter().collect()
        }
    }
}

fn check_window(
    ctx: &CocycleContext,
    j: u32,
    lo: &BigUint,
    hi: &BigUint,
    expect: WindowKind,
    mode: VerifyMode,
    grid: usize,
) -> Result<WindowReport> {
    let points = window_points(lo, hi, mode, grid);
    let want = match expect {
        WindowKind::Disjoint => 0,
        WindowKind::Coincide => ctx.fragments.len(),
    };
    let outcomes: Vec<Result<Option<BigUint>>> = points
        .par_iter()
        .map(|n| {
            let even = ctx.even_fragments(n)?;
            Ok((even != want).then(|| n.clone()))
        })
        .collect();
    let mut violations = Vec::new();
    for o in outcomes {
        if let Some(n) = o? {
            violations.push(n);
        }
    }
    violations.sort();
    Ok(WindowReport {
        j,
        expect,
        window: [lo.to_string(), hi.to_string()],
        mode,
        violations: violations.iter().map(|n| n.to_string()).collect(),
        checked_count: points.len() as u64,
    })
}

/// Checks `S^i A ∩ T^i A = ∅` for `h_{2j} < i < 2j h_{2j}` and
/// `S^i A = T^i A` for `h_{2j+1} < i < 2j h_{2j+1}`.
pub fn verify_lemma2(
    table: &StageTable,
    j: u32,
    mode: VerifyMode,
    grid: usize,
) -> Result<Lemma2Report> {
    let stage = 2 * j;
    if j == 0 || !table.is_marker_stage(stage) {
        return Err(ExtensionError::NotAMarkerIndex { j, stage });
    }
    let h_even = table.height(stage)?;
    let h_odd = table.height(stage + 1)?;
    let windows = [
        (h_even.clone(), h_even * stage, WindowKind::Disjoint),
        (h_odd.clone(), h_odd * stage, WindowKind::Coincide),
    ];
    let ctx = CocycleContext::for_orbit(table, &windows[1].1)?;
    let reports = windows
        .iter()
        .map(|(lo, hi, kind)| check_window(&ctx, j, lo, hi, *kind, mode, grid))
        .collect::<Result<Vec<_>>>()?;

    let top = x1_floorset(table, stage)?
        .indices()
        .last()
        .cloned()
        .unwrap_or_default();
    Ok(Lemma2Report {
        j,
        asserted: j >= 2,
        context_stage: ctx.stage,
        windows: reports,
        exact_disjoint_upper: (h_even * stage - top).to_string(),
    })
}

/// The support of the involution `V`:
/// `⋃_j ⋃_{i = h_{2j}+1}^{2j h_{2j}} R^i E_{2j}` inside tower `stage`.
pub fn involution_support(table: &StageTable, stage: u32) -> Result<FloorSet> {
    let mut support = FloorSet::empty(stage);
    for j in (1..).take_while(|j| 2 * j < stage) {
        let marker = 2 * j;
        if !table.is_marker_stage(marker) {
            continue;
        }
        let st = table.stage(marker)?;
        let h = &st.height;
        let mut idx = Vec::new();
        for o in &st.offsets {
            let mut i = o + h + 1u32;
            let end = o + h * marker;
            while i <= end {
                idx.push(i.clone());
                i += 1u32;
            }
        }
        let part = FloorSet::new(marker + 1, idx, table)?.refine(stage, table)?;
        support = support.union(&part, table)?;
    }
    Ok(support)
}

/// `V(x, z) = (x, z + χ_D(x))` with `D` the involution support.
pub fn apply_involution(
    set: &LeveledSet,
    support: &FloorSet,
    table: &StageTable,
) -> Result<LeveledSet> {
    if set.stage() > support.stage() {
        return Err(ExtensionError::StageMismatch {
            set_stage: set.stage(),
            ctx_stage: support.stage(),
        });
    }
    let set = set.refine(support.stage(), table)?;
    let in0 = set.level0.intersect(support, table)?;
    let in1 = set.level1.intersect(support, table)?;
    let out0 = set.level0.subtract(support, table)?;
    let out1 = set.level1.subtract(support, table)?;
    LeveledSet::new(out0.union(&in1, table)?, out1.union(&in0, table)?, table)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConjugacyReport {
    pub n_max: u64,
    pub context_stage: u32,
    pub checked: u64,
    pub mismatches: Vec<u64>,
}

impl ConjugacyReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares `V S V (T^n A)` with `T^{n+1} A` for `0 <= n <= n_max`.
pub fn verify_conjugacy(table: &StageTable, n_max: u64) -> Result<ConjugacyReport> {
    let ctx = CocycleContext::for_orbit(table, &BigUint::from(n_max + 1))?;
    let support = involution_support(table, ctx.stage)?;
    let a = LeveledSet::base_set(table, ctx.stage)?;
    let one = BigUint::one();
    let outcomes: Vec<Result<Option<u64>>> = (0..=n_max)
        .into_par_iter()
        .map(|n| {
            let orbit = t_orbit(&a, &BigUint::from(n), &ctx, table)?;
            let lhs = apply_involution(&orbit, &support, table)?;
            let lhs = s_orbit(&lhs, &one, table)?;
            let lhs = apply_involution(&lhs, &support, table)?;
            let rhs = t_orbit(&a, &BigUint::from(n + 1), &ctx, table)?;
            Ok((!lhs.same_set(&rhs, table)?).then_some(n))
        })
        .collect();
    let mut mismatches = Vec::new();
    for o in outcomes {
        if let Some(n) = o? {
            mismatches.push(n);
        }
    }
    Ok(ConjugacyReport {
        n_max,
        context_stage: ctx.stage,
        checked: n_max + 1,
        mismatches,
    })
}
