//! The double ergodic averages `a_N = (1/N) Σ_{n ≤ N} ∫ S^n f · T^n f`.
//!
//! The overlap `μ(S^n A ∩ T^n A)` only changes when some fragment of `X_1`
//! crosses a marker floor, so it is piecewise constant in `n` with
//! breakpoints `e − f + 1`. The sweep sorts those breakpoints once and the
//! running sums advance plateau by plateau.

use std::io::{self, Write};

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::extension::{CocycleContext, ExtensionError};
use crate::suspension::{
    cylinder_constant, pair_integrand, SuspensionError, SuspensionKind, SuspensionModel,
};
use crate::tower::{StageTable, TowerError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AveragesError {
    #[error(transparent)]
    Extension(#[from] ExtensionError),
    #[error(transparent)]
    Suspension(#[from] SuspensionError),
    #[error("tower {stage} is too tall for the 64-bit sweep")]
    IndexOverflow { stage: u32 },
    #[error("milestones up to j = {j_top} need stage {needed}, only {j_max} materialized")]
    NotEnoughStages { j_top: u32, needed: u32, j_max: u32 },
    #[error("checkpoint {n} outside the swept range [1, {n_max}]")]
    CheckpointOutOfRange { n: u64, n_max: u64 },
}

impl From<TowerError> for AveragesError {
    fn from(e: TowerError) -> Self {
        AveragesError::Extension(e.into())
    }
}

pub type Result<T> = std::result::Result<T, AveragesError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Milestone {
    /// `m` in `N_m`.
    pub index: u32,
    pub j: u32,
    pub n: u64,
}

/// `N_{4j} = h_{2j}`, `N_{4j+1} = 2j h_{2j}`, `N_{4j+2} = h_{2j+1}`,
/// `N_{4j+3} = 2j h_{2j+1}` for `1 <= j <= j_top`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MilestoneSequence {
    pub j_top: u32,
    pub entries: Vec<Milestone>,
}

impl MilestoneSequence {
    pub fn new(table: &StageTable, j_top: u32) -> Result<Self> {
        let needed = 2 * j_top + 1;
        if needed > table.j_max() {
            return Err(AveragesError::NotEnoughStages {
                j_top,
                needed,
                j_max: table.j_max(),
            });
        }
        let mut entries = Vec::with_capacity(4 * j_top as usize);
        for j in 1..=j_top {
            let even = to_u64(table.height(2 * j)?, 2 * j)?;
            let odd = to_u64(table.height(2 * j + 1)?, 2 * j + 1)?;
            let values = [even, even * 2 * j as u64, odd, odd * 2 * j as u64];
            for (k, n) in values.into_iter().enumerate() {
                entries.push(Milestone {
                    index: 4 * j + k as u32,
                    j,
                    n,
                });
            }
        }
        Ok(Self { j_top, entries })
    }

    pub fn get(&self, index: u32) -> Option<u64> {
        self.entries.iter().find(|m| m.index == index).map(|m| m.n)
    }

    pub fn last(&self) -> u64 {
        self.entries.last().map_or(0, |m| m.n)
    }

    /// Smallest `N_{m+1} / N_m`.
    pub fn min_ratio(&self) -> f64 {
        self.entries
            .windows(2)
            .map(|w| w[1].n as f64 / w[0].n as f64)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_increasing(&self) -> bool {
        self.entries.windows(2).all(|w| w[0].n < w[1].n)
    }
}

fn to_u64(v: &BigUint, stage: u32) -> Result<u64> {
    v.to_u64().ok_or(AveragesError::IndexOverflow { stage })
}

/// `n ↦ μ(S^n A ∩ T^n A)` on `[0, n_max]` as a step function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapProfile {
    pub stage: u32,
    pub fragments: u64,
    pub width: BigRational,
    pub n_max: u64,
    /// `(first n, number of fragments with even level shift)`, starting at `n = 0`.
    pub breakpoints: Vec<(u64, u64)>,
}

impl OverlapProfile {
    pub fn even_count(&self, n: u64) -> u64 {
        let i = self.breakpoints.partition_point(|&(start, _)| start <= n);
        self.breakpoints[i - 1].1
    }

    pub fn overlap(&self, n: u64) -> BigRational {
        self.measure_of(self.even_count(n))
    }

    pub fn measure_of(&self, count: u64) -> BigRational {
        &self.width * BigRational::from_integer(BigInt::from(count))
    }
}

/// Builds the overlap step function on `[0, n_max]` from the marker
/// crossings of every fragment of `X_1`.
pub fn event_sweep(table: &StageTable, n_max: u64) -> Result<OverlapProfile> {
    let ctx = CocycleContext::for_orbit(table, &BigUint::from(n_max))?;
    let stage = ctx.stage();
    let (markers, fragments) = ctx.fast().ok_or(AveragesError::IndexOverflow { stage })?;
    if n_max >= 1 << 62 {
        return Err(AveragesError::IndexOverflow { stage });
    }

    // Event key: (n << 1) | 1 when the fragment's level shift turns odd.
    let per_fragment: Vec<Vec<u64>> = fragments
        .par_iter()
        .map(|&f| {
            let lo = markers.partition_point(|&e| e < f);
            let hi = markers.partition_point(|&e| e < f + n_max);
            markers[lo..hi]
                .iter()
                .enumerate()
                .map(|(k, &e)| ((e - f + 1) << 1) | (k % 2 == 0) as u64)
                .collect()
        })
        .collect();
    let mut events: Vec<u64> = per_fragment.into_iter().flatten().collect();
    events.par_sort_unstable();

    let total = fragments.len() as u64;
    let mut breakpoints = vec![(0u64, total)];
    let mut even = total as i64;
    let mut i = 0;
    while i < events.len() {
        let n = events[i] >> 1;
        while i < events.len() && events[i] >> 1 == n {
            even += if events[i] & 1 == 1 { -1 } else { 1 };
            i += 1;
        }
        let even = even as u64;
        if breakpoints.last().map(|b| b.1) != Some(even) {
            breakpoints.push((n, even));
        }
    }

    Ok(OverlapProfile {
        stage,
        fragments: total,
        width: ctx.fragment_width().clone(),
        n_max,
        breakpoints,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub n: u64,
    pub overlap: BigRational,
    pub integrand: f64,
    pub a_n: f64,
    pub is_milestone: bool,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Geometric grid `1, ⌈ratio⌉, ...` up to `n_max`, merged with the
/// milestones and `n_max` itself.
pub fn geometric_checkpoints(n_max: u64, ratio: f64, milestones: &MilestoneSequence) -> Vec<u64> {
    let mut out = Vec::new();
    if n_max == 0 {
        return out;
    }
    let mut n = 1u64;
    while n < n_max {
        out.push(n);
        let next = (n as f64 * ratio).floor() as u64;
        n = next.max(n + 1);
    }
    out.push(n_max);
    out.extend(
        milestones
            .entries
            .iter()
            .map(|m| m.n)
            .filter(|&m| m <= n_max),
    );
    out.sort_unstable();
    out.dedup();
    out
}

/// `a_n` at every checkpoint; cost is linear in breakpoints plus checkpoints.
pub fn average_series(
    model: &SuspensionModel,
    profile: &OverlapProfile,
    checkpoints: &[u64],
    milestones: &MilestoneSequence,
) -> Result<Vec<SeriesPoint>> {
    let mut cache: Vec<Option<f64>> = vec![None; profile.fragments as usize + 1];
    let mut integrand = |count: u64| -> Result<f64> {
        if let Some(v) = cache[count as usize] {
            return Ok(v);
        }
        let v = pair_integrand(model, &profile.measure_of(count))?;
        cache[count as usize] = Some(v);
        Ok(v)
    };

    let mut sorted = checkpoints.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let bps = &profile.breakpoints;
    let mut sum = CompensatedSum::default();
    let mut done = 0u64; // sum covers n in [1, done]
    let mut active = 0usize;
    let mut out = Vec::with_capacity(sorted.len());
    for &target in &sorted {
        if target == 0 || target > profile.n_max {
            return Err(AveragesError::CheckpointOutOfRange {
                n: target,
                n_max: profile.n_max,
            });
        }
        while active + 1 < bps.len() && bps[active + 1].0 <= target {
            let next = bps[active + 1].0;
            let len = (next - 1).saturating_sub(done);
            if len > 0 {
                sum.add(len as f64 * integrand(bps[active].1)?);
                done = next - 1;
            }
            active += 1;
        }
        let value = integrand(bps[active].1)?;
        sum.add((target - done) as f64 * value);
        done = target;
        out.push(SeriesPoint {
            n: target,
            overlap: profile.measure_of(bps[active].1),
            integrand: value,
            a_n: sum.value() / target as f64,
            is_milestone: milestones.entries.iter().any(|m| m.n == target),
        });
    }
    Ok(out)
}

pub fn write_series_csv<W: Write>(points: &[SeriesPoint], mut w: W) -> io::Result<()> {
    writeln!(w, "n,overlap_num,overlap_den,integrand,a_n,is_milestone")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.n,
            p.overlap.numer(),
            p.overlap.denom(),
            p.integrand,
            p.a_n,
            p.is_milestone
        )?;
    }
    Ok(())
}

pub const BOUND_TOLERANCE: f64 = 1e-9;
/// Floating-point slack on the `[c², c]` bracket.
pub const BRACKET_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    /// `a_{N_{4j+1}} <= c² + c/(2j)`.
    Upper,
    /// `a_{N_{4j+3}} >= c (1 − 1/(2j))`.
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub j: u32,
    pub milestone: u32,
    pub n: u64,
    pub kind: BoundKind,
    pub a_n: f64,
    pub bound: f64,
    pub pass: bool,
    pub asserted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MilestoneValue {
    pub m: u32,
    pub j: u32,
    pub n: u64,
    pub a_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceReport {
    pub model: SuspensionKind,
    pub c: f64,
    pub c_squared: f64,
    pub status: String,
    pub milestones: Vec<MilestoneValue>,
    pub min_milestone_ratio: f64,
    pub bounds: Vec<BoundCheck>,
    /// Smallest asserted `a_{N_{4j+1}}`.
    pub liminf: Option<f64>,
    /// Largest asserted `a_{N_{4j+3}}`.
    pub limsup: Option<f64>,
    pub gap: Option<f64>,
    /// `(c − c²)(1 − 1/j_top)`.
    pub gap_bound: f64,
    pub gap_pass: Option<bool>,
    pub observed_min: f64,
    pub observed_max: f64,
    /// Every emitted `a_n` and integrand lies in `[c², c]`.
    pub all_within_bracket: bool,
    pub points: usize,
}

impl DivergenceReport {
    pub fn passed(&self) -> bool {
        self.bounds.iter().filter(|b| b.asserted).all(|b| b.pass) && self.gap_pass != Some(false)
    }
}

pub const INSUFFICIENT: &str = "insufficient stages for divergence";

pub fn divergence_report(
    series: &[SeriesPoint],
    milestones: &MilestoneSequence,
    model: &SuspensionModel,
    table: &StageTable,
) -> DivergenceReport {
    let c = cylinder_constant(model);
    let c2 = c * c;
    let a_at = |n: u64| series.iter().find(|p| p.n == n).map(|p| p.a_n);

    let values: Vec<MilestoneValue> = milestones
        .entries
        .iter()
        .filter_map(|m| {
            a_at(m.n).map(|a_n| MilestoneValue {
                m: m.index,
                j: m.j,
                n: m.n,
                a_n,
            })
        })
        .collect();

    let marked: Vec<u32> = (1..=milestones.j_top)
        .filter(|j| table.is_marker_stage(2 * j))
        .collect();
    let mut bounds = Vec::new();
    for &j in &marked {
        let half = 2.0 * j as f64;
        let checks = [
            (4 * j + 1, BoundKind::Upper, c2 + c / half),
            (4 * j + 3, BoundKind::Lower, c * (1.0 - 1.0 / half)),
        ];
        for (m, kind, bound) in checks {
            let Some(n) = milestones.get(m) else { continue };
            let Some(a_n) = a_at(n) else { continue };
            let pass = match kind {
                BoundKind::Upper => a_n <= bound + BOUND_TOLERANCE,
                BoundKind::Lower => a_n >= bound - BOUND_TOLERANCE,
            };
            bounds.push(BoundCheck {
                j,
                milestone: m,
                n,
                kind,
                a_n,
                bound,
                pass,
                asserted: j >= 2,
            });
        }
    }

    let asserted = |kind| {
        bounds
            .iter()
            .filter(move |b: &&BoundCheck| b.asserted && b.kind == kind)
            .map(|b| b.a_n)
    };
    let sufficient = marked.len() >= 2;
    let liminf = asserted(BoundKind::Upper).reduce(f64::min);
    let limsup = asserted(BoundKind::Lower).reduce(f64::max);
    let gap = match (sufficient, liminf, limsup) {
        (true, Some(lo), Some(hi)) => Some(hi - lo),
        _ => None,
    };
    let j_top = milestones.j_top.max(1) as f64;
    let gap_bound = (c - c2) * (1.0 - 1.0 / j_top);

    let (observed_min, observed_max) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.a_n), hi.max(p.a_n))
        });

    let (lo, hi) = (c2.min(c) - BRACKET_SLACK, c2.max(c) + BRACKET_SLACK);
    let all_within_bracket = series
        .iter()
        .all(|p| (lo..=hi).contains(&p.a_n) && (lo..=hi).contains(&p.integrand));

    DivergenceReport {
        model: model.kind(),
        c,
        c_squared: c2,
        status: if sufficient { "ok" } else { INSUFFICIENT }.to_string(),
        milestones: values,
        min_milestone_ratio: milestones.min_ratio(),
        bounds,
        liminf,
        limsup,
        gap,
        gap_bound,
        gap_pass: gap.map(|g| g >= gap_bound - BOUND_TOLERANCE),
        observed_min,
        observed_max,
        all_within_bracket,
        points: series.len(),
    }
}
