//! Rank-one cutting and stacking.
//!
//! Stage `j` is a tower of `h_j` floors of width `w_j`, floor `0` being the
//! base `E_j`. Passing to stage `j + 1` cuts the tower into `r_j` columns,
//! stacks `s_j(i)` spacer floors above column `i` and restacks the columns
//! left to right, so floor `f` of stage `j` becomes floors `o_j(i) + f` of
//! stage `j + 1`. The map `R` moves every floor one step up.
//!
//! Sets are unions of full floors of a single stage. Heights and indices are
//! arbitrary precision and measures are exact rationals.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TowerError {
    #[error("j_max must be at least 1")]
    EmptyTable,
    #[error("stage {stage}: cut count r = {cuts} is below 2")]
    DegenerateCut { stage: u32, cuts: u32 },
    #[error("stage {stage}: got {got} spacer counts for {cuts} columns")]
    SpacerCount { stage: u32, cuts: u32, got: usize },
    #[error("marker stage {stage} must be a positive even number")]
    InvalidMarkerStage { stage: u32 },
    #[error(
        "marker stage {stage}: column {column} has {spacers} spacers, at least {required} required"
    )]
    MarkerSpacerBound {
        stage: u32,
        column: usize,
        spacers: BigUint,
        required: BigUint,
    },
    #[error("stage {stage} is not materialized (j_max = {j_max})")]
    StageNotMaterialized { stage: u32, j_max: u32 },
    #[error("cannot refine from stage {from} down to stage {to}")]
    RefineBackwards { from: u32, to: u32 },
    #[error("stage {stage}: floor index {index} outside tower of height {height}")]
    IndexOutOfRange {
        stage: u32,
        index: BigUint,
        height: BigUint,
    },
    #[error("shifted set does not fit in any tower up to j_max = {j_max}; raise j_max")]
    StageOverflow { j_max: u32 },
    #[error("stage {stage} is not a marker stage")]
    NotAMarkerStage { stage: u32 },
    #[error("marker floor {index} at stage {stage} is not a spacer floor")]
    MarkerOutsideSpacers { stage: u32, index: BigUint },
}

pub type Result<T> = std::result::Result<T, TowerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// `r_j = max(j, 2)`, `s_j(i) = j h_j`.
    #[default]
    Basic,
    /// Staircase spacers `s_j(i) = j h_j + i` off the marker stages.
    StaircaseMixing,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Basic => "basic",
            Preset::StaircaseMixing => "staircase-mixing",
        }
    }
}

/// The cutting schedule together with the stages that carry markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstructionParams {
    pub preset: Preset,
    /// Even stage numbers `2j` whose spacers carry the two marker floors.
    pub marker_stages: BTreeSet<u32>,
    pub j_max: u32,
    pub cut_overrides: BTreeMap<u32, u32>,
    pub spacer_overrides: BTreeMap<u32, Vec<BigUint>>,
}

impl ConstructionParams {
    /// Preset schedule with markers on every even stage below `j_max`.
    pub fn new(preset: Preset, j_max: u32) -> Self {
        Self {
            preset,
            marker_stages: all_even_stages(j_max),
            j_max,
            cut_overrides: BTreeMap::new(),
            spacer_overrides: BTreeMap::new(),
        }
    }

    pub fn with_markers(mut self, stages: impl IntoIterator<Item = u32>) -> Self {
        self.marker_stages = stages.into_iter().collect();
        self
    }

    pub fn is_marker_stage(&self, stage: u32) -> bool {
        self.marker_stages.contains(&stage)
    }

    /// `r_j`. The preset uses `max(j, 2)` since a single column is no cut.
    pub fn cuts(&self, j: u32) -> u32 {
        self.cut_overrides.get(&j).copied().unwrap_or(j.max(2))
    }

    pub fn spacers(&self, j: u32, height: &BigUint) -> Vec<BigUint> {
        if let Some(s) = self.spacer_overrides.get(&j) {
            return s.clone();
        }
        let base = height * j;
        let r = self.cuts(j);
        match self.preset {
            Preset::Basic => vec![base; r as usize],
            Preset::StaircaseMixing if self.is_marker_stage(j) => vec![base; r as usize],
            Preset::StaircaseMixing => (1..=r).map(|i| &base + i).collect(),
        }
    }
}

/// Even stages `2, 4, ...` strictly below `j_max`, i.e. every marker stage
/// whose spacers get materialized.
pub fn all_even_stages(j_max: u32) -> BTreeSet<u32> {
    (1..).map(|j| 2 * j).take_while(|&s| s < j_max).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub j: u32,
    pub height: BigUint,
    pub width: BigRational,
    /// `r_j`, `s_j(i)` and `o_j(i)` for the passage to stage `j + 1`; empty
    /// on the last materialized stage.
    pub cuts: u32,
    pub spacers: Vec<BigUint>,
    pub offsets: Vec<BigUint>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageTable {
    stages: Vec<Stage>,
    preset: Preset,
    marker_stages: BTreeSet<u32>,
}

impl StageTable {
    pub fn build(params: &ConstructionParams) -> Result<Self> {
        if params.j_max == 0 {
            return Err(TowerError::EmptyTable);
        }
        for &stage in &params.marker_stages {
            if stage == 0 || stage % 2 == 1 {
                return Err(TowerError::InvalidMarkerStage { stage });
            }
        }

        let mut stages = Vec::with_capacity(params.j_max as usize);
        let mut height = BigUint::one();
        let mut width = BigRational::one();
        for j in 1..=params.j_max {
            if j == params.j_max {
                stages.push(Stage {
                    j,
                    height,
                    width,
                    cuts: 0,
                    spacers: Vec::new(),
                    offsets: Vec::new(),
                });
                break;
            }
            let cuts = params.cuts(j);
            if cuts < 2 {
                return Err(TowerError::DegenerateCut { stage: j, cuts });
            }
            let spacers = params.spacers(j, &height);
            if spacers.len() != cuts as usize {
                return Err(TowerError::SpacerCount {
                    stage: j,
                    cuts,
                    got: spacers.len(),
                });
            }
            if params.is_marker_stage(j) {
                let required = &height * j;
                for (column, s) in spacers.iter().enumerate() {
                    if *s < required {
                        return Err(TowerError::MarkerSpacerBound {
                            stage: j,
                            column: column + 1,
                            spacers: s.clone(),
                            required,
                        });
                    }
                }
            }

            let mut offsets = Vec::with_capacity(cuts as usize);
            let mut next = BigUint::zero();
            for s in &spacers {
                offsets.push(next.clone());
                next += &height + s;
            }
            let next_width = &width / BigRational::from_integer(BigInt::from(cuts));
            stages.push(Stage {
                j,
                height: std::mem::replace(&mut height, next),
                width: std::mem::replace(&mut width, next_width),
                cuts,
                spacers,
                offsets,
            });
        }

        Ok(Self {
            stages,
            preset: params.preset,
            marker_stages: params.marker_stages.clone(),
        })
    }

    pub fn j_max(&self) -> u32 {
        self.stages.len() as u32
    }

    pub fn preset(&self) -> Preset {
        self.preset
    }

    pub fn marker_stages(&self) -> &BTreeSet<u32> {
        &self.marker_stages
    }

    pub fn is_marker_stage(&self, stage: u32) -> bool {
        self.marker_stages.contains(&stage)
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn stage(&self, j: u32) -> Result<&Stage> {
        if j == 0 {
            return Err(TowerError::StageNotMaterialized {
                stage: j,
                j_max: self.j_max(),
            });
        }
        self.stages
            .get(j as usize - 1)
            .ok_or(TowerError::StageNotMaterialized {
                stage: j,
                j_max: self.j_max(),
            })
    }

    pub fn height(&self, j: u32) -> Result<&BigUint> {
        Ok(&self.stage(j)?.height)
    }

    pub fn width(&self, j: u32) -> Result<&BigRational> {
        Ok(&self.stage(j)?.width)
    }

    /// Column offsets of stage `j` inside tower `j + 1`.
    pub fn offsets(&self, j: u32) -> Result<&[BigUint]> {
        let stage = self.stage(j)?;
        if stage.offsets.is_empty() {
            return Err(TowerError::StageNotMaterialized {
                stage: j + 1,
                j_max: self.j_max(),
            });
        }
        Ok(&stage.offsets)
    }

    /// Decimal-string dump: `[{j, h, w_num, w_den, offsets}]`.
    pub fn to_json(&self) -> Value {
        Value::Array(
            self.stages
                .iter()
                .map(|s| {
                    json!({
                        "j": s.j,
                        "h": s.height.to_string(),
                        "w_num": s.width.numer().to_string(),
                        "w_den": s.width.denom().to_string(),
                        "r": s.cuts,
                        "s": s.spacers.iter().map(|x| x.to_string()).collect::<Vec<_>>(),
                        "offsets": s.offsets.iter().map(|x| x.to_string()).collect::<Vec<_>>(),
                    })
                })
                .collect(),
        )
    }
}

/// A union of full floors of one stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FloorSet {
    stage: u32,
    indices: Vec<BigUint>,
}

impl FloorSet {
    pub fn new(stage: u32, mut indices: Vec<BigUint>, table: &StageTable) -> Result<Self> {
        let height = table.height(stage)?;
        indices.sort_unstable();
        indices.dedup();
        if let Some(top) = indices.last() {
            if top >= height {
                return Err(TowerError::IndexOutOfRange {
                    stage,
                    index: top.clone(),
                    height: height.clone(),
                });
            }
        }
        Ok(Self { stage, indices })
    }

    pub fn empty(stage: u32) -> Self {
        Self {
            stage,
            indices: Vec::new(),
        }
    }

    /// The base floor `E_stage`.
    pub fn base(stage: u32) -> Self {
        Self {
            stage,
            indices: vec![BigUint::zero()],
        }
    }

    pub(crate) fn from_sorted(stage: u32, indices: Vec<BigUint>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self { stage, indices }
    }

    pub fn stage(&self) -> u32 {
        self.stage
    }

    pub fn indices(&self) -> &[BigUint] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: &BigUint) -> bool {
        self.indices.binary_search(index).is_ok()
    }

    pub fn measure(&self, table: &StageTable) -> Result<BigRational> {
        let w = table.width(self.stage)?;
        Ok(w * BigRational::from_integer(BigInt::from(self.indices.len())))
    }

    pub fn refine(&self, to: u32, table: &StageTable) -> Result<FloorSet> {
        if to < self.stage {
            return Err(TowerError::RefineBackwards {
                from: self.stage,
                to,
            });
        }
        table.stage(to)?;
        let mut indices = self.indices.clone();
        for j in self.stage..to {
            let offsets = table.offsets(j)?;
            let mut next = Vec::with_capacity(indices.len() * offsets.len());
            // Columns occupy disjoint increasing ranges, so this stays sorted.
            for o in offsets {
                next.extend(indices.iter().map(|f| o + f));
            }
            indices = next;
        }
        Ok(FloorSet { stage: to, indices })
    }

    /// `R^n` applied to the set, at the first stage whose tower holds the image.
    pub fn shift(&self, n: &BigUint, table: &StageTable) -> Result<FloorSet> {
        let Some(mut top) = self.indices.last().cloned() else {
            return Ok(self.clone());
        };
        let mut stage = self.stage;
        loop {
            if &top + n < *table.height(stage)? {
                break;
            }
            if stage >= table.j_max() {
                return Err(TowerError::StageOverflow {
                    j_max: table.j_max(),
                });
            }
            let offsets = table.offsets(stage)?;
            top += offsets.last().expect("materialized stage has columns");
            stage += 1;
        }
        let mut out = self.refine(stage, table)?;
        for f in &mut out.indices {
            *f += n;
        }
        Ok(out)
    }

    fn aligned(&self, other: &FloorSet, table: &StageTable) -> Result<(FloorSet, FloorSet)> {
        let stage = self.stage.max(other.stage);
        Ok((self.refine(stage, table)?, other.refine(stage, table)?))
    }

    pub fn intersect(&self, other: &FloorSet, table: &StageTable) -> Result<FloorSet> {
        let (a, b) = self.aligned(other, table)?;
        let indices = a
            .indices
            .into_iter()
            .filter(|f| b.indices.binary_search(f).is_ok())
            .collect();
        Ok(FloorSet::from_sorted(b.stage, indices))
    }

    pub fn subtract(&self, other: &FloorSet, table: &StageTable) -> Result<FloorSet> {
        let (a, b) = self.aligned(other, table)?;
        let indices = a
            .indices
            .into_iter()
            .filter(|f| b.indices.binary_search(f).is_err())
            .collect();
        Ok(FloorSet::from_sorted(b.stage, indices))
    }

    pub fn union(&self, other: &FloorSet, table: &StageTable) -> Result<FloorSet> {
        let (a, b) = self.aligned(other, table)?;
        let stage = a.stage;
        let mut indices = a.indices;
        indices.extend(b.indices);
        indices.sort_unstable();
        indices.dedup();
        Ok(FloorSet::from_sorted(stage, indices))
    }

    /// Equality as subsets of `X`, regardless of representing stage.
    pub fn same_set(&self, other: &FloorSet, table: &StageTable) -> Result<bool> {
        let (a, b) = self.aligned(other, table)?;
        Ok(a.indices == b.indices)
    }
}

/// `X_1` written at stage `stage`.
pub fn x1_floorset(table: &StageTable, stage: u32) -> Result<FloorSet> {
    FloorSet::base(1).refine(stage, table)
}

/// `R^{h_{2j}} E_{2j} ∪ R^{2j h_{2j}} E_{2j}` at stage `2j + 1`.
pub fn marker_floorset(table: &StageTable, j: u32) -> Result<FloorSet> {
    let stage = 2 * j;
    if j == 0 || !table.is_marker_stage(stage) {
        return Err(TowerError::NotAMarkerStage { stage });
    }
    let target = stage + 1;
    table.stage(target)?;

    let h = table.height(stage)?;
    let base = FloorSet::base(stage);
    let low = base.shift(h, table)?.refine(target, table)?;
    let high = base.shift(&(h * stage), table)?.refine(target, table)?;
    let markers = low.union(&high, table)?;

    let st = table.stage(stage)?;
    for index in markers.indices() {
        let on_spacer = st.offsets.iter().zip(&st.spacers).any(|(o, s)| {
            let lo = o + h;
            *index >= lo && *index < lo + s
        });
        if !on_spacer {
            return Err(TowerError::MarkerOutsideSpacers {
                stage: target,
                index: index.clone(),
            });
        }
    }
    Ok(markers)
}
