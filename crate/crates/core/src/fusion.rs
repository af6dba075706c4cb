//! Late fusion of per-modality predictions that share one output grid.
//!
//! Both rules work cell by cell and horizon by horizon on the softmax
//! vectors. Modalities are passed in a fixed order (lidar, radar, vision)
//! and that order settles exact magnitude ties in priority pooling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridSequence, SemClass, SemanticGrid, NUM_CLASSES};

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("nothing to fuse")]
    Empty,
    #[error("cannot fuse: {0}")]
    Mismatch(String),
    #[error("invalid priority map: {0}")]
    Priority(String),
}

/// Per-class priorities for priority pooling; higher wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorityMap {
    pub vru: u32,
    pub vehicle: u32,
    pub background: u32,
}

impl Default for PriorityMap {
    fn default() -> Self {
        Self {
            vru: 3,
            vehicle: 2,
            background: 1,
        }
    }
}

impl PriorityMap {
    pub fn new(vru: u32, vehicle: u32, background: u32) -> Result<Self, FusionError> {
        let pm = Self { vru, vehicle, background };
        pm.validate()?;
        Ok(pm)
    }

    /// Priorities must be positive and pairwise distinct, otherwise two
    /// disagreeing votes could not be ordered.
    pub fn validate(&self) -> Result<(), FusionError> {
        let p = [self.vru, self.vehicle, self.background];
        if p.contains(&0) {
            return Err(FusionError::Priority(format!("priorities must be positive: {self:?}")));
        }
        if p[0] == p[1] || p[0] == p[2] || p[1] == p[2] {
            return Err(FusionError::Priority(format!("priorities must be distinct: {self:?}")));
        }
        Ok(())
    }

    pub fn of(&self, class: SemClass) -> u32 {
        match class {
            SemClass::Vru => self.vru,
            SemClass::Vehicle => self.vehicle,
            SemClass::Background => self.background,
        }
    }

    /// Argmax of one softmax vector; exact ties go to the higher priority.
    pub fn vote(&self, cell: &[f32; NUM_CLASSES]) -> SemClass {
        let mut best = SemClass::ALL[0];
        for class in SemClass::ALL.into_iter().skip(1) {
            let (p, q) = (cell[class.index()], cell[best.index()]);
            if p > q || (p == q && self.of(class) > self.of(best)) {
                best = class;
            }
        }
        best
    }
}

fn check(seqs: &[GridSequence]) -> Result<(), FusionError> {
    let first = seqs.first().ok_or(FusionError::Empty)?;
    for (i, s) in seqs.iter().enumerate().skip(1) {
        if s.spec() != first.spec() {
            return Err(FusionError::Mismatch(format!("input {i} has grid {:?}, input 0 has {:?}", s.spec(), first.spec())));
        }
        for (a, b) in s.grids.iter().zip(&first.grids) {
            if a.timestep != b.timestep {
                return Err(FusionError::Mismatch(format!("input {i} has a grid at {} s where input 0 has {} s", a.timestep, b.timestep)));
            }
        }
    }
    Ok(())
}

/// Arithmetic mean of the class probabilities.
///
/// Values are summed in ascending order so the result does not depend on
/// the order of the inputs, not even in the last bit.
pub fn fuse_average(seqs: &[GridSequence]) -> Result<GridSequence, FusionError> {
    check(seqs)?;
    let n = seqs.len() as f64;
    let mut grids = Vec::with_capacity(seqs[0].grids.len());
    for h in 0..seqs[0].grids.len() {
        let len = seqs[0].grids[h].data().len();
        let mut values = Vec::with_capacity(seqs.len());
        let data = (0..len)
            .map(|i| {
                values.clear();
                values.extend(seqs.iter().map(|s| s.grids[h].data()[i]));
                values.sort_by(f32::total_cmp);
                (values.iter().map(|&v| v as f64).sum::<f64>() / n) as f32
            })
            .collect();
        grids.push(SemanticGrid::from_data_unchecked(seqs[0].spec(), seqs[0].grids[h].timestep, data).expect("same length"));
    }
    Ok(GridSequence { grids })
}

/// Index of the modality whose vector a priority-pooled cell copies.
pub fn priority_winner(cells: &[[f32; NUM_CLASSES]], pm: &PriorityMap) -> usize {
    let votes: Vec<SemClass> = cells.iter().map(|c| pm.vote(c)).collect();
    let class = *votes.iter().max_by_key(|c| pm.of(**c)).expect("at least one modality");
    let mut winner = None::<usize>;
    for (m, cell) in cells.iter().enumerate() {
        if votes[m] != class {
            continue;
        }
        // strict comparison: the earlier modality keeps exact ties
        if winner.is_none_or(|w| cell[class.index()] > cells[w][class.index()]) {
            winner = Some(m);
        }
    }
    winner.expect("the winning class was voted")
}

/// Priority pooling: every modality votes its argmax class, the
/// highest-priority vote wins, and among the modalities casting it the one
/// most confident in that class supplies the cell's whole softmax vector.
pub fn fuse_priority(seqs: &[GridSequence], pm: &PriorityMap) -> Result<GridSequence, FusionError> {
    check(seqs)?;
    pm.validate()?;
    let spec = seqs[0].spec();
    let mut grids = Vec::with_capacity(seqs[0].grids.len());
    let mut cells = Vec::with_capacity(seqs.len());
    for h in 0..seqs[0].grids.len() {
        let mut out = seqs[0].grids[h].clone();
        for row in 0..spec.rows_x {
            for col in 0..spec.cols_y {
                cells.clear();
                cells.extend(seqs.iter().map(|s| s.grids[h].cell(row, col)));
                let w = priority_winner(&cells, pm);
                out.set_cell(row, col, cells[w]);
            }
        }
        grids.push(out);
    }
    Ok(GridSequence { grids })
}
