//! Adaptive sample space reduction.
//!
//! Within one prototype event, baseline impact speed is non-decreasing in
//! glance duration and non-increasing in deceleration. Four deductions follow:
//!
//! 1. a baseline non-crash at `(o, d)` implies non-crash for every `o' ≤ o, d' ≥ d`,
//!    and those cells leave the samplable set;
//! 2. a baseline non-crash needs no countermeasure run;
//! 3. a countermeasure non-crash at `(o, d)` implies countermeasure non-crash for
//!    every `o' ≤ o, d' ≥ d`;
//! 4. a baseline crash at the event's maximum speed `m_k` implies the same speed
//!    for every `o' ≥ o, d' ≤ d`.
//!
//! Regions are stored as minimal antichains of generator points.

use std::io::Write;

use crate::error::{Error, Result};
use crate::scenario::{GridDims, ScenarioCell};
use crate::sim::SimOutcome;

/// Where a known outcome came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Simulated,
    Inferred,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineState {
    Unknown,
    NonCrash(Source),
    Crash { speed: f64, source: Source },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CountermeasureState {
    Unknown,
    Avoided(Source),
    Crash { speed: f64 },
}

/// Decision on whether a countermeasure run is needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CmNeed {
    Run,
    Known(SimOutcome),
}

/// Countermeasure part of [`KnowledgeMap::simulation_cost`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmCost {
    No,
    Yes,
    IfBaselineCrashes,
}

/// Region orientation of an antichain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Point covers `o' ≤ o, d' ≥ d` (less severe).
    LessSevere,
    /// Point covers `o' ≥ o, d' ≤ d` (more severe).
    MoreSevere,
}

/// Minimal antichain over (oeoff_idx, decel_idx) with O(log n) coverage queries.
///
/// Points are stored in a normalized frame where coverage always reads
/// `q.0 ≤ p.0 && q.1 ≥ p.1`; in that frame a minimal antichain is strictly
/// increasing in both coordinates.
#[derive(Debug, Clone)]
pub struct Antichain {
    orientation: Orientation,
    points: Vec<(i64, i64)>,
}

impl Antichain {
    pub fn new(orientation: Orientation) -> Self {
        Self {
            orientation,
            points: Vec::new(),
        }
    }

    fn normalize(&self, o: usize, d: usize) -> (i64, i64) {
        match self.orientation {
            Orientation::LessSevere => (o as i64, d as i64),
            Orientation::MoreSevere => (-(o as i64), -(d as i64)),
        }
    }

    fn denormalize(&self, p: (i64, i64)) -> (usize, usize) {
        match self.orientation {
            Orientation::LessSevere => (p.0 as usize, p.1 as usize),
            Orientation::MoreSevere => ((-p.0) as usize, (-p.1) as usize),
        }
    }

    pub fn covers(&self, oeoff_idx: usize, decel_idx: usize) -> bool {
        let q = self.normalize(oeoff_idx, decel_idx);
        let i = self.points.partition_point(|p| p.0 < q.0);
        i < self.points.len() && self.points[i].1 <= q.1
    }

    /// Inserts a generator; returns false when it was already covered.
    pub fn insert(&mut self, oeoff_idx: usize, decel_idx: usize) -> bool {
        if self.covers(oeoff_idx, decel_idx) {
            return false;
        }
        let p = self.normalize(oeoff_idx, decel_idx);
        let end = self.points.partition_point(|q| q.0 <= p.0);
        let start = self.points[..end].partition_point(|q| q.1 < p.1);
        self.points.splice(start..end, std::iter::once(p));
        true
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Generators as (oeoff_idx, decel_idx).
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.points.iter().map(|&p| self.denormalize(p)).collect()
    }
}

#[derive(Debug, Clone)]
struct EventKnowledge {
    noncrash: Antichain,
    max_speed_region: Antichain,
    cm_avoided: Antichain,
    max_speed: Option<f64>,
}

/// Per-cell knowledge for one experiment repetition.
///
/// With `deduce == false` the map only memoizes simulated outcomes: nothing is
/// inferred and every cell stays samplable.
#[derive(Debug, Clone)]
pub struct KnowledgeMap {
    dims: GridDims,
    deduce: bool,
    base: Vec<BaselineState>,
    cm: Vec<CountermeasureState>,
    events: Vec<EventKnowledge>,
    samplable: Vec<bool>,
    n_samplable: usize,
}

impl KnowledgeMap {
    pub fn new(dims: GridDims, deduce: bool) -> Self {
        let n = dims.n_cells();
        Self {
            dims,
            deduce,
            base: vec![BaselineState::Unknown; n],
            cm: vec![CountermeasureState::Unknown; n],
            events: (0..dims.n_events)
                .map(|_| EventKnowledge {
                    noncrash: Antichain::new(Orientation::LessSevere),
                    max_speed_region: Antichain::new(Orientation::MoreSevere),
                    cm_avoided: Antichain::new(Orientation::LessSevere),
                    max_speed: None,
                })
                .collect(),
            samplable: vec![true; n],
            n_samplable: n,
        }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn deduces(&self) -> bool {
        self.deduce
    }

    #[inline]
    pub fn is_samplable(&self, flat: usize) -> bool {
        self.samplable[flat]
    }

    /// Samplable flag of every flat cell.
    pub fn samplable_mask(&self) -> &[bool] {
        &self.samplable
    }

    pub fn samplable_count(&self) -> usize {
        self.n_samplable
    }

    #[inline]
    pub fn baseline(&self, flat: usize) -> BaselineState {
        self.base[flat]
    }

    #[inline]
    pub fn countermeasure(&self, flat: usize) -> CountermeasureState {
        self.cm[flat]
    }

    pub fn max_speed(&self, event: usize) -> Option<f64> {
        self.events[event].max_speed
    }

    pub fn noncrash_frontier(&self, event: usize) -> &Antichain {
        &self.events[event].noncrash
    }

    pub fn max_speed_frontier(&self, event: usize) -> &Antichain {
        &self.events[event].max_speed_region
    }

    pub fn cm_avoided_frontier(&self, event: usize) -> &Antichain {
        &self.events[event].cm_avoided
    }

    fn violation(flat: usize, detail: impl Into<String>) -> Error {
        Error::MonotonicityViolation {
            cell: flat,
            detail: detail.into(),
        }
    }

    fn remove_from_samplable(&mut self, flat: usize) {
        if self.samplable[flat] {
            self.samplable[flat] = false;
            self.n_samplable -= 1;
        }
    }

    fn region(&self, cell: ScenarioCell, orientation: Orientation) -> impl Iterator<Item = usize> + '_ {
        let dims = self.dims;
        let (o_range, d_range) = match orientation {
            Orientation::LessSevere => (0..cell.oeoff_idx + 1, cell.decel_idx..dims.n_decel),
            Orientation::MoreSevere => (cell.oeoff_idx..dims.n_oeoff, 0..cell.decel_idx + 1),
        };
        o_range.flat_map(move |o| {
            d_range
                .clone()
                .map(move |d| dims.flat(ScenarioCell::new(cell.event, o, d)))
        })
    }

    /// Records a simulated baseline outcome and applies rules i and iv.
    /// Returns the cells whose baseline became known by inference.
    pub fn record_baseline(&mut self, flat: usize, outcome: SimOutcome) -> Result<Vec<usize>> {
        match (self.base[flat], outcome.crashed) {
            (BaselineState::NonCrash(_), true) => {
                return Err(Self::violation(flat, "crash inside a known non-crash region"))
            }
            (BaselineState::Crash { .. }, false) => {
                return Err(Self::violation(flat, "non-crash where a crash is known"))
            }
            (BaselineState::Crash { speed, .. }, true) if speed != outcome.impact_speed => {
                return Err(Self::violation(
                    flat,
                    format!("impact speed {} differs from known {speed}", outcome.impact_speed),
                ))
            }
            _ => {}
        }
        if !outcome.crashed {
            if let CountermeasureState::Crash { .. } = self.cm[flat] {
                return Err(Self::violation(flat, "countermeasure crash without baseline crash"));
            }
        }
        let cell = self.dims.cell(flat);
        self.base[flat] = if outcome.crashed {
            BaselineState::Crash {
                speed: outcome.impact_speed,
                source: Source::Simulated,
            }
        } else {
            BaselineState::NonCrash(Source::Simulated)
        };

        let mut learned_max = false;
        if outcome.crashed && cell == self.dims.extreme_cell(cell.event) {
            self.events[cell.event].max_speed = Some(outcome.impact_speed);
            learned_max = true;
        }
        if !self.deduce {
            return Ok(Vec::new());
        }

        let mut newly = Vec::new();
        if outcome.crashed {
            if learned_max {
                // Crashes at m_k seen before m_k was known become generators now.
                let m = outcome.impact_speed;
                let seeds: Vec<usize> = self
                    .dims
                    .event_range(cell.event)
                    .filter(|&i| {
                        matches!(self.base[i], BaselineState::Crash { speed, source: Source::Simulated } if speed == m)
                    })
                    .collect();
                for s in seeds {
                    self.apply_max_speed(s, m, &mut newly)?;
                }
            } else if self.events[cell.event].max_speed == Some(outcome.impact_speed) {
                self.apply_max_speed(flat, outcome.impact_speed, &mut newly)?;
            }
        } else {
            self.remove_from_samplable(flat);
            if self.events[cell.event]
                .noncrash
                .insert(cell.oeoff_idx, cell.decel_idx)
            {
                let region: Vec<usize> = self.region(cell, Orientation::LessSevere).collect();
                for i in region {
                    match self.base[i] {
                        BaselineState::Crash { .. } => {
                            return Err(Self::violation(i, "known crash inside deduced non-crash region"))
                        }
                        BaselineState::Unknown => {
                            if let CountermeasureState::Crash { .. } = self.cm[i] {
                                return Err(Self::violation(i, "countermeasure crash inside non-crash region"));
                            }
                            self.base[i] = BaselineState::NonCrash(Source::Inferred);
                            newly.push(i);
                        }
                        BaselineState::NonCrash(_) => {}
                    }
                    self.remove_from_samplable(i);
                }
            }
        }
        Ok(newly)
    }

    fn apply_max_speed(&mut self, flat: usize, m: f64, newly: &mut Vec<usize>) -> Result<()> {
        let cell = self.dims.cell(flat);
        if !self.events[cell.event]
            .max_speed_region
            .insert(cell.oeoff_idx, cell.decel_idx)
        {
            return Ok(());
        }
        let region: Vec<usize> = self.region(cell, Orientation::MoreSevere).collect();
        for i in region {
            match self.base[i] {
                BaselineState::NonCrash(_) => {
                    return Err(Self::violation(i, "non-crash inside maximum-speed region"))
                }
                BaselineState::Crash { speed, .. } if speed != m => {
                    return Err(Self::violation(
                        i,
                        format!("speed {speed} inside maximum-speed region of {m}"),
                    ))
                }
                BaselineState::Crash { .. } => {}
                BaselineState::Unknown => {
                    self.base[i] = BaselineState::Crash {
                        speed: m,
                        source: Source::Inferred,
                    };
                    newly.push(i);
                }
            }
        }
        Ok(())
    }

    /// Rules ii and iii. The baseline of `flat` must be known.
    pub fn needs_countermeasure(&self, flat: usize) -> Result<CmNeed> {
        match self.base[flat] {
            BaselineState::Unknown => Err(Error::Config(format!(
                "baseline of cell {flat} must be known before deciding the countermeasure run"
            ))),
            _ => Ok(match self.cm[flat] {
                CountermeasureState::Avoided(_) => CmNeed::Known(SimOutcome::no_crash().inferred()),
                CountermeasureState::Crash { speed } => CmNeed::Known(SimOutcome::crash(speed).inferred()),
                CountermeasureState::Unknown => {
                    if self.deduce && matches!(self.base[flat], BaselineState::NonCrash(_)) {
                        CmNeed::Known(SimOutcome::no_crash().inferred())
                    } else {
                        CmNeed::Run
                    }
                }
            }),
        }
    }

    /// Records a simulated countermeasure outcome and applies rule iii.
    pub fn record_countermeasure(&mut self, flat: usize, outcome: SimOutcome) -> Result<Vec<usize>> {
        match (self.cm[flat], outcome.crashed) {
            (CountermeasureState::Avoided(_), true) => {
                return Err(Self::violation(flat, "countermeasure crash inside avoided region"))
            }
            (CountermeasureState::Crash { .. }, false) => {
                return Err(Self::violation(flat, "countermeasure non-crash where a crash is known"))
            }
            (CountermeasureState::Crash { speed }, true) if speed != outcome.impact_speed => {
                return Err(Self::violation(flat, "countermeasure speed differs from known"))
            }
            _ => {}
        }
        if outcome.crashed && matches!(self.base[flat], BaselineState::NonCrash(_)) {
            return Err(Self::violation(flat, "countermeasure crash without baseline crash"));
        }
        self.cm[flat] = if outcome.crashed {
            CountermeasureState::Crash {
                speed: outcome.impact_speed,
            }
        } else {
            CountermeasureState::Avoided(Source::Simulated)
        };
        let mut newly = Vec::new();
        if !self.deduce || outcome.crashed {
            return Ok(newly);
        }
        let cell = self.dims.cell(flat);
        if self.events[cell.event]
            .cm_avoided
            .insert(cell.oeoff_idx, cell.decel_idx)
        {
            let region: Vec<usize> = self.region(cell, Orientation::LessSevere).collect();
            for i in region {
                match self.cm[i] {
                    CountermeasureState::Crash { .. } => {
                        return Err(Self::violation(i, "countermeasure crash inside deduced avoided region"))
                    }
                    CountermeasureState::Unknown => {
                        self.cm[i] = CountermeasureState::Avoided(Source::Inferred);
                        newly.push(i);
                    }
                    CountermeasureState::Avoided(_) => {}
                }
            }
        }
        Ok(newly)
    }

    /// Which simulator runs a draw of `flat` would trigger.
    pub fn simulation_cost(&self, flat: usize) -> (bool, CmCost) {
        let run_base = self.base[flat] == BaselineState::Unknown;
        let cm = match (self.cm[flat], self.base[flat]) {
            (CountermeasureState::Avoided(_) | CountermeasureState::Crash { .. }, _) => CmCost::No,
            (CountermeasureState::Unknown, _) if !self.deduce => CmCost::Yes,
            (CountermeasureState::Unknown, BaselineState::NonCrash(_)) => CmCost::No,
            (CountermeasureState::Unknown, BaselineState::Crash { .. }) => CmCost::Yes,
            (CountermeasureState::Unknown, BaselineState::Unknown) => CmCost::IfBaselineCrashes,
        };
        (run_base, cm)
    }

    /// True when a draw of `flat` could still cost a simulation.
    pub fn has_pending_cost(&self, flat: usize) -> bool {
        let (b, c) = self.simulation_cost(flat);
        b || c != CmCost::No
    }

    /// Writes `event_id,oeoff_idx,decel_idx,baseline,countermeasure,samplable`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["event_id", "oeoff_idx", "decel_idx", "baseline", "countermeasure", "samplable"])?;
        for flat in 0..self.dims.n_cells() {
            let c = self.dims.cell(flat);
            let base = match self.base[flat] {
                BaselineState::Unknown => "unknown".to_string(),
                BaselineState::NonCrash(Source::Simulated) => "noncrash_simulated".into(),
                BaselineState::NonCrash(Source::Inferred) => "noncrash_inferred".into(),
                BaselineState::Crash { speed, source } => format!(
                    "crash_{}:{speed}",
                    if source == Source::Simulated { "simulated" } else { "inferred" }
                ),
            };
            let cm = match self.cm[flat] {
                CountermeasureState::Unknown => "unknown".to_string(),
                CountermeasureState::Avoided(Source::Simulated) => "avoided_simulated".into(),
                CountermeasureState::Avoided(Source::Inferred) => "avoided_inferred".into(),
                CountermeasureState::Crash { speed } => format!("crash:{speed}"),
            };
            w.write_record([
                c.event.to_string(),
                c.oeoff_idx.to_string(),
                c.decel_idx.to_string(),
                base,
                cm,
                u8::from(self.samplable[flat]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims10() -> GridDims {
        GridDims {
            n_events: 1,
            n_oeoff: 10,
            n_decel: 10,
        }
    }

    fn flat(d: GridDims, o: usize, dd: usize) -> usize {
        d.flat(ScenarioCell::new(0, o, dd))
    }

    #[test]
    fn noncrash_region_counts() {
        let d = dims10();
        let mut km = KnowledgeMap::new(d, true);
        let newly = km.record_baseline(flat(d, 3, 5), SimOutcome::no_crash()).unwrap();
        // 4 × 5 region minus the simulated cell itself
        assert_eq!(newly.len() + 1, 20);
        assert_eq!(km.samplable_count(), 80);
        for o in 0..=3 {
            for dd in 5..10 {
                assert!(!km.is_samplable(flat(d, o, dd)));
            }
        }
        assert!(km.is_samplable(flat(d, 4, 5)));
        assert!(km.is_samplable(flat(d, 3, 4)));
    }

    #[test]
    fn max_speed_corner_only() {
        let d = dims10();
        let mut km = KnowledgeMap::new(d, true);
        let newly = km.record_baseline(flat(d, 9, 0), SimOutcome::crash(80.0)).unwrap();
        assert!(newly.is_empty());
        assert_eq!(km.max_speed(0), Some(80.0));
        // A max-speed crash elsewhere fills its more-severe region.
        let newly = km.record_baseline(flat(d, 7, 2), SimOutcome::crash(80.0)).unwrap();
        assert_eq!(newly.len() + 2, 3 * 3);
        assert!(km.is_samplable(flat(d, 8, 1)));
        assert_eq!(km.simulation_cost(flat(d, 8, 1)), (false, CmCost::Yes));
    }

    #[test]
    fn slower_crash_no_rule_iv() {
        let d = dims10();
        let mut km = KnowledgeMap::new(d, true);
        km.record_baseline(flat(d, 9, 0), SimOutcome::crash(80.0)).unwrap();
        let newly = km.record_baseline(flat(d, 5, 5), SimOutcome::crash(60.0)).unwrap();
        assert!(newly.is_empty());
    }

    #[test]
    fn countermeasure_rules() {
        let d = dims10();
        let mut km = KnowledgeMap::new(d, true);
        km.record_baseline(flat(d, 2, 2), SimOutcome::no_crash()).unwrap();
        assert!(matches!(km.needs_countermeasure(flat(d, 2, 2)).unwrap(), CmNeed::Known(o) if !o.crashed));

        km.record_baseline(flat(d, 5, 5), SimOutcome::crash(40.0)).unwrap();
        assert_eq!(km.needs_countermeasure(flat(d, 5, 5)).unwrap(), CmNeed::Run);
        km.record_countermeasure(flat(d, 5, 5), SimOutcome::no_crash()).unwrap();
        km.record_baseline(flat(d, 4, 6), SimOutcome::crash(30.0)).unwrap();
        assert!(matches!(km.needs_countermeasure(flat(d, 4, 6)).unwrap(), CmNeed::Known(o) if !o.crashed));
        km.record_baseline(flat(d, 6, 4), SimOutcome::crash(50.0)).unwrap();
        assert_eq!(km.needs_countermeasure(flat(d, 6, 4)).unwrap(), CmNeed::Run);
    }

    #[test]
    fn cm_crash_and_idempotence() {
        let d = dims10();
        let mut km = KnowledgeMap::new(d, true);
        km.record_baseline(flat(d, 5, 5), SimOutcome::crash(40.0)).unwrap();
        assert!(km.record_countermeasure(flat(d, 5, 5), SimOutcome::crash(10.0)).unwrap().is_empty());
        let mut km = KnowledgeMap::new(d, true);
        km.record_baseline(flat(d, 3, 5), SimOutcome::crash(40.0)).unwrap();
        let first = km.record_countermeasure(flat(d, 3, 5), SimOutcome::no_crash()).unwrap();
        assert_eq!(first.len() + 1, 20);
        let again = km.record_countermeasure(flat(d, 3, 5), SimOutcome::no_crash()).unwrap();
        assert!(again.is_empty());
    }

    #[test]
    fn contradiction_detected() {
        let d = dims10();
        let mut km = KnowledgeMap::new(d, true);
        km.record_baseline(flat(d, 5, 5), SimOutcome::no_crash()).unwrap();
        assert!(matches!(
            km.record_baseline(flat(d, 4, 6), SimOutcome::crash(10.0)),
            Err(Error::MonotonicityViolation { .. })
        ));
        let mut km = KnowledgeMap::new(d, true);
        km.record_baseline(flat(d, 4, 6), SimOutcome::crash(10.0)).unwrap();
        assert!(km.record_baseline(flat(d, 5, 5), SimOutcome::no_crash()).is_err());
    }

    #[test]
    fn costs() {
        let d = dims10();
        let mut km = KnowledgeMap::new(d, true);
        assert_eq!(km.simulation_cost(0), (true, CmCost::IfBaselineCrashes));
        km.record_baseline(flat(d, 5, 5), SimOutcome::crash(40.0)).unwrap();
        km.record_countermeasure(flat(d, 5, 5), SimOutcome::crash(20.0)).unwrap();
        assert_eq!(km.simulation_cost(flat(d, 5, 5)), (false, CmCost::No));
        let plain = KnowledgeMap::new(d, false);
        assert_eq!(plain.simulation_cost(0), (true, CmCost::Yes));
    }

    #[test]
    fn memo_only_without_deduction() {
        let d = dims10();
        let mut km = KnowledgeMap::new(d, false);
        assert!(km.record_baseline(flat(d, 3, 5), SimOutcome::no_crash()).unwrap().is_empty());
        assert_eq!(km.samplable_count(), 100);
        assert_eq!(km.needs_countermeasure(flat(d, 3, 5)).unwrap(), CmNeed::Run);
    }

    #[test]
    fn antichain_minimal() {
        let mut a = Antichain::new(Orientation::LessSevere);
        assert!(a.insert(2, 5));
        assert!(a.insert(4, 7));
        assert!(!a.insert(1, 6));
        assert!(a.insert(5, 5)); // dominates both
        assert_eq!(a.points(), vec![(5, 5)]);
        assert!(a.covers(0, 9));
        assert!(!a.covers(6, 9));
        let mut b = Antichain::new(Orientation::MoreSevere);
        b.insert(5, 5);
        assert!(b.covers(9, 0));
        assert!(!b.covers(4, 5));
        assert!(b.insert(3, 2));
        assert_eq!(b.len(), 2);
    }
}
