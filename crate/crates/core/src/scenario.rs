//! Discrete scenario space: prototype events × OEOFF levels × deceleration levels,
//! and the joint glance/deceleration weights of the crash-causation model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{self, SimParams};

/// Regeneration attempts per prototype before the grid is rejected.
pub const MAX_PROTOTYPE_ATTEMPTS: usize = 1000;

/// Probability mass of a zero-length overshot glance.
pub const DEFAULT_ZERO_GLANCE_MASS: f64 = 0.854;

/// Decay scale (s) of the default glance tail.
const GLANCE_TAIL_SCALE: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrototypeEvent {
    pub id: usize,
    /// m/s
    pub fv_speed0: f64,
    /// m/s
    pub lv_speed0: f64,
    /// m
    pub gap0: f64,
    /// LV braking magnitude from t = 0, m/s².
    pub lv_decel: f64,
}

impl PrototypeEvent {
    fn validate(&self) -> Result<()> {
        let ok = self.fv_speed0.is_finite()
            && self.fv_speed0 > 0.0
            && self.lv_speed0.is_finite()
            && self.lv_speed0 >= 0.0
            && self.gap0.is_finite()
            && self.gap0 > 0.0
            && self.lv_decel.is_finite()
            && self.lv_decel > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid prototype event {:?}", self)))
        }
    }
}

/// Grid definition as stored in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_events: usize,
    pub rng_seed: u64,
    /// Seconds, strictly increasing.
    pub oeoff_levels: Vec<f64>,
    /// Deceleration magnitudes in m/s², strictly increasing.
    pub decel_levels: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub glance_pmf: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decel_pmf: Option<Vec<f64>>,
    /// Explicit prototypes; generated from `rng_seed` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<PrototypeEvent>>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_events: 44,
            rng_seed: 2024,
            oeoff_levels: (0..=66).map(|i| i as f64 / 10.0).collect(),
            decel_levels: (0..15).map(|i| 3.75 + 0.5 * i as f64).collect(),
            glance_pmf: None,
            decel_pmf: None,
            events: None,
        }
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0] < w[1])
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_events == 0 {
            return Err(Error::Config("n_events must be at least 1".into()));
        }
        if self.oeoff_levels.is_empty()
            || !strictly_increasing(&self.oeoff_levels)
            || self.oeoff_levels[0] < 0.0
        {
            return Err(Error::Config(
                "oeoff_levels must be non-empty, nonnegative and strictly increasing".into(),
            ));
        }
        if self.decel_levels.is_empty()
            || !strictly_increasing(&self.decel_levels)
            || self.decel_levels[0] <= 0.0
        {
            return Err(Error::Config(
                "decel_levels must be non-empty, positive and strictly increasing".into(),
            ));
        }
        if let Some(p) = &self.glance_pmf {
            GlancePmf::new(p.clone(), self.oeoff_levels.len())?;
        }
        if let Some(p) = &self.decel_pmf {
            DecelPmf::new(p.clone(), self.decel_levels.len())?;
        }
        if let Some(events) = &self.events {
            if events.len() != self.n_events {
                return Err(Error::Config(format!(
                    "{} explicit events given but n_events = {}",
                    events.len(),
                    self.n_events
                )));
            }
            for e in events {
                e.validate()?;
            }
        }
        Ok(())
    }
}

fn check_pmf(p: &[f64], len: usize, what: &str) -> Result<()> {
    if p.len() != len {
        return Err(Error::Config(format!(
            "{what} has {} entries, expected {len}",
            p.len()
        )));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Config(format!("{what} entries must be finite and nonnegative")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

/// Marginal probability of each OEOFF level.
#[derive(Debug, Clone, PartialEq)]
pub struct GlancePmf(Vec<f64>);

impl GlancePmf {
    pub fn new(p: Vec<f64>, n_levels: usize) -> Result<Self> {
        check_pmf(&p, n_levels, "glance_pmf")?;
        Ok(Self(p))
    }

    /// Mass 0.854 at 0 s; the remainder over positive levels ∝ exp(−oeoff / 1.2).
    pub fn synthetic(levels: &[f64]) -> Self {
        let zero_idx = levels.iter().position(|&o| o == 0.0);
        let tail: Vec<f64> = levels
            .iter()
            .map(|&o| if o > 0.0 { (-o / GLANCE_TAIL_SCALE).exp() } else { 0.0 })
            .collect();
        let tail_sum: f64 = tail.iter().sum();
        let p = match zero_idx {
            Some(z) if tail_sum > 0.0 => tail
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    if i == z {
                        DEFAULT_ZERO_GLANCE_MASS
                    } else {
                        (1.0 - DEFAULT_ZERO_GLANCE_MASS) * t / tail_sum
                    }
                })
                .collect(),
            Some(z) => (0..levels.len()).map(|i| if i == z { 1.0 } else { 0.0 }).collect(),
            None => tail.iter().map(|t| t / tail_sum).collect(),
        };
        Self(p)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }
}

/// Marginal probability of each deceleration level.
#[derive(Debug, Clone, PartialEq)]
pub struct DecelPmf(Vec<f64>);

impl DecelPmf {
    pub fn new(p: Vec<f64>, n_levels: usize) -> Result<Self> {
        check_pmf(&p, n_levels, "decel_pmf")?;
        Ok(Self(p))
    }

    /// Discretized symmetric triangle peaked at the median level; the end
    /// levels keep a positive mass.
    pub fn synthetic(n_levels: usize) -> Self {
        let mid = (n_levels as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..n_levels)
            .map(|i| mid + 1.0 - (i as f64 - mid).abs())
            .collect();
        let total: f64 = raw.iter().sum();
        Self(raw.iter().map(|r| r / total).collect())
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }
}

/// `w(oeoff, decel) = glance[oeoff] × decel[decel]`, shared by every event.
#[derive(Debug, Clone, PartialEq)]
pub struct JointWeightTable {
    n_decel: usize,
    w: Vec<f64>,
}

impl JointWeightTable {
    pub fn from_marginals(glance: &GlancePmf, decel: &DecelPmf) -> Self {
        let n_decel = decel.0.len();
        let w = glance
            .0
            .iter()
            .flat_map(|g| decel.0.iter().map(move |d| g * d))
            .collect();
        Self { n_decel, w }
    }

    #[inline]
    pub fn weight(&self, oeoff_idx: usize, decel_idx: usize) -> f64 {
        self.w[oeoff_idx * self.n_decel + decel_idx]
    }

    /// Per-event weights in (oeoff, decel) row-major order.
    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }
}

/// One (event, OEOFF level, deceleration level) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScenarioCell {
    pub event: usize,
    pub oeoff_idx: usize,
    pub decel_idx: usize,
}

impl ScenarioCell {
    pub fn new(event: usize, oeoff_idx: usize, decel_idx: usize) -> Self {
        Self {
            event,
            oeoff_idx,
            decel_idx,
        }
    }
}

/// Shape of the cell lattice. Flat indices run event-major, then OEOFF, then
/// deceleration, so each event occupies one contiguous block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridDims {
    pub n_events: usize,
    pub n_oeoff: usize,
    pub n_decel: usize,
}

impl GridDims {
    #[inline]
    pub fn cells_per_event(&self) -> usize {
        self.n_oeoff * self.n_decel
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.n_events * self.cells_per_event()
    }

    #[inline]
    pub fn flat(&self, cell: ScenarioCell) -> usize {
        (cell.event * self.n_oeoff + cell.oeoff_idx) * self.n_decel + cell.decel_idx
    }

    #[inline]
    pub fn cell(&self, flat: usize) -> ScenarioCell {
        let decel_idx = flat % self.n_decel;
        let rest = flat / self.n_decel;
        ScenarioCell {
            event: rest / self.n_oeoff,
            oeoff_idx: rest % self.n_oeoff,
            decel_idx,
        }
    }

    #[inline]
    pub fn event_of(&self, flat: usize) -> usize {
        flat / self.cells_per_event()
    }

    pub fn event_range(&self, event: usize) -> std::ops::Range<usize> {
        let n = self.cells_per_event();
        event * n..(event + 1) * n
    }

    pub fn contains(&self, cell: ScenarioCell) -> bool {
        cell.event < self.n_events && cell.oeoff_idx < self.n_oeoff && cell.decel_idx < self.n_decel
    }

    /// Most severe cell of an event: longest glance, weakest braking.
    pub fn extreme_cell(&self, event: usize) -> ScenarioCell {
        ScenarioCell::new(event, self.n_oeoff - 1, 0)
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioGrid {
    pub events: Vec<PrototypeEvent>,
    pub oeoff_levels: Vec<f64>,
    pub decel_levels: Vec<f64>,
    pub glance: GlancePmf,
    pub decel_pmf: DecelPmf,
    pub weights: JointWeightTable,
    pub rng_seed: u64,
    dims: GridDims,
}

impl ScenarioGrid {
    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn n_events(&self) -> usize {
        self.dims.n_events
    }

    pub fn n_cells(&self) -> usize {
        self.dims.n_cells()
    }

    pub fn joint_weight(&self, cell: ScenarioCell) -> Result<f64> {
        self.check(cell)?;
        Ok(self.weights.weight(cell.oeoff_idx, cell.decel_idx))
    }

    /// Weight of a flat cell index; the caller guarantees bounds.
    #[inline]
    pub fn weight_flat(&self, flat: usize) -> f64 {
        self.weights.as_slice()[flat % self.dims.cells_per_event()]
    }

    pub fn check(&self, cell: ScenarioCell) -> Result<()> {
        if self.dims.contains(cell) {
            Ok(())
        } else {
            Err(Error::CellOutOfBounds {
                event: cell.event,
                oeoff_idx: cell.oeoff_idx,
                decel_idx: cell.decel_idx,
            })
        }
    }

    pub fn oeoff(&self, cell: ScenarioCell) -> f64 {
        self.oeoff_levels[cell.oeoff_idx]
    }

    pub fn decel(&self, cell: ScenarioCell) -> f64 {
        self.decel_levels[cell.decel_idx]
    }

    /// Config that rebuilds exactly this grid, with PMFs and events spelled out.
    pub fn to_config(&self) -> GridConfig {
        GridConfig {
            n_events: self.dims.n_events,
            rng_seed: self.rng_seed,
            oeoff_levels: self.oeoff_levels.clone(),
            decel_levels: self.decel_levels.clone(),
            glance_pmf: Some(self.glance.0.clone()),
            decel_pmf: Some(self.decel_pmf.0.clone()),
            events: Some(self.events.clone()),
        }
    }
}

fn draw_prototype(id: usize, rng: &mut ChaCha8Rng) -> PrototypeEvent {
    let fv = rng.random_range(20.0..33.0);
    PrototypeEvent {
        id,
        fv_speed0: fv,
        lv_speed0: fv,
        gap0: rng.random_range(15.0..50.0),
        lv_decel: rng.random_range(3.0..8.0),
    }
}

fn can_crash(event: &PrototypeEvent, config: &GridConfig, sim: &SimParams) -> Result<bool> {
    let oeoff = *config.oeoff_levels.last().expect("validated");
    let decel = config.decel_levels[0];
    Ok(sim::simulate_baseline(event, oeoff, decel, sim)?.crashed)
}

/// Builds the scenario grid. Prototype kinematics are drawn from `rng_seed`
/// unless listed explicitly; each prototype must crash at its extreme cell.
pub fn build_grid(config: &GridConfig, sim: &SimParams) -> Result<ScenarioGrid> {
    config.validate()?;
    sim.validate()?;

    let events = match &config.events {
        Some(events) => {
            for e in events {
                if !can_crash(e, config, sim)? {
                    return Err(Error::NonCrashablePrototype {
                        event: e.id,
                        attempts: 1,
                    });
                }
            }
            events
                .iter()
                .enumerate()
                .map(|(id, e)| PrototypeEvent { id, ..*e })
                .collect()
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
            let mut events = Vec::with_capacity(config.n_events);
            for id in 0..config.n_events {
                let mut accepted = None;
                for _ in 0..MAX_PROTOTYPE_ATTEMPTS {
                    let candidate = draw_prototype(id, &mut rng);
                    if can_crash(&candidate, config, sim)? {
                        accepted = Some(candidate);
                        break;
                    }
                }
                events.push(accepted.ok_or(Error::NonCrashablePrototype {
                    event: id,
                    attempts: MAX_PROTOTYPE_ATTEMPTS,
                })?);
            }
            events
        }
    };

    let glance = match &config.glance_pmf {
        Some(p) => GlancePmf::new(p.clone(), config.oeoff_levels.len())?,
        None => GlancePmf::synthetic(&config.oeoff_levels),
    };
    let decel_pmf = match &config.decel_pmf {
        Some(p) => DecelPmf::new(p.clone(), config.decel_levels.len())?,
        None => DecelPmf::synthetic(config.decel_levels.len()),
    };
    let weights = JointWeightTable::from_marginals(&glance, &decel_pmf);
    let dims = GridDims {
        n_events: config.n_events,
        n_oeoff: config.oeoff_levels.len(),
        n_decel: config.decel_levels.len(),
    };
    Ok(ScenarioGrid {
        events,
        oeoff_levels: config.oeoff_levels.clone(),
        decel_levels: config.decel_levels.clone(),
        glance,
        decel_pmf,
        weights,
        rng_seed: config.rng_seed,
        dims,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n_oeoff: usize, n_decel: usize) -> GridConfig {
        GridConfig {
            n_events: 1,
            oeoff_levels: (0..n_oeoff).map(|i| 5.0 + i as f64 * 0.5).collect(),
            decel_levels: (0..n_decel).map(|i| 3.75 + i as f64).collect(),
            ..GridConfig::default()
        }
    }

    #[test]
    fn default_level_counts() {
        let c = GridConfig::default();
        assert_eq!(c.oeoff_levels.len(), 67);
        assert_eq!(c.decel_levels.len(), 15);
        assert_eq!(c.oeoff_levels[66], 6.6);
        assert_eq!(c.decel_levels[14], 10.75);
    }

    #[test]
    fn toy_grid_two_cells() {
        let g = build_grid(&toy(2, 1), &SimParams::default()).unwrap();
        assert_eq!(g.n_cells(), 2);
        let s: f64 = g.weights.as_slice().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_marginals() {
        let mut c = toy(2, 2);
        c.glance_pmf = Some(vec![0.5, 0.5]);
        c.decel_pmf = Some(vec![0.5, 0.5]);
        let g = build_grid(&c, &SimParams::default()).unwrap();
        for o in 0..2 {
            for d in 0..2 {
                assert_eq!(g.joint_weight(ScenarioCell::new(0, o, d)).unwrap(), 0.25);
            }
        }
    }

    #[test]
    fn zero_glance_times_decel() {
        let levels = GridConfig::default().oeoff_levels;
        let g = GlancePmf::synthetic(&levels);
        assert_eq!(g.probabilities()[0], 0.854);
        // cell with oeoff = 0 and decel mass 0.1
        let d = DecelPmf::new(vec![0.1, 0.9], 2).unwrap();
        let t = JointWeightTable::from_marginals(&g, &d);
        assert!((t.weight(0, 0) - 0.0854).abs() < 1e-15);
    }

    #[test]
    fn out_of_bounds_cell() {
        let g = build_grid(&toy(2, 1), &SimParams::default()).unwrap();
        assert!(matches!(
            g.joint_weight(ScenarioCell::new(0, 2, 0)),
            Err(Error::CellOutOfBounds { .. })
        ));
        assert!(g.joint_weight(ScenarioCell::new(1, 0, 0)).is_err());
    }

    #[test]
    fn flat_index_roundtrip() {
        let dims = GridDims {
            n_events: 3,
            n_oeoff: 5,
            n_decel: 4,
        };
        for f in 0..dims.n_cells() {
            assert_eq!(dims.flat(dims.cell(f)), f);
        }
        assert_eq!(dims.event_range(1), 20..40);
    }

    #[test]
    fn rejects_bad_levels() {
        let mut c = GridConfig::default();
        c.decel_levels = vec![4.0, 3.0];
        assert!(matches!(build_grid(&c, &SimParams::default()), Err(Error::Config(_))));
        let mut c = GridConfig::default();
        c.n_events = 0;
        assert!(build_grid(&c, &SimParams::default()).is_err());
        let mut c = GridConfig::default();
        c.glance_pmf = Some(vec![1.0; 67]);
        assert!(build_grid(&c, &SimParams::default()).is_err());
    }

    #[test]
    fn uncrashable_prototype_rejected() {
        let mut c = toy(1, 1);
        c.oeoff_levels = vec![0.0];
        c.decel_levels = vec![10.0];
        c.events = Some(vec![PrototypeEvent {
            id: 0,
            fv_speed0: 5.0,
            lv_speed0: 5.0,
            gap0: 100.0,
            lv_decel: 1.0,
        }]);
        assert!(matches!(
            build_grid(&c, &SimParams::default()),
            Err(Error::NonCrashablePrototype { .. })
        ));
    }

    #[test]
    fn deterministic_generation() {
        let a = build_grid(&GridConfig::default(), &SimParams::default()).unwrap();
        let b = build_grid(&GridConfig::default(), &SimParams::default()).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.n_cells(), 44_220);
    }
}
