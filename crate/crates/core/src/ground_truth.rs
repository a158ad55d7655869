//! Exhaustive full-grid enumeration and the simulator abstraction used by the
//! sampling loops.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::scenario::{GridDims, ScenarioGrid};
use crate::sim::{self, InjuryRiskParams, OutcomeTriple, SimOutcome, SimParams, Target};

/// Something that can produce baseline and countermeasure outcomes per flat cell.
pub trait Simulator: Sync {
    fn baseline(&self, flat: usize) -> Result<SimOutcome>;
    fn countermeasure(&self, flat: usize) -> Result<SimOutcome>;
    fn injury_params(&self) -> InjuryRiskParams;
}

/// Runs the kinematic simulator on demand.
pub struct LiveSimulator<'a> {
    grid: &'a ScenarioGrid,
    params: SimParams,
}

impl<'a> LiveSimulator<'a> {
    pub fn new(grid: &'a ScenarioGrid, params: SimParams) -> Self {
        Self { grid, params }
    }

    fn inputs(&self, flat: usize) -> (&crate::scenario::PrototypeEvent, f64, f64) {
        let cell = self.grid.dims().cell(flat);
        (
            &self.grid.events[cell.event],
            self.grid.oeoff(cell),
            self.grid.decel(cell),
        )
    }
}

impl Simulator for LiveSimulator<'_> {
    fn baseline(&self, flat: usize) -> Result<SimOutcome> {
        let (e, o, d) = self.inputs(flat);
        sim::simulate_baseline(e, o, d, &self.params)
    }

    fn countermeasure(&self, flat: usize) -> Result<SimOutcome> {
        let (e, o, d) = self.inputs(flat);
        sim::simulate_countermeasure(e, o, d, &self.params)
    }

    fn injury_params(&self) -> InjuryRiskParams {
        self.params.injury
    }
}

/// Replays outcomes from a precomputed ground truth table.
impl Simulator for GroundTruth {
    fn baseline(&self, flat: usize) -> Result<SimOutcome> {
        Ok(outcome_from_speed(self.base_speed[flat]))
    }

    fn countermeasure(&self, flat: usize) -> Result<SimOutcome> {
        Ok(outcome_from_speed(self.cm_speed[flat]))
    }

    fn injury_params(&self) -> InjuryRiskParams {
        self.injury
    }
}

fn outcome_from_speed(speed: f64) -> SimOutcome {
    if speed > 0.0 {
        SimOutcome::crash(speed)
    } else {
        SimOutcome::no_crash()
    }
}

/// Full-grid outcomes and the per-case and grand means of every target.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub dims: GridDims,
    pub oeoff_levels: Vec<f64>,
    pub decel_levels: Vec<f64>,
    /// Joint weight per flat cell.
    pub weight: Vec<f64>,
    /// Baseline impact speed per flat cell, km/h (0 = no crash).
    pub base_speed: Vec<f64>,
    /// Countermeasure impact speed per flat cell, km/h.
    pub cm_speed: Vec<f64>,
    pub injury: InjuryRiskParams,
    /// `case_means[target][event]`; NaN for cases without baseline-crash mass.
    pub case_means: [Vec<f64>; 3],
    /// Events that enter the grand mean.
    pub included: Vec<bool>,
    pub grand_mean: [f64; 3],
    /// Number of simulator runs that produced the table.
    pub sims_executed: u64,
}

impl GroundTruth {
    pub fn triple(&self, flat: usize) -> OutcomeTriple {
        OutcomeTriple::from_speeds(self.base_speed[flat], self.cm_speed[flat], &self.injury)
    }

    pub fn truth(&self, target: Target) -> f64 {
        self.grand_mean[target.index()]
    }

    pub fn n_included(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }

    /// Baseline crash share over all cells (unweighted).
    pub fn crash_proportion(&self) -> f64 {
        let n = self.base_speed.iter().filter(|&&s| s > 0.0).count();
        n as f64 / self.base_speed.len() as f64
    }

    /// Maximum baseline impact speed per event.
    pub fn max_speeds(&self) -> Vec<f64> {
        (0..self.dims.n_events)
            .map(|e| {
                self.base_speed[self.dims.event_range(e)]
                    .iter()
                    .copied()
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Grand mean computed by case weighting: every baseline crash cell gets
    /// weight `w_i / W_k` where `W_k` is the crash-region mass of its case.
    /// Algebraically identical to averaging the per-case means.
    pub fn post_stratified_mean(&self, target: Target) -> f64 {
        let k = self.n_included() as f64;
        let mut total = 0.0;
        for e in 0..self.dims.n_events {
            if !self.included[e] {
                continue;
            }
            let range = self.dims.event_range(e);
            let crash_mass: f64 = range
                .clone()
                .filter(|&i| self.base_speed[i] > 0.0)
                .map(|i| self.weight[i])
                .sum();
            for i in range {
                if self.base_speed[i] > 0.0 {
                    total += self.weight[i] / crash_mass * target.value(&self.triple(i));
                }
            }
        }
        total / k
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for flat in 0..self.dims.n_cells() {
            let cell = self.dims.cell(flat);
            let t = self.triple(flat);
            let base_crash = self.base_speed[flat] > 0.0;
            let cm_crash = self.cm_speed[flat] > 0.0;
            w.write_record(&[
                cell.event.to_string(),
                self.oeoff_levels[cell.oeoff_idx].to_string(),
                self.decel_levels[cell.decel_idx].to_string(),
                self.weight[flat].to_string(),
                self.base_speed[flat].to_string(),
                self.cm_speed[flat].to_string(),
                t.impact_speed_reduction.to_string(),
                t.injury_risk_reduction.to_string(),
                u8::from(base_crash).to_string(),
                u8::from(cm_crash).to_string(),
                u8::from(t.crash_avoided > 0.0).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a table written by [`GroundTruth::write_csv`]. Levels and
    /// dimensions are recovered from the rows; means are recomputed.
    pub fn read_csv<R: Read>(reader: R, injury: InjuryRiskParams) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header != CSV_HEADER {
            return Err(Error::Parse(format!("unexpected ground truth header {header:?}")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad number `{s}`: {e}")))
        };
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let event: usize = rec[0]
                .parse()
                .map_err(|e| Error::Parse(format!("bad event id: {e}")))?;
            rows.push((event, parse(&rec[1])?, parse(&rec[2])?, parse(&rec[3])?, parse(&rec[4])?, parse(&rec[5])?));
        }
        let mut oeoff: Vec<f64> = Vec::new();
        let mut decel: Vec<f64> = Vec::new();
        let mut n_events = 0;
        for &(e, o, d, ..) in &rows {
            n_events = n_events.max(e + 1);
            if !oeoff.contains(&o) {
                oeoff.push(o);
            }
            if !decel.contains(&d) {
                decel.push(d);
            }
        }
        let dims = GridDims {
            n_events,
            n_oeoff: oeoff.len(),
            n_decel: decel.len(),
        };
        if rows.len() != dims.n_cells() {
            return Err(Error::Parse(format!(
                "{} rows do not form a complete {}x{}x{} grid",
                rows.len(),
                n_events,
                oeoff.len(),
                decel.len()
            )));
        }
        let mut weight = vec![0.0; rows.len()];
        let mut base_speed = vec![0.0; rows.len()];
        let mut cm_speed = vec![0.0; rows.len()];
        for (i, &(e, o, d, w, b, c)) in rows.iter().enumerate() {
            let cell = dims.cell(i);
            if cell.event != e || oeoff[cell.oeoff_idx] != o || decel[cell.decel_idx] != d {
                return Err(Error::Parse(format!("row {i} is out of canonical order")));
            }
            weight[i] = w;
            base_speed[i] = b;
            cm_speed[i] = c;
        }
        Ok(Self::assemble(
            dims,
            oeoff,
            decel,
            weight,
            base_speed,
            cm_speed,
            injury,
            0,
        ))
    }

    pub fn load(path: &Path, injury: InjuryRiskParams) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), injury)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        dims: GridDims,
        oeoff_levels: Vec<f64>,
        decel_levels: Vec<f64>,
        weight: Vec<f64>,
        base_speed: Vec<f64>,
        cm_speed: Vec<f64>,
        injury: InjuryRiskParams,
        sims_executed: u64,
    ) -> Self {
        let mut case_means: [Vec<f64>; 3] = Default::default();
        let mut included = vec![false; dims.n_events];
        for e in 0..dims.n_events {
            let mut num = [0.0; 3];
            let mut den = 0.0;
            for i in dims.event_range(e) {
                if base_speed[i] > 0.0 {
                    let t = OutcomeTriple::from_speeds(base_speed[i], cm_speed[i], &injury);
                    for (n, v) in num.iter_mut().zip(t.values()) {
                        *n += weight[i] * v;
                    }
                    den += weight[i];
                }
            }
            included[e] = den > 0.0;
            if !included[e] {
                log::warn!("event {e} has no baseline-crash mass; excluded from the grand mean");
            }
            for (t, n) in num.iter().enumerate() {
                case_means[t].push(if den > 0.0 { n / den } else { f64::NAN });
            }
        }
        let k = included.iter().filter(|&&b| b).count() as f64;
        let mut grand_mean = [f64::NAN; 3];
        for (t, g) in grand_mean.iter_mut().enumerate() {
            let s: f64 = (0..dims.n_events)
                .filter(|&e| included[e])
                .map(|e| case_means[t][e])
                .sum();
            *g = s / k;
        }
        Self {
            dims,
            oeoff_levels,
            decel_levels,
            weight,
            base_speed,
            cm_speed,
            injury,
            case_means,
            included,
            grand_mean,
            sims_executed,
        }
    }
}

pub const CSV_HEADER: [&str; 11] = [
    "event_id",
    "oeoff",
    "decel",
    "w",
    "base_speed",
    "cm_speed",
    "speed_reduction",
    "injury_risk_reduction",
    "base_crash",
    "cm_crash",
    "crash_avoided",
];

/// Simulates every cell, baseline and countermeasure.
pub fn build_ground_truth(grid: &ScenarioGrid, params: &SimParams, exec: Execution) -> Result<GroundTruth> {
    let dims = grid.dims();
    let sim = LiveSimulator::new(grid, *params);
    let outcomes = par::try_map_indexed(exec, dims.n_cells(), |flat| {
        Ok::<_, Error>((sim.baseline(flat)?, sim.countermeasure(flat)?))
    })?;
    let base_speed = outcomes.iter().map(|(b, _)| b.impact_speed).collect();
    let cm_speed = outcomes.iter().map(|(_, c)| c.impact_speed).collect();
    let weight = (0..dims.n_cells()).map(|f| grid.weight_flat(f)).collect();
    Ok(GroundTruth::assemble(
        dims,
        grid.oeoff_levels.clone(),
        grid.decel_levels.clone(),
        weight,
        base_speed,
        cm_speed,
        params.injury,
        2 * dims.n_cells() as u64,
    ))
}
