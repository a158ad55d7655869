//! Experiment loops, repeated evaluation and the comparison suites.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assr::{BaselineState, CmNeed, CountermeasureState, KnowledgeMap};
use crate::error::{Error, Result};
use crate::estimators::{combine_cases, CaseAccumulator, Estimate};
use crate::forest::{self, Features, Forest, ForestParams, GridFeatures, ModelKind};
use crate::ground_truth::Simulator;
use crate::par::{self, Execution};
use crate::samplers::{self, ActiveInputs, Draw, SamplingScheme, SchemeKind, Sigma, DEFAULT_FLOOR};
use crate::scenario::ScenarioGrid;
use crate::sim::{OutcomeTriple, Target};
use crate::stopping::{should_stop, StopReason, StoppingRule};

/// 20% of the default 88,440-simulation grid.
pub const DEFAULT_BUDGET: u64 = 17_688;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Density,
    Severity,
    Active,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Density => "density",
            Method::Severity => "severity",
            Method::Active => "active",
        }
    }

    fn needs_initialization(self) -> bool {
        self != Method::Density
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "density" => Ok(Method::Density),
            "severity" => Ok(Method::Severity),
            "active" => Ok(Method::Active),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Target the active model optimizes and the precision rules watch.
    pub target: Target,
    pub assr: bool,
    pub stratified: bool,
    /// Case-estimate shrinkage; unset means on for active sampling only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shrinkage: Option<bool>,
    pub batch_size: usize,
    pub repetitions: u64,
    pub stopping: Vec<StoppingRule>,
    pub seed: u64,
    /// Uniform mixing weight of every scheme.
    pub floor: f64,
    /// Relative growth of the labeled set that triggers a model refit; 0 refits every iteration.
    pub refit_growth: f64,
    /// Spacing of the RMSE checkpoints, in simulations.
    pub checkpoint_step: u64,
    pub forest: ForestParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Active,
            target: Target::SpeedReduction,
            assr: true,
            stratified: false,
            shrinkage: None,
            batch_size: 10,
            repetitions: 200,
            stopping: vec![StoppingRule::Budget {
                max_sims: DEFAULT_BUDGET,
            }],
            seed: 0,
            floor: DEFAULT_FLOOR,
            refit_growth: 0.25,
            checkpoint_step: 500,
            forest: ForestParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, n_events: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.stratified && self.batch_size % n_events != 0 {
            return Err(Error::Config(format!(
                "stratified sampling needs batch_size divisible by {n_events}, got {}",
                self.batch_size
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.floor) {
            return Err(Error::Config(format!("floor {} outside [0, 1]", self.floor)));
        }
        if !(self.refit_growth >= 0.0 && self.refit_growth.is_finite()) {
            return Err(Error::Config("refit_growth must be finite and non-negative".into()));
        }
        if self.checkpoint_step == 0 {
            return Err(Error::Config("checkpoint_step must be positive".into()));
        }
        for r in &self.stopping {
            r.validate()?;
        }
        self.forest.validate()
    }

    pub fn shrinks(&self) -> bool {
        self.shrinkage.unwrap_or(self.method == Method::Active)
    }

    /// Largest budget among the stopping rules, if any.
    pub fn budget(&self) -> Option<u64> {
        self.stopping
            .iter()
            .filter_map(|r| match r {
                StoppingRule::Budget { max_sims } => Some(*max_sims),
                _ => None,
            })
            .max()
    }

    /// Short label such as `active-speed_reduction-assr-post-b10`.
    pub fn label(&self) -> String {
        let mut s = self.method.name().to_string();
        if self.method == Method::Active {
            s.push('-');
            s.push_str(self.target.name());
        }
        s.push_str(if self.assr { "-assr" } else { "-noassr" });
        s.push_str(if self.stratified { "-strat" } else { "-post" });
        s.push_str(&format!("-b{}", self.batch_size));
        if self.shrinkage.is_some_and(|v| v != (self.method == Method::Active)) {
            s.push_str(if self.shrinks() { "-shrink" } else { "-noshrink" });
        }
        s
    }
}

/// One estimation step of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: u64,
    pub sims_used: u64,
    /// `None` for the deterministic initialization.
    pub scheme: Option<SchemeKind>,
    pub fallback: bool,
    pub samplable: usize,
    /// Indexed by [`Target::index`]; NaN until defined.
    pub values: [f64; 3],
    pub ses: [f64; 3],
}

impl TraceRow {
    pub fn value(&self, target: Target) -> f64 {
        self.values[target.index()]
    }

    pub fn se(&self, target: Target) -> f64 {
        self.ses[target.index()]
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// `sims_used` is strictly increasing along the trace.
    pub trace: Vec<TraceRow>,
    pub stop: StopReason,
    pub sims_used: u64,
    pub iterations: u64,
}

/// RNG stream of one repetition.
pub fn repetition_rng(seed: u64, repetition: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repetition);
    rng
}

/// Crash probability of a cell whose baseline outcome is known.
fn known_crash_probability(state: BaselineState) -> Option<f64> {
    match state {
        BaselineState::Crash { .. } => Some(1.0),
        BaselineState::NonCrash(_) => Some(0.0),
        BaselineState::Unknown => None,
    }
}

struct ActiveModel {
    /// Predicted crash probability, replaced by 0/1 once the baseline is known.
    p_hat: Vec<f64>,
    y_hat: Vec<f64>,
    sigma: Option<Vec<f64>>,
    sigma_const: f64,
}

struct Loop<'a, S: Simulator + ?Sized> {
    cfg: &'a ExperimentConfig,
    grid: &'a ScenarioGrid,
    sim: &'a S,
    exec: Execution,
    km: KnowledgeMap,
    rng: ChaCha8Rng,
    sims: u64,
    /// `acc[event][target]`
    acc: Vec<[CaseAccumulator; 3]>,
    pooled_draws: usize,
    labeled: Vec<usize>,
    is_labeled: Vec<bool>,
    features: Option<GridFeatures>,
    model: Option<ActiveModel>,
    next_refit: usize,
    cached: Option<(usize, SamplingScheme)>,
    last_case_values: Option<Vec<f64>>,
}

impl<S: Simulator + ?Sized> Loop<'_, S> {
    fn run_baselines(&mut self, cells: &[usize]) -> Result<()> {
        let mut todo: Vec<usize> = Vec::new();
        for &f in cells {
            if self.km.baseline(f) == BaselineState::Unknown && !todo.contains(&f) {
                todo.push(f);
            }
        }
        let outcomes = par::try_map_slice(self.exec, &todo, |&f| self.sim.baseline(f))?;
        for (&f, o) in todo.iter().zip(outcomes) {
            self.sims += u64::from(o.sim_invocations);
            let newly = self.km.record_baseline(f, o)?;
            if let Some(m) = &mut self.model {
                for i in newly.into_iter().chain(std::iter::once(f)) {
                    m.p_hat[i] = known_crash_probability(self.km.baseline(i)).unwrap_or(m.p_hat[i]);
                }
            }
        }
        Ok(())
    }

    fn run_countermeasures(&mut self, cells: &[usize]) -> Result<()> {
        let mut todo: Vec<usize> = Vec::new();
        for &f in cells {
            if self.km.needs_countermeasure(f)? == CmNeed::Run && !todo.contains(&f) {
                todo.push(f);
            }
        }
        let outcomes = par::try_map_slice(self.exec, &todo, |&f| self.sim.countermeasure(f))?;
        for (&f, o) in todo.iter().zip(outcomes) {
            self.sims += u64::from(o.sim_invocations);
            self.km.record_countermeasure(f, o)?;
        }
        Ok(())
    }

    /// Baseline crash flag and target values of a cell whose outcomes are known.
    fn outcome(&self, flat: usize) -> Result<(bool, [f64; 3])> {
        match self.km.baseline(flat) {
            BaselineState::NonCrash(_) => Ok((false, [0.0; 3])),
            BaselineState::Crash { speed, .. } => {
                let cm_speed = match self.km.countermeasure(flat) {
                    CountermeasureState::Avoided(_) => 0.0,
                    CountermeasureState::Crash { speed } => speed,
                    CountermeasureState::Unknown => match self.km.needs_countermeasure(flat)? {
                        CmNeed::Known(o) => o.impact_speed,
                        CmNeed::Run => {
                            return Err(Error::SimulationFault(format!(
                                "countermeasure outcome of cell {flat} missing"
                            )))
                        }
                    },
                };
                let t = OutcomeTriple::from_speeds(speed, cm_speed, &self.sim.injury_params());
                Ok((true, t.values()))
            }
            BaselineState::Unknown => Err(Error::SimulationFault(format!(
                "baseline outcome of cell {flat} missing"
            ))),
        }
    }

    fn label(&mut self, flat: usize) {
        if !self.is_labeled[flat] {
            self.is_labeled[flat] = true;
            self.labeled.push(flat);
        }
    }

    fn initialize(&mut self) -> Result<()> {
        let cells: Vec<usize> = samplers::init_deterministic(self.grid.dims())
            .into_iter()
            .map(|c| self.grid.dims().flat(c))
            .collect();
        self.run_baselines(&cells)?;
        for &f in &cells {
            self.label(f);
        }
        Ok(())
    }

    fn max_speeds(&self) -> Vec<Option<f64>> {
        (0..self.grid.n_events()).map(|e| self.km.max_speed(e)).collect()
    }

    fn cached_scheme(&mut self, kind: SchemeKind) -> Result<SamplingScheme> {
        let count = self.km.samplable_count();
        if let Some((n, s)) = &self.cached {
            if *n == count && (s.kind() == kind || (kind == SchemeKind::Fallback && s.kind() == SchemeKind::Density)) {
                return Ok(s.clone().with_kind(kind));
            }
        }
        let s = match kind {
            SchemeKind::Severity => samplers::severity_scheme(
                self.grid,
                &self.max_speeds(),
                &self.km,
                self.cfg.stratified,
                self.cfg.floor,
            )?,
            _ => samplers::density_scheme(self.grid, &self.km, self.cfg.stratified, self.cfg.floor)?
                .with_kind(kind),
        };
        self.cached = Some((count, s.clone()));
        Ok(s)
    }

    fn refit(&mut self) -> Result<()> {
        let n = self.labeled.len();
        let after = |growth: f64| n + ((n as f64 * growth).ceil() as usize).max(1);
        // A rejected fit is retried sooner than an accepted one is refreshed.
        self.next_refit = after(self.cfg.refit_growth / 4.0);
        self.model = None;
        let seed_b: u64 = self.rng.random();
        let seed_t: u64 = self.rng.random();
        if self.features.is_none() {
            let speeds: Vec<f64> = self
                .max_speeds()
                .into_iter()
                .map(|m| m.ok_or(Error::InitializationRequired))
                .collect::<Result<_>>()?;
            self.features = Some(GridFeatures::new(
                self.grid.dims(),
                &self.grid.oeoff_levels,
                &self.grid.decel_levels,
                &speeds,
            )?);
        }
        let g = self.features.as_ref().expect("set above");
        let target = self.cfg.target;

        let mut xb: Vec<Features> = Vec::with_capacity(self.labeled.len());
        let mut yb = Vec::with_capacity(self.labeled.len());
        let mut xt: Vec<Features> = Vec::new();
        let mut yt = Vec::new();
        for &f in &self.labeled {
            let crashed = matches!(self.km.baseline(f), BaselineState::Crash { .. });
            xb.push(g.features(f));
            yb.push(f64::from(u8::from(crashed)));
            if crashed && self.km.needs_countermeasure(f)? != CmNeed::Run {
                let (_, v) = self.outcome(f)?;
                xt.push(g.features(f));
                yt.push(v[target.index()]);
            }
        }
        let params = &self.cfg.forest;
        let kind_t = if target.is_binary() {
            ModelKind::Classification
        } else {
            ModelKind::Regression
        };
        let fitted = forest::fit(&xb, &yb, ModelKind::Classification, params, seed_b, Execution::Sequential)
            .and_then(|b| Ok((b, forest::fit(&xt, &yt, kind_t, params, seed_t, Execution::Sequential)?)));
        let (mb, mt): (Forest, Forest) = match fitted {
            Ok(m) => m,
            Err(Error::InsufficientData(msg)) => {
                log::debug!("model fit skipped: {msg}");
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        if !(mb.passes_gate() && mt.passes_gate()) {
            log::debug!(
                "model gate failed: crash {:.3}, target {:.3}",
                mb.holdout_metric,
                mt.holdout_metric
            );
            return Ok(());
        }
        let mut p_hat = mb.predict_grid(g);
        for (f, p) in p_hat.iter_mut().enumerate() {
            if let Some(k) = known_crash_probability(self.km.baseline(f)) {
                *p = k;
            }
        }
        let y_hat = mt.predict_grid(g);
        self.next_refit = after(self.cfg.refit_growth);
        let sigma = (kind_t == ModelKind::Classification)
            .then(|| y_hat.iter().map(|&y| mt.sigma(y)).collect());
        self.model = Some(ActiveModel {
            p_hat,
            y_hat,
            sigma,
            sigma_const: mt.holdout_rmse,
        });
        Ok(())
    }

    fn active_scheme(&mut self) -> Result<Option<SamplingScheme>> {
        if self.labeled.len() >= self.next_refit {
            self.refit()?;
        }
        let Some(m) = &self.model else {
            return Ok(None);
        };
        let dims = self.grid.dims();
        let p_hat = &m.p_hat;
        let mu: Vec<f64> = match &self.last_case_values {
            Some(v) => v.clone(),
            None => (0..dims.n_events)
                .map(|e| {
                    let (mut num, mut den) = (0.0, 0.0);
                    for f in dims.event_range(e) {
                        let pw = p_hat[f] * self.grid.weight_flat(f);
                        num += pw * m.y_hat[f];
                        den += pw;
                    }
                    if den > 0.0 {
                        num / den
                    } else {
                        0.0
                    }
                })
                .collect(),
        };
        let inputs = ActiveInputs {
            p_hat,
            y_hat: &m.y_hat,
            sigma: match &m.sigma {
                Some(s) => Sigma::PerCell(s),
                None => Sigma::Constant(m.sigma_const),
            },
            mu: &mu,
        };
        match samplers::active_scheme(self.grid, &inputs, &self.km, self.cfg.stratified, self.cfg.floor) {
            Ok(s) => Ok(Some(s)),
            Err(Error::InsufficientData(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn scheme(&mut self) -> Result<SamplingScheme> {
        match self.cfg.method {
            Method::Density => self.cached_scheme(SchemeKind::Density),
            Method::Severity => self.cached_scheme(SchemeKind::Severity),
            Method::Active => match self.active_scheme()? {
                Some(s) => Ok(s),
                None => self.cached_scheme(SchemeKind::Fallback),
            },
        }
    }

    fn sample(&mut self, draws: &[Draw]) -> Result<()> {
        let cells: Vec<usize> = draws.iter().map(|d| d.flat).collect();
        self.run_baselines(&cells)?;
        self.run_countermeasures(&cells)?;
        let dims = self.grid.dims();
        for d in draws {
            let (crash, y) = self.outcome(d.flat)?;
            let w = self.grid.weight_flat(d.flat);
            for (t, acc) in self.acc[dims.event_of(d.flat)].iter_mut().enumerate() {
                acc.add_draw(d.pi, w, crash, y[t]);
            }
            self.label(d.flat);
        }
        self.pooled_draws += draws.len();
        Ok(())
    }

    fn estimate(&self, target: Target) -> Result<Option<Estimate>> {
        let t = target.index();
        let cases: Vec<_> = self
            .acc
            .iter()
            .map(|a| {
                let n = if self.cfg.stratified {
                    a[t].draws()
                } else {
                    self.pooled_draws
                };
                a[t].estimate(n)
            })
            .collect();
        match combine_cases(&cases, self.cfg.shrinks(), self.sims) {
            Ok(e) => Ok(Some(e)),
            Err(Error::InsufficientData(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Runs one repetition of an experiment. Simulator calls within a batch fan
/// out according to `exec`.
pub fn run_experiment<S: Simulator + ?Sized>(
    cfg: &ExperimentConfig,
    grid: &ScenarioGrid,
    sim: &S,
    repetition: u64,
    exec: Execution,
) -> Result<ExperimentResult> {
    cfg.validate(grid.n_events())?;
    let dims = grid.dims();
    let mut lp = Loop {
        cfg,
        grid,
        sim,
        exec,
        km: KnowledgeMap::new(dims, cfg.assr),
        rng: repetition_rng(cfg.seed, repetition),
        sims: 0,
        acc: vec![[CaseAccumulator::new(); 3]; dims.n_events],
        pooled_draws: 0,
        labeled: Vec::new(),
        is_labeled: vec![false; dims.n_cells()],
        features: None,
        model: None,
        next_refit: 0,
        cached: None,
        last_case_values: None,
    };
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut iteration = 0u64;

    if cfg.method.needs_initialization() {
        lp.initialize()?;
        trace.push(TraceRow {
            iteration,
            sims_used: lp.sims,
            scheme: None,
            fallback: false,
            samplable: lp.km.samplable_count(),
            values: [f64::NAN; 3],
            ses: [f64::NAN; 3],
        });
        if let Some(reason) = should_stop(&cfg.stopping, f64::NAN, f64::NAN, lp.sims, iteration) {
            return Ok(ExperimentResult {
                trace,
                stop: reason,
                sims_used: lp.sims,
                iterations: iteration,
            });
        }
    }

    let stop = loop {
        iteration += 1;
        let scheme = match lp.scheme() {
            Ok(s) => s,
            Err(Error::ExhaustedSpace) => break StopReason::Exhausted,
            Err(e) => return Err(e),
        };
        let draws = scheme.draw_batch(cfg.batch_size, &mut lp.rng)?;
        let before = lp.sims;
        lp.sample(&draws)?;

        let mut values = [f64::NAN; 3];
        let mut ses = [f64::NAN; 3];
        for t in Target::ALL {
            if let Some(e) = lp.estimate(t)? {
                values[t.index()] = e.value;
                ses[t.index()] = e.se;
                if t == cfg.target {
                    lp.last_case_values = Some(e.per_case.iter().map(|c| c.0).collect());
                }
            }
        }
        let row = TraceRow {
            iteration,
            sims_used: lp.sims,
            scheme: Some(scheme.kind()),
            fallback: scheme.kind() == SchemeKind::Fallback,
            samplable: lp.km.samplable_count(),
            values,
            ses,
        };
        match trace.last_mut() {
            Some(last) if last.sims_used == row.sims_used => *last = row,
            _ => trace.push(row),
        }

        if lp.sims == before && !(0..dims.n_cells()).any(|f| lp.km.is_samplable(f) && lp.km.has_pending_cost(f)) {
            break StopReason::Exhausted;
        }
        let t = cfg.target.index();
        if let Some(reason) = should_stop(&cfg.stopping, values[t], ses[t], lp.sims, iteration) {
            break reason;
        }
    };
    Ok(ExperimentResult {
        trace,
        stop,
        sims_used: lp.sims,
        iterations: iteration,
    })
}

/// Runs `cfg.repetitions` independent repetitions, in parallel when `exec` allows.
pub fn run_repetitions<S: Simulator + ?Sized>(
    cfg: &ExperimentConfig,
    grid: &ScenarioGrid,
    sim: &S,
    exec: Execution,
) -> Result<Vec<ExperimentResult>> {
    cfg.validate(grid.n_events())?;
    par::try_map_indexed(exec, cfg.repetitions as usize, |rep| {
        run_experiment(cfg, grid, sim, rep as u64, Execution::Sequential)
    })
}

/// Last trace value at or before `sims`, NaN when none exists yet.
pub fn value_at(trace: &[TraceRow], sims: u64, target: Target) -> f64 {
    let i = trace.partition_point(|r| r.sims_used <= sims);
    if i == 0 {
        f64::NAN
    } else {
        trace[i - 1].value(target)
    }
}

/// Evenly spaced checkpoints `step, 2·step, …` up to and including `max`.
pub fn checkpoints(step: u64, max: u64) -> Vec<u64> {
    let mut v: Vec<u64> = (1..=max / step).map(|k| k * step).collect();
    if v.last() != Some(&max) && max > 0 {
        v.push(max);
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseRow {
    pub label: String,
    pub sims: u64,
    pub target: Target,
    pub rmse: f64,
    pub mean: f64,
    pub truth: f64,
    /// Repetitions with a defined estimate at this checkpoint.
    pub n_defined: usize,
}

pub const RMSE_HEADER: [&str; 7] = ["label", "sims", "target", "rmse", "mean_estimate", "truth", "n_defined"];

/// RMSE of every target at every checkpoint, carrying each trace's last value forward.
pub fn rmse_curves(label: &str, results: &[ExperimentResult], truth: [f64; 3], checkpoints: &[u64]) -> Vec<RmseRow> {
    let mut rows = Vec::new();
    for t in Target::ALL {
        for &c in checkpoints {
            let vals: Vec<f64> = results
                .iter()
                .map(|r| value_at(&r.trace, c, t))
                .filter(|v| v.is_finite())
                .collect();
            let n = vals.len();
            let truth_t = truth[t.index()];
            let (rmse, mean) = if n == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let mse = vals.iter().map(|v| (v - truth_t).powi(2)).sum::<f64>() / n as f64;
                (mse.sqrt(), vals.iter().sum::<f64>() / n as f64)
            };
            rows.push(RmseRow {
                label: label.to_string(),
                sims: c,
                target: t,
                rmse,
                mean,
                truth: truth_t,
                n_defined: n,
            });
        }
    }
    rows
}

/// Runs the repetitions of `cfg` and reduces them to RMSE curves.
pub fn evaluate_rmse<S: Simulator + ?Sized>(
    cfg: &ExperimentConfig,
    grid: &ScenarioGrid,
    sim: &S,
    truth: [f64; 3],
    exec: Execution,
) -> Result<Vec<RmseRow>> {
    let results = run_repetitions(cfg, grid, sim, exec)?;
    let max = cfg
        .budget()
        .unwrap_or_else(|| results.iter().map(|r| r.sims_used).max().unwrap_or(0));
    Ok(rmse_curves(&cfg.label(), &results, truth, &checkpoints(cfg.checkpoint_step, max)))
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        v.to_string()
    }
}

pub const TRACE_HEADER: [&str; 12] = [
    "iteration",
    "sims_used",
    "scheme",
    "fallback",
    "samplable",
    "speed_reduction",
    "speed_reduction_se",
    "crash_avoidance",
    "crash_avoidance_se",
    "injury_risk_reduction",
    "injury_risk_reduction_se",
    "stop_reason",
];

/// Trace CSV; the stop reason is written on the last row only.
pub fn write_trace_csv<W: Write>(result: &ExperimentResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    let last = result.trace.len().saturating_sub(1);
    for (i, r) in result.trace.iter().enumerate() {
        let mut rec = vec![
            r.iteration.to_string(),
            r.sims_used.to_string(),
            r.scheme.map_or("init", |s| s.name()).to_string(),
            u8::from(r.fallback).to_string(),
            r.samplable.to_string(),
        ];
        for t in Target::ALL {
            rec.push(fmt_f64(r.value(t)));
            rec.push(fmt_f64(r.se(t)));
        }
        rec.push(if i == last { result.stop.to_string() } else { String::new() });
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rmse_csv<W: Write>(rows: &[RmseRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RMSE_HEADER)?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.sims.to_string(),
            r.target.name().to_string(),
            fmt_f64(r.rmse),
            fmt_f64(r.mean),
            fmt_f64(r.truth),
            r.n_defined.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_rmse_csv`].
pub fn read_rmse_csv<R: std::io::Read>(reader: R) -> Result<Vec<RmseRow>> {
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().ne(RMSE_HEADER) {
        return Err(Error::Parse("unexpected RMSE CSV header".into()));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Parse(format!("bad number `{s}`"))) };
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(RmseRow {
                label: rec[0].to_string(),
                sims: rec[1].parse().map_err(|_| Error::Parse(format!("bad sims `{}`", &rec[1])))?,
                target: rec[2].parse()?,
                rmse: num(&rec[3])?,
                mean: num(&rec[4])?,
                truth: num(&rec[5])?,
                n_defined: rec[6].parse().map_err(|_| Error::Parse(format!("bad count `{}`", &rec[6])))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Methods,
    Assr,
    StratNoAssr,
    StratAssr,
    BatchSize,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Methods,
        Suite::Assr,
        Suite::StratNoAssr,
        Suite::StratAssr,
        Suite::BatchSize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Methods => "methods",
            Suite::Assr => "assr",
            Suite::StratNoAssr => "strat-no-assr",
            Suite::StratAssr => "strat-assr",
            Suite::BatchSize => "batch-size",
        }
    }

    /// Configurations of the suite derived from `base` (budget, seed, repetitions).
    pub fn configs(self, base: &ExperimentConfig, n_events: usize) -> Vec<ExperimentConfig> {
        let with = |method, target, assr, stratified, batch_size| ExperimentConfig {
            method,
            target,
            assr,
            stratified,
            batch_size,
            ..base.clone()
        };
        let mut out = Vec::new();
        match self {
            Suite::Methods => {
                out.push(with(Method::Density, base.target, false, false, base.batch_size));
                out.push(with(Method::Severity, base.target, false, false, base.batch_size));
                for t in Target::ALL {
                    out.push(with(Method::Active, t, false, false, base.batch_size));
                }
            }
            Suite::Assr => {
                for t in Target::ALL {
                    for assr in [false, true] {
                        out.push(with(Method::Active, t, assr, false, base.batch_size));
                    }
                }
            }
            Suite::StratNoAssr | Suite::StratAssr => {
                let assr = self == Suite::StratAssr;
                for stratified in [false, true] {
                    out.push(with(Method::Severity, base.target, assr, stratified, n_events));
                    out.push(with(Method::Active, base.target, assr, stratified, n_events));
                }
            }
            Suite::BatchSize => {
                for k in [1, 3, 10] {
                    out.push(with(Method::Active, base.target, true, true, k * n_events));
                }
            }
        }
        out
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite `{s}`")))
    }
}
