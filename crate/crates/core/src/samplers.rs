//! Selection probabilities over the samplable set and multinomial batch draws.

use std::fmt;
use std::io::Write;
use std::ops::Range;

use rand::Rng;

use crate::assr::KnowledgeMap;
use crate::error::{Error, Result};
use crate::scenario::{GridDims, ScenarioCell, ScenarioGrid};

/// Uniform mixing weight applied to every emitted scheme.
pub const DEFAULT_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Density,
    Severity,
    Active,
    /// Density scheme used in place of a rejected active scheme.
    Fallback,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Density => "density",
            SchemeKind::Severity => "severity",
            SchemeKind::Active => "active",
            SchemeKind::Fallback => "fallback",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One draw together with the probability it was selected with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub flat: usize,
    pub pi: f64,
}

/// Selection probabilities over samplable cells.
///
/// Cells are kept in ascending flat order, so each case occupies one contiguous
/// range. Unstratified schemes sum to one globally; stratified ones sum to one
/// within every non-empty case.
#[derive(Debug, Clone)]
pub struct SamplingScheme {
    kind: SchemeKind,
    stratified: bool,
    dims: GridDims,
    cells: Vec<usize>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    case_ranges: Vec<Range<usize>>,
}

impl SamplingScheme {
    /// Normalizes non-negative `scores` over `cells` (ascending flat indices)
    /// and mixes in a uniform component of weight `floor`.
    ///
    /// A stratified case whose scores are all zero falls back to uniform
    /// within the case; an all-zero unstratified score vector is an error.
    pub fn from_scores(
        kind: SchemeKind,
        dims: GridDims,
        cells: Vec<usize>,
        scores: Vec<f64>,
        stratified: bool,
        floor: f64,
    ) -> Result<Self> {
        if cells.len() != scores.len() {
            return Err(Error::Config("cells and scores differ in length".into()));
        }
        if cells.is_empty() {
            return Err(Error::ExhaustedSpace);
        }
        if !(0.0..=1.0).contains(&floor) {
            return Err(Error::Config(format!("floor {floor} outside [0, 1]")));
        }
        if let Some(s) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Config(format!("invalid sampling score {s}")));
        }

        if cells.windows(2).any(|w| w[0] >= w[1]) || *cells.last().unwrap() >= dims.n_cells() {
            return Err(Error::Config("scheme cells must be ascending and in range".into()));
        }
        Self::assemble(kind, dims, cells, scores, stratified, floor)
    }

    /// `from_scores` without the input checks; `cells` must be ascending and in range.
    fn assemble(
        kind: SchemeKind,
        dims: GridDims,
        cells: Vec<usize>,
        scores: Vec<f64>,
        stratified: bool,
        floor: f64,
    ) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::ExhaustedSpace);
        }
        let mut case_ranges = Vec::with_capacity(dims.n_events);
        let mut start = 0;
        for event in 0..dims.n_events {
            let end = start + cells[start..].partition_point(|&f| dims.event_of(f) == event);
            case_ranges.push(start..end);
            start = end;
        }

        let mut probs = scores;
        let normalize = |p: &mut [f64], allow_uniform: bool| -> Result<()> {
            let total: f64 = p.iter().sum();
            let n = p.len() as f64;
            if !total.is_finite() {
                return Err(Error::Config(format!("sampling scores sum to {total}")));
            }
            if total > 0.0 {
                p.iter_mut().for_each(|x| *x = (1.0 - floor) * *x / total + floor / n);
            } else if allow_uniform {
                p.iter_mut().for_each(|x| *x = 1.0 / n);
            } else {
                return Err(Error::InsufficientData("all sampling scores are zero".into()));
            }
            Ok(())
        };
        if stratified {
            for r in &case_ranges {
                if !r.is_empty() {
                    normalize(&mut probs[r.clone()], true)?;
                }
            }
        } else {
            normalize(&mut probs, false)?;
        }

        let mut cumulative = Vec::with_capacity(probs.len());
        let segments: Vec<Range<usize>> = if stratified {
            case_ranges.clone()
        } else {
            vec![0..probs.len()]
        };
        for r in segments {
            let mut acc = 0.0;
            for p in &probs[r] {
                acc += p;
                cumulative.push(acc);
            }
        }

        Ok(Self {
            kind,
            stratified,
            dims,
            cells,
            probs,
            cumulative,
            case_ranges,
        })
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: SchemeKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn is_stratified(&self) -> bool {
        self.stratified
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn case_range(&self, event: usize) -> Range<usize> {
        self.case_ranges[event].clone()
    }

    /// Probability of `flat`, zero when it is not samplable.
    pub fn pi(&self, flat: usize) -> f64 {
        match self.cells.binary_search(&flat) {
            Ok(i) => self.probs[i],
            Err(_) => 0.0,
        }
    }

    fn pick(&self, range: Range<usize>, rng: &mut impl Rng) -> Draw {
        let cum = &self.cumulative[range.clone()];
        let total = *cum.last().expect("non-empty segment");
        let u = rng.random::<f64>() * total;
        let i = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        let i = range.start + i;
        Draw {
            flat: self.cells[i],
            pi: self.probs[i],
        }
    }

    /// Draws `n` cells with replacement. A stratified scheme draws `n / K`
    /// from every case with samplable cells and requires `K | n`.
    pub fn draw_batch(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<Draw>> {
        if n == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !self.stratified {
            return Ok((0..n).map(|_| self.pick(0..self.cells.len(), rng)).collect());
        }
        let k = self.dims.n_events;
        if n % k != 0 {
            return Err(Error::Config(format!(
                "stratified batch of {n} is not divisible by {k} cases"
            )));
        }
        let per_case = n / k;
        let mut out = Vec::with_capacity(n);
        for r in &self.case_ranges {
            if r.is_empty() {
                continue;
            }
            for _ in 0..per_case {
                out.push(self.pick(r.clone(), rng));
            }
        }
        Ok(out)
    }

    /// Writes `event_id,oeoff_idx,decel_idx,pi,kind`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["event_id", "oeoff_idx", "decel_idx", "pi", "kind"])?;
        for (&flat, &p) in self.cells.iter().zip(&self.probs) {
            let c = self.dims.cell(flat);
            w.write_record([
                c.event.to_string(),
                c.oeoff_idx.to_string(),
                c.decel_idx.to_string(),
                p.to_string(),
                self.kind.name().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn samplable_cells(knowledge: &KnowledgeMap) -> Vec<usize> {
    let mask = knowledge.samplable_mask();
    (0..mask.len()).filter(|&f| mask[f]).collect()
}

/// `π ∝ w` over the samplable set.
pub fn density_scheme(
    grid: &ScenarioGrid,
    knowledge: &KnowledgeMap,
    stratified: bool,
    floor: f64,
) -> Result<SamplingScheme> {
    let cells = samplable_cells(knowledge);
    let scores = cells.iter().map(|&f| grid.weight_flat(f)).collect();
    SamplingScheme::assemble(SchemeKind::Density, grid.dims(), cells, scores, stratified, floor)
}

/// Maps `x` from `[lo, hi]` onto `[0.1, 1]`; a degenerate range maps to 1.
pub fn unit_severity(x: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        0.1 + 0.9 * ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

/// Severity factors `(oeoff, decel, max speed)` of one cell. Weaker braking
/// scores higher.
pub fn severity_factors(grid: &ScenarioGrid, max_speeds: &[f64], cell: ScenarioCell) -> (f64, f64, f64) {
    let o = &grid.oeoff_levels;
    let d = &grid.decel_levels;
    let (m_lo, m_hi) = max_speeds
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| (lo.min(m), hi.max(m)));
    (
        unit_severity(grid.oeoff(cell), o[0], o[o.len() - 1]),
        unit_severity(d[d.len() - 1] - grid.decel(cell), 0.0, d[d.len() - 1] - d[0]),
        unit_severity(max_speeds[cell.event], m_lo, m_hi),
    )
}

/// `π ∝ w × oeoff × decel × max speed`, each factor scaled to `[0.1, 1]`.
/// `max_speeds[k]` is `None` until the event's extreme cell has been simulated.
pub fn severity_scheme(
    grid: &ScenarioGrid,
    max_speeds: &[Option<f64>],
    knowledge: &KnowledgeMap,
    stratified: bool,
    floor: f64,
) -> Result<SamplingScheme> {
    let m: Vec<f64> = max_speeds
        .iter()
        .map(|m| m.ok_or(Error::InitializationRequired))
        .collect::<Result<_>>()?;
    if m.len() != grid.n_events() {
        return Err(Error::InitializationRequired);
    }
    let dims = grid.dims();
    let cells = samplable_cells(knowledge);
    let scores = cells
        .iter()
        .map(|&f| {
            let (a, b, c) = severity_factors(grid, &m, dims.cell(f));
            grid.weight_flat(f) * a * b * c
        })
        .collect();
    SamplingScheme::assemble(SchemeKind::Severity, dims, cells, scores, stratified, floor)
}

/// The most severe cell of every event, which yields its maximum impact speed.
pub fn init_deterministic(dims: GridDims) -> Vec<ScenarioCell> {
    (0..dims.n_events).map(|e| dims.extreme_cell(e)).collect()
}

/// Outcome spread used in the optimal-allocation score.
#[derive(Debug, Clone, Copy)]
pub enum Sigma<'a> {
    Constant(f64),
    PerCell(&'a [f64]),
}

/// Model predictions over every flat cell plus the current per-case estimates.
#[derive(Debug, Clone, Copy)]
pub struct ActiveInputs<'a> {
    /// Predicted baseline crash probability.
    pub p_hat: &'a [f64],
    /// Predicted outcome given a crash.
    pub y_hat: &'a [f64],
    pub sigma: Sigma<'a>,
    /// Current estimate of each case mean.
    pub mu: &'a [f64],
}

/// `c_i = sqrt(p̂_i w_i² ((ŷ_i − μ̂_k)² + σ_i²))`.
pub fn optimal_score(p_hat: f64, w: f64, y_hat: f64, mu: f64, sigma: f64) -> f64 {
    (p_hat.clamp(0.0, 1.0) * w * w * ((y_hat - mu).powi(2) + sigma * sigma)).sqrt()
}

/// Optimal-allocation scheme.
///
/// Unstratified scores are multiplied by `1 / Σ_{j∈k} p̂_j w_j` over the
/// case's samplable cells before global normalization. An all-zero score
/// vector returns `InsufficientData` so the caller can fall back to density.
pub fn active_scheme(
    grid: &ScenarioGrid,
    inputs: &ActiveInputs<'_>,
    knowledge: &KnowledgeMap,
    stratified: bool,
    floor: f64,
) -> Result<SamplingScheme> {
    let dims = grid.dims();
    let n = dims.n_cells();
    if inputs.p_hat.len() != n || inputs.y_hat.len() != n || inputs.mu.len() != dims.n_events {
        return Err(Error::Config("prediction vectors do not match the grid".into()));
    }
    if let Sigma::PerCell(s) = inputs.sigma {
        if s.len() != n {
            return Err(Error::Config("sigma vector does not match the grid".into()));
        }
    }
    let mask = knowledge.samplable_mask();
    let weights = grid.weights.as_slice();
    let per_event = dims.cells_per_event();
    let mut cells = Vec::with_capacity(knowledge.samplable_count());
    let mut scores = Vec::with_capacity(knowledge.samplable_count());
    let mut any_positive = false;
    for event in 0..dims.n_events {
        let base = event * per_event;
        let mu = inputs.mu[event];
        let start = scores.len();
        let mut mass = 0.0;
        for (j, &w) in weights.iter().enumerate() {
            let f = base + j;
            if !mask[f] {
                continue;
            }
            let p = inputs.p_hat[f].clamp(0.0, 1.0);
            let sigma = match inputs.sigma {
                Sigma::Constant(s) => s,
                Sigma::PerCell(s) => s[f],
            };
            let d = inputs.y_hat[f] - mu;
            cells.push(f);
            scores.push((p * w * w * (d * d + sigma * sigma)).sqrt());
            mass += p * w;
        }
        let case = &mut scores[start..];
        if !stratified {
            let u = if mass > 0.0 { 1.0 / mass } else { 0.0 };
            case.iter_mut().for_each(|s| *s *= u);
        }
        any_positive |= case.iter().any(|&s| s > 0.0);
    }
    if !any_positive {
        return Err(Error::InsufficientData("all optimal scores are zero".into()));
    }
    SamplingScheme::assemble(SchemeKind::Active, dims, cells, scores, stratified, floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(n_events: usize, n_oeoff: usize, n_decel: usize) -> GridDims {
        GridDims {
            n_events,
            n_oeoff,
            n_decel,
        }
    }

    #[test]
    fn normalizes_two_cells() {
        let s = SamplingScheme::from_scores(SchemeKind::Density, dims(1, 2, 1), vec![0, 1], vec![0.2, 0.6], false, 0.0)
            .unwrap();
        assert!((s.probabilities()[0] - 0.25).abs() < 1e-12);
        assert!((s.probabilities()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn floor_mixing() {
        let s = SamplingScheme::from_scores(SchemeKind::Active, dims(1, 2, 1), vec![0, 1], vec![0.0, 1.0], false, 0.01)
            .unwrap();
        assert!((s.probabilities()[0] - 0.005).abs() < 1e-15);
        assert!((s.probabilities()[1] - 0.995).abs() < 1e-15);
    }

    #[test]
    fn stratified_per_case() {
        let s = SamplingScheme::from_scores(
            SchemeKind::Severity,
            dims(2, 2, 1),
            vec![0, 1, 2, 3],
            vec![1.0, 3.0, 0.0, 0.0],
            true,
            0.0,
        )
        .unwrap();
        assert_eq!(s.probabilities(), &[0.25, 0.75, 0.5, 0.5]);
        assert_eq!(s.case_range(1), 2..4);
    }

    #[test]
    fn empty_and_zero() {
        let d = dims(1, 2, 1);
        assert!(matches!(
            SamplingScheme::from_scores(SchemeKind::Density, d, vec![], vec![], false, 0.01),
            Err(Error::ExhaustedSpace)
        ));
        assert!(matches!(
            SamplingScheme::from_scores(SchemeKind::Active, d, vec![0, 1], vec![0.0, 0.0], false, 0.01),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn single_cell_draws() {
        let s = SamplingScheme::from_scores(SchemeKind::Density, dims(1, 1, 1), vec![0], vec![1.0], false, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = s.draw_batch(5, &mut rng).unwrap();
        assert_eq!(d.len(), 5);
        assert!(d.iter().all(|x| x.flat == 0 && x.pi == 1.0));
    }

    #[test]
    fn stratified_divisibility() {
        let s = SamplingScheme::from_scores(SchemeKind::Density, dims(2, 1, 1), vec![0, 1], vec![1.0, 1.0], true, 0.0)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(s.draw_batch(3, &mut rng), Err(Error::Config(_))));
        let d = s.draw_batch(4, &mut rng).unwrap();
        assert_eq!(d.iter().filter(|x| x.flat == 0).count(), 2);
    }

    #[test]
    fn empirical_frequencies() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let s = SamplingScheme::from_scores(SchemeKind::Density, dims(1, 4, 1), vec![0, 1, 2, 3], p.to_vec(), false, 0.0)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for d in s.draw_batch(n, &mut rng).unwrap() {
            counts[d.flat] += 1;
        }
        for (c, p) in counts.iter().zip(p) {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn optimal_score_substitution() {
        assert_eq!(optimal_score(1.0, 0.5, 2.0, 0.0, 0.0), 1.0);
        assert_eq!(optimal_score(0.0, 0.5, 2.0, 0.0, 1.0), 0.0);
        // |ŷ − μ| of 1 and 3 give a 1:3 ratio
        let a = optimal_score(0.5, 0.2, 1.0, 0.0, 0.0);
        let b = optimal_score(0.5, 0.2, 3.0, 0.0, 0.0);
        assert!((b / a - 3.0).abs() < 1e-12);
    }

    #[test]
    fn unit_severity_range() {
        assert_eq!(unit_severity(5.0, 0.0, 5.0), 1.0);
        assert_eq!(unit_severity(0.0, 0.0, 5.0), 0.1);
        assert_eq!(unit_severity(3.0, 3.0, 3.0), 1.0);
    }
}
