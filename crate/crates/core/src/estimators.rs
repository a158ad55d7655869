//! Inverse-probability-weighted ratio estimation under multinomial
//! (with-replacement) designs.
//!
//! For a case `k` with `N` design draws, the Hansen–Hurwitz totals are
//!
//! ```text
//! T_y = Σ_certain w y + (1/N) Σ_draws w y 1{crash} / π
//! T_1 = Σ_certain w   + (1/N) Σ_draws w   1{crash} / π
//! ```
//!
//! and the case mean is `T_y / T_1`. Its variance is linearized through
//! `u_j = (w_j 1{crash_j} / π_j)(y_j − μ̂)`. Under post-stratification `N`
//! counts every draw of the pooled sample (draws outside the case contribute
//! `u = 0`); under stratification it counts the case's own draws. Draws taken
//! under different schemes pool through the per-draw `π` recorded at draw time.

use crate::error::{Error, Result};
use crate::scenario::ScenarioCell;
use crate::sim::{OutcomeTriple, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Simulated,
    Inferred,
    /// Known exactly and outside the sampled population.
    Certainty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecordOutcome {
    NonCrash,
    Crash(OutcomeTriple),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub cell: ScenarioCell,
    /// Selection probability of the draw (unused for certainty records).
    pub pi: f64,
    pub w: f64,
    pub outcome: RecordOutcome,
    pub provenance: Provenance,
}

/// Per-case ratio estimate before shrinkage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseEstimate {
    pub value: f64,
    pub se: f64,
    /// Sampled draws that hit a baseline crash.
    pub n_crash: usize,
    /// Weight-adjusted variance of the outcome over the case's crash region,
    /// estimated from the crash draws (NaN when fewer than two).
    pub within_var: f64,
    /// True when no sampled draw contributed (exact certainty value).
    pub exact: bool,
}

/// Sufficient statistics of one case and one target. Adding a draw is O(1).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CaseAccumulator {
    draws: usize,
    sum_a: f64,
    sum_b: f64,
    sum_aa: f64,
    sum_ab: f64,
    sum_bb: f64,
    n_crash: usize,
    /// Σ (w/π) y² over crash draws.
    sum_by2: f64,
    cert_y: f64,
    cert_1: f64,
}

impl CaseAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one design draw.
    #[inline]
    pub fn add_draw(&mut self, pi: f64, w: f64, crash: bool, y: f64) {
        self.draws += 1;
        if !crash {
            return;
        }
        let b = w / pi;
        let a = b * y;
        self.sum_a += a;
        self.sum_b += b;
        self.sum_aa += a * a;
        self.sum_ab += a * b;
        self.sum_bb += b * b;
        self.n_crash += 1;
        self.sum_by2 += b * y * y;
    }

    /// Adds an exactly known cell outside the sampled population.
    pub fn add_certain(&mut self, w: f64, crash: bool, y: f64) {
        if crash {
            self.cert_y += w * y;
            self.cert_1 += w;
        }
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn n_crash(&self) -> usize {
        self.n_crash
    }

    /// Hansen–Hurwitz estimates of `(Σ w·crash·y, Σ w·crash)` over the case.
    pub fn totals(&self, n_design: usize) -> (f64, f64) {
        if n_design > 0 {
            let n = n_design as f64;
            (self.cert_y + self.sum_a / n, self.cert_1 + self.sum_b / n)
        } else {
            (self.cert_y, self.cert_1)
        }
    }

    /// Estimates the case mean given the design's draw count `n_design`
    /// (≥ the draws added here). Returns `None` when the estimated crash mass is zero.
    pub fn estimate(&self, n_design: usize) -> Option<CaseEstimate> {
        let n = n_design as f64;
        let (t_y, t_1) = self.totals(n_design);
        if t_1 <= 0.0 {
            return None;
        }
        let mu = t_y / t_1;
        let sampled = self.n_crash > 0;
        let se = if !sampled {
            0.0
        } else if n_design < 2 {
            f64::INFINITY
        } else {
            let sum_u = self.sum_a - mu * self.sum_b;
            let sum_uu = self.sum_aa - 2.0 * mu * self.sum_ab + mu * mu * self.sum_bb;
            let ss = (sum_uu - sum_u * sum_u / n).max(0.0);
            (ss / (n * (n - 1.0))).sqrt() / t_1
        };
        let within_var = if self.n_crash >= 2 {
            let m = self.n_crash as f64;
            let mean = self.sum_a / self.sum_b;
            ((self.sum_by2 / self.sum_b - mean * mean) * m / (m - 1.0)).max(0.0)
        } else {
            f64::NAN
        };
        Some(CaseEstimate {
            value: mu,
            se,
            n_crash: self.n_crash,
            within_var,
            exact: !sampled,
        })
    }
}

/// Ratio estimate of one case from explicit records. `n_design` is the number
/// of design draws the sampled records belong to; certainty records enter the
/// totals exactly.
pub fn case_ratio_estimate(
    records: &[SampleRecord],
    n_design: usize,
    target: Target,
) -> Result<Option<CaseEstimate>> {
    let mut acc = CaseAccumulator::new();
    for r in records {
        let (crash, y) = match r.outcome {
            RecordOutcome::NonCrash => (false, 0.0),
            RecordOutcome::Crash(t) => (true, target.value(&t)),
        };
        match r.provenance {
            Provenance::Certainty => acc.add_certain(r.w, crash, y),
            Provenance::Simulated | Provenance::Inferred => {
                if !(r.pi > 0.0) {
                    return Err(Error::Config(format!(
                        "sampled record for {:?} has non-positive pi {}",
                        r.cell, r.pi
                    )));
                }
                acc.add_draw(r.pi, r.w, crash, y)
            }
        }
    }
    if acc.draws() > n_design {
        return Err(Error::Config(format!(
            "{} sampled records exceed design size {n_design}",
            acc.draws()
        )));
    }
    Ok(acc.estimate(n_design))
}

/// Combined estimate over cases.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub n_sims_used: u64,
    /// `(shrunk value, crash draws, se)` per case.
    pub per_case: Vec<(f64, usize, f64)>,
}

/// `ρ = σ²_u / (σ²_u + σ²_k / n_k)`, zero without crash draws.
pub fn shrinkage_weight(sigma_u2: f64, sigma_k2: f64, n_k: usize) -> f64 {
    if n_k == 0 {
        return 0.0;
    }
    let noise = sigma_k2.max(0.0) / n_k as f64;
    let denom = sigma_u2.max(0.0) + noise;
    if denom <= 0.0 {
        1.0
    } else {
        (sigma_u2.max(0.0) / denom).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrunkCase {
    pub value: f64,
    pub se: f64,
    pub rho: f64,
    pub n_crash: usize,
}

/// Pulls case estimates toward the mean of the available cases.
///
/// `σ²_u` is the across-case variance of the available estimates and `σ²_k`
/// the within-case outcome variance; cases with a single crash draw borrow the
/// average within-case variance. Cases without an estimate take the grand mean
/// (`ρ = 0`) with the across-case spread as their standard error.
pub fn shrink(cases: &[Option<CaseEstimate>]) -> Result<Vec<ShrunkCase>> {
    pull_toward_mean(cases, true)
}

/// Keeps every available estimate as is and gives missing cases the mean of
/// the available ones, with the across-case spread as their standard error.
pub fn fill_missing(cases: &[Option<CaseEstimate>]) -> Result<Vec<ShrunkCase>> {
    pull_toward_mean(cases, false)
}

fn pull_toward_mean(cases: &[Option<CaseEstimate>], shrinkage: bool) -> Result<Vec<ShrunkCase>> {
    let available: Vec<&CaseEstimate> = cases.iter().flatten().collect();
    if available.is_empty() {
        return Err(Error::InsufficientData(
            "no case has an estimate; grand mean undefined".into(),
        ));
    }
    let m = available.len() as f64;
    let grand = available.iter().map(|c| c.value).sum::<f64>() / m;
    let sigma_u2 = if available.len() >= 2 {
        available
            .iter()
            .map(|c| (c.value - grand).powi(2))
            .sum::<f64>()
            / (m - 1.0)
    } else {
        0.0
    };
    let within: Vec<f64> = available
        .iter()
        .map(|c| c.within_var)
        .filter(|v| v.is_finite())
        .collect();
    let pooled_within = if within.is_empty() {
        0.0
    } else {
        within.iter().sum::<f64>() / within.len() as f64
    };

    Ok(cases
        .iter()
        .map(|c| match c {
            None => ShrunkCase {
                value: grand,
                se: sigma_u2.sqrt(),
                rho: 0.0,
                n_crash: 0,
            },
            Some(c) if c.exact => ShrunkCase {
                value: c.value,
                se: 0.0,
                rho: 1.0,
                n_crash: c.n_crash,
            },
            Some(c) if !shrinkage => ShrunkCase {
                value: c.value,
                se: c.se,
                rho: 1.0,
                n_crash: c.n_crash,
            },
            Some(c) => {
                let sigma_k2 = if c.within_var.is_finite() {
                    c.within_var
                } else {
                    pooled_within
                };
                let rho = shrinkage_weight(sigma_u2, sigma_k2, c.n_crash);
                ShrunkCase {
                    value: rho * c.value + (1.0 - rho) * grand,
                    se: rho * c.se,
                    rho,
                    n_crash: c.n_crash,
                }
            }
        })
        .collect())
}

/// Equal-weight average over cases, `SE = sqrt(Σ SE_k²) / K`.
pub fn combine(cases: &[ShrunkCase], n_sims_used: u64) -> Estimate {
    let k = cases.len() as f64;
    let value = cases.iter().map(|c| c.value).sum::<f64>() / k;
    let se = cases.iter().map(|c| c.se * c.se).sum::<f64>().sqrt() / k;
    Estimate {
        value,
        se,
        n_sims_used,
        per_case: cases.iter().map(|c| (c.value, c.n_crash, c.se)).collect(),
    }
}

/// Averages the cases after shrinking them, or after filling missing cases
/// with the mean of the available ones.
pub fn combine_cases(cases: &[Option<CaseEstimate>], shrinkage: bool, n_sims_used: u64) -> Result<Estimate> {
    let adjusted = if shrinkage { shrink(cases)? } else { fill_missing(cases)? };
    Ok(combine(&adjusted, n_sims_used))
}

/// Per-case samples drawn independently with a fixed allocation; each case's
/// design size is its own draw count.
pub fn stratified_combine(
    per_case: &[Vec<SampleRecord>],
    target: Target,
    shrinkage: bool,
    n_sims_used: u64,
) -> Result<Estimate> {
    let cases = per_case
        .iter()
        .map(|recs| {
            let n = recs
                .iter()
                .filter(|r| r.provenance != Provenance::Certainty)
                .count();
            case_ratio_estimate(recs, n, target)
        })
        .collect::<Result<Vec<_>>>()?;
    combine_cases(&cases, shrinkage, n_sims_used)
}

/// One pooled sample over all `n_cases` cases, reweighted per case after the fact.
pub fn post_stratified_combine(
    pooled: &[SampleRecord],
    n_cases: usize,
    target: Target,
    shrinkage: bool,
    n_sims_used: u64,
) -> Result<Estimate> {
    let n_design = pooled
        .iter()
        .filter(|r| r.provenance != Provenance::Certainty)
        .count();
    let mut by_case: Vec<Vec<SampleRecord>> = vec![Vec::new(); n_cases];
    for r in pooled {
        by_case
            .get_mut(r.cell.event)
            .ok_or_else(|| Error::Config(format!("record for unknown case {}", r.cell.event)))?
            .push(*r);
    }
    let cases = by_case
        .iter()
        .map(|recs| case_ratio_estimate(recs, n_design, target))
        .collect::<Result<Vec<_>>>()?;
    combine_cases(&cases, shrinkage, n_sims_used)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crash(event: usize, idx: usize, pi: f64, w: f64, y: f64) -> SampleRecord {
        SampleRecord {
            cell: ScenarioCell::new(event, idx, 0),
            pi,
            w,
            outcome: RecordOutcome::Crash(OutcomeTriple {
                impact_speed_reduction: y,
                injury_risk_reduction: 0.0,
                crash_avoided: 0.0,
            }),
            provenance: Provenance::Simulated,
        }
    }

    fn certain(mut r: SampleRecord) -> SampleRecord {
        r.provenance = Provenance::Certainty;
        r
    }

    const T: Target = Target::SpeedReduction;

    #[test]
    fn full_certainty_is_exact() {
        let recs = vec![
            certain(crash(0, 0, 1.0, 0.2, 10.0)),
            certain(crash(0, 1, 1.0, 0.6, 20.0)),
            SampleRecord {
                outcome: RecordOutcome::NonCrash,
                ..certain(crash(0, 2, 1.0, 0.2, 0.0))
            },
        ];
        let e = case_ratio_estimate(&recs, 0, T).unwrap().unwrap();
        assert!((e.value - (0.2 * 10.0 + 0.6 * 20.0) / 0.8).abs() < 1e-12);
        assert_eq!(e.se, 0.0);
    }

    #[test]
    fn single_draw_returns_its_value() {
        let e = case_ratio_estimate(&[crash(0, 0, 1.0, 0.3, 7.5)], 1, T)
            .unwrap()
            .unwrap();
        assert_eq!(e.value, 7.5);
    }

    #[test]
    fn no_crash_mass_is_undefined() {
        let r = SampleRecord {
            outcome: RecordOutcome::NonCrash,
            ..crash(0, 0, 0.5, 0.5, 0.0)
        };
        assert!(case_ratio_estimate(&[r], 1, T).unwrap().is_none());
    }

    #[test]
    fn rejects_zero_pi() {
        assert!(case_ratio_estimate(&[crash(0, 0, 0.0, 0.5, 1.0)], 1, T).is_err());
    }

    #[test]
    fn post_stratified_two_cases() {
        let pooled = vec![crash(0, 0, 0.5, 0.3, 4.0), crash(1, 0, 0.5, 0.1, 10.0)];
        let e = post_stratified_combine(&pooled, 2, T, true, 2).unwrap();
        assert!((e.value - 7.0).abs() < 1e-12);
        let e = post_stratified_combine(&pooled, 2, T, false, 2).unwrap();
        assert!((e.value - 7.0).abs() < 1e-12);
    }

    #[test]
    fn stratified_single_case_matches_case_estimate() {
        let recs = vec![
            crash(0, 0, 0.5, 0.3, 4.0),
            crash(0, 1, 0.25, 0.1, 10.0),
            crash(0, 1, 0.25, 0.1, 10.0),
        ];
        let c = case_ratio_estimate(&recs, 3, T).unwrap().unwrap();
        let s = stratified_combine(&[recs], T, false, 3).unwrap();
        assert!((s.value - c.value).abs() < 1e-15);
        assert!((s.se - c.se).abs() < 1e-15);
    }

    #[test]
    fn equal_case_se_scales_with_sqrt_k() {
        let cases: Vec<ShrunkCase> = (0..16)
            .map(|i| ShrunkCase {
                value: i as f64,
                se: 2.0,
                rho: 1.0,
                n_crash: 3,
            })
            .collect();
        let e = combine(&cases, 0);
        assert!((e.se - 2.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn within_variance_is_weight_adjusted() {
        // Two cells, w = 0.5 each, outcomes 0 and 10, drawn with π = 0.8 / 0.2:
        // a draw pattern proportional to π must still give the w-weighted variance.
        let mut acc = CaseAccumulator::new();
        for _ in 0..4 {
            acc.add_draw(0.8, 0.5, true, 0.0);
        }
        acc.add_draw(0.2, 0.5, true, 10.0);
        let e = acc.estimate(5).unwrap();
        assert!((e.value - 5.0).abs() < 1e-12);
        assert!((e.within_var - 25.0 * 5.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn shrinkage_limits() {
        assert_eq!(shrinkage_weight(3.0, 3.0, 1), 0.5);
        assert_eq!(shrinkage_weight(3.0, 5.0, 0), 0.0);
        assert!((shrinkage_weight(1.0, 1.0, 1_000_000_000) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn missing_case_takes_grand_mean() {
        let est = |v: f64| {
            Some(CaseEstimate {
                value: v,
                se: 1.0,
                n_crash: 5,
                within_var: 1.0,
                exact: false,
            })
        };
        let s = shrink(&[est(2.0), None, est(4.0)]).unwrap();
        assert_eq!(s[1].value, 3.0);
        assert_eq!(s[1].rho, 0.0);
        assert!(shrink(&[None, None]).is_err());

        let raw = fill_missing(&[est(2.0), None, est(7.0)]).unwrap();
        assert_eq!((raw[0].value, raw[2].value, raw[1].value), (2.0, 7.0, 4.5));
    }

    #[test]
    fn se_scale_equivariant() {
        let recs: Vec<SampleRecord> = (0..6)
            .map(|i| crash(0, i, 0.1 + 0.05 * i as f64, 0.1, 1.0 + i as f64 * 1.7))
            .collect();
        let scaled: Vec<SampleRecord> = (0..6)
            .map(|i| crash(0, i, 0.1 + 0.05 * i as f64, 0.1, 3.0 * (1.0 + i as f64 * 1.7)))
            .collect();
        let a = case_ratio_estimate(&recs, 6, T).unwrap().unwrap();
        let b = case_ratio_estimate(&scaled, 6, T).unwrap().unwrap();
        assert!((b.value - 3.0 * a.value).abs() < 1e-12);
        assert!((b.se - 3.0 * a.se).abs() < 1e-12);
        assert!(a.se > 0.0);
    }
}
