use crashsample::assr::{Antichain, KnowledgeMap, Orientation};
use crashsample::estimators::{shrink, shrinkage_weight, CaseAccumulator, CaseEstimate};
use crashsample::samplers::{active_scheme, optimal_score, ActiveInputs, SamplingScheme, SchemeKind, Sigma};
use crashsample::scenario::{build_grid, GridConfig, GridDims, ScenarioGrid};
use crashsample::sim::SimParams;
use crashsample::stopping::{should_stop, StoppingRule};
use proptest::prelude::*;

fn case(value: f64, n_crash: usize, within_var: f64) -> CaseEstimate {
    CaseEstimate {
        value,
        se: 0.1,
        n_crash,
        within_var,
        exact: false,
    }
}

/// One event, three OEOFF levels, one deceleration level.
fn three_cell_grid(glance: [f64; 3]) -> ScenarioGrid {
    let cfg = GridConfig {
        n_events: 1,
        oeoff_levels: vec![0.0, 1.0, 2.0],
        decel_levels: vec![4.0],
        glance_pmf: Some(glance.to_vec()),
        decel_pmf: Some(vec![1.0]),
        ..GridConfig::default()
    };
    build_grid(&cfg, &SimParams::default()).unwrap()
}

proptest! {
    #[test]
    fn shrinkage_weight_is_a_fraction(su in 0.0f64..1e6, sk in 0.0f64..1e6, n in 0usize..10_000) {
        let rho = shrinkage_weight(su, sk, n);
        prop_assert!((0.0..=1.0).contains(&rho));
        if n == 0 {
            prop_assert_eq!(rho, 0.0);
        }
    }

    #[test]
    fn shrunk_cases_stay_between_raw_and_grand_mean(
        raw in prop::collection::vec((-50.0f64..50.0, 0usize..40, 0.0f64..100.0), 2..12),
        missing in prop::collection::vec(any::<bool>(), 12),
    ) {
        let mut cases: Vec<Option<CaseEstimate>> = raw
            .iter()
            .map(|&(v, n, s)| Some(case(v, n.max(1), s)))
            .collect();
        for (c, &m) in cases.iter_mut().zip(&missing).skip(1) {
            if m {
                *c = None;
            }
        }
        let avail: Vec<f64> = cases.iter().flatten().map(|c| c.value).collect();
        let grand = avail.iter().sum::<f64>() / avail.len() as f64;
        let shrunk = shrink(&cases).unwrap();
        for (c, s) in cases.iter().zip(&shrunk) {
            prop_assert!((0.0..=1.0).contains(&s.rho));
            match c {
                None => prop_assert!((s.value - grand).abs() < 1e-9),
                Some(c) => {
                    let lo = c.value.min(grand) - 1e-9;
                    let hi = c.value.max(grand) + 1e-9;
                    prop_assert!(s.value >= lo && s.value <= hi);
                }
            }
        }
    }

    #[test]
    fn many_crash_draws_keep_the_raw_estimate(
        values in prop::collection::vec(-20.0f64..20.0, 2..8),
        within in 0.0f64..50.0,
    ) {
        prop_assume!(values.windows(2).any(|w| (w[0] - w[1]).abs() > 1e-3));
        let mut cases: Vec<Option<CaseEstimate>> = values.iter().map(|&v| Some(case(v, 3, within))).collect();
        cases[0] = Some(case(values[0], 1_000_000_000_000_000, within));
        let s = shrink(&cases).unwrap();
        prop_assert!((s[0].value - values[0]).abs() < 1e-9);
        prop_assert!((s[0].rho - 1.0).abs() < 1e-9);
    }

    #[test]
    fn scheme_probabilities_are_normalized_and_floored(
        scores in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..10.0], 1..60),
        keep in prop::collection::vec(any::<bool>(), 60),
        floor in 0.0f64..0.5,
        stratified in any::<bool>(),
    ) {
        let dims = GridDims { n_events: 3, n_oeoff: 5, n_decel: 4 };
        let mut cells: Vec<usize> = (0..dims.n_cells()).filter(|&f| keep[f]).collect();
        cells.truncate(scores.len());
        prop_assume!(!cells.is_empty());
        let scores = scores[..cells.len()].to_vec();
        let res = SamplingScheme::from_scores(SchemeKind::Active, dims, cells.clone(), scores.clone(), stratified, floor);
        let scheme = match res {
            Ok(s) => s,
            Err(_) => {
                prop_assert!(!stratified && scores.iter().all(|&s| s == 0.0));
                return Ok(());
            }
        };
        let p = scheme.probabilities();
        let segments: Vec<std::ops::Range<usize>> = if stratified {
            (0..dims.n_events).map(|e| scheme.case_range(e)).filter(|r| !r.is_empty()).collect()
        } else {
            vec![0..p.len()]
        };
        for r in segments {
            let n = r.len() as f64;
            let seg = &p[r.clone()];
            prop_assert!((seg.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for &x in seg {
                prop_assert!(x >= floor / n - 1e-15);
            }
            for (i, &f) in cells[r.clone()].iter().enumerate() {
                prop_assert_eq!(scheme.pi(f), seg[i]);
            }
        }
    }

    #[test]
    fn score_vanishes_without_crash_probability(w in 0.0f64..1.0, y in -50.0f64..50.0, mu in -50.0f64..50.0, s in 0.0f64..10.0) {
        prop_assert_eq!(optimal_score(0.0, w, y, mu, s), 0.0);
    }

    #[test]
    fn antichain_matches_brute_force_dominance(
        pts in prop::collection::vec((0usize..12, 0usize..9), 0..40),
        more_severe in any::<bool>(),
    ) {
        let orientation = if more_severe { Orientation::MoreSevere } else { Orientation::LessSevere };
        let dominated = |q: (usize, usize), p: (usize, usize)| match orientation {
            Orientation::LessSevere => q.0 <= p.0 && q.1 >= p.1,
            Orientation::MoreSevere => q.0 >= p.0 && q.1 <= p.1,
        };
        let mut chain = Antichain::new(orientation);
        for &p in &pts {
            chain.insert(p.0, p.1);
        }
        let gens = chain.points();
        for (i, a) in gens.iter().enumerate() {
            for (j, b) in gens.iter().enumerate() {
                if i != j {
                    prop_assert!(!dominated(*a, *b), "{a:?} covered by {b:?}");
                }
            }
        }
        for o in 0..12 {
            for d in 0..9 {
                let expected = pts.iter().any(|&p| dominated((o, d), p));
                prop_assert_eq!(chain.covers(o, d), expected);
            }
        }
    }

    #[test]
    fn cv_rule_never_fires_at_zero(se in 0.0f64..1.0, sims in 0u64..100_000, it in 0u64..1000, pct in 0.0f64..1e6) {
        let rules = [StoppingRule::Cv { percent: pct }];
        prop_assert!(should_stop(&rules, 0.0, se, sims, it).is_none());
    }
}

#[test]
fn three_cell_fixture_matches_hand_computed_scores() {
    let grid = three_cell_grid([0.5, 0.3, 0.2]);
    let km = KnowledgeMap::new(grid.dims(), false);
    let p_hat = [0.2, 0.6, 1.0];
    let y_hat = [4.0, 10.0, 20.0];
    let mu = [12.0];
    let sigma = 2.0;
    // c_i = sqrt(p w² ((y − μ)² + σ²)), times u = 1 / Σ p w when pooled.
    let hand = [
        (0.2f64 * 0.25 * (64.0 + 4.0)).sqrt(),
        (0.6f64 * 0.09 * (4.0 + 4.0)).sqrt(),
        (1.0f64 * 0.04 * (64.0 + 4.0)).sqrt(),
    ];
    for stratified in [false, true] {
        let inputs = ActiveInputs {
            p_hat: &p_hat,
            y_hat: &y_hat,
            sigma: Sigma::Constant(sigma),
            mu: &mu,
        };
        let scheme = active_scheme(&grid, &inputs, &km, stratified, 0.0).unwrap();
        let total: f64 = hand.iter().sum();
        for (f, h) in hand.iter().enumerate() {
            assert!((scheme.pi(f) - h / total).abs() < 1e-12, "cell {f}");
        }
        assert!((scheme.pi(0) / scheme.pi(1) - hand[0] / hand[1]).abs() < 1e-12);
    }

    let zero_p = [0.0, 0.6, 1.0];
    let inputs = ActiveInputs {
        p_hat: &zero_p,
        y_hat: &y_hat,
        sigma: Sigma::Constant(sigma),
        mu: &mu,
    };
    let scheme = active_scheme(&grid, &inputs, &km, false, 0.0).unwrap();
    assert_eq!(scheme.pi(0), 0.0);
    let floored = active_scheme(&grid, &inputs, &km, false, 0.03).unwrap();
    assert!((floored.pi(0) - 0.01).abs() < 1e-12);
}

#[test]
fn pooled_scores_are_scaled_per_case() {
    let cfg = GridConfig {
        n_events: 2,
        oeoff_levels: vec![0.0, 1.0, 2.0],
        decel_levels: vec![4.0],
        glance_pmf: Some(vec![0.5, 0.3, 0.2]),
        decel_pmf: Some(vec![1.0]),
        ..GridConfig::default()
    };
    let grid = build_grid(&cfg, &SimParams::default()).unwrap();
    let km = KnowledgeMap::new(grid.dims(), false);
    let p_hat = [0.2, 0.6, 1.0, 1.0, 1.0, 1.0];
    let y_hat = [1.0; 6];
    let inputs = ActiveInputs {
        p_hat: &p_hat,
        y_hat: &y_hat,
        sigma: Sigma::Constant(1.0),
        mu: &[0.0, 0.0],
    };
    let scheme = active_scheme(&grid, &inputs, &km, false, 0.0).unwrap();
    let w = [0.5, 0.3, 0.2];
    let raw = |p: f64, w: f64| (p * w * w * 2.0).sqrt();
    let u0 = 1.0 / (0.2 * 0.5 + 0.6 * 0.3 + 0.2);
    let u1 = 1.0;
    let scores: Vec<f64> = (0..6)
        .map(|f| raw(p_hat[f], w[f % 3]) * if f < 3 { u0 } else { u1 })
        .collect();
    let total: f64 = scores.iter().sum();
    for (f, s) in scores.iter().enumerate() {
        assert!((scheme.pi(f) - s / total).abs() < 1e-12, "cell {f}");
    }
}

#[test]
fn accumulator_ratio_matches_direct_formula() {
    // Draws (π, w, crash, y) from one case; the ratio is Σ(w y/π) / Σ(w/π) over crashes.
    let draws = [(0.2, 0.5, true, 3.0), (0.5, 0.3, false, 0.0), (0.3, 0.2, true, 7.0), (0.2, 0.5, true, 3.0)];
    let mut acc = CaseAccumulator::new();
    for &(pi, w, c, y) in &draws {
        acc.add_draw(pi, w, c, y);
    }
    let num = 3.0 * 0.5 / 0.2 * 2.0 + 7.0 * 0.2 / 0.3;
    let den = 0.5 / 0.2 * 2.0 + 0.2 / 0.3;
    let est = acc.estimate(4).unwrap();
    assert!((est.value - num / den).abs() < 1e-12);
    let (ty, t1) = acc.totals(4);
    assert!((ty - num / 4.0).abs() < 1e-12 && (t1 - den / 4.0).abs() < 1e-12);
}
