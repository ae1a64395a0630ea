//! Property checks shared by the property test target and the acceptance
//! gate. Each check runs a proptest runner and reports the first
//! counterexample as an error string.

#![allow(dead_code)]

use adaptive_inference::designs::{
    assignment_probs, block_assignment_probs, simulate_experiment, DesignSpec, ExploreSchedule,
};
use adaptive_inference::estimators::{
    confidence_set, covariance_estimate, point_estimate, pseudo_outcomes, CovarianceEstimate,
    CovarianceKind, Estimator,
};
use adaptive_inference::harness::{
    run_study, PopulationSource, StrategySpec, StudyDesign, StudySpec,
};
use adaptive_inference::history::HistoryView;
use adaptive_inference::linalg::eigen_extremes;
use adaptive_inference::outcome_models::{attach_predictions, OutcomeModelSpec};
use adaptive_inference::population::{
    true_estimand, DgpSpec, ExperimentLog, FinitePopulation, UnitRecord,
};
use adaptive_inference::rng::replication_rng;
use adaptive_inference::Contrast;
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

pub const SIMPLEX_CASES: u32 = 10_000;
pub const ESTIMATOR_CASES: u32 = 256;

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn unit_design(k: usize) -> impl Strategy<Value = DesignSpec> {
    let bern = proptest::collection::vec(0.05f64..1.0, k).prop_map(|w| {
        let s: f64 = w.iter().sum();
        DesignSpec::Bernoulli {
            probs: w.iter().map(|v| v / s).collect(),
        }
    });
    let greedy_const =
        (1usize..6, 0.01f64..0.99).prop_map(|(warmup, epsilon)| DesignSpec::EpsilonGreedy {
            warmup,
            explore: ExploreSchedule::Constant { epsilon },
        });
    let greedy_power =
        (1usize..6, -0.45f64..0.45).prop_map(|(warmup, delta)| DesignSpec::EpsilonGreedy {
            warmup,
            explore: ExploreSchedule::Power { delta },
        });
    let efron = (0.51f64..0.99).prop_map(|bias| DesignSpec::EfronBiasedCoin { bias });
    prop_oneof![bern, greedy_const, greedy_power, efron]
}

fn history(k: usize, j: usize, max_len: usize) -> impl Strategy<Value = Vec<UnitRecord>> {
    proptest::collection::vec(
        (
            proptest::collection::vec(-3.0f64..3.0, j),
            0..k,
            -10.0f64..10.0,
        ),
        0..max_len,
    )
    .prop_map(move |rows| {
        rows.into_iter()
            .map(|(x, z, y)| UnitRecord::new(x, z, vec![1.0 / k as f64; k], y))
            .collect()
    })
}

fn check_simplex(p: &[f64]) -> Result<(), TestCaseError> {
    let sum: f64 = p.iter().sum();
    prop_assert!((sum - 1.0).abs() < 1e-12, "sum {}", sum);
    for &v in p {
        prop_assert!(v > 0.0 && v < 1.0, "probability {}", v);
    }
    Ok(())
}

fn population(rows: &[(f64, f64, f64)]) -> FinitePopulation {
    FinitePopulation::new(
        rows.iter().map(|r| vec![r.0, r.1]).collect(),
        rows.iter().map(|r| vec![r.2]).collect(),
        None,
    )
    .unwrap()
}

fn population_rows(min: usize, max: usize) -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -2.0f64..2.0), min..max)
}

fn adaptive_model() -> impl Strategy<Value = OutcomeModelSpec> {
    prop_oneof![
        Just(OutcomeModelSpec::Zero),
        Just(OutcomeModelSpec::RunningMean),
        Just(OutcomeModelSpec::OnlineLeastSquares { min_obs: None }),
        (1usize..4).prop_map(|k| OutcomeModelSpec::KNearestNeighbors { k }),
    ]
}

pub fn unit_designs_stay_in_open_simplex() -> Result<(), String> {
    let strategy = (2usize..5).prop_flat_map(|k| {
        (
            Just(k),
            unit_design(k),
            history(k, 2, 30),
            proptest::collection::vec(-3.0f64..3.0, 2),
        )
    });
    run(SIMPLEX_CASES, strategy, |(k, design, past, x)| {
        let current = [x];
        let view = HistoryView::new(&past, &current, k);
        let p = assignment_probs(&design, &view).unwrap();
        check_simplex(p.as_slice())
    })
}

pub fn block_designs_stay_in_open_simplex() -> Result<(), String> {
    let strategy = prop_oneof![
        (0.51f64..0.99).prop_map(|bias| (DesignSpec::PairwiseSequential { bias }, 2usize)),
        (1usize..8, 1usize..3).prop_map(|(accept_count, treated)| (
            DesignSpec::SequentialRerandomization {
                accept_count,
                treated_per_block: treated
            },
            2 * treated,
        )),
    ]
    .prop_flat_map(|(d, n)| {
        (
            Just(d),
            Just(n),
            history(2, 1, 20),
            proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 1), n),
        )
    });
    run(SIMPLEX_CASES, strategy, |(design, n, past, current)| {
        let view = HistoryView::new(&past, &current, 2);
        let b = block_assignment_probs(&design, &view).unwrap();
        let total: f64 = b.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert_eq!(b.marginals().len(), n);
        for m in b.marginals() {
            check_simplex(m)?;
        }
        Ok(())
    })
}

pub fn ipw_equals_zero_model_aipw_bitwise() -> Result<(), String> {
    let strategy = (population_rows(3, 40), unit_design(2), any::<u64>());
    run(ESTIMATOR_CASES, strategy, |(rows, design, seed)| {
        let pop = population(&rows);
        let log = simulate_experiment(&pop, &design, &mut replication_rng(seed, 0)).unwrap();
        let zero = attach_predictions(&log, &OutcomeModelSpec::Zero, None).unwrap();
        let c = Contrast::difference();
        let plain = pseudo_outcomes(&log).unwrap();
        let adjusted = pseudo_outcomes(&zero).unwrap();
        prop_assert_eq!(
            point_estimate(&plain, Estimator::Ipw, &c).unwrap(),
            point_estimate(&adjusted, Estimator::Aipw, &c).unwrap()
        );
        prop_assert_eq!(
            covariance_estimate(&plain, CovarianceKind::VhatIpw)
                .unwrap()
                .matrix,
            covariance_estimate(&adjusted, CovarianceKind::VhatAipw)
                .unwrap()
                .matrix
        );
        Ok(())
    })
}

pub fn oracle_model_collapses_to_truth() -> Result<(), String> {
    let strategy = (population_rows(3, 40), unit_design(2), any::<u64>());
    run(ESTIMATOR_CASES, strategy, |(rows, design, seed)| {
        let pop = population(&rows);
        let log = simulate_experiment(&pop, &design, &mut replication_rng(seed, 1)).unwrap();
        let oracle = attach_predictions(&log, &OutcomeModelSpec::Oracle, Some(&pop)).unwrap();
        let trace = pseudo_outcomes(&oracle).unwrap();
        for (t, row) in trace.aipw().iter().enumerate() {
            prop_assert_eq!(row.as_slice(), pop.outcomes(t));
        }
        let c = Contrast::difference();
        let tau = point_estimate(&trace, Estimator::Aipw, &c).unwrap();
        let truth = true_estimand(&pop, &c).unwrap();
        prop_assert!((tau[0] - truth[0]).abs() <= 1e-12 * (1.0 + truth[0].abs()));
        let vt = covariance_estimate(&trace, CovarianceKind::VtildeAipw)
            .unwrap()
            .matrix;
        prop_assert!(vt.iter().all(|v| *v == 0.0));
        Ok(())
    })
}

pub fn adaptive_predictions_ignore_the_future() -> Result<(), String> {
    let strategy = (
        population_rows(4, 30),
        adaptive_model(),
        any::<prop::sample::Index>(),
        -50.0f64..50.0,
        -5.0f64..5.0,
        any::<u64>(),
    );
    run(
        ESTIMATOR_CASES,
        strategy,
        |(rows, model, pick, new_y, new_x, seed)| {
            let pop = population(&rows);
            let design = DesignSpec::Bernoulli {
                probs: vec![0.5, 0.5],
            };
            let log = simulate_experiment(&pop, &design, &mut replication_rng(seed, 2)).unwrap();
            // Rewrite unit j's arm and outcome and every later covariate
            let j = pick.index(log.num_units());
            let mut records = log.records().to_vec();
            records[j].outcome = new_y;
            records[j].arm = 1 - records[j].arm;
            for r in &mut records[j + 1..] {
                r.covariates[0] = new_x;
            }
            let mutated = ExperimentLog::new(2, records, None).unwrap();
            let a = attach_predictions(&log, &model, None).unwrap();
            let b = attach_predictions(&mutated, &model, None).unwrap();
            for t in 0..=j {
                prop_assert_eq!(
                    &a.records()[t].predictions,
                    &b.records()[t].predictions,
                    "unit {}",
                    t
                );
            }
            Ok(())
        },
    )
}

pub fn covariance_estimates_are_symmetric_psd() -> Result<(), String> {
    let strategy = (
        population_rows(6, 40),
        adaptive_model(),
        any::<bool>(),
        any::<u64>(),
    );
    run(ESTIMATOR_CASES, strategy, |(rows, model, blocked, seed)| {
        let (pop, design) = if blocked {
            let n = rows.len() / 2 * 2;
            let pop = population(&rows[..n])
                .with_blocks(Some(vec![2; n / 2]))
                .unwrap();
            (pop, DesignSpec::PairwiseSequential { bias: 0.75 })
        } else {
            (
                population(&rows),
                DesignSpec::Bernoulli {
                    probs: vec![0.4, 0.6],
                },
            )
        };
        let log = simulate_experiment(&pop, &design, &mut replication_rng(seed, 3)).unwrap();
        let log = attach_predictions(&log, &model, None).unwrap();
        let trace = pseudo_outcomes(&log).unwrap();
        for kind in CovarianceKind::ALL {
            let m = match covariance_estimate(&trace, kind) {
                Ok(v) => v.matrix,
                // too few groups for the block weights
                Err(adaptive_inference::Error::GroupProportion { .. }) => continue,
                Err(e) => panic!("{kind:?}: {e}"),
            };
            prop_assert_eq!(&m, &m.transpose(), "{:?} not symmetric", kind);
            let (lo, hi) = eigen_extremes(&m);
            prop_assert!(
                lo >= -1e-10 * hi.abs().max(1.0),
                "{:?} eigenvalue {}",
                kind,
                lo
            );
        }
        Ok(())
    })
}

pub fn membership_is_affine_equivariant() -> Result<(), String> {
    let strategy = (
        proptest::collection::vec(-2.0f64..2.0, 9),
        proptest::collection::vec(-1.0f64..1.0, 4),
        proptest::collection::vec(-10.0f64..10.0, 2),
        proptest::collection::vec(-3.0f64..3.0, 2),
        proptest::collection::vec(-3.0f64..3.0, 2),
        2usize..500,
    );
    run(
        ESTIMATOR_CASES,
        strategy,
        |(v, a, shift, center, point, steps)| {
            let b = DMatrix::from_row_slice(3, 3, &v);
            let v = &b * b.transpose() + DMatrix::identity(3, 3) * 0.1;
            let est = CovarianceEstimate {
                kind: CovarianceKind::VhatIpw,
                matrix: v,
            };
            let c = Contrast::from_rows(&[vec![-1.0, 1.0, 0.0], vec![-1.0, 0.0, 1.0]]).unwrap();
            // diagonally dominant, hence invertible
            let a = DMatrix::from_row_slice(2, 2, &a) + DMatrix::identity(2, 2) * 2.5;
            let ac = c.premultiply(&a).unwrap();
            let map = |p: &[f64], s: &[f64]| -> Vec<f64> {
                (0..2)
                    .map(|i| a[(i, 0)] * p[0] + a[(i, 1)] * p[1] + s[i])
                    .collect()
            };
            let zero = [0.0, 0.0];
            let base = confidence_set(&center, &est, &c, 0.1, steps).unwrap();
            let moved = confidence_set(&map(&center, &zero), &est, &ac, 0.1, steps).unwrap();
            let translated = confidence_set(&map(&center, &shift), &est, &ac, 0.1, steps).unwrap();
            let q0 = base.quadratic_form(&point);
            let q1 = moved.quadratic_form(&map(&point, &zero));
            let q2 = translated.quadratic_form(&map(&point, &shift));
            prop_assert!((q0 - q1).abs() <= 1e-8 * q0.max(1.0), "{} vs {}", q0, q1);
            prop_assert!((q0 - q2).abs() <= 1e-8 * q0.max(1.0), "{} vs {}", q0, q2);
            if (q0 - base.threshold()).abs() > 1e-6 * base.threshold() {
                prop_assert_eq!(base.contains(&point), moved.contains(&map(&point, &zero)));
                prop_assert_eq!(
                    base.contains(&point),
                    translated.contains(&map(&point, &shift))
                );
            }
            Ok(())
        },
    )
}

/// Bit-identical results for one and three workers.
pub fn results_do_not_depend_on_parallelism() -> Result<(), String> {
    let ls = OutcomeModelSpec::OnlineLeastSquares { min_obs: None };
    let mut spec = StudySpec {
        population: PopulationSource::Generate {
            dgp: DgpSpec::Linear {
                units: 200,
                shared_noise: false,
            },
            seed: 9,
        },
        design: StudyDesign::Sequential(DesignSpec::Bernoulli {
            probs: vec![0.5, 0.5],
        }),
        strategies: vec![
            StrategySpec::Ipw { name: None },
            StrategySpec::Aipw {
                name: None,
                model: ls.clone(),
                variance: CovarianceKind::VtildeAipw,
            },
            StrategySpec::Cf {
                name: None,
                folds: 2,
                model: ls,
                bonferroni: false,
            },
        ],
        contrast: Contrast::difference(),
        alpha: 0.05,
        replications: 64,
        base_seed: 17,
        parallelism: 1,
    };
    let serial = run_study(&spec).map_err(|e| e.to_string())?;
    spec.parallelism = 3;
    let parallel = run_study(&spec).map_err(|e| e.to_string())?;
    if serial == parallel && serial.raw == parallel.raw {
        Ok(())
    } else {
        Err("results changed with the worker count".into())
    }
}

/// Every check, by name.
pub type Check = fn() -> Result<(), String>;

pub const ALL: [(&str, Check); 9] = [
    ("unit design simplex", unit_designs_stay_in_open_simplex),
    ("block design simplex", block_designs_stay_in_open_simplex),
    (
        "ipw equals zero-model aipw",
        ipw_equals_zero_model_aipw_bitwise,
    ),
    ("oracle-model collapse", oracle_model_collapses_to_truth),
    ("prefix causality", adaptive_predictions_ignore_the_future),
    (
        "symmetric psd covariances",
        covariance_estimates_are_symmetric_psd,
    ),
    ("affine equivariance", membership_is_affine_equivariant),
    (
        "parallelism determinism",
        results_do_not_depend_on_parallelism,
    ),
    ("oracle certification suite", certification_suite),
];

fn certification_suite() -> Result<(), String> {
    let report =
        adaptive_inference::oracle::run_certification_suite().map_err(|e| e.to_string())?;
    match report.checks.iter().find(|c| !c.passed) {
        None => Ok(()),
        Some(c) => Err(format!("{} on {}: {}", c.identity, c.instance, c.detail)),
    }
}
