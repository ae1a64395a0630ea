use serde::{Deserialize, Serialize};

use super::FinitePopulation;
use crate::error::{Error, Result};
use crate::rng::keyed_normal;

/// Data-generating processes for the simulation studies.
///
/// Each realization is drawn once from `seed` and then held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpSpec {
    /// `X ~ N(0,1)`, `Y(1) = 1 + 2X + ε₁`, `Y(2) = 1 + 4X + ε₂`.
    ///
    /// With `shared_noise` the two arms use the same error draw.
    Linear {
        units: usize,
        #[serde(default)]
        shared_noise: bool,
    },
    /// `X ~ N(0,1)`, `Y(1) = Y(2) = 5X + ε`, grouped into equal blocks.
    BlockedNull { blocks: usize, block_size: usize },
    /// `Y_t(1) ~ N(t, 1)`, `Y_t(2) ~ N(2t, 1)`, no covariates.
    Trend { units: usize },
}

const SLOT_X: usize = 0;
const SLOT_E1: usize = 1;
const SLOT_E2: usize = 2;

pub fn generate_population(dgp: &DgpSpec, seed: u64) -> Result<FinitePopulation> {
    match *dgp {
        DgpSpec::Linear {
            units,
            shared_noise,
        } => {
            positive("units", units)?;
            let mut ys = Vec::with_capacity(units);
            let mut xs = Vec::with_capacity(units);
            for t in 0..units {
                let x = keyed_normal(seed, t, SLOT_X);
                let e1 = keyed_normal(seed, t, SLOT_E1);
                let e2 = if shared_noise {
                    e1
                } else {
                    keyed_normal(seed, t, SLOT_E2)
                };
                ys.push(vec![1.0 + 2.0 * x + e1, 1.0 + 4.0 * x + e2]);
                xs.push(vec![x]);
            }
            FinitePopulation::new(ys, xs, None)
        }
        DgpSpec::BlockedNull { blocks, block_size } => {
            positive("blocks", blocks)?;
            positive("block_size", block_size)?;
            let units = blocks * block_size;
            let mut ys = Vec::with_capacity(units);
            let mut xs = Vec::with_capacity(units);
            for t in 0..units {
                let x = keyed_normal(seed, t, SLOT_X);
                let y = 5.0 * x + keyed_normal(seed, t, SLOT_E1);
                ys.push(vec![y, y]);
                xs.push(vec![x]);
            }
            FinitePopulation::new(ys, xs, Some(vec![block_size; blocks]))
        }
        DgpSpec::Trend { units } => {
            positive("units", units)?;
            let ys = (0..units)
                .map(|t| {
                    let level = (t + 1) as f64;
                    vec![
                        level + keyed_normal(seed, t, SLOT_E1),
                        2.0 * level + keyed_normal(seed, t, SLOT_E2),
                    ]
                })
                .collect();
            FinitePopulation::new(ys, vec![Vec::new(); units], None)
        }
    }
}

fn positive(name: &str, value: usize) -> Result<()> {
    if value == 0 {
        return Err(Error::InvalidPopulation(format!("{name} must be positive")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::Contrast;
    use crate::population::true_estimand;

    #[test]
    fn blocked_null_has_zero_effect() {
        let pop = generate_population(
            &DgpSpec::BlockedNull {
                blocks: 5,
                block_size: 8,
            },
            3,
        )
        .unwrap();
        assert_eq!(pop.blocks().unwrap().num_blocks(), 5);
        for t in 0..pop.num_units() {
            assert_eq!(pop.outcome(t, 0), pop.outcome(t, 1));
        }
        assert_eq!(
            true_estimand(&pop, &Contrast::difference()).unwrap(),
            vec![0.0]
        );
    }

    #[test]
    fn trend_effect_tracks_index_mean() {
        let pop = generate_population(&DgpSpec::Trend { units: 200 }, 11).unwrap();
        assert_eq!(pop.num_covariates(), 0);
        let tau = true_estimand(&pop, &Contrast::difference()).unwrap()[0];
        let manual: f64 = (0..200)
            .map(|t| pop.outcome(t, 1) - pop.outcome(t, 0))
            .sum::<f64>()
            / 200.0;
        assert!((tau - manual).abs() < 1e-9);
        // noise of the mean difference has sd sqrt(2/200) = 0.1
        assert!((tau - 100.5).abs() < 0.6);
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = DgpSpec::Linear {
            units: 50,
            shared_noise: false,
        };
        let a = generate_population(&spec, 9).unwrap();
        let b = generate_population(&spec, 9).unwrap();
        let c = generate_population(&spec, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn shared_noise_keeps_covariate_draws() {
        let a = generate_population(
            &DgpSpec::Linear {
                units: 20,
                shared_noise: false,
            },
            4,
        )
        .unwrap();
        let b = generate_population(
            &DgpSpec::Linear {
                units: 20,
                shared_noise: true,
            },
            4,
        )
        .unwrap();
        for t in 0..20 {
            let x = a.covariates(t)[0];
            assert_eq!(x, b.covariates(t)[0]);
            assert_eq!(a.outcome(t, 0), b.outcome(t, 0));
            // with a shared error the effect is exactly 2X
            assert!((b.outcome(t, 1) - b.outcome(t, 0) - 2.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_empty_sizes() {
        assert!(generate_population(&DgpSpec::Trend { units: 0 }, 1).is_err());
        assert!(generate_population(
            &DgpSpec::BlockedNull {
                blocks: 3,
                block_size: 0
            },
            1
        )
        .is_err());
    }

    #[test]
    fn spec_json_shape() {
        let spec: DgpSpec =
            serde_json::from_str(r#"{"kind":"linear","units":2000,"shared_noise":true}"#).unwrap();
        assert_eq!(
            spec,
            DgpSpec::Linear {
                units: 2000,
                shared_noise: true
            }
        );
        assert!(serde_json::from_str::<DgpSpec>(r#"{"kind":"bogus"}"#).is_err());
    }
}
