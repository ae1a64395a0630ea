use serde::{Deserialize, Serialize};

use crate::population::{ExperimentLog, FinitePopulation};

/// Flag levels. The Lindeberg and moment proxies are compared after dividing
/// by the matching power of `max_t (L_t + M_t)`, which makes the flags
/// independent of the outcome scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticThresholds {
    pub min_prob: f64,
    pub relative_lindeberg: f64,
    pub relative_cs: f64,
}

impl Default for DiagnosticThresholds {
    fn default() -> Self {
        DiagnosticThresholds {
            min_prob: 1e-3,
            relative_lindeberg: 10.0,
            relative_cs: 500.0,
        }
    }
}

/// Path-realized proxies for the regularity conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub realized_min_prob: f64,
    pub max_abs_outcome: f64,
    pub max_abs_model: f64,
    /// `T⁻¹ max_t (ρ_t (L_t + M_t) / e_t)²`.
    pub lindeberg_proxy: f64,
    /// `T⁻² Σ_t (ρ_t (L_t + M_t))⁴ / e_t³`.
    pub cs_proxy: f64,
    pub flags: Vec<String>,
}

/// `L_t` uses the full potential-outcome table when `population` is given,
/// otherwise the observed outcome. Blocks are treated as single steps with
/// their extrema taken over member units.
pub fn diagnostics(
    log: &ExperimentLog,
    population: Option<&FinitePopulation>,
    thresholds: &DiagnosticThresholds,
) -> DiagnosticsSummary {
    let records = log.records();
    let groups: Vec<std::ops::Range<usize>> = match log.blocks() {
        Some(b) => b.ranges().collect(),
        None => (0..records.len()).map(|t| t..t + 1).collect(),
    };
    let population = population.filter(|p| p.num_units() == records.len());
    let steps = groups.len() as f64;
    let total = records.len() as f64;

    let mut min_prob = f64::INFINITY;
    let mut max_outcome = 0.0f64;
    let mut max_model = 0.0f64;
    let mut max_scale = 0.0f64;
    let mut max_term = 0.0f64;
    let mut cs_sum = 0.0;
    for range in groups {
        let rho = steps * range.len() as f64 / total;
        let mut e = f64::INFINITY;
        let mut l = 0.0f64;
        let mut m = 0.0f64;
        for u in range {
            let r = &records[u];
            e = r.probs.iter().copied().fold(e, f64::min);
            l = match population {
                Some(p) => p.outcomes(u).iter().fold(l, |a, y| a.max(y.abs())),
                None => l.max(r.outcome.abs()),
            };
            m = r.predictions.iter().fold(m, |a, v| a.max(v.abs()));
        }
        min_prob = min_prob.min(e);
        max_outcome = max_outcome.max(l);
        max_model = max_model.max(m);
        max_scale = max_scale.max(l + m);
        let w = rho * (l + m);
        max_term = max_term.max((w / e).powi(2));
        cs_sum += w.powi(4) / e.powi(3);
    }
    let lindeberg = max_term / steps;
    let cs = cs_sum / (steps * steps);

    let mut flags = Vec::new();
    if min_prob < thresholds.min_prob {
        flags.push(format!(
            "realized_min_prob {min_prob:e} below {:e}",
            thresholds.min_prob
        ));
    }
    if max_scale > 0.0 {
        let rel = lindeberg / max_scale.powi(2);
        if rel > thresholds.relative_lindeberg {
            flags.push(format!(
                "relative lindeberg proxy {rel:.3e} above {}",
                thresholds.relative_lindeberg
            ));
        }
        let rel = cs / max_scale.powi(4);
        if rel > thresholds.relative_cs {
            flags.push(format!(
                "relative moment proxy {rel:.3e} above {}",
                thresholds.relative_cs
            ));
        }
    }
    DiagnosticsSummary {
        realized_min_prob: min_prob,
        max_abs_outcome: max_outcome,
        max_abs_model: max_model,
        lindeberg_proxy: lindeberg,
        cs_proxy: cs,
        flags,
    }
}
