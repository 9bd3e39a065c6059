//! Weighted effect estimate on a confounded synthetic dataset.

use satcause::causal::{self, TreatmentAssignment};
use satcause::learners::Family;
use satcause::synth::{self, SynthConfig};

fn main() -> satcause::Result<()> {
    let config = SynthConfig {
        n_rows: 20_000,
        p: 3,
        alpha: vec![1.0, 1.0, 0.5],
        beta: vec![1.0, 0.5, 1.0],
        tau: 1.0,
        intercept_treatment: -1.25,
        intercept_outcome: -1.25,
        seed: 11,
    };
    let data = synth::generate(&config)?;
    let rating: Vec<f64> = data
        .treatment
        .iter()
        .map(|&t| if t == 1 { 5.0 } else { 1.0 })
        .collect();
    let t: TreatmentAssignment = causal::dichotomize_values("rating", &rating, 4)?;
    let spec = causal::default_propensity_spec(Family::LogisticRegression, 0)?;
    let fit = causal::fit_propensity(&spec, &data.covariates, &data.covariate_names(), &t)?;
    let w = causal::ipw_weights(&fit.scores, &t.assigned, None)?;
    let effect = causal::estimate_effects(&data.outcome, &t.assigned, &w)?;
    println!(
        "true {:.3}  ipw {:.3}  marginal {:.3}",
        data.true_ate.value, effect.ate, effect.marginal_effect
    );
    Ok(())
}
