//! Finite-difference verification of the analytic backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::LossVariant;
use super::model::{backward, example_loss, ModelError, TokenizedExample};
use super::params::ModelParams;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Description of the worst parameter.
    pub worst: String,
}

/// Adds uniform noise in `[-scale/2, scale/2)` to every parameter, moving
/// layer norms and biases off their identity initial values.
pub fn perturb(params: &mut ModelParams<f64>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    params.visit_mut(|_, m| {
        for v in &mut m.data {
            *v += scale * (rng.gen::<f64>() - 0.5);
        }
    });
}

/// Central differences over every parameter against the analytic gradient.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)`, so parameters whose
/// gradient vanishes are compared in absolute terms.
pub fn finite_difference_check(
    params: &ModelParams<f64>,
    example: &TokenizedExample,
    variant: LossVariant,
    eps: f64,
    floor: f64,
) -> Result<GradCheck, ModelError> {
    let (_, analytic) = backward(params, example, variant)?;
    let analytic: Vec<(String, Vec<f64>)> = analytic
        .tensors()
        .into_iter()
        .map(|(n, m)| (n, m.data.clone()))
        .collect();
    let mut worst = (0.0, String::new());
    let mut checked = 0;
    let mut probe = params.clone();
    for (t, (name, grad)) in analytic.iter().enumerate() {
        for (j, &a) in grad.iter().enumerate() {
            let orig = probe.tensors()[t].1.data[j];
            set(&mut probe, t, j, orig + eps);
            let plus = example_loss(&probe, example, variant)?;
            set(&mut probe, t, j, orig - eps);
            let minus = example_loss(&probe, example, variant)?;
            set(&mut probe, t, j, orig);
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{j}] analytic {a:e} numeric {numeric:e}"));
            }
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst.0,
        checked,
        worst: worst.1,
    })
}

fn set(p: &mut ModelParams<f64>, t: usize, j: usize, v: f64) {
    p.visit_mut(|i, m| {
        if i == t {
            m.data[j] = v;
        }
    });
}
