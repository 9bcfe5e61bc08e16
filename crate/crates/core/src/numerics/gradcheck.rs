//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates forward values, so it is an
//! independent oracle for the analytic gradients produced by [`Tape::backward`].

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::params::ModelParams;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared absolutely, so tiny entries
/// dominated by finite-difference round-off do not blow up the ratio.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Name (or input index) and flat element index of the worst entry.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    fn record(&mut self, label: &str, index: usize, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        self.checked += 1;
        if rel > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = rel;
            self.worst = Some((label.to_string(), index));
        }
    }

    fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

fn pick_indices(len: usize, limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match limit {
        Some(k) if k < len => {
            let mut idx = sample(rng, len, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

fn scalar_of(tape: &Tape, v: Var) -> f64 {
    tape.value(v).data()[0]
}

/// Checks `f` with respect to free input tensors. `limit` caps how many
/// elements per input are probed (chosen with `seed`).
pub fn check_inputs<F>(inputs: &[Tensor], f: F, limit: Option<usize>, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(scalar_of(&t, l))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        for idx in pick_indices(input.len(), limit, &mut rng) {
            let orig = input.data()[idx];
            work[which].data_mut()[idx] = orig + FD_STEP;
            let plus = eval(&work)?;
            work[which].data_mut()[idx] = orig - FD_STEP;
            let minus = eval(&work)?;
            work[which].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            report.record(&format!("input{which}"), idx, analytic[which][idx], numeric);
        }
    }
    Ok(report)
}

/// Checks `f` with respect to every non-frozen parameter in `params`,
/// probing up to `per_tensor` elements of each.
pub fn check_params<F>(params: &ModelParams, f: F, per_tensor: Option<usize>, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ModelParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    tape.backward(loss)?;
    let mut grads = params.clone();
    grads.zero_grads();
    grads.accumulate_grads(&tape, 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    let mut work = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let p = params.get(&name).expect("known");
        if p.frozen {
            continue;
        }
        let mut sub = GradCheckReport::default();
        let analytic = grads.get(&name).expect("known").grad().to_vec();
        for idx in pick_indices(p.tensor.len(), per_tensor, &mut rng) {
            let orig = p.tensor.data()[idx];
            let mut eval_at = |x: f64| -> Result<f64> {
                work.get_mut(&name).expect("known").tensor.data_mut()[idx] = x;
                let mut t = Tape::new();
                let l = f(&mut t, &work)?;
                Ok(scalar_of(&t, l))
            };
            let plus = eval_at(orig + FD_STEP)?;
            let minus = eval_at(orig - FD_STEP)?;
            eval_at(orig)?;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            sub.record(&name, idx, analytic[idx], numeric);
        }
        report.merge(sub);
    }
    Ok(report)
}
