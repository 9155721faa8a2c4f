use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::learner::{gradient, loss_and_gradient, sample_batch, Mask, ParamVector};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `‖∇f(w | prev) − ∇f(w | curr)‖²`; zero when there is no previous dataset.
pub fn measure_shift(w: &ParamVector, prev: &[Sample], curr: &[Sample]) -> Result<f64> {
    if prev.is_empty() || curr.is_empty() {
        return Ok(0.0);
    }
    Ok(sq_dist(&gradient(w, prev)?, &gradient(w, curr)?))
}

/// Mean over `n_draws` batches of `‖g(batch) − ∇f(full)‖²`.
///
/// Batches are drawn with replacement like the training batches, except that
/// a batch at least as large as the dataset is the dataset itself.
pub fn estimate_sigma2<R: Rng + ?Sized>(
    w: &ParamVector,
    samples: &[Sample],
    batch_size: usize,
    n_draws: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_draws < 30 {
        return Err(Error::InvalidArgument(format!("need at least 30 draws, got {n_draws}")));
    }
    if samples.is_empty() || batch_size == 0 {
        return Err(Error::InvalidArgument("empty dataset or batch".into()));
    }
    if batch_size >= samples.len() {
        return Ok(0.0);
    }
    let full = gradient(w, samples)?;
    let mut total = 0.0;
    for _ in 0..n_draws {
        let idx = sample_batch(samples.len(), batch_size, rng);
        let (_, g) = loss_and_gradient(w, idx.iter().map(|&i| &samples[i]))?;
        total += sq_dist(&g, &full);
    }
    Ok(total / n_draws as f64)
}

/// Largest observed `‖∇f(w + εv) − ∇f(w)‖ / ε` over random unit directions.
pub fn estimate_beta_with<F, R>(grad: F, w: &[f64], n_probes: usize, step: f64, rng: &mut R) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
    R: Rng + ?Sized,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "probe step must be positive, got {step}"
        )));
    }
    let g0 = grad(w)?;
    let mut best = 0.0f64;
    for _ in 0..n_probes {
        let mut v: Vec<f64> = (0..w.len()).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x *= step / n);
        let shifted: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a + b).collect();
        let g1 = grad(&shifted)?;
        best = best.max(sq_dist(&g1, &g0).sqrt() / step);
    }
    Ok(best)
}

/// [`estimate_beta_with`] on the model's mean loss over `samples`.
pub fn estimate_beta<R: Rng + ?Sized>(
    w: &ParamVector,
    samples: &[Sample],
    n_probes: usize,
    step: f64,
    rng: &mut R,
) -> Result<f64> {
    let arch = w.arch;
    estimate_beta_with(
        |x| gradient(&ParamVector::from_values(arch, x.to_vec())?, samples),
        &w.values,
        n_probes,
        step,
        rng,
    )
}

/// Per-client `‖∇f_u − Σ_v α_v ∇f_v‖²`.
pub fn dissimilarity(local_grads: &[Vec<f64>], alpha: &[f64]) -> Vec<f64> {
    let Some(first) = local_grads.first() else {
        return Vec::new();
    };
    let mut global = vec![0.0; first.len()];
    for (g, a) in local_grads.iter().zip(alpha) {
        for (acc, x) in global.iter_mut().zip(g) {
            *acc += a * x;
        }
    }
    local_grads.iter().map(|g| sq_dist(g, &global)).collect()
}

/// `‖Σ_u α_u ∇f_u ⊙ m_u‖²`.
pub fn masked_global_grad_norm_sq(local_grads: &[Vec<f64>], masks: &[&Mask], alpha: &[f64]) -> f64 {
    let Some(first) = local_grads.first() else { return 0.0 };
    let mut acc = vec![0.0; first.len()];
    for ((g, m), a) in local_grads.iter().zip(masks).zip(alpha) {
        for ((s, x), &keep) in acc.iter_mut().zip(g).zip(&m.bits) {
            if keep {
                *s += a * x;
            }
        }
    }
    acc.iter().map(|x| x * x).sum()
}
