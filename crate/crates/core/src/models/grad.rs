//! Objective value and exact analytic gradients of the regularized lower
//! bound for one minibatch, with a single Monte Carlo latent sample per
//! datum and copula normal scores treated as constant.

use crate::data::{encode_for_network, MixedDatum};
use crate::dist::draw_jitter;
use crate::ndcore::{Rng, Vector};

use super::*;

/// Regularization weights of the objective.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveParams {
    pub lambda_a: f64,
    pub lambda_r: f64,
    pub norm_order: NormOrder,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        ObjectiveParams {
            lambda_a: 0.0,
            lambda_r: 0.0,
            norm_order: NormOrder::L2,
        }
    }
}

/// All stochastic inputs of one step, drawn up front so the objective is a
/// deterministic function of (parameters, batch, noise).
#[derive(Clone, Debug)]
pub struct StepNoise {
    /// Per datum: latent noise of length K.
    pub eps: Vec<Vector>,
    /// Per datum: one jitter in (0,1) per categorical dimension.
    pub jitters: Vec<Vec<f64>>,
    /// Per latent dimension: batch-size uniforms for the rank penalty.
    pub rank_uniforms: Vec<Vec<f64>>,
}

impl StepNoise {
    pub fn draw(
        rng: &mut Rng,
        batch_size: usize,
        latent_dim: usize,
        cat_dim: usize,
        with_rank: bool,
    ) -> StepNoise {
        let mut eps = Vec::with_capacity(batch_size);
        let mut jitters = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            eps.push(rng.sample_std_normal(latent_dim));
            jitters.push((0..cat_dim).map(|_| draw_jitter(rng)).collect());
        }
        let rank_uniforms = if with_rank && batch_size >= 2 {
            (0..latent_dim)
                .map(|_| (0..batch_size).map(|_| rng.uniform()).collect())
                .collect()
        } else {
            Vec::new()
        };
        StepNoise {
            eps,
            jitters,
            rank_uniforms,
        }
    }
}

/// Value of one step, broken into the reported terms. All entries carry the
/// `n_total / batch` scaling; `objective = loglik - kl - locality - rank`.
#[derive(Clone, Copy, Debug)]
pub struct StepValue {
    pub objective: f64,
    pub loglik: f64,
    pub kl: f64,
    pub locality: f64,
    pub rank: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("non-finite {what} at batch item {item}")]
    NonFinite { what: &'static str, item: usize },
}

struct DatumEval {
    enc_out: EncoderOutput,
    latent: LatentSample,
    loglik: f64,
    kl: f64,
    locality: f64,
    grads: HeadGrads,
    enc_trace: Option<EncoderTrace>,
    dec_trace: Option<DecoderTrace>,
}

/// Evaluate the regularized lower bound with fresh forward passes and no
/// gradient accumulation. `frozen_scores` substitutes precomputed normal
/// scores per datum (used by finite-difference oracles, which must hold the
/// stop-gradient path constant).
pub fn objective_value(
    model: &Model,
    batch: &[&MixedDatum],
    n_total: usize,
    noise: &StepNoise,
    obj: &ObjectiveParams,
    frozen_scores: Option<&[Vector]>,
) -> f64 {
    assert!(!batch.is_empty(), "objective_value: empty batch");
    let scale = n_total as f64 / batch.len() as f64;
    let mut total = 0.0;
    let mut z_dims = vec![Vec::with_capacity(batch.len()); model.latent_dim];
    for (m, datum) in batch.iter().enumerate() {
        let eval = eval_datum(model, datum, m, noise, frozen_scores, obj, false);
        total += eval.loglik - eval.kl - eval.locality;
        for (k, zs) in z_dims.iter_mut().enumerate() {
            zs.push(eval.latent.z[k]);
        }
    }
    if obj.lambda_r > 0.0 && !noise.rank_uniforms.is_empty() {
        total -= rank_penalty(&z_dims, &noise.rank_uniforms, obj.lambda_r);
    }
    scale * total
}

/// Normal scores per batch item at the current parameters (empty vectors for
/// decoders without a copula). Freezing these and differencing
/// [`objective_value`] is the reference the analytic gradients are checked
/// against.
pub fn normal_scores_for_batch(
    model: &Model,
    batch: &[&MixedDatum],
    noise: &StepNoise,
) -> Vec<Vector> {
    batch
        .iter()
        .enumerate()
        .map(|(m, datum)| {
            let x = encode_for_network(datum, &model.schema);
            let enc_out = model.encoder.encode(&x);
            let latent = reparameterize(&enc_out, &noise.eps[m]);
            match model.decoder.decode(&latent.z) {
                DecoderOutput::Mixed(head) if model.decoder.kind == DecoderKind::MixedCopula => {
                    let norm = model.schema.normalize(datum);
                    gcvae_normal_scores(&head, &norm, &noise.jitters[m])
                }
                _ => Vector::zeros(0),
            }
        })
        .collect()
}

/// One training step: returns the regularized lower-bound estimate scaled by
/// `n_total / batch` and accumulates exact analytic gradients for every
/// parameter into the model's grad slots (gradients of the objective, i.e.
/// an ascent direction).
pub fn grad_step_value(
    model: &mut Model,
    batch: &[&MixedDatum],
    n_total: usize,
    noise: &StepNoise,
    obj: &ObjectiveParams,
) -> Result<StepValue, NumericsError> {
    assert!(!batch.is_empty(), "grad_step_value: empty batch");
    assert_eq!(noise.eps.len(), batch.len(), "noise batch size mismatch");
    let scale = n_total as f64 / batch.len() as f64;
    model.zero_grads();

    let mut evals = Vec::with_capacity(batch.len());
    for (m, datum) in batch.iter().enumerate() {
        let eval = eval_datum(model, datum, m, noise, None, obj, true);
        if !eval.loglik.is_finite() {
            return Err(NumericsError::NonFinite {
                what: "decoder log-likelihood",
                item: m,
            });
        }
        if !eval.kl.is_finite() {
            return Err(NumericsError::NonFinite { what: "KL term", item: m });
        }
        evals.push(eval);
    }

    // Rank penalty couples the batch through per-dimension sorting.
    let mut rank_value = 0.0;
    let mut rank_grads: Vec<Vec<f64>> = Vec::new();
    let use_rank = obj.lambda_r > 0.0 && !noise.rank_uniforms.is_empty() && batch.len() >= 2;
    if use_rank {
        let z_dims: Vec<Vec<f64>> = (0..model.latent_dim)
            .map(|k| evals.iter().map(|e| e.latent.z[k]).collect())
            .collect();
        rank_value = rank_penalty(&z_dims, &noise.rank_uniforms, obj.lambda_r);
        rank_grads = rank_penalty_grad(&z_dims, &noise.rank_uniforms, obj.lambda_r);
    }

    let (mut loglik, mut kl, mut locality) = (0.0, 0.0, 0.0);
    for (m, eval) in evals.into_iter().enumerate() {
        loglik += eval.loglik;
        kl += eval.kl;
        locality += eval.locality;

        let dec_trace = eval.dec_trace.expect("traced evaluation");
        let mut g_z = model.decoder.backward(dec_trace, &eval.grads);
        if use_rank {
            // objective subtracts the penalty
            for (k, gs) in rank_grads.iter().enumerate() {
                g_z[k] -= gs[m];
            }
        }

        // encoder gradients: decoder pull through z plus the KL closed form
        let k_dim = model.latent_dim;
        let mut d_eta = Vector::zeros(k_dim);
        let mut d_log_tau2 = Vector::zeros(k_dim);
        for k in 0..k_dim {
            let t = eval.enc_out.log_tau2[k];
            let tau = (0.5 * t).exp();
            d_eta[k] = g_z[k] - eval.enc_out.eta[k];
            d_log_tau2[k] = g_z[k] * 0.5 * tau * eval.latent.eps[k] + 0.5 * (1.0 - t.exp());
        }
        let enc_trace = eval.enc_trace.expect("traced evaluation");
        model.encoder.backward(enc_trace, &d_eta, &d_log_tau2);
    }

    model.scale_grads(scale);
    let value = StepValue {
        objective: scale * (loglik - kl - locality - rank_value),
        loglik: scale * loglik,
        kl: scale * kl,
        locality: scale * locality,
        rank: scale * rank_value,
    };
    if !value.objective.is_finite() {
        return Err(NumericsError::NonFinite {
            what: "objective",
            item: 0,
        });
    }
    Ok(value)
}

fn eval_datum(
    model: &Model,
    datum: &MixedDatum,
    m: usize,
    noise: &StepNoise,
    frozen_scores: Option<&[Vector]>,
    obj: &ObjectiveParams,
    traced: bool,
) -> DatumEval {
    let x = encode_for_network(datum, &model.schema);
    let norm = model.schema.normalize(datum);

    let (enc_out, enc_trace) = if traced {
        let (out, trace) = model.encoder.encode_traced(&x);
        (out, Some(trace))
    } else {
        (model.encoder.encode(&x), None)
    };
    let latent = reparameterize(&enc_out, &noise.eps[m]);
    let (head, dec_trace) = if traced {
        let (h, t) = model.decoder.decode_traced(&latent.z);
        (h, Some(t))
    } else {
        (model.decoder.decode(&latent.z), None)
    };

    let (loglik, mut grads) = head_value_and_grads(
        model.decoder.kind,
        &head,
        &norm,
        frozen_scores.map(|s| &s[m]),
        &noise.jitters[m],
    );

    // locality penalty on the principal direction, when one exists
    let mut locality = 0.0;
    if obj.lambda_a > 0.0 {
        if let Some(a) = head_a(&head) {
            locality = locality_penalty(a, obj.norm_order, obj.lambda_a);
            let pen_grad = locality_penalty_grad(a, obj.norm_order, obj.lambda_a);
            if let Some(d_a) = grads.d_a.as_mut() {
                d_a.axpy(-1.0, &pen_grad);
            }
        }
    }

    DatumEval {
        kl: kl_term(&enc_out),
        enc_out,
        latent,
        loglik,
        locality,
        grads,
        enc_trace,
        dec_trace,
    }
}

fn head_a(head: &DecoderOutput) -> Option<&Vector> {
    match head {
        DecoderOutput::Diag(_) => None,
        DecoderOutput::RankOne(h) => Some(&h.a),
        DecoderOutput::Mixed(h) => Some(&h.a),
    }
}

/// Decoder log-likelihood value and its gradient with respect to every head
/// output. For the mixed-copula family the normal scores are taken as given
/// (frozen) or computed fresh from the head itself; either way they are a
/// constant for the gradients.
fn head_value_and_grads(
    kind: DecoderKind,
    head: &DecoderOutput,
    datum: &MixedDatum,
    frozen_scores: Option<&Vector>,
    jitters: &[f64],
) -> (f64, HeadGrads) {
    match head {
        DecoderOutput::Diag(h) => {
            let (value, d_mu, d_t) = gaussian_marginal_grads(&h.mu, &h.log_sigma2, &datum.cont);
            (
                value,
                HeadGrads {
                    d_mu: Some(d_mu),
                    d_log_sigma2: Some(d_t),
                    ..HeadGrads::default()
                },
            )
        }
        DecoderOutput::RankOne(h) => {
            let value = roc_loglik(h, &datum.cont);
            let omega = h.log_omega.exp();
            let diff = datum.cont.sub(&h.mu);
            let (d_diff, d_a, d_omega) = rank_one_gaussian_grads(&h.a, omega, &diff);
            (
                value,
                HeadGrads {
                    d_mu: Some(d_diff.scale(-1.0)),
                    d_log_omega: Some(omega * d_omega),
                    d_a: Some(d_a),
                    ..HeadGrads::default()
                },
            )
        }
        DecoderOutput::Mixed(h) => {
            let d_c = h.mu.len();
            let (mut value, d_mu, d_t) = if d_c > 0 {
                gaussian_marginal_grads(&h.mu, &h.log_sigma2, &datum.cont)
            } else {
                (0.0, Vector::zeros(0), Vector::zeros(0))
            };

            // categorical marginals: log beta_{i, x_i}; logit grad I(x=j) - beta
            let mut d_logits = Vec::new();
            for (beta, &cat) in h.betas.iter().zip(&datum.cat) {
                value += beta.pmf(cat).ln();
                for (j, &p) in beta.probs().iter().enumerate() {
                    let indicator = if j + 1 == cat { 1.0 } else { 0.0 };
                    d_logits.push(indicator - p);
                }
            }

            let mut grads = HeadGrads {
                d_mu: if d_c > 0 { Some(d_mu) } else { None },
                d_log_sigma2: if d_c > 0 { Some(d_t) } else { None },
                d_beta_logits: if d_logits.is_empty() {
                    None
                } else {
                    Some(Vector::from_vec(d_logits))
                },
                ..HeadGrads::default()
            };

            if kind == DecoderKind::MixedCopula {
                let scores = match frozen_scores {
                    Some(s) => s.clone(),
                    None => gcvae_normal_scores(h, datum, jitters),
                };
                value += copula_terms(h, &scores);
                let (d_a, d_omega) = copula_term_grads(h, &scores);
                grads.d_log_omega = Some(h.omega() * d_omega);
                grads.d_a = Some(d_a);
            }
            (value, grads)
        }
    }
}

/// Value and (d_mu, d_log_sigma2) of `sum_i log N(x_i | mu_i, sigma_i^2)`.
fn gaussian_marginal_grads(mu: &Vector, log_sigma2: &Vector, x: &Vector) -> (f64, Vector, Vector) {
    let mut value = 0.0;
    let mut d_mu = Vector::zeros(mu.len());
    let mut d_t = Vector::zeros(mu.len());
    for i in 0..mu.len() {
        let t = log_sigma2[i];
        let inv_var = (-t).exp();
        let r = x[i] - mu[i];
        value -= 0.5 * (LN_2PI + t + r * r * inv_var);
        d_mu[i] = r * inv_var;
        d_t[i] = 0.5 * (r * r * inv_var - 1.0);
    }
    (value, d_mu, d_t)
}

/// Gradients of `log N(diff | 0, omega*I + a*a^T)` with respect to `diff`,
/// `a` and `omega` (not the log).
fn rank_one_gaussian_grads(a: &Vector, omega: f64, diff: &Vector) -> (Vector, Vector, f64) {
    let d = a.len() as f64;
    let alpha = a.norm_sq();
    let r = a.dot(diff);
    let n2 = diff.norm_sq();
    let denom = omega * omega + omega * alpha;

    // d/d diff = -Sigma^{-1} diff applied with sign for the log-lik: the
    // gradient of -quad/2 w.r.t. diff is -Sigma^{-1} diff.
    let mut d_diff = diff.scale(-1.0 / omega);
    d_diff.axpy(r / denom, a);

    let mut d_a = a.scale(-1.0 / (omega + alpha));
    d_a.axpy(r / denom, diff);
    d_a.axpy(-r * r * omega / (denom * denom), a);

    let d_omega = -0.5 * (d / omega - alpha / denom)
        + 0.5 * n2 / (omega * omega)
        - 0.5 * r * r * (2.0 * omega + alpha) / (denom * denom);

    (d_diff, d_a, d_omega)
}

/// Gradients of the copula-only terms (normal scores constant) with respect
/// to `a` and `omega`.
fn copula_term_grads(head: &GcvaeHead, scores: &Vector) -> (Vector, f64) {
    let omega = head.omega();
    let a = &head.a;
    let dim = a.len();
    let d = dim as f64;
    let alpha = a.norm_sq();
    let r_q = a.dot(scores);
    let nq = scores.norm_sq();
    let denom = omega * omega + omega * alpha;

    let mut d_a = Vector::zeros(dim);
    let mut d_omega = 0.0;

    // sum log psi_i = sum log(omega + a_i^2) / 2
    for i in 0..dim {
        let psi2 = omega + a[i] * a[i];
        d_a[i] += a[i] / psi2;
        d_omega += 0.5 / psi2;
    }
    // -log|Psi| / 2
    d_a.axpy(-1.0 / (omega + alpha), a);
    d_omega -= 0.5 * (d / omega - alpha / denom);
    // -q~^T Psi^{-1} q~ / 2
    d_a.axpy(r_q / denom, scores);
    d_a.axpy(-r_q * r_q * omega / (denom * denom), a);
    d_omega += 0.5 * nq / (omega * omega)
        - 0.5 * r_q * r_q * (2.0 * omega + alpha) / (denom * denom);
    // +q~^T S^{-1} q~ / 2
    for i in 0..dim {
        let psi2 = omega + a[i] * a[i];
        let qi2 = scores[i] * scores[i];
        d_a[i] -= qi2 * a[i] / (psi2 * psi2);
        d_omega -= 0.5 * qi2 / (psi2 * psi2);
    }

    (d_a, d_omega)
}
