//! Sample-based likelihood evaluation: Gaussian Parzen windows for
//! continuous data, a mixed continuous/categorical product-kernel estimator,
//! bandwidth selection on a validation set, and small distribution
//! diagnostics.

use crate::data::{MixedDatum, Schema};
use crate::models::Model;
use crate::ndcore::{Rng, Vector};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// The default bandwidth grids searched during validation.
pub const SIGMA_GRID: [f64; 7] = [1000.0, 100.0, 10.0, 1.0, 0.1, 0.01, 0.001];
pub const H_GRID: [f64; 7] = [0.8, 0.6, 0.4, 0.3, 0.2, 0.1, 0.05];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("no valid bandwidth in the grid: {0}")]
    NoValidBandwidth(String),
}

/// Isotropic-Gaussian kernel density model over model samples.
#[derive(Clone, Debug)]
pub struct ParzenModel {
    samples: Vec<Vector>,
    sigma: f64,
}

impl ParzenModel {
    pub fn new(samples: Vec<Vector>, sigma: f64) -> Self {
        assert!(!samples.is_empty(), "ParzenModel: no samples");
        assert!(sigma > 0.0 && sigma.is_finite(), "ParzenModel: bad sigma");
        ParzenModel { samples, sigma }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn log_density(&self, x: &Vector) -> f64 {
        let d = x.len() as f64;
        let inv_two_var = 1.0 / (2.0 * self.sigma * self.sigma);
        let log_norm = -0.5 * d * (LN_2PI + 2.0 * self.sigma.ln());
        let exponents = self.samples.iter().map(|s| {
            let mut sq = 0.0;
            for (xi, si) in x.iter().zip(s.iter()) {
                let r = xi - si;
                sq += r * r;
            }
            log_norm - sq * inv_two_var
        });
        log_sum_exp(exponents) - (self.samples.len() as f64).ln()
    }
}

/// Mean per-instance log-likelihood of the test points under the Parzen
/// model, log-sum-exp stabilized.
pub fn parzen_loglik(model: &ParzenModel, test: &[Vector]) -> f64 {
    assert!(!test.is_empty(), "parzen_loglik: empty test set");
    test.iter().map(|x| model.log_density(x)).sum::<f64>() / test.len() as f64
}

/// Product-kernel density model for mixed data: isotropic Gaussian kernels
/// on the continuous block, match/mismatch kernels on each categorical
/// dimension (`1-h` on a match, `h/(E-1)` otherwise).
#[derive(Clone, Debug)]
pub struct MixedKernelModel {
    samples: Vec<MixedDatum>,
    sigma: f64,
    h: f64,
    cards: Vec<usize>,
}

impl MixedKernelModel {
    /// Fails with a schema error when `h >= (E-1)/E` for some categorical
    /// dimension (the kernel would no longer peak at the match).
    pub fn new(
        samples: Vec<MixedDatum>,
        sigma: f64,
        h: f64,
        cards: Vec<usize>,
    ) -> Result<Self, EvalError> {
        if samples.is_empty() {
            return Err(EvalError::EmptySet("sample"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(EvalError::Schema(format!("bad sigma {sigma}")));
        }
        if !(0.0..1.0).contains(&h) {
            return Err(EvalError::Schema(format!("h {h} outside [0,1)")));
        }
        if let Some(&e) = cards.iter().find(|&&e| h >= (e as f64 - 1.0) / e as f64) {
            return Err(EvalError::Schema(format!(
                "h {h} invalid for cardinality {e}: requires h < {}",
                (e as f64 - 1.0) / e as f64
            )));
        }
        Ok(MixedKernelModel {
            samples,
            sigma,
            h,
            cards,
        })
    }

    fn log_density(&self, x: &MixedDatum) -> f64 {
        let d_c = x.cont.len() as f64;
        let inv_two_var = 1.0 / (2.0 * self.sigma * self.sigma);
        let log_norm = -0.5 * d_c * (LN_2PI + 2.0 * self.sigma.ln());
        let log_match = (1.0 - self.h).ln();
        let exponents = self.samples.iter().map(|s| {
            let mut e = log_norm;
            for (xi, si) in x.cont.iter().zip(s.cont.iter()) {
                let r = xi - si;
                e -= r * r * inv_two_var;
            }
            for ((xc, sc), &card) in x.cat.iter().zip(&s.cat).zip(&self.cards) {
                e += if xc == sc {
                    log_match
                } else {
                    (self.h / (card as f64 - 1.0)).ln()
                };
            }
            e
        });
        log_sum_exp(exponents) - (self.samples.len() as f64).ln()
    }
}

/// Mean per-instance log-likelihood of mixed test points.
pub fn mixed_loglik(model: &MixedKernelModel, test: &[MixedDatum]) -> Result<f64, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptySet("test"));
    }
    for t in test {
        if t.cat.len() != model.cards.len()
            || t.cont.len() != model.samples[0].cont.len()
        {
            return Err(EvalError::Schema(
                "test record does not match kernel model schema".into(),
            ));
        }
    }
    Ok(test.iter().map(|x| model.log_density(x)).sum::<f64>() / test.len() as f64)
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Pick the best-scoring candidate; candidates must come in preference order
/// (most-preferred first), strict improvement replaces, so ties keep the
/// earlier entry.
fn pick_best<T: Copy>(candidates: impl Iterator<Item = (T, f64)>) -> Option<(T, f64)> {
    let mut best: Option<(T, f64)> = None;
    for (cand, score) in candidates {
        let replace = match best {
            None => true,
            Some((_, s)) => score > s,
        };
        if replace {
            best = Some((cand, score));
        }
    }
    best
}

/// Exhaustive grid argmax of the validation log-likelihood for a Parzen
/// model; ties prefer the smaller sigma. Returns the winner and its score.
pub fn select_sigma(
    samples: &[Vector],
    validation: &[Vector],
    grid: &[f64],
) -> Result<(f64, f64), EvalError> {
    if grid.is_empty() {
        return Err(EvalError::NoValidBandwidth("empty sigma grid".into()));
    }
    if validation.is_empty() {
        return Err(EvalError::EmptySet("validation"));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scored = grid.iter().map(|&sigma| {
        let model = ParzenModel::new(samples.to_vec(), sigma);
        (sigma, parzen_loglik(&model, validation))
    });
    pick_best(scored).ok_or_else(|| EvalError::NoValidBandwidth("no candidates".into()))
}

/// Exhaustive grid argmax over (sigma, h) for the mixed kernel; h values
/// invalid for any categorical cardinality are filtered out per dataset.
/// Ties prefer smaller sigma, then smaller h.
pub fn select_sigma_h(
    samples: &[MixedDatum],
    validation: &[MixedDatum],
    sigma_grid: &[f64],
    h_grid: &[f64],
    cards: &[usize],
) -> Result<((f64, f64), f64), EvalError> {
    if sigma_grid.is_empty() || h_grid.is_empty() {
        return Err(EvalError::NoValidBandwidth("empty grid".into()));
    }
    if validation.is_empty() {
        return Err(EvalError::EmptySet("validation"));
    }
    let h_max = cards
        .iter()
        .map(|&e| (e as f64 - 1.0) / e as f64)
        .fold(f64::INFINITY, f64::min);
    let mut hs: Vec<f64> = h_grid.iter().copied().filter(|&h| h < h_max).collect();
    if hs.is_empty() {
        return Err(EvalError::NoValidBandwidth(format!(
            "every h in the grid breaks h < {h_max}"
        )));
    }
    hs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut sigmas = sigma_grid.to_vec();
    sigmas.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut candidates = Vec::with_capacity(sigmas.len() * hs.len());
    for &sigma in &sigmas {
        for &h in &hs {
            let model = MixedKernelModel::new(samples.to_vec(), sigma, h, cards.to_vec())?;
            candidates.push(((sigma, h), mixed_loglik(&model, validation)?));
        }
    }
    pick_best(candidates.into_iter())
        .ok_or_else(|| EvalError::NoValidBandwidth("no candidates".into()))
}

/// Kolmogorov-Smirnov statistic of values in [0,1] against uniform[0,1].
pub fn ks_statistic_uniform(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "ks_statistic_uniform: empty input");
    let mut xs = values.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        d = d.max(x - i as f64 / n);
        d = d.max((i + 1) as f64 / n - x);
    }
    d
}

// ---------------------------------------------------------------------------
// End-to-end generative evaluation

/// Protocol for scoring a generative model by samples.
#[derive(Clone, Debug)]
pub struct EvalProtocol {
    pub n_samples: usize,
    pub sigma_grid: Vec<f64>,
    pub h_grid: Vec<f64>,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            n_samples: 10_000,
            sigma_grid: SIGMA_GRID.to_vec(),
            h_grid: H_GRID.to_vec(),
        }
    }
}

/// One evaluation outcome: selected bandwidths and the mean per-instance
/// test log-likelihood.
#[derive(Clone, Copy, Debug)]
pub struct EvalOutcome {
    pub sigma: f64,
    pub h: Option<f64>,
    pub validation_loglik: f64,
    pub test_loglik: f64,
}

/// Draw `n_samples` from the model, pick bandwidths on the validation split,
/// and report the mean per-instance test log-likelihood. Validation and test
/// records are given raw; both are moved into model (preprocessed) space
/// with the model's own schema before scoring.
pub fn evaluate_generative(
    model: &Model,
    validation: &[MixedDatum],
    test: &[MixedDatum],
    protocol: &EvalProtocol,
    rng: &mut Rng,
) -> Result<EvalOutcome, EvalError> {
    if validation.is_empty() {
        return Err(EvalError::EmptySet("validation"));
    }
    if test.is_empty() {
        return Err(EvalError::EmptySet("test"));
    }
    let schema = &model.schema;
    let samples: Vec<MixedDatum> = (0..protocol.n_samples)
        .map(|_| model.sample_datum(rng))
        .collect();
    let valid: Vec<MixedDatum> = validation.iter().map(|d| schema.normalize(d)).collect();
    let test: Vec<MixedDatum> = test.iter().map(|d| schema.normalize(d)).collect();

    let cards = schema.cat_cards();
    if cards.is_empty() {
        let sample_pts: Vec<Vector> = samples.into_iter().map(|d| d.cont).collect();
        let valid_pts: Vec<Vector> = valid.into_iter().map(|d| d.cont).collect();
        let test_pts: Vec<Vector> = test.into_iter().map(|d| d.cont).collect();
        let (sigma, validation_loglik) =
            select_sigma(&sample_pts, &valid_pts, &protocol.sigma_grid)?;
        let final_model = ParzenModel::new(sample_pts, sigma);
        Ok(EvalOutcome {
            sigma,
            h: None,
            validation_loglik,
            test_loglik: parzen_loglik(&final_model, &test_pts),
        })
    } else {
        let ((sigma, h), validation_loglik) = select_sigma_h(
            &samples,
            &valid,
            &protocol.sigma_grid,
            &protocol.h_grid,
            &cards,
        )?;
        let final_model = MixedKernelModel::new(samples, sigma, h, cards)?;
        Ok(EvalOutcome {
            sigma,
            h: Some(h),
            validation_loglik,
            test_loglik: mixed_loglik(&final_model, &test)?,
        })
    }
}

/// Convenience for encoding a whole split with the model's schema.
pub fn encode_split(schema: &Schema, data: &[MixedDatum], idx: &[usize]) -> Vec<MixedDatum> {
    idx.iter().map(|&i| schema.normalize(&data[i])).collect()
}
