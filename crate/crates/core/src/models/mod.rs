//! The three probabilistic model cores: shared Gaussian encoder, the
//! diagonal / rank-one / mixed-copula decoder families, closed-form lower
//! bound terms, and exact analytic gradients of the regularized objective.
//!
//! Gradient layout note: every quantity that must stay positive
//! (`sigma^2`, `omega`, encoder `tau^2`) is parameterized through its log,
//! so positivity is structural and gradients are taken with respect to the
//! log-value emitted by the network head.

mod grad;
pub mod checkpoint;

pub use grad::{
    grad_step_value, normal_scores_for_batch, objective_value, NumericsError, ObjectiveParams,
    StepNoise, StepValue,
};

use crate::copula::{rank_one_logdet, rank_one_quad, RankOneCovariance};
use crate::data::{encode_for_network, MixedDatum, Schema};
use crate::dist::{
    ce_cdf, normal_score, std_normal_cdf, std_normal_pdf, Categorical, CDF_CLAMP,
};
use crate::ndcore::{Rng, Vector};
use crate::nn::{Activation, Mlp, Tape};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Vae,
    VaeRoc,
    Gcvae,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Vae => "vae",
            ModelKind::VaeRoc => "vae-roc",
            ModelKind::Gcvae => "gcvae",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vae" => Ok(ModelKind::Vae),
            "vae-roc" => Ok(ModelKind::VaeRoc),
            "gcvae" => Ok(ModelKind::Gcvae),
            other => Err(format!("unknown model kind '{other}'")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("{0}")]
    Unsupported(String),
    #[error("bad configuration: {0}")]
    Config(String),
}

/// Norm order for the locality penalty `lambda_a * ||a||_p^2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormOrder {
    L1,
    L2,
}

// ---------------------------------------------------------------------------
// Encoder

/// Posterior parameters for one datum: mean `eta` and log-variance
/// `log_tau2` of the factorized Gaussian `q(z|x)`.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub eta: Vector,
    pub log_tau2: Vector,
}

impl EncoderOutput {
    pub fn tau(&self) -> Vector {
        self.log_tau2.iter().map(|t| (0.5 * t).exp()).collect()
    }
}

/// Latent draw tied to the noise that produced it: `z = eta + tau ⊙ eps`.
#[derive(Clone, Debug)]
pub struct LatentSample {
    pub z: Vector,
    pub eps: Vector,
}

/// Shared-trunk encoder with two linear output heads.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub trunk: Mlp,
    pub eta_head: Mlp,
    pub log_tau2_head: Mlp,
}

pub(crate) struct EncoderTrace {
    trunk: Tape,
    eta: Tape,
    tau: Tape,
}

impl Encoder {
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        activation: Activation,
        rng: &mut Rng,
        scale: f64,
    ) -> Self {
        let (trunk_dims, trunk_acts) = trunk_spec(input_dim, hidden, activation);
        let h_last = *trunk_dims.last().unwrap();
        Encoder {
            trunk: Mlp::init(&trunk_dims, &trunk_acts, rng, scale),
            eta_head: head_mlp(h_last, latent_dim, rng, scale),
            log_tau2_head: head_mlp(h_last, latent_dim, rng, scale),
        }
    }

    pub fn encode(&self, x: &Vector) -> EncoderOutput {
        let y = self.trunk.forward_value(x);
        EncoderOutput {
            eta: self.eta_head.forward_value(&y),
            log_tau2: self.log_tau2_head.forward_value(&y),
        }
    }

    pub(crate) fn encode_traced(&self, x: &Vector) -> (EncoderOutput, EncoderTrace) {
        let (y, trunk) = self.trunk.forward(x);
        let (eta, eta_tape) = self.eta_head.forward(&y);
        let (log_tau2, tau_tape) = self.log_tau2_head.forward(&y);
        (
            EncoderOutput { eta, log_tau2 },
            EncoderTrace {
                trunk,
                eta: eta_tape,
                tau: tau_tape,
            },
        )
    }

    /// Accumulate parameter gradients; returns the gradient w.r.t. x.
    pub(crate) fn backward(
        &mut self,
        trace: EncoderTrace,
        d_eta: &Vector,
        d_log_tau2: &Vector,
    ) -> Vector {
        let mut g_h = self.eta_head.backward(trace.eta, d_eta);
        let g_h2 = self.log_tau2_head.backward(trace.tau, d_log_tau2);
        g_h.axpy(1.0, &g_h2);
        self.trunk.backward(trace.trunk, &g_h)
    }

    fn for_each_net(&self, f: &mut impl FnMut(&Mlp)) {
        f(&self.trunk);
        f(&self.eta_head);
        f(&self.log_tau2_head);
    }

    fn for_each_net_mut(&mut self, f: &mut impl FnMut(&mut Mlp)) {
        f(&mut self.trunk);
        f(&mut self.eta_head);
        f(&mut self.log_tau2_head);
    }
}

fn trunk_spec(
    input_dim: usize,
    hidden: &[usize],
    activation: Activation,
) -> (Vec<usize>, Vec<Activation>) {
    assert!(!hidden.is_empty(), "at least one hidden layer is required");
    let mut dims = Vec::with_capacity(hidden.len() + 1);
    dims.push(input_dim);
    dims.extend_from_slice(hidden);
    (dims, vec![activation; hidden.len()])
}

fn head_mlp(in_dim: usize, out_dim: usize, rng: &mut Rng, scale: f64) -> Mlp {
    Mlp::init(&[in_dim, out_dim], &[Activation::Identity], rng, scale)
}

// ---------------------------------------------------------------------------
// Decoder heads

/// Diagonal Gaussian decoder head: `N(x | mu, diag(sigma^2))`.
#[derive(Clone, Debug)]
pub struct DiagGaussianHead {
    pub mu: Vector,
    pub log_sigma2: Vector,
}

/// Rank-one-covariance decoder head: `N(x | mu, omega*I + a*a^T)`.
#[derive(Clone, Debug)]
pub struct RocHead {
    pub mu: Vector,
    pub log_omega: f64,
    pub a: Vector,
}

/// Mixed-copula decoder head: Gaussian and categorical marginals coupled by
/// a Gaussian copula with covariance `Psi = omega*I + a*a^T` over all
/// `d_c + d_s` dimensions (continuous block first).
#[derive(Clone, Debug)]
pub struct GcvaeHead {
    pub mu: Vector,
    pub log_sigma2: Vector,
    pub betas: Vec<Categorical>,
    pub log_omega: f64,
    pub a: Vector,
}

impl GcvaeHead {
    pub fn omega(&self) -> f64 {
        self.log_omega.exp()
    }

    /// Marginal copula scale `psi_i = sqrt(omega + a_i^2)`.
    pub fn psi(&self, i: usize) -> f64 {
        (self.omega() + self.a[i] * self.a[i]).sqrt()
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn rank_one_covariance(&self) -> RankOneCovariance {
        RankOneCovariance::new(self.a.clone(), self.omega())
    }
}

/// Tagged union over the three decoder families.
#[derive(Clone, Debug)]
pub enum DecoderOutput {
    Diag(DiagGaussianHead),
    RankOne(RocHead),
    Mixed(GcvaeHead),
}

/// Which heads a decoder carries; `MixedDiag` is the no-copula baseline for
/// mixed data (its output is a [`GcvaeHead`] with `Psi = I` fixed).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderKind {
    Diag,
    RankOne,
    MixedDiag,
    MixedCopula,
}

impl DecoderKind {
    pub fn tag(self) -> u8 {
        match self {
            DecoderKind::Diag => 0,
            DecoderKind::RankOne => 1,
            DecoderKind::MixedDiag => 2,
            DecoderKind::MixedCopula => 3,
        }
    }

    pub fn has_copula(self) -> bool {
        matches!(self, DecoderKind::RankOne | DecoderKind::MixedCopula)
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub kind: DecoderKind,
    cont_dim: usize,
    cards: Vec<usize>,
    pub trunk: Mlp,
    pub mu_head: Option<Mlp>,
    pub log_sigma2_head: Option<Mlp>,
    pub beta_head: Option<Mlp>,
    pub log_omega_head: Option<Mlp>,
    pub a_head: Option<Mlp>,
}

pub(crate) struct DecoderTrace {
    trunk: Tape,
    mu: Option<Tape>,
    sigma: Option<Tape>,
    beta: Option<Tape>,
    omega: Option<Tape>,
    a: Option<Tape>,
}

/// Gradients with respect to the decoder head outputs; `None` for heads the
/// decoder does not carry.
#[derive(Clone, Debug, Default)]
pub(crate) struct HeadGrads {
    pub d_mu: Option<Vector>,
    pub d_log_sigma2: Option<Vector>,
    pub d_beta_logits: Option<Vector>,
    pub d_log_omega: Option<f64>,
    pub d_a: Option<Vector>,
}

impl Decoder {
    pub fn init(
        kind: DecoderKind,
        cont_dim: usize,
        cards: &[usize],
        latent_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut Rng,
        scale: f64,
    ) -> Self {
        let (trunk_dims, trunk_acts) = trunk_spec(latent_dim, hidden, activation);
        let h = *trunk_dims.last().unwrap();
        let total_dim = cont_dim + cards.len();
        let logits: usize = cards.iter().sum();
        let head = |dim: usize, rng: &mut Rng| {
            if dim > 0 {
                Some(head_mlp(h, dim, rng, scale))
            } else {
                None
            }
        };
        let (mu_dim, sigma_dim, beta_dim, omega, a_dim) = match kind {
            DecoderKind::Diag => (cont_dim, cont_dim, 0, false, 0),
            DecoderKind::RankOne => (cont_dim, 0, 0, true, cont_dim),
            DecoderKind::MixedDiag => (cont_dim, cont_dim, logits, false, 0),
            DecoderKind::MixedCopula => (cont_dim, cont_dim, logits, true, total_dim),
        };
        Decoder {
            kind,
            cont_dim,
            cards: cards.to_vec(),
            trunk: Mlp::init(&trunk_dims, &trunk_acts, rng, scale),
            mu_head: head(mu_dim, rng),
            log_sigma2_head: head(sigma_dim, rng),
            beta_head: head(beta_dim, rng),
            log_omega_head: if omega { head(1, rng) } else { None },
            a_head: head(a_dim, rng),
        }
    }

    pub fn cont_dim(&self) -> usize {
        self.cont_dim
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn total_dim(&self) -> usize {
        self.cont_dim + self.cards.len()
    }

    pub fn decode(&self, z: &Vector) -> DecoderOutput {
        self.decode_traced(z).0
    }

    pub(crate) fn decode_traced(&self, z: &Vector) -> (DecoderOutput, DecoderTrace) {
        let (h, trunk) = self.trunk.forward(z);
        let run = |net: &Option<Mlp>| match net {
            Some(net) => {
                let (v, tape) = net.forward(&h);
                (Some(v), Some(tape))
            }
            None => (None, None),
        };
        let (mu, mu_tape) = run(&self.mu_head);
        let (log_sigma2, sigma_tape) = run(&self.log_sigma2_head);
        let (beta_logits, beta_tape) = run(&self.beta_head);
        let (log_omega, omega_tape) = run(&self.log_omega_head);
        let (a, a_tape) = run(&self.a_head);

        let mu = mu.unwrap_or_else(|| Vector::zeros(0));
        let log_sigma2 = log_sigma2.unwrap_or_else(|| Vector::zeros(0));
        let betas = betas_from_logits(beta_logits.as_ref(), &self.cards);
        let log_omega = log_omega.map_or(0.0, |v| v[0]);

        let out = match self.kind {
            DecoderKind::Diag => DecoderOutput::Diag(DiagGaussianHead { mu, log_sigma2 }),
            DecoderKind::RankOne => DecoderOutput::RankOne(RocHead {
                mu,
                log_omega,
                a: a.expect("rank-one decoder carries an a head"),
            }),
            DecoderKind::MixedDiag => DecoderOutput::Mixed(GcvaeHead {
                mu,
                log_sigma2,
                betas,
                log_omega: 0.0,
                a: Vector::zeros(self.total_dim()),
            }),
            DecoderKind::MixedCopula => DecoderOutput::Mixed(GcvaeHead {
                mu,
                log_sigma2,
                betas,
                log_omega,
                a: a.expect("copula decoder carries an a head"),
            }),
        };
        (
            out,
            DecoderTrace {
                trunk,
                mu: mu_tape,
                sigma: sigma_tape,
                beta: beta_tape,
                omega: omega_tape,
                a: a_tape,
            },
        )
    }

    /// Accumulate parameter gradients; returns the gradient w.r.t. z.
    pub(crate) fn backward(&mut self, trace: DecoderTrace, grads: &HeadGrads) -> Vector {
        let mut g_h = Vector::zeros(self.trunk.out_dim());
        let back = |net: &mut Option<Mlp>, tape: Option<Tape>, d: Option<Vector>, g_h: &mut Vector| {
            if let (Some(net), Some(tape), Some(d)) = (net.as_mut(), tape, d) {
                let g = net.backward(tape, &d);
                g_h.axpy(1.0, &g);
            }
        };
        back(&mut self.mu_head, trace.mu, grads.d_mu.clone(), &mut g_h);
        back(
            &mut self.log_sigma2_head,
            trace.sigma,
            grads.d_log_sigma2.clone(),
            &mut g_h,
        );
        back(
            &mut self.beta_head,
            trace.beta,
            grads.d_beta_logits.clone(),
            &mut g_h,
        );
        back(
            &mut self.log_omega_head,
            trace.omega,
            grads.d_log_omega.map(|g| Vector::from_vec(vec![g])),
            &mut g_h,
        );
        back(&mut self.a_head, trace.a, grads.d_a.clone(), &mut g_h);
        self.trunk.backward(trace.trunk, &g_h)
    }

    fn for_each_net(&self, f: &mut impl FnMut(&Mlp)) {
        f(&self.trunk);
        for net in [
            &self.mu_head,
            &self.log_sigma2_head,
            &self.beta_head,
            &self.log_omega_head,
            &self.a_head,
        ]
        .into_iter()
        .flatten()
        {
            f(net);
        }
    }

    fn for_each_net_mut(&mut self, f: &mut impl FnMut(&mut Mlp)) {
        f(&mut self.trunk);
        for net in [
            &mut self.mu_head,
            &mut self.log_sigma2_head,
            &mut self.beta_head,
            &mut self.log_omega_head,
            &mut self.a_head,
        ]
        .into_iter()
        .flatten()
        {
            f(net);
        }
    }
}

/// One softmax per categorical dimension over the concatenated logit blocks.
fn betas_from_logits(logits: Option<&Vector>, cards: &[usize]) -> Vec<Categorical> {
    let logits = match logits {
        Some(l) => l,
        None => return Vec::new(),
    };
    let mut betas = Vec::with_capacity(cards.len());
    let mut off = 0;
    for &j in cards {
        let block = &logits.as_slice()[off..off + j];
        let max = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = block.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        betas.push(Categorical::new(exps.iter().map(|e| e / sum).collect()));
        off += j;
    }
    betas
}

// ---------------------------------------------------------------------------
// Model

/// Architecture knobs shared by encoder and decoder.
#[derive(Clone, Debug)]
pub struct Architecture {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init_scale: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            latent_dim: 2,
            hidden: vec![100],
            activation: Activation::Tanh,
            init_scale: 1.0,
        }
    }
}

/// A trained (or trainable) model: encoder, decoder, and the schema that
/// fixes input encoding and normalization.
#[derive(Clone, Debug)]
pub struct Model {
    pub kind: ModelKind,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub schema: Schema,
    pub latent_dim: usize,
}

impl Model {
    pub fn init(
        kind: ModelKind,
        schema: &Schema,
        arch: &Architecture,
        rng: &mut Rng,
    ) -> Result<Model, ModelError> {
        if arch.hidden.is_empty() {
            return Err(ModelError::Config("need at least one hidden layer".into()));
        }
        if arch.latent_dim == 0 {
            return Err(ModelError::Config("latent dimension must be positive".into()));
        }
        let cards = schema.cat_cards();
        let decoder_kind = match (kind, cards.is_empty()) {
            (ModelKind::Vae, true) => DecoderKind::Diag,
            (ModelKind::Vae, false) => DecoderKind::MixedDiag,
            (ModelKind::VaeRoc, true) => DecoderKind::RankOne,
            (ModelKind::VaeRoc, false) => {
                return Err(ModelError::Unsupported(
                    "vae-roc models continuous data only; use gcvae for mixed data".into(),
                ))
            }
            (ModelKind::Gcvae, _) => DecoderKind::MixedCopula,
        };
        let encoder = Encoder::init(
            schema.input_dim(),
            &arch.hidden,
            arch.latent_dim,
            arch.activation,
            rng,
            arch.init_scale,
        );
        let decoder = Decoder::init(
            decoder_kind,
            schema.cont_dim(),
            &cards,
            arch.latent_dim,
            &arch.hidden,
            arch.activation,
            rng,
            arch.init_scale,
        );
        Ok(Model {
            kind,
            encoder,
            decoder,
            schema: schema.clone(),
            latent_dim: arch.latent_dim,
        })
    }

    pub fn encode_datum(&self, datum: &MixedDatum) -> EncoderOutput {
        self.encoder.encode(&encode_for_network(datum, &self.schema))
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_net(&mut |net| n += net.param_count());
        n
    }

    /// All parameters flattened in a fixed documented order: encoder trunk,
    /// eta head, log-tau2 head, decoder trunk, then mu / log-sigma2 / beta /
    /// log-omega / a heads (present ones only), each net weights-then-biases
    /// per layer.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each_net(&mut |net| net.append_params(&mut out));
        out
    }

    pub fn grads_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each_net(&mut |net| net.append_grads(&mut out));
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "set_params_flat: length mismatch");
        let mut off = 0;
        self.for_each_net_mut(&mut |net| off += net.load_params(&flat[off..]));
    }

    pub fn zero_grads(&mut self) {
        self.for_each_net_mut(&mut |net| net.zero_grads());
    }

    pub fn scale_grads(&mut self, c: f64) {
        self.for_each_net_mut(&mut |net| net.scale_grads(c));
    }

    fn for_each_net(&self, f: &mut impl FnMut(&Mlp)) {
        self.encoder.for_each_net(f);
        self.decoder.for_each_net(f);
    }

    fn for_each_net_mut(&mut self, f: &mut impl FnMut(&mut Mlp)) {
        self.encoder.for_each_net_mut(f);
        self.decoder.for_each_net_mut(f);
    }

    /// One ancestral sample in model (preprocessed) space:
    /// `z ~ N(0,I)`, decode, then draw from the decoder's output law.
    pub fn sample_datum(&self, rng: &mut Rng) -> MixedDatum {
        let z = rng.sample_std_normal(self.latent_dim);
        sample_head(&self.decoder.decode(&z), rng)
    }
}

/// Draw one observation from a decoded head.
pub fn sample_head(head: &DecoderOutput, rng: &mut Rng) -> MixedDatum {
    match head {
        DecoderOutput::Diag(h) => MixedDatum::continuous(
            h.mu
                .iter()
                .zip(h.log_sigma2.iter())
                .map(|(m, t)| m + (0.5 * t).exp() * rng.std_normal())
                .collect(),
        ),
        DecoderOutput::RankOne(h) => {
            let s = rng.std_normal();
            let sqrt_omega = (0.5 * h.log_omega).exp();
            MixedDatum::continuous(
                h.mu
                    .iter()
                    .zip(h.a.iter())
                    .map(|(m, ai)| m + ai * s + sqrt_omega * rng.std_normal())
                    .collect(),
            )
        }
        DecoderOutput::Mixed(h) => {
            // q ~ N(0, Psi) through the rank-one construction, then map each
            // coordinate through its marginal quantile.
            let s = rng.std_normal();
            let sqrt_omega = (0.5 * h.log_omega).exp();
            let d_c = h.mu.len();
            let q: Vec<f64> = (0..h.dim())
                .map(|i| h.a[i] * s + sqrt_omega * rng.std_normal())
                .collect();
            let cont: Vector = (0..d_c)
                .map(|i| {
                    let sigma = (0.5 * h.log_sigma2[i]).exp();
                    h.mu[i] + sigma * q[i] / h.psi(i)
                })
                .collect();
            let cat: Vec<usize> = h
                .betas
                .iter()
                .enumerate()
                .map(|(i, beta)| {
                    let idx = d_c + i;
                    let u = std_normal_cdf(q[idx] / h.psi(idx));
                    beta.quantile(u)
                })
                .collect();
            MixedDatum { cont, cat }
        }
    }
}

// ---------------------------------------------------------------------------
// Lower-bound pieces

/// Reparameterization: `z = eta + exp(log_tau2 / 2) ⊙ eps`.
pub fn reparameterize(enc: &EncoderOutput, eps: &Vector) -> LatentSample {
    assert_eq!(enc.eta.len(), eps.len(), "reparameterize: length mismatch");
    let z = enc
        .eta
        .iter()
        .zip(enc.log_tau2.iter())
        .zip(eps.iter())
        .map(|((e, t), ep)| e + (0.5 * t).exp() * ep)
        .collect();
    LatentSample { z, eps: eps.clone() }
}

/// Closed-form `KL[q(z|x) || N(0, I)] = -1/2 sum(1 + log tau^2 - tau^2 - eta^2)`.
pub fn kl_term(enc: &EncoderOutput) -> f64 {
    -0.5 * enc
        .eta
        .iter()
        .zip(enc.log_tau2.iter())
        .map(|(e, t)| 1.0 + t - t.exp() - e * e)
        .sum::<f64>()
}

/// `sum_i log N(x_i | mu_i, sigma_i^2)`.
pub fn diag_loglik(head: &DiagGaussianHead, x: &Vector) -> f64 {
    assert_eq!(head.mu.len(), x.len(), "diag_loglik: length mismatch");
    x.iter()
        .zip(head.mu.iter())
        .zip(head.log_sigma2.iter())
        .map(|((xi, mi), t)| {
            let r = xi - mi;
            -0.5 * (LN_2PI + t + r * r * (-t).exp())
        })
        .sum()
}

/// `log N(x | mu, omega*I + a*a^T)` in O(D) via the rank-one determinant
/// identity and the Sherman-Morrison inverse.
pub fn roc_loglik(head: &RocHead, x: &Vector) -> f64 {
    assert_eq!(head.mu.len(), x.len(), "roc_loglik: length mismatch");
    let omega = head.log_omega.exp();
    let diff = x.sub(&head.mu);
    let d = x.len() as f64;
    -0.5 * (d * LN_2PI
        + rank_one_logdet(head.a.as_slice(), omega)
        + rank_one_quad(head.a.as_slice(), omega, diff.as_slice()))
}

/// Scaled normal scores of one datum under the head's own marginals:
/// `q~_i = psi_i * quantile(F_i(value_i))` with continuous dimensions first,
/// then jittered categorical dimensions. Marginal CDF values are clamped as
/// in the dist module, which for the continuous (Gaussian) marginals is the
/// standardized residual clamped to the same quantile range.
pub fn gcvae_normal_scores(head: &GcvaeHead, datum: &MixedDatum, jitters: &[f64]) -> Vector {
    let d_c = head.mu.len();
    assert_eq!(datum.cont.len(), d_c, "normal_scores: continuous dim mismatch");
    assert_eq!(
        jitters.len(),
        datum.cat.len(),
        "normal_scores: one jitter per categorical dimension"
    );
    assert_eq!(head.betas.len(), datum.cat.len());
    let q_max = -normal_score(CDF_CLAMP);
    let mut scores = Vec::with_capacity(head.dim());
    for i in 0..d_c {
        let sigma = (0.5 * head.log_sigma2[i]).exp();
        let standardized = ((datum.cont[i] - head.mu[i]) / sigma).clamp(-q_max, q_max);
        scores.push(head.psi(i) * standardized);
    }
    for (i, (&cat, beta)) in datum.cat.iter().zip(&head.betas).enumerate() {
        let value = cat as f64 - jitters[i];
        let u = ce_cdf(beta, value);
        scores.push(head.psi(d_c + i) * normal_score(u));
    }
    Vector::from_vec(scores)
}

/// The full mixed-copula lower-bound value for one datum, with the normal
/// scores `q~` treated as a constant:
/// `sum log psi - log|Psi|/2 - q~^T (Psi^{-1} - S^{-1}) q~ / 2
///  + categorical log-lik + Gaussian marginal log-lik - KL`.
pub fn gcvae_elbo_term(
    head: &GcvaeHead,
    datum: &MixedDatum,
    scores: &Vector,
    enc: &EncoderOutput,
) -> f64 {
    copula_terms(head, scores) + marginal_loglik(head, datum) - kl_term(enc)
}

/// The two copula-only terms plus the quadratic coupling
/// (`sum log psi_i - log|Psi|/2 - q~^T(Psi^{-1} - S^{-1})q~/2`); exactly zero
/// when `Psi = I`.
pub fn copula_terms(head: &GcvaeHead, scores: &Vector) -> f64 {
    assert_eq!(scores.len(), head.dim(), "copula_terms: score length mismatch");
    let omega = head.omega();
    let a = head.a.as_slice();
    let mut log_psis = 0.0;
    let mut diag_quad = 0.0;
    for (ai, qi) in a.iter().zip(scores.iter()) {
        let psi2 = omega + ai * ai;
        log_psis += 0.5 * psi2.ln();
        diag_quad += qi * qi / psi2;
    }
    log_psis - 0.5 * rank_one_logdet(a, omega)
        - 0.5 * (rank_one_quad(a, omega, scores.as_slice()) - diag_quad)
}

/// Independent-marginal log-likelihood: Gaussian terms over the continuous
/// block plus categorical terms.
pub fn marginal_loglik(head: &GcvaeHead, datum: &MixedDatum) -> f64 {
    let cont = diag_loglik(
        &DiagGaussianHead {
            mu: head.mu.clone(),
            log_sigma2: head.log_sigma2.clone(),
        },
        &datum.cont,
    );
    let cat: f64 = datum
        .cat
        .iter()
        .zip(&head.betas)
        .map(|(&c, beta)| beta.pmf(c).ln())
        .sum();
    cont + cat
}

/// Locality penalty `lambda_a * ||a||_p^2`.
pub fn locality_penalty(a: &Vector, p: NormOrder, lambda_a: f64) -> f64 {
    assert!(lambda_a >= 0.0, "locality_penalty: negative weight");
    let norm_sq = match p {
        NormOrder::L1 => {
            let l1 = a.norm_l1();
            l1 * l1
        }
        NormOrder::L2 => a.norm_sq(),
    };
    lambda_a * norm_sq
}

/// Gradient of the locality penalty with respect to `a`
/// (L1 subgradient at 0 is taken as 0).
pub(crate) fn locality_penalty_grad(a: &Vector, p: NormOrder, lambda_a: f64) -> Vector {
    match p {
        NormOrder::L1 => {
            let l1 = a.norm_l1();
            a.iter()
                .map(|&ai| {
                    if ai == 0.0 {
                        0.0
                    } else {
                        2.0 * lambda_a * l1 * ai.signum()
                    }
                })
                .collect()
        }
        NormOrder::L2 => a.scale(2.0 * lambda_a),
    }
}

/// Rank-regularization penalty: per latent dimension, sorted uniforms are
/// matched against sorted `Phi(z)` values,
/// `lambda_r/2 * sum_m (u_(m) - Phi(z_(m)))^2`, summed over dimensions.
/// Returns 0 for batches smaller than 2 (sorting needs at least two points).
pub fn rank_penalty(z_dims: &[Vec<f64>], uniforms: &[Vec<f64>], lambda_r: f64) -> f64 {
    assert!(lambda_r >= 0.0, "rank_penalty: negative weight");
    assert_eq!(z_dims.len(), uniforms.len(), "rank_penalty: dim mismatch");
    let mut total = 0.0;
    for (zs, us) in z_dims.iter().zip(uniforms) {
        assert_eq!(zs.len(), us.len(), "rank_penalty: batch size mismatch");
        if zs.len() < 2 {
            continue;
        }
        let mut phi: Vec<f64> = zs.iter().map(|&z| std_normal_cdf(z)).collect();
        let mut us = us.clone();
        phi.sort_by(|x, y| x.partial_cmp(y).unwrap());
        us.sort_by(|x, y| x.partial_cmp(y).unwrap());
        total += phi
            .iter()
            .zip(&us)
            .map(|(p, u)| (u - p) * (u - p))
            .sum::<f64>();
    }
    0.5 * lambda_r * total
}

/// Per-datum gradient of the rank penalty with respect to each z value,
/// aligned with the original (unsorted) order. Entry `[k][m]` is
/// `d penalty / d z_dims[k][m]`.
pub(crate) fn rank_penalty_grad(
    z_dims: &[Vec<f64>],
    uniforms: &[Vec<f64>],
    lambda_r: f64,
) -> Vec<Vec<f64>> {
    let mut grads: Vec<Vec<f64>> = z_dims.iter().map(|zs| vec![0.0; zs.len()]).collect();
    for ((zs, us), gs) in z_dims.iter().zip(uniforms).zip(&mut grads) {
        if zs.len() < 2 {
            continue;
        }
        let mut order: Vec<usize> = (0..zs.len()).collect();
        order.sort_by(|&i, &j| zs[i].partial_cmp(&zs[j]).unwrap());
        let mut us = us.clone();
        us.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (pos, &m) in order.iter().enumerate() {
            let phi = std_normal_cdf(zs[m]);
            // d/dz of lambda/2 (u - Phi(z))^2 = -lambda (u - Phi(z)) pdf(z)
            gs[m] = -lambda_r * (us[pos] - phi) * std_normal_pdf(zs[m]);
        }
    }
    grads
}
