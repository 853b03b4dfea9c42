//! The bottlenecked classifier and its training objectives.
//!
//! A [`CebModel`] is an encoder producing the latent mean f(x), a learned
//! per-class mean table μ (the class-conditional marginal b(z|y)), a learned
//! unconditional mean (the marginal q(z) used by the VIB variant), and a
//! linear classifier head.
//!
//! During training the representation is z = f(x) + ε with ε ~ N(0, I). The
//! per-batch loss record keeps the three conditional-entropy estimates
//!
//! * `hzx = mean -log e(z|x)`
//! * `hzy = mean -log b(z|y)` (or `-log q(z)` for VIB)
//! * `hyz = mean -log c(y|z)`
//!
//! and the residual-information estimate `rex = hzy - hzx`. The minimized
//! total is `e^{-ρ}·rex + hyz` (CEB) or `σ(-ρ)·rate + hyz` (VIB). This is
//! the minimization form of the bound: the log-likelihood enters with a
//! positive sign as `hyz`, so smaller is better throughout.
//!
//! At test time the noise is removed and predictions use the mean encoding
//! z = f(x), which makes evaluation deterministic.

pub mod optimizer;
pub mod schedule;
pub mod train;

pub use optimizer::{Adam, OptimizerConfig};
pub use schedule::{lerp, rho_to_gamma, sigma_neg_rho, RhoSchedule, SchedulePhase};
pub use train::{train, EpochStats, TrainConfig, TrainResult};

use crate::distributions::{Categorical, GaussianDiagUnit};
use crate::error::{Error, Result};
use crate::models::{Encoder, EncoderSpec, LogitModel};
use crate::seeds;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Which rate term the objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Class-conditional marginal b(z|y): rate = mean(-log b(z|y) + log e(z|x)).
    Ceb,
    /// Unconditional marginal q(z): rate = mean(-log q(z) + log e(z|x)).
    Vib,
}

/// Which classifier produces c(y|z).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Dense layer on z.
    Linear,
    /// Bayes inversion of the class-conditional marginal:
    /// softmax over log b(z|y) + log p(y).
    Consistent,
}

/// Per-batch loss record, all terms in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// mean -log e(z|x)
    pub hzx: f64,
    /// mean -log b(z|y) for CEB; mean -log q(z) for VIB
    pub hzy: f64,
    /// mean -log c(y|z)
    pub hyz: f64,
    /// hzy - hzx, the residual-information estimate
    pub rex: f64,
    /// rate multiplier: e^{-ρ} for CEB, σ(-ρ) for VIB
    pub gamma: f64,
    /// gamma·rex + hyz
    pub total: f64,
}

/// Loss value with its differentiable total and the training-mode logits
/// (useful for batch accuracy without a second forward pass).
#[derive(Debug)]
pub struct LossOutput {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
    pub logits: Tensor,
}

/// Encoder + class-mean table + marginal mean + linear classifier head.
pub struct CebModel {
    encoder: Encoder,
    /// μ table `[K, d]`: row y is the mean of b(z|y).
    backward_means: Tensor,
    /// Mean of the unconditional marginal q(z), `[1, d]`; the K=1 special
    /// case of the μ table, used only by the VIB objective.
    marginal_mean: Tensor,
    /// `[d, K]`: column y is the weight vector of class y.
    classifier_weight: Tensor,
    /// `[K]`
    classifier_bias: Tensor,
    classifier: ClassifierKind,
    /// p(y) for the consistent classifier; uniform unless configured.
    class_prior: Vec<f64>,
    num_classes: usize,
}

impl CebModel {
    /// Builds a model with deterministic initialization: μ table and
    /// marginal start at zero, the classifier head is normal with stddev
    /// 0.01, and the encoder uses its own fan-in-scaled init.
    pub fn new(
        spec: &EncoderSpec,
        num_classes: usize,
        classifier: ClassifierKind,
        seed: u64,
    ) -> Result<CebModel> {
        if num_classes < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let encoder = Encoder::build(spec, seed)?;
        let d = spec.latent_dim;
        let mut rng = seeds::rng(seed, "classifier-init");
        let classifier_weight = Tensor::param(
            &[d, num_classes],
            (0..d * num_classes)
                .map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )?;
        Ok(CebModel {
            encoder,
            backward_means: Tensor::param(&[num_classes, d], vec![0.0; num_classes * d])?,
            marginal_mean: Tensor::param(&[1, d], vec![0.0; d])?,
            classifier_weight,
            classifier_bias: Tensor::param(&[num_classes], vec![0.0; num_classes])?,
            classifier,
            class_prior: vec![1.0 / num_classes as f64; num_classes],
            num_classes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    pub fn encoder_spec(&self) -> &EncoderSpec {
        self.encoder.spec()
    }

    pub fn classifier_kind(&self) -> ClassifierKind {
        self.classifier
    }

    pub fn class_prior(&self) -> &[f64] {
        &self.class_prior
    }

    /// Replaces the class prior used by the consistent classifier.
    pub fn set_class_prior(&mut self, prior: Vec<f64>) -> Result<()> {
        validate_prior(&prior, self.num_classes)?;
        self.class_prior = prior;
        Ok(())
    }

    pub fn backward_means(&self) -> &Tensor {
        &self.backward_means
    }

    /// Mean encoding f(x) without noise; the test-time representation.
    pub fn encode_mean(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.forward(x)
    }

    /// Classifier logits on a given representation z, according to the
    /// configured classifier kind.
    pub fn logits_on(&self, z: &Tensor) -> Result<Tensor> {
        match self.classifier {
            ClassifierKind::Linear => self.linear_logits(z),
            ClassifierKind::Consistent => self.consistent_logits(z, &self.class_prior),
        }
    }

    fn linear_logits(&self, z: &Tensor) -> Result<Tensor> {
        z.matmul(&self.classifier_weight)?
            .add_row(&self.classifier_bias)
    }

    /// Bayes-consistent logits: `log b(z|y=k) + log prior[k]` up to the
    /// additive constant `-(d/2)·ln 2π`, which cancels under softmax and is
    /// omitted. Zero-probability prior entries map to -inf logits.
    pub fn consistent_logits(&self, z: &Tensor, prior: &[f64]) -> Result<Tensor> {
        validate_prior(prior, self.num_classes)?;
        let zz = z.mul(z)?.row_sum()?; // [batch]
        let mm = self.backward_means.mul(&self.backward_means)?.row_sum()?; // [K]
        let cross = z.matmul(&self.backward_means.transpose()?)?; // [batch, K]
                                                                  // ||z - mu_k||^2 = zz - 2 z.mu_k + mm
        let d2 = cross.scale(-2.0)?.add_row(&mm)?.add_col(&zz)?;
        let log_prior =
            Tensor::from_vec(&[self.num_classes], prior.iter().map(|p| p.ln()).collect())?;
        d2.scale(-0.5)?.add_row(&log_prior)
    }

    /// Deterministic evaluation-mode logits on inputs (mean encodings).
    pub fn eval_logits(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.encode_mean(x)?;
        self.logits_on(&z)
    }

    /// Argmax predictions in evaluation mode.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(Categorical::new(self.eval_logits(x)?)?.predict())
    }

    /// Fraction of correct evaluation-mode predictions.
    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(correct as f64 / labels.len().max(1) as f64)
    }

    /// All trainable tensors in a fixed order (encoder layers, μ table,
    /// marginal mean, classifier weight, classifier bias).
    pub fn parameters(&self) -> Vec<Tensor> {
        let mut params = self.encoder.parameters();
        params.push(self.backward_means.clone());
        params.push(self.marginal_mean.clone());
        params.push(self.classifier_weight.clone());
        params.push(self.classifier_bias.clone());
        params
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut params = self.encoder.named_parameters();
        params.push(("backward_means".into(), self.backward_means.clone()));
        params.push(("marginal_mean".into(), self.marginal_mean.clone()));
        params.push(("classifier.weight".into(), self.classifier_weight.clone()));
        params.push(("classifier.bias".into(), self.classifier_bias.clone()));
        params
    }

    /// Writes back parameters in the order of [`CebModel::parameters`].
    pub fn set_parameters(&mut self, params: &[Tensor]) -> Result<()> {
        let n_enc = self.encoder.parameters().len();
        if params.len() != n_enc + 4 {
            return Err(Error::InvalidSpec(format!(
                "expected {} parameter tensors, got {}",
                n_enc + 4,
                params.len()
            )));
        }
        self.encoder.set_parameters(&params[..n_enc])?;
        self.backward_means = params[n_enc].clone();
        self.marginal_mean = params[n_enc + 1].clone();
        self.classifier_weight = params[n_enc + 2].clone();
        self.classifier_bias = params[n_enc + 3].clone();
        Ok(())
    }

    /// Clears accumulated gradients on every parameter.
    pub fn zero_grad(&self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }
}

impl LogitModel for CebModel {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_dim(&self) -> usize {
        self.encoder.spec().input_dim()
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.eval_logits(x)
    }
}

fn validate_prior(prior: &[f64], k: usize) -> Result<()> {
    if prior.len() != k {
        return Err(Error::InvalidPrior { sum: f64::NAN });
    }
    let sum: f64 = prior.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || prior.iter().any(|p| *p < 0.0) {
        return Err(Error::InvalidPrior { sum });
    }
    Ok(())
}

fn check_finite(term: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss { term, value })
    }
}

/// Training-mode CEB loss with freshly sampled noise. See
/// [`ceb_loss_with_noise`] for the deterministic body.
pub fn ceb_loss<R: Rng>(
    model: &CebModel,
    x: &Tensor,
    labels: &[usize],
    rho: f64,
    rng: &mut R,
) -> Result<LossOutput> {
    let f = model.encode_mean(x)?;
    let enc = GaussianDiagUnit::new(f)?;
    let (_, eps) = enc.sample(rng);
    ceb_loss_with_noise(model, x, labels, rho, &eps)
}

/// CEB loss with caller-supplied noise ε (use zeros to evaluate the
/// noise-free expectation). `total = e^{-ρ}·rex + hyz`, batch-averaged;
/// gradients flow to the encoder, the μ table and the classifier.
pub fn ceb_loss_with_noise(
    model: &CebModel,
    x: &Tensor,
    labels: &[usize],
    rho: f64,
    eps: &Tensor,
) -> Result<LossOutput> {
    check_labels(labels, model.num_classes)?;
    let f = model.encode_mean(x)?;
    let enc = GaussianDiagUnit::new(f)?;
    let z = enc.sample_with_noise(eps)?;

    let hzx_t = enc.log_prob(&z)?.neg()?.mean()?;
    let mu = model.backward_means.gather_rows(labels)?;
    let bwd = GaussianDiagUnit::new(mu)?;
    let hzy_t = bwd.log_prob(&z)?.neg()?.mean()?;

    let logits = model.logits_on(&z)?;
    let hyz_t = Categorical::new(logits.clone())?
        .log_prob(labels)?
        .neg()?
        .mean()?;

    assemble(hzx_t, hzy_t, hyz_t, rho_to_gamma(rho), logits)
}

/// Training-mode VIB loss with freshly sampled noise.
pub fn vib_loss<R: Rng>(
    model: &CebModel,
    x: &Tensor,
    labels: &[usize],
    rho: f64,
    rng: &mut R,
) -> Result<LossOutput> {
    let f = model.encode_mean(x)?;
    let enc = GaussianDiagUnit::new(f)?;
    let (_, eps) = enc.sample(rng);
    vib_loss_with_noise(model, x, labels, rho, &eps)
}

/// VIB loss with caller-supplied noise: `total = σ(-ρ)·(hz - hzx) + hyz`
/// where `hz = mean -log q(z)` against the learned unconditional marginal.
/// The breakdown reuses the `hzy` slot for `hz`.
pub fn vib_loss_with_noise(
    model: &CebModel,
    x: &Tensor,
    labels: &[usize],
    rho: f64,
    eps: &Tensor,
) -> Result<LossOutput> {
    check_labels(labels, model.num_classes)?;
    let f = model.encode_mean(x)?;
    let enc = GaussianDiagUnit::new(f)?;
    let z = enc.sample_with_noise(eps)?;

    let hzx_t = enc.log_prob(&z)?.neg()?.mean()?;
    let batch = x.shape()[0];
    let mu_z = model.marginal_mean.gather_rows(&vec![0; batch])?;
    let marginal = GaussianDiagUnit::new(mu_z)?;
    let hz_t = marginal.log_prob(&z)?.neg()?.mean()?;

    let logits = model.logits_on(&z)?;
    let hyz_t = Categorical::new(logits.clone())?
        .log_prob(labels)?
        .neg()?
        .mean()?;

    assemble(hzx_t, hz_t, hyz_t, sigma_neg_rho(rho), logits)
}

fn assemble(
    hzx_t: Tensor,
    hzy_t: Tensor,
    hyz_t: Tensor,
    gamma: f64,
    logits: Tensor,
) -> Result<LossOutput> {
    let rex_t = hzy_t.sub(&hzx_t)?;
    let total_t = rex_t.scale(gamma)?.add(&hyz_t)?;

    let hzx = check_finite("hzx", hzx_t.item())?;
    let hzy = check_finite("hzy", hzy_t.item())?;
    let hyz = check_finite("hyz", hyz_t.item())?;
    let rex = check_finite("rex", rex_t.item())?;
    let total = check_finite("total", total_t.item())?;

    Ok(LossOutput {
        total: total_t,
        breakdown: LossBreakdown {
            hzx,
            hzy,
            hyz,
            rex,
            gamma,
            total,
        },
        logits,
    })
}

fn check_labels(labels: &[usize], k: usize) -> Result<()> {
    for &y in labels {
        if y >= k {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: k,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    fn spec(input: usize, hidden: &[usize], d: usize) -> EncoderSpec {
        EncoderSpec {
            input_shape: vec![input],
            hidden: hidden.to_vec(),
            latent_dim: d,
        }
    }

    fn small_model() -> CebModel {
        CebModel::new(&spec(3, &[6], 4), 2, ClassifierKind::Linear, 11).unwrap()
    }

    #[test]
    fn rex_vanishes_when_means_agree_and_noise_is_zero() {
        let model = small_model();
        // encode some x, then copy f(x) into the mu table rows so f(x) = mu_y.
        let x = Tensor::from_vec(&[1, 3], vec![0.4, -0.2, 1.0]).unwrap();
        let f = model.encode_mean(&x).unwrap();
        let mut m = model;
        let mut table = vec![0.0; 2 * 4];
        table[0..4].copy_from_slice(f.data());
        table[4..8].copy_from_slice(f.data());
        m.backward_means = Tensor::param(&[2, 4], table).unwrap();

        let eps = Tensor::zeros(&[1, 4]);
        let out = ceb_loss_with_noise(&m, &x, &[0], 3.0, &eps).unwrap();
        assert!(out.breakdown.rex.abs() < 1e-12, "rex {}", out.breakdown.rex);
    }

    #[test]
    fn rex_is_half_squared_distance_at_zero_noise() {
        let model = small_model();
        let x = Tensor::from_vec(&[1, 3], vec![0.4, -0.2, 1.0]).unwrap();
        let f = model.encode_mean(&x).unwrap();
        // mu stays zero, so v = f(x) and rex must be ||v||^2 / 2.
        let half_v2 = 0.5 * f.data().iter().map(|v| v * v).sum::<f64>();
        let eps = Tensor::zeros(&[1, 4]);
        let out = ceb_loss_with_noise(&model, &x, &[0], 3.0, &eps).unwrap();
        assert!(
            (out.breakdown.rex - half_v2).abs() < 1e-12,
            "rex {} vs {half_v2}",
            out.breakdown.rex
        );
    }

    #[test]
    fn rex_expectation_matches_analytic_kl() {
        // E over noise of rex is 0.5 ||f - mu||^2; estimate with 10^5 draws.
        let model = small_model();
        let n = 100_000;
        let x_row = [0.4, -0.2, 1.0];
        let mut xs = Vec::with_capacity(n * 3);
        for _ in 0..n {
            xs.extend_from_slice(&x_row);
        }
        let x = Tensor::from_vec(&[n, 3], xs).unwrap();
        let f = model.encode_mean(&x).unwrap();
        let half_v2 = 0.5 * f.data()[0..4].iter().map(|v| v * v).sum::<f64>();

        let out = ceb_loss(&model, &x, &vec![0; n], 3.0, &mut seeds::rng(5, "mc")).unwrap();
        let rel = (out.breakdown.rex - half_v2).abs() / half_v2;
        assert!(
            rel < 0.01,
            "mc rex {} vs analytic {half_v2}",
            out.breakdown.rex
        );
    }

    #[test]
    fn breakdown_identities_hold_exactly() {
        let model = small_model();
        let x = Tensor::from_vec(&[2, 3], vec![0.4, -0.2, 1.0, -0.3, 0.8, 0.1]).unwrap();
        let out = ceb_loss(&model, &x, &[0, 1], 2.0, &mut seeds::rng(3, "t")).unwrap();
        let b = out.breakdown;
        assert_eq!(b.rex, b.hzy - b.hzx);
        assert_eq!(b.total, b.gamma * b.rex + b.hyz);
        assert_eq!(b.total, out.total.item());
        assert_eq!(b.gamma, rho_to_gamma(2.0));
    }

    #[test]
    fn label_out_of_range_is_reported() {
        let model = small_model();
        let x = Tensor::zeros(&[1, 3]);
        let err = ceb_loss(&model, &x, &[2], 1.0, &mut seeds::rng(0, "t")).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 2, .. }));
    }

    #[test]
    fn nonfinite_loss_names_the_offending_term() {
        let mut model = small_model();
        model.backward_means = Tensor::param(&[2, 4], vec![f64::INFINITY; 8]).unwrap();
        let x = Tensor::from_vec(&[1, 3], vec![0.1, 0.2, 0.3]).unwrap();
        let err = ceb_loss(&model, &x, &[0], 1.0, &mut seeds::rng(0, "t")).unwrap_err();
        match err {
            Error::NonFiniteLoss { term, .. } => assert_eq!(term, "hzy"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn vib_rate_is_zero_when_marginal_tracks_the_encoder() {
        // With q(z) pinned to e(z|x) pointwise (same mean), the rate term is 0.
        let mut model = small_model();
        let x = Tensor::from_vec(&[1, 3], vec![0.4, -0.2, 1.0]).unwrap();
        let f = model.encode_mean(&x).unwrap();
        model.marginal_mean = Tensor::param(&[1, 4], f.data().to_vec()).unwrap();
        let out = vib_loss(&model, &x, &[0], 1.5, &mut seeds::rng(4, "vib")).unwrap();
        assert!(out.breakdown.rex.abs() < 1e-12);
        assert_eq!(out.breakdown.gamma, sigma_neg_rho(1.5));
    }

    #[test]
    fn vib_equals_ceb_on_a_single_class_when_marginals_match() {
        // One-class data: q(z) = b(z|y=0) makes the two rates identical.
        let mut model = small_model();
        let mu = vec![0.3, -0.6, 0.2, 0.9];
        let mut table = vec![0.0; 8];
        table[0..4].copy_from_slice(&mu);
        model.backward_means = Tensor::param(&[2, 4], table).unwrap();
        model.marginal_mean = Tensor::param(&[1, 4], mu).unwrap();

        let x =
            Tensor::from_vec(&[3, 3], vec![0.4, -0.2, 1.0, 0.0, 0.1, -0.5, 0.7, 0.7, 0.7]).unwrap();
        let eps = Tensor::from_vec(&[3, 4], vec![0.2; 12]).unwrap();
        let ceb = ceb_loss_with_noise(&model, &x, &[0, 0, 0], 2.0, &eps).unwrap();
        let vib = vib_loss_with_noise(&model, &x, &[0, 0, 0], 2.0, &eps).unwrap();
        assert!((ceb.breakdown.rex - vib.breakdown.rex).abs() < 1e-12);
    }

    #[test]
    fn consistent_logits_match_softmax_closed_form() {
        // K=2, ||z-mu_0||^2 = 1, ||z-mu_1||^2 = 3, uniform prior:
        // p(0) = sigma(1) ~ 0.7311.
        let mut model = small_model();
        // place mu_0 and mu_1 so that z=0 has the required distances
        let mut table = vec![0.0; 8];
        table[0] = 1.0; // ||0 - e_0||^2 = 1
        table[4] = 3.0f64.sqrt(); // ||0 - sqrt(3) e_0||^2 = 3
        model.backward_means = Tensor::param(&[2, 4], table).unwrap();

        let z = Tensor::zeros(&[1, 4]);
        let logits = model.consistent_logits(&z, &[0.5, 0.5]).unwrap();
        let c = Categorical::new(logits).unwrap();
        let p0 = c.log_prob(&[0]).unwrap().data()[0].exp();
        let sigma1 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((p0 - sigma1).abs() < 1e-12, "p0 {p0} vs {sigma1}");
    }

    #[test]
    fn consistent_classifier_is_symmetric_at_the_midpoint() {
        // mu_0 = -mu_1, z = 0, uniform prior: both probabilities are 1/2.
        let mut model = small_model();
        let mut table = vec![0.0; 8];
        table[0..4].copy_from_slice(&[0.7, -0.3, 0.5, 0.1]);
        table[4..8].copy_from_slice(&[-0.7, 0.3, -0.5, -0.1]);
        model.backward_means = Tensor::param(&[2, 4], table).unwrap();
        let logits = model
            .consistent_logits(&Tensor::zeros(&[1, 4]), &[0.5, 0.5])
            .unwrap();
        let c = Categorical::new(logits).unwrap();
        let p0 = c.log_prob(&[0]).unwrap().data()[0].exp();
        assert!((p0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn consistent_argmax_is_nearest_mean_under_uniform_prior() {
        let mut model = small_model();
        let mut table = vec![0.0; 8];
        table[0..4].copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        table[4..8].copy_from_slice(&[0.0, 2.0, 0.0, 0.0]);
        model.backward_means = Tensor::param(&[2, 4], table).unwrap();

        let z = Tensor::from_vec(&[2, 4], vec![0.9, 0.1, 0.0, 0.0, 0.1, 1.8, 0.0, 0.0]).unwrap();
        let logits = model.consistent_logits(&z, &[0.5, 0.5]).unwrap();
        assert_eq!(Categorical::new(logits).unwrap().predict(), vec![0, 1]);
    }

    #[test]
    fn consistent_argmax_survives_constant_logit_shifts() {
        let mut model = small_model();
        let mut table = vec![0.0; 8];
        table[0..4].copy_from_slice(&[1.0, -0.2, 0.4, 0.0]);
        table[4..8].copy_from_slice(&[-0.5, 0.9, 0.0, 0.3]);
        model.backward_means = Tensor::param(&[2, 4], table).unwrap();
        let z = Tensor::from_vec(
            &[3, 4],
            vec![
                0.9, 0.1, 0.2, 0.0, //
                -0.4, 0.8, 0.1, 0.2, //
                0.2, 0.2, 0.2, 0.2,
            ],
        )
        .unwrap();
        let logits = model.consistent_logits(&z, &[0.5, 0.5]).unwrap();
        let base = Categorical::new(logits.clone()).unwrap().predict();
        for shift in [-7.3, 0.01, 42.0] {
            let shifted = logits.add_scalar(shift).unwrap();
            assert_eq!(Categorical::new(shifted).unwrap().predict(), base);
        }
    }

    #[test]
    fn zero_prior_entries_give_minus_infinity_logits() {
        let model = small_model();
        let logits = model
            .consistent_logits(&Tensor::zeros(&[1, 4]), &[1.0, 0.0])
            .unwrap();
        assert_eq!(logits.data()[1], f64::NEG_INFINITY);
        assert!(logits.data()[0].is_finite());
    }

    #[test]
    fn invalid_prior_is_rejected() {
        let model = small_model();
        assert!(model
            .consistent_logits(&Tensor::zeros(&[1, 4]), &[0.7, 0.7])
            .is_err());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let model = small_model();
        let x = Tensor::from_vec(&[2, 3], vec![0.3, 0.1, -0.2, 0.9, -0.4, 0.5]).unwrap();
        let a = model.eval_logits(&x).unwrap();
        let b = model.eval_logits(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn eq9_equivalence_of_the_two_rate_forms() {
        // hzy - hzx from log densities equals 0.5 (f-mu).(f-mu+2eps)
        // for random f, mu, eps.
        let mut rng = seeds::rng(21, "eq9");
        for _ in 0..200 {
            let d = 6;
            let f: Vec<f64> = (0..d)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mu: Vec<f64> = (0..d)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let eps: Vec<f64> = (0..d)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();

            let ft = Tensor::from_vec(&[1, d], f.clone()).unwrap();
            let mt = Tensor::from_vec(&[1, d], mu.clone()).unwrap();
            let et = Tensor::from_vec(&[1, d], eps.clone()).unwrap();
            let enc = GaussianDiagUnit::new(ft).unwrap();
            let z = enc.sample_with_noise(&et).unwrap();
            let bwd = GaussianDiagUnit::new(mt).unwrap();
            let log_form =
                enc.log_prob(&z).unwrap().data()[0] - bwd.log_prob(&z).unwrap().data()[0];

            let quad_form: f64 = (0..d)
                .map(|i| {
                    let v = f[i] - mu[i];
                    0.5 * v * (v + 2.0 * eps[i])
                })
                .sum();
            assert!(
                (log_form - quad_form).abs() < 1e-9,
                "log {log_form} vs quadratic {quad_form}"
            );
        }
    }

    #[test]
    fn backward_means_fit_to_class_averages_of_the_encoding() {
        // Freeze everything but the mu table, minimize the noise-free loss,
        // and check each row lands on the class mean of f(x).
        let model = small_model();
        let n = 8;
        let mut rng = seeds::rng(9, "mu-fit");
        let xs: Vec<f64> = (0..n * 3)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Tensor::from_vec(&[n, 3], xs).unwrap();
        let f = model.encode_mean(&x).unwrap();

        // class averages of f(x)
        let d = 4;
        let mut target = vec![0.0; 2 * d];
        let mut counts = [0usize; 2];
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..d {
                target[labels[i] * d + j] += f.data()[i * d + j];
            }
        }
        for y in 0..2 {
            for j in 0..d {
                target[y * d + j] /= counts[y] as f64;
            }
        }

        // plain gradient descent on the mu table only
        let mut m = model;
        let eps = Tensor::zeros(&[n, 4]);
        for _ in 0..400 {
            let out = ceb_loss_with_noise(&m, &x, &labels, 0.0, &eps).unwrap();
            m.zero_grad();
            out.total.backward().unwrap();
            let g = m.backward_means.grad().unwrap();
            let new: Vec<f64> = m
                .backward_means
                .data()
                .iter()
                .zip(&g)
                .map(|(w, gi)| w - 1.0 * gi)
                .collect();
            m.backward_means = Tensor::param(&[2, 4], new).unwrap();
        }
        for (got, want) in m.backward_means.data().iter().zip(&target) {
            assert!((got - want).abs() < 1e-6, "mu {got} vs class mean {want}");
        }
    }
}
