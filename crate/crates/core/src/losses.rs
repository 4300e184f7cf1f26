//! Loss terms and estimates. Every batch reduction is a mean, and every loss
//! returns its gradient with respect to the tensors it consumes so callers
//! can seed the adjoint passes directly.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::diffengine::{self, PenaltyGrad};
use crate::error::{Error, Result};
use crate::netspec::{log_softmax, Network, Role};
use crate::tensor::{Real, Tensor};

/// The two adversarial critics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Critic {
    /// `D`, scoring images.
    X,
    /// `D_fc1`, scoring encoder fc1 codes.
    Fc1,
}

impl Critic {
    pub const ALL: [Critic; 2] = [Critic::X, Critic::Fc1];

    pub fn as_str(self) -> &'static str {
        self.role().as_str()
    }

    pub fn role(self) -> Role {
        match self {
            Critic::X => Role::CriticX,
            Critic::Fc1 => Role::CriticFc1,
        }
    }
}

impl fmt::Display for Critic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Critic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Critic::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown critic `{s}`")))
    }
}

/// Adversarial objective family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossForm {
    /// Unbounded critic scores (WGAN-GP).
    #[default]
    Wasserstein,
    /// Probability-valued discriminators with log losses.
    Log,
}

impl LossForm {
    pub fn as_str(self) -> &'static str {
        match self {
            LossForm::Wasserstein => "wasserstein",
            LossForm::Log => "log",
        }
    }
}

impl FromStr for LossForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wasserstein" => Ok(LossForm::Wasserstein),
            "log" => Ok(LossForm::Log),
            _ => Err(Error::Config(format!("unknown loss form `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    /// Weights of `(L_x, L_h, L_gan)` in the generator objective.
    pub beta: [f64; 3],
    /// Per-critic adversarial weight.
    pub lambda: BTreeMap<Critic, f64>,
    /// Per-encoder-tap reconstruction weight.
    pub alpha: BTreeMap<String, f64>,
    pub gp_coeff: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta: [1.0, 0.1, 2.0],
            lambda: Critic::ALL.into_iter().map(|c| (c, 1.0)).collect(),
            alpha: BTreeMap::from([("fc1".to_string(), 1.0)]),
            gp_coeff: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .beta
            .iter()
            .chain(self.lambda.values())
            .chain(self.alpha.values())
            .chain(std::iter::once(&self.gp_coeff));
        if let Some(bad) = all.clone().find(|w| !w.is_finite()) {
            return Err(Error::Config(format!("non-finite loss weight {bad}")));
        }
        if self.gp_coeff < 0.0 {
            return Err(Error::Config(format!("gp_coeff {} must be ≥ 0", self.gp_coeff)));
        }
        Ok(())
    }

    pub fn lambda(&self, c: Critic) -> f64 {
        self.lambda.get(&c).copied().unwrap_or(0.0)
    }
}

/// A scalar loss and its gradient with respect to one input tensor.
#[derive(Clone, Debug)]
pub struct Loss<T = f32> {
    pub value: T,
    pub grad: Tensor<T>,
}

fn ensure_same<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn batch_mean_sq_dist<T: Real>(fake: &Tensor<T>, real: &Tensor<T>) -> (T, Tensor<T>) {
    let n = T::lit(fake.batch().max(1) as f64);
    let mut grad = Tensor::zeros(fake.shape());
    let mut total = T::zero();
    for ((g, &f), &r) in grad.data_mut().iter_mut().zip(fake.data()).zip(real.data()) {
        let d = f - r;
        total += d * d;
        *g = T::lit(2.0) * d / n;
    }
    (total / n, grad)
}

/// `mean_n ‖x̂_n − x_n‖²`, gradient with respect to `x̂`.
pub fn image_loss<T: Real>(x_hat: &Tensor<T>, x: &Tensor<T>) -> Result<Loss<T>> {
    ensure_same(x_hat, x, "image loss")?;
    let (value, grad) = batch_mean_sq_dist(x_hat, x);
    Ok(Loss { value, grad })
}

/// `Σ_j α_j · mean_n ‖ĥ^j_n − h^j_n‖²` over encoder taps. Taps with zero
/// weight are skipped; gradients are with respect to the fake activations.
pub fn perceptual_loss<T: Real>(
    taps_fake: &BTreeMap<String, Tensor<T>>,
    taps_real: &BTreeMap<String, Tensor<T>>,
    alpha: &BTreeMap<String, f64>,
) -> Result<(T, BTreeMap<String, Tensor<T>>)> {
    let mut value = T::zero();
    let mut grads = BTreeMap::new();
    for (tap, &a) in alpha.iter().filter(|(_, &a)| a != 0.0) {
        let (Some(f), Some(r)) = (taps_fake.get(tap), taps_real.get(tap)) else {
            return Err(Error::Config(format!("missing tap `{tap}`")));
        };
        ensure_same(f, r, tap)?;
        let (v, mut g) = batch_mean_sq_dist(f, r);
        let a = T::lit(a);
        value += a * v;
        g.scale(a);
        grads.insert(tap.clone(), g);
    }
    Ok((value, grads))
}

/// Generator-side adversarial loss over the critics present in `scores`
/// (each `[batch, 1]`, computed on fakes). Wasserstein form:
/// `−Σ_j λ_j · mean(score_j)`; log form: `−Σ_j λ_j · mean(log D_j)`.
pub fn adversarial_generator_loss<T: Real>(
    scores: &BTreeMap<Critic, Tensor<T>>,
    lambda: &BTreeMap<Critic, f64>,
    form: LossForm,
) -> Result<(T, BTreeMap<Critic, Tensor<T>>)> {
    let mut value = T::zero();
    let mut grads = BTreeMap::new();
    for (&c, &l) in lambda.iter().filter(|(_, &l)| l != 0.0) {
        let Some(s) = scores.get(&c) else {
            continue;
        };
        let l = T::lit(l);
        let n = T::lit(s.len().max(1) as f64);
        let mut g = Tensor::zeros(s.shape());
        let mut mean = T::zero();
        for (gv, &sv) in g.data_mut().iter_mut().zip(s.data()) {
            match form {
                LossForm::Wasserstein => {
                    mean += sv;
                    *gv = -l / n;
                }
                LossForm::Log => {
                    if !(sv > T::zero()) {
                        return Err(Error::Numeric(format!(
                            "log-form adversarial loss needs positive {c} output, got {sv:?}"
                        )));
                    }
                    mean += sv.ln();
                    *gv = -l / (n * sv);
                }
            }
        }
        value -= l * mean / n;
        grads.insert(c, g);
    }
    Ok((value, grads))
}

/// `β₁·L_x + β₂·L_h + β₃·L_gan`
pub fn generator_total(lx: f64, lh: f64, lgan: f64, w: &LossWeights) -> f64 {
    w.beta[0] * lx + w.beta[1] * lh + w.beta[2] * lgan
}

/// Per-sample critic outputs on a real and a fake batch.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticScores<T = f32> {
    pub real: Vec<T>,
    pub fake: Vec<T>,
}

impl<T: Real> CriticScores<T> {
    pub fn new(real: &Tensor<T>, fake: &Tensor<T>) -> Result<Self> {
        let s = Self {
            real: real.data().to_vec(),
            fake: fake.data().to_vec(),
        };
        if s.real.len() != s.fake.len() {
            return Err(Error::Shape(format!(
                "{} real scores vs {} fake scores",
                s.real.len(),
                s.fake.len()
            )));
        }
        Ok(s)
    }
}

fn mean<T: Real>(v: &[T]) -> T {
    v.iter().copied().sum::<T>() / T::lit(v.len() as f64)
}

/// `mean(real) − mean(fake)`
pub fn wasserstein_estimate<T: Real>(s: &CriticScores<T>) -> Result<T> {
    if s.real.is_empty() || s.fake.is_empty() {
        return Err(Error::Shape("Wasserstein estimate of an empty batch".into()));
    }
    Ok(mean(&s.real) - mean(&s.fake))
}

/// Random interpolates `ε·real + (1 − ε)·fake` with one `ε ~ U[0, 1]` per sample.
pub fn interpolate<T: Real>(real: &Tensor<T>, fake: &Tensor<T>, rng: &mut impl Rng) -> Result<Tensor<T>> {
    ensure_same(real, fake, "interpolation")?;
    let mut u = fake.clone();
    for i in 0..real.batch() {
        let e = T::lit(rng.random::<f64>());
        for (uv, &rv) in u.sample_mut(i).iter_mut().zip(real.sample(i)) {
            *uv = e * rv + (T::one() - e) * *uv;
        }
    }
    Ok(u)
}

/// Gradient penalty on random interpolates of `real` and `fake`, with its
/// parameter gradient.
pub fn gradient_penalty<T: Real>(
    critic: &Network<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    gp_coeff: T,
    rng: &mut impl Rng,
) -> Result<PenaltyGrad<T>> {
    let u = interpolate(real, fake, rng)?;
    diffengine::gradient_penalty_grads(critic, &u, gp_coeff)
}

/// Critic objective (minimized) and its gradients with respect to the real
/// and fake score tensors. Wasserstein: `−(mean real − mean fake) + penalty`;
/// log: `mean(−log D(x) − log(1 − D(x̂)))`, penalty ignored.
pub fn critic_loss<T: Real>(
    real: &Tensor<T>,
    fake: &Tensor<T>,
    penalty: T,
    form: LossForm,
) -> Result<(T, Tensor<T>, Tensor<T>)> {
    let s = CriticScores::new(real, fake)?;
    let n = T::lit(s.real.len().max(1) as f64);
    match form {
        LossForm::Wasserstein => {
            let value = -wasserstein_estimate(&s)? + penalty;
            Ok((
                value,
                Tensor::full(real.shape(), -T::one() / n),
                Tensor::full(fake.shape(), T::one() / n),
            ))
        }
        LossForm::Log => {
            let in_unit = |v: &T| *v > T::zero() && *v < T::one();
            if !s.real.iter().chain(&s.fake).all(in_unit) {
                return Err(Error::Numeric(
                    "log-form critic loss needs outputs strictly inside (0, 1)".into(),
                ));
            }
            let value = s
                .real
                .iter()
                .zip(&s.fake)
                .map(|(&r, &f)| -r.ln() - (T::one() - f).ln())
                .sum::<T>()
                / n;
            Ok((
                value,
                real.map(|r| -T::one() / (n * r)),
                fake.map(|f| T::one() / (n * (T::one() - f))),
            ))
        }
    }
}

/// Mean negative log-softmax of the true class; gradient with respect to the logits.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[u8]) -> Result<Loss<T>> {
    let (n, k) = (logits.batch(), logits.sample_len());
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::Range(format!("label {bad} with {k} classes")));
    }
    let logp = log_softmax(&logits.clone().reshaped(&[n, k])?);
    let nt = T::lit(n as f64);
    let mut value = T::zero();
    let mut grad = Tensor::zeros(logits.shape());
    for (i, &l) in labels.iter().enumerate() {
        value -= logp.sample(i)[l as usize];
        for (j, (g, &lp)) in grad.sample_mut(i).iter_mut().zip(logp.sample(i)).enumerate() {
            let target = if j == l as usize { T::one() } else { T::zero() };
            *g = (lp.exp() - target) / nt;
        }
    }
    Ok(Loss { value: value / nt, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::netspec::{ArchitectureSpec, LayerSpec};

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn image_loss_values() {
        let x = t(&[1, 2], &[1.0, 1.0]);
        assert_eq!(image_loss(&x, &x).unwrap().value, 0.0);
        assert_eq!(image_loss(&t(&[1, 2], &[4.0, 5.0]), &x).unwrap().value, 25.0);
        let two = image_loss(&t(&[2, 2], &[4.0, 5.0, 0.0, 0.0]), &t(&[2, 2], &[1.0, 1.0, 0.0, 0.0])).unwrap();
        assert_eq!(two.value, 12.5);
        assert!(image_loss(&x, &t(&[1, 3], &[0.0; 3])).is_err());
    }

    #[test]
    fn perceptual_loss_values() {
        let alpha = BTreeMap::from([("fc1".to_string(), 1.0)]);
        let real = BTreeMap::from([("fc1".to_string(), t(&[1, 64], &[0.0; 64]))]);
        let fake = BTreeMap::from([("fc1".to_string(), t(&[1, 64], &[0.5; 64]))]);
        assert_eq!(perceptual_loss(&fake, &real, &alpha).unwrap().0, 16.0);
        assert_eq!(perceptual_loss(&real, &real, &alpha).unwrap().0, 0.0);
        let zero = BTreeMap::from([("fc1".to_string(), 0.0)]);
        assert_eq!(perceptual_loss(&fake, &real, &zero).unwrap().0, 0.0);
        let other = BTreeMap::from([("fc2".to_string(), 1.0)]);
        assert!(perceptual_loss(&fake, &real, &other).is_err());
    }

    #[test]
    fn adversarial_loss_values() {
        let lambda = BTreeMap::from([(Critic::X, 1.0), (Critic::Fc1, 1.0)]);
        let only_x = BTreeMap::from([(Critic::X, t(&[2, 1], &[2.0, 3.0]))]);
        let (v, g) = adversarial_generator_loss(&only_x, &lambda, LossForm::Wasserstein).unwrap();
        assert_eq!(v, -2.5);
        assert_eq!(g[&Critic::X].data(), &[-0.5, -0.5]);

        let both = BTreeMap::from([(Critic::X, t(&[1, 1], &[2.0])), (Critic::Fc1, t(&[1, 1], &[3.0]))]);
        assert_eq!(adversarial_generator_loss(&both, &lambda, LossForm::Wasserstein).unwrap().0, -5.0);

        let off = BTreeMap::from([(Critic::X, 0.0), (Critic::Fc1, 0.0)]);
        assert_eq!(adversarial_generator_loss(&both, &off, LossForm::Wasserstein).unwrap().0, 0.0);

        let probs = BTreeMap::from([(Critic::X, t(&[2, 1], &[0.5, 0.25]))]);
        let (v, _) = adversarial_generator_loss(&probs, &lambda, LossForm::Log).unwrap();
        assert!((v + (0.5f64.ln() + 0.25f64.ln()) / 2.0).abs() < 1e-12);
        let neg = BTreeMap::from([(Critic::X, t(&[1, 1], &[-0.1]))]);
        assert!(matches!(
            adversarial_generator_loss(&neg, &lambda, LossForm::Log),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn generator_total_values() {
        let w = LossWeights::default();
        assert!((generator_total(1.0, 10.0, 0.5, &w) - 3.0).abs() < 1e-12);
        let x_only = LossWeights {
            beta: [0.7, 0.0, 0.0],
            ..w.clone()
        };
        assert_eq!(generator_total(2.0, 5.0, 9.0, &x_only), 1.4);
        let none = LossWeights { beta: [0.0; 3], ..w };
        assert_eq!(generator_total(2.0, 5.0, 9.0, &none), 0.0);
    }

    #[test]
    fn wasserstein_estimate_values() {
        let s = CriticScores {
            real: vec![1.0, 1.0],
            fake: vec![-1.0, 0.0],
        };
        assert_eq!(wasserstein_estimate(&s).unwrap(), 1.5);
        let swapped = CriticScores {
            real: s.fake.clone(),
            fake: s.real.clone(),
        };
        assert_eq!(wasserstein_estimate(&swapped).unwrap(), -1.5);
        let same = CriticScores {
            real: vec![0.3],
            fake: vec![0.3],
        };
        assert_eq!(wasserstein_estimate(&same).unwrap(), 0.0);
        let empty = CriticScores::<f64> {
            real: vec![],
            fake: vec![],
        };
        assert!(wasserstein_estimate(&empty).is_err());
    }

    #[test]
    fn penalty_on_interpolates_of_linear_critic() {
        let spec = ArchitectureSpec::new("sum", &[4], vec![LayerSpec::fc("fc", 4, 1).linear_output()]).unwrap();
        let critic = Network::from_params(spec, vec![t(&[1, 4], &[2.0; 4]), t(&[1], &[0.0])], 0).unwrap();
        let real = t(&[3, 4], &[1.0; 12]);
        let fake = t(&[3, 4], &[-1.0; 12]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = gradient_penalty(&critic, &real, &fake, 10.0, &mut rng).unwrap();
        assert!((p.value - 90.0).abs() < 1e-12);
        assert_eq!(gradient_penalty(&critic, &real, &fake, 0.0, &mut rng).unwrap().value, 0.0);
        assert!(gradient_penalty(&critic, &real, &t(&[2, 4], &[0.0; 8]), 10.0, &mut rng).is_err());
    }

    #[test]
    fn interpolates_lie_between_endpoints() {
        let real = t(&[4, 2], &[1.0; 8]);
        let fake = t(&[4, 2], &[0.0; 8]);
        let u = interpolate(&real, &fake, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for i in 0..4 {
            let s = u.sample(i);
            assert!((0.0..=1.0).contains(&s[0]));
            assert_eq!(s[0], s[1], "one ε per sample");
        }
    }

    #[test]
    fn critic_loss_values() {
        let z = t(&[2, 1], &[0.5, -0.5]);
        assert_eq!(critic_loss(&z, &z, 0.0, LossForm::Wasserstein).unwrap().0, 0.0);
        let (v, dr, df) = critic_loss(&t(&[1, 1], &[1.0]), &t(&[1, 1], &[0.0]), 90.0, LossForm::Wasserstein).unwrap();
        assert_eq!(v, 89.0);
        assert_eq!((dr.data()[0], df.data()[0]), (-1.0, 1.0));

        let mut last = f64::INFINITY;
        for delta in [1e-1, 1e-3, 1e-6, 1e-9] {
            let (v, _, _) = critic_loss(&t(&[1, 1], &[1.0 - delta]), &t(&[1, 1], &[delta]), 0.0, LossForm::Log).unwrap();
            assert!(v < last && v >= 0.0);
            last = v;
        }
        assert!(last < 1e-8);
        assert!(critic_loss(&t(&[1, 1], &[2.0]), &t(&[1, 1], &[0.5]), 0.0, LossForm::Log).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        let uniform = t(&[1, 10], &[0.0; 10]);
        let ce = cross_entropy(&uniform, &[3]).unwrap();
        assert!((ce.value - 10f64.ln()).abs() < 1e-12);

        let mut confident = vec![0.0; 10];
        confident[7] = 100.0;
        assert!(cross_entropy(&t(&[1, 10], &confident), &[7]).unwrap().value < 1e-12);

        let mut both = vec![0.0; 20];
        both[10 + 2] = 1000.0;
        let ce2 = cross_entropy(&t(&[2, 10], &both), &[5, 2]).unwrap();
        assert!((ce2.value - 10f64.ln() / 2.0).abs() < 1e-12);

        assert!(matches!(cross_entropy(&uniform, &[10]), Err(Error::Range(_))));
    }
}
