//! Conditional Wasserstein losses with gradient penalty.

use tch::{Kind, Tensor};

use super::TrainError;
use crate::conditioning::make_latent;
use crate::progan::Discriminator;

/// Anything that scores a `[N, 1, e, e, e]` volume batch given `[N, d]` labels.
pub trait Critic {
    fn score(&self, volumes: &Tensor, labels: &Tensor) -> Result<Tensor, TrainError>;
}

/// The discriminator at a fixed fade-in weight.
pub struct PhasedCritic<'a> {
    pub discriminator: &'a Discriminator,
    pub alpha: f64,
}

impl Critic for PhasedCritic<'_> {
    fn score(&self, volumes: &Tensor, labels: &Tensor) -> Result<Tensor, TrainError> {
        let input = make_latent(volumes, labels)?;
        Ok(self.discriminator.forward(&input, self.alpha)?)
    }
}

/// `D(y, c) = <a, y> + <b, c>`; used for closed-form checks.
pub struct LinearCritic {
    pub a: Tensor,
    pub b: Option<Tensor>,
}

impl Critic for LinearCritic {
    fn score(&self, volumes: &Tensor, labels: &Tensor) -> Result<Tensor, TrainError> {
        let n = volumes.size()[0];
        let mut s = (volumes.view([n, -1]) * self.a.view([1, -1])).sum_dim_intlist(1, false, volumes.kind());
        if let Some(b) = &self.b {
            s = s + (labels.to_kind(volumes.kind()) * b.view([1, -1])).sum_dim_intlist(1, false, volumes.kind());
        }
        Ok(s)
    }
}

/// A critic that returns the same value for every input.
pub struct ConstantCritic(pub f64);

impl Critic for ConstantCritic {
    fn score(&self, volumes: &Tensor, _labels: &Tensor) -> Result<Tensor, TrainError> {
        let n = volumes.size()[0];
        // keeps the input in the graph so gradients exist (and are zero)
        Ok(volumes.view([n, -1]).sum_dim_intlist(1, false, volumes.kind()) * 0.0 + self.0)
    }
}

fn check_pair(real: &Tensor, fake: &Tensor) -> Result<(), TrainError> {
    if real.size() != fake.size() {
        return Err(TrainError::Shape(format!("real {:?} vs fake {:?}", real.size(), fake.size())));
    }
    Ok(())
}

/// Mean over the batch of `(||grad_x D(x, c)||_2 - 1)^2` on the interpolants
/// `t·real + (1-t)·fake`, `t` one value per sample. The returned tensor keeps
/// its graph so it can be differentiated again.
pub fn gradient_penalty(critic: &dyn Critic, real: &Tensor, fake: &Tensor, labels: &Tensor, t: &Tensor) -> Result<Tensor, TrainError> {
    check_pair(real, fake)?;
    let n = real.size()[0];
    tch::with_grad(|| {
        let t = t.to_kind(real.kind()).view([n, 1, 1, 1, 1]);
        let rest = t.neg() + 1.0;
        let mixed = (real * &t + fake * &rest).detach().set_requires_grad(true);
        let score = critic.score(&mixed, labels)?;
        if !score.requires_grad() {
            return Err(TrainError::Shape("critic score does not depend on its input".into()));
        }
        let grads = Tensor::f_run_backward(&[score.sum(real.kind())], &[&mixed], true, true)?;
        let norms = grads[0].flatten(1, -1).norm_scalaropt_dim(2.0, [1i64].as_slice(), false);
        Ok((norms - 1.0).square().mean(real.kind()))
    })
}

/// Discriminator loss terms; `total` carries the graph.
pub struct DiscriminatorLoss {
    pub total: Tensor,
    pub real_score: f64,
    pub fake_score: f64,
    pub penalty: f64,
}

/// `E[D(fake, c)] - E[D(real, c)] + gp_weight · GP`.
pub fn discriminator_loss(
    critic: &dyn Critic,
    real: &Tensor,
    fake: &Tensor,
    labels: &Tensor,
    t: &Tensor,
    gp_weight: f64,
) -> Result<DiscriminatorLoss, TrainError> {
    check_pair(real, fake)?;
    let fake = fake.detach();
    let real_score = critic.score(real, labels)?.mean(Kind::Double);
    let fake_score = critic.score(&fake, labels)?.mean(Kind::Double);
    let penalty = gradient_penalty(critic, real, &fake, labels, t)?.to_kind(Kind::Double);
    let total = &fake_score - &real_score + &penalty * gp_weight;
    Ok(DiscriminatorLoss {
        real_score: real_score.double_value(&[]),
        fake_score: fake_score.double_value(&[]),
        penalty: penalty.double_value(&[]),
        total,
    })
}

/// `-E[D(fake, c)]`.
pub fn generator_loss(critic: &dyn Critic, fake: &Tensor, labels: &Tensor) -> Result<Tensor, TrainError> {
    Ok(-critic.score(fake, labels)?.mean(Kind::Double))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::Device;

    fn opts() -> (Kind, Device) {
        (Kind::Double, Device::Cpu)
    }

    #[test]
    fn linear_critic_penalty_closed_form() {
        let real = Tensor::randn([3, 1, 4, 4, 4], opts());
        let fake = Tensor::randn([3, 1, 4, 4, 4], opts());
        let labels = Tensor::zeros([3, 0], opts());
        let t = Tensor::rand([3], opts());
        for norm in [1.0, 3.0, 0.5] {
            let a = Tensor::randn([64], opts());
            let a = &a / a.norm() * norm;
            let gp = gradient_penalty(&LinearCritic { a, b: None }, &real, &fake, &labels, &t).unwrap();
            let expected = (norm - 1.0) * (norm - 1.0);
            assert!((gp.double_value(&[]) - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_critic_loss_is_the_penalty_weight() {
        let real = Tensor::randn([2, 1, 4, 4, 4], opts());
        let fake = Tensor::randn([2, 1, 4, 4, 4], opts());
        let labels = Tensor::zeros([2, 0], opts());
        let t = Tensor::rand([2], opts());
        let l = discriminator_loss(&ConstantCritic(0.0), &real, &fake, &labels, &t, 10.0).unwrap();
        assert_eq!(l.total.double_value(&[]), 10.0);
        let g = generator_loss(&ConstantCritic(2.5), &fake, &labels).unwrap();
        assert_eq!(g.double_value(&[]), -2.5);
    }

    #[test]
    fn penalty_is_defined_inside_no_grad() {
        let real = Tensor::randn([2, 1, 4, 4, 4], opts());
        let fake = Tensor::randn([2, 1, 4, 4, 4], opts());
        let labels = Tensor::zeros([2, 0], opts());
        let t = Tensor::rand([2], opts());
        let a = Tensor::ones([64], opts()) / 4.0;
        let gp = tch::no_grad(|| gradient_penalty(&LinearCritic { a, b: None }, &real, &fake, &labels, &t)).unwrap();
        assert!((gp.double_value(&[]) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mismatched_batches_are_rejected() {
        let real = Tensor::zeros([2, 1, 4, 4, 4], opts());
        let fake = Tensor::zeros([3, 1, 4, 4, 4], opts());
        let labels = Tensor::zeros([2, 0], opts());
        let t = Tensor::rand([2], opts());
        assert!(matches!(
            gradient_penalty(&ConstantCritic(0.0), &real, &fake, &labels, &t),
            Err(TrainError::Shape(_))
        ));
    }
}
