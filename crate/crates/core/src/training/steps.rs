//! Loss and gradient computation for one discriminator or generator step.

use scarcegan_autodiff::{backward, Array, Tape, Tensor};

use crate::augment::AugPipeline;
use crate::error::Result;
use crate::networks::{discriminator_forward, generator_forward, FreezeMask, GanModel};

/// R1 penalty settings for a discriminator step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct R1Settings {
    pub gamma: f64,
    /// The penalty is multiplied by this to make up for applying it only
    /// once per `interval` steps.
    pub interval: usize,
    /// Penalize gradients at un-augmented reals instead.
    pub on_clean: bool,
}

/// Whether the lazy penalty applies at discriminator step `step`.
pub fn r1_due(step: u64, interval: usize) -> bool {
    interval > 0 && step.is_multiple_of(interval as u64)
}

#[derive(Clone, Debug)]
pub struct DStepOutput {
    /// Logistic part only: `mean softplus(−D(real)) + mean softplus(D(fake))`.
    pub loss: f64,
    /// Unscaled `(γ/2)·mean‖∇ₓD‖²`, or 0 when not applied.
    pub r1: f64,
    /// Raw logits on the (augmented) reals.
    pub real_scores: Vec<f64>,
    /// Gradients of `loss + interval·r1` for every trainable parameter.
    pub grads: Vec<(String, Array)>,
}

#[derive(Clone, Debug)]
pub struct GStepOutput {
    pub loss: f64,
    pub grads: Vec<(String, Array)>,
}

fn collect(names: impl Iterator<Item = String>, grads: Vec<Tensor>) -> Vec<(String, Array)> {
    names.zip(grads).map(|(n, g)| (n, g.value().clone())).collect()
}

/// Per-sample squared gradient norm averaged over the batch, times `γ/2`.
pub fn r1_penalty(scores: &Tensor, x: &Tensor, gamma: f64) -> Result<Tensor> {
    let n = x.shape()[0].max(1) as f64;
    let g = backward(&scores.sum()?, &[x], true)?.remove(0);
    Ok(g.square()?.sum()?.scale(gamma / (2.0 * n))?)
}

/// Discriminator losses and gradients. Both batches pass through
/// `pipeline`; parameters in `mask` are constants and get no gradient.
pub fn d_grads(
    model: &GanModel,
    real: &Array,
    fake: &Array,
    pipeline: &mut AugPipeline,
    mask: &FreezeMask,
    r1: Option<R1Settings>,
) -> Result<DStepOutput> {
    let cfg = &model.config;
    let tape = Tape::new();
    let p = model.discriminator.bind(Some(&tape), |n| !mask.is_frozen(n));

    let real_aug = pipeline.augment(&Tensor::constant(real.clone()))?;
    let penalize_aug = r1.is_some_and(|s| !s.on_clean);
    let real_in = if penalize_aug {
        tape.leaf(real_aug.value().clone())
    } else {
        real_aug
    };
    let real_scores = discriminator_forward(cfg, &p, &real_in)?;
    let fake_aug = pipeline.augment(&Tensor::constant(fake.clone()))?;
    let fake_scores = discriminator_forward(cfg, &p, &fake_aug)?;
    let loss = real_scores
        .neg()?
        .softplus()?
        .mean()?
        .add(&fake_scores.softplus()?.mean()?)?;

    let mut total = loss.clone();
    let mut r1_value = 0.0;
    if let Some(s) = r1 {
        let pen = if s.on_clean {
            let x = tape.leaf(real.clone());
            let scores = discriminator_forward(cfg, &p, &x)?;
            r1_penalty(&scores, &x, s.gamma)?
        } else {
            r1_penalty(&real_scores, &real_in, s.gamma)?
        };
        r1_value = pen.item();
        total = total.add(&pen.scale(s.interval as f64)?)?;
    }

    let leaves: Vec<&Tensor> = p.leaves().iter().map(|(_, t)| t).collect();
    let grads = backward(&total, &leaves, false)?;
    Ok(DStepOutput {
        loss: loss.item(),
        r1: r1_value,
        real_scores: real_scores.data().to_vec(),
        grads: collect(p.leaves().iter().map(|(n, _)| n.clone()), grads),
    })
}

/// Generator loss `mean softplus(−D(aug(G(z))))` and its gradients with
/// respect to every generator parameter.
pub fn g_grads(model: &GanModel, z: &Array, pipeline: &mut AugPipeline) -> Result<GStepOutput> {
    let cfg = &model.config;
    let tape = Tape::new();
    let gp = model.generator.bind(Some(&tape), |_| true);
    let fake = generator_forward(cfg, &gp, &Tensor::constant(z.clone()))?;
    let fake_aug = pipeline.augment(&fake)?;
    let dp = model.discriminator.bind(None, |_| false);
    let scores = discriminator_forward(cfg, &dp, &fake_aug)?;
    let loss = scores.neg()?.softplus()?.mean()?;
    let leaves: Vec<&Tensor> = gp.leaves().iter().map(|(_, t)| t).collect();
    let grads = backward(&loss, &leaves, false)?;
    Ok(GStepOutput {
        loss: loss.item(),
        grads: collect(gp.leaves().iter().map(|(n, _)| n.clone()), grads),
    })
}

pub(crate) fn grads_finite(grads: &[(String, Array)]) -> bool {
    grads.iter().all(|(_, g)| g.all_finite())
}
