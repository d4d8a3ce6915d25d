use scarcegan_autodiff::{Array, Tensor};

use super::{dense, DiscriminatorLayer, Init, NetConfig, LRELU_SLOPE};
use crate::error::Result;
use crate::params::{Bound, ParamSet};

fn fc(p: &mut ParamSet, init: &mut Init<'_>, name: &str, fan_in: usize, fan_out: usize) {
    p.insert(format!("{name}.weight"), init.normal(&[fan_in, fan_out]));
    p.insert(format!("{name}.bias"), Array::zeros(&[fan_out]));
}

fn widths(cfg: &NetConfig, input: usize, output: usize) -> [(usize, usize); 3] {
    [(input, cfg.hidden), (cfg.hidden, cfg.hidden), (cfg.hidden, output)]
}

pub(super) fn build_synthesis(cfg: &NetConfig, init: &mut Init<'_>, g: &mut ParamSet) {
    for (i, (a, b)) in widths(cfg, cfg.w_dim, cfg.data_dim).into_iter().enumerate() {
        fc(g, init, &format!("synthesis.fc{i}"), a, b);
    }
}

pub(super) fn build_discriminator(cfg: &NetConfig, init: &mut Init<'_>, d: &mut ParamSet) -> Vec<DiscriminatorLayer> {
    widths(cfg, cfg.data_dim, 1)
        .into_iter()
        .enumerate()
        .map(|(i, (a, b))| {
            let name = format!("d.fc{i}");
            fc(d, init, &name, a, b);
            DiscriminatorLayer {
                params: vec![format!("{name}.weight"), format!("{name}.bias")],
                name,
            }
        })
        .collect()
}

fn perceptron(p: &Bound, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let gain = std::f64::consts::SQRT_2;
    let h = dense(x, p, &format!("{prefix}.fc0"), gain)?.leaky_relu(LRELU_SLOPE)?;
    let h = dense(&h, p, &format!("{prefix}.fc1"), gain)?.leaky_relu(LRELU_SLOPE)?;
    dense(&h, p, &format!("{prefix}.fc2"), 1.0)
}

pub(super) fn synthesize(_cfg: &NetConfig, p: &Bound, w: &Tensor) -> Result<Tensor> {
    Ok(perceptron(p, "synthesis", w)?.tanh()?)
}

pub(super) fn discriminate(_cfg: &NetConfig, p: &Bound, x: &Tensor) -> Result<Tensor> {
    perceptron(p, "d", x)
}
