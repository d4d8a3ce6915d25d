//! Trains a 16x16 image GAN on a few dozen synthetic blobs with ADA and
//! Freeze-D turned on, then prints how p and KID moved.

use scarcegan::data::{toy, Dataset};
use scarcegan::training::{TrainConfig, Trainer};

fn main() -> scarcegan::Result<()> {
    let mut cfg = TrainConfig::toy_image(16);
    cfg.channel_base = 4;
    cfg.minibatch = Some(8);
    cfg.ada = true;
    cfg.ada_interval = 2;
    cfg.freeze_d = 3;
    cfg.metric_fakes = 64;
    let data = Dataset::new(toy::blobs(48, 16, 3, 0), true)?;
    let mut t = Trainer::new(cfg, data)?;
    println!("D layers {}, first 3 frozen", t.model().layer_order().len());
    for round in 0..6 {
        for _ in 0..10 {
            t.train_step()?;
        }
        let (kid, _) = t.evaluate()?;
        println!("step {:3}  p {:.4}  kid {:.5}", (round + 1) * 10, t.pipeline().p, kid);
    }
    Ok(())
}
