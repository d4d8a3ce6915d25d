//! Samples an untrained vector generator at several truncation levels in
//! both W and Z space and prints the mean pairwise distance of the draws.
//! The mapping network normalizes z, so Z resampling changes which
//! directions are drawn but barely moves the spread.

use scarcegan::networks::{GanModel, NetConfig};
use scarcegan::sampling::{mean_pairwise_distance, SampleConfig, Sampler, TruncationSpace};

fn main() -> scarcegan::Result<()> {
    let mut net = NetConfig::vector(2);
    net.z_dim = 8;
    net.w_dim = 8;
    let sampler = Sampler::new(GanModel::new(net, 3)?, "example");
    for space in [TruncationSpace::WSpaceInterpolation, TruncationSpace::ZResampling] {
        for psi in [1.0, 0.7, 0.4, 0.1] {
            let cfg = SampleConfig { psi, count: 256, space, w_mean_samples: 4000, ..SampleConfig::default() };
            let points = sampler.sample(&cfg)?;
            println!("{space:?} psi {psi:.1}: diversity {:.4}", mean_pairwise_distance(&points)?);
        }
    }
    Ok(())
}
