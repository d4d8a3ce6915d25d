//! KID and FID between blob sets drawn from the same and from different
//! generators, using the seeded random-conv feature extractor.

use scarcegan::data::toy;
use scarcegan::metrics::{evaluate, ExtractorKind, FeatureExtractor, MetricChoice};

fn main() -> scarcegan::Result<()> {
    let ex = FeatureExtractor::new(ExtractorKind::SeededRandomConv, 0, 64, &[3, 16, 16])?;
    let real = toy::blobs(300, 16, 3, 1);
    let same = toy::blobs(300, 16, 3, 2);
    let other = toy::blobs(300, 16, 1, 3).map(|v| v * 0.5);
    let other = scarcegan_autodiff::Array::from_fn(&[300, 3, 16, 16], |i| other.data()[i % other.len()]);
    for (name, fake) in [("same distribution", &same), ("shifted", &other)] {
        let r = evaluate(&ex, &real, fake, MetricChoice::Both)?;
        println!("{name:>17}: KID {:+.5}  FID {:.4}", r.kid.unwrap(), r.fid.unwrap());
    }
    Ok(())
}
