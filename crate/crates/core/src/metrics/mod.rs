//! Distribution distances over extracted features.

mod features;

use nalgebra::{DMatrix, SymmetricEigen};
use scarcegan_autodiff::Array;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

pub use features::{ExtractorKind, FeatureExtractor, DEFAULT_FEATURE_DIM};

pub const DEFAULT_KID_BLOCK: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KidEstimate {
    pub value: f64,
    /// Spread over disjoint blocks; `None` when the full estimator was used.
    pub std: Option<f64>,
    pub blocks: usize,
}

fn rows(a: &Array) -> Result<(usize, usize)> {
    match *a.shape() {
        [n, d] => Ok((n, d)),
        ref s => Err(contract(format!("features must be [n, d], got {s:?}"))),
    }
}

fn kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / d + 1.0).powi(3)
}

/// Unbiased MMD² between two row sets under the cubic polynomial kernel.
pub fn mmd2_unbiased(x: &[&[f64]], y: &[&[f64]]) -> f64 {
    let (m, n) = (x.len() as f64, y.len() as f64);
    let within = |s: &[&[f64]]| {
        let mut t = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                t += kernel(s[i], s[j]);
            }
        }
        2.0 * t
    };
    let mut cross = 0.0;
    for a in x {
        for b in y {
            cross += kernel(a, b);
        }
    }
    within(x) / (m * (m - 1.0)) + within(y) / (n * (n - 1.0)) - 2.0 * cross / (m * n)
}

/// Kernel inception distance. Uses disjoint blocks of `block` rows from
/// each set when at least two fit, else one estimate over all rows.
pub fn kid(real: &Array, fake: &Array, block: usize) -> Result<KidEstimate> {
    let (nr, dr) = rows(real)?;
    let (nf, df) = rows(fake)?;
    if dr != df {
        return Err(contract(format!("feature widths differ: {dr} vs {df}")));
    }
    if nr < 2 || nf < 2 {
        return Err(contract(format!("KID needs at least 2 samples per set, got {nr} and {nf}")));
    }
    let r: Vec<&[f64]> = real.data().chunks(dr).collect();
    let f: Vec<&[f64]> = fake.data().chunks(df).collect();
    let n = nr.min(nf);
    if block < 2 || n < 2 * block {
        return Ok(KidEstimate {
            value: mmd2_unbiased(&r, &f),
            std: None,
            blocks: 1,
        });
    }
    let count = n / block;
    let values: Vec<f64> = (0..count)
        .map(|b| mmd2_unbiased(&r[b * block..(b + 1) * block], &f[b * block..(b + 1) * block]))
        .collect();
    let mean = values.iter().sum::<f64>() / count as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count as f64 - 1.0);
    Ok(KidEstimate {
        value: mean,
        std: Some(var.sqrt()),
        blocks: count,
    })
}

/// Sample mean and unbiased covariance.
pub fn moments(features: &Array) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (n, d) = rows(features)?;
    if n < 2 {
        return Err(contract("FID needs at least 2 samples per set"));
    }
    if n < d + 1 {
        log::warn!("{n} samples for {d} features: covariance is rank deficient");
    }
    let x = DMatrix::from_row_slice(n, d, features.data());
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let mut centred = x;
    for j in 0..d {
        centred.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    Ok((mean, cov))
}

const NEG_EIG_TOL: f64 = 1e-8;

fn checked_eigen(m: &DMatrix<f64>, what: &str) -> Result<Vec<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    eig.eigenvalues
        .iter()
        .map(|&v| {
            if v < -NEG_EIG_TOL * scale {
                Err(contract(format!("{what} has eigenvalue {v:e}, not positive semidefinite")))
            } else {
                Ok(v.max(0.0))
            }
        })
        .collect()
}

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    checked_eigen(&sym, "covariance")?;
    let eig = SymmetricEigen::new(sym);
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// Fréchet distance between Gaussians with the given moments.
pub fn fid_from_moments(mu1: &[f64], cov1: &DMatrix<f64>, mu2: &[f64], cov2: &DMatrix<f64>) -> Result<f64> {
    if mu1.len() != mu2.len() || cov1.shape() != cov2.shape() || cov1.nrows() != mu1.len() {
        return Err(contract("moment shapes differ"));
    }
    if !cov1.iter().chain(cov2.iter()).all(|v| v.is_finite()) {
        return Err(contract("non-finite covariance"));
    }
    let mean_term: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    let root1 = psd_sqrt(cov1)?;
    let inner = &root1 * cov2 * &root1;
    let trace_root: f64 = checked_eigen(&inner, "covariance product")?.iter().map(|v| v.sqrt()).sum();
    // Rounding can push identical moments a hair below zero.
    Ok((mean_term + cov1.trace() + cov2.trace() - 2.0 * trace_root).max(0.0))
}

pub fn fid(real: &Array, fake: &Array) -> Result<f64> {
    let (m1, c1) = moments(real)?;
    let (m2, c2) = moments(fake)?;
    fid_from_moments(&m1, &c1, &m2, &c2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Raw units; multiply by 10³ for the customary display.
    pub kid: Option<f64>,
    pub kid_std: Option<f64>,
    pub fid: Option<f64>,
    pub n_real: usize,
    pub n_fake: usize,
    pub extractor: String,
    pub step: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricChoice {
    Kid,
    Fid,
    Both,
}

/// Extracts both sets with one extractor and computes the chosen metrics.
pub fn evaluate(extractor: &FeatureExtractor, real: &Array, fake: &Array, choice: MetricChoice) -> Result<MetricReport> {
    let fr = extractor.extract(real)?;
    let ff = extractor.extract(fake)?;
    let (kid_v, kid_std) = match choice {
        MetricChoice::Fid => (None, None),
        _ => {
            let k = kid(&fr, &ff, DEFAULT_KID_BLOCK)?;
            (Some(k.value), k.std)
        }
    };
    let fid_v = match choice {
        MetricChoice::Kid => None,
        _ => Some(fid(&fr, &ff)?),
    };
    Ok(MetricReport {
        kid: kid_v,
        kid_std,
        fid: fid_v,
        n_real: real.shape()[0],
        n_fake: fake.shape()[0],
        extractor: extractor.fingerprint(),
        step: None,
    })
}

/// Index of the lowest value; the earliest wins ties. NaNs are skipped.
pub fn best_index(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}
