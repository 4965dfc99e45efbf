//! Ring power spectra.
//!
//! With `X̂(κ) = (1/K) Σ_k x_k e^{-2πiκk/K}`, the one-sided power is
//! `P(0) = |X̂(0)|²`, `P(κ) = 2|X̂(κ)|²` for `0 < κ < K/2`, and
//! `P(K/2) = |X̂(K/2)|²` for even `K`, so `Σ_κ P(κ) = var(x) + mean(x)²`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::EvalRun;
use crate::error::{contract, Result};

/// One-sided power of a single ring, wavenumbers `0..=K/2`.
pub fn ring_spectrum(x: &[f64]) -> Result<Vec<f64>> {
    let k = x.len();
    if k < 2 {
        return Err(contract("spectrum needs at least 2 sites"));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(k);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    let scale = 1.0 / (k as f64 * k as f64);
    Ok((0..=k / 2)
        .map(|kappa| {
            let p = buf[kappa].norm_sqr() * scale;
            if kappa == 0 || 2 * kappa == k {
                p
            } else {
                2.0 * p
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectra {
    /// `[lead - 1][κ]`, averaged over members and inits.
    pub forecast: Vec<Vec<f64>>,
    /// `[lead - 1][κ]`, averaged over inits at the same valid times.
    pub truth: Vec<Vec<f64>>,
}

pub fn power_spectrum(run: &EvalRun) -> Result<Spectra> {
    let (m, n) = (run.members(), run.inits());
    let bins = run.sites() / 2 + 1;
    let mut forecast = Vec::with_capacity(run.leads());
    let mut truth = Vec::with_capacity(run.leads());
    for t in 0..run.leads() {
        let mut f = vec![0.0; bins];
        let mut tr = vec![0.0; bins];
        for i in 0..n {
            for mm in 0..m {
                for (a, p) in f.iter_mut().zip(ring_spectrum(run.member(i, mm, t))?) {
                    *a += p;
                }
            }
            for (a, p) in tr.iter_mut().zip(ring_spectrum(run.truth(i, t))?) {
                *a += p;
            }
        }
        forecast.push(f.into_iter().map(|v| v / (m * n) as f64).collect());
        truth.push(tr.into_iter().map(|v| v / n as f64).collect());
    }
    Ok(Spectra { forecast, truth })
}
