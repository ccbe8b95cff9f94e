//! Seeded synthetic functional time series.
//!
//! `X_t(u) = mu(u) + sum_k beta_{t,k} phi_k(u) + sigma z_t(u)` with a smooth
//! fixed mean, sinusoidal components made orthonormal under the grid's
//! quadrature weights, AR(1) scores and i.i.d. Gaussian noise.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fda::{AgeGrid, FunctionalSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_years: usize,
    pub n_ages: usize,
    pub first_year: i32,
    /// AR(1) coefficient per component; the length is the true number of components.
    pub ar: Vec<f64>,
    /// Innovation standard deviation per component.
    pub innovation_sd: Vec<f64>,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// `k_true` components with a shared AR coefficient and innovation
    /// standard deviations `innov_sd / k` so later components are weaker.
    pub fn simple(
        n_years: usize,
        n_ages: usize,
        k_true: usize,
        ar: f64,
        innov_sd: f64,
        noise_sd: f64,
        seed: u64,
    ) -> Self {
        Self {
            n_years,
            n_ages,
            first_year: 1,
            ar: vec![ar; k_true],
            innovation_sd: (1..=k_true).map(|k| innov_sd / k as f64).collect(),
            noise_sd,
            seed,
        }
    }

    pub fn k_true(&self) -> usize {
        self.ar.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_years == 0 || self.n_ages < 2 {
            return Err(Error::InvalidInput("need at least one year and two ages".into()));
        }
        if self.ar.len() != self.innovation_sd.len() {
            return Err(Error::InvalidInput("AR coefficients and innovation sds differ in length".into()));
        }
        if self.k_true() >= self.n_ages {
            return Err(Error::InvalidInput(format!(
                "{} components do not fit on {} ages",
                self.k_true(),
                self.n_ages
            )));
        }
        if let Some(a) = self.ar.iter().find(|a| !(a.abs() < 1.0)) {
            return Err(Error::InvalidInput(format!("AR coefficient {a} is not stationary")));
        }
        if self.innovation_sd.iter().chain([&self.noise_sd]).any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput("standard deviations must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Smooth mean shaped like a log-mortality curve over `[0, 1]`.
fn mean_shape(x: f64) -> f64 {
    -6.0 + 5.5 * x + 1.5 * (-12.0 * x).exp() - 0.8 * (-((x - 0.25) / 0.08).powi(2)).exp()
}

/// `k` sinusoids on the grid, Gram–Schmidt orthonormalised under `w`.
pub fn orthonormal_components(grid: &AgeGrid, k: usize) -> DMatrix<f64> {
    let ages = grid.ages();
    let (lo, hi) = (ages[0], ages[ages.len() - 1]);
    let w = grid.quadrature_weights();
    let j = ages.len();
    let mut phi = DMatrix::zeros(k, j);
    for c in 0..k {
        let mut v: Vec<f64> = ages
            .iter()
            .map(|a| {
                let x = (a - lo) / (hi - lo);
                (std::f64::consts::PI * (c as f64 + 1.0) * x).sin() + if c == 0 { 0.5 } else { 0.0 }
            })
            .collect();
        for p in 0..c {
            let dot: f64 = (0..j).map(|i| w[i] * v[i] * phi[(p, i)]).sum();
            for i in 0..j {
                v[i] -= dot * phi[(p, i)];
            }
        }
        let norm = (0..j).map(|i| w[i] * v[i] * v[i]).sum::<f64>().sqrt();
        for i in 0..j {
            phi[(c, i)] = v[i] / norm;
        }
    }
    phi
}

pub fn synth_generate(spec: &SynthSpec) -> Result<FunctionalSeries> {
    spec.validate()?;
    let grid = AgeGrid::integer(spec.n_ages)?;
    let j = spec.n_ages;
    let k = spec.k_true();
    let phi = orthonormal_components(&grid, k);
    let mu: Vec<f64> = (0..j).map(|i| mean_shape(i as f64 / (j - 1) as f64)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };

    // start from the stationary distribution
    let mut beta: Vec<f64> =
        (0..k).map(|c| draw() * spec.innovation_sd[c] / (1.0 - spec.ar[c] * spec.ar[c]).sqrt()).collect();
    let mut values = DMatrix::zeros(spec.n_years, j);
    for t in 0..spec.n_years {
        if t > 0 {
            for c in 0..k {
                beta[c] = spec.ar[c] * beta[c] + spec.innovation_sd[c] * draw();
            }
        }
        for i in 0..j {
            let signal: f64 = (0..k).map(|c| beta[c] * phi[(c, i)]).sum();
            values[(t, i)] = mu[i] + signal + spec.noise_sd * draw();
        }
    }
    FunctionalSeries::new(grid, spec.first_year, values)
}
