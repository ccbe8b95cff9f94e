//! Additive non-seasonal exponential smoothing for principal component scores.
//!
//! Three members are supported, in error-correction form with one-step error
//! `e_t = y_t - (l_{t-1} + phi * b_{t-1})`:
//!
//! * `ANN`  (simple):       `l_t = l_{t-1} + alpha e_t`
//! * `AAN`  (Holt):         adds `b_t = b_{t-1} + beta e_t`, `phi = 1`
//! * `AAdN` (damped Holt):  `l_t = l_{t-1} + phi b_{t-1} + alpha e_t`,
//!   `b_t = phi b_{t-1} + beta e_t`
//!
//! Smoothing parameters are searched with Nelder–Mead from a fixed set of
//! start points. For given smoothing parameters the one-step errors are affine
//! in the initial states, so the initial level and trend that minimize the sum
//! of squared errors are solved exactly by least squares inside every
//! objective evaluation. Members are compared by AICc.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::NelderMead;

pub const ALPHA_BOUNDS: (f64, f64) = (1e-4, 0.9999);
pub const BETA_LOWER: f64 = 1e-4;
pub const PHI_BOUNDS: (f64, f64) = (0.8, 0.98);

/// `(alpha, beta)` start points for the simplex search.
const START_POINTS: [(f64, f64); 3] = [(0.1, 0.01), (0.5, 0.1), (0.9, 0.3)];
const PHI_START: f64 = 0.9;
const MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EtsKind {
    #[serde(rename = "ANN")]
    Ann,
    #[serde(rename = "AAN")]
    Aan,
    #[serde(rename = "AAdN")]
    AadN,
}

impl EtsKind {
    /// All members, in tie-breaking order.
    pub const ALL: [EtsKind; 3] = [EtsKind::Ann, EtsKind::Aan, EtsKind::AadN];

    /// Free parameters counted by AICc: smoothing parameters, initial states
    /// and the innovation variance.
    pub fn n_params(self) -> usize {
        match self {
            EtsKind::Ann => 3,
            EtsKind::Aan => 5,
            EtsKind::AadN => 6,
        }
    }

    fn has_trend(self) -> bool {
        !matches!(self, EtsKind::Ann)
    }
}

impl std::fmt::Display for EtsKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EtsKind::Ann => "ANN",
            EtsKind::Aan => "AAN",
            EtsKind::AadN => "AAdN",
        })
    }
}

/// A fitted exponential smoothing model together with its final states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtsFit {
    pub kind: EtsKind,
    pub alpha: f64,
    /// Zero for `ANN`.
    pub beta: f64,
    /// One for `ANN`/`AAN`.
    pub phi: f64,
    pub initial_level: f64,
    pub initial_trend: f64,
    /// Level after the last observation.
    pub level: f64,
    /// Trend after the last observation.
    pub trend: f64,
    pub sse: f64,
    pub sigma2: f64,
    pub log_likelihood: f64,
    pub aicc: f64,
    pub n: usize,
    /// Set when every member failed to produce a finite fit.
    pub fallback: bool,
}

impl EtsFit {
    /// Point forecasts for horizons `1..=h`.
    pub fn forecast(&self, h: usize) -> Result<Vec<f64>> {
        forecast_ets(self, h)
    }
}

/// `-2 logLik + 2 q n / (n - q - 1)`; infinite when `n <= q + 1`.
pub fn aicc(log_likelihood: f64, q: usize, n: usize) -> f64 {
    if n <= q + 1 {
        return f64::INFINITY;
    }
    -2.0 * log_likelihood + 2.0 * q as f64 * n as f64 / (n - q - 1) as f64
}

/// Concentrated Gaussian log-likelihood with `sigma^2 = SSE / n`.
pub fn gaussian_log_likelihood(sse: f64, n: usize, sigma2_floor: f64) -> (f64, f64) {
    let sigma2 = (sse / n as f64).max(sigma2_floor);
    let ll = -0.5 * n as f64 * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);
    (ll, sigma2)
}

#[derive(Debug, Clone, Copy)]
struct Smoothing {
    alpha: f64,
    beta: f64,
    phi: f64,
}

impl Smoothing {
    fn from_params(kind: EtsKind, theta: &[f64]) -> Self {
        let alpha = theta[0].clamp(ALPHA_BOUNDS.0, ALPHA_BOUNDS.1);
        match kind {
            EtsKind::Ann => Smoothing { alpha, beta: 0.0, phi: 1.0 },
            EtsKind::Aan => Smoothing { alpha, beta: theta[1].clamp(BETA_LOWER, alpha), phi: 1.0 },
            EtsKind::AadN => Smoothing {
                alpha,
                beta: theta[1].clamp(BETA_LOWER, alpha),
                phi: theta[2].clamp(PHI_BOUNDS.0, PHI_BOUNDS.1),
            },
        }
    }
}

/// Runs the state recursion; returns (sse, final level, final trend).
fn run_recursion(y: &[f64], s: Smoothing, l0: f64, b0: f64) -> (f64, f64, f64) {
    let (mut l, mut b) = (l0, b0);
    let mut sse = 0.0;
    for &obs in y {
        let pred = l + s.phi * b;
        let e = obs - pred;
        sse += e * e;
        l = pred + s.alpha * e;
        b = s.phi * b + s.beta * e;
    }
    (sse, l, b)
}

fn heuristic_states(y: &[f64]) -> (f64, f64) {
    let m = y.len().min(4);
    let b0 = if m >= 2 { (y[m - 1] - y[0]) / (m - 1) as f64 } else { 0.0 };
    (y[0], b0)
}

/// Initial states minimizing the SSE for fixed smoothing parameters.
fn optimal_states(y: &[f64], kind: EtsKind, s: Smoothing) -> (f64, f64) {
    // e_t = e0_t + l0 * a_t + b0 * c_t; the a/c tracks evolve with y = 0.
    let (mut l, mut b) = (0.0, 0.0);
    let (mut la, mut ba) = (1.0, 0.0);
    let (mut lc, mut bc) = (0.0, 1.0);
    let (mut aa, mut ac, mut cc, mut ae, mut ce) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &obs in y {
        let e0 = obs - (l + s.phi * b);
        let a = -(la + s.phi * ba);
        let c = -(lc + s.phi * bc);
        aa += a * a;
        ac += a * c;
        cc += c * c;
        ae += a * e0;
        ce += c * e0;
        l = l + s.phi * b + s.alpha * e0;
        b = s.phi * b + s.beta * e0;
        let (nla, nba) = (la + s.phi * ba + s.alpha * a, s.phi * ba + s.beta * a);
        la = nla;
        ba = nba;
        let (nlc, nbc) = (lc + s.phi * bc + s.alpha * c, s.phi * bc + s.beta * c);
        lc = nlc;
        bc = nbc;
    }
    if !kind.has_trend() {
        return if aa > 0.0 { (-ae / aa, 0.0) } else { heuristic_states(y) };
    }
    let det = aa * cc - ac * ac;
    if det > 1e-12 * aa * cc && det.is_finite() {
        let l0 = (-ae * cc + ce * ac) / det;
        let b0 = (-ce * aa + ae * ac) / det;
        (l0, b0)
    } else {
        let (l0, b0) = heuristic_states(y);
        (l0, b0)
    }
}

fn sse_at(y: &[f64], kind: EtsKind, theta: &[f64]) -> f64 {
    let s = Smoothing::from_params(kind, theta);
    let (l0, b0) = optimal_states(y, kind, s);
    run_recursion(y, s, l0, b0).0
}

fn fit_member(y: &[f64], kind: EtsKind, sigma2_floor: f64) -> Option<EtsFit> {
    let nm = NelderMead { max_iter: MAX_ITER, ..Default::default() };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for &(a0, b0) in &START_POINTS {
        let (x0, steps): (Vec<f64>, Vec<f64>) = match kind {
            EtsKind::Ann => (vec![a0], vec![0.05]),
            EtsKind::Aan => (vec![a0, b0], vec![0.05, 0.05 * b0.max(0.1)]),
            EtsKind::AadN => (vec![a0, b0, PHI_START], vec![0.05, 0.05 * b0.max(0.1), -0.05]),
        };
        let m = nm.minimize(|theta| sse_at(y, kind, theta), &x0, &steps);
        if m.value.is_finite() && best.as_ref().is_none_or(|(v, _)| m.value < *v) {
            best = Some((m.value, m.x));
        }
    }
    let (_, theta) = best?;
    let s = Smoothing::from_params(kind, &theta);
    let (l0, b0) = optimal_states(y, kind, s);
    let (sse, level, trend) = run_recursion(y, s, l0, b0);
    if !(sse.is_finite() && level.is_finite() && trend.is_finite()) {
        return None;
    }
    let n = y.len();
    let (ll, sigma2) = gaussian_log_likelihood(sse, n, sigma2_floor);
    Some(EtsFit {
        kind,
        alpha: s.alpha,
        beta: s.beta,
        phi: s.phi,
        initial_level: l0,
        initial_trend: b0,
        level,
        trend,
        sse,
        sigma2,
        log_likelihood: ll,
        aicc: aicc(ll, kind.n_params(), n),
        n,
        fallback: false,
    })
}

/// Fits every requested member and returns the one with the smallest AICc.
///
/// Members whose AICc is undefined for this length (`n <= q + 1`) are not
/// eligible; if none is eligible the `ANN` fit is returned with its plain AIC
/// in the `aicc` field. Ties go to the earlier member of `ANN, AAN, AAdN`.
pub fn fit_ets(y: &[f64], family: &[EtsKind]) -> Result<EtsFit> {
    if y.len() < 4 {
        return Err(Error::InsufficientData { what: "exponential smoothing", needed: 4, got: y.len() });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("series contains non-finite values".into()));
    }
    let mut members: Vec<EtsKind> = family.to_vec();
    members.sort();
    members.dedup();
    if members.is_empty() {
        return Err(Error::InvalidInput("empty exponential smoothing family".into()));
    }
    let n = y.len();
    let scale = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let sigma2_floor = (1e-24 * scale).max(1e-300);

    let fits: Vec<EtsFit> = members.iter().filter_map(|&kind| fit_member(y, kind, sigma2_floor)).collect();
    if fits.is_empty() {
        return Ok(fallback_fit(y, sigma2_floor));
    }
    let mut best: Option<&EtsFit> = None;
    for fit in fits.iter().filter(|f| f.aicc.is_finite()) {
        if best.is_none_or(|b| fit.aicc < b.aicc) {
            best = Some(fit);
        }
    }
    match best {
        Some(fit) => Ok(fit.clone()),
        None => {
            let mut fit = fits.iter().find(|f| f.kind == EtsKind::Ann).cloned().unwrap_or_else(|| {
                fit_member(y, EtsKind::Ann, sigma2_floor).unwrap_or_else(|| fallback_fit(y, sigma2_floor))
            });
            fit.aicc = -2.0 * fit.log_likelihood + 2.0 * EtsKind::Ann.n_params() as f64;
            Ok(fit)
        }
    }
}

fn fallback_fit(y: &[f64], sigma2_floor: f64) -> EtsFit {
    let s = Smoothing { alpha: 0.5, beta: 0.0, phi: 1.0 };
    let (sse, level, _) = run_recursion(y, s, y[0], 0.0);
    let (ll, sigma2) = gaussian_log_likelihood(sse, y.len(), sigma2_floor);
    EtsFit {
        kind: EtsKind::Ann,
        alpha: 0.5,
        beta: 0.0,
        phi: 1.0,
        initial_level: y[0],
        initial_trend: 0.0,
        level,
        trend: 0.0,
        sse,
        sigma2,
        log_likelihood: ll,
        aicc: aicc(ll, EtsKind::Ann.n_params(), y.len()),
        n: y.len(),
        fallback: true,
    }
}

/// Point forecasts `l_n + (phi + ... + phi^h) b_n` for `h = 1..=horizon`.
pub fn forecast_ets(fit: &EtsFit, horizon: usize) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::InvalidInput("forecast horizon must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(horizon);
    let mut damp_sum = 0.0;
    let mut phi_pow = 1.0;
    for _ in 0..horizon {
        let trend_mult = match fit.kind {
            EtsKind::Ann => 0.0,
            EtsKind::Aan => {
                damp_sum += 1.0;
                damp_sum
            }
            EtsKind::AadN => {
                phi_pow *= fit.phi;
                damp_sum += phi_pow;
                damp_sum
            }
        };
        out.push(fit.level + trend_mult * fit.trend);
    }
    Ok(out)
}
