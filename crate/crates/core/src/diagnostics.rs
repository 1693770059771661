//! Convergence diagnosis of sampler output and whiteness analysis of filter
//! residuals.
//!
//! Split-R̂ and the effective sample size follow Gelman et al., Bayesian Data
//! Analysis (3rd ed.). Every retained chain segment is cut into two halves, giving
//! `m = 2M` sequences of length `n`. With sequence means `ψ̄_j`, grand mean `ψ̄`
//! and sequence variances `s_j²`:
//!
//! ```text
//! B     = n/(m−1) Σ_j (ψ̄_j − ψ̄)²
//! W     = 1/m Σ_j s_j²
//! var⁺  = (n−1)/n W + B/n
//! R̂     = √(var⁺ / W)
//! V_t   = 1/(m(n−t)) Σ_j Σ_{i>t} (ψ_{i,j} − ψ_{i−t,j})²
//! ρ̂_t   = 1 − V_t / (2 var⁺)
//! ESS   = m n / (1 + 2 Σ_{t=1}^{T} ρ̂_t)
//! ```
//!
//! where `T` is the first odd lag for which `ρ̂_{T+1} + ρ̂_{T+2} < 0`. The ESS is
//! capped at `m n`.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::sampler::ChainSet;

/// Split-R̂ threshold below which a parameter is considered converged.
pub const RHAT_THRESHOLD: f64 = 1.1;
/// Kolmogorov–Smirnov coefficient for a 95% band.
pub const KS_95: f64 = 1.358;
/// Largest tolerated fraction of lags outside the 95% band.
pub const WHITENESS_FRACTION: f64 = 0.05;
/// Residual series shorter than this get a low-power warning.
pub const LOW_POWER_LENGTH: usize = 30;

/// Integrated autocorrelation time of a chain segment.
///
/// Sums the empirical autocorrelation up to, but excluding, the first lag whose
/// magnitude drops below `2/√N`. A constant segment returns `+∞`; a segment
/// shorter than 10 returns NaN.
pub fn iact(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 10 {
        return f64::NAN;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = dev.iter().map(|d| d * d).sum::<f64>();
    if !(c0 > 0.0) {
        return f64::INFINITY;
    }
    let band = 2.0 / (n as f64).sqrt();
    let mut sum = 0.0;
    for lag in 1..n {
        let rho = autocovariance(&dev, lag) / c0;
        if rho.abs() < band {
            break;
        }
        sum += rho;
    }
    1.0 + 2.0 * sum
}

fn autocovariance(dev: &[f64], lag: usize) -> f64 {
    dev[lag..].iter().zip(dev).map(|(a, b)| a * b).sum()
}

/// Split-R̂ and ESS for one scalar quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct RhatEss {
    pub rhat: f64,
    pub ess: f64,
    /// Fewer than two chains were supplied.
    pub reduced_power: bool,
    /// The within-sequence variance vanished; R̂ and ESS are NaN.
    pub degenerate: bool,
}

/// Split-R̂ and ESS of post-burn-in chain segments.
///
/// Segments are truncated to the shortest one and to an even length before
/// splitting. Returns a degenerate result when fewer than four draws per chain
/// remain.
pub fn split_rhat_ess(chains: &[Vec<f64>]) -> RhatEss {
    let reduced_power = chains.len() < 2;
    let len = chains.iter().map(Vec::len).min().unwrap_or(0) / 2 * 2;
    let n = len / 2;
    if n < 2 {
        return RhatEss { rhat: f64::NAN, ess: f64::NAN, reduced_power, degenerate: true };
    }
    let seqs: Vec<&[f64]> = chains.iter().flat_map(|c| [&c[..n], &c[n..len]]).collect();
    let m = seqs.len();
    let nf = n as f64;
    let means: Vec<f64> = seqs.iter().map(|s| s.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = nf / (m - 1) as f64 * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = seqs
        .iter()
        .zip(&means)
        .map(|(s, mu)| s.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m as f64;
    if !(w > 0.0) || !w.is_finite() {
        return RhatEss { rhat: f64::NAN, ess: f64::NAN, reduced_power, degenerate: true };
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    let rhat = (var_plus / w).sqrt();

    let rho = |t: usize| -> f64 {
        let v: f64 = seqs
            .iter()
            .map(|s| s[t..].iter().zip(s.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>()
            / (m * (n - t)) as f64;
        1.0 - v / (2.0 * var_plus)
    };
    let mut sum = 0.0;
    let mut t = 1;
    let mut rho_t = rho(1);
    loop {
        sum += rho_t;
        if t + 2 >= n {
            break;
        }
        let next = rho(t + 1);
        let after = rho(t + 2);
        if next + after < 0.0 {
            break;
        }
        sum += next;
        rho_t = after;
        t += 2;
    }
    let total = (m * n) as f64;
    let ess = (total / (1.0 + 2.0 * sum)).min(total);
    RhatEss { rhat, ess, reduced_power, degenerate: false }
}

/// First iteration from which every chain's log-posterior has entered the
/// interquartile band of the pooled second half of all chains.
pub fn propose_burn_in(log_posts: &[&[f64]]) -> usize {
    let mut tail: Vec<f64> = log_posts
        .iter()
        .flat_map(|lp| lp[lp.len() / 2..].iter().copied())
        .filter(|v| v.is_finite())
        .collect();
    if tail.is_empty() {
        return 0;
    }
    tail.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&tail, 0.25);
    let hi = quantile_sorted(&tail, 0.75);
    log_posts
        .iter()
        .map(|lp| lp.iter().position(|v| (lo..=hi).contains(v)).unwrap_or(lp.len()))
        .max()
        .unwrap_or(0)
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    match sorted.get(i + 1) {
        Some(next) => sorted[i] + frac * (next - sorted[i]),
        None => sorted[i],
    }
}

/// Diagnostics of one parameter.
#[derive(Debug, Clone)]
pub struct ParameterDiagnosis {
    pub name: String,
    pub iact_min: f64,
    pub iact_max: f64,
    pub rhat: f64,
    pub ess: f64,
    pub rhat_pass: bool,
    pub ess_pass: bool,
    pub degenerate: bool,
}

/// Convergence report over all parameters of a chain set.
#[derive(Debug, Clone)]
pub struct DiagnosisReport {
    pub burn_in: usize,
    pub chains: usize,
    pub failed_chains: usize,
    pub retained_per_chain: usize,
    pub accept_rates: Vec<f64>,
    pub parameters: Vec<ParameterDiagnosis>,
    pub reduced_power: bool,
    /// Burn-in suggested from the log-posterior traces. Informational only.
    pub proposed_burn_in: usize,
}

impl DiagnosisReport {
    /// Minimum ESS required for a pass: five per split sequence.
    pub fn ess_threshold(&self) -> f64 {
        10.0 * self.chains as f64
    }

    pub fn passed(&self) -> bool {
        self.failed_chains == 0 && self.parameters.iter().all(|p| p.rhat_pass && p.ess_pass)
    }
}

/// Diagnoses the completed chains of `set` after discarding `burn_in` draws.
pub fn diagnose(set: &ChainSet, names: &[String], burn_in: usize) -> DiagnosisReport {
    let done = set.completed();
    let burn_in = burn_in.min(done.iter().map(|c| c.len()).min().unwrap_or(0));
    let chains = done.len();
    let ess_threshold = 10.0 * chains as f64;
    let mut reduced_power = chains < 2;
    let parameters = (0..set.dim)
        .map(|j| {
            let series = set.series(j, burn_in);
            let iacts: Vec<f64> = series.iter().map(|s| iact(s)).collect();
            let re = split_rhat_ess(&series);
            reduced_power |= re.reduced_power;
            ParameterDiagnosis {
                name: names.get(j).cloned().unwrap_or_else(|| format!("eta{j}")),
                iact_min: iacts.iter().copied().fold(f64::INFINITY, f64::min),
                iact_max: iacts.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                rhat: re.rhat,
                ess: re.ess,
                rhat_pass: re.rhat < RHAT_THRESHOLD,
                ess_pass: re.ess > ess_threshold,
                degenerate: re.degenerate,
            }
        })
        .collect();
    let traces: Vec<&[f64]> = done.iter().map(|c| c.log_posts.as_slice()).collect();
    DiagnosisReport {
        burn_in,
        chains,
        failed_chains: set.chains.len() - chains,
        retained_per_chain: done.iter().map(|c| c.len() - burn_in).min().unwrap_or(0),
        accept_rates: done.iter().map(|c| c.accept_rate()).collect(),
        parameters,
        reduced_power,
        proposed_burn_in: propose_burn_in(&traces),
    }
}

/// Biased (1/N) autocorrelation for lags `0..=max_lag`. Empty when the series
/// has zero variance.
pub fn acf(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0: f64 = dev.iter().map(|d| d * d).sum();
    if !(c0 > 0.0) {
        return Vec::new();
    }
    (0..=max_lag.min(n - 1)).map(|l| autocovariance(&dev, l) / c0).collect()
}

/// Cross-correlation of `x` at time `t + l` with `u` at time `t`, for lags
/// `0..=max_lag`. Empty when either series has zero variance.
pub fn ccf(x: &[f64], u: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len().min(u.len());
    if n == 0 {
        return Vec::new();
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let mu = u[..n].iter().sum::<f64>() / n as f64;
    let dx: Vec<f64> = x[..n].iter().map(|v| v - mx).collect();
    let du: Vec<f64> = u[..n].iter().map(|v| v - mu).collect();
    let sx = dx.iter().map(|d| d * d).sum::<f64>();
    let su = du.iter().map(|d| d * d).sum::<f64>();
    if !(sx > 0.0 && su > 0.0) {
        return Vec::new();
    }
    let norm = (sx * su).sqrt();
    (0..=max_lag.min(n - 1))
        .map(|l| dx[l..].iter().zip(&du).map(|(a, b)| a * b).sum::<f64>() / norm)
        .collect()
}

/// Cumulated periodogram at the Fourier frequencies `j/N`, `j = 1..=⌊N/2⌋`.
/// Returns `(frequencies, curve)`; empty for a zero-variance series.
pub fn cumulated_periodogram(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let half = n / 2;
    if half == 0 {
        return (Vec::new(), Vec::new());
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let power: Vec<f64> = buf[1..=half].iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = power.iter().sum();
    if !(total > 0.0) {
        return (Vec::new(), Vec::new());
    }
    let mut acc = 0.0;
    let mut curve: Vec<f64> = power
        .iter()
        .map(|p| {
            acc += p;
            acc / total
        })
        .collect();
    curve[half - 1] = 1.0;
    let freqs = (1..=half).map(|j| j as f64 / n as f64).collect();
    (freqs, curve)
}

/// Correlation of the residuals with one input channel.
#[derive(Debug, Clone)]
pub struct CrossCorrelation {
    pub input: String,
    pub values: Vec<f64>,
    pub out_of_band: f64,
    /// The input is constant, so the correlation is undefined.
    pub degenerate: bool,
}

/// Whiteness analysis of one residual series.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub n: usize,
    pub max_lag: usize,
    /// ACF at lags `0..=max_lag`.
    pub acf: Vec<f64>,
    /// Half-width of the 95% band for ACF and CCF.
    pub band: f64,
    pub acf_out_of_band: f64,
    pub ccf: Vec<CrossCorrelation>,
    pub cp_frequency: Vec<f64>,
    pub cp: Vec<f64>,
    /// Half-width of the 95% Kolmogorov–Smirnov band around the white-noise line.
    pub cp_band: f64,
    pub cp_out_of_band: f64,
    pub low_power: bool,
    /// Residuals have zero variance; correlations are undefined.
    pub degenerate: bool,
}

impl ResidualReport {
    /// White-noise reference line of the cumulated periodogram at point `j`.
    pub fn cp_reference(&self, j: usize) -> f64 {
        (j + 1) as f64 / self.cp.len() as f64
    }

    /// Residuals are white and independent of the past inputs.
    pub fn is_white(&self) -> bool {
        !self.degenerate
            && self.acf_out_of_band <= WHITENESS_FRACTION
            && self.cp_out_of_band <= WHITENESS_FRACTION
            && self.ccf.iter().all(|c| c.degenerate || c.out_of_band <= WHITENESS_FRACTION)
    }
}

/// Default number of lags: a quarter of the series, at most 100.
pub fn default_max_lag(n: usize) -> usize {
    (n / 4).clamp(1, 100)
}

fn fraction_outside(values: &[f64], band: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|v| v.abs() > band).count() as f64 / values.len() as f64
}

/// Whiteness analysis of `residuals` against named input series.
pub fn residual_analysis(residuals: &[f64], inputs: &[(String, Vec<f64>)], max_lag: usize) -> ResidualReport {
    let n = residuals.len();
    let band = 2.0 / (n.max(1) as f64).sqrt();
    let acf_values = acf(residuals, max_lag);
    let degenerate = acf_values.is_empty();
    let acf_out = fraction_outside(acf_values.get(1..).unwrap_or(&[]), band);
    let ccf = inputs
        .iter()
        .map(|(name, u)| {
            let values = if degenerate { Vec::new() } else { ccf(residuals, u, max_lag) };
            CrossCorrelation {
                input: name.clone(),
                out_of_band: fraction_outside(&values, band),
                degenerate: values.is_empty(),
                values,
            }
        })
        .collect();
    let (cp_frequency, cp) = cumulated_periodogram(residuals);
    let q = cp.len();
    let cp_band = KS_95 / (q.max(1) as f64).sqrt();
    let cp_out = if q == 0 {
        0.0
    } else {
        cp.iter().enumerate().filter(|(j, c)| (*c - (j + 1) as f64 / q as f64).abs() > cp_band).count() as f64
            / q as f64
    };
    ResidualReport {
        n,
        max_lag: acf_values.len().saturating_sub(1),
        acf: acf_values,
        band,
        acf_out_of_band: acf_out,
        ccf,
        cp_frequency,
        cp,
        cp_band,
        cp_out_of_band: cp_out,
        low_power: n < LOW_POWER_LENGTH,
        degenerate,
    }
}
