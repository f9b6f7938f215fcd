//! Discrete stochastic arithmetic in the CESTAC style.
//!
//! A [`StochasticValue`] carries `l` samples of one real quantity. Every
//! arithmetic operation is performed samplewise and each sample result is
//! randomly rounded toward +∞ or −∞. The spread of the samples then estimates
//! how many decimal digits of the mean are exact, and a value whose samples
//! agree on no digit at all is an *informatical zero* (printed `@.0`).
//!
//! Randomness lives in a [`StochasticContext`]; values themselves are plain
//! immutable data and can be shared freely between threads.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

/// Sample count of the standard CESTAC configuration.
pub const DEFAULT_SAMPLES: usize = 3;

/// Two-sided 95% Student-t quantile with two degrees of freedom.
pub const DEFAULT_TAU: f64 = 4.303;

/// Mantissa bits of the carrier type.
pub const MANTISSA_BITS: u32 = f64::MANTISSA_DIGITS;

/// Rendering of a value with no significant digit.
pub const INFORMATICAL_ZERO: &str = "@.0";

const MAX_LOG_RECORDS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DsaError {
    #[error("division by an informatical zero")]
    DivisionByStochasticZero,
    #[error("arithmetic overflow: a sample became non-finite")]
    Overflow,
    #[error("sample count mismatch: {left} vs {right}")]
    SampleCountMismatch { left: usize, right: usize },
    #[error("a stochastic value needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite sample {0}")]
    NonFiniteSample(f64),
    #[error("invalid DSA configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsaConfig {
    /// Number of samples `l`.
    pub samples: usize,
    /// Student-t quantile for `l - 1` degrees of freedom.
    pub tau_delta: f64,
    pub seed: u64,
}

impl Default for DsaConfig {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            tau_delta: DEFAULT_TAU,
            seed: 0,
        }
    }
}

impl DsaConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Builds a configuration for `samples` samples at two-sided confidence
    /// `confidence`, deriving `tau_delta` from the Student-t distribution.
    pub fn with_confidence(samples: usize, confidence: f64, seed: u64) -> Result<Self, DsaError> {
        if samples < 2 {
            return Err(DsaError::TooFewSamples(samples));
        }
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(DsaError::Config(format!(
                "confidence must lie in (0, 1), got {confidence}"
            )));
        }
        let dist = StudentsT::new(0.0, 1.0, (samples - 1) as f64)
            .map_err(|e| DsaError::Config(e.to_string()))?;
        let tau_delta = dist.inverse_cdf(0.5 + confidence / 2.0);
        Ok(Self {
            samples,
            tau_delta,
            seed,
        })
    }

    pub fn validate(&self) -> Result<(), DsaError> {
        if self.samples < 2 {
            return Err(DsaError::TooFewSamples(self.samples));
        }
        if !(self.tau_delta > 0.0 && self.tau_delta.is_finite()) {
            return Err(DsaError::Config(format!(
                "tau_delta must be positive, got {}",
                self.tau_delta
            )));
        }
        Ok(())
    }
}

/// `l` randomly rounded samples of one real number.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticValue {
    samples: Vec<f64>,
}

impl StochasticValue {
    /// Broadcasts an exactly known input to `l` samples without perturbation.
    pub fn from_exact(x: f64, l: usize) -> Self {
        Self {
            samples: vec![x; l],
        }
    }

    pub fn from_samples(samples: Vec<f64>) -> Result<Self, DsaError> {
        if samples.len() < 2 {
            return Err(DsaError::TooFewSamples(samples.len()));
        }
        if let Some(&bad) = samples.iter().find(|s| !s.is_finite()) {
            return Err(DsaError::NonFiniteSample(bad));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let ss: f64 = self.samples.iter().map(|g| (g - mean) * (g - mean)).sum();
        ss / (self.samples.len() - 1) as f64
    }

    /// Sign changes are exact, so no rounding is involved.
    pub fn neg(&self) -> Self {
        Self {
            samples: self.samples.iter().map(|g| -g).collect(),
        }
    }

    pub fn abs(&self) -> Self {
        Self {
            samples: self.samples.iter().map(|g| g.abs()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NcsdReport {
    pub digits: f64,
    pub informatical_zero: bool,
}

/// Spacing from `|g|` to the next representable magnitude.
pub fn ulp(g: f64) -> f64 {
    let a = g.abs();
    a.next_up() - a
}

/// Moves `g` by one unit in its last mantissa bit, up or down with
/// probability ½ each. Zero has no mantissa tail and is returned unchanged.
pub fn perturb<R: Rng + ?Sized>(g: f64, rng: &mut R) -> f64 {
    if g == 0.0 {
        return 0.0;
    }
    let u = ulp(g);
    if rng.random::<bool>() {
        g + u
    } else {
        g - u
    }
}

/// Rounds the exact value `g + err` (with `g` its nearest double) in the
/// requested direction.
fn round_directed(g: f64, err: f64, upward: bool) -> f64 {
    if err == 0.0 || err.is_nan() {
        g
    } else if upward {
        if err > 0.0 {
            g.next_up()
        } else {
            g
        }
    } else if err < 0.0 {
        g.next_down()
    } else {
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsaOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl DsaOp {
    /// Nearest-rounded result together with its exact rounding error.
    fn eval(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            DsaOp::Add => two_sum(a, b),
            DsaOp::Sub => two_sum(a, -b),
            DsaOp::Mul => {
                let p = a * b;
                (p, a.mul_add(b, -p))
            }
            DsaOp::Div => {
                let q = a / b;
                // a - q*b is exact, and a/b - q has the sign of (a - q*b)/b.
                let r = (-q).mul_add(b, a);
                (q, r / b)
            }
        }
    }
}

impl fmt::Display for DsaOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DsaOp::Add => "+",
            DsaOp::Sub => "-",
            DsaOp::Mul => "*",
            DsaOp::Div => "/",
        };
        f.write_str(s)
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

/// Common significant digits of two reals.
pub fn ncsd_pair(z1: f64, z2: f64) -> f64 {
    if z1 == z2 {
        return f64::INFINITY;
    }
    ((z1 + z2) / (2.0 * (z1 - z2))).abs().log10()
}

/// Estimates the exact significant digits of the sample mean.
pub fn cestac_digits(v: &StochasticValue, cfg: &DsaConfig) -> NcsdReport {
    let mean = v.mean();
    if mean == 0.0 {
        return NcsdReport {
            digits: f64::NEG_INFINITY,
            informatical_zero: true,
        };
    }
    let sigma = v.variance().sqrt();
    let digits = if sigma == 0.0 {
        f64::INFINITY
    } else {
        ((v.len() as f64).sqrt() * mean.abs() / (cfg.tau_delta * sigma)).log10()
    };
    NcsdReport {
        digits,
        informatical_zero: digits <= 0.0,
    }
}

pub fn is_informatical_zero(v: &StochasticValue, cfg: &DsaConfig) -> bool {
    cestac_digits(v, cfg).informatical_zero
}

/// Renders the mean with only its significant digits, `0.dddE+xxx` style.
///
/// The digit estimate is rounded to the nearest integer and capped at 17.
/// Values whose samples all coincide are rendered at full precision.
pub fn significant_string(v: &StochasticValue, cfg: &DsaConfig) -> String {
    let report = cestac_digits(v, cfg);
    if report.informatical_zero {
        return INFORMATICAL_ZERO.to_string();
    }
    let sig = if report.digits.is_infinite() {
        None
    } else {
        Some((report.digits.round() as usize).clamp(1, 17))
    };
    scientific(v.mean(), sig)
}

/// `0.d1d2...E±eee` rendering with `sig` mantissa digits, or the shortest
/// round-trip digits when `sig` is `None`.
pub fn scientific(x: f64, sig: Option<usize>) -> String {
    if x == 0.0 {
        return "0.0E+000".to_string();
    }
    let body = match sig {
        Some(k) => format!("{:.*e}", k.saturating_sub(1), x.abs()),
        None => format!("{:e}", x.abs()),
    };
    let (mantissa, exponent) = body.split_once('e').expect("`e` formatting has an exponent");
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let exponent: i32 = exponent.parse::<i32>().expect("integer exponent") + 1;
    format!(
        "{}0.{}E{}{:03}",
        if x < 0.0 { "-" } else { "" },
        digits,
        if exponent < 0 { '-' } else { '+' },
        exponent.abs()
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instability {
    Cancellation,
    StochasticZeroDivisor,
    StochasticZeroPivot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstabilityRecord {
    pub operation: Instability,
    pub location: String,
}

/// Bounded record of numerical instabilities seen during one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticLog {
    records: Vec<InstabilityRecord>,
    dropped: usize,
}

impl DiagnosticLog {
    pub fn push(&mut self, operation: Instability, location: &str) {
        if self.records.len() < MAX_LOG_RECORDS {
            self.records.push(InstabilityRecord {
                operation,
                location: location.to_string(),
            });
        } else {
            self.dropped += 1;
        }
    }

    pub fn records(&self) -> &[InstabilityRecord] {
        &self.records
    }

    /// Number of events beyond the retention cap.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn count(&self, kind: Instability) -> usize {
        self.records.iter().filter(|r| r.operation == kind).count()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Evaluation context owning the random streams and the diagnostic log.
///
/// Sample `i` draws its rounding direction from stream `i` of a ChaCha8
/// generator seeded with `cfg.seed`. Odd samples mirror the direction of
/// their even partner, so each such pair is rounded in opposite directions
/// on every inexact operation.
#[derive(Debug, Clone)]
pub struct StochasticContext {
    cfg: DsaConfig,
    streams: Vec<ChaCha8Rng>,
    log: DiagnosticLog,
    location: &'static str,
    directions: Vec<bool>,
}

impl StochasticContext {
    pub fn new(cfg: DsaConfig) -> Result<Self, DsaError> {
        cfg.validate()?;
        let streams = (0..cfg.samples)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i as u64);
                rng
            })
            .collect();
        Ok(Self {
            cfg,
            streams,
            log: DiagnosticLog::default(),
            location: "",
            directions: vec![false; cfg.samples],
        })
    }

    pub fn config(&self) -> &DsaConfig {
        &self.cfg
    }

    pub fn log(&self) -> &DiagnosticLog {
        &self.log
    }

    pub fn take_log(&mut self) -> DiagnosticLog {
        std::mem::take(&mut self.log)
    }

    /// Tag attached to instability records produced from now on.
    pub fn set_location(&mut self, tag: &'static str) {
        self.location = tag;
    }

    pub fn location(&self) -> &'static str {
        self.location
    }

    pub fn note(&mut self, kind: Instability) {
        self.log.push(kind, self.location);
    }

    pub fn exact(&self, x: f64) -> StochasticValue {
        StochasticValue::from_exact(x, self.cfg.samples)
    }

    pub fn digits(&self, v: &StochasticValue) -> NcsdReport {
        cestac_digits(v, &self.cfg)
    }

    pub fn is_zero(&self, v: &StochasticValue) -> bool {
        self.digits(v).informatical_zero
    }

    pub fn significant(&self, v: &StochasticValue) -> String {
        significant_string(v, &self.cfg)
    }

    /// Applies `perturb` to each sample using that sample's stream.
    pub fn perturb_samples(&mut self, v: &StochasticValue) -> StochasticValue {
        StochasticValue {
            samples: v
                .samples
                .iter()
                .zip(self.streams.iter_mut())
                .map(|(&g, rng)| perturb(g, rng))
                .collect(),
        }
    }

    fn draw_directions(&mut self) {
        let l = self.streams.len();
        let mut i = 0;
        while i < l {
            let up = self.streams[i].random::<bool>();
            self.directions[i] = up;
            if i + 1 < l {
                self.directions[i + 1] = !up;
            }
            i += 2;
        }
    }

    /// Samplewise `a op b` with random rounding of every sample result.
    pub fn apply(
        &mut self,
        op: DsaOp,
        a: &StochasticValue,
        b: &StochasticValue,
    ) -> Result<StochasticValue, DsaError> {
        if a.len() != b.len() {
            return Err(DsaError::SampleCountMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        if a.len() != self.cfg.samples {
            return Err(DsaError::SampleCountMismatch {
                left: a.len(),
                right: self.cfg.samples,
            });
        }
        if op == DsaOp::Div && self.is_zero(b) {
            self.note(Instability::StochasticZeroDivisor);
            return Err(DsaError::DivisionByStochasticZero);
        }
        self.draw_directions();
        let mut samples = Vec::with_capacity(a.len());
        for ((&x, &y), &up) in a.samples.iter().zip(&b.samples).zip(&self.directions) {
            let (g, err) = op.eval(x, y);
            let r = round_directed(g, err, up);
            if !r.is_finite() {
                return Err(DsaError::Overflow);
            }
            samples.push(r);
        }
        let result = StochasticValue { samples };
        if matches!(op, DsaOp::Add | DsaOp::Sub)
            && self.is_zero(&result)
            && !self.is_zero(a)
            && !self.is_zero(b)
        {
            self.note(Instability::Cancellation);
        }
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DsaConfig {
        DsaConfig::default()
    }

    #[test]
    fn perturb_zero_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(perturb(0.0, &mut rng), 0.0);
        }
    }

    #[test]
    fn perturb_one_stays_within_an_ulp() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = ulp(1.0);
        for _ in 0..1000 {
            let p = perturb(1.0, &mut rng);
            assert!(p == 1.0 - u || p == 1.0 || p == 1.0 + u, "{p}");
        }
    }

    #[test]
    fn perturb_is_unbiased_on_a_tenth() {
        // Monte-Carlo oracle: each draw is 0.1 ± u, so the sample mean has
        // standard error u / sqrt(N).
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let u = ulp(0.1);
        let mean_offset: f64 = (0..n).map(|_| (perturb(0.1, &mut rng) - 0.1) / u).sum::<f64>() / n as f64;
        let se = 1.0 / (n as f64).sqrt();
        assert!(mean_offset.abs() < 3.0 * se, "offset {mean_offset} ulp");
    }

    #[test]
    fn exact_cancellation_is_zero() {
        let mut ctx = StochasticContext::new(cfg()).unwrap();
        let x = ctx.exact(0.7);
        let d = ctx.apply(DsaOp::Sub, &x, &x).unwrap();
        assert!(ctx.is_zero(&d));
        assert_eq!(ctx.log().count(Instability::Cancellation), 1);
    }

    #[test]
    fn small_integer_product_is_exact() {
        let mut ctx = StochasticContext::new(cfg()).unwrap();
        let p = ctx.apply(DsaOp::Mul, &ctx.exact(2.0), &ctx.exact(3.0)).unwrap();
        for &s in p.samples() {
            assert!((s - 6.0).abs() <= ulp(6.0));
        }
        assert!(ctx.digits(&p).digits >= 14.0);
    }

    #[test]
    fn third_times_three_minus_one_is_zero_across_seeds() {
        let mut zeros = 0;
        for seed in 0..100 {
            let mut ctx = StochasticContext::new(DsaConfig::with_seed(seed)).unwrap();
            let one = ctx.exact(1.0);
            let three = ctx.exact(3.0);
            let q = ctx.apply(DsaOp::Div, &one, &three).unwrap();
            let p = ctx.apply(DsaOp::Mul, &q, &three).unwrap();
            let r = ctx.apply(DsaOp::Sub, &p, &one).unwrap();
            zeros += ctx.is_zero(&r) as usize;
        }
        assert!(zeros >= 99, "{zeros}/100");
    }

    #[test]
    fn division_by_informatical_zero_fails() {
        let mut ctx = StochasticContext::new(cfg()).unwrap();
        let z = ctx.exact(0.0);
        let err = ctx.apply(DsaOp::Div, &ctx.exact(1.0), &z).unwrap_err();
        assert_eq!(err, DsaError::DivisionByStochasticZero);
        assert_eq!(ctx.log().count(Instability::StochasticZeroDivisor), 1);
    }

    #[test]
    fn overflow_is_an_error() {
        let mut ctx = StochasticContext::new(cfg()).unwrap();
        let big = ctx.exact(f64::MAX);
        assert_eq!(
            ctx.apply(DsaOp::Mul, &big, &ctx.exact(2.0)).unwrap_err(),
            DsaError::Overflow
        );
    }

    #[test]
    fn mismatched_sample_counts_are_rejected() {
        let mut ctx = StochasticContext::new(cfg()).unwrap();
        let a = StochasticValue::from_exact(1.0, 3);
        let b = StochasticValue::from_exact(1.0, 4);
        assert!(matches!(
            ctx.apply(DsaOp::Add, &a, &b),
            Err(DsaError::SampleCountMismatch { .. })
        ));
    }

    #[test]
    fn digits_of_identical_samples_are_infinite() {
        let v = StochasticValue::from_samples(vec![5.0; 3]).unwrap();
        let r = cestac_digits(&v, &cfg());
        assert_eq!(r.digits, f64::INFINITY);
        assert!(!r.informatical_zero);
    }

    #[test]
    fn all_zero_samples_are_informatical_zero() {
        let v = StochasticValue::from_samples(vec![0.0; 3]).unwrap();
        assert!(cestac_digits(&v, &cfg()).informatical_zero);
    }

    #[test]
    fn digits_match_hand_evaluation() {
        let v = StochasticValue::from_samples(vec![1.0, 1.001, 0.999]).unwrap();
        let r = cestac_digits(&v, &cfg());
        // sigma = 0.001 exactly up to representation error.
        let expected = (3f64.sqrt() * 1.0 / (4.303 * 0.001)).log10();
        assert!((r.digits - expected).abs() < 1e-9);
        assert!((r.digits - 2.605).abs() < 1e-3);
    }

    #[test]
    fn ncsd_pair_examples() {
        assert_eq!(ncsd_pair(7.3, 7.3), f64::INFINITY);
        assert!((ncsd_pair(1.0, 0.0) - 0.5f64.log10()).abs() < 1e-15);
        // Table-style successive values: log10(209.2426 / (2 * 7.5933)) = 1.1392
        let c = ncsd_pair(100.82463733333, 108.41798623809);
        assert!((c - 1.139187).abs() < 1e-6, "{c}");
    }

    #[test]
    fn significant_string_examples() {
        let zero = StochasticValue::from_samples(vec![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(significant_string(&zero, &cfg()), "@.0");
        let exact = StochasticValue::from_exact(1.5, 3);
        assert_eq!(significant_string(&exact, &cfg()), "0.15E+001");
        let v = StochasticValue::from_samples(vec![112.1970, 112.1971, 112.1969]).unwrap();
        assert_eq!(significant_string(&v, &cfg()), "0.112197E+003");
    }

    #[test]
    fn scientific_keeps_trailing_zeros_and_small_exponents() {
        assert_eq!(scientific(7.19e-4, Some(4)), "0.7190E-003");
        assert_eq!(scientific(-9e-5, Some(1)), "-0.9E-004");
        assert_eq!(scientific(0.5, Some(2)), "0.50E+000");
    }

    #[test]
    fn student_t_quantile_matches_default() {
        let c = DsaConfig::with_confidence(3, 0.95, 0).unwrap();
        assert!((c.tau_delta - DEFAULT_TAU).abs() < 1e-3);
        assert!(DsaConfig::with_confidence(1, 0.95, 0).is_err());
    }

    #[test]
    fn same_seed_same_samples() {
        let run = |seed| {
            let mut ctx = StochasticContext::new(DsaConfig::with_seed(seed)).unwrap();
            let mut acc = ctx.exact(0.1);
            for _ in 0..50 {
                let t = ctx.exact(0.3);
                acc = ctx.apply(DsaOp::Add, &acc, &t).unwrap();
                acc = ctx.apply(DsaOp::Div, &acc, &ctx.exact(1.1)).unwrap();
            }
            acc
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn log_serializes_as_json_lines() {
        let mut log = DiagnosticLog::default();
        log.push(Instability::StochasticZeroPivot, "lu_solve");
        log.push(Instability::Cancellation, "assemble");
        let text = log.to_json_lines();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], r#"{"operation":"stochastic_zero_pivot","location":"lu_solve"}"#);
    }
}
