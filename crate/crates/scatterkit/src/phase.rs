//! Scattering phase-function families.
//!
//! All densities are per steradian, so the isotropic phase function is
//! 1/(4 pi) and normalization means 2 pi * integral of p(mu) over [-1, 1]
//! equals 1. Models must be normalized before evaluation or sampling.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::quadrature::{integrate, log_integrate, trapezoid};

#[derive(Debug, thiserror::Error)]
pub enum PhaseError {
    #[error("unnormalized")]
    Unnormalized,
    #[error("mu {0} outside [-1, 1]")]
    DomainMu(f64),
    #[error("unnormalizable")]
    Unnormalizable,
    #[error("not a density")]
    NotADensity,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("tabulated phase: {0}")]
    BadTable(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Polynomial basis for the exponent of the exponential family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Basis {
    #[default]
    Monomial,
    Legendre,
}

/// Legendre polynomial P_n(x) by the three-term recurrence.
pub fn legendre(n: usize, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        _ => {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

/// p(mu) = exp(b0 + sum_i b_i Q_i(mu)); b0 is fixed by normalization, so an
/// M-degree model carries M free coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentialPhase {
    pub basis: Basis,
    /// b_1 .. b_M
    pub coeffs: Vec<f64>,
    /// Log-normalization constant, cached by `normalize`.
    pub b0: Option<f64>,
}

impl ExponentialPhase {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { basis: Basis::Monomial, coeffs, b0: None }
    }

    pub fn with_basis(basis: Basis, coeffs: Vec<f64>) -> Self {
        Self { basis, coeffs, b0: None }
    }

    /// The exponent without b0.
    pub fn exponent(&self, mu: f64) -> f64 {
        match self.basis {
            Basis::Monomial => {
                // Horner on b_M..b_1 with zero constant term.
                let mut acc = 0.0;
                for b in self.coeffs.iter().rev() {
                    acc = (acc + b) * mu;
                }
                acc
            }
            Basis::Legendre => self
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, b)| b * legendre(i + 1, mu))
                .sum(),
        }
    }
}

/// Phase function sampled on an ascending cosine grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedPhase {
    pub mu: Vec<f64>,
    pub values: Vec<f64>,
    pub metadata: String,
    normalized: bool,
}

impl TabulatedPhase {
    pub fn new(mu: Vec<f64>, values: Vec<f64>, metadata: impl Into<String>) -> Result<Self, PhaseError> {
        if mu.len() != values.len() {
            return Err(PhaseError::BadTable("grid/value length mismatch".into()));
        }
        if mu.len() < 2 {
            return Err(PhaseError::BadTable("need at least two grid points".into()));
        }
        if !mu.windows(2).all(|w| w[1] > w[0]) {
            return Err(PhaseError::BadTable("mu grid must be strictly increasing".into()));
        }
        if mu[0] < -1.0 - 1e-12 || *mu.last().unwrap() > 1.0 + 1e-12 {
            return Err(PhaseError::BadTable("mu grid outside [-1, 1]".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PhaseError::BadTable("values must be finite and nonnegative".into()));
        }
        Ok(Self { mu, values, metadata: metadata.into(), normalized: false })
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Rescales values so 2 pi * trapezoid(values over mu) = 1.
    pub fn normalize(mut self) -> Result<Self, PhaseError> {
        let s = 2.0 * PI * trapezoid(&self.mu, &self.values);
        if !s.is_finite() || s <= 0.0 {
            return Err(PhaseError::Unnormalizable);
        }
        for v in &mut self.values {
            *v /= s;
        }
        self.normalized = true;
        Ok(self)
    }

    /// Linear interpolation; clamps to the end values inside [-1, 1].
    pub fn interp(&self, mu: f64) -> f64 {
        if mu <= self.mu[0] {
            return self.values[0];
        }
        if mu >= *self.mu.last().unwrap() {
            return *self.values.last().unwrap();
        }
        let i = match self.mu.binary_search_by(|m| m.partial_cmp(&mu).unwrap()) {
            Ok(i) => return self.values[i],
            Err(i) => i,
        };
        let t = (mu - self.mu[i - 1]) / (self.mu[i] - self.mu[i - 1]);
        self.values[i - 1] * (1.0 - t) + self.values[i] * t
    }

    /// Reads the `mu,p` CSV format; `#`-prefixed lines are collected as
    /// metadata.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, PhaseError> {
        let mut mu = Vec::new();
        let mut values = Vec::new();
        let mut meta = Vec::new();
        let mut header_seen = false;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                meta.push(rest.trim().to_string());
                continue;
            }
            if !header_seen {
                if line != "mu,p" {
                    return Err(PhaseError::BadTable(format!(
                        "expected header 'mu,p', got '{line}'"
                    )));
                }
                header_seen = true;
                continue;
            }
            let mut parts = line.split(',');
            let m: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| PhaseError::BadTable(format!("line {}: bad mu", lineno + 1)))?;
            let p: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| PhaseError::BadTable(format!("line {}: bad p", lineno + 1)))?;
            mu.push(m);
            values.push(p);
        }
        Self::new(mu, values, meta.join("\n"))
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, PhaseError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), PhaseError> {
        for line in self.metadata.lines() {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "mu,p")?;
        for (m, p) in self.mu.iter().zip(&self.values) {
            writeln!(w, "{m:.17e},{p:.17e}")?;
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<(), PhaseError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut file)
    }
}

/// Tagged union over every supported family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PhaseModel {
    Isotropic,
    Hg { g: f64 },
    TwoTermHg { g1: f64, g2: f64, w: f64 },
    Rayleigh,
    /// p(mu) = sum_i a_i mu^i after normalization; `positive` records whether
    /// the minimum over a dense grid is > 0.
    RawPolynomial {
        coeffs: Vec<f64>,
        normalized: bool,
        positive: bool,
    },
    Exponential(ExponentialPhase),
    Tabulated(TabulatedPhase),
}

fn hg(g: f64, mu: f64) -> f64 {
    let denom = 1.0 + g * g - 2.0 * g * mu;
    (1.0 - g * g) / (4.0 * PI * denom * denom.sqrt())
}

impl PhaseModel {
    pub fn hg(g: f64) -> Result<Self, PhaseError> {
        if !(-1.0 < g && g < 1.0) {
            return Err(PhaseError::InvalidParameter(format!("HG g={g} not in (-1,1)")));
        }
        Ok(PhaseModel::Hg { g })
    }

    pub fn two_term_hg(g1: f64, g2: f64, w: f64) -> Result<Self, PhaseError> {
        if !(-1.0 < g1 && g1 < 1.0) || !(-1.0 < g2 && g2 < 1.0) {
            return Err(PhaseError::InvalidParameter(format!(
                "TwoTermHG lobes ({g1}, {g2}) must lie in (-1,1)"
            )));
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(PhaseError::InvalidParameter(format!("TwoTermHG weight {w} not in [0,1]")));
        }
        Ok(PhaseModel::TwoTermHg { g1, g2, w })
    }

    pub fn exponential(coeffs: Vec<f64>) -> Self {
        PhaseModel::Exponential(ExponentialPhase::new(coeffs))
    }

    pub fn raw_polynomial(coeffs: Vec<f64>) -> Self {
        PhaseModel::RawPolynomial { coeffs, normalized: false, positive: false }
    }

    pub fn is_normalized(&self) -> bool {
        match self {
            PhaseModel::Isotropic | PhaseModel::Hg { .. } | PhaseModel::TwoTermHg { .. } | PhaseModel::Rayleigh => true,
            PhaseModel::RawPolynomial { normalized, .. } => *normalized,
            PhaseModel::Exponential(e) => e.b0.is_some(),
            PhaseModel::Tabulated(t) => t.is_normalized(),
        }
    }

    /// Fixes the normalization degree of freedom: b0 for the exponential
    /// family, a global rescale for raw polynomials and tables. Closed-form
    /// families are normalized by construction.
    pub fn normalize(self) -> Result<Self, PhaseError> {
        match self {
            PhaseModel::Exponential(mut e) => {
                if e.coeffs.iter().any(|b| !b.is_finite()) {
                    return Err(PhaseError::InvalidParameter("non-finite coefficient".into()));
                }
                let log_integral = (2.0 * PI).ln() + log_integrate(|mu| e.exponent(mu), -1.0, 1.0);
                if !log_integral.is_finite() {
                    return Err(PhaseError::Unnormalizable);
                }
                e.b0 = Some(-log_integral);
                Ok(PhaseModel::Exponential(e))
            }
            PhaseModel::RawPolynomial { mut coeffs, .. } => {
                if coeffs.iter().any(|a| !a.is_finite()) {
                    return Err(PhaseError::InvalidParameter("non-finite coefficient".into()));
                }
                // 2 pi * sum_i a_i * integral mu^i = 1; odd moments vanish.
                let s: f64 = coeffs
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % 2 == 0)
                    .map(|(i, a)| 2.0 * PI * a * 2.0 / (i as f64 + 1.0))
                    .sum();
                if !s.is_finite() || s <= 0.0 {
                    return Err(PhaseError::Unnormalizable);
                }
                for a in &mut coeffs {
                    *a /= s;
                }
                let eval = |mu: f64| {
                    let mut acc = 0.0;
                    for a in coeffs.iter().rev() {
                        acc = acc * mu + a;
                    }
                    acc
                };
                let positive = (0..=2000).all(|k| eval(-1.0 + k as f64 / 1000.0) > 0.0);
                Ok(PhaseModel::RawPolynomial { coeffs, normalized: true, positive })
            }
            PhaseModel::Tabulated(t) => Ok(PhaseModel::Tabulated(t.normalize()?)),
            other => Ok(other),
        }
    }

    /// p(mu), per steradian.
    pub fn eval(&self, mu: f64) -> Result<f64, PhaseError> {
        if !(-1.0..=1.0).contains(&mu) {
            return Err(PhaseError::DomainMu(mu));
        }
        if !self.is_normalized() {
            return Err(PhaseError::Unnormalized);
        }
        Ok(match self {
            PhaseModel::Isotropic => 1.0 / (4.0 * PI),
            PhaseModel::Hg { g } => hg(*g, mu),
            PhaseModel::TwoTermHg { g1, g2, w } => w * hg(*g1, mu) + (1.0 - w) * hg(*g2, mu),
            PhaseModel::Rayleigh => 3.0 / (16.0 * PI) * (1.0 + mu * mu),
            PhaseModel::RawPolynomial { coeffs, .. } => {
                let mut acc = 0.0;
                for a in coeffs.iter().rev() {
                    acc = acc * mu + a;
                }
                acc
            }
            PhaseModel::Exponential(e) => (e.b0.unwrap() + e.exponent(mu)).exp(),
            PhaseModel::Tabulated(t) => t.interp(mu),
        })
    }

    /// log p(mu). For the exponential family this is exact even where
    /// eval() would under/overflow.
    pub fn log_eval(&self, mu: f64) -> Result<f64, PhaseError> {
        match self {
            PhaseModel::Exponential(e) => {
                if !(-1.0..=1.0).contains(&mu) {
                    return Err(PhaseError::DomainMu(mu));
                }
                let b0 = e.b0.ok_or(PhaseError::Unnormalized)?;
                Ok(b0 + e.exponent(mu))
            }
            _ => Ok(self.eval(mu)?.ln()),
        }
    }

    /// Asymmetry g = 2 pi * integral of mu p(mu) over [-1, 1].
    pub fn asymmetry(&self) -> Result<f64, PhaseError> {
        if !self.is_normalized() {
            return Err(PhaseError::Unnormalized);
        }
        match self {
            PhaseModel::Isotropic => Ok(0.0),
            PhaseModel::Hg { g } => Ok(*g),
            PhaseModel::TwoTermHg { g1, g2, w } => Ok(w * g1 + (1.0 - w) * g2),
            PhaseModel::Rayleigh => Ok(0.0),
            PhaseModel::Tabulated(t) => {
                let moment: Vec<f64> = t.mu.iter().zip(&t.values).map(|(m, p)| m * p).collect();
                Ok(2.0 * PI * trapezoid(&t.mu, &moment))
            }
            _ => Ok(2.0 * PI * integrate(|mu| mu * self.eval(mu).unwrap(), -1.0, 1.0)),
        }
    }

    /// 2 pi * integral of p(mu) over [-1, 1]; 1 for a normalized model.
    pub fn solid_angle_integral(&self) -> Result<f64, PhaseError> {
        if !self.is_normalized() {
            return Err(PhaseError::Unnormalized);
        }
        match self {
            PhaseModel::Tabulated(t) => Ok(2.0 * PI * trapezoid(&t.mu, &t.values)),
            _ => Ok(2.0 * PI * integrate(|mu| self.eval(mu).unwrap(), -1.0, 1.0)),
        }
    }

    pub fn sampler(&self) -> Result<DirectionSampler, PhaseError> {
        DirectionSampler::build(self)
    }

    /// Tabulates the model on a uniform cosine grid. The source must be
    /// normalized, so the sampled values are kept exactly rather than
    /// rescaled by a trapezoid estimate.
    pub fn tabulate(&self, n: usize, metadata: impl Into<String>) -> Result<TabulatedPhase, PhaseError> {
        if !self.is_normalized() {
            return Err(PhaseError::Unnormalized);
        }
        let mu: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
        self.tabulate_on(mu, metadata)
    }

    /// Tabulates the model on a caller-supplied cosine grid, for example
    /// the cosines of a uniform scattering-angle grid.
    pub fn tabulate_on(&self, mu: Vec<f64>, metadata: impl Into<String>) -> Result<TabulatedPhase, PhaseError> {
        if !self.is_normalized() {
            return Err(PhaseError::Unnormalized);
        }
        let values = mu.iter().map(|m| self.eval(*m)).collect::<Result<Vec<_>, _>>()?;
        let mut t = TabulatedPhase::new(mu, values, metadata)?;
        t.normalized = true;
        Ok(t)
    }

    /// Tabulates on the cosines of `n` uniformly spaced scattering angles.
    /// This matches the angular sampling of single-scattering reference
    /// tables and concentrates grid points near the two poles.
    pub fn tabulate_uniform_angle(&self, n: usize, metadata: impl Into<String>) -> Result<TabulatedPhase, PhaseError> {
        let mu: Vec<f64> = (0..n)
            .map(|i| {
                let theta = PI * (n - 1 - i) as f64 / (n - 1) as f64;
                theta.cos()
            })
            .collect();
        self.tabulate_on(mu, metadata)
    }
}

const CDF_BASE_POINTS: usize = 4096;
const CDF_REFINE: usize = 8;
const CDF_REFINE_THRESHOLD: f64 = 100.0;

/// Inverse-CDF sampler for the deflection cosine, with uniform azimuth.
///
/// Built from a cumulative table on a 4096-interval cosine grid; intervals
/// where the density exceeds 100x its median are subdivided 8x so forward
/// peaks are resolved.
#[derive(Debug, Clone)]
pub struct DirectionSampler {
    mu: Vec<f64>,
    cdf: Vec<f64>,
}

impl DirectionSampler {
    fn build(model: &PhaseModel) -> Result<Self, PhaseError> {
        if !model.is_normalized() {
            return Err(PhaseError::Unnormalized);
        }
        if let PhaseModel::RawPolynomial { positive, .. } = model {
            if !positive {
                return Err(PhaseError::NotADensity);
            }
        }
        let base: Vec<f64> = (0..=CDF_BASE_POINTS)
            .map(|i| -1.0 + 2.0 * i as f64 / CDF_BASE_POINTS as f64)
            .collect();
        let dens: Vec<f64> = base.iter().map(|m| model.eval(*m)).collect::<Result<_, _>>()?;
        let mut sorted = dens.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        let threshold = CDF_REFINE_THRESHOLD * median;

        let mut mu = Vec::with_capacity(base.len());
        mu.push(base[0]);
        for i in 0..CDF_BASE_POINTS {
            let steps = if dens[i].max(dens[i + 1]) > threshold { CDF_REFINE } else { 1 };
            for k in 1..=steps {
                mu.push(base[i] + (base[i + 1] - base[i]) * k as f64 / steps as f64);
            }
        }
        let p: Vec<f64> = mu.iter().map(|m| model.eval(*m)).collect::<Result<_, _>>()?;
        let mut cdf = Vec::with_capacity(mu.len());
        cdf.push(0.0);
        let mut acc = 0.0;
        for i in 1..mu.len() {
            acc += 0.5 * (p[i] + p[i - 1]) * (mu[i] - mu[i - 1]);
            cdf.push(acc);
        }
        let total = *cdf.last().unwrap();
        if !(total.is_finite() && total > 0.0) {
            return Err(PhaseError::NotADensity);
        }
        for c in &mut cdf {
            *c /= total;
        }
        Ok(Self { mu, cdf })
    }

    /// Maps uniform (u1, u2) in [0,1) to (cos theta, phi).
    pub fn sample(&self, u1: f64, u2: f64) -> (f64, f64) {
        let i = match self.cdf.binary_search_by(|c| c.partial_cmp(&u1).unwrap()) {
            Ok(i) => i.max(1),
            Err(i) => i.clamp(1, self.cdf.len() - 1),
        };
        let c0 = self.cdf[i - 1];
        let c1 = self.cdf[i];
        let t = if c1 > c0 { (u1 - c0) / (c1 - c0) } else { 0.0 };
        let mu = self.mu[i - 1] + t * (self.mu[i] - self.mu[i - 1]);
        (mu.clamp(-1.0, 1.0), 2.0 * PI * u2)
    }

    /// CDF of the deflection cosine at `mu` (piecewise linear).
    pub fn cdf_at(&self, mu: f64) -> f64 {
        if mu <= self.mu[0] {
            return 0.0;
        }
        if mu >= *self.mu.last().unwrap() {
            return 1.0;
        }
        let i = match self.mu.binary_search_by(|m| m.partial_cmp(&mu).unwrap()) {
            Ok(i) => return self.cdf[i],
            Err(i) => i,
        };
        let t = (mu - self.mu[i - 1]) / (self.mu[i] - self.mu[i - 1]);
        self.cdf[i - 1] + t * (self.cdf[i] - self.cdf[i - 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // von Mises-Fisher density on the sphere, per steradian. (The common
    // citation form carries 2 pi in the denominator, which integrates to 2
    // over the sphere; 4 pi is the constant consistent with a unit
    // solid-angle integral.)
    fn vmf_closed_form(kappa: f64, mu: f64) -> f64 {
        kappa / (4.0 * PI * kappa.sinh()) * (kappa * mu).exp()
    }

    #[test]
    fn isotropic_constant() {
        let p = PhaseModel::Isotropic.eval(0.3).unwrap();
        assert_relative_eq!(p, 1.0 / (4.0 * PI), epsilon = 1e-12);
        assert_relative_eq!(p, 0.0795775, epsilon = 1e-6);
    }

    #[test]
    fn vmf_forward_value() {
        let m = PhaseModel::exponential(vec![1.0]).normalize().unwrap();
        // kappa/(4 pi sinh kappa) e^kappa at kappa = 1
        assert_relative_eq!(m.eval(1.0).unwrap(), 0.184063, epsilon = 1e-5);
        assert_relative_eq!(m.eval(1.0).unwrap(), vmf_closed_form(1.0, 1.0), epsilon = 1e-10);
    }

    #[test]
    fn hg_forward_value() {
        let m = PhaseModel::hg(0.5).unwrap();
        assert_relative_eq!(m.eval(1.0).unwrap(), 0.477465, epsilon = 1e-5);
    }

    #[test]
    fn exponential_b0_isotropic() {
        let m = PhaseModel::exponential(vec![0.0, 0.0, 0.0]).normalize().unwrap();
        match &m {
            PhaseModel::Exponential(e) => {
                assert_relative_eq!(e.b0.unwrap(), (1.0 / (4.0 * PI)).ln(), epsilon = 1e-9);
                assert_relative_eq!(e.b0.unwrap(), -2.53102, epsilon = 1e-5);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn exponential_b0_vmf() {
        let m = PhaseModel::exponential(vec![1.0]).normalize().unwrap();
        match &m {
            PhaseModel::Exponential(e) => {
                assert_relative_eq!(e.b0.unwrap(), (1.0 / (4.0 * PI * 1.0f64.sinh())).ln(), epsilon = 1e-9);
                assert_relative_eq!(e.b0.unwrap(), -2.692464, epsilon = 1e-5);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn exponential_rayleigh_fit_normalizes() {
        // quadrature oracle: b0 = -ln(2 pi * int exp(0.68 mu^2))
        let m = PhaseModel::exponential(vec![0.0, 0.68]).normalize().unwrap();
        let oracle = -((2.0 * PI) * integrate(|mu| (0.68 * mu * mu).exp(), -1.0, 1.0)).ln();
        match &m {
            PhaseModel::Exponential(e) => assert_relative_eq!(e.b0.unwrap(), oracle, epsilon = 1e-9),
            _ => unreachable!(),
        }
        assert_relative_eq!(m.solid_angle_integral().unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn vmf_matches_closed_form_pointwise() {
        for kappa in [0.1, 1.0, 5.0, 20.0] {
            let m = PhaseModel::exponential(vec![kappa]).normalize().unwrap();
            for k in 0..=200 {
                let mu = -1.0 + k as f64 / 100.0;
                let expect = vmf_closed_form(kappa, mu);
                assert_relative_eq!(m.eval(mu).unwrap(), expect, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn hg_legendre_expansion_identity() {
        // HG(g, mu) = sum_i g^i (2i+1) P_i(mu) / (4 pi). 60 terms reach
        // 1e-6 for g <= 0.5; at g = 0.8 the tail is ~1e-4, so the series
        // runs until the term magnitude drops below 1e-12.
        for g in [0.2, 0.5, 0.8] {
            let m = PhaseModel::hg(g).unwrap();
            let n_terms = if g <= 0.5 { 60 } else { 200 };
            for k in 0..=100 {
                let mu = -1.0 + k as f64 / 50.0;
                let series: f64 = (0..=n_terms)
                    .map(|i| g.powi(i as i32) * (2 * i + 1) as f64 * legendre(i, mu))
                    .sum::<f64>()
                    / (4.0 * PI);
                assert_relative_eq!(m.eval(mu).unwrap(), series, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn asymmetry_values() {
        assert_relative_eq!(PhaseModel::hg(0.7).unwrap().asymmetry().unwrap(), 0.7, epsilon = 1e-8);
        assert_relative_eq!(PhaseModel::Isotropic.asymmetry().unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(PhaseModel::Rayleigh.asymmetry().unwrap(), 0.0, epsilon = 1e-12);
        // quadrature route agrees with the HG closed form
        let m = PhaseModel::hg(0.7).unwrap();
        let quad = 2.0 * PI * integrate(|mu| mu * m.eval(mu).unwrap(), -1.0, 1.0);
        assert_relative_eq!(quad, 0.7, epsilon = 1e-8);
    }

    #[test]
    fn eval_rejects_out_of_range_and_unnormalized() {
        assert!(matches!(PhaseModel::Isotropic.eval(1.5), Err(PhaseError::DomainMu(_))));
        let raw = PhaseModel::exponential(vec![1.0]);
        assert!(matches!(raw.eval(0.0), Err(PhaseError::Unnormalized)));
        assert!(matches!(raw.asymmetry(), Err(PhaseError::Unnormalized)));
    }

    #[test]
    fn huge_coefficients_are_still_normalizable() {
        // log-domain accumulation handles exponents far beyond f64 exp range
        let m = PhaseModel::exponential(vec![500.0]).normalize().unwrap();
        assert_relative_eq!(m.solid_angle_integral().unwrap(), 1.0, epsilon = 1e-6);
        assert!(matches!(
            PhaseModel::exponential(vec![f64::INFINITY]).normalize(),
            Err(PhaseError::InvalidParameter(_))
        ));
    }

    #[test]
    fn raw_polynomial_validity_flag() {
        // 1 + mu is nonnegative but touches zero at mu = -1
        let m = PhaseModel::raw_polynomial(vec![1.0, 1.0]).normalize().unwrap();
        match &m {
            PhaseModel::RawPolynomial { positive, .. } => assert!(!positive),
            _ => unreachable!(),
        }
        assert!(matches!(m.sampler(), Err(PhaseError::NotADensity)));
        let ok = PhaseModel::raw_polynomial(vec![2.0, 1.0]).normalize().unwrap();
        match &ok {
            PhaseModel::RawPolynomial { positive, .. } => assert!(positive),
            _ => unreachable!(),
        }
    }

    #[test]
    fn tabulated_roundtrip_and_normalization() {
        let m = PhaseModel::Rayleigh.tabulate(501, "rayleigh").unwrap();
        // tabulation keeps exact model values; the trapezoid estimate of the
        // integral carries its own O(h^2) error
        assert_relative_eq!(2.0 * PI * trapezoid(&m.mu, &m.values), 1.0, epsilon = 1e-5);
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        let back = TabulatedPhase::from_reader(buf.as_slice()).unwrap();
        assert_eq!(back.mu.len(), m.mu.len());
        assert_relative_eq!(back.values[250], m.values[250], epsilon = 1e-14);
        assert_eq!(back.metadata, "rayleigh");
    }

    #[test]
    fn sampler_isotropic_median() {
        let s = PhaseModel::Isotropic.sampler().unwrap();
        let (mu, phi) = s.sample(0.5, 0.25);
        assert_relative_eq!(mu, 0.0, epsilon = 1e-3);
        assert_relative_eq!(phi, PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn sampler_hg_mean_matches_asymmetry() {
        let model = PhaseModel::hg(0.9).unwrap();
        let s = model.sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let (mu, _) = s.sample(rng.gen(), rng.gen());
            sum += mu;
            sumsq += mu * mu;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let stderr = (var / n as f64).sqrt();
        assert!((mean - 0.9).abs() < 3.0 * stderr, "mean {mean} stderr {stderr}");
    }

    #[test]
    fn sampler_ks_statistic() {
        // analytic HG CDF: F(mu) = (1-g^2)/(2g) * [1/(1+g^2-2g mu)^{1/2} - 1/(1+g)]
        let g: f64 = 0.7;
        let cdf = |mu: f64| {
            (1.0 - g * g) / (2.0 * g)
                * (1.0 / (1.0 + g * g - 2.0 * g * mu).sqrt() - 1.0 / (1.0 + g))
        };
        let s = PhaseModel::hg(g).unwrap().sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000usize;
        let mut samples: Vec<f64> = (0..n).map(|_| s.sample(rng.gen(), rng.gen()).0).collect();
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, mu) in samples.iter().enumerate() {
            let f = cdf(*mu);
            ks = ks.max((f - i as f64 / n as f64).abs());
            ks = ks.max((f - (i + 1) as f64 / n as f64).abs());
        }
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    proptest! {
        #[test]
        fn prop_normalization_exponential(b in proptest::collection::vec(-20.0f64..20.0, 1..5)) {
            let m = PhaseModel::exponential(b).normalize().unwrap();
            let integral = m.solid_angle_integral().unwrap();
            prop_assert!((integral - 1.0).abs() < 1e-6, "integral {}", integral);
        }

        #[test]
        fn prop_exponential_strictly_positive(
            b in proptest::collection::vec(-20.0f64..20.0, 1..4),
            mus in proptest::collection::vec(-1.0f64..=1.0, 50)
        ) {
            let m = PhaseModel::exponential(b).normalize().unwrap();
            for mu in mus {
                prop_assert!(m.eval(mu).unwrap() > 0.0);
            }
        }

        #[test]
        fn prop_normalization_classical(g1 in -0.95f64..0.95, g2 in -0.95f64..0.95, w in 0.0f64..=1.0) {
            for m in [PhaseModel::hg(g1).unwrap(), PhaseModel::two_term_hg(g1, g2, w).unwrap(), PhaseModel::Rayleigh] {
                let integral = m.solid_angle_integral().unwrap();
                prop_assert!((integral - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn prop_azimuth_uniform(u2 in 0.0f64..1.0) {
            let s = PhaseModel::Isotropic.sampler().unwrap();
            let (_, phi) = s.sample(0.3, u2);
            prop_assert!((phi - 2.0 * PI * u2).abs() < 1e-12);
        }
    }
}
