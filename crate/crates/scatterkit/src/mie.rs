//! Lorenz-Mie phase functions for spherical scatterers.
//!
//! `mie_mono` computes the single-sphere solution; `mie_poly` averages it
//! over a log-normal diameter distribution with scattering-cross-section
//! weights. Lengths are micrometers.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::phase::{PhaseError, TabulatedPhase};

#[derive(Debug, thiserror::Error)]
pub enum MieError {
    #[error("size parameter overflow (x = {0})")]
    SizeParameterOverflow(f64),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Phase(#[from] PhaseError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MieConfig {
    /// Mean particle diameter, micrometers.
    pub diameter_mean: f64,
    /// Standard deviation of the diameter; 0 means mono-dispersion.
    pub diameter_sd: f64,
    /// Vacuum wavelength, micrometers.
    pub wavelength: f64,
    /// Particle refractive index (complex for absorbing spheres).
    pub n_particle: Complex64,
    /// Host medium refractive index.
    pub n_medium: f64,
    /// Scattering-angle tabulation points (uniform in theta over [0, pi]).
    pub n_angles: usize,
    /// Gauss-Hermite nodes for the size-distribution average.
    pub n_quad_sizes: usize,
}

impl Default for MieConfig {
    fn default() -> Self {
        // Polystyrene spheres in water; the index pair that reproduces the
        // reference asymmetry table at 600 nm (see calibration notes in the
        // acceptance suite).
        Self {
            diameter_mean: 1.0,
            diameter_sd: 0.0,
            wavelength: 0.6,
            n_particle: Complex64::new(1.59, 0.0),
            n_medium: 1.33,
            n_angles: 1801,
            n_quad_sizes: 21,
        }
    }
}

impl MieConfig {
    fn validate(&self) -> Result<(), MieError> {
        if self.diameter_mean <= 0.0 {
            return Err(MieError::InvalidConfig("diameter_mean must be > 0".into()));
        }
        if self.diameter_sd < 0.0 {
            return Err(MieError::InvalidConfig("diameter_sd must be >= 0".into()));
        }
        if self.wavelength <= 0.0 {
            return Err(MieError::InvalidConfig("wavelength must be > 0".into()));
        }
        if self.n_medium <= 0.0 {
            return Err(MieError::InvalidConfig("n_medium must be > 0".into()));
        }
        if !self.n_particle.norm().is_finite() {
            return Err(MieError::InvalidConfig("n_particle must be finite".into()));
        }
        if self.n_angles < 181 {
            return Err(MieError::InvalidConfig("n_angles must be >= 181".into()));
        }
        if self.n_quad_sizes < 1 {
            return Err(MieError::InvalidConfig("n_quad_sizes must be >= 1".into()));
        }
        Ok(())
    }

    /// Size parameter x = pi d n_medium / lambda for diameter `d`.
    pub fn size_parameter(&self, d: f64) -> f64 {
        PI * d * self.n_medium / self.wavelength
    }
}

#[derive(Debug, Clone)]
pub struct MieResult {
    pub phase: TabulatedPhase,
    /// Asymmetry parameter from the Mie coefficient series.
    pub g: f64,
    pub qsca: f64,
    pub qext: f64,
}

/// Mie expansion coefficients a_n, b_n for relative index `m` and size
/// parameter `x`. The logarithmic derivative runs by downward recurrence;
/// the Riccati-Bessel functions psi, chi run upward.
fn mie_coefficients(m: Complex64, x: f64) -> (Vec<Complex64>, Vec<Complex64>) {
    let nmax = (x + 4.0 * x.powf(1.0 / 3.0) + 2.0).ceil() as usize;
    let nmx = nmax.max((m * x).norm() as usize) + 16;
    let mx = m * x;
    let mut d = vec![Complex64::new(0.0, 0.0); nmx + 1];
    for n in (1..=nmx).rev() {
        let rn = Complex64::new(n as f64, 0.0) / mx;
        d[n - 1] = rn - 1.0 / (d[n] + rn);
    }
    let mut a = Vec::with_capacity(nmax);
    let mut b = Vec::with_capacity(nmax);
    let (mut psi0, mut psi1) = (x.cos(), x.sin());
    let (mut chi0, mut chi1) = (-x.sin(), x.cos());
    for n in 1..=nmax {
        let fx = (2 * n - 1) as f64 / x;
        let psi = fx * psi1 - psi0;
        let chi = fx * chi1 - chi0;
        let xi = Complex64::new(psi, -chi);
        let xi1 = Complex64::new(psi1, -chi1);
        let nx = n as f64 / x;
        let ta = d[n] / m + nx;
        let tb = d[n] * m + nx;
        a.push((ta * psi - psi1) / (ta * xi - xi1));
        b.push((tb * psi - psi1) / (tb * xi - xi1));
        psi0 = psi1;
        psi1 = psi;
        chi0 = chi1;
        chi1 = chi;
    }
    (a, b)
}

fn efficiencies(a: &[Complex64], b: &[Complex64], x: f64) -> (f64, f64, f64) {
    let mut qsca = 0.0;
    let mut qext = 0.0;
    let mut gsum = 0.0;
    let nmax = a.len();
    for n in 1..=nmax {
        let fa = a[n - 1];
        let fb = b[n - 1];
        let fnn = (2 * n + 1) as f64;
        qsca += fnn * (fa.norm_sqr() + fb.norm_sqr());
        qext += fnn * (fa + fb).re;
        gsum += fnn / (n as f64 * (n + 1) as f64) * (fa * fb.conj()).re;
        if n < nmax {
            let fa1 = a[n];
            let fb1 = b[n];
            gsum += n as f64 * (n + 2) as f64 / (n + 1) as f64
                * (fa * fa1.conj() + fb * fb1.conj()).re;
        }
    }
    let qsca = 2.0 / (x * x) * qsca;
    let qext = 2.0 / (x * x) * qext;
    let g = 4.0 / (x * x * qsca) * gsum;
    (qsca, qext, g)
}

/// Raw angular intensity (|S1|^2 + |S2|^2)/2 on an ascending mu grid.
fn scattering_intensity(a: &[Complex64], b: &[Complex64], n_angles: usize) -> (Vec<f64>, Vec<f64>) {
    let nmax = a.len();
    let mut mu_grid = Vec::with_capacity(n_angles);
    let mut intensity = Vec::with_capacity(n_angles);
    // theta descending from pi to 0 gives mu ascending
    for k in 0..n_angles {
        let theta = PI * (n_angles - 1 - k) as f64 / (n_angles - 1) as f64;
        let mu = theta.cos();
        let mut s1 = Complex64::new(0.0, 0.0);
        let mut s2 = Complex64::new(0.0, 0.0);
        let mut pi_prev = 0.0;
        let mut pi_cur = 1.0;
        for n in 1..=nmax {
            let tau = n as f64 * mu * pi_cur - (n + 1) as f64 * pi_prev;
            let f = (2 * n + 1) as f64 / (n as f64 * (n + 1) as f64);
            s1 += f * (a[n - 1] * pi_cur + b[n - 1] * tau);
            s2 += f * (a[n - 1] * tau + b[n - 1] * pi_cur);
            let pi_next = ((2 * n + 1) as f64 * mu * pi_cur - (n + 1) as f64 * pi_prev) / n as f64;
            pi_prev = pi_cur;
            pi_cur = pi_next;
        }
        mu_grid.push(mu);
        intensity.push(0.5 * (s1.norm_sqr() + s2.norm_sqr()));
    }
    // endpoint cosines can carry rounding from cos(); pin them
    mu_grid[0] = -1.0;
    *mu_grid.last_mut().unwrap() = 1.0;
    (mu_grid, intensity)
}

/// Single-sphere Mie solution for diameter `d`.
pub fn mie_mono(d: f64, cfg: &MieConfig) -> Result<MieResult, MieError> {
    cfg.validate()?;
    if d <= 0.0 {
        return Err(MieError::InvalidConfig("diameter must be > 0".into()));
    }
    let x = cfg.size_parameter(d);
    if x > 1e5 {
        return Err(MieError::SizeParameterOverflow(x));
    }
    let m = cfg.n_particle / cfg.n_medium;
    let (a, b) = mie_coefficients(m, x);
    let (qsca, qext, g) = efficiencies(&a, &b, x);
    let (mu, intensity) = scattering_intensity(&a, &b, cfg.n_angles);
    let meta = format!(
        "mie mono d={d} um, lambda={} um, n_particle={}, n_medium={}, x={x:.6}",
        cfg.wavelength, cfg.n_particle, cfg.n_medium
    );
    let phase = TabulatedPhase::new(mu, intensity, meta)?.normalize()?;
    Ok(MieResult { phase, g, qsca, qext })
}

/// Gauss-Hermite nodes and weights for weight exp(-t^2) (Numerical Recipes
/// style initial guesses, Newton refinement).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    let mut x = 0.0f64;
    for i in 0..m {
        x = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => x - 1.14 * (n as f64).powf(0.426) / x,
            2 => 1.86 * x - 0.86 * nodes[0],
            3 => 1.91 * x - 0.91 * nodes[1],
            _ => 2.0 * x - nodes[i - 2],
        };
        let mut dp = 0.0;
        for _ in 0..200 {
            // orthonormal Hermite recurrence keeps values in range
            let mut h0 = std::f64::consts::PI.powf(-0.25);
            let mut h1 = x * std::f64::consts::SQRT_2 * h0;
            for k in 2..=n {
                let h2 = x * (2.0 / k as f64).sqrt() * h1 - ((k - 1) as f64 / k as f64).sqrt() * h0;
                h0 = h1;
                h1 = h2;
            }
            dp = (2.0 * n as f64).sqrt() * h0;
            let dx = h1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / (dp * dp);
        nodes[n - 1 - i] = -x;
        weights[n - 1 - i] = weights[i];
    }
    // ascending order
    nodes.reverse();
    weights.reverse();
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Bulk phase function for a log-normal diameter population, averaged with
/// scattering-cross-section weights over `n_quad_sizes` Gauss-Hermite nodes
/// in log-diameter.
pub fn mie_poly(cfg: &MieConfig) -> Result<MieResult, MieError> {
    cfg.validate()?;
    if cfg.diameter_sd == 0.0 || cfg.n_quad_sizes == 1 {
        // degenerate distribution
        let sigma_ln = (1.0 + (cfg.diameter_sd / cfg.diameter_mean).powi(2)).ln().sqrt();
        let mu_ln = cfg.diameter_mean.ln() - 0.5 * sigma_ln * sigma_ln;
        return mie_mono(mu_ln.exp(), cfg);
    }
    // log-normal parameters matching the stated mean and sd of the diameter
    let cv2 = (cfg.diameter_sd / cfg.diameter_mean).powi(2);
    let sigma_ln = (1.0 + cv2).ln().sqrt();
    let mu_ln = cfg.diameter_mean.ln() - 0.5 * sigma_ln * sigma_ln;
    let (nodes, gh_weights) = gauss_hermite(cfg.n_quad_sizes);

    let monos: Vec<(f64, MieResult)> = nodes
        .iter()
        .zip(&gh_weights)
        .map(|(t, w)| {
            let d = (mu_ln + std::f64::consts::SQRT_2 * sigma_ln * t).exp();
            let res = mie_mono(d, cfg)?;
            let prob = w / PI.sqrt();
            Ok((prob, res))
        })
        .collect::<Result<Vec<_>, MieError>>()?;

    let mut csca_total = 0.0;
    let mut cext_total = 0.0;
    let mut area_total = 0.0;
    let mut g_acc = 0.0;
    let diam_of = |i: usize| (mu_ln + std::f64::consts::SQRT_2 * sigma_ln * nodes[i]).exp();
    let n_pts = monos[0].1.phase.mu.len();
    let mut values = vec![0.0; n_pts];
    for (i, (prob, res)) in monos.iter().enumerate() {
        let d = diam_of(i);
        let area = PI * (0.5 * d).powi(2);
        let csca = res.qsca * area;
        csca_total += prob * csca;
        cext_total += prob * res.qext * area;
        area_total += prob * area;
        g_acc += prob * csca * res.g;
        for (v, pv) in values.iter_mut().zip(&res.phase.values) {
            *v += prob * csca * pv;
        }
    }
    let mu_grid = monos[0].1.phase.mu.clone();
    let meta = format!(
        "mie poly d_mean={} um, d_sd={} um, lambda={} um, n_particle={}, n_medium={}, nodes={}",
        cfg.diameter_mean, cfg.diameter_sd, cfg.wavelength, cfg.n_particle, cfg.n_medium, cfg.n_quad_sizes
    );
    let phase = TabulatedPhase::new(mu_grid, values, meta)?.normalize()?;
    Ok(MieResult {
        phase,
        g: g_acc / csca_total,
        qsca: csca_total / area_total,
        qext: cext_total / area_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::PhaseModel;
    use approx::assert_relative_eq;

    #[test]
    fn size_parameter_pi() {
        let cfg = MieConfig { n_medium: 1.0, ..Default::default() };
        assert_relative_eq!(cfg.size_parameter(0.6), PI, epsilon = 1e-12);
    }

    #[test]
    fn gauss_hermite_moments() {
        // integral e^{-t^2} dt = sqrt(pi); integral t^2 e^{-t^2} = sqrt(pi)/2
        for n in [5, 11, 21] {
            let (t, w) = gauss_hermite(n);
            let s0: f64 = w.iter().sum();
            let s2: f64 = t.iter().zip(&w).map(|(t, w)| t * t * w).sum();
            assert_relative_eq!(s0, PI.sqrt(), epsilon = 1e-12);
            assert_relative_eq!(s2, PI.sqrt() / 2.0, epsilon = 1e-11);
        }
    }

    #[test]
    fn rayleigh_limit_small_sphere() {
        let cfg = MieConfig::default();
        let res = mie_mono(0.005, &cfg).unwrap();
        assert!(res.g.abs() < 1e-3);
        let rayleigh = PhaseModel::Rayleigh;
        for (mu, v) in res.phase.mu.iter().zip(&res.phase.values) {
            let expect = rayleigh.eval(*mu).unwrap();
            assert!((v / expect - 1.0).abs() < 0.01, "mu={mu} v={v} expect={expect}");
        }
    }

    #[test]
    fn small_particle_matches_reference_asymmetry() {
        let cfg = MieConfig::default();
        let res = mie_mono(0.01, &cfg).unwrap();
        assert!((res.g - 0.000789).abs() < 1e-3, "g = {}", res.g);
    }

    #[test]
    fn micron_particle_asymmetry() {
        let cfg = MieConfig::default();
        let res = mie_mono(1.0, &cfg).unwrap();
        assert!((res.g - 0.95).abs() < 0.05, "g = {}", res.g);
    }

    #[test]
    fn g_matches_tabulated_asymmetry() {
        let cfg = MieConfig::default();
        for d in [0.1, 0.5, 1.0] {
            let res = mie_mono(d, &cfg).unwrap();
            let g_tab = PhaseModel::Tabulated(res.phase.clone()).asymmetry().unwrap();
            assert!((res.g - g_tab).abs() < 1e-4, "d={d}: series {} vs table {}", res.g, g_tab);
        }
    }

    #[test]
    fn real_index_conserves_energy() {
        let cfg = MieConfig::default();
        for d in [0.05, 0.3, 1.0] {
            let res = mie_mono(d, &cfg).unwrap();
            assert!(res.qext >= res.qsca - 1e-8);
            assert!(res.qsca >= 0.0);
            assert_relative_eq!(res.qext, res.qsca, epsilon = 1e-8, max_relative = 1e-8);
        }
    }

    #[test]
    fn angle_grid_stability() {
        let coarse = MieConfig { n_angles: 181, ..Default::default() };
        let fine = MieConfig { n_angles: 721, ..Default::default() };
        for d in [0.1, 0.5] {
            let g1 = mie_mono(d, &coarse).unwrap().g;
            let g2 = mie_mono(d, &fine).unwrap().g;
            // g comes from the coefficient series, independent of the grid
            assert!((g1 - g2).abs() < 1e-6);
            let t1 = PhaseModel::Tabulated(mie_mono(d, &coarse).unwrap().phase).asymmetry().unwrap();
            let t2 = PhaseModel::Tabulated(mie_mono(d, &fine).unwrap().phase).asymmetry().unwrap();
            assert!((t1 - t2).abs() < 1e-3, "d={d}: {t1} vs {t2}");
        }
    }

    #[test]
    fn poly_degenerates_to_mono() {
        let cfg = MieConfig { diameter_sd: 0.0, diameter_mean: 0.5, ..Default::default() };
        let mono = mie_mono(0.5, &cfg).unwrap();
        let poly = mie_poly(&cfg).unwrap();
        assert_relative_eq!(mono.g, poly.g, epsilon = 1e-12);
        for (a, b) in mono.phase.values.iter().zip(&poly.phase.values) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn poly_reference_asymmetries() {
        // At larger diameters the bulk asymmetry stays near the
        // nominal-diameter value. At d = 0.2 um cross-section weighting
        // (Csca ~ d^6 in this regime) pulls g above the mono value, so
        // only a coarser bound applies there.
        for (d, gref, tol) in [(0.2, 0.33, 0.1), (0.5, 0.84, 0.05), (1.0, 0.95, 0.05)] {
            let cfg = MieConfig {
                diameter_mean: d,
                diameter_sd: 0.1 * d,
                ..Default::default()
            };
            let res = mie_poly(&cfg).unwrap();
            assert!((res.g - gref).abs() < tol, "d={d}: g = {}", res.g);
        }
    }

    #[test]
    fn monotone_in_diameter() {
        let cfg = MieConfig::default();
        let mut prev = -1.0;
        for d in [0.01, 0.1, 0.2, 0.3, 0.5, 1.0] {
            let g = mie_mono(d, &cfg).unwrap().g;
            assert!(g >= prev, "g not monotone at d={d}");
            prev = g;
        }
    }

    #[test]
    fn overflow_guard() {
        let cfg = MieConfig::default();
        assert!(matches!(
            mie_mono(1e5, &cfg),
            Err(MieError::SizeParameterOverflow(_))
        ));
    }
}
