//! Fits parametric phase families to tabulated targets by minimizing the
//! sum of absolute differences of log densities (log-SAD), with multi-start
//! Nelder-Mead.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::phase::{legendre, Basis, PhaseError, PhaseModel, TabulatedPhase};

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("target must be strictly positive on its grid (index {0})")]
    NonPositiveTarget(usize),
    #[error("target must be normalized")]
    UnnormalizedTarget,
    #[error(transparent)]
    Phase(#[from] PhaseError),
}

/// Families the fitter can search over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitFamily {
    /// exp(b0 + sum b_i mu^i), degree M, M free parameters.
    Exponential(usize),
    /// sum a_i mu^i, degree N; a0 eliminated by normalization.
    RawPolynomial(usize),
    Hg,
    TwoTermHg,
}

const COEFF_BOUND: f64 = 10.0;
const G_BOUND: f64 = 0.9999;
const G_INIT: f64 = 0.95;
const MAX_EVALS: usize = 20_000;
const SIMPLEX_TOL: f64 = 1e-8;
const NEGATIVITY_PENALTY: f64 = 1e6;

impl FitFamily {
    pub fn param_count(&self) -> usize {
        match self {
            FitFamily::Exponential(m) => *m,
            FitFamily::RawPolynomial(n) => *n,
            FitFamily::Hg => 1,
            FitFamily::TwoTermHg => 3,
        }
    }

    pub fn label(&self) -> String {
        match self {
            FitFamily::Exponential(m) => format!("exponential{m}"),
            FitFamily::RawPolynomial(n) => format!("polynomial{n}"),
            FitFamily::Hg => "hg".into(),
            FitFamily::TwoTermHg => "two-term-hg".into(),
        }
    }

    /// Box bounds per free parameter.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        match self {
            FitFamily::Exponential(m) => vec![(-COEFF_BOUND, COEFF_BOUND); *m],
            FitFamily::RawPolynomial(n) => vec![(-COEFF_BOUND, COEFF_BOUND); *n],
            FitFamily::Hg => vec![(-G_BOUND, G_BOUND)],
            FitFamily::TwoTermHg => vec![(-G_BOUND, G_BOUND), (-G_BOUND, G_BOUND), (0.0, 1.0)],
        }
    }

    fn init_bounds(&self) -> Vec<(f64, f64)> {
        match self {
            FitFamily::Hg => vec![(-G_INIT, G_INIT)],
            FitFamily::TwoTermHg => vec![(-G_INIT, G_INIT), (-G_INIT, G_INIT), (0.0, 1.0)],
            _ => self.bounds(),
        }
    }

    /// Builds the normalized model for an in-bounds parameter vector.
    pub fn build(&self, params: &[f64]) -> Result<PhaseModel, PhaseError> {
        match self {
            FitFamily::Exponential(_) => {
                PhaseModel::exponential(params.to_vec()).normalize()
            }
            FitFamily::RawPolynomial(_) => {
                // a0 from the normalization constraint; odd moments vanish
                let tail: f64 = params
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| (i + 1) % 2 == 0)
                    .map(|(i, a)| a / (i as f64 + 2.0))
                    .sum();
                let a0 = (1.0 - 4.0 * std::f64::consts::PI * tail) / (4.0 * std::f64::consts::PI);
                let mut coeffs = vec![a0];
                coeffs.extend_from_slice(params);
                PhaseModel::raw_polynomial(coeffs).normalize()
            }
            FitFamily::Hg => PhaseModel::hg(params[0]),
            FitFamily::TwoTermHg => PhaseModel::two_term_hg(params[0], params[1], params[2]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitProblem {
    pub target: TabulatedPhase,
    pub family: FitFamily,
    pub restarts: usize,
    pub seed: u64,
}

impl FitProblem {
    pub fn new(target: TabulatedPhase, family: FitFamily, restarts: usize, seed: u64) -> Self {
        Self { target, family, restarts, seed }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub family: FitFamily,
    pub best_params: Vec<f64>,
    pub best_model: PhaseModel,
    pub sad: f64,
    pub per_restart_losses: Vec<f64>,
    pub failure_reason: Option<String>,
}

use crate::{splitmix64, stream_rng};

/// log-SAD of a candidate model against precomputed target log densities.
fn sad_of(model: &PhaseModel, mu: &[f64], log_target: &[f64]) -> f64 {
    mu.iter()
        .zip(log_target)
        .map(|(m, lt)| (model.log_eval(*m).unwrap() - lt).abs())
        .sum()
}

struct Objective<'a> {
    family: FitFamily,
    mu: &'a [f64],
    log_target: &'a [f64],
    bounds: Vec<(f64, f64)>,
}

impl Objective<'_> {
    fn eval(&self, params: &[f64]) -> f64 {
        // out-of-bounds handled by clamp plus penalty so the simplex can
        // slide back inside
        let mut penalty = 0.0;
        let clamped: Vec<f64> = params
            .iter()
            .zip(&self.bounds)
            .map(|(p, (lo, hi))| {
                let c = p.clamp(*lo, *hi);
                penalty += 1e3 * (p - c).abs();
                c
            })
            .collect();
        let model = match self.family.build(&clamped) {
            Ok(m) => m,
            Err(_) => return f64::INFINITY,
        };
        let loss = match &model {
            PhaseModel::RawPolynomial { coeffs, positive, .. } => {
                let eval = |mu: f64| {
                    let mut acc = 0.0;
                    for a in coeffs.iter().rev() {
                        acc = acc * mu + a;
                    }
                    acc
                };
                if *positive {
                    sad_of(&model, self.mu, self.log_target)
                } else {
                    // soft barrier proportional to the worst violation
                    let min = (0..=2000)
                        .map(|k| eval(-1.0 + k as f64 / 1000.0))
                        .fold(f64::INFINITY, f64::min);
                    let clamped_sad: f64 = self
                        .mu
                        .iter()
                        .zip(self.log_target)
                        .map(|(m, lt)| (eval(*m).max(1e-12).ln() - lt).abs())
                        .sum();
                    clamped_sad + NEGATIVITY_PENALTY * min.abs()
                }
            }
            _ => sad_of(&model, self.mu, self.log_target),
        };
        loss + penalty
    }
}

/// Plain Nelder-Mead on an explicit initial simplex. Deterministic;
/// terminates on simplex diameter < 1e-8 or 20 000 evaluations.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    initial_simplex: Vec<Vec<f64>>,
    max_evals: usize,
    tol: f64,
) -> (Vec<f64>, f64, usize) {
    let n = initial_simplex[0].len();
    assert_eq!(initial_simplex.len(), n + 1);
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut evals = 0usize;
    let mut simplex: Vec<(Vec<f64>, f64)> = initial_simplex
        .into_iter()
        .map(|x| {
            evals += 1;
            let fx = f(&x);
            (x, fx)
        })
        .collect();
    loop {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if diameter < tol || evals >= max_evals {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        evals += 1;
        let fr = f(&reflect);
        if fr < simplex[0].1 {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + gamma * (c - w))
                .collect();
            evals += 1;
            let fe = f(&expand);
            simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflect, fr);
        } else {
            let contract: Vec<f64> = if fr < worst.1 {
                centroid.iter().zip(&reflect).map(|(c, r)| c + rho * (r - c)).collect()
            } else {
                centroid.iter().zip(&worst.0).map(|(c, w)| c + rho * (w - c)).collect()
            };
            evals += 1;
            let fc = f(&contract);
            if fc < worst.1.min(fr) {
                simplex[n] = (contract, fc);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0.clone();
                for (x, fx) in simplex.iter_mut().skip(1) {
                    for (xi, bi) in x.iter_mut().zip(&best) {
                        *xi = bi + sigma * (*xi - bi);
                    }
                    evals += 1;
                    *fx = f(x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let (x, fx) = simplex.swap_remove(0);
    (x, fx, evals)
}

/// Latin-hypercube sample of n+1 simplex vertices inside `bounds`.
fn lhs_simplex(rng: &mut ChaCha8Rng, bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let n = bounds.len();
    let rows = n + 1;
    let mut strata: Vec<Vec<usize>> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut perm: Vec<usize> = (0..rows).collect();
        for i in (1..rows).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        strata.push(perm);
    }
    (0..rows)
        .map(|r| {
            (0..n)
                .map(|d| {
                    let (lo, hi) = bounds[d];
                    let u: f64 = rng.gen();
                    lo + (hi - lo) * (strata[d][r] as f64 + u) / rows as f64
                })
                .collect()
        })
        .collect()
}

/// Linear least-squares of log p_target against [1, Q_1, ..., Q_M]; returns
/// (b_1..b_M). This convex surrogate seeds the first restart for the
/// exponential family.
fn exponential_warm_start(
    basis: Basis,
    degree: usize,
    mu: &[f64],
    log_target: &[f64],
) -> Vec<f64> {
    let cols = degree + 1;
    let design = |m: f64, j: usize| -> f64 {
        if j == 0 {
            1.0
        } else {
            match basis {
                Basis::Monomial => m.powi(j as i32),
                Basis::Legendre => legendre(j, m),
            }
        }
    };
    // normal equations
    let mut ata = vec![vec![0.0; cols]; cols];
    let mut atb = vec![0.0; cols];
    for (m, lt) in mu.iter().zip(log_target) {
        for i in 0..cols {
            let di = design(*m, i);
            atb[i] += di * lt;
            for j in 0..cols {
                ata[i][j] += di * design(*m, j);
            }
        }
    }
    // Gaussian elimination with partial pivoting
    for col in 0..cols {
        let mut pivot = col;
        for r in col + 1..cols {
            if ata[r][col].abs() > ata[pivot][col].abs() {
                pivot = r;
            }
        }
        ata.swap(col, pivot);
        atb.swap(col, pivot);
        let diag = ata[col][col];
        if diag.abs() < 1e-14 {
            continue;
        }
        for r in 0..cols {
            if r == col {
                continue;
            }
            let factor = ata[r][col] / diag;
            for c in col..cols {
                ata[r][c] -= factor * ata[col][c];
            }
            atb[r] -= factor * atb[col];
        }
    }
    (1..cols)
        .map(|i| {
            let d = ata[i][i];
            if d.abs() < 1e-14 { 0.0 } else { (atb[i] / d).clamp(-COEFF_BOUND, COEFF_BOUND) }
        })
        .collect()
}

fn prepare(problem: &FitProblem) -> Result<(Vec<f64>, Vec<f64>), FitError> {
    if !problem.target.is_normalized() {
        return Err(FitError::UnnormalizedTarget);
    }
    let mu = problem.target.mu.clone();
    let mut log_target = Vec::with_capacity(mu.len());
    for (i, v) in problem.target.values.iter().enumerate() {
        if *v <= 0.0 {
            return Err(FitError::NonPositiveTarget(i));
        }
        log_target.push(v.ln());
    }
    Ok((mu, log_target))
}

/// Multi-start fit; deterministic given the seed. `extra_inits` appends
/// warm-started restarts (used for family-nesting comparisons).
pub fn fit_with_inits(problem: &FitProblem, extra_inits: &[Vec<f64>]) -> Result<FitReport, FitError> {
    let (mu, log_target) = prepare(problem)?;
    let objective = Objective {
        family: problem.family,
        mu: &mu,
        log_target: &log_target,
        bounds: problem.family.bounds(),
    };
    let warm: Option<Vec<f64>> = match problem.family {
        FitFamily::Exponential(m) => Some(exponential_warm_start(Basis::Monomial, m, &mu, &log_target)),
        _ => None,
    };

    let total = problem.restarts + extra_inits.len();
    let runs: Vec<(Vec<f64>, f64)> = (0..total)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(problem.seed, r as u64);
            let simplex = if r >= problem.restarts {
                // warm start around a supplied vertex
                let center = extra_inits[r - problem.restarts].clone();
                simplex_around(&center, 0.1)
            } else if r == 0 && warm.is_some() {
                simplex_around(warm.as_ref().unwrap(), 0.1)
            } else {
                lhs_simplex(&mut rng, &problem.family.init_bounds())
            };
            let (x, fx, _) = nelder_mead(|p| objective.eval(p), simplex, MAX_EVALS, SIMPLEX_TOL);
            (x, fx)
        })
        .collect();

    let per_restart_losses: Vec<f64> = runs.iter().map(|(_, f)| *f).collect();
    let clamp_build = |params: &[f64]| -> Result<(Vec<f64>, PhaseModel), FitError> {
        let clamped: Vec<f64> = params
            .iter()
            .zip(problem.family.bounds())
            .map(|(p, (lo, hi))| p.clamp(lo, hi))
            .collect();
        let model = problem.family.build(&clamped)?;
        Ok((clamped, model))
    };
    // the fit's answer is the lowest-loss candidate across restarts; if
    // that candidate is a polynomial with a negative lobe the fit failed,
    // regardless of poorer positive local optima found by other restarts
    let mut overall: Option<(Vec<f64>, PhaseModel, f64)> = None;
    for (params, loss) in &runs {
        let (clamped, model) = clamp_build(params)?;
        if overall.as_ref().map_or(true, |(_, _, l)| loss < l) {
            overall = Some((clamped, model, *loss));
        }
    }
    let (clamped, best_model, _) = overall.expect("at least one restart");
    let mut failure_reason = None;
    if let PhaseModel::RawPolynomial { positive, .. } = &best_model {
        if !positive {
            failure_reason = Some("negative density".to_string());
        }
    }
    // recompute the reported loss independently from the final model
    let sad = if failure_reason.is_none() {
        sad_of(&best_model, &mu, &log_target)
    } else {
        f64::INFINITY
    };
    Ok(FitReport {
        family: problem.family,
        best_params: clamped,
        best_model,
        sad,
        per_restart_losses,
        failure_reason,
    })
}

fn simplex_around(center: &[f64], step: f64) -> Vec<Vec<f64>> {
    let n = center.len();
    let mut simplex = vec![center.to_vec()];
    for d in 0..n {
        let mut v = center.to_vec();
        v[d] += step;
        simplex.push(v);
    }
    simplex
}

pub fn fit(problem: &FitProblem) -> Result<FitReport, FitError> {
    fit_with_inits(problem, &[])
}

/// Full cross-product of fits; individual failures land in the report cell,
/// never abort the matrix. Cell (i, j) fits `families[j]` to `targets[i]`.
pub fn benchmark(
    targets: &[(String, TabulatedPhase)],
    families: &[FitFamily],
    restarts: usize,
    seed: u64,
) -> Vec<Vec<Result<FitReport, FitError>>> {
    targets
        .par_iter()
        .enumerate()
        .map(|(i, (_, target))| {
            families
                .iter()
                .enumerate()
                .map(|(j, fam)| {
                    let cell_seed = splitmix64(seed ^ ((i as u64) << 32 | j as u64));
                    let problem = FitProblem::new(target.clone(), *fam, restarts, cell_seed);
                    fit(&problem)
                })
                .collect()
        })
        .collect()
}

/// Writes the benchmark matrix as `target,family,sad,failure` CSV rows.
pub fn write_benchmark_csv<W: std::io::Write>(
    mut w: W,
    targets: &[(String, TabulatedPhase)],
    families: &[FitFamily],
    matrix: &[Vec<Result<FitReport, FitError>>],
) -> std::io::Result<()> {
    writeln!(w, "target,family,sad,failure")?;
    for (i, row) in matrix.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            let label = &targets[i].0;
            let fam = families[j].label();
            match cell {
                Ok(rep) => {
                    let failure = rep.failure_reason.clone().unwrap_or_default();
                    if rep.failure_reason.is_some() {
                        writeln!(w, "{label},{fam},,{failure}")?;
                    } else {
                        writeln!(w, "{label},{fam},{:.9e},", rep.sad)?;
                    }
                }
                Err(e) => writeln!(w, "{label},{fam},,{e}")?,
            }
        }
    }
    Ok(())
}
