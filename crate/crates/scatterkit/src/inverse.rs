//! Analysis-by-synthesis estimation of slab scattering parameters.
//!
//! The estimator searches (sigma_t, albedo, phase coefficients) by
//! derivative-free descent on the squared difference of log(I + delta)
//! between observed and synthesized profile sets. delta is drawn from a
//! pool each outer iteration so the optimization alternates its focus
//! between bright peaks and dark tails; samples per pixel follow an
//! ascending schedule. Renders inside one inner loop share a fixed seed
//! (common random numbers), which makes the loss surface deterministic.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fitting::nelder_mead;
use crate::phase::{PhaseError, PhaseModel};
use crate::render::{
    normalize_profile_set, render_set, PixelLine, Profile, ProfileSet, RenderError, SlabScene,
};
use crate::{splitmix64, stream_rng};

#[derive(Debug, thiserror::Error)]
pub enum InverseError {
    #[error("profile shape mismatch")]
    ShapeMismatch,
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Config(String),
}

/// Phase family used for the inversion: the three-degree exponential model
/// or the three-parameter two-term HG reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum InversePhaseFamily {
    #[default]
    Exponential3,
    TwoTermHg,
}

impl InversePhaseFamily {
    pub fn param_count(&self) -> usize {
        3
    }

    fn bounds(&self, coeff_bound: f64) -> Vec<(f64, f64)> {
        match self {
            InversePhaseFamily::Exponential3 => vec![(-coeff_bound, coeff_bound); 3],
            InversePhaseFamily::TwoTermHg => {
                vec![(-0.9999, 0.9999), (-0.9999, 0.9999), (0.0, 1.0)]
            }
        }
    }

    fn build(&self, params: &[f64]) -> Result<PhaseModel, PhaseError> {
        match self {
            InversePhaseFamily::Exponential3 => {
                PhaseModel::exponential(params.to_vec()).normalize()
            }
            InversePhaseFamily::TwoTermHg => {
                PhaseModel::two_term_hg(params[0], params[1], params[2])
            }
        }
    }

    fn init(&self) -> Vec<f64> {
        match self {
            InversePhaseFamily::Exponential3 => vec![0.0, 0.0, 0.0],
            InversePhaseFamily::TwoTermHg => vec![0.0, 0.0, 0.5],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InversionConfig {
    pub family: InversePhaseFamily,
    /// Positive biases for the log loss; drawn uniformly each outer
    /// iteration. Values bracket the normalized intensity scale (mean 1).
    pub delta_pool: Vec<f64>,
    /// Ascending samples-per-pixel schedule.
    pub spp_schedule: Vec<usize>,
    pub sigma_t_max: f64,
    /// Bound on |b_i| for the exponential family.
    pub coeff_bound: f64,
    pub seed: u64,
    pub max_outer_iters: usize,
    /// Nelder-Mead evaluation budget per inner loop.
    pub inner_max_evals: usize,
    /// Advance the spp stage when the best plain-L2 improves by less than
    /// this fraction over `stall_iters` consecutive inner loops.
    pub stall_tol: f64,
    pub stall_iters: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            family: InversePhaseFamily::Exponential3,
            delta_pool: vec![1.0, 0.3, 0.1, 0.03],
            spp_schedule: vec![128, 512, 2048, 8192],
            sigma_t_max: 20.0,
            coeff_bound: 10.0,
            seed: 0,
            max_outer_iters: 40,
            inner_max_evals: 120,
            stall_tol: 0.01,
            stall_iters: 3,
        }
    }
}

impl InversionConfig {
    fn validate(&self) -> Result<(), InverseError> {
        if self.delta_pool.is_empty() || self.delta_pool.iter().any(|d| *d <= 0.0) {
            return Err(InverseError::Config("delta_pool must be nonempty and positive".into()));
        }
        if self.spp_schedule.is_empty() || self.spp_schedule.windows(2).any(|w| w[1] < w[0]) {
            return Err(InverseError::Config("spp_schedule must be nonempty and ascending".into()));
        }
        if self.sigma_t_max <= 0.0 {
            return Err(InverseError::Config("sigma_t_max must be > 0".into()));
        }
        Ok(())
    }
}

/// Known slab and acquisition geometry for the synthetic renders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlabGeometry {
    pub thickness: f64,
    pub beam_radius: f64,
    pub pixel_line: PixelLine,
    pub max_bounces: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossTraceEntry {
    pub iter: usize,
    pub delta: f64,
    pub spp: usize,
    /// Best log-delta loss of the inner loop.
    pub loss: f64,
    /// Plain squared error of the incumbent at this iteration's spp.
    pub l2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InversionReport {
    pub sigma_t_hat: f64,
    pub sigma_s_hat: f64,
    pub phase_params: Vec<f64>,
    pub phase_hat: PhaseModel,
    /// Plain squared error recomputed at the highest spp.
    pub final_l2_fit: f64,
    pub loss_trace: Vec<LossTraceEntry>,
    /// Observed minus synthesized, per profile, at the reported optimum.
    pub residual_profiles: Vec<Vec<f64>>,
}

/// Sum over all profiles and pixels of (log(obs + delta) - log(syn + delta))^2.
pub fn log_loss(observed: &ProfileSet, synthetic: &ProfileSet, delta: f64) -> Result<f64, InverseError> {
    if observed.profiles.len() != synthetic.profiles.len() {
        return Err(InverseError::ShapeMismatch);
    }
    let mut acc = 0.0;
    for (o, s) in observed.profiles.iter().zip(&synthetic.profiles) {
        if o.pixels.len() != s.pixels.len() {
            return Err(InverseError::ShapeMismatch);
        }
        for (a, b) in o.pixels.iter().zip(&s.pixels) {
            let d = (a + delta).ln() - (b + delta).ln();
            acc += d * d;
        }
    }
    Ok(acc)
}

/// Plain squared error of Eq-style least squares.
pub fn plain_l2(observed: &ProfileSet, synthetic: &ProfileSet) -> Result<f64, InverseError> {
    if observed.profiles.len() != synthetic.profiles.len() {
        return Err(InverseError::ShapeMismatch);
    }
    let mut acc = 0.0;
    for (o, s) in observed.profiles.iter().zip(&synthetic.profiles) {
        if o.pixels.len() != s.pixels.len() {
            return Err(InverseError::ShapeMismatch);
        }
        for (a, b) in o.pixels.iter().zip(&s.pixels) {
            acc += (a - b) * (a - b);
        }
    }
    Ok(acc)
}

struct Synthesizer<'a> {
    geometry: &'a SlabGeometry,
    lights: &'a [[f64; 3]],
    family: InversePhaseFamily,
}

impl Synthesizer<'_> {
    fn synth(&self, params: &[f64], spp: usize, render_seed: u64) -> Result<ProfileSet, InverseError> {
        let (sigma_t, alpha) = (params[0], params[1]);
        let phase = self.family.build(&params[2..])?;
        let base = SlabScene {
            thickness: self.geometry.thickness,
            sigma_t,
            sigma_s: alpha * sigma_t,
            phase,
            light_dir: [0.0, 0.0, 1.0],
            beam_radius: self.geometry.beam_radius,
            pixel_line: self.geometry.pixel_line.clone(),
            spp,
            seed: render_seed,
            max_bounces: self.geometry.max_bounces,
        };
        Ok(render_set(&base, self.lights)?)
    }
}

fn clamp_with_penalty(params: &[f64], bounds: &[(f64, f64)]) -> (Vec<f64>, f64) {
    let mut penalty = 0.0;
    let clamped = params
        .iter()
        .zip(bounds)
        .map(|(p, (lo, hi))| {
            let c = p.clamp(*lo, *hi);
            penalty += 1e3 * (p - c).abs();
            c
        })
        .collect();
    (clamped, penalty)
}

/// Beer-Lambert starting guess for sigma_t from the most axis-aligned
/// back-lit profile peak, referenced to the brightest pixel of the set.
fn init_sigma_t(observed: &ProfileSet, thickness: f64, sigma_t_max: f64) -> f64 {
    let global_max = observed
        .profiles
        .iter()
        .flat_map(|p| &p.pixels)
        .cloned()
        .fold(0.0f64, f64::max);
    let mut best: Option<(f64, f64)> = None; // (dz, peak)
    for (light, profile) in observed.lights.iter().zip(&observed.profiles) {
        if light[2] < 0.0 {
            let peak = profile.pixels.iter().cloned().fold(0.0f64, f64::max);
            if best.map_or(true, |(dz, _)| light[2] < dz) {
                best = Some((light[2], peak));
            }
        }
    }
    match best {
        Some((_, peak)) if peak > 0.0 && global_max > 0.0 => {
            (-(peak / global_max).ln() / thickness).clamp(0.1, 0.8 * sigma_t_max)
        }
        _ => 1.0,
    }
}

pub fn invert(
    observed: &ProfileSet,
    geometry: &SlabGeometry,
    cfg: &InversionConfig,
) -> Result<InversionReport, InverseError> {
    cfg.validate()?;
    if observed.profiles.is_empty() || observed.profiles.len() != observed.lights.len() {
        return Err(InverseError::ShapeMismatch);
    }
    let synthesizer = Synthesizer {
        geometry,
        lights: &observed.lights,
        family: cfg.family,
    };
    let mut bounds = vec![(1e-3, cfg.sigma_t_max), (0.0, 1.0)];
    bounds.extend(cfg.family.bounds(cfg.coeff_bound));

    let mut incumbent: Vec<f64> = {
        let mut p = vec![init_sigma_t(observed, geometry.thickness, cfg.sigma_t_max), 0.5];
        p.extend(cfg.family.init());
        p
    };
    let mut incumbent_loss = f64::INFINITY;
    // best parameters seen per delta value
    let mut delta_incumbents: HashMap<u64, (Vec<f64>, f64)> = HashMap::new();
    let mut rng = stream_rng(cfg.seed, 0xD0);
    let mut stage = 0usize;
    let mut stall_count = 0usize;
    let mut best_l2_this_stage = f64::INFINITY;
    let mut trace = Vec::new();
    let mut simplex_extent = 1.0f64;

    for outer in 0..cfg.max_outer_iters {
        let delta = cfg.delta_pool[rng.gen_range(0..cfg.delta_pool.len())];
        let spp = cfg.spp_schedule[stage];
        let render_seed = splitmix64(cfg.seed ^ (outer as u64 + 1));

        let objective = |params: &[f64]| -> f64 {
            let (clamped, penalty) = clamp_with_penalty(params, &bounds);
            match synthesizer
                .synth(&clamped, spp, render_seed)
                .and_then(|syn| log_loss(observed, &syn, delta))
            {
                Ok(loss) if loss.is_finite() => loss + penalty,
                _ => f64::INFINITY,
            }
        };

        // coarse-to-fine: later (higher-spp) stages refine locally instead
        // of re-exploring, so inner restarts do not discard convergence
        let stage_extent = match stage {
            0 => 1.0,
            1 => 0.6,
            _ => 0.3,
        };
        let steps: Vec<f64> = {
            let mut s = vec![0.25 * incumbent[0].max(0.5), 0.1];
            match cfg.family {
                InversePhaseFamily::Exponential3 => s.extend([0.5, 0.5, 0.5]),
                InversePhaseFamily::TwoTermHg => s.extend([0.2, 0.2, 0.15]),
            }
            s.iter().map(|v| v * simplex_extent * stage_extent).collect()
        };
        let mut simplex = vec![incumbent.clone()];
        for (d, step) in steps.iter().enumerate() {
            let mut v = incumbent.clone();
            v[d] += step;
            simplex.push(v);
        }
        let (best, best_loss, _) = nelder_mead(objective, simplex, cfg.inner_max_evals, 1e-6);
        let (best, _) = clamp_with_penalty(&best, &bounds);

        if !best_loss.is_finite() {
            // render failure: restart from the incumbent with halved extent
            simplex_extent *= 0.5;
            continue;
        }
        simplex_extent = 1.0;

        let entry = delta_incumbents
            .entry(delta.to_bits())
            .or_insert_with(|| (best.clone(), f64::INFINITY));
        if best_loss < entry.1 {
            *entry = (best.clone(), best_loss);
        }
        incumbent = best.clone();
        incumbent_loss = best_loss;

        // stage progress measured on the delta-independent plain L2
        let syn = synthesizer.synth(&incumbent, spp, render_seed)?;
        let l2 = plain_l2(observed, &syn)?;
        trace.push(LossTraceEntry { iter: outer, delta, spp, loss: best_loss, l2 });

        if l2 < best_l2_this_stage * (1.0 - cfg.stall_tol) {
            best_l2_this_stage = l2;
            stall_count = 0;
        } else {
            stall_count += 1;
        }
        if stall_count >= cfg.stall_iters {
            if stage + 1 < cfg.spp_schedule.len() {
                stage += 1;
                stall_count = 0;
                best_l2_this_stage = f64::INFINITY;
            } else {
                break;
            }
        }
    }
    let _ = incumbent_loss;

    // the log loss shares its global optimum with the plain L2 for every
    // delta; pick the delta-incumbent with the lowest L2 at the final spp
    let final_spp = *cfg.spp_schedule.last().unwrap();
    let final_seed = splitmix64(cfg.seed ^ 0xF1A7);
    let mut candidates: Vec<Vec<f64>> = delta_incumbents.into_values().map(|(p, _)| p).collect();
    if candidates.is_empty() {
        candidates.push(incumbent.clone());
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut best_final: Option<(Vec<f64>, f64, ProfileSet)> = None;
    for cand in candidates {
        let syn = synthesizer.synth(&cand, final_spp, final_seed)?;
        let l2 = plain_l2(observed, &syn)?;
        if best_final.as_ref().map_or(true, |(_, bl, _)| l2 < *bl) {
            best_final = Some((cand, l2, syn));
        }
    }
    let (params, final_l2_fit, syn) = best_final.unwrap();

    // Deterministic polish at the top spp. Extinction trades off against
    // phase forwardness along a curved, nearly flat valley, so a joint
    // Nelder-Mead run both collapses prematurely and settles at a
    // noise-displaced extinction. Instead scan extinction on a grid,
    // optimizing only albedo and phase per slice (each slice is well
    // conditioned once the trade-off channel is cut), locate the valley
    // floor by quadratic interpolation of the three best slice losses, and
    // re-optimize the remaining parameters at that fixed extinction. A
    // mid-pool bias pair balances bright-pixel and dim-tail constraints.
    let polished = {
        let mut pool: Vec<f64> = cfg.delta_pool.clone();
        pool.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = &pool[(pool.len().saturating_sub(1)) / 2..=pool.len() / 2];
        let objective_at = |p: &[f64]| -> f64 {
            let (clamped, penalty) = clamp_with_penalty(p, &bounds);
            match synthesizer.synth(&clamped, final_spp, final_seed) {
                Ok(s) => {
                    let mut total = 0.0;
                    for &d in mid {
                        match log_loss(observed, &s, d) {
                            Ok(l) if l.is_finite() => total += l,
                            _ => return f64::INFINITY,
                        }
                    }
                    total + penalty
                }
                Err(_) => f64::INFINITY,
            }
        };
        let slice = |sigma: f64, q0: &[f64], rounds: &[f64], evals: usize| -> (Vec<f64>, f64) {
            let slice_obj = |q: &[f64]| -> f64 {
                let mut p = vec![sigma];
                p.extend_from_slice(q);
                objective_at(&p)
            };
            let mut best_q = q0.to_vec();
            let mut best_l = slice_obj(&best_q);
            for &extent in rounds {
                let mut simplex = vec![best_q.clone()];
                for d in 0..best_q.len() {
                    let mut v = best_q.clone();
                    v[d] += extent * if d == 0 { 0.15 } else { 1.0 };
                    simplex.push(v);
                }
                let (b, bl, _) = nelder_mead(&slice_obj, simplex, evals, 1e-8);
                if bl < best_l {
                    best_q = b;
                    best_l = bl;
                }
            }
            (best_q, best_l)
        };

        let anchor = init_sigma_t(observed, geometry.thickness, cfg.sigma_t_max);
        let lo = (0.6 * params[0].min(anchor)).max(bounds[0].0);
        let hi = (1.4 * params[0].max(anchor)).min(bounds[0].1);
        let fresh: Vec<f64> = {
            let mut q = vec![0.7];
            q.extend(cfg.family.init());
            q
        };
        let n_coarse = 7usize;
        let step = (hi - lo) / (n_coarse - 1) as f64;
        let mut slices: Vec<(f64, Vec<f64>, f64)> = Vec::new();
        for k in 0..n_coarse {
            let sigma = lo + step * k as f64;
            let (q, l) = slice(sigma, &fresh, &[1.0, 0.3], 150);
            slices.push((sigma, q, l));
        }
        let coarse_best = slices
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .2.partial_cmp(&b.1 .2).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let (center_sigma, center_q, _) = slices[coarse_best].clone();
        // refine with half-step neighbours warm-started from the best slice
        for offset in [-0.5 * step, 0.5 * step] {
            let sigma = (center_sigma + offset).clamp(bounds[0].0, bounds[0].1);
            let (q, l) = slice(sigma, &center_q, &[0.5], 150);
            slices.push((sigma, q, l));
        }
        slices.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let best_idx = slices
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .2.partial_cmp(&b.1 .2).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        // parabola through the best slice and its neighbours
        let sigma_star = if best_idx > 0 && best_idx + 1 < slices.len() {
            let (x0, _, l0) = &slices[best_idx - 1];
            let (x1, _, l1) = &slices[best_idx];
            let (x2, _, l2) = &slices[best_idx + 1];
            let denom = l0 - 2.0 * l1 + l2;
            if denom.abs() > 1e-12 {
                let h = 0.5 * (x2 - x0);
                (x1 + 0.5 * h * (l0 - l2) / denom).clamp(*x0, *x2)
            } else {
                *x1
            }
        } else {
            slices[best_idx].0
        };
        let (q_star, _) = slice(sigma_star, &slices[best_idx].1.clone(), &[0.4, 0.15], 200);
        let mut p = vec![sigma_star];
        p.extend(q_star);
        let (p, _) = clamp_with_penalty(&p, &bounds);
        p
    };
    // keep the polish only if it lowers the final plain L2
    let (params, final_l2_fit, syn) = {
        let syn_p = synthesizer.synth(&polished, final_spp, final_seed)?;
        let l2_p = plain_l2(observed, &syn_p)?;
        if l2_p < final_l2_fit {
            (polished, l2_p, syn_p)
        } else {
            (params, final_l2_fit, syn)
        }
    };
    let residual_profiles = observed
        .profiles
        .iter()
        .zip(&syn.profiles)
        .map(|(o, s)| o.pixels.iter().zip(&s.pixels).map(|(a, b)| a - b).collect())
        .collect();
    let phase_hat = cfg.family.build(&params[2..])?;
    Ok(InversionReport {
        sigma_t_hat: params[0],
        sigma_s_hat: params[0] * params[1],
        phase_params: params[2..].to_vec(),
        phase_hat,
        final_l2_fit,
        loss_trace: trace,
        residual_profiles,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    light: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    profiles: Vec<ManifestEntry>,
}

/// Loads profiles listed in a JSON manifest (`{"profiles": [{"file": ...,
/// "light": [x, y, z]}, ...]}`), validates them, and returns the
/// set-normalized ProfileSet. Paths are resolved relative to the manifest.
pub fn ingest_profiles(manifest_path: impl AsRef<Path>) -> Result<ProfileSet, InverseError> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| InverseError::Manifest(e.to_string()))?;
    if manifest.profiles.is_empty() {
        return Err(InverseError::Manifest("manifest lists no profiles".into()));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut profiles = Vec::new();
    let mut lights = Vec::new();
    for entry in &manifest.profiles {
        let path = dir.join(&entry.file);
        if !path.exists() {
            return Err(InverseError::Manifest(format!("missing profile file {}", entry.file)));
        }
        let norm = (entry.light.iter().map(|c| c * c).sum::<f64>()).sqrt();
        if !((norm - 1.0).abs() < 1e-6) {
            return Err(InverseError::Manifest(format!(
                "light direction for {} is not unit length",
                entry.file
            )));
        }
        profiles.push(Profile::from_csv_path(&path)?);
        lights.push(entry.light);
    }
    Ok(normalize_profile_set(profiles, lights)?)
}

/// Writes a set as one CSV per profile plus a manifest, the inverse of
/// `ingest_profiles`.
pub fn export_profiles(set: &ProfileSet, dir: impl AsRef<Path>) -> Result<std::path::PathBuf, InverseError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (k, (profile, light)) in set.profiles.iter().zip(&set.lights).enumerate() {
        let name = format!("profile_{k:02}.csv");
        profile.write_csv_path(dir.join(&name), set.norm_scale)?;
        entries.push(ManifestEntry { file: name, light: *light });
    }
    let manifest = Manifest { profiles: entries };
    let path = dir.join("lights.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())?;
    Ok(path)
}
