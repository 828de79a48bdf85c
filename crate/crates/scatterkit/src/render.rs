//! Forward Monte Carlo rendering of 1-D intensity profiles.
//!
//! A collimated beam strikes a homogeneous slab occupying z in
//! [0, thickness] (mm); an orthographic camera on the z < 0 side collects
//! radiance leaving the z = 0 face along -z through a horizontal line of
//! pixels at y = 0. Boundaries are index matched: no refraction or Fresnel
//! terms, so the estimator isolates the scattering model.
//!
//! Radiance exiting toward the camera is estimated by next-event splatting
//! at every scattering event, weighted by the phase density toward the
//! camera and the boundary transmittance exp(-sigma_t * depth). The
//! never-scattered beam reaches the delta-aperture camera only when the
//! light direction is parallel to the axis; that term is splatted
//! deterministically per packet.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::phase::{DirectionSampler, PhaseError, PhaseModel};
use crate::{splitmix64, stream_rng};

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("invalid scene: {0}")]
    Config(String),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("no signal")]
    NoSignal,
    #[error("profile file: {0}")]
    BadProfile(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Horizontal line of square pixels centered on the beam axis.
/// Pixel i is centered at x = offset + (i - (count-1)/2) * pitch, with a
/// box response of width `pitch` in both x and y. Units mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelLine {
    pub count: usize,
    pub pitch: f64,
    pub offset: f64,
}

impl Default for PixelLine {
    fn default() -> Self {
        Self { count: 257, pitch: 0.05, offset: 0.0 }
    }
}

impl PixelLine {
    pub fn center_x(&self, i: usize) -> f64 {
        self.offset + (i as f64 - (self.count as f64 - 1.0) / 2.0) * self.pitch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabScene {
    /// Slab thickness, mm.
    pub thickness: f64,
    /// Extinction coefficient, 1/mm.
    pub sigma_t: f64,
    /// Scattering coefficient, 1/mm; sigma_s <= sigma_t.
    pub sigma_s: f64,
    pub phase: PhaseModel,
    /// Propagation direction of the beam (unit vector). dz > 0 enters the
    /// camera-facing z = 0 face (front lighting); dz < 0 enters the back.
    pub light_dir: [f64; 3],
    /// Top-hat beam radius, mm.
    pub beam_radius: f64,
    pub pixel_line: PixelLine,
    pub spp: usize,
    pub seed: u64,
    pub max_bounces: usize,
}

impl SlabScene {
    pub fn albedo(&self) -> f64 {
        if self.sigma_t == 0.0 { 0.0 } else { self.sigma_s / self.sigma_t }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.thickness > 0.0) {
            return Err(RenderError::Config("thickness must be > 0".into()));
        }
        if self.sigma_t < 0.0 {
            return Err(RenderError::Config("sigma_t must be >= 0".into()));
        }
        if self.sigma_s < 0.0 || self.sigma_s > self.sigma_t {
            return Err(RenderError::Config(format!(
                "need 0 <= sigma_s <= sigma_t, got sigma_s={} sigma_t={}",
                self.sigma_s, self.sigma_t
            )));
        }
        let norm = (self.light_dir.iter().map(|c| c * c).sum::<f64>()).sqrt();
        if !((norm - 1.0).abs() < 1e-6) {
            return Err(RenderError::Config(format!("light_dir norm {norm} != 1")));
        }
        if self.light_dir[2] == 0.0 {
            return Err(RenderError::Config("light_dir must enter a slab face (dz != 0)".into()));
        }
        if self.beam_radius <= 0.0 {
            return Err(RenderError::Config("beam_radius must be > 0".into()));
        }
        if self.pixel_line.count == 0 || self.pixel_line.pitch <= 0.0 {
            return Err(RenderError::Config("pixel_line must have pixels with positive pitch".into()));
        }
        if self.spp == 0 {
            return Err(RenderError::Config("spp must be >= 1".into()));
        }
        if self.sigma_s > 0.0 && !self.phase.is_normalized() {
            return Err(RenderError::Config("phase model must be normalized".into()));
        }
        Ok(())
    }

    /// Stable digest of the full scene description.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("scene serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_toml_str(s: &str) -> Result<Self, RenderError> {
        toml::from_str(s).map_err(|e| RenderError::Config(e.to_string()))
    }

    pub fn from_toml_path(path: impl AsRef<Path>) -> Result<Self, RenderError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scene serializes")
    }
}

/// Fractions of launched packet weight by fate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderStats {
    /// Escaped through the camera-facing z = 0 face.
    pub escaped_front: f64,
    /// Escaped through the z = thickness face.
    pub escaped_back: f64,
    pub absorbed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub pixels: Vec<f64>,
    /// Per-pixel Monte Carlo variance of the pixel estimate.
    pub variance: Vec<f64>,
    pub scene_hash: String,
    pub line: PixelLine,
    pub stats: RenderStats,
}

/// A set of profiles, one per light direction, jointly normalized so the
/// mean over all pixels of all profiles is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub profiles: Vec<Profile>,
    pub lights: Vec<[f64; 3]>,
    /// Scale that was applied to reach mean 1.
    pub norm_scale: f64,
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn ortho_basis(d: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let a = if d[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = normalize3([
        d[1] * a[2] - d[2] * a[1],
        d[2] * a[0] - d[0] * a[2],
        d[0] * a[1] - d[1] * a[0],
    ]);
    let e2 = [
        d[1] * e1[2] - d[2] * e1[1],
        d[2] * e1[0] - d[0] * e1[2],
        d[0] * e1[1] - d[1] * e1[0],
    ];
    (e1, e2)
}

/// Rotates `dir` by deflection cosine `mu` and azimuth `phi` about itself.
fn scatter_direction(dir: [f64; 3], mu: f64, phi: f64) -> [f64; 3] {
    let (e1, e2) = ortho_basis(dir);
    let s = (1.0 - mu * mu).max(0.0).sqrt();
    let (cp, sp) = (phi.cos(), phi.sin());
    normalize3([
        mu * dir[0] + s * (cp * e1[0] + sp * e2[0]),
        mu * dir[1] + s * (cp * e1[1] + sp * e2[1]),
        mu * dir[2] + s * (cp * e1[2] + sp * e2[2]),
    ])
}

const RR_START: usize = 30;
const RR_SURVIVE: f64 = 0.95;
const CAMERA_PARALLEL_TOL: f64 = 1e-9;
const VARIANCE_CHUNKS: usize = 64;

struct ChunkAccum {
    pixels: Vec<f64>,
    stats: RenderStats,
}

struct Splatter<'a> {
    line: &'a PixelLine,
    accum: &'a mut [f64],
}

impl Splatter<'_> {
    fn splat(&mut self, x: f64, y: f64, value: f64) {
        if y.abs() > self.line.pitch * 0.5 {
            return;
        }
        let rel = (x - self.line.offset) / self.line.pitch + (self.line.count as f64 - 1.0) / 2.0;
        let i = rel.round();
        if i < 0.0 || i >= self.line.count as f64 {
            return;
        }
        self.accum[i as usize] += value;
    }
}

fn trace_packet(
    scene: &SlabScene,
    sampler: Option<&DirectionSampler>,
    rng: &mut rand_chacha::ChaCha8Rng,
    splatter: &mut Splatter,
    stats: &mut RenderStats,
) {
    let light = normalize3(scene.light_dir);
    let entry_z = if light[2] > 0.0 { 0.0 } else { scene.thickness };
    // uniform point on a disk perpendicular to the beam, aimed at the
    // center of the entry face
    let (e1, e2) = ortho_basis(light);
    let r = scene.beam_radius * rng.gen::<f64>().sqrt();
    let ang = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
    let off = [
        r * (ang.cos() * e1[0] + ang.sin() * e2[0]),
        r * (ang.cos() * e1[1] + ang.sin() * e2[1]),
        r * (ang.cos() * e1[2] + ang.sin() * e2[2]),
    ];
    let t_plane = -off[2] / light[2];
    let mut pos = [
        off[0] + t_plane * light[0],
        off[1] + t_plane * light[1],
        entry_z,
    ];
    let mut dir = light;
    let mut weight = 1.0f64;
    let albedo = scene.albedo();

    // deterministic never-scattered term: reaches the delta-direction
    // camera only when the beam is parallel to the axis and back-lit
    if -dir[2] >= 1.0 - CAMERA_PARALLEL_TOL {
        let s_exit = pos[2] / -dir[2];
        let exit = [pos[0] + s_exit * dir[0], pos[1] + s_exit * dir[1]];
        splatter.splat(exit[0], exit[1], weight * (-scene.sigma_t * s_exit).exp());
    }

    let mut bounce = 0usize;
    loop {
        if scene.sigma_t == 0.0 {
            if dir[2] < 0.0 {
                stats.escaped_front += weight;
            } else {
                stats.escaped_back += weight;
            }
            return;
        }
        let s = -(1.0 - rng.gen::<f64>()).ln() / scene.sigma_t;
        let t_exit = if dir[2] > 0.0 {
            (scene.thickness - pos[2]) / dir[2]
        } else if dir[2] < 0.0 {
            pos[2] / -dir[2]
        } else {
            f64::INFINITY
        };
        if s >= t_exit {
            if dir[2] < 0.0 {
                stats.escaped_front += weight;
            } else {
                stats.escaped_back += weight;
            }
            return;
        }
        pos = [pos[0] + s * dir[0], pos[1] + s * dir[1], pos[2] + s * dir[2]];
        stats.absorbed += weight * (1.0 - albedo);
        weight *= albedo;
        if weight == 0.0 {
            return;
        }
        // next-event splat toward the camera through the front face
        let mu_cam = -dir[2];
        let p_cam = scene.phase.eval(mu_cam).unwrap_or(0.0);
        splatter.splat(pos[0], pos[1], weight * p_cam * (-scene.sigma_t * pos[2]).exp());

        let sampler = sampler.expect("sampler present when sigma_s > 0");
        let (mu, phi) = sampler.sample(rng.gen(), rng.gen());
        dir = scatter_direction(dir, mu, phi);
        bounce += 1;
        if bounce >= scene.max_bounces {
            return;
        }
        // roulette kills are compensated by survivor reweighting, so the
        // discarded weight is not booked as absorption
        if bounce > RR_START {
            if rng.gen::<f64>() < RR_SURVIVE {
                weight /= RR_SURVIVE;
            } else {
                return;
            }
        }
    }
}

/// Renders the intensity profile. Deterministic given the scene seed and
/// independent of thread count: packets use per-index RNG streams and
/// chunks are reduced in fixed order.
pub fn render(scene: &SlabScene) -> Result<Profile, RenderError> {
    scene.validate()?;
    let sampler = if scene.sigma_s > 0.0 { Some(scene.phase.sampler()?) } else { None };
    let n_packets = scene.spp * scene.pixel_line.count;
    let n_chunks = VARIANCE_CHUNKS.min(n_packets);
    let count = scene.pixel_line.count;

    let chunks: Vec<ChunkAccum> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * n_packets / n_chunks;
            let hi = (c + 1) * n_packets / n_chunks;
            let mut pixels = vec![0.0; count];
            let mut stats = RenderStats::default();
            for packet in lo..hi {
                let mut rng = stream_rng(scene.seed, packet as u64);
                let mut splatter = Splatter { line: &scene.pixel_line, accum: &mut pixels };
                trace_packet(scene, sampler.as_ref(), &mut rng, &mut splatter, &mut stats);
            }
            ChunkAccum { pixels, stats }
        })
        .collect();

    let area = scene.pixel_line.pitch * scene.pixel_line.pitch;
    let scale = 1.0 / (n_packets as f64 * area);
    let mut pixels = vec![0.0; count];
    let mut stats = RenderStats::default();
    for chunk in &chunks {
        for (p, v) in pixels.iter_mut().zip(&chunk.pixels) {
            *p += v;
        }
        stats.escaped_front += chunk.stats.escaped_front;
        stats.escaped_back += chunk.stats.escaped_back;
        stats.absorbed += chunk.stats.absorbed;
    }
    for p in &mut pixels {
        *p *= scale;
    }
    stats.escaped_front /= n_packets as f64;
    stats.escaped_back /= n_packets as f64;
    stats.absorbed /= n_packets as f64;

    // variance of the pixel estimate from the spread of chunk estimates
    let mut variance = vec![0.0; count];
    if n_chunks > 1 {
        for i in 0..count {
            let mean = pixels[i];
            let mut var = 0.0;
            for chunk in &chunks {
                let est = chunk.pixels[i] * scale * n_chunks as f64;
                var += (est - mean) * (est - mean);
            }
            variance[i] = var / (n_chunks as f64 * (n_chunks - 1) as f64);
        }
    }

    Ok(Profile {
        pixels,
        variance,
        scene_hash: scene.hash(),
        line: scene.pixel_line.clone(),
        stats,
    })
}

/// Renders one profile per light direction and applies the joint set
/// normalization (mean over all pixels of all profiles equals 1).
pub fn render_set(scene_base: &SlabScene, lights: &[[f64; 3]]) -> Result<ProfileSet, RenderError> {
    if lights.is_empty() {
        return Err(RenderError::Config("need at least one light".into()));
    }
    let profiles: Vec<Profile> = lights
        .iter()
        .enumerate()
        .map(|(k, light)| {
            let scene = SlabScene {
                light_dir: *light,
                seed: splitmix64(scene_base.seed ^ (k as u64).wrapping_mul(0x9e37_79b9)),
                ..scene_base.clone()
            };
            render(&scene)
        })
        .collect::<Result<_, _>>()?;
    normalize_profile_set(profiles, lights.to_vec())
}

/// Scales all profiles jointly so the grand pixel mean is 1.
pub fn normalize_profile_set(
    mut profiles: Vec<Profile>,
    lights: Vec<[f64; 3]>,
) -> Result<ProfileSet, RenderError> {
    let total: f64 = profiles.iter().flat_map(|p| &p.pixels).sum();
    let n: usize = profiles.iter().map(|p| p.pixels.len()).sum();
    let mean = total / n as f64;
    if !(mean > 0.0) {
        return Err(RenderError::NoSignal);
    }
    let scale = 1.0 / mean;
    for p in &mut profiles {
        for v in &mut p.pixels {
            *v *= scale;
        }
        for v in &mut p.variance {
            *v *= scale * scale;
        }
    }
    Ok(ProfileSet { profiles, lights, norm_scale: scale })
}

impl Profile {
    /// Writes the `pixel_index,x_mm,intensity,variance` CSV format with
    /// `#` header lines carrying the scene hash and normalization scale.
    pub fn write<W: Write>(&self, mut w: W, norm_scale: f64) -> Result<(), RenderError> {
        writeln!(w, "# scene_hash={}", self.scene_hash)?;
        writeln!(w, "# norm_scale={norm_scale:.17e}")?;
        writeln!(w, "pixel_index,x_mm,intensity,variance")?;
        for (i, (p, v)) in self.pixels.iter().zip(&self.variance).enumerate() {
            writeln!(w, "{i},{:.6},{p:.17e},{v:.17e}", self.line.center_x(i))?;
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>, norm_scale: f64) -> Result<(), RenderError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f, norm_scale)
    }

    /// Reads a profile CSV. Pixel pitch and offset are reconstructed from
    /// the x column; NaN or negative intensities are rejected with the
    /// offending row number.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, RenderError> {
        let mut scene_hash = String::new();
        let mut header_seen = false;
        let mut xs: Vec<f64> = Vec::new();
        let mut pixels = Vec::new();
        let mut variance = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("scene_hash=") {
                    scene_hash = v.to_string();
                }
                continue;
            }
            if !header_seen {
                if line != "pixel_index,x_mm,intensity,variance" {
                    return Err(RenderError::BadProfile(format!(
                        "expected profile header, got '{line}'"
                    )));
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(RenderError::BadProfile(format!("row {}: expected 4 fields", lineno + 1)));
            }
            let x: f64 = fields[1].trim().parse().map_err(|_| {
                RenderError::BadProfile(format!("row {}: bad x", lineno + 1))
            })?;
            let p: f64 = fields[2].trim().parse().map_err(|_| {
                RenderError::BadProfile(format!("row {}: bad intensity", lineno + 1))
            })?;
            let v: f64 = fields[3].trim().parse().map_err(|_| {
                RenderError::BadProfile(format!("row {}: bad variance", lineno + 1))
            })?;
            if !p.is_finite() {
                return Err(RenderError::BadProfile(format!("row {}: non-finite intensity", lineno + 1)));
            }
            if p < 0.0 {
                return Err(RenderError::BadProfile(format!("row {}: negative intensity", lineno + 1)));
            }
            xs.push(x);
            pixels.push(p);
            variance.push(v.max(0.0));
        }
        if pixels.is_empty() {
            return Err(RenderError::BadProfile("empty profile".into()));
        }
        let pitch = if xs.len() > 1 { xs[1] - xs[0] } else { 1.0 };
        let offset = (xs[0] + xs[xs.len() - 1]) / 2.0;
        Ok(Profile {
            line: PixelLine { count: pixels.len(), pitch, offset },
            pixels,
            variance,
            scene_hash,
            stats: RenderStats::default(),
        })
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, RenderError> {
        let f = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base_scene() -> SlabScene {
        SlabScene {
            thickness: 1.0,
            sigma_t: 2.0,
            sigma_s: 1.8,
            phase: PhaseModel::exponential(vec![2.0, 0.5, -0.3]).normalize().unwrap(),
            light_dir: [0.0, 0.0, -1.0],
            beam_radius: 0.2,
            pixel_line: PixelLine { count: 33, pitch: 0.05, offset: 0.0 },
            spp: 2048,
            seed: 1,
            max_bounces: 1000,
        }
    }

    fn peak(profile: &Profile) -> f64 {
        profile.pixels[profile.pixels.len() / 2]
    }

    #[test]
    fn beer_lambert_transmission() {
        // pure absorber, back-lit at normal incidence: the direct term is
        // deterministic per packet, so the ratio to the vacuum render is
        // exactly exp(-sigma_t * thickness)
        let mut scene = base_scene();
        scene.sigma_s = 0.0;
        scene.sigma_t = 2.0;
        scene.spp = 4096;
        let attenuated = render(&scene).unwrap();
        scene.sigma_t = 0.0;
        let vacuum = render(&scene).unwrap();
        let ratio = peak(&attenuated) / peak(&vacuum);
        assert_relative_eq!(ratio, (-2.0f64).exp(), max_relative = 5e-3);
        assert_relative_eq!(ratio, 0.13534, max_relative = 5e-3);
    }

    #[test]
    fn vacuum_profile() {
        let mut scene = base_scene();
        scene.sigma_t = 0.0;
        scene.sigma_s = 0.0;
        let profile = render(&scene).unwrap();
        // off-beam pixels identically zero, on-beam transmission factor 1
        for (i, p) in profile.pixels.iter().enumerate() {
            let x = profile.line.center_x(i);
            if x.abs() > scene.beam_radius + scene.pixel_line.pitch {
                assert_eq!(*p, 0.0, "pixel {i}");
            }
        }
        assert!(peak(&profile) > 0.0);
    }

    #[test]
    fn seed_determinism() {
        let scene = base_scene();
        let a = render(&scene).unwrap();
        let b = render(&scene).unwrap();
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.variance, b.variance);
        let mut other = base_scene();
        other.seed = 2;
        let c = render(&other).unwrap();
        assert_ne!(a.pixels, c.pixels);
    }

    #[test]
    fn two_seeds_agree_within_error() {
        let mut scene = base_scene();
        scene.sigma_t = 6.0;
        scene.sigma_s = 5.4;
        scene.spp = 4096;
        let a = render(&scene).unwrap();
        scene.seed = 99;
        let b = render(&scene).unwrap();
        for i in 0..a.pixels.len() {
            let sigma = (a.variance[i] + b.variance[i]).sqrt();
            let diff = (a.pixels[i] - b.pixels[i]).abs();
            assert!(
                diff <= 4.0 * sigma + 1e-12,
                "pixel {i}: diff {diff} vs 4 sigma {}",
                4.0 * sigma
            );
        }
    }

    #[test]
    fn energy_conserved_at_unit_albedo() {
        let mut scene = base_scene();
        scene.sigma_t = 5.0;
        scene.sigma_s = 5.0;
        scene.spp = 512;
        let profile = render(&scene).unwrap();
        let escaped = profile.stats.escaped_front + profile.stats.escaped_back;
        assert!((escaped - 1.0).abs() < 0.02, "escaped {escaped}");
        assert!(profile.stats.absorbed < 1e-9);
    }

    #[test]
    fn sigma_t_monotone_backlit_peak() {
        let mut scene = base_scene();
        scene.spp = 8192;
        let thin = render(&scene).unwrap();
        scene.sigma_t = 6.0;
        scene.sigma_s = 5.4;
        let thick = render(&scene).unwrap();
        let sigma = (thin.variance[thin.pixels.len() / 2] + thick.variance[thick.pixels.len() / 2]).sqrt();
        assert!(
            peak(&thin) - peak(&thick) > 4.0 * sigma,
            "thin {} thick {} sigma {}",
            peak(&thin),
            peak(&thick),
            sigma
        );
    }

    #[test]
    fn mirrored_lights_give_mirrored_profiles() {
        let theta: f64 = 0.5;
        let mut scene = base_scene();
        scene.spp = 8192;
        scene.light_dir = [theta.sin(), 0.0, -theta.cos()];
        let a = render(&scene).unwrap();
        scene.light_dir = [-theta.sin(), 0.0, -theta.cos()];
        scene.seed = 77;
        let b = render(&scene).unwrap();
        let n = a.pixels.len();
        for i in 0..n {
            let j = n - 1 - i;
            let sigma = (a.variance[i] + b.variance[j]).sqrt();
            let diff = (a.pixels[i] - b.pixels[j]).abs();
            assert!(diff <= 4.0 * sigma + 1e-12, "pixel {i}: diff {diff} sigma {sigma}");
        }
    }

    #[test]
    fn config_errors() {
        let mut scene = base_scene();
        scene.sigma_s = 3.0;
        assert!(matches!(render(&scene), Err(RenderError::Config(_))));
        let mut scene = base_scene();
        scene.light_dir = [0.0, 1.0, 0.0];
        assert!(matches!(render(&scene), Err(RenderError::Config(_))));
        let mut scene = base_scene();
        scene.phase = PhaseModel::exponential(vec![1.0]);
        assert!(matches!(render(&scene), Err(RenderError::Config(_))));
    }

    #[test]
    fn set_normalization() {
        let scene = base_scene();
        let lights = [[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]];
        let set = render_set(&scene, &lights).unwrap();
        let total: f64 = set.profiles.iter().flat_map(|p| &p.pixels).sum();
        let n: usize = set.profiles.iter().map(|p| p.pixels.len()).sum();
        assert_relative_eq!(total / n as f64, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn set_normalization_scale_invariance() {
        // doubling source power leaves the normalized set unchanged
        let scene = base_scene();
        let profile = render(&scene).unwrap();
        let mut doubled = profile.clone();
        for v in &mut doubled.pixels {
            *v *= 2.0;
        }
        let s1 = normalize_profile_set(vec![profile], vec![scene.light_dir]).unwrap();
        let s2 = normalize_profile_set(vec![doubled], vec![scene.light_dir]).unwrap();
        for (a, b) in s1.profiles[0].pixels.iter().zip(&s2.profiles[0].pixels) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        assert_relative_eq!(s2.norm_scale, s1.norm_scale / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn single_profile_mean_two_scales_by_half() {
        let mut profile = render(&base_scene()).unwrap();
        let n = profile.pixels.len() as f64;
        let mean: f64 = profile.pixels.iter().sum::<f64>() / n;
        for v in &mut profile.pixels {
            *v *= 2.0 / mean;
        }
        let set = normalize_profile_set(vec![profile], vec![[0.0, 0.0, -1.0]]).unwrap();
        assert_relative_eq!(set.norm_scale, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn all_zero_set_rejected() {
        let zero = Profile {
            pixels: vec![0.0; 8],
            variance: vec![0.0; 8],
            scene_hash: "x".into(),
            line: PixelLine { count: 8, pitch: 0.05, offset: 0.0 },
            stats: RenderStats::default(),
        };
        assert!(matches!(
            normalize_profile_set(vec![zero], vec![[0.0, 0.0, 1.0]]),
            Err(RenderError::NoSignal)
        ));
    }

    #[test]
    fn profile_csv_roundtrip() {
        let profile = render(&base_scene()).unwrap();
        let mut buf = Vec::new();
        profile.write(&mut buf, 1.0).unwrap();
        let back = Profile::from_reader(buf.as_slice()).unwrap();
        assert_eq!(back.pixels.len(), profile.pixels.len());
        assert_eq!(back.scene_hash, profile.scene_hash);
        for (a, b) in back.pixels.iter().zip(&profile.pixels) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn profile_csv_rejects_nan() {
        let text = "pixel_index,x_mm,intensity,variance\n0,0.0,NaN,0.0\n";
        let err = Profile::from_reader(text.as_bytes());
        match err {
            Err(RenderError::BadProfile(msg)) => assert!(msg.contains("row 2"), "{msg}"),
            other => panic!("expected BadProfile, got {other:?}"),
        }
    }

    #[test]
    fn scene_toml_roundtrip() {
        let scene = base_scene();
        let text = scene.to_toml_string();
        let back = SlabScene::from_toml_str(&text).unwrap();
        assert_eq!(back, scene);
        assert_eq!(back.hash(), scene.hash());
    }
}
