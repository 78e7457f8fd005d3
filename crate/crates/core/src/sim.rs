//! Monte Carlo cosmic-muon generation through the tracking planes and target.
//!
//! Muons start on a generation plane at the height of the top detector, with
//! zenith density proportional to `cos^n(theta) sin(theta)`. Each material
//! passage deflects the track once, at the passage midpoint, by independent
//! XZ- and YZ-projected Gaussian angles of Highland width. Recorded hits are
//! smeared with isotropic Gaussian noise. Events that miss any active area are
//! invalid and discarded.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DetectorPlane, Line3, Segment, TargetGeometry, Vec3};
use crate::par::{self, Exec};
use crate::physics::{self, ScatterParams, DEFAULT_MOMENTUM_MEV};
use crate::rng;

/// Valid events per independently seeded generation chunk.
pub const CHUNK_EVENTS: u64 = 1024;
const ABORT_TRIALS: u64 = 1_000_000;
const MIN_ACCEPTANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum MomentumModel {
    Fixed {
        p_mev: f64,
    },
    /// `dN/dp ~ p^-index` truncated to `[min_mev, max_mev]`.
    PowerLaw {
        index: f64,
        min_mev: f64,
        max_mev: f64,
    },
}

impl Default for MomentumModel {
    fn default() -> Self {
        MomentumModel::Fixed {
            p_mev: DEFAULT_MOMENTUM_MEV,
        }
    }
}

impl MomentumModel {
    pub fn cosmic_power_law() -> Self {
        MomentumModel::PowerLaw {
            index: 2.7,
            min_mev: 1_000.0,
            max_mev: 100_000.0,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            MomentumModel::Fixed { p_mev } => p_mev,
            MomentumModel::PowerLaw {
                index,
                min_mev,
                max_mev,
            } => {
                let u: f64 = rng.random();
                let g = 1.0 - index;
                let (a, b) = (min_mev.powf(g), max_mev.powf(g));
                (a + u * (b - a)).powf(1.0 / g)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            MomentumModel::Fixed { p_mev } if p_mev > 0.0 => Ok(()),
            MomentumModel::PowerLaw {
                index,
                min_mev,
                max_mev,
            } if index != 1.0 && min_mev > 0.0 && max_mev > min_mev => Ok(()),
            _ => Err(Error::Config(format!("invalid momentum model {self:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Plane heights, top to bottom. The upper half measures incoming
    /// tracks, the lower half outgoing tracks.
    pub planes_z: Vec<f64>,
    /// Active half-widths (x, y) of every plane, mm.
    pub half_extent: [f64; 2],
    /// Hit smearing standard deviation, mm.
    pub sigma_mm: f64,
    pub n_events: u64,
    pub momentum: MomentumModel,
    /// `n` in the `cos^n` zenith law; `inf` gives vertical muons only.
    pub zenith_exponent: f64,
    /// Generation plane half-width as a multiple of the detector half-width.
    pub generation_margin: f64,
    /// Shift of the generation plane centre (x, y), mm.
    pub generation_offset: [f64; 2],
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::simulation_preset()
    }
}

impl SimConfig {
    /// Four planes in two groups: 55 mm within a group, 135 mm between
    /// #2 and #3, the target midway.
    pub fn simulation_preset() -> Self {
        SimConfig {
            planes_z: vec![122.5, 67.5, -67.5, -122.5],
            half_extent: [DetectorPlane::DEFAULT_HALF_EXTENT; 2],
            sigma_mm: 0.0,
            n_events: 10_000,
            momentum: MomentumModel::default(),
            zenith_exponent: 2.0,
            generation_margin: 1.5,
            generation_offset: [0.0, 0.0],
            seed: 0,
        }
    }

    /// Eight-plane laboratory layout: the upper group starts 100 mm above
    /// the target, the lower group 64.3 mm below, 52.5 mm between planes of
    /// a group, 0.1 mm resolution.
    pub fn experimental_preset() -> Self {
        let gap = 52.5;
        let upper = (0..4).rev().map(|k| 100.0 + gap * k as f64);
        let lower = (0..4).map(|k| -64.3 - gap * k as f64);
        SimConfig {
            planes_z: upper.chain(lower).collect(),
            sigma_mm: 0.1,
            ..Self::simulation_preset()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.planes_z.len();
        if n < 4 || !n.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "need an even number (>= 4) of planes, got {n}"
            )));
        }
        if self.planes_z.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::Config(
                "plane z positions must strictly decrease".into(),
            ));
        }
        if !(self.half_extent[0] > 0.0 && self.half_extent[1] > 0.0) {
            return Err(Error::Config("plane half extents must be > 0".into()));
        }
        if !(self.sigma_mm >= 0.0 && self.sigma_mm.is_finite()) {
            return Err(Error::Config(format!(
                "sigma must be >= 0, got {}",
                self.sigma_mm
            )));
        }
        if self.n_events == 0 {
            return Err(Error::Config("n_events must be > 0".into()));
        }
        if !(self.zenith_exponent >= 0.0) {
            return Err(Error::Config("zenith exponent must be >= 0".into()));
        }
        if !(self.generation_margin > 0.0) {
            return Err(Error::Config("generation margin must be > 0".into()));
        }
        self.momentum.validate()
    }

    pub fn planes(&self) -> Vec<DetectorPlane> {
        self.planes_z
            .iter()
            .map(|&z| DetectorPlane {
                z,
                half_extent_x: self.half_extent[0],
                half_extent_y: self.half_extent[1],
                sigma: self.sigma_mm,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuonEvent {
    pub id: u64,
    /// Recorded (x, y) on each plane, in plane order.
    pub hits: Vec<(f64, f64)>,
    pub momentum_mev: f64,
    /// Whether the muon crossed any material.
    pub scattered: bool,
}

/// Draws an incoming ray on the generation plane and its momentum.
pub fn sample_muon<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> (Line3, f64) {
    let hx = config.half_extent[0] * config.generation_margin;
    let hy = config.half_extent[1] * config.generation_margin;
    let x = config.generation_offset[0] + hx * (2.0 * rng.random::<f64>() - 1.0);
    let y = config.generation_offset[1] + hy * (2.0 * rng.random::<f64>() - 1.0);
    // cos(theta) has density ~ c^n on [0, 1].
    let u: f64 = rng.random();
    let cos_t = if config.zenith_exponent.is_infinite() {
        1.0
    } else {
        (1.0 - u).powf(1.0 / (config.zenith_exponent + 1.0))
    };
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = 2.0 * PI * rng.random::<f64>();
    let direction = Vec3::new(sin_t * phi.cos(), sin_t * phi.sin(), -cos_t);
    let p = config.momentum.sample(rng);
    let start = Vec3::new(x, y, config.planes_z[0]);
    (
        Line3 {
            point: start,
            direction,
        },
        p,
    )
}

/// Rotates `direction` by projected angles in the XZ and YZ planes.
fn deflect(direction: Vec3, theta_xz: f64, theta_yz: f64) -> Vec3 {
    let down = -direction.z;
    let ax = (direction.x / down).atan() + theta_xz;
    let ay = (direction.y / down).atan() + theta_yz;
    Vec3::new(ax.tan(), ay.tan(), -1.0)
        .normalized()
        .expect("finite deflection")
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn transport_with_segments<R: Rng + ?Sized>(
    ray: &Line3,
    momentum: f64,
    geometry: &TargetGeometry,
    config: &SimConfig,
    rng: &mut R,
) -> (Option<MuonEvent>, Vec<Segment>) {
    let planes = config.planes();
    let n_upper = planes.len() / 2;
    let mut truth = Vec::with_capacity(planes.len());

    for plane in &planes[..n_upper] {
        match ray.at_z(plane.z) {
            Some(p) if plane.contains(p.x, p.y) => truth.push((p.x, p.y)),
            _ => return (None, Vec::new()),
        }
    }

    let segments = geometry.intersect_segments(ray);
    let params = ScatterParams::muon(momentum).expect("validated momentum");
    let mut point = ray.point;
    let mut direction = ray.direction;
    for seg in &segments {
        let here = Line3 { point, direction };
        point = here.at_z(seg.midpoint().z).unwrap_or(point);
        let l_rad = geometry.materials[seg.material].radiation_length;
        let sigma = physics::highland_sigma(&params, seg.length_cm, l_rad);
        let txz = physics::sample_projected_angle(sigma, rng);
        let tyz = physics::sample_projected_angle(sigma, rng);
        direction = deflect(direction, txz, tyz);
    }

    let outgoing = Line3 { point, direction };
    for plane in &planes[n_upper..] {
        match outgoing.at_z(plane.z) {
            Some(p) if plane.contains(p.x, p.y) => truth.push((p.x, p.y)),
            _ => return (None, segments),
        }
    }

    let mut hits = Vec::with_capacity(truth.len());
    for ((x, y), plane) in truth.into_iter().zip(&planes) {
        let sx = x + plane.sigma * gauss(rng);
        let sy = y + plane.sigma * gauss(rng);
        if !plane.contains(sx, sy) {
            return (None, segments);
        }
        hits.push((sx, sy));
    }

    let event = MuonEvent {
        id: 0,
        hits,
        momentum_mev: momentum,
        scattered: !segments.is_empty(),
    };
    (Some(event), segments)
}

/// Carries one muon through the planes and target; `None` for an invalid event.
pub fn transport<R: Rng + ?Sized>(
    ray: &Line3,
    momentum: f64,
    geometry: &TargetGeometry,
    config: &SimConfig,
    rng: &mut R,
) -> Option<MuonEvent> {
    transport_with_segments(ray, momentum, geometry, config, rng).0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub material: String,
    pub center: [f64; 3],
    pub half_size: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialChord {
    pub material: String,
    pub segments: u64,
    pub mean_chord_cm: f64,
}

/// Sidecar written next to every event file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub planes_z: Vec<f64>,
    pub sigma_mm: f64,
    pub seed: u64,
    pub generated: u64,
    pub valid: u64,
    pub acceptance: f64,
    pub config: SimConfig,
    #[serde(default)]
    pub target: Vec<BoxSummary>,
    #[serde(default)]
    pub chords: Vec<MaterialChord>,
}

#[derive(Debug, Clone)]
pub struct EventRun {
    pub events: Vec<MuonEvent>,
    pub summary: RunSummary,
}

struct ChunkResult {
    events: Vec<MuonEvent>,
    generated: u64,
    chord_sum: Vec<f64>,
    chord_n: Vec<u64>,
}

fn run_chunk(
    chunk: u64,
    quota: u64,
    config: &SimConfig,
    geometry: &TargetGeometry,
) -> Result<ChunkResult> {
    let mut rng = rng::stream(config.seed, "muon-sim", chunk);
    let nmat = geometry.materials.len();
    let mut out = ChunkResult {
        events: Vec::with_capacity(quota as usize),
        generated: 0,
        chord_sum: vec![0.0; nmat],
        chord_n: vec![0; nmat],
    };
    while (out.events.len() as u64) < quota {
        let (ray, p) = sample_muon(config, &mut rng);
        out.generated += 1;
        if let (Some(event), segments) =
            transport_with_segments(&ray, p, geometry, config, &mut rng)
        {
            for s in &segments {
                out.chord_sum[s.material] += s.length_cm;
                out.chord_n[s.material] += 1;
            }
            out.events.push(event);
        }
        if out.generated >= ABORT_TRIALS
            && (out.events.len() as f64) < MIN_ACCEPTANCE * out.generated as f64
        {
            return Err(Error::LowAcceptance {
                trials: out.generated,
                valid: out.events.len() as u64,
            });
        }
    }
    Ok(out)
}

/// Generates exactly `config.n_events` valid events.
///
/// Chunk `c` covers valid events `[c * CHUNK_EVENTS, (c + 1) * CHUNK_EVENTS)`
/// and draws from stream `(seed, "muon-sim", c)`, so the output does not
/// depend on the number of threads.
pub fn generate_dataset_events(
    config: &SimConfig,
    geometry: &TargetGeometry,
    exec: Exec,
) -> Result<EventRun> {
    config.validate()?;
    let n = config.n_events;
    let n_chunks = n.div_ceil(CHUNK_EVENTS);
    let chunks = par::map_range(exec, n_chunks as usize, |c| {
        let c = c as u64;
        let quota = CHUNK_EVENTS.min(n - c * CHUNK_EVENTS);
        run_chunk(c, quota, config, geometry)
    });

    let nmat = geometry.materials.len();
    let mut events = Vec::with_capacity(n as usize);
    let mut generated = 0;
    let mut chord_sum = vec![0.0; nmat];
    let mut chord_n = vec![0u64; nmat];
    for chunk in chunks {
        let chunk = chunk?;
        generated += chunk.generated;
        for m in 0..nmat {
            chord_sum[m] += chunk.chord_sum[m];
            chord_n[m] += chunk.chord_n[m];
        }
        events.extend(chunk.events);
    }
    for (i, e) in events.iter_mut().enumerate() {
        e.id = i as u64;
    }

    let summary = RunSummary {
        planes_z: config.planes_z.clone(),
        sigma_mm: config.sigma_mm,
        seed: config.seed,
        generated,
        valid: n,
        acceptance: n as f64 / generated as f64,
        config: config.clone(),
        target: geometry
            .boxes
            .iter()
            .map(|b| BoxSummary {
                material: geometry.materials[b.material].name.clone(),
                center: [b.center.x, b.center.y, b.center.z],
                half_size: [b.half_size.x, b.half_size.y, b.half_size.z],
            })
            .collect(),
        chords: geometry
            .materials
            .iter()
            .enumerate()
            .map(|(m, mat)| MaterialChord {
                material: mat.name.clone(),
                segments: chord_n[m],
                mean_chord_cm: if chord_n[m] > 0 {
                    chord_sum[m] / chord_n[m] as f64
                } else {
                    0.0
                },
            })
            .collect(),
    };
    Ok(EventRun { events, summary })
}
