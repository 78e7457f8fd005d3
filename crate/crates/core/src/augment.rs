//! Stamping augmentation and training-set construction.
//!
//! Stamping cuts small square patches at random from a style image (normally a
//! noisy, experiment-like reconstruction) and pastes randomly chosen patches
//! over random positions of each simulated image, overwriting the pixels
//! underneath. Later stamps win where stamps overlap, and patches are drawn
//! with replacement both when building the library and when stamping.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TargetGeometry;
use crate::image::ScatterImage;
use crate::io;
use crate::par::{self, Exec};
use crate::poca::{self, ReconConfig};
use crate::rng;
use crate::sim::{self, SimConfig};

pub const PATCH_SIZE: usize = 5;
pub const DEFAULT_PATCHES: usize = 1000;
pub const DEFAULT_STAMPS: usize = 500;
pub const GROUND_TRUTH_EVENTS: u64 = 600_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchLibrary {
    pub patch_size: usize,
    /// `patch_size^2` values per patch, row-major, patches back to back.
    pub values: Vec<f32>,
    pub source_id: String,
    pub seed: u64,
}

impl PatchLibrary {
    pub fn len(&self) -> usize {
        self.values.len() / (self.patch_size * self.patch_size)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        let n = self.patch_size * self.patch_size;
        &self.values[i * n..(i + 1) * n]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.values.len());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.patch_size as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(path: &Path, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::format(path, "truncated patch library header"));
        }
        let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let patch_size = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if count == 0 || patch_size == 0 || bytes.len() != 8 + 4 * count * patch_size * patch_size {
            return Err(Error::format(
                path,
                "patch library length does not match its header",
            ));
        }
        let values: Vec<f32> = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::format(path, "patch values outside [0, 1]"));
        }
        Ok(PatchLibrary {
            patch_size,
            values,
            source_id: path.display().to_string(),
            seed: 0,
        })
    }
}

/// Samples `n_patches` square patches with uniformly random top-left corners.
pub fn build_patch_library(
    source: &ScatterImage,
    source_id: &str,
    n_patches: usize,
    patch_size: usize,
    seed: u64,
) -> Result<PatchLibrary> {
    if patch_size == 0 || n_patches == 0 {
        return Err(Error::Config("patch size and count must be > 0".into()));
    }
    if source.width < patch_size || source.height < patch_size {
        return Err(Error::Dimension(format!(
            "{}x{} style image is smaller than a {patch_size}x{patch_size} patch",
            source.width, source.height
        )));
    }
    let mut rng = rng::stream(seed, "patch-library", 0);
    let mut values = Vec::with_capacity(n_patches * patch_size * patch_size);
    for _ in 0..n_patches {
        let r0 = rng.random_range(0..=(source.height - patch_size) as u64) as usize;
        let c0 = rng.random_range(0..=(source.width - patch_size) as u64) as usize;
        for r in r0..r0 + patch_size {
            values.extend_from_slice(
                &source.data[r * source.width + c0..r * source.width + c0 + patch_size],
            );
        }
    }
    Ok(PatchLibrary {
        patch_size,
        values,
        source_id: source_id.to_string(),
        seed,
    })
}

/// Region overwritten by one stamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StampPlacement {
    pub patch: usize,
    pub row: usize,
    pub col: usize,
}

/// The draws `stamp` makes for `(library, image size, n_stamps, seed)`.
pub fn stamp_placements(
    library: &PatchLibrary,
    width: usize,
    height: usize,
    n_stamps: usize,
    seed: u64,
) -> Result<Vec<StampPlacement>> {
    let p = library.patch_size;
    if library.is_empty() {
        return Err(Error::Config("empty patch library".into()));
    }
    if width < p || height < p {
        return Err(Error::Dimension(format!(
            "{width}x{height} image is smaller than a {p}x{p} patch"
        )));
    }
    let mut rng = rng::stream(seed, "stamp", 0);
    Ok((0..n_stamps)
        .map(|_| StampPlacement {
            patch: rng.random_range(0..library.len() as u64) as usize,
            row: rng.random_range(0..=(height - p) as u64) as usize,
            col: rng.random_range(0..=(width - p) as u64) as usize,
        })
        .collect())
}

/// Pastes `n_stamps` library patches over random positions of `image`.
pub fn stamp(
    image: &ScatterImage,
    library: &PatchLibrary,
    n_stamps: usize,
    seed: u64,
) -> Result<ScatterImage> {
    let p = library.patch_size;
    let mut out = image.clone();
    for s in stamp_placements(library, image.width, image.height, n_stamps, seed)? {
        let patch = library.patch(s.patch);
        for r in 0..p {
            let dst = (s.row + r) * out.width + s.col;
            out.data[dst..dst + p].copy_from_slice(&patch[r * p..(r + 1) * p]);
        }
    }
    out.meta.stamped = true;
    out.meta.stamp_seed = Some(seed);
    Ok(out)
}

/// Sets a random `rate` fraction of pixels to full intensity.
pub fn salt_noise(image: &mut ScatterImage, rate: f64, seed: u64) {
    let mut rng = rng::stream(seed, "salt", 0);
    for v in &mut image.data {
        if rng.random::<f64>() < rate {
            *v = 1.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Narrow band around the experimental event count.
    #[serde(rename = "dataset-1")]
    Narrow,
    /// Wide range with density biased toward low counts.
    #[serde(rename = "dataset-2")]
    Focused,
    /// Uniform over the whole range.
    #[serde(rename = "dataset-3")]
    Uniform,
}

impl StrategyKind {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(StrategyKind::Narrow),
            2 => Ok(StrategyKind::Focused),
            3 => Ok(StrategyKind::Uniform),
            _ => Err(Error::Config(format!(
                "strategy must be 1, 2 or 3, got {n}"
            ))),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            StrategyKind::Narrow => "dataset-1",
            StrategyKind::Focused => "dataset-2",
            StrategyKind::Uniform => "dataset-3",
        }
    }

    /// Human-readable event-level law, recorded in the manifest.
    pub fn description(self) -> String {
        match self {
            StrategyKind::Narrow => format!("uniform integer [{}, {}]", NARROW.0, NARROW.1),
            StrategyKind::Focused => format!(
                "{}% log-uniform [{}, {}] + {}% uniform integer [{}, {}]",
                (FOCUSED_LOW_FRACTION * 100.0).round(),
                FOCUSED_LOW.0,
                FOCUSED_LOW.1,
                ((1.0 - FOCUSED_LOW_FRACTION) * 100.0).round(),
                FOCUSED_HIGH.0,
                FOCUSED_HIGH.1
            ),
            StrategyKind::Uniform => format!("uniform integer [{}, {}]", FULL.0, FULL.1),
        }
    }
}

pub const NARROW: (u64, u64) = (5_000, 20_000);
pub const FOCUSED_LOW: (u64, u64) = (10_000, 100_000);
pub const FOCUSED_HIGH: (u64, u64) = (100_000, 600_000);
pub const FOCUSED_LOW_FRACTION: f64 = 0.7;
pub const FULL: (u64, u64) = (10_000, 600_000);

/// 0.1 to 1.0 mm in 0.1 mm steps.
pub fn default_sigma_sweep() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingStrategy {
    pub kind: StrategyKind,
    pub n_base: usize,
    pub sigmas_mm: Vec<f64>,
}

impl Default for SamplingStrategy {
    fn default() -> Self {
        SamplingStrategy::new(StrategyKind::Focused, 10)
    }
}

impl SamplingStrategy {
    pub fn new(kind: StrategyKind, n_base: usize) -> Self {
        SamplingStrategy {
            kind,
            n_base,
            sigmas_mm: default_sigma_sweep(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_base == 0 {
            return Err(Error::Config("n_base must be > 0".into()));
        }
        if self.sigmas_mm.is_empty() || self.sigmas_mm.iter().any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return Err(Error::Config(
                "sigma sweep must be non-empty with values >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn n_records(&self) -> usize {
        self.n_base * self.sigmas_mm.len()
    }
}

/// Uniform integer in `[lo, hi]` at quantile `u` in `[0, 1)`.
fn uniform_at(u: f64, lo: u64, hi: u64) -> u64 {
    (lo + (u * (hi - lo + 1) as f64) as u64).min(hi)
}

/// `n_base` event counts drawn from the strategy's law.
///
/// Draws are quantile-stratified: draw `i` takes `u = (i + v) / n` with `v`
/// uniform in `[0, 1)`, maps it through the law's inverse CDF, and the list is
/// then shuffled. Each level still follows the law, while the empirical
/// quantiles of even a short list track the analytic ones. Only IEEE basic
/// arithmetic and the portable `libm` exp/log are involved, so the output is
/// the same on every platform.
pub fn sample_event_levels(strategy: &SamplingStrategy, seed: u64) -> Vec<u64> {
    let mut rng = rng::stream(seed, "event-levels", 0);
    let n = strategy.n_base;
    let mut levels: Vec<u64> = (0..n)
        .map(|i| {
            let v = (rng.random::<u64>() >> 11) as f64 / (1u64 << 53) as f64;
            let u = ((i as f64 + v) / n as f64).min(1.0 - f64::EPSILON);
            match strategy.kind {
                StrategyKind::Narrow => uniform_at(u, NARROW.0, NARROW.1),
                StrategyKind::Uniform => uniform_at(u, FULL.0, FULL.1),
                StrategyKind::Focused if u < FOCUSED_LOW_FRACTION => {
                    let w = u / FOCUSED_LOW_FRACTION;
                    let (lo, hi) = (FOCUSED_LOW.0 as f64, FOCUSED_LOW.1 as f64);
                    let v = libm::round(lo * libm::exp(w * libm::log(hi / lo))) as u64;
                    v.clamp(FOCUSED_LOW.0, FOCUSED_LOW.1)
                }
                StrategyKind::Focused => {
                    let w = (u - FOCUSED_LOW_FRACTION) / (1.0 - FOCUSED_LOW_FRACTION);
                    uniform_at(w, FOCUSED_HIGH.0, FOCUSED_HIGH.1)
                }
            }
        })
        .collect();
    levels.shuffle(&mut rng);
    levels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StyleSource {
    /// A deliberately degraded simulation: few events, coarse resolution and
    /// salt noise.
    Degraded {
        events: u64,
        sigma_mm: f64,
        salt_rate: f64,
    },
    /// Any external image of the training size.
    Image { path: PathBuf },
}

impl Default for StyleSource {
    fn default() -> Self {
        StyleSource::Degraded {
            events: 10_000,
            sigma_mm: 1.0,
            salt_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StampingOptions {
    pub n_patches: usize,
    pub n_stamps: usize,
    pub style: StyleSource,
}

impl Default for StampingOptions {
    fn default() -> Self {
        StampingOptions {
            n_patches: DEFAULT_PATCHES,
            n_stamps: DEFAULT_STAMPS,
            style: StyleSource::default(),
        }
    }
}

/// Everything needed to rebuild a dataset byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub label_events: u64,
    pub strategy: SamplingStrategy,
    pub stamping: Option<StampingOptions>,
    pub sim: SimConfig,
    pub recon: ReconConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub input: String,
    pub label: String,
    pub event_count: u64,
    pub sigma_mm: f64,
    pub stamped: bool,
    pub stamp_seed: Option<u64>,
}

pub const MANIFEST_MAGIC: &str = "# mst-dataset-manifest v1";
pub const MANIFEST_COLUMNS: &str = "input,label,event_count,sigma_mm,stamped,stamp_seed";

/// Header block of `# key = value` lines, then one CSV record per sample.
/// Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub header: Vec<(String, String)>,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn encode(&self) -> String {
        let mut out = String::new();
        out.push_str(MANIFEST_MAGIC);
        out.push('\n');
        for (k, v) in &self.header {
            let _ = writeln!(out, "# {k} = {v}");
        }
        out.push_str(MANIFEST_COLUMNS);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.input,
                r.label,
                r.event_count,
                r.sigma_mm,
                r.stamped,
                r.stamp_seed.map(|s| s.to_string()).unwrap_or_default()
            );
        }
        out
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, message: String| Error::Parse {
            path: path.into(),
            line,
            message,
        };
        match lines.next() {
            Some((_, l)) if l.trim() == MANIFEST_MAGIC => {}
            _ => return Err(bad(1, "missing manifest magic line".into())),
        }
        let mut m = DatasetManifest::default();
        let mut seen_columns = false;
        for (i, raw) in lines {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if !seen_columns {
                if let Some(kv) = line.strip_prefix('#') {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| bad(i + 1, format!("bad header line {line:?}")))?;
                    m.header.push((k.trim().to_string(), v.trim().to_string()));
                    continue;
                }
                if line != MANIFEST_COLUMNS {
                    return Err(bad(
                        i + 1,
                        format!("expected column line {MANIFEST_COLUMNS:?}"),
                    ));
                }
                seen_columns = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(i + 1, format!("expected 6 fields, got {}", f.len())));
            }
            let num = |s: &str| {
                s.parse::<u64>()
                    .map_err(|e| bad(i + 1, format!("{s:?}: {e}")))
            };
            m.records.push(ManifestRecord {
                input: f[0].to_string(),
                label: f[1].to_string(),
                event_count: num(f[2])?,
                sigma_mm: f[3]
                    .parse()
                    .map_err(|e| bad(i + 1, format!("{:?}: {e}", f[3])))?,
                stamped: f[4]
                    .parse()
                    .map_err(|e| bad(i + 1, format!("{:?}: {e}", f[4])))?,
                stamp_seed: if f[5].is_empty() {
                    None
                } else {
                    Some(num(f[5])?)
                },
            });
        }
        if !seen_columns {
            return Err(bad(text.lines().count(), "missing column line".into()));
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.encode().as_bytes())
    }

    /// Checks that every referenced image exists, parses and that all
    /// records share one label.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        let mut labels = self.records.iter().map(|r| r.label.as_str());
        if let Some(first) = labels.next() {
            if labels.any(|l| l != first) {
                return Err(Error::Config(
                    "manifest records use different labels".into(),
                ));
            }
            io::read_image(&dir.join(first))?;
        }
        for r in &self.records {
            io::read_image(&dir.join(&r.input))?;
        }
        Ok(())
    }
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const LABEL_FILE: &str = "label.msti";
pub const STYLE_FILE: &str = "style.msti";
pub const LIBRARY_FILE: &str = "patches.bin";
pub const SPEC_FILE: &str = "dataset.toml";

/// Simulates and reconstructs one image.
pub fn simulate_image(
    sim: &SimConfig,
    recon: &ReconConfig,
    geometry: &TargetGeometry,
    exec: Exec,
) -> Result<ScatterImage> {
    let run = sim::generate_dataset_events(sim, geometry, exec)?;
    let mut image = poca::reconstruct(&run.events, &sim.planes_z, recon, exec)?.image;
    image.meta.sigma_mm = sim.sigma_mm;
    image.meta.seed = sim.seed;
    Ok(image)
}

fn style_image(
    spec: &DatasetSpec,
    opts: &StampingOptions,
    geometry: &TargetGeometry,
    exec: Exec,
) -> Result<(ScatterImage, String)> {
    match &opts.style {
        StyleSource::Image { path } => Ok((io::read_image(path)?, path.display().to_string())),
        StyleSource::Degraded {
            events,
            sigma_mm,
            salt_rate,
        } => {
            let sim = SimConfig {
                n_events: *events,
                sigma_mm: *sigma_mm,
                seed: rng::derive_seed(spec.seed, "style-sim", 0),
                ..spec.sim.clone()
            };
            let mut img = simulate_image(&sim, &spec.recon, geometry, exec)?;
            salt_noise(
                &mut img,
                *salt_rate,
                rng::derive_seed(spec.seed, "style-salt", 0),
            );
            Ok((img, STYLE_FILE.to_string()))
        }
    }
}

fn record_name(index: usize) -> String {
    format!("images/r{index:05}.msti")
}

/// Builds the images and manifest of one dataset under `out_dir`.
///
/// Record `r = level_index * |sweep| + sigma_index` draws its simulation seed
/// from `(seed, "record-sim", r)` and its stamp seed from
/// `(seed, "record-stamp", r)`, so records can be built in any order. On
/// partial failure the manifest lists only the successful records and
/// [`Error::PartialDataset`] is returned.
pub fn build_dataset(
    spec: &DatasetSpec,
    geometry: &TargetGeometry,
    out_dir: &Path,
    exec: Exec,
) -> Result<DatasetManifest> {
    spec.strategy.validate()?;
    spec.sim.validate()?;
    std::fs::create_dir_all(out_dir.join("images")).map_err(|e| Error::io(out_dir, e))?;

    let spec_text = toml::to_string(spec).map_err(|e| Error::Config(e.to_string()))?;
    io::write_atomic(&out_dir.join(SPEC_FILE), spec_text.as_bytes())?;

    let label_sim = SimConfig {
        n_events: spec.label_events,
        sigma_mm: 0.0,
        seed: rng::derive_seed(spec.seed, "label-sim", 0),
        ..spec.sim.clone()
    };
    let label = simulate_image(&label_sim, &spec.recon, geometry, exec)?;
    io::write_image(&out_dir.join(LABEL_FILE), &label)?;

    let library = match &spec.stamping {
        Some(opts) => {
            let (style, style_id) = style_image(spec, opts, geometry, exec)?;
            if !style.same_shape(&label) {
                return Err(Error::Dimension(format!(
                    "style image is {}x{}, training images are {}x{}",
                    style.width, style.height, label.width, label.height
                )));
            }
            if matches!(opts.style, StyleSource::Degraded { .. }) {
                io::write_image(&out_dir.join(STYLE_FILE), &style)?;
            }
            let lib = build_patch_library(
                &style,
                &style_id,
                opts.n_patches,
                PATCH_SIZE,
                rng::derive_seed(spec.seed, "library", 0),
            )?;
            io::write_atomic(&out_dir.join(LIBRARY_FILE), &lib.encode())?;
            Some((lib, opts.n_stamps))
        }
        None => None,
    };

    let levels = sample_event_levels(&spec.strategy, rng::derive_seed(spec.seed, "levels", 0));
    let sweep = &spec.strategy.sigmas_mm;
    let results = par::map_range(exec, spec.strategy.n_records(), |r| {
        let (k, j) = (r / sweep.len(), r % sweep.len());
        let sim = SimConfig {
            n_events: levels[k],
            sigma_mm: sweep[j],
            seed: rng::derive_seed(spec.seed, "record-sim", r as u64),
            ..spec.sim.clone()
        };
        let build = || -> Result<ManifestRecord> {
            let mut img = simulate_image(&sim, &spec.recon, geometry, Exec::Sequential)?;
            let mut stamp_seed = None;
            if let Some((lib, n_stamps)) = &library {
                let s = rng::derive_seed(spec.seed, "record-stamp", r as u64);
                img = stamp(&img, lib, *n_stamps, s)?;
                stamp_seed = Some(s);
            }
            let name = record_name(r);
            io::write_image(&out_dir.join(&name), &img)?;
            Ok(ManifestRecord {
                input: name,
                label: LABEL_FILE.to_string(),
                event_count: levels[k],
                sigma_mm: sweep[j],
                stamped: stamp_seed.is_some(),
                stamp_seed,
            })
        };
        build().map_err(|e| {
            format!(
                "record {r} ({} events, sigma {} mm): {e}",
                levels[k], sweep[j]
            )
        })
    });

    let mut manifest = DatasetManifest {
        header: vec![
            ("strategy".into(), spec.strategy.kind.id().into()),
            ("event_levels".into(), spec.strategy.kind.description()),
            (
                "level_sampling".into(),
                "quantile-stratified, shuffled".into(),
            ),
            ("seed".into(), spec.seed.to_string()),
            ("n_base".into(), spec.strategy.n_base.to_string()),
            (
                "sigmas_mm".into(),
                sweep
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
            ),
            ("label".into(), LABEL_FILE.into()),
            ("label_events".into(), spec.label_events.to_string()),
            (
                "stamping".into(),
                if spec.stamping.is_some() { "on" } else { "off" }.into(),
            ),
            ("config".into(), SPEC_FILE.into()),
        ],
        records: Vec::new(),
    };
    if let Some(opts) = &spec.stamping {
        manifest
            .header
            .push(("n_patches".into(), opts.n_patches.to_string()));
        manifest
            .header
            .push(("n_stamps".into(), opts.n_stamps.to_string()));
    }
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => manifest.records.push(rec),
            Err(e) => failures.push(e),
        }
    }
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    if let Some(first) = failures.first() {
        return Err(Error::PartialDataset {
            failed: failures.len(),
            total: spec.strategy.n_records(),
            first: first.clone(),
        });
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> ScatterImage {
        let data = (0..w * h).map(|i| (i % 97) as f32 / 96.0).collect();
        ScatterImage::from_data(w, h, data).unwrap()
    }

    #[test]
    fn zero_source_gives_zero_library() {
        let lib = build_patch_library(&ScatterImage::zeros(300, 300), "z", 1000, 5, 1).unwrap();
        assert_eq!(lib.len(), 1000);
        assert_eq!(lib.values.len(), 25_000);
        assert!(lib.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn library_is_seed_deterministic() {
        let src = ramp(300, 300);
        let a = build_patch_library(&src, "s", 1000, 5, 42).unwrap();
        let b = build_patch_library(&src, "s", 1000, 5, 42).unwrap();
        let c = build_patch_library(&src, "s", 1000, 5, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn library_patches_are_contiguous_source_blocks() {
        let src = ramp(40, 30);
        let lib = build_patch_library(&src, "s", 50, 5, 9).unwrap();
        let mut r = rng::stream(9, "patch-library", 0);
        for i in 0..lib.len() {
            let r0 = r.random_range(0..=25u64) as usize;
            let c0 = r.random_range(0..=35u64) as usize;
            for dr in 0..5 {
                for dc in 0..5 {
                    assert_eq!(lib.patch(i)[dr * 5 + dc], src.get(r0 + dr, c0 + dc));
                }
            }
        }
    }

    #[test]
    fn library_rejects_small_sources() {
        assert!(build_patch_library(&ScatterImage::zeros(4, 10), "s", 10, 5, 0).is_err());
    }

    #[test]
    fn library_file_round_trip() {
        let lib = build_patch_library(&ramp(20, 20), "s", 7, 5, 3).unwrap();
        let back = PatchLibrary::decode(Path::new("p.bin"), &lib.encode()).unwrap();
        assert_eq!(back.values, lib.values);
        assert_eq!(back.patch_size, 5);
        let bytes = lib.encode();
        assert_eq!(u32::from_le_bytes(bytes[0..4].try_into().unwrap()), 7);
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 5);
        assert!(PatchLibrary::decode(Path::new("p.bin"), &bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn zero_stamps_on_zero_image_change_nothing() {
        let img = ScatterImage::zeros(300, 300);
        let lib = build_patch_library(&img, "z", 1000, 5, 1).unwrap();
        let out = stamp(&img, &lib, 500, 2).unwrap();
        assert_eq!(out.data, img.data);
        assert!(out.meta.stamped);
        assert_eq!(out.meta.stamp_seed, Some(2));
    }

    #[test]
    fn stamping_is_deterministic() {
        let img = ramp(300, 300);
        let lib = build_patch_library(&ramp(300, 300), "s", 1000, 5, 1).unwrap();
        assert_eq!(
            stamp(&img, &lib, 500, 8).unwrap(),
            stamp(&img, &lib, 500, 8).unwrap()
        );
    }

    #[test]
    fn level_laws() {
        let mk = |kind| SamplingStrategy {
            kind,
            n_base: 10_000,
            sigmas_mm: default_sigma_sweep(),
        };
        let narrow = sample_event_levels(&mk(StrategyKind::Narrow), 1);
        assert!(narrow.iter().all(|&l| (5_000..=20_000).contains(&l)));
        let focused = sample_event_levels(&mk(StrategyKind::Focused), 1);
        assert!(focused.iter().all(|&l| (10_000..=600_000).contains(&l)));
        let uniform = sample_event_levels(&mk(StrategyKind::Uniform), 1);
        assert!(uniform.iter().all(|&l| (10_000..=600_000).contains(&l)));
        assert_eq!(focused, sample_event_levels(&mk(StrategyKind::Focused), 1));
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let m = DatasetManifest {
            header: vec![("strategy".into(), "dataset-2".into())],
            records: vec![
                ManifestRecord {
                    input: "images/r00000.msti".into(),
                    label: "label.msti".into(),
                    event_count: 12_345,
                    sigma_mm: 0.30000000000000004,
                    stamped: true,
                    stamp_seed: Some(u64::MAX),
                },
                ManifestRecord {
                    input: "images/r00001.msti".into(),
                    label: "label.msti".into(),
                    event_count: 10_000,
                    sigma_mm: 1.0,
                    stamped: false,
                    stamp_seed: None,
                },
            ],
        };
        let p = Path::new("manifest.csv");
        assert_eq!(DatasetManifest::parse(p, &m.encode()).unwrap(), m);
        assert!(DatasetManifest::parse(p, "nope").is_err());
        let broken = m.encode().replace("12345", "x");
        assert!(matches!(
            DatasetManifest::parse(p, &broken),
            Err(Error::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn strategy_numbers() {
        assert_eq!(StrategyKind::from_number(2).unwrap().id(), "dataset-2");
        assert!(StrategyKind::from_number(4).is_err());
        assert_eq!(
            SamplingStrategy::new(StrategyKind::Focused, 10).n_records(),
            100
        );
    }
}
