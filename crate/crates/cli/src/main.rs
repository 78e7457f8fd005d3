use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mst_core::augment::{self, DatasetSpec, StampingOptions, StrategyKind, StyleSource};
use mst_core::config::{GeometryPreset, PipelineConfig};
use mst_core::geometry::TargetGeometry;
use mst_core::io;
use mst_core::iqa::{self, IqaReport};
use mst_core::physics::MaterialTable;
use mst_core::poca::{self, Projection};
use mst_core::sim::{self, SimConfig};
use mst_core::{Error, Exec};

#[derive(Parser)]
#[command(name = "mst", version, about = "Muon scattering tomography workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate muon events through the target and write an event file.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of valid events.
        #[arg(long)]
        events: Option<u64>,
        /// Hit smearing, mm.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// c-block or none.
        #[arg(long)]
        geometry: Option<GeometryPreset>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a PoCA image from an event file.
    Reconstruct {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        projection: Option<Projection>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paste random patches of a style image over an image.
    Stamp {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long, default_value_t = augment::DEFAULT_PATCHES)]
        n_patches: usize,
        #[arg(long, default_value_t = augment::DEFAULT_STAMPS)]
        n_stamps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a training set: label, per-record images and a manifest.
    BuildDataset {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Event-level strategy 1, 2 or 3.
        #[arg(long)]
        strategy: Option<u8>,
        /// Number of event levels; records = levels x sigma sweep.
        #[arg(long)]
        n_base: Option<usize>,
        #[arg(long, value_enum)]
        stamping: Option<OnOff>,
        /// Comma-separated sigma sweep, mm.
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        /// Events in the ground-truth label simulation.
        #[arg(long)]
        label_events: Option<u64>,
        /// External style image; default is a degraded simulation.
        #[arg(long)]
        style: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score images against a reference and write a metrics CSV.
    Metrics {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Write an image as a grayscale PNG.
    ExportPng {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        bits: u8,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Io { .. }) => 3,
        Some(Error::Parse { .. } | Error::Format { .. }) => 4,
        Some(Error::PartialDataset { .. }) => 5,
        Some(_) => 2,
        None => 1,
    }
}

fn load_config(path: Option<&Path>) -> mst_core::Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::read(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn geometry(preset: GeometryPreset) -> mst_core::Result<TargetGeometry> {
    preset.build(&MaterialTable::builtin())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn simulate(
    config: Option<&Path>,
    events: Option<u64>,
    sigma: Option<f64>,
    seed: Option<u64>,
    preset: Option<GeometryPreset>,
    out: &Path,
) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let mut sim_cfg = cfg.sim.clone();
    if let Some(n) = events {
        sim_cfg.n_events = n;
    }
    if let Some(s) = sigma {
        sim_cfg.sigma_mm = s;
    }
    sim_cfg.seed = seed.unwrap_or(cfg.seed);
    let geo = geometry(preset.unwrap_or(cfg.geometry))?;
    let run = sim::generate_dataset_events(&sim_cfg, &geo, Exec::default())?;
    io::write_events(out, &run.events, sim_cfg.planes_z.len())?;
    io::write_summary(&io::summary_path(out), &run.summary)?;
    eprintln!(
        "{} valid events from {} generated (acceptance {:.4})",
        run.summary.valid, run.summary.generated, run.summary.acceptance
    );
    Ok(())
}

fn reconstruct(
    events: &Path,
    config: Option<&Path>,
    projection: Option<Projection>,
    out: &Path,
) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let mut recon = cfg.recon.clone();
    if let Some(p) = projection {
        recon.projection = p;
    }
    let file = io::read_events(events)?;
    let sidecar = io::summary_path(events);
    let (planes_z, sigma, seed) = if sidecar.exists() {
        let s = io::read_summary(&sidecar)?;
        (s.planes_z, s.sigma_mm, s.seed)
    } else {
        eprintln!(
            "warning: no run summary at {}; assuming the default 4-plane layout",
            display(&sidecar)
        );
        let preset = SimConfig::simulation_preset();
        (preset.planes_z, f64::NAN, 0)
    };
    if let Some(n) = file.n_planes {
        if n != planes_z.len() {
            return Err(Error::Config(format!(
                "{} has {n} planes per event but its summary lists {}",
                display(events),
                planes_z.len()
            ))
            .into());
        }
    }
    if file.events.is_empty() {
        eprintln!(
            "warning: {} holds no events; writing an all-zero image",
            display(events)
        );
    }
    let rec = poca::reconstruct(&file.events, &planes_z, &recon, Exec::default())?;
    let mut image = rec.image;
    image.meta.sigma_mm = if sigma.is_nan() { 0.0 } else { sigma };
    image.meta.seed = seed;
    io::write_image(out, &image)?;
    println!("{}", rec.rejections);
    Ok(())
}

fn stamp(
    input: &Path,
    style: &Path,
    n_patches: usize,
    n_stamps: usize,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let image = io::read_image(input)?;
    let style_img = io::read_image(style)?;
    if !style_img.same_shape(&image) {
        return Err(Error::Dimension(format!(
            "style image {} is {}x{}, expected {}x{}",
            display(style),
            style_img.width,
            style_img.height,
            image.width,
            image.height
        ))
        .into());
    }
    let lib = augment::build_patch_library(
        &style_img,
        &display(style),
        n_patches,
        augment::PATCH_SIZE,
        mst_core::rng::derive_seed(seed, "library", 0),
    )?;
    let stamped = augment::stamp(&image, &lib, n_stamps, seed)?;
    io::write_image(out, &stamped)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn build_dataset(
    config: Option<&Path>,
    strategy: Option<u8>,
    n_base: Option<usize>,
    stamping: Option<OnOff>,
    sigmas: Option<Vec<f64>>,
    label_events: Option<u64>,
    style: Option<PathBuf>,
    seed: Option<u64>,
    out: &Path,
) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let mut opts = cfg.dataset.clone();
    if let Some(k) = strategy {
        opts.strategy.kind = StrategyKind::from_number(k)?;
    }
    if let Some(n) = n_base {
        opts.strategy.n_base = n;
    }
    if let Some(s) = sigmas {
        opts.strategy.sigmas_mm = s;
    }
    if let Some(n) = label_events {
        opts.label_events = n;
    }
    match stamping {
        Some(OnOff::On) if opts.stamping.is_none() => {
            opts.stamping = Some(StampingOptions::default())
        }
        Some(OnOff::Off) => opts.stamping = None,
        _ => {}
    }
    if let Some(path) = style {
        let st = opts
            .stamping
            .as_mut()
            .ok_or_else(|| Error::Config("--style needs stamping on".into()))?;
        st.style = StyleSource::Image { path };
    }
    let spec = DatasetSpec {
        seed: seed.unwrap_or(cfg.seed),
        label_events: opts.label_events,
        strategy: opts.strategy,
        stamping: opts.stamping,
        sim: cfg.sim,
        recon: cfg.recon,
    };
    let geo = geometry(cfg.geometry)?;
    let manifest = augment::build_dataset(&spec, &geo, out, Exec::default())?;
    eprintln!(
        "{} records written to {}",
        manifest.records.len(),
        display(&out.join(augment::MANIFEST_FILE))
    );
    Ok(())
}

fn metrics(inputs: &[PathBuf], reference: &Path, csv: &Path) -> anyhow::Result<()> {
    let ref_img = io::read_image(reference)?;
    let ref_id = display(reference);
    let images = inputs
        .iter()
        .map(|p| Ok((display(p), io::read_image(p)?)))
        .collect::<mst_core::Result<Vec<_>>>()?;
    let reports = iqa::evaluate_batch(&images, &ref_img, &ref_id, Exec::default())?;
    let mut text = String::from(iqa::CSV_HEADER);
    text.push('\n');
    for r in &reports {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    if let Some(m) = IqaReport::mean(&reports, &ref_id) {
        text.push_str(&m.csv_row());
        text.push('\n');
    }
    io::write_atomic(csv, text.as_bytes())?;
    Ok(())
}

fn export_png(input: &Path, out: &Path, bits: u8) -> anyhow::Result<()> {
    let img = io::read_image(input)?;
    io::write_png(out, &img, bits)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            events,
            sigma,
            seed,
            geometry,
            out,
        } => simulate(config.as_deref(), events, sigma, seed, geometry, &out),
        Command::Reconstruct {
            events,
            config,
            projection,
            out,
        } => reconstruct(&events, config.as_deref(), projection, &out),
        Command::Stamp {
            input,
            style,
            n_patches,
            n_stamps,
            seed,
            out,
        } => stamp(&input, &style, n_patches, n_stamps, seed, &out),
        Command::BuildDataset {
            config,
            strategy,
            n_base,
            stamping,
            sigmas,
            label_events,
            style,
            seed,
            out,
        } => build_dataset(
            config.as_deref(),
            strategy,
            n_base,
            stamping,
            sigmas,
            label_events,
            style,
            seed,
            &out,
        ),
        Command::Metrics {
            inputs,
            reference,
            csv,
        } => metrics(&inputs, &reference, &csv),
        Command::ExportPng { input, out, bits } => export_png(&input, &out, bits),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
