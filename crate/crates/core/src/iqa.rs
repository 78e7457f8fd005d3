//! Full-reference image quality metrics: MSE, PSNR, IoU, SSIM and GSSIM.
//!
//! SSIM uses a 7 x 7 uniform window at stride 1 over interior positions only
//! (no padding), `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2` with `L = 1`, and the
//! unbiased (N - 1) convention for window variances and covariance. The image
//! score is the mean over all windows. GSSIM evaluates the same expression
//! once with whole-image statistics (also unbiased).

use crate::error::{Error, Result};
use crate::image::ScatterImage;
use crate::par::{self, Exec};

pub const SSIM_WINDOW: usize = 7;
pub const DATA_RANGE: f64 = 1.0;
pub const IOU_THRESHOLD: f64 = 0.1;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn c1() -> f64 {
    (K1 * DATA_RANGE).powi(2)
}

fn c2() -> f64 {
    (K2 * DATA_RANGE).powi(2)
}

/// A borrowed single-channel f64 image.
#[derive(Debug, Clone, Copy)]
pub struct Plane<'a> {
    pub width: usize,
    pub height: usize,
    pub data: &'a [f64],
}

impl<'a> Plane<'a> {
    pub fn new(width: usize, height: usize, data: &'a [f64]) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} plane with {} values",
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }
}

fn check_same(x: &Plane, y: &Plane) -> Result<()> {
    if x.width != y.width || x.height != y.height {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{}",
            x.width, x.height, y.width, y.height
        )));
    }
    Ok(())
}

pub fn mse(x: &Plane, y: &Plane) -> Result<f64> {
    check_same(x, y)?;
    let n = x.data.len() as f64;
    Ok(x.data
        .iter()
        .zip(y.data)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n)
}

/// `10 log10(range^2 / mse)`; identical images give `+inf`.
pub fn psnr(x: &Plane, y: &Plane, data_range: f64) -> Result<f64> {
    let m = mse(x, y)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / m).log10())
}

/// Intersection over union of the `> threshold` masks; 1 when both are empty.
pub fn iou(x: &Plane, y: &Plane, threshold: f64) -> Result<f64> {
    check_same(x, y)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in x.data.iter().zip(y.data) {
        let (ma, mb) = (a > threshold, b > threshold);
        inter += usize::from(ma && mb);
        union += usize::from(ma || mb);
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    let (c1, c2) = (c1(), c2());
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Sums of every `w`-wide horizontal run, then every `w`-tall vertical run.
fn box_sums(v: &[f64], width: usize, height: usize, w: usize) -> Vec<f64> {
    let ow = width - w + 1;
    let oh = height - w + 1;
    let mut rows = vec![0.0; ow * height];
    for r in 0..height {
        let line = &v[r * width..(r + 1) * width];
        let mut s: f64 = line[..w].iter().sum();
        rows[r * ow] = s;
        for c in 1..ow {
            s += line[c + w - 1] - line[c - 1];
            rows[r * ow + c] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for c in 0..ow {
        let mut s: f64 = (0..w).map(|r| rows[r * ow + c]).sum();
        out[c] = s;
        for r in 1..oh {
            s += rows[(r + w - 1) * ow + c] - rows[(r - 1) * ow + c];
            out[r * ow + c] = s;
        }
    }
    out
}

/// Mean windowed SSIM.
pub fn ssim(x: &Plane, y: &Plane) -> Result<f64> {
    check_same(x, y)?;
    let w = SSIM_WINDOW;
    if x.width < w || x.height < w {
        return Err(Error::Dimension(format!(
            "{}x{} image is smaller than the {w}x{w} SSIM window",
            x.width, x.height
        )));
    }
    let (width, height) = (x.width, x.height);
    let xx: Vec<f64> = x.data.iter().map(|a| a * a).collect();
    let yy: Vec<f64> = y.data.iter().map(|b| b * b).collect();
    let xy: Vec<f64> = x.data.iter().zip(y.data).map(|(a, b)| a * b).collect();
    let sx = box_sums(x.data, width, height, w);
    let sy = box_sums(y.data, width, height, w);
    let sxx = box_sums(&xx, width, height, w);
    let syy = box_sums(&yy, width, height, w);
    let sxy = box_sums(&xy, width, height, w);

    let n = (w * w) as f64;
    let total: f64 = (0..sx.len())
        .map(|i| {
            let (mx, my) = (sx[i] / n, sy[i] / n);
            let vx = ((sxx[i] - sx[i] * mx) / (n - 1.0)).max(0.0);
            let vy = ((syy[i] - sy[i] * my) / (n - 1.0)).max(0.0);
            let cxy = (sxy[i] - sx[i] * my) / (n - 1.0);
            ssim_formula(mx, my, vx, vy, cxy)
        })
        .sum();
    Ok(total / sx.len() as f64)
}

/// SSIM with global statistics in place of local windows.
pub fn gssim(x: &Plane, y: &Plane) -> Result<f64> {
    check_same(x, y)?;
    let n = x.data.len() as f64;
    if x.data.len() < 2 {
        return Err(Error::Dimension("GSSIM needs at least two pixels".into()));
    }
    let mx = x.data.iter().sum::<f64>() / n;
    let my = y.data.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.data.iter().zip(y.data) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        cxy += (a - mx) * (b - my);
    }
    let d = n - 1.0;
    Ok(ssim_formula(mx, my, vx / d, vy / d, cxy / d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IqaReport {
    pub input: String,
    pub reference: String,
    pub psnr: f64,
    pub iou: f64,
    pub ssim: f64,
    pub gssim: f64,
    /// Filled in by the perceptual-metric tool, never here.
    pub lpips: Option<f64>,
}

pub const CSV_HEADER: &str = "input,psnr,iou,ssim,gssim,lpips";

fn fmt_metric(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

fn parse_metric(s: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        _ => s
            .parse::<f64>()
            .map_err(|e| Error::Domain(format!("bad metric value {s:?}: {e}"))),
    }
}

impl IqaReport {
    /// One metrics-CSV row in [`CSV_HEADER`] order.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.input,
            fmt_metric(self.psnr),
            fmt_metric(self.iou),
            fmt_metric(self.ssim),
            fmt_metric(self.gssim),
            self.lpips.map(fmt_metric).unwrap_or_default()
        )
    }

    pub fn from_csv_row(row: &str, reference: &str) -> Result<Self> {
        let f: Vec<&str> = row.split(',').collect();
        if f.len() != 6 {
            return Err(Error::Domain(format!(
                "metrics row needs 6 fields: {row:?}"
            )));
        }
        Ok(IqaReport {
            input: f[0].to_string(),
            reference: reference.to_string(),
            psnr: parse_metric(f[1])?,
            iou: parse_metric(f[2])?,
            ssim: parse_metric(f[3])?,
            gssim: parse_metric(f[4])?,
            lpips: if f[5].is_empty() {
                None
            } else {
                Some(parse_metric(f[5])?)
            },
        })
    }

    /// Mean of each metric; `lpips` only when every report has one.
    pub fn mean(reports: &[IqaReport], reference: &str) -> Option<IqaReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&IqaReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let lpips = reports
            .iter()
            .map(|r| r.lpips)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        Some(IqaReport {
            input: "mean".into(),
            reference: reference.into(),
            psnr: avg(|r| r.psnr),
            iou: avg(|r| r.iou),
            ssim: avg(|r| r.ssim),
            gssim: avg(|r| r.gssim),
            lpips,
        })
    }
}

pub fn evaluate_planes(x: &Plane, y: &Plane) -> Result<(f64, f64, f64, f64)> {
    Ok((
        psnr(x, y, DATA_RANGE)?,
        iou(x, y, IOU_THRESHOLD)?,
        ssim(x, y)?,
        gssim(x, y)?,
    ))
}

/// All primary metrics of `input` against `reference`.
pub fn evaluate(
    input: &ScatterImage,
    reference: &ScatterImage,
    input_id: &str,
    reference_id: &str,
) -> Result<IqaReport> {
    if !input.same_shape(reference) {
        return Err(Error::Dimension(format!(
            "{input_id} is {}x{} but {reference_id} is {}x{}",
            input.width, input.height, reference.width, reference.height
        )));
    }
    let (xv, yv) = (input.values(), reference.values());
    let x = Plane::new(input.width, input.height, &xv)?;
    let y = Plane::new(reference.width, reference.height, &yv)?;
    let (psnr, iou, ssim, gssim) = evaluate_planes(&x, &y)?;
    Ok(IqaReport {
        input: input_id.into(),
        reference: reference_id.into(),
        psnr,
        iou,
        ssim,
        gssim,
        lpips: None,
    })
}

/// Evaluates every `(id, image)` against one reference, in input order.
pub fn evaluate_batch(
    inputs: &[(String, ScatterImage)],
    reference: &ScatterImage,
    reference_id: &str,
    exec: Exec,
) -> Result<Vec<IqaReport>> {
    par::map_slice(exec, inputs, |(id, img)| {
        evaluate(img, reference, id, reference_id)
    })
    .into_iter()
    .collect()
}
