//! On-disk formats.
//!
//! * Event file: CSV with header `event_id,x1,y1,..,xN,yN,p_mev`, one row per
//!   event, plus a `<file>.summary.toml` run-summary sidecar.
//! * MSTI image: `b"MSTI"`, version `u16`, width `u16`, height `u16`,
//!   pixel size `f32`, metadata length `u32`, TOML metadata, then
//!   `width * height` `f32` pixels, row-major, top row first. All
//!   little-endian.
//! * Patch library: count `u32`, patch size `u32`, then `f32` values, patch
//!   after patch, each row-major. Little-endian.
//! * PNG export: 8- or 16-bit grayscale.
//!
//! Every writer goes through [`write_atomic`] (temp file + rename).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{ImageMeta, ScatterImage};
use crate::sim::{MuonEvent, RunSummary};

pub const MSTI_MAGIC: &[u8; 4] = b"MSTI";
pub const MSTI_VERSION: u16 = 1;
const MSTI_FIXED_HEADER: usize = 4 + 2 + 2 + 2 + 4 + 4;

/// Writes `bytes` to a temporary file beside `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Event files

pub fn events_header(n_planes: usize) -> String {
    let mut h = String::from("event_id");
    for k in 1..=n_planes {
        h.push_str(&format!(",x{k},y{k}"));
    }
    h.push_str(",p_mev");
    h
}

pub fn encode_events(events: &[MuonEvent], n_planes: usize) -> String {
    let mut out = events_header(n_planes);
    out.push('\n');
    for e in events {
        out.push_str(&e.id.to_string());
        for &(x, y) in &e.hits {
            out.push_str(&format!(",{x},{y}"));
        }
        out.push_str(&format!(",{}\n", e.momentum_mev));
    }
    out
}

pub fn write_events(path: &Path, events: &[MuonEvent], n_planes: usize) -> Result<()> {
    write_atomic(path, encode_events(events, n_planes).as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventFile {
    /// `None` for an empty file.
    pub n_planes: Option<usize>,
    pub events: Vec<MuonEvent>,
}

pub fn parse_events(path: &Path, text: &str) -> Result<EventFile> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => {
                return Ok(EventFile {
                    n_planes: None,
                    events: Vec::new(),
                })
            }
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => break (i, l.trim()),
        }
    };
    let cols = header.1.split(',').count();
    if !header.1.starts_with("event_id,") || cols < 4 || cols % 2 != 0 {
        return Err(Error::Parse {
            path: path.into(),
            line: header.0 + 1,
            message: format!("bad header {:?}", header.1),
        });
    }
    let n_planes = (cols - 2) / 2;
    if header.1 != events_header(n_planes) {
        return Err(Error::Parse {
            path: path.into(),
            line: header.0 + 1,
            message: format!("expected header {:?}", events_header(n_planes)),
        });
    }

    let mut events = Vec::new();
    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.into(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(bad(format!("expected {cols} fields, got {}", fields.len())));
        }
        let id = fields[0]
            .parse::<u64>()
            .map_err(|e| bad(format!("bad event id {:?}: {e}", fields[0])))?;
        let mut nums = Vec::with_capacity(cols - 1);
        for f in &fields[1..] {
            let v = f
                .parse::<f64>()
                .map_err(|e| bad(format!("bad number {f:?}: {e}")))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite value {f:?}")));
            }
            nums.push(v);
        }
        let momentum_mev = nums[cols - 2];
        if momentum_mev <= 0.0 {
            return Err(bad(format!("momentum must be > 0, got {momentum_mev}")));
        }
        let hits = nums[..cols - 2].chunks(2).map(|c| (c[0], c[1])).collect();
        events.push(MuonEvent {
            id,
            hits,
            momentum_mev,
            scattered: false,
        });
    }
    Ok(EventFile {
        n_planes: Some(n_planes),
        events,
    })
}

pub fn read_events(path: &Path) -> Result<EventFile> {
    parse_events(path, &read_text(path)?)
}

pub fn summary_path(events_path: &Path) -> PathBuf {
    let mut s = events_path.as_os_str().to_os_string();
    s.push(".summary.toml");
    PathBuf::from(s)
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let text = toml::to_string(summary).map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    toml::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
}

// ---------------------------------------------------------------------------
// MSTI images

pub fn encode_image(img: &ScatterImage) -> Result<Vec<u8>> {
    let w = u16::try_from(img.width).map_err(|_| Error::Dimension("width exceeds u16".into()))?;
    let h = u16::try_from(img.height).map_err(|_| Error::Dimension("height exceeds u16".into()))?;
    let meta = toml::to_string(&img.meta).map_err(|e| Error::Domain(e.to_string()))?;
    let mut out = Vec::with_capacity(MSTI_FIXED_HEADER + meta.len() + 4 * img.data.len());
    out.extend_from_slice(MSTI_MAGIC);
    out.extend_from_slice(&MSTI_VERSION.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&img.pixel_size_mm.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_image(path: &Path, bytes: &[u8]) -> Result<ScatterImage> {
    let fail = |m: &str| Error::format(path, m);
    if bytes.len() < MSTI_FIXED_HEADER || &bytes[..4] != MSTI_MAGIC {
        return Err(fail("missing MSTI magic"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u16_at(4);
    if version != MSTI_VERSION {
        return Err(fail(&format!("unsupported MSTI version {version}")));
    }
    let width = usize::from(u16_at(6));
    let height = usize::from(u16_at(8));
    let pixel_size_mm = f32::from_le_bytes(bytes[10..14].try_into().unwrap());
    let meta_len = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
    let body = MSTI_FIXED_HEADER + meta_len;
    let expected = body + 4 * width * height;
    if bytes.len() != expected {
        return Err(fail(&format!(
            "payload is {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let meta_text = std::str::from_utf8(&bytes[MSTI_FIXED_HEADER..body])
        .map_err(|_| fail("metadata is not UTF-8"))?;
    let meta: ImageMeta =
        toml::from_str(meta_text).map_err(|e| fail(&format!("bad metadata: {e}")))?;
    let data: Vec<f32> = bytes[body..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(fail("pixel values outside [0, 1]"));
    }
    Ok(ScatterImage {
        width,
        height,
        pixel_size_mm,
        data,
        meta,
    })
}

pub fn write_image(path: &Path, img: &ScatterImage) -> Result<()> {
    write_atomic(path, &encode_image(img)?)
}

pub fn read_image(path: &Path) -> Result<ScatterImage> {
    decode_image(path, &read(path)?)
}

// ---------------------------------------------------------------------------
// PNG export

/// Grayscale PNG with `round_half_up(v * full_scale)` codes.
pub fn encode_png(img: &ScatterImage, bits: u8) -> Result<Vec<u8>> {
    let depth = match bits {
        8 => png::BitDepth::Eight,
        16 => png::BitDepth::Sixteen,
        _ => {
            return Err(Error::Config(format!(
                "PNG depth must be 8 or 16, got {bits}"
            )))
        }
    };
    let full = f64::from((1u32 << bits) - 1);
    let code = |v: f32| (f64::from(v).clamp(0.0, 1.0) * full + 0.5).floor() as u16;
    let mut raw = Vec::with_capacity(img.data.len() * usize::from(bits / 8));
    for &v in &img.data {
        if bits == 8 {
            raw.push(code(v) as u8);
        } else {
            raw.extend_from_slice(&code(v).to_be_bytes());
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(depth);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Domain(format!("png: {e}")))?;
        writer
            .write_image_data(&raw)
            .map_err(|e| Error::Domain(format!("png: {e}")))?;
    }
    Ok(out)
}

pub fn write_png(path: &Path, img: &ScatterImage, bits: u8) -> Result<()> {
    write_atomic(path, &encode_png(img, bits)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_image() -> ScatterImage {
        let data = (0..12).map(|i| i as f32 / 11.0).collect();
        let mut img = ScatterImage::from_data(4, 3, data).unwrap();
        img.meta.event_count = 10_000;
        img.meta.sigma_mm = 0.1;
        img.meta.raw_min = 0.0;
        img.meta.raw_max = 3.25e-3;
        img.meta.seed = u64::MAX;
        img
    }

    #[test]
    fn image_header_layout() {
        let bytes = encode_image(&sample_image()).unwrap();
        assert_eq!(&bytes[..4], b"MSTI");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 4);
        assert_eq!(u16::from_le_bytes([bytes[8], bytes[9]]), 3);
        assert_eq!(f32::from_le_bytes(bytes[10..14].try_into().unwrap()), 0.5);
        let meta_len = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 18 + meta_len + 48);
        let last = f32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        assert_eq!(last, 1.0);
    }

    #[test]
    fn image_decode_errors() {
        let p = Path::new("x.msti");
        let good = encode_image(&sample_image()).unwrap();
        assert!(decode_image(p, &good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode_image(p, &bad).is_err());
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(decode_image(p, &v2).is_err());
        let mut out_of_range = good;
        let n = out_of_range.len();
        out_of_range[n - 4..].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(decode_image(p, &out_of_range).is_err());
    }

    #[test]
    fn unknown_metadata_keys_survive() {
        let mut img = sample_image();
        img.meta
            .extra
            .insert("checkpoint".into(), toml::Value::String("ckpt-7".into()));
        img.meta.stamp_seed = Some(99);
        let back = decode_image(Path::new("m"), &encode_image(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    proptest! {
        #[test]
        fn image_round_trip_is_bit_exact(
            w in 1usize..12,
            h in 1usize..12,
            seed in any::<u64>(),
            raw_max in 0.0f64..1.0,
        ) {
            let data: Vec<f32> = (0..w * h)
                .map(|i| ((seed.wrapping_mul(i as u64 + 1) >> 40) as f32) / (1u64 << 24) as f32)
                .collect();
            let mut img = ScatterImage::from_data(w, h, data).unwrap();
            img.meta.seed = seed;
            img.meta.raw_max = raw_max;
            let bytes = encode_image(&img).unwrap();
            let back = decode_image(Path::new("p"), &bytes).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(encode_image(&back).unwrap(), bytes);
        }

        #[test]
        fn events_round_trip(
            rows in proptest::collection::vec(
                (proptest::array::uniform8(-75.0f64..75.0), 1.0f64..1e5), 0..20)
        ) {
            let events: Vec<MuonEvent> = rows.iter().enumerate().map(|(i, (h, p))| MuonEvent {
                id: i as u64,
                hits: h.chunks(2).map(|c| (c[0], c[1])).collect(),
                momentum_mev: *p,
                scattered: false,
            }).collect();
            let text = encode_events(&events, 4);
            let back = parse_events(Path::new("e.csv"), &text).unwrap();
            prop_assert_eq!(back.n_planes, Some(4));
            prop_assert_eq!(back.events, events);
        }
    }

    #[test]
    fn event_header_matches_documented_layout() {
        assert_eq!(events_header(4), "event_id,x1,y1,x2,y2,x3,y3,x4,y4,p_mev");
    }

    #[test]
    fn nan_field_reports_line() {
        let text = format!(
            "{}\n0,1,2,3,4,5,6,7,8,3000\n1,1,NaN,3,4,5,6,7,8,3000\n",
            events_header(4)
        );
        let err = parse_events(Path::new("e.csv"), &text).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        let short = format!("{}\n0,1,2\n", events_header(4));
        assert!(matches!(
            parse_events(Path::new("e.csv"), &short),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn empty_event_file() {
        let f = parse_events(Path::new("e.csv"), "").unwrap();
        assert_eq!(f.n_planes, None);
        assert!(f.events.is_empty());
        let f = parse_events(Path::new("e.csv"), &events_header(4)).unwrap();
        assert_eq!(f.n_planes, Some(4));
    }

    #[test]
    fn png_codes() {
        let decode = |bytes: Vec<u8>| {
            let dec = png::Decoder::new(std::io::Cursor::new(bytes));
            let mut r = dec.read_info().unwrap();
            let mut buf = vec![0; r.output_buffer_size().unwrap()];
            let info = r.next_frame(&mut buf).unwrap();
            buf.truncate(info.buffer_size());
            (info.bit_depth, buf)
        };
        let img = ScatterImage::from_data(3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        let (depth, buf) = decode(encode_png(&img, 16).unwrap());
        assert_eq!(depth, png::BitDepth::Sixteen);
        let codes: Vec<u16> = buf
            .chunks(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        // 0.5 * 65535 = 32767.5 rounds half up.
        assert_eq!(codes, vec![0, 32768, 65535]);
        let (_, buf8) = decode(encode_png(&img, 8).unwrap());
        assert_eq!(buf8, vec![0, 128, 255]);
        assert!(encode_png(&img, 12).is_err());
    }
}
