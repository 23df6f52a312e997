//! File formats: float maps, PNG previews and the flat key-value scene
//! configuration.
//!
//! Float maps carry an ASCII header `PHMAP <width> <height> <channels>\n`
//! followed by channel-planar, row-major little-endian f32 data. Pixels
//! outside a mask are stored as NaN and masked out again on read.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::diff::DiffScheme;
use crate::error::{Error, Result};
use crate::grid::{Mask, PixelGrid};
use crate::optics::{RefractiveIndex, UnitVector3};
use crate::synth::{AlbedoKind, SceneConfig, SurfaceKind};

pub const FLOAT_MAP_MAGIC: &str = "PHMAP";

/// Write channel-planar float maps; masked-out pixels become NaN.
pub fn write_float_map(
    path: &Path,
    channels: &[&PixelGrid<f64>],
    mask: Option<&Mask>,
) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::InvalidInput("no channels to write".into()));
    }
    let (w, h) = (channels[0].width(), channels[0].height());
    for c in channels {
        if c.width() != w || c.height() != h {
            return Err(Error::InvalidInput("channel shapes differ".into()));
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{FLOAT_MAP_MAGIC} {w} {h} {}", channels.len())?;
    for grid in channels {
        for (p, &v) in grid.data().iter().enumerate() {
            let store = match mask {
                Some(m) if !m.contains_pixel(p) => f32::NAN,
                _ => v as f32,
            };
            out.write_all(&store.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a float map back into per-channel grids (NaN values preserved).
pub fn read_float_map(path: &Path) -> Result<Vec<PixelGrid<f64>>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        reader.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            break;
        }
        header.push(byte[0]);
        if header.len() > 128 {
            return Err(Error::Format("float map header too long".into()));
        }
    }
    let header = String::from_utf8(header)
        .map_err(|_| Error::Format("float map header is not ASCII".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != FLOAT_MAP_MAGIC {
        return Err(Error::Format(format!("bad float map header '{header}'")));
    }
    let w: usize = parts[1].parse().map_err(|_| Error::Format("bad width".into()))?;
    let h: usize = parts[2].parse().map_err(|_| Error::Format("bad height".into()))?;
    let c: usize = parts[3].parse().map_err(|_| Error::Format("bad channel count".into()))?;
    if w == 0 || h == 0 || c == 0 || w * h * c > 1 << 28 {
        return Err(Error::Format(format!("implausible float map size {w}x{h}x{c}")));
    }
    let mut buf = vec![0u8; w * h * 4];
    let mut out = Vec::with_capacity(c);
    for _ in 0..c {
        reader.read_exact(&mut buf)?;
        let data: Vec<f64> = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        out.push(PixelGrid::from_vec(w, h, data)?);
    }
    Ok(out)
}

/// Mask of pixels finite in every channel.
pub fn mask_from_finite(channels: &[PixelGrid<f64>]) -> Mask {
    let (w, h) = (channels[0].width(), channels[0].height());
    Mask::from_grid(PixelGrid::from_fn(w, h, |x, y| {
        channels.iter().all(|c| c.get(x, y).is_finite())
    }))
}

/// 8-bit grayscale PNG of a grid, mapping [lo, hi] to [0, 255]; masked-out
/// pixels are black.
pub fn write_png_gray(
    path: &Path,
    grid: &PixelGrid<f64>,
    mask: Option<&Mask>,
    lo: f64,
    hi: f64,
) -> Result<()> {
    let span = (hi - lo).max(1e-300);
    let bytes: Vec<u8> = grid
        .data()
        .iter()
        .enumerate()
        .map(|(p, &v)| {
            if mask.is_some_and(|m| !m.contains_pixel(p)) || !v.is_finite() {
                0
            } else {
                (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
            }
        })
        .collect();
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, grid.width() as u32, grid.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
    writer.write_image_data(&bytes).map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

/// Read an 8-bit grayscale PNG into intensities in [0, 1].
pub fn read_png_gray(path: &Path) -> Result<PixelGrid<f64>> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info().map_err(|e| Error::Format(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png output size overflow".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format("only 8-bit grayscale PNG stacks are supported".into()));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data: Vec<f64> = buf[..w * h].iter().map(|&b| b as f64 / 255.0).collect();
    PixelGrid::from_vec(w, h, data)
}

/// Flat `key = value` configuration text (comments start with `#`).
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KeyValues { map })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| v.parse::<f64>().map_err(|_| Error::Format(format!("{key}: bad number '{v}'"))))
            .transpose()
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| {
                v.parse::<usize>().map_err(|_| Error::Format(format!("{key}: bad integer '{v}'")))
            })
            .transpose()
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|v| {
                v.parse::<u64>().map_err(|_| Error::Format(format!("{key}: bad integer '{v}'")))
            })
            .transpose()
    }

    /// Comma- or space-separated float list.
    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => {
                let parts: Vec<f64> = v
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<f64>()
                            .map_err(|_| Error::Format(format!("{key}: bad number '{s}'")))
                    })
                    .collect::<Result<_>>()?;
                Ok(Some(parts))
            }
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

/// Parse a polariser angle schedule in degrees: either `start:step:stop`
/// (stop exclusive) or an explicit comma-separated list.
pub fn parse_angles_deg(spec: &str) -> Result<Vec<f64>> {
    let spec = spec.trim();
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Format(format!("angle range '{spec}' is not start:step:stop")));
        }
        let start: f64 = parts[0].parse().map_err(|_| Error::Format("bad angle start".into()))?;
        let step: f64 = parts[1].parse().map_err(|_| Error::Format("bad angle step".into()))?;
        let stop: f64 = parts[2].parse().map_err(|_| Error::Format("bad angle stop".into()))?;
        if step <= 0.0 || stop <= start {
            return Err(Error::Format("angle range must increase".into()));
        }
        let mut out = Vec::new();
        let mut a = start;
        while a < stop - 1e-9 {
            out.push(a.to_radians());
            a += step;
        }
        Ok(out)
    } else {
        let list: Vec<f64> = spec
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map(|d| d.to_radians())
                    .map_err(|_| Error::Format(format!("bad angle '{s}'")))
            })
            .collect::<Result<_>>()?;
        Ok(list)
    }
}

fn parse_light(kv: &KeyValues, key: &str) -> Result<Option<UnitVector3>> {
    match kv.f64_list(key)? {
        None => Ok(None),
        Some(v) if v.len() == 3 => Ok(Some(UnitVector3::upper_hemisphere(v[0], v[1], v[2])?)),
        Some(v) => Err(Error::Format(format!("{key}: expected 3 components, got {}", v.len()))),
    }
}

/// Build a scene from key-value configuration; unknown keys are rejected so
/// typos do not silently fall back to defaults.
pub fn scene_from_key_values(kv: &KeyValues) -> Result<SceneConfig> {
    const KNOWN: &[&str] = &[
        "width",
        "height",
        "surface",
        "slope_x",
        "slope_y",
        "amplitude",
        "surface_width",
        "surface_path",
        "mask_radius",
        "albedo",
        "albedo_levels",
        "albedo_low",
        "albedo_high",
        "checker_size",
        "light_s",
        "light_t",
        "eta",
        "polariser_angles",
        "noise_sigma",
        "bit_depth",
        "seed",
        "scheme",
    ];
    for key in kv.map.keys() {
        if !KNOWN.contains(&key.as_str()) {
            return Err(Error::Format(format!("unknown scene key '{key}'")));
        }
    }

    let width = kv.usize("width")?.unwrap_or(128);
    let height = kv.usize("height")?.unwrap_or(128);

    let surface = match kv.get("surface").unwrap_or("gaussian-peak") {
        "plane" => SurfaceKind::Plane {
            slope_x: kv.f64("slope_x")?.unwrap_or(0.0),
            slope_y: kv.f64("slope_y")?.unwrap_or(0.0),
        },
        "gaussian-peak" => SurfaceKind::GaussianPeak {
            amplitude: kv.f64("amplitude")?.unwrap_or(20.0),
            width: kv.f64("surface_width")?.unwrap_or(12.0),
        },
        "from-file" => SurfaceKind::FromFile(
            kv.get("surface_path")
                .ok_or_else(|| Error::Format("surface = from-file needs surface_path".into()))?
                .into(),
        ),
        other => return Err(Error::Format(format!("unknown surface kind '{other}'"))),
    };

    let albedo = match kv.get("albedo").unwrap_or("uniform") {
        "uniform" => AlbedoKind::Uniform {
            levels: kv.f64_list("albedo_levels")?.unwrap_or_else(|| vec![1.0]),
        },
        "checkerboard" => AlbedoKind::Checkerboard {
            low: kv.f64_list("albedo_low")?.unwrap_or_else(|| vec![0.4]),
            high: kv.f64_list("albedo_high")?.unwrap_or_else(|| vec![1.0]),
            square: kv.usize("checker_size")?.unwrap_or(8),
        },
        other => return Err(Error::Format(format!("unknown albedo kind '{other}'"))),
    };

    let mut lights = Vec::new();
    lights.push(
        parse_light(kv, "light_s")?
            .unwrap_or_else(|| UnitVector3::new(1.0, 0.0, 5.0).expect("static light")),
    );
    // `light_t = none` renders a single-source scene
    match kv.get("light_t") {
        Some("none") => {}
        Some(_) => lights.push(parse_light(kv, "light_t")?.expect("key present")),
        None => lights.push(UnitVector3::new(-1.0, -2.0, 7.0).expect("static light")),
    }

    let bit_depth = match kv.get("bit_depth") {
        None => Some(8),
        Some("none") => None,
        Some(v) => Some(
            v.parse::<u32>().map_err(|_| Error::Format(format!("bad bit depth '{v}'")))?,
        ),
    };

    let scheme = match kv.get("scheme").unwrap_or("forward") {
        "forward" => DiffScheme::Forward,
        "central" => DiffScheme::Central,
        other => return Err(Error::Format(format!("unknown difference scheme '{other}'"))),
    };

    let cfg = SceneConfig {
        width,
        height,
        surface,
        mask_radius: kv.f64("mask_radius")?,
        albedo,
        lights,
        viewer: UnitVector3::Z,
        eta: RefractiveIndex::new(kv.f64("eta")?.unwrap_or(1.5))?,
        polariser_angles: match kv.get("polariser_angles") {
            Some(spec) => parse_angles_deg(spec)?,
            None => SceneConfig::uniform_angles_deg(10.0),
        },
        noise_sigma: kv.f64("noise_sigma")?.unwrap_or(0.0),
        bit_depth,
        seed: kv.u64("seed")?.unwrap_or(0),
        scheme,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Render a scene back to key-value form (the metadata sidecar format).
pub fn scene_to_key_values(cfg: &SceneConfig) -> KeyValues {
    let mut kv = KeyValues::default();
    kv.set("width", cfg.width);
    kv.set("height", cfg.height);
    match &cfg.surface {
        SurfaceKind::Plane { slope_x, slope_y } => {
            kv.set("surface", "plane");
            kv.set("slope_x", slope_x);
            kv.set("slope_y", slope_y);
        }
        SurfaceKind::GaussianPeak { amplitude, width } => {
            kv.set("surface", "gaussian-peak");
            kv.set("amplitude", amplitude);
            kv.set("surface_width", width);
        }
        SurfaceKind::FromFile(p) => {
            kv.set("surface", "from-file");
            kv.set("surface_path", p.display());
        }
    }
    if let Some(r) = cfg.mask_radius {
        kv.set("mask_radius", r);
    }
    let fmt_list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    match &cfg.albedo {
        AlbedoKind::Uniform { levels } => {
            kv.set("albedo", "uniform");
            kv.set("albedo_levels", fmt_list(levels));
        }
        AlbedoKind::Checkerboard { low, high, square } => {
            kv.set("albedo", "checkerboard");
            kv.set("albedo_low", fmt_list(low));
            kv.set("albedo_high", fmt_list(high));
            kv.set("checker_size", square);
        }
    }
    let fmt_light = |l: &UnitVector3| format!("{},{},{}", l.x(), l.y(), l.z());
    kv.set("light_s", fmt_light(&cfg.lights[0]));
    if cfg.lights.len() > 1 {
        kv.set("light_t", fmt_light(&cfg.lights[1]));
    }
    kv.set("eta", cfg.eta.value());
    kv.set(
        "polariser_angles",
        cfg.polariser_angles
            .iter()
            .map(|a| format!("{}", a.to_degrees()))
            .collect::<Vec<_>>()
            .join(","),
    );
    kv.set("noise_sigma", cfg.noise_sigma);
    kv.set("bit_depth", cfg.bit_depth.map_or("none".to_string(), |b| b.to_string()));
    kv.set("seed", cfg.seed);
    kv.set("scheme", match cfg.scheme {
        DiffScheme::Forward => "forward",
        DiffScheme::Central => "central",
    });
    kv
}
