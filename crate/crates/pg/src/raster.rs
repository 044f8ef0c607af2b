//! Per-viewpoint raster files.
//!
//! `range_<k>.f32` and `inst_<k>.u32` start with a 16-byte header
//! (`PGR1`/`PGI1`, u32 width, u32 height, u32 zero pad) followed by row-major
//! little-endian values. `feat_<k>.f32` uses `PGF1`, u32 w_f, u32 h_f, u32 d.
//! `pano_<k>.png` holds the RGB raster.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use pg_core::geom::Vec3;
use pg_core::panorama::{FeatureRaster, PanoramaBundle};

use crate::error::{PgError, Result};

const RANGE_MAGIC: &[u8; 4] = b"PGR1";
const INST_MAGIC: &[u8; 4] = b"PGI1";
const FEAT_MAGIC: &[u8; 4] = b"PGF1";
const HEADER: usize = 16;

fn header(magic: &[u8; 4], a: u32, b: u32, c: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER);
    out.extend_from_slice(magic);
    for x in [a, b, c] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn read_header(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<[u32; 3]> {
    if bytes.len() < HEADER || &bytes[..4] != magic {
        return Err(PgError::format(
            path,
            format!("expected a `{}` raster header", String::from_utf8_lossy(magic)),
        ));
    }
    Ok(std::array::from_fn(|i| {
        u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap())
    }))
}

fn words<'a>(bytes: &'a [u8], count: usize, path: &Path) -> Result<impl Iterator<Item = [u8; 4]> + 'a> {
    let body = &bytes[HEADER..];
    if body.len() != count * 4 {
        return Err(PgError::format(
            path,
            format!("expected {} payload bytes, found {}", count * 4, body.len()),
        ));
    }
    Ok(body.chunks_exact(4).map(|c| c.try_into().unwrap()))
}

pub fn encode_range(width: u32, height: u32, range: &[f32]) -> Vec<u8> {
    let mut out = header(RANGE_MAGIC, width, height, 0);
    out.extend(range.iter().flat_map(|v| v.to_le_bytes()));
    out
}

pub fn encode_instance(width: u32, height: u32, instance: &[u32]) -> Vec<u8> {
    let mut out = header(INST_MAGIC, width, height, 0);
    out.extend(instance.iter().flat_map(|v| v.to_le_bytes()));
    out
}

pub fn encode_feature(f: &FeatureRaster) -> Vec<u8> {
    let mut out = header(FEAT_MAGIC, f.width, f.height, f.dim as u32);
    out.extend(f.data.iter().flat_map(|v| v.to_le_bytes()));
    out
}

pub fn decode_range(bytes: &[u8], path: &Path) -> Result<(u32, u32, Vec<f32>)> {
    let [w, h, _] = read_header(bytes, RANGE_MAGIC, path)?;
    let data = words(bytes, w as usize * h as usize, path)?
        .map(f32::from_le_bytes)
        .collect();
    Ok((w, h, data))
}

pub fn decode_instance(bytes: &[u8], path: &Path) -> Result<(u32, u32, Vec<u32>)> {
    let [w, h, _] = read_header(bytes, INST_MAGIC, path)?;
    let data = words(bytes, w as usize * h as usize, path)?
        .map(u32::from_le_bytes)
        .collect();
    Ok((w, h, data))
}

pub fn decode_feature(bytes: &[u8], path: &Path) -> Result<FeatureRaster> {
    let [w, h, d] = read_header(bytes, FEAT_MAGIC, path)?;
    let data = words(bytes, w as usize * h as usize * d as usize, path)?
        .map(f32::from_le_bytes)
        .collect();
    Ok(FeatureRaster {
        width: w,
        height: h,
        dim: d as usize,
        data,
    })
}

pub fn encode_png(width: u32, height: u32, rgb: &[[u8; 3]]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory png header");
        w.write_image_data(rgb.as_flattened()).expect("in-memory png body");
    }
    out
}

/// Decodes an 8-bit PNG into per-pixel RGB; grayscale and alpha are folded.
pub fn decode_png(bytes: &[u8], path: &Path) -> Result<(u32, u32, Vec<[u8; 3]>)> {
    let bad = |e: png::DecodingError| PgError::format(path, e.to_string());
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| PgError::format(path, "png too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let channels = info.color_type.samples();
    let px = buf[..info.buffer_size()]
        .chunks_exact(channels)
        .map(|c| match channels {
            1 | 2 => [c[0]; 3],
            _ => [c[0], c[1], c[2]],
        })
        .collect();
    Ok((info.width, info.height, px))
}

pub struct BundlePaths {
    pub png: PathBuf,
    pub range: PathBuf,
    pub instance: PathBuf,
    pub feature: PathBuf,
}

impl BundlePaths {
    pub fn new(dir: &Path, k: usize) -> Self {
        Self {
            png: dir.join(format!("pano_{k}.png")),
            range: dir.join(format!("range_{k}.f32")),
            instance: dir.join(format!("inst_{k}.u32")),
            feature: dir.join(format!("feat_{k}.f32")),
        }
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| PgError::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| PgError::io(path, e))
}

pub fn save_bundle(dir: &Path, k: usize, b: &PanoramaBundle) -> Result<()> {
    let p = BundlePaths::new(dir, k);
    write(&p.png, &encode_png(b.width, b.height, &b.rgb))?;
    write(&p.range, &encode_range(b.width, b.height, &b.range))?;
    write(&p.instance, &encode_instance(b.width, b.height, &b.instance))?;
    if let Some(f) = &b.feature {
        write(&p.feature, &encode_feature(f))?;
    }
    Ok(())
}

/// Rebuilds bundle `k` from its files; the pose comes from `viewpoints.json`.
pub fn load_bundle(dir: &Path, k: usize, position: Vec3, yaw: f64) -> Result<PanoramaBundle> {
    let p = BundlePaths::new(dir, k);
    let (w, h, range) = decode_range(&read(&p.range)?, &p.range)?;
    let (wi, hi, instance) = decode_instance(&read(&p.instance)?, &p.instance)?;
    let (wp, hp, rgb) = decode_png(&read(&p.png)?, &p.png)?;
    if (wi, hi) != (w, h) || (wp, hp) != (w, h) {
        return Err(PgError::format(
            &p.range,
            format!("raster sizes disagree: range {w}x{h}, instance {wi}x{hi}, png {wp}x{hp}"),
        ));
    }
    let mut b = PanoramaBundle::empty(position, yaw, w, h);
    b.range = range;
    b.instance = instance;
    b.rgb = rgb;
    if p.feature.exists() {
        b.feature = Some(decode_feature(&read(&p.feature)?, &p.feature)?);
    }
    Ok(b)
}
