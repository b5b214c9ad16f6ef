use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Rendered image: alpha-premultiplied RGB, alpha (the silhouette mask) and
/// expected depth, row-major from the top-left pixel. Background depth is +∞.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGBA {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    pub depth: Vec<f64>,
}

impl ImageRGBA {
    pub fn transparent(width: usize, height: usize) -> Self {
        let n = width * height;
        Self { width, height, rgb: vec![[0.0; 3]; n], alpha: vec![0.0; n], depth: vec![f64::INFINITY; n] }
    }

    /// Opaque image from premultiplied (equivalently, over-black) RGB.
    pub fn from_rgb(width: usize, height: usize, rgb: Vec<[f64; 3]>) -> Result<Self> {
        if rgb.len() != width * height {
            return Err(Error::DimensionMismatch(format!("{} pixels for {width}x{height}", rgb.len())));
        }
        let n = rgb.len();
        Ok(Self { width, height, rgb, alpha: vec![1.0; n], depth: vec![f64::INFINITY; n] })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    /// Un-premultiplied color; black where alpha is zero.
    pub fn straight(&self, i: usize) -> [f64; 3] {
        let a = self.alpha[i];
        if a > 0.0 {
            self.rgb[i].map(|c| (c / a).min(1.0))
        } else {
            [0.0; 3]
        }
    }

    pub fn same_size(&self, other: &Self) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Color and alpha rounded to the 8-bit values the PPM/PGM writers store.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            rgb: self.rgb.iter().map(|p| p.map(|c| quantize(c) as f64 / 255.0)).collect(),
            alpha: self.alpha.iter().map(|&a| quantize(a) as f64 / 255.0).collect(),
            depth: self.depth.clone(),
        }
    }
}

/// Round half up to 8 bits.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// `<stem>_depth.pfm` and `<stem>_mask.pgm` beside `<stem>.ppm`.
pub fn sibling(ppm: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = ppm.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ppm.with_file_name(format!("{stem}{suffix}.{ext}"))
}

pub fn encode_ppm(img: &ImageRGBA) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.rgb.iter().flat_map(|p| p.map(quantize)));
    out
}

pub fn encode_pgm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| quantize(v)));
    out
}

/// Little-endian single-channel float map, bottom row first.
pub fn encode_pfm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for y in (0..height).rev() {
        for v in &values[y * width..(y + 1) * width] {
            out.extend((*v as f32).to_le_bytes());
        }
    }
    out
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.ppm`, `<stem>_mask.pgm` and `<stem>_depth.pfm`.
pub fn write_image_set(img: &ImageRGBA, ppm: impl AsRef<Path>) -> Result<()> {
    let ppm = ppm.as_ref();
    write(ppm, &encode_ppm(img))?;
    write(&sibling(ppm, "_mask", "pgm"), &encode_pgm(img.width, img.height, &img.alpha))?;
    write(&sibling(ppm, "_depth", "pfm"), &encode_pfm(img.width, img.height, &img.depth))
}

struct Header<'a> {
    magic: &'a str,
    width: usize,
    height: usize,
    scale: f64,
    body: &'a [u8],
}

/// Parses `magic w h max` with whitespace and `#` comments, then one byte of whitespace.
fn header<'a>(bytes: &'a [u8], origin: &str) -> Result<Header<'a>> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::parse(origin, 1, "truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| Error::parse(origin, 1, "non-ASCII header"))?);
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(origin, 1, format!("bad header field {s:?}")));
    let (w, h) = (num(fields[1])?, num(fields[2])?);
    if !(w >= 1.0 && h >= 1.0 && w.fract() == 0.0 && h.fract() == 0.0) {
        return Err(Error::parse(origin, 1, "bad image size"));
    }
    Ok(Header {
        magic: fields[0],
        width: w as usize,
        height: h as usize,
        scale: num(fields[3])?,
        body: bytes.get(i + 1..).unwrap_or(&[]),
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// 8-bit binary PPM as an opaque image.
pub fn decode_ppm(bytes: &[u8], origin: &str) -> Result<ImageRGBA> {
    let h = header(bytes, origin)?;
    if h.magic != "P6" || h.scale != 255.0 {
        return Err(Error::parse(origin, 1, "expected binary PPM (P6) with maxval 255"));
    }
    let n = h.width * h.height;
    if h.body.len() < 3 * n {
        return Err(Error::parse(origin, 1, format!("{} bytes of pixel data, need {}", h.body.len(), 3 * n)));
    }
    let rgb = h.body[..3 * n].chunks_exact(3).map(|c| [0, 1, 2].map(|k| c[k] as f64 / 255.0)).collect();
    ImageRGBA::from_rgb(h.width, h.height, rgb)
}

pub fn decode_pgm(bytes: &[u8], origin: &str) -> Result<(usize, usize, Vec<f64>)> {
    let h = header(bytes, origin)?;
    if h.magic != "P5" || h.scale != 255.0 {
        return Err(Error::parse(origin, 1, "expected binary PGM (P5) with maxval 255"));
    }
    let n = h.width * h.height;
    if h.body.len() < n {
        return Err(Error::parse(origin, 1, "truncated pixel data"));
    }
    Ok((h.width, h.height, h.body[..n].iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn decode_pfm(bytes: &[u8], origin: &str) -> Result<(usize, usize, Vec<f64>)> {
    let h = header(bytes, origin)?;
    if h.magic != "Pf" {
        return Err(Error::parse(origin, 1, "expected single-channel PFM"));
    }
    let n = h.width * h.height;
    if h.body.len() < 4 * n {
        return Err(Error::parse(origin, 1, "truncated pixel data"));
    }
    let raw: Vec<f64> = h.body[..4 * n]
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            (if h.scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for y in (0..h.height).rev() {
        out.extend_from_slice(&raw[y * h.width..(y + 1) * h.width]);
    }
    Ok((h.width, h.height, out))
}

/// Reads a PPM; a sibling `<stem>_mask.pgm`, when present, supplies alpha.
pub fn read_image(ppm: impl AsRef<Path>) -> Result<ImageRGBA> {
    let ppm = ppm.as_ref();
    let mut img = decode_ppm(&read_bytes(ppm)?, &ppm.display().to_string())?;
    let mask = sibling(ppm, "_mask", "pgm");
    if mask.exists() {
        let (w, h, alpha) = decode_pgm(&read_bytes(&mask)?, &mask.display().to_string())?;
        if (w, h) != (img.width, img.height) {
            return Err(Error::DimensionMismatch(format!("{} is {w}x{h}", mask.display())));
        }
        img.alpha = alpha;
    }
    Ok(img)
}
