use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";

/// A labelled hyperspectral image stored band-interleaved-by-pixel.
///
/// Labels are 0 for background and `1..=num_classes` for classes.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    reflectance: Vec<f32>,
    labels: Option<Vec<u16>>,
    class_names: Vec<String>,
}

impl HsiCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        reflectance: Vec<f32>,
        labels: Option<Vec<u16>>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Data(format!("cube dims must be positive, got {height}x{width}x{bands}")));
        }
        let pixels = height * width;
        if reflectance.len() != pixels * bands {
            return Err(Error::Data(format!(
                "{height}x{width}x{bands} cube needs {} reflectance values, got {}",
                pixels * bands,
                reflectance.len()
            )));
        }
        if let Some(i) = reflectance.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite reflectance at pixel {}, band {}", i / bands, i % bands)));
        }
        if let Some(l) = &labels {
            if l.len() != pixels {
                return Err(Error::Data(format!("{} labels for {pixels} pixels", l.len())));
            }
            if let Some(i) = l.iter().position(|&v| v as usize > class_names.len()) {
                return Err(Error::Data(format!(
                    "label {} at pixel {i} exceeds the {} declared classes",
                    l[i],
                    class_names.len()
                )));
            }
        }
        Ok(Self { height, width, bands, reflectance, labels, class_names })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn reflectance(&self) -> &[f32] {
        &self.reflectance
    }

    pub fn labels(&self) -> Option<&[u16]> {
        self.labels.as_deref()
    }

    /// Labels, or a data error naming `purpose` when the cube has none.
    pub fn require_labels(&self, purpose: &str) -> Result<&[u16]> {
        self.labels().ok_or_else(|| Error::Data(format!("{purpose} needs a labelled cube")))
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.reflectance[start..start + self.bands]
    }

    /// Copy with every value replaced by `f(band, value)`.
    pub fn map_bands(&self, f: impl Fn(usize, f32) -> f32) -> Result<Self> {
        let b = self.bands;
        let data = self.reflectance.iter().enumerate().map(|(i, &v)| f(i % b, v)).collect();
        Self::new(self.height, self.width, b, data, self.labels.clone(), self.class_names.clone())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    height: usize,
    width: usize,
    bands: usize,
    classes: usize,
    class_names: Vec<String>,
    has_labels: bool,
    dtype: String,
}

pub fn encode_cube(cube: &HsiCube) -> Vec<u8> {
    let header = Header {
        height: cube.height,
        width: cube.width,
        bands: cube.bands,
        classes: cube.num_classes(),
        class_names: cube.class_names.clone(),
        has_labels: cube.labels.is_some(),
        dtype: "f32le".into(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + cube.reflectance.len() * 4 + cube.num_pixels() * 2);
    out.extend_from_slice(CUBE_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &cube.reflectance {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = &cube.labels {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

pub fn decode_cube(bytes: &[u8]) -> Result<HsiCube> {
    if bytes.len() < 8 || &bytes[..4] != CUBE_MAGIC {
        return Err(Error::Format("not an HSC1 cube (bad magic)".into()));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| Error::Format(format!("HSC1 header of {hlen} bytes overruns a {}-byte file", bytes.len())))?;
    let h: Header = serde_json::from_slice(body).map_err(|e| Error::Format(format!("HSC1 header: {e}")))?;
    if h.dtype != "f32le" {
        return Err(Error::Format(format!("unsupported HSC1 dtype {:?}", h.dtype)));
    }
    if h.height == 0 || h.width == 0 || h.bands == 0 {
        return Err(Error::Format(format!(
            "HSC1 header dims must be positive, got {}x{}x{}",
            h.height, h.width, h.bands
        )));
    }
    if h.class_names.len() != h.classes {
        return Err(Error::Format(format!(
            "HSC1 header declares {} classes but names {}",
            h.classes,
            h.class_names.len()
        )));
    }
    let pixels = h.height * h.width;
    let values = pixels * h.bands;
    let expected = 8 + hlen + values * 4 + if h.has_labels { pixels * 2 } else { 0 };
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "HSC1 payload size mismatch: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let payload = &bytes[8 + hlen..];
    let reflectance =
        payload[..values * 4].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let labels = h
        .has_labels
        .then(|| payload[values * 4..].chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect());
    HsiCube::new(h.height, h.width, h.bands, reflectance, labels, h.class_names)
}

pub fn save_cube(cube: &HsiCube, path: &Path) -> Result<()> {
    fs::write(path, encode_cube(cube))?;
    Ok(())
}

pub fn load_cube(path: &Path) -> Result<HsiCube> {
    decode_cube(&fs::read(path)?)
}

/// Zero-pads `margin` pixels on every spatial side; padded labels are 0.
pub fn pad_cube(cube: &HsiCube, margin: usize) -> HsiCube {
    if margin == 0 {
        return cube.clone();
    }
    let (h, w, b) = (cube.height + 2 * margin, cube.width + 2 * margin, cube.bands);
    let mut data = vec![0.0f32; h * w * b];
    let mut labels = cube.labels.as_ref().map(|_| vec![0u16; h * w]);
    for r in 0..cube.height {
        let dst = ((r + margin) * w + margin) * b;
        let src = r * cube.width * b;
        data[dst..dst + cube.width * b].copy_from_slice(&cube.reflectance[src..src + cube.width * b]);
        if let (Some(out), Some(src_l)) = (labels.as_mut(), cube.labels.as_ref()) {
            let d = (r + margin) * w + margin;
            out[d..d + cube.width].copy_from_slice(&src_l[r * cube.width..(r + 1) * cube.width]);
        }
    }
    HsiCube { height: h, width: w, bands: b, reflectance: data, labels, class_names: cube.class_names.clone() }
}
