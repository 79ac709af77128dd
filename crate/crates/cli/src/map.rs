use std::collections::BTreeMap;

use serde::Serialize;

/// Binary greyscale PGM (P5, maxval 255), rows top to bottom.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "raster size");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Sidecar describing what each raster value means.
#[derive(Debug, Serialize)]
pub struct Legend {
    pub width: usize,
    pub height: usize,
    /// Raster value to class name; 0 marks pixels that were not classified.
    pub values: BTreeMap<u8, String>,
    pub classified_pixels: usize,
    pub all_pixels: bool,
}

impl Legend {
    pub fn new(
        width: usize,
        height: usize,
        class_names: &[String],
        classified_pixels: usize,
        all_pixels: bool,
    ) -> Self {
        let mut values = BTreeMap::new();
        values.insert(0, "unclassified".to_string());
        for (i, name) in class_names.iter().enumerate() {
            values.insert(i as u8 + 1, name.clone());
        }
        Self { width, height, values, classified_pixels, all_pixels }
    }
}
