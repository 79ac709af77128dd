use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::HsiCube;
use crate::error::{Error, Result};

const BASELINE: f64 = 0.2;
// Small enough that the default noise level of 0.1 confuses some pixels.
const PEAK: f64 = 0.1;
/// Pixels almost equidistant (within this many pixels) from centres of two
/// different classes are left unlabelled.
const BORDER_GAP: f64 = 0.5;

/// Mean spectrum of class `class` (1-based): a Gaussian bump whose centre
/// moves across the band axis with the class index.
pub fn class_signature(class: usize, num_classes: usize, bands: usize) -> Vec<f64> {
    let centre = (class as f64 - 0.5) / num_classes as f64 * bands as f64;
    let width = (bands as f64 / (2.0 * num_classes as f64)).max(1.0);
    (0..bands)
        .map(|b| {
            let z = (b as f64 + 0.5 - centre) / width;
            BASELINE + PEAK * (-0.5 * z * z).exp()
        })
        .collect()
}

/// Blob-structured synthetic cube.
///
/// Class regions are Voronoi cells of randomly placed centres, dealt to the
/// classes round-robin so each class owns at least one cell when the image
/// has enough pixels. Pixels on cell borders and their spectra stay at the
/// flat baseline with label 0. Every value receives i.i.d. Gaussian noise
/// of standard deviation `noise_sigma`.
pub fn synth_cube(
    height: usize,
    width: usize,
    bands: usize,
    num_classes: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<HsiCube> {
    if num_classes < 2 || num_classes > u16::MAX as usize {
        return Err(Error::Config(format!("synthetic cube needs 2..=65535 classes, got {num_classes}")));
    }
    if height == 0 || width == 0 || bands == 0 {
        return Err(Error::Config(format!("synthetic cube dims must be positive, got {height}x{width}x{bands}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Config(format!("noise_sigma must be >= 0, got {noise_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = height * width;
    let centres: Vec<(f64, f64)> = sample(&mut rng, pixels, (3 * num_classes).min(pixels))
        .into_iter()
        .map(|p| ((p / width) as f64, (p % width) as f64))
        .collect();

    let signatures: Vec<Vec<f64>> = (1..=num_classes).map(|c| class_signature(c, num_classes, bands)).collect();
    let mut labels = vec![0u16; pixels];
    let mut data = Vec::with_capacity(pixels * bands);
    for r in 0..height {
        for c in 0..width {
            let dist = |&(cr, cc): &(f64, f64)| ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt();
            let (best, d1) =
                centres
                    .iter()
                    .map(dist)
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (i, d)| if d < acc.1 { (i, d) } else { acc });
            let class = best % num_classes + 1;
            let other = centres
                .iter()
                .enumerate()
                .filter(|(i, _)| i % num_classes + 1 != class)
                .map(|(_, p)| dist(p))
                .fold(f64::INFINITY, f64::min);
            let near_other = other - d1 < BORDER_GAP;
            if near_other {
                data.extend(std::iter::repeat_n(BASELINE as f32, bands));
            } else {
                labels[r * width + c] = class as u16;
                data.extend(signatures[class - 1].iter().map(|&v| v as f32));
            }
        }
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("validated sigma");
        for v in &mut data {
            *v = (*v as f64 + normal.sample(&mut rng)) as f32;
        }
    }
    let names = (1..=num_classes).map(|c| format!("class_{c}")).collect();
    HsiCube::new(height, width, bands, data, Some(labels), names)
}
