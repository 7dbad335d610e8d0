use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

use tfrdisc::ComplexSpectrogram;

/// Dynamic range of the plot below the loudest cell.
const RANGE_DB: f64 = 80.0;
const MAX_WIDTH: usize = 2048;

// dark blue to yellow, evenly spaced stops
const STOPS: [[f64; 3]; 5] =
    [[13.0, 8.0, 135.0], [126.0, 3.0, 168.0], [204.0, 71.0, 120.0], [248.0, 149.0, 64.0], [240.0, 249.0, 33.0]];

fn color(v: f64) -> Rgb<u8> {
    let x = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let t = x - i as f64;
    let c = |k: usize| (STOPS[i][k] + t * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Log-magnitude heatmap, lowest frequency at the bottom. Long signals are
/// averaged down to at most `MAX_WIDTH` columns.
pub fn heatmap(spec: &ComplexSpectrogram, path: &Path) -> Result<()> {
    let (bins, frames) = (spec.bins(), spec.frames());
    let group = frames.div_ceil(MAX_WIDTH).max(1);
    let width = frames.div_ceil(group).max(1);
    let mut db = vec![f64::NEG_INFINITY; bins * width];
    for k in 0..bins {
        let row = spec.row(k);
        for (x, cells) in row.chunks(group).enumerate() {
            let power = cells.iter().map(|c| c.norm_sqr()).sum::<f64>() / cells.len() as f64;
            db[k * width + x] = 10.0 * (power + 1e-20).log10();
        }
    }
    let top = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..bins).collect();
    let freqs = spec.center_freqs();
    order.sort_by(|&a, &b| freqs[b].total_cmp(&freqs[a]));
    let mut img = RgbImage::new(width as u32, bins.max(1) as u32);
    for (y, &k) in order.iter().enumerate() {
        for x in 0..width {
            let v = (db[k * width + x] - (top - RANGE_DB)) / RANGE_DB;
            img.put_pixel(x as u32, y as u32, color(v));
        }
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
