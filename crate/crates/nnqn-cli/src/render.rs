//! Deterministic raster output: conductivity heatmaps (nearest-element
//! sampling on a pixel grid) and simple polyline charts.

use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::DVector;
use nnqn_core::error::{Error, Result};
use nnqn_core::mesh::Mesh;

const PALETTE: [[u8; 3]; 6] = [
    [68, 1, 84],
    [59, 82, 139],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
    [255, 255, 255],
];

fn colormap(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0) * 4.0; // last palette entry reserved for background
    let i = (t.floor() as usize).min(3);
    let f = t - i as f64;
    let a = PALETTE[i];
    let b = PALETTE[i + 1];
    Rgb([
        (a[0] as f64 + f * (b[0] as f64 - a[0] as f64)) as u8,
        (a[1] as f64 + f * (b[1] as f64 - a[1] as f64)) as u8,
        (a[2] as f64 + f * (b[2] as f64 - a[2] as f64)) as u8,
    ])
}

/// Rasterizes per-element values to a PNG heatmap. Pixels outside the mesh
/// stay white; the color range spans [min, max] of the values.
pub fn render_heatmap(mesh: &Mesh, values: &DVector<f64>, size: u32, path: &Path) -> Result<()> {
    if values.len() != mesh.n_elements() {
        return Err(Error::contract("value count does not match mesh elements"));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in mesh.nodes() {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
    let margin = 0.02 * span;
    let origin = [lo[0] - margin, lo[1] - margin];
    let scale = (span + 2.0 * margin) / size as f64;

    let vmin = values.min();
    let vmax = values.max();
    let vspan = (vmax - vmin).max(1e-300);

    // Bucket grid over element bounding boxes for point lookup.
    let nb = 64usize;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); nb * nb];
    let bucket_of = |x: f64, y: f64| -> (usize, usize) {
        let bx = (((x - origin[0]) / (span + 2.0 * margin)) * nb as f64)
            .clamp(0.0, nb as f64 - 1.0) as usize;
        let by = (((y - origin[1]) / (span + 2.0 * margin)) * nb as f64)
            .clamp(0.0, nb as f64 - 1.0) as usize;
        (bx, by)
    };
    for (e, tri) in mesh.elements().iter().enumerate() {
        let pts = [mesh.nodes()[tri[0]], mesh.nodes()[tri[1]], mesh.nodes()[tri[2]]];
        let (mut exl, mut exh, mut eyl, mut eyh) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in pts {
            exl = exl.min(p[0]);
            exh = exh.max(p[0]);
            eyl = eyl.min(p[1]);
            eyh = eyh.max(p[1]);
        }
        let (bx0, by0) = bucket_of(exl, eyl);
        let (bx1, by1) = bucket_of(exh, eyh);
        for by in by0..=by1 {
            for bx in bx0..=bx1 {
                buckets[by * nb + bx].push(e);
            }
        }
    }
    let inside = |e: usize, x: f64, y: f64| -> bool {
        let tri = mesh.elements()[e];
        let [a, b, c] = [mesh.nodes()[tri[0]], mesh.nodes()[tri[1]], mesh.nodes()[tri[2]]];
        let sign = |p: [f64; 2], q: [f64; 2]| (x - q[0]) * (p[1] - q[1]) - (p[0] - q[0]) * (y - q[1]);
        let d1 = sign(a, b);
        let d2 = sign(b, c);
        let d3 = sign(c, a);
        let eps = 1e-12 * span * span;
        let has_neg = d1 < -eps || d2 < -eps || d3 < -eps;
        let has_pos = d1 > eps || d2 > eps || d3 > eps;
        !(has_neg && has_pos)
    };

    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    for py in 0..size {
        for px in 0..size {
            let x = origin[0] + (px as f64 + 0.5) * scale;
            let y = origin[1] + (size as f64 - 1.0 - py as f64 + 0.5) * scale;
            let (bx, by) = bucket_of(x, y);
            let hit = buckets[by * nb + bx].iter().copied().find(|&e| inside(e, x, y));
            if let Some(e) = hit {
                let t = (values[e] - vmin) / vspan;
                img.put_pixel(px, py, colormap(t));
            }
        }
    }
    save_png(&img, path)
}

/// One polyline; colors are assigned by input order.
pub struct Series {
    pub points: Vec<(f64, f64)>,
}

const SERIES_COLORS: [[u8; 3]; 4] = [[198, 45, 38], [38, 90, 198], [30, 140, 60], [120, 120, 120]];

/// Renders line series on a white canvas with a framed plot area. With
/// `log_y` the y values are log10-transformed (non-positive values clamped).
pub fn render_series(series: &[Series], log_y: bool, size: (u32, u32), path: &Path) -> Result<()> {
    let (w, h) = size;
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let margin = 30.0;
    let transform_y = |y: f64| if log_y { y.max(1e-300).log10() } else { y };
    let mut xr = (f64::INFINITY, f64::NEG_INFINITY);
    let mut yr = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in &s.points {
            let y = transform_y(y);
            xr = (xr.0.min(x), xr.1.max(x));
            yr = (yr.0.min(y), yr.1.max(y));
        }
    }
    if !xr.0.is_finite() || !yr.0.is_finite() {
        return Err(Error::contract("no finite points to plot"));
    }
    let xspan = (xr.1 - xr.0).max(1e-12);
    let yspan = (yr.1 - yr.0).max(1e-12);
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        let fx = margin + (x - xr.0) / xspan * (w as f64 - 2.0 * margin);
        let fy = h as f64 - margin - (y - yr.0) / yspan * (h as f64 - 2.0 * margin);
        (fx, fy)
    };
    // Frame.
    let frame = Rgb([60, 60, 60]);
    for px in margin as u32..(w - margin as u32) {
        img.put_pixel(px, margin as u32, frame);
        img.put_pixel(px, h - margin as u32, frame);
    }
    for py in margin as u32..(h - margin as u32) {
        img.put_pixel(margin as u32, py, frame);
        img.put_pixel(w - margin as u32, py, frame);
    }
    for (si, s) in series.iter().enumerate() {
        let color = Rgb(SERIES_COLORS[si % SERIES_COLORS.len()]);
        for pair in s.points.windows(2) {
            let (x0, y0) = to_px(pair[0].0, transform_y(pair[0].1));
            let (x1, y1) = to_px(pair[1].0, transform_y(pair[1].1));
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for t in 0..=steps {
                let f = t as f64 / steps as f64;
                let x = x0 + f * (x1 - x0);
                let y = y0 + f * (y1 - y0);
                for dy in -1..=0i64 {
                    let (xi, yi) = (x.round() as i64, y.round() as i64 + dy);
                    if xi >= 0 && yi >= 0 && (xi as u32) < w && (yi as u32) < h {
                        img.put_pixel(xi as u32, yi as u32, color);
                    }
                }
            }
        }
    }
    save_png(&img, path)
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::config(format!("cannot write image {}: {e}", path.display())))
}
