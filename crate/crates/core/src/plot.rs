//! Minimal line plots rendered straight to PNG: a unit-square frame, a
//! light 0.1 grid and one polyline. Both axes span `[0, 1]`.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::metrics::{Projection, RocCurve};

const WIDTH: u32 = 480;
const HEIGHT: u32 = 480;
const MARGIN: u32 = 40;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const AXIS: Rgb<u8> = Rgb([0, 0, 0]);
const LINE: Rgb<u8> = Rgb([200, 30, 30]);

fn to_px(x: f64, y: f64) -> (i64, i64) {
    let span_x = (WIDTH - 2 * MARGIN) as f64;
    let span_y = (HEIGHT - 2 * MARGIN) as f64;
    let px = MARGIN as f64 + x.clamp(0.0, 1.0) * span_x;
    let py = (HEIGHT - MARGIN) as f64 - y.clamp(0.0, 1.0) * span_y;
    (px.round() as i64, py.round() as i64)
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Bresenham segment.
fn segment(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Renders `points` (in data coordinates) as a polyline.
pub fn line_plot(points: &[(f64, f64)]) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, WHITE);
    for i in 1..10 {
        let t = i as f64 / 10.0;
        segment(&mut img, to_px(t, 0.0), to_px(t, 1.0), GRID);
        segment(&mut img, to_px(0.0, t), to_px(1.0, t), GRID);
    }
    let corners = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0)];
    for w in corners.windows(2) {
        segment(&mut img, to_px(w[0].0, w[0].1), to_px(w[1].0, w[1].1), AXIS);
    }
    let mut prev: Option<(i64, i64)> = None;
    for &(x, y) in points {
        let p = to_px(x, y);
        if prev != Some(p) {
            match prev {
                Some(q) => segment(&mut img, q, p, LINE),
                None => put(&mut img, p.0, p.1, LINE),
            }
            prev = Some(p);
        }
    }
    img
}

pub fn save_projection(curve: &RocCurve, proj: Projection, path: &Path) -> Result<()> {
    let pts: Vec<_> = curve.points.iter().map(|p| proj.xy(p)).collect();
    line_plot(&pts).save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
