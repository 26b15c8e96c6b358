//! Static PNG figures: labeled 2-D scatter plots and agent trajectories.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::envs::{positions_from_state, Position};
use crate::nn::Tensor;
use crate::trajdata::Trajectory;
use crate::{Error, Result};

const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const GREY: Rgb<u8> = Rgb([200, 200, 200]);

pub fn color(index: usize) -> Rgb<u8> {
    Rgb(PALETTE[index % PALETTE.len()])
}

/// Maps data coordinates into a square pixel canvas with a margin.
#[derive(Clone, Copy, Debug)]
struct Frame {
    size: u32,
    margin: f64,
    lo: [f64; 2],
    span: f64,
}

impl Frame {
    fn fit(size: u32, points: impl Iterator<Item = Position>) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if !lo[0].is_finite() {
            lo = [-1.0; 2];
            hi = [1.0; 2];
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
        // Center the shorter axis.
        for k in 0..2 {
            lo[k] -= (span - (hi[k] - lo[k])) / 2.0;
        }
        Self {
            size,
            margin: size as f64 * 0.05,
            lo,
            span,
        }
    }

    fn square(size: u32, halfwidth: f64) -> Self {
        Self {
            size,
            margin: size as f64 * 0.05,
            lo: [-halfwidth; 2],
            span: 2.0 * halfwidth,
        }
    }

    fn pixel(&self, p: Position) -> (f64, f64) {
        let inner = self.size as f64 - 2.0 * self.margin;
        let x = self.margin + (p[0] - self.lo[0]) / self.span * inner;
        let y = self.size as f64 - (self.margin + (p[1] - self.lo[1]) / self.span * inner);
        (x, y)
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn disk(img: &mut RgbImage, (cx, cy): (f64, f64), radius: f64, c: Rgb<u8>) {
    let r = radius.ceil() as i64;
    let (x0, y0) = (cx.round() as i64, cy.round() as i64);
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) <= radius * radius {
                put(img, x0 + dx, y0 + dy, c);
            }
        }
    }
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a.0 + t * (b.0 - a.0);
        let y = a.1 + t * (b.1 - a.1);
        put(img, x.round() as i64, y.round() as i64, c);
    }
}

fn axes(img: &mut RgbImage, frame: &Frame) {
    let (ox, oy) = frame.pixel([0.0, 0.0]);
    let s = frame.size as f64;
    if (0.0..s).contains(&ox) {
        line(img, (ox, 0.0), (ox, s - 1.0), GREY);
    }
    if (0.0..s).contains(&oy) {
        line(img, (0.0, oy), (s - 1.0, oy), GREY);
    }
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("{}: {other}", path.display())),
    })
}

/// Scatter plot of the first two columns of `coords`, colored by label.
pub fn scatter_png(coords: &Tensor, labels: Option<&[usize]>, size: u32, path: impl AsRef<Path>) -> Result<()> {
    if coords.ncols() < 2 {
        return Err(Error::DimMismatch("scatter needs two columns".into()));
    }
    if labels.is_some_and(|l| l.len() != coords.nrows()) {
        return Err(Error::DimMismatch("label count differs from point count".into()));
    }
    let points: Vec<Position> = coords.rows().into_iter().map(|r| [r[0], r[1]]).collect();
    let frame = Frame::fit(size, points.iter().copied());
    let mut img = RgbImage::from_pixel(size, size, WHITE);
    axes(&mut img, &frame);
    for (k, p) in points.iter().enumerate() {
        let c = color(labels.map_or(0, |l| l[k]));
        disk(&mut img, frame.pixel(*p), (size as f64 / 200.0).max(1.5), c);
    }
    save(&img, path.as_ref())
}

/// Every agent's path in each trajectory over the arena, one color per
/// agent; final positions are marked.
pub fn trajectories_png(
    trajs: &[&Trajectory],
    n_agents: usize,
    arena_halfwidth: f64,
    size: u32,
    path: impl AsRef<Path>,
) -> Result<()> {
    let frame = Frame::square(size, arena_halfwidth);
    let mut img = RgbImage::from_pixel(size, size, WHITE);
    axes(&mut img, &frame);
    for traj in trajs {
        let paths: Vec<Vec<Position>> = traj
            .states
            .iter()
            .map(|s| positions_from_state(s, n_agents))
            .collect();
        for i in 0..n_agents {
            for w in paths.windows(2) {
                line(&mut img, frame.pixel(w[0][i]), frame.pixel(w[1][i]), color(i));
            }
            if let Some(last) = paths.last() {
                disk(&mut img, frame.pixel(last[i]), (size as f64 / 150.0).max(2.0), color(i));
            }
        }
    }
    save(&img, path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn scatter_marks_points() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.png");
        let pts = array![[0.0, 0.0], [1.0, 1.0], [-1.0, 0.5]];
        scatter_png(&pts, Some(&[0, 1, 2]), 120, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (120, 120));
        for c in 0..3 {
            assert!(img.pixels().any(|p| *p == color(c)));
        }
        assert!(scatter_png(&pts, Some(&[0]), 120, &path).is_err());
    }

    #[test]
    fn frame_keeps_points_inside() {
        let f = Frame::fit(100, [[-3.0, 1.0], [5.0, 2.0]].into_iter());
        for p in [[-3.0, 1.0], [5.0, 2.0]] {
            let (x, y) = f.pixel(p);
            assert!((0.0..100.0).contains(&x) && (0.0..100.0).contains(&y));
        }
    }
}
