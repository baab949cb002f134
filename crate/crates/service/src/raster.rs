//! Label-editing stroke rasterization.
//!
//! Geometry is in label-frame pixels: `[aline, r]`. The A-line axis is
//! circular, so strokes wrap through A-line 0.
//!
//! * brush: Bresenham segments between consecutive points, each pixel stamped
//!   with a disk of radius `radius - 1` (radius 1 paints a one-pixel line)
//! * freehand: closed polygon, pixel centers filled by the even-odd rule
//! * fill: 4-connected flood fill of the seed pixel's class

use serde::{Deserialize, Serialize};
use thiserror::Error;

use octopus_core::model::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tool {
    Brush,
    Freehand,
    Fill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditClass {
    Lumen,
    Lipid,
    Calcium,
    Other,
}

impl EditClass {
    pub fn label(self) -> Label {
        match self {
            EditClass::Lumen => Label::Lumen,
            EditClass::Lipid => Label::Lipid,
            EditClass::Calcium => Label::Calcium,
            EditClass::Other => Label::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stroke {
    pub tool: Tool,
    pub class: EditClass,
    pub points: Vec<[i64; 2]>,
    #[serde(default = "one")]
    pub radius: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("stroke has no points")]
    Empty,
    #[error("point {0:?} outside the {1}x{2} frame")]
    OutOfFrame([i64; 2], usize, usize),
    #[error("brush radius must be at least 1")]
    ZeroRadius,
    #[error("freehand outline needs at least 3 points")]
    TooFewPoints,
    #[error("fill takes exactly one seed point")]
    FillSeed,
}

impl Stroke {
    pub fn validate(&self, n_alines: usize, n_r: usize) -> Result<(), GeometryError> {
        if self.points.is_empty() {
            return Err(GeometryError::Empty);
        }
        if let Some(&p) = self
            .points
            .iter()
            .find(|p| p[0] < 0 || p[1] < 0 || p[0] >= n_alines as i64 || p[1] >= n_r as i64)
        {
            return Err(GeometryError::OutOfFrame(p, n_alines, n_r));
        }
        match self.tool {
            Tool::Brush if self.radius == 0 => Err(GeometryError::ZeroRadius),
            Tool::Freehand if self.points.len() < 3 => Err(GeometryError::TooFewPoints),
            Tool::Fill if self.points.len() != 1 => Err(GeometryError::FillSeed),
            _ => Ok(()),
        }
    }

    /// Pixels (row-major indices) the stroke paints on a frame, sorted and unique.
    pub fn pixels(&self, frame: &[u8], n_alines: usize, n_r: usize) -> Result<Vec<usize>, GeometryError> {
        self.validate(n_alines, n_r)?;
        let mut out = match self.tool {
            Tool::Brush => brush(&self.points, self.radius, n_alines, n_r),
            Tool::Freehand => even_odd(&self.points, n_alines, n_r),
            Tool::Fill => flood(frame, self.points[0], n_alines, n_r),
        };
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Paint the stroke; returns the number of pixels written.
    pub fn apply(&self, frame: &mut [u8], n_alines: usize, n_r: usize) -> Result<usize, GeometryError> {
        let px = self.pixels(frame, n_alines, n_r)?;
        let code = self.class.label().code();
        for &i in &px {
            frame[i] = code;
        }
        Ok(px.len())
    }
}

fn wrap(a: i64, n: usize) -> usize {
    a.rem_euclid(n as i64) as usize
}

/// Integer points of a Bresenham segment, both ends included.
pub fn bresenham(p0: [i64; 2], p1: [i64; 2]) -> Vec<[i64; 2]> {
    let (mut x, mut y) = (p0[0], p0[1]);
    let dx = (p1[0] - x).abs();
    let dy = -(p1[1] - y).abs();
    let sx = if x < p1[0] { 1 } else { -1 };
    let sy = if y < p1[1] { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push([x, y]);
        if x == p1[0] && y == p1[1] {
            return out;
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

fn brush(points: &[[i64; 2]], radius: u32, n_a: usize, n_r: usize) -> Vec<usize> {
    let rr = radius as i64 - 1;
    let mut path = Vec::new();
    if points.len() == 1 {
        path.push(points[0]);
    }
    for w in points.windows(2) {
        path.extend(bresenham(w[0], w[1]));
    }
    let mut out = Vec::new();
    for p in path {
        for da in -rr..=rr {
            for dr in -rr..=rr {
                if da * da + dr * dr > rr * rr {
                    continue;
                }
                let r = p[1] + dr;
                if r < 0 || r >= n_r as i64 {
                    continue;
                }
                out.push(wrap(p[0] + da, n_a) * n_r + r as usize);
            }
        }
    }
    out
}

/// Pixel centers inside the polygon by the even-odd rule.
fn even_odd(points: &[[i64; 2]], n_a: usize, n_r: usize) -> Vec<usize> {
    let (a_min, a_max) = points.iter().fold((i64::MAX, i64::MIN), |(lo, hi), p| (lo.min(p[0]), hi.max(p[0])));
    let mut out = Vec::new();
    let mut xs = Vec::new();
    for a in a_min..=a_max {
        let ya = a as f64 + 0.5;
        xs.clear();
        for k in 0..points.len() {
            let p = points[k];
            let q = points[(k + 1) % points.len()];
            let (pa, qa) = (p[0] as f64, q[0] as f64);
            if (pa <= ya) != (qa <= ya) {
                let t = (ya - pa) / (qa - pa);
                xs.push(p[1] as f64 + t * (q[1] - p[1]) as f64);
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // centers r + 0.5 inside [x0, x1)
            let r0 = (pair[0] - 0.5).ceil().max(0.0) as i64;
            let r1 = ((pair[1] - 0.5).ceil() as i64).min(n_r as i64);
            for r in r0..r1 {
                out.push(wrap(a, n_a) * n_r + r as usize);
            }
        }
    }
    out
}

fn flood(frame: &[u8], seed: [i64; 2], n_a: usize, n_r: usize) -> Vec<usize> {
    let start = seed[0] as usize * n_r + seed[1] as usize;
    let target = frame[start];
    let mut seen = vec![false; frame.len()];
    let mut stack = vec![start];
    let mut out = Vec::new();
    seen[start] = true;
    while let Some(i) = stack.pop() {
        out.push(i);
        let (a, r) = (i / n_r, i % n_r);
        let mut next = [(a + n_a - 1) % n_a * n_r + r, (a + 1) % n_a * n_r + r, usize::MAX, usize::MAX];
        if r > 0 {
            next[2] = i - 1;
        }
        if r + 1 < n_r {
            next[3] = i + 1;
        }
        for j in next {
            if j != usize::MAX && !seen[j] && frame[j] == target {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    out
}
