//! Separable Gaussian smoothing for polar grids.

use crate::model::Grid;

/// Normalized 1-D Gaussian kernel with radius `ceil(3 * sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|v| (v / sum) as f32).collect()
}

/// Gaussian blur. Rows (A-lines) wrap around; columns replicate the edge sample.
pub fn gaussian_filter(grid: &Grid<f32>, sigma: f64) -> Grid<f32> {
    gaussian_filter_xy(grid, sigma, sigma)
}

/// Anisotropic variant: `sigma_rows` across A-lines, `sigma_cols` along the radius.
pub fn gaussian_filter_xy(grid: &Grid<f32>, sigma_rows: f64, sigma_cols: f64) -> Grid<f32> {
    let (rows, cols) = (grid.rows(), grid.cols());
    if rows == 0 || cols == 0 {
        return grid.clone();
    }
    let mut tmp = grid.clone();
    if sigma_cols > 0.0 {
        let k = gaussian_kernel(sigma_cols);
        let h = (k.len() / 2) as isize;
        let mut out = Grid::<f32>::new(rows, cols);
        for r in 0..rows {
            let src = grid.row(r);
            let dst = out.row_mut(r);
            for (c, d) in dst.iter_mut().enumerate() {
                let mut acc = 0.0f32;
                for (j, &w) in k.iter().enumerate() {
                    let cc = (c as isize + j as isize - h).clamp(0, cols as isize - 1) as usize;
                    acc += w * src[cc];
                }
                *d = acc;
            }
        }
        tmp = out;
    }
    if sigma_rows > 0.0 {
        let k = gaussian_kernel(sigma_rows);
        let h = (k.len() / 2) as isize;
        let mut out = Grid::<f32>::new(rows, cols);
        for r in 0..rows {
            let dst = out.row_mut(r);
            for (j, &w) in k.iter().enumerate() {
                let rr = (r as isize + j as isize - h).rem_euclid(rows as isize) as usize;
                let src = tmp.row(rr);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        tmp = out;
    }
    tmp
}
