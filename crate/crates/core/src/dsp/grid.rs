use crate::error::{Error, Result};

/// Row-major 2-D array of spectral values (rows are frequency-like, columns are frames).
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "grid {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Grid {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Index of the largest entry in column `c` (lowest row wins ties).
    pub fn argmax_in_column(&self, c: usize) -> usize {
        let mut best = 0;
        for r in 1..self.rows {
            if self.get(r, c) > self.get(best, c) {
                best = r;
            }
        }
        best
    }
}

/// Bilinear resize with corner alignment: the first and last input rows
/// (columns) map exactly onto the first and last output rows (columns).
pub fn resize_bilinear(grid: &Grid, height: usize, width: usize) -> Result<Grid> {
    if grid.rows == 0 || grid.cols == 0 || height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "cannot resize {}x{} to {height}x{width}",
            grid.rows, grid.cols
        )));
    }
    if grid.rows == height && grid.cols == width {
        return Ok(grid.clone());
    }
    let coords = |out: usize, input: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|i| {
                if out == 1 || input == 1 {
                    return (0, 0, 0.0);
                }
                let pos = i as f64 * (input - 1) as f64 / (out - 1) as f64;
                let lo = (pos.floor() as usize).min(input - 1);
                let hi = (lo + 1).min(input - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ys = coords(height, grid.rows);
    let xs = coords(width, grid.cols);
    let mut data = Vec::with_capacity(height * width);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = lerp(grid.get(y0, x0), grid.get(y0, x1), fx);
            let bottom = lerp(grid.get(y1, x0), grid.get(y1, x1), fx);
            data.push(lerp(top, bottom, fy));
        }
    }
    Grid::new(height, width, data)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        return a;
    }
    // Clamped so rounding can never leave the [a, b] segment.
    (a + (b - a) * t).clamp(a.min(b), a.max(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_resize_is_bitwise_equal() {
        let g = Grid::new(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(resize_bilinear(&g, 2, 3).unwrap(), g);
    }

    #[test]
    fn constant_stays_constant() {
        let g = Grid::filled(5, 7, -3.25);
        let r = resize_bilinear(&g, 11, 2).unwrap();
        assert!(r.data().iter().all(|&v| v == -3.25));
    }

    #[test]
    fn linear_midpoint() {
        let g = Grid::new(2, 2, vec![0., 1., 0., 1.]).unwrap();
        let r = resize_bilinear(&g, 2, 3).unwrap();
        assert_eq!(r.row(0), &[0.0, 0.5, 1.0]);
        assert_eq!(r.row(1), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn corners_are_preserved() {
        let g = Grid::new(3, 4, (0..12).map(|v| v as f64 * 1.7).collect()).unwrap();
        let r = resize_bilinear(&g, 9, 5).unwrap();
        assert_eq!(r.get(0, 0), g.get(0, 0));
        assert_eq!(r.get(8, 4), g.get(2, 3));
    }

    proptest! {
        #[test]
        fn output_stays_within_input_range(
            rows in 1usize..6, cols in 1usize..6, h in 1usize..12, w in 1usize..12,
            seed in proptest::collection::vec(-100.0f64..100.0, 36),
        ) {
            let g = Grid::new(rows, cols, seed[..rows * cols].to_vec()).unwrap();
            let (lo, hi) = g.min_max();
            let r = resize_bilinear(&g, h, w).unwrap();
            for &v in r.data() {
                prop_assert!(v >= lo && v <= hi, "{v} outside [{lo}, {hi}]");
            }
        }
    }
}
