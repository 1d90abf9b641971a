use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Pure-pixel index sets, one per endmember, and the erosion radius that
/// produced each.
#[derive(Debug, Clone, PartialEq)]
pub struct PurePixels {
    pub sets: Vec<Vec<usize>>,
    pub radii: Vec<usize>,
}

/// Thresholds every abundance map at `threshold` and erodes the mask with a
/// `(2 r + 1)^2` square. Pixels outside the image do not constrain the
/// erosion. If an endmember's set comes out empty the radius is reduced one
/// step at a time; an empty set at radius 0 is an error.
pub fn extract_pure_pixels(a: &DMatrix<f64>, rows: usize, cols: usize, threshold: f64, r_se: usize) -> Result<PurePixels> {
    if rows * cols != a.nrows() {
        return Err(Error::dim("abundance rows", rows * cols, a.nrows()));
    }
    let mut sets = Vec::with_capacity(a.ncols());
    let mut radii = Vec::with_capacity(a.ncols());
    for j in 0..a.ncols() {
        let mask: Vec<bool> = a.column(j).iter().map(|&v| v > threshold).collect();
        let mut r = r_se;
        loop {
            let set = erode(&mask, rows, cols, r);
            if !set.is_empty() {
                if r < r_se {
                    log::warn!("endmember {j}: erosion radius reduced from {r_se} to {r}");
                }
                sets.push(set);
                radii.push(r);
                break;
            }
            if r == 0 {
                return Err(Error::NoPurePixels { endmember: j });
            }
            r -= 1;
        }
    }
    Ok(PurePixels { sets, radii })
}

fn erode(mask: &[bool], rows: usize, cols: usize, r: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for row in 0..rows {
        for col in 0..cols {
            let n = row * cols + col;
            if !mask[n] {
                continue;
            }
            let (r0, r1) = (row.saturating_sub(r), (row + r).min(rows - 1));
            let (c0, c1) = (col.saturating_sub(r), (col + r).min(cols - 1));
            let inside = (r0..=r1).all(|rr| (c0..=c1).all(|cc| mask[rr * cols + cc]));
            if inside {
                out.push(n);
            }
        }
    }
    out
}
