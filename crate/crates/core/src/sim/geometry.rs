//! Planar homographies in normalized image coordinates.

use nalgebra::{Matrix3, SMatrix, SVector};

use crate::error::{Error, Result};

pub type Homography = [[f64; 3]; 3];

pub fn apply_homography(h: &Homography, p: [f64; 2]) -> [f64; 2] {
    let w = h[2][0] * p[0] + h[2][1] * p[1] + h[2][2];
    [
        (h[0][0] * p[0] + h[0][1] * p[1] + h[0][2]) / w,
        (h[1][0] * p[0] + h[1][1] * p[1] + h[1][2]) / w,
    ]
}

/// The homography sending each `src[i]` to `dst[i]`, normalized so `h₃₃ = 1`.
pub fn homography_from_points(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> Result<Homography> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let [x, y] = src[i];
        let [u, v] = dst[i];
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::DegenerateConfiguration("homography correspondences are degenerate".into()))?;
    Ok([
        [sol[0], sol[1], sol[2]],
        [sol[3], sol[4], sol[5]],
        [sol[6], sol[7], 1.0],
    ])
}

pub fn invert_homography(h: &Homography) -> Result<Homography> {
    let m = Matrix3::from_fn(|i, j| h[i][j]);
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("homography is singular".into()))?;
    let s = inv[(2, 2)];
    Ok(std::array::from_fn(|i| std::array::from_fn(|j| inv[(i, j)] / s)))
}
