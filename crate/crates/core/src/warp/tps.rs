//! Thin-plate splines with kernel `U(r) = r² log r²`.
//!
//! The system matrix depends only on the control points, so its inverse is
//! computed once; the grid is then linear in the control targets.

use nalgebra::{DMatrix, DVector};

use super::{mesh_coord, SamplingGrid};
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{Element, Param, Tensor};

/// Four corners of `[-1, 1]²` and the center.
pub fn default_control_points() -> Vec<[f64; 2]> {
    vec![[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [0.0, 0.0]]
}

fn kernel(a: [f64; 2], b: [f64; 2]) -> f64 {
    let r2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    if r2 == 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

/// `[[K, P], [Pᵀ, 0]]` with `K_ij = U(|c_i − c_j|)` and `P_i = (1, x_i, y_i)`.
fn system_matrix(ctrl: &[[f64; 2]]) -> Result<DMatrix<f64>> {
    let n = ctrl.len();
    if n < 3 {
        return Err(Error::DegenerateConfiguration(format!(
            "TPS needs at least 3 control points, got {n}"
        )));
    }
    if ctrl.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::arg("TPS control points must be finite"));
    }
    // Collinear points leave the affine block rank deficient.
    let p = DMatrix::from_fn(n, 3, |i, j| if j == 0 { 1.0 } else { ctrl[i][j - 1] });
    let sv = p.singular_values();
    if sv.min() <= 1e-9 * sv.max() {
        return Err(Error::DegenerateConfiguration(
            "TPS control points are collinear".into(),
        ));
    }
    for i in 0..n {
        for j in 0..i {
            if ctrl[i] == ctrl[j] {
                return Err(Error::DegenerateConfiguration(format!(
                    "TPS control points {j} and {i} coincide"
                )));
            }
        }
    }
    let mut l = DMatrix::zeros(n + 3, n + 3);
    for i in 0..n {
        for j in 0..n {
            l[(i, j)] = kernel(ctrl[i], ctrl[j]);
        }
        for j in 0..3 {
            l[(i, n + j)] = p[(i, j)];
            l[(n + j, i)] = p[(i, j)];
        }
    }
    Ok(l)
}

/// Fitted spline `f(p) = a₀ + a_x·x + a_y·y + Σ w_i U(|p − c_i|)`, per output axis.
#[derive(Clone, Debug, PartialEq)]
pub struct TpsCoefficients {
    pub ctrl_points: Vec<[f64; 2]>,
    pub weights: Vec<[f64; 2]>,
    /// Rows: constant, x, y.
    pub affine: [[f64; 2]; 3],
}

impl TpsCoefficients {
    pub fn eval(&self, p: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for d in 0..2 {
            out[d] = self.affine[0][d] + self.affine[1][d] * p[0] + self.affine[2][d] * p[1];
            for (c, w) in self.ctrl_points.iter().zip(&self.weights) {
                out[d] += w[d] * kernel(p, *c);
            }
        }
        out
    }
}

/// Solves for the spline that sends each control point to `point + offset`.
pub fn tps_fit(ctrl_points: &[[f64; 2]], offsets: &[[f64; 2]]) -> Result<TpsCoefficients> {
    if ctrl_points.len() != offsets.len() {
        return Err(Error::arg(format!(
            "{} control points but {} offsets",
            ctrl_points.len(),
            offsets.len()
        )));
    }
    let n = ctrl_points.len();
    let lu = system_matrix(ctrl_points)?.lu();
    let mut weights = vec![[0.0; 2]; n];
    let mut affine = [[0.0; 2]; 3];
    for d in 0..2 {
        let rhs = DVector::from_fn(
            n + 3,
            |i, _| if i < n { ctrl_points[i][d] + offsets[i][d] } else { 0.0 },
        );
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::DegenerateConfiguration("TPS system is singular".into()))?;
        for i in 0..n {
            weights[i][d] = sol[i];
        }
        for j in 0..3 {
            affine[j][d] = sol[n + j];
        }
    }
    Ok(TpsCoefficients {
        ctrl_points: ctrl_points.to_vec(),
        weights,
        affine,
    })
}

/// Control points, learnable target offsets and the cached system inverse.
#[derive(Clone, Debug)]
pub struct TpsParams<T: Element = f32> {
    pub ctrl_points: Vec<[f64; 2]>,
    pub offsets: Param<T>,
    pub system_inverse: DMatrix<f64>,
}

impl<T: Element> TpsParams<T> {
    /// Zero offsets, i.e. the identity mapping.
    pub fn new(name: &str, ctrl_points: &[[f64; 2]]) -> Result<Self> {
        let n = ctrl_points.len();
        let system_inverse = system_matrix(ctrl_points)?
            .try_inverse()
            .ok_or_else(|| Error::DegenerateConfiguration("TPS system is singular".into()))?;
        Ok(TpsParams {
            ctrl_points: ctrl_points.to_vec(),
            offsets: Param::new(format!("{name}.offsets"), &[n, 2], vec![T::zero(); 2 * n])?,
            system_inverse,
        })
    }

    pub fn offsets(&self) -> Vec<[f64; 2]> {
        self.offsets
            .tensor
            .values()
            .chunks(2)
            .map(|c| [c[0].to_f64_lossy(), c[1].to_f64_lossy()])
            .collect()
    }

    /// The spline for the current offsets.
    pub fn fit(&self) -> Result<TpsCoefficients> {
        tps_fit(&self.ctrl_points, &self.offsets())
    }

    /// `B` with `grid = B · targets`: `B = [U | 1 x y] · L⁻¹[:, :n]`, `(H·W)×n`.
    fn basis(&self, h: usize, w: usize) -> Tensor<T> {
        let n = self.ctrl_points.len();
        let mut phi = DMatrix::zeros(h * w, n + 3);
        for i in 0..h {
            for j in 0..w {
                let p = [mesh_coord(j, w), mesh_coord(i, h)];
                let row = i * w + j;
                for (c, ctrl) in self.ctrl_points.iter().enumerate() {
                    phi[(row, c)] = kernel(p, *ctrl);
                }
                phi[(row, n)] = 1.0;
                phi[(row, n + 1)] = p[0];
                phi[(row, n + 2)] = p[1];
            }
        }
        let b = phi * self.system_inverse.columns(0, n);
        let data = (0..h * w)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .map(|(r, c)| T::from_f64_lossy(b[(r, c)]))
            .collect();
        Tensor::from_vec(&[h * w, n], data).expect("basis shape")
    }
}

impl<T: Element> Module<T> for TpsParams<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.offsets]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.offsets]
    }
}

/// Evaluates the spline at every mesh point; differentiable in the offsets.
pub fn tps_grid<T: Element>(tps: &TpsParams<T>, h: usize, w: usize) -> Result<SamplingGrid<T>> {
    if h == 0 || w == 0 {
        return Err(Error::arg("TPS grid needs a non-empty size"));
    }
    let n = tps.ctrl_points.len();
    let ctrl = Tensor::from_vec(
        &[n, 2],
        tps.ctrl_points
            .iter()
            .flatten()
            .map(|&v| T::from_f64_lossy(v))
            .collect(),
    )?;
    let targets = ctrl.add(&tps.offsets.tensor)?;
    let coords = tps.basis(h, w).matmul(&targets)?;
    SamplingGrid::new(coords.reshape(&[1, h, w, 2])?)
}
