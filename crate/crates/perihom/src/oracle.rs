//! Finite-difference verification oracle for the transformed cell problem.
//!
//! Deliberately low-tech and independent of the series solver: coefficients
//! are rasterized onto a periodic pixel grid, the conservative 5-point
//! scheme is solved by preconditioned conjugate gradients, and effective
//! columns come from face-flux averages. Agreement with `cell_solver` is
//! then evidence for both sides, since they share no code path.

use crate::cell_solver::{HarmonicCellSolution, Region};
use crate::geometry::{minimum_image_distance, CellGeometry};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;
use thiserror::Error;

/// subpixel samples per pixel side when rasterizing the disk indicator
const SUBPIXEL: usize = 4;
/// relative residual target for the conjugate-gradient solve
const CG_TOL: f64 = 1e-10;
const CG_MAX_ITERS: usize = 800;
/// fixed interface margin defining the bulk statistics of field comparisons;
/// unlike the 3/n tube it does not shrink with the grid, so bulk deviations
/// across grids measure convergence on a common point set
const BULK_MARGIN: f64 = 0.02;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("grid size {0} below the minimum of 32")]
    GridTooSmall(usize),
    #[error("{got} contrasts for {want} inclusions")]
    ContrastMismatch { got: usize, want: usize },
    #[error("non-positive contrast {0}")]
    NonPositiveContrast(f64),
    #[error(
        "conjugate gradient stalled at relative residual {reached:.3e} \
         after {iterations} iterations (target {target:.1e}); \
         last residuals {tail:?}"
    )]
    NonConvergence { reached: f64, iterations: usize, target: f64, tail: Vec<f64> },
}

/// Which of the two axis-aligned unit backgrounds to impose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// How to average the two adjacent pixel conductivities onto their face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaceAveraging {
    /// standard for conservative schemes across coefficient jumps
    #[default]
    Harmonic,
    /// sensitivity-check alternative
    Arithmetic,
}

/// Periodic pixel grid of conductivities with per-face averages.
///
/// Pixel (i, j) is centered at (-1/2 + (i+1/2)h, -1/2 + (j+1/2)h) with
/// h = 1/n, stored row-major at i*n + j. `face_x[i*n+j]` couples pixels
/// (i, j) and (i+1, j), wrapping periodically; `face_y` couples (i, j)
/// and (i, j+1).
#[derive(Debug, Clone)]
pub struct FdGrid {
    pub n: usize,
    cell: Vec<f64>,
    face_x: Vec<f64>,
    face_y: Vec<f64>,
}

impl FdGrid {
    pub fn rasterize(
        geometry: &CellGeometry,
        contrasts: &[f64],
        n: usize,
    ) -> Result<Self, OracleError> {
        Self::rasterize_with(geometry, contrasts, n, FaceAveraging::Harmonic)
    }

    /// Pixel conductivities by 4x4 subpixel sampling of the disk indicator
    /// (cuts the staircase bias of whole-pixel tests), then face averaging.
    pub fn rasterize_with(
        geometry: &CellGeometry,
        contrasts: &[f64],
        n: usize,
        averaging: FaceAveraging,
    ) -> Result<Self, OracleError> {
        if n < 32 {
            return Err(OracleError::GridTooSmall(n));
        }
        if contrasts.len() != geometry.inclusions.len() {
            return Err(OracleError::ContrastMismatch {
                got: contrasts.len(),
                want: geometry.inclusions.len(),
            });
        }
        if let Some(&bad) = contrasts.iter().find(|&&r| !(r > 0.0)) {
            return Err(OracleError::NonPositiveContrast(bad));
        }
        let h = 1.0 / n as f64;
        let sub = SUBPIXEL as f64;
        let cell: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                (0..n).map(move |j| {
                    let mut acc = 0.0;
                    for si in 0..SUBPIXEL {
                        let x = -0.5 + (i as f64 + (si as f64 + 0.5) / sub) * h;
                        for sj in 0..SUBPIXEL {
                            let y = -0.5 + (j as f64 + (sj as f64 + 0.5) / sub) * h;
                            let z = Complex64::new(x, y);
                            let mut a = 1.0;
                            for (inc, &rho) in geometry.inclusions.iter().zip(contrasts) {
                                if minimum_image_distance(z, inc.center) < inc.radius {
                                    a = rho;
                                    break;
                                }
                            }
                            acc += a;
                        }
                    }
                    acc / (sub * sub)
                })
            })
            .collect();
        let face = |a: f64, b: f64| match averaging {
            FaceAveraging::Harmonic => 2.0 * a * b / (a + b),
            FaceAveraging::Arithmetic => 0.5 * (a + b),
        };
        let mut face_x = vec![0.0; n * n];
        let mut face_y = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let c = i * n + j;
                face_x[c] = face(cell[c], cell[((i + 1) % n) * n + j]);
                face_y[c] = face(cell[c], cell[i * n + (j + 1) % n]);
            }
        }
        Ok(FdGrid { n, cell, face_x, face_y })
    }

    fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Discrete div(a grad v), row-parallel.
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        let h2 = self.h() * self.h();
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            for (j, slot) in row.iter_mut().enumerate() {
                let jp = (j + 1) % n;
                let jm = (j + n - 1) % n;
                let c = i * n + j;
                let fe = self.face_x[c] * (v[ip * n + j] - v[c]);
                let fw = self.face_x[im * n + j] * (v[c] - v[im * n + j]);
                let fn_ = self.face_y[c] * (v[i * n + jp] - v[c]);
                let fs = self.face_y[i * n + jm] * (v[c] - v[i * n + jm]);
                *slot = (fe - fw + fn_ - fs) / h2;
            }
        });
    }

    /// -div(a G): source induced by the constant background gradient.
    fn background_rhs(&self, g: [f64; 2]) -> Vec<f64> {
        let n = self.n;
        let h = self.h();
        let mut rhs = vec![0.0; n * n];
        rhs.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let im = (i + n - 1) % n;
            for (j, slot) in row.iter_mut().enumerate() {
                let jm = (j + n - 1) % n;
                let c = i * n + j;
                let div = (self.face_x[c] - self.face_x[im * n + j]) * g[0]
                    + (self.face_y[c] - self.face_y[i * n + jm]) * g[1];
                *slot = -div / h;
            }
        });
        rhs
    }

    /// Cell-averaged flux of v plus background G: one face average per axis.
    fn mean_flux(&self, v: &[f64], g: [f64; 2]) -> [f64; 2] {
        let n = self.n;
        let h = self.h();
        let mut sx = 0.0;
        let mut sy = 0.0;
        for i in 0..n {
            for j in 0..n {
                let c = i * n + j;
                sx += self.face_x[c] * ((v[((i + 1) % n) * n + j] - v[c]) / h + g[0]);
                sy += self.face_y[c] * ((v[i * n + (j + 1) % n] - v[c]) / h + g[1]);
            }
        }
        [sx / (n * n) as f64, sy / (n * n) as f64]
    }

    /// Net flux through the vertical cut between columns i and i+1; a
    /// conservative solution carries the same flux through every cut.
    #[cfg(test)]
    fn cut_flux_x(&self, v: &[f64], g: [f64; 2], i: usize) -> f64 {
        let n = self.n;
        let h = self.h();
        let mut s = 0.0;
        for j in 0..n {
            let c = i * n + j;
            s += self.face_x[c] * ((v[((i + 1) % n) * n + j] - v[c]) / h + g[0]);
        }
        s * h
    }

    #[cfg(test)]
    fn cut_flux_y(&self, v: &[f64], g: [f64; 2], j: usize) -> f64 {
        let n = self.n;
        let h = self.h();
        let mut s = 0.0;
        for i in 0..n {
            let c = i * n + j;
            s += self.face_y[c] * ((v[i * n + (j + 1) % n] - v[c]) / h + g[1]);
        }
        s * h
    }
}

/// Row-column 2D FFT pass over a square complex buffer.
fn fft2_pass(plan: &Arc<dyn Fft<f64>>, buf: &mut [Complex64], tmp: &mut [Complex64], n: usize) {
    let run_rows = |data: &mut [Complex64]| {
        data.par_chunks_mut(n).for_each_init(
            || vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()],
            |scratch, row| plan.process_with_scratch(row, scratch),
        );
    };
    run_rows(buf);
    tmp.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = buf[j * n + i];
        }
    });
    run_rows(tmp);
    buf.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = tmp[j * n + i];
        }
    });
}

/// Spectral inverse of abar * (5-point Laplacian), the constant-coefficient
/// stand-in for the operator; the zero mode (constant null space) is
/// projected out.
struct Preconditioner {
    n: usize,
    eig: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    tmp: Vec<Complex64>,
}

impl Preconditioner {
    fn new(grid: &FdGrid) -> Self {
        let n = grid.n;
        let h2 = grid.h() * grid.h();
        let abar = grid.cell.iter().sum::<f64>() / (n * n) as f64;
        let mut eig = vec![0.0; n * n];
        for i in 0..n {
            let ci = (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
            for j in 0..n {
                let cj = (2.0 * std::f64::consts::PI * j as f64 / n as f64).cos();
                eig[i * n + j] = abar * (4.0 - 2.0 * ci - 2.0 * cj) / h2;
            }
        }
        eig[0] = 1.0;
        let mut planner = FftPlanner::new();
        Preconditioner {
            n,
            eig,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            buf: vec![Complex64::new(0.0, 0.0); n * n],
            tmp: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    fn solve(&mut self, r: &[f64], z: &mut [f64]) {
        let n = self.n;
        for (b, &x) in self.buf.iter_mut().zip(r) {
            *b = Complex64::new(x, 0.0);
        }
        fft2_pass(&self.forward, &mut self.buf, &mut self.tmp, n);
        for (b, &e) in self.buf.iter_mut().zip(&self.eig) {
            *b /= e;
        }
        self.buf[0] = Complex64::new(0.0, 0.0);
        fft2_pass(&self.inverse, &mut self.buf, &mut self.tmp, n);
        let scale = 1.0 / (n * n) as f64;
        for (slot, b) in z.iter_mut().zip(&self.buf) {
            *slot = b.re * scale;
        }
    }
}

struct CgSolve {
    v: Vec<f64>,
    iterations: usize,
    relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn subtract_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= m;
    }
}

/// Periodic correction v with div(a (grad v + G)) = 0, by preconditioned
/// conjugate gradients on the mean-zero subspace.
fn solve_correction(grid: &FdGrid, g: [f64; 2]) -> Result<CgSolve, OracleError> {
    let size = grid.n * grid.n;
    let rhs = grid.background_rhs(g);
    let rhs_norm = dot(&rhs, &rhs).sqrt();
    if rhs_norm == 0.0 {
        return Ok(CgSolve { v: vec![0.0; size], iterations: 0, relative_residual: 0.0 });
    }
    let mut pre = Preconditioner::new(grid);
    let mut v = vec![0.0; size];
    let mut r = rhs;
    subtract_mean(&mut r);
    let mut z = vec![0.0; size];
    pre.solve(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; size];
    let mut rz = dot(&r, &z);
    let mut history = Vec::new();
    for it in 0..CG_MAX_ITERS {
        let rel = dot(&r, &r).sqrt() / rhs_norm;
        history.push(rel);
        if rel <= CG_TOL {
            return Ok(CgSolve { v, iterations: it, relative_residual: rel });
        }
        grid.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for k in 0..size {
            v[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        subtract_mean(&mut r);
        pre.solve(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        for k in 0..size {
            p[k] = z[k] + beta * p[k];
        }
        rz = rz_next;
    }
    let reached = dot(&r, &r).sqrt() / rhs_norm;
    let tail = history[history.len().saturating_sub(6)..].to_vec();
    Err(OracleError::NonConvergence {
        reached,
        iterations: CG_MAX_ITERS,
        target: CG_TOL,
        tail,
    })
}

/// One column of the linear effective tensor with solve diagnostics.
#[derive(Debug, Clone)]
pub struct FdColumn {
    pub column: [f64; 2],
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Column of the effective tensor of the transformed linear problem, from
/// the cell-averaged flux under a unit background gradient along `axis`.
pub fn fd_effective_column(
    geometry: &CellGeometry,
    contrasts: &[f64],
    axis: Axis,
    n: usize,
) -> Result<FdColumn, OracleError> {
    let grid = FdGrid::rasterize(geometry, contrasts, n)?;
    let g = match axis {
        Axis::X => [1.0, 0.0],
        Axis::Y => [0.0, 1.0],
    };
    let cg = solve_correction(&grid, g)?;
    Ok(FdColumn {
        column: grid.mean_flux(&cg.v, g),
        iterations: cg.iterations,
        relative_residual: cg.relative_residual,
    })
}

/// Pointwise gradient deviation between the FD and series solutions.
#[derive(Debug, Clone, Copy)]
pub struct FieldComparison {
    /// max over matrix pixels farther than 3/n from every interface; the
    /// tube shrinks with n, so this stays first-order near the interfaces
    pub max_deviation: f64,
    /// max over pixels farther than BULK_MARGIN, a grid-independent set
    pub bulk_max: f64,
    pub bulk_mean: f64,
    pub near_points: usize,
    pub bulk_points: usize,
}

/// Rasterizes and solves the FD problem with the series solution's own
/// period jumps as background, then compares central-difference gradients
/// of the FD field against analytic series gradients on matrix pixels.
pub fn fd_field_compare(
    solution: &HarmonicCellSolution,
    n: usize,
) -> Result<FieldComparison, OracleError> {
    let geometry = solution.geometry();
    let grid = FdGrid::rasterize(geometry, solution.contrasts(), n)?;
    let (dx, dy) = solution.period_jumps();
    let g = [dx, dy];
    let cg = solve_correction(&grid, g)?;
    let v = &cg.v;
    let h = grid.h();
    let tube = 3.0 * h;
    struct RowStats {
        max_near: f64,
        max_bulk: f64,
        sum_bulk: f64,
        near: usize,
        bulk: usize,
    }
    let rows: Vec<RowStats> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut st =
                RowStats { max_near: 0.0, max_bulk: 0.0, sum_bulk: 0.0, near: 0, bulk: 0 };
            let x = -0.5 + (i as f64 + 0.5) * h;
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            for j in 0..n {
                let y = -0.5 + (j as f64 + 0.5) * h;
                let z = Complex64::new(x, y);
                let dist = geometry
                    .inclusions
                    .iter()
                    .map(|inc| minimum_image_distance(z, inc.center) - inc.radius)
                    .fold(f64::INFINITY, f64::min);
                if dist <= tube {
                    continue;
                }
                let jp = (j + 1) % n;
                let jm = (j + n - 1) % n;
                let gx = (v[ip * n + j] - v[im * n + j]) / (2.0 * h) + g[0];
                let gy = (v[i * n + jp] - v[i * n + jm]) / (2.0 * h) + g[1];
                let series = solution
                    .eval_gradient(z, Region::Matrix)
                    .expect("pixel beyond the tube lies in the matrix");
                let dev = (gx - series[0]).abs().max((gy - series[1]).abs());
                st.max_near = st.max_near.max(dev);
                st.near += 1;
                if dist > BULK_MARGIN {
                    st.max_bulk = st.max_bulk.max(dev);
                    st.sum_bulk += dev;
                    st.bulk += 1;
                }
            }
            st
        })
        .collect();
    let mut out = FieldComparison {
        max_deviation: 0.0,
        bulk_max: 0.0,
        bulk_mean: 0.0,
        near_points: 0,
        bulk_points: 0,
    };
    let mut sum = 0.0;
    for st in rows {
        out.max_deviation = out.max_deviation.max(st.max_near);
        out.bulk_max = out.bulk_max.max(st.max_bulk);
        sum += st.sum_bulk;
        out.near_points += st.near;
        out.bulk_points += st.bulk;
    }
    if out.bulk_points > 0 {
        out.bulk_mean = sum / out.bulk_points as f64;
    }
    Ok(out)
}

/// Richardson extrapolation from three values on grids n, 2n, 4n with the
/// convergence order fitted empirically: p = log2((v1-v2)/(v2-v3)), limit
/// = v3 + (v3-v2)/(2^p - 1). Returns (limit, fitted order); NaN when the
/// differences do not shrink with the same sign.
pub fn richardson_extrapolate(coarse: f64, mid: f64, fine: f64) -> (f64, f64) {
    let p = ((coarse - mid) / (mid - fine)).log2();
    (fine + (fine - mid) / (2f64.powf(p) - 1.0), p)
}
