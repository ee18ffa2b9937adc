//! Least-squares collocation solver for the transformed transmission problem:
//! Laplace in matrix and inclusions, continuity of the potential across each
//! disk boundary, flux jump du/dn = rho_k dũ_k/dn, doubly periodic gradient,
//! prescribed mean flux of intensity A at angle theta.
//!
//! The exterior field is expanded in derivatives of the square-lattice zeta
//! function centered at each inclusion; interiors are real parts of Taylor
//! series. The first-order zeta term is paired with a linear correction
//! pi*r*(p x + q y) so that every basis function carries zero mean flux;
//! the mean flux then comes from the background term alone, exactly.

use crate::geometry::CellGeometry;
use crate::lattice::{ZetaTable, MAX_DERIV};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("got {got} contrast ratios for {want} inclusions")]
    ContrastMismatch { got: usize, want: usize },
    #[error("contrast ratios must be positive, got {0}")]
    NonPositiveContrast(f64),
    #[error("truncation order {0} exceeds supported maximum {max}", max = MAX_DERIV - 2)]
    OrderTooLarge(usize),
    #[error("collocation system ill-conditioned (condition estimate {cond:.2e}): inclusions too close or order too small")]
    IllConditioned { cond: f64 },
    #[error("residual {residual:.3e} still above tolerance {tol:.1e} at maximum order {order}")]
    NoConvergence { residual: f64, tol: f64, order: usize, best: Box<HarmonicCellSolution> },
    #[error("point {0} is not in the claimed region")]
    RegionMismatch(Complex64),
}

/// Where a point is being evaluated; disk boundaries belong to both sides
/// (matrix-side evaluation is the tie-break convention).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Matrix,
    Inclusion(usize),
}

#[derive(Debug, Clone)]
pub struct CellProblem {
    pub geometry: CellGeometry,
    /// rho_k = 1/C_k, inclusion-to-matrix conductivity ratio of the
    /// transformed problem, one per inclusion.
    pub contrasts: Vec<f64>,
    pub flux_intensity: f64,
    pub flux_angle: f64,
    pub truncation_order: usize,
}

impl CellProblem {
    pub fn new(
        geometry: CellGeometry,
        contrasts: Vec<f64>,
        flux_intensity: f64,
        flux_angle: f64,
        truncation_order: usize,
    ) -> Result<Self, SolverError> {
        let report = geometry.validate();
        if !report.is_ok() {
            return Err(SolverError::InvalidGeometry(
                report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
            ));
        }
        if contrasts.len() != geometry.inclusions.len() {
            return Err(SolverError::ContrastMismatch {
                got: contrasts.len(),
                want: geometry.inclusions.len(),
            });
        }
        if let Some(&bad) = contrasts.iter().find(|&&r| !(r > 0.0)) {
            return Err(SolverError::NonPositiveContrast(bad));
        }
        Ok(CellProblem { geometry, contrasts, flux_intensity, flux_angle, truncation_order })
    }

    fn background(&self) -> Complex64 {
        -self.flux_intensity * Complex64::new(0.0, -self.flux_angle).exp()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub residual_tol: f64,
    pub max_order: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { residual_tol: 1e-6, max_order: 40 }
    }
}

#[derive(Debug, Clone)]
pub struct HarmonicCellSolution {
    geometry: CellGeometry,
    contrasts: Vec<f64>,
    pub background: Complex64,
    /// order the escalation converged at
    pub order: usize,
    /// b_{k,m} = p + iq, m = 1..=order; contribution Re[b g_m(z - a_k)]
    exterior: Vec<Vec<Complex64>>,
    /// (c_{k,0}, c_{k,m} m=1..=order); ũ_k = c0 + sum Re[c_m W^m], W=(z-a_k)/r_k
    interior: Vec<(f64, Vec<Complex64>)>,
    normalization: f64,
    pub residual_norm: f64,
    /// residual at the order originally requested (before escalation)
    pub requested_order_residual: f64,
    pub condition_estimate: f64,
    zeta: ZetaTable,
}

/// Escalates the truncation order in steps of 2 from `problem.truncation_order`
/// until the verification residual drops below `options.residual_tol` or
/// `options.max_order` is reached.
pub fn solve(
    problem: &CellProblem,
    options: &SolverOptions,
) -> Result<HarmonicCellSolution, SolverError> {
    let mut order = problem.truncation_order;
    let mut requested = None;
    loop {
        let mut sol = solve_at_order(problem, order)?;
        let req = *requested.get_or_insert(sol.residual_norm);
        sol.requested_order_residual = req;
        if sol.residual_norm <= options.residual_tol {
            return Ok(sol);
        }
        if order >= options.max_order {
            return Err(SolverError::NoConvergence {
                residual: sol.residual_norm,
                tol: options.residual_tol,
                order,
                best: Box::new(sol),
            });
        }
        order = (order + 2).min(options.max_order);
    }
}

fn solve_at_order(problem: &CellProblem, m_ord: usize) -> Result<HarmonicCellSolution, SolverError> {
    if m_ord + 2 > MAX_DERIV {
        return Err(SolverError::OrderTooLarge(m_ord));
    }
    let zt = ZetaTable::new();
    let n = problem.geometry.inclusions.len();
    let b0 = problem.background();

    if n == 0 {
        let mut sol = HarmonicCellSolution {
            geometry: problem.geometry.clone(),
            contrasts: Vec::new(),
            background: b0,
            order: m_ord,
            exterior: Vec::new(),
            interior: Vec::new(),
            normalization: 0.0,
            residual_norm: 0.0,
            requested_order_residual: 0.0,
            condition_estimate: 1.0,
            zeta: zt,
        };
        sol.normalization = 0.0; // u = Re[B z] already vanishes at 0
        return Ok(sol);
    }

    let pcol = 4 * (m_ord + 1);
    let ncols = 2 * m_ord * n + (1 + 2 * m_ord) * n;
    let nrows = 2 * n * pcol;
    let mut a = DMatrix::<f64>::zeros(nrows, ncols);
    let mut b = DVector::<f64>::zeros(nrows);

    let mut rowu = vec![0.0f64; ncols];
    let mut rowf = vec![0.0f64; ncols];
    let mut row = 0;
    for k in 0..n {
        let inc = &problem.geometry.inclusions[k];
        for j in 0..pcol {
            let t = 2.0 * PI * (j as f64) / (pcol as f64);
            let nu = Complex64::new(0.0, t).exp();
            let z = inc.center + inc.radius * nu;
            rowu.fill(0.0);
            rowf.fill(0.0);
            fill_condition_rows(&zt, problem, m_ord, k, z, nu, &mut rowu, &mut rowf);
            for (c, (&vu, &vf)) in rowu.iter().zip(rowf.iter()).enumerate() {
                a[(row, c)] = vu;
                a[(row + 1, c)] = vf;
            }
            b[row] = -(b0 * z).re;
            b[row + 1] = -(b0 * nu).re;
            row += 2;
        }
    }

    let (x, cond) = equilibrated_lstsq(a, b);
    if !x.iter().all(|v| v.is_finite()) || cond > 1e13 {
        return Err(SolverError::IllConditioned { cond });
    }

    // repackage the real unknown vector
    let mut exterior = Vec::with_capacity(n);
    for l in 0..n {
        let mut bs = Vec::with_capacity(m_ord);
        for m in 1..=m_ord {
            let i = 2 * (m_ord * l + m - 1);
            bs.push(Complex64::new(x[i], x[i + 1]));
        }
        exterior.push(bs);
    }
    let base0 = 2 * m_ord * n;
    let mut interior = Vec::with_capacity(n);
    for k in 0..n {
        let base = base0 + (1 + 2 * m_ord) * k;
        let c0 = x[base];
        let cs: Vec<Complex64> =
            (1..=m_ord).map(|m| Complex64::new(x[base + 2 * m - 1], x[base + 2 * m])).collect();
        interior.push((c0, cs));
    }

    let mut sol = HarmonicCellSolution {
        geometry: problem.geometry.clone(),
        contrasts: problem.contrasts.clone(),
        background: b0,
        order: m_ord,
        exterior,
        interior,
        normalization: 0.0,
        residual_norm: 0.0,
        requested_order_residual: 0.0,
        condition_estimate: cond,
        zeta: zt,
    };
    sol.residual_norm = sol.verification_residual(problem);
    sol.normalization = sol.raw_potential_at_origin();
    Ok(sol)
}

/// Fill the potential-continuity and flux-jump rows for boundary point z of
/// inclusion k with outward normal nu.
#[allow(clippy::too_many_arguments)]
fn fill_condition_rows(
    zt: &ZetaTable,
    problem: &CellProblem,
    m_ord: usize,
    k: usize,
    z: Complex64,
    nu: Complex64,
    rowu: &mut [f64],
    rowf: &mut [f64],
) {
    let n = problem.geometry.inclusions.len();
    let mut zd = vec![Complex64::new(0.0, 0.0); m_ord + 1];
    for l in 0..n {
        let il = &problem.geometry.inclusions[l];
        zt.derivs_into(z - il.center, m_ord, &mut zd);
        let mut scale = il.radius; // (-1)^{m-1} r^m / (m-1)!
        for m in 1..=m_ord {
            if m > 1 {
                scale *= -il.radius / ((m - 1) as f64);
            }
            let g = scale * zd[m - 1];
            let gp = scale * zd[m];
            let cp = 2 * (m_ord * l + m - 1);
            rowu[cp] += g.re;
            rowu[cp + 1] += -g.im;
            let gn = gp * nu;
            rowf[cp] += gn.re;
            rowf[cp + 1] += -gn.im;
            if m == 1 {
                // flux-free pairing of the quasi-periodic term
                rowu[cp] += PI * z.re * il.radius;
                rowu[cp + 1] += PI * z.im * il.radius;
                rowf[cp] += PI * nu.re * il.radius;
                rowf[cp + 1] += PI * nu.im * il.radius;
            }
        }
    }
    // interior of inclusion k, moved to the left-hand side
    let rho = problem.contrasts[k];
    let r = problem.geometry.inclusions[k].radius;
    let base = 2 * m_ord * n + (1 + 2 * m_ord) * k;
    rowu[base] -= 1.0;
    let mut pw = Complex64::new(1.0, 0.0); // nu^m on the boundary
    for m in 1..=m_ord {
        pw *= nu;
        rowu[base + 2 * m - 1] -= pw.re;
        rowu[base + 2 * m] -= -pw.im;
        let gpin = (m as f64 / r) * pw; // d/dn Re[c W^m] = Re[c (m/r) nu^m] on the boundary
        rowf[base + 2 * m - 1] -= rho * gpin.re;
        rowf[base + 2 * m] -= -rho * gpin.im;
    }
}

/// Column-equilibrated least squares via column-pivoted QR; returns the
/// solution and a condition estimate from the R diagonal.
fn equilibrated_lstsq(mut a: DMatrix<f64>, b: DVector<f64>) -> (DVector<f64>, f64) {
    let ncols = a.ncols();
    let mut scale = vec![0.0f64; ncols];
    for j in 0..ncols {
        let m = a.column(j).amax();
        scale[j] = if m > 0.0 { m } else { 1.0 };
        let inv = 1.0 / scale[j];
        a.column_mut(j).scale_mut(inv);
    }
    let qr = a.col_piv_qr();
    let (q, r, p) = (qr.q(), qr.r(), qr.p());
    let diag = r.diagonal();
    let dmax = diag.amax();
    let dmin = diag.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    let cond = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };
    let qtb = q.transpose() * b;
    let mut y = qtb;
    if !r.solve_upper_triangular_mut(&mut y) {
        return (DVector::from_element(ncols, f64::NAN), f64::INFINITY);
    }
    p.inv_permute_rows(&mut y);
    for j in 0..ncols {
        y[j] /= scale[j];
    }
    (y, cond)
}

impl HarmonicCellSolution {
    pub fn geometry(&self) -> &CellGeometry {
        &self.geometry
    }

    pub fn contrasts(&self) -> &[f64] {
        &self.contrasts
    }

    /// (d_x, d_y): constants u(z+1)-u(z) and u(z+i)-u(z), from the background
    /// plus the quasi-periodic increments of the first-order terms.
    pub fn period_jumps(&self) -> (f64, f64) {
        let mut sp = 0.0;
        let mut sq = 0.0;
        for (l, inc) in self.geometry.inclusions.iter().enumerate() {
            if let Some(b1) = self.exterior[l].first() {
                sp += b1.re * inc.radius;
                sq += b1.im * inc.radius;
            }
        }
        (self.background.re + 2.0 * PI * sp, -self.background.im + 2.0 * PI * sq)
    }

    /// Classify a point after wrapping into the cell. Boundary points (within
    /// `tol`) validate against both sides.
    fn region_ok(&self, z: Complex64, region: Region) -> bool {
        let w = crate::geometry::wrap_into_cell(z);
        const TOL: f64 = 1e-12;
        match region {
            Region::Matrix => self.geometry.inclusions.iter().all(|inc| {
                crate::geometry::minimum_image_distance(w, inc.center) >= inc.radius - TOL
            }),
            Region::Inclusion(k) => match self.geometry.inclusions.get(k) {
                Some(inc) => {
                    crate::geometry::minimum_image_distance(w, inc.center) <= inc.radius + TOL
                }
                None => false,
            },
        }
    }

    fn raw_potential_at_origin(&self) -> f64 {
        let origin = Complex64::new(0.0, 0.0);
        for (k, inc) in self.geometry.inclusions.iter().enumerate() {
            if (origin - inc.center).norm() < inc.radius {
                return self.raw_interior(k, origin);
            }
        }
        self.raw_exterior_potential(origin)
    }

    /// u evaluated directly from the series at unwrapped z; quasi-periodic,
    /// so u(z+1) - u(z) = d_x automatically.
    fn raw_exterior_potential(&self, z: Complex64) -> f64 {
        let mut val = (self.background * z).re;
        let m_ord = self.order;
        let mut zd = vec![Complex64::new(0.0, 0.0); m_ord.max(1)];
        for (l, inc) in self.geometry.inclusions.iter().enumerate() {
            if m_ord == 0 {
                break;
            }
            self.zeta.derivs_into(z - inc.center, m_ord - 1, &mut zd);
            let mut scale = inc.radius;
            for m in 1..=m_ord {
                if m > 1 {
                    scale *= -inc.radius / ((m - 1) as f64);
                }
                let b = self.exterior[l][m - 1];
                val += (b * (scale * zd[m - 1])).re;
                if m == 1 {
                    val += PI * inc.radius * (b.re * z.re + b.im * z.im);
                }
            }
        }
        val
    }

    fn raw_exterior_gradient(&self, z: Complex64) -> (f64, f64) {
        let mut gx = self.background.re;
        let mut gy = -self.background.im;
        let m_ord = self.order;
        let mut zd = vec![Complex64::new(0.0, 0.0); m_ord + 1];
        for (l, inc) in self.geometry.inclusions.iter().enumerate() {
            if m_ord == 0 {
                break;
            }
            self.zeta.derivs_into(z - inc.center, m_ord, &mut zd);
            let mut scale = inc.radius;
            for m in 1..=m_ord {
                if m > 1 {
                    scale *= -inc.radius / ((m - 1) as f64);
                }
                let b = self.exterior[l][m - 1];
                let w = b * (scale * zd[m]);
                gx += w.re;
                gy += -w.im;
                if m == 1 {
                    gx += PI * inc.radius * b.re;
                    gy += PI * inc.radius * b.im;
                }
            }
        }
        (gx, gy)
    }

    /// ũ_k at a cell-local point (no lattice shift).
    fn raw_interior(&self, k: usize, z: Complex64) -> f64 {
        let inc = &self.geometry.inclusions[k];
        let w = (z - inc.center) / inc.radius;
        let (c0, cs) = &self.interior[k];
        let mut val = *c0;
        let mut pw = Complex64::new(1.0, 0.0);
        for c in cs {
            pw *= w;
            val += (c * pw).re;
        }
        val
    }

    fn raw_interior_gradient(&self, k: usize, z: Complex64) -> (f64, f64) {
        let inc = &self.geometry.inclusions[k];
        let w = (z - inc.center) / inc.radius;
        let (_, cs) = &self.interior[k];
        // psi'(z) = sum m c_m W^{m-1} / r
        let mut d = Complex64::new(0.0, 0.0);
        let mut pw = Complex64::new(1.0, 0.0);
        for (m, c) in cs.iter().enumerate() {
            d += ((m + 1) as f64) * c * pw;
            pw *= w;
        }
        d /= inc.radius;
        (d.re, -d.im)
    }

    /// Normalized potential: u_*(z) in the matrix (quasi-periodic continuation
    /// for z outside the cell), ũ_k in inclusion k (with the lattice increment
    /// m1 d_x + m2 d_y of the cell containing z, so continuity holds in every
    /// cell).
    pub fn eval_potential(&self, z: Complex64, region: Region) -> Result<f64, SolverError> {
        if !self.region_ok(z, region) {
            return Err(SolverError::RegionMismatch(z));
        }
        match region {
            Region::Matrix => Ok(self.raw_exterior_potential(z) - self.normalization),
            Region::Inclusion(k) => {
                // z sits in the image of disk k shifted by (m1, m2); since
                // r < 1/2 that image is unique and rounding recovers it
                let inc = &self.geometry.inclusions[k];
                let m1 = (z.re - inc.center.re).round();
                let m2 = (z.im - inc.center.im).round();
                let (dx, dy) = self.period_jumps();
                let zl = z - Complex64::new(m1, m2);
                Ok(self.raw_interior(k, zl) + m1 * dx + m2 * dy - self.normalization)
            }
        }
    }

    /// Gradient of the potential; doubly periodic, evaluated analytically.
    pub fn eval_gradient(&self, z: Complex64, region: Region) -> Result<[f64; 2], SolverError> {
        if !self.region_ok(z, region) {
            return Err(SolverError::RegionMismatch(z));
        }
        match region {
            Region::Matrix => {
                let (gx, gy) = self.raw_exterior_gradient(z);
                Ok([gx, gy])
            }
            Region::Inclusion(k) => {
                let inc = &self.geometry.inclusions[k];
                let m1 = (z.re - inc.center.re).round();
                let m2 = (z.im - inc.center.im).round();
                let zl = z - Complex64::new(m1, m2);
                let (gx, gy) = self.raw_interior_gradient(k, zl);
                Ok([gx, gy])
            }
        }
    }

    /// Normalized u_* at an unwrapped matrix point, no region check
    /// (quadrature caches classify points themselves).
    pub(crate) fn exterior_value(&self, z: Complex64) -> f64 {
        self.raw_exterior_potential(z) - self.normalization
    }

    /// Normalized u~_k at a cell-local point, no region check.
    pub(crate) fn interior_value(&self, k: usize, z: Complex64) -> f64 {
        self.raw_interior(k, z) - self.normalization
    }

    /// Max transmission residual over offset verification points (distinct
    /// from the collocation points), both condition types.
    fn verification_residual(&self, problem: &CellProblem) -> f64 {
        let mut worst: f64 = 0.0;
        let nver = (4 * (self.order + 1)).max(64);
        for (k, inc) in self.geometry.inclusions.iter().enumerate() {
            for j in 0..nver {
                let t = 2.0 * PI * (j as f64 + 0.5) / (nver as f64);
                let nu = Complex64::new(0.0, t).exp();
                let z = inc.center + inc.radius * nu;
                let uout = self.raw_exterior_potential(z);
                let uin = self.raw_interior(k, z);
                let (gx, gy) = self.raw_exterior_gradient(z);
                let fout = gx * nu.re + gy * nu.im;
                let (hx, hy) = self.raw_interior_gradient(k, z);
                let fin = problem.contrasts[k] * (hx * nu.re + hy * nu.im);
                worst = worst.max((uout - uin).abs()).max((fout - fin).abs());
            }
        }
        worst
    }
}

/// Linear effective tensor of the transformed problem from two solves
/// (theta = 0 and pi/2, A = -1): the period-jump matrix J has columns
/// <grad u> per direction and the mean flux is the unit vector, so
/// Lambda = J^{-1}.
pub struct LinearTensor {
    pub lambda: [[f64; 2]; 2],
    /// period-jump matrix; equals the resistance tensor of the linear problem
    pub jumps: [[f64; 2]; 2],
    pub residual_norm: f64,
    pub order: usize,
}

pub fn linear_effective_tensor(
    geometry: &CellGeometry,
    contrasts: &[f64],
    truncation_order: usize,
    options: &SolverOptions,
) -> Result<LinearTensor, SolverError> {
    let mut jm = [[0.0f64; 2]; 2];
    let mut worst = 0.0f64;
    let mut order = 0;
    for (j, theta) in [0.0, PI / 2.0].into_iter().enumerate() {
        let problem = CellProblem::new(
            geometry.clone(),
            contrasts.to_vec(),
            -1.0,
            theta,
            truncation_order,
        )?;
        let sol = solve(&problem, options)?;
        let (dx, dy) = sol.period_jumps();
        jm[0][j] = dx;
        jm[1][j] = dy;
        worst = worst.max(sol.residual_norm);
        order = order.max(sol.order);
    }
    let det = jm[0][0] * jm[1][1] - jm[0][1] * jm[1][0];
    let lambda = [
        [jm[1][1] / det, -jm[0][1] / det],
        [-jm[1][0] / det, jm[0][0] / det],
    ];
    Ok(LinearTensor { lambda, jumps: jm, residual_norm: worst, order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::four_disk_example;
    use approx::assert_abs_diff_eq;

    fn fixed_order() -> SolverOptions {
        // accept whatever the starting order gives
        SolverOptions { residual_tol: f64::MAX, max_order: 40 }
    }

    fn paper_problem(m: usize) -> CellProblem {
        CellProblem::new(four_disk_example(), vec![100.0 / 9.0; 4], -1.0, 0.0, m).unwrap()
    }

    #[test]
    fn lstsq_agrees_with_normal_equations() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
        let b = DVector::from_row_slice(&[6.0, 5.0, 7.0, 10.0]);
        let (x, cond) = equilibrated_lstsq(a.clone(), b.clone());
        let ata = a.transpose() * &a;
        let atb = a.transpose() * &b;
        let xref = ata.lu().solve(&atb).unwrap();
        assert_abs_diff_eq!(x[0], xref[0], epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], xref[1], epsilon = 1e-12);
        assert!(cond.is_finite() && cond > 1.0);
    }

    #[test]
    fn empty_cell_is_the_background() {
        let p = CellProblem::new(CellGeometry::default(), vec![], -1.0, 0.0, 6).unwrap();
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        let z = Complex64::new(0.3, 0.1);
        assert_abs_diff_eq!(sol.eval_potential(z, Region::Matrix).unwrap(), 0.3, epsilon = 1e-15);
        let g = sol.eval_gradient(z, Region::Matrix).unwrap();
        assert_abs_diff_eq!(g[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-15);
        assert_eq!(sol.period_jumps(), (1.0, 0.0));
        assert_eq!(sol.residual_norm, 0.0);

        let p = CellProblem::new(CellGeometry::default(), vec![], -1.0, PI / 2.0, 6).unwrap();
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        let (dx, dy) = sol.period_jumps();
        assert_abs_diff_eq!(dx, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dy, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn unit_contrast_reduces_to_homogeneous() {
        let p = CellProblem::new(four_disk_example(), vec![1.0; 4], -1.0, 0.0, 4).unwrap();
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert!(sol.residual_norm < 1e-12, "residual {}", sol.residual_norm);
        for &(x, y) in &[(0.05, 0.05), (-0.4, 0.3), (0.2, -0.45)] {
            let z = Complex64::new(x, y);
            let u = sol.eval_potential(z, Region::Matrix).unwrap();
            assert_abs_diff_eq!(u, x, epsilon = 1e-10);
        }
        let (dx, dy) = sol.period_jumps();
        assert_abs_diff_eq!(dx, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(dy, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn residual_decays_with_order() {
        let r: Vec<f64> = [2usize, 6, 10]
            .iter()
            .map(|&m| solve(&paper_problem(m), &fixed_order()).unwrap().residual_norm)
            .collect();
        assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
    }

    #[test]
    fn period_jump_matches_direct_difference() {
        let sol = solve(&paper_problem(8), &fixed_order()).unwrap();
        let z = Complex64::new(0.07, 0.11);
        let (dx, dy) = sol.period_jumps();
        let u0 = sol.eval_potential(z, Region::Matrix).unwrap();
        let ux = sol.eval_potential(z + Complex64::new(1.0, 0.0), Region::Matrix).unwrap();
        let uy = sol.eval_potential(z + Complex64::new(0.0, 1.0), Region::Matrix).unwrap();
        assert_abs_diff_eq!(ux - u0, dx, epsilon = 1e-10);
        assert_abs_diff_eq!(uy - u0, dy, epsilon = 1e-10);
    }

    #[test]
    fn gradient_is_doubly_periodic() {
        let sol = solve(&paper_problem(8), &fixed_order()).unwrap();
        let z = Complex64::new(0.07, 0.11);
        let g0 = sol.eval_gradient(z, Region::Matrix).unwrap();
        for shift in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
            let g1 = sol.eval_gradient(z + shift, Region::Matrix).unwrap();
            assert_abs_diff_eq!(g0[0], g1[0], epsilon = 1e-12);
            assert_abs_diff_eq!(g0[1], g1[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_difference_of_potential() {
        let sol = solve(&paper_problem(8), &fixed_order()).unwrap();
        let h = 1e-6;
        for &(x, y) in &[(0.05, 0.02), (-0.38, 0.21)] {
            let z = Complex64::new(x, y);
            let g = sol.eval_gradient(z, Region::Matrix).unwrap();
            let up = sol.eval_potential(z + Complex64::new(h, 0.0), Region::Matrix).unwrap();
            let um = sol.eval_potential(z - Complex64::new(h, 0.0), Region::Matrix).unwrap();
            assert_abs_diff_eq!(g[0], (up - um) / (2.0 * h), epsilon = 1e-6);
            let vp = sol.eval_potential(z + Complex64::new(0.0, h), Region::Matrix).unwrap();
            let vm = sol.eval_potential(z - Complex64::new(0.0, h), Region::Matrix).unwrap();
            assert_abs_diff_eq!(g[1], (vp - vm) / (2.0 * h), epsilon = 1e-6);
        }
        // interior gradient too
        let c = four_disk_example().inclusions[0].center;
        let g = sol.eval_gradient(c, Region::Inclusion(0)).unwrap();
        let up = sol.eval_potential(c + Complex64::new(h, 0.0), Region::Inclusion(0)).unwrap();
        let um = sol.eval_potential(c - Complex64::new(h, 0.0), Region::Inclusion(0)).unwrap();
        assert_abs_diff_eq!(g[0], (up - um) / (2.0 * h), epsilon = 1e-6);
    }

    #[test]
    fn normalization_vanishes_at_origin() {
        let sol = solve(&paper_problem(6), &fixed_order()).unwrap();
        assert_abs_diff_eq!(
            sol.eval_potential(Complex64::new(0.0, 0.0), Region::Matrix).unwrap(),
            0.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn coefficients_scale_linearly_with_intensity() {
        let g = four_disk_example();
        let p1 = CellProblem::new(g.clone(), vec![100.0 / 9.0; 4], -1.0, 0.3, 6).unwrap();
        let p2 = CellProblem::new(g, vec![100.0 / 9.0; 4], -2.0, 0.3, 6).unwrap();
        let s1 = solve(&p1, &fixed_order()).unwrap();
        let s2 = solve(&p2, &fixed_order()).unwrap();
        let z = Complex64::new(0.11, -0.07);
        let u1 = s1.eval_potential(z, Region::Matrix).unwrap();
        let u2 = s2.eval_potential(z, Region::Matrix).unwrap();
        assert_abs_diff_eq!(u2, 2.0 * u1, epsilon = 1e-10);
        let (dx1, _) = s1.period_jumps();
        let (dx2, _) = s2.period_jumps();
        assert_abs_diff_eq!(dx2, 2.0 * dx1, epsilon = 1e-12);
    }

    #[test]
    fn zero_net_flux_and_circulation_around_each_inclusion() {
        let sol = solve(&paper_problem(8), &fixed_order()).unwrap();
        let geom = four_disk_example();
        for inc in &geom.inclusions {
            let n = 256;
            let mut flux = 0.0;
            let mut circ = 0.0;
            // narrowest inter-disk corridor is 0.02 wide, so radius + 0.01
            // keeps the whole contour in the matrix
            let rr = inc.radius + 0.01;
            for j in 0..n {
                let t = 2.0 * PI * (j as f64) / (n as f64);
                let nu = Complex64::new(0.0, t).exp();
                let z = inc.center + rr * nu;
                let g = sol.eval_gradient(z, Region::Matrix).unwrap();
                flux += (g[0] * nu.re + g[1] * nu.im) * rr * 2.0 * PI / (n as f64);
                circ += (-g[0] * nu.im + g[1] * nu.re) * rr * 2.0 * PI / (n as f64);
            }
            assert!(flux.abs() < 1e-8, "net flux {flux}");
            assert!(circ.abs() < 1e-8, "circulation {circ}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = four_disk_example();
        assert!(matches!(
            CellProblem::new(g.clone(), vec![1.0; 3], -1.0, 0.0, 6),
            Err(SolverError::ContrastMismatch { got: 3, want: 4 })
        ));
        assert!(matches!(
            CellProblem::new(g.clone(), vec![1.0, 1.0, -2.0, 1.0], -1.0, 0.0, 6),
            Err(SolverError::NonPositiveContrast(_))
        ));
        let sol = solve(&paper_problem(6), &fixed_order()).unwrap();
        // center of disk 0 claimed as matrix
        let c = g.inclusions[0].center;
        assert!(matches!(
            sol.eval_potential(c, Region::Matrix),
            Err(SolverError::RegionMismatch(_))
        ));
        assert!(sol.eval_potential(c, Region::Inclusion(0)).is_ok());
    }
}
