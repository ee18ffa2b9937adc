//! Cell averages of the physical fields and effective tensor curves.
//!
//! The mean flux is analytic. The mean gradient reduces to integrals of T
//! over the four cell edges (interface terms cancel by continuity), with
//! panels split where u + C crosses a Kirchhoff breakpoint. The mean
//! temperature is an area integral: adaptive quadrature over the matrix with
//! the disks masked, plus tensorized polar Gauss-Legendre per disk.
//!
//! Everything independent of the additive constant C (node positions,
//! potential values at nodes) is cached per solution, so a sweep over C
//! costs little more than re-applying the inverse Kirchhoff maps.

use crate::cell_solver::{solve, CellProblem, HarmonicCellSolution, SolverError, SolverOptions};
use crate::conductivity::{ContrastFamily, KirchhoffMap};
use crate::geometry::{minimum_image_distance, CellGeometry};
use crate::pchip::MonotoneCubic;
use crate::reconstruction::NonlinearField;
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;
use thiserror::Error;

// 8-point Gauss-Legendre on [-1, 1] (area panels)
const GL8_X: [f64; 8] = [
    -0.9602898564975362,
    -0.7966664774136267,
    -0.525532409916329,
    -0.18343464249564978,
    0.18343464249564978,
    0.525532409916329,
    0.7966664774136267,
    0.9602898564975362,
];
const GL8_W: [f64; 8] = [
    0.10122853629037669,
    0.22238103445337434,
    0.31370664587788705,
    0.36268378337836177,
    0.36268378337836177,
    0.31370664587788705,
    0.22238103445337434,
    0.10122853629037669,
];
// 10-point Gauss-Legendre on [-1, 1] (edge panels)
const GL10_X: [f64; 10] = [
    -0.9739065285171717,
    -0.8650633666889845,
    -0.6794095682990244,
    -0.4333953941292472,
    -0.14887433898163122,
    0.14887433898163122,
    0.4333953941292472,
    0.6794095682990244,
    0.8650633666889845,
    0.9739065285171717,
];
const GL10_W: [f64; 10] = [
    0.06667134430868807,
    0.14945134915058036,
    0.219086362515982,
    0.2692667193099965,
    0.295524224714753,
    0.295524224714753,
    0.2692667193099965,
    0.219086362515982,
    0.14945134915058036,
    0.06667134430868807,
];
// 32-point Gauss-Legendre on [-1, 1] (radial factor of the disk integrals)
const GL32_X: [f64; 32] = [
    -0.9972638618494816,
    -0.9856115115452684,
    -0.9647622555875064,
    -0.9349060759377397,
    -0.8963211557660522,
    -0.84936761373257,
    -0.7944837959679424,
    -0.7321821187402897,
    -0.6630442669302152,
    -0.5877157572407623,
    -0.5068999089322294,
    -0.42135127613063533,
    -0.33186860228212767,
    -0.23928736225213706,
    -0.1444719615827965,
    -0.04830766568773831,
    0.04830766568773831,
    0.1444719615827965,
    0.23928736225213706,
    0.33186860228212767,
    0.42135127613063533,
    0.5068999089322294,
    0.5877157572407623,
    0.6630442669302152,
    0.7321821187402897,
    0.7944837959679424,
    0.84936761373257,
    0.8963211557660522,
    0.9349060759377397,
    0.9647622555875064,
    0.9856115115452684,
    0.9972638618494816,
];
const GL32_W: [f64; 32] = [
    0.007018610009469298,
    0.016274394730905965,
    0.025392065309262427,
    0.034273862913021626,
    0.042835898022226426,
    0.050998059262376244,
    0.058684093478535704,
    0.06582222277636175,
    0.07234579410884845,
    0.07819389578707031,
    0.08331192422694685,
    0.08765209300440391,
    0.09117387869576386,
    0.09384439908080457,
    0.09563872007927483,
    0.09654008851472781,
    0.09654008851472781,
    0.09563872007927483,
    0.09384439908080457,
    0.09117387869576386,
    0.08765209300440391,
    0.08331192422694685,
    0.07819389578707031,
    0.07234579410884845,
    0.06582222277636175,
    0.058684093478535704,
    0.050998059262376244,
    0.042835898022226426,
    0.034273862913021626,
    0.025392065309262427,
    0.016274394730905965,
    0.007018610009469298,
];

const EDGE_PANELS: usize = 96;
const MAX_PANEL_CUTS: usize = 12;
const RING_POINTS: usize = 256;
const DISK_ANGLES: usize = 128;
/// smallest area leaf is 2^-9 on a side
const AREA_MIN_SIZE: f64 = 1.0 / 512.0;
const AREA_BASE: usize = 16;
/// sample density multiplier inside the windows around the Kirchhoff
/// breakpoint crossings, relative to the rest of the nonlinear strip
const WINDOW_WEIGHT: f64 = 3.0;
/// extra half-width added to the crossing windows beyond u_range / 2
const WINDOW_MARGIN: f64 = 0.4;
/// points spent on each affine tail outside the nonlinear strip
const TAIL_POINTS: usize = 3;

#[derive(Debug, Error)]
pub enum AveragingError {
    #[error("conductivity family is not proportional")]
    NotProportional,
    #[error("inclusion {k}: contrast id {id} has no profile in the family")]
    BadContrastId { k: usize, id: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("flux quadrature self-check off by {diff:.3e} (tolerance {tol:.3e}): solution too inaccurate")]
    FluxSelfCheck { diff: f64, tol: f64 },
    #[error("an edge panel needed more than {0} breakpoint subdivisions")]
    EdgeRefinementCap(usize),
    #[error("period jumps vanish; every cell sees the same shift")]
    DegenerateLattice,
    #[error("sweep temperatures are not strictly increasing")]
    NonMonotoneSweep,
    #[error("effective resistance tensor is singular at <T> = {0}")]
    SingularTensor(f64),
    #[error("invalid sweep setup: {0}")]
    BadSweep(&'static str),
}

/// The averaged quantities of one solved cell at one shift C.
#[derive(Debug, Clone, Copy)]
pub struct CellAverages {
    /// mean physical flux; analytically equal to -A [cos th, sin th]
    pub avg_flux: [f64; 2],
    pub avg_gradient: [f64; 2],
    pub avg_temperature: f64,
    pub shift: f64,
    /// |analytic flux - its 1-D quadrature reconstruction| (solver health)
    pub flux_check: f64,
    /// |masked-matrix + polar scheme - single-pass dispatch scheme| for <T>
    pub temperature_check: f64,
}

/// One assembled sample of the effective response.
#[derive(Debug, Clone, Copy)]
pub struct CurveSample {
    pub avg_t: f64,
    /// the shift C of the theta = 0 run this sample came from
    pub shift: f64,
    /// lattice index (m1, m2) of that shift for cell sweeps, None for
    /// shift sweeps; clusters keep the first index in sorted shift order
    pub cell: Option<(i32, i32)>,
    pub r: [[f64; 2]; 2],
    pub lambda: [[f64; 2]; 2],
}

/// One measured resistance column: what a single sweep evaluation actually
/// produces for its direction, before any cross-direction assembly.
#[derive(Debug, Clone, Copy)]
pub struct MeasuredColumn {
    pub avg_t: f64,
    /// resistance column of this sample's direction, <grad T> / (-A)
    pub column: [f64; 2],
    pub shift: f64,
}

/// Effective resistance/conductivity versus average temperature, with
/// shape-preserving per-component interpolants.
#[derive(Debug, Clone)]
pub struct EffectiveCurve {
    pub samples: Vec<CurveSample>,
    /// per-direction measured columns the assembly was built from; the
    /// procedure-equivalence check compares these, not assembled tensors
    pub measured: [Vec<MeasuredColumn>; 2],
    /// cell-sweep samples dropped because their shifts coincided
    pub clustered_samples: usize,
    r_interp: [MonotoneCubic; 4],
    lambda_interp: [MonotoneCubic; 4],
}

impl EffectiveCurve {
    pub fn t_range(&self) -> (f64, f64) {
        (self.samples[0].avg_t, self.samples[self.samples.len() - 1].avg_t)
    }

    /// R_e(t) by componentwise interpolation; beyond the sampled range the
    /// end cubics extrapolate.
    pub fn r_at(&self, t: f64) -> [[f64; 2]; 2] {
        [
            [self.r_interp[0].eval(t), self.r_interp[1].eval(t)],
            [self.r_interp[2].eval(t), self.r_interp[3].eval(t)],
        ]
    }

    pub fn lambda_at(&self, t: f64) -> [[f64; 2]; 2] {
        [
            [self.lambda_interp[0].eval(t), self.lambda_interp[1].eval(t)],
            [self.lambda_interp[2].eval(t), self.lambda_interp[3].eval(t)],
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    /// shift range; None derives +-(1.3 |f(last breakpoint)| + u_range)
    pub c_range: Option<(f64, f64)>,
    pub n_samples: usize,
    pub flux_intensity: f64,
    pub truncation_order: usize,
    pub solver: SolverOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            c_range: None,
            n_samples: 81,
            flux_intensity: -1.0,
            truncation_order: 6,
            solver: SolverOptions::default(),
        }
    }
}

// --- per-solution quadrature caches ------------------------------------------

/// Kirchhoff maps resolved per inclusion, plus the u-values at which the
/// matrix map switches branch (the edge/area integrands kink there).
struct MapSet {
    matrix: KirchhoffMap,
    crossings: Vec<f64>,
    incs: Vec<(KirchhoffMap, f64)>,
}

impl MapSet {
    /// Also returns the transformed-problem contrasts rho_k = 1/C_k.
    fn build(
        geometry: &CellGeometry,
        family: &ContrastFamily,
    ) -> Result<(Self, Vec<f64>), AveragingError> {
        let constants = family.constants.as_ref().ok_or(AveragingError::NotProportional)?;
        let matrix = KirchhoffMap::from_profile(&family.matrix);
        let crossings: Vec<f64> =
            family.matrix.breakpoints().iter().map(|&b| matrix.forward(b)).collect();
        let mut incs = Vec::with_capacity(geometry.inclusions.len());
        let mut rho = Vec::with_capacity(geometry.inclusions.len());
        for (k, inc) in geometry.inclusions.iter().enumerate() {
            let id = inc.contrast_id;
            if id >= family.inclusions.len() {
                return Err(AveragingError::BadContrastId { k, id });
            }
            incs.push((KirchhoffMap::from_profile(&family.inclusions[id]), constants[id]));
            rho.push(1.0 / constants[id]);
        }
        Ok((MapSet { matrix, crossings, incs }, rho))
    }
}

#[derive(Clone, Copy)]
enum EdgeKind {
    Right,
    Left,
    Top,
    Bottom,
}

impl EdgeKind {
    fn point(self, s: f64) -> Complex64 {
        match self {
            EdgeKind::Right => Complex64::new(0.5, s),
            EdgeKind::Left => Complex64::new(-0.5, s),
            EdgeKind::Top => Complex64::new(s, 0.5),
            EdgeKind::Bottom => Complex64::new(s, -0.5),
        }
    }
}

struct EdgePanel {
    a: f64,
    b: f64,
    u_nodes: [f64; 10],
    u_ends: (f64, f64),
}

struct EdgeSet {
    edges: [(EdgeKind, Vec<EdgePanel>); 4],
    /// u~_k on each disk boundary at RING_POINTS equispaced angles
    rings: Vec<Vec<f64>>,
    u_min: f64,
    u_max: f64,
}

impl EdgeSet {
    fn build(sol: &HarmonicCellSolution) -> Self {
        let mut u_min = f64::INFINITY;
        let mut u_max = f64::NEG_INFINITY;
        let mut edges = [EdgeKind::Right, EdgeKind::Left, EdgeKind::Top, EdgeKind::Bottom]
            .map(|kind| (kind, Vec::with_capacity(EDGE_PANELS)));
        for (kind, panels) in &mut edges {
            for p in 0..EDGE_PANELS {
                let a = -0.5 + p as f64 / EDGE_PANELS as f64;
                let b = -0.5 + (p + 1) as f64 / EDGE_PANELS as f64;
                let mut u_nodes = [0.0; 10];
                for (i, &x) in GL10_X.iter().enumerate() {
                    let s = 0.5 * (a + b) + 0.5 * (b - a) * x;
                    u_nodes[i] = sol.exterior_value(kind.point(s));
                }
                let u_ends =
                    (sol.exterior_value(kind.point(a)), sol.exterior_value(kind.point(b)));
                for &v in u_nodes.iter().chain([u_ends.0, u_ends.1].iter()) {
                    u_min = u_min.min(v);
                    u_max = u_max.max(v);
                }
                panels.push(EdgePanel { a, b, u_nodes, u_ends });
            }
        }
        let mut rings = Vec::new();
        for (k, inc) in sol.geometry().inclusions.iter().enumerate() {
            let ring: Vec<f64> = (0..RING_POINTS)
                .map(|j| {
                    let phi = 2.0 * PI * j as f64 / RING_POINTS as f64;
                    sol.interior_value(k, inc.center + inc.radius * Complex64::new(0.0, phi).exp())
                })
                .collect();
            for &v in &ring {
                u_min = u_min.min(v);
                u_max = u_max.max(v);
            }
            rings.push(ring);
        }
        // all potentials are harmonic between these boundaries, so the
        // min/max over edges and rings bound u over the whole cell
        EdgeSet { edges, rings, u_min, u_max }
    }

    /// Integral of T over one edge, panels subdivided where u + c crosses a
    /// breakpoint value of the matrix map.
    fn temperature_integral(
        &self,
        sol: &HarmonicCellSolution,
        edge_idx: usize,
        matrix: &KirchhoffMap,
        crossings: &[f64],
        c: f64,
    ) -> Result<f64, AveragingError> {
        let (kind, panels) = &self.edges[edge_idx];
        let mut total = 0.0;
        for panel in panels {
            // ordered samples of u along the panel: endpoints bracket nodes
            let mut params = [0.0f64; 12];
            let mut vals = [0.0f64; 12];
            params[0] = panel.a;
            vals[0] = panel.u_ends.0;
            for i in 0..10 {
                params[i + 1] = 0.5 * (panel.a + panel.b) + 0.5 * (panel.b - panel.a) * GL10_X[i];
                vals[i + 1] = panel.u_nodes[i];
            }
            params[11] = panel.b;
            vals[11] = panel.u_ends.1;

            let mut cuts: Vec<f64> = Vec::new();
            for &xi in crossings {
                for w in 0..11 {
                    let f0 = vals[w] + c - xi;
                    let f1 = vals[w + 1] + c - xi;
                    if f0 == 0.0 {
                        cuts.push(params[w]);
                    } else if f0 * f1 < 0.0 {
                        cuts.push(bisect_crossing(sol, *kind, params[w], params[w + 1], xi - c));
                    }
                }
            }
            if cuts.is_empty() {
                let half = 0.5 * (panel.b - panel.a);
                total += half
                    * panel
                        .u_nodes
                        .iter()
                        .zip(GL10_W.iter())
                        .map(|(&u, &w)| w * matrix.inverse(u + c))
                        .sum::<f64>();
            } else {
                if cuts.len() > MAX_PANEL_CUTS {
                    return Err(AveragingError::EdgeRefinementCap(MAX_PANEL_CUTS));
                }
                cuts.sort_by(f64::total_cmp);
                let mut lo = panel.a;
                for &cut in cuts.iter().chain(std::iter::once(&panel.b)) {
                    let hi = cut.clamp(lo, panel.b);
                    if hi > lo {
                        let half = 0.5 * (hi - lo);
                        let mid = 0.5 * (hi + lo);
                        total += half
                            * GL10_X
                                .iter()
                                .zip(GL10_W.iter())
                                .map(|(&x, &w)| {
                                    let u = sol.exterior_value(kind.point(mid + half * x));
                                    w * matrix.inverse(u + c)
                                })
                                .sum::<f64>();
                    }
                    lo = hi;
                }
            }
        }
        Ok(total)
    }

    fn gradient(
        &self,
        sol: &HarmonicCellSolution,
        matrix: &KirchhoffMap,
        crossings: &[f64],
        c: f64,
    ) -> Result<[f64; 2], AveragingError> {
        let right = self.temperature_integral(sol, 0, matrix, crossings, c)?;
        let left = self.temperature_integral(sol, 1, matrix, crossings, c)?;
        let top = self.temperature_integral(sol, 2, matrix, crossings, c)?;
        let bottom = self.temperature_integral(sol, 3, matrix, crossings, c)?;
        Ok([right - left, top - bottom])
    }

    /// Reconstructs the mean flux from 1-D integrals: the cell-boundary
    /// integral of u n plus (rho_k - 1) times each disk-boundary integral of
    /// u~_k n. Returns (analytic flux, |difference|, tolerance).
    fn flux_with_check(&self, sol: &HarmonicCellSolution) -> ([f64; 2], f64, f64) {
        let analytic = [sol.background.re, -sol.background.im];
        let edge_u = |idx: usize| -> f64 {
            self.edges[idx]
                .1
                .iter()
                .map(|p| {
                    0.5 * (p.b - p.a)
                        * p.u_nodes.iter().zip(GL10_W.iter()).map(|(&u, &w)| w * u).sum::<f64>()
                })
                .sum()
        };
        let mut qx = edge_u(0) - edge_u(1);
        let mut qy = edge_u(2) - edge_u(3);
        for (k, inc) in sol.geometry().inclusions.iter().enumerate() {
            let rho = sol.contrasts()[k];
            let dphi = 2.0 * PI / RING_POINTS as f64;
            let mut bx = 0.0;
            let mut by = 0.0;
            for (j, &u) in self.rings[k].iter().enumerate() {
                let phi = dphi * j as f64;
                bx += u * phi.cos();
                by += u * phi.sin();
            }
            qx += (rho - 1.0) * inc.radius * dphi * bx;
            qy += (rho - 1.0) * inc.radius * dphi * by;
        }
        let diff = ((qx - analytic[0]).powi(2) + (qy - analytic[1]).powi(2)).sqrt();
        let amp = sol.background.norm();
        let tol = (1e-8 * amp.max(1.0)).max(10.0 * sol.residual_norm);
        (analytic, diff, tol)
    }
}

fn bisect_crossing(
    sol: &HarmonicCellSolution,
    kind: EdgeKind,
    mut s0: f64,
    mut s1: f64,
    target: f64,
) -> f64 {
    let f = |s: f64| sol.exterior_value(kind.point(s)) - target;
    let mut f0 = f(s0);
    for _ in 0..60 {
        let sm = 0.5 * (s0 + s1);
        if s1 - s0 < 1e-13 {
            break;
        }
        let fm = f(sm);
        if f0 * fm <= 0.0 {
            s1 = sm;
        } else {
            s0 = sm;
            f0 = fm;
        }
    }
    0.5 * (s0 + s1)
}

struct AreaSet {
    w: Vec<f64>,
    val: Vec<f64>,
    /// -1 matrix, k >= 0 inclusion index
    reg: Vec<i32>,
    /// per disk: (weight, u~ value) polar nodes; weights sum to pi r^2
    disks: Vec<Vec<(f64, f64)>>,
}

enum LeafKind {
    Uniform(i32),
    Mixed,
}

struct Leaf {
    x0: f64,
    y0: f64,
    size: f64,
    kind: LeafKind,
}

/// None means the square straddles an interface (split or classify per node).
fn classify_square(geometry: &CellGeometry, x0: f64, y0: f64, size: f64) -> Option<LeafKind> {
    let center = Complex64::new(x0 + 0.5 * size, y0 + 0.5 * size);
    let halfdiag = size * std::f64::consts::FRAC_1_SQRT_2;
    let mut straddles = false;
    for (k, inc) in geometry.inclusions.iter().enumerate() {
        let d = minimum_image_distance(center, inc.center);
        if d + halfdiag <= inc.radius {
            return Some(LeafKind::Uniform(k as i32));
        }
        if d - halfdiag < inc.radius {
            straddles = true;
        }
    }
    if straddles {
        None
    } else {
        Some(LeafKind::Uniform(-1))
    }
}

fn collect_leaves(geometry: &CellGeometry) -> Vec<Leaf> {
    let mut leaves = Vec::new();
    let base = 1.0 / AREA_BASE as f64;
    let mut stack: Vec<(f64, f64, f64)> = Vec::new();
    for i in 0..AREA_BASE {
        for j in 0..AREA_BASE {
            stack.push((-0.5 + i as f64 * base, -0.5 + j as f64 * base, base));
        }
    }
    while let Some((x0, y0, size)) = stack.pop() {
        match classify_square(geometry, x0, y0, size) {
            Some(kind) => leaves.push(Leaf { x0, y0, size, kind }),
            None => {
                if size > AREA_MIN_SIZE * 1.5 {
                    let h = 0.5 * size;
                    stack.push((x0, y0, h));
                    stack.push((x0 + h, y0, h));
                    stack.push((x0, y0 + h, h));
                    stack.push((x0 + h, y0 + h, h));
                } else {
                    leaves.push(Leaf { x0, y0, size, kind: LeafKind::Mixed });
                }
            }
        }
    }
    leaves
}

fn region_of(geometry: &CellGeometry, z: Complex64) -> i32 {
    for (k, inc) in geometry.inclusions.iter().enumerate() {
        if minimum_image_distance(z, inc.center) < inc.radius {
            return k as i32;
        }
    }
    -1
}

impl AreaSet {
    fn build(sol: &HarmonicCellSolution) -> Self {
        let geometry = sol.geometry();
        let leaves = collect_leaves(geometry);
        let nodes: Vec<(f64, f64, i32)> = leaves
            .par_iter()
            .flat_map_iter(|leaf| {
                let half = 0.5 * leaf.size;
                let cx = leaf.x0 + half;
                let cy = leaf.y0 + half;
                let mut out = Vec::with_capacity(64);
                for (i, &xi) in GL8_X.iter().enumerate() {
                    for (j, &xj) in GL8_X.iter().enumerate() {
                        let z = Complex64::new(cx + half * xi, cy + half * xj);
                        let w = GL8_W[i] * GL8_W[j] * half * half;
                        let reg = match leaf.kind {
                            LeafKind::Uniform(r) => r,
                            LeafKind::Mixed => region_of(geometry, z),
                        };
                        let val = if reg < 0 {
                            sol.exterior_value(z)
                        } else {
                            sol.interior_value(reg as usize, z)
                        };
                        out.push((w, val, reg));
                    }
                }
                out
            })
            .collect();
        let mut w = Vec::with_capacity(nodes.len());
        let mut val = Vec::with_capacity(nodes.len());
        let mut reg = Vec::with_capacity(nodes.len());
        for (wi, vi, ri) in nodes {
            w.push(wi);
            val.push(vi);
            reg.push(ri);
        }

        let disks = geometry
            .inclusions
            .iter()
            .enumerate()
            .map(|(k, inc)| {
                let r = inc.radius;
                let dphi = 2.0 * PI / DISK_ANGLES as f64;
                let mut nodes = Vec::with_capacity(GL32_X.len() * DISK_ANGLES);
                for (&x, &wr) in GL32_X.iter().zip(GL32_W.iter()) {
                    let rad = 0.5 * r * (x + 1.0);
                    let weight = wr * 0.5 * r * rad * dphi;
                    for j in 0..DISK_ANGLES {
                        let phi = dphi * j as f64;
                        let z = inc.center + rad * Complex64::new(0.0, phi).exp();
                        nodes.push((weight, sol.interior_value(k, z)));
                    }
                }
                nodes
            })
            .collect();

        AreaSet { w, val, reg, disks }
    }

    /// Mean temperature two ways: the primary scheme (area nodes masked to
    /// the matrix region plus polar integrals per disk) and a single-pass
    /// dispatch over all area nodes. Their difference is a resolution
    /// diagnostic; the primary value is returned by the public ops.
    fn temperatures(
        &self,
        matrix: &KirchhoffMap,
        incs: &[(KirchhoffMap, f64)],
        c: f64,
    ) -> (f64, f64) {
        let mut split = 0.0;
        let mut dispatch = 0.0;
        for ((&w, &v), &r) in self.w.iter().zip(self.val.iter()).zip(self.reg.iter()) {
            let t = if r < 0 {
                let t = matrix.inverse(v + c);
                split += w * t;
                t
            } else {
                let (map, ck) = &incs[r as usize];
                map.inverse((v + c) / ck)
            };
            dispatch += w * t;
        }
        for (nodes, (map, ck)) in self.disks.iter().zip(incs.iter()) {
            split += nodes.iter().map(|&(w, v)| w * map.inverse((v + c) / ck)).sum::<f64>();
        }
        (split, dispatch)
    }
}

/// All cached quadrature data for one solution.
struct Quadrature<'a> {
    sol: &'a HarmonicCellSolution,
    edges: EdgeSet,
    area: AreaSet,
    flux: [f64; 2],
    flux_check: f64,
}

impl<'a> Quadrature<'a> {
    fn new(sol: &'a HarmonicCellSolution) -> Result<Self, AveragingError> {
        let edges = EdgeSet::build(sol);
        let (flux, diff, tol) = edges.flux_with_check(sol);
        if diff > tol {
            return Err(AveragingError::FluxSelfCheck { diff, tol });
        }
        let area = AreaSet::build(sol);
        Ok(Quadrature { sol, edges, area, flux, flux_check: diff })
    }

    fn averages(&self, maps: &MapSet, c: f64) -> Result<CellAverages, AveragingError> {
        let grad = self.edges.gradient(self.sol, &maps.matrix, &maps.crossings, c)?;
        let (t_split, t_dispatch) = self.area.temperatures(&maps.matrix, &maps.incs, c);
        Ok(CellAverages {
            avg_flux: self.flux,
            avg_gradient: grad,
            avg_temperature: t_split,
            shift: c,
            flux_check: self.flux_check,
            temperature_check: (t_split - t_dispatch).abs(),
        })
    }
}

// --- one-shot public operations -----------------------------------------------

/// Mean physical flux: analytically -A [cos th, sin th]; a 1-D quadrature
/// reconstruction must agree, or the solution is flagged as inaccurate.
pub fn average_flux(field: &NonlinearField) -> Result<[f64; 2], AveragingError> {
    let edges = EdgeSet::build(&field.solution);
    let (flux, diff, tol) = edges.flux_with_check(&field.solution);
    if diff > tol {
        return Err(AveragingError::FluxSelfCheck { diff, tol });
    }
    Ok(flux)
}

/// Mean temperature gradient from the four edge integrals of T.
pub fn average_gradient(field: &NonlinearField) -> Result<[f64; 2], AveragingError> {
    let (maps, _) = MapSet::build(field.solution.geometry(), &field.family)?;
    let edges = EdgeSet::build(&field.solution);
    edges.gradient(&field.solution, &maps.matrix, &maps.crossings, field.shift)
}

/// Mean temperature: masked adaptive quadrature over the matrix plus polar
/// Gauss-Legendre per disk. Builds the area cache; prefer `cell_averages`
/// or the sweep drivers when evaluating many shifts.
pub fn average_temperature(field: &NonlinearField) -> Result<f64, AveragingError> {
    let (maps, _) = MapSet::build(field.solution.geometry(), &field.family)?;
    let area = AreaSet::build(&field.solution);
    Ok(area.temperatures(&maps.matrix, &maps.incs, field.shift).0)
}

/// All averages at once, sharing one cache build.
pub fn cell_averages(field: &NonlinearField) -> Result<CellAverages, AveragingError> {
    let (maps, _) = MapSet::build(field.solution.geometry(), &field.family)?;
    let quad = Quadrature::new(&field.solution)?;
    quad.averages(&maps, field.shift)
}

// --- sweeps and curve assembly --------------------------------------------------

fn solve_direction(
    geometry: &CellGeometry,
    rho: &[f64],
    theta: f64,
    opts: &SweepOptions,
) -> Result<HarmonicCellSolution, AveragingError> {
    let problem = CellProblem::new(
        geometry.clone(),
        rho.to_vec(),
        opts.flux_intensity,
        theta,
        opts.truncation_order,
    )?;
    Ok(solve(&problem, &opts.solver)?)
}

struct RawSample {
    t: f64,
    grad: [f64; 2],
    shift: f64,
    cell: Option<(i32, i32)>,
}

fn direction_samples(
    quad: &Quadrature,
    maps: &MapSet,
    shifts: &[f64],
) -> Result<Vec<RawSample>, AveragingError> {
    shifts
        .par_iter()
        .map(|&c| {
            let av = quad.averages(maps, c)?;
            Ok(RawSample { t: av.avg_temperature, grad: av.avg_gradient, shift: c, cell: None })
        })
        .collect()
}

/// Procedure B: sweep the additive constant C over a graded grid and
/// assemble R_e(<T>), Lambda_e(<T>) from the two flux directions.
pub fn resistance_curve(
    geometry: &CellGeometry,
    family: &ContrastFamily,
    opts: &SweepOptions,
) -> Result<EffectiveCurve, AveragingError> {
    if opts.n_samples < 2 {
        return Err(AveragingError::BadSweep("need at least two samples"));
    }
    let (maps, rho) = MapSet::build(geometry, family)?;
    let (sol0, sol1) = rayon::join(
        || solve_direction(geometry, &rho, 0.0, opts),
        || solve_direction(geometry, &rho, PI / 2.0, opts),
    );
    let (sol0, sol1) = (sol0?, sol1?);
    let quad0 = Quadrature::new(&sol0)?;
    let quad1 = Quadrature::new(&sol1)?;

    let u_lo = quad0.edges.u_min.min(quad1.edges.u_min);
    let u_hi = quad0.edges.u_max.max(quad1.edges.u_max);
    let u_range = u_hi - u_lo;
    let (c_lo, c_hi) = opts.c_range.unwrap_or_else(|| {
        let f_last = maps
            .crossings
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v.abs()));
        let hi = 1.3 * f_last + u_range;
        (-hi, hi)
    });
    if !(c_hi > c_lo) {
        return Err(AveragingError::BadSweep("empty shift range"));
    }
    // windows centered where some cell point attains a breakpoint value
    let u_mid = 0.5 * (u_lo + u_hi);
    let centers: Vec<f64> = maps.crossings.iter().map(|&x| x - u_mid).collect();
    let grid = graded_grid(c_lo, c_hi, opts.n_samples, &centers, 0.5 * u_range + WINDOW_MARGIN);

    let raw0 = direction_samples(&quad0, &maps, &grid)?;
    let raw1 = direction_samples(&quad1, &maps, &grid)?;
    assemble_curve(raw0, raw1, opts.flux_intensity, 0)
}

/// Procedure A: same assembly, but C runs over the shift lattice
/// {m1 d_x + m2 d_y} of each direction's own period jumps.
pub fn cell_sweep_curve(
    geometry: &CellGeometry,
    family: &ContrastFamily,
    m1_range: (i32, i32),
    m2_range: (i32, i32),
    opts: &SweepOptions,
) -> Result<EffectiveCurve, AveragingError> {
    if m1_range.0 > m1_range.1 || m2_range.0 > m2_range.1 {
        return Err(AveragingError::BadSweep("empty cell range"));
    }
    let (maps, rho) = MapSet::build(geometry, family)?;
    let (sol0, sol1) = rayon::join(
        || solve_direction(geometry, &rho, 0.0, opts),
        || solve_direction(geometry, &rho, PI / 2.0, opts),
    );
    let (sol0, sol1) = (sol0?, sol1?);
    let mut clustered = 0usize;
    let mut sampled = Vec::new();
    let mut tags: Vec<Vec<(i32, i32)>> = Vec::new();
    for sol in [&sol0, &sol1] {
        let (dx, dy) = sol.period_jumps();
        if dx.abs() + dy.abs() < 1e-12 {
            return Err(AveragingError::DegenerateLattice);
        }
        let mut shifts = Vec::new();
        for m1 in m1_range.0..=m1_range.1 {
            for m2 in m2_range.0..=m2_range.1 {
                shifts.push((m1 as f64 * dx + m2 as f64 * dy, (m1, m2)));
            }
        }
        shifts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let span = shifts.last().unwrap().0 - shifts[0].0;
        let eps = 1e-9 * span.max(1.0);
        let mut unique: Vec<f64> = Vec::with_capacity(shifts.len());
        let mut cells: Vec<(i32, i32)> = Vec::with_capacity(shifts.len());
        for (s, cell) in shifts {
            if unique.last().is_some_and(|&p| s - p < eps) {
                clustered += 1;
            } else {
                unique.push(s);
                cells.push(cell);
            }
        }
        sampled.push(unique);
        tags.push(cells);
    }
    let quad0 = Quadrature::new(&sol0)?;
    let quad1 = Quadrature::new(&sol1)?;
    let mut raw0 = direction_samples(&quad0, &maps, &sampled[0])?;
    let mut raw1 = direction_samples(&quad1, &maps, &sampled[1])?;
    for (raw, cells) in [(&mut raw0, &tags[0]), (&mut raw1, &tags[1])] {
        for (r, &cell) in raw.iter_mut().zip(cells) {
            r.cell = Some(cell);
        }
    }
    assemble_curve(raw0, raw1, opts.flux_intensity, clustered)
}

fn assemble_curve(
    raw0: Vec<RawSample>,
    raw1: Vec<RawSample>,
    flux_intensity: f64,
    clustered: usize,
) -> Result<EffectiveCurve, AveragingError> {
    if raw0.len() < 2 || raw1.len() < 2 {
        return Err(AveragingError::BadSweep("need at least two samples per direction"));
    }
    for raw in [&raw0, &raw1] {
        if raw.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(AveragingError::NonMonotoneSweep);
        }
    }
    let t1: Vec<f64> = raw1.iter().map(|s| s.t).collect();
    let gx1: Vec<f64> = raw1.iter().map(|s| s.grad[0]).collect();
    let gy1: Vec<f64> = raw1.iter().map(|s| s.grad[1]).collect();
    let ix = MonotoneCubic::new(t1.clone(), gx1).map_err(|_| AveragingError::NonMonotoneSweep)?;
    let iy = MonotoneCubic::new(t1.clone(), gy1).map_err(|_| AveragingError::NonMonotoneSweep)?;
    let (t1_lo, t1_hi) = (t1[0], t1[t1.len() - 1]);

    let scale = -flux_intensity;
    let measured = [&raw0, &raw1].map(|raw| {
        raw.iter()
            .map(|s| MeasuredColumn {
                avg_t: s.t,
                column: [s.grad[0] / scale, s.grad[1] / scale],
                shift: s.shift,
            })
            .collect()
    });
    let mut samples = Vec::with_capacity(raw0.len());
    for s in &raw0 {
        // only where the second direction's samples genuinely cover <T>
        if s.t < t1_lo || s.t > t1_hi {
            continue;
        }
        let col0 = [s.grad[0] / scale, s.grad[1] / scale];
        let col1 = [ix.eval(s.t) / scale, iy.eval(s.t) / scale];
        let r = [[col0[0], col1[0]], [col0[1], col1[1]]];
        let det = r[0][0] * r[1][1] - r[0][1] * r[1][0];
        if det.abs() < 1e-14 * (r[0][0].abs() * r[1][1].abs()).max(1e-300) {
            return Err(AveragingError::SingularTensor(s.t));
        }
        let lambda = [[r[1][1] / det, -r[0][1] / det], [-r[1][0] / det, r[0][0] / det]];
        samples.push(CurveSample { avg_t: s.t, shift: s.shift, cell: s.cell, r, lambda });
    }
    if samples.len() < 2 {
        return Err(AveragingError::BadSweep("directions share too little <T> range"));
    }
    finish_curve(samples, measured, clustered)
}

fn finish_curve(
    samples: Vec<CurveSample>,
    measured: [Vec<MeasuredColumn>; 2],
    clustered: usize,
) -> Result<EffectiveCurve, AveragingError> {
    let ts: Vec<f64> = samples.iter().map(|s| s.avg_t).collect();
    let comp = |f: &dyn Fn(&CurveSample) -> f64| -> Result<MonotoneCubic, AveragingError> {
        MonotoneCubic::new(ts.clone(), samples.iter().map(f).collect())
            .map_err(|_| AveragingError::NonMonotoneSweep)
    };
    let r_interp = [
        comp(&|s| s.r[0][0])?,
        comp(&|s| s.r[0][1])?,
        comp(&|s| s.r[1][0])?,
        comp(&|s| s.r[1][1])?,
    ];
    let lambda_interp = [
        comp(&|s| s.lambda[0][0])?,
        comp(&|s| s.lambda[0][1])?,
        comp(&|s| s.lambda[1][0])?,
        comp(&|s| s.lambda[1][1])?,
    ];
    Ok(EffectiveCurve { samples, measured, clustered_samples: clustered, r_interp, lambda_interp })
}


/// Strictly increasing grid over [lo, hi] with `n` points.
///
/// The Kirchhoff inverse is curved everywhere inside the nonlinear strip
/// (the span of the crossing windows): the conductivity profile is piecewise
/// linear, so its antiderivative is piecewise quadratic, never affine between
/// breakpoints. Samples are therefore equidistributed over the whole strip by
/// a piecewise-constant density (WINDOW_WEIGHT inside the windows, 1 in the
/// gaps); the tails beyond the strip see a constant profile, where the
/// response is exactly affine, and get TAIL_POINTS points each.
fn graded_grid(lo: f64, hi: f64, n: usize, centers: &[f64], halfwidth: f64) -> Vec<f64> {
    assert!(n >= 2 && hi > lo);
    if centers.is_empty() || n < 2 * TAIL_POINTS + 4 {
        return linspace(lo, hi, n);
    }
    let cmin = centers.iter().copied().fold(f64::INFINITY, f64::min);
    let cmax = centers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let strip_lo = (cmin - halfwidth).max(lo);
    let strip_hi = (cmax + halfwidth).min(hi);
    if strip_hi - strip_lo < (hi - lo) * 1e-9 {
        return linspace(lo, hi, n);
    }
    // clip and merge the windows inside the strip
    let mut wins: Vec<(f64, f64)> = centers
        .iter()
        .map(|&c| ((c - halfwidth).max(strip_lo), (c + halfwidth).min(strip_hi)))
        .filter(|&(a, b)| b > a)
        .collect();
    wins.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for w in wins {
        match merged.last_mut() {
            Some(last) if w.0 <= last.1 => last.1 = last.1.max(w.1),
            _ => merged.push(w),
        }
    }
    let mut segs: Vec<(f64, f64, f64)> = Vec::new();
    let mut cur = strip_lo;
    for &(a, b) in &merged {
        if a > cur {
            segs.push((cur, a, 1.0));
        }
        segs.push((a, b, WINDOW_WEIGHT));
        cur = b;
    }
    if cur < strip_hi {
        segs.push((cur, strip_hi, 1.0));
    }
    let n_tail_lo = if lo < strip_lo { TAIL_POINTS } else { 0 };
    let n_tail_hi = if hi > strip_hi { TAIL_POINTS } else { 0 };
    let ns = n - n_tail_lo - n_tail_hi;
    let mtot: f64 = segs.iter().map(|&(a, b, w)| (b - a) * w).sum();
    let mut pts: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n_tail_lo {
        pts.push(lo + (strip_lo - lo) * i as f64 / n_tail_lo as f64);
    }
    for i in 0..ns {
        let target = mtot * i as f64 / (ns - 1) as f64;
        let mut acc = 0.0;
        let mut placed = false;
        for &(a, b, w) in &segs {
            let mass = (b - a) * w;
            if acc + mass >= target - mtot * 1e-12 {
                pts.push(a + (target - acc) / w);
                placed = true;
                break;
            }
            acc += mass;
        }
        if !placed {
            pts.push(strip_hi);
        }
    }
    for i in 1..=n_tail_hi {
        pts.push(strip_hi + (hi - strip_hi) * i as f64 / n_tail_hi as f64);
    }
    pts
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Where one curve's samples disagree with another curve, over their common
/// <T> range.
#[derive(Debug, Clone, Copy)]
pub struct CurveDiscrepancy {
    pub max_resistance: f64,
    pub max_conductivity: f64,
    pub overlap: (f64, f64),
    pub probes: usize,
}

/// Compares `probe`'s measured columns against `reference` interpolated at
/// the same temperatures. Only measured quantities enter `max_resistance`,
/// so the figure reflects disagreement between the two procedures; comparing
/// assembled tensors instead would fold in the probe's own cross-direction
/// interpolation gap (the probe is typically the sparser cell sweep, whose
/// sample spacing is fixed by the period jumps). `max_conductivity` compares
/// the assembled tensors at the probe's sample temperatures and inherits
/// that gap amplified by inversion; it is context, not a gate.
pub fn curve_discrepancy(probe: &EffectiveCurve, reference: &EffectiveCurve) -> CurveDiscrepancy {
    let lo = probe.t_range().0.max(reference.t_range().0);
    let hi = probe.t_range().1.min(reference.t_range().1);
    if !(hi >= lo) {
        return CurveDiscrepancy {
            max_resistance: f64::INFINITY,
            max_conductivity: f64::INFINITY,
            overlap: (lo, hi),
            probes: 0,
        };
    }
    let mut max_r = 0.0f64;
    let mut probes = 0usize;
    for (probe_cols, ref_cols) in probe.measured.iter().zip(reference.measured.iter()) {
        // interpolate the reference's own measured data once; going through
        // the assembled tensor would interpolate the off-anchor direction a
        // second time and pollute the figure with assembly error
        let ts: Vec<f64> = ref_cols.iter().map(|m| m.avg_t).collect();
        let interp = |i: usize| -> Option<MonotoneCubic> {
            MonotoneCubic::new(ts.clone(), ref_cols.iter().map(|m| m.column[i]).collect()).ok()
        };
        let (Some(c0), Some(c1)) = (interp(0), interp(1)) else {
            return CurveDiscrepancy {
                max_resistance: f64::INFINITY,
                max_conductivity: f64::INFINITY,
                overlap: (lo, hi),
                probes: 0,
            };
        };
        let (dlo, dhi) = (lo.max(ts[0]), hi.min(ts[ts.len() - 1]));
        for m in probe_cols.iter().filter(|m| (dlo..=dhi).contains(&m.avg_t)) {
            max_r = max_r
                .max((m.column[0] - c0.eval(m.avg_t)).abs())
                .max((m.column[1] - c1.eval(m.avg_t)).abs());
            probes += 1;
        }
    }
    let mut max_l = 0.0f64;
    for s in probe.samples.iter().filter(|s| (lo..=hi).contains(&s.avg_t)) {
        let rl = reference.lambda_at(s.avg_t);
        for i in 0..2 {
            for j in 0..2 {
                max_l = max_l.max((s.lambda[i][j] - rl[i][j]).abs());
            }
        }
    }
    CurveDiscrepancy { max_resistance: max_r, max_conductivity: max_l, overlap: (lo, hi), probes }
}

/// Max |Lambda(t) - Lambda(-t)| component over the symmetric part of the
/// curve's range, and the t where it is attained. None if the range has no
/// symmetric part.
pub fn even_symmetry_deviation(curve: &EffectiveCurve, n_probes: usize) -> Option<(f64, f64)> {
    let (lo, hi) = curve.t_range();
    let s = hi.min(-lo);
    if !(s > 0.0) || n_probes < 2 {
        return None;
    }
    let mut worst = (0.0f64, 0.0f64);
    for i in 0..n_probes {
        let t = s * i as f64 / (n_probes - 1) as f64;
        let lp = curve.lambda_at(t);
        let lm = curve.lambda_at(-t);
        for i in 0..2 {
            for j in 0..2 {
                let d = (lp[i][j] - lm[i][j]).abs();
                if d > worst.0 {
                    worst = (d, t);
                }
            }
        }
    }
    Some(worst)
}
