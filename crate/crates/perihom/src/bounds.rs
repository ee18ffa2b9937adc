//! Variational bounds on the effective tensor and the comparison against
//! the proportional (separated) formula lambda(T) * Lambda_hat.
//!
//! Everything here is per-sample arithmetic on 2x2 tensors; the heavy
//! lifting happened upstream in the sweep.

use crate::averaging::EffectiveCurve;
use crate::conductivity::{ConductivityProfile, ContrastFamily};
use thiserror::Error;

/// Degeneracy threshold for the HS resolvents: above this condition number
/// the inequality sits on its boundary and a verdict would be float noise.
const HS_COND_LIMIT: f64 = 1e12;
/// Absolute slack on minor signs (zero is a legitimate boundary case).
const MINOR_SLACK: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("bounds are defined for two-phase media; family has {0} inclusion profiles")]
    NotTwoPhase(usize),
    #[error("effective tensor singular at sample {0}")]
    SingularTensor(usize),
}

/// The inclusion profile of a two-phase family. Families list one profile
/// per inclusion, so replicated identical profiles still describe two
/// materials and are accepted.
fn two_phase_profile(family: &ContrastFamily) -> Result<&ConductivityProfile, BoundsError> {
    let first = family.inclusions.first().ok_or(BoundsError::NotTwoPhase(0))?;
    if family.inclusions.iter().any(|p| p != first) {
        return Err(BoundsError::NotTwoPhase(family.inclusions.len()));
    }
    Ok(first)
}

/// Reuss-type (harmonic) and Voigt-type (arithmetic) scalar bounds at one
/// temperature.
pub fn voigt_reuss(family: &ContrastFamily, f: f64, t: f64) -> Result<(f64, f64), BoundsError> {
    let inclusion = two_phase_profile(family)?;
    let lam = family.matrix.eval(t);
    let lam_k = inclusion.eval(t);
    let mu1 = 1.0 / ((1.0 - f) / lam + f / lam_k);
    let mu2 = (1.0 - f) * lam + f * lam_k;
    Ok((mu1, mu2))
}

/// The four signed minors certifying mu1 I <= Lambda_e <= mu2 I in the
/// quadratic-form sense, with the required sign of each.
#[derive(Debug, Clone, Copy)]
pub struct ElementaryCheck {
    pub m11: f64,
    pub m21: f64,
    pub m12: f64,
    pub m22: f64,
    /// feasibility of (m11 <= 0, m21 >= 0, m12 >= 0, m22 >= 0) with slack
    pub feasible: [bool; 4],
}

impl ElementaryCheck {
    pub fn all_feasible(&self) -> bool {
        self.feasible.iter().all(|&b| b)
    }
}

pub fn check_elementary(lambda_e: &[[f64; 2]; 2], mu1: f64, mu2: f64) -> ElementaryCheck {
    let cross = (lambda_e[0][1] + lambda_e[1][0]).powi(2);
    let m11 = mu1 - lambda_e[0][0];
    let m21 = mu2 - lambda_e[0][0];
    let m12 = 4.0 * (mu1 - lambda_e[0][0]) * (mu1 - lambda_e[1][1]) - cross;
    let m22 = 4.0 * (mu2 - lambda_e[0][0]) * (mu2 - lambda_e[1][1]) - cross;
    ElementaryCheck {
        m11,
        m21,
        m12,
        m22,
        feasible: [
            m11 <= MINOR_SLACK,
            m21 >= -MINOR_SLACK,
            m12 >= -MINOR_SLACK,
            m22 >= -MINOR_SLACK,
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsStatus {
    Holds,
    Violated,
    /// the resolvent is numerically singular: the bound sits on its
    /// boundary and no verdict is meaningful
    BoundaryDegenerate,
}

/// One trace inequality: lhs <= rhs unless degenerate.
#[derive(Debug, Clone, Copy)]
pub struct HsInequality {
    pub lhs: f64,
    pub rhs: f64,
    pub status: HsStatus,
}

#[derive(Debug, Clone, Copy)]
pub struct HsCheck {
    pub hs1: HsInequality,
    pub hs2: HsInequality,
    /// true when the matrix phase was the more conductive one and the two
    /// conductivities swapped roles in the formulas
    pub swapped: bool,
}

impl HsCheck {
    pub fn all_hold(&self) -> bool {
        self.hs1.status == HsStatus::Holds && self.hs2.status == HsStatus::Holds
    }
}

fn cond2(a: &[[f64; 2]; 2]) -> f64 {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let s = a.iter().flatten().map(|x| x * x).sum::<f64>();
    // singular values: s1^2 + s2^2 = s, s1 s2 = |det|
    let disc = (s * s - 4.0 * det * det).max(0.0).sqrt();
    let smax2 = 0.5 * (s + disc);
    let smin2 = 0.5 * (s - disc);
    if smin2 <= 0.0 {
        f64::INFINITY
    } else {
        (smax2 / smin2).sqrt()
    }
}

fn trace_inverse(a: &[[f64; 2]; 2]) -> Option<f64> {
    if cond2(a) > HS_COND_LIMIT {
        return None;
    }
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    Some((a[0][0] + a[1][1]) / det)
}

fn hs_inequality(lhs: Option<f64>, rhs: f64) -> HsInequality {
    match lhs {
        None => HsInequality { lhs: f64::NAN, rhs, status: HsStatus::BoundaryDegenerate },
        Some(l) => {
            let slack = MINOR_SLACK * rhs.abs().max(1.0);
            let status = if l <= rhs + slack { HsStatus::Holds } else { HsStatus::Violated };
            HsInequality { lhs: l, rhs, status }
        }
    }
}

/// Trace bounds of Hashin-Shtrikman type. Written for a matrix less
/// conductive than the inclusions; if the ordering is reversed the two
/// conductivities swap roles (and `swapped` records that).
pub fn check_hashin_shtrikman(
    lambda_e: &[[f64; 2]; 2],
    lam: f64,
    lam_k: f64,
    mu1: f64,
    mu2: f64,
) -> HsCheck {
    let swapped = lam > lam_k;
    let (lo, hi) = if swapped { (lam_k, lam) } else { (lam, lam_k) };
    let a1 = [
        [lambda_e[0][0] - lo, lambda_e[0][1]],
        [lambda_e[1][0], lambda_e[1][1] - lo],
    ];
    let a2 = [
        [hi - lambda_e[0][0], -lambda_e[0][1]],
        [-lambda_e[1][0], hi - lambda_e[1][1]],
    ];
    let hs1 = hs_inequality(trace_inverse(&a1), 1.0 / (mu2 - lo) + 1.0 / (mu1 - lo));
    let hs2 = hs_inequality(trace_inverse(&a2), 1.0 / (hi - mu2) + 1.0 / (hi - mu1));
    HsCheck { hs1, hs2, swapped }
}

/// Bounds evaluated at one curve sample.
#[derive(Debug, Clone, Copy)]
pub struct BoundsSample {
    pub avg_t: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub elementary: ElementaryCheck,
    pub hs: HsCheck,
}

#[derive(Debug, Clone)]
pub struct BoundsReport {
    pub samples: Vec<BoundsSample>,
}

impl BoundsReport {
    pub fn all_feasible(&self) -> bool {
        self.samples.iter().all(|s| s.elementary.all_feasible() && s.hs.all_hold())
    }

    /// Samples violating any inequality, worst (most negative margin) first.
    pub fn violations(&self) -> Vec<&BoundsSample> {
        let mut v: Vec<&BoundsSample> = self
            .samples
            .iter()
            .filter(|s| !(s.elementary.all_feasible() && s.hs.all_hold()))
            .collect();
        v.sort_by(|a, b| violation_margin(b).total_cmp(&violation_margin(a)));
        v
    }
}

fn violation_margin(s: &BoundsSample) -> f64 {
    let e = &s.elementary;
    let mut worst = e.m11.max(-e.m21).max(-e.m12).max(-e.m22);
    for hs in [&s.hs.hs1, &s.hs.hs2] {
        if hs.status == HsStatus::Violated {
            worst = worst.max(hs.lhs - hs.rhs);
        }
    }
    worst
}

/// Both bound families along a computed curve; `f` is the inclusion volume
/// fraction.
pub fn bounds_along_curve(
    curve: &EffectiveCurve,
    family: &ContrastFamily,
    f: f64,
) -> Result<BoundsReport, BoundsError> {
    let inclusion = two_phase_profile(family)?;
    let samples = curve
        .samples
        .iter()
        .map(|s| {
            let (mu1, mu2) = voigt_reuss(family, f, s.avg_t).expect("two-phase checked above");
            let lam = family.matrix.eval(s.avg_t);
            let lam_k = inclusion.eval(s.avg_t);
            BoundsSample {
                avg_t: s.avg_t,
                mu1,
                mu2,
                elementary: check_elementary(&s.lambda, mu1, mu2),
                hs: check_hashin_shtrikman(&s.lambda, lam, lam_k, mu1, mu2),
            }
        })
        .collect();
    Ok(BoundsReport { samples })
}

/// Relative deviation tensors between the computed curve and the separated
/// formula lambda(T) * Lambda_hat.
#[derive(Debug, Clone, Copy)]
pub struct ComparisonSample {
    pub avg_t: f64,
    pub delta_l: [[f64; 2]; 2],
    pub delta_r: [[f64; 2]; 2],
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub samples: Vec<ComparisonSample>,
    /// the linear reference tensor used (recomputed by the caller, not
    /// hard-coded)
    pub lambda_hat: [[f64; 2]; 2],
}

impl ComparisonReport {
    /// (max |diagonal delta| and its <T>, max |off-diagonal delta|)
    pub fn extremes(&self) -> (f64, f64, f64) {
        let mut diag = (0.0f64, 0.0f64);
        let mut off = 0.0f64;
        for s in &self.samples {
            for d in [&s.delta_l, &s.delta_r] {
                let dd = d[0][0].abs().max(d[1][1].abs());
                if dd > diag.0 {
                    diag = (dd, s.avg_t);
                }
                off = off.max(d[0][1].abs()).max(d[1][0].abs());
            }
        }
        (diag.0, diag.1, off)
    }
}

pub fn proportional_compare(
    curve: &EffectiveCurve,
    family: &ContrastFamily,
    lambda_hat: &[[f64; 2]; 2],
) -> Result<ComparisonReport, BoundsError> {
    let samples = curve
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let lam = family.matrix.eval(s.avg_t);
            let le = &s.lambda;
            let det = le[0][0] * le[1][1] - le[0][1] * le[1][0];
            if det.abs() < 1e-300 {
                return Err(BoundsError::SingularTensor(i));
            }
            let inv = [[le[1][1] / det, -le[0][1] / det], [-le[1][0] / det, le[0][0] / det]];
            let mut diff = [[0.0; 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    diff[r][c] = le[r][c] - lam * lambda_hat[r][c];
                }
            }
            Ok(ComparisonSample {
                avg_t: s.avg_t,
                delta_l: mat_mul(&diff, &inv),
                delta_r: mat_mul(&inv, &diff),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ComparisonReport { samples, lambda_hat: *lambda_hat })
}

fn mat_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}
