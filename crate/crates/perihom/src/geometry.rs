//! Unit cell, square lattice, and circular inclusions.
//!
//! The representative cell is the open square (-1/2, 1/2)^2 with translation
//! vectors 1 and i; all coordinates are cell-local and dimensionless.

use num_complex::Complex64;
use std::fmt;

/// Default clearance required between disks beyond exact tangency.
pub const EPS_GEOM: f64 = 1e-9;

/// Gap below which `validate` warns that the series solver will degrade.
pub const NARROW_GAP_WARNING: f64 = 0.01;

/// One circular inclusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inclusion {
    /// Center a_k, cell-local.
    pub center: Complex64,
    /// Radius r_k > 0.
    pub radius: f64,
    /// Index into the conductivity family.
    pub contrast_id: usize,
}

/// The doubly periodic microstructure: unit square cell plus disjoint disks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellGeometry {
    pub inclusions: Vec<Inclusion>,
}

/// A violated geometry invariant; carries the offending inclusion indices.
#[derive(Debug, Clone, PartialEq)]
pub enum GeometryViolation {
    /// r_k <= 0 or r_k >= 1/2.
    BadRadius { k: usize, radius: f64 },
    /// Closed disk not strictly inside the open cell.
    OutsideCell { k: usize },
    /// Disks j and k (or their periodic images) overlap or touch.
    DisksOverlap { j: usize, k: usize, gap: f64 },
}

impl fmt::Display for GeometryViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryViolation::BadRadius { k, radius } => {
                write!(f, "inclusion {k}: radius {radius} outside (0, 1/2)")
            }
            GeometryViolation::OutsideCell { k } => {
                write!(f, "inclusion {k}: disk not strictly inside the cell")
            }
            GeometryViolation::DisksOverlap { j, k, gap } => {
                write!(f, "disks overlap: inclusions {j} and {k} (min-image gap {gap:.3e})")
            }
        }
    }
}

/// Outcome of `validate`: hard violations plus narrow-gap warnings.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<GeometryViolation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Minimum distance between a and b over all periodic images,
/// min over (m1, m2) in {-1,0,1}^2 of |a - b - m1 - i m2|.
pub fn minimum_image_distance(a: Complex64, b: Complex64) -> f64 {
    let d = a - b;
    let mut best = f64::INFINITY;
    for m1 in -1..=1 {
        for m2 in -1..=1 {
            let shifted = d - Complex64::new(m1 as f64, m2 as f64);
            best = best.min(shifted.norm());
        }
    }
    best
}

/// Wrap a coordinate into the cell (-1/2, 1/2)^2.
pub fn wrap_into_cell(z: Complex64) -> Complex64 {
    let w = |t: f64| t - (t + 0.5).floor();
    Complex64::new(w(z.re), w(z.im))
}

impl CellGeometry {
    pub fn new(inclusions: Vec<Inclusion>) -> Self {
        CellGeometry { inclusions }
    }

    /// Check all invariants: radii in range, disks strictly inside the cell,
    /// pairwise minimum-image disjointness with `EPS_GEOM` clearance.
    /// Narrow gaps (< `NARROW_GAP_WARNING`) are reported as warnings, not errors.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        for (k, inc) in self.inclusions.iter().enumerate() {
            if !(inc.radius > 0.0 && inc.radius < 0.5) {
                report.violations.push(GeometryViolation::BadRadius { k, radius: inc.radius });
                continue;
            }
            if inc.center.re.abs() + inc.radius >= 0.5 || inc.center.im.abs() + inc.radius >= 0.5 {
                report.violations.push(GeometryViolation::OutsideCell { k });
            }
        }
        for j in 0..self.inclusions.len() {
            for k in (j + 1)..self.inclusions.len() {
                let a = &self.inclusions[j];
                let b = &self.inclusions[k];
                let gap = minimum_image_distance(a.center, b.center) - a.radius - b.radius;
                if gap <= EPS_GEOM {
                    report.violations.push(GeometryViolation::DisksOverlap { j, k, gap });
                } else if gap < NARROW_GAP_WARNING {
                    report.warnings.push(format!(
                        "inclusions {j} and {k}: gap {gap:.4} < {NARROW_GAP_WARNING}; series accuracy degrades"
                    ));
                }
            }
            // self-overlap across the lattice: image distance is 1 minus the
            // diameter along each axis, already covered by the inside-cell check
        }
        report
    }

    /// Total disk area; the cell has unit area.
    pub fn volume_fraction(&self) -> f64 {
        self.inclusions.iter().map(|i| std::f64::consts::PI * i.radius * i.radius).sum()
    }
}

/// The four-disk configuration used throughout the examples: radii 0.145,
/// centers (-0.18, 0.2), (0.33, -0.34), (0.33, 0.35), (-0.18, -0.2).
pub fn four_disk_example() -> CellGeometry {
    let centers = [(-0.18, 0.2), (0.33, -0.34), (0.33, 0.35), (-0.18, -0.2)];
    CellGeometry::new(
        centers
            .iter()
            .map(|&(x, y)| Inclusion { center: Complex64::new(x, y), radius: 0.145, contrast_id: 0 })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn example_configuration_is_valid() {
        let geom = four_disk_example();
        let report = geom.validate();
        assert!(report.is_ok(), "{:?}", report.violations);
        // narrowest gap is 0.02 (disks 1 and 2 across the horizontal edge),
        // still above the warning threshold
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn narrow_gap_warns_without_failing() {
        let geom = CellGeometry::new(vec![
            Inclusion { center: Complex64::new(-0.15, 0.0), radius: 0.145, contrast_id: 0 },
            Inclusion { center: Complex64::new(0.145, 0.0), radius: 0.145, contrast_id: 0 },
        ]);
        let report = geom.validate();
        assert!(report.is_ok());
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn empty_cell_is_valid() {
        assert!(CellGeometry::default().validate().is_ok());
    }

    #[test]
    fn overlapping_disks_are_rejected() {
        let geom = CellGeometry::new(vec![
            Inclusion { center: Complex64::new(0.0, 0.0), radius: 0.145, contrast_id: 0 },
            Inclusion { center: Complex64::new(0.1, 0.0), radius: 0.145, contrast_id: 0 },
        ]);
        let report = geom.validate();
        assert!(matches!(report.violations[0], GeometryViolation::DisksOverlap { j: 0, k: 1, .. }));
    }

    #[test]
    fn volume_fraction_matches_reference() {
        assert_abs_diff_eq!(four_disk_example().volume_fraction(), 0.2642, epsilon = 5e-5);
        assert_eq!(CellGeometry::default().volume_fraction(), 0.0);
        let one = CellGeometry::new(vec![Inclusion {
            center: Complex64::new(0.0, 0.0),
            radius: 0.1,
            contrast_id: 0,
        }]);
        assert_abs_diff_eq!(one.volume_fraction(), std::f64::consts::PI * 0.01, epsilon = 1e-15);
    }

    #[test]
    fn minimum_image_wraps_edges() {
        let d = minimum_image_distance(Complex64::new(0.45, 0.0), Complex64::new(-0.45, 0.0));
        assert_abs_diff_eq!(d, 0.1, epsilon = 1e-15);
        assert_eq!(minimum_image_distance(Complex64::new(0.2, 0.3), Complex64::new(0.2, 0.3)), 0.0);
        let diag = minimum_image_distance(Complex64::new(0.45, 0.45), Complex64::new(-0.45, -0.45));
        assert_abs_diff_eq!(diag, 0.1 * 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn validate_implies_minimum_image_disjointness() {
        let geom = four_disk_example();
        assert!(geom.validate().is_ok());
        for j in 0..geom.inclusions.len() {
            for k in (j + 1)..geom.inclusions.len() {
                let d = minimum_image_distance(geom.inclusions[j].center, geom.inclusions[k].center);
                assert!(d > geom.inclusions[j].radius + geom.inclusions[k].radius);
            }
        }
    }

    #[test]
    fn volume_fraction_is_translation_invariant() {
        let geom = four_disk_example();
        let shifted = CellGeometry::new(
            geom.inclusions
                .iter()
                .map(|i| Inclusion {
                    center: wrap_into_cell(i.center + Complex64::new(0.37, -0.61)),
                    ..*i
                })
                .collect(),
        );
        assert_abs_diff_eq!(
            geom.volume_fraction(),
            shifted.volume_fraction(),
            epsilon = 1e-15
        );
    }
}
