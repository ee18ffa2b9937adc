//! Temperature-dependent conductivities, Kirchhoff maps, and the
//! proportionality detection that linearizes the transmission problem.
//!
//! A profile is piecewise linear in T with constant extrapolation; its
//! Kirchhoff map f(T) = integral of lambda from 0 to T is then piecewise
//! quadratic, strictly increasing, and invertible in closed form per branch.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("breakpoints must be strictly increasing")]
    BreakpointsNotIncreasing,
    #[error("conductivity values must be strictly positive")]
    NonPositiveValue,
    #[error("breakpoint/value lengths differ")]
    LengthMismatch,
    #[error("profile needs at least one breakpoint")]
    Empty,
}

/// Piecewise-linear conductivity lambda(T), constant outside the breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityProfile {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl ConductivityProfile {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, ProfileError> {
        if breakpoints.is_empty() {
            return Err(ProfileError::Empty);
        }
        if breakpoints.len() != values.len() {
            return Err(ProfileError::LengthMismatch);
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ProfileError::BreakpointsNotIncreasing);
        }
        if values.iter().any(|&v| v <= 0.0) {
            return Err(ProfileError::NonPositiveValue);
        }
        Ok(ConductivityProfile { breakpoints, values })
    }

    /// Constant conductivity at every temperature.
    pub fn constant(value: f64) -> Self {
        ConductivityProfile::new(vec![0.0], vec![value]).expect("positive constant")
    }

    /// The tent profile: peak y_hi at T=0 falling linearly to y_lo at x1 < 0
    /// and x2 > 0, constant y_lo beyond.
    pub fn trapezoid(x1: f64, x2: f64, y_lo: f64, y_hi: f64) -> Self {
        ConductivityProfile::new(vec![x1, 0.0, x2], vec![y_lo, y_hi, y_lo])
            .expect("trapezoid profile")
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// lambda(T): linear interpolation, constant extrapolation.
    pub fn eval(&self, t: f64) -> f64 {
        let bp = &self.breakpoints;
        let v = &self.values;
        if t <= bp[0] {
            return v[0];
        }
        if t >= bp[bp.len() - 1] {
            return v[v.len() - 1];
        }
        // partition_point returns the first index with bp[i] > t; t is interior here
        let i = bp.partition_point(|&b| b <= t);
        let s = (t - bp[i - 1]) / (bp[i] - bp[i - 1]);
        v[i - 1] + s * (v[i] - v[i - 1])
    }
}

/// Monotone piecewise-quadratic f(T) = integral of lambda, with f(0) = 0,
/// and its closed-form inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct KirchhoffMap {
    // knots are the profile breakpoints; cumulative f at each knot
    knots: Vec<f64>,
    f_at_knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>, // lambda slope on each interior segment
}

impl KirchhoffMap {
    pub fn from_profile(profile: &ConductivityProfile) -> Self {
        let knots = profile.breakpoints.clone();
        let values = profile.values.clone();
        let n = knots.len();
        let mut slopes = Vec::with_capacity(n.saturating_sub(1));
        let mut cumulative = vec![0.0; n];
        for i in 0..n.saturating_sub(1) {
            let h = knots[i + 1] - knots[i];
            let s = (values[i + 1] - values[i]) / h;
            slopes.push(s);
            // integral of values[i] + s (t - knots[i]) over the segment
            cumulative[i + 1] = cumulative[i] + values[i] * h + 0.5 * s * h * h;
        }
        let mut map = KirchhoffMap { knots, f_at_knots: cumulative, values, slopes };
        let f0 = map.forward_unnormalized(0.0);
        for f in &mut map.f_at_knots {
            *f -= f0;
        }
        map
    }

    fn forward_unnormalized(&self, t: f64) -> f64 {
        let k = &self.knots;
        let n = k.len();
        if t <= k[0] {
            return self.f_at_knots[0] + self.values[0] * (t - k[0]);
        }
        if t >= k[n - 1] {
            return self.f_at_knots[n - 1] + self.values[n - 1] * (t - k[n - 1]);
        }
        let i = k.partition_point(|&b| b <= t) - 1;
        let dt = t - k[i];
        self.f_at_knots[i] + self.values[i] * dt + 0.5 * self.slopes[i] * dt * dt
    }

    /// f(T), exact per quadratic branch.
    pub fn forward(&self, t: f64) -> f64 {
        self.forward_unnormalized(t)
    }

    /// f^{-1}(u), exact per branch. The quadratic branches use the root form
    /// 2 du / (v + sqrt(v^2 + 2 s du)), continuous with the linear branches
    /// as the segment slope s -> 0.
    pub fn inverse(&self, u: f64) -> f64 {
        let f = &self.f_at_knots;
        let k = &self.knots;
        let n = k.len();
        if u <= f[0] {
            return k[0] + (u - f[0]) / self.values[0];
        }
        if u >= f[n - 1] {
            return k[n - 1] + (u - f[n - 1]) / self.values[n - 1];
        }
        let i = f.partition_point(|&b| b <= u) - 1;
        let du = u - f[i];
        let v = self.values[i];
        let s = self.slopes[i];
        // lambda > 0 keeps v^2 + 2 s du >= lambda(t)^2 > 0 on the branch
        k[i] + 2.0 * du / (v + (v * v + 2.0 * s * du).sqrt())
    }
}

/// Matrix profile plus per-inclusion profiles; `constants` is Some when the
/// family satisfies lambda(T) = C_k * lambda_k(T) for every inclusion.
#[derive(Debug, Clone)]
pub struct ContrastFamily {
    pub matrix: ConductivityProfile,
    pub inclusions: Vec<ConductivityProfile>,
    pub constants: Option<Vec<f64>>,
}

/// Default tolerance for proportionality detection; the condition is exact
/// in the model, tolerance only absorbs float noise.
pub const PROPORTIONALITY_TOL: f64 = 1e-10;

/// If lambda(T) = C * lambda_k(T) holds (relative deviation <= tol at the
/// union of breakpoints), return C; piecewise-linear profiles agree everywhere
/// iff they agree on the union set.
pub fn detect_proportionality(
    matrix: &ConductivityProfile,
    inclusion: &ConductivityProfile,
    tol: f64,
) -> Option<f64> {
    let mut points: Vec<f64> = matrix
        .breakpoints
        .iter()
        .chain(inclusion.breakpoints.iter())
        .copied()
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    // constant tails: also compare one point beyond each end
    points.insert(0, points[0] - 1.0);
    points.push(points[points.len() - 1] + 1.0);
    let c = matrix.eval(points[0]) / inclusion.eval(points[0]);
    for &t in &points {
        let lam = matrix.eval(t);
        if (lam - c * inclusion.eval(t)).abs() / lam > tol {
            return None;
        }
    }
    Some(c)
}

impl ContrastFamily {
    /// Build a family, detecting proportionality with the default tolerance.
    pub fn new(matrix: ConductivityProfile, inclusions: Vec<ConductivityProfile>) -> Self {
        let constants: Option<Vec<f64>> = inclusions
            .iter()
            .map(|inc| detect_proportionality(&matrix, inc, PROPORTIONALITY_TOL))
            .collect();
        ContrastFamily { matrix, inclusions, constants }
    }

    pub fn is_proportional(&self) -> bool {
        self.constants.is_some()
    }

    /// The interface map F_k(xi) = f(f_k^{-1}(xi)); equals C_k * xi exactly
    /// for proportional families (both maps fix 0).
    pub fn interface_map(&self, k: usize, xi: f64) -> f64 {
        let f = KirchhoffMap::from_profile(&self.matrix);
        let fk = KirchhoffMap::from_profile(&self.inclusions[k]);
        f.forward(fk.inverse(xi))
    }
}

/// The worked two-phase family: matrix trapezoid(-2, 2, 4.5, 13.5),
/// inclusions trapezoid(-2, 2, 50, 150), proportional with C_k = 0.09.
pub fn example_family(n_inclusions: usize) -> ContrastFamily {
    ContrastFamily::new(
        ConductivityProfile::trapezoid(-2.0, 2.0, 4.5, 13.5),
        vec![ConductivityProfile::trapezoid(-2.0, 2.0, 50.0, 150.0); n_inclusions],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn matrix_profile() -> ConductivityProfile {
        ConductivityProfile::trapezoid(-2.0, 2.0, 4.5, 13.5)
    }

    fn inclusion_profile() -> ConductivityProfile {
        ConductivityProfile::trapezoid(-2.0, 2.0, 50.0, 150.0)
    }

    #[test]
    fn eval_matches_reference_values() {
        assert_eq!(matrix_profile().eval(0.0), 13.5);
        assert_eq!(inclusion_profile().eval(0.0), 150.0);
        assert_eq!(matrix_profile().eval(5.0), 4.5); // constant tail
        assert_eq!(matrix_profile().eval(-7.0), 4.5);
        assert_abs_diff_eq!(matrix_profile().eval(1.0), 9.0, epsilon = 1e-14);
    }

    #[test]
    fn forward_matches_closed_form() {
        let f = KirchhoffMap::from_profile(&matrix_profile());
        assert_eq!(f.forward(0.0), 0.0);
        // quadratic branch (y1-y2)/(2 x2) T^2 + y2 T at T=2
        assert_abs_diff_eq!(f.forward(2.0), 18.0, epsilon = 1e-12);
        // tail branch y1 T + x2 (y2-y1)/2 at T=3
        assert_abs_diff_eq!(f.forward(3.0), 22.5, epsilon = 1e-12);
        let fk = KirchhoffMap::from_profile(&inclusion_profile());
        assert_abs_diff_eq!(fk.forward(2.0), 200.0, epsilon = 1e-12);
    }

    #[test]
    fn forward_matches_quadrature() {
        // trapezoid-rule cross-check of f(T) = integral of lambda
        let prof = matrix_profile();
        let f = KirchhoffMap::from_profile(&prof);
        for &t in &[2.0, 3.0, -1.3, 0.7] {
            let n = 200_000;
            let h = t / n as f64;
            let mut acc = 0.5 * (prof.eval(0.0) + prof.eval(t));
            for i in 1..n {
                acc += prof.eval(i as f64 * h);
            }
            acc *= h;
            assert_abs_diff_eq!(f.forward(t), acc, epsilon = 1e-8);
        }
    }

    #[test]
    fn inverse_matches_reference_values() {
        let fk = KirchhoffMap::from_profile(&inclusion_profile());
        assert_eq!(fk.inverse(0.0), 0.0);
        assert_abs_diff_eq!(fk.inverse(200.0), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn roundtrip_is_exact() {
        let f = KirchhoffMap::from_profile(&matrix_profile());
        // deterministic pseudo-random sample of [-10, 10]
        let mut x = 0.5_f64;
        for _ in 0..10_000 {
            x = (x * 9301.0 + 49297.0) % 233280.0;
            let t = 20.0 * (x / 233280.0) - 10.0;
            assert_abs_diff_eq!(f.inverse(f.forward(t)), t, epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_is_strictly_monotone() {
        let f = KirchhoffMap::from_profile(&matrix_profile());
        let mut prev = f.forward(-6.0);
        let mut t = -6.0;
        while t < 6.0 {
            t += 0.01;
            let cur = f.forward(t);
            assert!(cur > prev);
            prev = cur;
        }
    }

    #[test]
    fn derivative_matches_lambda() {
        let prof = matrix_profile();
        let f = KirchhoffMap::from_profile(&prof);
        let h = 1e-5;
        let mut x = 0.123_f64;
        for _ in 0..1000 {
            x = (x * 9301.0 + 49297.0) % 233280.0;
            let t = 8.0 * (x / 233280.0) - 4.0;
            // skip the breakpoint neighborhoods where the FD stencil straddles a kink
            if prof.breakpoints().iter().any(|b| (t - b).abs() < 2.0 * h) {
                continue;
            }
            let fd = (f.forward(t + h) - f.forward(t - h)) / (2.0 * h);
            let lam = prof.eval(t);
            assert!((fd - lam).abs() / lam < 1e-6, "t={t}: fd={fd} lambda={lam}");
        }
    }

    #[test]
    fn interface_map_is_linear_for_proportional_family() {
        let fam = example_family(1);
        assert!(fam.is_proportional());
        assert_abs_diff_eq!(fam.constants.as_ref().unwrap()[0], 0.09, epsilon = 1e-13);
        assert_abs_diff_eq!(fam.interface_map(0, 200.0), 18.0, epsilon = 1e-12);
        assert_eq!(fam.interface_map(0, 0.0), 0.0);
        for &xi in &[-311.0, -55.5, 0.3, 7.0, 123.0, 999.0] {
            assert_abs_diff_eq!(fam.interface_map(0, xi), 0.09 * xi, epsilon = 1e-10);
        }
    }

    #[test]
    fn interface_map_identity_for_equal_profiles() {
        let fam = ContrastFamily::new(matrix_profile(), vec![matrix_profile()]);
        assert_abs_diff_eq!(fam.constants.as_ref().unwrap()[0], 1.0, epsilon = 1e-14);
        for &xi in &[-31.0, 0.0, 5.5, 40.0] {
            assert_abs_diff_eq!(fam.interface_map(0, xi), xi, epsilon = 1e-12);
        }
    }

    #[test]
    fn interface_map_derivative_is_conductivity_ratio() {
        let fam = example_family(1);
        let fk = KirchhoffMap::from_profile(&fam.inclusions[0]);
        let h = 1e-4;
        for &t in &[-3.0, -1.2, 0.4, 1.9, 2.5] {
            let xi = fk.forward(t);
            let fd = (fam.interface_map(0, xi + h) - fam.interface_map(0, xi - h)) / (2.0 * h);
            let ratio = fam.matrix.eval(t) / fam.inclusions[0].eval(t);
            assert!((fd - ratio).abs() / ratio < 1e-5);
        }
    }

    #[test]
    fn proportionality_detection() {
        assert!(detect_proportionality(&matrix_profile(), &inclusion_profile(), 1e-10).is_some());
        assert_eq!(
            detect_proportionality(&matrix_profile(), &matrix_profile(), 1e-10),
            Some(1.0)
        );
        assert_eq!(
            detect_proportionality(&matrix_profile(), &ConductivityProfile::constant(150.0), 1e-10),
            None
        );
        // differing breakpoint sets refine to the union: still detected
        let coarse = ConductivityProfile::new(vec![-2.0, 0.0, 2.0], vec![9.0, 27.0, 9.0]).unwrap();
        let fine = ConductivityProfile::new(
            vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            vec![3.0, 6.0, 9.0, 6.0, 3.0],
        )
        .unwrap();
        let c = detect_proportionality(&coarse, &fine, 1e-10).unwrap();
        assert_abs_diff_eq!(c, 3.0, epsilon = 1e-13);
        // same breakpoints, non-proportional kink
        let bent = ConductivityProfile::new(vec![-2.0, 0.0, 2.0], vec![3.0, 9.1, 3.0]).unwrap();
        assert_eq!(detect_proportionality(&coarse, &bent, 1e-10), None);
    }

    #[test]
    fn rejects_malformed_profiles() {
        assert!(ConductivityProfile::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(ConductivityProfile::new(vec![0.0, 1.0], vec![1.0, -2.0]).is_err());
        assert!(ConductivityProfile::new(vec![], vec![]).is_err());
        assert!(ConductivityProfile::new(vec![0.0], vec![1.0, 2.0]).is_err());
    }
}
