//! Weierstrass zeta function for the unit square lattice Z + iZ.
//!
//! The exterior multipole basis is built from derivatives of zeta, so the
//! whole solver rests on evaluating `zeta^(j)(z)` fast and to near machine
//! precision anywhere in the plane. Evaluation uses the Laurent expansion
//! around the nearest lattice point; quasi-periodicity supplies the jump
//! (the Legendre constants of this lattice are eta1 = pi, eta2 = -i pi).

use num_complex::Complex64;
use std::f64::consts::PI;

/// Laurent truncation. At the reduction corner |w| = sqrt(2)/2 the series
/// tail for derivative orders up to ~40 drops below 1e-11 at this length.
pub const LAURENT_TERMS: usize = 165;

/// Highest derivative order the precomputed tables cover.
pub const MAX_DERIV: usize = 42;

fn sigma3(n: u64) -> f64 {
    (1..=n).filter(|d| n % d == 0).map(|d| (d * d * d) as f64).sum()
}

/// Lattice sum G4 = sum' 1/w^4 from the weight-4 q-series at tau = i.
/// q = e^{-2 pi} makes a dozen terms overkill for f64.
pub fn eisenstein_g4() -> f64 {
    let q = (-2.0 * PI).exp();
    let mut e4 = 1.0;
    for n in 1..=20u64 {
        e4 += 240.0 * sigma3(n) * q.powi(n as i32);
    }
    2.0 * (PI.powi(4) / 90.0) * e4
}

/// Direct square-shell lattice sum of 1/w^power over |m1|,|m2| <= shells.
/// Slowly convergent; kept as an independent cross-check of the q-series.
pub fn direct_lattice_sum(power: i32, shells: i64) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for m1 in -shells..=shells {
        for m2 in -shells..=shells {
            if m1 == 0 && m2 == 0 {
                continue;
            }
            let w = Complex64::new(m1 as f64, m2 as f64);
            s += w.powi(-power);
        }
    }
    s
}

/// Precomputed Laurent data: zeta(z) = 1/z - sum_{k>=1} G_{2k+2} z^{2k+1}.
///
/// Stores c_k = (2k+1) G_{2k+2} (the coefficients of -wp) and, per derivative
/// order j, the Horner-ready coefficient run of the differentiated series.
#[derive(Debug, Clone)]
pub struct ZetaTable {
    // horner[j]: coefficients of sum_k -G_{2k+2} * falling(2k+1, j) * w^{2k+1-j},
    // highest k first; power[j] is the trailing power left outside the Horner loop.
    horner: Vec<Vec<f64>>,
    power: Vec<i32>,
}

impl ZetaTable {
    pub fn new() -> Self {
        Self::with_terms(LAURENT_TERMS)
    }

    pub fn with_terms(kmax: usize) -> Self {
        // c1 = 3 G4; G6 = 0 by the square lattice's quarter-turn symmetry;
        // the rest follow from the Weierstrass coefficient recursion.
        let g4 = eisenstein_g4();
        let mut c = vec![0.0; kmax + 1];
        c[1] = 3.0 * g4;
        for k in 3..=kmax {
            let s: f64 = (1..k - 1).map(|j| c[j] * c[k - 1 - j]).sum();
            c[k] = 3.0 * s / (((2 * k + 3) * (k - 2)) as f64);
        }
        let mut horner = Vec::with_capacity(MAX_DERIV + 1);
        let mut power = Vec::with_capacity(MAX_DERIV + 1);
        for j in 0..=MAX_DERIV {
            let ks: Vec<usize> = (1..=kmax).filter(|&k| 2 * k + 1 >= j).collect();
            if ks.is_empty() {
                horner.push(Vec::new());
                power.push(0);
                continue;
            }
            let mut coef: Vec<f64> = ks
                .iter()
                .map(|&k| {
                    let mut ff = 1.0;
                    for t in 0..j {
                        ff *= (2 * k + 1 - t) as f64;
                    }
                    -c[k] / ((2 * k + 1) as f64) * ff
                })
                .collect();
            coef.reverse();
            power.push((2 * ks[0] + 1 - j) as i32);
            horner.push(coef);
        }
        ZetaTable { horner, power }
    }

    /// zeta(z) and derivatives up to order `nder`, written into `out`.
    ///
    /// out[j] = zeta^(j)(z); out[0] carries the quasi-periodic increment
    /// pi*(m1 - i m2) of the reduction z = w + m1 + i m2.
    pub fn derivs_into(&self, z: Complex64, nder: usize, out: &mut [Complex64]) {
        debug_assert!(nder <= MAX_DERIV && out.len() > nder);
        let m1 = z.re.round();
        let m2 = z.im.round();
        let w = Complex64::new(z.re - m1, z.im - m2);
        let w2 = w * w;
        let winv = 1.0 / w;
        // principal parts d^j (1/w) = (-1)^j j! / w^{j+1}
        let mut pp = winv;
        let mut fact = 1.0;
        for (j, o) in out.iter_mut().enumerate().take(nder + 1) {
            pp *= winv;
            if j > 0 {
                fact *= -(j as f64);
            }
            *o = fact * pp * w;
            let mut acc = Complex64::new(0.0, 0.0);
            for &cf in &self.horner[j] {
                acc = acc * w2 + cf;
            }
            *o += acc * w.powi(self.power[j]);
        }
        out[0] += PI * Complex64::new(m1, -m2);
    }

    pub fn derivs(&self, z: Complex64, nder: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); nder + 1];
        self.derivs_into(z, nder, &mut out);
        out
    }
}

impl Default for ZetaTable {
    fn default() -> Self {
        Self::new()
    }
}
