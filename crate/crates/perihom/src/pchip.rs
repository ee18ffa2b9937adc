//! Shape-preserving piecewise cubic interpolation (Fritsch-Carlson slopes,
//! the same construction scipy's PchipInterpolator uses). Monotone data
//! yields a monotone interpolant; the curve is C1.

fn sgn(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Three-point one-sided slope with the monotonicity clamps.
fn edge_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if sgn(d) != sgn(m0) {
        0.0
    } else if sgn(m0) != sgn(m1) && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl MonotoneCubic {
    /// `x` strictly increasing, at least two points.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, &'static str> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err("need at least two nodes and matching lengths");
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err("abscissae must be strictly increasing");
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let m: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = m[0];
            d[1] = m[0];
        } else {
            for k in 1..n - 1 {
                let (m0, m1) = (m[k - 1], m[k]);
                d[k] = if sgn(m0) * sgn(m1) <= 0 {
                    0.0
                } else {
                    // weighted harmonic mean of the neighbor secants
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    (w1 + w2) / (w1 / m0 + w2 / m1)
                };
            }
            d[0] = edge_slope(h[0], h[1], m[0], m[1]);
            d[n - 1] = edge_slope(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
        }
        Ok(MonotoneCubic { x, y, d })
    }

    pub fn eval(&self, xq: f64) -> f64 {
        let n = self.x.len();
        // interval index; queries beyond the ends ride the end cubics
        let k = self.x[1..n - 1].partition_point(|&v| v <= xq);
        let h = self.x[k + 1] - self.x[k];
        let t = (xq - self.x[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.y[k] + h * (h10 * self.d[k] + h11 * self.d[k + 1]) + h01 * self.y[k + 1]
    }
}
