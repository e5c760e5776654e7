/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// One-dimensional mixture; zero-spread components are steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl MarginalMixture {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, sds: Vec<f64>) -> Self {
        Self { weights, means, sds }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t == f64::INFINITY {
            return 1.0;
        }
        if t == f64::NEG_INFINITY {
            return 0.0;
        }
        let mut p = 0.0;
        for ((w, m), s) in self.weights.iter().zip(&self.means).zip(&self.sds) {
            p += w * if *s > 0.0 {
                normal_cdf((t - m) / s)
            } else if t >= *m {
                1.0
            } else {
                0.0
            };
        }
        p.clamp(0.0, 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(w, (m, s))| w * (s * s + (m - mu) * (m - mu)))
            .sum()
    }

    /// Range containing essentially all of the mass.
    pub fn support(&self, width: f64) -> (f64, f64) {
        let lo = self
            .means
            .iter()
            .zip(&self.sds)
            .map(|(m, s)| m - width * s)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .means
            .iter()
            .zip(&self.sds)
            .map(|(m, s)| m + width * s)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Quantile by bisection on the CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = self.support(10.0);
        if lo == hi {
            return lo;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}
