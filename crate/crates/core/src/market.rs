//! Two-asset return structure: an iid Normal gross real return for the risky
//! asset and a deterministic bond growing at `1 + r` per period.

use libm::erfc;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Gross real return model. `mu` and `sigma` describe the stock's gross
/// return per rebalancing period (e.g. 1.083 means +8.3%), `r` is the real
/// bond rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnModel {
    mu: f64,
    sigma: f64,
    r: f64,
}

impl ReturnModel {
    pub const DEFAULT_MU: f64 = 1.083;
    pub const DEFAULT_SIGMA: f64 = 0.1753;

    pub fn new(mu: f64, sigma: f64, r: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::InvalidModel(format!("mu must be finite, got {mu}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidModel(format!("sigma must be > 0, got {sigma}")));
        }
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::InvalidModel(format!("bond rate must be >= 0, got {r}")));
        }
        Ok(Self { mu, sigma, r })
    }

    /// N(1.083, 0.1753^2) with a zero real bond rate.
    pub fn baseline() -> Self {
        Self { mu: Self::DEFAULT_MU, sigma: Self::DEFAULT_SIGMA, r: 0.0 }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn rate(&self) -> f64 {
        self.r
    }

    /// Gross bond return `1 + r`.
    pub fn bond_gross(&self) -> f64 {
        1.0 + self.r
    }

    pub fn with_rate(self, r: f64) -> Result<Self> {
        Self::new(self.mu, self.sigma, r)
    }

    pub fn pdf(&self, z: f64) -> f64 {
        let t = (z - self.mu) / self.sigma;
        if !t.is_finite() {
            return 0.0;
        }
        INV_SQRT_2PI / self.sigma * (-0.5 * t * t).exp()
    }

    pub fn cdf(&self, z: f64) -> f64 {
        if z == f64::INFINITY {
            return 1.0;
        }
        if z == f64::NEG_INFINITY {
            return 0.0;
        }
        0.5 * erfc(-(z - self.mu) / (self.sigma * std::f64::consts::SQRT_2))
    }

    /// `1 - cdf(z)`, computed without cancellation in the upper tail.
    pub fn sf(&self, z: f64) -> f64 {
        if z == f64::INFINITY {
            return 0.0;
        }
        if z == f64::NEG_INFINITY {
            return 1.0;
        }
        0.5 * erfc((z - self.mu) / (self.sigma * std::f64::consts::SQRT_2))
    }

    /// `cdf(hi) - cdf(lo)` for `lo <= hi`, taken from whichever tail keeps
    /// the two terms small.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        if lo >= self.mu {
            (self.sf(lo) - self.sf(hi)).max(0.0)
        } else {
            (self.cdf(hi) - self.cdf(lo)).max(0.0)
        }
    }

    /// One draw of the stock's gross return. Draws are not clamped, so a
    /// (very unlikely) negative gross return is passed through as-is.
    pub fn sample_return<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Normal::new(self.mu, self.sigma).expect("sigma validated at construction").sample(rng)
    }

    /// Gross portfolio return with weight `q` in the stock and `1 - q` in the bond.
    pub fn portfolio_return(&self, q: f64, stock_gross: f64) -> f64 {
        assert!((0.0..=1.0).contains(&q), "stock weight must lie in [0, 1], got {q}");
        q * stock_gross + (1.0 - q) * self.bond_gross()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn density_at_the_mean() {
        let m = ReturnModel::baseline();
        let expected = 1.0 / (0.1753 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((m.pdf(1.083) - expected).abs() < 1e-12);
        assert!((m.pdf(1.083) - 2.2758).abs() < 1e-4);
        let std = ReturnModel::new(0.0, 1.0, 0.0).unwrap();
        assert!((std.pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(m.pdf(f64::INFINITY), 0.0);
        assert_eq!(m.pdf(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn cdf_reference_points() {
        let m = ReturnModel::baseline();
        assert!((m.cdf(1.083) - 0.5).abs() < 1e-15);
        assert_eq!(m.cdf(f64::INFINITY), 1.0);
        assert_eq!(m.cdf(f64::NEG_INFINITY), 0.0);
        // Phi(1) = 0.841344746068542948585232545632...
        assert!((m.cdf(1.083 + 0.1753) - 0.841_344_746_068_543).abs() < 1e-12);
        assert!((m.cdf(1.3) + m.sf(1.3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_parameters() {
        assert!(ReturnModel::new(1.0, 0.0, 0.0).is_err());
        assert!(ReturnModel::new(1.0, -0.1, 0.0).is_err());
        assert!(ReturnModel::new(1.0, 0.1, -0.01).is_err());
        assert!(ReturnModel::new(f64::NAN, 0.1, 0.0).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let m = ReturnModel::baseline();
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let (x1, x2) = (m.sample_return(&mut a), m.sample_return(&mut a));
        assert_ne!(x1, x2);
        assert_eq!(x1, m.sample_return(&mut b));
        assert_eq!(x2, m.sample_return(&mut b));
    }

    #[test]
    fn portfolio_return_arithmetic() {
        let m0 = ReturnModel::new(1.083, 0.1753, 0.0).unwrap();
        assert_eq!(m0.portfolio_return(0.0, 3.7), 1.0);
        assert_eq!(m0.portfolio_return(1.0, 1.05), 1.05);
        let m2 = ReturnModel::new(1.083, 0.1753, 0.02).unwrap();
        assert!((m2.portfolio_return(0.5, 1.10) - 1.06).abs() < 1e-15);
    }

    #[test]
    #[should_panic]
    fn portfolio_weight_out_of_range() {
        ReturnModel::baseline().portfolio_return(1.2, 1.0);
    }
}
