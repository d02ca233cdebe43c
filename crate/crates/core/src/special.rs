//! Student-t special functions shared by the marginal and copula layers.
//!
//! The symmetric Student-t CDF is evaluated through the regularized incomplete
//! beta function; the quantile starts from Hill's (1970) approximation and is
//! polished with safeguarded Halley steps.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::beta::beta_reg;
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

const QUANTILE_MAX_ITER: usize = 100;

// Beyond this the log-gamma difference cancels badly; use the asymptotic series.
const LARGE_NU_CONST: f64 = 1e5;
// Beyond this the incomplete beta loses accuracy; use a first-order Edgeworth term.
const LARGE_NU_CDF: f64 = 1e7;

/// ln K(ν), where K(ν) = Γ((ν+1)/2) / (√(πν) Γ(ν/2)) is the Student-t density at zero.
pub fn ln_t_const(nu: f64) -> f64 {
    if nu > LARGE_NU_CONST {
        return -0.5 * (2.0 * PI).ln() - 0.25 / nu + 1.0 / (24.0 * nu.powi(3));
    }
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (PI * nu).ln()
}

/// d ln K(ν) / dν.
pub fn dln_t_const(nu: f64) -> f64 {
    if nu > LARGE_NU_CONST {
        return 0.25 / (nu * nu) - 0.125 / nu.powi(4);
    }
    0.5 * digamma(0.5 * (nu + 1.0)) - 0.5 * digamma(0.5 * nu) - 0.5 / nu
}

/// Standard (unit-dispersion) Student-t distribution with cached normalizing constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentT {
    nu: f64,
    ln_k: f64,
}

impl StudentT {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::ParameterDomain(format!(
                "Student-t degrees of freedom must be finite and > 0, got {nu}"
            )));
        }
        Ok(Self {
            nu,
            ln_k: ln_t_const(nu),
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// ln of the density at zero.
    pub fn ln_k(&self) -> f64 {
        self.ln_k
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.ln_k - 0.5 * (self.nu + 1.0) * (x * x / self.nu).ln_1p()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Lower-tail probability P(T ≤ x).
    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if x == f64::NEG_INFINITY {
            return 0.0;
        }
        if x == f64::INFINITY {
            return 1.0;
        }
        let tail = self.tail(x.abs());
        if x <= 0.0 {
            tail
        } else {
            1.0 - tail
        }
    }

    /// P(T ≤ −|x|), accurate deep in the tails.
    fn tail(&self, ax: f64) -> f64 {
        if ax == 0.0 {
            return 0.5;
        }
        let x2 = ax * ax;
        if self.nu > LARGE_NU_CDF {
            let phi = (-0.5 * x2).exp() / (2.0 * PI).sqrt();
            return 0.5 * erfc(ax / SQRT_2) + phi * ax * (x2 + 1.0) / (4.0 * self.nu);
        }
        if x2 < self.nu {
            // Near the centre: use the complementary argument to avoid 1 − x cancellation.
            let w = x2 / (self.nu + x2);
            0.5 - 0.5 * beta_reg(0.5, 0.5 * self.nu, w)
        } else {
            let w = self.nu / (self.nu + x2);
            0.5 * beta_reg(0.5 * self.nu, 0.5, w)
        }
    }

    /// Inverse CDF. Errors for `p` outside (0, 1) or if the refinement stalls.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::ParameterDomain(format!(
                "quantile probability must lie in (0,1), got {p}"
            )));
        }
        if p == 0.5 {
            return Ok(0.0);
        }
        // Solve in the lower tail and reflect; 1 − p is exact for p ≥ 0.5.
        let (q, sign) = if p < 0.5 { (p, -1.0) } else { (1.0 - p, 1.0) };
        let x = self.lower_tail_quantile(q)?;
        Ok(sign * x)
    }

    /// Returns |x| with P(T ≤ −|x|) = q, q < 0.5.
    fn lower_tail_quantile(&self, q: f64) -> Result<f64> {
        let nu = self.nu;
        let mut x = hill_abs_quantile(2.0 * q, nu);
        if !x.is_finite() || x <= 0.0 {
            x = 1.0;
        }
        // Bracket on |x|: tail(|x|) is decreasing in |x|.
        let mut lo = 0.0_f64;
        let mut hi = f64::INFINITY;
        for iter in 0..QUANTILE_MAX_ITER {
            let fx = self.tail(x) - q;
            // The incomplete beta is accurate to ~1e-14 relative; Newton can cycle below that.
            if fx.abs() <= 1e-13 * q {
                return Ok(x);
            }
            if fx > 0.0 {
                lo = lo.max(x);
            } else {
                hi = hi.min(x);
            }
            if lo >= hi {
                return Ok(x);
            }
            // d tail / d|x| = −pdf(|x|)
            let dens = self.pdf(x);
            let mut next = if dens > 0.0 {
                let delta = -fx / dens; // Newton step on |x|
                                        // Halley correction; g''/g' = (ν+1)x/(ν+x²) up to sign.
                let curv = (nu + 1.0) * x / (nu + x * x);
                let denom = 1.0 + 0.5 * delta * curv;
                if denom.abs() > 0.1 {
                    x - delta / denom
                } else {
                    x - delta
                }
            } else {
                f64::NAN
            };
            if !(next.is_finite() && next > lo && next < hi) {
                next = if hi.is_finite() {
                    0.5 * (lo + hi)
                } else {
                    2.0 * x.max(1.0)
                };
            }
            let step = (next - x).abs();
            x = next;
            if step <= 4.0 * f64::EPSILON * x.max(1e-300) {
                return Ok(x);
            }
            if iter > 3 && hi.is_finite() && (hi - lo) <= 4.0 * f64::EPSILON * hi {
                return Ok(x);
            }
        }
        Err(Error::NotConverged {
            what: "Student-t quantile",
            iterations: QUANTILE_MAX_ITER,
            residual: (self.tail(x) - q).abs(),
        })
    }
}

/// Hill (1970), ACM Algorithm 396: |t| such that the two-sided tail mass is `p2`.
fn hill_abs_quantile(p2: f64, n: f64) -> f64 {
    if (n - 1.0).abs() < 1e-12 {
        return 1.0 / (0.5 * PI * p2).tan();
    }
    if (n - 2.0).abs() < 1e-12 {
        return (2.0 / (p2 * (2.0 - p2)) - 2.0).sqrt();
    }
    let a = 1.0 / (n - 0.5);
    let b = 48.0 / (a * a);
    let mut c = ((20700.0 * a / b - 98.0) * a - 16.0) * a + 96.36;
    let d = ((94.5 / (b + c) - 3.0) / b + 1.0) * (a * PI * 0.5).sqrt() * n;
    let x0 = d * p2;
    let mut y = x0.powf(2.0 / n);
    if y > 0.05 + a {
        // Normal deviate for the one-sided tail p2/2.
        let x = -SQRT_2 * erfc_inv(p2);
        y = x * x;
        if n < 5.0 {
            c += 0.3 * (n - 4.5) * (x + 0.6);
        }
        c += (((0.05 * d * x - 5.0) * x - 7.0) * x - 2.0) * x + b;
        y = (((((0.4 * y + 6.3) * y + 36.0) * y + 94.5) / c - y - 3.0) / b + 1.0) * x;
        y = a * y * y;
        y = if y > 0.002 { y.exp() - 1.0 } else { 0.5 * y * y + y };
    } else {
        y = ((1.0 / (((n + 6.0) / (n * y) - 0.089 * d - 0.822) * (n + 2.0) * 3.0) + 0.5 / (n + 4.0)) * y - 1.0)
            * (n + 1.0)
            / (n + 2.0)
            + 1.0 / y;
    }
    (n * y).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cauchy_and_nu2_closed_forms() {
        let t1 = StudentT::new(1.0).unwrap();
        for &x in &[-30.0_f64, -2.0, -0.3, 0.0, 0.7, 5.0] {
            let exact = 0.5 + x.atan() / PI;
            assert!((t1.cdf(x) - exact).abs() < 1e-13, "x={x}");
        }
        let t2 = StudentT::new(2.0).unwrap();
        for &x in &[-10.0_f64, -1.0, 0.2, 3.0] {
            let exact = 0.5 + x / (2.0 * (2.0 + x * x).sqrt());
            assert!((t2.cdf(x) - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn quantile_inverts_cdf_including_tails() {
        for &nu in &[2.05, 4.1, 5.0, 8.0, 30.0, 500.0] {
            let t = StudentT::new(nu).unwrap();
            for &p in &[1e-12, 1e-6, 0.001, 0.025, 0.3, 0.5, 0.77, 0.975, 0.999999] {
                let x = t.quantile(p).unwrap();
                let back = t.cdf(x);
                assert!(
                    (back - p).abs() <= 1e-13_f64.max(1e-9 * p),
                    "nu={nu} p={p} x={x} back={back}"
                );
            }
        }
    }

    #[test]
    fn known_quantile_values() {
        // t_{0.975}(5) = 2.570581835636314
        let t = StudentT::new(5.0).unwrap();
        assert!((t.quantile(0.975).unwrap() - 2.570_581_835_636_314).abs() < 1e-10);
        let t = StudentT::new(10.0).unwrap();
        assert!((t.quantile(0.95).unwrap() - 1.812_461_122_811_676).abs() < 1e-10);
    }

    #[test]
    fn dln_k_matches_finite_difference() {
        for &nu in &[4.5, 7.0, 25.0] {
            let h = 1e-5;
            let fd = (ln_t_const(nu + h) - ln_t_const(nu - h)) / (2.0 * h);
            assert!((fd - dln_t_const(nu)).abs() < 1e-8);
        }
    }

    #[test]
    fn large_nu_approaches_normal() {
        // Φ(−2) and the standard normal 1% quantile
        let phi_m2 = 0.022_750_131_948_179_2;
        for &nu in &[1e8, 1e12, 1e30] {
            let t = StudentT::new(nu).unwrap();
            assert!((t.cdf(-2.0) - phi_m2).abs() < 5e-9, "nu={nu}");
            assert!((t.quantile(0.01).unwrap() + 2.326_347_874_040_841).abs() < 1e-7);
            assert!((ln_t_const(nu) + 0.5 * (2.0 * PI).ln()).abs() < 1e-7);
        }
        for &nu in &[5e4, 2e5] {
            let h = 1e-3 * nu;
            let fd = (ln_t_const(nu + h) - ln_t_const(nu - h)) / (2.0 * h);
            assert!((fd - dln_t_const(nu)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(StudentT::new(0.0).is_err());
        let t = StudentT::new(5.0).unwrap();
        assert!(t.quantile(0.0).is_err());
        assert!(t.quantile(1.0).is_err());
    }
}
