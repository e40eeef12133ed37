//! Shrinking analyticity-radius clock.
//!
//! The tangential regularity of a run is tracked by a multiplier
//! exp(δ(t)·[ξ]^{2/3}) with [ξ] = (1 + ξ²)^{1/2}. The radius budget
//! δ(t) = δ₀ − λθ(t) shrinks at the integrable rate
//!
//!   θ'(t) = ε^{1/2} ⟨t⟩^{−α},   θ(0) = 0,   ⟨t⟩ = 1 + t,  α > 1,
//!
//! which has the closed form θ(t) = ε^{1/2} (1 − ⟨t⟩^{1−α}) / (α − 1) and the
//! finite limit θ_∞ = ε^{1/2}/(α − 1). A run is meaningful only while
//! δ(t) > δ₀/2; crossing that line is a hard stop.
//!
//! The clock also owns the small algebra around the multiplier: the symbol
//! Q(ξ) = ξ [ξ]^{−4/3} appearing in first-order multiplier commutators, the
//! per-step damping factor exp(−λ·Δθ·[ξ]^{2/3}), and the sub-additivity check
//! [ξ]^{2/3} ≤ [ξ−η]^{2/3} + [η]^{2/3} that every paraproduct estimate leans on.

use crate::error::{Error, Result};
use crate::grid::SpectralField;

/// Direction of the radius multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// Exponent cap for exp(δ(t)·[ξ]^{2/3}); beyond this f64 range is hopeless.
pub const GEVREY_EXPONENT_LIMIT: f64 = 500.0;

#[derive(Debug, Clone)]
pub struct GevreyClock {
    epsilon: f64,
    lambda: f64,
    delta0: f64,
    alpha: f64,
    eta: f64,
    kappa: f64,
    t: f64,
    theta: f64,
}

/// [ξ]^{2/3} = (1 + ξ²)^{1/3}.
pub fn bracket_23(xi: i64) -> f64 {
    (1.0 + (xi * xi) as f64).cbrt()
}

/// Q(ξ) = ξ (1 + ξ²)^{−2/3}.
pub fn q_symbol(xi: i64) -> f64 {
    xi as f64 * (1.0 + (xi * xi) as f64).powf(-2.0 / 3.0)
}

/// Closed form of the radius integral; α ≤ 1 has no finite saturation.
pub fn theta_closed_form(epsilon: f64, alpha: f64, t: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "radius exponent alpha must exceed 1, got {alpha}"
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("negative time {t}")));
    }
    Ok(epsilon.sqrt() * (1.0 - (1.0 + t).powf(1.0 - alpha)) / (alpha - 1.0))
}

impl GevreyClock {
    pub fn new(
        epsilon: f64,
        lambda: f64,
        delta0: f64,
        alpha: f64,
        eta: f64,
        kappa: f64,
    ) -> Result<GevreyClock> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        if !(delta0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delta0 must be positive, got {delta0}"
            )));
        }
        if !(alpha > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must exceed 1, got {alpha}"
            )));
        }
        if !(kappa > 0.0 && kappa < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "kappa must lie in (0, 2), got {kappa}"
            )));
        }
        let lk = kappa * (2.0 - kappa) / 4.0;
        if !(eta > 0.0 && eta < lk) {
            return Err(Error::InvalidParameter(format!(
                "eta must lie in (0, l_kappa) = (0, {lk}), got {eta}"
            )));
        }
        Ok(GevreyClock {
            epsilon,
            lambda,
            delta0,
            alpha,
            eta,
            kappa,
            t: 0.0,
            theta: 0.0,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// κ(2 − κ)/4, the resistivity-dependent decay increment.
    pub fn l_kappa(&self) -> f64 {
        self.kappa * (2.0 - self.kappa) / 4.0
    }

    /// Default decay exponent 1 + l_κ − η.
    pub fn gamma0_default(&self) -> f64 {
        1.0 + self.l_kappa() - self.eta
    }

    pub fn theta_at(&self, t: f64) -> Result<f64> {
        theta_closed_form(self.epsilon, self.alpha, t)
    }

    pub fn theta_dot(&self, t: f64) -> f64 {
        self.epsilon.sqrt() * (1.0 + t).powf(-self.alpha)
    }

    /// Saturation value lim_{t→∞} θ(t) = ε^{1/2}/(α − 1).
    pub fn theta_inf(&self) -> f64 {
        self.epsilon.sqrt() / (self.alpha - 1.0)
    }

    /// Whether the radius budget survives for all time: θ_∞ ≤ δ₀/(4λ).
    pub fn saturation_ok(&self) -> bool {
        self.theta_inf() <= self.delta0 / (4.0 * self.lambda)
    }

    /// Clock moved to absolute time `t` (θ re-evaluated in closed form).
    pub fn at_time(&self, t: f64) -> Result<GevreyClock> {
        let mut c = self.clone();
        c.theta = self.theta_at(t)?;
        c.t = t;
        Ok(c)
    }

    pub fn advanced(&self, dt: f64) -> Result<GevreyClock> {
        self.at_time(self.t + dt)
    }

    /// Current radius budget δ(t) = δ₀ − λθ(t); errors once it falls to δ₀/2.
    pub fn delta(&self) -> Result<f64> {
        let d = self.delta_unchecked();
        if d <= 0.5 * self.delta0 {
            return Err(Error::RadiusExhausted {
                t: self.t,
                delta: d,
                floor: 0.5 * self.delta0,
            });
        }
        Ok(d)
    }

    pub fn delta_unchecked(&self) -> f64 {
        self.delta0 - self.lambda * self.theta
    }

    /// First time at which δ(t) would reach δ₀/2, if any.
    pub fn radius_deadline(&self) -> Option<f64> {
        // λ θ(t) = δ₀/2  ⇔  ⟨t⟩^{1−α} = 1 − δ₀(α−1)/(2λ√ε).
        let rhs =
            1.0 - self.delta0 * (self.alpha - 1.0) / (2.0 * self.lambda * self.epsilon.sqrt());
        if rhs <= 0.0 {
            return None;
        }
        Some(rhs.powf(1.0 / (1.0 - self.alpha)) - 1.0)
    }

    /// Multiply each mode by exp(sign · δ(t) · [ξ]^{2/3}).
    pub fn apply_gevrey(&self, f: &SpectralField, sign: Sign) -> Result<SpectralField> {
        let delta = self.delta()?;
        let xi_max = f.grid().n_x() as i64 / 2;
        let exponent = delta * bracket_23(xi_max);
        if exponent > GEVREY_EXPONENT_LIMIT {
            return Err(Error::MultiplierOverflow {
                exponent,
                limit: GEVREY_EXPONENT_LIMIT,
            });
        }
        let s = match sign {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        };
        Ok(f.symbol_mul_real(|xi| (s * delta * bracket_23(xi)).exp()))
    }

    /// Exact per-step damping factor exp(−λ·(θ(t+dt)−θ(t))·[ξ]^{2/3}).
    pub fn damping_factor(&self, dt: f64, xi: i64) -> Result<f64> {
        let dtheta = self.theta_at(self.t + dt)? - self.theta_at(self.t)?;
        Ok((-self.lambda * dtheta * bracket_23(xi)).exp())
    }

    /// Apply the per-step damping factor to every mode.
    pub fn apply_damping(&self, f: &SpectralField, dt: f64) -> Result<SpectralField> {
        let dtheta = self.theta_at(self.t + dt)? - self.theta_at(self.t)?;
        let lambda = self.lambda;
        Ok(f.symbol_mul_real(|xi| (-lambda * dtheta * bracket_23(xi)).exp()))
    }
}

/// Count violations of [ξ]^{2/3} ≤ [ξ−η]^{2/3} + [η]^{2/3} over |ξ|,|η| ≤ limit.
pub fn check_convexity(limit: i64) -> u64 {
    let mut violations = 0;
    for xi in -limit..=limit {
        for eta in -limit..=limit {
            if bracket_23(xi) > bracket_23(xi - eta) + bracket_23(eta) {
                violations += 1;
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, Parity};
    use crate::quad::adaptive_simpson;
    use approx::assert_abs_diff_eq;

    fn clock(epsilon: f64, lambda: f64, delta0: f64, alpha: f64) -> GevreyClock {
        GevreyClock::new(epsilon, lambda, delta0, alpha, 0.05, 1.0).unwrap()
    }

    #[test]
    fn closed_form_matches_hand_values() {
        let c = clock(0.01, 10.0, 0.5, 2.0);
        assert_abs_diff_eq!(c.theta_at(1.0).unwrap(), 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(c.theta_inf(), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(c.theta_at(0.0).unwrap(), 0.0, epsilon = 1e-300);
    }

    #[test]
    fn closed_form_agrees_with_independent_quadrature() {
        let c = clock(0.01, 10.0, 0.5, 1.5);
        for &t in &[0.1, 1.0, 7.0, 33.0, 100.0] {
            let by_quad = adaptive_simpson(&|s| c.theta_dot(s), 0.0, t, 1e-13);
            assert!((c.theta_at(t).unwrap() - by_quad).abs() <= 1e-10, "t = {t}");
        }
    }

    #[test]
    fn alpha_at_most_one_is_rejected() {
        assert!(GevreyClock::new(0.01, 10.0, 0.5, 1.0, 0.05, 1.0).is_err());
        assert!(theta_closed_form(0.01, 0.9, 1.0).is_err());
    }

    #[test]
    fn radius_guard_trips_where_expected() {
        // ε = 1, λ = 10, α = 2: λθ(t) = 10(1 − 1/⟨t⟩) crosses δ₀/2 = 0.25 fast.
        let c = clock(1.0, 10.0, 0.5, 2.0);
        assert!(c.at_time(0.01).unwrap().delta().is_ok());
        assert!(c.at_time(1.0).unwrap().delta().is_err());
        let deadline = c.radius_deadline().unwrap();
        assert!(c.at_time(deadline * 0.99).unwrap().delta().is_ok());
        assert!(c.at_time(deadline * 1.01).unwrap().delta().is_err());
        // Saturating budget never trips.
        let safe = clock(1e-8, 20.0, 0.5, 1.2);
        assert!(safe.saturation_ok());
        assert!(safe.radius_deadline().is_none());
        assert!(safe.at_time(1e9).unwrap().delta().is_ok());
    }

    #[test]
    fn multiplier_amplifies_single_mode() {
        // δ(0) = 0.1 on e^{ix}: factor e^{0.1·2^{1/3}}.
        let g = Grid::new(16, 16, 4.0).unwrap();
        let c = clock(0.01, 10.0, 0.1, 2.0);
        let f = SpectralField::from_fn(&g, Parity::Generic, |x, _| x.cos()).unwrap();
        let out = c.apply_gevrey(&f, Sign::Plus).unwrap();
        let expected = (0.1f64 * 2.0f64.cbrt()).exp();
        assert_abs_diff_eq!(expected, 1.134_273_2, epsilon = 1e-6);
        for j in 0..g.n_nodes() {
            assert_abs_diff_eq!(out.coeff(1, j).re, 0.5 * expected, epsilon = 1e-13);
        }
        // Minus sign inverts it.
        let back = c.apply_gevrey(&out, Sign::Minus).unwrap();
        assert!(back.rel_l2_diff(&f) < 1e-13);
    }

    #[test]
    fn damping_factor_matches_hand_value() {
        let c = clock(0.01, 10.0, 0.5, 2.0);
        let f = c.damping_factor(0.1, 1).unwrap();
        let dtheta = 0.1 * (1.0 - 1.0 / 1.1);
        assert_abs_diff_eq!(f, (-10.0 * dtheta * 2.0f64.cbrt()).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(f.ln(), -0.11454, epsilon = 5e-6);
        assert_abs_diff_eq!(f, 0.891_777_8, epsilon = 1e-6);
    }

    #[test]
    fn overflow_guard_fires() {
        let g = Grid::new(16, 16, 4.0).unwrap();
        let c = clock(0.01, 10.0, 130.0, 2.0);
        let f = SpectralField::from_fn(&g, Parity::Generic, |x, _| x.cos()).unwrap();
        // δ(0)·(1 + 8²)^{1/3} = 130·4.02 > 500.
        assert!(matches!(
            c.apply_gevrey(&f, Sign::Plus),
            Err(crate::error::Error::MultiplierOverflow { .. })
        ));
    }

    #[test]
    fn convexity_sweep_is_clean() {
        assert_eq!(check_convexity(64), 0);
        // Hand-checked instance ξ = 3, η = 1.
        assert_abs_diff_eq!(bracket_23(3), 10f64.cbrt(), epsilon = 1e-15);
        assert!(bracket_23(3) <= bracket_23(2) + bracket_23(1));
        assert_abs_diff_eq!(10f64.cbrt(), 2.15443, epsilon = 1e-5);
        assert_abs_diff_eq!(5f64.cbrt() + 2f64.cbrt(), 2.96990, epsilon = 1e-5);
    }

    #[test]
    fn q_symbol_values() {
        assert_eq!(q_symbol(0), 0.0);
        assert_abs_diff_eq!(q_symbol(1), 2f64.powf(-2.0 / 3.0), epsilon = 1e-15);
        assert_abs_diff_eq!(q_symbol(-1), -2f64.powf(-2.0 / 3.0), epsilon = 1e-15);
    }
}
