//! Gaussian-weighted anisotropic norms.
//!
//! The weight is exp(2γΨ) with Ψ(t,y) = y²/(8⟨t⟩), ⟨t⟩ = 1 + t, and the
//! horizontal regularity enters through the symbol (1+ξ²)^s on Fourier
//! modes. Squared norms use the fixed Plancherel convention
//!
//! ```text
//! ‖f‖² = 2π Σ_ξ (1+ξ²)^s Σ_j w_j e^{2γΨ(t,y_j)} |f̂(ξ,y_j)|²,
//! ```
//!
//! with trapezoid weights w_j in y and the ξ-sum over the retained
//! (dealiased) band. Norms with vertical derivatives sum the square roots
//! over derivative orders l ≤ k, not the squares.
//!
//! Every contribution is assembled as exp(2γΨ + s·ln(1+ξ²) + ln|c|²) with
//! zero amplitudes skipped first. The skip is what keeps the weight honest:
//! |c|² underflows to exact zero for |c| below ~1e-154, so roundoff tails
//! sitting far outside the true support never meet the large exponents.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::SpectralField;

/// Parameters of one weighted norm evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSpec {
    /// Horizontal regularity exponent; may be fractional.
    pub s: f64,
    /// Number of vertical derivatives included (0–4).
    pub k: usize,
    /// Factor γ ∈ [0,1] multiplying Ψ in the weight.
    pub weight_scale: f64,
    /// Evaluation time.
    pub t: f64,
}

impl NormSpec {
    pub fn new(s: f64, k: usize, weight_scale: f64, t: f64) -> Result<Self> {
        if !(0.0..=8.0).contains(&s) || !s.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "norm regularity s = {s} outside [0, 8]"
            )));
        }
        if k > 4 {
            return Err(Error::InvalidParameter(format!(
                "vertical derivative count k = {k} exceeds 4"
            )));
        }
        if !(0.0..=1.0).contains(&weight_scale) {
            return Err(Error::InvalidParameter(format!(
                "weight scale {weight_scale} outside [0, 1]"
            )));
        }
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidParameter(format!("evaluation time {t} < 0")));
        }
        Ok(NormSpec {
            s,
            k,
            weight_scale,
            t,
        })
    }
}

/// Ψ(t,y) = y²/(8⟨t⟩).
pub fn psi_weight(t: f64, y: f64) -> f64 {
    y * y / (8.0 * (1.0 + t))
}

/// Squared weighted L² norm 2π Σ_ξ (1+ξ²)^s Σ_j w_j e^{2γΨ} |f̂|².
///
/// This is the primitive under every norm here; k = 0 only.
pub fn weighted_l2_sq(f: &SpectralField, s: f64, gamma: f64, t: f64) -> f64 {
    let g = f.grid();
    let cutoff = g.retained_cutoff();
    let mut total = 0.0;
    for j in 0..g.n_nodes() {
        let two_psi = 2.0 * gamma * psi_weight(t, g.y(j));
        let mut row = 0.0;
        for m in 0..g.n_x() {
            let xi = g.freq(m);
            if xi.abs() > cutoff {
                continue;
            }
            let a2 = f.coeffs()[[j, m]].norm_sqr();
            if a2 > 0.0 {
                let xi = xi as f64;
                row += (s * (1.0 + xi * xi).ln() + two_psi + a2.ln()).exp();
            }
        }
        total += g.trap_weight(j) * row;
    }
    2.0 * PI * total
}

/// Weighted norm Σ_{l≤k} ( 2π Σ_ξ (1+ξ²)^s Σ_j w_j e^{2γΨ} |∂_y^l f̂|² )^{1/2}.
pub fn weighted_norm(f: &SpectralField, spec: &NormSpec) -> Result<f64> {
    let mut sum = weighted_l2_sq(f, spec.s, spec.weight_scale, spec.t).sqrt();
    for l in 1..=spec.k {
        let dl = f.d_y(l)?;
        sum += weighted_l2_sq(&dl, spec.s, spec.weight_scale, spec.t).sqrt();
    }
    if sum.is_finite() {
        Ok(sum)
    } else {
        Err(Error::NonFinite(format!(
            "weighted norm (s = {}, k = {}, gamma = {}, t = {})",
            spec.s, spec.k, spec.weight_scale, spec.t
        )))
    }
}

/// H^s norm of the single slice y = y_j: ( 2π Σ_ξ (1+ξ²)^s |f̂(ξ,y_j)|² )^{1/2}.
pub fn slice_h_norm(f: &SpectralField, s: f64, j: usize) -> f64 {
    let g = f.grid();
    let cutoff = g.retained_cutoff();
    let mut row = 0.0;
    for m in 0..g.n_x() {
        let xi = g.freq(m);
        if xi.abs() > cutoff {
            continue;
        }
        let a2 = f.coeffs()[[j, m]].norm_sqr();
        if a2 > 0.0 {
            let xi = xi as f64;
            row += (s * (1.0 + xi * xi).ln() + a2.ln()).exp();
        }
    }
    (2.0 * PI * row).sqrt()
}

/// sup over y-nodes of the slice H^s norm of e^{γΨ} f.
///
/// For a field that does not decay in y this sup sits at the top node
/// whenever γ > 0 — the decay hypothesis of the estimates it feeds is not
/// checked here.
pub fn weighted_sup_norm(f: &SpectralField, s: f64, gamma: f64, t: f64) -> f64 {
    let g = f.grid();
    let cutoff = g.retained_cutoff();
    let mut best = 0.0f64;
    for j in 0..g.n_nodes() {
        let two_psi = 2.0 * gamma * psi_weight(t, g.y(j));
        let mut row = 0.0;
        for m in 0..g.n_x() {
            let xi = g.freq(m);
            if xi.abs() > cutoff {
                continue;
            }
            let a2 = f.coeffs()[[j, m]].norm_sqr();
            if a2 > 0.0 {
                let xi = xi as f64;
                row += (s * (1.0 + xi * xi).ln() + two_psi + a2.ln()).exp();
            }
        }
        best = best.max(2.0 * PI * row);
    }
    best.sqrt()
}

/// Weighted inner product Re 2π Σ_ξ (1+ξ²)^σ Σ_j w_j e^{2γΨ} f̂ conj(ĝ).
///
/// The real part is taken termwise; it is the bilinear form behind the
/// pairing probes, symmetric in (f,g) for conjugate-symmetric data.
pub fn weighted_inner(f: &SpectralField, g: &SpectralField, sigma: f64, gamma: f64, t: f64) -> f64 {
    f.grid().same_as(g.grid());
    let gr = f.grid();
    let cutoff = gr.retained_cutoff();
    let mut total = 0.0;
    for j in 0..gr.n_nodes() {
        let weight = gr.trap_weight(j) * (2.0 * gamma * psi_weight(t, gr.y(j))).exp();
        let mut row = 0.0;
        for m in 0..gr.n_x() {
            let xi = gr.freq(m);
            if xi.abs() > cutoff {
                continue;
            }
            let prod = f.coeffs()[[j, m]] * g.coeffs()[[j, m]].conj();
            if prod.norm_sqr() > 0.0 {
                let xi = xi as f64;
                row += (1.0 + xi * xi).powf(sigma) * prod.re;
            }
        }
        total += weight * row;
    }
    2.0 * PI * total
}

/// Both sides of the tail estimate ‖∫_y^∞ f dz‖_{L_{v,Ψ}^∞(H^s)} ≲ ⟨t⟩^{1/4} ‖f‖.
///
/// Returns (lhs, rhs) with no constant applied; callers compare the ratio.
pub fn tail_sup_bound_check(f: &SpectralField, s: f64, t: f64) -> (f64, f64) {
    let tail = f.integrate_up();
    let lhs = weighted_sup_norm(&tail, s, 1.0, t);
    let rhs = (1.0 + t).powf(0.25) * weighted_l2_sq(f, s, 1.0, t).sqrt();
    (lhs, rhs)
}

/// Both sides of ∫|∂_y u|² e^{2Ψ} ≥ (1/(2⟨t⟩)) ∫|u|² e^{2Ψ}.
///
/// Requires u to decay at the top of the domain; returns (lhs, rhs).
pub fn poincare_first(u: &SpectralField, t: f64) -> Result<(f64, f64)> {
    let du = u.d_y(1)?;
    let lhs = weighted_l2_sq(&du, 0.0, 1.0, t);
    let rhs = weighted_l2_sq(u, 0.0, 1.0, t) / (2.0 * (1.0 + t));
    Ok((lhs, rhs))
}

/// Both sides of the sharpened form, s > 0:
/// ∫|∂_y u|² e^{2Ψ} ≥ (s/(2⟨t⟩)) ∫|u|² e^{2Ψ} + (s(1−s)/4) ∫|y u/⟨t⟩|² e^{2Ψ}.
pub fn poincare_second(u: &SpectralField, s: f64, t: f64) -> Result<(f64, f64)> {
    if s <= 0.0 || !s.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sharpened lower bound needs s > 0, got {s}"
        )));
    }
    let du = u.d_y(1)?;
    let bt = 1.0 + t;
    let lhs = weighted_l2_sq(&du, 0.0, 1.0, t);
    let rhs = s / (2.0 * bt) * weighted_l2_sq(u, 0.0, 1.0, t)
        + s * (1.0 - s) / 4.0 * weighted_l2_sq(&u.mul_y(), 0.0, 1.0, t) / (bt * bt);
    Ok((lhs, rhs))
}
