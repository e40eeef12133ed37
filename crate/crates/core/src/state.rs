//! The evolved pair (u,b) and every field derived from it.
//!
//! Vertical velocity and vertical field are never evolved: they are slaved
//! to the tangential components through stream functions,
//!
//! ```text
//! ψ = −∫_y^∞ u dz,   v = −∂_x ψ,   ψ̃ = −∫_y^∞ b dz,   h = −∂_x ψ̃,
//! ```
//!
//! which makes both divergence identities exact in ξ and exact in y in the
//! trapezoid-panel sense. On top of these sit the forcing pair
//! (P,N) = (1/θ̇)·((b∂_x + h∂_y)b, (b∂_x + h∂_y)u) and the damped
//! combinations G = u + (y/2⟨t⟩)ψ and G̃ = b + (y/(2κ⟨t⟩))ψ̃ that carry the
//! decay analysis. All derived fields are cached lazily and dropped on any
//! mutation of (u, b, t).

use std::io::Write;
use std::sync::{Arc, OnceLock};

use crate::clock::{GevreyClock, Sign};
use crate::error::{Error, Result};
use crate::grid::{Grid, Parity, SpectralField, C64};
use crate::lp;
use crate::norms;

/// Which half of the coupled system a derived quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// (u, ψ, G) and the momentum equation.
    Velocity,
    /// (b, ψ̃, G̃) and the induction equation.
    Magnetic,
}

/// Selector for the eight block-wise control inequalities relating a field
/// and its stream function to the damped combination G.
///
/// Each probe returns (lhs, rhs) of an inequality of the shape
/// ‖e^{γΨ}Δ_k ·‖ ≲ ‖e^{Ψ}Δ_k ∂_y^l G_Φ‖ for the block k.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlProbe {
    /// ‖e^{γΨ}Δ_k u_Φ‖_{L²} vs ‖e^{Ψ}Δ_k G_Φ‖_{L²}.
    Field,
    /// First y-derivatives on both sides.
    DyField,
    /// Second y-derivatives on both sides.
    Dy2Field,
    /// Third y-derivatives on both sides; the by-analogy companion of
    /// `Dy2Field` (its estimate is stated by analogy, not derived), so
    /// reports single it out.
    Dy3Field,
    /// ‖e^{γΨ}Δ_k ∂_y²u_Φ‖_{L_v^∞(L_h²)} vs the same norm of ∂_y²G_Φ.
    Dy2FieldSup,
    /// ⟨t⟩^{−1}‖e^{γΨ}Δ_k∂_y(yψ)_Φ‖ + ⟨t⟩^{−1/2}‖e^{γΨ}Δ_k∂_y²(yψ)_Φ‖
    /// vs ‖e^{Ψ}Δ_k∂_yG_Φ‖.
    StreamPairL2,
    /// ⟨t⟩^{−3/4}‖e^{γΨ}Δ_k∂_y(yψ)_Φ‖_{L_v^∞} + ⟨t⟩^{−1/4}‖…∂_y²(yψ)_Φ‖_{L_v^∞}
    /// vs ‖e^{Ψ}Δ_k∂_yG_Φ‖.
    StreamPairSup,
    /// ⟨t⟩^{−1/2}‖e^{γΨ}Δ_k∂_y³(yψ)_Φ‖ vs ‖e^{Ψ}Δ_k∂_y²G_Φ‖.
    StreamThird,
}

impl ControlProbe {
    pub const ALL: [ControlProbe; 8] = [
        ControlProbe::Field,
        ControlProbe::DyField,
        ControlProbe::Dy2Field,
        ControlProbe::Dy3Field,
        ControlProbe::Dy2FieldSup,
        ControlProbe::StreamPairL2,
        ControlProbe::StreamPairSup,
        ControlProbe::StreamThird,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ControlProbe::Field => "field",
            ControlProbe::DyField => "dy-field",
            ControlProbe::Dy2Field => "dy2-field",
            ControlProbe::Dy3Field => "dy3-field",
            ControlProbe::Dy2FieldSup => "dy2-field-sup",
            ControlProbe::StreamPairL2 => "stream-pair-l2",
            ControlProbe::StreamPairSup => "stream-pair-sup",
            ControlProbe::StreamThird => "stream-third",
        }
    }

    /// True for the inequality whose estimate is carried by analogy with its
    /// second-derivative companion rather than derived independently.
    pub fn by_analogy(&self) -> bool {
        matches!(self, ControlProbe::Dy3Field)
    }
}

/// ψ = −∫_y^∞ f dz, the stream function of a tangential component.
pub fn stream_function(f: &SpectralField) -> SpectralField {
    f.integrate_up().scale(-1.0)
}

#[derive(Default)]
struct StateCache {
    psi: OnceLock<SpectralField>,
    psi_tilde: OnceLock<SpectralField>,
    v: OnceLock<SpectralField>,
    h: OnceLock<SpectralField>,
    good: OnceLock<(SpectralField, SpectralField)>,
    lorentz: OnceLock<(SpectralField, SpectralField)>,
}

/// Tangential state (u,b) at one instant, with lazily cached derived fields.
pub struct MhdState {
    u: SpectralField,
    b: SpectralField,
    clock: GevreyClock,
    cache: StateCache,
}

impl std::fmt::Debug for MhdState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MhdState")
            .field("t", &self.t())
            .field("grid", self.grid().as_ref())
            .finish_non_exhaustive()
    }
}

impl MhdState {
    /// Both fields must be dirichlet0-tagged and live on the same grid; the
    /// clock supplies t, κ, and the multiplier radius.
    pub fn new(u: SpectralField, b: SpectralField, clock: GevreyClock) -> Result<MhdState> {
        if u.parity() != Parity::Dirichlet0 || b.parity() != Parity::Dirichlet0 {
            return Err(Error::BoundaryViolation(
                "state fields must be dirichlet0-tagged".into(),
            ));
        }
        if !u.grid().same_as(b.grid()) {
            return Err(Error::GridMismatch(
                "u and b live on different grids".into(),
            ));
        }
        Ok(MhdState {
            u,
            b,
            clock,
            cache: StateCache::default(),
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.u.grid()
    }

    pub fn t(&self) -> f64 {
        self.clock.t()
    }

    pub fn clock(&self) -> &GevreyClock {
        &self.clock
    }

    pub fn u(&self) -> &SpectralField {
        &self.u
    }

    pub fn b(&self) -> &SpectralField {
        &self.b
    }

    /// Swap in new fields and a new clock, dropping every cached quantity.
    pub fn replace(
        &mut self,
        u: SpectralField,
        b: SpectralField,
        clock: GevreyClock,
    ) -> Result<()> {
        let fresh = MhdState::new(u, b, clock)?;
        *self = fresh;
        Ok(())
    }

    pub fn psi(&self) -> &SpectralField {
        self.cache.psi.get_or_init(|| stream_function(&self.u))
    }

    pub fn psi_tilde(&self) -> &SpectralField {
        self.cache
            .psi_tilde
            .get_or_init(|| stream_function(&self.b))
    }

    pub fn v(&self) -> &SpectralField {
        self.cache.v.get_or_init(|| self.psi().d_x().scale(-1.0))
    }

    pub fn h(&self) -> &SpectralField {
        self.cache
            .h
            .get_or_init(|| self.psi_tilde().d_x().scale(-1.0))
    }

    /// Wall values of (ψ, ψ̃), normalized by the field scale.
    ///
    /// Zero-mean columns make these vanish, which is exactly the condition
    /// for (v,h) to vanish at the wall; a defect flags initial data that
    /// violates the zero-mean hypothesis.
    pub fn compatibility_defect(&self) -> (f64, f64) {
        let defect = |psi: &SpectralField, f: &SpectralField| {
            let scale = 1.0 + f.max_abs() * self.grid().y_max();
            psi.wall_row_max() / scale
        };
        (
            defect(self.psi(), &self.u),
            defect(self.psi_tilde(), &self.b),
        )
    }

    /// Max panel defect of (∂_x u + ∂_y v, ∂_x b + ∂_y h), relative to the
    /// horizontal-derivative scale.
    ///
    /// ∂_y is taken in the trapezoid-panel sense that defines the stream
    /// functions, so a correct construction is exact to roundoff; anything
    /// larger than ~1e−13 means the slaving broke.
    pub fn divergence_residual(&self) -> (f64, f64) {
        (
            divergence_defect(&self.u, self.v()),
            divergence_defect(&self.b, self.h()),
        )
    }

    /// G = u + (y/2⟨t⟩)ψ and G̃ = b + (y/(2κ⟨t⟩))ψ̃.
    pub fn good(&self) -> (&SpectralField, &SpectralField) {
        let pair = self.cache.good.get_or_init(|| {
            let bt = 1.0 + self.t();
            let g = &self.u + &self.psi().mul_y().scale(0.5 / bt);
            let gt = &self.b
                + &self
                    .psi_tilde()
                    .mul_y()
                    .scale(0.5 / (self.clock.kappa() * bt));
            (g, gt)
        });
        (&pair.0, &pair.1)
    }

    /// P = (1/θ̇)(b∂_x + h∂_y)b and N = (1/θ̇)(b∂_x + h∂_y)u,
    /// with dealiased products.
    pub fn lorentz(&self) -> (&SpectralField, &SpectralField) {
        let pair = self.cache.lorentz.get_or_init(|| {
            let theta_dot = self.clock.theta_dot(self.t());
            let h = self.h();
            let advect = |f: &SpectralField| {
                let db = self.b.product(&f.d_x());
                let dh = h.product(&f.d_y(1).expect("grid guarantees n_y >= 4"));
                (&db + &dh).scale(1.0 / theta_dot)
            };
            (advect(&self.b), advect(&self.u))
        });
        (&pair.0, &pair.1)
    }

    /// Left-hand side of the damped-combination equation, with ∂_t G (or
    /// ∂_t G̃) supplied by the caller:
    ///
    /// ```text
    /// ∂_tG − ∂_y²G + ⟨t⟩^{−1}G + u∂_xG + v∂_yG − (1/2⟨t⟩)v∂_y(yψ)
    ///   + (y/⟨t⟩)∫_y^∞ ∂_yu ∂_xψ dz − θ̇P + (y/2⟨t⟩)∫_y^∞ θ̇P dz
    /// ```
    ///
    /// and for the magnetic channel the κ-weighted analogue with the mixed
    /// integrand ∂_yu ∂_xψ̃ + ∂_yb ∂_xψ and source N. For an exact solution
    /// the result vanishes; discretely it converges at the scheme order.
    pub fn good_function_residual(
        &self,
        channel: Channel,
        dt_g: &SpectralField,
    ) -> Result<SpectralField> {
        let bt = 1.0 + self.t();
        let theta_dot = self.clock.theta_dot(self.t());
        let (g, gt) = self.good();
        let (p, n) = self.lorentz();
        let v = self.v();
        let du = self.u.d_y(1)?;

        let (g, psi, source, diffusivity, integrand, half_weight) = match channel {
            Channel::Velocity => {
                let integrand = du.product(&self.psi().d_x());
                // (y/⟨t⟩)∫… = (y/2⟨t⟩)·2∫…: fold the 2 into the integrand.
                (g, self.psi(), p, 1.0, integrand.scale(2.0), 0.5 / bt)
            }
            Channel::Magnetic => {
                let kappa = self.clock.kappa();
                let mixed = &du.product(&self.psi_tilde().d_x())
                    + &self.b.d_y(1)?.product(&self.psi().d_x());
                (gt, self.psi_tilde(), n, kappa, mixed, 0.5 / (kappa * bt))
            }
        };

        let mut res = dt_g - &g.d_y(2)?.scale(diffusivity);
        res = &res + &g.scale(1.0 / bt);
        res = &res + &self.u.product(&g.d_x());
        res = &res + &v.product(&g.d_y(1)?);
        res = &res - &v.product(&psi.mul_y().d_y(1)?).scale(half_weight);
        res = &res + &integrand.integrate_up().mul_y().scale(half_weight);
        res = &res - &source.scale(theta_dot);
        res = &res + &source.integrate_up().mul_y().scale(theta_dot * half_weight);
        Ok(res)
    }

    /// Both sides of one block-wise control inequality at block k.
    ///
    /// lhs carries the weight e^{γΨ}, γ ∈ (0,1); rhs always carries the full
    /// weight e^{Ψ}. Callers compare lhs ≤ C·rhs and track C under
    /// refinement.
    pub fn control_probe(
        &self,
        k: i32,
        gamma: f64,
        which: ControlProbe,
        channel: Channel,
    ) -> Result<(f64, f64)> {
        if !(0.0 < gamma && gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "control probe needs γ in (0,1), got {gamma}"
            )));
        }
        let t = self.t();
        let bt = 1.0 + t;
        let (f, psi, g) = match channel {
            Channel::Velocity => (&self.u, self.psi(), self.good().0),
            Channel::Magnetic => (&self.b, self.psi_tilde(), self.good().1),
        };
        let f_phi = self.clock.apply_gevrey(f, Sign::Plus)?;
        let g_phi = self.clock.apply_gevrey(g, Sign::Plus)?;
        let y_psi_phi = self.clock.apply_gevrey(psi, Sign::Plus)?.mul_y();

        let l2 = |field: &SpectralField, scale: f64| -> f64 {
            norms::weighted_l2_sq(&lp::block(field, k), 0.0, scale, t).sqrt()
        };
        let sup = |field: &SpectralField, scale: f64| -> f64 {
            norms::weighted_sup_norm(&lp::block(field, k), 0.0, scale, t)
        };

        let (lhs, rhs) = match which {
            ControlProbe::Field => (l2(&f_phi, gamma), l2(&g_phi, 1.0)),
            ControlProbe::DyField => (l2(&f_phi.d_y(1)?, gamma), l2(&g_phi.d_y(1)?, 1.0)),
            ControlProbe::Dy2Field => (l2(&f_phi.d_y(2)?, gamma), l2(&g_phi.d_y(2)?, 1.0)),
            ControlProbe::Dy3Field => (l2(&f_phi.d_y(3)?, gamma), l2(&g_phi.d_y(3)?, 1.0)),
            ControlProbe::Dy2FieldSup => (sup(&f_phi.d_y(2)?, gamma), sup(&g_phi.d_y(2)?, 1.0)),
            ControlProbe::StreamPairL2 => (
                l2(&y_psi_phi.d_y(1)?, gamma) / bt + l2(&y_psi_phi.d_y(2)?, gamma) / bt.sqrt(),
                l2(&g_phi.d_y(1)?, 1.0),
            ),
            ControlProbe::StreamPairSup => (
                sup(&y_psi_phi.d_y(1)?, gamma) / bt.powf(0.75)
                    + sup(&y_psi_phi.d_y(2)?, gamma) / bt.powf(0.25),
                sup(&g_phi.d_y(1)?, 1.0),
            ),
            ControlProbe::StreamThird => (
                l2(&y_psi_phi.d_y(3)?, gamma) / bt.sqrt(),
                l2(&g_phi.d_y(2)?, 1.0),
            ),
        };
        Ok((lhs, rhs))
    }
}

/// Max trapezoid-panel defect of ∂_x f + ∂_y f_slave, relative to max|∂_x f|.
///
/// Panel form: (slave_{j+1} − slave_j)/Δy + iξ(f_j + f_{j+1})/2 per mode,
/// plus the top-panel closure against the implicit zero above the last node.
fn divergence_defect(f: &SpectralField, slave: &SpectralField) -> f64 {
    let g = f.grid();
    let h = g.dy();
    let n_y = g.n_y();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for m in 0..g.n_x() {
        let xi = C64::new(0.0, g.freq(m) as f64);
        for j in 0..=n_y {
            scale = scale.max((xi * f.coeffs()[[j, m]]).norm());
        }
        for j in 0..n_y {
            let dv = (slave.coeffs()[[j + 1, m]] - slave.coeffs()[[j, m]]) / h;
            let mid = xi * (f.coeffs()[[j, m]] + f.coeffs()[[j + 1, m]]) * 0.5;
            worst = worst.max((dv + mid).norm());
        }
        // The slaved component vanishes identically at the top node.
        worst = worst.max(slave.coeffs()[[n_y, m]].norm() / h);
    }
    if scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}

/// Recover the tangential component whose damped combination equals `g`:
/// solve f + (y/(2κ⟨t⟩))·(−∫_y^∞ f dz) = g by backward substitution over
/// trapezoid panels (κ = 1 for the velocity channel).
///
/// Errors when a panel denominator 1 − Δy·y/(4κ⟨t⟩) comes within 0.1 of
/// zero, i.e. the grid is too coarse for the marching to stay stable.
pub fn field_from_good_function(g: &SpectralField, kappa: f64, t: f64) -> Result<SpectralField> {
    let gr = g.grid().clone();
    let h = gr.dy();
    let bt = 1.0 + t;
    let n_y = gr.n_y();
    let mut coeffs = g.coeffs().clone();
    for m in 0..gr.n_x() {
        // ψ is zero at the top node by construction, so f there is g there.
        let mut psi_up = C64::default();
        let mut f_up = coeffs[[n_y, m]];
        for j in (0..n_y).rev() {
            let c = gr.y(j) / (2.0 * kappa * bt);
            let denom = 1.0 - 0.5 * h * c;
            if denom.abs() < 0.1 {
                return Err(Error::InvalidParameter(format!(
                    "inversion panel denominator {denom:.3e} at y = {:.3e}; refine the grid",
                    gr.y(j)
                )));
            }
            let psi = (psi_up - 0.5 * h * (coeffs[[j, m]] + f_up)) / denom;
            let f = coeffs[[j, m]] - psi * c;
            coeffs[[j, m]] = f;
            psi_up = psi;
            f_up = f;
        }
    }
    SpectralField::from_raw(gr, Parity::Generic, coeffs).with_parity(Parity::Dirichlet0)
}

/// Dump one field as `ξ y re im` rows after a header naming the field, the
/// time, and the grid. All values print with 17 significant digits, so a
/// read-back is bit-exact.
pub fn write_snapshot<W: Write>(
    out: &mut W,
    name: &str,
    t: f64,
    f: &SpectralField,
) -> std::io::Result<()> {
    let g = f.grid();
    writeln!(
        out,
        "# field={} t={:.16e} n_x={} n_y={} y_max={:.16e} dealias={:.16e}",
        name,
        t,
        g.n_x(),
        g.n_y(),
        g.y_max(),
        g.dealias_fraction()
    )?;
    for m in 0..g.n_x() {
        for j in 0..g.n_nodes() {
            let c = f.coeffs()[[j, m]];
            writeln!(
                out,
                "{} {:.16e} {:.16e} {:.16e}",
                g.freq(m),
                g.y(j),
                c.re,
                c.im
            )?;
        }
    }
    Ok(())
}
