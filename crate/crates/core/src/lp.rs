//! Dyadic frequency ladder, paraproducts, and their commutators.
//!
//! The ladder is the classical smooth dyadic partition adapted to a finite
//! mode set. A C^∞ bump exp(−1/(1−u²)) is mapped onto 3/4 ≤ r ≤ 8/3 and
//! rescaled dyadically; on each discrete frequency the stack of bump values is
//! renormalized so that
//!
//!   χ(ξ) + Σ_{k≥0} φ_k(ξ) = 1   exactly,
//!
//! with supp φ_k ⊂ {3/4 < 2^{−k}|ξ| < 8/3} and χ supported at ξ = 0. Low
//! passes are cumulative: S_k = Δ_{−1} + Σ_{j≤k−1} Δ_j for k ≥ 0 and S_k = 0
//! for k < 0, which makes the telescoping identities exact on the grid.
//!
//! The paraproduct splitting
//!
//!   f g = T_f g + T_g f + R(f, g),
//!   T_f g = Σ_k (S_{k−1} f)(Δ_k g),
//!   R(f, g) = Σ_{|k−k'|≤1} (Δ_k f)(Δ_{k'} g),
//!
//! is then an exact rearrangement of the dealiased product: every block pair
//! lands in exactly one of the three sums.
//!
//! Adjoints are taken slice-wise in the horizontal L² pairing. Inputs are
//! dealiased first, so ⟨T_a f, g⟩ = ⟨f, T_a* g⟩ holds to rounding for fields
//! supported on the retained band. Dense-matrix versions of the operators are
//! provided for cross-checks at small mode counts.

use ndarray::Array2;

use crate::clock::{q_symbol, GevreyClock, Sign};
use crate::error::Result;
use crate::grid::{Grid, Parity, SpectralField, C64};

/// Per-mode values of the dyadic cutoffs on one grid.
pub struct DyadicLadder {
    k_max: i32,
    /// χ values per FFT slot (1 at ξ = 0, else 0 after renormalization).
    chi: Vec<f64>,
    /// φ_k values per FFT slot, k = 0..=k_max.
    phi: Vec<Vec<f64>>,
    /// Cumulative low-pass masks: low[k] = χ + Σ_{j<k} φ_j, k = 0..=k_max+1.
    low: Vec<Vec<f64>>,
}

fn bump(r: f64) -> f64 {
    const LO: f64 = 0.75;
    const HI: f64 = 8.0 / 3.0;
    let c = 0.5 * (LO + HI);
    let hw = 0.5 * (HI - LO);
    let u = (r - c) / hw;
    if u.abs() < 1.0 {
        (-1.0 / (1.0 - u * u)).exp()
    } else {
        0.0
    }
}

impl DyadicLadder {
    pub(crate) fn build(grid: &Grid) -> DyadicLadder {
        let nx = grid.n_x();
        let half = nx as f64 / 2.0;
        // Highest scale with any active mode: 2^{−k}·(n_x/2) > 3/4.
        let mut k_max = 0i32;
        while half / 2f64.powi(k_max + 1) > 0.75 {
            k_max += 1;
        }
        let n_scales = (k_max + 1) as usize;
        let mut chi = vec![0.0; nx];
        let mut phi = vec![vec![0.0; nx]; n_scales];
        for m in 0..nx {
            let r = grid.freq(m).abs() as f64;
            if r == 0.0 {
                chi[m] = 1.0;
                continue;
            }
            let raw: Vec<f64> = (0..n_scales)
                .map(|k| bump(r / 2f64.powi(k as i32)))
                .collect();
            let total: f64 = raw.iter().sum();
            assert!(total > 0.0, "dyadic cover misses frequency {r}");
            for (k, v) in raw.iter().enumerate() {
                phi[k][m] = v / total;
            }
        }
        let mut low = Vec::with_capacity(n_scales + 1);
        let mut acc = chi.clone();
        low.push(acc.clone());
        for k in 0..n_scales {
            for m in 0..nx {
                acc[m] += phi[k][m];
            }
            low.push(acc.clone());
        }
        DyadicLadder {
            k_max,
            chi,
            phi,
            low,
        }
    }

    pub fn k_max(&self) -> i32 {
        self.k_max
    }

    /// Mask of the dyadic block Δ_k at FFT slot m.
    pub fn block_mask(&self, k: i32, m: usize) -> f64 {
        if k == -1 {
            self.chi[m]
        } else if (0..=self.k_max).contains(&k) {
            self.phi[k as usize][m]
        } else {
            0.0
        }
    }

    /// Mask of the low pass S_k at FFT slot m (S_k = 0 for k < 0).
    pub fn low_mask(&self, k: i32, m: usize) -> f64 {
        if k < 0 {
            0.0
        } else {
            let idx = (k.min(self.k_max + 1)) as usize;
            self.low[idx][m]
        }
    }
}

fn apply_mask(f: &SpectralField, mask: impl Fn(usize) -> f64) -> SpectralField {
    let grid = f.grid().clone();
    let mut out = f.clone();
    for m in 0..grid.n_x() {
        let v = mask(m);
        for j in 0..grid.n_nodes() {
            out.coeffs_mut()[[j, m]] *= v;
        }
    }
    out
}

/// Dyadic block Δ_k f; zero for k ≤ −2, the low block χ(D_x) f for k = −1.
pub fn block(f: &SpectralField, k: i32) -> SpectralField {
    if k <= -2 {
        return SpectralField::zero(f.grid(), Parity::Dirichlet0);
    }
    let ladder = f.grid().ladder();
    apply_mask(f, |m| ladder.block_mask(k, m))
}

/// Low pass S_k f = Δ_{−1} f + Σ_{0≤j≤k−1} Δ_j f (zero for k < 0).
pub fn low_pass(f: &SpectralField, k: i32) -> SpectralField {
    if k < 0 {
        return SpectralField::zero(f.grid(), Parity::Dirichlet0);
    }
    let ladder = f.grid().ladder();
    apply_mask(f, |m| ladder.low_mask(k, m))
}

/// Paraproduct T_a f = Σ_k (S_{k−1} a)(Δ_k f), dealiased per block product.
pub fn paraproduct(a: &SpectralField, f: &SpectralField) -> SpectralField {
    let ladder = a.grid().ladder();
    let mut acc = SpectralField::zero(a.grid(), Parity::Dirichlet0);
    for k in 1..=ladder.k_max() {
        let term = low_pass(a, k - 1).product(&block(f, k));
        acc = &acc + &term;
    }
    acc
}

/// Bony remainder R(f, g) = Σ_{|k−k'|≤1} (Δ_k f)(Δ_{k'} g).
pub fn remainder(f: &SpectralField, g: &SpectralField) -> SpectralField {
    let ladder = f.grid().ladder();
    let mut acc = SpectralField::zero(f.grid(), Parity::Dirichlet0);
    for k in -1..=ladder.k_max() {
        let tri = &(&block(g, k - 1) + &block(g, k)) + &block(g, k + 1);
        acc = &acc + &block(f, k).product(&tri);
    }
    acc
}

/// Slice-wise L²ₕ adjoint of T_a on the retained band:
/// T_a* g = Σ_k Δ_k( conj(S_{k−1} a) · g ), with g dealiased first.
///
/// ⟨T_a f, g⟩ = ⟨f, T_a* g⟩ holds to rounding when f is band-limited.
pub fn paraproduct_adjoint(a: &SpectralField, g: &SpectralField) -> SpectralField {
    let ladder = a.grid().ladder();
    let g = g.dealiased();
    let mut acc = SpectralField::zero(a.grid(), Parity::Dirichlet0);
    for k in 1..=ladder.k_max() {
        let mult = low_pass(a, k - 1).conj_physical().product(&g);
        acc = &acc + &block(&mult, k);
    }
    acc
}

/// Commutator [[D_x]^s; T_a] f = [D_x]^s (T_a f) − T_a ([D_x]^s f).
pub fn commutator_ds_para(a: &SpectralField, f: &SpectralField, s: f64) -> SpectralField {
    &paraproduct(a, f).bracket_pow(s) - &paraproduct(a, &f.bracket_pow(s))
}

/// Symmetrized transport pairing
/// ([D_x]^{s1} T_a ∂_x f, [D_x]^{s2} g) + ([D_x]^{s2} T_a ∂_x g, [D_x]^{s1} f).
pub fn lorentz_pairing(
    a: &SpectralField,
    f: &SpectralField,
    g: &SpectralField,
    s1: f64,
    s2: f64,
) -> f64 {
    let t1 = paraproduct(a, &f.d_x())
        .bracket_pow(s1)
        .inner_l2(&g.bracket_pow(s2));
    let t2 = paraproduct(a, &g.d_x())
        .bracket_pow(s2)
        .inner_l2(&f.bracket_pow(s1));
    t1 + t2
}

/// The four-commutator expansion of [`lorentz_pairing`]:
///
///   ([[D_x]^{s1}; T_a] ∂_x f, [D_x]^{s2} g)
/// + ((T_a − T_a*) [D_x]^{s1} ∂_x f, [D_x]^{s2} g)
/// + ([[D_x]^{s2}; T_a] ∂_x g, [D_x]^{s1} f)
/// + ([T_a; ∂_x] [D_x]^{s2} g, [D_x]^{s1} f)
///
/// For band-limited inputs the four terms sum to the pairing exactly.
pub fn lorentz_identity_terms(
    a: &SpectralField,
    f: &SpectralField,
    g: &SpectralField,
    s1: f64,
    s2: f64,
) -> [f64; 4] {
    let gs2 = g.bracket_pow(s2);
    let fs1 = f.bracket_pow(s1);
    let t1 = commutator_ds_para(a, &f.d_x(), s1).inner_l2(&gs2);
    let hi_f = f.d_x().bracket_pow(s1);
    let t2 = (&paraproduct(a, &hi_f) - &paraproduct_adjoint(a, &hi_f)).inner_l2(&gs2);
    let t3 = commutator_ds_para(a, &g.d_x(), s2).inner_l2(&fs1);
    let t4 = (&paraproduct(a, &gs2.d_x()) - &paraproduct(a, &gs2).d_x()).inner_l2(&fs1);
    [t1, t2, t3, t4]
}

/// Commutator of the radius multiplier with a paraproduct transport term.
///
/// Order 0 returns (T_a ∂_x f)_Φ − T_a ∂_x f_Φ. Order 1 additionally subtracts
/// the leading symbol correction (2/3) δ(t) T_{D_x a} Q(D_x) ∂_x f_Φ.
pub fn multiplier_commutator(
    a: &SpectralField,
    f: &SpectralField,
    clock: &GevreyClock,
    order: u8,
) -> Result<SpectralField> {
    let f_phi = clock.apply_gevrey(f, Sign::Plus)?;
    let c0 =
        &clock.apply_gevrey(&paraproduct(a, &f.d_x()), Sign::Plus)? - &paraproduct(a, &f_phi.d_x());
    match order {
        0 => Ok(c0),
        1 => {
            let delta = clock.delta()?;
            let corr = paraproduct(&a.dx_symbol(), &f_phi.d_x().symbol_mul_real(q_symbol))
                .scale(2.0 / 3.0 * delta);
            Ok(&c0 - &corr)
        }
        _ => Err(crate::error::Error::InvalidParameter(format!(
            "multiplier commutator order must be 0 or 1, got {order}"
        ))),
    }
}

/// Dense-matrix reference implementations for small mode counts.
pub mod dense {
    use super::*;

    /// Frequency-space matrix of T_a on one y-slice (row-masked to the
    /// retained band, matching the dealiased fast path).
    fn t_matrix(grid: &Grid, a: &SpectralField, j: usize) -> Array2<C64> {
        let ladder = grid.ladder();
        let nx = grid.n_x();
        let mut mat = Array2::zeros((nx, nx));
        for mo in 0..nx {
            let xi = grid.freq(mo);
            if !grid.is_retained(xi) {
                continue;
            }
            for mi in 0..nx {
                let eta = grid.freq(mi);
                let diff = grid.mode_index(xi - eta);
                let Some(md) = diff else { continue };
                let mut v = C64::default();
                for k in 1..=ladder.k_max() {
                    v +=
                        a.coeffs()[[j, md]] * ladder.low_mask(k - 1, md) * ladder.block_mask(k, mi);
                }
                mat[[mo, mi]] = v;
            }
        }
        mat
    }

    /// T_a f evaluated through the dense per-slice matrix.
    pub fn paraproduct(a: &SpectralField, f: &SpectralField) -> SpectralField {
        let grid = a.grid().clone();
        let mut out = SpectralField::zero(&grid, f.parity().product(a.parity()));
        for j in 0..grid.n_nodes() {
            let mat = t_matrix(&grid, a, j);
            for mo in 0..grid.n_x() {
                let mut acc = C64::default();
                for mi in 0..grid.n_x() {
                    acc += mat[[mo, mi]] * f.coeffs()[[j, mi]];
                }
                out.coeffs_mut()[[j, mo]] = acc;
            }
        }
        out
    }

    /// T_a* g through the conjugate-transposed dense matrix, with the same
    /// input/output band masks as the fast path.
    pub fn adjoint(a: &SpectralField, g: &SpectralField) -> SpectralField {
        let grid = a.grid().clone();
        let mut out = SpectralField::zero(&grid, Parity::Generic);
        for j in 0..grid.n_nodes() {
            let mat = t_matrix(&grid, a, j);
            for mo in 0..grid.n_x() {
                if !grid.is_retained(grid.freq(mo)) {
                    continue;
                }
                let mut acc = C64::default();
                for mi in 0..grid.n_x() {
                    if !grid.is_retained(grid.freq(mi)) {
                        continue;
                    }
                    acc += mat[[mi, mo]].conj() * g.coeffs()[[j, mi]];
                }
                out.coeffs_mut()[[j, mo]] = acc;
            }
        }
        out
    }
}
