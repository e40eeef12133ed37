//! Mixed Fourier / finite-difference discretization of a half-plane strip.
//!
//! Horizontal direction: 2π-periodic torus with integer frequencies
//! ξ ∈ {−n_x/2, …, n_x/2 − 1} in standard FFT layout. Vertical direction:
//! n_y + 1 equispaced nodes on [0, y_max]. A [`SpectralField`] stores one
//! complex amplitude per (node, mode) pair; physically real fields satisfy the
//! conjugate symmetry coeff(−ξ, j) = conj(coeff(ξ, j)).
//!
//! Pointwise products are evaluated on a zero-padded physical grid with twice
//! the mode count. Two fields supported on the native band have product
//! frequencies inside the padded band, so truncating back to the native band
//! reproduces the exact linear convolution there; the 2/3-rule mask is applied
//! afterwards. Vertical derivatives use second-order finite differences with
//! same-order one-sided stencils at the ends, and vertical integrals use the
//! composite trapezoid rule.

use std::sync::{Arc, OnceLock};

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::lp::DyadicLadder;

pub type C64 = Complex64;

/// Wall behaviour tag for a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Generic,
    /// The wall row (y = 0) is identically zero.
    Dirichlet0,
}

impl Parity {
    /// Tag of a linear combination.
    pub fn sum(self, other: Parity) -> Parity {
        if self == Parity::Dirichlet0 && other == Parity::Dirichlet0 {
            Parity::Dirichlet0
        } else {
            Parity::Generic
        }
    }

    /// Tag of a pointwise product: one vanishing factor kills the wall row.
    pub fn product(self, other: Parity) -> Parity {
        if self == Parity::Dirichlet0 || other == Parity::Dirichlet0 {
            Parity::Dirichlet0
        } else {
            Parity::Generic
        }
    }
}

/// Relative tolerance for declaring a wall row "zero" when tagging Dirichlet0.
const WALL_TOL: f64 = 1e-10;

struct FftPlans {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    fwd_pad: Arc<dyn Fft<f64>>,
    inv_pad: Arc<dyn Fft<f64>>,
}

/// Finite-difference weights for one vertical derivative order.
struct DyTable {
    order: usize,
    /// Centered interior stencil: half-width and weights (len 2*half+1).
    half: usize,
    interior: Vec<f64>,
    /// Rows for nodes where the centered stencil does not fit:
    /// (node index, start of stencil, weights).
    edges: Vec<(usize, usize, Vec<f64>)>,
}

pub struct Grid {
    n_x: usize,
    n_y: usize,
    y_max: f64,
    dealias_fraction: f64,
    /// Modes with |ξ| <= retained survive a dealiased product.
    retained: i64,
    plans: FftPlans,
    dy_tables: OnceLock<Vec<DyTable>>,
    ladder: OnceLock<DyadicLadder>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("n_x", &self.n_x)
            .field("n_y", &self.n_y)
            .field("y_max", &self.y_max)
            .field("dealias_fraction", &self.dealias_fraction)
            .finish()
    }
}

impl Grid {
    /// Grid with the default 2/3-rule dealiasing.
    pub fn new(n_x: usize, n_y: usize, y_max: f64) -> Result<Arc<Grid>> {
        Grid::with_dealias(n_x, n_y, y_max, 2.0 / 3.0)
    }

    pub fn with_dealias(
        n_x: usize,
        n_y: usize,
        y_max: f64,
        dealias_fraction: f64,
    ) -> Result<Arc<Grid>> {
        if n_x < 8 || n_x % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "n_x must be even and >= 8, got {n_x}"
            )));
        }
        if n_y < 16 {
            return Err(Error::InvalidParameter(format!(
                "n_y must be >= 16, got {n_y}"
            )));
        }
        if !(y_max > 0.0) || !y_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "y_max must be positive and finite, got {y_max}"
            )));
        }
        if !(dealias_fraction > 0.0 && dealias_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "dealias_fraction must lie in (0, 1], got {dealias_fraction}"
            )));
        }
        let retained = (dealias_fraction * (n_x as f64) / 2.0).floor() as i64;
        let mut planner = FftPlanner::<f64>::new();
        let plans = FftPlans {
            fwd: planner.plan_fft_forward(n_x),
            inv: planner.plan_fft_inverse(n_x),
            fwd_pad: planner.plan_fft_forward(2 * n_x),
            inv_pad: planner.plan_fft_inverse(2 * n_x),
        };
        Ok(Arc::new(Grid {
            n_x,
            n_y,
            y_max,
            dealias_fraction,
            retained,
            plans,
            dy_tables: OnceLock::new(),
            ladder: OnceLock::new(),
        }))
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    /// Number of vertical nodes, n_y + 1.
    pub fn n_nodes(&self) -> usize {
        self.n_y + 1
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn dy(&self) -> f64 {
        self.y_max / self.n_y as f64
    }

    pub fn dealias_fraction(&self) -> f64 {
        self.dealias_fraction
    }

    /// Largest |ξ| kept by the dealiasing mask.
    pub fn retained_cutoff(&self) -> i64 {
        self.retained
    }

    pub fn is_retained(&self, xi: i64) -> bool {
        xi.abs() <= self.retained
    }

    /// Frequency of FFT slot m.
    pub fn freq(&self, m: usize) -> i64 {
        if m < self.n_x / 2 {
            m as i64
        } else {
            m as i64 - self.n_x as i64
        }
    }

    /// FFT slot of frequency ξ, if representable on this grid.
    pub fn mode_index(&self, xi: i64) -> Option<usize> {
        let half = self.n_x as i64 / 2;
        if xi >= 0 && xi < half {
            Some(xi as usize)
        } else if xi >= -half && xi < 0 {
            Some((xi + self.n_x as i64) as usize)
        } else {
            None
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * i as f64 / self.n_x as f64
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_max * j as f64 / self.n_y as f64
    }

    /// Composite trapezoid weight of node j on [0, y_max].
    pub fn trap_weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.n_y {
            0.5 * self.dy()
        } else {
            self.dy()
        }
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        std::ptr::eq(self, other)
            || (self.n_x == other.n_x
                && self.n_y == other.n_y
                && self.y_max == other.y_max
                && self.dealias_fraction == other.dealias_fraction)
    }

    /// Dyadic frequency ladder shared by every field on this grid.
    pub fn ladder(&self) -> &DyadicLadder {
        self.ladder.get_or_init(|| DyadicLadder::build(self))
    }

    fn dy_table(&self, order: usize) -> &DyTable {
        let tables = self
            .dy_tables
            .get_or_init(|| (1..=4).map(|m| self.build_dy_table(m)).collect::<Vec<_>>());
        &tables[order - 1]
    }

    fn build_dy_table(&self, order: usize) -> DyTable {
        let n = self.n_y; // highest node index
        let h = self.dy();
        let half = if order <= 2 { 1 } else { 2 };
        let offsets: Vec<f64> = (-(half as i64)..=half as i64).map(|o| o as f64).collect();
        let interior: Vec<f64> = fd_weights(0.0, &offsets, order)
            .into_iter()
            .map(|w| w / h.powi(order as i32))
            .collect();
        // Same-order one-sided / skewed stencils where the centered one
        // does not fit; order + 3 nodes keeps at least second-order accuracy.
        let len = order + 3;
        let mut edges = Vec::new();
        for j in 0..=n {
            if j >= half && j + half <= n {
                continue;
            }
            let start = if j < half { 0 } else { n + 1 - len };
            let nodes: Vec<f64> = (0..len).map(|i| (start + i) as f64 - j as f64).collect();
            let w: Vec<f64> = fd_weights(0.0, &nodes, order)
                .into_iter()
                .map(|w| w / h.powi(order as i32))
                .collect();
            edges.push((j, start, w));
        }
        DyTable {
            order,
            half,
            interior,
            edges,
        }
    }
}

/// Fornberg weights for the m-th derivative at `z` from the given nodes.
fn fd_weights(z: f64, nodes: &[f64], m: usize) -> Vec<f64> {
    let n = nodes.len();
    assert!(n > m, "need more nodes than the derivative order");
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// A field on the strip, stored as Fourier amplitudes per vertical node.
///
/// Layout: `coeffs[[j, m]]` is the amplitude of frequency `grid.freq(m)` at
/// node y_j.
#[derive(Clone)]
pub struct SpectralField {
    grid: Arc<Grid>,
    parity: Parity,
    coeffs: Array2<C64>,
}

impl std::fmt::Debug for SpectralField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralField")
            .field("grid", &self.grid)
            .field("parity", &self.parity)
            .field("max_abs", &self.max_abs())
            .finish()
    }
}

impl SpectralField {
    pub fn zero(grid: &Arc<Grid>, parity: Parity) -> SpectralField {
        SpectralField {
            grid: grid.clone(),
            parity,
            coeffs: Array2::zeros((grid.n_nodes(), grid.n_x())),
        }
    }

    /// Transform physical samples (layout `[j, i]`, node-major) to amplitudes.
    pub fn from_physical(
        grid: &Arc<Grid>,
        samples: &Array2<f64>,
        parity: Parity,
    ) -> Result<SpectralField> {
        if samples.dim() != (grid.n_nodes(), grid.n_x()) {
            return Err(Error::GridMismatch(format!(
                "expected {} x {} samples, got {} x {}",
                grid.n_nodes(),
                grid.n_x(),
                samples.dim().0,
                samples.dim().1
            )));
        }
        let mut coeffs = Array2::zeros((grid.n_nodes(), grid.n_x()));
        let mut buf = vec![C64::default(); grid.n_x()];
        let scale = 1.0 / grid.n_x() as f64;
        for j in 0..grid.n_nodes() {
            for i in 0..grid.n_x() {
                buf[i] = C64::new(samples[[j, i]], 0.0);
            }
            grid.plans.fwd.process(&mut buf);
            for m in 0..grid.n_x() {
                coeffs[[j, m]] = buf[m] * scale;
            }
        }
        SpectralField {
            grid: grid.clone(),
            parity: Parity::Generic,
            coeffs,
        }
        .with_parity(parity)
    }

    /// Sample a closure f(x, y) on the physical grid and transform.
    pub fn from_fn(
        grid: &Arc<Grid>,
        parity: Parity,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<SpectralField> {
        let mut samples = Array2::zeros((grid.n_nodes(), grid.n_x()));
        for j in 0..grid.n_nodes() {
            let y = grid.y(j);
            for i in 0..grid.n_x() {
                samples[[j, i]] = f(grid.x(i), y);
            }
        }
        SpectralField::from_physical(grid, &samples, parity)
    }

    /// Build directly in spectral space from a closure c(ξ, y).
    pub fn from_mode_fn(
        grid: &Arc<Grid>,
        parity: Parity,
        f: impl Fn(i64, f64) -> C64,
    ) -> Result<SpectralField> {
        let mut coeffs = Array2::zeros((grid.n_nodes(), grid.n_x()));
        for j in 0..grid.n_nodes() {
            let y = grid.y(j);
            for m in 0..grid.n_x() {
                coeffs[[j, m]] = f(grid.freq(m), y);
            }
        }
        SpectralField {
            grid: grid.clone(),
            parity: Parity::Generic,
            coeffs,
        }
        .with_parity(parity)
    }

    /// Re-tag the field, validating (and then exactly zeroing) the wall row
    /// when claiming Dirichlet0.
    pub fn with_parity(mut self, parity: Parity) -> Result<SpectralField> {
        if parity == Parity::Dirichlet0 {
            let wall = self.wall_row_max();
            let scale = 1.0 + self.max_abs();
            if wall > WALL_TOL * scale {
                return Err(Error::BoundaryViolation(format!(
                    "wall row max {wall:.3e} exceeds {:.3e} for a dirichlet0 field",
                    WALL_TOL * scale
                )));
            }
            for m in 0..self.grid.n_x() {
                self.coeffs[[0, m]] = C64::default();
            }
        }
        self.parity = parity;
        Ok(self)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn coeffs(&self) -> &Array2<C64> {
        &self.coeffs
    }

    pub fn coeff(&self, xi: i64, j: usize) -> C64 {
        match self.grid.mode_index(xi) {
            Some(m) => self.coeffs[[j, m]],
            None => C64::default(),
        }
    }

    /// Largest amplitude magnitude.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0f64, |a, c| a.max(c.norm()))
    }

    pub fn wall_row_max(&self) -> f64 {
        (0..self.grid.n_x()).fold(0.0f64, |a, m| a.max(self.coeffs[[0, m]].norm()))
    }

    /// Max defect of the real-field conjugate symmetry coeff(−ξ) = conj(coeff(ξ)).
    pub fn conj_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        let half = self.grid.n_x() as i64 / 2;
        for j in 0..self.grid.n_nodes() {
            for xi in 1..half {
                let d = (self.coeff(-xi, j) - self.coeff(xi, j).conj()).norm();
                worst = worst.max(d);
            }
            worst = worst.max(self.coeff(-half, j).im.abs());
            worst = worst.max(self.coeff(0, j).im.abs());
        }
        worst
    }

    /// Inverse transform; keeps only the real part (exact for conjugate-symmetric fields).
    pub fn to_physical(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.grid.n_nodes(), self.grid.n_x()));
        let mut buf = vec![C64::default(); self.grid.n_x()];
        for j in 0..self.grid.n_nodes() {
            for m in 0..self.grid.n_x() {
                buf[m] = self.coeffs[[j, m]];
            }
            self.grid.plans.inv.process(&mut buf);
            for i in 0..self.grid.n_x() {
                out[[j, i]] = buf[i].re;
            }
        }
        out
    }

    pub fn to_physical_complex(&self) -> Array2<C64> {
        let mut out = Array2::zeros((self.grid.n_nodes(), self.grid.n_x()));
        let mut buf = vec![C64::default(); self.grid.n_x()];
        for j in 0..self.grid.n_nodes() {
            for m in 0..self.grid.n_x() {
                buf[m] = self.coeffs[[j, m]];
            }
            self.grid.plans.inv.process(&mut buf);
            for i in 0..self.grid.n_x() {
                out[[j, i]] = buf[i];
            }
        }
        out
    }

    /// Horizontal derivative: multiply mode ξ by iξ.
    pub fn d_x(&self) -> SpectralField {
        self.symbol_mul(|xi| C64::new(0.0, xi as f64))
    }

    /// |D_x| variant ξ·c (the symbol of D_x = ∂_x / i).
    pub fn dx_symbol(&self) -> SpectralField {
        self.symbol_mul_real(|xi| xi as f64)
    }

    /// Bracket power [D_x]^s with [ξ] = (1 + ξ²)^{1/2}.
    pub fn bracket_pow(&self, s: f64) -> SpectralField {
        self.symbol_mul_real(|xi| (1.0 + (xi * xi) as f64).powf(0.5 * s))
    }

    /// Apply a real Fourier multiplier g(ξ). Real even symbols preserve
    /// realness; the wall row stays zero either way.
    pub fn symbol_mul_real(&self, g: impl Fn(i64) -> f64) -> SpectralField {
        let mut out = self.clone();
        for m in 0..self.grid.n_x() {
            let f = g(self.grid.freq(m));
            for j in 0..self.grid.n_nodes() {
                out.coeffs[[j, m]] *= f;
            }
        }
        out
    }

    pub fn symbol_mul(&self, g: impl Fn(i64) -> C64) -> SpectralField {
        let mut out = self.clone();
        for m in 0..self.grid.n_x() {
            let f = g(self.grid.freq(m));
            for j in 0..self.grid.n_nodes() {
                out.coeffs[[j, m]] *= f;
            }
        }
        out
    }

    /// Vertical derivative of the given order (1..=4), second-order accurate.
    pub fn d_y(&self, order: usize) -> Result<SpectralField> {
        if order == 0 {
            return Ok(self.clone());
        }
        if !(1..=4).contains(&order) {
            return Err(Error::InvalidParameter(format!(
                "vertical derivative order must be 1..=4, got {order}"
            )));
        }
        if self.grid.n_y() < 2 * order + 2 {
            return Err(Error::InvalidParameter(format!(
                "n_y = {} too small for derivative order {order}",
                self.grid.n_y()
            )));
        }
        let table = self.grid.dy_table(order);
        debug_assert_eq!(table.order, order);
        let n = self.grid.n_y();
        let nx = self.grid.n_x();
        let mut out = Array2::zeros((n + 1, nx));
        for j in table.half..=(n - table.half) {
            for (o, w) in table.interior.iter().enumerate() {
                let src = j + o - table.half;
                for m in 0..nx {
                    out[[j, m]] += self.coeffs[[src, m]] * *w;
                }
            }
        }
        for (j, start, weights) in &table.edges {
            for (o, w) in weights.iter().enumerate() {
                for m in 0..nx {
                    out[[*j, m]] += self.coeffs[[start + o, m]] * *w;
                }
            }
        }
        Ok(SpectralField {
            grid: self.grid.clone(),
            parity: Parity::Generic,
            coeffs: out,
        })
    }

    /// Trapezoid integral from y_j to y_max per mode; the top row is zero.
    pub fn integrate_up(&self) -> SpectralField {
        let n = self.grid.n_y();
        let nx = self.grid.n_x();
        let h2 = 0.5 * self.grid.dy();
        let mut out = Array2::zeros((n + 1, nx));
        for j in (0..n).rev() {
            for m in 0..nx {
                let step = (self.coeffs[[j, m]] + self.coeffs[[j + 1, m]]) * h2;
                out[[j, m]] = out[[j + 1, m]] + step;
            }
        }
        SpectralField {
            grid: self.grid.clone(),
            parity: Parity::Generic,
            coeffs: out,
        }
    }

    /// Multiply by the vertical coordinate; the wall row becomes zero.
    pub fn mul_y(&self) -> SpectralField {
        let mut out = self.clone();
        for j in 0..self.grid.n_nodes() {
            let y = self.grid.y(j);
            for m in 0..self.grid.n_x() {
                out.coeffs[[j, m]] *= y;
            }
        }
        out.parity = Parity::Dirichlet0;
        out
    }

    /// Zero every mode outside the retained band.
    pub fn dealiased(&self) -> SpectralField {
        let mut out = self.clone();
        for m in 0..self.grid.n_x() {
            if !self.grid.is_retained(self.grid.freq(m)) {
                for j in 0..self.grid.n_nodes() {
                    out.coeffs[[j, m]] = C64::default();
                }
            }
        }
        out
    }

    /// Physical-space complex conjugate: ĉ(ξ) -> conj(ĉ(−ξ)).
    pub fn conj_physical(&self) -> SpectralField {
        let mut out = self.clone();
        let nx = self.grid.n_x();
        for j in 0..self.grid.n_nodes() {
            for m in 0..nx {
                let xi = self.grid.freq(m);
                let src = self.grid.mode_index(-xi);
                out.coeffs[[j, m]] = match src {
                    Some(ms) => self.coeffs[[j, ms]].conj(),
                    // −ξ falls off the grid only for ξ = −n_x/2.
                    None => C64::default(),
                };
            }
        }
        out
    }

    /// Dealiased pointwise product via a zero-padded physical grid.
    ///
    /// For band-limited inputs the retained modes equal the exact convolution
    /// restricted to the retained band.
    pub fn product(&self, other: &SpectralField) -> SpectralField {
        self.check_same_grid(other);
        let nx = self.grid.n_x();
        let np = 2 * nx;
        let nodes = self.grid.n_nodes();
        let mut a = vec![C64::default(); np];
        let mut b = vec![C64::default(); np];
        let mut coeffs = Array2::zeros((nodes, nx));
        let scale = 1.0 / np as f64;
        let pad_index = |xi: i64| -> usize {
            if xi >= 0 {
                xi as usize
            } else {
                (np as i64 + xi) as usize
            }
        };
        for j in 0..nodes {
            for v in a.iter_mut() {
                *v = C64::default();
            }
            for v in b.iter_mut() {
                *v = C64::default();
            }
            for m in 0..nx {
                let xi = self.grid.freq(m);
                a[pad_index(xi)] = self.coeffs[[j, m]];
                b[pad_index(xi)] = other.coeffs[[j, m]];
            }
            self.grid.plans.inv_pad.process(&mut a);
            self.grid.plans.inv_pad.process(&mut b);
            for i in 0..np {
                a[i] *= b[i];
            }
            self.grid.plans.fwd_pad.process(&mut a);
            for m in 0..nx {
                let xi = self.grid.freq(m);
                if self.grid.is_retained(xi) {
                    coeffs[[j, m]] = a[pad_index(xi)] * scale;
                }
            }
        }
        SpectralField {
            grid: self.grid.clone(),
            parity: self.parity.product(other.parity),
            coeffs,
        }
    }

    pub fn scale(&self, c: f64) -> SpectralField {
        let mut out = self.clone();
        out.coeffs.mapv_inplace(|v| v * c);
        out
    }

    /// Frobenius distance to another field relative to its own size.
    pub fn rel_l2_diff(&self, other: &SpectralField) -> f64 {
        self.check_same_grid(other);
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in self.coeffs.iter().zip(other.coeffs.iter()) {
            num += (*a - *b).norm_sqr();
            den += b.norm_sqr();
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    /// Real L² inner product over the strip: 2π Σ_j w_j Σ_ξ Re(f̂ conj(ĝ)).
    pub fn inner_l2(&self, other: &SpectralField) -> f64 {
        self.check_same_grid(other);
        let mut acc = 0.0;
        for j in 0..self.grid.n_nodes() {
            let w = self.grid.trap_weight(j);
            for m in 0..self.grid.n_x() {
                acc += w * (self.coeffs[[j, m]] * other.coeffs[[j, m]].conj()).re;
            }
        }
        2.0 * std::f64::consts::PI * acc
    }

    /// Plain (unweighted) L² norm over the strip, 2π per mode and trapezoid in y.
    pub fn l2_plus(&self) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.grid.n_nodes() {
            let w = self.grid.trap_weight(j);
            for m in 0..self.grid.n_x() {
                acc += w * self.coeffs[[j, m]].norm_sqr();
            }
        }
        (2.0 * std::f64::consts::PI * acc).sqrt()
    }

    fn check_same_grid(&self, other: &SpectralField) {
        assert!(
            self.grid.same_as(&other.grid),
            "fields live on different grids"
        );
    }

    pub(crate) fn from_raw(grid: Arc<Grid>, parity: Parity, coeffs: Array2<C64>) -> SpectralField {
        SpectralField {
            grid,
            parity,
            coeffs,
        }
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut Array2<C64> {
        &mut self.coeffs
    }
}

impl std::ops::Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        self.check_same_grid(rhs);
        SpectralField {
            grid: self.grid.clone(),
            parity: self.parity.sum(rhs.parity),
            coeffs: &self.coeffs + &rhs.coeffs,
        }
    }
}

impl std::ops::Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        self.check_same_grid(rhs);
        SpectralField {
            grid: self.grid.clone(),
            parity: self.parity.sum(rhs.parity),
            coeffs: &self.coeffs - &rhs.coeffs,
        }
    }
}

impl std::ops::Neg for &SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(nx: usize, ny: usize, ymax: f64) -> Arc<Grid> {
        Grid::new(nx, ny, ymax).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Grid::new(7, 32, 5.0).is_err());
        assert!(Grid::new(6, 32, 5.0).is_err());
        assert!(Grid::new(16, 8, 5.0).is_err());
        assert!(Grid::new(16, 32, -1.0).is_err());
        assert!(Grid::with_dealias(16, 32, 5.0, 0.0).is_err());
    }

    #[test]
    fn constant_field_is_pure_dc() {
        let g = grid(16, 16, 4.0);
        let f = SpectralField::from_fn(&g, Parity::Generic, |_, _| 1.0).unwrap();
        for j in 0..g.n_nodes() {
            assert_abs_diff_eq!(f.coeff(0, j).re, 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(f.coeff(0, j).im, 0.0, epsilon = 1e-14);
            for xi in 1..8 {
                assert!(f.coeff(xi, j).norm() < 1e-14);
                assert!(f.coeff(-xi, j).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn sine_profile_lands_on_expected_modes() {
        // sin(x) e^{-y} has amplitudes -i/2 and +i/2 at ξ = +1, -1.
        let g = grid(32, 24, 6.0);
        let f = SpectralField::from_fn(&g, Parity::Generic, |x, y| x.sin() * (-y).exp()).unwrap();
        for j in 0..g.n_nodes() {
            let e = (-g.y(j)).exp();
            let plus = f.coeff(1, j);
            let minus = f.coeff(-1, j);
            assert_abs_diff_eq!(plus.re, 0.0, epsilon = 1e-13);
            assert_abs_diff_eq!(plus.im, -0.5 * e, epsilon = 1e-13);
            assert_abs_diff_eq!(minus.re, 0.0, epsilon = 1e-13);
            assert_abs_diff_eq!(minus.im, 0.5 * e, epsilon = 1e-13);
        }
        assert!(f.conj_defect() < 1e-13);
    }

    #[test]
    fn transform_round_trip_is_tight() {
        let g = grid(32, 20, 5.0);
        let data = |x: f64, y: f64| {
            (x.sin() + 0.3 * (2.0 * x).cos() + 0.1 * (5.0 * x).sin()) * (1.0 + y) * (-y).exp()
        };
        let f = SpectralField::from_fn(&g, Parity::Generic, data).unwrap();
        let phys = f.to_physical();
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for j in 0..g.n_nodes() {
            for i in 0..g.n_x() {
                let exact = data(g.x(i), g.y(j));
                worst = worst.max((phys[[j, i]] - exact).abs());
                scale = scale.max(exact.abs());
            }
        }
        assert!(worst / scale < 1e-13, "round trip defect {}", worst / scale);
    }

    #[test]
    fn d_x_multiplies_by_i_xi() {
        let g = grid(16, 16, 3.0);
        let f = SpectralField::from_fn(&g, Parity::Generic, |x, _| (3.0 * x).sin()).unwrap();
        let dx = f.d_x();
        // d/dx sin(3x) = 3 cos(3x): amplitude 3/2 at ξ = ±3.
        for j in 0..g.n_nodes() {
            assert_abs_diff_eq!(dx.coeff(3, j).re, 1.5, epsilon = 1e-13);
            assert_abs_diff_eq!(dx.coeff(-3, j).re, 1.5, epsilon = 1e-13);
            assert_abs_diff_eq!(dx.coeff(3, j).im, 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn d_y_second_order_exact_on_quadratics() {
        let g = grid(8, 20, 2.0);
        let f = SpectralField::from_fn(&g, Parity::Generic, |_, y| 2.0 + 3.0 * y + 4.0 * y * y)
            .unwrap();
        let d1 = f.d_y(1).unwrap();
        let d2 = f.d_y(2).unwrap();
        for j in 0..g.n_nodes() {
            let y = g.y(j);
            assert_abs_diff_eq!(d1.coeff(0, j).re, 3.0 + 8.0 * y, epsilon = 1e-11);
            assert_abs_diff_eq!(d2.coeff(0, j).re, 8.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn d_y_converges_at_second_order() {
        // e^{-y}: max-node error of each derivative order halves by ~4x per refinement.
        for order in 1..=4usize {
            let mut errs = Vec::new();
            for ny in [40usize, 80, 160] {
                let g = grid(8, ny, 4.0);
                let f = SpectralField::from_fn(&g, Parity::Generic, |_, y| (-y).exp()).unwrap();
                let d = f.d_y(order).unwrap();
                let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
                let mut worst = 0.0f64;
                for j in 0..g.n_nodes() {
                    let exact = sign * (-g.y(j)).exp();
                    worst = worst.max((d.coeff(0, j).re - exact).abs());
                }
                errs.push(worst);
            }
            let r1 = errs[0] / errs[1];
            let r2 = errs[1] / errs[2];
            assert!(
                r1 > 3.0 && r2 > 3.0,
                "order {order}: ratios {r1:.2} {r2:.2} below second-order range"
            );
        }
    }

    #[test]
    fn integrate_up_matches_closed_form() {
        let g = grid(8, 400, 6.0);
        let f = SpectralField::from_fn(&g, Parity::Generic, |_, y| (-y).exp()).unwrap();
        let int = f.integrate_up();
        let h = g.dy();
        for j in 0..g.n_nodes() {
            let exact = (-g.y(j)).exp() - (-g.y_max()).exp();
            assert_abs_diff_eq!(int.coeff(0, j).re, exact, epsilon = h * h);
        }
        assert_eq!(int.coeff(0, g.n_y()), C64::default());
    }

    #[test]
    fn integrate_up_then_d_y_recovers_integrand() {
        let g = grid(8, 200, 5.0);
        let f = SpectralField::from_fn(&g, Parity::Generic, |_, y| (-y).exp() * (1.0 + y)).unwrap();
        let d = f.integrate_up().d_y(1).unwrap();
        let h = g.dy();
        for j in 1..g.n_y() {
            let exact = -(-g.y(j)).exp() * (1.0 + g.y(j));
            assert_abs_diff_eq!(d.coeff(0, j).re, exact, epsilon = 4.0 * h * h);
        }
    }

    #[test]
    fn product_of_sines_is_exact() {
        let g = grid(32, 16, 3.0);
        let f = SpectralField::from_fn(&g, Parity::Generic, |x, _| x.sin()).unwrap();
        let h = SpectralField::from_fn(&g, Parity::Generic, |x, _| x.cos()).unwrap();
        let p = f.product(&h);
        // sin x cos x = sin(2x)/2: amplitudes ∓i/4 at ξ = ±2.
        for j in 0..g.n_nodes() {
            assert_abs_diff_eq!(p.coeff(2, j).im, -0.25, epsilon = 1e-14);
            assert_abs_diff_eq!(p.coeff(-2, j).im, 0.25, epsilon = 1e-14);
            assert!(p.coeff(0, j).norm() < 1e-14);
            assert!(p.coeff(1, j).norm() < 1e-14);
        }
    }

    #[test]
    fn product_matches_dense_convolution() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let g = grid(32, 16, 3.0);
        let k = g.retained_cutoff();
        fn rand_field(g: &Arc<Grid>, k: i64, rng: &mut rand_chacha::ChaCha8Rng) -> SpectralField {
            let mut spec = vec![C64::default(); g.n_x()];
            for xi in 0..=k {
                let c = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                spec[g.mode_index(xi).unwrap()] = c;
                if xi > 0 {
                    spec[g.mode_index(-xi).unwrap()] = c.conj();
                }
            }
            spec[0].im = 0.0;
            let gg = g.clone();
            SpectralField::from_mode_fn(g, Parity::Generic, move |xi, _| {
                spec[gg.mode_index(xi).unwrap()]
            })
            .unwrap()
        }
        for _ in 0..5 {
            let f = rand_field(&g, k, &mut rng);
            let h = rand_field(&g, k, &mut rng);
            let p = f.product(&h);
            // Dense linear convolution restricted to the retained band.
            for xi in -k..=k {
                let mut acc = C64::default();
                for eta in -(g.n_x() as i64) / 2..(g.n_x() as i64) / 2 {
                    acc += f.coeff(xi - eta, 0) * h.coeff(eta, 0);
                }
                let got = p.coeff(xi, 0);
                assert!(
                    (got - acc).norm() < 1e-12,
                    "mode {xi}: dense {acc} vs fft {got}"
                );
            }
            // Outside the band the mask forces exact zeros.
            for xi in (k + 1)..(g.n_x() as i64 / 2) {
                assert_eq!(p.coeff(xi, 0), C64::default());
                assert_eq!(p.coeff(-xi, 0), C64::default());
            }
        }
    }

    #[test]
    fn dirichlet_tagging_zeroes_wall_and_rejects_violations() {
        let g = grid(16, 16, 4.0);
        let ok = SpectralField::from_fn(&g, Parity::Dirichlet0, |x, y| x.sin() * y * (-y).exp())
            .unwrap();
        assert_eq!(ok.wall_row_max(), 0.0);
        let bad = SpectralField::from_fn(&g, Parity::Dirichlet0, |x, y| x.sin() * (-y).exp());
        assert!(bad.is_err());
    }

    #[test]
    fn parity_propagates_through_arithmetic() {
        let g = grid(16, 16, 4.0);
        let d = SpectralField::from_fn(&g, Parity::Dirichlet0, |x, y| x.sin() * y * (-y).exp())
            .unwrap();
        let e = SpectralField::from_fn(&g, Parity::Generic, |x, y| x.cos() * (-y).exp()).unwrap();
        assert_eq!((&d + &d).parity(), Parity::Dirichlet0);
        assert_eq!((&d + &e).parity(), Parity::Generic);
        assert_eq!(d.product(&e).parity(), Parity::Dirichlet0);
        assert_eq!(e.product(&e).parity(), Parity::Generic);
        assert_eq!(d.mul_y().parity(), Parity::Dirichlet0);
        assert_eq!(e.mul_y().parity(), Parity::Dirichlet0);
        assert_eq!(d.d_y(1).unwrap().parity(), Parity::Generic);
    }

    #[test]
    fn conj_physical_matches_real_fields() {
        let g = grid(16, 16, 4.0);
        let f = SpectralField::from_fn(&g, Parity::Generic, |x, y| {
            (x.sin() + (3.0 * x).cos()) * (-y).exp()
        })
        .unwrap();
        assert!(f.conj_physical().rel_l2_diff(&f) < 1e-13);
    }
}
