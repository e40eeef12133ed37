//! Joint (Δt, Δy) refinement study.
//!
//! Three curves per run, each halving Δt and Δy together:
//!   * heat-oracle error — a mode-0 Dirichlet eigenfunction stepped against
//!     its exact continuum decay;
//!   * weighted-form residual — the evolution rewritten under the radius
//!     multiplier, with centered finite-difference tendencies from a short
//!     stepped run;
//!   * damped-combination residual — the same construction for the
//!     compensated fields.
//!
//! Residuals are measured on interior rows (two and up): the one-sided wall
//! stencils stack in both identities and degrade below the interior order on
//! the bottom rows, which would otherwise mask the formal rate.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use mhdbl_core::evolve::{reformulation_residual, AuxiliaryState, Stepper, StepperConfig};
use mhdbl_core::state::{Channel, MhdState};
use mhdbl_core::{Grid, Parity, SpectralField, C64};

use crate::config::{profile_fields, ExperimentConfig, Profile};

/// Physical time at which the stepped residuals are evaluated.
const EVAL_TIME: f64 = 0.2;
/// Level-0 discretization of the residual ladder.
const BASE_NY: usize = 32;
const BASE_DT: f64 = 0.02;
const STUDY_NX: usize = 16;
const STUDY_YMAX: f64 = 6.0;
const STUDY_AMPLITUDE: f64 = 0.15;
/// Level-0 discretization of the heat-oracle ladder (t_end = 0.4 fixed).
const HEAT_NY: usize = 32;
const HEAT_DT: f64 = 0.04;
const HEAT_STEPS: usize = 10;
const HEAT_NX: usize = 8;
const HEAT_YMAX: f64 = 4.0;

#[derive(Debug, Clone, Copy)]
pub struct LevelRow {
    pub level: usize,
    pub n_y: usize,
    pub dt: f64,
    pub heat_error: f64,
    pub reformulation_residual: f64,
    pub good_function_residual: f64,
}

#[derive(Debug)]
pub struct ConvergeOutcome {
    pub rows: Vec<LevelRow>,
    /// Fitted orders of (heat, weighted-form, damped-combination) curves.
    pub orders: [f64; 3],
    pub table_path: PathBuf,
    pub plot_paths: Vec<PathBuf>,
}

pub fn run_converge(config: &ExperimentConfig, levels: usize) -> Result<ConvergeOutcome> {
    if levels < 3 {
        bail!("refinement study needs at least 3 levels, got {levels}");
    }
    config.validate(true)?;

    let mut rows = Vec::with_capacity(levels);
    for level in 0..levels {
        let f = 1usize << level;
        let heat_error = heat_oracle_error(config, HEAT_NY * f, HEAT_DT / f as f64, HEAT_STEPS * f)?;
        let (reform, good) = stepped_residuals(config, BASE_NY * f, BASE_DT / f as f64)?;
        rows.push(LevelRow {
            level,
            n_y: BASE_NY * f,
            dt: BASE_DT / f as f64,
            heat_error,
            reformulation_residual: reform,
            good_function_residual: good,
        });
    }

    let pick = |get: fn(&LevelRow) -> f64| rows.iter().map(get).collect::<Vec<_>>();
    let orders = [
        fitted_order(&pick(|r| r.heat_error)),
        fitted_order(&pick(|r| r.reformulation_residual)),
        fitted_order(&pick(|r| r.good_function_residual)),
    ];

    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating {}", config.output_dir.display()))?;
    let table_path = config.output_dir.join("converge.txt");
    write_table(&table_path, &rows, &orders)?;
    let curves: [(&str, fn(&LevelRow) -> f64, fn(&LevelRow) -> f64); 3] = [
        ("heat_error", |r| HEAT_YMAX / (HEAT_NY * (1 << r.level)) as f64, |r| r.heat_error),
        ("reformulation_residual", |r| STUDY_YMAX / r.n_y as f64, |r| {
            r.reformulation_residual
        }),
        ("good_function_residual", |r| STUDY_YMAX / r.n_y as f64, |r| {
            r.good_function_residual
        }),
    ];
    let mut plot_paths = Vec::new();
    for (name, dy_of, val_of) in curves {
        let path = config.output_dir.join(format!("{name}.dat"));
        let mut out = BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        writeln!(out, "# {name}: grid spacing vs defect, dt halved alongside")?;
        for row in &rows {
            writeln!(out, "{:.16e}\t{:.16e}", dy_of(row), val_of(row))?;
        }
        out.flush()?;
        plot_paths.push(path);
    }

    Ok(ConvergeOutcome {
        rows,
        orders,
        table_path,
        plot_paths,
    })
}

/// Max defect of a mode-0 Dirichlet eigenfunction sin(πy/L) stepped to
/// t = steps·dt, against the exact continuum decay e^{−(π/L)²t}.
fn heat_oracle_error(
    config: &ExperimentConfig,
    n_y: usize,
    dt: f64,
    steps: usize,
) -> Result<f64> {
    let grid = Grid::new(HEAT_NX, n_y, HEAT_YMAX)?;
    let u0 = SpectralField::from_mode_fn(&grid, Parity::Dirichlet0, |xi, y| {
        if xi == 0 {
            C64::new((std::f64::consts::PI * y / HEAT_YMAX).sin(), 0.0)
        } else {
            C64::default()
        }
    })?;
    let zero = SpectralField::zero(&grid, Parity::Dirichlet0);
    let mut state = MhdState::new(u0.clone(), zero, config.clock()?)?;
    let mut stepper = Stepper::new(StepperConfig::new(dt, steps as f64 * dt, config.kappa)?);
    for _ in 0..steps {
        state = stepper.step(&state)?;
    }
    let t_end = dt * steps as f64;
    let decay = (-(std::f64::consts::PI / HEAT_YMAX).powi(2) * t_end).exp();
    Ok((state.u() - &u0.scale(decay)).max_abs())
}

/// Interior defects of the two identities at t = `EVAL_TIME`, with the time
/// derivatives replaced by centered differences across one step.
fn stepped_residuals(config: &ExperimentConfig, n_y: usize, dt: f64) -> Result<(f64, f64)> {
    let grid = Grid::new(STUDY_NX, n_y, STUDY_YMAX)?;
    let (u, b) = profile_fields(&grid, Profile::Band, STUDY_AMPLITUDE)?;
    let mut state = MhdState::new(u, b, config.clock()?)?;
    let mut stepper = Stepper::new(StepperConfig::new(dt, EVAL_TIME + 3.0 * dt, config.kappa)?);
    let n_eval = (EVAL_TIME / dt).round() as usize;
    for _ in 0..n_eval.saturating_sub(1) {
        state = stepper.step(&state)?;
    }
    let s_prev = state;
    let s_mid = stepper.step(&s_prev)?;
    let s_next = stepper.step(&s_mid)?;

    let du = (s_next.u() - s_prev.u()).scale(0.5 / dt);
    let db = (s_next.b() - s_prev.b()).scale(0.5 / dt);
    let aux = AuxiliaryState::start(&s_mid)?;
    let res = reformulation_residual(&s_mid, &aux, &du, &db)?;
    let reform = interior_max(&res.u).max(interior_max(&res.b));

    let (g_prev, gt_prev) = s_prev.good();
    let (g_next, gt_next) = s_next.good();
    let dt_g = (g_next - g_prev).scale(0.5 / dt);
    let dt_gt = (gt_next - gt_prev).scale(0.5 / dt);
    let res_v = s_mid.good_function_residual(Channel::Velocity, &dt_g)?;
    let res_b = s_mid.good_function_residual(Channel::Magnetic, &dt_gt)?;
    let good = interior_max(&res_v).max(interior_max(&res_b));
    Ok((reform, good))
}

/// Max coefficient magnitude over rows ≥ 2 (away from the stacked one-sided
/// wall stencils).
fn interior_max(f: &SpectralField) -> f64 {
    let c = f.coeffs();
    let mut m = 0.0_f64;
    for j in 2..c.nrows() {
        for k in 0..c.ncols() {
            m = m.max(c[[j, k]].norm());
        }
    }
    m
}

/// Least-squares slope of −log2(error) against level (Δ halves per level).
fn fitted_order(errors: &[f64]) -> f64 {
    let n = errors.len() as f64;
    let ys: Vec<f64> = errors.iter().map(|e| e.log2()).collect();
    let x_bar = (n - 1.0) / 2.0;
    let y_bar = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - x_bar;
        cov += dx * (y - y_bar);
        var += dx * dx;
    }
    -cov / var
}

fn write_table(path: &PathBuf, rows: &[LevelRow], orders: &[f64; 3]) -> Result<()> {
    let mut out = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    writeln!(
        out,
        "# interior defects, rows >= 2; dt and dy halve together per level"
    )?;
    writeln!(
        out,
        "{:<6} {:>6} {:>12} {:>14} {:>14} {:>14}",
        "level", "n_y", "dt", "heat_error", "weighted_form", "damped_comb"
    )?;
    for r in rows {
        writeln!(
            out,
            "{:<6} {:>6} {:>12.6e} {:>14.6e} {:>14.6e} {:>14.6e}",
            r.level, r.n_y, r.dt, r.heat_error, r.reformulation_residual, r.good_function_residual
        )?;
    }
    writeln!(
        out,
        "{:<6} {:>6} {:>12} {:>14.3} {:>14.3} {:>14.3}",
        "order", "", "", orders[0], orders[1], orders[2]
    )?;
    out.flush()?;
    Ok(())
}
