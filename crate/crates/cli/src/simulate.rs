//! Run orchestration: step the coupled system, sample the monitors at the
//! record cadence, and persist the artifacts (time series, snapshots,
//! summary).
//!
//! The time series is written with a fixed column order and fixed float
//! formatting, so identical configs produce byte-identical files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use mhdbl_core::energy::{
    budget_monitor, dissipation_d, energy_e, fit_decay, shifted_h, tstar_monitor, BudgetSeries,
    EnergyRecord, FAMILY_LABELS,
};
use mhdbl_core::evolve::{write_checkpoint, AuxiliaryState, Stepper, StepperConfig};
use mhdbl_core::norms::weighted_l2_sq;
use mhdbl_core::state::MhdState;
use mhdbl_core::Sign;

use crate::config::ExperimentConfig;

/// Ceiling for the horizon guard, as a multiple of the first recorded ratio.
pub const TSTAR_CEILING_FACTOR: f64 = 10.0;
/// Budget values above this multiple of the first record raise the flag.
pub const BUDGET_MARGIN: f64 = 10.0;
/// Horizontal regularity of the plain weighted norm tracked per record.
pub const PAIR_REGULARITY: f64 = 7.0;

/// Per-record diagnostics beyond the energy row: the four damped-combination
/// norms (the summands of the horizon monitor, before division by the decay
/// bound), the weighted norm of the evolved pair itself, and the structural
/// defects that should sit at rounding level along any healthy run.
#[derive(Debug, Clone, Copy)]
pub struct ExtraRow {
    pub t: f64,
    /// ⟨t⟩^{m/2}(‖∂_y^m G_Φ‖ + ‖∂_y^m G̃_Φ‖) at regularity (4, 3, 3, 2).
    pub tstar_terms: [f64; 4],
    /// ‖(u_Φ, b_Φ)‖ at regularity `PAIR_REGULARITY`, full Gaussian weight.
    pub pair_h7: f64,
    /// Relative defect of ∂_x u + ∂_y v (and the magnetic pair), worst channel.
    pub div_defect: f64,
    /// Wall/top mean-law defect of the auxiliary shear field, worst row.
    pub wall_defect: f64,
}

/// Everything a finished (or halted) run leaves behind.
#[derive(Debug)]
pub struct RunArtifacts {
    pub warnings: Vec<String>,
    pub records: Vec<EnergyRecord>,
    pub extras: Vec<ExtraRow>,
    pub budget: BudgetSeries,
    /// Guard trip, if any: (time of the last valid state, reason).
    pub halt: Option<(f64, String)>,
    pub steps: usize,
    /// Fitted decay exponents over the tail window; `None` when the series
    /// is not positive or the window holds too few records.
    pub fits: Vec<(&'static str, Option<f64>)>,
    pub fit_window: (f64, f64),
    pub timeseries_path: PathBuf,
    pub summary_path: PathBuf,
    pub snapshot_paths: Vec<PathBuf>,
}

/// Labels of the fitted series, in summary order.
pub const FIT_LABELS: [&str; 5] = [
    "tstar_term0",
    "tstar_term1",
    "tstar_term2",
    "tstar_term3",
    "ub_h7",
];

/// One energy row with the horizon monitor evaluated at the caller's γ₀
/// (the library default would pin it to the clock's 1 + l_κ − η).
fn measure_row(
    state: &MhdState,
    aux: &AuxiliaryState,
    gamma0: f64,
    ceiling: Option<f64>,
) -> Result<EnergyRecord> {
    let clock = state.clock();
    let (e, e_components) = energy_e(state, aux)?;
    let (d, d_components) = dissipation_d(state, aux)?;
    let (h, h_components) = shifted_h(state, aux)?;
    let status = tstar_monitor(
        state,
        clock.epsilon(),
        gamma0,
        ceiling.unwrap_or(f64::INFINITY),
    )?;
    Ok(EnergyRecord {
        t: state.t(),
        theta: clock.theta(),
        delta: clock.delta_unchecked(),
        e,
        d,
        h,
        e_components,
        d_components,
        h_components,
        tstar_ratio: status.ratio,
        radius_ok: clock.delta().is_ok(),
        tstar_ok: status.pass,
    })
}

/// The four horizon-monitor summands and the plain pair norm.
pub fn measure_extras(state: &MhdState, aux: &AuxiliaryState) -> Result<ExtraRow> {
    let clock = state.clock();
    let t = state.t();
    let bt = 1.0 + t;
    let (g, gt) = state.good();
    let g_phi = clock.apply_gevrey(g, Sign::Plus)?;
    let gt_phi = clock.apply_gevrey(gt, Sign::Plus)?;
    let regs = [4.0, 3.0, 3.0, 2.0];
    let mut tstar_terms = [0.0; 4];
    for (m, slot) in tstar_terms.iter_mut().enumerate() {
        let pair = weighted_l2_sq(&g_phi.d_y(m)?, regs[m], 1.0, t).sqrt()
            + weighted_l2_sq(&gt_phi.d_y(m)?, regs[m], 1.0, t).sqrt();
        *slot = bt.powf(0.5 * m as f64) * pair;
    }
    let u_phi = clock.apply_gevrey(state.u(), Sign::Plus)?;
    let b_phi = clock.apply_gevrey(state.b(), Sign::Plus)?;
    let pair_h7 = (weighted_l2_sq(&u_phi, PAIR_REGULARITY, 1.0, t)
        + weighted_l2_sq(&b_phi, PAIR_REGULARITY, 1.0, t))
    .sqrt();
    let (div_u, div_b) = state.divergence_residual();
    let (wall, top) = aux.boundary_defect();
    Ok(ExtraRow {
        t,
        tstar_terms,
        pair_h7,
        div_defect: div_u.max(div_b),
        wall_defect: wall.max(top),
    })
}

/// Run the experiment described by `config` and write its artifacts.
///
/// Guard trips (radius exhaustion, horizon ceiling, step floor, multiplier
/// overflow) end the run gracefully: the partial series, a final snapshot of
/// the last valid state, and a summary carrying the reason are all written,
/// and the call still returns `Ok`.
pub fn run_simulate(config: &ExperimentConfig, warn_only: bool) -> Result<RunArtifacts> {
    let warnings = config.validate(warn_only)?;
    let gamma0 = config.gamma0();

    let mut state = config.initial_state()?;
    let mut aux = AuxiliaryState::start(&state)?;
    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating {}", config.output_dir.display()))?;

    let first = measure_row(&state, &aux, gamma0, None)?;
    let ceiling = if first.tstar_ratio > 0.0 && first.tstar_ratio.is_finite() {
        Some(TSTAR_CEILING_FACTOR * first.tstar_ratio)
    } else {
        None
    };
    let mut stepper_cfg = StepperConfig::new(config.dt, config.t_end.max(config.dt), config.kappa)?;
    stepper_cfg.guards.tstar = ceiling;
    let mut stepper = Stepper::new(stepper_cfg);

    let mut records = vec![first];
    let mut extras = vec![measure_extras(&state, &aux)?];
    let mut snapshot_paths = Vec::new();
    let mut halt: Option<(f64, String)> = None;
    let mut steps = 0usize;

    let dump = |tag: &str, state: &MhdState, aux: &AuxiliaryState| -> Result<PathBuf> {
        let path = config.output_dir.join(format!("snapshot_{tag}.txt"));
        let mut out = BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        write_checkpoint(&mut out, state, aux)?;
        out.flush()?;
        Ok(path)
    };

    while state.t() + 0.5 * stepper.dt() < config.t_end {
        if let Err(err) = stepper.advance(&mut state, &mut aux) {
            halt = Some((state.t(), err.to_string()));
            break;
        }
        steps += 1;
        let last_step = state.t() + 0.5 * stepper.dt() >= config.t_end;
        if steps % config.record_cadence != 0 && !last_step {
            continue;
        }
        match (
            measure_row(&state, &aux, gamma0, ceiling),
            measure_extras(&state, &aux),
        ) {
            (Ok(rec), Ok(extra)) => {
                let (t, ratio) = (rec.t, rec.tstar_ratio);
                records.push(rec);
                extras.push(extra);
                if let Err(err) = stepper.enforce_tstar(t, ratio) {
                    halt = Some((t, err.to_string()));
                    break;
                }
                if config.snapshot_cadence > 0
                    && (records.len() - 1) % config.snapshot_cadence == 0
                {
                    snapshot_paths.push(dump(&format!("r{:05}", records.len() - 1), &state, &aux)?);
                }
            }
            (Err(err), _) | (_, Err(err)) => {
                halt = Some((state.t(), err.to_string()));
                break;
            }
        }
    }

    snapshot_paths.push(dump("final", &state, &aux)?);

    let budget = if records.len() >= 2 {
        budget_monitor(&records, config.eta, BUDGET_MARGIN)?
    } else {
        BudgetSeries {
            values: vec![records[0].e],
            flagged: false,
        }
    };

    let t_final = records.last().expect("at least the initial record").t;
    let fit_window = (0.2 * t_final, t_final);
    let fits = FIT_LABELS
        .iter()
        .map(|&label| {
            let series: Vec<(f64, f64)> = extras
                .iter()
                .map(|row| {
                    let v = match label {
                        "tstar_term0" => row.tstar_terms[0],
                        "tstar_term1" => row.tstar_terms[1],
                        "tstar_term2" => row.tstar_terms[2],
                        "tstar_term3" => row.tstar_terms[3],
                        _ => row.pair_h7,
                    };
                    (row.t, v)
                })
                .collect();
            (label, fit_decay(&series, fit_window).ok())
        })
        .collect();

    let timeseries_path = config.output_dir.join("timeseries.csv");
    write_timeseries(&timeseries_path, &records, &extras, &budget)?;
    let summary_path = config.output_dir.join("summary.txt");

    let artifacts = RunArtifacts {
        warnings,
        records,
        extras,
        budget,
        halt,
        steps,
        fits,
        fit_window,
        timeseries_path,
        summary_path,
        snapshot_paths,
    };
    write_summary(&artifacts)?;
    Ok(artifacts)
}

/// Fixed float formatting: 17 significant digits, scientific — exact
/// round-trip and byte-stable.
fn fmtf(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_timeseries(
    path: &PathBuf,
    records: &[EnergyRecord],
    extras: &[ExtraRow],
    budget: &BudgetSeries,
) -> Result<()> {
    let mut out = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    let mut header = String::from("t,theta,delta,E,D,H,B_budget,tstar_ratio");
    for prefix in ["e", "d", "h"] {
        for fam in FAMILY_LABELS {
            header.push_str(&format!(",{prefix}_{fam}"));
        }
    }
    header.push_str(",tstar_term0,tstar_term1,tstar_term2,tstar_term3,ub_h7,div_defect,wall_defect");
    writeln!(out, "{header}")?;
    for ((rec, extra), b) in records.iter().zip(extras).zip(&budget.values) {
        let mut row = vec![
            fmtf(rec.t),
            fmtf(rec.theta),
            fmtf(rec.delta),
            fmtf(rec.e),
            fmtf(rec.d),
            fmtf(rec.h),
            fmtf(*b),
            fmtf(rec.tstar_ratio),
        ];
        for comps in [&rec.e_components, &rec.d_components, &rec.h_components] {
            row.extend(comps.iter().map(|&v| fmtf(v)));
        }
        row.extend(extra.tstar_terms.iter().map(|&v| fmtf(v)));
        row.push(fmtf(extra.pair_h7));
        row.push(fmtf(extra.div_defect));
        row.push(fmtf(extra.wall_defect));
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn write_summary(run: &RunArtifacts) -> Result<()> {
    let mut out = BufWriter::new(
        File::create(&run.summary_path)
            .with_context(|| format!("creating {}", run.summary_path.display()))?,
    );
    let last = run.records.last().expect("at least the initial record");
    writeln!(
        out,
        "status = {}",
        if run.halt.is_some() {
            "halted"
        } else {
            "completed"
        }
    )?;
    writeln!(out, "final_time = {}", fmtf(last.t))?;
    writeln!(out, "steps = {}", run.steps)?;
    writeln!(out, "records = {}", run.records.len())?;
    match &run.halt {
        Some((t, reason)) => {
            writeln!(out, "guard_trips = 1")?;
            writeln!(out, "halt_time = {}", fmtf(*t))?;
            writeln!(out, "halt_reason = {reason}")?;
        }
        None => writeln!(out, "guard_trips = none")?,
    }
    writeln!(out, "budget_flagged = {}", run.budget.flagged)?;
    let b0 = run.budget.values[0];
    let bmax = run.budget.values.iter().cloned().fold(f64::MIN, f64::max);
    writeln!(
        out,
        "budget_max_over_first = {}",
        if b0 > 0.0 { fmtf(bmax / b0) } else { "nan".into() }
    )?;
    writeln!(
        out,
        "fit_window = {}..{}",
        fmtf(run.fit_window.0),
        fmtf(run.fit_window.1)
    )?;
    for (label, fit) in &run.fits {
        match fit {
            Some(slope) => writeln!(out, "decay_{label} = {}", fmtf(*slope))?,
            None => writeln!(out, "decay_{label} = nan")?,
        }
    }
    for warning in &run.warnings {
        writeln!(out, "warning = {warning}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;

    fn test_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("mhdbl-sim-{}-{tag}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    fn short_config(tag: &str) -> ExperimentConfig {
        ExperimentConfig {
            nx: 16,
            ny: 32,
            y_max: 6.0,
            dt: 0.02,
            t_end: 0.5,
            record_cadence: 5,
            amplitude: 0.05,
            output_dir: test_dir(tag),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn extras_sum_matches_the_horizon_monitor() {
        let cfg = short_config("extras");
        let state = cfg.initial_state().unwrap();
        let aux = AuxiliaryState::start(&state).unwrap();
        let status =
            tstar_monitor(&state, cfg.epsilon, cfg.gamma0(), f64::INFINITY).unwrap();
        let extra = measure_extras(&state, &aux).unwrap();
        let sum: f64 = extra.tstar_terms.iter().sum();
        assert!(
            (sum - status.lhs).abs() <= 1e-12 * status.lhs.max(1.0),
            "{sum} vs {}",
            status.lhs
        );
    }

    #[test]
    fn zero_profile_runs_to_completion_with_all_zero_series() {
        let cfg = ExperimentConfig {
            initial_profile: Profile::Zero,
            ..short_config("zero")
        };
        let run = run_simulate(&cfg, false).unwrap();
        assert!(run.halt.is_none());
        assert!(run.records.len() > 2);
        for rec in &run.records {
            assert_eq!(rec.e, 0.0);
            assert_eq!(rec.d, 0.0);
            assert_eq!(rec.h, 0.0);
            assert_eq!(rec.tstar_ratio, 0.0);
        }
        for extra in &run.extras {
            assert_eq!(extra.tstar_terms, [0.0; 4]);
            assert_eq!(extra.pair_h7, 0.0);
            assert_eq!(extra.div_defect, 0.0);
            assert_eq!(extra.wall_defect, 0.0);
        }
        assert!(!run.budget.flagged);
        assert!(run.timeseries_path.exists() && run.summary_path.exists());
        let _ = fs::remove_dir_all(&cfg.output_dir);
    }

    #[test]
    fn identical_configs_produce_byte_identical_series() {
        let cfg_a = short_config("repro-a");
        let cfg_b = ExperimentConfig {
            output_dir: test_dir("repro-b"),
            ..cfg_a.clone()
        };
        let run_a = run_simulate(&cfg_a, false).unwrap();
        let run_b = run_simulate(&cfg_b, false).unwrap();
        let bytes_a = fs::read(&run_a.timeseries_path).unwrap();
        let bytes_b = fs::read(&run_b.timeseries_path).unwrap();
        assert!(!bytes_a.is_empty());
        assert_eq!(bytes_a, bytes_b);
        let _ = fs::remove_dir_all(&cfg_a.output_dir);
        let _ = fs::remove_dir_all(&cfg_b.output_dir);
    }

    #[test]
    fn radius_exhaustion_halts_gracefully_with_reason() {
        // Loud clock: the shrink budget blows through δ₀/2 almost at once.
        let cfg = ExperimentConfig {
            epsilon: 0.25,
            alpha: 1.05,
            delta0: 0.1,
            lambda: 5.0,
            t_end: 2.0,
            ..short_config("halt")
        };
        let run = run_simulate(&cfg, true).unwrap();
        let (t, reason) = run.halt.as_ref().expect("radius guard should trip");
        assert!(*t < 1.0, "tripped too late: {t}");
        assert!(reason.contains("radius"), "unexpected reason: {reason}");
        let summary = fs::read_to_string(&run.summary_path).unwrap();
        assert!(summary.contains("status = halted"));
        assert!(summary.contains("halt_reason ="));
        assert!(!run.warnings.is_empty(), "saturation warning expected");
        let _ = fs::remove_dir_all(&cfg.output_dir);
    }

    #[test]
    fn snapshots_follow_the_cadence_and_a_final_dump_always_exists() {
        let cfg = ExperimentConfig {
            snapshot_cadence: 2,
            ..short_config("snaps")
        };
        let run = run_simulate(&cfg, false).unwrap();
        assert!(run.snapshot_paths.len() >= 2);
        assert!(run
            .snapshot_paths
            .last()
            .unwrap()
            .ends_with("snapshot_final.txt"));
        for path in &run.snapshot_paths {
            let text = fs::read_to_string(path).unwrap();
            assert!(text.starts_with("# checkpoint t="));
        }
        let _ = fs::remove_dir_all(&cfg.output_dir);
    }

    #[test]
    fn csv_schema_is_stable_and_row_lengths_match_the_header() {
        let cfg = short_config("schema");
        let run = run_simulate(&cfg, false).unwrap();
        let text = fs::read_to_string(&run.timeseries_path).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("t,theta,delta,E,D,H,B_budget,tstar_ratio,e_fields,"));
        let n_cols = header.split(',').count();
        assert_eq!(n_cols, 8 + 3 * FAMILY_LABELS.len() + 7);
        let mut n_rows = 0;
        for line in lines {
            assert_eq!(line.split(',').count(), n_cols);
            n_rows += 1;
        }
        assert_eq!(n_rows, run.records.len());
        let _ = fs::remove_dir_all(&cfg.output_dir);
    }
}
