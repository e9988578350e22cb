use btc_metrology::bounds::{
    collective_advantage, inefficiency_bound, rescaling_check, spectral_rate, RateSample,
};
use btc_metrology::liouvillian::{build_liouvillian, extreme_limit_generator, steady_state, Liouvillian};
use btc_metrology::monitoring::{run_ensemble, write_checkpoint_csv, FiEstimate, UnravellingConfig};
use btc_metrology::qfi::{analytic_fglobal, build_correlation_model};
use btc_metrology::scaling::{
    build_family, critical_amplitude_exponents, fit_power_law_offset, local_exponents, PowerLawFit,
};
use btc_metrology::spectrum::{liouvillian_eigenvalues, spectral_decomposition};
use btc_metrology::spin::{build_spin_operators, SpinSector};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::output::{int, num, text, Table};
use crate::CliError;

/// Tables plus the failures that did not stop the run.
pub type Outcome = (Vec<Table>, Vec<String>);

fn units(cfg: &RunConfig) -> String {
    format!("units: rates and frequencies in kappa, times in 1/kappa; kappa={}", cfg.kappa)
}

fn generator(cfg: &RunConfig, n: usize) -> btc_metrology::Result<Liouvillian> {
    let sector = SpinSector::new(n)?;
    if cfg.extreme_limit {
        extreme_limit_generator(sector, cfg.omega, cfg.kappa)
    } else {
        build_liouvillian(sector, cfg.omega, cfg.kappa)
    }
}

/// Every size fails with the same error class: report it as the run's
/// error instead of as a partial result.
fn all_failed(errors: Vec<btc_metrology::Error>) -> CliError {
    CliError::Library(errors.into_iter().next().expect("at least one error"))
}

pub fn spectrum(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut tables = Vec::new();
    let mut failures = Vec::new();
    for &n in &cfg.n_spins {
        let l = generator(cfg, n)?;
        let mut eig = Table::new(format!("eigenvalues_N{n}"), &["k", "re_lambda", "im_lambda"])
            .meta(format!("N={n} omega={} extreme_limit={}", cfg.omega, cfg.extreme_limit))
            .meta(units(cfg));
        match spectral_decomposition(&l) {
            Ok(spec) => {
                for (k, z) in spec.eigenvalues().iter().enumerate() {
                    eig.push(vec![int(k), num(z.re / cfg.kappa), num(z.im / cfg.kappa)]);
                }
                if cfg.amplitudes {
                    let rho = steady_state(&l)?;
                    let jx = build_spin_operators(l.sector()).jx.into_matrix();
                    let model = build_correlation_model(&spec, &rho, &jx)?;
                    let mut amp = Table::new(
                        format!("amplitudes_N{n}"),
                        &["gamma", "frequency", "re_amplitude", "im_amplitude", "rate_contribution"],
                    )
                    .meta(format!("N={n} omega={} c0={:.15e}", cfg.omega, model.value_at_zero))
                    .meta(units(cfg));
                    for m in &model.modes {
                        amp.push(vec![
                            num(m.gamma / cfg.kappa),
                            num(m.omega / cfg.kappa),
                            num(m.amplitude.re),
                            num(m.amplitude.im),
                            num(m.rate_contribution() * cfg.kappa),
                        ]);
                    }
                    tables.push(eig);
                    tables.push(amp);
                    continue;
                }
            }
            Err(e) if !e.is_config_error() => {
                // Eigenvalues alone are still well defined.
                warn!("N={n}: decomposition failed ({e}); writing eigenvalues only");
                failures.push(format!("N={n}: {e}"));
                for (k, z) in liouvillian_eigenvalues(&l)?.iter().enumerate() {
                    eig.push(vec![int(k), num(z.re / cfg.kappa), num(z.im / cfg.kappa)]);
                }
            }
            Err(e) => return Err(e.into()),
        }
        tables.push(eig);
    }
    Ok((tables, failures))
}

pub fn global_rate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let results: Vec<(usize, btc_metrology::Result<f64>)> = cfg
        .n_spins
        .par_iter()
        .map(|&n| {
            let r = generator(cfg, n).and_then(|l| spectral_rate(&l));
            if let Ok(f) = &r {
                info!("N={n}: f_global={f:.6e}");
            }
            (n, r)
        })
        .collect();
    let mut table = Table::new(
        "global_rate",
        &["N", "f_global_spectral", "f_global_analytic", "relative_gap", "local_exponent"],
    )
    .meta(format!("omega={} extreme_limit={}", cfg.omega, cfg.extreme_limit))
    .meta(units(cfg));
    let mut failures = Vec::new();
    let mut errors = Vec::new();
    let mut prev: Option<(usize, f64)> = None;
    for (n, r) in results {
        let analytic = analytic_fglobal(n, cfg.kappa);
        match r {
            Ok(f) => {
                let exponent = prev.map_or(f64::NAN, |(pn, pf)| {
                    (f / pf).ln() / (n as f64 / pn as f64).ln()
                });
                prev = Some((n, f));
                table.push(vec![
                    int(n),
                    num(f * cfg.kappa),
                    num(analytic * cfg.kappa),
                    num((f - analytic).abs() / analytic),
                    num(exponent),
                ]);
            }
            Err(e) => {
                failures.push(format!("N={n}: {e}"));
                table.push(vec![int(n), num(f64::NAN), num(analytic * cfg.kappa), num(f64::NAN), num(f64::NAN)]);
                errors.push(e);
            }
        }
    }
    if errors.len() == cfg.n_spins.len() {
        return Err(all_failed(errors));
    }
    Ok((vec![table], failures))
}

fn unravelling(cfg: &RunConfig, n: usize, eta_index: usize) -> UnravellingConfig {
    UnravellingConfig {
        scheme: cfg.scheme,
        eta: cfg.eta[eta_index],
        dt: cfg.dt,
        horizon: cfg.horizon,
        // Distinct streams per run so that rates from different runs are
        // independent.
        seed: cfg.seed.wrapping_add(1000 * n as u64 + eta_index as u64),
        n_traj: cfg.n_traj,
        omega: cfg.omega,
        kappa: cfg.kappa,
        n_spins: n,
        initial: cfg.initial,
        ..Default::default()
    }
}

struct MonitoringRun {
    n: usize,
    eta: f64,
    rate: FiEstimate,
}

/// Runs every `(N, η)` ensemble, appending tables for each.
fn monitoring_runs(
    cfg: &RunConfig,
    sizes: &[usize],
    tables: &mut Vec<Table>,
    failures: &mut Vec<String>,
) -> Result<Vec<MonitoringRun>, CliError> {
    let mut runs = Vec::new();
    let mut errors = Vec::new();
    for &n in sizes {
        for (i, &eta) in cfg.eta.iter().enumerate() {
            let ucfg = unravelling(cfg, n, i);
            ucfg.validate()?;
            let tag = format!("{}_N{n}_eta{eta}", cfg.scheme);
            info!("running {tag}: {} trajectories, dt={:.2e}", ucfg.n_traj, ucfg.step());
            let ens = match run_ensemble(&ucfg) {
                Ok(e) => e,
                Err(e) => {
                    failures.push(format!("{tag}: {e}"));
                    errors.push(e);
                    continue;
                }
            };
            let mut curve = Table::new(
                format!("fisher_{tag}"),
                &["t", "f_signal", "error", "f_compensator", "compensator_error"],
            )
            .meta(format!(
                "scheme={} eta={eta} N={n} omega={} seed={} n_traj={} dt={}",
                cfg.scheme, cfg.omega, ucfg.seed, ucfg.n_traj, ucfg.step()
            ))
            .meta(units(cfg));
            let tangent = ens.fisher_curve(btc_metrology::monitoring::FiMethod::Tangent)?;
            let comp = ens.fisher_curve(btc_metrology::monitoring::FiMethod::Compensator)?;
            for (a, b) in tangent.iter().zip(&comp) {
                curve.push(vec![num(a.0), num(a.1), num(a.2), num(b.1), num(b.2)]);
            }
            tables.push(curve);
            if cfg.trajectories {
                let mut buf = Vec::new();
                write_checkpoint_csv(&ens, &mut buf)?;
                tables.push(raw_table(format!("trajectories_{tag}"), &buf));
            }
            match ens.rate(cfg.window, cfg.method) {
                Ok(rate) => runs.push(MonitoringRun { n, eta, rate }),
                Err(e) => {
                    failures.push(format!("{tag}: {e}"));
                    errors.push(e);
                }
            }
        }
    }
    if runs.is_empty() && !errors.is_empty() {
        return Err(all_failed(errors));
    }
    Ok(runs)
}

/// Re-parses CSV produced by the library so it goes through the same
/// output path as every other table.
fn raw_table(name: String, csv: &[u8]) -> Table {
    const COLUMNS: [&str; 7] = ["trajectory", "t", "score", "compensator", "purity", "jy", "jz"];
    let mut t = Table::new(name, &COLUMNS);
    for line in String::from_utf8_lossy(csv).lines() {
        if let Some(m) = line.strip_prefix("# ") {
            t.meta.push(m.to_string());
        } else if !line.starts_with("trajectory") {
            t.push(line.split(',').map(|c| text(c)).collect());
        }
    }
    t
}

pub fn monitoring(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut tables = Vec::new();
    let mut failures = Vec::new();
    let runs = monitoring_runs(cfg, &cfg.n_spins, &mut tables, &mut failures)?;
    let mut summary = Table::new(
        "rates",
        &[
            "scheme", "N", "eta", "method", "rate", "error", "window_start", "window_end",
            "bound", "rate_per_spin", "bound_per_spin", "f_global",
        ],
    )
    .meta(format!("omega={} horizon={} n_traj={}", cfg.omega, cfg.horizon, cfg.n_traj))
    .meta(units(cfg));
    for r in &runs {
        let bound = inefficiency_bound(r.n, r.eta, cfg.kappa)?.value();
        let f_global = spectral_rate(&build_liouvillian(SpinSector::new(r.n)?, cfg.omega, cfg.kappa)?)?;
        let (w0, w1) = r.rate.window.unwrap_or((f64::NAN, f64::NAN));
        let nn = r.n as f64;
        summary.push(vec![
            text(cfg.scheme.to_string()),
            int(r.n),
            num(r.eta),
            text(r.rate.method.to_string()),
            num(r.rate.value),
            num(r.rate.std_error),
            num(w0),
            num(w1),
            num(bound),
            num(r.rate.value / nn),
            num(bound / nn),
            num(f_global),
        ]);
    }
    tables.insert(0, summary);
    Ok((tables, failures))
}

pub fn advantage(cfg: &RunConfig) -> Result<Outcome, CliError> {
    // The N = 1 baseline is always scheduled.
    let mut sizes = vec![1];
    sizes.extend(cfg.n_spins.iter().copied().filter(|&n| n != 1));
    let mut tables = Vec::new();
    let mut failures = Vec::new();
    let runs = monitoring_runs(cfg, &sizes, &mut tables, &mut failures)?;
    let mut xi = Table::new("advantage", &["eta", "N", "xi", "error", "cap"])
        .meta(format!("scheme={} omega={} method={}", cfg.scheme, cfg.omega, cfg.method));
    for &eta in &cfg.eta {
        let Some(base) = runs.iter().find(|r| r.n == 1 && r.eta == eta) else {
            failures.push(format!("eta={eta}: missing N=1 baseline"));
            continue;
        };
        let sample = |r: &MonitoringRun| RateSample {
            value: r.rate.value,
            std_error: r.rate.std_error,
        };
        for r in runs.iter().filter(|r| r.eta == eta && r.n != 1) {
            let a = collective_advantage(sample(r), sample(base), r.n, eta, cfg.kappa)?;
            xi.push(vec![
                num(eta),
                int(r.n),
                num(a.xi),
                num(a.std_error),
                num(a.cap.unwrap_or(f64::INFINITY)),
            ]);
        }
    }
    tables.insert(0, xi);
    Ok((tables, failures))
}

fn fit_row(table: &mut Table, quantity: String, points: &[(f64, f64)], failures: &mut Vec<String>) {
    match fit_power_law_offset(points) {
        Ok(PowerLawFit { a, b, x, residual, iterations, .. }) => table.push(vec![
            text(quantity),
            num(a),
            num(b),
            num(x),
            num(residual),
            int(iterations),
        ]),
        Err(e) => failures.push(format!("fit of {quantity}: {e}")),
    }
}

const FIT_COLUMNS: [&str; 6] = ["quantity", "a", "b", "x", "residual", "iterations"];

pub fn scaling(cfg: &RunConfig) -> Result<Outcome, CliError> {
    if cfg.n_spins.len() < 4 {
        return Err(CliError::Config("invalid `n_spins`: scaling needs at least 4 sizes".into()));
    }
    let mut failures = Vec::new();
    let sizes: Vec<f64> = cfg.n_spins.iter().map(|&n| n as f64).collect();
    let mut fits = Table::new("fits", &FIT_COLUMNS).meta("model: e(N) = a + b N^-x");
    let mut zeta = Table::new("zeta", &["N", "f_global", "zeta"])
        .meta(format!("omega={} source={}", cfg.omega, if cfg.analytic { "analytic" } else { "spectral" }))
        .meta(units(cfg));

    if cfg.analytic {
        let f: Vec<f64> = cfg.n_spins.iter().map(|&n| analytic_fglobal(n, cfg.kappa)).collect();
        let series = local_exponents(&sizes, &f)?;
        push_zeta(&mut zeta, &sizes, &f, &series.exponents);
        fit_row(&mut fits, "zeta".into(), &series.exponents, &mut failures);
        return Ok((vec![zeta, fits], failures));
    }

    let family = build_family(&cfg.n_spins, cfg.omega, cfg.kappa)?;
    let analysis = critical_amplitude_exponents(&family, cfg.modes)?;
    let mut modes = Table::new("modes", &["mode", "N", "re_lambda", "im_lambda", "amplitude"])
        .meta(format!("omega={}", cfg.omega))
        .meta(units(cfg));
    for (k, m) in analysis.modes.iter().enumerate() {
        for ((n, l), a) in m.sizes.iter().zip(&m.eigenvalues).zip(&m.amplitudes) {
            modes.push(vec![int(k), int(*n), num(l.0), num(l.1), num(*a)]);
        }
    }
    let mut exps = Table::new("mode_exponents", &["mode", "N", "z", "frequency_z", "delta"])
        .meta("decay rates scale as N^-z, amplitudes as N^-2delta");
    for (k, e) in analysis.mode_exponents.iter().enumerate() {
        for (i, (n, z)) in e.z.iter().enumerate() {
            let fz = e.frequency_z.as_ref().map_or(f64::NAN, |f| f[i].1);
            exps.push(vec![int(k), int(*n as usize), num(*z), num(fz), num(e.delta[i].1)]);
        }
        fit_row(&mut fits, format!("z_{k}"), &e.z, &mut failures);
    }
    let f: Vec<f64> = family.iter().map(|m| m.f_global).collect();
    push_zeta(&mut zeta, &sizes, &f, &analysis.zeta.exponents);
    fit_row(&mut fits, "zeta".into(), &analysis.zeta.exponents, &mut failures);
    let mut c0 = Table::new("delta_c0", &["N", "delta"]).meta("from the scaling of C(0)");
    for (n, d) in &analysis.delta_from_c0 {
        c0.push(vec![int(*n as usize), num(*d)]);
    }
    Ok((vec![modes, exps, zeta, c0, fits], failures))
}

fn push_zeta(table: &mut Table, sizes: &[f64], f: &[f64], exponents: &[(f64, f64)]) {
    for (i, (&n, &v)) in sizes.iter().zip(f).enumerate() {
        let e = if i == 0 { f64::NAN } else { exponents[i - 1].1 };
        table.push(vec![int(n as usize), num(v), num(e)]);
    }
}

pub fn rescale_check(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut table = Table::new(
        "rescale_check",
        &["N", "omega", "scaled_rate", "unscaled_rate", "ratio", "ratio_over_n_minus_1"],
    )
    .meta("ratio of the 2kappa/N model at omega to the 2kappa model at N*omega; expected N")
    .meta(units(cfg));
    for &n in &cfg.n_spins {
        let r = rescaling_check(n, cfg.omega, cfg.kappa)?;
        table.push(vec![
            int(n),
            num(cfg.omega),
            num(r.scaled_rate),
            num(r.unscaled_rate),
            num(r.ratio),
            num(r.ratio / n as f64 - 1.0),
        ]);
    }
    Ok((vec![table], Vec::new()))
}
