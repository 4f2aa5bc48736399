use std::fs;
use std::path::Path;

use serde::Serialize;

use quantsens::casestudy::{
    run_compound_point, run_compound_study, run_reinsurance_study, write_compound_csv, CompoundConfig, ReinsuranceConfig, ReinsuranceStudy,
    Sweep,
};
use quantsens::estimators::{
    cascade_sens, discrete_sens, marginal_sens_batch, write_results, BandSpec, BootstrapSpec, ConditionalSets, ResultRow, RiskMeasureSpec,
};
use quantsens::model::{write_scenarios, DiscreteModelSpec, Factor, LossModel, LossModelSpec, Mode};
use quantsens::oracle::{brute_force_discrete, fd_from_losses, stressed_losses, Agreement, ExactReport, DEFAULT_EPS_GRID};
use quantsens::rng::SeedSpec;
use quantsens::stress::StressSpec;

use crate::config::{Model, RunConfig};
use crate::{CliError, Command, RiskFlags, RiskKind, RunFlags, SensMode, Study};

/// Relative and stderr tolerances of the finite-difference comparison.
const FD_REL_TOL: f64 = 0.05;
const FD_K_SIGMA: f64 = 2.0;
/// Exact references carry no noise, so only the estimate's stderr counts.
const EXACT_K_SIGMA: f64 = 3.0;

/// Runs one command; `Ok(false)` means an oracle disagreement.
pub fn dispatch(cmd: Command) -> Result<bool, CliError> {
    match cmd {
        Command::Validate { config } => {
            RunConfig::load(&config)?;
            println!("{}: ok", config.display());
            Ok(true)
        }
        Command::Simulate { config, run } => {
            let cfg = load(&config, &run, None)?;
            simulate(&cfg).map(|_| true)
        }
        Command::Sens { config, mode, run, rm } => {
            let cfg = load(&config, &run, Some(&rm))?;
            sens(&cfg, mode).map(|_| true)
        }
        Command::Oracle { config, mode, eps_grid, fd_n, run, rm } => {
            let cfg = load(&config, &run, Some(&rm))?;
            let grid = eps_grid.unwrap_or_else(|| DEFAULT_EPS_GRID.to_vec());
            oracle(&cfg, mode, &grid, fd_n)
        }
        Command::Casestudy { which, quick, n, seed, out } => {
            match which {
                Study::Reinsurance => reinsurance(quick, n, seed, &out)?,
                Study::Compound => compound(quick, n, seed, &out)?,
            }
            Ok(true)
        }
    }
}

/// Config file values, overridden by flags, then by built-in defaults for
/// risk measures (ES at 0.975).
fn load(path: &Path, run: &RunFlags, rm: Option<&RiskFlags>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(n) = run.n {
        cfg.n_scenarios = n;
    }
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &run.out {
        cfg.output_dir = out.clone();
    }
    if let Some(flags) = rm {
        if let Some(delta) = flags.delta {
            cfg.delta = delta;
        }
        if flags.rm.is_some() || flags.alpha.is_some() || cfg.risk_measures.is_empty() {
            let alpha = flags.alpha.unwrap_or(0.975);
            cfg.risk_measures = vec![match flags.rm.unwrap_or(RiskKind::Es) {
                RiskKind::Var => RiskMeasureSpec::Var { alpha },
                RiskKind::Es => RiskMeasureSpec::Es { alpha },
                RiskKind::Mean => RiskMeasureSpec::Mean,
            }];
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", cfg.output_dir.display())))?;
    Ok(&cfg.output_dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(quantsens::Error::from)? + "\n";
    fs::write(path, text).map_err(|e| CliError::Numerical(format!("cannot write {}: {e}", path.display())))
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Numerical(format!("cannot write {}: {e}", path.display()))
}

fn loss_model(cfg: &RunConfig) -> Result<LossModelSpec, CliError> {
    match cfg.model.build()? {
        Model::Loss(spec) => Ok(spec),
        Model::Discrete(_) => Err(CliError::Config("this mode needs a \"loss\" model".into())),
    }
}

fn discrete_model(cfg: &RunConfig) -> Result<DiscreteModelSpec, CliError> {
    match cfg.model.build()? {
        Model::Discrete(dm) => Ok(dm),
        Model::Loss(_) => Err(CliError::Config("discrete mode needs a \"discrete\" or \"compound\" model".into())),
    }
}

fn bootstrap(cfg: &RunConfig) -> BootstrapSpec {
    BootstrapSpec { replicates: cfg.bootstrap.replicates, fraction: cfg.bootstrap.fraction, seed: SeedSpec(cfg.seed) }
}

fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = output_dir(cfg)?;
    let path = dir.join("scenarios.csv");
    match cfg.model.build()? {
        Model::Loss(spec) => {
            let set = LossModel::new(&spec)?.simulate(cfg.n_scenarios, SeedSpec(cfg.seed))?;
            let side = write_scenarios(&set, &path)?;
            println!("wrote {} scenarios to {} ({})", set.len(), path.display(), side.display());
        }
        Model::Discrete(dm) => {
            let set = dm.simulate(cfg.n_scenarios, SeedSpec(cfg.seed))?;
            let mut w = csv::Writer::from_path(&path).map_err(quantsens::Error::from)?;
            let rec = |w: &mut csv::Writer<fs::File>, r: [String; 3]| w.write_record(r).map_err(quantsens::Error::from);
            rec(&mut w, ["W".into(), "U".into(), "L".into()])?;
            for r in 0..set.len() {
                let wv = dm.support[set.index[r] as usize];
                rec(&mut w, [format!("{wv:.16e}"), format!("{:.16e}", set.uniform[r]), format!("{:.16e}", set.loss[r])])?;
            }
            w.flush().map_err(io(&path))?;
            #[derive(Serialize)]
            struct Sidecar<'a> {
                n_scenarios: usize,
                seed: SeedSpec,
                model_hash: &'a str,
            }
            let side = path.with_extension("json");
            write_json(&side, &Sidecar { n_scenarios: set.len(), seed: set.seed, model_hash: &set.model_hash })?;
            println!("wrote {} scenarios to {} ({})", set.len(), path.display(), side.display());
        }
    }
    Ok(())
}

/// Conditional datasets for every indicator the cases need.
fn conditional_sets(
    model: &LossModel,
    cases: &[(Factor, StressSpec)],
    cascade: bool,
    cfg: &RunConfig,
    seed: SeedSpec,
) -> Result<ConditionalSets, CliError> {
    let mut needed = Vec::new();
    for (t, _) in cases {
        needed.extend(ConditionalSets::required(model, *t, cascade)?);
    }
    needed.sort_unstable();
    needed.dedup();
    let band = BandSpec { delta: cfg.delta };
    Ok(ConditionalSets::generate(model, &needed, &band, cfg.n_conditional.unwrap_or(cfg.n_scenarios), seed)?)
}

fn factor_rows(cfg: &RunConfig, cascade: bool, seed: SeedSpec, n: usize) -> Result<Vec<ResultRow>, CliError> {
    let spec = loss_model(cfg)?;
    let cases = cfg.cases()?;
    let model = LossModel::new(&spec)?;
    let base = model.simulate(n, seed)?;
    let cond = conditional_sets(&model, &cases, cascade, cfg, SeedSpec(seed.0.wrapping_add(1)))?;
    let band = BandSpec { delta: cfg.delta };
    let boot = bootstrap(cfg);
    let mut rows = Vec::new();
    for rm in &cfg.risk_measures {
        let estimates = if cascade {
            cases.iter().map(|(t, s)| cascade_sens(&model, &base, &cond, *t, s, rm, &band, &boot)).collect::<Result<Vec<_>, _>>()?
        } else {
            marginal_sens_batch(&model, &base, &cond, &cases, rm, &band, &boot)?
        };
        for ((t, s), estimate) in cases.iter().zip(estimates) {
            rows.push(ResultRow { target: t.to_string(), rm: *rm, stress_type: s.name().to_string(), estimate });
        }
    }
    Ok(rows)
}

fn discrete_rows(cfg: &RunConfig, dm: &DiscreteModelSpec) -> Result<Vec<ResultRow>, CliError> {
    if cfg.stresses.is_empty() {
        return Err(CliError::Config("at least one stress is required".into()));
    }
    let set = dm.simulate(cfg.n_scenarios, SeedSpec(cfg.seed))?;
    let band = BandSpec { delta: cfg.delta };
    let boot = bootstrap(cfg);
    let mut rows = Vec::new();
    for rm in &cfg.risk_measures {
        for s in &cfg.stresses {
            let estimate = discrete_sens(dm, &set, s, rm, &band, &boot)?;
            rows.push(ResultRow { target: "W".into(), rm: *rm, stress_type: s.name().to_string(), estimate });
        }
    }
    Ok(rows)
}

fn sens(cfg: &RunConfig, mode: SensMode) -> Result<(), CliError> {
    let rows = match mode {
        SensMode::Marginal | SensMode::Cascade => factor_rows(cfg, matches!(mode, SensMode::Cascade), SeedSpec(cfg.seed), cfg.n_scenarios)?,
        SensMode::Discrete => discrete_rows(cfg, &discrete_model(cfg)?)?,
    };
    let path = output_dir(cfg)?.join("sensitivities.csv");
    write_results(fs::File::create(&path).map_err(io(&path))?, &rows)?;
    for r in &rows {
        println!("{:>4} {:<12} {:<4} {:>14.6} ± {:.6}", r.target, r.stress_type, r.rm.name(), r.estimate.value, r.estimate.stderr);
    }
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct ExactComparison {
    stress: StressSpec,
    exact: ExactReport,
    agreement: Agreement,
}

fn oracle(cfg: &RunConfig, mode: SensMode, grid: &[f64], fd_n: usize) -> Result<bool, CliError> {
    let dir = output_dir(cfg)?.to_path_buf();
    let path = dir.join("oracle.json");
    let mut all_passed = true;
    let mut report = |label: String, a: &Agreement| {
        all_passed &= a.passed;
        println!(
            "{} {label}: estimate {:.6} ± {:.6}, reference {:.6} ± {:.6}, tolerance {:.6}",
            if a.passed { "PASS" } else { "FAIL" },
            a.estimate,
            a.estimate_stderr,
            a.reference,
            a.reference_stderr,
            a.tolerance
        );
    };
    match mode {
        SensMode::Discrete => {
            let dm = discrete_model(cfg)?;
            let estimates = discrete_rows(cfg, &dm)?;
            let mut out = Vec::new();
            let mut rows = estimates.iter();
            for rm in &cfg.risk_measures {
                for s in &cfg.stresses {
                    let est = &rows.next().expect("one row per stress and risk measure").estimate;
                    let exact = brute_force_discrete(&dm, s, rm, grid)?;
                    let a = Agreement::new(est.value, est.stderr, exact.derivative, 0.0, 0.0, EXACT_K_SIGMA);
                    report(format!("W {} {}", s.name(), rm.name()), &a);
                    out.push(ExactComparison { stress: s.clone(), exact, agreement: a });
                }
            }
            write_json(&path, &out)?;
        }
        SensMode::Marginal | SensMode::Cascade => {
            let cascade = matches!(mode, SensMode::Cascade);
            let fd_mode = if cascade { Mode::Cascade } else { Mode::Marginal };
            let spec = loss_model(cfg)?;
            let model = LossModel::new(&spec)?;
            let fd_base = model.simulate(fd_n, SeedSpec(cfg.seed))?;
            let cases = cfg.cases()?;
            let estimates = factor_rows(cfg, cascade, SeedSpec(cfg.seed.wrapping_add(2)), cfg.n_scenarios)?;
            let mut out = Vec::new();
            for (ci, (t, s)) in cases.iter().enumerate() {
                let stressed = stressed_losses(&model, &fd_base, *t, s, fd_mode, grid)?;
                for (ri, rm) in cfg.risk_measures.iter().enumerate() {
                    let mut fd = fd_from_losses(&fd_base, &stressed, *t, s, rm, fd_mode, grid)?;
                    let est = &estimates[ri * cases.len() + ci].estimate;
                    let a = fd.compare(est, FD_REL_TOL, FD_K_SIGMA).clone();
                    report(format!("{t} {} {}", s.name(), rm.name()), &a);
                    out.push(fd);
                }
            }
            write_json(&path, &out)?;
        }
    }
    println!("wrote {}", path.display());
    Ok(all_passed)
}

fn reinsurance(quick: bool, n: Option<usize>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut study = if quick { ReinsuranceStudy::quick() } else { ReinsuranceStudy::default() };
    if let Some(n) = n {
        study.n_scenarios = n;
    }
    if let Some(s) = seed {
        study.seed = SeedSpec(s);
    }
    let results = run_reinsurance_study(&ReinsuranceConfig::default(), &study)?;
    results.write(out)?;
    let s = &results.summary;
    println!("P(L > 0) = {:.5} ± {:.5}", s.p_loss_positive, s.p_loss_positive_stderr);
    println!("S_Z[ES] ranking: {}", s.z_es_ranking.join(" "));
    println!("S_X[ES] ranking: {}", s.x_es_ranking.join(" "));
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct CompoundSummary {
    n_scenarios: usize,
    seed: SeedSpec,
    config: CompoundConfig,
    quantile: f64,
    expected_shortfall: f64,
    scaled_freq: f64,
    scaled_freq_stderr: f64,
    scaled_sev: f64,
    scaled_sev_stderr: f64,
}

fn compound(quick: bool, n: Option<usize>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let n_base = n.unwrap_or(if quick { 100_000 } else { 1_000_000 });
    let n_sweep = (n_base / 5).max(1000);
    let seed = SeedSpec(seed.unwrap_or(1));
    let base = CompoundConfig::default();
    fs::create_dir_all(out).map_err(io(out))?;
    let p = run_compound_point(&base, base.freq_mean, n_base, seed)?;
    for sweep in Sweep::ALL {
        let points = run_compound_study(&base, sweep, &sweep.default_grid(), n_sweep, seed)?;
        write_compound_csv(&out.join(format!("fig1_{}.csv", sweep.name())), &[(sweep, points)])?;
    }
    let summary = CompoundSummary {
        n_scenarios: n_base,
        seed,
        config: base,
        quantile: p.quantile,
        expected_shortfall: p.expected_shortfall,
        scaled_freq: p.scaled_freq,
        scaled_freq_stderr: p.freq_stderr / p.expected_shortfall,
        scaled_sev: p.scaled_sev,
        scaled_sev_stderr: p.sev_stderr / p.expected_shortfall,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!("scaled frequency sensitivity {:.4}, scaled severity sensitivity {:.4}", summary.scaled_freq, summary.scaled_sev);
    println!("wrote {}", out.display());
    Ok(())
}
