//! Runs the configured experiment and renders its data files.
//!
//! Everything written here is a pure function of the [`RunConfig`]; the only
//! exception is the optional metadata line at the top of `report.txt`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::coherence::{coherence_profile, CoherenceProfile};
use crate::config::{Experiment, InitialSpec, RunConfig};
use crate::error::{Error, Result};
use crate::measurement::{
    acquire_fid, apodize, bandwidth, cat_signature, fid_csv, fit_report, mq_csv, mq_order_scan, peak_census,
    reference_phase, rephase, spectrum, spectrum_csv, FitStatus, Peak, Spectrum, SMALL_TIP_LIMIT,
};
use crate::protocol::{build_cat_protocol, Protocol, STEP_LABELS};
use crate::relaxation::{extreme_coherence_lifetime, lifetime_experiment, Observable};
use crate::sequence::{avg_hamiltonian_check, cycle_unitary, phase_aligned_distance, run, run_final, PulseSequence, RunOptions};
use crate::spin_system::SpinSystem;
use crate::state::{fidelity, labeled_state, pseudopure, thermal_deviation, Label, State, StateVector};

/// One output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    /// Data files, in write order. `config.txt` and `report.txt` are included.
    pub artifacts: Vec<Artifact>,
    /// Set when the experiment produced its files but its result is not
    /// acceptable (a rejected or impossible fit).
    pub failure: Option<Error>,
}

impl Outcome {
    pub fn artifact(&self, name: &str) -> Option<&str> {
        self.artifacts.iter().find(|a| a.name == name).map(|a| a.contents.as_str())
    }
}

struct Report(String);

impl Report {
    fn new(cfg: &RunConfig) -> Self {
        let mut r = Report(String::new());
        r.kv("experiment", cfg.experiment.name());
        r
    }

    fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.0, "{key} = {value}");
    }

    fn num(&mut self, key: &str, value: f64) {
        self.kv(key, format!("{value:e}"));
    }
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

fn profile_csv(p: &CoherenceProfile) -> String {
    csv("order,weight", p.iter().map(|(q, w)| format!("{q},{w:e}")))
}

fn peaks_csv(peaks: &[Peak]) -> String {
    csv(
        "freq_hz,real,imag,abs",
        peaks.iter().map(|p| format!("{:e},{:e},{:e},{:e}", p.frequency, p.amplitude.re, p.amplitude.im, p.amplitude.norm())),
    )
}

fn artifact(name: &str, contents: String) -> Artifact {
    Artifact { name: name.into(), contents }
}

/// Pure state named by the `initial` key, or `None` for `thermal`.
pub fn initial_vector(cfg: &RunConfig, system: &SpinSystem) -> Result<Option<StateVector>> {
    let n = system.n_spins();
    let d = system.dim();
    Ok(Some(match &cfg.initial {
        InitialSpec::Down => StateVector::basis(n, d - 1),
        InitialSpec::Up => StateVector::basis(n, 0),
        InitialSpec::Cat => {
            let (a, b) = (StateVector::basis(n, 0), StateVector::basis(n, d - 1));
            let h = crate::C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            StateVector::superpose(&[(h, &a), (h, &b)])?
        }
        InitialSpec::Basis(i) => {
            if *i >= d {
                return Err(Error::ConfigValue(format!("initial basis {i} outside 0..{d}")));
            }
            StateVector::basis(n, *i)
        }
        InitialSpec::Labels(pairs) => {
            let mut labels = vec![None; system.channels().len()];
            for (ch, l) in pairs {
                labels[system.channel_index(ch)?] = Some(*l);
            }
            let labels: Vec<Label> = labels
                .into_iter()
                .enumerate()
                .map(|(c, l)| {
                    l.ok_or_else(|| Error::ConfigValue(format!("initial state gives no label for channel {}", system.channels()[c].label)))
                })
                .collect::<Result<_>>()?;
            labeled_state(system, &labels)?
        }
        InitialSpec::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            StateVector::from_gaussian(n, || StandardNormal.sample(&mut rng))
        }
        InitialSpec::Thermal => return Ok(None),
    }))
}

/// Initial state with the configured purity applied.
pub fn initial_state(cfg: &RunConfig, system: &SpinSystem) -> Result<State> {
    match initial_vector(cfg, system)? {
        None => Ok(State::Mixed(thermal_deviation(system)?)),
        Some(v) if cfg.purity == 1.0 => Ok(State::Pure(v)),
        Some(v) => Ok(State::Mixed(pseudopure(&v, cfg.purity)?)),
    }
}

/// Runs the experiment without touching the file system (except to read a
/// `sequence_file`).
pub fn run_experiment(cfg: &RunConfig) -> Result<Outcome> {
    let system = cfg.system.build()?;
    let mut report = Report::new(cfg);
    report.kv("system", system.name());
    report.kv("n_spins", system.n_spins());
    let (mut artifacts, failure) = match cfg.experiment {
        Experiment::Run => (exp_run(cfg, &system, &mut report)?, None),
        Experiment::Spectrum => (exp_spectrum(cfg, &system, &mut report)?, None),
        Experiment::CatDemo => (exp_catdemo(cfg, &system, &mut report)?, None),
        Experiment::MqScan => (exp_mqscan(cfg, &system, &mut report)?, None),
        Experiment::Lifetime => exp_lifetime(cfg, &system, &mut report)?,
        Experiment::AhtCheck => (exp_ahtcheck(cfg, &system, &mut report)?, None),
    };
    artifacts.push(artifact("config.txt", cfg.echo()));
    artifacts.push(artifact("report.txt", report.0));
    Ok(Outcome { artifacts, failure })
}

/// Writes the artifacts into `dir`, prefixing `report.txt` with `metadata`
/// when given.
pub fn write_outcome(outcome: &Outcome, dir: &Path, metadata: Option<&str>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for a in &outcome.artifacts {
        let path = dir.join(&a.name);
        let body = match metadata {
            Some(m) if a.name == "report.txt" => format!("# {m}\n{}", a.contents),
            _ => a.contents.clone(),
        };
        std::fs::write(&path, body).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        out.push(path);
    }
    Ok(out)
}

/// Runs and writes the experiment. Returns the written paths, or the
/// experiment's failure after the files are on disk.
pub fn execute(cfg: &RunConfig, metadata: Option<&str>) -> Result<Vec<PathBuf>> {
    let outcome = run_experiment(cfg)?;
    let paths = write_outcome(&outcome, &cfg.output, if cfg.header { metadata } else { None })?;
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(paths),
    }
}

fn exp_run(cfg: &RunConfig, system: &SpinSystem, report: &mut Report) -> Result<Vec<Artifact>> {
    let seq = cfg.sequence()?;
    let init = initial_state(cfg, system)?;
    let traj = run(&seq, &init, system, RunOptions { promote: true, relaxation: Some(&cfg.relaxation) })?;
    let mut t = 0.0;
    let mut rows = Vec::new();
    for (k, st) in traj.iter().enumerate() {
        let label = if k == 0 { "initial".to_string() } else { seq.events[k - 1].to_string() };
        if k > 0 {
            t += seq.events[k - 1].duration();
        }
        let (trace, purity) = match st {
            State::Pure(v) => (v.norm().powi(2), 1.0),
            State::Mixed(r) => (r.trace(), r.purity()),
        };
        rows.push(format!("{k},{label},{t:e},{trace:e},{purity:e},{:e}", fidelity(st, &init)?));
    }
    let last = traj.last().expect("trajectory is never empty");
    let pops = csv("index,population", (0..system.dim()).map(|r| format!("{r},{:e}", last.entry(r, r).re)));
    let mut out = vec![
        artifact("trajectory.csv", csv("step,event,time_s,trace,purity,fidelity_initial", rows)),
        artifact("profile.csv", profile_csv(&coherence_profile(last))),
        artifact("populations.csv", pops),
    ];
    if let State::Pure(v) = last {
        out.push(artifact(
            "amplitudes.csv",
            csv("index,real,imag", v.amplitudes().iter().enumerate().map(|(r, a)| format!("{r},{:e},{:e}", a.re, a.im))),
        ));
    }
    report.kv("events", seq.events.len());
    report.num("duration_s", seq.duration());
    report.kv("pulse_count", seq.pulse_count());
    report.num("final_fidelity_initial", fidelity(last, &init)?);
    Ok(out)
}

fn acquire(state: &State, system: &SpinSystem, cfg: &RunConfig) -> Result<(crate::measurement::Fid, Spectrum)> {
    let fid = acquire_fid(state, system, &cfg.read_channel, &cfg.acquisition)?;
    let spec = spectrum(&apodize(&fid, cfg.acquisition.line_broadening));
    Ok((fid, spec))
}

fn acquisition_report(report: &mut Report, cfg: &RunConfig, system: &SpinSystem) {
    report.kv("read_channel", &cfg.read_channel);
    report.num("tip_deg", cfg.acquisition.tip.to_degrees());
    if cfg.acquisition.tip.abs() > SMALL_TIP_LIMIT {
        report.kv("warning", "\"tip angle above the small-angle limit; spectra leave linear response\"");
    }
    report.num("dwell_s", cfg.acquisition.dwell.unwrap_or_else(|| crate::measurement::default_dwell(system)));
    report.num("bandwidth_hz", bandwidth(system));
    report.kv("points", cfg.acquisition.n_points);
    report.num("threshold", cfg.threshold);
}

fn exp_spectrum(cfg: &RunConfig, system: &SpinSystem, report: &mut Report) -> Result<Vec<Artifact>> {
    let seq = cfg.sequence()?;
    let init = initial_state(cfg, system)?;
    let state = if seq.events.is_empty() {
        init
    } else {
        run_final(&seq, &init, system, RunOptions { promote: true, relaxation: Some(&cfg.relaxation) })?
    };
    let (fid, spec) = acquire(&state, system, cfg)?;
    let spec = rephase(&spec, reference_phase(&spec));
    let peaks = peak_census(&spec, cfg.threshold)?;
    acquisition_report(report, cfg, system);
    report.kv("peaks", peaks.len());
    Ok(vec![
        artifact("fid.csv", fid_csv(&fid, true)),
        artifact("spectrum.csv", spectrum_csv(&spec, true)),
        artifact("peaks.csv", peaks_csv(&peaks)),
    ])
}

fn cat_protocol(cfg: &RunConfig, system: &SpinSystem) -> Result<Protocol> {
    build_cat_protocol(system, &cfg.protocol)
}

fn spectral_state(state: &State, purity: f64) -> Result<State> {
    Ok(State::Mixed(match state {
        State::Pure(v) => pseudopure(v, purity)?,
        State::Mixed(r) => r.scaled(purity),
    }))
}

fn exp_catdemo(cfg: &RunConfig, system: &SpinSystem, report: &mut Report) -> Result<Vec<Artifact>> {
    let protocol = cat_protocol(cfg, system)?;
    let a = State::Pure(protocol.initial_state().clone());
    let relax = system.n_spins() <= crate::dense::DENSE_MAX_SPINS && protocol.params().relax_delay > 0.0;
    let opts = RunOptions { promote: true, relaxation: if relax { Some(&cfg.relaxation) } else { None } };
    let traj = run(&protocol.segment("BCDEFGHIJ"), &a, system, opts)?;
    let mut rows = Vec::new();
    for (k, st) in traj.iter().enumerate() {
        let label = STEP_LABELS[k];
        let reference = protocol.step(label).reference.clone().expect("every cat step has a reference");
        let f = fidelity(st, &State::Pure(reference))?;
        rows.push(format!("{label},{f:e}"));
        report.num(&format!("fidelity_{label}"), f);
    }
    let e = &traj[4];
    let profile = coherence_profile(e);
    let n = system.n_spins() as i32;
    report.num("weight_E_q_plus_n", profile.weight(n));
    report.num("weight_E_q_minus_n", profile.weight(-n));
    report.num("round_trip_fidelity", fidelity(&traj[9], &a)?);
    report.kv("mode", protocol.params().mode);
    report.kv("pulse_count", protocol.pulse_count());
    report.num("duration_s", protocol.duration());
    if let Some((c, h)) = protocol.dq_durations() {
        report.num("dq_duration_carbon_s", c);
        report.num("dq_duration_proton_s", h);
    }
    report.num("relax_delay_s", protocol.params().relax_delay);
    if protocol.params().relax_delay > 0.0 && !relax {
        report.kv("relaxation", "\"not applied above the dense-matrix limit; see the lifetime experiment\"");
    }

    let h = protocol.proton_channel();
    let c = protocol.carbon_channel();
    let mut uu_labels = vec![Label::D; system.channels().len()];
    uu_labels[h] = Label::U;
    uu_labels[c] = Label::U;
    let uu = State::Pure(labeled_state(system, &uu_labels)?);
    let states = [&a, &uu, e, &traj[9]];
    let spectra = states
        .iter()
        .map(|s| Ok(acquire(&spectral_state(s, cfg.purity)?, system, cfg)?.1))
        .collect::<Result<Vec<_>>>()?;
    let phase = reference_phase(&spectra[0]);
    let spectra: Vec<Spectrum> = spectra.iter().map(|s| rephase(s, phase)).collect();
    let sig = cat_signature(&spectra[2], &spectra[0], &spectra[1], cfg.cat_tolerance)?;
    acquisition_report(report, cfg, system);
    report.num("cat_signature_deviation", sig.deviation);
    report.kv("cat_signature_pass", sig.pass);
    let mut out = vec![
        artifact("steps.csv", csv("step,fidelity", rows)),
        artifact("profile_E.csv", profile_csv(&profile)),
    ];
    for (name, spec) in ["a_dd", "b_uu", "c_cat", "d_return"].iter().zip(&spectra) {
        let peaks = peak_census(spec, cfg.threshold)?;
        report.kv(&format!("peaks_{name}"), peaks.len());
        out.push(artifact(&format!("spectrum_{name}.csv"), spectrum_csv(spec, true)));
    }
    Ok(out)
}

fn exp_mqscan(cfg: &RunConfig, system: &SpinSystem, report: &mut Report) -> Result<Vec<Artifact>> {
    let seq = cfg.sequence()?;
    let (prep, init): (PulseSequence, State) = if seq.events.is_empty() {
        let protocol = cat_protocol(cfg, system)?;
        let a = protocol.initial_state();
        let init = if cfg.purity == 1.0 { State::Pure(a.clone()) } else { State::Mixed(pseudopure(a, cfg.purity)?) };
        report.kv("preparation", "\"cat protocol steps B-E\"");
        (protocol.segment("BCDE"), init)
    } else {
        report.kv("preparation", "\"configured sequence\"");
        (seq, initial_state(cfg, system)?)
    };
    let mq = mq_order_scan(&prep, system, &init, cfg.mq_increments)?;
    let prepared = run_final(&prep, &init, system, RunOptions::default())?;
    let profile = coherence_profile(&prepared);
    let k = cfg.mq_increments;
    let dominant = mq
        .amplitudes
        .iter()
        .filter(|(q, _)| *q != 0)
        .fold((0, f64::NEG_INFINITY), |m, &(q, a)| if a > m.1 + 1e-12 { (q.abs(), a) } else { m });
    report.kv("increments", k);
    report.num("max_deviation_from_profile", mq.max_deviation(&profile));
    report.kv("dominant_nonzero_order", dominant.0);
    let signal = csv(
        "increment,phase_rad,signal",
        mq.signal.iter().enumerate().map(|(j, s)| format!("{j},{:e},{s:e}", 2.0 * std::f64::consts::PI * j as f64 / k as f64)),
    );
    Ok(vec![
        artifact("mq.csv", mq_csv(&mq, true)),
        artifact("mq_signal.csv", signal),
        artifact("profile.csv", profile_csv(&profile)),
    ])
}

fn exp_lifetime(cfg: &RunConfig, system: &SpinSystem, report: &mut Report) -> Result<(Vec<Artifact>, Option<Error>)> {
    let protocol = cat_protocol(cfg, system)?;
    let curve = lifetime_experiment(&protocol, &cfg.relaxation, &cfg.delays, cfg.observable, cfg.purity)?;
    report.kv("observable", cfg.observable);
    report.kv("dephasing", cfg.relaxation.mode);
    report.kv("compact_path", curve.compact);
    if cfg.observable == Observable::CatCoherence {
        report.num("predicted_lifetime_s", extreme_coherence_lifetime(&cfg.relaxation, system));
    }
    match &curve.fit {
        Ok(f) => report.num("fitted_lifetime_s", f.time_constant),
        Err(_) => report.kv("fitted_lifetime_s", "none"),
    }
    report.num("reference_lifetime_min_s", cfg.reference_lifetime.0);
    report.num("reference_lifetime_max_s", cfg.reference_lifetime.1);
    let failure = match &curve.fit {
        Err(e) => Some(e.clone()),
        Ok(f) if f.status == FitStatus::Rejected => {
            Some(Error::Fit(format!("log-residual {:e} exceeds the acceptance limit", f.residual)))
        }
        Ok(_) => None,
    };
    let decay = csv("delay_s,value", curve.delays.iter().zip(&curve.values).map(|(t, v)| format!("{t:e},{v:e}")));
    Ok((vec![artifact("decay.csv", decay), artifact("fit.txt", fit_report(&curve.fit))], failure))
}

/// Least-squares slope of `log d` against `log t_c`.
pub fn loglog_slope(tc: &[f64], d: &[f64]) -> f64 {
    let x: Vec<f64> = tc.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = d.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn exp_ahtcheck(cfg: &RunConfig, system: &SpinSystem, report: &mut Report) -> Result<Vec<Artifact>> {
    let tcs = cfg.aht_cycle_times();
    let mut rows = Vec::new();
    report.kv("channel", &cfg.aht_channel);
    for cycle in cfg.aht_cycles.cycles() {
        let d = tcs.iter().map(|&tc| avg_hamiltonian_check(system, &cfg.aht_channel, cycle, tc)).collect::<Result<Vec<_>>>()?;
        for (tc, v) in tcs.iter().zip(&d) {
            rows.push(format!("{cycle},{tc:e},{v:e}"));
        }
        if tcs.len() > 1 {
            report.num(&format!("slope_{cycle}"), loglog_slope(&tcs, &d));
        }
        report.num(&format!("deviation_{cycle}_min_tc"), d[0]);
    }
    if cfg.aht_cycles.cycles().len() == 2 {
        let u8 = cycle_unitary(system, &cfg.aht_channel, crate::sequence::Cycle::Eight, tcs[0], 0.0)?;
        let u16 = cycle_unitary(system, &cfg.aht_channel, crate::sequence::Cycle::Sixteen, tcs[0], 0.0)?;
        report.num("cross_distance_min_tc", phase_aligned_distance(&u8, &u16));
    }
    Ok(vec![artifact("aht.csv", csv("cycle,tc_s,deviation", rows))])
}

/// Gnuplot script that plots the data files of `cfg`'s experiment.
pub fn plot_script(cfg: &RunConfig) -> String {
    let dir = cfg.output.display().to_string();
    let f = |name: &str| format!("'{}'", Path::new(&dir).join(name).display());
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\n");
    let spec = |s: &mut String, name: &str, title: &str| {
        let _ = writeln!(s, "set title '{title}'\nset xlabel 'frequency (Hz)'\nplot {} using 1:2 with lines\npause -1", f(name));
    };
    match cfg.experiment {
        Experiment::Run => {
            let _ = writeln!(s, "set xlabel 'coherence order'\nplot {} using 1:2 with boxes\npause -1", f("profile.csv"));
        }
        Experiment::Spectrum => spec(&mut s, "spectrum.csv", "spectrum"),
        Experiment::CatDemo => {
            for (name, title) in [("a_dd", "(a) dd"), ("b_uu", "(b) uu"), ("c_cat", "(c) cat"), ("d_return", "(d) after reversal")] {
                spec(&mut s, &format!("spectrum_{name}.csv"), title);
            }
            let _ = writeln!(s, "set title 'step E'\nset xlabel 'coherence order'\nplot {} using 1:2 with boxes\npause -1", f("profile_E.csv"));
        }
        Experiment::MqScan => {
            let _ = writeln!(s, "set xlabel 'coherence order'\nplot {} using 1:2 with boxes\npause -1", f("mq.csv"));
        }
        Experiment::Lifetime => {
            let _ = writeln!(s, "set logscale y\nset xlabel 'delay (s)'\nplot {} using 1:2 with linespoints\npause -1", f("decay.csv"));
        }
        Experiment::AhtCheck => {
            let _ = writeln!(
                s,
                "set logscale xy\nset xlabel 'cycle time (s)'\nplot {0} using (strcol(1) eq 'eight' ? $2 : 1/0):3 title 'eight' with linespoints, \\\n     {0} using (strcol(1) eq 'sixteen' ? $2 : 1/0):3 title 'sixteen' with linespoints\npause -1",
                f("aht.csv")
            );
        }
    }
    s
}

