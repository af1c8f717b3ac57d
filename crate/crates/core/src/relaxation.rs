//! Phenomenological relaxation: element-wise dephasing, per-spin T1 damping
//! toward the maximally mixed state, and the lifetime harness.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::dense;
use crate::error::{Error, Result};
use crate::measurement::{fit_exponential, ExpFit};
use crate::operator::SparseOperator;
use crate::protocol::Protocol;
use crate::sequence::{run_adjoint, run_final, PulseSequence, RunOptions};
use crate::spin_system::SpinSystem;
use crate::state::{check_dense_size, pseudopure, DensityMatrix, State, StateVector};

/// Longest free-evolution slice between relaxation half-steps (s).
pub const RELAX_SLICE: f64 = 50e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DephasingMode {
    /// Each spin dephases on its own: rate = Σ 1/T2 over flipped spins.
    #[default]
    Independent,
    /// Rate = Σ_c q_c² / T2_c with q_c the per-channel coherence order.
    Collective,
}

impl FromStr for DephasingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independent" => Ok(DephasingMode::Independent),
            "collective" => Ok(DephasingMode::Collective),
            _ => Err(Error::ConfigValue(format!("dephasing mode '{s}' (expected independent or collective)"))),
        }
    }
}

impl fmt::Display for DephasingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DephasingMode::Independent => "independent",
            DephasingMode::Collective => "collective",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTimes {
    pub label: String,
    pub t1: f64,
    pub t2: f64,
}

/// Per-channel T1/T2 (seconds, `f64::INFINITY` for none). Channels of a
/// system without an entry do not relax.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationModel {
    channels: Vec<ChannelTimes>,
    pub mode: DephasingMode,
}

fn labels_match(a: &str, b: &str) -> bool {
    let strip = |s: &str| s.trim_start_matches(|c: char| c.is_ascii_digit()).to_ascii_lowercase();
    a.eq_ignore_ascii_case(b) || strip(a) == strip(b)
}

impl Default for RelaxationModel {
    /// Measured times for ¹³C₆-benzene in a liquid crystal.
    fn default() -> Self {
        RelaxationModel {
            channels: vec![
                ChannelTimes { label: "1H".into(), t1: 1.7, t2: 0.25 },
                ChannelTimes { label: "13C".into(), t1: 2.5, t2: 0.26 },
            ],
            mode: DephasingMode::Independent,
        }
    }
}

impl RelaxationModel {
    pub fn new(channels: Vec<ChannelTimes>, mode: DephasingMode) -> Result<Self> {
        let m = RelaxationModel { channels, mode };
        m.validate()?;
        Ok(m)
    }

    /// No relaxation at all.
    pub fn none() -> Self {
        RelaxationModel { channels: Vec::new(), mode: DephasingMode::Independent }
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.channels {
            if !(c.t1 > 0.0) || !(c.t2 > 0.0) {
                return Err(Error::InvalidArgument(format!("relaxation times for {} must be positive", c.label)));
            }
            if c.t2 > 2.0 * c.t1 {
                return Err(Error::InvalidArgument(format!(
                    "T2 ({}) exceeds 2·T1 ({}) for {}",
                    c.t2, c.t1, c.label
                )));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> &[ChannelTimes] {
        &self.channels
    }

    fn entry_mut(&mut self, label: &str) -> &mut ChannelTimes {
        if let Some(k) = self.channels.iter().position(|c| labels_match(&c.label, label)) {
            return &mut self.channels[k];
        }
        self.channels.push(ChannelTimes { label: label.to_string(), t1: f64::INFINITY, t2: f64::INFINITY });
        self.channels.last_mut().unwrap()
    }

    pub fn set_t1(&mut self, label: &str, t1: f64) {
        self.entry_mut(label).t1 = t1;
    }

    pub fn set_t2(&mut self, label: &str, t2: f64) {
        self.entry_mut(label).t2 = t2;
    }

    pub fn times(&self, label: &str) -> (f64, f64) {
        self.channels
            .iter()
            .find(|c| labels_match(&c.label, label))
            .map(|c| (c.t1, c.t2))
            .unwrap_or((f64::INFINITY, f64::INFINITY))
    }

    /// `(1/T1, 1/T2)` per channel of `system`.
    pub fn channel_rates(&self, system: &SpinSystem) -> Vec<(f64, f64)> {
        system
            .channels()
            .iter()
            .map(|c| {
                let (t1, t2) = self.times(&c.label);
                (1.0 / t1, 1.0 / t2)
            })
            .collect()
    }

    fn with_t2_rates(&self, system: &SpinSystem, r2: impl Fn(usize, f64, f64) -> f64) -> RateTable {
        let per_channel: Vec<f64> = self.channel_rates(system).iter().enumerate().map(|(c, &(a, b))| r2(c, a, b)).collect();
        RateTable {
            mode: self.mode,
            spin: (0..system.n_spins()).map(|k| per_channel[system.channel_of(k)]).collect(),
            masks: (0..system.channels().len()).map(|c| system.channel_mask(c)).collect(),
            channel: per_channel,
        }
    }
}

/// Transverse rates resolved per spin and per channel.
struct RateTable {
    mode: DephasingMode,
    spin: Vec<f64>,
    channel: Vec<f64>,
    masks: Vec<usize>,
}

impl RateTable {
    fn rate(&self, r: usize, s: usize) -> f64 {
        match self.mode {
            DephasingMode::Independent => {
                let mut diff = r ^ s;
                let mut acc = 0.0;
                while diff != 0 {
                    acc += self.spin[diff.trailing_zeros() as usize];
                    diff &= diff - 1;
                }
                acc
            }
            DephasingMode::Collective => self
                .masks
                .iter()
                .zip(&self.channel)
                .map(|(&m, &g)| {
                    let q = (s & m).count_ones() as f64 - (r & m).count_ones() as f64;
                    if q == 0.0 {
                        0.0
                    } else {
                        q * q * g
                    }
                })
                .sum(),
        }
    }
}

/// Dephasing rate (1/s) of element `(r, s)`; zero on the diagonal.
pub fn dephase_rate(r: usize, s: usize, model: &RelaxationModel, system: &SpinSystem) -> f64 {
    model.with_t2_rates(system, |_, _, r2| r2).rate(r, s)
}

/// Lifetime of the element between the all-up and all-down states.
pub fn extreme_coherence_lifetime(model: &RelaxationModel, system: &SpinSystem) -> f64 {
    1.0 / dephase_rate(0, system.dim() - 1, model, system)
}

fn dense_of(rho: &DensityMatrix) -> Result<(usize, Vec<C64>)> {
    match rho.to_dense()? {
        DensityMatrix::Dense { n_spins, entries } => Ok((n_spins, entries)),
        DensityMatrix::Ensemble { .. } => unreachable!(),
    }
}

fn check_interval(dt: f64) -> Result<()> {
    if !(dt >= 0.0) {
        return Err(Error::InvalidArgument(format!("relaxation interval {dt} is negative")));
    }
    Ok(())
}

fn dephase_entries(entries: &mut [C64], d: usize, dt: f64, table: &RateTable) {
    for r in 0..d {
        for s in 0..d {
            if r != s {
                let k = table.rate(r, s);
                if k != 0.0 {
                    entries[r * d + s] *= (-k * dt).exp();
                }
            }
        }
    }
}

/// Multiplies every off-diagonal element by `exp(−rate·Δt)`. Ensembles are
/// materialized first (N ≤ 8).
pub fn apply_dephasing(rho: &DensityMatrix, dt: f64, model: &RelaxationModel, system: &SpinSystem) -> Result<DensityMatrix> {
    check_interval(dt)?;
    let (n, mut entries) = dense_of(rho)?;
    let table = model.with_t2_rates(system, |_, _, r2| r2);
    dephase_entries(&mut entries, 1 << n, dt, &table);
    Ok(DensityMatrix::Dense { n_spins: n, entries })
}

fn t1_entries(entries: &mut [C64], n: usize, dt: f64, spin_r1: &[f64]) {
    let d = 1usize << n;
    for (k, &r1) in spin_r1.iter().enumerate() {
        if r1 == 0.0 {
            continue;
        }
        let e = (-dt * r1).exp();
        let (keep, swap, coh) = ((1.0 + e) / 2.0, (1.0 - e) / 2.0, e.sqrt());
        let b = 1usize << k;
        for r0 in (0..d).filter(|r| r & b == 0) {
            let r1i = r0 | b;
            for s0 in (0..d).filter(|s| s & b == 0) {
                let s1 = s0 | b;
                let a = entries[r0 * d + s0];
                let z = entries[r1i * d + s1];
                entries[r0 * d + s0] = a * keep + z * swap;
                entries[r1i * d + s1] = a * swap + z * keep;
                entries[r0 * d + s1] *= coh;
                entries[r1i * d + s0] *= coh;
            }
        }
    }
}

/// Per-spin amplitude damping toward equal populations at rate 1/T1.
pub fn apply_t1(rho: &DensityMatrix, dt: f64, model: &RelaxationModel, system: &SpinSystem) -> Result<DensityMatrix> {
    check_interval(dt)?;
    check_dense_size(system.n_spins())?;
    let (n, mut entries) = dense_of(rho)?;
    let rates = model.channel_rates(system);
    let spin_r1: Vec<f64> = (0..n).map(|k| rates[system.channel_of(k)].0).collect();
    t1_entries(&mut entries, n, dt, &spin_r1);
    Ok(DensityMatrix::Dense { n_spins: n, entries })
}

/// T1 damping plus dephasing whose transverse rate already accounts for the
/// √e factor T1 applies to coherences, so the total single-spin transverse
/// rate is 1/T2 (independent mode).
fn relax_step(entries: &mut [C64], n: usize, dt: f64, spin_r1: &[f64], table: &RateTable) {
    t1_entries(entries, n, dt, spin_r1);
    dephase_entries(entries, 1 << n, dt, table);
}

/// Free evolution under `h` for `t` with relaxation, by symmetric splitting
/// into slices no longer than [`RELAX_SLICE`]. Dense path (N ≤ 8).
pub fn relax_interval(
    rho: &DensityMatrix,
    h: &SparseOperator,
    t: f64,
    model: &RelaxationModel,
    system: &SpinSystem,
) -> Result<DensityMatrix> {
    check_interval(t)?;
    check_dense_size(system.n_spins())?;
    let (n, mut entries) = dense_of(rho)?;
    if t == 0.0 {
        return Ok(DensityMatrix::Dense { n_spins: n, entries });
    }
    let rates = model.channel_rates(system);
    let spin_r1: Vec<f64> = (0..n).map(|k| rates[system.channel_of(k)].0).collect();
    let table = match model.mode {
        DephasingMode::Independent => model.with_t2_rates(system, |_, r1, r2| r2 - 0.5 * r1),
        DephasingMode::Collective => model.with_t2_rates(system, |_, _, r2| r2),
    };
    let slices = (t / RELAX_SLICE).ceil().max(1.0) as usize;
    let dt = t / slices as f64;
    let d = 1usize << n;
    let u = dense::eigh(h)?.unitary(dt);
    let ua = u.adjoint();
    relax_step(&mut entries, n, dt / 2.0, &spin_r1, &table);
    for k in 0..slices {
        let m = DMatrix::from_row_slice(d, d, &entries);
        let m = &u * m * &ua;
        for r in 0..d {
            for s in 0..d {
                entries[r * d + s] = m[(r, s)];
            }
        }
        let step = if k + 1 == slices { dt / 2.0 } else { dt };
        relax_step(&mut entries, n, step, &spin_r1, &table);
    }
    Ok(DensityMatrix::Dense { n_spins: n, entries })
}

/// Compact form of a dephased pure state, `ρ_rs = ψ_r ψ_s* exp(−rate(r,s)·t)`,
/// for clusters too large for dense matrices. T1 is not represented.
#[derive(Debug, Clone)]
pub struct DephasedPure<'a> {
    pub psi: StateVector,
    pub t: f64,
    model: &'a RelaxationModel,
    system: &'a SpinSystem,
}

impl<'a> DephasedPure<'a> {
    pub fn new(psi: StateVector, t: f64, model: &'a RelaxationModel, system: &'a SpinSystem) -> Result<Self> {
        check_interval(t)?;
        if psi.n_spins() != system.n_spins() {
            return Err(Error::Dimension("state and system sizes differ".into()));
        }
        Ok(DephasedPure { psi, t, model, system })
    }

    pub fn entry(&self, r: usize, s: usize) -> C64 {
        let a = self.psi.amplitudes();
        a[r] * a[s].conj() * (-dephase_rate(r, s, self.model, self.system) * self.t).exp()
    }

    /// `⟨φ|ρ|φ⟩`
    pub fn expectation(&self, phi: &StateVector) -> f64 {
        let a: Vec<C64> = phi.amplitudes().iter().zip(self.psi.amplitudes()).map(|(p, x)| p.conj() * x).collect();
        let rates = self.model.channel_rates(self.system);
        match self.model.mode {
            DephasingMode::Independent => {
                let mut w: Vec<C64> = a.iter().map(|x| x.conj()).collect();
                for k in 0..self.system.n_spins() {
                    let e = (-self.t * rates[self.system.channel_of(k)].1).exp();
                    let b = 1usize << k;
                    for r in (0..w.len()).filter(|r| r & b == 0) {
                        let (x, y) = (w[r], w[r | b]);
                        w[r] = x + y * e;
                        w[r | b] = x * e + y;
                    }
                }
                a.iter().zip(&w).map(|(x, y)| x * y).sum::<C64>().re
            }
            DephasingMode::Collective => {
                let masks: Vec<usize> = (0..rates.len()).map(|c| self.system.channel_mask(c)).collect();
                let radix: Vec<usize> = masks.iter().map(|m| m.count_ones() as usize + 1).collect();
                let n_sectors: usize = radix.iter().product();
                let key_of = |r: usize| {
                    masks.iter().zip(&radix).rev().fold(0usize, |acc, (m, rad)| acc * rad + (r & m).count_ones() as usize)
                };
                let mut sums = vec![C64::new(0.0, 0.0); n_sectors];
                for (r, x) in a.iter().enumerate() {
                    sums[key_of(r)] += x;
                }
                let decode = |mut k: usize| -> Vec<f64> {
                    radix
                        .iter()
                        .map(|rad| {
                            let v = (k % rad) as f64;
                            k /= rad;
                            v
                        })
                        .collect()
                };
                let coords: Vec<Vec<f64>> = (0..n_sectors).map(decode).collect();
                let mut f = 0.0;
                for i in 0..n_sectors {
                    for j in 0..n_sectors {
                        if sums[i].norm() == 0.0 || sums[j].norm() == 0.0 {
                            continue;
                        }
                        let rate: f64 = coords[i]
                            .iter()
                            .zip(&coords[j])
                            .zip(&rates)
                            .map(|((x, y), (_, g))| if x == y { 0.0 } else { (x - y) * (x - y) * g })
                            .sum();
                        f += (sums[i] * sums[j].conj()).re * (-rate * self.t).exp();
                    }
                }
                f
            }
        }
    }
}

/// Quantity recorded by [`lifetime_experiment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    /// Round-trip contrast `2F − 1` after steps B–E, the delay, then G–J.
    CatCoherence,
    /// `P(all up) + P(all down) − 2/2^N` right after the delay.
    CatDiagonal,
    /// Round-trip contrast of the proton multiple-quantum coherence made by
    /// step C alone.
    SixQ,
}

impl FromStr for Observable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cat_coherence" => Ok(Observable::CatCoherence),
            "cat_diagonal" => Ok(Observable::CatDiagonal),
            "six_q" => Ok(Observable::SixQ),
            _ => Err(Error::ConfigValue(format!(
                "observable '{s}' (expected cat_coherence, cat_diagonal or six_q)"
            ))),
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Observable::CatCoherence => "cat_coherence",
            Observable::CatDiagonal => "cat_diagonal",
            Observable::SixQ => "six_q",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    pub observable: Observable,
    pub delays: Vec<f64>,
    pub values: Vec<f64>,
    pub fit: Result<ExpFit>,
    /// True when the compact (T1-free) path was used.
    pub compact: bool,
}

/// Runs the preparation, a relaxation delay and (for round-trip observables)
/// the reversal for each delay, then fits a single exponential.
///
/// Clusters of at most 8 spins use the dense path with free evolution, T1
/// and dephasing; larger ones use [`DephasedPure`] (free evolution, then
/// dephasing; no T1). Values are corrected for the pseudopure identity part,
/// so `purity` does not change them.
pub fn lifetime_experiment(
    protocol: &Protocol,
    model: &RelaxationModel,
    delays: &[f64],
    observable: Observable,
    purity: f64,
) -> Result<DecayCurve> {
    if delays.len() < 3 {
        return Err(Error::InvalidArgument(format!("lifetime needs at least 3 delays, got {}", delays.len())));
    }
    delays.iter().try_for_each(|&t| check_interval(t))?;
    model.validate()?;
    let system = protocol.system();
    let (prep, reverse) = match observable {
        Observable::CatCoherence | Observable::CatDiagonal => (protocol.segment("BCDE"), protocol.segment("GHIJ")),
        Observable::SixQ => (protocol.segment("C"), protocol.segment("I")),
    };
    let a = protocol.initial_state();
    let d = system.dim();
    let top = d - 1;
    let compact = system.n_spins() > dense::DENSE_MAX_SPINS;
    let values: Vec<f64> = if compact {
        let prepared = run_final(&prep, &State::Pure(a.clone()), system, RunOptions::default())?;
        let prepared = prepared.as_pure().expect("unitary preparation keeps purity").clone();
        let phi = run_adjoint(&reverse, a, system)?;
        let free = PulseSequence::new("F", vec![crate::sequence::PulseEvent::Delay(0.0)]);
        delays
            .iter()
            .map(|&t| {
                let mut seq = free.clone();
                seq.events[0] = crate::sequence::PulseEvent::Delay(t);
                let evolved = run_final(&seq, &State::Pure(prepared.clone()), system, RunOptions::default())?;
                let rho = DephasedPure::new(evolved.as_pure().unwrap().clone(), t, model, system)?;
                Ok(match observable {
                    Observable::CatDiagonal => {
                        rho.entry(0, 0).re + rho.entry(top, top).re - 2.0 / d as f64
                    }
                    _ => 2.0 * rho.expectation(&phi) - 1.0,
                })
            })
            .collect::<Result<_>>()?
    } else {
        let rho0 = State::Mixed(pseudopure(a, purity)?.to_dense()?);
        let prepared = run_final(&prep, &rho0, system, RunOptions::default())?;
        let h = system.free_hamiltonian();
        let mixed = (1.0 - purity) / d as f64;
        delays
            .iter()
            .map(|&t| {
                let rho = relax_interval(prepared.as_mixed().unwrap(), &h, t, model, system)?;
                Ok(match observable {
                    Observable::CatDiagonal => {
                        let p = rho.entry(0, 0).re + rho.entry(top, top).re;
                        (p - 2.0 * mixed) / purity - 2.0 / d as f64
                    }
                    _ => {
                        let back = run_final(&reverse, &State::Mixed(rho), system, RunOptions::default())?;
                        let f = back.entry(protocol.initial_index(), protocol.initial_index()).re;
                        2.0 * (f - mixed) / purity - 1.0
                    }
                })
            })
            .collect::<Result<_>>()?
    };
    let fit = fit_exponential(delays, &values);
    Ok(DecayCurve { observable, delays: delays.to_vec(), values, fit, compact })
}
