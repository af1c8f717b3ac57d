//! Pulse sequences: events, text format, execution, time reversal and the
//! double-quantum multipulse cycles.
//!
//! Double-quantum trains use the event phase `φ` to mean an average
//! Hamiltonian `H_DQ(−2φ)`, i.e. phase 0 gives `+H_DQ`. The radio-frequency
//! phase of the cycle pulses is `φ + π/2`.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::coherence::crush_state;
use crate::dense;
use crate::error::{Error, Result};
use crate::operator::SparseOperator;
use crate::relaxation::{relax_interval, RelaxationModel};
use crate::spin_system::SpinSystem;
use crate::state::{check_state_system, conjugate_density, Label, State, StateVector, Unitary};

/// Shortest allowed spacing between cycle pulses (s).
pub const MIN_PULSE_SPACING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cycle {
    Eight,
    Sixteen,
}

impl Cycle {
    pub fn n_pulses(self) -> usize {
        match self {
            Cycle::Eight => 8,
            Cycle::Sixteen => 16,
        }
    }

    /// `(delay before the pulse in units of t_c, phase offset)` per pulse,
    /// followed by the trailing delay.
    pub fn pattern(self) -> (Vec<(f64, f64)>, f64) {
        const EIGHT_DELAYS: [f64; 8] = [0.5, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        const EIGHT_PHASES: [f64; 8] = [0.0, 0.0, PI, PI, PI, PI, 0.0, 0.0];
        match self {
            Cycle::Eight => {
                let d = 1.0 / 12.0;
                (EIGHT_DELAYS.iter().zip(EIGHT_PHASES).map(|(&x, p)| (x * d, p)).collect(), 0.5 * d)
            }
            Cycle::Sixteen => {
                let d = 1.0 / 24.0;
                let mut out: Vec<(f64, f64)> = EIGHT_DELAYS.iter().zip(EIGHT_PHASES).map(|(&x, p)| (x * d, p)).collect();
                for (k, (&x, p)) in EIGHT_DELAYS.iter().zip(EIGHT_PHASES).enumerate() {
                    let x = if k == 0 { 1.0 } else { x };
                    out.push((x * d, p + PI));
                }
                (out, 0.5 * d)
            }
        }
    }
}

impl FromStr for Cycle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eight" | "8" => Ok(Cycle::Eight),
            "sixteen" | "16" => Ok(Cycle::Sixteen),
            _ => Err(Error::InvalidArgument(format!("unknown cycle '{s}' (expected eight or sixteen)"))),
        }
    }
}

impl fmt::Display for Cycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cycle::Eight => "eight",
            Cycle::Sixteen => "sixteen",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PulseEvent {
    HardPulse { channel: String, angle: f64, phase: f64 },
    Delay(f64),
    /// Evolution under the negated free Hamiltonian. Not physical; used to
    /// undo a `Delay` in ideal runs.
    ReversedDelay(f64),
    EffectiveDq { channel: String, duration: f64, sign: i8 },
    PulseTrainDq { channel: String, cycle: Cycle, n_cycles: usize, cycle_time: f64, phase: f64 },
    /// Ideal rotation between the all-up and all-down states of a channel.
    MqTransfer { channel: String, angle: f64, phase: f64 },
    /// Collective z rotation; `None` acts on every spin.
    ZRotation { channel: Option<String>, angle: f64 },
    Crusher(BTreeSet<i32>),
    RelaxDelay(f64),
}

impl PulseEvent {
    pub fn duration(&self) -> f64 {
        match self {
            PulseEvent::Delay(t) | PulseEvent::ReversedDelay(t) | PulseEvent::RelaxDelay(t) => *t,
            PulseEvent::EffectiveDq { duration, .. } => *duration,
            PulseEvent::PulseTrainDq { n_cycles, cycle_time, .. } => *n_cycles as f64 * cycle_time,
            _ => 0.0,
        }
    }

    pub fn pulse_count(&self) -> usize {
        match self {
            PulseEvent::HardPulse { .. } | PulseEvent::MqTransfer { .. } => 1,
            PulseEvent::PulseTrainDq { cycle, n_cycles, .. } => cycle.n_pulses() * n_cycles,
            _ => 0,
        }
    }

    pub fn is_reversible(&self) -> bool {
        !matches!(self, PulseEvent::Crusher(_) | PulseEvent::RelaxDelay(_))
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            PulseEvent::Delay(t) | PulseEvent::ReversedDelay(t) | PulseEvent::RelaxDelay(t) if !(*t >= 0.0 && t.is_finite()) => {
                bad(format!("negative or non-finite duration {t}"))
            }
            PulseEvent::EffectiveDq { duration, sign, .. } => {
                if !(*duration >= 0.0 && duration.is_finite()) {
                    bad(format!("negative duration {duration}"))
                } else if *sign != 1 && *sign != -1 {
                    bad(format!("dq sign must be ±1, got {sign}"))
                } else {
                    Ok(())
                }
            }
            PulseEvent::PulseTrainDq { cycle, n_cycles, cycle_time, .. } => {
                if *n_cycles < 1 {
                    bad("pulse train needs at least one cycle".into())
                } else if !(*cycle_time >= cycle.n_pulses() as f64 * MIN_PULSE_SPACING) {
                    bad(format!(
                        "cycle time {cycle_time} s shorter than {} pulses × {MIN_PULSE_SPACING} s",
                        cycle.n_pulses()
                    ))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Shortest decimal degree string that maps back to exactly `rad`.
fn degrees_text(rad: f64) -> String {
    let deg = rad.to_degrees();
    for p in 0..=17 {
        let s = format!("{deg:.p$}");
        if s.parse::<f64>().map(|d| d.to_radians() == rad).unwrap_or(false) {
            return s;
        }
    }
    format!("{rad:e}rad")
}

fn parse_angle(s: &str) -> std::result::Result<f64, String> {
    if let Some(r) = s.strip_suffix("rad") {
        r.parse::<f64>().map_err(|_| format!("bad angle '{s}'"))
    } else {
        s.parse::<f64>().map(f64::to_radians).map_err(|_| format!("bad angle '{s}'"))
    }
}

impl fmt::Display for PulseEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PulseEvent::HardPulse { channel, angle, phase } => {
                write!(f, "pulse {channel} {} {}", degrees_text(*angle), degrees_text(*phase))
            }
            PulseEvent::Delay(t) => write!(f, "delay {t:e}"),
            PulseEvent::ReversedDelay(t) => write!(f, "rdelay {t:e}"),
            PulseEvent::EffectiveDq { channel, duration, sign } => {
                write!(f, "dq {channel} {duration:e} {}", if *sign > 0 { "+" } else { "-" })
            }
            PulseEvent::PulseTrainDq { channel, cycle, n_cycles, cycle_time, phase } => {
                write!(f, "dqtrain {channel} {cycle} {n_cycles} {cycle_time:e} {}", degrees_text(*phase))
            }
            PulseEvent::MqTransfer { channel, angle, phase } => {
                write!(f, "mq {channel} {} {}", degrees_text(*angle), degrees_text(*phase))
            }
            PulseEvent::ZRotation { channel, angle } => {
                write!(f, "zrot {} {}", channel.as_deref().unwrap_or("all"), degrees_text(*angle))
            }
            PulseEvent::Crusher(set) => {
                let items: Vec<String> = set.iter().map(|q| q.to_string()).collect();
                write!(f, "crush {}", items.join(","))
            }
            PulseEvent::RelaxDelay(t) => write!(f, "relax {t:e}"),
        }
    }
}

/// Parses one sequence line (comments already stripped, non-empty).
pub fn parse_event(line: &str) -> std::result::Result<PulseEvent, String> {
    let tok: Vec<&str> = line.split_whitespace().collect();
    let key = tok[0].to_ascii_lowercase();
    let want = |n: usize| -> std::result::Result<(), String> {
        if tok.len() != n + 1 {
            Err(format!("'{key}' takes {n} argument(s), got {}", tok.len() - 1))
        } else {
            Ok(())
        }
    };
    let num = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number '{s}'"));
    let ev = match key.as_str() {
        "pulse" => {
            want(3)?;
            PulseEvent::HardPulse { channel: tok[1].to_string(), angle: parse_angle(tok[2])?, phase: parse_angle(tok[3])? }
        }
        "mq" => {
            want(3)?;
            PulseEvent::MqTransfer { channel: tok[1].to_string(), angle: parse_angle(tok[2])?, phase: parse_angle(tok[3])? }
        }
        "delay" => {
            want(1)?;
            PulseEvent::Delay(num(tok[1])?)
        }
        "rdelay" => {
            want(1)?;
            PulseEvent::ReversedDelay(num(tok[1])?)
        }
        "relax" => {
            want(1)?;
            PulseEvent::RelaxDelay(num(tok[1])?)
        }
        "dq" => {
            want(3)?;
            let sign = match tok[3] {
                "+" | "+1" => 1,
                "-" | "-1" => -1,
                s => return Err(format!("dq sign must be + or -, got '{s}'")),
            };
            PulseEvent::EffectiveDq { channel: tok[1].to_string(), duration: num(tok[2])?, sign }
        }
        "dqtrain" => {
            want(5)?;
            PulseEvent::PulseTrainDq {
                channel: tok[1].to_string(),
                cycle: tok[2].parse().map_err(|e: Error| e.to_string())?,
                n_cycles: tok[3].parse().map_err(|_| format!("bad cycle count '{}'", tok[3]))?,
                cycle_time: num(tok[4])?,
                phase: parse_angle(tok[5])?,
            }
        }
        "zrot" => {
            want(2)?;
            let channel = if tok[1].eq_ignore_ascii_case("all") { None } else { Some(tok[1].to_string()) };
            PulseEvent::ZRotation { channel, angle: parse_angle(tok[2])? }
        }
        "crush" => {
            want(1)?;
            let set = tok[1]
                .split(',')
                .map(|q| q.trim().parse::<i32>().map_err(|_| format!("bad coherence order '{q}'")))
                .collect::<std::result::Result<BTreeSet<i32>, String>>()?;
            PulseEvent::Crusher(set)
        }
        _ => return Err(format!("unknown sequence keyword '{}'", tok[0])),
    };
    ev.validate().map_err(|e| e.to_string())?;
    Ok(ev)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PulseSequence {
    pub name: String,
    pub events: Vec<PulseEvent>,
}

impl PulseSequence {
    pub fn new(name: &str, events: Vec<PulseEvent>) -> Self {
        PulseSequence { name: name.to_string(), events }
    }

    pub fn empty(name: &str) -> Self {
        Self::new(name, Vec::new())
    }

    pub fn duration(&self) -> f64 {
        self.events.iter().map(PulseEvent::duration).sum()
    }

    pub fn pulse_count(&self) -> usize {
        self.events.iter().map(PulseEvent::pulse_count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Concatenation of several sequences.
    pub fn concat(name: &str, parts: &[&PulseSequence]) -> Self {
        Self::new(name, parts.iter().flat_map(|p| p.events.iter().cloned()).collect())
    }

    /// Parses the line-oriented text format; errors carry the line number.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut events = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            events.push(parse_event(line).map_err(|message| Error::Config { line: k + 1, message })?);
        }
        Ok(Self::new(name, events))
    }

    pub fn to_text(&self) -> String {
        self.events.iter().map(|e| format!("{e}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.events.iter().try_for_each(PulseEvent::validate)
    }
}

/// How `time_reverse` treats free-evolution delays.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum DelayPolicy {
    #[default]
    Reject,
    /// Replace by evolution under the negated free Hamiltonian.
    Privileged,
    /// Sandwich the delay between π pulses on the named channel, which
    /// refocuses the heteronuclear and offset phases.
    Echo { channel: String },
}

/// Sequence whose propagator undoes that of `seq` (to the order the events
/// allow): reversed order, hard pulses and ideal transfers phase-shifted by
/// π, DQ signs flipped, trains phase-shifted by π/2, delays per `policy`.
pub fn time_reverse(seq: &PulseSequence, policy: &DelayPolicy) -> Result<PulseSequence> {
    let mut out = Vec::new();
    for ev in seq.events.iter().rev() {
        match ev {
            PulseEvent::HardPulse { channel, angle, phase } => {
                out.push(PulseEvent::HardPulse { channel: channel.clone(), angle: *angle, phase: phase + PI })
            }
            PulseEvent::MqTransfer { channel, angle, phase } => {
                out.push(PulseEvent::MqTransfer { channel: channel.clone(), angle: *angle, phase: phase + PI })
            }
            PulseEvent::EffectiveDq { channel, duration, sign } => {
                out.push(PulseEvent::EffectiveDq { channel: channel.clone(), duration: *duration, sign: -sign })
            }
            PulseEvent::PulseTrainDq { channel, cycle, n_cycles, cycle_time, phase } => out.push(PulseEvent::PulseTrainDq {
                channel: channel.clone(),
                cycle: *cycle,
                n_cycles: *n_cycles,
                cycle_time: *cycle_time,
                phase: phase + FRAC_PI_2,
            }),
            PulseEvent::ZRotation { channel, angle } => {
                out.push(PulseEvent::ZRotation { channel: channel.clone(), angle: -angle })
            }
            PulseEvent::ReversedDelay(t) => out.push(PulseEvent::Delay(*t)),
            PulseEvent::Delay(t) => match policy {
                DelayPolicy::Reject => {
                    return Err(Error::Irreversible(format!("free evolution 'delay {t:e}' (choose a delay policy)")))
                }
                DelayPolicy::Privileged => out.push(PulseEvent::ReversedDelay(*t)),
                DelayPolicy::Echo { channel } => {
                    out.push(PulseEvent::HardPulse { channel: channel.clone(), angle: PI, phase: 0.0 });
                    out.push(PulseEvent::Delay(*t));
                    out.push(PulseEvent::HardPulse { channel: channel.clone(), angle: PI, phase: PI });
                }
            },
            PulseEvent::Crusher(_) | PulseEvent::RelaxDelay(_) => {
                return Err(Error::Irreversible(ev.to_string()));
            }
        }
    }
    Ok(PulseSequence::new(&format!("{}~", seq.name), out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Prim {
    Free(f64),
    Dq { channel: usize, t: f64 },
    Rot { mask: usize, angle: f64, phase: f64 },
    Extreme { mask: usize, angle: f64, phase: f64 },
    Z { mask: usize, angle: f64 },
}

impl Prim {
    fn inverse(self) -> Prim {
        match self {
            Prim::Free(t) => Prim::Free(-t),
            Prim::Dq { channel, t } => Prim::Dq { channel, t: -t },
            Prim::Rot { mask, angle, phase } => Prim::Rot { mask, angle: -angle, phase },
            Prim::Extreme { mask, angle, phase } => Prim::Extreme { mask, angle: -angle, phase },
            Prim::Z { mask, angle } => Prim::Z { mask, angle: -angle },
        }
    }
}

/// Unitary part of one event: `prims` applied in order, `repeat` times.
#[derive(Debug, Clone)]
struct Block {
    prims: Vec<Prim>,
    repeat: usize,
}

impl Block {
    fn inverse(&self) -> Block {
        Block { prims: self.prims.iter().rev().map(|p| p.inverse()).collect(), repeat: self.repeat }
    }
}

fn compile(ev: &PulseEvent, system: &SpinSystem) -> Result<Option<Block>> {
    let ch = |label: &str| system.channel_index(label);
    let one = |p: Prim| Ok(Some(Block { prims: vec![p], repeat: 1 }));
    match ev {
        PulseEvent::HardPulse { channel, angle, phase } => {
            one(Prim::Rot { mask: system.channel_mask(ch(channel)?), angle: *angle, phase: *phase })
        }
        PulseEvent::MqTransfer { channel, angle, phase } => {
            one(Prim::Extreme { mask: system.channel_mask(ch(channel)?), angle: *angle, phase: *phase })
        }
        PulseEvent::ZRotation { channel, angle } => {
            let mask = match channel {
                Some(c) => system.channel_mask(ch(c)?),
                None => system.dim() - 1,
            };
            one(Prim::Z { mask, angle: *angle })
        }
        PulseEvent::Delay(t) => one(Prim::Free(*t)),
        PulseEvent::ReversedDelay(t) => one(Prim::Free(-t)),
        PulseEvent::EffectiveDq { channel, duration, sign } => {
            one(Prim::Dq { channel: ch(channel)?, t: *duration * *sign as f64 })
        }
        PulseEvent::PulseTrainDq { channel, cycle, n_cycles, cycle_time, phase } => {
            ev.validate()?;
            let mask = system.channel_mask(ch(channel)?);
            let (pattern, tail) = cycle.pattern();
            let mut prims = Vec::with_capacity(2 * pattern.len() + 1);
            for (d, off) in pattern {
                prims.push(Prim::Free(d * cycle_time));
                prims.push(Prim::Rot { mask, angle: FRAC_PI_2, phase: phase + FRAC_PI_2 + off });
            }
            prims.push(Prim::Free(tail * cycle_time));
            Ok(Some(Block { prims, repeat: *n_cycles }))
        }
        PulseEvent::Crusher(_) | PulseEvent::RelaxDelay(_) => Ok(None),
    }
}

/// Holds the operators the compiled blocks borrow.
struct Operators {
    free: SparseOperator,
    dq: HashMap<usize, SparseOperator>,
}

impl Operators {
    fn new(system: &SpinSystem, blocks: &[&Block]) -> Result<Self> {
        let mut dq = HashMap::new();
        for b in blocks {
            for p in &b.prims {
                if let Prim::Dq { channel, .. } = p {
                    if let std::collections::hash_map::Entry::Vacant(e) = dq.entry(*channel) {
                        e.insert(system.dq_hamiltonian(*channel)?);
                    }
                }
            }
        }
        Ok(Operators { free: system.free_hamiltonian(), dq })
    }

    fn realize<'a>(&'a self, block: &Block) -> impl Fn(&mut [C64]) + Sync + 'a {
        let steps: Vec<Box<dyn Fn(&mut [C64]) + Sync + 'a>> = block
            .prims
            .iter()
            .map(|p| match *p {
                Prim::Free(t) => Unitary::Evolve { h: &self.free, t }.applier(),
                Prim::Dq { channel, t } => Unitary::Evolve { h: &self.dq[&channel], t }.applier(),
                Prim::Rot { mask, angle, phase } => Unitary::Rotation { mask, angle, phase }.applier(),
                Prim::Extreme { mask, angle, phase } => Unitary::ExtremeRotation { mask, angle, phase }.applier(),
                Prim::Z { mask, angle } => Unitary::ZRotation { mask, angle }.applier(),
            })
            .collect();
        let repeat = block.repeat;
        move |v: &mut [C64]| {
            for _ in 0..repeat {
                for s in &steps {
                    s(v);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions<'a> {
    /// Allow crushers and relaxation delays to turn pure states into density
    /// matrices.
    pub promote: bool,
    pub relaxation: Option<&'a RelaxationModel>,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        RunOptions { promote: true, relaxation: None }
    }
}

/// Applies the events in order and returns the state after each one,
/// starting with the initial state.
pub fn run(seq: &PulseSequence, initial: &State, system: &SpinSystem, opts: RunOptions<'_>) -> Result<Vec<State>> {
    check_state_system(initial, system)?;
    seq.validate()?;
    let blocks = seq.events.iter().map(|e| compile(e, system)).collect::<Result<Vec<_>>>()?;
    let ops = Operators::new(system, &blocks.iter().flatten().collect::<Vec<_>>())?;
    let mut traj = Vec::with_capacity(seq.events.len() + 1);
    traj.push(initial.clone());
    let mut cur = initial.clone();
    for (ev, block) in seq.events.iter().zip(&blocks) {
        cur = match (ev, block) {
            (_, Some(b)) => act(&cur, &ops.realize(b)),
            (PulseEvent::Crusher(retain), None) => {
                if matches!(cur, State::Pure(_)) && !opts.promote {
                    return Err(Error::InvalidArgument("crusher on a pure state with promotion disabled".into()));
                }
                crush_state(&cur, retain)?
            }
            (PulseEvent::RelaxDelay(t), None) => match opts.relaxation {
                None => act(&cur, &Unitary::Evolve { h: &ops.free, t: *t }.applier()),
                Some(_) if *t == 0.0 => cur,
                Some(model) => {
                    if matches!(cur, State::Pure(_)) && !opts.promote {
                        return Err(Error::InvalidArgument(
                            "relaxation delay on a pure state with promotion disabled".into(),
                        ));
                    }
                    State::Mixed(relax_interval(&cur.to_density(), &ops.free, *t, model, system)?)
                }
            },
            _ => unreachable!("only crushers and relaxation delays lack a unitary block"),
        };
        traj.push(cur.clone());
    }
    Ok(traj)
}

/// Final state of [`run`].
pub fn run_final(seq: &PulseSequence, initial: &State, system: &SpinSystem, opts: RunOptions<'_>) -> Result<State> {
    Ok(run(seq, initial, system, opts)?.pop().expect("trajectory is never empty"))
}

fn act(state: &State, f: &(dyn Fn(&mut [C64]) + Sync)) -> State {
    match state {
        State::Pure(v) => {
            let mut out = v.clone();
            f(out.amplitudes_mut());
            State::Pure(out)
        }
        State::Mixed(rho) => State::Mixed(conjugate_density(rho, f)),
    }
}

fn compile_unitary(seq: &PulseSequence, system: &SpinSystem) -> Result<Vec<Block>> {
    seq.validate()?;
    seq.events
        .iter()
        .map(|e| compile(e, system)?.ok_or_else(|| Error::Irreversible(e.to_string())))
        .collect()
}

/// Exact adjoint: `U†|ψ⟩` for the propagator `U` of a unitary sequence.
pub fn run_adjoint(seq: &PulseSequence, psi: &StateVector, system: &SpinSystem) -> Result<StateVector> {
    check_state_system(&State::Pure(psi.clone()), system)?;
    let blocks: Vec<Block> = compile_unitary(seq, system)?.iter().rev().map(Block::inverse).collect();
    let ops = Operators::new(system, &blocks.iter().collect::<Vec<_>>())?;
    let mut out = psi.clone();
    for b in &blocks {
        ops.realize(b)(out.amplitudes_mut());
    }
    Ok(out)
}

/// Reusable propagator of a unitary sequence acting on vectors.
pub struct CompiledSequence {
    blocks: Vec<Block>,
    ops: Operators,
}

impl CompiledSequence {
    pub fn new(seq: &PulseSequence, system: &SpinSystem) -> Result<Self> {
        let blocks = compile_unitary(seq, system)?;
        let ops = Operators::new(system, &blocks.iter().collect::<Vec<_>>())?;
        Ok(CompiledSequence { blocks, ops })
    }

    pub fn apply(&self, v: &mut [C64]) {
        for b in &self.blocks {
            self.ops.realize(b)(v);
        }
    }

    pub fn apply_adjoint(&self, v: &mut [C64]) {
        for b in self.blocks.iter().rev() {
            self.ops.realize(&b.inverse())(v);
        }
    }
}

/// Dense propagator of a unitary sequence (N ≤ 8).
pub fn sequence_unitary(seq: &PulseSequence, system: &SpinSystem) -> Result<DMatrix<C64>> {
    crate::state::check_dense_size(system.n_spins())?;
    let compiled = CompiledSequence::new(seq, system)?;
    let d = system.dim();
    let mut u = DMatrix::<C64>::zeros(d, d);
    let mut col = vec![C64::new(0.0, 0.0); d];
    for j in 0..d {
        col.iter_mut().for_each(|c| *c = C64::new(0.0, 0.0));
        col[j] = C64::new(1.0, 0.0);
        compiled.apply(&mut col);
        for i in 0..d {
            u[(i, j)] = col[i];
        }
    }
    Ok(u)
}

/// `‖A − e^{iα}B‖_F / ‖B‖_F` minimized over the global phase `α`.
pub fn phase_aligned_distance(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    let overlap: C64 = b.iter().zip(a.iter()).map(|(x, y)| x.conj() * y).sum();
    let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { C64::new(1.0, 0.0) };
    let num: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y * phase).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

/// Dense propagator of one DQ cycle on `channel` (N ≤ 8).
pub fn cycle_unitary(system: &SpinSystem, channel: &str, cycle: Cycle, cycle_time: f64, phase: f64) -> Result<DMatrix<C64>> {
    let ev = PulseEvent::PulseTrainDq { channel: channel.to_string(), cycle, n_cycles: 1, cycle_time, phase };
    sequence_unitary(&PulseSequence::new("cycle", vec![ev]), system)
}

/// Phase-aligned relative Frobenius distance between one cycle's propagator
/// and `exp(−i H_DQ t_c)` on `channel`.
pub fn avg_hamiltonian_check(system: &SpinSystem, channel: &str, cycle: Cycle, cycle_time: f64) -> Result<f64> {
    let c = system.channel_index(channel)?;
    let u = cycle_unitary(system, channel, cycle, cycle_time, 0.0)?;
    let target = dense::eigh(&system.dq_hamiltonian(c)?)?.unitary(cycle_time);
    Ok(phase_aligned_distance(&u, &target))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub duration: f64,
    /// `(|a_u| + |a_d|)² / 2`, the overlap with the best-phased equal
    /// superposition of the two extreme states.
    pub fidelity: f64,
}

/// Finds the earliest evolution time under `H_DQ` of `channel` that turns
/// the extreme state `source` into the closest approach to an equal
/// superposition of both extreme states (relative phase free). A uniform
/// grid of `grid` points on `[0, 2/max d]` is followed by two 10× local
/// refinements.
pub fn calibrate_dq_duration(system: &SpinSystem, channel: &str, source: Label, grid: usize) -> Result<Calibration> {
    let c = system.channel_index(channel)?;
    let sub = system.channel_subsystem(c)?;
    let n = sub.n_spins();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("channel {channel} has fewer than two spins")));
    }
    if grid < 3 {
        return Err(Error::InvalidArgument("calibration grid needs at least 3 points".into()));
    }
    let dmax = sub.couplings().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if dmax == 0.0 {
        return Err(Error::InvalidArgument(format!("channel {channel} has no homonuclear couplings")));
    }
    let h = sub.dq_hamiltonian(0)?;
    let d = sub.dim();
    let (iu, id) = (0usize, d - 1);
    let start = if source == Label::U { iu } else { id };
    let mut v0 = vec![C64::new(0.0, 0.0); d];
    v0[start] = C64::new(1.0, 0.0);
    let score = |v: &[C64]| (v[iu].norm() + v[id].norm()).powi(2) / 2.0;
    let eval: Box<dyn Fn(f64) -> f64> = if n <= dense::DENSE_MAX_SPINS {
        let eig = dense::eigh(&h)?;
        let v0 = v0.clone();
        Box::new(move |t| score(&eig.propagate(&v0, t)))
    } else {
        let v0 = v0.clone();
        let h = h.clone();
        Box::new(move |t| score(&crate::expm::expm_apply(&h, t, &v0)))
    };
    let scan = |lo: f64, hi: f64, pts: usize| -> (f64, f64) {
        let mut best = (lo, f64::NEG_INFINITY);
        for k in 0..pts {
            let t = lo + (hi - lo) * k as f64 / (pts - 1) as f64;
            let f = eval(t);
            if f > best.1 + 1e-13 {
                best = (t, f);
            }
        }
        best
    };
    let tmax = 2.0 / dmax;
    let mut step = tmax / (grid - 1) as f64;
    let mut best = scan(0.0, tmax, grid);
    for _ in 0..2 {
        let lo = (best.0 - step).max(0.0);
        let hi = best.0 + step;
        let refined = scan(lo, hi, 21);
        if refined.1 > best.1 + 1e-13 || (refined.1 >= best.1 - 1e-13 && refined.0 < best.0) {
            best = refined;
        }
        step /= 10.0;
    }
    Ok(Calibration { duration: best.0, fidelity: best.1 })
}
