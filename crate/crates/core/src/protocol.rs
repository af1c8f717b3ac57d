//! The ten-step cat-state protocol: preparation (A), creation (B–E),
//! waiting (F) and reversal (G–J).

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::sequence::{calibrate_dq_duration, time_reverse, Cycle, DelayPolicy, PulseEvent, PulseSequence};
use crate::spin_system::{het_coupling_sum, SpinSystem};
use crate::state::{labeled_index, Label, StateVector};

pub const STEP_LABELS: [char; 10] = ['A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'J'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProtocolMode {
    /// Ideal extreme-state transfers.
    #[default]
    Ideal,
    /// Evolution under the calibrated effective DQ Hamiltonian.
    EffectiveDq,
    /// Explicit multipulse DQ trains.
    PulseTrain,
}

impl FromStr for ProtocolMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ideal" => Ok(ProtocolMode::Ideal),
            "dq" => Ok(ProtocolMode::EffectiveDq),
            "train" => Ok(ProtocolMode::PulseTrain),
            _ => Err(Error::ConfigValue(format!("mode '{s}' (expected ideal, dq or train)"))),
        }
    }
}

impl fmt::Display for ProtocolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolMode::Ideal => "ideal",
            ProtocolMode::EffectiveDq => "dq",
            ProtocolMode::PulseTrain => "train",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSpec {
    pub cycle: Cycle,
    pub n_cycles: usize,
    pub cycle_time: f64,
}

impl TrainSpec {
    /// Same total duration with the cycle time multiplied by about `scale`
    /// (the cycle count is rounded).
    pub fn scaled(&self, scale: f64) -> TrainSpec {
        let total = self.n_cycles as f64 * self.cycle_time;
        let n = ((self.n_cycles as f64 / scale).round() as usize).max(1);
        TrainSpec { cycle: self.cycle, n_cycles: n, cycle_time: total / n as f64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParams {
    pub mode: ProtocolMode,
    /// Length of step F (s).
    pub relax_delay: f64,
    pub carbon_train: TrainSpec,
    pub proton_train: TrainSpec,
    /// Multiplies both train cycle times at fixed total duration.
    pub cycle_scale: f64,
    /// Handling of step D when building step H.
    pub reversal: DelayPolicy,
    pub calibration_points: usize,
    /// Step D lasts `tau / 2`; `None` derives τ from the heteronuclear sum.
    pub tau: Option<f64>,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            mode: ProtocolMode::Ideal,
            relax_delay: 0.0,
            carbon_train: TrainSpec { cycle: Cycle::Sixteen, n_cycles: 10, cycle_time: 0.88e-3 },
            proton_train: TrainSpec { cycle: Cycle::Eight, n_cycles: 16, cycle_time: 0.2e-3 },
            cycle_scale: 1.0,
            reversal: DelayPolicy::Privileged,
            calibration_points: 400,
            tau: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolStep {
    pub label: char,
    pub sequence: PulseSequence,
    /// Closed-form state expected after this step, when one exists.
    pub reference: Option<StateVector>,
}

#[derive(Debug, Clone)]
pub struct Protocol {
    system: SpinSystem,
    params: ProtocolParams,
    steps: Vec<ProtocolStep>,
    initial_index: usize,
    proton: usize,
    carbon: usize,
    dq_durations: Option<(f64, f64)>,
}

impl Protocol {
    pub fn system(&self) -> &SpinSystem {
        &self.system
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn steps(&self) -> &[ProtocolStep] {
        &self.steps
    }

    pub fn step(&self, label: char) -> &ProtocolStep {
        let k = STEP_LABELS.iter().position(|&l| l == label).unwrap_or_else(|| panic!("no step {label}"));
        &self.steps[k]
    }

    /// Concatenation of the named steps, e.g. `"BCDE"`.
    pub fn segment(&self, labels: &str) -> PulseSequence {
        let parts: Vec<&PulseSequence> = labels.chars().map(|c| &self.step(c).sequence).collect();
        PulseSequence::concat(labels, &parts)
    }

    /// Basis index of the step-A state.
    pub fn initial_index(&self) -> usize {
        self.initial_index
    }

    pub fn initial_state(&self) -> &StateVector {
        self.step('A').reference.as_ref().expect("step A always has a reference state")
    }

    pub fn proton_channel(&self) -> usize {
        self.proton
    }

    pub fn carbon_channel(&self) -> usize {
        self.carbon
    }

    /// Calibrated (carbon, proton) DQ durations in `dq` mode.
    pub fn dq_durations(&self) -> Option<(f64, f64)> {
        self.dq_durations
    }

    pub fn pulse_count(&self) -> usize {
        self.steps.iter().map(|s| s.sequence.pulse_count()).sum()
    }

    pub fn duration(&self) -> f64 {
        self.steps.iter().map(|s| s.sequence.duration()).sum()
    }
}

/// Identifies (proton, carbon) channels of a two-channel system: the
/// channel labelled `1H` (or `H`) is the proton one, else channel 0.
fn channel_roles(system: &SpinSystem) -> Result<(usize, usize)> {
    if system.channels().len() != 2 || system.channels().iter().enumerate().any(|(c, _)| system.spins_in(c).is_empty()) {
        return Err(Error::InvalidSystem(format!(
            "the cat protocol needs exactly two populated channels, '{}' has {}",
            system.name(),
            system.channels().len()
        )));
    }
    let proton = system.channel_index("1H").unwrap_or(0);
    Ok((proton, 1 - proton))
}

/// Reference states after each step, built from channel-extreme states.
fn reference_states(system: &SpinSystem, proton: usize, carbon: usize) -> Result<Vec<Option<StateVector>>> {
    let ket = |c: Label, h: Label| -> Result<StateVector> {
        let mut labels = [Label::U; 2];
        labels[proton] = h;
        labels[carbon] = c;
        Ok(StateVector::basis(system.n_spins(), labeled_index(system, &labels)?))
    };
    let (uu, ud, du, dd) = (ket(Label::U, Label::U)?, ket(Label::U, Label::D)?, ket(Label::D, Label::U)?, ket(Label::D, Label::D)?);
    let one = C64::new(1.0, 0.0);
    let mi = C64::new(0.0, -1.0);
    let a = dd.clone();
    let b = StateVector::superpose(&[(one, &ud), (one, &dd)])?;
    let c = StateVector::superpose(&[(one, &uu), (one, &ud), (one, &du), (one, &dd)])?;
    let d = StateVector::superpose(&[(one, &uu), (mi, &ud), (mi, &du), (one, &dd)])?;
    let e = StateVector::superpose(&[(one, &uu), (one, &dd)])?;
    Ok(vec![
        Some(a.clone()),
        Some(b.clone()),
        Some(c.clone()),
        Some(d.clone()),
        Some(e.clone()),
        Some(e),
        Some(d),
        Some(c),
        Some(b),
        Some(a),
    ])
}

pub fn build_cat_protocol(system: &SpinSystem, params: &ProtocolParams) -> Result<Protocol> {
    let (proton, carbon) = channel_roles(system)?;
    if !(params.relax_delay >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative relaxation delay {}", params.relax_delay)));
    }
    if !(params.cycle_scale > 0.0) {
        return Err(Error::InvalidArgument(format!("cycle scale {} must be positive", params.cycle_scale)));
    }
    let h = system.channels()[proton].label.clone();
    let c = system.channels()[carbon].label.clone();
    let tau = match params.tau {
        Some(t) => t,
        None => 0.5 / het_coupling_sum(system)?,
    };
    let seq = |name: &str, events: Vec<PulseEvent>| PulseSequence::new(name, events);
    let mut dq_durations = None;
    let (b, cstep, e) = match params.mode {
        ProtocolMode::Ideal => {
            let mq = |ch: &str, phase: f64| PulseEvent::MqTransfer { channel: ch.to_string(), angle: FRAC_PI_2, phase };
            (seq("B", vec![mq(&c, -FRAC_PI_2)]), seq("C", vec![mq(&h, -FRAC_PI_2)]), seq("E", vec![mq(&h, PI)]))
        }
        ProtocolMode::EffectiveDq => {
            let tc = calibrate_dq_duration(system, &c, Label::D, params.calibration_points)?.duration;
            let th = calibrate_dq_duration(system, &h, Label::D, params.calibration_points)?.duration;
            dq_durations = Some((tc, th));
            let dq = |ch: &str, t: f64| PulseEvent::EffectiveDq { channel: ch.to_string(), duration: t, sign: 1 };
            (seq("B", vec![dq(&c, tc)]), seq("C", vec![dq(&h, th)]), seq("E", vec![dq(&h, th)]))
        }
        ProtocolMode::PulseTrain => {
            let train = |ch: &str, spec: TrainSpec| {
                let s = spec.scaled(params.cycle_scale);
                PulseEvent::PulseTrainDq {
                    channel: ch.to_string(),
                    cycle: s.cycle,
                    n_cycles: s.n_cycles,
                    cycle_time: s.cycle_time,
                    phase: 0.0,
                }
            };
            (
                seq("B", vec![train(&c, params.carbon_train)]),
                seq("C", vec![train(&h, params.proton_train)]),
                seq("E", vec![train(&h, params.proton_train)]),
            )
        }
    };
    let d = seq("D", vec![PulseEvent::Delay(tau / 2.0)]);
    let f = seq("F", vec![PulseEvent::RelaxDelay(params.relax_delay)]);
    let rev = |s: &PulseSequence, name: &str| -> Result<PulseSequence> {
        let mut r = time_reverse(s, &params.reversal)?;
        r.name = name.to_string();
        Ok(r)
    };
    let g = rev(&e, "G")?;
    let hh = rev(&d, "H")?;
    let i = rev(&cstep, "I")?;
    let j = rev(&b, "J")?;
    let sequences = vec![seq("A", Vec::new()), b, cstep, d, e, f, g, hh, i, j];
    let refs = reference_states(system, proton, carbon)?;
    let initial_index = labeled_index(system, &[Label::D, Label::D])?;
    let steps = STEP_LABELS
        .iter()
        .zip(sequences)
        .zip(refs)
        .map(|((&label, sequence), reference)| ProtocolStep { label, sequence, reference })
        .collect();
    Ok(Protocol { system: system.clone(), params: params.clone(), steps, initial_index, proton, carbon, dq_durations })
}
