//! Line-oriented run configuration.
//!
//! Each non-empty line is `key value...`; `#` starts a comment. Unknown keys
//! are errors. Every field has a default, and [`RunConfig::echo`] writes the
//! complete set back out so that `parse(echo(parse(t))) == parse(t)`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::measurement::{Acquisition, LineBroadening};
use crate::protocol::{ProtocolParams, TrainSpec};
use crate::relaxation::{ChannelTimes, DephasingMode, Observable, RelaxationModel};
use crate::sequence::{parse_event, Cycle, DelayPolicy, PulseEvent, PulseSequence};
use crate::spin_system::{build_preset, Channel, Preset, SpinSystem};
use crate::state::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Run,
    Spectrum,
    CatDemo,
    MqScan,
    Lifetime,
    AhtCheck,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Run,
        Experiment::Spectrum,
        Experiment::CatDemo,
        Experiment::MqScan,
        Experiment::Lifetime,
        Experiment::AhtCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Run => "run",
            Experiment::Spectrum => "spectrum",
            Experiment::CatDemo => "catdemo",
            Experiment::MqScan => "mqscan",
            Experiment::Lifetime => "lifetime",
            Experiment::AhtCheck => "ahtcheck",
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::ConfigValue(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SystemSpec {
    Preset { preset: Preset, scale: f64 },
    Explicit { channels: Vec<(String, f64)>, spins: Vec<String>, couplings: Vec<(usize, usize, f64)> },
}

impl SystemSpec {
    pub fn build(&self) -> Result<SpinSystem> {
        match self {
            SystemSpec::Preset { preset, scale } => build_preset(*preset, Some(*scale)),
            SystemSpec::Explicit { channels, spins, couplings } => {
                let chans: Vec<Channel> = channels.iter().map(|(l, o)| Channel::new(l, *o)).collect();
                let of = spins
                    .iter()
                    .map(|s| {
                        channels
                            .iter()
                            .position(|(l, _)| l == s)
                            .ok_or_else(|| Error::ConfigValue(format!("spin on undeclared channel '{s}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let n = spins.len();
                let mut table = vec![0.0; n * n];
                for &(i, j, hz) in couplings {
                    if i >= n || j >= n || i == j {
                        return Err(Error::ConfigValue(format!("coupling {i} {j} does not name two distinct spins")));
                    }
                    table[i * n + j] = hz;
                    table[j * n + i] = hz;
                }
                SpinSystem::new("custom", chans, of, table)
            }
        }
    }
}

/// Initial state before the purity mixing.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    /// Every spin down.
    Down,
    /// Every spin up.
    Up,
    /// One label per channel, in channel order.
    Labels(Vec<(String, Label)>),
    /// Equal superposition of all-up and all-down.
    Cat,
    Basis(usize),
    /// Haar-random pure state drawn from the seed.
    Random,
    /// High-temperature equilibrium deviation (dense, N ≤ 8).
    Thermal,
}

impl std::fmt::Display for InitialSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialSpec::Down => f.write_str("down"),
            InitialSpec::Up => f.write_str("up"),
            InitialSpec::Labels(v) => {
                let parts: Vec<String> = v.iter().map(|(c, l)| format!("{c}={l}")).collect();
                f.write_str(&parts.join(" "))
            }
            InitialSpec::Cat => f.write_str("cat"),
            InitialSpec::Basis(i) => write!(f, "basis {i}"),
            InitialSpec::Random => f.write_str("random"),
            InitialSpec::Thermal => f.write_str("thermal"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AhtCycles {
    Eight,
    Sixteen,
    Both,
}

impl AhtCycles {
    pub fn cycles(self) -> Vec<Cycle> {
        match self {
            AhtCycles::Eight => vec![Cycle::Eight],
            AhtCycles::Sixteen => vec![Cycle::Sixteen],
            AhtCycles::Both => vec![Cycle::Eight, Cycle::Sixteen],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub output: PathBuf,
    pub header: bool,
    pub system: SystemSpec,
    /// Inline sequence lines, in order.
    pub sequence: Vec<PulseEvent>,
    pub sequence_file: Option<PathBuf>,
    pub initial: InitialSpec,
    pub purity: f64,
    pub seed: u64,
    pub protocol: ProtocolParams,
    pub relaxation: RelaxationModel,
    pub delays: Vec<f64>,
    pub observable: Observable,
    pub reference_lifetime: (f64, f64),
    pub acquisition: Acquisition,
    pub read_channel: String,
    pub threshold: f64,
    pub cat_tolerance: f64,
    pub mq_increments: usize,
    pub aht_channel: String,
    pub aht_cycles: AhtCycles,
    /// `(min, max, count)` of the log-spaced cycle-time sweep.
    pub aht_tc: (f64, f64, usize),
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: Experiment::CatDemo,
            output: PathBuf::from("out"),
            header: true,
            system: SystemSpec::Preset { preset: Preset::Benzene12, scale: 1.0 },
            sequence: Vec::new(),
            sequence_file: None,
            initial: InitialSpec::Down,
            purity: 1.0,
            seed: 0,
            protocol: ProtocolParams::default(),
            relaxation: RelaxationModel::default(),
            delays: vec![0.0, 0.005, 0.01, 0.015, 0.02, 0.03],
            observable: Observable::CatCoherence,
            reference_lifetime: (0.0032, 0.0047),
            acquisition: Acquisition::default(),
            read_channel: "1H".into(),
            threshold: 0.1,
            cat_tolerance: 1e-6,
            mq_increments: 32,
            aht_channel: "1H".into(),
            aht_cycles: AhtCycles::Both,
            aht_tc: (20e-6, 200e-6, 5),
        }
    }
}

fn cfg(line: usize, message: impl Into<String>) -> Error {
    Error::Config { line, message: message.into() }
}

fn num(line: usize, key: &str, s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| cfg(line, format!("{key}: bad number '{s}'")))
}

fn time_or_inf(line: usize, key: &str, s: &str) -> Result<f64> {
    if s.eq_ignore_ascii_case("inf") {
        Ok(f64::INFINITY)
    } else {
        num(line, key, s)
    }
}

fn count(line: usize, key: &str, s: &str) -> Result<usize> {
    s.parse::<usize>().map_err(|_| cfg(line, format!("{key}: bad count '{s}'")))
}

fn nargs(line: usize, key: &str, args: &[&str], n: usize) -> Result<()> {
    if args.len() != n {
        return Err(cfg(line, format!("'{key}' takes {n} argument(s), got {}", args.len())));
    }
    Ok(())
}

fn train(line: usize, key: &str, args: &[&str]) -> Result<TrainSpec> {
    nargs(line, key, args, 3)?;
    Ok(TrainSpec {
        cycle: args[0].parse().map_err(|e: Error| cfg(line, e.to_string()))?,
        n_cycles: count(line, key, args[1])?,
        cycle_time: num(line, key, args[2])?,
    })
}

/// Parses a configuration. `sequence_file` paths are kept as written.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    let mut experiment = None;
    let mut preset: Option<SystemSpec> = None;
    let mut channels: Vec<(String, f64)> = Vec::new();
    let mut spins: Vec<String> = Vec::new();
    let mut couplings: Vec<(usize, usize, f64)> = Vec::new();
    let mut relax_lines: Vec<ChannelTimes> = RelaxationModel::default().channels().to_vec();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, rest) = body.split_once(char::is_whitespace).unwrap_or((body, ""));
        let rest = rest.trim();
        let args: Vec<&str> = rest.split_whitespace().collect();
        let wrap = |e: Error| cfg(line, e.to_string());
        match key {
            "experiment" => {
                nargs(line, key, &args, 1)?;
                if experiment.is_some() {
                    return Err(cfg(line, "experiment given twice"));
                }
                experiment = Some(args[0].parse().map_err(wrap)?);
            }
            "output" => {
                nargs(line, key, &args, 1)?;
                c.output = PathBuf::from(args[0]);
            }
            "header" => {
                nargs(line, key, &args, 1)?;
                c.header = match args[0] {
                    "on" => true,
                    "off" => false,
                    v => return Err(cfg(line, format!("header: expected on or off, got '{v}'"))),
                };
            }
            "mode" => {
                nargs(line, key, &args, 1)?;
                c.protocol.mode = args[0].parse().map_err(wrap)?;
            }
            "system" => {
                if args.first() != Some(&"preset") || !(2..=3).contains(&args.len()) {
                    return Err(cfg(line, "expected 'system preset <name> [scale]'"));
                }
                let scale = match args.get(2) {
                    Some(s) => num(line, key, s)?,
                    None => 1.0,
                };
                preset = Some(SystemSpec::Preset { preset: args[1].parse().map_err(wrap)?, scale });
            }
            "channel" => {
                if !(1..=2).contains(&args.len()) {
                    return Err(cfg(line, "expected 'channel <label> [offset_hz]'"));
                }
                let off = match args.get(1) {
                    Some(s) => num(line, key, s)?,
                    None => 0.0,
                };
                channels.push((args[0].to_string(), off));
            }
            "spin" => {
                nargs(line, key, &args, 1)?;
                spins.push(args[0].to_string());
            }
            "coupling" => {
                nargs(line, key, &args, 3)?;
                couplings.push((count(line, key, args[0])?, count(line, key, args[1])?, num(line, key, args[2])?));
            }
            "sequence" => {
                if rest.is_empty() {
                    return Err(cfg(line, "empty sequence line"));
                }
                c.sequence.push(parse_event(rest).map_err(|m| cfg(line, m))?);
            }
            "sequence_file" => {
                nargs(line, key, &args, 1)?;
                c.sequence_file = Some(PathBuf::from(args[0]));
            }
            "initial" => c.initial = parse_initial(line, &args)?,
            "purity" => {
                nargs(line, key, &args, 1)?;
                c.purity = num(line, key, args[0])?;
            }
            "seed" => {
                nargs(line, key, &args, 1)?;
                c.seed = args[0].parse().map_err(|_| cfg(line, format!("seed: bad integer '{}'", args[0])))?;
            }
            "relax_delay" => {
                nargs(line, key, &args, 1)?;
                c.protocol.relax_delay = num(line, key, args[0])?;
            }
            "carbon_train" => c.protocol.carbon_train = train(line, key, &args)?,
            "proton_train" => c.protocol.proton_train = train(line, key, &args)?,
            "cycle_scale" => {
                nargs(line, key, &args, 1)?;
                c.protocol.cycle_scale = num(line, key, args[0])?;
            }
            "reversal" => {
                c.protocol.reversal = match args.as_slice() {
                    ["privileged"] => DelayPolicy::Privileged,
                    ["reject"] => DelayPolicy::Reject,
                    ["echo", ch] => DelayPolicy::Echo { channel: ch.to_string() },
                    _ => return Err(cfg(line, "expected 'reversal privileged|reject|echo <channel>'")),
                };
            }
            "calibration_points" => {
                nargs(line, key, &args, 1)?;
                c.protocol.calibration_points = count(line, key, args[0])?;
            }
            "tau" => {
                nargs(line, key, &args, 1)?;
                c.protocol.tau = if args[0] == "auto" { None } else { Some(num(line, key, args[0])?) };
            }
            "t1" | "t2" => {
                nargs(line, key, &args, 2)?;
                let v = time_or_inf(line, key, args[1])?;
                let entry = match relax_lines.iter_mut().find(|t| t.label == args[0]) {
                    Some(e) => e,
                    None => {
                        relax_lines.push(ChannelTimes { label: args[0].to_string(), t1: f64::INFINITY, t2: f64::INFINITY });
                        relax_lines.last_mut().unwrap()
                    }
                };
                if key == "t1" {
                    entry.t1 = v;
                } else {
                    entry.t2 = v;
                }
            }
            "dephasing" => {
                nargs(line, key, &args, 1)?;
                c.relaxation.mode = args[0].parse::<DephasingMode>().map_err(wrap)?;
            }
            "delays" => {
                if args.is_empty() {
                    return Err(cfg(line, "delays: expected at least one value"));
                }
                c.delays = args.iter().map(|a| num(line, key, a)).collect::<Result<_>>()?;
            }
            "observable" => {
                nargs(line, key, &args, 1)?;
                c.observable = args[0].parse().map_err(wrap)?;
            }
            "reference_lifetime" => {
                nargs(line, key, &args, 2)?;
                c.reference_lifetime = (num(line, key, args[0])?, num(line, key, args[1])?);
            }
            "tip_deg" => {
                nargs(line, key, &args, 1)?;
                c.acquisition.tip = num(line, key, args[0])?.to_radians();
            }
            "dwell" => {
                nargs(line, key, &args, 1)?;
                c.acquisition.dwell = if args[0] == "auto" { None } else { Some(num(line, key, args[0])?) };
            }
            "points" => {
                nargs(line, key, &args, 1)?;
                c.acquisition.n_points = count(line, key, args[0])?;
            }
            "line_broadening" => {
                nargs(line, key, &args, 1)?;
                c.acquisition.line_broadening = match args[0] {
                    "auto" => LineBroadening::Auto,
                    "none" => LineBroadening::Hz(0.0),
                    v => LineBroadening::Hz(num(line, key, v)?),
                };
            }
            "read_channel" => {
                nargs(line, key, &args, 1)?;
                c.read_channel = args[0].to_string();
            }
            "threshold" => {
                nargs(line, key, &args, 1)?;
                c.threshold = num(line, key, args[0])?;
            }
            "cat_tolerance" => {
                nargs(line, key, &args, 1)?;
                c.cat_tolerance = num(line, key, args[0])?;
            }
            "mq_increments" => {
                nargs(line, key, &args, 1)?;
                c.mq_increments = count(line, key, args[0])?;
            }
            "aht_channel" => {
                nargs(line, key, &args, 1)?;
                c.aht_channel = args[0].to_string();
            }
            "aht_cycle" => {
                nargs(line, key, &args, 1)?;
                c.aht_cycles = match args[0] {
                    "eight" => AhtCycles::Eight,
                    "sixteen" => AhtCycles::Sixteen,
                    "both" => AhtCycles::Both,
                    v => return Err(cfg(line, format!("aht_cycle: expected eight, sixteen or both, got '{v}'"))),
                };
            }
            "aht_tc" => {
                nargs(line, key, &args, 3)?;
                c.aht_tc = (num(line, key, args[0])?, num(line, key, args[1])?, count(line, key, args[2])?);
            }
            _ => return Err(cfg(line, format!("unknown key '{key}'"))),
        }
    }
    c.experiment = experiment.ok_or_else(|| Error::ConfigValue("missing 'experiment' line".into()))?;
    let explicit = !(channels.is_empty() && spins.is_empty() && couplings.is_empty());
    c.system = match (preset, explicit) {
        (Some(_), true) => {
            return Err(Error::ConfigValue("give either 'system preset' or channel/spin/coupling lines, not both".into()))
        }
        (Some(p), false) => p,
        (None, true) => SystemSpec::Explicit { channels, spins, couplings },
        (None, false) => c.system,
    };
    c.relaxation = RelaxationModel::new(relax_lines, c.relaxation.mode)
        .map_err(|e| Error::ConfigValue(e.to_string()))?;
    c.validate()?;
    Ok(c)
}

fn parse_initial(line: usize, args: &[&str]) -> Result<InitialSpec> {
    Ok(match args {
        ["down"] => InitialSpec::Down,
        ["up"] => InitialSpec::Up,
        ["cat"] => InitialSpec::Cat,
        ["random"] => InitialSpec::Random,
        ["thermal"] => InitialSpec::Thermal,
        ["basis", i] => InitialSpec::Basis(count(line, "initial", i)?),
        _ if !args.is_empty() && args.iter().all(|a| a.contains('=')) => InitialSpec::Labels(
            args.iter()
                .map(|a| {
                    let (ch, l) = a.split_once('=').unwrap();
                    Ok((ch.to_string(), l.parse::<Label>().map_err(|e| cfg(line, e.to_string()))?))
                })
                .collect::<Result<_>>()?,
        ),
        _ => {
            return Err(cfg(
                line,
                "expected 'initial down|up|cat|random|thermal|basis <i>|<channel>=<u|d>...'",
            ))
        }
    })
}

impl RunConfig {
    /// Reads a config file and resolves a relative `sequence_file` against
    /// the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut c = parse_config(&text)?;
        if let Some(f) = &c.sequence_file {
            if f.is_relative() {
                if let Some(dir) = path.parent() {
                    c.sequence_file = Some(dir.join(f));
                }
            }
            let f = c.sequence_file.as_ref().unwrap();
            if !f.is_file() {
                return Err(Error::ConfigValue(format!("sequence file {} does not exist", f.display())));
            }
        }
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigValue(m));
        if !(self.purity > 0.0 && self.purity <= 1.0) {
            return bad(format!("purity {} outside (0, 1]", self.purity));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if !(self.cat_tolerance > 0.0) {
            return bad(format!("cat_tolerance {} must be positive", self.cat_tolerance));
        }
        if self.acquisition.n_points < 2 {
            return bad(format!("points {} must be at least 2", self.acquisition.n_points));
        }
        if let Some(d) = self.acquisition.dwell {
            if !(d > 0.0) {
                return bad(format!("dwell {d} must be positive"));
            }
        }
        if let LineBroadening::Hz(w) = self.acquisition.line_broadening {
            if !(w >= 0.0) {
                return bad(format!("line_broadening {w} must be non-negative"));
            }
        }
        if self.delays.iter().any(|d| !(*d >= 0.0)) {
            return bad("delays must be non-negative".into());
        }
        let (lo, hi, n) = self.aht_tc;
        if !(lo > 0.0 && hi >= lo) || n == 0 || (n == 1 && hi != lo) {
            return bad(format!("aht_tc {lo} {hi} {n} is not a valid sweep"));
        }
        if !(self.protocol.cycle_scale > 0.0) {
            return bad(format!("cycle_scale {} must be positive", self.protocol.cycle_scale));
        }
        if let Some(t) = self.protocol.tau {
            if !(t > 0.0) {
                return bad(format!("tau {t} must be positive"));
            }
        }
        if self.sequence_file.is_some() && !self.sequence.is_empty() {
            return bad("give either inline 'sequence' lines or 'sequence_file', not both".into());
        }
        Ok(())
    }

    /// The configured pulse sequence (empty when none is given).
    pub fn sequence(&self) -> Result<PulseSequence> {
        match &self.sequence_file {
            Some(f) => {
                let text = std::fs::read_to_string(f).map_err(|e| Error::Io(format!("{}: {e}", f.display())))?;
                PulseSequence::parse(&f.display().to_string(), &text)
            }
            None => Ok(PulseSequence::new("inline", self.sequence.clone())),
        }
    }

    /// Log-spaced cycle times of the AHT sweep.
    pub fn aht_cycle_times(&self) -> Vec<f64> {
        let (lo, hi, n) = self.aht_tc;
        if n == 1 {
            return vec![lo];
        }
        (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
    }

    /// Complete configuration text with every default written out.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} {v}");
        };
        kv("experiment", self.experiment.name().into());
        kv("mode", self.protocol.mode.to_string());
        kv("output", self.output.display().to_string());
        kv("header", if self.header { "on" } else { "off" }.into());
        match &self.system {
            SystemSpec::Preset { preset, scale } => kv("system", format!("preset {preset} {scale:?}")),
            SystemSpec::Explicit { channels, spins, couplings } => {
                for (l, o) in channels {
                    kv("channel", format!("{l} {o:?}"));
                }
                for sp in spins {
                    kv("spin", sp.clone());
                }
                for (i, j, hz) in couplings {
                    kv("coupling", format!("{i} {j} {hz:?}"));
                }
            }
        }
        for ev in &self.sequence {
            kv("sequence", ev.to_string());
        }
        if let Some(f) = &self.sequence_file {
            kv("sequence_file", f.display().to_string());
        }
        kv("initial", self.initial.to_string());
        kv("purity", format!("{:?}", self.purity));
        kv("seed", self.seed.to_string());
        let p = &self.protocol;
        kv("relax_delay", format!("{:?}", p.relax_delay));
        for (k, t) in [("carbon_train", p.carbon_train), ("proton_train", p.proton_train)] {
            kv(k, format!("{} {} {:?}", t.cycle, t.n_cycles, t.cycle_time));
        }
        kv("cycle_scale", format!("{:?}", p.cycle_scale));
        kv(
            "reversal",
            match &p.reversal {
                DelayPolicy::Privileged => "privileged".into(),
                DelayPolicy::Reject => "reject".into(),
                DelayPolicy::Echo { channel } => format!("echo {channel}"),
            },
        );
        kv("calibration_points", p.calibration_points.to_string());
        kv("tau", p.tau.map_or("auto".into(), |t| format!("{t:?}")));
        for ct in self.relaxation.channels() {
            let t = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v:?}") };
            kv("t1", format!("{} {}", ct.label, t(ct.t1)));
            kv("t2", format!("{} {}", ct.label, t(ct.t2)));
        }
        kv("dephasing", self.relaxation.mode.to_string());
        kv("delays", self.delays.iter().map(|d| format!("{d:?}")).collect::<Vec<_>>().join(" "));
        kv("observable", self.observable.to_string());
        kv("reference_lifetime", format!("{:?} {:?}", self.reference_lifetime.0, self.reference_lifetime.1));
        let a = &self.acquisition;
        kv("tip_deg", format!("{:?}", a.tip.to_degrees()));
        kv("dwell", a.dwell.map_or("auto".into(), |d| format!("{d:?}")));
        kv("points", a.n_points.to_string());
        kv(
            "line_broadening",
            match a.line_broadening {
                LineBroadening::Auto => "auto".into(),
                LineBroadening::Hz(w) => format!("{w:?}"),
            },
        );
        kv("read_channel", self.read_channel.clone());
        kv("threshold", format!("{:?}", self.threshold));
        kv("cat_tolerance", format!("{:?}", self.cat_tolerance));
        kv("mq_increments", self.mq_increments.to_string());
        kv("aht_channel", self.aht_channel.clone());
        kv(
            "aht_cycle",
            match self.aht_cycles {
                AhtCycles::Eight => "eight",
                AhtCycles::Sixteen => "sixteen",
                AhtCycles::Both => "both",
            }
            .into(),
        );
        kv("aht_tc", format!("{:?} {:?} {}", self.aht_tc.0, self.aht_tc.1, self.aht_tc.2));
        s
    }
}
