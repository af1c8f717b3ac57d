//! Dipolar-coupled spin clusters and their rotating-frame Hamiltonians.
//!
//! Basis convention: spin `k` is bit `k` of the basis index, bit value 0 is
//! spin up (m = +½) and 1 is spin down (m = −½). For the benzene presets the
//! protons occupy spins 0–5 and the carbons spins 6–11, so the all-up state
//! is index 0 and the all-down state is index 2^N − 1.
//!
//! Couplings are stored as positive magnitudes in Hz. The secular dipolar
//! Hamiltonian carries the physical sign of an in-plane internuclear vector,
//!
//! ```text
//! H = − Σ_{i<j homo} 2π d_ij (2 I_iz I_jz − ½ (I_i⁺ I_j⁻ + I_i⁻ I_j⁺))
//!     − Σ_{i<j hetero} 2π b_ij · 2 I_iz S_jz
//!     + Σ_i 2π ν_c(i) I_iz
//! ```
//!
//! With this single sign choice a free delay of τ/2 takes the product
//! superposition of channel-extreme states to `(1, −i, −i, 1)/2`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::operator::SparseOperator;

/// Largest cluster handled by the sparse propagation path.
pub const MAX_SPINS: usize = 14;

/// Unit of evolution time: the 6Q proton coherence turns by π in this time
/// when all carbons sit in one extreme state.
pub const TAU: f64 = 65.6e-6;

/// Carbon–carbon bond length (Å).
pub const R_CC: f64 = 1.397;
/// Carbon–hydrogen bond length (Å).
pub const R_CH: f64 = 1.085;

/// Gyromagnetic ratios γ/2π in MHz/T for the labels the presets use.
pub fn gyromagnetic_ratio(label: &str) -> Option<f64> {
    match label {
        "1H" => Some(42.577_478),
        "13C" => Some(10.708_4),
        "15N" => Some(-4.316_4),
        "19F" => Some(40.078),
        "31P" => Some(17.235),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub label: String,
    /// Carrier offset (Hz) applied to every spin on the channel.
    pub offset_hz: f64,
    /// Relative gyromagnetic ratio; weights the high-temperature polarization.
    pub gamma: f64,
}

impl Channel {
    pub fn new(label: &str, offset_hz: f64) -> Self {
        Channel {
            label: label.to_string(),
            offset_hz,
            gamma: gyromagnetic_ratio(label).unwrap_or(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Benzene12,
    Benzene6,
    Benzene7,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Benzene12 => "benzene12",
            Preset::Benzene6 => "benzene6",
            Preset::Benzene7 => "benzene7",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "benzene12" => Ok(Preset::Benzene12),
            "benzene6" => Ok(Preset::Benzene6),
            "benzene7" => Ok(Preset::Benzene7),
            _ => Err(Error::UnknownPreset(s.to_string())),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Kind of a free-Hamiltonian term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    ZZ,
    FlipFlop,
    OffsetZ,
}

/// One term of the free Hamiltonian; `weight` is in rad/s and already
/// includes the sign and numeric prefactor of the operator it multiplies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianTerm {
    pub kind: TermKind,
    pub i: usize,
    /// Second spin of a pair term; equal to `i` for single-spin terms.
    pub j: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystem {
    name: String,
    channels: Vec<Channel>,
    channel_of: Vec<usize>,
    couplings: Vec<f64>,
}

impl SpinSystem {
    /// Validates and builds a system. `couplings` is row-major N×N in Hz.
    pub fn new(
        name: &str,
        channels: Vec<Channel>,
        channel_of: Vec<usize>,
        couplings: Vec<f64>,
    ) -> Result<Self> {
        let n = channel_of.len();
        if n == 0 {
            return Err(Error::InvalidSystem("no spins".into()));
        }
        if n > MAX_SPINS {
            return Err(Error::Dimension(format!("{n} spins exceeds the limit of {MAX_SPINS}")));
        }
        for (a, ca) in channels.iter().enumerate() {
            if channels[..a].iter().any(|cb| cb.label == ca.label) {
                return Err(Error::InvalidSystem(format!("duplicate channel label {}", ca.label)));
            }
        }
        if let Some(&bad) = channel_of.iter().find(|&&c| c >= channels.len()) {
            return Err(Error::InvalidSystem(format!("channel index {bad} out of range")));
        }
        if couplings.len() != n * n {
            return Err(Error::InvalidSystem(format!(
                "coupling table has {} entries, expected {}",
                couplings.len(),
                n * n
            )));
        }
        for i in 0..n {
            if couplings[i * n + i] != 0.0 {
                return Err(Error::InvalidSystem(format!("non-zero self coupling on spin {i}")));
            }
            for j in 0..i {
                let (a, b) = (couplings[i * n + j], couplings[j * n + i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::InvalidSystem(format!("couplings[{i}][{j}] != couplings[{j}][{i}]")));
                }
            }
        }
        Ok(SpinSystem { name: name.to_string(), channels, channel_of, couplings })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_spins(&self) -> usize {
        self.channel_of.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.n_spins()
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel_of(&self, spin: usize) -> usize {
        self.channel_of[spin]
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.couplings[i * self.n_spins() + j]
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    /// Channel by label, case-insensitive; the element symbol alone (`H`
    /// for `1H`) is accepted too.
    pub fn channel_index(&self, label: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c.label.eq_ignore_ascii_case(label))
            .or_else(|| {
                self.channels
                    .iter()
                    .position(|c| c.label.trim_start_matches(|ch: char| ch.is_ascii_digit()).eq_ignore_ascii_case(label))
            })
            .ok_or_else(|| Error::UnknownChannel(label.to_string()))
    }

    /// Spins assigned to channel `c`, in increasing order.
    pub fn spins_in(&self, c: usize) -> Vec<usize> {
        (0..self.n_spins()).filter(|&k| self.channel_of[k] == c).collect()
    }

    /// Bit mask of the spins on channel `c`.
    pub fn channel_mask(&self, c: usize) -> usize {
        self.spins_in(c).iter().fold(0, |m, &k| m | (1 << k))
    }

    pub fn with_offsets(&self, offsets_hz: &[f64]) -> Self {
        let mut s = self.clone();
        for (ch, &o) in s.channels.iter_mut().zip(offsets_hz) {
            ch.offset_hz = o;
        }
        s
    }

    /// Sub-cluster made of the listed spins (in the listed order), keeping
    /// their couplings and channel assignments. Unused channels are dropped.
    pub fn subcluster(&self, spins: &[usize], name: &str) -> Result<Self> {
        let n = spins.len();
        let mut used: Vec<usize> = Vec::new();
        for &s in spins {
            if s >= self.n_spins() {
                return Err(Error::InvalidSystem(format!("spin {s} out of range")));
            }
            let c = self.channel_of[s];
            if !used.contains(&c) {
                used.push(c);
            }
        }
        used.sort_unstable();
        let channels = used.iter().map(|&c| self.channels[c].clone()).collect();
        let channel_of = spins
            .iter()
            .map(|&s| used.iter().position(|&c| c == self.channel_of[s]).unwrap())
            .collect();
        let mut couplings = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    couplings[a * n + b] = self.coupling(spins[a], spins[b]);
                }
            }
        }
        SpinSystem::new(name, channels, channel_of, couplings)
    }

    /// The system restricted to one channel's spins.
    pub fn channel_subsystem(&self, c: usize) -> Result<Self> {
        let spins = self.spins_in(c);
        if spins.is_empty() {
            return Err(Error::InvalidArgument(format!("channel {} is empty", self.channels[c].label)));
        }
        self.subcluster(&spins, &format!("{}:{}", self.name, self.channels[c].label))
    }

    /// Free-Hamiltonian terms in rad/s (see module docs for the sign).
    pub fn hamiltonian_terms(&self) -> Vec<HamiltonianTerm> {
        let n = self.n_spins();
        let mut terms = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let k = self.coupling(i, j);
                if k == 0.0 {
                    continue;
                }
                let w = -2.0 * PI * k;
                terms.push(HamiltonianTerm { kind: TermKind::ZZ, i, j, weight: 2.0 * w });
                if self.channel_of[i] == self.channel_of[j] {
                    terms.push(HamiltonianTerm { kind: TermKind::FlipFlop, i, j, weight: -0.5 * w });
                }
            }
        }
        for i in 0..n {
            let nu = self.channels[self.channel_of[i]].offset_hz;
            if nu != 0.0 {
                terms.push(HamiltonianTerm { kind: TermKind::OffsetZ, i, j: i, weight: 2.0 * PI * nu });
            }
        }
        terms
    }

    /// Free rotating-frame Hamiltonian (rad/s) as a sparse operator.
    pub fn free_hamiltonian(&self) -> SparseOperator {
        let terms = self.hamiltonian_terms();
        SparseOperator::from_rows(self.dim(), |r, sink| {
            let mut d = 0.0;
            for t in &terms {
                match t.kind {
                    TermKind::ZZ => d += t.weight * spin_m(r, t.i) * spin_m(r, t.j),
                    TermKind::OffsetZ => d += t.weight * spin_m(r, t.i),
                    TermKind::FlipFlop => {
                        if bit(r, t.i) != bit(r, t.j) {
                            let c = r ^ (1 << t.i) ^ (1 << t.j);
                            sink.push((c, C64::new(t.weight, 0.0)));
                        }
                    }
                }
            }
            d
        })
    }

    /// Double-quantum Hamiltonian of one channel,
    /// `−½ Σ_{i<j∈c} 2π d_ij (I_i⁺I_j⁺ + I_i⁻I_j⁻)`.
    pub fn dq_hamiltonian(&self, channel: usize) -> Result<SparseOperator> {
        self.dq_hamiltonian_phased(channel, 0.0)
    }

    /// DQ Hamiltonian with a phase `ψ` on the raising part,
    /// `−½ Σ 2π d_ij (e^{iψ} I⁺I⁺ + e^{−iψ} I⁻I⁻)`.
    /// A collective z-rotation by φ maps phase ψ to ψ − 2φ.
    pub fn dq_hamiltonian_phased(&self, channel: usize, psi: f64) -> Result<SparseOperator> {
        if channel >= self.channels.len() {
            return Err(Error::UnknownChannel(format!("#{channel}")));
        }
        let spins = self.spins_in(channel);
        if spins.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "channel {} has no spins",
                self.channels[channel].label
            )));
        }
        let mut pairs = Vec::new();
        for (a, &i) in spins.iter().enumerate() {
            for &j in &spins[a + 1..] {
                let d = self.coupling(i, j);
                if d != 0.0 {
                    pairs.push((i, j, -PI * d));
                }
            }
        }
        let up = C64::from_polar(1.0, psi);
        Ok(SparseOperator::from_rows(self.dim(), |r, sink| {
            for &(i, j, w) in &pairs {
                match (bit(r, i), bit(r, j)) {
                    // row both up: ⟨r|I⁺I⁺|c⟩ with c both down
                    (0, 0) => sink.push((r | (1 << i) | (1 << j), up * w)),
                    (1, 1) => sink.push((r & !(1 << i) & !(1 << j), up.conj() * w)),
                    _ => {}
                }
            }
            0.0
        }))
    }

    /// Sum of all pair couplings magnitudes (Hz), used for bandwidth defaults.
    pub fn coupling_sum_abs(&self) -> f64 {
        let n = self.n_spins();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| self.coupling(i, j).abs()).sum()
    }
}

/// Bit `k` of basis index `r` (0 = up, 1 = down).
#[inline]
pub fn bit(r: usize, k: usize) -> usize {
    (r >> k) & 1
}

/// Magnetic quantum number of spin `k` in basis state `r`.
#[inline]
pub fn spin_m(r: usize, k: usize) -> f64 {
    if bit(r, k) == 0 {
        0.5
    } else {
        -0.5
    }
}

/// Twice the total magnetization of the spins selected by `mask`, i.e. the
/// number of up spins minus the number of down spins. Differences of this
/// quantity between two basis states give integer coherence orders.
#[inline]
pub fn twice_m(r: usize, mask: usize) -> i32 {
    let down = (r & mask).count_ones() as i32;
    mask.count_ones() as i32 - 2 * down
}

/// Sum of heteronuclear couplings `B = Σ_{i∈H, j∈C} b_ij` (Hz) between the
/// first two channels.
pub fn het_coupling_sum(system: &SpinSystem) -> Result<f64> {
    if system.channels().len() < 2 {
        return Err(Error::InvalidArgument("heteronuclear sum needs at least two channels".into()));
    }
    let (a, b) = (system.spins_in(0), system.spins_in(1));
    Ok(a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j))).map(|(i, j)| system.coupling(i, j)).sum())
}

/// In-plane positions (Å) of the benzene ring: protons then carbons.
fn ring_positions() -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let rh = R_CC + R_CH;
    let at = |r: f64, k: usize| {
        let a = PI / 3.0 * k as f64;
        [r * a.cos(), r * a.sin()]
    };
    ((0..6).map(|k| at(rh, k)).collect(), (0..6).map(|k| at(R_CC, k)).collect())
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Global dipolar constant (Hz·Å³ per unit γ product, γ in MHz/T) that puts
/// the benzene12 heteronuclear sum at 1/(2τ).
fn benzene_constant() -> f64 {
    let (h, c) = ring_positions();
    let (gh, gc) = (gyromagnetic_ratio("1H").unwrap(), gyromagnetic_ratio("13C").unwrap());
    let raw: f64 = h.iter().flat_map(|&p| c.iter().map(move |&q| gh * gc / dist(p, q).powi(3))).sum();
    1.0 / (2.0 * TAU) / raw
}

/// Builds one of the benzene presets. `scale` multiplies every coupling of
/// the calibrated geometry (default 1).
pub fn build_preset(preset: Preset, scale: Option<f64>) -> Result<SpinSystem> {
    let scale = scale.unwrap_or(1.0);
    if !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("coupling scale {scale}")));
    }
    let (h, c) = ring_positions();
    let k = benzene_constant() * scale;
    let mut positions: Vec<([f64; 2], usize)> = h.iter().map(|&p| (p, 0)).collect();
    let mut channels = vec![Channel::new("1H", 0.0)];
    match preset {
        Preset::Benzene6 => {}
        Preset::Benzene7 => {
            channels.push(Channel::new("13C", 0.0));
            positions.push((c[0], 1));
        }
        Preset::Benzene12 => {
            channels.push(Channel::new("13C", 0.0));
            positions.extend(c.iter().map(|&p| (p, 1)));
        }
    }
    let n = positions.len();
    let mut couplings = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let (gi, gj) = (channels[positions[i].1].gamma, channels[positions[j].1].gamma);
                couplings[i * n + j] = k * gi * gj / dist(positions[i].0, positions[j].0).powi(3);
            }
        }
    }
    let channel_of = positions.iter().map(|p| p.1).collect();
    SpinSystem::new(preset.name(), channels, channel_of, couplings)
}
