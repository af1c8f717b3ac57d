//! Pure states, density matrices and the unitary operations acting on them.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;

use crate::dense::DENSE_MAX_SPINS;
use crate::error::{Error, Result};
use crate::expm::StepPropagator;
use crate::operator::SparseOperator;
use crate::spin_system::{twice_m, SpinSystem};

/// Normalization tolerance for state vectors.
pub const NORM_TOL: f64 = 1e-10;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Extreme state of one channel: all spins up (`U`) or all down (`D`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    U,
    D,
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u" | "U" => Ok(Label::U),
            "d" | "D" => Ok(Label::D),
            _ => Err(Error::InvalidArgument(format!("state label '{s}' (expected u or d)"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::U => "u",
            Label::D => "d",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_spins: usize,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn basis(n_spins: usize, index: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n_spins];
        amps[index] = C64::new(1.0, 0.0);
        StateVector { n_spins, amps }
    }

    /// Wraps amplitudes after normalizing them; fails on a zero vector or a
    /// length that is not a power of two.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let dim = amps.len();
        if dim == 0 || !dim.is_power_of_two() {
            return Err(Error::Dimension(format!("length {dim} is not a power of two")));
        }
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidArgument("cannot normalize a zero vector".into()));
        }
        Ok(StateVector { n_spins: dim.trailing_zeros() as usize, amps: amps.into_iter().map(|a| a / norm).collect() })
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    /// Equal-weight superposition of the given states (then normalized).
    pub fn superpose(terms: &[(C64, &StateVector)]) -> Result<Self> {
        let dim = terms.first().map(|t| t.1.dim()).ok_or_else(|| Error::InvalidArgument("empty superposition".into()))?;
        let mut amps = vec![ZERO; dim];
        for (c, s) in terms {
            if s.dim() != dim {
                return Err(Error::Dimension("superposition of states with different sizes".into()));
            }
            for (a, b) in amps.iter_mut().zip(&s.amps) {
                *a += c * b;
            }
        }
        StateVector::from_amplitudes(amps)
    }

    /// Normalized state whose amplitudes are i.i.d. complex Gaussians drawn
    /// from the supplied normal-variate source.
    pub fn from_gaussian(n_spins: usize, mut normal: impl FnMut() -> f64) -> Self {
        let amps = (0..1usize << n_spins).map(|_| C64::new(normal(), normal())).collect();
        StateVector::from_amplitudes(amps).expect("gaussian vector is non-zero")
    }

    fn check_system(&self, system: &SpinSystem) -> Result<()> {
        if self.n_spins != system.n_spins() {
            return Err(Error::Dimension(format!(
                "state has {} spins, system has {}",
                self.n_spins,
                system.n_spins()
            )));
        }
        Ok(())
    }
}

/// Density matrix, either materialized (`Dense`, N ≤ 8) or as a weighted
/// ensemble of pure states plus an identity part,
/// `ρ = w·𝟙/2^N + Σ_k p_k |ψ_k⟩⟨ψ_k|`, which covers pseudopure states and
/// classical mixtures at any size.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityMatrix {
    Dense { n_spins: usize, entries: Vec<C64> },
    Ensemble { n_spins: usize, identity_weight: f64, members: Vec<(f64, StateVector)> },
}

impl DensityMatrix {
    pub fn from_dense(n_spins: usize, entries: Vec<C64>) -> Result<Self> {
        check_dense_size(n_spins)?;
        let d = 1usize << n_spins;
        if entries.len() != d * d {
            return Err(Error::Dimension(format!("expected {} entries, got {}", d * d, entries.len())));
        }
        let rho = DensityMatrix::Dense { n_spins, entries };
        let err = rho.hermiticity_error();
        if err > 1e-9 {
            return Err(Error::NotHermitian(err));
        }
        Ok(rho)
    }

    pub fn projector(psi: &StateVector) -> Self {
        DensityMatrix::Ensemble { n_spins: psi.n_spins(), identity_weight: 0.0, members: vec![(1.0, psi.clone())] }
    }

    pub fn mixture(members: Vec<(f64, StateVector)>) -> Result<Self> {
        let n = members.first().map(|m| m.1.n_spins()).ok_or_else(|| Error::InvalidArgument("empty mixture".into()))?;
        if members.iter().any(|m| m.1.n_spins() != n) {
            return Err(Error::Dimension("mixture members differ in size".into()));
        }
        if members.iter().any(|m| m.0 < 0.0) {
            return Err(Error::InvalidArgument("negative mixture weight".into()));
        }
        Ok(DensityMatrix::Ensemble { n_spins: n, identity_weight: 0.0, members })
    }

    pub fn maximally_mixed(n_spins: usize) -> Self {
        DensityMatrix::Ensemble { n_spins, identity_weight: 1.0, members: Vec::new() }
    }

    pub fn n_spins(&self) -> usize {
        match self {
            DensityMatrix::Dense { n_spins, .. } | DensityMatrix::Ensemble { n_spins, .. } => *n_spins,
        }
    }

    pub fn dim(&self) -> usize {
        1 << self.n_spins()
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, DensityMatrix::Dense { .. })
    }

    /// Matrix element `ρ_rs`.
    pub fn entry(&self, r: usize, s: usize) -> C64 {
        match self {
            DensityMatrix::Dense { entries, .. } => entries[r * self.dim() + s],
            DensityMatrix::Ensemble { identity_weight, members, .. } => {
                let mut v: C64 = members.iter().map(|(p, psi)| psi.amps[r] * psi.amps[s].conj() * *p).sum();
                if r == s {
                    v += identity_weight / self.dim() as f64;
                }
                v
            }
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            DensityMatrix::Dense { entries, .. } => (0..self.dim()).map(|r| entries[r * self.dim() + r].re).sum(),
            DensityMatrix::Ensemble { identity_weight, members, .. } => {
                identity_weight + members.iter().map(|(p, psi)| p * psi.norm().powi(2)).sum::<f64>()
            }
        }
    }

    /// Tr(ρ²)
    pub fn purity(&self) -> f64 {
        trace_product(self, self)
    }

    pub fn hermiticity_error(&self) -> f64 {
        match self {
            DensityMatrix::Dense { entries, .. } => {
                let d = self.dim();
                let mut worst = 0.0f64;
                for r in 0..d {
                    for s in r..d {
                        worst = worst.max((entries[r * d + s] - entries[s * d + r].conj()).norm());
                    }
                }
                worst
            }
            DensityMatrix::Ensemble { .. } => 0.0,
        }
    }

    /// Materializes the matrix (N ≤ 8).
    pub fn to_dense(&self) -> Result<DensityMatrix> {
        match self {
            DensityMatrix::Dense { .. } => Ok(self.clone()),
            DensityMatrix::Ensemble { n_spins, .. } => {
                check_dense_size(*n_spins)?;
                let d = self.dim();
                let mut entries = vec![ZERO; d * d];
                for r in 0..d {
                    for s in 0..d {
                        entries[r * d + s] = self.entry(r, s);
                    }
                }
                Ok(DensityMatrix::Dense { n_spins: *n_spins, entries })
            }
        }
    }

    pub fn dense_entries(&self) -> Option<&[C64]> {
        match self {
            DensityMatrix::Dense { entries, .. } => Some(entries),
            _ => None,
        }
    }

    pub fn dense_entries_mut(&mut self) -> Option<&mut [C64]> {
        match self {
            DensityMatrix::Dense { entries, .. } => Some(entries),
            _ => None,
        }
    }

    /// Smallest eigenvalue (dense only); used for positivity checks.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let dense = self.to_dense()?;
        let d = self.dim();
        let m = nalgebra::DMatrix::from_row_slice(d, d, dense.dense_entries().unwrap());
        let eig = nalgebra::SymmetricEigen::new(m);
        Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// Scalar multiple of the matrix (linear-response checks use this).
    pub fn scaled(&self, s: f64) -> DensityMatrix {
        match self {
            DensityMatrix::Dense { n_spins, entries } => {
                DensityMatrix::Dense { n_spins: *n_spins, entries: entries.iter().map(|e| e * s).collect() }
            }
            DensityMatrix::Ensemble { n_spins, identity_weight, members } => DensityMatrix::Ensemble {
                n_spins: *n_spins,
                identity_weight: identity_weight * s,
                members: members.iter().map(|(p, psi)| (p * s, psi.clone())).collect(),
            },
        }
    }

    /// `self + other` as a dense matrix.
    pub fn add_dense(&self, other: &DensityMatrix) -> Result<DensityMatrix> {
        if self.n_spins() != other.n_spins() {
            return Err(Error::Dimension("density matrices differ in size".into()));
        }
        let a = self.to_dense()?;
        let b = other.to_dense()?;
        let entries = a.dense_entries().unwrap().iter().zip(b.dense_entries().unwrap()).map(|(x, y)| x + y).collect();
        Ok(DensityMatrix::Dense { n_spins: self.n_spins(), entries })
    }
}

pub(crate) fn check_dense_size(n_spins: usize) -> Result<()> {
    if n_spins > DENSE_MAX_SPINS {
        Err(Error::Dimension(format!(
            "dense density matrices are limited to {DENSE_MAX_SPINS} spins (got {n_spins})"
        )))
    } else {
        Ok(())
    }
}

/// Either kind of quantum state.
#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

impl State {
    pub fn n_spins(&self) -> usize {
        match self {
            State::Pure(v) => v.n_spins(),
            State::Mixed(r) => r.n_spins(),
        }
    }

    pub fn as_pure(&self) -> Option<&StateVector> {
        match self {
            State::Pure(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_mixed(&self) -> Option<&DensityMatrix> {
        match self {
            State::Mixed(r) => Some(r),
            _ => None,
        }
    }

    /// Density-matrix view (pure states become rank-one ensembles).
    pub fn to_density(&self) -> DensityMatrix {
        match self {
            State::Pure(v) => DensityMatrix::projector(v),
            State::Mixed(r) => r.clone(),
        }
    }

    pub fn entry(&self, r: usize, s: usize) -> C64 {
        match self {
            State::Pure(v) => v.amps[r] * v.amps[s].conj(),
            State::Mixed(rho) => rho.entry(r, s),
        }
    }
}

impl From<StateVector> for State {
    fn from(v: StateVector) -> Self {
        State::Pure(v)
    }
}

impl From<DensityMatrix> for State {
    fn from(r: DensityMatrix) -> Self {
        State::Mixed(r)
    }
}

/// A unitary map described by how it acts on a state vector.
#[derive(Debug, Clone)]
pub enum Unitary<'a> {
    /// `exp(−iHt)`
    Evolve { h: &'a SparseOperator, t: f64 },
    /// Collective hard pulse `exp(−iθ Σ_{k∈mask} (I_kx cosφ + I_ky sinφ))`.
    Rotation { mask: usize, angle: f64, phase: f64 },
    /// Rotation inside span{|all up⟩, |all down⟩} of the spins in `mask`,
    /// identity elsewhere; `|u⟩` plays the role of spin up.
    ExtremeRotation { mask: usize, angle: f64, phase: f64 },
    /// `exp(−iφ Σ_{k∈mask} I_kz)`
    ZRotation { mask: usize, angle: f64 },
}

/// Rotation matrix `[[c, −i s e^{−iφ}], [−i s e^{iφ}, c]]` in (up, down) order.
fn rotation_2x2(angle: f64, phase: f64) -> [[C64; 2]; 2] {
    let c = C64::new((angle / 2.0).cos(), 0.0);
    let s = (angle / 2.0).sin();
    let m01 = C64::new(0.0, -s) * C64::from_polar(1.0, -phase);
    let m10 = C64::new(0.0, -s) * C64::from_polar(1.0, phase);
    [[c, m01], [m10, c]]
}

fn apply_pair(v: &mut [C64], a: usize, b: usize, m: &[[C64; 2]; 2]) {
    let (x, y) = (v[a], v[b]);
    v[a] = m[0][0] * x + m[0][1] * y;
    v[b] = m[1][0] * x + m[1][1] * y;
}

impl<'a> Unitary<'a> {
    /// Applies the map to a vector in place. For `Evolve`, prefer
    /// [`Unitary::applier`] when the same map hits many vectors.
    pub fn apply(&self, v: &mut [C64]) {
        self.applier()(v)
    }

    /// Returns a closure applying the map; the Chebyshev coefficients of an
    /// `Evolve` are computed once.
    pub fn applier(&self) -> Box<dyn Fn(&mut [C64]) + Sync + 'a> {
        match *self {
            Unitary::Evolve { h, t } => {
                if t == 0.0 {
                    return Box::new(|_| {});
                }
                let p = StepPropagator::new(h, t);
                Box::new(move |v| p.apply(v))
            }
            Unitary::Rotation { mask, angle, phase } => {
                let m = rotation_2x2(angle, phase);
                Box::new(move |v| {
                    let mut bits = mask;
                    while bits != 0 {
                        let k = bits.trailing_zeros() as usize;
                        bits &= bits - 1;
                        let b = 1usize << k;
                        for r in 0..v.len() {
                            if r & b == 0 {
                                apply_pair(v, r, r | b, &m);
                            }
                        }
                    }
                })
            }
            Unitary::ExtremeRotation { mask, angle, phase } => {
                let m = rotation_2x2(angle, phase);
                Box::new(move |v| {
                    for r in 0..v.len() {
                        if r & mask == 0 {
                            apply_pair(v, r, r | mask, &m);
                        }
                    }
                })
            }
            Unitary::ZRotation { mask, angle } => Box::new(move |v| {
                for (r, a) in v.iter_mut().enumerate() {
                    *a *= C64::from_polar(1.0, -angle * 0.5 * twice_m(r, mask) as f64);
                }
            }),
        }
    }

    /// Applies `U · U†` to a state.
    pub fn act(&self, state: &State) -> State {
        let f = self.applier();
        match state {
            State::Pure(v) => {
                let mut out = v.clone();
                f(&mut out.amps);
                State::Pure(out)
            }
            State::Mixed(rho) => State::Mixed(conjugate_density(rho, &*f)),
        }
    }
}

/// `U ρ U†` for a unitary given by its action on vectors.
pub fn conjugate_density(rho: &DensityMatrix, f: &(dyn Fn(&mut [C64]) + Sync)) -> DensityMatrix {
    match rho {
        DensityMatrix::Ensemble { n_spins, identity_weight, members } => DensityMatrix::Ensemble {
            n_spins: *n_spins,
            identity_weight: *identity_weight,
            members: members
                .iter()
                .map(|(p, psi)| {
                    let mut out = psi.clone();
                    f(&mut out.amps);
                    (*p, out)
                })
                .collect(),
        },
        DensityMatrix::Dense { n_spins, entries } => {
            let d = 1usize << n_spins;
            // A = Uρ column by column, then ρ' = (U A†)†
            let mut a = entries.clone();
            let mut col = vec![ZERO; d];
            for j in 0..d {
                for i in 0..d {
                    col[i] = a[i * d + j];
                }
                f(&mut col);
                for i in 0..d {
                    a[i * d + j] = col[i];
                }
            }
            let mut out = vec![ZERO; d * d];
            for j in 0..d {
                // column j of A† is conj of row j of A
                for i in 0..d {
                    col[i] = a[j * d + i].conj();
                }
                f(&mut col);
                // B = U A†, ρ' = B†: ρ'[j][i] = conj(B[i][j])
                for i in 0..d {
                    out[j * d + i] = col[i].conj();
                }
            }
            DensityMatrix::Dense { n_spins: *n_spins, entries: out }
        }
    }
}

/// `exp(−iHt)` applied to a state (negative `t` runs backwards).
pub fn evolve(state: &State, h: &SparseOperator, t: f64) -> Result<State> {
    if h.dim() != 1 << state.n_spins() {
        return Err(Error::Dimension(format!("operator dim {} vs state dim {}", h.dim(), 1usize << state.n_spins())));
    }
    h.check_hermitian()?;
    Ok(Unitary::Evolve { h, t }.act(state))
}

/// Ideal hard pulse on every spin of `channel`.
pub fn rotate_collective(state: &State, system: &SpinSystem, channel: usize, angle: f64, phase: f64) -> Result<State> {
    check_state_system(state, system)?;
    if channel >= system.channels().len() {
        return Err(Error::UnknownChannel(format!("#{channel}")));
    }
    Ok(Unitary::Rotation { mask: system.channel_mask(channel), angle, phase }.act(state))
}

/// Ideal transfer between the all-up and all-down states of `channel`.
pub fn mq_transfer(state: &State, system: &SpinSystem, channel: usize, angle: f64, phase: f64) -> Result<State> {
    check_state_system(state, system)?;
    if channel >= system.channels().len() {
        return Err(Error::UnknownChannel(format!("#{channel}")));
    }
    Ok(Unitary::ExtremeRotation { mask: system.channel_mask(channel), angle, phase }.act(state))
}

pub(crate) fn check_state_system(state: &State, system: &SpinSystem) -> Result<()> {
    match state {
        State::Pure(v) => v.check_system(system),
        State::Mixed(r) if r.n_spins() != system.n_spins() => Err(Error::Dimension(format!(
            "state has {} spins, system has {}",
            r.n_spins(),
            system.n_spins()
        ))),
        _ => Ok(()),
    }
}

/// Basis index of the state with the given extreme pattern per channel.
pub fn labeled_index(system: &SpinSystem, labels: &[Label]) -> Result<usize> {
    if labels.len() != system.channels().len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a system with {} channels",
            labels.len(),
            system.channels().len()
        )));
    }
    Ok(labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == Label::D)
        .fold(0, |acc, (c, _)| acc | system.channel_mask(c)))
}

/// Computational basis state `|labels[1]⟩_C |labels[0]⟩_H …`, one label per
/// channel in channel order.
pub fn labeled_state(system: &SpinSystem, labels: &[Label]) -> Result<StateVector> {
    Ok(StateVector::basis(system.n_spins(), labeled_index(system, labels)?))
}

/// Two-channel convenience form taking the proton label first.
pub fn labeled_state_hc(system: &SpinSystem, proton: Label, carbon: Label) -> Result<StateVector> {
    labeled_state(system, &[proton, carbon])
}

/// `(1−ε)·𝟙/2^N + ε|ψ⟩⟨ψ|`
pub fn pseudopure(psi: &StateVector, purity: f64) -> Result<DensityMatrix> {
    if !(purity > 0.0 && purity <= 1.0) {
        return Err(Error::InvalidArgument(format!("pseudopure purity {purity} outside (0, 1]")));
    }
    Ok(DensityMatrix::Ensemble {
        n_spins: psi.n_spins(),
        identity_weight: 1.0 - purity,
        members: vec![(purity, psi.clone())],
    })
}

/// High-temperature deviation `Σ_c γ_c Σ_{i∈c} I_iz`, scaled so the largest
/// diagonal magnitude is one. Traceless; dense, so N ≤ 8.
pub fn thermal_deviation(system: &SpinSystem) -> Result<DensityMatrix> {
    check_dense_size(system.n_spins())?;
    let d = system.dim();
    let diag: Vec<f64> = (0..d)
        .map(|r| {
            (0..system.n_spins())
                .map(|k| system.channels()[system.channel_of(k)].gamma * crate::spin_system::spin_m(r, k))
                .sum()
        })
        .collect();
    let max = diag.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut entries = vec![ZERO; d * d];
    for r in 0..d {
        entries[r * d + r] = C64::new(if max > 0.0 { diag[r] / max } else { 0.0 }, 0.0);
    }
    Ok(DensityMatrix::Dense { n_spins: system.n_spins(), entries })
}

/// `Tr(ρ_a ρ_b)`
pub fn trace_product(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
    let d = a.dim() as f64;
    match (a, b) {
        (DensityMatrix::Dense { entries: x, .. }, DensityMatrix::Dense { entries: y, .. }) => {
            let n = a.dim();
            let mut acc = 0.0;
            for r in 0..n {
                for s in 0..n {
                    acc += (x[r * n + s] * y[s * n + r]).re;
                }
            }
            acc
        }
        (DensityMatrix::Dense { entries, .. }, DensityMatrix::Ensemble { identity_weight, members, .. })
        | (DensityMatrix::Ensemble { identity_weight, members, .. }, DensityMatrix::Dense { entries, .. }) => {
            let n = a.dim();
            let trace: f64 = (0..n).map(|r| entries[r * n + r].re).sum();
            let mut acc = identity_weight / d * trace;
            for (p, psi) in members {
                let mut e = ZERO;
                for r in 0..n {
                    let mut row = ZERO;
                    for s in 0..n {
                        row += entries[r * n + s] * psi.amps[s];
                    }
                    e += psi.amps[r].conj() * row;
                }
                acc += p * e.re;
            }
            acc
        }
        (
            DensityMatrix::Ensemble { identity_weight: wa, members: ma, .. },
            DensityMatrix::Ensemble { identity_weight: wb, members: mb, .. },
        ) => {
            let tra: f64 = ma.iter().map(|(p, v)| p * v.norm().powi(2)).sum();
            let trb: f64 = mb.iter().map(|(p, v)| p * v.norm().powi(2)).sum();
            let mut acc = wa * wb / d + wa / d * trb + wb / d * tra;
            for (p, u) in ma {
                for (q, v) in mb {
                    acc += p * q * u.inner(v).norm_sqr();
                }
            }
            acc
        }
    }
}

/// Phase-invariant state fidelity: `|⟨a|b⟩|²` for two pure states, otherwise
/// the normalized overlap `Tr(ρ_aρ_b) / max(Tr ρ_a², Tr ρ_b²)`.
pub fn fidelity(a: &State, b: &State) -> Result<f64> {
    if a.n_spins() != b.n_spins() {
        return Err(Error::Dimension(format!("fidelity between {} and {} spins", a.n_spins(), b.n_spins())));
    }
    Ok(match (a, b) {
        (State::Pure(x), State::Pure(y)) => x.inner(y).norm_sqr(),
        _ => {
            let (ra, rb) = (a.to_density(), b.to_density());
            let norm = ra.purity().max(rb.purity());
            if norm == 0.0 {
                0.0
            } else {
                trace_product(&ra, &rb) / norm
            }
        }
    })
}

/// Phase of `c` in (−π, π], for reporting.
pub fn phase_of(c: C64) -> f64 {
    let p = c.arg();
    if p <= -PI {
        p + 2.0 * PI
    } else {
        p
    }
}
