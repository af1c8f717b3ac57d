//! Coherence-order bookkeeping and ideal order-selective filters.
//!
//! The order of element `ρ_rs` is `q = M(r) − M(s)`, which under the basis
//! convention equals `popcount(s) − popcount(r)`.

use std::collections::BTreeSet;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::state::{DensityMatrix, State, StateVector};

/// Order of element `(r, s)`.
pub fn order(r: usize, s: usize) -> i32 {
    s.count_ones() as i32 - r.count_ones() as i32
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceProfile {
    n_spins: usize,
    weights: Vec<f64>,
}

impl CoherenceProfile {
    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    /// Weight at order `q`; zero outside `[−N, N]`.
    pub fn weight(&self, q: i32) -> f64 {
        let idx = q + self.n_spins as i32;
        if idx < 0 || idx as usize >= self.weights.len() {
            0.0
        } else {
            self.weights[idx as usize]
        }
    }

    /// `(q, weight)` pairs from `−N` to `N`.
    pub fn iter(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.weights.iter().enumerate().map(move |(k, &w)| (k as i32 - self.n_spins as i32, w))
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// `Y(m) = Σ_{r: popcount(r)=m} a_r · conj(b_r)`
fn sector_sums(n: usize, a: &StateVector, b: &StateVector) -> Vec<C64> {
    let mut y = vec![C64::new(0.0, 0.0); n + 1];
    for (r, (x, z)) in a.amplitudes().iter().zip(b.amplitudes()).enumerate() {
        y[r.count_ones() as usize] += x * z.conj();
    }
    y
}

pub fn coherence_profile(state: &State) -> CoherenceProfile {
    match state {
        State::Pure(v) => ensemble_profile(v.n_spins(), 0.0, &[(1.0, v.clone())]),
        State::Mixed(DensityMatrix::Ensemble { n_spins, identity_weight, members }) => {
            ensemble_profile(*n_spins, *identity_weight, members)
        }
        State::Mixed(DensityMatrix::Dense { n_spins, entries }) => {
            let n = *n_spins;
            let d = 1usize << n;
            let mut weights = vec![0.0; 2 * n + 1];
            for r in 0..d {
                for s in 0..d {
                    weights[(order(r, s) + n as i32) as usize] += entries[r * d + s].norm_sqr();
                }
            }
            CoherenceProfile { n_spins: n, weights }
        }
    }
}

/// Profile of `w·𝟙/d + Σ p_k|ψ_k⟩⟨ψ_k|` without forming the matrix:
/// the cross term of members k, l at order q is `Σ_m Y_kl(m)·conj(Y_kl(m+q))`
/// with `Y_kl` the popcount-sector sums of `ψ_k ⊙ conj(ψ_l)`.
fn ensemble_profile(n: usize, w: f64, members: &[(f64, StateVector)]) -> CoherenceProfile {
    let d = (1usize << n) as f64;
    let mut weights = vec![0.0; 2 * n + 1];
    for (k, (p, a)) in members.iter().enumerate() {
        for (l, (q, b)) in members.iter().enumerate() {
            if l < k {
                continue;
            }
            let y = sector_sums(n, a, b);
            let factor = if l == k { 1.0 } else { 2.0 };
            // element (r, s) with popcount r = m, popcount s = m + q has order q
            for m in 0..=n {
                for m2 in 0..=n {
                    let ord = m2 as i32 - m as i32;
                    let v = (y[m] * y[m2].conj()).re;
                    weights[(ord + n as i32) as usize] += factor * p * q * v;
                }
            }
        }
    }
    if w != 0.0 {
        let trace_members: f64 = members.iter().map(|(p, v)| p * v.norm().powi(2)).sum();
        weights[n] += w * w / d + 2.0 * w / d * trace_members;
    }
    CoherenceProfile { n_spins: n, weights }
}

/// Zeroes every element whose order is not in `retain`. The set must be
/// symmetric under `q → −q`; dense matrices only.
pub fn crusher(rho: &DensityMatrix, retain: &BTreeSet<i32>) -> Result<DensityMatrix> {
    if let Some(q) = retain.iter().find(|q| !retain.contains(&-**q)) {
        return Err(Error::InvalidArgument(format!(
            "crusher retain set is not symmetric (contains {q} but not {})",
            -q
        )));
    }
    let dense = rho.to_dense()?;
    let n = dense.n_spins();
    let d = 1usize << n;
    let mut entries = dense.dense_entries().unwrap().to_vec();
    for r in 0..d {
        for s in 0..d {
            if !retain.contains(&order(r, s)) {
                entries[r * d + s] = C64::new(0.0, 0.0);
            }
        }
    }
    Ok(DensityMatrix::Dense { n_spins: n, entries })
}

/// Promotes a state to a dense density matrix and applies [`crusher`].
pub fn crush_state(state: &State, retain: &BTreeSet<i32>) -> Result<State> {
    Ok(State::Mixed(crusher(&state.to_density(), retain)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::pseudopure;

    fn cat(n: usize) -> StateVector {
        let d = 1usize << n;
        let mut amps = vec![C64::new(0.0, 0.0); d];
        amps[0] = C64::new(1.0, 0.0);
        amps[d - 1] = C64::new(1.0, 0.0);
        StateVector::from_amplitudes(amps).unwrap()
    }

    #[test]
    fn basis_state_profile() {
        let p = coherence_profile(&State::Pure(StateVector::basis(5, 13)));
        assert_eq!(p.weight(0), 1.0);
        assert_eq!(p.total(), 1.0);
    }

    #[test]
    fn cat_profiles() {
        for n in [2usize, 12] {
            let p = coherence_profile(&State::Pure(cat(n)));
            assert!((p.weight(0) - 0.5).abs() < 1e-12);
            assert!((p.weight(n as i32) - 0.25).abs() < 1e-12);
            assert!((p.weight(-(n as i32)) - 0.25).abs() < 1e-12);
        }
        // uu has M=+N/2, dd has M=−N/2; the element |uu⟩⟨dd| carries q=+N
        assert_eq!(order(0, 3), 2);
    }

    #[test]
    fn ensemble_and_dense_agree() {
        let psi = StateVector::from_amplitudes((0..16).map(|k| C64::new((k as f64).sin(), (k as f64 * 0.3).cos())).collect())
            .unwrap();
        let rho = pseudopure(&psi, 0.4).unwrap();
        let a = coherence_profile(&State::Mixed(rho.clone()));
        let b = coherence_profile(&State::Mixed(rho.to_dense().unwrap()));
        for q in -4..=4 {
            assert!((a.weight(q) - b.weight(q)).abs() < 1e-12, "q={q}");
        }
        assert!((a.total() - rho.purity()).abs() < 1e-12);
    }

    #[test]
    fn crusher_cases() {
        let rho = DensityMatrix::projector(&cat(3));
        let zero: BTreeSet<i32> = [0].into_iter().collect();
        let out = crusher(&rho, &zero).unwrap();
        assert!((out.entry(0, 0).re - 0.5).abs() < 1e-15 && (out.entry(7, 7).re - 0.5).abs() < 1e-15);
        assert_eq!(out.entry(0, 7), C64::new(0.0, 0.0));
        assert!((out.trace() - 1.0).abs() < 1e-15);
        let all: BTreeSet<i32> = (-3..=3).collect();
        assert_eq!(crusher(&rho, &all).unwrap(), rho.to_dense().unwrap());
        let lopsided: BTreeSet<i32> = [0, 3].into_iter().collect();
        assert!(crusher(&rho, &lopsided).is_err());
    }
}
