//! Action of `exp(−iHt)` on vectors by Chebyshev expansion.
//!
//! The spectrum of `H` is enclosed with Gershgorin discs, shifted to be
//! centred at zero and scaled onto `[−1, 1]`. The expansion coefficients are
//! Bessel functions `J_k(a·t)`; the series is truncated once they fall below
//! `COEFF_TOL` past the transition region `k > a·t`. Long times are split into
//! equal sub-steps with `a·Δt ≤ MAX_ARG`.

use num_complex::Complex64 as C64;

use crate::operator::SparseOperator;

const MAX_ARG: f64 = 40.0;
const COEFF_TOL: f64 = 1e-17;

/// Bessel functions `J_0(x) … J_kmax(x)` of the first kind, `x ≥ 0`, by
/// Miller's backward recurrence normalized with `J_0 + 2ΣJ_2k = 1`.
pub fn bessel_j_sequence(x: f64, kmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; kmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let start = kmax.max(x.ceil() as usize) + 20 + (10.0 * x.max(1.0).cbrt()) as usize + 10;
    let start = start + (start & 1);
    let mut jp1 = 0.0f64;
    let mut j = 1e-300f64;
    let mut norm = 0.0f64;
    let mut vals = vec![0.0; start + 1];
    vals[start] = j;
    for k in (1..=start).rev() {
        let jm1 = 2.0 * k as f64 / x * j - jp1;
        jp1 = j;
        j = jm1;
        vals[k - 1] = j;
        if j.abs() > 1e250 {
            for v in vals[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
            j *= 1e-250;
            jp1 *= 1e-250;
        }
    }
    for (k, v) in vals.iter().enumerate() {
        if k == 0 {
            norm += v;
        } else if k % 2 == 0 {
            norm += 2.0 * v;
        }
    }
    for k in 0..=kmax {
        out[k] = vals[k] / norm;
    }
    out
}

/// Precomputed propagator `exp(−iHt)` for one fixed time step.
#[derive(Debug, Clone)]
pub struct StepPropagator<'a> {
    h: &'a SparseOperator,
    center: f64,
    half_width: f64,
    coeffs: Vec<C64>,
    substeps: usize,
    phase: C64,
}

impl<'a> StepPropagator<'a> {
    pub fn new(h: &'a SparseOperator, t: f64) -> Self {
        let (lo, hi) = h.gershgorin_bounds();
        let center = 0.5 * (lo + hi);
        let half_width = 0.5 * (hi - lo);
        let total = half_width * t.abs();
        let substeps = (total / MAX_ARG).ceil().max(1.0) as usize;
        let dt = t / substeps as f64;
        let x = half_width * dt.abs();
        let kmax = (x + 12.0 * x.max(1.0).cbrt() + 40.0).ceil() as usize;
        let j = bessel_j_sequence(x, kmax);
        let mut coeffs = Vec::with_capacity(kmax + 1);
        // (−i)^k with the sign of t folded in: J_k(−x) = (−1)^k J_k(x)
        let step = if dt >= 0.0 { C64::new(0.0, -1.0) } else { C64::new(0.0, 1.0) };
        let mut ik = C64::new(1.0, 0.0);
        for (k, &jk) in j.iter().enumerate() {
            let c = if k == 0 { jk } else { 2.0 * jk };
            coeffs.push(ik * c);
            ik *= step;
            if k as f64 > x && jk.abs() < COEFF_TOL {
                break;
            }
        }
        let phase = C64::from_polar(1.0, -center * dt);
        StepPropagator { h, center, half_width, coeffs, substeps, phase }
    }

    pub fn n_terms(&self) -> usize {
        self.coeffs.len()
    }

    /// Applies the step in place.
    pub fn apply(&self, v: &mut [C64]) {
        if self.half_width == 0.0 || self.coeffs.len() == 1 {
            let c = self.coeffs[0] * self.phase;
            for _ in 0..self.substeps {
                v.iter_mut().for_each(|x| *x *= c);
            }
            return;
        }
        let n = v.len();
        let inv = 1.0 / self.half_width;
        let mut w_prev = vec![C64::new(0.0, 0.0); n];
        let mut w_cur = vec![C64::new(0.0, 0.0); n];
        let mut w_next = vec![C64::new(0.0, 0.0); n];
        let mut acc = vec![C64::new(0.0, 0.0); n];
        for _ in 0..self.substeps {
            w_prev.copy_from_slice(v);
            for (a, x) in acc.iter_mut().zip(v.iter()) {
                *a = *x * self.coeffs[0];
            }
            // w1 = H̃ v
            self.h.apply_into(&w_prev, &mut w_cur);
            for (w, x) in w_cur.iter_mut().zip(w_prev.iter()) {
                *w = (*w - *x * self.center) * inv;
            }
            for (a, w) in acc.iter_mut().zip(w_cur.iter()) {
                *a += *w * self.coeffs[1];
            }
            for &c in &self.coeffs[2..] {
                self.h.apply_into(&w_cur, &mut w_next);
                for k in 0..n {
                    w_next[k] = (w_next[k] - w_cur[k] * self.center) * (2.0 * inv) - w_prev[k];
                }
                for (a, w) in acc.iter_mut().zip(w_next.iter()) {
                    *a += *w * c;
                }
                std::mem::swap(&mut w_prev, &mut w_cur);
                std::mem::swap(&mut w_cur, &mut w_next);
            }
            for (x, a) in v.iter_mut().zip(acc.iter()) {
                *x = *a * self.phase;
            }
        }
    }
}

/// `exp(−iHt) v` for a Hermitian sparse `H`.
pub fn expm_apply(h: &SparseOperator, t: f64, v: &[C64]) -> Vec<C64> {
    let mut out = v.to_vec();
    if t != 0.0 {
        StepPropagator::new(h, t).apply(&mut out);
    }
    out
}
