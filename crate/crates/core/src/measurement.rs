//! Simulated spectroscopy: small-angle readout, FIDs, spectra, peak picking,
//! phase-incremented order scans and exponential fits.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::coherence::CoherenceProfile;
use crate::dense;
use crate::error::{Error, Result};
use crate::expm::StepPropagator;
use crate::sequence::{CompiledSequence, PulseSequence};
use crate::spin_system::SpinSystem;
use crate::state::{check_state_system, conjugate_density, fidelity, trace_product, DensityMatrix, State, Unitary};

/// Tip angles above this (rad) leave the linear-response regime.
pub const SMALL_TIP_LIMIT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Fid {
    pub samples: Vec<C64>,
    pub dwell: f64,
    pub channel: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<C64>,
    pub channel: String,
}

/// Exponential apodization.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LineBroadening {
    /// Decay to e⁻⁵ at the end of the acquisition window.
    #[default]
    Auto,
    /// Lorentzian full width (Hz): samples weighted by `exp(−π·lb·t)`.
    Hz(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub tip: f64,
    /// `None` picks `1/(2·bandwidth)`.
    pub dwell: Option<f64>,
    pub n_points: usize,
    pub line_broadening: LineBroadening,
}

impl Default for Acquisition {
    fn default() -> Self {
        Acquisition { tip: 5f64.to_radians(), dwell: None, n_points: 4096, line_broadening: LineBroadening::Auto }
    }
}

/// Spectral half-width (Hz) that contains every transition of the free
/// Hamiltonian: `4·Σ|d| + 2·max|offset|`.
pub fn bandwidth(system: &SpinSystem) -> f64 {
    let off = system.channels().iter().fold(0.0f64, |m, c| m.max(c.offset_hz.abs()));
    let bw = 4.0 * system.coupling_sum_abs() + 2.0 * off;
    if bw > 0.0 {
        bw
    } else {
        1000.0
    }
}

pub fn default_dwell(system: &SpinSystem) -> f64 {
    0.5 / bandwidth(system)
}

/// Σ I⁺ over the channel as a sparse operator.
fn raising_operator(system: &SpinSystem, channel: usize) -> crate::operator::SparseOperator {
    let mask = system.channel_mask(channel);
    crate::operator::SparseOperator::from_rows(system.dim(), |r, sink| {
        // ⟨r|I_k⁺|r ^ bit⟩ = 1 when spin k is up in r and down in the column
        let mut bits = mask;
        while bits != 0 {
            let b = bits & bits.wrapping_neg();
            bits &= bits - 1;
            if r & b == 0 {
                sink.push((r | b, C64::new(1.0, 0.0)));
            }
        }
        0.0
    })
}

/// Tips the state on `channel` and records `s(k·dwell) = Tr(ρ(t) Σ I⁺)`
/// under free evolution.
pub fn acquire_fid(state: &State, system: &SpinSystem, channel: &str, acq: &Acquisition) -> Result<Fid> {
    check_state_system(state, system)?;
    if acq.n_points < 2 {
        return Err(Error::InvalidArgument(format!("an FID needs at least 2 points, got {}", acq.n_points)));
    }
    let dwell = acq.dwell.unwrap_or_else(|| default_dwell(system));
    if !(dwell > 0.0) {
        return Err(Error::InvalidArgument(format!("dwell {dwell} must be positive")));
    }
    let c = system.channel_index(channel)?;
    let tip = Unitary::Rotation { mask: system.channel_mask(c), angle: acq.tip, phase: 0.0 };
    let tipped = tip.act(state);
    let iplus = raising_operator(system, c);
    let h = system.free_hamiltonian();
    let n = acq.n_points;
    let samples = match &tipped {
        State::Mixed(rho @ DensityMatrix::Dense { .. }) => dense_signal(rho, &h, &iplus, dwell, n)?,
        State::Pure(v) => vector_signal(&[(1.0, v.amplitudes().to_vec())], &h, &iplus, dwell, n),
        State::Mixed(DensityMatrix::Ensemble { members, .. }) => {
            let m: Vec<(f64, Vec<C64>)> = members.iter().map(|(p, v)| (*p, v.amplitudes().to_vec())).collect();
            vector_signal(&m, &h, &iplus, dwell, n)
        }
    };
    Ok(Fid { samples, dwell, channel: system.channels()[c].label.clone() })
}

/// `Σ_k p_k ⟨ψ_k(t)|I⁺|ψ_k(t)⟩`; the identity part of an ensemble is silent.
fn vector_signal(
    members: &[(f64, Vec<C64>)],
    h: &crate::operator::SparseOperator,
    iplus: &crate::operator::SparseOperator,
    dwell: f64,
    n: usize,
) -> Vec<C64> {
    let step = StepPropagator::new(h, dwell);
    let per_member: Vec<Vec<C64>> = members
        .par_iter()
        .map(|(p, v)| {
            let mut psi = v.clone();
            let mut tmp = vec![C64::new(0.0, 0.0); psi.len()];
            let mut out = Vec::with_capacity(n);
            for k in 0..n {
                if k > 0 {
                    step.apply(&mut psi);
                }
                iplus.apply_into(&psi, &mut tmp);
                let e: C64 = psi.iter().zip(&tmp).map(|(a, b)| a.conj() * b).sum();
                out.push(e * *p);
            }
            out
        })
        .collect();
    (0..n).map(|k| per_member.iter().map(|m| m[k]).sum()).collect()
}

/// Transition-list evaluation in the eigenbasis of the free Hamiltonian.
fn dense_signal(
    rho: &DensityMatrix,
    h: &crate::operator::SparseOperator,
    iplus: &crate::operator::SparseOperator,
    dwell: f64,
    n: usize,
) -> Result<Vec<C64>> {
    let eig = dense::eigh(h)?;
    let d = h.dim();
    let r = nalgebra::DMatrix::from_row_slice(d, d, rho.dense_entries().expect("dense"));
    let ip = nalgebra::DMatrix::from_row_slice(d, d, &iplus.to_dense());
    let v = &eig.vectors;
    let rt = v.adjoint() * r * v;
    let it = v.adjoint() * ip * v;
    let mut lines: Vec<(f64, C64)> = Vec::new();
    for a in 0..d {
        for b in 0..d {
            let w = rt[(a, b)] * it[(b, a)];
            if w.norm() > 1e-15 {
                lines.push((eig.values[a] - eig.values[b], w));
            }
        }
    }
    Ok((0..n)
        .into_par_iter()
        .map(|k| {
            let t = k as f64 * dwell;
            lines.iter().map(|&(om, w)| w * C64::from_polar(1.0, -om * t)).sum()
        })
        .collect())
}

/// Multiplies the FID by the apodization window.
pub fn apodize(fid: &Fid, lb: LineBroadening) -> Fid {
    let n = fid.samples.len();
    let rate = match lb {
        LineBroadening::Auto => 5.0 / (n as f64 * fid.dwell),
        LineBroadening::Hz(w) => PI * w,
    };
    let samples = fid
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| s * (-rate * k as f64 * fid.dwell).exp())
        .collect();
    Fid { samples, dwell: fid.dwell, channel: fid.channel.clone() }
}

/// Unnormalized forward DFT, reordered so frequencies run from −1/(2·dwell)
/// upward: `S_j = Σ_k s_k e^{−2πi f_j t_k}`, `f_j = (j − n/2)/(n·dwell)`.
/// Parseval reads `Σ|s|² = (1/n)·Σ|S|²`.
pub fn spectrum(fid: &Fid) -> Spectrum {
    let n = fid.samples.len();
    let mut buf = fid.samples.clone();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let amplitudes: Vec<C64> = (0..n).map(|j| buf[(j + n - half) % n]).collect();
    let frequencies = (0..n).map(|j| (j as f64 - half as f64) / (n as f64 * fid.dwell)).collect();
    Spectrum { frequencies, amplitudes, channel: fid.channel.clone() }
}

/// Acquisition, apodization and transform in one call.
pub fn acquire_spectrum(state: &State, system: &SpinSystem, channel: &str, acq: &Acquisition) -> Result<Spectrum> {
    let fid = acquire_fid(state, system, channel, acq)?;
    Ok(spectrum(&apodize(&fid, acq.line_broadening)))
}

/// Phase (rad) that makes the tallest point of `spec` real and positive.
pub fn reference_phase(spec: &Spectrum) -> f64 {
    let top = spec.amplitudes.iter().copied().fold(C64::new(0.0, 0.0), |m, a| if a.norm() > m.norm() { a } else { m });
    -top.arg()
}

/// Zero-order phase correction by `phase`.
pub fn rephase(spec: &Spectrum, phase: f64) -> Spectrum {
    let r = C64::from_polar(1.0, phase);
    Spectrum { frequencies: spec.frequencies.clone(), amplitudes: spec.amplitudes.iter().map(|a| a * r).collect(), channel: spec.channel.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub frequency: f64,
    pub amplitude: C64,
}

/// Local maxima of |S| above `threshold·max|S|`, parabolically refined in
/// frequency, sorted by frequency.
pub fn peak_census(spec: &Spectrum, threshold: f64) -> Result<Vec<Peak>> {
    let n = spec.amplitudes.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty spectrum".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    let mag: Vec<f64> = spec.amplitudes.iter().map(|a| a.norm()).collect();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(Vec::new());
    }
    let df = if n > 1 { spec.frequencies[1] - spec.frequencies[0] } else { 0.0 };
    let mut peaks = Vec::new();
    for j in 0..n {
        let (a, b, c) = (mag[(j + n - 1) % n], mag[j], mag[(j + 1) % n]);
        if b >= threshold * max && b > a && b >= c {
            let denom = a - 2.0 * b + c;
            let delta = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
            peaks.push(Peak { frequency: spec.frequencies[j] + delta * df, amplitude: spec.amplitudes[j] });
        }
    }
    peaks.sort_by(|x, y| x.frequency.total_cmp(&y.frequency));
    Ok(peaks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatSignature {
    /// `max_j |cat_j − ½(dd_j + uu_j)| / max_j max(|dd_j|, |uu_j|)`
    pub deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Checks that the cat spectrum is the mean of the two extreme-state spectra.
pub fn cat_signature(cat: &Spectrum, dd: &Spectrum, uu: &Spectrum, tolerance: f64) -> Result<CatSignature> {
    if cat.frequencies != dd.frequencies || cat.frequencies != uu.frequencies {
        return Err(Error::InvalidArgument("spectra are not on a common frequency grid".into()));
    }
    let scale = dd.amplitudes.iter().chain(&uu.amplitudes).fold(0.0f64, |m, a| m.max(a.norm()));
    let dev = cat
        .amplitudes
        .iter()
        .zip(dd.amplitudes.iter().zip(&uu.amplitudes))
        .map(|(c, (d, u))| (c - (d + u) * 0.5).norm())
        .fold(0.0f64, f64::max);
    let deviation = if scale > 0.0 { dev / scale } else { dev };
    Ok(CatSignature { deviation, tolerance, pass: deviation < tolerance })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MqSpectrum {
    pub n_spins: usize,
    /// Round-trip signal at `φ_k = 2πk/K`.
    pub signal: Vec<f64>,
    /// `(q, a_q)` for `q = −N..N`, `a_q = (1/K) Σ_k S(φ_k) e^{iqφ_k}`.
    pub amplitudes: Vec<(i32, f64)>,
}

impl MqSpectrum {
    pub fn amplitude(&self, q: i32) -> f64 {
        self.amplitudes.iter().find(|(o, _)| *o == q).map(|x| x.1).unwrap_or(0.0)
    }

    /// Largest deviation from a coherence profile over all orders.
    pub fn max_deviation(&self, profile: &CoherenceProfile) -> f64 {
        self.amplitudes.iter().map(|&(q, a)| (a - profile.weight(q)).abs()).fold(0.0, f64::max)
    }
}

/// For each of `K` phases, runs `prep`, a collective z rotation by
/// `φ = 2πk/K`, and the exact inverse of `prep`, recording the overlap with
/// the initial state; the discrete Fourier transform over `k` gives the
/// order content of the prepared state.
pub fn mq_order_scan(prep: &PulseSequence, system: &SpinSystem, initial: &State, k: usize) -> Result<MqSpectrum> {
    check_state_system(initial, system)?;
    let n = system.n_spins();
    if k <= 2 * n {
        return Err(Error::InvalidArgument(format!("{k} phase increments alias orders up to ±{n} (need K > {})", 2 * n)));
    }
    let compiled = CompiledSequence::new(prep, system)?;
    let forward = |v: &mut [C64]| compiled.apply(v);
    let prepared = match initial {
        State::Pure(v) => {
            let mut out = v.clone();
            forward(out.amplitudes_mut());
            State::Pure(out)
        }
        State::Mixed(rho) => State::Mixed(conjugate_density(rho, &forward)),
    };
    let mask = system.dim() - 1;
    let signal: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|j| {
            let phi = 2.0 * PI * j as f64 / k as f64;
            let rotated = Unitary::ZRotation { mask, angle: phi }.act(&prepared);
            let back_op = |v: &mut [C64]| compiled.apply_adjoint(v);
            let back = match &rotated {
                State::Pure(v) => {
                    let mut out = v.clone();
                    back_op(out.amplitudes_mut());
                    State::Pure(out)
                }
                State::Mixed(rho) => State::Mixed(conjugate_density(rho, &back_op)),
            };
            match (initial, &back) {
                (State::Pure(_), State::Pure(_)) => fidelity(initial, &back).expect("same size"),
                _ => trace_product(&initial.to_density(), &back.to_density()),
            }
        })
        .collect();
    let amplitudes = (-(n as i32)..=n as i32)
        .map(|q| {
            let a: C64 = signal
                .iter()
                .enumerate()
                .map(|(j, &s)| C64::from_polar(s, q as f64 * 2.0 * PI * j as f64 / k as f64))
                .sum();
            (q, a.re / k as f64)
        })
        .collect();
    Ok(MqSpectrum { n_spins: n, signal, amplitudes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Fitted,
    /// No decay (flat or growing data).
    Infinite,
    /// Relative residual above [`MAX_FIT_RESIDUAL`].
    Rejected,
}

/// Largest accepted RMS residual of `log y` (≈ relative residual).
pub const MAX_FIT_RESIDUAL: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFit {
    pub time_constant: f64,
    pub amplitude: f64,
    /// RMS residual of the fit in `log y`.
    pub residual: f64,
    pub status: FitStatus,
}

/// Least-squares fit of `y = A·exp(−t/T)` on `log y`.
pub fn fit_exponential(t: &[f64], y: &[f64]) -> Result<ExpFit> {
    if t.len() != y.len() {
        return Err(Error::Fit(format!("{} times but {} values", t.len(), y.len())));
    }
    if t.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 samples, got {}", t.len())));
    }
    if let Some((k, v)) = y.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::Fit(format!("sample {k} is non-positive ({v}); the log fit is undefined")));
    }
    let n = t.len() as f64;
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mt = t.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|x| (x - mt).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all sample times are equal".into()));
    }
    let sxy: f64 = t.iter().zip(&ly).map(|(x, v)| (x - mt) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let residual = (t.iter().zip(&ly).map(|(x, v)| (v - intercept - slope * x).powi(2)).sum::<f64>() / n).sqrt();
    let span = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - t.iter().cloned().fold(f64::INFINITY, f64::min);
    let amplitude = intercept.exp();
    if -slope * span < 1e-9 {
        return Ok(ExpFit { time_constant: f64::INFINITY, amplitude, residual, status: FitStatus::Infinite });
    }
    let status = if residual > MAX_FIT_RESIDUAL { FitStatus::Rejected } else { FitStatus::Fitted };
    Ok(ExpFit { time_constant: -1.0 / slope, amplitude, residual, status })
}

pub fn fid_csv(fid: &Fid, header: bool) -> String {
    let mut s = String::new();
    if header {
        s.push_str("time_s,real,imag\n");
    }
    for (k, v) in fid.samples.iter().enumerate() {
        let _ = writeln!(s, "{:e},{:e},{:e}", k as f64 * fid.dwell, v.re, v.im);
    }
    s
}

pub fn spectrum_csv(spec: &Spectrum, header: bool) -> String {
    let mut s = String::new();
    if header {
        s.push_str("freq_hz,real,imag,abs\n");
    }
    for (f, a) in spec.frequencies.iter().zip(&spec.amplitudes) {
        let _ = writeln!(s, "{:e},{:e},{:e},{:e}", f, a.re, a.im, a.norm());
    }
    s
}

pub fn mq_csv(mq: &MqSpectrum, header: bool) -> String {
    let mut s = String::new();
    if header {
        s.push_str("order,amplitude\n");
    }
    for (q, a) in &mq.amplitudes {
        let _ = writeln!(s, "{q},{a:e}");
    }
    s
}

pub fn fit_report(fit: &Result<ExpFit>) -> String {
    match fit {
        Ok(f) => format!(
            "status = {}\ntime_constant_s = {:e}\namplitude = {:e}\nresidual = {:e}\n",
            match f.status {
                FitStatus::Fitted => "fitted",
                FitStatus::Infinite => "infinite",
                FitStatus::Rejected => "rejected",
            },
            f.time_constant,
            f.amplitude,
            f.residual
        ),
        Err(e) => format!("status = error\nmessage = \"{e}\"\n"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(f0: f64, dwell: f64, n: usize) -> Fid {
        Fid {
            samples: (0..n).map(|k| C64::from_polar(1.0, 2.0 * PI * f0 * k as f64 * dwell)).collect(),
            dwell,
            channel: "1H".into(),
        }
    }

    #[test]
    fn on_grid_tone_is_one_bin() {
        let (n, dwell) = (64, 1e-3);
        let f0 = 5.0 / (n as f64 * dwell);
        let s = spectrum(&tone(f0, dwell, n));
        let big: Vec<usize> = (0..n).filter(|&j| s.amplitudes[j].norm() > 1e-9).collect();
        assert_eq!(big.len(), 1);
        assert!((s.frequencies[big[0]] - f0).abs() < 1e-9);
        assert!((s.amplitudes[big[0]].re - n as f64).abs() < 1e-9);
    }

    #[test]
    fn parseval_and_linearity() {
        let a = tone(37.0, 1e-3, 50);
        let b = tone(-120.0, 1e-3, 50);
        let sa = spectrum(&a);
        let time: f64 = a.samples.iter().map(|x| x.norm_sqr()).sum();
        let freq: f64 = sa.amplitudes.iter().map(|x| x.norm_sqr()).sum::<f64>() / 50.0;
        assert!((time - freq).abs() < 1e-9);
        let mix = Fid { samples: a.samples.iter().zip(&b.samples).map(|(x, y)| x * 2.5 + y).collect(), ..a.clone() };
        let sm = spectrum(&mix);
        let sb = spectrum(&b);
        for j in 0..50 {
            assert!((sm.amplitudes[j] - (sa.amplitudes[j] * 2.5 + sb.amplitudes[j])).norm() < 1e-9);
        }
    }

    #[test]
    fn census_refines_off_grid_tone() {
        let fid = apodize(&tone(123.4, 1e-3, 512), LineBroadening::Auto);
        let peaks = peak_census(&spectrum(&fid), 0.1).unwrap();
        assert_eq!(peaks.len(), 1);
        assert!((peaks[0].frequency - 123.4).abs() < 0.5);
        assert!(peak_census(&spectrum(&fid), 1.5).is_err());
    }

    #[test]
    fn exponential_fits() {
        let t = [0.0f64, 0.1, 0.2, 0.3, 0.4];
        let y: Vec<f64> = t.iter().map(|x| (-x / 0.3f64).exp()).collect();
        let f = fit_exponential(&t, &y).unwrap();
        assert!((f.time_constant - 0.3).abs() < 1e-6 && f.status == FitStatus::Fitted);
        let t2 = [0.0f64, 0.005, 0.01, 0.02, 0.04];
        let y2: Vec<f64> = t2.iter().map(|x| 3.0 * (-x / 0.016f64).exp()).collect();
        assert!((fit_exponential(&t2, &y2).unwrap().time_constant - 0.016).abs() < 1e-6);
        let flat = fit_exponential(&t, &[2.0; 5]).unwrap();
        assert_eq!(flat.status, FitStatus::Infinite);
        assert!(flat.time_constant.is_infinite());
        assert!(matches!(fit_exponential(&t, &[1.0, 0.5, 0.0, 0.1, 0.1]), Err(Error::Fit(_))));
        let noisy = fit_exponential(&t, &[1.0, 0.2, 0.5, 0.05, 0.2]).unwrap();
        assert_eq!(noisy.status, FitStatus::Rejected);
    }
}
