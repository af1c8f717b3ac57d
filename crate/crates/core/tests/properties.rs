use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spincat::coherence::{coherence_profile, order};
use spincat::config::parse_config;
use spincat::measurement::{acquire_fid, fit_exponential, mq_order_scan, Acquisition, FitStatus, LineBroadening};
use spincat::protocol::{build_cat_protocol, ProtocolMode, ProtocolParams};
use spincat::sequence::{run_final, sequence_unitary, time_reverse, phase_aligned_distance, DelayPolicy, PulseEvent, PulseSequence, RunOptions};
use spincat::spin_system::{build_preset, twice_m, Channel, Preset, SpinSystem};
use spincat::state::{evolve, fidelity, pseudopure, DensityMatrix, State, StateVector};
use spincat::C64;

fn random_system(seed: u64, n: usize) -> SpinSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = vec![Channel::new("1H", rng.gen_range(-500.0..500.0)), Channel::new("13C", rng.gen_range(-500.0..500.0))];
    let of: Vec<usize> = (0..n).map(|k| if k == 0 { 0 } else if k == 1 { 1 } else { rng.gen_range(0..2) }).collect();
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v = rng.gen_range(-2500.0..2500.0);
            c[i * n + j] = v;
            c[j * n + i] = v;
        }
    }
    SpinSystem::new("random", channels, of, c).unwrap()
}

fn random_vector(seed: u64, n: usize) -> StateVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    StateVector::from_gaussian(n, || rng.sample(StandardNormal))
}

fn random_mixture(seed: u64, n: usize) -> DensityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    let members = w.iter().enumerate().map(|(k, p)| (p / total, random_vector(seed.wrapping_mul(7).wrapping_add(k as u64), n))).collect();
    DensityMatrix::mixture(members).unwrap()
}

fn amp_distance(a: &State, b: &State) -> f64 {
    let (a, b) = (a.as_pure().unwrap(), b.as_pure().unwrap());
    a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn couplings_are_symmetric(seed in any::<u64>(), n in 2usize..6) {
        let s = random_system(seed, n);
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(s.coupling(i, j), s.coupling(j, i));
            }
        }
    }

    #[test]
    fn free_hamiltonian_is_hermitian_and_conserves_m(seed in any::<u64>(), n in 2usize..6) {
        let s = random_system(seed, n);
        let h = s.free_hamiltonian();
        prop_assert!(h.hermiticity_error() < 1e-9);
        for r in 0..s.dim() {
            for (c, v) in h.row(r) {
                if v.norm() > 0.0 {
                    prop_assert_eq!(r.count_ones(), c.count_ones());
                }
            }
        }
    }

    #[test]
    fn dq_hamiltonian_changes_channel_m_by_two(seed in any::<u64>(), n in 2usize..6, ch in 0usize..2) {
        let s = random_system(seed, n);
        let h = s.dq_hamiltonian(ch).unwrap();
        prop_assert!(h.hermiticity_error() < 1e-9);
        let mask = s.channel_mask(ch);
        let other = (s.dim() - 1) & !mask;
        for r in 0..s.dim() {
            for (c, v) in h.row(r) {
                if r != c && v.norm() > 0.0 {
                    prop_assert_eq!((twice_m(r, mask) - twice_m(c, mask)).abs(), 4);
                    prop_assert_eq!(r & other, c & other);
                }
            }
        }
    }

    #[test]
    fn evolution_preserves_norm(seed in any::<u64>(), n in 2usize..7, t in 0.0f64..5e-3) {
        let s = random_system(seed, n);
        let psi = random_vector(seed ^ 1, n);
        let out = evolve(&State::Pure(psi), &s.free_hamiltonian(), t).unwrap();
        prop_assert!((out.as_pure().unwrap().norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn profile_weights_sum_to_purity(seed in any::<u64>(), n in 2usize..6) {
        let rho = random_mixture(seed, n);
        let prof = coherence_profile(&State::Mixed(rho.clone()));
        prop_assert!((prof.total() - rho.purity()).abs() < 1e-10);
        let pure = coherence_profile(&State::Pure(random_vector(seed, n)));
        prop_assert!((pure.total() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn crusher_keeps_only_retained_orders(seed in any::<u64>(), n in 2usize..5, keep in 0i32..3) {
        let rho = random_mixture(seed, n).to_dense().unwrap();
        let retain: BTreeSet<i32> = [keep, -keep].into_iter().collect();
        let out = spincat::coherence::crusher(&rho, &retain).unwrap();
        for r in 0..rho.dim() {
            for c in 0..rho.dim() {
                let expected = if retain.contains(&order(r, c)) { rho.entry(r, c) } else { C64::new(0.0, 0.0) };
                prop_assert!((out.entry(r, c) - expected).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn reversed_sequence_restores_state(seed in any::<u64>(), n in 2usize..6, len in 1usize..6) {
        let s = random_system(seed, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let events: Vec<PulseEvent> = (0..len)
            .map(|_| match rng.gen_range(0..3) {
                0 => PulseEvent::HardPulse {
                    channel: ["1H", "13C"][rng.gen_range(0..2)].to_string(),
                    angle: rng.gen_range(0.0..PI),
                    phase: rng.gen_range(0.0..2.0 * PI),
                },
                1 => PulseEvent::Delay(rng.gen_range(0.0..2e-4)),
                _ => PulseEvent::EffectiveDq {
                    channel: ["1H", "13C"][rng.gen_range(0..2)].to_string(),
                    duration: rng.gen_range(0.0..2e-4),
                    sign: 1,
                },
            })
            .collect();
        let seq = PulseSequence::new("fwd", events);
        let back = time_reverse(&seq, &DelayPolicy::Privileged).unwrap();
        let psi = State::Pure(random_vector(seed ^ 3, n));
        let mid = run_final(&seq, &psi, &s, RunOptions::default()).unwrap();
        let end = run_final(&back, &mid, &s, RunOptions::default()).unwrap();
        prop_assert!(amp_distance(&end, &psi) < 1e-9);
    }

    #[test]
    fn fid_is_linear_in_the_state(seed in any::<u64>(), a in 0.1f64..1.0) {
        let s = random_system(seed, 4);
        let acq = Acquisition { n_points: 64, line_broadening: LineBroadening::Hz(0.0), ..Acquisition::default() };
        let r1 = random_mixture(seed, 4).to_dense().unwrap();
        let r2 = random_mixture(seed ^ 5, 4).to_dense().unwrap();
        let mix = r1.scaled(a).add_dense(&r2.scaled(1.0 - a)).unwrap();
        let f1 = acquire_fid(&State::Mixed(r1), &s, "1H", &acq).unwrap();
        let f2 = acquire_fid(&State::Mixed(r2), &s, "1H", &acq).unwrap();
        let fm = acquire_fid(&State::Mixed(mix), &s, "1H", &acq).unwrap();
        for k in 0..fm.samples.len() {
            let expected = f1.samples[k] * a + f2.samples[k] * (1.0 - a);
            prop_assert!((fm.samples[k] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn pseudopure_signal_scales_with_purity(seed in any::<u64>(), eps in 0.01f64..1.0) {
        let s = random_system(seed, 4);
        let acq = Acquisition { n_points: 64, line_broadening: LineBroadening::Hz(0.0), ..Acquisition::default() };
        let psi = random_vector(seed, 4);
        let full = acquire_fid(&State::Mixed(pseudopure(&psi, 1.0).unwrap()), &s, "1H", &acq).unwrap();
        let part = acquire_fid(&State::Mixed(pseudopure(&psi, eps).unwrap()), &s, "1H", &acq).unwrap();
        for k in 0..full.samples.len() {
            prop_assert!((part.samples[k] - full.samples[k] * eps).norm() < 1e-12);
        }
    }

    #[test]
    fn fit_recovers_exact_exponentials(t_const in 1e-3f64..1.0, amp in 0.01f64..10.0) {
        let t: Vec<f64> = (0..8).map(|k| k as f64 * t_const / 4.0).collect();
        let y: Vec<f64> = t.iter().map(|x| amp * (-x / t_const).exp()).collect();
        let fit = fit_exponential(&t, &y).unwrap();
        prop_assert_eq!(fit.status, FitStatus::Fitted);
        prop_assert!((fit.time_constant / t_const - 1.0).abs() < 1e-6);
        prop_assert!((fit.amplitude / amp - 1.0).abs() < 1e-6);
    }

    #[test]
    fn config_echo_is_a_fixed_point(purity in 0.01f64..1.0, seed in any::<u64>(), points in 16usize..4096, thr in 0.01f64..0.9) {
        let text = format!(
            "experiment spectrum\nsystem preset benzene6\npurity {purity}\nseed {seed}\npoints {points}\nthreshold {thr}\nt2 1H 0.2\n"
        );
        let once = parse_config(&text).unwrap().echo();
        let twice = parse_config(&once).unwrap().echo();
        prop_assert_eq!(once, twice);
    }
}

#[test]
fn identity_is_silent() {
    let s = build_preset(Preset::Benzene6, None).unwrap();
    let acq = Acquisition { n_points: 128, ..Acquisition::default() };
    let fid = acquire_fid(&State::Mixed(DensityMatrix::maximally_mixed(s.n_spins())), &s, "1H", &acq).unwrap();
    assert!(fid.samples.iter().all(|x| x.norm() < 1e-14));
}

#[test]
fn fit_recovers_reference_time_constants() {
    for tc in [0.30, 0.016] {
        let t: Vec<f64> = (0..6).map(|k| k as f64 * tc / 3.0).collect();
        let y: Vec<f64> = t.iter().map(|x| (-x / tc).exp()).collect();
        let fit = fit_exponential(&t, &y).unwrap();
        assert!((fit.time_constant - tc).abs() < 1e-6 * tc, "{tc} -> {}", fit.time_constant);
    }
}

#[test]
fn fit_rejects_non_positive_samples() {
    assert!(fit_exponential(&[0.0, 1.0, 2.0], &[1.0, 0.0, 0.5]).is_err());
}

fn identity_distance(u: &DMatrix<C64>) -> f64 {
    phase_aligned_distance(u, &DMatrix::identity(u.nrows(), u.ncols()))
}

#[test]
fn reversal_steps_invert_their_partners() {
    let s = build_preset(Preset::Benzene12, None).unwrap().subcluster(&[0, 1, 2, 6, 7, 8], "half").unwrap();
    for mode in [ProtocolMode::Ideal, ProtocolMode::EffectiveDq] {
        let p = build_cat_protocol(&s, &ProtocolParams { mode, ..ProtocolParams::default() }).unwrap();
        for (fwd, rev) in [('B', 'J'), ('C', 'I'), ('D', 'H'), ('E', 'G')] {
            let u = sequence_unitary(&p.step(fwd).sequence, &s).unwrap();
            let v = sequence_unitary(&p.step(rev).sequence, &s).unwrap();
            let d = identity_distance(&(v * u));
            assert!(d < 1e-9, "{mode} {fwd}/{rev}: {d:e}");
        }
    }
}

#[test]
fn protocol_steps_reach_their_references() {
    let full = build_preset(Preset::Benzene12, None).unwrap();
    let cases = [
        (ProtocolMode::Ideal, full.subcluster(&[0, 1, 2, 6, 7, 8], "half").unwrap()),
        (ProtocolMode::EffectiveDq, full.subcluster(&[0, 1, 6, 7], "quarter").unwrap()),
    ];
    for (mode, s) in cases {
        let p = build_cat_protocol(&s, &ProtocolParams { mode, ..ProtocolParams::default() }).unwrap();
        let mut state = State::Pure(p.initial_state().clone());
        for step in p.steps() {
            state = run_final(&step.sequence, &state, &s, RunOptions::default()).unwrap();
            let reference = step.reference.clone().unwrap();
            if mode == ProtocolMode::Ideal {
                let f = fidelity(&state, &State::Pure(reference)).unwrap();
                assert!(f > 0.999, "{mode} step {}: {f}", step.label);
            } else if !matches!(step.label, 'E' | 'F') {
                let got = state.as_pure().unwrap().amplitudes();
                let dev = got
                    .iter()
                    .zip(reference.amplitudes())
                    .map(|(a, b)| (a.norm_sqr() - b.norm_sqr()).abs())
                    .fold(0.0, f64::max);
                assert!(dev < 1e-3, "{mode} step {} populations off by {dev}", step.label);
            }
        }
    }
}

#[test]
fn mq_scan_matches_profile_for_random_preparations() {
    let s = random_system(3, 4);
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let events = (0..4)
            .map(|_| PulseEvent::HardPulse {
                channel: ["1H", "13C"][rng.gen_range(0..2)].to_string(),
                angle: rng.gen_range(0.0..PI),
                phase: rng.gen_range(0.0..2.0 * PI),
            })
            .chain([PulseEvent::Delay(1e-4)])
            .collect();
        let prep = PulseSequence::new("prep", events);
        let initial = State::Pure(StateVector::basis(4, 0));
        let mq = mq_order_scan(&prep, &s, &initial, 16).unwrap();
        let direct = coherence_profile(&run_final(&prep, &initial, &s, RunOptions::default()).unwrap());
        assert!(mq.max_deviation(&direct) < 1e-9);
    }
}
