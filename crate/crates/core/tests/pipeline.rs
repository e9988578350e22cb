//! End-to-end checks that cross module boundaries.

use btc_metrology::bounds::spectral_rate;
use btc_metrology::liouvillian::build_liouvillian;
use btc_metrology::monitoring::{
    run_ensemble, simulate_trajectory, FiMethod, InitialState, Scheme, UnravellingConfig,
};
use btc_metrology::qfi::{analytic_fglobal, steady_state_qfi};
use btc_metrology::scaling::{local_exponents, susceptibility_exponents};
use btc_metrology::spectrum::liouvillian_eigenvalues;
use btc_metrology::spin::SpinSector;

fn sector(n: usize) -> SpinSector {
    SpinSector::new(n).unwrap()
}

#[test]
fn large_drive_rate_approaches_closed_form() {
    let f = spectral_rate(&build_liouvillian(sector(10), 100.0, 1.0).unwrap()).unwrap();
    let exact = analytic_fglobal(10, 1.0);
    assert!((f / exact - 1.0).abs() < 0.01, "{f} vs {exact}");
}

#[test]
fn homodyne_current_oscillates_at_slowest_mode() {
    let (n, omega) = (20, 4.0);
    let ev = liouvillian_eigenvalues(&build_liouvillian(sector(n), omega, 1.0).unwrap()).unwrap();
    let slowest = ev
        .iter()
        .filter(|z| z.im > 1e-6)
        .min_by(|a, b| a.re.abs().total_cmp(&b.re.abs()))
        .unwrap()
        .im;

    let cfg = UnravellingConfig {
        scheme: Scheme::Homodyne,
        n_spins: n,
        omega,
        horizon: 100.0,
        initial: InitialState::Dark,
        keep_record: true,
        ..Default::default()
    };
    let dt = cfg.step();
    let skip = (10.0 / dt) as usize;
    let freqs: Vec<f64> = (20..800).map(|k| k as f64 * 0.01).collect();
    let mut power = vec![0.0; freqs.len()];
    for traj in 0..4 {
        let rec = simulate_trajectory(&cfg, traj).unwrap();
        let record = &rec.current[skip..];
        for (p, &nu) in power.iter_mut().zip(&freqs) {
            // Rotate by a recurrence instead of calling sin/cos per sample.
            let (s, c) = (nu * dt).sin_cos();
            let (mut re, mut im, mut acc_re, mut acc_im) = (1.0f64, 0.0f64, 0.0, 0.0);
            for &x in record {
                acc_re += x * re;
                acc_im += x * im;
                (re, im) = (re * c - im * s, re * s + im * c);
            }
            *p += acc_re * acc_re + acc_im * acc_im;
        }
    }
    let peak = freqs[power
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0];
    assert!((peak / slowest - 1.0).abs() < 0.05, "peak {peak} vs mode {slowest}");
}

#[test]
fn homodyne_beats_photodetection_at_low_efficiency() {
    let rate = |scheme| {
        let cfg = UnravellingConfig {
            scheme,
            eta: 0.25,
            n_spins: 4,
            horizon: 30.0,
            n_traj: 100,
            seed: 17,
            initial: InitialState::Steady,
            ..Default::default()
        };
        run_ensemble(&cfg).unwrap().rate(None, FiMethod::Compensator).unwrap()
    };
    let hom = rate(Scheme::Homodyne);
    let pd = rate(Scheme::Photodetection);
    assert!(hom.value - 2.0 * hom.std_error > pd.value + 2.0 * pd.std_error, "{hom:?} {pd:?}");
    assert!(hom.value < 8.0 / 1.5);
}

#[test]
fn conditional_qfi_term_saturates() {
    let cfg = UnravellingConfig {
        n_spins: 1,
        horizon: 20.0,
        n_traj: 1000,
        seed: 3,
        initial: InitialState::Dark,
        extra_times: vec![10.0],
        conditional_qfi: true,
        ..Default::default()
    };
    let ens = run_ensemble(&cfg).unwrap();
    let at = |t: f64| ens.conditional_qfi_at(ens.checkpoint_index(t)).unwrap();
    let (mid, end) = (at(10.0), at(20.0));
    let signal = ens.fisher_at(ens.checkpoint_index(20.0), FiMethod::Compensator).unwrap();
    // Doubling the time leaves the term flat while the signal keeps growing.
    assert!((end.value - mid.value).abs() < 3.0 * (end.std_error + mid.std_error) + 0.1 * mid.value);
    assert!(end.value < 0.25 * signal.value, "{end:?} {signal:?}");
}

#[test]
fn critical_steady_state_qfi_is_superlinear() {
    let sizes = [10.0, 20.0, 30.0, 40.0, 50.0];
    let q: Vec<f64> = sizes
        .iter()
        .map(|&n| steady_state_qfi(sector(n as usize), 1.0, 1.0).unwrap())
        .collect();
    let s = local_exponents(&sizes, &q).unwrap();
    let last = s.exponents.last().unwrap().1;
    assert!(last > 1.0, "{:?}", s.exponents);
}

#[test]
fn susceptibility_route_near_minus_two_thirds() {
    let (sy, sz) = susceptibility_exponents(&[10, 20, 30, 40], 1.0, 1.0).unwrap();
    assert!(sy.iter().chain(&sz).all(|d| d.1 < 0.0), "{sy:?} {sz:?}");
    let last = sz.last().unwrap().1;
    assert!((last + 2.0 / 3.0).abs() < 0.1, "{sz:?}");
    // The J_y route is still drifting towards it from below.
    assert!(sy.windows(2).all(|w| w[1].1 > w[0].1), "{sy:?}");
}
