//! Cross-module signal-model checks at the production sample rate.

use num_complex::Complex64;
use proptest::prelude::*;
use radsense::features::frame_count;
use radsense::radar::{catalog, synthesize_pulse, synthesize_pulse_train, PulseTrainParams};
use radsense::signal::{measure_peak_power_per_mhz, measure_power, BandSpec, IqBuffer, REF_DBM};
use radsense::testutil::{energy_fraction_in_band, fit_chirp_rate, wgn};

const FS: f64 = 61.44e6;

#[test]
fn bin1a_train_peak_reads_ref_dbm() {
    // Unit-amplitude BIN1-A occupies 1 MHz, so its in-band peak must sit at
    // the digital reference within 0.5 dB.
    let spec = catalog()[0];
    let train = synthesize_pulse_train(&PulseTrainParams {
        spec,
        amplitude: 1.0,
        phase0_rad: 0.3,
        f0_hz: -spec.bw_hz / 2.0,
        num_pulses: 8,
        sample_rate_hz: FS,
        total_duration_s: 8.0 * spec.pri_s(),
    })
    .unwrap();
    let band = BandSpec::centered(0.0, spec.bw_hz).unwrap();
    let peak = measure_peak_power_per_mhz(&train, &band).unwrap();
    assert!(
        (peak - REF_DBM).abs() < 0.5,
        "peak {peak} dBm/MHz vs {REF_DBM}"
    );
}

#[test]
fn every_catalog_pulse_keeps_90pct_energy_in_band() {
    for spec in catalog() {
        let f0 = -spec.bw_hz / 2.0;
        let pulse = synthesize_pulse(&spec, 1.0, 0.0, f0, FS).unwrap();
        let frac = energy_fraction_in_band(&pulse, f0, f0 + spec.bw_hz);
        assert!(
            frac >= 0.90,
            "{}: only {:.1}% of energy in [f0, f0+B]",
            spec.name,
            frac * 100.0
        );
    }
}

#[test]
fn every_catalog_chirp_rate_recovered_within_1pct() {
    for spec in catalog() {
        let pulse = synthesize_pulse(&spec, 1.0, 0.45, -spec.bw_hz / 2.0, FS).unwrap();
        let g = fit_chirp_rate(pulse.samples(), FS);
        let expected = spec.chirp_rate_hz_per_s();
        assert!(
            (g - expected).abs() / expected < 0.01,
            "{}: fitted {} GHz/s vs {}",
            spec.name,
            g / 1e9,
            expected / 1e9
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scaling_shifts_both_readings_together(k in 0.05f64..20.0, seed in 0u64..1000) {
        let buf = wgn(1 << 12, 8e6, 1.0, seed);
        let band = BandSpec::new(-2e6, 1e6).unwrap();
        let a = measure_power(&buf, &band).unwrap();
        let b = measure_power(&buf.scaled(k), &band).unwrap();
        let shift = 20.0 * k.log10();
        prop_assert!((b.peak_per_mhz_dbm - a.peak_per_mhz_dbm - shift).abs() < 1e-9);
        prop_assert!((b.avg_per_mhz_dbm - a.avg_per_mhz_dbm - shift).abs() < 1e-9);
        // peak >= avg on the linear scale, always
        prop_assert!(b.peak_per_mhz_dbm >= b.avg_per_mhz_dbm);
    }

    #[test]
    fn frame_count_formula(n in 64usize..50_000, d0 in 1usize..512, hop in 1usize..512) {
        prop_assume!(n >= d0);
        let buf = IqBuffer::new(vec![Complex64::new(1.0, 0.0); n], 1e6);
        let frames = radsense::features::frame_iq(&buf, d0, hop).unwrap();
        prop_assert_eq!(frames.len(), (n - d0) / hop + 1);
        prop_assert_eq!(frames.len(), frame_count(n, d0, hop));
    }
}
