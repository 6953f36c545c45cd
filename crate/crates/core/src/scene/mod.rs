//! Received-signal synthesis: `r = alpha*s(t - tau) + mu*p(t) + n(t)`.
//!
//! A scene is one labeled capture from one of the three coexistence
//! scenarios. The mixer calibrates the radar echo gain and the
//! interference-plus-noise budget so the capture hits an exact SINR target,
//! where SINR = peak radar power per MHz over average interference-plus-noise
//! power per MHz, both taken over the radar's occupied band.

mod dataset;

pub use dataset::{
    generate_dataset, read_manifest, write_manifest, CategoryCounts, DatasetConfig, GenSummary,
    ManifestRecord, MANIFEST_NAME,
};

use crate::error::{Error, Result};
use crate::interference::{synthesize_awgn, synthesize_ofdm, Modulation, NoiseParams, OfdmParams};
use crate::radar::{waveform, PulseTrainParams, WaveformName};
use crate::signal::{
    measure_avg_power_per_mhz, measure_peak_power_per_mhz, BandSpec, DetectLabel, IqBuffer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Deterministic sub-seed derivation (splitmix64 finalizer over seed ^ tag).
/// Stable across platforms and the basis of worker-count-independent
/// reproducibility.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

mod tag {
    pub const PHASE0: u64 = 1;
    pub const BAND_CENTER: u64 = 2;
    pub const OFDM_PAYLOAD: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const OFDM_BW: u64 = 5;
    pub const DELAY: u64 = 6;
    pub const NOISE_FLOOR: u64 = 7;
    pub const RECORD: u64 = 8;
}

/// The three coexistence scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    RadarOnly,
    FiveGOnly,
    RadarPlus5G,
}

impl Scenario {
    pub fn has_radar(&self) -> bool {
        !matches!(self, Scenario::FiveGOnly)
    }

    pub fn has_interference(&self) -> bool {
        !matches!(self, Scenario::RadarOnly)
    }

    pub fn detect_label(&self) -> DetectLabel {
        if self.has_radar() {
            DetectLabel::Radar
        } else {
            DetectLabel::NoRadar
        }
    }
}

/// Full description of one scene to synthesize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scenario: Scenario,
    pub waveform: Option<WaveformName>,
    pub target_sinr_db: Option<f64>,
    /// Calibration target for the radar component's in-band peak.
    pub radar_peak_dbm_per_mhz: f64,
    /// Calibration target for the combined interference-plus-noise average
    /// over the radar band.
    pub noise_plus_interference_dbm_per_mhz: f64,
    /// Radar propagation delay tau in seconds.
    pub delay_s: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let fiveg_only = matches!(self.scenario, Scenario::FiveGOnly);
        if self.waveform.is_none() != fiveg_only {
            return Err(Error::InvalidParams(
                "waveform must be present exactly when the scenario has radar".into(),
            ));
        }
        if self.target_sinr_db.is_none() != fiveg_only {
            return Err(Error::InvalidParams(
                "target_sinr_db must be present exactly when the scenario has radar".into(),
            ));
        }
        if !(self.delay_s >= 0.0 && self.delay_s < self.duration_s) {
            return Err(Error::InvalidParams(format!(
                "delay {} s must lie in [0, duration {} s)",
                self.delay_s, self.duration_s
            )));
        }
        if self.duration_s <= 0.0 || self.sample_rate_hz <= 0.0 {
            return Err(Error::InvalidParams("non-positive duration or rate".into()));
        }
        Ok(())
    }
}

/// Environment knobs shared by every scene in a dataset (the paper fixes
/// only the power sums; these pin the rest down reproducibly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixEnv {
    /// dB by which OFDM interference sits above the noise floor when both
    /// are present.
    pub interference_over_noise_db: f64,
    /// Guard kept between the radar band edge and Nyquist when randomizing
    /// band placement.
    pub band_guard_hz: f64,
    /// Fixed radar band center; None randomizes per capture.
    pub radar_band_center_hz: Option<f64>,
    pub ofdm_subcarrier_spacing_hz: f64,
    pub ofdm_cp_fraction: f64,
    pub ofdm_modulation: Modulation,
    /// OFDM occupied bandwidth draw range (uniform per capture).
    pub ofdm_bandwidth_range_hz: (f64, f64),
}

impl Default for MixEnv {
    fn default() -> Self {
        Self {
            interference_over_noise_db: 10.0,
            band_guard_hz: 1e6,
            radar_band_center_hz: None,
            ofdm_subcarrier_spacing_hz: 30e3,
            ofdm_cp_fraction: 0.07,
            ofdm_modulation: Modulation::Qpsk,
            ofdm_bandwidth_range_hz: (5e6, 30e6),
        }
    }
}

/// One labeled capture.
#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub iq: IqBuffer,
    pub label_detect: DetectLabel,
    pub label_waveform: Option<WaveformName>,
    pub achieved_sinr_db: Option<f64>,
    pub spec: SceneSpec,
}

/// The calibrated constituents of a mixed scene, kept for SINR verification,
/// debug persistence, and the linearity property.
#[derive(Debug, Clone)]
pub struct SceneComponents {
    pub radar: Option<IqBuffer>,
    pub interference: Option<IqBuffer>,
    pub noise: IqBuffer,
    pub radar_band: Option<BandSpec>,
    pub radar_band_center_hz: Option<f64>,
    pub ofdm_bandwidth_hz: Option<f64>,
    pub phase0_rad: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MixedScene {
    pub record: SceneRecord,
    pub components: SceneComponents,
}

fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// SINR per the peak-over-average definition: peak radar power per MHz minus
/// average interference-plus-noise power per MHz, both over the radar band.
pub fn compute_sinr_db(
    radar_component: &IqBuffer,
    interference_plus_noise: &IqBuffer,
    radar_band: &BandSpec,
) -> Result<f64> {
    if radar_component.len() != interference_plus_noise.len() {
        return Err(Error::ShapeMismatch(format!(
            "component lengths differ: {} vs {}",
            radar_component.len(),
            interference_plus_noise.len()
        )));
    }
    if radar_component.sample_rate_hz() != interference_plus_noise.sample_rate_hz() {
        return Err(Error::ShapeMismatch("sample rates differ".into()));
    }
    let peak = measure_peak_power_per_mhz(radar_component, radar_band)?;
    let avg = measure_avg_power_per_mhz(interference_plus_noise, radar_band)?;
    Ok(peak - avg)
}

/// Synthesize and calibrate one scene.
///
/// The radar gain is closed-form (power scales quadratically with amplitude),
/// the interference gain targets its PSD share over its own band, and the
/// noise fills the remaining in-band budget; one re-measure plus at most 3
/// corrective rescales close the loop.
pub fn mix_scene(spec: &SceneSpec, env: &MixEnv) -> Result<MixedScene> {
    spec.validate()?;
    let fs = spec.sample_rate_hz;
    let dur = spec.duration_s;
    let n = (dur * fs).round() as usize;
    let seed = spec.seed;

    let target_in_mw = dbm_to_mw(spec.noise_plus_interference_dbm_per_mhz);
    let ion = dbm_to_mw(env.interference_over_noise_db); // linear interference/noise ratio

    // --- radar component -------------------------------------------------
    let mut radar = None;
    let mut radar_band = None;
    let mut band_center = None;
    let mut phase0 = None;
    if spec.scenario.has_radar() {
        let wf = waveform(spec.waveform.unwrap());
        let ph0 = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag::PHASE0)).gen_range(0.0..TAU);
        let center = match env.radar_band_center_hz {
            Some(c) => c,
            None => {
                let guard = fs / 2.0 - wf.bw_hz / 2.0 - env.band_guard_hz;
                if guard < 0.0 {
                    return Err(Error::InvalidParams(format!(
                        "{} too wide for fs {} with guard {}",
                        wf.name, fs, env.band_guard_hz
                    )));
                }
                ChaCha8Rng::seed_from_u64(derive_seed(seed, tag::BAND_CENTER))
                    .gen_range(-guard..=guard)
            }
        };
        let f0 = center - wf.bw_hz / 2.0;
        let pri = wf.pri_s();
        let num_pulses = ((dur - spec.delay_s) / pri).ceil().max(1.0) as usize;
        let train = crate::radar::synthesize_pulse_train(&PulseTrainParams {
            spec: wf,
            amplitude: 1.0,
            phase0_rad: ph0,
            f0_hz: f0,
            num_pulses,
            sample_rate_hz: fs,
            total_duration_s: dur - spec.delay_s,
        })?;
        // Place the train at the delay offset, truncating at the capture edge.
        let shift = (spec.delay_s * fs).round() as usize;
        let take = train.len().min(n.saturating_sub(shift));
        let mut samples = vec![num_complex::Complex64::new(0.0, 0.0); n];
        samples[shift..shift + take].copy_from_slice(&train.samples()[..take]);
        let shifted = IqBuffer::new(samples, fs);
        let band = BandSpec::centered(center, wf.bw_hz)?;
        let measured_peak = measure_peak_power_per_mhz(&shifted, &band)?;
        let alpha = 10f64.powf((spec.radar_peak_dbm_per_mhz - measured_peak) / 20.0);
        radar = Some(shifted.scaled(alpha));
        radar_band = Some(band);
        band_center = Some(center);
        phase0 = Some(ph0);
    }

    // --- interference component ------------------------------------------
    let mut interference = None;
    let mut ofdm_bw = None;
    if spec.scenario.has_interference() {
        let (lo, hi) = env.ofdm_bandwidth_range_hz;
        let bw = if lo == hi {
            lo
        } else {
            ChaCha8Rng::seed_from_u64(derive_seed(seed, tag::OFDM_BW)).gen_range(lo..=hi)
        };
        let params = OfdmParams {
            bandwidth_hz: bw,
            subcarrier_spacing_hz: env.ofdm_subcarrier_spacing_hz,
            cp_fraction: env.ofdm_cp_fraction,
            modulation: env.ofdm_modulation,
            seed: derive_seed(seed, tag::OFDM_PAYLOAD),
        };
        let p = synthesize_ofdm(&params, dur, fs)?;
        let occupied_hz =
            params.occupied_subcarriers() as f64 * env.ofdm_subcarrier_spacing_hz;
        let own_band = BandSpec::centered(0.0, occupied_hz)?;
        let measured_psd = measure_avg_power_per_mhz(&p, &own_band)?;
        // Interference takes its share of the combined budget as PSD over
        // its own band.
        let i_share_dbm = mw_to_dbm(target_in_mw * ion / (1.0 + ion));
        let mu = 10f64.powf((i_share_dbm - measured_psd) / 20.0);
        interference = Some(p.scaled(mu));
        ofdm_bw = Some(bw);
    }

    // --- noise fills the remaining budget ---------------------------------
    let i_in_radar_band_mw = match (&interference, &radar_band) {
        (Some(i), Some(b)) => match measure_avg_power_per_mhz(i, b) {
            Ok(dbm) => dbm_to_mw(dbm),
            Err(Error::NegligiblePower) => 0.0,
            Err(e) => return Err(e),
        },
        _ => 0.0,
    };
    let noise_psd_mw = if radar_band.is_some() {
        (target_in_mw - i_in_radar_band_mw).max(target_in_mw * 1e-4)
    } else {
        target_in_mw / (1.0 + ion)
    };
    let mut noise = synthesize_awgn(
        &NoiseParams {
            target_avg_dbm_per_mhz: mw_to_dbm(noise_psd_mw),
            seed: derive_seed(seed, tag::NOISE),
        },
        dur,
        fs,
    )?;

    // --- re-measure and correct (bounded) ---------------------------------
    let mut achieved_sinr = None;
    if let (Some(radar_buf), Some(band)) = (&radar, &radar_band) {
        for iteration in 0..3 {
            let combined = match &interference {
                Some(i) => IqBuffer::sum(&[i, &noise])?,
                None => noise.clone(),
            };
            let measured = measure_avg_power_per_mhz(&combined, band)?;
            let err_db = spec.noise_plus_interference_dbm_per_mhz - measured;
            if err_db.abs() <= 0.1 {
                achieved_sinr = Some(compute_sinr_db(radar_buf, &combined, band)?);
                break;
            }
            // Close the gap by rescaling the noise component only.
            let measured_mw = dbm_to_mw(measured);
            let want_noise_mw = (target_in_mw - i_in_radar_band_mw).max(target_in_mw * 1e-6);
            let have_noise_mw = (measured_mw - i_in_radar_band_mw).max(target_in_mw * 1e-9);
            noise = noise.scaled((want_noise_mw / have_noise_mw).sqrt());
            if iteration == 2 {
                return Err(Error::CalibrationFailed(format!(
                    "in-band interference+noise off by {err_db:.3} dB after 3 corrections"
                )));
            }
        }
        let achieved = achieved_sinr.unwrap();
        let target = spec.target_sinr_db.unwrap();
        if (achieved - target).abs() > 0.5 {
            return Err(Error::CalibrationFailed(format!(
                "achieved SINR {achieved:.2} dB vs target {target:.2} dB"
            )));
        }
    }

    // --- assemble ----------------------------------------------------------
    let mut parts: Vec<&IqBuffer> = Vec::new();
    if let Some(r) = &radar {
        parts.push(r);
    }
    if let Some(i) = &interference {
        parts.push(i);
    }
    parts.push(&noise);
    let iq = IqBuffer::sum(&parts)?;

    let record = SceneRecord {
        iq,
        label_detect: spec.scenario.detect_label(),
        label_waveform: if spec.scenario.has_radar() {
            spec.waveform
        } else {
            None
        },
        achieved_sinr_db: achieved_sinr,
        spec: *spec,
    };
    Ok(MixedScene {
        record,
        components: SceneComponents {
            radar,
            interference,
            noise,
            radar_band,
            radar_band_center_hz: band_center,
            ofdm_bandwidth_hz: ofdm_bw,
            phase0_rad: phase0,
        },
    })
}

/// Draw the per-record nuisance parameters the dataset generator controls
/// (noise floor, delay) and build the scene spec for one record.
pub fn plan_scene(
    scenario: Scenario,
    wf: Option<WaveformName>,
    sinr_group_db: f64,
    duration_s: f64,
    sample_rate_hz: f64,
    noise_floor_range: (f64, f64),
    seed: u64,
) -> SceneSpec {
    let (lo, hi) = noise_floor_range;
    let noise = if lo == hi {
        lo
    } else {
        ChaCha8Rng::seed_from_u64(derive_seed(seed, tag::NOISE_FLOOR)).gen_range(lo..=hi)
    };
    let delay = match wf {
        Some(name) if scenario.has_radar() => {
            let pri = waveform(name).pri_s();
            ChaCha8Rng::seed_from_u64(derive_seed(seed, tag::DELAY)).gen_range(0.0..pri.min(duration_s))
        }
        _ => 0.0,
    };
    SceneSpec {
        scenario,
        waveform: if scenario.has_radar() { wf } else { None },
        target_sinr_db: if scenario.has_radar() {
            Some(sinr_group_db)
        } else {
            None
        },
        radar_peak_dbm_per_mhz: noise + sinr_group_db,
        noise_plus_interference_dbm_per_mhz: noise,
        delay_s: delay,
        duration_s,
        sample_rate_hz,
        seed,
    }
}

/// Seed for record `index` (attempt 0 is the normal path; retries derive
/// fresh seeds).
pub fn record_seed(master_seed: u64, index: u64, attempt: u64) -> u64 {
    derive_seed(
        derive_seed(master_seed, tag::RECORD.wrapping_add(index << 3)),
        attempt,
    )
}
