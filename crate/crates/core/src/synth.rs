//! Synthetic power traces: square-wave load pulses, benchmark-like
//! signatures (baseline + tones + seeded Gaussian noise), additive
//! perturbations standing in for background malware, and a 12-bit quantizer.

use crate::error::{Error, Result};
use crate::rng;
use crate::trace::PowerTrace;

/// ADC codes span `0..=ADC_LEVELS`, one LSB being `full_scale / ADC_LEVELS`.
pub const ADC_LEVELS: u32 = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrainSpec {
    pub freq_hz: f64,
    pub duty: f64,
    pub high_w: f64,
    pub low_w: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
}

impl PulseTrainSpec {
    pub fn validate(&self) -> Result<()> {
        positive("sample_rate_hz", self.sample_rate_hz)?;
        positive("freq_hz", self.freq_hz)?;
        positive("duration_s", self.duration_s)?;
        if self.freq_hz >= self.sample_rate_hz / 2.0 {
            return Err(Error::InvalidConfig(format!(
                "pulse frequency {} Hz is not below Nyquist ({} Hz)",
                self.freq_hz,
                self.sample_rate_hz / 2.0
            )));
        }
        if !(self.duty > 0.0 && self.duty < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "duty must lie in (0, 1), got {}",
                self.duty
            )));
        }
        if !(self.high_w.is_finite() && self.low_w.is_finite()) {
            return Err(Error::InvalidConfig("pulse levels must be finite".into()));
        }
        Ok(())
    }
}

/// One sinusoidal component `amplitude_w * sin(2π f t + phase_rad)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tone {
    pub freq_hz: f64,
    pub amplitude_w: f64,
    pub phase_rad: f64,
}

impl Tone {
    pub fn new(freq_hz: f64, amplitude_w: f64) -> Self {
        Self {
            freq_hz,
            amplitude_w,
            phase_rad: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignatureSpec {
    pub baseline_w: f64,
    pub tones: Vec<Tone>,
    pub noise_sigma_w: f64,
    pub seed: u64,
    pub sample_rate_hz: f64,
}

impl SignatureSpec {
    /// A spec that generates the all-zero signal at `sample_rate_hz`.
    pub fn zero(sample_rate_hz: f64) -> Self {
        Self {
            baseline_w: 0.0,
            tones: Vec::new(),
            noise_sigma_w: 0.0,
            seed: 0,
            sample_rate_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("sample_rate_hz", self.sample_rate_hz)?;
        let nyquist = self.sample_rate_hz / 2.0;
        for tone in &self.tones {
            if !(tone.freq_hz >= 0.0 && tone.freq_hz < nyquist) {
                return Err(Error::InvalidConfig(format!(
                    "tone at {} Hz is not below Nyquist ({nyquist} Hz)",
                    tone.freq_hz
                )));
            }
            if !(tone.amplitude_w.is_finite() && tone.phase_rad.is_finite()) {
                return Err(Error::InvalidConfig("tone parameters must be finite".into()));
            }
        }
        if !(self.noise_sigma_w.is_finite() && self.noise_sigma_w >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_sigma_w must be >= 0, got {}",
                self.noise_sigma_w
            )));
        }
        if !self.baseline_w.is_finite() {
            return Err(Error::InvalidConfig("baseline_w must be finite".into()));
        }
        Ok(())
    }

    fn fill(&self, out: &mut [f64]) {
        let dt = 1.0 / self.sample_rate_hz;
        let mut noise = rng::seeded(self.seed);
        for (i, slot) in out.iter_mut().enumerate() {
            let t = i as f64 * dt;
            let mut v = self.baseline_w;
            for tone in &self.tones {
                v += tone.amplitude_w * (std::f64::consts::TAU * tone.freq_hz * t + tone.phase_rad).sin();
            }
            if self.noise_sigma_w > 0.0 {
                v += self.noise_sigma_w * rng::standard_normal(&mut noise);
            }
            *slot = v;
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
    }
}

fn sample_count(duration_s: f64, sample_rate_hz: f64) -> usize {
    (duration_s * sample_rate_hz).round() as usize
}

/// Square wave with instantaneous edges. Sample `i` covers the phase interval
/// `[i f / Fs, (i + 1) f / Fs)` modulo one period and is high only when that
/// whole interval lies inside the high fraction `duty`.
pub fn gen_pulse_train(spec: &PulseTrainSpec) -> Result<PowerTrace> {
    spec.validate()?;
    let n = sample_count(spec.duration_s, spec.sample_rate_hz);
    if n == 0 {
        return Err(Error::Empty("pulse train shorter than one sample"));
    }
    let rate = spec.sample_rate_hz;
    // Phase is kept in units of rate so integer frequencies stay exact.
    let high_span = spec.duty * rate;
    let samples = (0..n)
        .map(|i| {
            let pos = (i as f64 * spec.freq_hz).rem_euclid(rate);
            if pos + spec.freq_hz <= high_span * (1.0 + 1e-12) {
                spec.high_w
            } else {
                spec.low_w
            }
        })
        .collect();
    PowerTrace::new(rate, 0, samples)
}

pub fn gen_signature(spec: &SignatureSpec, duration_s: f64) -> Result<PowerTrace> {
    spec.validate()?;
    positive("duration_s", duration_s)?;
    let n = sample_count(duration_s, spec.sample_rate_hz);
    if n == 0 {
        return Err(Error::Empty("signature shorter than one sample"));
    }
    let mut samples = vec![0.0; n];
    spec.fill(&mut samples);
    PowerTrace::new(spec.sample_rate_hz, 0, samples)
}

/// Adds the signature generated by `spec` (same length as `trace`) to it.
pub fn perturb(trace: &PowerTrace, spec: &SignatureSpec) -> Result<PowerTrace> {
    spec.validate()?;
    if trace.sample_rate_hz != spec.sample_rate_hz {
        return Err(Error::SampleRateMismatch(trace.sample_rate_hz, spec.sample_rate_hz));
    }
    let mut extra = vec![0.0; trace.len()];
    spec.fill(&mut extra);
    let samples = trace.samples.iter().zip(&extra).map(|(a, b)| a + b).collect();
    PowerTrace::new(trace.sample_rate_hz, trace.t0_ns, samples)
}

/// Snaps samples to the ADC grid `k * full_scale_w / 4096`, clamping to
/// `[0, full_scale_w]`.
pub fn quantize_12bit(trace: &PowerTrace, full_scale_w: f64) -> Result<PowerTrace> {
    positive("full_scale_w", full_scale_w)?;
    let lsb = full_scale_w / ADC_LEVELS as f64;
    let samples = trace
        .samples
        .iter()
        .map(|&s| {
            let code = (s / lsb).round().clamp(0.0, ADC_LEVELS as f64);
            code * lsb
        })
        .collect();
    PowerTrace::new(trace.sample_rate_hz, trace.t0_ns, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pulse(duty: f64) -> PulseTrainSpec {
        PulseTrainSpec {
            freq_hz: 1000.0,
            duty,
            high_w: 200.0,
            low_w: 100.0,
            duration_s: 0.16384,
            sample_rate_hz: 50_000.0,
        }
    }

    #[test]
    fn pulse_train_window_alternates_every_25() {
        let t = gen_pulse_train(&pulse(0.5)).unwrap();
        assert_eq!(t.len(), 8192);
        for (i, &s) in t.samples.iter().enumerate() {
            let expected = if (i / 25) % 2 == 0 { 200.0 } else { 100.0 };
            assert_eq!(s, expected, "sample {i}");
        }
    }

    #[test]
    fn pulse_train_high_duty_leaves_last_sample_low() {
        let t = gen_pulse_train(&pulse(0.999)).unwrap();
        for (i, &s) in t.samples.iter().enumerate() {
            let expected = if i % 50 == 49 { 100.0 } else { 200.0 };
            assert_eq!(s, expected, "sample {i}");
        }
    }

    #[test]
    fn degenerate_pulse_is_constant() {
        let mut spec = pulse(0.3);
        spec.high_w = 7.0;
        spec.low_w = 7.0;
        assert!(gen_pulse_train(&spec).unwrap().samples.iter().all(|&s| s == 7.0));
    }

    #[test]
    fn pulse_rejects_nyquist_and_bad_duty() {
        let mut spec = pulse(0.5);
        spec.freq_hz = 25_000.0;
        assert!(gen_pulse_train(&spec).is_err());
        assert!(gen_pulse_train(&pulse(1.0)).is_err());
        assert!(gen_pulse_train(&pulse(0.0)).is_err());
    }

    #[test]
    fn flat_signature() {
        let spec = SignatureSpec {
            baseline_w: 100.0,
            ..SignatureSpec::zero(50_000.0)
        };
        let t = gen_signature(&spec, 0.1).unwrap();
        assert_eq!(t.len(), 5000);
        assert!(t.samples.iter().all(|&s| s == 100.0));
    }

    #[test]
    fn signature_is_deterministic_per_seed() {
        let spec = SignatureSpec {
            baseline_w: 120.0,
            tones: vec![Tone::new(440.0, 2.0)],
            noise_sigma_w: 0.5,
            seed: 77,
            sample_rate_hz: 50_000.0,
        };
        let a = gen_signature(&spec, 0.05).unwrap();
        let b = gen_signature(&spec, 0.05).unwrap();
        assert_eq!(a, b);
        let c = gen_signature(&SignatureSpec { seed: 78, ..spec }, 0.05).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn signature_rejects_tone_above_nyquist() {
        let spec = SignatureSpec {
            tones: vec![Tone::new(30_000.0, 1.0)],
            ..SignatureSpec::zero(50_000.0)
        };
        assert!(gen_signature(&spec, 1.0).is_err());
        let spec = SignatureSpec {
            noise_sigma_w: -1.0,
            ..SignatureSpec::zero(50_000.0)
        };
        assert!(gen_signature(&spec, 1.0).is_err());
    }

    #[test]
    fn perturb_identity_and_superposition() {
        let base = gen_signature(
            &SignatureSpec {
                baseline_w: 100.0,
                ..SignatureSpec::zero(50_000.0)
            },
            0.01,
        )
        .unwrap();
        assert_eq!(perturb(&base, &SignatureSpec::zero(50_000.0)).unwrap(), base);
        let shifted = perturb(
            &base,
            &SignatureSpec {
                baseline_w: 5.0,
                ..SignatureSpec::zero(50_000.0)
            },
        )
        .unwrap();
        assert!(shifted.samples.iter().all(|&s| s == 105.0));
    }

    #[test]
    fn perturb_rate_mismatch() {
        let base = PowerTrace::new(50_000.0, 0, vec![1.0; 10]).unwrap();
        assert!(matches!(
            perturb(&base, &SignatureSpec::zero(48_000.0)),
            Err(Error::SampleRateMismatch(..))
        ));
    }

    #[test]
    fn quantizer_grid_and_clamp() {
        let fs = 4096.0 * 0.25;
        let t = PowerTrace::new(1.0, 0, vec![fs / 2.0, fs * 1.5, -3.0]).unwrap();
        let q = quantize_12bit(&t, fs).unwrap();
        assert_eq!(q.samples, vec![fs / 2.0, fs, 0.0]);
    }

    #[test]
    fn quantizer_error_within_half_lsb() {
        let fs = 800.0;
        let n = 100_000;
        let sweep: Vec<f64> = (0..=n).map(|i| fs * i as f64 / n as f64).collect();
        let t = PowerTrace::new(1.0, 0, sweep.clone()).unwrap();
        let q = quantize_12bit(&t, fs).unwrap();
        let worst = sweep
            .iter()
            .zip(&q.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= fs / 8192.0 * (1.0 + 1e-12), "worst {worst}");
    }
}
