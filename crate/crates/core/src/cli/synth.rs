use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::write_wav16;
use crate::error::{Error, Result};
use crate::numeric::{Rng, RngStream};
use crate::trainer::{Manifest, ManifestRecord, Split};

/// One synthetic call type: a tone that may glide and may pulse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Archetype {
    pub base_hz: f64,
    /// Linear glide rate.
    #[serde(default)]
    pub chirp_hz_per_s: f64,
    /// Amplitude-modulation rate; 0 for a steady envelope.
    #[serde(default)]
    pub am_hz: f64,
}

impl Archetype {
    pub const fn new(base_hz: f64, chirp_hz_per_s: f64, am_hz: f64) -> Self {
        Archetype {
            base_hz,
            chirp_hz_per_s,
            am_hz,
        }
    }
}

const BUILTIN: [Archetype; 5] = [
    Archetype::new(1000.0, 0.0, 0.0),
    Archetype::new(2500.0, 800.0, 0.0),
    Archetype::new(4000.0, 0.0, 8.0),
    Archetype::new(1800.0, -300.0, 4.0),
    Archetype::new(6000.0, 500.0, 12.0),
];

/// Recipe for a synthetic labelled corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub clips_per_class: usize,
    /// One per class; empty selects the built-in set.
    pub archetypes: Vec<Archetype>,
    /// Linear signal-to-noise power ratio.
    pub snr: f64,
    pub duration: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 5,
            clips_per_class: 200,
            archetypes: Vec::new(),
            snr: 10.0,
            duration: 3.0,
            sample_rate: 22_050,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Explicit archetypes, or the built-in ones extended by an evenly
    /// spaced tone ladder when more classes are requested.
    pub fn resolved_archetypes(&self) -> Vec<Archetype> {
        if !self.archetypes.is_empty() {
            return self.archetypes.clone();
        }
        (0..self.classes)
            .map(|c| match BUILTIN.get(c) {
                Some(a) => *a,
                None => Archetype::new(700.0 + 350.0 * (c - BUILTIN.len()) as f64, 0.0, 2.0 + (c % 4) as f64 * 3.0),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::config("synth.classes", "must be positive"));
        }
        if self.clips_per_class == 0 {
            return Err(Error::config("synth.clips_per_class", "must be positive"));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(Error::config("synth.snr", "must be positive"));
        }
        if !(self.duration > 0.0) {
            return Err(Error::config("synth.duration", "must be positive"));
        }
        if self.sample_rate == 0 {
            return Err(Error::config("synth.sample_rate", "must be positive"));
        }
        let arch = self.resolved_archetypes();
        if arch.len() != self.classes {
            return Err(Error::config(
                "synth.archetypes",
                format!("{} archetypes for {} classes", arch.len(), self.classes),
            ));
        }
        let nyquist = f64::from(self.sample_rate) / 2.0;
        for (i, a) in arch.iter().enumerate() {
            let end = a.base_hz + a.chirp_hz_per_s * self.duration;
            if !(a.base_hz > 0.0 && a.base_hz < nyquist && end > 0.0 && end < nyquist && a.am_hz >= 0.0) {
                return Err(Error::config(
                    format!("synth.archetypes[{i}]"),
                    format!("frequencies must stay inside (0, {nyquist}) Hz"),
                ));
            }
            if arch[..i].contains(a) {
                return Err(Error::config(format!("synth.archetypes[{i}]"), "duplicates an earlier archetype"));
            }
        }
        Ok(())
    }

    pub fn label(class: usize) -> String {
        format!("class{class:02}")
    }
}

/// One noisy clip of `archetype`, in `[-1, 1]`.
///
/// Per clip the base frequency is jittered by up to 3 %, the amplitude lies
/// in `[0.35, 0.5]` and the phase is random.
pub fn render(archetype: &Archetype, spec: &SynthSpec, rng: &mut RngStream) -> Vec<f64> {
    let sr = f64::from(spec.sample_rate);
    let n = (spec.duration * sr).round() as usize;
    let f0 = archetype.base_hz * rng.uniform(0.97, 1.03);
    let amp = rng.uniform(0.35, 0.5);
    let phase = rng.uniform(0.0, 2.0 * PI);
    let am_phase = rng.uniform(0.0, 2.0 * PI);
    let clean: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let env = if archetype.am_hz > 0.0 {
                (1.0 + 0.8 * (2.0 * PI * archetype.am_hz * t + am_phase).sin()) / 1.8
            } else {
                1.0
            };
            amp * env * (2.0 * PI * (f0 * t + 0.5 * archetype.chirp_hz_per_s * t * t) + phase).sin()
        })
        .collect();
    let power = clean.iter().map(|x| x * x).sum::<f64>() / n.max(1) as f64;
    let sigma = (power / spec.snr).sqrt();
    clean.into_iter().map(|x| (x + sigma * rng.normal()).clamp(-1.0, 1.0)).collect()
}

/// Train/val/test assignment for `n` items of one class: 70/10/20 after a
/// seeded shuffle, rounding to the nearest count.
pub fn stratified_split(n: usize, rng: &mut RngStream) -> Vec<Split> {
    let n_train = (0.7 * n as f64).round() as usize;
    let n_val = ((0.1 * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

/// Writes `audio/*.wav` and `manifest.csv` under `out_dir`.
pub fn cmd_synth(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let audio = out_dir.join("audio");
    std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    let rng = Rng::new(spec.seed);
    let mut signal = rng.stream("synth");
    let mut splitter = rng.stream("split");
    let mut records = Vec::with_capacity(spec.classes * spec.clips_per_class);
    for (c, archetype) in spec.resolved_archetypes().iter().enumerate() {
        let splits = stratified_split(spec.clips_per_class, &mut splitter);
        for (i, split) in splits.into_iter().enumerate() {
            let label = SynthSpec::label(c);
            let id = format!("{label}_{i:04}");
            let rel = format!("audio/{id}.wav");
            write_wav16(out_dir.join(&rel), &render(archetype, spec, &mut signal), spec.sample_rate)?;
            records.push(ManifestRecord {
                id,
                path: rel,
                label,
                split,
            });
        }
    }
    let manifest = Manifest::new(records, out_dir)?;
    manifest.save(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
