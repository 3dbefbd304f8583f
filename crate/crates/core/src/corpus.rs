//! Synthetic multi-speaker corpus with ground-truth content labels.
//!
//! Speakers differ in F0 level and range, formant scaling, spectral tilt,
//! loudness and one extra fixed resonance. Content units are vowel-like
//! formant patterns (voiced) or band-limited noise (unvoiced), each with its
//! own F0 contour shape, so prosody follows content while the F0 level follows
//! the speaker.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{read_wav, write_wav, FrameSpec, Waveform};
use crate::error::{Error, Result};

pub const BASE_F0_RANGE: (f64, f64) = (90.0, 300.0);
pub const MIN_UNIT_FRAMES: usize = 3;
pub const MAX_UNIT_FRAMES: usize = 8;

/// Per-speaker voice parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerParams {
    pub speaker_id: String,
    pub index: usize,
    pub base_f0_hz: f64,
    /// Depth of the content-driven F0 contour, in natural-log units.
    pub f0_range: f64,
    /// `[formant_scale, tilt, gain_db, resonance_hz, resonance_gain]`.
    pub envelope: Vec<f64>,
}

impl SpeakerParams {
    pub fn formant_scale(&self) -> f64 {
        self.envelope[0]
    }
    pub fn tilt(&self) -> f64 {
        self.envelope[1]
    }
    pub fn gain_db(&self) -> f64 {
        self.envelope[2]
    }
    pub fn resonance_hz(&self) -> f64 {
        self.envelope[3]
    }
    pub fn resonance_gain(&self) -> f64 {
        self.envelope[4]
    }
}

/// Sequence of `(unit id, duration in frames)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentScript {
    pub units: Vec<(usize, usize)>,
}

impl ContentScript {
    pub fn total_frames(&self) -> usize {
        self.units.iter().map(|&(_, d)| d).sum()
    }

    /// One label per frame.
    pub fn frame_labels(&self) -> Vec<usize> {
        self.units
            .iter()
            .flat_map(|&(u, d)| std::iter::repeat_n(u, d))
            .collect()
    }

    /// Unit sequence with durations dropped.
    pub fn unit_sequence(&self) -> Vec<usize> {
        self.units.iter().map(|&(u, _)| u).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Excitation {
    Voiced { formants: [f64; 3] },
    Unvoiced { center_hz: f64, bandwidth_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct UnitShape {
    excitation: Excitation,
    contour: Contour,
    level_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Contour {
    Rise,
    Fall,
    Hat,
    High,
    Low,
    Dip,
}

impl Contour {
    /// Log-F0 offset in `[-1, 1]` at relative position `x ∈ [0, 1]`.
    fn at(self, x: f64) -> f64 {
        match self {
            Contour::Rise => 2.0 * x - 1.0,
            Contour::Fall => 1.0 - 2.0 * x,
            Contour::Hat => 2.0 * (PI * x).sin() - 1.0,
            Contour::High => 0.7,
            Contour::Low => -0.7,
            Contour::Dip => 1.0 - 2.0 * (PI * x).sin(),
        }
    }
}

const VOWELS: [[f64; 3]; 10] = [
    [280.0, 2250.0, 2900.0],
    [400.0, 2000.0, 2600.0],
    [750.0, 1250.0, 2550.0],
    [450.0, 850.0, 2500.0],
    [320.0, 800.0, 2300.0],
    [650.0, 1700.0, 2450.0],
    [480.0, 1350.0, 1700.0],
    [380.0, 1950.0, 2650.0],
    [600.0, 950.0, 2450.0],
    [550.0, 1100.0, 2400.0],
];
const CONTOURS: [Contour; 6] = [
    Contour::Rise,
    Contour::Fall,
    Contour::Hat,
    Contour::High,
    Contour::Low,
    Contour::Dip,
];

fn unit_shape(unit: usize) -> UnitShape {
    let contour = CONTOURS[(unit * 5) % CONTOURS.len()];
    match unit {
        0..=9 => UnitShape {
            excitation: Excitation::Voiced {
                formants: VOWELS[unit],
            },
            contour,
            level_db: if unit.is_multiple_of(3) { -2.0 } else { 0.0 },
        },
        10 => UnitShape {
            excitation: Excitation::Unvoiced {
                center_hz: 5200.0,
                bandwidth_hz: 1800.0,
            },
            contour,
            level_db: -8.0,
        },
        11 => UnitShape {
            excitation: Excitation::Unvoiced {
                center_hz: 2800.0,
                bandwidth_hz: 1000.0,
            },
            contour,
            level_db: -8.0,
        },
        _ => {
            // procedurally generated extra vowels for larger alphabets
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + unit as u64);
            let f1: f64 = rng.gen_range(280.0..800.0);
            let f2: f64 = rng.gen_range(f1 + 300.0..2400.0);
            let f3 = rng.gen_range(f2.max(2200.0) + 100.0..3200.0);
            UnitShape {
                excitation: Excitation::Voiced {
                    formants: [f1, f2, f3],
                },
                contour,
                level_db: 0.0,
            }
        }
    }
}

pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

pub fn generate_speaker(corpus_seed: u64, index: usize) -> SpeakerParams {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[corpus_seed, 0x5be4, index as u64]));
    let base_f0_hz = rng.gen_range(BASE_F0_RANGE.0..=BASE_F0_RANGE.1);
    let f0_range = rng.gen_range(0.06..0.14);
    let envelope = vec![
        rng.gen_range(0.97..1.03),
        rng.gen_range(0.0..0.6),
        rng.gen_range(-6.0..0.0),
        rng.gen_range(2000.0..3800.0),
        rng.gen_range(0.3..1.0),
    ];
    SpeakerParams {
        speaker_id: format!("spk{index:03}"),
        index,
        base_f0_hz,
        f0_range,
        envelope,
    }
}

/// Random script whose total length lies in `frames`.
pub fn generate_script(
    n_units: usize,
    frames: std::ops::RangeInclusive<usize>,
    seed: u64,
) -> ContentScript {
    assert!(n_units >= 2, "need at least two content units");
    assert!(*frames.start() >= MIN_UNIT_FRAMES);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = rng.gen_range(frames);
    let mut units: Vec<(usize, usize)> = Vec::new();
    let mut total = 0;
    while total < target {
        let mut u = rng.gen_range(0..n_units);
        if let Some(&(prev, _)) = units.last() {
            if u == prev {
                u = (u + 1 + rng.gen_range(0..n_units - 1)) % n_units;
            }
        }
        let d = rng.gen_range(MIN_UNIT_FRAMES..=MAX_UNIT_FRAMES);
        units.push((u, d));
        total += d;
    }
    // trim the overshoot, keeping every unit at least MIN_UNIT_FRAMES long
    let mut excess = total - target;
    for (_, d) in units.iter_mut().rev() {
        let cut = excess.min(*d - MIN_UNIT_FRAMES);
        *d -= cut;
        excess -= cut;
        if excess == 0 {
            break;
        }
    }
    ContentScript { units }
}

/// Two-pole resonator with unity gain at DC (Klatt form).
#[derive(Default, Clone, Copy)]
struct Resonator {
    a: f64,
    b: f64,
    c: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn tune(&mut self, freq: f64, bw: f64, sr: f64) {
        let r = (-PI * bw / sr).exp();
        self.c = -r * r;
        self.b = 2.0 * r * (2.0 * PI * freq / sr).cos();
        self.a = 1.0 - self.b - self.c;
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.b * self.y1 + self.c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Renders a script in the given voice.
///
/// Returns the waveform and one content label per frame. The waveform has
/// `(T - 1)·hop + frame_len` samples for `T = script.total_frames()`, so
/// framing it with `spec` yields exactly `T` frames.
pub fn synthesize_utterance(
    speaker: &SpeakerParams,
    script: &ContentScript,
    seed: u64,
    spec: &FrameSpec,
    sample_rate_hz: u32,
) -> Result<(Waveform, Vec<usize>)> {
    if script.units.is_empty() {
        return Err(Error::Empty("content script"));
    }
    let sr = sample_rate_hz as f64;
    let n_frames = script.total_frames();
    let len = spec.signal_len(n_frames);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0xa11d]));

    // sample boundaries sit halfway between frame centers
    let offset = spec.frame_len as f64 / 2.0 - spec.hop as f64 / 2.0;
    let mut bounds = Vec::with_capacity(script.units.len() + 1);
    let mut start = 0usize;
    for &(_, d) in &script.units {
        bounds.push(if start == 0 {
            0.0
        } else {
            start as f64 * spec.hop as f64 + offset
        });
        start += d;
    }
    bounds.push(len as f64);

    let utt_shift = rng.gen_range(-0.03..0.03);
    let declination = rng.gen_range(0.02..0.08);
    let fade = 0.010 * sr;
    let shapes: Vec<UnitShape> = script.units.iter().map(|&(u, _)| unit_shape(u)).collect();

    let mut formant_res = [Resonator::default(); 3];
    let mut speaker_res = Resonator::default();
    speaker_res.tune(speaker.resonance_hz(), 300.0, sr);
    let mut noise_res = Resonator::default();
    let tilt = speaker.tilt();
    let mut tilt_state = 0.0;
    let mut phase = 0.0f64;
    let mut log_f0_smooth = speaker.base_f0_hz.ln();
    let smooth = 1.0 - (-1.0 / (0.008 * sr)).exp();

    let mut out = vec![0.0f64; len];
    let mut unit = 0;
    for (n, o) in out.iter_mut().enumerate() {
        let t = n as f64;
        while unit + 1 < shapes.len() && t >= bounds[unit + 1] {
            unit += 1;
        }
        let (lo, hi) = (bounds[unit], bounds[unit + 1]);
        let x = ((t - lo) / (hi - lo)).clamp(0.0, 1.0);
        let cur = shapes[unit];
        // cross-fade into the next unit over the last `fade` samples
        let next = shapes.get(unit + 1).copied();
        let w_next = match next {
            Some(_) => ((t - (hi - fade)) / fade).clamp(0.0, 1.0) * 0.5,
            None => 0.0,
        };
        let w_prev = if unit > 0 {
            (0.5 - (t - lo) / fade * 0.5).clamp(0.0, 0.5)
        } else {
            0.0
        };
        let prev = if unit > 0 { Some(shapes[unit - 1]) } else { None };

        let voicing = |s: &UnitShape| matches!(s.excitation, Excitation::Voiced { .. }) as u8 as f64;
        let level = |s: &UnitShape| 10f64.powf(s.level_db / 20.0);
        let mut wv = voicing(&cur) * level(&cur) * (1.0 - w_next - w_prev);
        let mut wu = (1.0 - voicing(&cur)) * level(&cur) * (1.0 - w_next - w_prev);
        for (s, w) in [(next, w_next), (prev, w_prev)] {
            if let Some(s) = s {
                wv += voicing(&s) * level(&s) * w;
                wu += (1.0 - voicing(&s)) * level(&s) * w;
            }
        }

        // formants blend toward the neighbour
        let target_formants = |s: &UnitShape| match s.excitation {
            Excitation::Voiced { formants } => Some(formants),
            Excitation::Unvoiced { .. } => None,
        };
        if n % 8 == 0 {
            let mut f = target_formants(&cur)
                .or_else(|| prev.and_then(|p| target_formants(&p)))
                .or_else(|| next.and_then(|p| target_formants(&p)))
                .unwrap_or(VOWELS[2]);
            for (s, w) in [(next, w_next), (prev, w_prev)] {
                if let Some(tf) = s.and_then(|s| target_formants(&s)) {
                    for k in 0..3 {
                        f[k] += w * (tf[k] - f[k]);
                    }
                }
            }
            let bws = [160.0, 200.0, 260.0];
            for k in 0..3 {
                let fk = (f[k] * speaker.formant_scale()).min(0.45 * sr);
                formant_res[k].tune(fk, bws[k], sr);
            }
            let noise_shape = match cur.excitation {
                Excitation::Unvoiced { center_hz, bandwidth_hz } => (center_hz, bandwidth_hz),
                _ => match next.map(|s| s.excitation) {
                    Some(Excitation::Unvoiced { center_hz, bandwidth_hz }) => (center_hz, bandwidth_hz),
                    _ => (4000.0, 1500.0),
                },
            };
            noise_res.tune(
                (noise_shape.0 * speaker.formant_scale()).min(0.45 * sr),
                noise_shape.1,
                sr,
            );
        }

        // F0 trajectory: base · exp(range · contour + utterance shift - declination)
        let progress = t / len as f64;
        let target_log_f0 = speaker.base_f0_hz.ln()
            + speaker.f0_range * cur.contour.at(x)
            + utt_shift
            - declination * (progress - 0.5);
        log_f0_smooth += smooth * (target_log_f0 - log_f0_smooth);
        let f0 = log_f0_smooth.exp();
        phase += 2.0 * PI * f0 / sr;
        if phase > 2.0 * PI {
            phase -= 2.0 * PI;
        }

        let mut voiced = 0.0;
        if wv > 0.0 {
            // band-limited sawtooth via the Chebyshev sine recurrence
            let harmonics = ((0.5 * sr - 200.0) / f0).floor().max(1.0) as usize;
            let (s1, c1) = phase.sin_cos();
            let (mut prev_s, mut cur_s) = (0.0, s1);
            for k in 1..=harmonics {
                voiced += cur_s / k as f64;
                let next_s = 2.0 * c1 * cur_s - prev_s;
                prev_s = cur_s;
                cur_s = next_s;
            }
            voiced *= wv;
        }
        let mut v = voiced;
        for r in formant_res.iter_mut() {
            v = r.step(v);
        }
        let noise: f64 = rng.gen_range(-1.0..1.0);
        let u = noise_res.step(noise * wu) * 6.0;
        let mut y = v + u + 0.002 * noise;
        y += speaker.resonance_gain() * (speaker_res.step(y) - y) * 0.5;
        tilt_state = (1.0 - tilt) * y + tilt * tilt_state;
        *o = tilt_state;
    }

    let target_rms = 0.08 * 10f64.powf(speaker.gain_db() / 20.0);
    let cur_rms = (out.iter().map(|x| x * x).sum::<f64>() / len as f64).sqrt();
    let g = if cur_rms > 0.0 { target_rms / cur_rms } else { 0.0 };
    let samples = out.iter().map(|&x| (x * g).clamp(-1.0, 1.0) as f32).collect();
    Ok((Waveform::new(samples, sample_rate_hz), script.frame_labels()))
}

/// Shape of a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub seed: u64,
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    pub units: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub frame_spec: FrameSpec,
    pub sample_rate_hz: u32,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            speakers: 20,
            utterances_per_speaker: 10,
            units: 12,
            min_frames: 90,
            max_frames: 110,
            frame_spec: FrameSpec::acoustic_default(),
            sample_rate_hz: 16_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker_id: String,
    pub speaker_index: usize,
    pub index: usize,
    pub waveform: Waveform,
    pub labels: Vec<usize>,
}

impl Utterance {
    /// Unit sequence with consecutive duplicates collapsed.
    pub fn unit_sequence(&self) -> Vec<usize> {
        collapse(&self.labels)
    }
}

pub(crate) fn collapse(labels: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for &l in labels {
        if out.last() != Some(&l) {
            out.push(l);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub speakers: Vec<SpeakerParams>,
    pub utterances: Vec<Utterance>,
}

pub fn script_seed(corpus_seed: u64, speaker: usize, utterance: usize) -> u64 {
    mix_seed(&[corpus_seed, 0x5c21, speaker as u64, utterance as u64])
}

impl Corpus {
    pub fn generate(spec: &CorpusSpec) -> Result<Corpus> {
        Self::generate_range(spec, 0..spec.utterances_per_speaker)
    }

    /// Generates utterances `range` for every speaker. Indices beyond
    /// `utterances_per_speaker` give fresh held-out material.
    pub fn generate_range(spec: &CorpusSpec, range: std::ops::Range<usize>) -> Result<Corpus> {
        if spec.units < 2 {
            return Err(Error::Config("corpus needs at least two content units".into()));
        }
        if spec.min_frames < MIN_UNIT_FRAMES || spec.min_frames > spec.max_frames {
            return Err(Error::Config(format!(
                "invalid utterance frame range {}..={}",
                spec.min_frames, spec.max_frames
            )));
        }
        let speakers: Vec<SpeakerParams> = (0..spec.speakers)
            .map(|i| generate_speaker(spec.seed, i))
            .collect();
        let mut utterances = Vec::new();
        for sp in &speakers {
            for j in range.clone() {
                let seed = script_seed(spec.seed, sp.index, j);
                let script = generate_script(spec.units, spec.min_frames..=spec.max_frames, seed);
                let (waveform, labels) =
                    synthesize_utterance(sp, &script, seed, &spec.frame_spec, spec.sample_rate_hz)?;
                utterances.push(Utterance {
                    utt_id: format!("{}_u{j:02}", sp.speaker_id),
                    speaker_id: sp.speaker_id.clone(),
                    speaker_index: sp.index,
                    index: j,
                    waveform,
                    labels,
                });
            }
        }
        Ok(Corpus {
            speakers,
            utterances,
        })
    }

    pub fn by_speaker(&self, speaker_index: usize) -> impl Iterator<Item = &Utterance> {
        self.utterances
            .iter()
            .filter(move |u| u.speaker_index == speaker_index)
    }

    /// Writes WAVs, label files and `manifest.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let wav_dir = dir.join("wav");
        let lab_dir = dir.join("labels");
        for d in [&wav_dir, &lab_dir] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let mut manifest = String::new();
        for u in &self.utterances {
            let wav_rel = format!("wav/{}.wav", u.utt_id);
            let lab_rel = format!("labels/{}.txt", u.utt_id);
            write_wav(&u.waveform, dir.join(&wav_rel))?;
            let labels: String = u.labels.iter().map(|l| format!("{l}\n")).collect();
            let lab_path = dir.join(&lab_rel);
            fs::write(&lab_path, labels).map_err(|e| Error::io(&lab_path, e))?;
            manifest.push_str(&format!("{}\t{}\t{}\t{}\n", u.utt_id, u.speaker_id, wav_rel, lab_rel));
        }
        let path = dir.join("manifest.tsv");
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(manifest.as_bytes())
            .map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub speaker_id: String,
    pub wav_path: PathBuf,
    pub label_path: PathBuf,
}

/// Parses `utt_id<TAB>speaker_id<TAB>wav_path<TAB>label_path` lines. Relative
/// paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::Format(format!(
                    "{}:{}: expected 4 tab-separated fields",
                    path.display(),
                    i + 1
                )));
            }
            Ok(ManifestEntry {
                utt_id: f[0].to_string(),
                speaker_id: f[1].to_string(),
                wav_path: base.join(f[2]),
                label_path: base.join(f[3]),
            })
        })
        .collect()
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Format(format!("{}: bad label {t:?}", path.display())))
        })
        .collect()
}

/// Loads a corpus back from a manifest. Speaker parameters are not stored on
/// disk, so `speakers` is left empty.
pub fn load_manifest(path: &Path) -> Result<Corpus> {
    let entries = read_manifest(path)?;
    let mut speaker_ids: Vec<String> = Vec::new();
    let mut utterances = Vec::with_capacity(entries.len());
    for e in entries {
        let speaker_index = match speaker_ids.iter().position(|s| *s == e.speaker_id) {
            Some(i) => i,
            None => {
                speaker_ids.push(e.speaker_id.clone());
                speaker_ids.len() - 1
            }
        };
        let index = utterances
            .iter()
            .filter(|u: &&Utterance| u.speaker_index == speaker_index)
            .count();
        utterances.push(Utterance {
            utt_id: e.utt_id,
            speaker_id: e.speaker_id,
            speaker_index,
            index,
            waveform: read_wav(&e.wav_path)?,
            labels: read_labels(&e.label_path)?,
        });
    }
    Ok(Corpus {
        speakers: Vec::new(),
        utterances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::estimate_f0;

    #[test]
    fn speakers_are_deterministic_and_in_range() {
        assert_eq!(generate_speaker(1, 3), generate_speaker(1, 3));
        let ids: std::collections::HashSet<String> =
            (0..20).map(|i| generate_speaker(1, i).speaker_id).collect();
        assert_eq!(ids.len(), 20);
        for i in 0..200 {
            let f = generate_speaker(7, i).base_f0_hz;
            assert!((90.0..=300.0).contains(&f));
        }
    }

    #[test]
    fn script_durations_and_total() {
        for seed in 0..50 {
            let s = generate_script(12, 90..=110, seed);
            assert!((90..=110).contains(&s.total_frames()));
            assert!(s.units.iter().all(|&(u, d)| u < 12 && d >= MIN_UNIT_FRAMES));
            assert!(s.units.windows(2).all(|w| w[0].0 != w[1].0));
        }
    }

    #[test]
    fn forty_nine_frames_is_one_second() {
        let script = ContentScript {
            units: vec![(0, 20), (3, 29)],
        };
        let sp = generate_speaker(1, 0);
        let (w, labels) =
            synthesize_utterance(&sp, &script, 5, &FrameSpec::acoustic_default(), 16_000).unwrap();
        assert_eq!(w.len(), 16_000);
        assert_eq!(labels.len(), 49);
        let (w2, _) =
            synthesize_utterance(&sp, &script, 5, &FrameSpec::acoustic_default(), 16_000).unwrap();
        assert_eq!(w, w2);
    }

    #[test]
    fn empty_script_is_rejected() {
        let sp = generate_speaker(1, 0);
        let script = ContentScript { units: vec![] };
        assert!(synthesize_utterance(&sp, &script, 1, &FrameSpec::acoustic_default(), 16_000).is_err());
    }

    #[test]
    fn median_f0_tracks_the_speaker() {
        for i in 0..10 {
            let sp = generate_speaker(1, i);
            let script = generate_script(12, 90..=110, 100 + i as u64);
            let (w, _) =
                synthesize_utterance(&sp, &script, 3, &FrameSpec::acoustic_default(), 16_000).unwrap();
            let med = estimate_f0(&w, &FrameSpec::semantic_default())
                .unwrap()
                .median_voiced()
                .unwrap();
            let rel = (med - sp.base_f0_hz).abs() / sp.base_f0_hz;
            assert!(rel <= 0.10, "speaker {i}: median {med:.1} vs base {:.1}", sp.base_f0_hz);
        }
    }

    #[test]
    fn manifest_round_trip() {
        let spec = CorpusSpec {
            speakers: 2,
            utterances_per_speaker: 2,
            min_frames: 20,
            max_frames: 25,
            ..CorpusSpec::default()
        };
        let corpus = Corpus::generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = corpus.write(dir.path()).unwrap();
        let loaded = load_manifest(&manifest).unwrap();
        assert_eq!(loaded.utterances.len(), 4);
        for (a, b) in corpus.utterances.iter().zip(&loaded.utterances) {
            assert_eq!(a.utt_id, b.utt_id);
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.waveform.len(), b.waveform.len());
        }
    }
}
