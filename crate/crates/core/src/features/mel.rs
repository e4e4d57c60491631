//! Log-mel spectrogram extraction.

use crate::error::{Error, Result};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::path::Path;

pub const SAMPLE_RATE: u32 = 32_000;
pub const WINDOW: usize = 1024;
pub const HOP: usize = 320;
pub const MEL_BINS: usize = 64;
pub const FMIN: f64 = 50.0;
pub const FMAX: f64 = 14_000.0;
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Reflect-pad by `(window − hop)/2` on each side, giving `⌈L/hop⌉` frames.
    Reflect,
    /// Frames fully inside the clip: `⌊(L − window)/hop⌋ + 1`.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub padding: Padding,
    /// Accept clips whose sample rate differs from `sample_rate` (no
    /// resampling is done; the filterbank is built for the clip's rate).
    pub allow_rate_override: bool,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            window: WINDOW,
            hop: HOP,
            bins: MEL_BINS,
            fmin: FMIN,
            fmax: FMAX,
            padding: Padding::Reflect,
            allow_rate_override: false,
        }
    }
}

/// STFT settings a spectrogram was computed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftMeta {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
}

/// Log-mel energies ψ(f, t), stored frame-major (`values[t·bins + f]`).
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f64>,
    /// Absent for spectrograms loaded from feature files.
    pub meta: Option<StftMeta>,
}

impl MelSpectrogram {
    pub fn new(frames: usize, bins: usize, values: Vec<f64>) -> Result<Self> {
        if frames == 0 || bins == 0 {
            return Err(Error::invalid("spectrogram needs at least one frame and one bin"));
        }
        if values.len() != frames * bins {
            return Err(Error::shape(format!("{frames}x{bins} spectrogram needs {} values, got {}", frames * bins, values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("spectrogram values must be finite"));
        }
        Ok(Self { frames, bins, values, meta: None })
    }

    pub fn at(&self, t: usize, f: usize) -> f64 {
        self.values[t * self.bins + f]
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    // Slaney scale: linear below 1 kHz, logarithmic above.
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= min_log_hz {
        min_log_mel + (hz / min_log_hz).ln() / logstep
    } else {
        hz / f_sp
    }
}

fn mel_to_hz(mel: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        min_log_hz * (logstep * (mel - min_log_mel)).exp()
    } else {
        f_sp * mel
    }
}

/// Center frequencies (Hz) of the `bins` mel filters.
pub fn mel_centers(bins: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    mel_edges(bins, fmin, fmax)[1..=bins].to_vec()
}

fn mel_edges(bins: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (0..bins + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bins + 1) as f64)).collect()
}

/// Triangular, area-normalized mel filters over the `window/2 + 1` FFT bins.
pub fn mel_filterbank(bins: usize, window: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Vec<Vec<f64>> {
    let edges = mel_edges(bins, fmin, fmax);
    let n_fft_bins = window / 2 + 1;
    let freqs: Vec<f64> = (0..n_fft_bins).map(|k| k as f64 * sample_rate as f64 / window as f64).collect();
    (0..bins)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (r - l);
            freqs
                .iter()
                .map(|&f| {
                    let up = (f - l) / (c - l);
                    let down = (r - f) / (r - c);
                    up.min(down).max(0.0) * norm
                })
                .collect()
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    // Periodic Hann, as used for spectral analysis.
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// Index into a signal of length `len` mirrored about its end samples.
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    (if m < len as isize { m } else { period - m }) as usize
}

/// Frame count for a clip of `len` samples.
pub fn frame_count(len: usize, cfg: &MelConfig) -> Result<usize> {
    if len == 0 {
        return Err(Error::invalid("empty clip"));
    }
    match cfg.padding {
        Padding::Reflect => Ok(len.div_ceil(cfg.hop)),
        Padding::None if len < cfg.window => {
            Err(Error::invalid(format!("clip of {len} samples is shorter than the {}-sample window", cfg.window)))
        }
        Padding::None => Ok((len - cfg.window) / cfg.hop + 1),
    }
}

/// Hann-windowed magnitude STFT → mel filterbank → natural log with floor.
pub fn wav_to_mel(pcm: &[i16], sample_rate: u32, cfg: &MelConfig) -> Result<MelSpectrogram> {
    if sample_rate != cfg.sample_rate && !cfg.allow_rate_override {
        return Err(Error::UnsupportedAudio(format!(
            "clip is sampled at {sample_rate} Hz, expected {} Hz (resampling is not supported)",
            cfg.sample_rate
        )));
    }
    if cfg.window == 0 || cfg.hop == 0 || cfg.bins == 0 || !(cfg.fmin < cfg.fmax) {
        return Err(Error::invalid("invalid mel configuration"));
    }
    let frames = frame_count(pcm.len(), cfg)?;
    let offset: isize = match cfg.padding {
        Padding::Reflect => -(((cfg.window.saturating_sub(cfg.hop)) / 2) as isize),
        Padding::None => 0,
    };
    let samples: Vec<f64> = pcm.iter().map(|&s| f64::from(s) / 32768.0).collect();
    let window = hann(cfg.window);
    let bank = mel_filterbank(cfg.bins, cfg.window, sample_rate, cfg.fmin, cfg.fmax.min(sample_rate as f64 / 2.0));
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.window);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.window];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut mag = vec![0.0; cfg.window / 2 + 1];
    let mut values = Vec::with_capacity(frames * cfg.bins);
    for t in 0..frames {
        let start = offset + (t * cfg.hop) as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            let s = samples[reflect(start + i as isize, samples.len())];
            *b = Complex::new(s * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (m, b) in mag.iter_mut().zip(&buf) {
            *m = b.norm();
        }
        for filt in &bank {
            let e: f64 = filt.iter().zip(&mag).map(|(w, m)| w * m).sum();
            values.push(e.max(LOG_FLOOR).ln());
        }
    }
    let mut mel = MelSpectrogram::new(frames, cfg.bins, values)?;
    mel.meta = Some(StftMeta { sample_rate, window: cfg.window, hop: cfg.hop });
    Ok(mel)
}

/// Reads a mono 16-bit PCM WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<i16>, u32)> {
    let reader = hound::WavReader::open(path.as_ref()).map_err(|e| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::UnsupportedAudio(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::UnsupportedAudio(format!(
            "need mono 16-bit PCM, got {} channel(s) of {}-bit {:?}",
            spec.channels, spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::UnsupportedAudio(e.to_string()))?;
    Ok((samples, spec.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, seconds: f64) -> Vec<i16> {
        let n = (seconds * SAMPLE_RATE as f64) as usize;
        (0..n)
            .map(|i| (0.5 * 32767.0 * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin()) as i16)
            .collect()
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let mel = wav_to_mel(&vec![0; 8000], SAMPLE_RATE, &MelConfig::default()).unwrap();
        assert_eq!(mel.bins, 64);
        assert!(mel.values.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn ten_seconds_gives_a_thousand_frames() {
        let cfg = MelConfig::default();
        assert_eq!(frame_count(320_000, &cfg).unwrap(), 1000);
        let no_pad = MelConfig { padding: Padding::None, ..cfg };
        assert_eq!(frame_count(320_000, &no_pad).unwrap(), 997);
        assert!(frame_count(0, &MelConfig::default()).is_err());
    }

    #[test]
    fn sine_at_filter_center_peaks_in_that_bin() {
        let centers = mel_centers(MEL_BINS, FMIN, FMAX);
        for b in [30, 45, 60] {
            let mel = wav_to_mel(&sine(centers[b], 0.25), SAMPLE_RATE, &MelConfig::default()).unwrap();
            for t in 2..mel.frames - 2 {
                let row = &mel.values[t * mel.bins..(t + 1) * mel.bins];
                let arg = (0..mel.bins).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
                assert_eq!(arg, b, "frame {t}");
            }
        }
    }

    #[test]
    fn rate_mismatch_needs_override() {
        let pcm = vec![0i16; 4000];
        assert!(matches!(wav_to_mel(&pcm, 16_000, &MelConfig::default()), Err(Error::UnsupportedAudio(_))));
        let cfg = MelConfig { allow_rate_override: true, ..Default::default() };
        assert!(wav_to_mel(&pcm, 16_000, &cfg).is_ok());
    }

    #[test]
    fn filterbank_is_triangular_and_normalized() {
        let bank = mel_filterbank(8, 1024, SAMPLE_RATE, FMIN, FMAX);
        for f in &bank {
            assert!(f.iter().all(|&w| w >= 0.0));
            assert!(f.iter().any(|&w| w > 0.0));
        }
        let edges = mel_edges(8, FMIN, FMAX);
        assert!((edges[0] - FMIN).abs() < 1e-9 && (edges[9] - FMAX).abs() < 1e-6);
        assert!((mel_to_hz(hz_to_mel(3210.0)) - 3210.0).abs() < 1e-9);
    }

    #[test]
    fn reflect_indexing() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn wav_round_trip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let spec = hound::WavSpec { channels: 1, sample_rate: SAMPLE_RATE, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for s in [1i16, -2, 300] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        assert_eq!(read_wav(&path).unwrap(), (vec![1, -2, 300], SAMPLE_RATE));

        let stereo = dir.path().join("b.wav");
        let mut w = hound::WavWriter::create(&stereo, hound::WavSpec { channels: 2, ..spec }).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&stereo), Err(Error::UnsupportedAudio(_))));

        let junk = dir.path().join("c.wav");
        std::fs::write(&junk, b"not a wav file").unwrap();
        assert!(matches!(read_wav(&junk), Err(Error::UnsupportedAudio(_))));
    }
}
