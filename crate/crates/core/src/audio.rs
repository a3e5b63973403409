//! Log-mel spectrogram images: STFT, Slaney mel filterbank, dB scaling,
//! regression deltas and a bilinear resize to a fixed square image.

use std::io::{Read, Write};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::diff::Matrix;
use crate::error::{Error, Result};

/// Magic bytes at the start of a serialized spectrogram tensor.
pub const TENSOR_MAGIC: [u8; 4] = *b"CXFT";
/// Lower clamp on power before converting to decibels.
pub const POWER_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Input("waveform has no samples".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Input("waveform has non-finite samples".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureParams {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub delta_width: usize,
    /// Dynamic range kept below the loudest value, in dB.
    pub top_db: f64,
    pub image_size: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            n_fft: 2048,
            hop: 1024,
            n_mels: 224,
            delta_width: 9,
            top_db: 80.0,
            image_size: 224,
        }
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided spectrum, `n_fft / 2 + 1` bins by `frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: usize,
    frames: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames + frame]
    }

    pub fn magnitude(&self) -> Matrix {
        Matrix::from_fn(self.bins, self.frames, |b, f| self.get(b, f).norm())
    }

    pub fn power(&self) -> Matrix {
        Matrix::from_fn(self.bins, self.frames, |b, f| self.get(b, f).norm_sqr())
    }
}

/// Centered frames over the reflect-padded signal.
pub fn frame_signal(w: &Waveform, n_fft: usize, hop: usize) -> Result<Vec<Vec<f64>>> {
    if n_fft < 256 || !n_fft.is_power_of_two() {
        return Err(Error::Parameter(format!("n_fft must be a power of two >= 256, got {n_fft}")));
    }
    if hop == 0 {
        return Err(Error::Parameter("hop length must be positive".into()));
    }
    if w.len() < n_fft {
        return Err(Error::Input(format!(
            "signal of {} samples is shorter than one {n_fft}-sample window",
            w.len()
        )));
    }
    let pad = n_fft / 2;
    let x = w.samples();
    let n = x.len() as isize;
    let reflect = |i: isize| -> f64 {
        let j = if i < 0 {
            -i
        } else if i >= n {
            2 * (n - 1) - i
        } else {
            i
        };
        x[j as usize]
    };
    let frames = 1 + x.len() / hop;
    Ok((0..frames)
        .map(|f| {
            let start = (f * hop) as isize - pad as isize;
            (0..n_fft as isize).map(|k| reflect(start + k)).collect()
        })
        .collect())
}

pub fn stft(w: &Waveform, n_fft: usize, hop: usize) -> Result<Spectrum> {
    let frames = frame_signal(w, n_fft, hop)?;
    let window = hann(n_fft);
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let bins = n_fft / 2 + 1;
    let mut data = vec![Complex64::new(0.0, 0.0); bins * frames.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for (f, frame) in frames.iter().enumerate() {
        for (b, (x, h)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *b = Complex64::new(x * h, 0.0);
        }
        fft.process(&mut buf);
        for b in 0..bins {
            data[b * frames.len() + f] = buf[b];
        }
    }
    Ok(Spectrum {
        bins,
        frames: frames.len(),
        data,
    })
}

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < MIN_LOG_MEL {
        mel * F_SP
    } else {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    }
}

/// Center frequencies (Hz) of `n_mels` filters plus the two outer edges.
pub fn mel_edges(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// `n_mels x (n_fft/2 + 1)` triangular filters, each scaled by
/// `2 / (f_right - f_left)` so filters have equal area in Hz.
pub fn mel_filterbank(n_mels: usize, sample_rate: u32, n_fft: usize) -> Result<Matrix> {
    let bins = n_fft / 2 + 1;
    if n_mels == 0 {
        return Err(Error::Parameter("n_mels must be positive".into()));
    }
    if n_mels > bins {
        return Err(Error::Parameter(format!("{n_mels} mel bands exceed {bins} FFT bins")));
    }
    if sample_rate == 0 {
        return Err(Error::Parameter("sample rate must be positive".into()));
    }
    let edges = mel_edges(n_mels, sample_rate);
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * sample_rate as f64 / n_fft as f64).collect();
    Ok(Matrix::from_fn(n_mels, bins, |m, k| {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let lower = (freqs[k] - l) / (c - l);
        let upper = (r - freqs[k]) / (r - c);
        lower.min(upper).max(0.0) * 2.0 / (r - l)
    }))
}

/// `10 log10(max(x, 1e-10))`, then clipped to `top_db` below the maximum.
pub fn power_to_db(power: &Matrix, top_db: f64) -> Matrix {
    let db = power.map(|p| 10.0 * p.max(POWER_FLOOR).log10());
    let peak = db.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = peak - top_db;
    db.map(|v| v.max(floor))
}

/// `n_mels x frames` log-mel power spectrogram.
pub fn log_mel(w: &Waveform, params: &FeatureParams) -> Result<Matrix> {
    let spec = stft(w, params.n_fft, params.hop)?;
    let fb = mel_filterbank(params.n_mels, w.sample_rate(), params.n_fft)?;
    let mel = fb.matmul(&spec.power())?;
    Ok(power_to_db(&mel, params.top_db))
}

/// Least-squares slope along each row over a centered window of `width`
/// columns, replicating the edge columns.
pub fn delta(m: &Matrix, width: usize) -> Result<Matrix> {
    if width < 3 || width % 2 == 0 {
        return Err(Error::Parameter(format!("delta width must be odd and >= 3, got {width}")));
    }
    let half = (width / 2) as isize;
    let denom: f64 = (1..=half).map(|k| 2.0 * (k * k) as f64).sum();
    let last = m.cols() as isize - 1;
    Ok(Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        let at = |k: isize| m[(i, (j as isize + k).clamp(0, last) as usize)];
        (1..=half).map(|k| k as f64 * (at(k) - at(-k))).sum::<f64>() / denom
    }))
}

/// Bilinear resize with half-pixel sample centers.
pub fn resize_bilinear(m: &Matrix, rows: usize, cols: usize) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Parameter("resize target must be nonempty".into()));
    }
    let axis = |out: usize, input: usize| -> Vec<(usize, usize, f64)> {
        let scale = input as f64 / out as f64;
        (0..out)
            .map(|d| {
                let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(input - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ry = axis(rows, m.rows());
    let rx = axis(cols, m.cols());
    Ok(Matrix::from_fn(rows, cols, |i, j| {
        let (y0, y1, fy) = ry[i];
        let (x0, x1, fx) = rx[j];
        let top = m[(y0, x0)] * (1.0 - fx) + m[(y0, x1)] * fx;
        let bottom = m[(y1, x0)] * (1.0 - fx) + m[(y1, x1)] * fx;
        top * (1.0 - fy) + bottom * fy
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramImage {
    /// Log-mel, delta, delta-delta.
    pub channels: [Matrix; 3],
}

impl SpectrogramImage {
    pub fn shape(&self) -> (usize, usize, usize) {
        (3, self.channels[0].rows(), self.channels[0].cols())
    }

    /// Rows of the image flattened to one feature sequence: position `i`
    /// concatenates row `i` of every channel.
    pub fn as_sequence(&self) -> Result<Matrix> {
        Matrix::concat_cols(&[&self.channels[0], &self.channels[1], &self.channels[2]])
    }

    /// Magic, `u32` rank and dimensions, then little-endian `f32` values in
    /// channel, row, column order.
    pub fn write_tensor<W: Write>(&self, mut out: W) -> Result<()> {
        let (c, h, w) = self.shape();
        out.write_all(&TENSOR_MAGIC)?;
        for d in [3u32, c as u32, h as u32, w as u32] {
            out.write_all(&d.to_le_bytes())?;
        }
        for ch in &self.channels {
            for v in ch.as_slice() {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_tensor<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if magic != TENSOR_MAGIC {
            return Err(Error::Input("not a spectrogram tensor file".into()));
        }
        let mut word = [0u8; 4];
        let mut next = |input: &mut R| -> Result<u32> {
            input.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word))
        };
        let rank = next(&mut input)?;
        let dims = [next(&mut input)?, next(&mut input)?, next(&mut input)?];
        if rank != 3 || dims[0] != 3 || dims[1] == 0 || dims[2] == 0 {
            return Err(Error::Input(format!("unexpected tensor shape {dims:?}")));
        }
        let (h, w) = (dims[1] as usize, dims[2] as usize);
        let mut read_channel = || -> Result<Matrix> {
            let mut data = Vec::with_capacity(h * w);
            for _ in 0..h * w {
                input.read_exact(&mut word)?;
                data.push(f32::from_le_bytes(word) as f64);
            }
            Matrix::from_vec(h, w, data)
        };
        Ok(Self {
            channels: [read_channel()?, read_channel()?, read_channel()?],
        })
    }
}

pub fn to_image(w: &Waveform, params: &FeatureParams) -> Result<SpectrogramImage> {
    let mel = log_mel(w, params)?;
    let d1 = delta(&mel, params.delta_width)?;
    let d2 = delta(&d1, params.delta_width)?;
    let size = params.image_size;
    Ok(SpectrogramImage {
        channels: [
            resize_bilinear(&mel, size, size)?,
            resize_bilinear(&d1, size, size)?,
            resize_bilinear(&d2, size, size)?,
        ],
    })
}
