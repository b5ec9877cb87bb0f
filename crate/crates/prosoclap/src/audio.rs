//! Mel-spectrogram extraction and fixed-length token segment clipping.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature extraction configuration. The log floor is an energy: values are
/// ln(max(energy, log_floor_energy)), so silence renders as ln(1e-5).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub sample_rate: f32,
    pub frame_size: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub log_floor_energy: f64,
    pub segment_len: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000.0,
            frame_size: 1024,
            hop: 256,
            mel_bins: 80,
            log_floor_energy: 1e-5,
            segment_len: 128,
        }
    }
}

impl FeatureConfig {
    pub fn log_floor(&self) -> f64 {
        self.log_floor_energy.ln()
    }
}

#[derive(Debug, Clone)]
pub struct MelSpectrogram {
    /// F x T log-mel energies.
    pub values: Array2<f64>,
    pub sample_rate: f32,
    pub hop: u32,
}

impl MelSpectrogram {
    pub fn mel_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    Phoneme,
    Word,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenBoundary {
    pub token_kind: TokenKind,
    pub token_symbol: String,
    pub start_frame: usize,
    /// Exclusive.
    pub end_frame: usize,
}

impl TokenBoundary {
    pub fn width(&self) -> usize {
        self.end_frame - self.start_frame
    }
}

/// Fixed-length slice of one token's speech, right-padded with the log floor.
#[derive(Debug, Clone)]
pub struct SpeechSegment {
    /// F x L values.
    pub values: Array2<f64>,
    pub valid_frames: usize,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filter bank, (mel_bins x (frame/2 + 1)).
fn mel_filter_bank(cfg: &FeatureConfig) -> Array2<f64> {
    let n_bins = cfg.frame_size / 2 + 1;
    let fmax = cfg.sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(fmax);
    let centers: Vec<f64> = (0..cfg.mel_bins + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (cfg.mel_bins + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.frame_size as f64;
    Array2::from_shape_fn((cfg.mel_bins, n_bins), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (lo, mid, hi) = (centers[m], centers[m + 1], centers[m + 2]);
        let rising = if mid > lo { (f - lo) / (mid - lo) } else { 0.0 };
        let falling = if hi > mid { (hi - f) / (hi - mid) } else { 0.0 };
        rising.min(falling).max(0.0)
    })
}

/// STFT power -> mel filter bank -> floored natural log. Frame count follows
/// the no-padding convention T = 1 + (len - frame) / hop.
pub fn compute_mel(waveform: &[f32], cfg: &FeatureConfig, waveform_rate: f32) -> Result<MelSpectrogram> {
    if waveform_rate != cfg.sample_rate {
        return Err(Error::SampleRateMismatch { got: waveform_rate, want: cfg.sample_rate });
    }
    if waveform.len() < cfg.frame_size {
        return Err(Error::WaveformTooShort { len: waveform.len(), frame: cfg.frame_size });
    }
    let t_frames = 1 + (waveform.len() - cfg.frame_size) / cfg.hop;
    let window: Vec<f64> = (0..cfg.frame_size)
        .map(|i| {
            let x = std::f64::consts::PI * 2.0 * i as f64 / cfg.frame_size as f64;
            0.5 - 0.5 * x.cos()
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.frame_size);
    let filters = mel_filter_bank(cfg);
    let n_bins = cfg.frame_size / 2 + 1;

    let mut values = Array2::zeros((cfg.mel_bins, t_frames));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.frame_size];
    for t in 0..t_frames {
        let off = t * cfg.hop;
        for i in 0..cfg.frame_size {
            buf[i] = Complex::new(waveform[off + i] as f64 * window[i], 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        for m in 0..cfg.mel_bins {
            let e: f64 = (0..n_bins).map(|k| filters[(m, k)] * power[k]).sum();
            values[(m, t)] = e.max(cfg.log_floor_energy).ln();
        }
    }
    Ok(MelSpectrogram { values, sample_rate: cfg.sample_rate, hop: cfg.hop as u32 })
}

/// Clip a token's frames to exactly `seg_len` frames: shorter boundaries are
/// right-padded with the log floor, longer ones are center-cropped. Frames
/// outside [start, end) are never read.
pub fn clip_token_segment(
    mel: &MelSpectrogram,
    boundary: &TokenBoundary,
    seg_len: usize,
    log_floor: f64,
) -> Result<SpeechSegment> {
    let t = mel.frames();
    if boundary.start_frame >= boundary.end_frame || boundary.end_frame > t {
        return Err(Error::InvalidBoundary {
            start: boundary.start_frame,
            end: boundary.end_frame,
            frames: t,
        });
    }
    let f = mel.mel_bins();
    let width = boundary.width();
    let mut values = Array2::from_elem((f, seg_len), log_floor);
    if width <= seg_len {
        for (dst, src) in (boundary.start_frame..boundary.end_frame).enumerate() {
            for row in 0..f {
                values[(row, dst)] = mel.values[(row, src)];
            }
        }
        Ok(SpeechSegment { values, valid_frames: width })
    } else {
        let offset = (width - seg_len) / 2;
        for dst in 0..seg_len {
            let src = boundary.start_frame + offset + dst;
            for row in 0..f {
                values[(row, dst)] = mel.values[(row, src)];
            }
        }
        Ok(SpeechSegment { values, valid_frames: seg_len })
    }
}

const MEL_MAGIC: &[u8; 4] = b"MEL1";

/// Binary mel cache: magic `MEL1`, u32 F, u32 T, f32 sample_rate, u32 hop,
/// then F*T f32 little-endian values, row-major by mel bin.
pub fn write_mel_cache(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(MEL_MAGIC)?;
    f.write_all(&(mel.mel_bins() as u32).to_le_bytes())?;
    f.write_all(&(mel.frames() as u32).to_le_bytes())?;
    f.write_all(&mel.sample_rate.to_le_bytes())?;
    f.write_all(&mel.hop.to_le_bytes())?;
    let mut bytes = Vec::with_capacity(mel.values.len() * 4);
    for row in mel.values.rows() {
        for &v in row {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_mel_cache(path: &Path) -> Result<MelSpectrogram> {
    let bytes = std::fs::read(path)?;
    parse_mel_cache(&bytes).map_err(|msg| {
        Error::ConfigInvalid(format!("mel cache {}: {msg}", path.display()))
    })
}

fn parse_mel_cache(bytes: &[u8]) -> std::result::Result<MelSpectrogram, String> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| "truncated header")?;
    if &magic != MEL_MAGIC {
        return Err("bad magic".into());
    }
    let f = read_u32(&mut r)? as usize;
    let t = read_u32(&mut r)? as usize;
    let sample_rate = f32::from_le_bytes(read_arr(&mut r)?);
    let hop = read_u32(&mut r)?;
    let mut values = Array2::zeros((f, t));
    for row in 0..f {
        for col in 0..t {
            let v = f32::from_le_bytes(read_arr(&mut r)?);
            values[(row, col)] = v as f64;
        }
    }
    Ok(MelSpectrogram { values, sample_rate, hop })
}

fn read_u32(r: &mut &[u8]) -> std::result::Result<u32, String> {
    Ok(u32::from_le_bytes(read_arr(r)?))
}

fn read_arr<const N: usize>(r: &mut &[u8]) -> std::result::Result<[u8; N], String> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|_| "truncated".to_string())?;
    Ok(buf)
}
