//! Minimal RIFF/WAVE I/O for 32-bit float PCM.
//!
//! Only what the toolkit needs: interleaved IEEE-float samples (format tag
//! 3), any channel count on read, written with a `fact` chunk as the format
//! spec asks for non-integer PCM. Unknown chunks are skipped on read.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{FoaClip, FOA_CHANNELS};

const FMT_IEEE_FLOAT: u16 = 3;

/// Deinterleaved float audio as read from disk.
#[derive(Debug)]
pub struct WavData {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Write interleaved float32 WAV. `channels` must be equally long.
pub fn write_wav(path: &Path, channels: &[&[f64]], sample_rate: u32) -> Result<()> {
    let ch = channels.len();
    if ch == 0 || ch > u16::MAX as usize {
        return Err(Error::InvalidConfig(format!("bad channel count {ch}")));
    }
    let frames = channels[0].len();
    if channels.iter().any(|c| c.len() != frames) {
        return Err(Error::Shape("channel lengths differ".into()));
    }
    let data_len = (frames * ch * 4) as u32;
    let block_align = (ch * 4) as u16;
    let mut buf = Vec::with_capacity(60 + data_len as usize);
    buf.extend_from_slice(b"RIFF");
    // 4 (WAVE) + 24 (fmt) + 12 (fact) + 8 (data header) + payload
    buf.extend_from_slice(&(4 + 24 + 12 + 8 + data_len).to_le_bytes());
    buf.extend_from_slice(b"WAVE");
    buf.extend_from_slice(b"fmt ");
    buf.extend_from_slice(&16u32.to_le_bytes());
    buf.extend_from_slice(&FMT_IEEE_FLOAT.to_le_bytes());
    buf.extend_from_slice(&(ch as u16).to_le_bytes());
    buf.extend_from_slice(&sample_rate.to_le_bytes());
    buf.extend_from_slice(&(sample_rate * block_align as u32).to_le_bytes());
    buf.extend_from_slice(&block_align.to_le_bytes());
    buf.extend_from_slice(&32u16.to_le_bytes());
    buf.extend_from_slice(b"fact");
    buf.extend_from_slice(&4u32.to_le_bytes());
    buf.extend_from_slice(&(frames as u32).to_le_bytes());
    buf.extend_from_slice(b"data");
    buf.extend_from_slice(&data_len.to_le_bytes());
    for i in 0..frames {
        for c in channels {
            buf.extend_from_slice(&(c[i] as f32).to_le_bytes());
        }
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

/// Read a float32 WAV file into per-channel f64 buffers.
pub fn read_wav(path: &Path) -> Result<WavData> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 12 || &buf[0..4] != b"RIFF" || &buf[8..12] != b"WAVE" {
        return Err(format_err(path, "not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // tag, channels, rate, bits
    let mut data: Option<(usize, usize)> = None; // offset, len
    while pos + 8 <= buf.len() {
        let id = &buf[pos..pos + 4];
        let len = u32::from_le_bytes(buf[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = pos + 8;
        if body + len > buf.len() {
            return Err(format_err(path, format!("truncated chunk {:?}", String::from_utf8_lossy(id))));
        }
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(format_err(path, "fmt chunk too short"));
                }
                let tag = u16::from_le_bytes(buf[body..body + 2].try_into().unwrap());
                let channels = u16::from_le_bytes(buf[body + 2..body + 4].try_into().unwrap());
                let rate = u32::from_le_bytes(buf[body + 4..body + 8].try_into().unwrap());
                let bits = u16::from_le_bytes(buf[body + 14..body + 16].try_into().unwrap());
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => data = Some((body, len)),
            _ => {}
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        pos = body + len + (len & 1);
    }
    let (tag, channels, rate, bits) =
        fmt.ok_or_else(|| format_err(path, "missing fmt chunk"))?;
    let (off, len) = data.ok_or_else(|| format_err(path, "missing data chunk"))?;
    if tag != FMT_IEEE_FLOAT || bits != 32 {
        return Err(format_err(
            path,
            format!("unsupported encoding: format tag {tag}, {bits}-bit (need 32-bit float)"),
        ));
    }
    if channels == 0 {
        return Err(format_err(path, "zero channels"));
    }
    let ch = channels as usize;
    if len % (4 * ch) != 0 {
        return Err(format_err(path, "data length is not a whole number of frames"));
    }
    let frames = len / (4 * ch);
    let mut out = vec![Vec::with_capacity(frames); ch];
    let mut p = off;
    for _ in 0..frames {
        for c in out.iter_mut() {
            let s = f32::from_le_bytes(buf[p..p + 4].try_into().unwrap());
            if !s.is_finite() {
                return Err(format_err(path, "non-finite sample"));
            }
            c.push(s as f64);
            p += 4;
        }
    }
    Ok(WavData {
        channels: out,
        sample_rate: rate,
    })
}

/// Write a 4-channel FOA clip.
pub fn write_foa_wav(path: &Path, clip: &FoaClip) -> Result<()> {
    let chans: Vec<&[f64]> = clip.channels().iter().map(|c| c.as_slice()).collect();
    write_wav(path, &chans, clip.sample_rate())
}

/// Read a WAV file that must contain exactly 4 channels.
pub fn read_foa_wav(path: &Path) -> Result<FoaClip> {
    let wav = read_wav(path)?;
    if wav.channels.len() != FOA_CHANNELS {
        return Err(format_err(
            path,
            format!("expected {} channels, found {}", FOA_CHANNELS, wav.channels.len()),
        ));
    }
    let mut it = wav.channels.into_iter();
    let channels = std::array::from_fn(|_| it.next().unwrap());
    FoaClip::new(channels, wav.sample_rate)
}
