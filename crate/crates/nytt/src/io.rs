//! WAV and JSON files.

use std::fs;
use std::path::{Path, PathBuf};

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use nytt_core::dsp::Waveform;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const FULL_SCALE: f64 = 32767.0;

/// Reads a mono WAV file (integer PCM or 32-bit float).
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Config(format!("{}: {} channels, expected mono", path.display(), spec.channels)));
    }
    let samples: Vec<f64> = match spec.sample_format {
        SampleFormat::Int => {
            let scale =
                if spec.bits_per_sample == 16 { FULL_SCALE } else { (1u64 << (spec.bits_per_sample - 1)) as f64 };
            reader.samples::<i32>().map(|s| s.map(|v| v as f64 / scale)).collect::<Result<_, _>>().map_err(wav_err)?
        }
        SampleFormat::Float => {
            reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>().map_err(wav_err)?
        }
    };
    Ok(Waveform::new(samples, spec.sample_rate)?)
}

/// Writes 16-bit mono PCM; samples are clamped to [-1, 1] here and nowhere
/// else.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    ensure_parent(path)?;
    let spec =
        WavSpec { channels: 1, sample_rate: w.sample_rate_hz(), bits_per_sample: 16, sample_format: SampleFormat::Int };
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for v in w.iter() {
        writer.write_sample((v.clamp(-1.0, 1.0) * FULL_SCALE).round() as i16).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Every `.wav` file in `dir`, sorted by file name.
pub fn read_wav_dir(dir: &Path) -> Result<Vec<(String, Waveform)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    paths.iter().map(|p| Ok((p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), read_wav(p)?))).collect()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

pub fn to_json_pretty<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json_pretty(value).as_bytes())
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(Error::io(p)),
        _ => Ok(()),
    }
}
