use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::FormatError;
use crate::grid::MultiPointRecording;
use crate::{ChannelId, Error, Phase, Result};

pub const RECORDING_VERSION: u32 = 1;

const TEXT_EXT: &str = "rec";
const BINARY_EXT: &str = "bin";
const BINARY_MAGIC: &[u8; 8] = b"VFLRECB\0";
const BINARY_HEADER: usize = 64;
const BINARY_POINT_MAX: usize = 20;

/// One channel on disk: header metadata plus samples in volts.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingFile {
    pub version: u32,
    pub sample_rate: f64,
    pub carrier_frequency_nominal: f64,
    pub channel: ChannelId,
    pub scenario: Option<String>,
    pub start_s: f64,
    pub samples: Vec<f64>,
}

fn header_value(v: f64) -> String {
    // Shortest representation that parses back to the same f64.
    format!("{v:?}")
}

/// Text form: `# key=value` header lines, then one sample per line with nine
/// significant digits.
pub fn format_recording(r: &RecordingFile) -> String {
    let mut s = String::with_capacity(r.samples.len() * 17 + 160);
    let _ = writeln!(s, "# version={}", r.version);
    let _ = writeln!(s, "# fs_hz={}", header_value(r.sample_rate));
    let _ = writeln!(s, "# fc_hz={}", header_value(r.carrier_frequency_nominal));
    let _ = writeln!(s, "# point={}", r.channel.point);
    let _ = writeln!(s, "# phase={}", r.channel.phase);
    if let Some(sc) = &r.scenario {
        let _ = writeln!(s, "# scenario={sc}");
    }
    let _ = writeln!(s, "# start_s={}", header_value(r.start_s));
    let _ = writeln!(s, "# samples={}", r.samples.len());
    for v in &r.samples {
        let _ = writeln!(s, "{v:.8e}");
    }
    s
}

fn parse_key<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &'static str) -> Result<T, FormatError>
where
    T::Err: std::fmt::Display,
{
    let raw = map.get(key).ok_or(FormatError::MissingKey(key))?;
    raw.parse().map_err(|e: T::Err| FormatError::BadValue {
        key: key.to_string(),
        message: e.to_string(),
    })
}

pub fn parse_recording(text: &str) -> Result<RecordingFile, FormatError> {
    let mut header = BTreeMap::new();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((_, line)) = lines.peek() {
        let Some(rest) = line.trim_start().strip_prefix('#') else { break };
        if let Some((k, v)) = rest.split_once('=') {
            header.insert(k.trim().to_string(), v.trim().to_string());
        }
        lines.next();
    }
    let version: u32 = parse_key(&header, "version")?;
    if version != RECORDING_VERSION {
        return Err(FormatError::Version(version));
    }
    let sample_rate: f64 = parse_key(&header, "fs_hz")?;
    if !(sample_rate > 0.0) {
        return Err(FormatError::BadValue {
            key: "fs_hz".into(),
            message: format!("must be positive, got {sample_rate}"),
        });
    }
    let carrier: f64 = parse_key(&header, "fc_hz")?;
    let point: String = parse_key(&header, "point")?;
    let phase: Phase = parse_key(&header, "phase")?;
    let declared: usize = parse_key(&header, "samples")?;
    let start_s = if header.contains_key("start_s") {
        parse_key(&header, "start_s")?
    } else {
        0.0
    };

    let mut samples = Vec::with_capacity(declared);
    for (i, line) in lines {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v: f64 = t.parse().map_err(|e: std::num::ParseFloatError| FormatError::Payload {
            line: i + 1,
            message: e.to_string(),
        })?;
        samples.push(v);
    }
    if samples.len() != declared {
        return Err(FormatError::Truncated {
            declared,
            found: samples.len(),
        });
    }
    Ok(RecordingFile {
        version,
        sample_rate,
        carrier_frequency_nominal: carrier,
        channel: ChannelId::new(point, phase),
        scenario: header.get("scenario").cloned(),
        start_s,
        samples,
    })
}

pub fn write_recording(path: impl AsRef<Path>, r: &RecordingFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_recording(r)).map_err(|e| Error::io(path, e))
}

pub fn read_recording(path: impl AsRef<Path>) -> Result<RecordingFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_recording(&text)?)
}

/// Packed variant: a 64-byte little-endian header followed by `f64` samples.
///
/// Header layout: magic (8), version u16, phase index u8, point length u8,
/// point bytes (20, zero padded), fs f64, fc f64, start f64, count u64. A
/// scenario label, when present, follows the samples as a u16 byte length
/// and UTF-8 bytes.
pub fn write_binary_recording(path: impl AsRef<Path>, r: &RecordingFile) -> Result<()> {
    let path = path.as_ref();
    let point = r.channel.point.as_bytes();
    if point.len() > BINARY_POINT_MAX {
        return Err(FormatError::BadValue {
            key: "point".into(),
            message: format!("longer than {BINARY_POINT_MAX} bytes"),
        }
        .into());
    }
    let mut buf = Vec::with_capacity(BINARY_HEADER + 8 * r.samples.len());
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&(r.version as u16).to_le_bytes());
    buf.push(r.channel.phase.index() as u8);
    buf.push(point.len() as u8);
    let mut name = [0u8; BINARY_POINT_MAX];
    name[..point.len()].copy_from_slice(point);
    buf.extend_from_slice(&name);
    for v in [r.sample_rate, r.carrier_frequency_nominal, r.start_s] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(r.samples.len() as u64).to_le_bytes());
    for v in &r.samples {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(label) = &r.scenario {
        let bytes = label.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| FormatError::BadValue {
            key: "scenario".into(),
            message: "longer than 65535 bytes".into(),
        })?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(bytes);
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_binary_recording(path: impl AsRef<Path>) -> Result<RecordingFile> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_binary(&buf)?)
}

fn decode_binary(buf: &[u8]) -> Result<RecordingFile, FormatError> {
    if buf.len() < BINARY_HEADER || &buf[..8] != BINARY_MAGIC {
        return Err(FormatError::Schema("not a packed recording (bad magic or short header)".into()));
    }
    let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let version = u16::from_le_bytes([buf[8], buf[9]]) as u32;
    if version != RECORDING_VERSION {
        return Err(FormatError::Version(version));
    }
    let phase = *Phase::ALL.get(buf[10] as usize).ok_or_else(|| FormatError::BadValue {
        key: "phase".into(),
        message: format!("index {}", buf[10]),
    })?;
    let len = (buf[11] as usize).min(BINARY_POINT_MAX);
    let point = std::str::from_utf8(&buf[12..12 + len])
        .map_err(|e| FormatError::BadValue {
            key: "point".into(),
            message: e.to_string(),
        })?
        .to_string();
    let declared = u64::from_le_bytes(buf[56..64].try_into().unwrap()) as usize;
    let rest = &buf[BINARY_HEADER..];
    if rest.len() < 8 * declared {
        return Err(FormatError::Truncated {
            declared,
            found: rest.len() / 8,
        });
    }
    let (payload, trailer) = rest.split_at(8 * declared);
    let scenario = match trailer {
        [] => None,
        [a, b, label @ ..] if u16::from_le_bytes([*a, *b]) as usize == label.len() => Some(
            std::str::from_utf8(label)
                .map_err(|e| FormatError::BadValue {
                    key: "scenario".into(),
                    message: e.to_string(),
                })?
                .to_string(),
        ),
        _ => return Err(FormatError::Schema("malformed trailer after the samples".into())),
    };
    Ok(RecordingFile {
        version,
        sample_rate: f64_at(32),
        carrier_frequency_nominal: f64_at(40),
        channel: ChannelId::new(point, phase),
        scenario,
        start_s: f64_at(48),
        samples: payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    })
}

fn file_name(c: &ChannelId, binary: bool) -> Result<String> {
    if c.point.is_empty() || c.point.contains(['/', '\\', '.']) {
        return Err(FormatError::BadValue {
            key: "point".into(),
            message: format!("'{}' cannot be used as a file name", c.point),
        }
        .into());
    }
    Ok(format!("{}_{}.{}", c.point, c.phase, if binary { BINARY_EXT } else { TEXT_EXT }))
}

/// Writes one file per channel into `dir` (created if missing) and returns
/// the paths written.
pub fn write_recording_dir(dir: impl AsRef<Path>, rec: &MultiPointRecording, binary: bool) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (c, samples) in &rec.channels {
        let path = dir.join(file_name(c, binary)?);
        let file = RecordingFile {
            version: RECORDING_VERSION,
            sample_rate: rec.sample_rate,
            carrier_frequency_nominal: rec.carrier_frequency_nominal,
            channel: c.clone(),
            scenario: rec.scenario_ref.clone(),
            start_s: 0.0,
            samples: samples.clone(),
        };
        if binary {
            write_binary_recording(&path, &file)?;
        } else {
            write_recording(&path, &file)?;
        }
        written.push(path);
    }
    Ok(written)
}

/// Reads every `.rec` and `.bin` file in `dir` into one recording. All
/// channels must share sample rate, carrier and length.
pub fn read_recording_dir(dir: impl AsRef<Path>) -> Result<MultiPointRecording> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some(TEXT_EXT | BINARY_EXT)))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(FormatError::EmptyDirectory(dir.display().to_string()).into());
    }
    let mut rec = MultiPointRecording {
        channels: BTreeMap::new(),
        sample_rate: 0.0,
        carrier_frequency_nominal: 0.0,
        scenario_ref: None,
    };
    for (k, p) in paths.iter().enumerate() {
        let f = if p.extension().and_then(|e| e.to_str()) == Some(BINARY_EXT) {
            read_binary_recording(p)?
        } else {
            read_recording(p)?
        };
        if k == 0 {
            rec.sample_rate = f.sample_rate;
            rec.carrier_frequency_nominal = f.carrier_frequency_nominal;
            rec.scenario_ref = f.scenario.clone();
        } else if f.sample_rate != rec.sample_rate || f.carrier_frequency_nominal != rec.carrier_frequency_nominal {
            return Err(FormatError::Schema(format!("{} disagrees on fs_hz or fc_hz", p.display())).into());
        }
        if rec.channels.insert(f.channel.clone(), f.samples).is_some() {
            return Err(FormatError::Schema(format!("channel {} appears twice", f.channel)).into());
        }
    }
    rec.validate().map_err(FormatError::Schema)?;
    Ok(rec)
}
