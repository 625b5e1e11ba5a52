//! Episode container file.
//!
//! Layout: magic `PBE1`, a little-endian u32 header length, a JSON header
//! describing the named arrays (element type, shape, byte extent relative to
//! the payload start), then the raw little-endian payloads. Array order is
//! fixed, so identical episodes serialize to identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Episode, TimeStep};

pub const MAGIC: &[u8; 4] = b"PBE1";

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    byte_offset: usize,
    byte_len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: u32,
    seed: u64,
    success: bool,
    config_hash: String,
    steps: usize,
    arrays: Vec<ArrayEntry>,
}

fn push_f32s(payload: &mut Vec<u8>, values: impl Iterator<Item = f32>) {
    for v in values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_episode(path: &Path, ep: &Episode) -> Result<(), DataError> {
    let steps = ep.steps.len();
    let (img_len, audio_len) = match ep.steps.first() {
        Some(s) => (s.image.len(), s.audio.len()),
        None => (0, 0),
    };
    let side = ((img_len / 3) as f64).sqrt() as usize;
    if steps > 0 && side * side * 3 != img_len {
        return Err(DataError::Format(format!(
            "image length {img_len} is not a square HxWx3 layout"
        )));
    }

    let mut payload: Vec<u8> = Vec::new();
    let mut arrays: Vec<ArrayEntry> = Vec::new();
    let mut record = |name: &str, dtype: &str, shape: Vec<usize>, payload: &mut Vec<u8>, start: usize| {
        arrays.push(ArrayEntry {
            name: name.into(),
            dtype: dtype.into(),
            shape,
            byte_offset: start,
            byte_len: payload.len() - start,
        });
    };

    let start = payload.len();
    for s in &ep.steps {
        payload.extend_from_slice(&s.image);
    }
    record("image", "u8", vec![steps, side, side, 3], &mut payload, start);

    let start = payload.len();
    for s in &ep.steps {
        push_f32s(&mut payload, s.audio.iter().copied());
    }
    record("audio", "f32", vec![steps, audio_len], &mut payload, start);

    let start = payload.len();
    for s in &ep.steps {
        payload.push(s.button_state);
    }
    record("button_state", "u8", vec![steps], &mut payload, start);

    let start = payload.len();
    for s in &ep.steps {
        push_f32s(&mut payload, s.eef_position.iter().copied());
    }
    record("eef_position", "f32", vec![steps, 3], &mut payload, start);

    let start = payload.len();
    for s in &ep.steps {
        push_f32s(&mut payload, s.action.iter().copied());
    }
    record("action", "f32", vec![steps, 3], &mut payload, start);

    let start = payload.len();
    for s in &ep.steps {
        push_f32s(&mut payload, s.force.iter().copied());
    }
    record("force", "f32", vec![steps, 3], &mut payload, start);

    let start = payload.len();
    for s in &ep.steps {
        payload.push(s.press_edge as u8);
    }
    record("press_edge", "u8", vec![steps], &mut payload, start);

    let start = payload.len();
    for s in &ep.steps {
        push_f32s(&mut payload, std::iter::once(s.t));
    }
    record("t", "f32", vec![steps], &mut payload, start);

    let header = Header {
        schema: 1,
        seed: ep.seed,
        success: ep.success,
        config_hash: ep.config_hash.clone(),
        steps,
        arrays,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| DataError::Format(format!("header: {e}")))?;
    let mut out = Vec::with_capacity(8 + header_bytes.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&payload);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_episode(path: &Path) -> Result<Episode, DataError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(DataError::Format(format!("{}: bad magic", path.display())));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(DataError::Format("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| DataError::Format(format!("header: {e}")))?;
    if header.schema != 1 {
        return Err(DataError::Format(format!("unknown schema {}", header.schema)));
    }
    let payload = &bytes[8 + header_len..];

    let fetch = |name: &str| -> Result<&ArrayEntry, DataError> {
        header
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| DataError::Format(format!("missing array {name}")))
    };
    let slice_of = |a: &ArrayEntry| -> Result<&[u8], DataError> {
        payload
            .get(a.byte_offset..a.byte_offset + a.byte_len)
            .ok_or_else(|| DataError::Format(format!("array {} out of bounds", a.name)))
    };
    let f32s = |raw: &[u8]| -> Vec<f32> {
        raw.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };

    let steps = header.steps;
    let image_e = fetch("image")?;
    let audio_e = fetch("audio")?;
    let img_per = if steps > 0 { image_e.byte_len / steps } else { 0 };
    let audio_per = if steps > 0 { audio_e.byte_len / 4 / steps } else { 0 };

    let image_raw = slice_of(image_e)?;
    let audio = f32s(slice_of(audio_e)?);
    let button = slice_of(fetch("button_state")?)?;
    let eef = f32s(slice_of(fetch("eef_position")?)?);
    let action = f32s(slice_of(fetch("action")?)?);
    let force = f32s(slice_of(fetch("force")?)?);
    let press = slice_of(fetch("press_edge")?)?;
    let times = f32s(slice_of(fetch("t")?)?);

    if button.len() != steps || times.len() != steps || press.len() != steps {
        return Err(DataError::Format("scalar array lengths disagree with step count".into()));
    }

    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        out.push(TimeStep {
            image: image_raw[k * img_per..(k + 1) * img_per].to_vec(),
            audio: audio[k * audio_per..(k + 1) * audio_per].to_vec(),
            button_state: button[k],
            eef_position: [eef[k * 3], eef[k * 3 + 1], eef[k * 3 + 2]],
            action: [action[k * 3], action[k * 3 + 1], action[k * 3 + 2]],
            force: [force[k * 3], force[k * 3 + 1], force[k * 3 + 2]],
            press_edge: press[k] != 0,
            t: times[k],
        });
    }
    Ok(Episode {
        steps: out,
        seed: header.seed,
        success: header.success,
        config_hash: header.config_hash,
    })
}
