//! Binary record files.
//!
//! Little-endian layout: magic `PQSR`, version u16, flags u16, period f64 (s),
//! count u64, then one byte per cycle (bit0 outcome, 1 = +1; bit1 preparation,
//! 1 = e; bits 2–7 zero) and a trailing 32-byte SHA-256 manifest hash.
//! Flag bit0 marks records that carry preparation labels.

use sideband::measurement::Prep;
use sideband::protocol::MeasurementRecord;

pub const MAGIC: &[u8; 4] = b"PQSR";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;
pub const HASH_LEN: usize = 32;
pub const FLAG_PREPS: u16 = 1;

const OUTCOME_BIT: u8 = 0b01;
const PREP_BIT: u8 = 0b10;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CodecError {
    #[error("bad magic {found:?} at byte 0")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {found} at byte 4 (expected {VERSION})")]
    Version { found: u16 },
    #[error("unknown flags {found:#06x} at byte 6")]
    Flags { found: u16 },
    #[error("truncated at byte {offset}: need {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("reserved bits set in {byte:#010b} at byte {offset}")]
    ReservedBits { offset: usize, byte: u8 },
    #[error("preparation bit set in unlabeled record at byte {offset}")]
    UnexpectedPrep { offset: usize },
    #[error("{extra} trailing bytes at byte {offset}")]
    Trailing { offset: usize, extra: usize },
    #[error("outcome {value} at cycle {cycle} is not ±1")]
    Outcome { cycle: usize, value: i8 },
    #[error("{preps} preparation labels for {outcomes} outcomes")]
    PrepLength { preps: usize, outcomes: usize },
}

/// A decoded record file.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordFile {
    pub record: MeasurementRecord,
    pub manifest_hash: [u8; HASH_LEN],
}

pub fn encode(record: &MeasurementRecord, manifest_hash: &[u8; HASH_LEN]) -> Result<Vec<u8>, CodecError> {
    let n = record.outcomes.len();
    if let Some(p) = &record.preps {
        if p.len() != n {
            return Err(CodecError::PrepLength { preps: p.len(), outcomes: n });
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + n + HASH_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let flags = if record.preps.is_some() { FLAG_PREPS } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&record.period.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for (k, &m) in record.outcomes.iter().enumerate() {
        let mut byte = match m {
            1 => OUTCOME_BIT,
            -1 => 0,
            value => return Err(CodecError::Outcome { cycle: k, value }),
        };
        if let Some(p) = &record.preps {
            if p[k] == Prep::Excited {
                byte |= PREP_BIT;
            }
        }
        out.push(byte);
    }
    out.extend_from_slice(manifest_hash);
    Ok(out)
}

fn take<const N: usize>(bytes: &[u8], offset: usize) -> Result<[u8; N], CodecError> {
    bytes
        .get(offset..offset + N)
        .map(|s| s.try_into().expect("slice length"))
        .ok_or_else(|| CodecError::Truncated { offset: bytes.len(), needed: offset + N - bytes.len() })
}

/// Decodes one cycle byte into (outcome, preparation).
pub fn decode_cycle(byte: u8) -> Option<(i8, Prep)> {
    if byte & !(OUTCOME_BIT | PREP_BIT) != 0 {
        return None;
    }
    let m = if byte & OUTCOME_BIT != 0 { 1 } else { -1 };
    let p = if byte & PREP_BIT != 0 { Prep::Excited } else { Prep::Ground };
    Some((m, p))
}

pub fn decode(bytes: &[u8]) -> Result<RecordFile, CodecError> {
    let magic: [u8; 4] = take(bytes, 0)?;
    if &magic != MAGIC {
        return Err(CodecError::BadMagic { found: magic });
    }
    let version = u16::from_le_bytes(take(bytes, 4)?);
    if version != VERSION {
        return Err(CodecError::Version { found: version });
    }
    let flags = u16::from_le_bytes(take(bytes, 6)?);
    if flags & !FLAG_PREPS != 0 {
        return Err(CodecError::Flags { found: flags });
    }
    let period = f64::from_le_bytes(take(bytes, 8)?);
    let count = u64::from_le_bytes(take(bytes, 16)?) as usize;
    let hash_end = (HEADER_LEN + HASH_LEN)
        .checked_add(count)
        .ok_or(CodecError::Truncated { offset: bytes.len(), needed: usize::MAX })?;
    let body_end = hash_end - HASH_LEN;
    if bytes.len() < hash_end {
        return Err(CodecError::Truncated { offset: bytes.len(), needed: hash_end - bytes.len() });
    }
    if bytes.len() > hash_end {
        return Err(CodecError::Trailing { offset: hash_end, extra: bytes.len() - hash_end });
    }
    let labeled = flags & FLAG_PREPS != 0;
    let mut outcomes = Vec::with_capacity(count);
    let mut preps = Vec::with_capacity(if labeled { count } else { 0 });
    for (k, &byte) in bytes[HEADER_LEN..body_end].iter().enumerate() {
        let offset = HEADER_LEN + k;
        let (m, p) = decode_cycle(byte).ok_or(CodecError::ReservedBits { offset, byte })?;
        if !labeled && p == Prep::Excited {
            return Err(CodecError::UnexpectedPrep { offset });
        }
        outcomes.push(m);
        if labeled {
            preps.push(p);
        }
    }
    let mut record = MeasurementRecord::unlabeled(outcomes, period);
    if labeled {
        record.preps = Some(preps);
    }
    let manifest_hash = bytes[body_end..].try_into().expect("hash length");
    Ok(RecordFile { record, manifest_hash })
}
