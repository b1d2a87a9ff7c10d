//! The SHWR record file format.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic: 8 bytes "SHWR0001"
//! per record:
//!   u64  payload length in bytes
//!   u32  CRC-32 of the 8 length bytes
//!   payload:
//!     u32 nx, u32 ny, u32 nz
//!     f32 ep, f32 theta
//!     nx*ny*nz f32 deposits (row-major, z fastest)
//!   u32  CRC-32 of the payload
//! ```
//!
//! CRC-32 uses the reflected IEEE polynomial 0xEDB88320 with init and final
//! xor 0xFFFFFFFF. The file is a plain concatenation of records and can be
//! consumed as a stream.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use calo_tensor::Tensor;

use crate::synth::ShowerEvent;
use crate::{DataError, Result};

pub const MAGIC: &[u8; 8] = b"SHWR0001";
const HEADER_LEN: usize = 20; // 3 * u32 + 2 * f32
const MAX_PAYLOAD: u64 = 1 << 30;

const CRC_TABLE: [u32; 256] = build_crc_table();

const fn build_crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u32;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ 0xEDB8_8320
            } else {
                crc >> 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

/// Standard CRC-32 (reflected 0xEDB88320, init/xorout 0xFFFFFFFF).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = (crc >> 8) ^ CRC_TABLE[((crc ^ b as u32) & 0xFF) as usize];
    }
    crc ^ 0xFFFF_FFFF
}

fn encode_payload(event: &ShowerEvent) -> Vec<u8> {
    let [nx, ny, nz] = event.grid_dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * nx * ny * nz);
    out.extend_from_slice(&(nx as u32).to_le_bytes());
    out.extend_from_slice(&(ny as u32).to_le_bytes());
    out.extend_from_slice(&(nz as u32).to_le_bytes());
    out.extend_from_slice(&(event.ep as f32).to_le_bytes());
    out.extend_from_slice(&(event.theta as f32).to_le_bytes());
    for &v in event.grid.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn decode_payload(payload: &[u8], offset: u64, index: usize) -> Result<ShowerEvent> {
    let malformed = |reason: String| DataError::Malformed {
        offset,
        index,
        reason,
    };
    if payload.len() < HEADER_LEN {
        return Err(malformed(format!("payload of {} bytes is too short", payload.len())));
    }
    let u32_at = |i: usize| u32::from_le_bytes(payload[i..i + 4].try_into().unwrap());
    let f32_at = |i: usize| f32::from_le_bytes(payload[i..i + 4].try_into().unwrap());
    let (nx, ny, nz) = (u32_at(0) as usize, u32_at(4) as usize, u32_at(8) as usize);
    let voxels = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .ok_or_else(|| malformed(format!("grid dims overflow: {nx}x{ny}x{nz}")))?;
    let expected = HEADER_LEN + 4 * voxels;
    if payload.len() != expected {
        return Err(malformed(format!(
            "payload length {} does not match {nx}x{ny}x{nz} grid ({expected} bytes)",
            payload.len()
        )));
    }
    let ep = f32_at(12) as f64;
    let theta = f32_at(16) as f64;
    let mut deposits = Vec::with_capacity(voxels);
    for i in 0..voxels {
        deposits.push(f32_at(HEADER_LEN + 4 * i) as f64);
    }
    let grid = Tensor::new(vec![1, nx, ny, nz], deposits)
        .map_err(|e| malformed(format!("bad grid: {e}")))?;
    Ok(ShowerEvent { grid, ep, theta })
}

/// Writes events to `w`; returns the number of records written.
pub fn write_records_to<'a, W: Write>(
    w: &mut W,
    events: impl IntoIterator<Item = &'a ShowerEvent>,
) -> Result<usize> {
    w.write_all(MAGIC)?;
    let mut count = 0;
    for event in events {
        let payload = encode_payload(event);
        let len_bytes = (payload.len() as u64).to_le_bytes();
        w.write_all(&len_bytes)?;
        w.write_all(&crc32(&len_bytes).to_le_bytes())?;
        w.write_all(&payload)?;
        w.write_all(&crc32(&payload).to_le_bytes())?;
        count += 1;
    }
    Ok(count)
}

pub fn write_records<'a>(
    events: impl IntoIterator<Item = &'a ShowerEvent>,
    path: &Path,
) -> Result<usize> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = write_records_to(&mut w, events)?;
    w.flush()?;
    Ok(n)
}

/// Lazy, CRC-validating record reader. The first corrupt record yields an
/// error and ends the stream.
pub struct RecordReader<R: Read> {
    inner: R,
    offset: u64,
    index: usize,
    poisoned: bool,
}

impl RecordReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> RecordReader<R> {
    pub fn from_reader(mut inner: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        inner
            .read_exact(&mut magic)
            .map_err(|_| DataError::BadMagic { found: Vec::new() })?;
        if &magic != MAGIC {
            return Err(DataError::BadMagic {
                found: magic.to_vec(),
            });
        }
        Ok(Self {
            inner,
            offset: 8,
            index: 0,
            poisoned: false,
        })
    }

    fn read_record(&mut self) -> Option<Result<ShowerEvent>> {
        let record_offset = self.offset;
        let mut len_bytes = [0u8; 8];
        match read_exact_or_eof(&mut self.inner, &mut len_bytes) {
            Ok(0) => return None,
            Ok(n) if n < 8 => {
                return Some(Err(DataError::Truncated {
                    offset: record_offset,
                    index: self.index,
                }))
            }
            Ok(_) => {}
            Err(e) => return Some(Err(e.into())),
        }
        let mut crc_bytes = [0u8; 4];
        if let Err(e) = self.read_fully(&mut crc_bytes, record_offset) {
            return Some(Err(e));
        }
        if crc32(&len_bytes) != u32::from_le_bytes(crc_bytes) {
            return Some(Err(DataError::LengthCrc {
                offset: record_offset,
                index: self.index,
            }));
        }
        let len = u64::from_le_bytes(len_bytes);
        if len > MAX_PAYLOAD {
            return Some(Err(DataError::Malformed {
                offset: record_offset,
                index: self.index,
                reason: format!("payload length {len} exceeds the {MAX_PAYLOAD} byte cap"),
            }));
        }
        let mut payload = vec![0u8; len as usize];
        if let Err(e) = self.read_fully(&mut payload, record_offset) {
            return Some(Err(e));
        }
        let mut pcrc_bytes = [0u8; 4];
        if let Err(e) = self.read_fully(&mut pcrc_bytes, record_offset) {
            return Some(Err(e));
        }
        if crc32(&payload) != u32::from_le_bytes(pcrc_bytes) {
            return Some(Err(DataError::PayloadCrc {
                offset: record_offset,
                index: self.index,
            }));
        }
        self.offset += 8 + 4 + len + 4;
        let event = decode_payload(&payload, record_offset, self.index);
        self.index += 1;
        Some(event)
    }

    fn read_fully(&mut self, buf: &mut [u8], record_offset: u64) -> Result<()> {
        match read_exact_or_eof(&mut self.inner, buf) {
            Ok(n) if n == buf.len() => Ok(()),
            Ok(_) => Err(DataError::Truncated {
                offset: record_offset,
                index: self.index,
            }),
            Err(e) => Err(e.into()),
        }
    }
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<ShowerEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.poisoned {
            return None;
        }
        let item = self.read_record();
        if matches!(item, Some(Err(_))) {
            self.poisoned = true;
        }
        item
    }
}

/// Opens a record file as a lazy event sequence.
pub fn read_records(path: &Path) -> Result<RecordReader<BufReader<File>>> {
    RecordReader::open(path)
}

/// Reads the whole file eagerly, failing on the first bad record.
pub fn read_all_records(path: &Path) -> Result<Vec<ShowerEvent>> {
    read_records(path)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc32_check_value() {
        // Standard check value for this CRC-32 variant.
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn empty_file_after_magic_is_empty_sequence() {
        let reader = RecordReader::from_reader(&MAGIC[..]).unwrap();
        assert_eq!(reader.count(), 0);
    }

    #[test]
    fn bad_magic_is_rejected() {
        match RecordReader::from_reader(&b"SHWR9999"[..]) {
            Err(DataError::BadMagic { found }) => assert_eq!(found, b"SHWR9999"),
            Err(other) => panic!("unexpected error {other:?}"),
            Ok(_) => panic!("bad magic accepted"),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let events = crate::synth::synth_dataset(
            &crate::synth::ShowerParams::default(),
            100,
            [4, 4, 4],
            (10.0, 100.0),
            (1.1, 2.0),
            0.1,
            5,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_records_to(&mut buf, &events).unwrap();
        let first: Vec<ShowerEvent> = RecordReader::from_reader(buf.as_slice())
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        // Values pass through an f32 cast on write; a second trip must be
        // exactly stable, and the bytes must match.
        let mut buf2 = Vec::new();
        write_records_to(&mut buf2, &first).unwrap();
        assert_eq!(buf, buf2);
        let second: Vec<ShowerEvent> = RecordReader::from_reader(buf2.as_slice())
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn payload_byte_flip_is_detected_at_the_right_record() {
        let events = crate::synth::synth_dataset(
            &crate::synth::ShowerParams::default(),
            3,
            [2, 2, 2],
            (10.0, 100.0),
            (1.1, 2.0),
            0.0,
            6,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_records_to(&mut buf, &events).unwrap();
        // Record layout: 8 magic + (8 len + 4 crc + payload + 4 crc) each.
        let payload_len = HEADER_LEN + 4 * 8;
        let record_len = 8 + 4 + payload_len + 4;
        // Flip a payload byte inside record 1.
        let pos = 8 + record_len + 8 + 4 + 3;
        buf[pos] ^= 0xFF;
        let results: Vec<_> = RecordReader::from_reader(buf.as_slice()).unwrap().collect();
        assert_eq!(results.len(), 2);
        assert!(results[0].is_ok());
        match &results[1] {
            Err(DataError::PayloadCrc { index, offset }) => {
                assert_eq!(*index, 1);
                assert_eq!(*offset, (8 + record_len) as u64);
            }
            other => panic!("expected payload crc failure, got {other:?}"),
        }
    }

    #[test]
    fn truncated_tail_is_reported() {
        let events = crate::synth::synth_dataset(
            &crate::synth::ShowerParams::default(),
            1,
            [2, 2, 2],
            (10.0, 100.0),
            (1.1, 2.0),
            0.0,
            6,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_records_to(&mut buf, &events).unwrap();
        buf.truncate(buf.len() - 5);
        let results: Vec<_> = RecordReader::from_reader(buf.as_slice()).unwrap().collect();
        assert_eq!(results.len(), 1);
        assert!(matches!(
            results[0],
            Err(DataError::Truncated { index: 0, offset: 8 })
        ));
    }
}
