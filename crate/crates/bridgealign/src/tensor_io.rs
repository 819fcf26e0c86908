//! Simple binary tensor container: each record is an 8-byte magic, a u32 LE
//! length-prefixed JSON header (name, shape, dtype) and a row-major
//! little-endian payload. Files may hold any number of records.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BRALIGN1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Header {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lossless for f32 payloads; f64 payloads are returned as-is.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    fn dtype(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "f32",
            TensorData::F64(_) => "f64",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl TensorRecord {
    pub fn f32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(name.into(), shape, TensorData::F32(data))
    }

    pub fn f64(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(name.into(), shape, TensorData::F64(data))
    }

    fn new(name: String, shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor '{name}': shape {shape:?} implies {expected} values, got {}",
                data.len()
            )));
        }
        Ok(TensorRecord { name, shape, data })
    }
}

pub fn write_record<W: Write>(w: &mut W, record: &TensorRecord) -> Result<()> {
    let header = Header {
        name: record.name.clone(),
        shape: record.shape.clone(),
        dtype: record.data.dtype().to_string(),
    };
    let header_json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&u32::try_from(header_json.len()).unwrap().to_le_bytes())?;
    w.write_all(&header_json)?;
    match &record.data {
        TensorData::F32(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        TensorData::F64(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Read one record; Ok(None) at clean EOF.
pub fn read_record<R: Read>(r: &mut R) -> Result<Option<TensorRecord>> {
    let mut magic = [0u8; 8];
    match r.read(&mut magic)? {
        0 => return Ok(None),
        8 => {}
        n => {
            // partial read: keep pulling until full or EOF
            let mut got = n;
            while got < 8 {
                let m = r.read(&mut magic[got..])?;
                if m == 0 {
                    return Err(Error::BadTensorFile("truncated magic".into()));
                }
                got += m;
            }
        }
    }
    if &magic != MAGIC {
        return Err(Error::BadTensorFile(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json)?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::BadTensorFile(format!("bad header: {e}")))?;
    let count: usize = header.shape.iter().product();
    let data = match header.dtype.as_str() {
        "f32" => {
            let mut buf = vec![0u8; count * 4];
            r.read_exact(&mut buf)?;
            TensorData::F32(
                buf.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        "f64" => {
            let mut buf = vec![0u8; count * 8];
            r.read_exact(&mut buf)?;
            TensorData::F64(
                buf.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        other => {
            return Err(Error::BadTensorFile(format!("unknown dtype '{other}'")));
        }
    };
    Ok(Some(TensorRecord {
        name: header.name,
        shape: header.shape,
        data,
    }))
}

pub fn write_records(path: &Path, records: &[TensorRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        write_record(&mut file, r)?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<TensorRecord>> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    while let Some(rec) = read_record(&mut file)? {
        out.push(rec);
    }
    Ok(out)
}

/// Find a record by name or fail.
pub fn find<'a>(records: &'a [TensorRecord], name: &str) -> Result<&'a TensorRecord> {
    records
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::BadTensorFile(format!("missing tensor '{name}'")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_multi_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let records = vec![
            TensorRecord::f32("a", vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            TensorRecord::f64("b", vec![4], vec![-1.5, 0.0, f64::MIN_POSITIVE, 9.75]).unwrap(),
            TensorRecord::f32("empty", vec![0, 7], vec![]).unwrap(),
        ];
        write_records(&path, &records).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(records, back);
        assert_eq!(find(&back, "b").unwrap().shape, vec![4]);
        assert!(find(&back, "nope").is_err());
    }

    #[test]
    fn shape_payload_mismatch_rejected() {
        assert!(TensorRecord::f32("x", vec![2, 2], vec![1.0]).is_err());
    }

    #[test]
    fn bad_magic_rejected() {
        let mut buf = Vec::new();
        write_record(
            &mut buf,
            &TensorRecord::f32("x", vec![1], vec![1.0]).unwrap(),
        )
        .unwrap();
        buf[0] ^= 0xff;
        let err = read_record(&mut buf.as_slice()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut buf = Vec::new();
        write_record(
            &mut buf,
            &TensorRecord::f64("x", vec![3], vec![1.0, 2.0, 3.0]).unwrap(),
        )
        .unwrap();
        buf.truncate(buf.len() - 5);
        assert!(read_record(&mut buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn prop_round_trip_f64(values in proptest::collection::vec(-1e12f64..1e12, 0..64)) {
            let rec = TensorRecord::f64("p", vec![values.len()], values).unwrap();
            let mut buf = Vec::new();
            write_record(&mut buf, &rec).unwrap();
            let back = read_record(&mut buf.as_slice()).unwrap().unwrap();
            prop_assert_eq!(rec, back);
        }

        #[test]
        fn prop_round_trip_f32(values in proptest::collection::vec(-1e6f32..1e6, 0..64)) {
            let rec = TensorRecord::f32("p", vec![values.len()], values).unwrap();
            let mut buf = Vec::new();
            write_record(&mut buf, &rec).unwrap();
            let back = read_record(&mut buf.as_slice()).unwrap().unwrap();
            prop_assert_eq!(rec, back);
        }
    }
}
