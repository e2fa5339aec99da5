//! `FSVM` model container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "FSVM" | version u32 | payload | SHA-256(magic ‖ version ‖ payload)
//! ```
//!
//! Payload: task u8, extractor id (u32 length + UTF-8), normalize u8,
//! lambda f64, epochs u32, seed u64, class count u32 + i64 each, vector
//! count u32, dimension u32, weights f64 row-major, biases f64, stats flag
//! u8 and, when set, means f64 × dim then standard deviations f64 × dim.
//! Floats are stored as raw IEEE-754 bits so loading is exact.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use super::{Hyperparams, ModelError, NormStats, Normalize, SvmModel};
use crate::dataset::Task;

pub const MAGIC: &[u8; 4] = b"FSVM";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

fn task_code(task: Task) -> u8 {
    match task {
        Task::Qualification => 0,
        Task::Quality => 1,
        Task::Continuity => 2,
    }
}

fn task_from_code(code: u8) -> Option<Task> {
    Task::ALL.into_iter().find(|t| task_code(*t) == code)
}

pub fn encode(model: &SvmModel) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    // writes into a Vec cannot fail
    buf.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
    buf.write_u8(task_code(model.task)).unwrap();
    buf.write_u32::<LittleEndian>(model.extractor_id.len() as u32).unwrap();
    buf.extend_from_slice(model.extractor_id.as_bytes());
    buf.write_u8(model.hyper.normalize.code()).unwrap();
    buf.write_f64::<LittleEndian>(model.hyper.lambda).unwrap();
    buf.write_u32::<LittleEndian>(model.hyper.epochs as u32).unwrap();
    buf.write_u64::<LittleEndian>(model.hyper.seed).unwrap();
    buf.write_u32::<LittleEndian>(model.classes.len() as u32).unwrap();
    for &c in &model.classes {
        buf.write_i64::<LittleEndian>(c).unwrap();
    }
    buf.write_u32::<LittleEndian>(model.weights.len() as u32).unwrap();
    buf.write_u32::<LittleEndian>(model.dim() as u32).unwrap();
    for &v in model.weights.iter().flatten().chain(&model.biases) {
        buf.write_f64::<LittleEndian>(v).unwrap();
    }
    match &model.norm_stats {
        None => buf.write_u8(0).unwrap(),
        Some(stats) => {
            buf.write_u8(1).unwrap();
            for &v in stats.mean.iter().chain(&stats.std) {
                buf.write_f64::<LittleEndian>(v).unwrap();
            }
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

pub fn decode(bytes: &[u8]) -> Result<SvmModel, ModelError> {
    let corrupt = |m: &str| ModelError::CorruptModelFile(m.to_string());
    if bytes.len() < MAGIC.len() + 4 + CHECKSUM_LEN {
        return Err(corrupt("file too short"));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(ModelError::CorruptModelFile(format!("unsupported format version {version}")));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(corrupt("checksum mismatch"));
    }

    let mut cur = Cursor::new(&body[8..]);
    let model = read_payload(&mut cur).map_err(|e| ModelError::CorruptModelFile(e.to_string()))?;
    if cur.position() as usize != body.len() - 8 {
        return Err(corrupt("trailing bytes after payload"));
    }
    model.validate().map_err(ModelError::CorruptModelFile)?;
    Ok(model)
}

fn read_payload(cur: &mut Cursor<&[u8]>) -> std::io::Result<SvmModel> {
    let invalid = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    let task = task_from_code(cur.read_u8()?).ok_or_else(|| invalid("unknown task code"))?;
    let id_len = cur.read_u32::<LittleEndian>()? as usize;
    let remaining = cur.get_ref().len() - cur.position() as usize;
    if id_len > remaining {
        return Err(invalid("extractor id overruns file"));
    }
    let mut id = vec![0u8; id_len];
    cur.read_exact(&mut id)?;
    let extractor_id = String::from_utf8(id).map_err(|_| invalid("extractor id is not UTF-8"))?;
    let normalize = Normalize::from_code(cur.read_u8()?).ok_or_else(|| invalid("unknown normalization"))?;
    let lambda = cur.read_f64::<LittleEndian>()?;
    let epochs = cur.read_u32::<LittleEndian>()? as usize;
    let seed = cur.read_u64::<LittleEndian>()?;
    let n_classes = cur.read_u32::<LittleEndian>()? as usize;
    let remaining = cur.get_ref().len() - cur.position() as usize;
    if n_classes > remaining / 8 {
        return Err(invalid("class count overruns file"));
    }
    let classes = (0..n_classes).map(|_| cur.read_i64::<LittleEndian>()).collect::<Result<Vec<_>, _>>()?;
    let n_vectors = cur.read_u32::<LittleEndian>()? as usize;
    let dim = cur.read_u32::<LittleEndian>()? as usize;
    let remaining = cur.get_ref().len() - cur.position() as usize;
    if n_vectors.saturating_mul(dim + 1) > remaining / 8 {
        return Err(invalid("weight block overruns file"));
    }
    let mut read_f64s = |n: usize| (0..n).map(|_| cur.read_f64::<LittleEndian>()).collect::<Result<Vec<_>, _>>();
    let weights = (0..n_vectors).map(|_| read_f64s(dim)).collect::<Result<Vec<_>, _>>()?;
    let biases = read_f64s(n_vectors)?;
    let norm_stats = match cur.read_u8()? {
        0 => None,
        1 => {
            let remaining = cur.get_ref().len() - cur.position() as usize;
            if dim.saturating_mul(2) > remaining / 8 {
                return Err(invalid("statistics overrun file"));
            }
            let mut read_f64s = |n: usize| (0..n).map(|_| cur.read_f64::<LittleEndian>()).collect::<Result<Vec<_>, _>>();
            let mean = read_f64s(dim)?;
            let std = read_f64s(dim)?;
            Some(NormStats { mean, std })
        }
        _ => return Err(invalid("bad statistics flag")),
    };
    Ok(SvmModel {
        task,
        extractor_id,
        classes,
        weights,
        biases,
        hyper: Hyperparams { lambda, epochs, seed, normalize },
        norm_stats,
    })
}

pub fn save_model(model: &SvmModel, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, encode(model)).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<SvmModel, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_model() -> SvmModel {
        SvmModel {
            task: Task::Quality,
            extractor_id: "ext-embed".into(),
            classes: vec![1, 2, 4],
            weights: vec![vec![0.1, -0.2], vec![1.0 / 3.0, 0.0], vec![-7.5, 1e-300]],
            biases: vec![0.5, -0.25, 0.0],
            hyper: Hyperparams { lambda: 1e-3, epochs: 12, seed: 99, normalize: Normalize::Standardize },
            norm_stats: Some(NormStats { mean: vec![0.3, 0.7], std: vec![1.5, 1.0] }),
        }
    }

    #[test]
    fn exact_round_trip() {
        let m = sample_model();
        assert_eq!(decode(&encode(&m)).unwrap(), m);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = encode(&sample_model());
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(ModelError::CorruptModelFile(_))), "cut at {cut}");
        }
    }

    #[test]
    fn flipped_bit_is_corrupt() {
        let mut bytes = encode(&sample_model());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert_eq!(decode(&bytes).unwrap_err(), ModelError::CorruptModelFile("checksum mismatch".into()));
    }

    #[test]
    fn unknown_version_is_corrupt() {
        let mut bytes = encode(&sample_model());
        bytes[4] = 9;
        // re-seal so only the version is wrong
        let n = bytes.len() - CHECKSUM_LEN;
        let digest = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&digest);
        match decode(&bytes) {
            Err(ModelError::CorruptModelFile(m)) => assert!(m.contains("version 9")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let mut bytes = encode(&sample_model());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(ModelError::CorruptModelFile(_))));
    }
}
