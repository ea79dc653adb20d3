use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One fixed-budget training sample. The ids always come from exactly one
/// document; packing never crosses document boundaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedExample {
    pub doc_id: String,
    pub token_ids: Vec<u32>,
}

impl PackedExample {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingStats {
    pub sample_count: usize,
    pub avg_length: f64,
    pub total_tokens: usize,
}

impl PackingStats {
    pub fn from_samples(samples: &[PackedExample]) -> Self {
        let total_tokens: usize = samples.iter().map(PackedExample::len).sum();
        let sample_count = samples.len();
        let avg_length = if sample_count == 0 {
            0.0
        } else {
            total_tokens as f64 / sample_count as f64
        };
        PackingStats {
            sample_count,
            avg_length,
            total_tokens,
        }
    }
}

/// Chunk each encoded document into consecutive pieces of at most `max_len`
/// tokens. Chunks never mix documents, and no token is lost or duplicated.
pub fn pack_sequences<I>(encoded_docs: I, max_len: usize) -> Result<(Vec<PackedExample>, PackingStats)>
where
    I: IntoIterator<Item = (String, Vec<u32>)>,
{
    if max_len < 2 {
        return Err(Error::Tokenizer(format!("max_len {max_len} below the minimum of 2")));
    }
    let mut samples = Vec::new();
    for (doc_id, ids) in encoded_docs {
        for chunk in ids.chunks(max_len) {
            samples.push(PackedExample {
                doc_id: doc_id.clone(),
                token_ids: chunk.to_vec(),
            });
        }
    }
    let stats = PackingStats::from_samples(&samples);
    Ok((samples, stats))
}

const MAGIC: &[u8; 4] = b"LPK1";

/// Binary record stream of `(doc_id, length, ids[])` plus a JSON stats
/// sidecar at `<path>.stats.json`.
pub fn write_packed(path: &Path, samples: &[PackedExample]) -> Result<PackingStats> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&(samples.len() as u64).to_le_bytes()).map_err(io_err)?;
    for s in samples {
        let id_bytes = s.doc_id.as_bytes();
        w.write_all(&(id_bytes.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(id_bytes).map_err(io_err)?;
        w.write_all(&(s.token_ids.len() as u32).to_le_bytes()).map_err(io_err)?;
        for &id in &s.token_ids {
            w.write_all(&id.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;

    let stats = PackingStats::from_samples(samples);
    let sidecar = sidecar_path(path);
    fs::write(&sidecar, serde_json::to_string_pretty(&stats)?).map_err(|e| Error::io(&sidecar, e))?;
    Ok(stats)
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".stats.json");
    std::path::PathBuf::from(os)
}

pub fn read_packed(path: &Path) -> Result<Vec<PackedExample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Tokenizer(format!("{} is not a packed dataset", path.display())));
    }
    let mut count_buf = [0u8; 8];
    r.read_exact(&mut count_buf).map_err(io_err)?;
    let count = u64::from_le_bytes(count_buf) as usize;
    let mut samples = Vec::with_capacity(count);
    let mut u32_buf = [0u8; 4];
    for _ in 0..count {
        r.read_exact(&mut u32_buf).map_err(io_err)?;
        let id_len = u32::from_le_bytes(u32_buf) as usize;
        let mut id_bytes = vec![0u8; id_len];
        r.read_exact(&mut id_bytes).map_err(io_err)?;
        let doc_id = String::from_utf8(id_bytes)
            .map_err(|e| Error::Tokenizer(format!("bad doc id in packed file: {e}")))?;
        r.read_exact(&mut u32_buf).map_err(io_err)?;
        let n = u32::from_le_bytes(u32_buf) as usize;
        let mut token_ids = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut u32_buf).map_err(io_err)?;
            token_ids.push(u32::from_le_bytes(u32_buf));
        }
        samples.push(PackedExample { doc_id, token_ids });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, n: usize) -> (String, Vec<u32>) {
        (id.to_string(), (0..n as u32).collect())
    }

    #[test]
    fn two_short_docs_stay_separate() {
        let (samples, stats) = pack_sequences([doc("a", 300), doc("b", 300)], 512).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].len(), 300);
        assert_eq!(samples[1].len(), 300);
        assert_eq!(samples[0].doc_id, "a");
        assert_eq!(samples[1].doc_id, "b");
        assert_eq!(stats.total_tokens, 600);
    }

    #[test]
    fn long_doc_chunks_with_remainder() {
        let (samples, _) = pack_sequences([doc("a", 700)], 512).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].len(), 512);
        assert_eq!(samples[1].len(), 188);
        // consecutive tokens, none lost
        assert_eq!(samples[0].token_ids[511], 511);
        assert_eq!(samples[1].token_ids[0], 512);
    }

    #[test]
    fn empty_doc_yields_no_samples() {
        let (samples, stats) = pack_sequences([doc("a", 0)], 512).unwrap();
        assert!(samples.is_empty());
        assert_eq!(stats.sample_count, 0);
        assert_eq!(stats.avg_length, 0.0);
    }

    #[test]
    fn stats_are_exact() {
        let (_, stats) = pack_sequences([doc("a", 2), doc("b", 4), doc("c", 6)], 512).unwrap();
        assert_eq!(stats.sample_count, 3);
        assert_eq!(stats.avg_length, 4.0);
        assert_eq!(stats.total_tokens, 12);
    }

    #[test]
    fn max_len_below_two_errors() {
        assert!(pack_sequences([doc("a", 5)], 1).is_err());
    }

    #[test]
    fn file_roundtrip_with_sidecar() {
        let (samples, stats) = pack_sequences([doc("a", 700), doc("b", 3)], 512).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.pk");
        let written_stats = write_packed(&path, &samples).unwrap();
        assert_eq!(written_stats, stats);
        let loaded = read_packed(&path).unwrap();
        assert_eq!(loaded, samples);
        let sidecar: PackingStats =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(sidecar, stats);
    }
}
