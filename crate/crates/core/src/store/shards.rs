use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DatasetRecord;
use crate::error::{Error, Result};
use crate::jsonl;

pub const DEFAULT_SHARD_SIZE: usize = 10_000;
const BLOCK: u64 = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardIndexEntry {
    pub id: String,
    pub shard: String,
    pub image_member: String,
    pub metadata_member: String,
    /// Byte offset of the image entry's header within the shard.
    pub offset: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ShardOutcome {
    pub shards: Vec<PathBuf>,
    pub index: Vec<ShardIndexEntry>,
    pub skipped: Vec<(String, String)>,
}

fn padded(len: u64) -> u64 {
    len.div_ceil(BLOCK) * BLOCK
}

fn header(path: &str, size: u64) -> tar::Header {
    let mut h = tar::Header::new_ustar();
    h.set_path(path).expect("member names are short ascii");
    h.set_size(size);
    h.set_mode(0o644);
    h.set_mtime(0);
    h.set_uid(0);
    h.set_gid(0);
    h.set_cksum();
    h
}

fn ext_of(path: &str) -> &str {
    Path::new(path).extension().and_then(|e| e.to_str()).unwrap_or("bin")
}

/// Write non-excluded records into `shard-NNNNNN.tar` files of at most
/// `shard_size` records each (image entry followed by a JSON sidecar), plus
/// `index.jsonl`. Records whose image is missing are skipped.
pub fn write_shards(
    records: &[DatasetRecord],
    images_root: &Path,
    out_dir: &Path,
    shard_size: usize,
) -> Result<ShardOutcome> {
    if shard_size == 0 {
        return Err(Error::Argument("shard size must be positive".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let mut skipped = Vec::new();
    let mut present = Vec::new();
    for r in records.iter().filter(|r| !r.excluded) {
        let p = images_root.join(&r.path);
        if p.is_file() {
            present.push((r, p));
        } else {
            log::error!("image for {} missing at {}", r.id, p.display());
            skipped.push((r.id.clone(), format!("missing file {}", p.display())));
        }
    }
    let chunks: Vec<&[(&DatasetRecord, PathBuf)]> = present.chunks(shard_size).collect();
    let written: Vec<Result<(PathBuf, Vec<ShardIndexEntry>)>> = chunks
        .par_iter()
        .enumerate()
        .map(|(n, chunk)| {
            let name = format!("shard-{n:06}.tar");
            let path = out_dir.join(&name);
            let file = std::fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
            let mut builder = tar::Builder::new(std::io::BufWriter::new(file));
            let mut offset = 0u64;
            let mut index = Vec::with_capacity(chunk.len());
            for (r, img_path) in chunk.iter() {
                let bytes = std::fs::read(img_path).map_err(|e| Error::file(img_path, e))?;
                let meta = serde_json::to_vec(r)?;
                let image_member = format!("{}.{}", r.id, ext_of(&r.path));
                let metadata_member = format!("{}.json", r.id);
                let io = |e| Error::file(&path, e);
                builder.append(&header(&image_member, bytes.len() as u64), bytes.as_slice()).map_err(io)?;
                builder.append(&header(&metadata_member, meta.len() as u64), meta.as_slice()).map_err(io)?;
                index.push(ShardIndexEntry {
                    id: r.id.clone(),
                    shard: name.clone(),
                    image_member,
                    metadata_member,
                    offset,
                });
                offset += BLOCK + padded(bytes.len() as u64) + BLOCK + padded(meta.len() as u64);
            }
            builder.into_inner().map_err(|e| Error::file(&path, e))?;
            Ok((path, index))
        })
        .collect();
    let mut out = ShardOutcome { skipped, ..Default::default() };
    for w in written {
        let (path, index) = w?;
        out.shards.push(path);
        out.index.extend(index);
    }
    jsonl::write(&out_dir.join("index.jsonl"), &out.index)?;
    Ok(out)
}

/// Read every shard listed in `index.jsonl`, returning records with their
/// image bytes in index order.
pub fn read_shards(dir: &Path) -> Result<Vec<(DatasetRecord, Vec<u8>)>> {
    let index: Vec<ShardIndexEntry> = jsonl::read(&dir.join("index.jsonl"))?;
    let mut shard_names: Vec<&str> = index.iter().map(|e| e.shard.as_str()).collect();
    shard_names.dedup();
    let mut members: HashMap<(String, String), Vec<u8>> = HashMap::new();
    for name in shard_names {
        let path = dir.join(name);
        let file = std::fs::File::open(&path).map_err(|e| Error::file(&path, e))?;
        let mut archive = tar::Archive::new(file);
        for entry in archive.entries().map_err(|e| Error::file(&path, e))? {
            let mut entry = entry.map_err(|e| Error::file(&path, e))?;
            let member = entry.path().map_err(|e| Error::file(&path, e))?.to_string_lossy().into_owned();
            let mut buf = Vec::new();
            entry.read_to_end(&mut buf).map_err(|e| Error::file(&path, e))?;
            members.insert((name.to_string(), member), buf);
        }
    }
    index
        .iter()
        .map(|e| {
            let take = |m: &str| {
                members
                    .get(&(e.shard.clone(), m.to_string()))
                    .cloned()
                    .ok_or_else(|| Error::Schema(format!("{} lacks member {m}", e.shard)))
            };
            let record: DatasetRecord = serde_json::from_slice(&take(&e.metadata_member)?)?;
            Ok((record, take(&e.image_member)?))
        })
        .collect()
}
