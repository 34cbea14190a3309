//! DGDF feature files, model snapshots and their text manifests.
//!
//! DGDF layout, all integers little-endian:
//!
//! ```text
//! "DGDF" | version u16 | dialogues u32 | utterances u32 x dialogues
//!        | d_t u32 | d_a u32 | d_v u32 | classes u32
//!        | text f32[N x d_t] | audio f32[N x d_a] | visual f32[N x d_v]
//!        | labels u16[N] | speakers u16[N] | domain u8
//! ```
//!
//! Feature blocks are row-major with utterances in dialogue order. The
//! sidecar manifest (`<file>.manifest`) is a `key=value` text file carrying
//! the dimensions, a SHA-256 of the data file and the noise mask.
//!
//! Snapshots (`DGDP`) store named parameters as `f64` blocks so that a
//! reloaded model evaluates identically.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, FormatError, Result};
use crate::optim::ParamStore;
use crate::synth::{Dialogue, Domain, DomainDataset};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: [u8; 4] = *b"DGDF";
pub const SNAPSHOT_MAGIC: [u8; 4] = *b"DGDP";
pub const VERSION: u16 = 1;

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated {
                offset: self.pos,
                needed: n - (self.bytes.len() - self.pos),
            }),
        }
    }

    fn magic(&mut self, expected: [u8; 4]) -> std::result::Result<(), FormatError> {
        let offset = self.pos;
        let found = self.take(4)?;
        if found != expected {
            return Err(FormatError::BadMagic {
                offset,
                expected,
                found: found.to_vec(),
            });
        }
        Ok(())
    }

    fn u8(&mut self) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn count(&mut self) -> std::result::Result<usize, FormatError> {
        Ok(self.u32()? as usize)
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(4).ok_or(FormatError::Invalid {
            offset: self.pos,
            detail: "block size overflows".into(),
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(8).ok_or(FormatError::Invalid {
            offset: self.pos,
            detail: "block size overflows".into(),
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> std::result::Result<(), FormatError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::Trailing(n)),
        }
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Contract(format!("{what} {v} does not fit in u32")))
}

fn to_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Contract(format!("{what} {v} does not fit in u16")))
}

/// Serializes a dataset to DGDF bytes. Features are narrowed to `f32`.
pub fn encode_features(ds: &DomainDataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(ds.dialogues.len(), "dialogue count")?.to_le_bytes());
    for d in &ds.dialogues {
        out.extend_from_slice(&to_u32(d.len(), "utterance count")?.to_le_bytes());
    }
    for w in ds.dims {
        out.extend_from_slice(&to_u32(w, "feature width")?.to_le_bytes());
    }
    out.extend_from_slice(&to_u32(ds.classes, "class count")?.to_le_bytes());
    for m in 0..3 {
        for d in &ds.dialogues {
            for v in d.features[m].data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    for d in &ds.dialogues {
        for &y in &d.labels {
            out.extend_from_slice(&to_u16(y, "label")?.to_le_bytes());
        }
    }
    for d in &ds.dialogues {
        for &s in &d.speakers {
            out.extend_from_slice(&to_u16(s as usize, "speaker")?.to_le_bytes());
        }
    }
    out.push(ds.domain.tag());
    Ok(out)
}

/// Parses DGDF bytes. The noise mask is all-false; it lives in the manifest.
pub fn decode_features(bytes: &[u8]) -> std::result::Result<DomainDataset, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(FEATURE_MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    let n_dialogues = r.count()?;
    let lengths = (0..n_dialogues).map(|_| r.count()).collect::<std::result::Result<Vec<_>, _>>()?;
    let dims = [r.count()?, r.count()?, r.count()?];
    let classes_at = r.pos;
    let classes = r.count()?;
    if classes < 2 {
        return Err(FormatError::Invalid {
            offset: classes_at,
            detail: format!("class count {classes} < 2"),
        });
    }
    let total: usize = lengths.iter().sum();
    let mut blocks = Vec::with_capacity(3);
    for w in dims {
        let n = total.checked_mul(w).ok_or(FormatError::Invalid {
            offset: r.pos,
            detail: "feature block size overflows".into(),
        })?;
        blocks.push(r.f32s(n)?);
    }
    let labels_at = r.pos;
    let labels = (0..total).map(|_| r.u16().map(usize::from)).collect::<std::result::Result<Vec<_>, _>>()?;
    if let Some(i) = labels.iter().position(|&y| y >= classes) {
        return Err(FormatError::Invalid {
            offset: labels_at + 2 * i,
            detail: format!("label {} outside 0..{classes}", labels[i]),
        });
    }
    let speakers = (0..total).map(|_| r.u16().map(u32::from)).collect::<std::result::Result<Vec<_>, _>>()?;
    let tag_at = r.pos;
    let tag = r.u8()?;
    let domain = Domain::from_tag(tag).ok_or(FormatError::Invalid {
        offset: tag_at,
        detail: format!("domain tag {tag}"),
    })?;
    r.finish()?;

    let mut dialogues = Vec::with_capacity(n_dialogues);
    let mut start = 0;
    for (id, &n) in lengths.iter().enumerate() {
        let features = std::array::from_fn(|m| {
            let w = dims[m];
            Tensor::matrix(n, w, blocks[m][start * w..(start + n) * w].to_vec()).expect("n x w")
        });
        dialogues.push(Dialogue {
            id: id as u32,
            features,
            speakers: speakers[start..start + n].to_vec(),
            labels: labels[start..start + n].to_vec(),
        });
        start += n;
    }
    let noise_mask = lengths.iter().map(|&n| vec![false; n]).collect();
    Ok(DomainDataset {
        domain,
        classes,
        dims,
        dialogues,
        noise_mask,
    })
}

/// Flat `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> std::result::Result<Vec<(String, String)>, FormatError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(FormatError::Manifest {
            line: i + 1,
            detail: format!("expected key=value, got `{line}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn feature_manifest(ds: &DomainDataset, bytes: &[u8]) -> String {
    let mask: Vec<String> = ds
        .flat_noise_mask()
        .iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(i, _)| i.to_string())
        .collect();
    format!(
        "format=DGDF\nversion={VERSION}\ndialogues={}\nutterances={}\nd_t={}\nd_a={}\nd_v={}\nclasses={}\ndomain={}\nsha256={}\nnoise_mask={}\n",
        ds.dialogues.len(),
        ds.num_utterances(),
        ds.dims[0],
        ds.dims[1],
        ds.dims[2],
        ds.classes,
        ds.domain.name(),
        sha256_hex(bytes),
        mask.join(",")
    )
}

/// Checks a manifest against decoded data and applies its noise mask.
pub fn apply_manifest(ds: &mut DomainDataset, bytes: &[u8], manifest: &str) -> std::result::Result<(), FormatError> {
    let entries: BTreeMap<String, String> = parse_key_values(manifest)?.into_iter().collect();
    let actual = [
        ("version", VERSION.to_string()),
        ("dialogues", ds.dialogues.len().to_string()),
        ("utterances", ds.num_utterances().to_string()),
        ("d_t", ds.dims[0].to_string()),
        ("d_a", ds.dims[1].to_string()),
        ("d_v", ds.dims[2].to_string()),
        ("classes", ds.classes.to_string()),
        ("domain", ds.domain.name().to_string()),
        ("sha256", sha256_hex(bytes)),
    ];
    for (key, file) in actual {
        if let Some(manifest) = entries.get(key) {
            if *manifest != file {
                return Err(FormatError::ManifestMismatch {
                    key: key.into(),
                    manifest: manifest.clone(),
                    file,
                });
            }
        }
    }
    if let Some(mask) = entries.get("noise_mask").filter(|m| !m.is_empty()) {
        let total = ds.num_utterances();
        let mut flat = vec![false; total];
        for tok in mask.split(',') {
            let i: usize = tok.trim().parse().map_err(|_| FormatError::Manifest {
                line: 0,
                detail: format!("bad noise_mask index `{tok}`"),
            })?;
            if i >= total {
                return Err(FormatError::Manifest {
                    line: 0,
                    detail: format!("noise_mask index {i} >= {total}"),
                });
            }
            flat[i] = true;
        }
        let mut it = flat.into_iter();
        for row in &mut ds.noise_mask {
            row.iter_mut().for_each(|m| *m = it.next().expect("sized"));
        }
    }
    Ok(())
}

/// Writes `path` and its manifest.
pub fn write_features(ds: &DomainDataset, path: &Path) -> Result<()> {
    let bytes = encode_features(ds)?;
    std::fs::write(path, &bytes).map_err(io_err(path))?;
    let mp = manifest_path(path);
    std::fs::write(&mp, feature_manifest(ds, &bytes)).map_err(io_err(&mp))
}

/// Reads `path`; its manifest is checked and applied when present.
pub fn read_features(path: &Path) -> Result<DomainDataset> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut ds = decode_features(&bytes)?;
    let mp = manifest_path(path);
    match std::fs::read_to_string(&mp) {
        Ok(text) => apply_manifest(&mut ds, &bytes, &text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(io_err(&mp)(e)),
    }
    Ok(ds)
}

pub fn encode_snapshot(store: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&SNAPSHOT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(store.len(), "parameter count")?.to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&to_u32(name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&to_u32(t.rows(), "rows")?.to_le_bytes());
        out.extend_from_slice(&to_u32(t.cols(), "cols")?.to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(SNAPSHOT_MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(FormatError::Version(version).into());
    }
    let count = r.count()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.count()?;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| FormatError::Invalid {
                offset: at,
                detail: "parameter name is not UTF-8".into(),
            })?
            .to_string();
        let rows = r.count()?;
        let cols = r.count()?;
        let n = rows.checked_mul(cols).ok_or(FormatError::Invalid {
            offset: r.pos,
            detail: "parameter size overflows".into(),
        })?;
        let data = r.f64s(n)?;
        store.insert(name, Tensor::matrix(rows, cols, data)?)?;
    }
    r.finish()?;
    Ok(store)
}

/// Writes the snapshot and a manifest holding `extra` entries (typically
/// the training configuration), parameter shapes and a checksum.
pub fn write_snapshot(store: &ParamStore, extra: &[(String, String)], path: &Path) -> Result<()> {
    let bytes = encode_snapshot(store)?;
    std::fs::write(path, &bytes).map_err(io_err(path))?;
    let mut manifest = format!("format=DGDP\nversion={VERSION}\nparameters={}\n", store.len());
    for (k, v) in extra {
        let _ = writeln!(manifest, "{k}={v}");
    }
    for (name, t) in store.iter() {
        let _ = writeln!(manifest, "param.{name}={}x{}", t.rows(), t.cols());
    }
    let _ = writeln!(manifest, "sha256={}", sha256_hex(&bytes));
    let mp = manifest_path(path);
    std::fs::write(&mp, manifest).map_err(io_err(&mp))
}

/// Reads a snapshot and its manifest entries, verifying the checksum.
pub fn read_snapshot(path: &Path) -> Result<(ParamStore, Vec<(String, String)>)> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let store = decode_snapshot(&bytes)?;
    let mp = manifest_path(path);
    let text = std::fs::read_to_string(&mp).map_err(io_err(&mp))?;
    let entries = parse_key_values(&text)?;
    if let Some((_, sum)) = entries.iter().find(|(k, _)| k == "sha256") {
        let file = sha256_hex(&bytes);
        if *sum != file {
            return Err(FormatError::ManifestMismatch {
                key: "sha256".into(),
                manifest: sum.clone(),
                file,
            }
            .into());
        }
    }
    Ok((store, entries))
}
