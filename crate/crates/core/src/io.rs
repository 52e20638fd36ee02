//! Run artifacts: binary embedding dumps, NDJSON run logs, CSV tables and
//! checkpoints.
//!
//! Dump layout: 8-byte magic, `rows` and `dim` as little-endian u64, then
//! `rows * dim` little-endian f64 in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::ItemMembership;
use crate::error::{Error, Result};
use crate::federation::{ServerState, Snapshot};
use crate::model::{ItemEmbeddingMatrix, ScoreFunction};

pub const DUMP_MAGIC: [u8; 8] = *b"CFREMB01";

/// Identifies the experiment an output file belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputTag {
    pub config_hash: String,
    pub seed: u64,
}

impl OutputTag {
    /// Leading comment line for CSV outputs.
    pub fn csv_comment(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Streams `rows` rows of width `dim` into a dump file.
pub fn write_dump_rows<'a, I>(path: &Path, rows: usize, dim: usize, data: I) -> Result<()>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(&DUMP_MAGIC).map_err(io)?;
    w.write_all(&(rows as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(dim as u64).to_le_bytes()).map_err(io)?;
    let mut written = 0usize;
    for row in data {
        if row.len() != dim {
            return Err(Error::Shape(format!(
                "row of width {} in a dim-{dim} dump",
                row.len()
            )));
        }
        for x in row {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
        written += 1;
    }
    if written != rows {
        return Err(Error::Shape(format!(
            "{written} rows written, header says {rows}"
        )));
    }
    w.flush().map_err(io)
}

pub fn write_embeddings(path: &Path, m: &ItemEmbeddingMatrix) -> Result<()> {
    write_dump_rows(path, m.rows(), m.dim(), (0..m.rows()).map(|i| m.row(i)))
}

pub fn read_embeddings(path: &Path) -> Result<ItemEmbeddingMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let mut header = [0u8; 24];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    if header[..8] != DUMP_MAGIC {
        return Err(Error::Format(format!("{}: bad magic", path.display())));
    }
    let rows = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes")) as usize;
    let dim = u64::from_le_bytes(header[16..24].try_into().expect("8 bytes")) as usize;
    let count = rows
        .checked_mul(dim)
        .ok_or_else(|| Error::Format(format!("{}: header overflows", path.display())))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io)?;
    if bytes.len() != count * 8 {
        return Err(Error::Format(format!(
            "{}: {} payload bytes for a {rows}x{dim} dump",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ItemEmbeddingMatrix::from_vec(rows, dim, data)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_membership_csv(path: &Path, m: &ItemMembership, tag: &OutputTag) -> Result<()> {
    write_text(path, &(tag.csv_comment() + &m.to_csv()))
}

pub fn read_membership_csv(path: &Path) -> Result<ItemMembership> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("item_index") || line.is_empty() {
            continue;
        }
        let bad = || Error::Parse {
            line: n + 1,
            message: format!("bad membership row {line:?}"),
        };
        let (i, l) = line.split_once(',').ok_or_else(bad)?;
        let i: usize = i.parse().map_err(|_| bad())?;
        let l: usize = l.parse().map_err(|_| bad())?;
        if i != labels.len() {
            return Err(bad());
        }
        labels.push(l);
    }
    let k = labels.iter().max().map_or(1, |&m| m + 1);
    ItemMembership::new(labels, k)
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    kind: &'a str,
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    record: &'a T,
}

/// Newline-delimited JSON records, each stamped with the config hash and seed.
pub struct NdjsonWriter<W: Write> {
    out: W,
    tag: OutputTag,
}

impl NdjsonWriter<BufWriter<File>> {
    pub fn create(path: &Path, tag: OutputTag) -> Result<Self> {
        Ok(Self::new(create(path)?, tag))
    }
}

impl<W: Write> NdjsonWriter<W> {
    pub fn new(out: W, tag: OutputTag) -> Self {
        Self { out, tag }
    }

    pub fn write<T: Serialize>(&mut self, kind: &str, record: &T) -> Result<()> {
        let env = Envelope {
            kind,
            config_hash: &self.tag.config_hash,
            seed: self.tag.seed,
            record,
        };
        let line = serde_json::to_string(&env)
            .map_err(|e| Error::Format(format!("serializing {kind} record: {e}")))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io("<ndjson>", e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io("<ndjson>", e))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config_hash: String,
    pub seed: u64,
    pub round: usize,
    pub num_clients: usize,
    pub num_items: usize,
    pub dim: usize,
    /// Canonical config text of the run that wrote the checkpoint.
    pub config: String,
}

/// Client models and server state at one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub models: Vec<ItemEmbeddingMatrix>,
    pub thetas: Vec<ScoreFunction>,
    pub group_model: ItemEmbeddingMatrix,
    pub global_model: Option<ItemEmbeddingMatrix>,
    pub membership: Option<ItemMembership>,
}

pub const MANIFEST: &str = "manifest.json";
pub const CLIENTS: &str = "clients.bin";
pub const THETAS: &str = "thetas.bin";
pub const GROUP: &str = "group.bin";
pub const GLOBAL: &str = "global.bin";
pub const MEMBERSHIP: &str = "membership.csv";

/// Writes a checkpoint directory. Client models are stored flattened, one
/// row of `|I|·d` values per client; score functions as `d` weights then bias.
pub fn save_checkpoint(
    dir: &Path,
    snapshot: &Snapshot,
    tag: &OutputTag,
    config: &str,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let group = &snapshot.server.group_model;
    let (items, dim) = group.shape();
    let manifest = CheckpointManifest {
        config_hash: tag.config_hash.clone(),
        seed: tag.seed,
        round: snapshot.round,
        num_clients: snapshot.models.len(),
        num_items: items,
        dim,
        config: config.to_string(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    write_text(&dir.join(MANIFEST), &(json + "\n"))?;
    write_dump_rows(
        &dir.join(CLIENTS),
        snapshot.models.len(),
        items * dim,
        snapshot.models.iter().map(|m| m.as_slice()),
    )?;
    let thetas: Vec<Vec<f64>> = snapshot
        .thetas
        .iter()
        .map(|t| t.weights.iter().copied().chain([t.bias]).collect())
        .collect();
    write_dump_rows(
        &dir.join(THETAS),
        thetas.len(),
        dim + 1,
        thetas.iter().map(|t| t.as_slice()),
    )?;
    write_embeddings(&dir.join(GROUP), group)?;
    if let Some(g) = &snapshot.server.global_model {
        write_embeddings(&dir.join(GLOBAL), g)?;
    }
    if let Some(m) = &snapshot.server.membership {
        write_membership_csv(&dir.join(MEMBERSHIP), m, tag)?;
    }
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = load_manifest(dir)?;
    let (items, dim) = (manifest.num_items, manifest.dim);
    let flat = read_embeddings(&dir.join(CLIENTS))?;
    if flat.shape() != (manifest.num_clients, items * dim) {
        return Err(Error::Format(
            "clients.bin shape disagrees with manifest".into(),
        ));
    }
    let models = (0..flat.rows())
        .map(|u| ItemEmbeddingMatrix::from_vec(items, dim, flat.row(u).to_vec()))
        .collect::<Result<Vec<_>>>()?;
    drop(flat);
    let raw = read_embeddings(&dir.join(THETAS))?;
    if raw.shape() != (manifest.num_clients, dim + 1) {
        return Err(Error::Format(
            "thetas.bin shape disagrees with manifest".into(),
        ));
    }
    let thetas = (0..raw.rows())
        .map(|u| {
            let row = raw.row(u);
            ScoreFunction {
                weights: row[..dim].to_vec(),
                bias: row[dim],
            }
        })
        .collect();
    let group_model = read_embeddings(&dir.join(GROUP))?;
    let global_path = dir.join(GLOBAL);
    let global_model = global_path
        .exists()
        .then(|| read_embeddings(&global_path))
        .transpose()?;
    let membership_path = dir.join(MEMBERSHIP);
    let membership = membership_path
        .exists()
        .then(|| read_membership_csv(&membership_path))
        .transpose()?;
    Ok(Checkpoint {
        manifest,
        models,
        thetas,
        group_model,
        global_model,
        membership,
    })
}

impl Checkpoint {
    pub fn server_state(&self) -> ServerState {
        ServerState {
            round: self.manifest.round,
            group_model: self.group_model.clone(),
            membership: self.membership.clone(),
            global_model: self.global_model.clone(),
        }
    }
}

/// Path inside `dir` whose name carries the tag, e.g. `flattened-<hash16>-s42.bin`.
pub fn tagged_path(dir: &Path, stem: &str, tag: &OutputTag, ext: &str) -> PathBuf {
    let short = &tag.config_hash[..tag.config_hash.len().min(16)];
    dir.join(format!("{stem}-{short}-s{}.{ext}", tag.seed))
}
