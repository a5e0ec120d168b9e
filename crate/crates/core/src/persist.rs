//! On-disk layout of ingested datasets and trained factor sets.
//!
//! Dataset directory:
//!
//! | file            | columns                                                          |
//! |-----------------|------------------------------------------------------------------|
//! | `types.tsv`     | `type_index, name`                                               |
//! | `entities.tsv`  | `type_index, local_index, raw_id`                                |
//! | `relations.tsv` | `relation_index, block_m, block_n, slab_k, raw_name, head_type, tail_type` |
//! | `edges.tsv`     | `relation_index, head_local, tail_local` (directed, deduplicated)|
//! | `blocks.json`   | [`BlockManifest`]                                                |
//!
//! Factor directory: one CSV per factor matrix with a header
//! `entity_raw_id,f0,..` or `relation_raw_name,f0,..`, plus `factors.json`.
//! Values are written with 17 significant digits, so a write/read cycle is
//! bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::factors::{FactorSet, TrainConfig};
use crate::ingest::{BlockManifest, Edge, RelationInfo, Triplet, TypedVocabulary};
use crate::spectral::SpectralReport;
use crate::tensor::BlockKey;

pub const TYPES_FILE: &str = "types.tsv";
pub const ENTITIES_FILE: &str = "entities.tsv";
pub const RELATIONS_FILE: &str = "relations.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const BLOCKS_FILE: &str = "blocks.json";
pub const FACTORS_FILE: &str = "factors.json";

fn tsv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    tsv_reader(path)?
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| csv_error(path, e))
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = tsv_writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Write triplets as a three-column TSV without header.
pub fn write_triplets(path: &Path, triplets: &[Triplet]) -> Result<()> {
    use std::io::Write;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for t in triplets {
        writeln!(w, "{}\t{}\t{}", t.head, t.relation, t.tail).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// An ingested dataset: vocabulary, directed edge list and block manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: TypedVocabulary,
    pub edges: Vec<Edge>,
    pub manifest: BlockManifest,
}

#[derive(Serialize, Deserialize)]
struct RelationRow {
    relation_index: usize,
    block_m: usize,
    block_n: usize,
    slab_k: usize,
    raw_name: String,
    head_type: usize,
    tail_type: usize,
}

/// Write a dataset directory; returns the files written.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vocab = &data.vocab;
    let paths: Vec<PathBuf> = [TYPES_FILE, ENTITIES_FILE, RELATIONS_FILE, EDGES_FILE, BLOCKS_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_rows(
        &paths[0],
        &["type_index", "name"],
        vocab.entity_types().iter().enumerate(),
    )?;
    write_rows(
        &paths[1],
        &["type_index", "local_index", "raw_id"],
        (0..vocab.num_types()).flat_map(|t| vocab.entities(t).iter().enumerate().map(move |(i, raw)| (t, i, raw))),
    )?;
    write_rows(
        &paths[2],
        &[
            "relation_index",
            "block_m",
            "block_n",
            "slab_k",
            "raw_name",
            "head_type",
            "tail_type",
        ],
        vocab.relations().iter().enumerate().map(|(r, info)| RelationRow {
            relation_index: r,
            block_m: info.block.m,
            block_n: info.block.n,
            slab_k: info.slab,
            raw_name: info.name.clone(),
            head_type: info.head_type,
            tail_type: info.tail_type,
        }),
    )?;
    write_rows(
        &paths[3],
        &["relation_index", "head_local", "tail_local"],
        data.edges.iter().map(|e| (e.relation, e.head, e.tail)),
    )?;
    write_json(&paths[4], &data.manifest)?;
    Ok(paths)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: BlockManifest = read_json(&dir.join(BLOCKS_FILE))?;
    let types_path = dir.join(TYPES_FILE);
    let types: Vec<(usize, String)> = read_rows(&types_path)?;
    if types.iter().enumerate().any(|(i, (t, _))| *t != i) {
        return Err(Error::format(types_path, "type indices must be 0, 1, 2, ..."));
    }
    let entity_types: Vec<String> = types.into_iter().map(|(_, name)| name).collect();

    let ent_path = dir.join(ENTITIES_FILE);
    let mut entities: Vec<Vec<String>> = vec![Vec::new(); entity_types.len()];
    for (t, i, raw) in read_rows::<(usize, usize, String)>(&ent_path)? {
        let list = entities
            .get_mut(t)
            .ok_or_else(|| Error::format(&ent_path, format!("unknown type index {t}")))?;
        if list.len() != i {
            return Err(Error::format(
                &ent_path,
                format!("local index {i} of type {t} out of order"),
            ));
        }
        list.push(raw);
    }

    let rel_path = dir.join(RELATIONS_FILE);
    let mut relations = Vec::new();
    for (r, row) in read_rows::<RelationRow>(&rel_path)?.into_iter().enumerate() {
        if row.relation_index != r {
            return Err(Error::format(
                &rel_path,
                format!("relation index {} out of order", row.relation_index),
            ));
        }
        relations.push(RelationInfo {
            name: row.raw_name,
            head_type: row.head_type,
            tail_type: row.tail_type,
            block: BlockKey {
                m: row.block_m,
                n: row.block_n,
            },
            slab: row.slab_k,
        });
    }
    let vocab = TypedVocabulary::from_parts(manifest.entity_sep.clone(), entity_types, entities, relations)?;

    let edge_path = dir.join(EDGES_FILE);
    let sizes = vocab.type_sizes();
    let mut edges = Vec::new();
    for (relation, head, tail) in read_rows::<(u32, u32, u32)>(&edge_path)? {
        let info = vocab
            .relations()
            .get(relation as usize)
            .ok_or_else(|| Error::format(&edge_path, format!("unknown relation index {relation}")))?;
        if head as usize >= sizes[info.head_type] || tail as usize >= sizes[info.tail_type] {
            return Err(Error::format(
                &edge_path,
                format!("edge ({relation}, {head}, {tail}) out of range"),
            ));
        }
        edges.push(Edge { relation, head, tail });
    }
    Ok(Dataset { vocab, edges, manifest })
}

/// Which model produced a factor set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Coupled per-type, per-block factors.
    Texgraph,
    /// Single global tensor, scattered into per-type, per-block factors.
    Threeway,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorFile {
    /// Entity type name or block label.
    pub name: String,
    pub file: String,
    pub rows: usize,
}

/// Everything about a factor set except the numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorManifest {
    pub model: ModelKind,
    pub config: TrainConfig,
    pub sweeps_run: usize,
    pub initial_loss: f64,
    pub loss_trace: Vec<f64>,
    /// Local indices, per type, of entities that appear in no block.
    pub zero_degree: Vec<Vec<usize>>,
    pub spectral: Option<SpectralReport>,
    pub entity_files: Vec<FactorFile>,
    pub relation_files: BTreeMap<String, FactorFile>,
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

pub fn entity_file_name(t: usize, type_name: &str) -> String {
    format!("entity_{t:02}_{}.csv", sanitize(type_name))
}

pub fn relation_file_name(key: BlockKey) -> String {
    format!("relation_{:02}_{:02}.csv", key.m, key.n)
}

fn block_label(key: BlockKey) -> String {
    format!("{},{}", key.m, key.n)
}

fn write_matrix(path: &Path, id_header: &str, ids: &[&str], m: &DenseMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec![id_header.to_string()];
    header.extend((0..m.cols()).map(|f| format!("f{f}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    let mut record = Vec::with_capacity(m.cols() + 1);
    for (i, id) in ids.iter().enumerate() {
        record.clear();
        record.push(id.to_string());
        record.extend(m.row(i).iter().map(|v| format!("{v:.16e}")));
        w.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_matrix(path: &Path, ids: &[&str], rank: usize) -> Result<DenseMatrix> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?;
    if header.len() != rank + 1 {
        return Err(Error::format(
            path,
            format!("expected {} columns, found {}", rank + 1, header.len()),
        ));
    }
    let mut values = Vec::with_capacity(ids.len() * rank);
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let id = rec.get(0).unwrap_or_default();
        if ids.get(rows) != Some(&id) {
            return Err(Error::format(
                path,
                format!("row {rows} has id {id:?}, expected {:?}", ids.get(rows)),
            ));
        }
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::format(path, format!("bad number {field:?} in row {rows}")))?;
            values.push(v);
        }
        rows += 1;
    }
    if rows != ids.len() {
        return Err(Error::format(
            path,
            format!("expected {} rows, found {rows}", ids.len()),
        ));
    }
    DenseMatrix::from_vec(rows, rank, values)
}

/// Write one CSV per factor plus `factors.json`; returns the files written.
/// The manifest's file lists are filled in here.
pub fn write_factors(
    dir: &Path,
    factors: &FactorSet,
    vocab: &TypedVocabulary,
    manifest: &mut FactorManifest,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if factors.type_sizes() != vocab.type_sizes() {
        return Err(Error::dim(
            "write_factors",
            "entity factors do not match the vocabulary",
        ));
    }
    let mut written = Vec::new();
    manifest.entity_files.clear();
    manifest.relation_files.clear();
    for (t, a) in factors.entity.iter().enumerate() {
        let name = &vocab.entity_types()[t];
        let file = entity_file_name(t, name);
        let ids: Vec<&str> = vocab.entities(t).iter().map(String::as_str).collect();
        let path = dir.join(&file);
        write_matrix(&path, "entity_raw_id", &ids, a)?;
        written.push(path);
        manifest.entity_files.push(FactorFile {
            name: name.clone(),
            file,
            rows: a.rows(),
        });
    }
    for (key, c) in &factors.relation {
        let ids: Vec<&str> = vocab
            .block_relations(*key)
            .iter()
            .map(|&r| vocab.relation(r).name.as_str())
            .collect();
        if ids.len() != c.rows() {
            return Err(Error::dim(
                "write_factors",
                format!("block {key} has {} relations", ids.len()),
            ));
        }
        let file = relation_file_name(*key);
        let path = dir.join(&file);
        write_matrix(&path, "relation_raw_name", &ids, c)?;
        written.push(path);
        manifest.relation_files.insert(
            block_label(*key),
            FactorFile {
                name: format!("{}/{}", vocab.entity_types()[key.m], vocab.entity_types()[key.n]),
                file,
                rows: c.rows(),
            },
        );
    }
    let path = dir.join(FACTORS_FILE);
    write_json(&path, manifest)?;
    written.push(path);
    Ok(written)
}

pub fn read_factors(dir: &Path, vocab: &TypedVocabulary) -> Result<(FactorSet, FactorManifest)> {
    let manifest: FactorManifest = read_json(&dir.join(FACTORS_FILE))?;
    let rank = manifest.config.rank;
    if manifest.entity_files.len() != vocab.num_types() {
        return Err(Error::format(
            dir.join(FACTORS_FILE),
            format!(
                "{} entity files for {} types",
                manifest.entity_files.len(),
                vocab.num_types()
            ),
        ));
    }
    let mut entity = Vec::with_capacity(vocab.num_types());
    for (t, f) in manifest.entity_files.iter().enumerate() {
        let ids: Vec<&str> = vocab.entities(t).iter().map(String::as_str).collect();
        entity.push(read_matrix(&dir.join(&f.file), &ids, rank)?);
    }
    let mut relation = BTreeMap::new();
    for (key, rels) in vocab.blocks() {
        let f = manifest
            .relation_files
            .get(&block_label(*key))
            .ok_or_else(|| Error::format(dir.join(FACTORS_FILE), format!("no relation file for block {key}")))?;
        let ids: Vec<&str> = rels.iter().map(|&r| vocab.relation(r).name.as_str()).collect();
        relation.insert(*key, read_matrix(&dir.join(&f.file), &ids, rank)?);
    }
    Ok((FactorSet::new(rank, entity, relation)?, manifest))
}

pub const EXPORT_ENTITIES_FILE: &str = "entities.csv";
pub const EXPORT_RELATIONS_FILE: &str = "relations.csv";

/// All embeddings in two flat CSV files: `entity_raw_id,type,f0,..` over all
/// types in order, and `relation_raw_name,block_m,block_n,slab,f0,..` over
/// all relations in vocabulary order.
pub fn export_embeddings(dir: &Path, factors: &FactorSet, vocab: &TypedVocabulary) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if factors.type_sizes() != vocab.type_sizes() {
        return Err(Error::dim(
            "export_embeddings",
            "entity factors do not match the vocabulary",
        ));
    }
    let rank = factors.rank();
    let features = (0..rank).map(|f| format!("f{f}"));
    let fmt = |row: &[f64]| row.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>();

    let ent_path = dir.join(EXPORT_ENTITIES_FILE);
    let mut w = csv::Writer::from_path(&ent_path).map_err(|e| csv_error(&ent_path, e))?;
    let header: Vec<String> = ["entity_raw_id", "type"]
        .iter()
        .map(|s| s.to_string())
        .chain(features.clone())
        .collect();
    w.write_record(&header).map_err(|e| csv_error(&ent_path, e))?;
    for (t, a) in factors.entity.iter().enumerate() {
        for (i, raw) in vocab.entities(t).iter().enumerate() {
            let mut rec = vec![raw.clone(), vocab.entity_types()[t].clone()];
            rec.extend(fmt(a.row(i)));
            w.write_record(&rec).map_err(|e| csv_error(&ent_path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&ent_path, e))?;

    let rel_path = dir.join(EXPORT_RELATIONS_FILE);
    let mut w = csv::Writer::from_path(&rel_path).map_err(|e| csv_error(&rel_path, e))?;
    let header: Vec<String> = ["relation_raw_name", "block_m", "block_n", "slab"]
        .iter()
        .map(|s| s.to_string())
        .chain(features)
        .collect();
    w.write_record(&header).map_err(|e| csv_error(&rel_path, e))?;
    for info in vocab.relations() {
        let c = factors
            .relation
            .get(&info.block)
            .filter(|c| info.slab < c.rows())
            .ok_or_else(|| {
                Error::dim(
                    "export_embeddings",
                    format!("no factor row for relation {:?}", info.name),
                )
            })?;
        let mut rec = vec![
            info.name.clone(),
            info.block.m.to_string(),
            info.block.n.to_string(),
            info.slab.to_string(),
        ];
        rec.extend(fmt(c.row(info.slab)));
        w.write_record(&rec).map_err(|e| csv_error(&rel_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&rel_path, e))?;
    Ok(vec![ent_path, rel_path])
}
