//! Triplet parsing, typed vocabularies and block-tensor construction.
//!
//! Entities are typed by the prefix of their raw id (`Gene::2157` has type
//! `Gene`). Every relation connects one ordered pair of types; relations are
//! grouped into blocks keyed by the unordered type pair, and a relation whose
//! head type sorts after its tail type is stored transposed. Same-type
//! relations are symmetrized.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BlockKey, Slab, SparseBlockTensor};

pub const DEFAULT_ENTITY_SEP: &str = "::";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triplet {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Triplet {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Separator between the type name and the local id of an entity.
    pub entity_sep: String,
    /// Skip malformed lines with a warning instead of failing.
    pub skip_malformed: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            entity_sep: DEFAULT_ENTITY_SEP.to_string(),
            skip_malformed: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedTriplets {
    pub triplets: Vec<Triplet>,
    /// `(line number, content)` of lines skipped under `skip_malformed`.
    pub skipped: Vec<(usize, String)>,
}

/// Type name of a raw entity id, i.e. the text before the first separator.
pub fn entity_type<'a>(raw: &'a str, sep: &str) -> Option<&'a str> {
    match raw.split_once(sep) {
        Some((ty, local)) if !ty.is_empty() && !local.is_empty() => Some(ty),
        _ => None,
    }
}

pub fn parse_triplets(path: &Path, opts: &ParseOptions) -> Result<ParsedTriplets> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_triplets_from(BufReader::new(file), opts).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_triplets_from(reader: impl Read, opts: &ParseOptions) -> Result<ParsedTriplets> {
    let mut out = ParsedTriplets::default();
    let reader = BufReader::new(reader);
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<input>", e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, &opts.entity_sep) {
            Ok(t) => out.triplets.push(t),
            Err(reason) if opts.skip_malformed => {
                warn!("skipping malformed line {line_no} ({reason}): {line:?}");
                out.skipped.push((line_no, line.to_string()));
            }
            Err(reason) => {
                return Err(Error::MalformedLine {
                    line: line_no,
                    content: line.to_string(),
                    reason,
                })
            }
        }
    }
    if out.triplets.is_empty() {
        warn!("no triplets in input");
    }
    Ok(out)
}

fn parse_line(line: &str, sep: &str) -> std::result::Result<Triplet, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(format!("expected 3 tab-separated fields, found {}", fields.len()));
    }
    if fields[1].is_empty() {
        return Err("empty relation".into());
    }
    for (name, f) in [("head", fields[0]), ("tail", fields[2])] {
        if entity_type(f, sep).is_none() {
            return Err(format!("{name} {f:?} is not of the form Type{sep}Id"));
        }
    }
    Ok(Triplet::new(fields[0], fields[1], fields[2]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInfo {
    pub name: String,
    pub head_type: usize,
    pub tail_type: usize,
    pub block: BlockKey,
    pub slab: usize,
}

impl RelationInfo {
    /// Stored transposed in its block (head type sorts after tail type).
    pub fn transposed(&self) -> bool {
        self.head_type > self.tail_type
    }
}

#[derive(Debug, Clone)]
pub struct VocabOptions {
    pub entity_sep: String,
    /// Fixed entity-type order. Types outside the roster are an error.
    pub type_roster: Option<Vec<String>>,
    /// Split relations seen with several signatures into `name@m:n`.
    pub coerce: bool,
}

impl Default for VocabOptions {
    fn default() -> Self {
        VocabOptions {
            entity_sep: DEFAULT_ENTITY_SEP.to_string(),
            type_roster: None,
            coerce: false,
        }
    }
}

/// Mapping between raw ids and `(type, local index)` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedVocabulary {
    entity_sep: String,
    entity_types: Vec<String>,
    entities: Vec<Vec<String>>,
    entity_lookup: HashMap<String, (usize, usize)>,
    relations: Vec<RelationInfo>,
    relation_lookup: HashMap<String, usize>,
    /// Relation indices of each block, in slab order.
    blocks: BTreeMap<BlockKey, Vec<usize>>,
    /// Raw relation name -> coerced names, when coercion split a relation.
    coerced: HashMap<String, Vec<(usize, usize, String)>>,
}

impl TypedVocabulary {
    /// Assemble a vocabulary from its persisted parts.
    pub fn from_parts(
        entity_sep: impl Into<String>,
        entity_types: Vec<String>,
        entities: Vec<Vec<String>>,
        relations: Vec<RelationInfo>,
    ) -> Result<Self> {
        if entities.len() != entity_types.len() {
            return Err(Error::Invalid("entity lists do not match type count".into()));
        }
        let mut entity_lookup = HashMap::new();
        for (t, list) in entities.iter().enumerate() {
            for (i, raw) in list.iter().enumerate() {
                if entity_lookup.insert(raw.clone(), (t, i)).is_some() {
                    return Err(Error::Invalid(format!("duplicate entity {raw:?}")));
                }
            }
        }
        let mut relation_lookup = HashMap::new();
        let mut blocks: BTreeMap<BlockKey, Vec<usize>> = BTreeMap::new();
        for (r, info) in relations.iter().enumerate() {
            let (key, _) = BlockKey::canonical(info.head_type, info.tail_type);
            if key != info.block || info.head_type >= entity_types.len() || info.tail_type >= entity_types.len() {
                return Err(Error::Invalid(format!(
                    "relation {:?} has an inconsistent block",
                    info.name
                )));
            }
            if relation_lookup.insert(info.name.clone(), r).is_some() {
                return Err(Error::Invalid(format!("duplicate relation {:?}", info.name)));
            }
            blocks.entry(key).or_default().push(r);
        }
        for (key, rels) in &blocks {
            for (k, &r) in rels.iter().enumerate() {
                if relations[r].slab != k {
                    return Err(Error::Invalid(format!(
                        "relation {:?} claims slab {} of block {key}, expected {k}",
                        relations[r].name, relations[r].slab
                    )));
                }
            }
        }
        // names of the form `base@h:t` matching their own signature come from coercion
        let mut coerced: HashMap<String, Vec<(usize, usize, String)>> = HashMap::new();
        for info in &relations {
            let Some((base, sig)) = info.name.rsplit_once('@') else {
                continue;
            };
            if sig == format!("{}:{}", info.head_type, info.tail_type) && !relation_lookup.contains_key(base) {
                coerced
                    .entry(base.to_string())
                    .or_default()
                    .push((info.head_type, info.tail_type, info.name.clone()));
            }
        }
        Ok(TypedVocabulary {
            entity_sep: entity_sep.into(),
            entity_types,
            entities,
            entity_lookup,
            relations,
            relation_lookup,
            blocks,
            coerced,
        })
    }

    pub fn entity_sep(&self) -> &str {
        &self.entity_sep
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn num_types(&self) -> usize {
        self.entity_types.len()
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == name)
    }

    pub fn entities(&self, ty: usize) -> &[String] {
        &self.entities[ty]
    }

    pub fn type_sizes(&self) -> Vec<usize> {
        self.entities.iter().map(Vec::len).collect()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.iter().map(Vec::len).sum()
    }

    /// Global index offset of each type (prefix sums of type sizes).
    pub fn type_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.entities.len());
        let mut acc = 0;
        for e in &self.entities {
            off.push(acc);
            acc += e.len();
        }
        off
    }

    pub fn lookup_entity(&self, raw: &str) -> Result<(usize, usize)> {
        self.entity_lookup.get(raw).copied().ok_or_else(|| Error::Lookup {
            kind: "entity",
            id: raw.to_string(),
        })
    }

    pub fn entity_name(&self, ty: usize, local: usize) -> &str {
        &self.entities[ty][local]
    }

    pub fn relations(&self) -> &[RelationInfo] {
        &self.relations
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn relation(&self, r: usize) -> &RelationInfo {
        &self.relations[r]
    }

    pub fn lookup_relation(&self, raw: &str) -> Result<usize> {
        self.relation_lookup.get(raw).copied().ok_or_else(|| Error::Lookup {
            kind: "relation",
            id: raw.to_string(),
        })
    }

    /// Relation index of a triplet, resolving coerced names by signature.
    fn resolve_relation(&self, raw: &str, head_type: usize, tail_type: usize) -> Result<usize> {
        if let Some(split) = self.coerced.get(raw) {
            return split
                .iter()
                .find(|(h, t, _)| (*h, *t) == (head_type, tail_type))
                .map(|(_, _, name)| self.relation_lookup[name])
                .ok_or_else(|| Error::Lookup {
                    kind: "relation",
                    id: raw.to_string(),
                });
        }
        self.lookup_relation(raw)
    }

    pub fn blocks(&self) -> &BTreeMap<BlockKey, Vec<usize>> {
        &self.blocks
    }

    pub fn block_relations(&self, key: BlockKey) -> &[usize] {
        self.blocks.get(&key).map_or(&[], Vec::as_slice)
    }

    /// Resolve a triplet to an edge in head/tail orientation.
    pub fn edge(&self, t: &Triplet) -> Result<Edge> {
        let (ht, hi) = self.lookup_entity(&t.head)?;
        let (tt, ti) = self.lookup_entity(&t.tail)?;
        let relation = self.resolve_relation(&t.relation, ht, tt)?;
        let info = &self.relations[relation];
        if (info.head_type, info.tail_type) != (ht, tt) {
            return Err(Error::MixedSignature {
                relation: t.relation.clone(),
                first: self.signature(info.head_type, info.tail_type),
                second: self.signature(ht, tt),
            });
        }
        Ok(Edge {
            relation: relation as u32,
            head: hi as u32,
            tail: ti as u32,
        })
    }

    pub fn triplet(&self, e: &Edge) -> Triplet {
        let info = &self.relations[e.relation as usize];
        Triplet::new(
            self.entity_name(info.head_type, e.head as usize),
            info.name.clone(),
            self.entity_name(info.tail_type, e.tail as usize),
        )
    }

    fn signature(&self, h: usize, t: usize) -> String {
        format!("{}:{}", self.entity_types[h], self.entity_types[t])
    }
}

/// A deduplicated directed edge in head/tail orientation; indices are local
/// to the relation's head and tail types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub relation: u32,
    pub head: u32,
    pub tail: u32,
}

pub fn build_vocabulary(triplets: &[Triplet], opts: &VocabOptions) -> Result<TypedVocabulary> {
    if triplets.is_empty() {
        return Err(Error::Invalid("cannot build a vocabulary from zero triplets".into()));
    }
    let sep = opts.entity_sep.as_str();
    fn type_of<'a>(raw: &'a str, sep: &str) -> Result<&'a str> {
        entity_type(raw, sep).ok_or_else(|| Error::Invalid(format!("entity {raw:?} has no type prefix")))
    }

    let mut types: Vec<String> = opts.type_roster.clone().unwrap_or_default();
    let mut type_ids: HashMap<String, usize> = types.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    if type_ids.len() != types.len() {
        return Err(Error::Invalid("type roster has duplicates".into()));
    }
    let mut type_id = |name: &str| -> Result<usize> {
        if let Some(&i) = type_ids.get(name) {
            return Ok(i);
        }
        if opts.type_roster.is_some() {
            return Err(Error::Invalid(format!(
                "entity type {name:?} is not in the type roster"
            )));
        }
        types.push(name.to_string());
        type_ids.insert(name.to_string(), types.len() - 1);
        Ok(types.len() - 1)
    };

    // pass 1: types, entities and relation signatures in first-appearance order
    let mut entities: Vec<Vec<String>> = Vec::new();
    let mut entity_lookup: HashMap<String, (usize, usize)> = HashMap::new();
    let mut signatures: Vec<(String, Vec<(usize, usize)>)> = Vec::new();
    let mut sig_index: HashMap<String, usize> = HashMap::new();
    for t in triplets {
        let ht = type_id(type_of(&t.head, sep)?)?;
        let tt = type_id(type_of(&t.tail, sep)?)?;
        for (raw, ty) in [(&t.head, ht), (&t.tail, tt)] {
            if entities.len() <= ty {
                entities.resize_with(ty + 1, Vec::new);
            }
            if !entity_lookup.contains_key(raw.as_str()) {
                entity_lookup.insert(raw.clone(), (ty, entities[ty].len()));
                entities[ty].push(raw.clone());
            }
        }
        let slot = *sig_index.entry(t.relation.clone()).or_insert_with(|| {
            signatures.push((t.relation.clone(), Vec::new()));
            signatures.len() - 1
        });
        let sigs = &mut signatures[slot].1;
        if !sigs.contains(&(ht, tt)) {
            sigs.push((ht, tt));
        }
    }
    entities.resize_with(types.len(), Vec::new);

    let mut relations = Vec::new();
    let mut coerced = HashMap::new();
    for (name, sigs) in signatures {
        if sigs.len() == 1 {
            relations.push((name, sigs[0]));
            continue;
        }
        if !opts.coerce {
            return Err(Error::MixedSignature {
                relation: name,
                first: format!("{}:{}", types[sigs[0].0], types[sigs[0].1]),
                second: format!("{}:{}", types[sigs[1].0], types[sigs[1].1]),
            });
        }
        warn!("relation {name:?} has {} signatures; splitting", sigs.len());
        let mut split = Vec::new();
        for &(h, t) in &sigs {
            let new_name = format!("{name}@{h}:{t}");
            split.push((h, t, new_name.clone()));
            relations.push((new_name, (h, t)));
        }
        coerced.insert(name, split);
    }

    let mut slab_counts: BTreeMap<BlockKey, usize> = BTreeMap::new();
    let infos = relations
        .into_iter()
        .map(|(name, (h, t))| {
            let (block, _) = BlockKey::canonical(h, t);
            let counter = slab_counts.entry(block).or_insert(0);
            let slab = *counter;
            *counter += 1;
            RelationInfo {
                name,
                head_type: h,
                tail_type: t,
                block,
                slab,
            }
        })
        .collect();

    for (t, list) in entities.iter().enumerate() {
        if list.is_empty() {
            warn!("entity type {:?} has no entities", types[t]);
        }
    }
    let vocab = TypedVocabulary::from_parts(sep, types, entities, infos)?;
    debug_assert_eq!(vocab.coerced, coerced);
    Ok(vocab)
}

/// Resolve triplets to deduplicated edges, sorted by (relation, head, tail).
pub fn resolve_edges(triplets: &[Triplet], vocab: &TypedVocabulary) -> Result<Vec<Edge>> {
    let mut edges = triplets.iter().map(|t| vocab.edge(t)).collect::<Result<Vec<_>>>()?;
    edges.sort_unstable();
    edges.dedup();
    Ok(edges)
}

pub type BlockMap = BTreeMap<BlockKey, SparseBlockTensor>;

pub fn build_blocks(triplets: &[Triplet], vocab: &TypedVocabulary) -> Result<BlockMap> {
    blocks_from_edges(&resolve_edges(triplets, vocab)?, vocab)
}

/// Materialize one block tensor per type pair from directed edges.
pub fn blocks_from_edges(edges: &[Edge], vocab: &TypedVocabulary) -> Result<BlockMap> {
    let mut per_relation: Vec<Vec<(u32, u32)>> = vec![Vec::new(); vocab.num_relations()];
    for e in edges {
        let r = e.relation as usize;
        let info = vocab.relations.get(r).ok_or_else(|| Error::Lookup {
            kind: "relation index",
            id: r.to_string(),
        })?;
        let coord = if info.transposed() {
            (e.tail, e.head)
        } else {
            (e.head, e.tail)
        };
        per_relation[r].push(coord);
    }
    let sizes = vocab.type_sizes();
    let mut blocks = BTreeMap::new();
    for (&key, rels) in &vocab.blocks {
        let (rows, cols) = (sizes[key.m], sizes[key.n]);
        let slabs = rels
            .iter()
            .map(|&r| {
                let coords = std::mem::take(&mut per_relation[r]);
                if key.is_diagonal() {
                    Slab::symmetrized(rows, &coords)
                } else {
                    Slab::binary(rows, cols, coords)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        blocks.insert(key, SparseBlockTensor::new(key, rows, cols, slabs)?);
    }
    Ok(blocks)
}

/// Recover the directed edge set from block tensors, undoing transposition
/// and symmetrization.
pub fn export_edges(blocks: &BlockMap, vocab: &TypedVocabulary) -> Vec<Edge> {
    let mut edges = Vec::new();
    for (key, block) in blocks {
        for (k, &r) in vocab.block_relations(*key).iter().enumerate() {
            let transposed = vocab.relations[r].transposed();
            for (i, j) in block.slab(k).observed_entries() {
                let (head, tail) = if transposed { (j, i) } else { (i, j) };
                edges.push(Edge {
                    relation: r as u32,
                    head: head as u32,
                    tail: tail as u32,
                });
            }
        }
    }
    edges.sort_unstable();
    edges
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub m: usize,
    pub n: usize,
    pub type_m: String,
    pub type_n: String,
    pub dims: [usize; 3],
    pub nnz: usize,
    pub sparsity: f64,
    pub relations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockManifest {
    pub entity_sep: String,
    pub entity_types: Vec<String>,
    pub type_sizes: Vec<usize>,
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_triplets: usize,
    pub num_distinct_edges: usize,
    pub tensor_blocks: usize,
    pub matrix_blocks: usize,
    pub blocks: Vec<BlockSummary>,
}

pub fn block_manifest(
    vocab: &TypedVocabulary,
    blocks: &BlockMap,
    num_triplets: usize,
    num_distinct_edges: usize,
) -> BlockManifest {
    let summaries: Vec<BlockSummary> = blocks
        .values()
        .map(|b| {
            let key = b.key();
            let (rows, cols, k) = b.dims();
            BlockSummary {
                m: key.m,
                n: key.n,
                type_m: vocab.entity_types[key.m].clone(),
                type_n: vocab.entity_types[key.n].clone(),
                dims: [rows, cols, k],
                nnz: b.nnz(),
                sparsity: b.sparsity(),
                relations: vocab
                    .block_relations(key)
                    .iter()
                    .map(|&r| vocab.relations[r].name.clone())
                    .collect(),
            }
        })
        .collect();
    BlockManifest {
        entity_sep: vocab.entity_sep.clone(),
        entity_types: vocab.entity_types.clone(),
        type_sizes: vocab.type_sizes(),
        num_entities: vocab.num_entities(),
        num_relations: vocab.num_relations(),
        num_triplets,
        num_distinct_edges,
        tensor_blocks: summaries.iter().filter(|s| s.dims[2] > 1).count(),
        matrix_blocks: summaries.iter().filter(|s| s.dims[2] == 1).count(),
        blocks: summaries,
    }
}
