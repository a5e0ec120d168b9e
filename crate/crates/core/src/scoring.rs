//! Trilinear link scores, top-K drug retrieval and hit counting against a
//! reference list, plus the single-tensor baseline.
//!
//! `score(h, r, t) = Σ_f A_{type(h)}(h,f) · C_{block(r)}(slab(r),f) · A_{type(t)}(t,f)`.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als::{fit, FitResult};
use crate::error::{Error, Result};
use crate::factors::{FactorSet, InitMode, TrainConfig};
use crate::ingest::TypedVocabulary;
use crate::spectral::{semi_symmetric_cpd, GlobalFactors, GlobalTensor, SpectralReport};
use crate::tensor::BlockKey;

/// `Σ_f a(f) c(f) b(f)`.
#[inline]
pub fn trilinear(a: &[f64], c: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(c).zip(b).map(|((x, y), z)| x * y * z).sum()
}

/// Score of relation `relation` between `head` and `tail`, both local indices
/// of the relation's head and tail types.
pub fn score_edge(
    factors: &FactorSet,
    vocab: &TypedVocabulary,
    relation: usize,
    head: usize,
    tail: usize,
) -> Result<f64> {
    let info = vocab.relations().get(relation).ok_or_else(|| Error::Lookup {
        kind: "relation index",
        id: relation.to_string(),
    })?;
    let ah = factors.entity.get(info.head_type).filter(|a| head < a.rows());
    let at = factors.entity.get(info.tail_type).filter(|a| tail < a.rows());
    let c = factors.relation.get(&info.block).filter(|c| info.slab < c.rows());
    match (ah, at, c) {
        (Some(ah), Some(at), Some(c)) => Ok(trilinear(ah.row(head), c.row(info.slab), at.row(tail))),
        _ => Err(Error::dim(
            "score_edge",
            format!("({head}, {}, {tail}) outside the factor set", info.name),
        )),
    }
}

/// Score of a raw `(head, relation, tail)` triplet.
pub fn score_triplet(
    factors: &FactorSet,
    vocab: &TypedVocabulary,
    head: &str,
    relation: &str,
    tail: &str,
) -> Result<f64> {
    let edge = vocab.edge(&crate::ingest::Triplet::new(head, relation, tail))?;
    score_edge(
        factors,
        vocab,
        edge.relation as usize,
        edge.head as usize,
        edge.tail as usize,
    )
}

/// Evaluation protocol as stored on disk. Paths are relative to the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub diseases: Vec<String>,
    pub relations: Vec<String>,
    pub candidates_file: PathBuf,
    #[serde(default)]
    pub excluded: Vec<String>,
    pub reference_file: Option<PathBuf>,
    #[serde(default = "default_k_values")]
    pub k_values: Vec<usize>,
}

fn default_k_values() -> Vec<usize> {
    vec![50, 100]
}

/// An [`EvalSpec`] with its id lists loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSpec {
    pub diseases: Vec<String>,
    pub relations: Vec<String>,
    pub candidates: Vec<String>,
    pub excluded: Vec<String>,
    pub reference: Vec<String>,
    pub k_values: Vec<usize>,
}

fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

impl EvalSpec {
    pub fn load(path: &Path) -> Result<LoadedSpec> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: EvalSpec = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let candidates = read_id_list(&base.join(&spec.candidates_file))?;
        let reference = match &spec.reference_file {
            Some(p) => read_id_list(&base.join(p))?,
            None => Vec::new(),
        };
        if spec.k_values.is_empty() || spec.k_values.contains(&0) {
            return Err(Error::format(
                path,
                "k_values must be a nonempty list of positive integers",
            ));
        }
        Ok(LoadedSpec {
            diseases: spec.diseases,
            relations: spec.relations,
            candidates,
            excluded: spec.excluded,
            reference,
            k_values: spec.k_values,
        })
    }
}

/// Spec ids resolved to vocabulary indices.
#[derive(Debug, Clone)]
struct Resolved {
    drug_type: usize,
    disease_type: usize,
    /// Local drug indices, deduplicated, excluded drugs removed, ascending.
    drugs: Vec<usize>,
    /// Local disease indices, ascending.
    diseases: Vec<usize>,
    /// `(relation index, block, slab)`, ascending by relation index.
    relations: Vec<(usize, BlockKey, usize)>,
}

fn resolve(spec: &LoadedSpec, vocab: &TypedVocabulary) -> Result<Resolved> {
    let single_type = |ids: &[String], what: &str| -> Result<(usize, Vec<usize>)> {
        let mut ty = None;
        let mut locals = Vec::with_capacity(ids.len());
        for id in ids {
            let (t, i) = vocab.lookup_entity(id)?;
            if *ty.get_or_insert(t) != t {
                return Err(Error::Invalid(format!("{what} ids span several entity types ({id:?})")));
            }
            locals.push(i);
        }
        let ty = ty.ok_or_else(|| Error::Invalid(format!("no {what} ids in evaluation spec")))?;
        locals.sort_unstable();
        locals.dedup();
        Ok((ty, locals))
    };
    let (disease_type, diseases) = single_type(&spec.diseases, "disease")?;
    let excluded: HashSet<&str> = spec.excluded.iter().map(String::as_str).collect();
    for id in &spec.excluded {
        if vocab.lookup_entity(id).is_err() {
            warn!("excluded drug {id:?} is not in the vocabulary");
        }
    }
    let kept: Vec<String> = spec
        .candidates
        .iter()
        .filter(|c| !excluded.contains(c.as_str()))
        .cloned()
        .collect();
    let (drug_type, drugs) = single_type(&kept, "candidate drug")?;
    let mut relations = Vec::with_capacity(spec.relations.len());
    for name in &spec.relations {
        let r = vocab.lookup_relation(name)?;
        let info = vocab.relation(r);
        let types = (info.head_type, info.tail_type);
        if types != (drug_type, disease_type) && types != (disease_type, drug_type) {
            return Err(Error::Invalid(format!(
                "relation {name:?} does not connect {} and {}",
                vocab.entity_types()[drug_type],
                vocab.entity_types()[disease_type]
            )));
        }
        relations.push((r, info.block, info.slab));
    }
    if relations.is_empty() {
        return Err(Error::Invalid("no scoring relations in evaluation spec".into()));
    }
    relations.sort_unstable();
    relations.dedup();
    Ok(Resolved {
        drug_type,
        disease_type,
        drugs,
        diseases,
        relations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDrug {
    pub rank: usize,
    pub drug: String,
    pub score: f64,
    pub best_disease: String,
    pub best_relation: String,
    pub is_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    /// Number of distinct drugs requested.
    pub k: usize,
    /// Candidates scored, after exclusions.
    pub num_candidates: usize,
    pub entries: Vec<RankedDrug>,
}

/// Best edge of one drug: `(score, disease local, relation index)`.
type Best = (f64, usize, usize);

/// Edges ordered by score descending, then drug, disease and relation
/// ascending; each drug is ranked at its first (best) edge.
pub fn rank_candidates(factors: &FactorSet, vocab: &TypedVocabulary, spec: &LoadedSpec) -> Result<RankingReport> {
    let res = resolve(spec, vocab)?;
    let k = spec.k_values.iter().copied().max().unwrap_or(0);
    let a_drug = factors
        .entity
        .get(res.drug_type)
        .ok_or_else(|| Error::dim("rank_candidates", "no drug factor"))?;
    let a_dis = factors
        .entity
        .get(res.disease_type)
        .ok_or_else(|| Error::dim("rank_candidates", "no disease factor"))?;
    let mut rel_rows = Vec::with_capacity(res.relations.len());
    for &(r, block, slab) in &res.relations {
        let c = factors
            .relation
            .get(&block)
            .filter(|c| slab < c.rows())
            .ok_or_else(|| Error::dim("rank_candidates", format!("no slab {slab} in block {block}")))?;
        rel_rows.push((r, c.row(slab)));
    }
    if a_drug.rows() <= *res.drugs.last().unwrap_or(&0) || a_dis.rows() <= *res.diseases.last().unwrap_or(&0) {
        return Err(Error::dim("rank_candidates", "entity factors smaller than vocabulary"));
    }

    let best: Vec<Best> = res
        .drugs
        .par_iter()
        .map(|&d| {
            let ad = a_drug.row(d);
            let mut best: Option<Best> = None;
            for &j in &res.diseases {
                let aj = a_dis.row(j);
                for &(r, c) in &rel_rows {
                    let s = trilinear(ad, c, aj);
                    // strict comparison keeps the smallest (disease, relation) on ties
                    if best.is_none_or(|b| s.total_cmp(&b.0).is_gt()) {
                        best = Some((s, j, r));
                    }
                }
            }
            best.expect("at least one disease and relation")
        })
        .collect();

    let mut order: Vec<usize> = (0..res.drugs.len()).collect();
    order.sort_by(|&x, &y| best[y].0.total_cmp(&best[x].0).then(res.drugs[x].cmp(&res.drugs[y])));
    if k > order.len() {
        warn!("K = {k} exceeds the {} scored candidates; reporting all", order.len());
    }
    let entries = order
        .iter()
        .take(k)
        .enumerate()
        .map(|(pos, &x)| {
            let (score, j, r) = best[x];
            RankedDrug {
                rank: pos + 1,
                drug: vocab.entity_name(res.drug_type, res.drugs[x]).to_string(),
                score,
                best_disease: vocab.entity_name(res.disease_type, j).to_string(),
                best_relation: vocab.relation(r).name.clone(),
                is_hit: false,
            }
        })
        .collect();
    Ok(RankingReport {
        k,
        num_candidates: res.drugs.len(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitSummary {
    /// `(K, hits in the top K)` for every requested K, ascending.
    pub hits: Vec<(usize, usize)>,
    pub reference_size: usize,
    /// Reference drugs missing from the vocabulary; not counted as misses.
    pub unknown_reference: Vec<String>,
    /// `(drug, rank)` of every reference drug that was retrieved.
    pub retrieved: Vec<(String, usize)>,
}

impl HitSummary {
    pub fn hits_at(&self, k: usize) -> Option<usize> {
        self.hits.iter().find(|(kk, _)| *kk == k).map(|(_, h)| *h)
    }
}

/// Mark reference drugs in `report` and count hits at each K.
pub fn evaluate_hits(
    report: &mut RankingReport,
    reference: &[String],
    k_values: &[usize],
    vocab: &TypedVocabulary,
) -> HitSummary {
    let mut unknown = Vec::new();
    let mut known = HashSet::new();
    for id in reference {
        if vocab.lookup_entity(id).is_ok() {
            known.insert(id.as_str());
        } else {
            warn!("reference drug {id:?} is not in the vocabulary; left out of the denominator");
            unknown.push(id.clone());
        }
    }
    let mut retrieved = Vec::new();
    for e in &mut report.entries {
        e.is_hit = known.contains(e.drug.as_str());
        if e.is_hit {
            retrieved.push((e.drug.clone(), e.rank));
        }
    }
    let mut ks = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let hits = ks
        .iter()
        .map(|&k| (k, retrieved.iter().filter(|(_, r)| *r <= k).count()))
        .collect();
    HitSummary {
        hits,
        reference_size: known.len(),
        unknown_reference: unknown,
        retrieved,
    }
}

impl RankingReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("rank\tdrug_id\tscore\tbest_disease\tbest_relation\tis_hit\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{:e}\t{}\t{}\t{}",
                e.rank, e.drug, e.score, e.best_disease, e.best_relation, e.is_hit
            );
        }
        out
    }
}

/// Result of the single-tensor baseline.
#[derive(Debug, Clone)]
pub struct ThreewayFit {
    pub factors: GlobalFactors,
    pub spectral: Option<SpectralReport>,
    pub fit: FitResult,
}

/// CPD `Y ≈ ⟦A, A, C⟧` of the global symmetrized tensor: spectral (or
/// random) start, then ALS with every entity in one type.
pub fn fit_threeway_baseline(y: &GlobalTensor, config: &TrainConfig) -> Result<ThreewayFit> {
    let key = BlockKey { m: 0, n: 0 };
    let blocks = y.as_blocks();
    let (init, spectral) = match config.init {
        InitMode::Spectral => {
            let (g, report) = semi_symmetric_cpd(y, config.rank, config.seed)?;
            let fs = FactorSet::new(config.rank, vec![g.a], BTreeMap::from([(key, g.c)]))?;
            (fs, Some(report))
        }
        InitMode::Random => (FactorSet::random(&[y.dim()], &blocks, config.rank, config.seed)?, None),
    };
    let result = fit(&blocks, config, init)?;
    let a = result.factors.entity[0].clone();
    let c = result.factors.relation[&key].clone();
    Ok(ThreewayFit {
        factors: GlobalFactors { a, c },
        spectral,
        fit: result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;
    use crate::ingest::{build_vocabulary, Triplet, VocabOptions};

    fn setup() -> (TypedVocabulary, FactorSet) {
        let triplets = vec![
            Triplet::new("Compound::a", "treats", "Disease::x"),
            Triplet::new("Compound::b", "inhibits", "Disease::y"),
            Triplet::new("Compound::c", "treats", "Disease::y"),
        ];
        let vocab = build_vocabulary(&triplets, &VocabOptions::default()).unwrap();
        let key = BlockKey { m: 0, n: 1 };
        let fs = FactorSet::new(
            1,
            vec![
                DenseMatrix::from_vec(3, 1, vec![1.0, 2.0, 2.0]).unwrap(),
                DenseMatrix::from_vec(2, 1, vec![4.0, 1.0]).unwrap(),
            ],
            BTreeMap::from([(key, DenseMatrix::from_vec(2, 1, vec![3.0, 1.0]).unwrap())]),
        )
        .unwrap();
        (vocab, fs)
    }

    fn spec(candidates: &[&str]) -> LoadedSpec {
        LoadedSpec {
            diseases: vec!["Disease::x".into(), "Disease::y".into()],
            relations: vec!["treats".into(), "inhibits".into()],
            candidates: candidates.iter().map(|s| s.to_string()).collect(),
            excluded: vec![],
            reference: vec![],
            k_values: vec![50, 100],
        }
    }

    #[test]
    fn scalar_score() {
        let (vocab, fs) = setup();
        // a: 1 * 3 * 4
        assert_eq!(score_edge(&fs, &vocab, 0, 0, 0).unwrap(), 12.0);
        assert_eq!(
            score_triplet(&fs, &vocab, "Compound::b", "treats", "Disease::x").unwrap(),
            24.0
        );
    }

    #[test]
    fn equal_scores_order_by_drug_index() {
        let (vocab, fs) = setup();
        let report = rank_candidates(&fs, &vocab, &spec(&["Compound::c", "Compound::b", "Compound::a"])).unwrap();
        let drugs: Vec<&str> = report.entries.iter().map(|e| e.drug.as_str()).collect();
        assert_eq!(drugs, ["Compound::b", "Compound::c", "Compound::a"]);
        assert_eq!(report.entries[0].best_disease, "Disease::x");
        assert_eq!(report.entries[0].best_relation, "treats");
        assert_eq!(report.entries[0].rank, 1);
    }

    #[test]
    fn unknown_disease_is_a_lookup_error() {
        let (vocab, fs) = setup();
        let mut s = spec(&["Compound::a"]);
        s.diseases.push("Disease::nope".into());
        let err = rank_candidates(&fs, &vocab, &s).unwrap_err();
        assert!(err.to_string().contains("Disease::nope"));
    }

    #[test]
    fn hits_count_reference_in_top_k() {
        let (vocab, fs) = setup();
        let mut report = rank_candidates(&fs, &vocab, &spec(&["Compound::a", "Compound::b", "Compound::c"])).unwrap();
        let reference = vec!["Compound::a".to_string(), "Compound::zzz".to_string()];
        let summary = evaluate_hits(&mut report, &reference, &[1, 3], &vocab);
        assert_eq!(summary.hits, vec![(1, 0), (3, 1)]);
        assert_eq!(summary.reference_size, 1);
        assert_eq!(summary.unknown_reference, vec!["Compound::zzz".to_string()]);
        assert!(report.entries[2].is_hit);
        let empty = evaluate_hits(&mut report, &[], &[50], &vocab);
        assert_eq!(empty.hits, vec![(50, 0)]);
    }
}
