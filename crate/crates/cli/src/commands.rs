use std::path::Path;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde_json::json;

use texgraph::als::{fit, zero_degree_entities};
use texgraph::ingest::{
    block_manifest, blocks_from_edges, build_vocabulary, parse_triplets, resolve_edges, ParseOptions, VocabOptions,
};
use texgraph::persist::{
    export_embeddings, read_dataset, read_factors, read_json, write_dataset, write_factors, write_json, write_triplets,
    Dataset, FactorManifest, ModelKind, BLOCKS_FILE, EDGES_FILE, ENTITIES_FILE, FACTORS_FILE, RELATIONS_FILE,
    TYPES_FILE,
};
use texgraph::scoring::{evaluate_hits, fit_threeway_baseline, rank_candidates, EvalSpec};
use texgraph::spectral::{scatter, spectral_init, GlobalTensor};
use texgraph::synth::{drkg_mock, random_typed_graph, MockOptions};
use texgraph::{FactorSet, InitMode, TrainConfig};

use crate::manifest::RunManifest;
use crate::{EvaluateArgs, ExportArgs, IngestArgs, Init, Model, SynthArgs, SynthKind, TrainArgs};

pub fn ingest(args: &IngestArgs) -> Result<()> {
    let mut run = RunManifest::new(
        "ingest",
        json!({
            "triplets": args.triplets,
            "entity_sep": args.entity_sep,
            "coerce": args.coerce,
            "skip_malformed": args.skip_malformed,
            "type_order": args.type_order,
        }),
        None,
    );
    run.phase("parse");
    let opts = ParseOptions {
        entity_sep: args.entity_sep.clone(),
        skip_malformed: args.skip_malformed,
    };
    let parsed = parse_triplets(&args.triplets, &opts)?;
    run.input(&args.triplets)?;
    if !parsed.skipped.is_empty() {
        warn!("skipped {} malformed lines", parsed.skipped.len());
    }

    run.phase("vocabulary");
    let vopts = VocabOptions {
        entity_sep: args.entity_sep.clone(),
        type_roster: args.type_order.clone(),
        coerce: args.coerce,
    };
    let vocab = build_vocabulary(&parsed.triplets, &vopts)?;
    let edges = resolve_edges(&parsed.triplets, &vocab)?;

    run.phase("blocks");
    let blocks = blocks_from_edges(&edges, &vocab)?;
    let manifest = block_manifest(&vocab, &blocks, parsed.triplets.len(), edges.len());
    info!(
        "{} triplets, {} distinct edges, {} entities of {} types, {} relations, {} tensor blocks, {} matrix blocks",
        manifest.num_triplets,
        manifest.num_distinct_edges,
        manifest.num_entities,
        manifest.entity_types.len(),
        manifest.num_relations,
        manifest.tensor_blocks,
        manifest.matrix_blocks
    );

    run.phase("write");
    let data = Dataset { vocab, edges, manifest };
    run.outputs = write_dataset(&args.out, &data)?;
    run.write(&args.out)?;
    Ok(())
}

fn dataset_inputs(run: &mut RunManifest, dir: &Path) -> Result<()> {
    for f in [TYPES_FILE, ENTITIES_FILE, RELATIONS_FILE, EDGES_FILE, BLOCKS_FILE] {
        run.input(&dir.join(f))?;
    }
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let config = TrainConfig {
        rank: args.rank,
        max_sweeps: args.sweeps,
        ridge: args.ridge,
        tolerance: args.tolerance,
        seed: args.seed,
        init: match args.init {
            Init::Spectral => InitMode::Spectral,
            Init::Random => InitMode::Random,
        },
    };
    config.validate()?;
    let model = match args.model {
        Model::Texgraph => ModelKind::Texgraph,
        Model::Threeway => ModelKind::Threeway,
    };
    let mut run = RunManifest::new(
        "train",
        json!({ "data": args.data, "model": model, "train": config }),
        Some(args.seed),
    );
    run.phase("load");
    let data = read_dataset(&args.data)?;
    dataset_inputs(&mut run, &args.data)?;
    let vocab = &data.vocab;
    let blocks = blocks_from_edges(&data.edges, vocab)?;

    let (factors, fitted, spectral) = match model {
        ModelKind::Texgraph => {
            run.phase("init");
            let (init, spectral) = match config.init {
                InitMode::Spectral => {
                    let (fs, report) = spectral_init(&data.edges, vocab, config.rank, config.seed)?;
                    (fs, Some(report))
                }
                InitMode::Random => (
                    FactorSet::random(&vocab.type_sizes(), &blocks, config.rank, config.seed)?,
                    None,
                ),
            };
            run.phase("als");
            let fitted = fit(&blocks, &config, init)?;
            (fitted.factors.clone(), fitted, spectral)
        }
        ModelKind::Threeway => {
            run.phase("global tensor");
            let y = GlobalTensor::from_edges(&data.edges, vocab)?;
            run.phase("als");
            let out = fit_threeway_baseline(&y, &config)?;
            (scatter(&out.factors, vocab)?, out.fit, out.spectral)
        }
    };
    if let Some(report) = &spectral {
        info!(
            "spectral init: relative residual {:.4}, {} Lanczos restarts{}",
            report.relative_residual,
            report.lanczos_restarts,
            if report.fallback {
                ", replaced by random start"
            } else {
                ""
            }
        );
    }
    let zero_degree = zero_degree_entities(&vocab.type_sizes(), &blocks);
    let isolated: usize = zero_degree.iter().map(Vec::len).sum();
    if isolated > 0 {
        warn!("{isolated} entities appear in no block; their embeddings stay at the ridge solution (zero)");
    }

    run.phase("write");
    let mut manifest = FactorManifest {
        model,
        config,
        sweeps_run: fitted.sweeps(),
        initial_loss: fitted.initial_loss,
        loss_trace: fitted.loss_trace.clone(),
        zero_degree,
        spectral,
        entity_files: Vec::new(),
        relation_files: Default::default(),
    };
    run.outputs = write_factors(&args.out, &factors, vocab, &mut manifest)?;
    run.loss_trace = fitted.loss_trace;
    run.write(&args.out)?;
    Ok(())
}

fn factor_inputs(run: &mut RunManifest, dir: &Path) -> Result<()> {
    let manifest: FactorManifest = read_json(&dir.join(FACTORS_FILE))?;
    run.input(&dir.join(FACTORS_FILE))?;
    for f in manifest.entity_files.iter().chain(manifest.relation_files.values()) {
        run.input(&dir.join(&f.file))?;
    }
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut run = RunManifest::new(
        "evaluate",
        json!({ "factors": args.factors, "data": args.data, "spec": args.spec }),
        None,
    );
    run.phase("load");
    let data = read_dataset(&args.data)?;
    dataset_inputs(&mut run, &args.data)?;
    let (factors, fman) = read_factors(&args.factors, &data.vocab)?;
    factor_inputs(&mut run, &args.factors)?;
    let spec = EvalSpec::load(&args.spec)?;
    run.input(&args.spec)?;
    let raw: EvalSpec = read_json(&args.spec)?;
    let base = args.spec.parent().unwrap_or(Path::new("."));
    run.input(&base.join(&raw.candidates_file))?;
    if let Some(r) = &raw.reference_file {
        run.input(&base.join(r))?;
    }

    run.phase("rank");
    let mut report = rank_candidates(&factors, &data.vocab, &spec)?;
    let summary = evaluate_hits(&mut report, &spec.reference, &spec.k_values, &data.vocab);
    for (k, h) in &summary.hits {
        info!("hits@{k}: {h} of {} reference drugs", summary.reference_size);
    }

    run.phase("write");
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let tsv = args.out.join("report.tsv");
    std::fs::write(&tsv, report.to_tsv()).with_context(|| format!("writing {}", tsv.display()))?;
    let hits: serde_json::Map<String, serde_json::Value> =
        summary.hits.iter().map(|(k, h)| (k.to_string(), json!(h))).collect();
    let summary_json = json!({
        "model": fman.model,
        "k": report.k,
        "num_candidates": report.num_candidates,
        "num_ranked": report.entries.len(),
        "hits": hits,
        "reference_size": summary.reference_size,
        "unknown_reference": summary.unknown_reference,
        "retrieved": summary.retrieved.iter().map(|(d, r)| json!({ "drug": d, "rank": r })).collect::<Vec<_>>(),
    });
    let summary_path = args.out.join("summary.json");
    write_json(&summary_path, &summary_json)?;
    run.outputs = vec![tsv, summary_path];
    run.write(&args.out)?;
    Ok(())
}

pub fn export(args: &ExportArgs) -> Result<()> {
    let mut run = RunManifest::new("export", json!({ "factors": args.factors, "data": args.data }), None);
    run.phase("load");
    let data = read_dataset(&args.data)?;
    dataset_inputs(&mut run, &args.data)?;
    let (factors, _) = read_factors(&args.factors, &data.vocab)?;
    factor_inputs(&mut run, &args.factors)?;
    run.phase("write");
    run.outputs = export_embeddings(&args.out, &factors, &data.vocab)?;
    run.write(&args.out)?;
    Ok(())
}

fn parse_block(spec: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = spec.split(':').collect();
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .ok()
        .unwrap_or_default();
    match nums.as_slice() {
        [m, n, k] if parts.len() == 3 => Ok((*m, *n, *k)),
        _ => bail!(texgraph::Error::Invalid(format!(
            "block {spec:?} is not of the form m:n:K"
        ))),
    }
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    match &args.kind {
        SynthKind::Mock {
            out,
            scale,
            edges_per_relation,
            seed,
        } => {
            if !(scale.is_finite() && *scale > 0.0) {
                bail!(texgraph::Error::Invalid(format!("scale must be positive, got {scale}")));
            }
            let triplets = drkg_mock(&MockOptions {
                entity_scale: *scale,
                edges_per_relation: *edges_per_relation,
                seed: *seed,
            });
            write_triplets(out, &triplets)?;
            info!("wrote {} triplets to {}", triplets.len(), out.display());
        }
        SynthKind::Graph {
            out,
            sizes,
            blocks,
            density,
            seed,
        } => {
            let spec = blocks.iter().map(|b| parse_block(b)).collect::<Result<Vec<_>>>()?;
            let triplets = random_typed_graph(sizes, &spec, *density, *seed)?;
            write_triplets(out, &triplets)?;
            info!("wrote {} triplets to {}", triplets.len(), out.display());
        }
    }
    Ok(())
}
