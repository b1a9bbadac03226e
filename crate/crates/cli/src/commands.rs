use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use log::{info, warn};
use rayon::prelude::*;

use protomatch::embedding::Embedding;
use protomatch::eval::PreparedEvaluation;
use protomatch::io::{
    atomic_write, attach_embeddings, read_config, read_embedding_archive, read_ground_truth, read_proposals,
    read_results, render_config, results_from_runs, validate, write_results, write_retained, EmbeddingArchive,
    RecordKey, RetainedEntry,
};
use protomatch::pipeline::{detect, filter_proposals, DetectionRun, PipelineConfig};
use protomatch::prototype::{
    build_store, load_store, prototype_similarity_matrix, save_store, ClassId, PrototypeStore, SupportSet,
};
use protomatch::Error;

use crate::{Cli, Command};

pub fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(path) => read_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Command::Detect { tau, classwise_nms, .. } = &cli.command {
        if let Some(t) = tau {
            cfg.tau = *t;
        }
        if let Some(t) = classwise_nms {
            cfg.classwise_nms_iou = *t;
        }
    }
    cfg.validate()?;
    eprintln!("# resolved config\n{}", render_config(&cfg)?.trim_end());

    match cli.command {
        Command::BuildPrototypes { supports, out, append } => build_prototypes(&supports, &out, append.as_deref()),
        Command::FilterProposals { proposals, out } => filter(&proposals, &out, &cfg),
        Command::Detect {
            proposals,
            embeddings,
            store,
            out,
            record_time,
            parallel,
            ..
        } => with_pool(parallel.parallelism, || {
            run_detect(&proposals, &embeddings, &store, &out, &cfg, record_time)
        }),
        Command::Evaluate {
            results,
            gt,
            out,
            csv,
            parallel,
        } => with_pool(parallel.parallelism, || run_evaluate(&results, &gt, &out, csv.as_deref())),
        Command::PrototypeSimilarity { store, out } => similarity(&store, &out),
        Command::Validate { paths, json } => run_validate(&paths, json),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .context("building worker pool")?;
    info!("using {} worker threads", pool.current_num_threads());
    pool.install(f)
}

/// Groups support records by class, ordered by support index.
fn support_sets(archive: &EmbeddingArchive) -> Result<Vec<SupportSet>> {
    let mut by_class: BTreeMap<u32, Vec<(u32, Embedding)>> = BTreeMap::new();
    for (record, (key, values)) in archive.iter().enumerate() {
        let RecordKey::Support { class_id, support_index } = *key else {
            return Err(Error::SchemaViolation {
                record,
                message: "proposal key in a support archive".into(),
            }
            .into());
        };
        let e = Embedding::new(values.to_vec()).map_err(|e| Error::SchemaViolation {
            record,
            message: e.to_string(),
        })?;
        by_class.entry(class_id).or_default().push((support_index, e));
    }
    Ok(by_class
        .into_iter()
        .map(|(class_id, mut v)| {
            v.sort_by_key(|(k, _)| *k);
            SupportSet::new(ClassId(class_id), v.into_iter().map(|(_, e)| e).collect())
        })
        .collect())
}

fn provenance(archive: &EmbeddingArchive) -> String {
    format!("extractor={}; crop_policy={}", archive.extractor, archive.crop_policy)
}

fn build_prototypes(supports: &Path, out: &Path, append: Option<&Path>) -> Result<()> {
    let archive = read_embedding_archive(supports)?;
    let sets = support_sets(&archive)?;
    let store = match append {
        None => build_store(&sets, provenance(&archive))?,
        Some(existing) => {
            let mut store = load_store(existing)?;
            if store.provenance() != provenance(&archive) {
                warn!(
                    "store was built with '{}' but supports come from '{}'",
                    store.provenance(),
                    provenance(&archive)
                );
            }
            for s in &sets {
                store.add_class(s)?;
            }
            store
        }
    };
    save_store(&store, out)?;
    println!("class\tK\tnorm");
    for p in store.prototypes() {
        println!("{}\t{}\t{:.6}", p.class_id(), p.k_support(), p.norm());
    }
    println!("{} classes, dimension {}", store.len(), store.dimension());
    Ok(())
}

fn filter(proposals: &Path, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let batches = read_proposals(proposals)?;
    let entries: Vec<RetainedEntry> = batches
        .iter()
        .map(|b| RetainedEntry {
            scene_id: b.scene_id,
            image_id: b.image_id,
            proposal_indices: filter_proposals(b, cfg),
        })
        .collect();
    write_retained(out, &entries)?;
    let (kept, total): (usize, usize) = entries
        .iter()
        .zip(&batches)
        .map(|(e, b)| (e.proposal_indices.len(), b.proposals.len()))
        .fold((0, 0), |(a, b), (x, y)| (a + x, b + y));
    println!("{} images, {kept} of {total} proposals retained", entries.len());
    Ok(())
}

fn check_store_matches(store: &PrototypeStore, archive: &EmbeddingArchive) -> Result<()> {
    if store.is_empty() {
        return Err(Error::EmptyStore.into());
    }
    if !archive.is_empty() && archive.dim != store.dimension() {
        return Err(Error::DimensionMismatch {
            expected: store.dimension(),
            actual: archive.dim,
        })
        .context("proposal embeddings do not match the prototype store");
    }
    if !store.provenance().contains(&format!("extractor={};", archive.extractor)) {
        warn!(
            "proposal embeddings come from extractor '{}' but the store records '{}'",
            archive.extractor,
            store.provenance()
        );
    }
    Ok(())
}

fn run_detect(
    proposals: &Path,
    embeddings: &Path,
    store_path: &Path,
    out: &Path,
    cfg: &PipelineConfig,
    record_time: bool,
) -> Result<()> {
    let store = load_store(store_path)?;
    let mut batches = read_proposals(proposals)?;
    let archive = read_embedding_archive(embeddings)?;
    check_store_matches(&store, &archive)?;
    attach_embeddings(&mut batches, &archive)?;

    let outcomes: Vec<protomatch::Result<DetectionRun>> = batches
        .par_iter()
        .map(|b| {
            let start = Instant::now();
            let mut run = detect(b, &store, cfg)?;
            if record_time {
                run.elapsed_secs = Some(start.elapsed().as_secs_f64());
            }
            Ok(run)
        })
        .collect();
    // report the first failure in file order, whatever finished first
    let runs = outcomes.into_iter().collect::<protomatch::Result<Vec<_>>>()?;

    let results = results_from_runs(&runs);
    write_results(out, &results)?;
    for r in &runs {
        println!("scene {} image {}: {} detections", r.scene_id, r.image_id, r.detections.len());
    }
    println!("{} images, {} detections", runs.len(), results.len());
    Ok(())
}

fn run_evaluate(results: &Path, gt: &Path, out: &Path, csv: Option<&Path>) -> Result<()> {
    let dets = read_results(results)?;
    let truth = read_ground_truth(gt)?;
    let prepared = PreparedEvaluation::new(&dets, &truth)?;
    let per_class = prepared
        .classes()
        .into_par_iter()
        .map(|c| (c, prepared.class_threshold_ap(c)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    let report = prepared.finish(per_class);

    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    atomic_write(out, json.as_bytes())?;
    if let Some(path) = csv {
        atomic_write(path, report.to_csv().as_bytes())?;
    }
    print!("{}", report.to_table());
    println!("mean_ap {:.4}", report.mean_ap);
    Ok(())
}

fn similarity(store_path: &Path, out: &Path) -> Result<()> {
    let store = load_store(store_path)?;
    let matrix = prototype_similarity_matrix(&store)?;
    let ids: Vec<ClassId> = store.class_ids().collect();
    let mut csv = String::from("class_id");
    for id in &ids {
        let _ = write!(csv, ",{id}");
    }
    csv.push('\n');
    for (id, row) in ids.iter().zip(&matrix) {
        let _ = write!(csv, "{id}");
        for v in row {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    atomic_write(out, csv.as_bytes())?;
    println!("{0}x{0} similarity matrix written to {1}", ids.len(), out.display());
    Ok(())
}

fn run_validate(paths: &[std::path::PathBuf], json: bool) -> Result<()> {
    let mut dirty = 0;
    for path in paths {
        let report = validate(path)?;
        if !report.is_clean() {
            dirty += 1;
        }
        if json {
            println!("{}", serde_json::json!({ "path": path, "report": report }));
        } else {
            let verdict = if report.is_clean() { "ok" } else { "INVALID" };
            println!("{}: {:?} {verdict}", path.display(), report.kind);
            for v in &report.violations {
                println!("  {v}");
            }
        }
    }
    if dirty > 0 {
        return Err(ViolationsFound(dirty).into());
    }
    Ok(())
}

#[derive(Debug)]
pub struct ViolationsFound(pub usize);

impl std::fmt::Display for ViolationsFound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} file(s) failed validation", self.0)
    }
}

impl std::error::Error for ViolationsFound {}
