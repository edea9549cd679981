//! Text and image filters, near-duplicate removal, evaluation-leak
//! detection and benchmark-term exclusion.

mod descriptor;
mod filters;

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harvest::ImageRecord;
use crate::kg::Entity;
use crate::query::SearchQuery;
use crate::text::casefold;

pub use descriptor::{
    compute_descriptors, describe_bytes, dot, read_descriptor_cache, write_descriptor_cache, Descriptor,
    DescriptorBackend, DescriptorSet, GrayscaleBackend,
};
pub use filters::{filter_image, filter_text, looks_like_json, DropReason, ImageFilter, TextFilter};

pub const DEFAULT_DEDUP_THRESHOLD: f32 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateCluster {
    pub member_ids: Vec<String>,
    pub retained_id: String,
    pub merged_alt_texts: Vec<String>,
}

/// A record after curation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuratedRecord {
    #[serde(flatten)]
    pub image: ImageRecord,
    /// Other cluster members folded into this one.
    #[serde(default)]
    pub merged_ids: Vec<String>,
    #[serde(default)]
    pub excluded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_reason: Option<String>,
    /// No descriptor could be computed, so dedup skipped this image.
    #[serde(default)]
    pub descriptor_failed: bool,
}

impl CuratedRecord {
    pub fn new(image: ImageRecord) -> Self {
        Self { image, merged_ids: Vec::new(), excluded: false, exclusion_reason: None, descriptor_failed: false }
    }

    pub fn exclude(&mut self, reason: impl Into<String>) {
        if !self.excluded {
            self.excluded = true;
            self.exclusion_reason = Some(reason.into());
        }
    }
}

/// One line of the curate report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub id: String,
    pub rule: String,
    pub reason: String,
    pub values: serde_json::Value,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// Connected components of the graph joining every pair with cosine at or
/// above `threshold`. Components are lists of indices into `vectors`,
/// ordered by their smallest member.
pub fn components(vectors: &[&[f32]], threshold: f32) -> Vec<Vec<usize>> {
    let n = vectors.len();
    let edges: Vec<(usize, usize)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| ((i + 1)..n).filter(move |&j| dot(vectors[i], vectors[j]) >= threshold).map(move |j| (i, j)))
        .collect();
    let mut uf = UnionFind::new(n);
    for (a, b) in edges {
        uf.union(a, b);
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        let r = uf.find(i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|g| g[0]);
    out
}

/// Cluster the ids of a descriptor set. Singletons are included.
pub fn cluster_duplicates(set: &DescriptorSet, threshold: f32) -> Vec<Vec<String>> {
    let ids: Vec<&String> = set.items.keys().collect();
    let vectors: Vec<&[f32]> = set.items.values().map(|d| d.vector.as_slice()).collect();
    components(&vectors, threshold).into_iter().map(|g| g.into_iter().map(|i| ids[i].clone()).collect()).collect()
}

/// Largest area, then larger file, then smallest id.
pub fn pick_retained<'a>(members: &[&'a ImageRecord]) -> &'a ImageRecord {
    members
        .iter()
        .copied()
        .max_by(|a, b| a.area().cmp(&b.area()).then(a.byte_size.cmp(&b.byte_size)).then(b.id.cmp(&a.id)))
        .expect("clusters are non-empty")
}

fn union_into(dst: &mut Vec<String>, src: &[String]) {
    for s in src {
        if !dst.contains(s) {
            dst.push(s.clone());
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DedupOutcome {
    pub records: Vec<CuratedRecord>,
    pub clusters: Vec<DuplicateCluster>,
}

/// Collapse each duplicate cluster onto its retained record, which gains
/// the union of the members' alt texts and provenance. Records without a
/// descriptor pass through flagged. Output follows input order of the
/// retained records.
pub fn dedup_records(records: Vec<ImageRecord>, set: &DescriptorSet, threshold: f32) -> DedupOutcome {
    let position: HashMap<&str, usize> = records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let described: Vec<usize> =
        records.iter().enumerate().filter(|(_, r)| set.items.contains_key(&r.id)).map(|(i, _)| i).collect();
    let vectors: Vec<&[f32]> = described.iter().map(|&i| set.items[&records[i].id].vector.as_slice()).collect();

    let mut result: Vec<Option<CuratedRecord>> = vec![None; records.len()];
    let mut clusters = Vec::new();
    for comp in components(&vectors, threshold) {
        let members: Vec<&ImageRecord> = comp.iter().map(|&k| &records[described[k]]).collect();
        let retained = pick_retained(&members);
        let mut merged = retained.clone();
        merged.alt_texts.clear();
        for m in &members {
            union_into(&mut merged.alt_texts, &m.alt_texts);
        }
        for m in &members {
            union_into(&mut merged.query_refs, &m.query_refs);
            union_into(&mut merged.result_ids, &m.result_ids);
            for s in &m.sources {
                if !merged.sources.contains(s) {
                    merged.sources.push(s.clone());
                }
            }
        }
        clusters.push(DuplicateCluster {
            member_ids: members.iter().map(|m| m.id.clone()).collect(),
            retained_id: retained.id.clone(),
            merged_alt_texts: merged.alt_texts.clone(),
        });
        let mut rec = CuratedRecord::new(merged);
        rec.merged_ids = members.iter().filter(|m| m.id != retained.id).map(|m| m.id.clone()).collect();
        result[position[retained.id.as_str()]] = Some(rec);
    }
    for (i, r) in records.iter().enumerate() {
        if !set.items.contains_key(&r.id) {
            let mut rec = CuratedRecord::new(r.clone());
            rec.descriptor_failed = true;
            result[i] = Some(rec);
        }
    }
    DedupOutcome { records: result.into_iter().flatten().collect(), clusters }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leak {
    pub dataset_id: String,
    pub eval_id: String,
    pub similarity: f32,
}

/// Every (dataset, eval) pair at or above `threshold`.
pub fn detect_eval_leaks(dataset: &DescriptorSet, eval: &DescriptorSet, threshold: f32) -> Result<Vec<Leak>> {
    if dataset.backend_id != eval.backend_id || dataset.dim != eval.dim {
        return Err(Error::Config(format!(
            "descriptor backends differ: dataset {} (dim {}), eval {} (dim {})",
            dataset.backend_id, dataset.dim, eval.backend_id, eval.dim
        )));
    }
    let eval_items: Vec<(&String, &Descriptor)> = eval.items.iter().collect();
    Ok(dataset
        .items
        .par_iter()
        .flat_map_iter(|(id, d)| {
            eval_items.iter().filter_map(move |(eid, e)| {
                let s = d.cosine(e);
                (s >= threshold).then(|| Leak { dataset_id: id.clone(), eval_id: (*eid).clone(), similarity: s })
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermMatch {
    pub id: String,
    pub text: String,
    pub term: String,
}

fn first_term<'a>(text: &str, terms: &'a [String]) -> Option<&'a String> {
    let t = casefold(text);
    terms.iter().find(|term| !term.is_empty() && t.contains(term.as_str()))
}

fn fold_terms(terms: &[String]) -> Vec<String> {
    terms.iter().map(|t| casefold(t.trim())).filter(|t| !t.is_empty()).collect()
}

/// Drop queries containing any term as a case-insensitive substring.
pub fn exclude_benchmark_terms(queries: Vec<SearchQuery>, terms: &[String]) -> (Vec<SearchQuery>, Vec<TermMatch>) {
    let terms = fold_terms(terms);
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for q in queries {
        match first_term(&q.text, &terms) {
            Some(term) => {
                log::info!("excluding query `{}` (matches `{term}`)", q.text);
                removed.push(TermMatch { id: q.id.clone(), text: q.text.clone(), term: term.clone() });
            }
            None => kept.push(q),
        }
    }
    (kept, removed)
}

/// Entities whose name or any alias contains a term.
pub fn match_benchmark_entities(entities: &[Entity], terms: &[String]) -> Vec<TermMatch> {
    let terms = fold_terms(terms);
    entities
        .iter()
        .filter_map(|e| {
            e.surface_forms().into_iter().find_map(|form| {
                first_term(form, &terms).map(|term| TermMatch {
                    id: e.identifier.clone(),
                    text: form.to_string(),
                    term: term.clone(),
                })
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CurateConfig {
    pub text: TextFilter,
    pub image: ImageFilter,
    pub dedup_threshold: f32,
    pub leak_threshold: f32,
}

impl Default for CurateConfig {
    fn default() -> Self {
        Self {
            text: TextFilter::default(),
            image: ImageFilter::default(),
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            leak_threshold: DEFAULT_DEDUP_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CurateOutcome {
    pub records: Vec<CuratedRecord>,
    pub report: Vec<ReportEntry>,
    pub clusters: Vec<DuplicateCluster>,
    pub leaks: Vec<Leak>,
    pub descriptors: Option<DescriptorSet>,
}

/// Apply the image filter (drops records) and the text filter (drops alt
/// texts).
pub fn apply_filters(records: Vec<ImageRecord>, config: &CurateConfig) -> (Vec<ImageRecord>, Vec<ReportEntry>) {
    let mut report = Vec::new();
    let mut kept = Vec::new();
    for mut r in records {
        if let Some(reason) = config.image.check(r.width, r.height) {
            report.push(ReportEntry {
                id: r.id.clone(),
                rule: "image".into(),
                reason: reason.as_str().into(),
                values: serde_json::json!({"width": r.width, "height": r.height}),
            });
            continue;
        }
        let before = std::mem::take(&mut r.alt_texts);
        for alt in before {
            match config.text.check(&alt) {
                Some(reason) => report.push(ReportEntry {
                    id: r.id.clone(),
                    rule: "text".into(),
                    reason: reason.as_str().into(),
                    values: serde_json::json!({"chars": alt.chars().count(), "prefix": alt.chars().take(80).collect::<String>()}),
                }),
                None => r.alt_texts.push(alt),
            }
        }
        kept.push(r);
    }
    (kept, report)
}

/// Run the whole curation step over harvested records stored under `root`.
pub fn curate(
    records: Vec<ImageRecord>,
    root: &Path,
    backend: &dyn DescriptorBackend,
    config: &CurateConfig,
    eval: Option<&DescriptorSet>,
    excluded_queries: &HashMap<String, String>,
) -> Result<CurateOutcome> {
    let (kept, filter_report) = apply_filters(records, config);
    let paths: Vec<(String, std::path::PathBuf)> = kept.iter().map(|r| (r.id.clone(), root.join(&r.path))).collect();
    let (set, failed) = compute_descriptors(&paths, backend);
    let mut outcome = dedup_and_flag(kept, set, &failed, config, eval, excluded_queries)?;
    outcome.report.splice(0..0, filter_report);
    Ok(outcome)
}

/// Everything after filtering: near-duplicate collapse over `set`, then
/// eval-leak and benchmark-term flags. `failed` lists images that have no
/// descriptor.
pub fn dedup_and_flag(
    kept: Vec<ImageRecord>,
    set: DescriptorSet,
    failed: &[(String, String)],
    config: &CurateConfig,
    eval: Option<&DescriptorSet>,
    excluded_queries: &HashMap<String, String>,
) -> Result<CurateOutcome> {
    let mut report = Vec::new();
    for (id, reason) in failed {
        log::warn!("no descriptor for {id}: {reason}");
        report.push(ReportEntry {
            id: id.clone(),
            rule: "descriptor".into(),
            reason: "failed".into(),
            values: serde_json::json!({"error": reason}),
        });
    }
    let dedup = dedup_records(kept, &set, config.dedup_threshold);
    for c in dedup.clusters.iter().filter(|c| c.member_ids.len() > 1) {
        for m in c.member_ids.iter().filter(|m| **m != c.retained_id) {
            report.push(ReportEntry {
                id: m.clone(),
                rule: "dedup".into(),
                reason: "duplicate".into(),
                values: serde_json::json!({"retained": c.retained_id}),
            });
        }
    }
    let mut records = dedup.records;

    let mut leaks = Vec::new();
    if let Some(eval) = eval {
        leaks = detect_eval_leaks(&set, eval, config.leak_threshold)?;
        let flagged: HashMap<&str, &Leak> = leaks.iter().map(|l| (l.dataset_id.as_str(), l)).collect();
        for r in &mut records {
            if let Some(l) = flagged.get(r.image.id.as_str()) {
                r.exclude(format!("eval_leak:{}", l.eval_id));
                report.push(ReportEntry {
                    id: r.image.id.clone(),
                    rule: "eval_leak".into(),
                    reason: "near_duplicate_of_eval_image".into(),
                    values: serde_json::json!({"eval_id": l.eval_id, "similarity": l.similarity}),
                });
            }
        }
    }

    if !excluded_queries.is_empty() {
        for r in &mut records {
            let all_excluded =
                !r.image.query_refs.is_empty() && r.image.query_refs.iter().all(|q| excluded_queries.contains_key(q));
            if all_excluded {
                let term = &excluded_queries[&r.image.query_refs[0]];
                r.exclude(format!("benchmark_term:{term}"));
                report.push(ReportEntry {
                    id: r.image.id.clone(),
                    rule: "benchmark_term".into(),
                    reason: "all_queries_excluded".into(),
                    values: serde_json::json!({"term": term}),
                });
            }
        }
    }

    Ok(CurateOutcome { records, report, clusters: dedup.clusters, leaks, descriptors: Some(set) })
}
