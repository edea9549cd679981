//! Per-image text-label sampling: alt texts versus knowledge-graph texts.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::DatasetRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelPolicy {
    /// Share of draws that pick an alt text when the image has any.
    pub alt_mass: f64,
    /// Within the knowledge-graph branch.
    pub query_mass: f64,
    pub description_mass: f64,
    pub alias_mass: f64,
    /// Put the entity name into the alias pool as well.
    pub include_name_in_aliases: bool,
}

impl Default for LabelPolicy {
    fn default() -> Self {
        Self {
            alt_mass: 0.5,
            query_mass: 0.25,
            description_mass: 0.10,
            alias_mass: 0.65,
            include_name_in_aliases: false,
        }
    }
}

impl LabelPolicy {
    pub fn validate(&self) -> Result<()> {
        let kg = self.query_mass + self.description_mass + self.alias_mass;
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(in_unit(self.alt_mass)
            && in_unit(self.query_mass)
            && in_unit(self.description_mass)
            && in_unit(self.alias_mass))
        {
            return Err(Error::Config("label masses must lie in [0, 1]".into()));
        }
        if (kg - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("query, description and alias masses sum to {kg}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPool {
    pub alt_texts: Vec<String>,
    pub search_query: String,
    pub aliases: Vec<String>,
    pub descriptions: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    AltText,
    SearchQuery,
    Description,
    Alias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelOption {
    pub source: LabelSource,
    pub text: String,
    pub probability: f64,
}

/// Every pool item with its draw probability, in pool order. Empty
/// sections hand their mass on: descriptions to aliases, aliases to the
/// query, and a missing alt section gives the whole draw to the KG branch.
pub fn label_options(pool: &LabelPool, policy: &LabelPolicy) -> Result<Vec<LabelOption>> {
    if pool.search_query.trim().is_empty() {
        return Err(Error::Contract("label pool has an empty search query".into()));
    }
    let alt_mass = if pool.alt_texts.is_empty() { 0.0 } else { policy.alt_mass };
    let kg = 1.0 - alt_mass;
    let mut desc = policy.description_mass;
    let mut alias = policy.alias_mass;
    let mut query = policy.query_mass;
    if pool.descriptions.is_empty() {
        alias += desc;
        desc = 0.0;
    }
    if pool.aliases.is_empty() {
        query += alias;
        alias = 0.0;
    }
    let mut out = Vec::new();
    let mut section = |source, items: &[String], mass: f64| {
        if items.is_empty() || mass == 0.0 {
            return;
        }
        let each = mass / items.len() as f64;
        for t in items {
            out.push(LabelOption { source, text: t.clone(), probability: each });
        }
    };
    section(LabelSource::AltText, &pool.alt_texts, alt_mass);
    section(LabelSource::SearchQuery, std::slice::from_ref(&pool.search_query), kg * query);
    section(LabelSource::Description, &pool.descriptions, kg * desc);
    section(LabelSource::Alias, &pool.aliases, kg * alias);
    Ok(out)
}

/// Probability per distinct text.
pub fn label_distribution(pool: &LabelPool, policy: &LabelPolicy) -> Result<BTreeMap<String, f64>> {
    let mut map = BTreeMap::new();
    for o in label_options(pool, policy)? {
        *map.entry(o.text).or_insert(0.0) += o.probability;
    }
    Ok(map)
}

fn draw<'a, R: Rng + ?Sized>(options: &'a [LabelOption], rng: &mut R) -> &'a LabelOption {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for o in options {
        acc += o.probability;
        if u < acc {
            return o;
        }
    }
    options.last().expect("options are never empty")
}

pub fn sample_label<R: Rng + ?Sized>(pool: &LabelPool, policy: &LabelPolicy, rng: &mut R) -> Result<String> {
    let options = label_options(pool, policy)?;
    Ok(draw(&options, rng).text.clone())
}

/// Build a pool for one record. With several linked entities one is
/// picked uniformly; the search query is picked uniformly among that
/// entity's queries (entity-agnostic queries count for every entity).
pub fn record_pool<R: Rng + ?Sized>(record: &DatasetRecord, policy: &LabelPolicy, rng: &mut R) -> Option<LabelPool> {
    if record.search_queries.is_empty() {
        return None;
    }
    let kg = (!record.kg_texts.is_empty()).then(|| &record.kg_texts[rng.gen_range(0..record.kg_texts.len())]);
    let candidates: Vec<&str> = record
        .search_queries
        .iter()
        .filter(|q| match (kg, &q.entity_id) {
            (Some(k), Some(e)) => *e == k.entity_id,
            _ => true,
        })
        .map(|q| q.text.as_str())
        .collect();
    let candidates = if candidates.is_empty() {
        record.search_queries.iter().map(|q| q.text.as_str()).collect()
    } else {
        candidates
    };
    let search_query = candidates[rng.gen_range(0..candidates.len())].to_string();
    let (aliases, descriptions) = match kg {
        Some(k) => {
            let mut aliases = Vec::new();
            if policy.include_name_in_aliases {
                aliases.push(k.name.clone());
            }
            aliases.extend(k.aliases.iter().cloned());
            (aliases, k.descriptions.clone())
        }
        None => (Vec::new(), Vec::new()),
    };
    Some(LabelPool { alt_texts: record.alt_texts.clone(), search_query, aliases, descriptions })
}

/// One `(image id, label)` per non-excluded record.
pub fn sample_manifest<R: Rng + ?Sized>(
    records: &[DatasetRecord],
    policy: &LabelPolicy,
    rng: &mut R,
) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for r in records.iter().filter(|r| !r.excluded) {
        if let Some(pool) = record_pool(r, policy, rng) {
            out.push((r.id.clone(), sample_label(&pool, policy, rng)?));
        }
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn zipper() -> LabelPool {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        LabelPool {
            alt_texts: s(&["zip on a jacket", "close-up of a zipper"]),
            search_query: "zipper".into(),
            aliases: s(&["zip", "zip fastener", "zip-fastener", "fly", "slide fastener"]),
            descriptions: s(&["device for binding edges of fabric", "a fastener is a kind of zipper"]),
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn zipper_masses() {
        let o = label_options(&zipper(), &LabelPolicy::default()).unwrap();
        let p = |src| o.iter().filter(|x| x.source == src).map(|x| x.probability).collect::<Vec<_>>();
        assert!(p(LabelSource::AltText).iter().all(|x| close(*x, 0.25)));
        assert!(close(p(LabelSource::SearchQuery)[0], 0.125));
        assert!(p(LabelSource::Description).iter().all(|x| close(*x, 0.025)));
        assert!(p(LabelSource::Alias).iter().all(|x| close(*x, 0.065)));
        assert!(close(o.iter().map(|x| x.probability).sum(), 1.0));
    }

    #[test]
    fn folds() {
        let pool = LabelPool { alt_texts: vec!["a".into()], search_query: "q".into(), ..Default::default() };
        let d = label_distribution(&pool, &LabelPolicy::default()).unwrap();
        assert!(close(d["a"], 0.5) && close(d["q"], 0.5));
        let only = LabelPool { search_query: "q".into(), ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(sample_label(&only, &LabelPolicy::default(), &mut rng).unwrap(), "q");
        }
        let no_desc =
            LabelPool { search_query: "q".into(), aliases: vec!["x".into(), "y".into()], ..Default::default() };
        let d = label_distribution(&no_desc, &LabelPolicy::default()).unwrap();
        assert!(close(d["q"], 0.25) && close(d["x"], 0.375));
        assert!(label_options(&LabelPool::default(), &LabelPolicy::default()).is_err());
    }

    #[test]
    fn same_seed_same_sequence() {
        let draw_seq = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100).map(|_| sample_label(&zipper(), &LabelPolicy::default(), &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw_seq(0), draw_seq(0));
        assert_ne!(draw_seq(0), draw_seq(1));
    }

    fn arb_pool() -> impl Strategy<Value = LabelPool> {
        let list = |n| proptest::collection::vec("[a-z]{1,6}", 0..n);
        (list(4), list(7), list(4)).prop_map(|(alt_texts, aliases, descriptions)| LabelPool {
            alt_texts,
            search_query: "query".into(),
            aliases,
            descriptions,
        })
    }

    proptest! {
        #[test]
        fn masses_normalize(pool in arb_pool(), alt in 0.0f64..=1.0) {
            let policy = LabelPolicy { alt_mass: alt, ..Default::default() };
            let o = label_options(&pool, &policy).unwrap();
            let total: f64 = o.iter().map(|x| x.probability).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let alt_sum: f64 = o.iter().filter(|x| x.source == LabelSource::AltText).map(|x| x.probability).sum();
            if !pool.alt_texts.is_empty() && alt < 1.0 {
                prop_assert!((alt_sum - alt).abs() < 1e-12);
            }
            for src in [LabelSource::AltText, LabelSource::Alias, LabelSource::Description] {
                let ps: Vec<f64> = o.iter().filter(|x| x.source == src).map(|x| x.probability).collect();
                prop_assert!(ps.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-15));
            }
        }
    }
}
