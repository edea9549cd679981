//! Fixture knowledge graphs with Wikidata-shaped RDF, used by tests, the
//! examples and the dry run.

use oxigraph::model::vocab::xsd;
use oxigraph::model::{GraphName, Literal, NamedNode, Quad};
use oxigraph::store::Store;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::endpoint::OxigraphEndpoint;
use super::sparql::ENTITY_PREFIX;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    SubclassOf,
    ParentTaxon,
    InstanceOf,
}

impl EdgeKind {
    fn property(self) -> &'static str {
        match self {
            EdgeKind::SubclassOf => "P279",
            EdgeKind::ParentTaxon => "P171",
            EdgeKind::InstanceOf => "P31",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureNode {
    pub id: String,
    pub label: String,
    /// Language tag of `label`; only `en` labels are visible to extraction.
    #[serde(default = "en")]
    pub label_lang: String,
    #[serde(default)]
    pub description: Option<String>,
    pub sitelinks: u64,
    #[serde(default)]
    pub aliases: Vec<String>,
}

fn en() -> String {
    "en".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEdge {
    pub from: String,
    pub kind: EdgeKind,
    pub to: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureGraph {
    pub nodes: Vec<FixtureNode>,
    pub edges: Vec<FixtureEdge>,
}

fn iri(s: &str) -> NamedNode {
    NamedNode::new_unchecked(s)
}

fn entity(id: &str) -> NamedNode {
    iri(&format!("{ENTITY_PREFIX}{id}"))
}

const WORDS: &[&str] = &[
    "red", "stone", "river", "lamp", "falcon", "fern", "wheel", "boat", "maple", "drum", "tower", "glass", "salt",
    "hammer", "moss", "orchid", "whale", "cart", "rope", "bell",
];

impl FixtureGraph {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("fixture graph: {e}")))
    }

    /// Random DAG-ish graph over `n` nodes with occasional cycles, instance-of
    /// edges, missing English labels and messy aliases.
    pub fn random(seed: u64, n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = FixtureGraph::default();
        for i in 1..=n {
            let id = format!("Q{i}");
            let w1 = WORDS.choose(&mut rng).unwrap();
            let w2 = WORDS.choose(&mut rng).unwrap();
            let label = format!("{w1} {w2} {i}");
            let mut aliases = Vec::new();
            for _ in 0..rng.gen_range(0..4) {
                let a = match rng.gen_range(0..5) {
                    0 => label.to_uppercase(),
                    1 => format!("{w2} {i}"),
                    _ => format!("{} {i}", WORDS.choose(&mut rng).unwrap()),
                };
                aliases.push(a);
            }
            g.nodes.push(FixtureNode {
                id: id.clone(),
                label,
                label_lang: if rng.gen_bool(0.05) { "de".into() } else { "en".into() },
                description: rng.gen_bool(0.7).then(|| format!("fixture node {i}")),
                sitelinks: rng.gen_range(0..20),
                aliases,
            });
            if i > 1 {
                for _ in 0..rng.gen_range(1..=2) {
                    let parent = rng.gen_range(1..i);
                    let kind = match rng.gen_range(0..20) {
                        0..=11 => EdgeKind::SubclassOf,
                        12..=15 => EdgeKind::ParentTaxon,
                        _ => EdgeKind::InstanceOf,
                    };
                    g.edges.push(FixtureEdge { from: id.clone(), kind, to: format!("Q{parent}") });
                }
            }
            if i > 3 && rng.gen_bool(0.01) {
                // back edge -> cycle
                let child = rng.gen_range(1..i);
                g.edges.push(FixtureEdge { from: format!("Q{child}"), kind: EdgeKind::SubclassOf, to: id });
            }
        }
        g
    }

    pub fn quads(&self) -> Vec<Quad> {
        let label = iri("http://www.w3.org/2000/01/rdf-schema#label");
        let desc = iri("http://schema.org/description");
        let about = iri("http://schema.org/about");
        let alt = iri("http://www.w3.org/2004/02/skos/core#altLabel");
        let sitelinks = iri("http://wikiba.se/ontology#sitelinks");
        let g = GraphName::DefaultGraph;
        let mut quads = Vec::new();
        for n in &self.nodes {
            let s = entity(&n.id);
            quads.push(Quad::new(
                s.clone(),
                label.clone(),
                Literal::new_language_tagged_literal_unchecked(&n.label, &n.label_lang),
                g.clone(),
            ));
            if let Some(d) = &n.description {
                quads.push(Quad::new(
                    s.clone(),
                    desc.clone(),
                    Literal::new_language_tagged_literal_unchecked(d, "en"),
                    g.clone(),
                ));
            }
            for a in &n.aliases {
                quads.push(Quad::new(
                    s.clone(),
                    alt.clone(),
                    Literal::new_language_tagged_literal_unchecked(a, "en"),
                    g.clone(),
                ));
            }
            let data = iri(&format!("https://www.wikidata.org/wiki/Special:EntityData/{}", n.id));
            quads.push(Quad::new(data.clone(), about.clone(), s.clone(), g.clone()));
            quads.push(Quad::new(
                data,
                sitelinks.clone(),
                Literal::new_typed_literal(n.sitelinks.to_string(), xsd::INTEGER),
                g.clone(),
            ));
        }
        for e in &self.edges {
            quads.push(Quad::new(
                entity(&e.from),
                iri(&format!("http://www.wikidata.org/prop/direct/{}", e.kind.property())),
                entity(&e.to),
                g.clone(),
            ));
        }
        quads
    }

    pub fn to_store(&self) -> Result<Store> {
        let store = Store::new().map_err(|e| Error::Config(format!("oxigraph store: {e}")))?;
        for q in self.quads() {
            store.insert(&q).map_err(|e| Error::Config(format!("oxigraph insert: {e}")))?;
        }
        Ok(store)
    }

    pub fn endpoint(&self) -> Result<OxigraphEndpoint> {
        Ok(OxigraphEndpoint::new(self.to_store()?))
    }
}
