//! Candidate causes for a localized group, ranked by tag enrichment.
//!
//! Each tag seen in the population is scored by the hypergeometric
//! probability of drawing at least as many tagged sensors as were selected,
//! when drawing `|selected|` sensors uniformly without replacement.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::ser::{Serialize, SerializeSeq, Serializer};

use crate::error::{Error, Result};
use crate::ingest::LabelRegistry;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TagEnrichment {
    pub tag: String,
    pub hits_in_selected: usize,
    pub hits_in_population: usize,
    pub enrichment: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CauseReport {
    /// Tags in rank order: ascending p-value, then descending enrichment,
    /// then tag name.
    pub causes: Vec<TagEnrichment>,
    pub untagged_selected: usize,
}

impl CauseReport {
    pub fn top(&self) -> Option<&TagEnrichment> {
        self.causes.first()
    }
}

/// Serializes as the ranked array of causes.
impl Serialize for CauseReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.causes.len()))?;
        for c in &self.causes {
            seq.serialize_element(c)?;
        }
        seq.end()
    }
}

/// A tag and its hierarchical prefixes: `FAN6/VAV3` → `FAN6`, `FAN6/VAV3`.
pub fn expand_tag(tag: &str) -> Vec<String> {
    let parts: Vec<&str> = tag
        .split('/')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    (1..=parts.len()).map(|n| parts[..n].join("/")).collect()
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    table.push(0.0);
    for i in 1..=n {
        acc += (i as f64).ln();
        table.push(acc);
    }
    table
}

/// `P(X ≥ observed)` for `X ~ Hypergeometric(population, successes, draws)`.
pub fn hypergeometric_upper_tail(
    population: usize,
    successes: usize,
    draws: usize,
    observed: usize,
) -> f64 {
    assert!(successes <= population && draws <= population);
    let lo = (draws + successes).saturating_sub(population);
    let hi = draws.min(successes);
    if observed <= lo {
        return 1.0;
    }
    if observed > hi {
        return 0.0;
    }
    let lf = ln_factorials(population);
    let ln_choose = |n: usize, k: usize| lf[n] - lf[k] - lf[n - k];
    let ln_total = ln_choose(population, draws);
    let tail: f64 = (observed..=hi)
        .map(|x| {
            (ln_choose(successes, x) + ln_choose(population - successes, draws - x) - ln_total)
                .exp()
        })
        .sum();
    tail.clamp(0.0, 1.0)
}

pub fn enrich<S: AsRef<str>, P: AsRef<str>>(
    selected: &[S],
    registry: &LabelRegistry,
    population: &[P],
) -> Result<CauseReport> {
    if selected.is_empty() {
        return Err(Error::InvalidParameter("empty selection".into()));
    }
    let pop: HashSet<&str> = population.iter().map(AsRef::as_ref).collect();
    if pop.len() != population.len() {
        return Err(Error::InvalidParameter(
            "population has duplicate ids".into(),
        ));
    }
    let sel: BTreeSet<&str> = selected.iter().map(AsRef::as_ref).collect();
    if sel.len() != selected.len() {
        return Err(Error::InvalidParameter(
            "selection has duplicate ids".into(),
        ));
    }
    if let Some(stray) = sel.iter().find(|id| !pop.contains(*id)) {
        return Err(Error::InvalidParameter(format!(
            "selected sensor `{stray}` is not in the population"
        )));
    }

    let tags_of = |id: &str| -> BTreeSet<String> {
        registry
            .get(id)
            .map(|tags| tags.iter().flat_map(|t| expand_tag(t)).collect())
            .unwrap_or_default()
    };

    // tag -> (population hits, selected hits)
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for id in population {
        let id = id.as_ref();
        let chosen = sel.contains(id);
        for tag in tags_of(id) {
            let entry = counts.entry(tag).or_default();
            entry.0 += 1;
            if chosen {
                entry.1 += 1;
            }
        }
    }
    let untagged_selected = sel.iter().filter(|id| registry.get(id).is_none()).count();

    let n = population.len();
    let draws = sel.len();
    let mut causes: Vec<TagEnrichment> = counts
        .into_iter()
        .map(|(tag, (in_pop, in_sel))| {
            let enrichment = if in_pop == 0 {
                0.0
            } else {
                (in_sel as f64 / draws as f64) / (in_pop as f64 / n as f64)
            };
            TagEnrichment {
                tag,
                hits_in_selected: in_sel,
                hits_in_population: in_pop,
                enrichment,
                p_value: hypergeometric_upper_tail(n, in_pop, draws, in_sel),
            }
        })
        .collect();
    causes.sort_by(|a, b| {
        a.p_value
            .total_cmp(&b.p_value)
            .then(b.enrichment.total_cmp(&a.enrichment))
            .then_with(|| a.tag.cmp(&b.tag))
    });
    Ok(CauseReport {
        causes,
        untagged_selected,
    })
}
