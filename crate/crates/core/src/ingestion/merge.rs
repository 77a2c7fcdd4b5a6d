use std::cmp::Ordering;
use std::collections::BTreeMap;

use petgraph::unionfind::UnionFind;

use super::{PaperRecord, TITLE_MERGE_THRESHOLD};
use crate::text::title_similarity;

/// Richest record first: longest abstract, then longest full text, then title.
fn richness(a: &PaperRecord, b: &PaperRecord) -> Ordering {
    b.abstract_text
        .len()
        .cmp(&a.abstract_text.len())
        .then_with(|| {
            let la = a.full_text.as_ref().map_or(0, String::len);
            let lb = b.full_text.as_ref().map_or(0, String::len);
            lb.cmp(&la)
        })
        .then_with(|| a.title.cmp(&b.title))
        .then_with(|| {
            let ja = serde_json::to_string(a).unwrap_or_default();
            let jb = serde_json::to_string(b).unwrap_or_default();
            ja.cmp(&jb)
        })
}

fn fold(mut members: Vec<PaperRecord>) -> PaperRecord {
    members.sort_by(richness);
    let mut iter = members.into_iter();
    let mut out = iter.next().expect("classes are non-empty");
    for r in iter {
        for a in r.authors {
            if !out.authors.contains(&a) {
                out.authors.push(a);
            }
        }
        if out.venue.is_empty() {
            out.venue = r.venue;
        }
        if out.url.is_empty() {
            out.url = r.url;
        }
        if out.full_text.is_none() {
            out.full_text = r.full_text;
        }
        out.code_available = out.code_available.max(r.code_available);
        if let Some(signals) = r.review_signals {
            let mine = out.review_signals.get_or_insert_with(Vec::new);
            for s in signals {
                if !mine.contains(&s) {
                    mine.push(s);
                }
            }
        }
        out.sources.extend(r.sources);
    }
    out.sources.sort();
    out.sources.dedup();
    out
}

/// Merges records whose normalized titles are more than 0.9 similar
/// (normalized Levenshtein), closed transitively. The richest abstract wins
/// and the other fields are unioned. Output is sorted by normalized title.
pub fn merge_dedup(records: Vec<PaperRecord>) -> Vec<PaperRecord> {
    let n = records.len();
    let mut uf = UnionFind::<usize>::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if title_similarity(&records[i].title, &records[j].title) > TITLE_MERGE_THRESHOLD {
                uf.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<PaperRecord>> = BTreeMap::new();
    for (i, r) in records.into_iter().enumerate() {
        groups.entry(uf.find(i)).or_default().push(r);
    }
    let mut out: Vec<PaperRecord> = groups.into_values().map(fold).collect();
    out.sort_by(|a, b| {
        a.normalized_title()
            .cmp(&b.normalized_title())
            .then_with(|| richness(a, b))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(title: &str, abs: &str) -> PaperRecord {
        let mut r = PaperRecord::new(title, 2017);
        r.abstract_text = abs.into();
        r
    }

    #[test]
    fn case_and_punctuation_variants_merge() {
        let mut a = rec("Attention Is All You Need", "short");
        a.authors = vec!["Vaswani".into()];
        a.sources = vec!["neurips".into()];
        let mut b = rec("Attention is all you need.", "the longer abstract");
        b.authors = vec!["Shazeer".into()];
        b.sources = vec!["arxiv".into()];
        b.code_available = 7;
        let out = merge_dedup(vec![a, b]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].abstract_text, "the longer abstract");
        assert_eq!(out[0].authors, ["Shazeer", "Vaswani"]);
        assert_eq!(out[0].sources, ["arxiv", "neurips"]);
        assert_eq!(out[0].code_available, 7);
    }

    #[test]
    fn distinct_titles_stay_apart() {
        let out = merge_dedup(vec![rec("Deep residual learning", ""), rec("Proximal policy optimization", "")]);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn idempotent_on_small_case() {
        let once = merge_dedup(vec![rec("A title here", "x"), rec("A title here!", "yy"), rec("Other", "")]);
        assert_eq!(merge_dedup(once.clone()), once);
    }
}
