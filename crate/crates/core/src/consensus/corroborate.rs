use std::collections::{BTreeMap, BTreeSet};

use super::{uncertainty_for, CorroboratedGap, GapCandidate};

/// Threshold for the optional similarity matcher.
pub const SIMILARITY_THRESHOLD: f64 = 0.8;

pub type Matcher<'a> = &'a (dyn Fn(&str, &str) -> f64 + Sync);

/// Groups round-2 candidates by canonical key and tags each group with the
/// number of distinct proposers. An agent naming the same gap twice counts
/// once.
pub fn corroborate(round2: &[Vec<GapCandidate>]) -> Vec<CorroboratedGap> {
    corroborate_with(round2, None)
}

/// As [`corroborate`], additionally joining key groups whose descriptions
/// score at least `threshold` under `matcher`.
pub fn corroborate_with(round2: &[Vec<GapCandidate>], matcher: Option<(Matcher<'_>, f64)>) -> Vec<CorroboratedGap> {
    let mut groups: BTreeMap<&str, Vec<&GapCandidate>> = BTreeMap::new();
    for c in round2.iter().flatten() {
        groups.entry(c.canonical_key.as_str()).or_default().push(c);
    }
    let keys: Vec<&str> = groups.keys().copied().collect();
    let mut parent: Vec<usize> = (0..keys.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    if let Some((sim, threshold)) = matcher {
        let reps: Vec<&str> = keys.iter().map(|k| groups[k][0].description.as_str()).collect();
        for i in 0..keys.len() {
            for j in i + 1..keys.len() {
                if sim(reps[i], reps[j]) >= threshold {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    // the lexicographically smallest key names the group
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut joined: BTreeMap<usize, Vec<&GapCandidate>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        let root = find(&mut parent, i);
        joined.entry(root).or_default().extend(groups[k].iter().copied());
    }
    joined
        .into_iter()
        .map(|(root, members)| {
            let proposers: BTreeSet<&str> = members.iter().map(|c| c.proposer.as_str()).collect();
            let evidence: BTreeSet<_> = members.iter().flat_map(|c| c.evidence.iter().copied()).collect();
            let first = members[0];
            CorroboratedGap {
                key: keys[root].to_owned(),
                description: first.description.clone(),
                gap_type: first.gap_type,
                evidence: evidence.into_iter().collect(),
                multiplicity: proposers.len(),
                uncertainty: uncertainty_for(proposers.len()),
                proposers: proposers.into_iter().map(str::to_owned).collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world_model::{GapType, Uncertainty};

    fn cand(desc: &str, agent: &str) -> GapCandidate {
        GapCandidate::new(desc, GapType::Methods, agent, 2)
    }

    #[test]
    fn agents_one_and_three_verify() {
        let sets = vec![vec![cand("G", "a1")], vec![], vec![cand("g.", "a3")]];
        let out = corroborate(&sets);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].uncertainty, Uncertainty::Verified);
        assert_eq!(out[0].proposers, ["a1", "a3"]);
    }

    #[test]
    fn single_proposer_stays_unverified() {
        let out = corroborate(&[vec![cand("only me", "a1")], vec![cand("other", "a2")]]);
        assert!(out.iter().all(|g| g.uncertainty == Uncertainty::Unverified && g.multiplicity == 1));
    }

    #[test]
    fn repeated_by_one_agent_counts_once() {
        let out = corroborate(&[vec![cand("g", "a1"), cand("G", "a1")]]);
        assert_eq!(out[0].multiplicity, 1);
        assert_eq!(out[0].uncertainty, Uncertainty::Unverified);
    }

    #[test]
    fn exhaustive_subsets_of_five() {
        for mask in 0u32..32 {
            let sets: Vec<Vec<GapCandidate>> = (0..5)
                .map(|k| {
                    if mask & (1 << k) != 0 {
                        vec![cand("target gap", &format!("a{k}"))]
                    } else {
                        vec![cand(&format!("noise {k}"), &format!("a{k}"))]
                    }
                })
                .collect();
            let out = corroborate(&sets);
            let n = mask.count_ones() as usize;
            let target = out.iter().find(|g| g.key == "target gap");
            match target {
                None => assert_eq!(n, 0),
                Some(g) => {
                    assert_eq!(g.multiplicity, n);
                    assert_eq!(g.uncertainty == Uncertainty::Verified, n >= 2, "mask {mask:05b}");
                }
            }
        }
    }

    #[test]
    fn matcher_joins_near_duplicates() {
        let sets = vec![
            vec![cand("missing ablation of the encoder", "a1")],
            vec![cand("missing ablations of the encoder", "a2")],
        ];
        assert_eq!(corroborate(&sets).len(), 2);
        let sim = crate::text::title_similarity;
        let out = corroborate_with(&sets, Some((&sim, SIMILARITY_THRESHOLD)));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].uncertainty, Uncertainty::Verified);
        assert_eq!(out[0].key, "missing ablation of the encoder");
    }
}
