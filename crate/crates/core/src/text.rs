//! Text normalization shared by every identity and similarity rule.

use std::collections::BTreeSet;

/// Case-folds, strips punctuation and collapses whitespace.
///
/// `"Layer  Normalization."` and `"layer normalization"` normalize to the same
/// string, which is what canonical keys and fuzzy title matching compare.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(ch.to_lowercase());
        } else if ch.is_whitespace() || ch == '-' || ch == '_' || ch == '/' {
            pending_space = true;
        }
        // remaining punctuation is dropped without introducing a break
    }
    out
}

pub fn tokens(text: &str) -> BTreeSet<String> {
    normalize(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Token-set Jaccard similarity over normalized text. Two empty texts are identical.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let ta = tokens(a);
    let tb = tokens(b);
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let inter = ta.intersection(&tb).count() as f64;
    let union = ta.union(&tb).count() as f64;
    inter / union
}

/// Normalized Levenshtein ratio over normalized text, in `[0, 1]`.
pub fn title_similarity(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(&normalize(a), &normalize(b))
}

/// 64-bit FNV-1a. Stable across runs and platforms, used for seed derivation.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// SplitMix64 finalizer, used to fold several seed components together.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn combine_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0u64, |acc, p| mix64(acc ^ mix64(*p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_folds_case_punctuation_and_spacing() {
        assert_eq!(normalize("Attention Is All You Need"), "attention is all you need");
        assert_eq!(normalize("Attention is all you need."), "attention is all you need");
        assert_eq!(normalize("  Layer\tNormalization  "), "layer normalization");
        assert_eq!(normalize("PPO-optimizer"), "ppo optimizer");
        assert_eq!(normalize("...!"), "");
    }

    #[test]
    fn jaccard_bounds() {
        assert_eq!(jaccard("a b c", "c b a"), 1.0);
        assert_eq!(jaccard("a b", "c d"), 0.0);
        assert!((jaccard("a b c", "a b d") - 0.5).abs() < 1e-12);
        assert_eq!(jaccard("", ""), 1.0);
    }

    #[test]
    fn title_similarity_identical_after_normalization() {
        assert_eq!(
            title_similarity("Attention Is All You Need", "attention is all you need."),
            1.0
        );
        assert!(title_similarity("Deep Residual Learning", "Graph Attention Networks") < 0.5);
    }

    #[test]
    fn seed_mixing_is_order_sensitive() {
        assert_ne!(combine_seed(&[1, 2]), combine_seed(&[2, 1]));
        assert_eq!(combine_seed(&[1, 2]), combine_seed(&[1, 2]));
    }
}
