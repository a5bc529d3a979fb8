//! Caption metrics: BLEU@N, ROUGE-L and CIDEr / CIDEr-D.
//!
//! Sentences are token slices. Scores are pure functions of their inputs; CIDEr's
//! document frequencies live in an explicit [`CiderIdf`] table so a reward can keep
//! one table fixed across training.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::MetricError;

pub type Tokens = [alloc::string::String];

/// Counts of all n-grams of one order in a sentence.
pub fn ngram_counts(tokens: &Tokens, n: usize) -> BTreeMap<&Tokens, usize> {
    let mut counts = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and total candidate n-grams.
pub fn modified_precision<R: AsRef<Tokens>>(candidate: &Tokens, references: &[R], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let mut max_ref: BTreeMap<&Tokens, usize> = BTreeMap::new();
    for r in references {
        for (g, c) in ngram_counts(r.as_ref(), n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let clipped = cand.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
    (clipped, cand.values().sum())
}

/// Reference length closest to `len` (shorter wins ties).
fn closest_ref_len<R: AsRef<Tokens>>(len: usize, references: &[R]) -> usize {
    references
        .iter()
        .map(|r| r.as_ref().len())
        .min_by_key(|&r| (r.abs_diff(len), r))
        .unwrap_or(0)
}

fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 {
        0.0
    } else if cand_len > ref_len {
        1.0
    } else {
        Float::exp(1.0 - ref_len as f64 / cand_len as f64)
    }
}

/// Sentence BLEU@N without smoothing. An empty candidate scores 0.
pub fn bleu<R: AsRef<Tokens>>(candidate: &Tokens, references: &[R], n: usize) -> f64 {
    sentence_bleu(candidate, references, n, false)
}

/// Sentence BLEU@N with add-one smoothing on orders above 1 (for debugging single
/// sentences, where higher-order matches are often absent).
pub fn bleu_smoothed<R: AsRef<Tokens>>(candidate: &Tokens, references: &[R], n: usize) -> f64 {
    sentence_bleu(candidate, references, n, true)
}

fn sentence_bleu<R: AsRef<Tokens>>(candidate: &Tokens, references: &[R], n: usize, smooth: bool) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let (mut hit, mut total) = modified_precision(candidate, references, order);
        if smooth && order > 1 {
            hit += 1;
            total += 1;
        }
        if hit == 0 || total == 0 {
            return 0.0;
        }
        log_sum += Float::ln(hit as f64 / total as f64);
    }
    brevity_penalty(candidate.len(), closest_ref_len(candidate.len(), references))
        * Float::exp(log_sum / n as f64)
}

/// Corpus BLEU@1..=N: clipped counts and lengths pooled over all sentences before the
/// geometric mean. Entry `i` is BLEU@(i+1).
pub fn corpus_bleu<C, R>(candidates: &[C], references: &[Vec<R>], n: usize) -> Result<Vec<f64>, MetricError>
where
    C: AsRef<Tokens>,
    R: AsRef<Tokens>,
{
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch { candidates: candidates.len(), references: references.len() });
    }
    let mut hits = vec![0usize; n];
    let mut totals = vec![0usize; n];
    let (mut cand_len, mut ref_len) = (0, 0);
    for (c, refs) in candidates.iter().zip(references) {
        let c = c.as_ref();
        for order in 1..=n {
            let (h, t) = modified_precision(c, refs, order);
            hits[order - 1] += h;
            totals[order - 1] += t;
        }
        cand_len += c.len();
        ref_len += closest_ref_len(c.len(), refs);
    }
    let bp = brevity_penalty(cand_len, ref_len);
    let mut out = Vec::with_capacity(n);
    let mut log_sum = 0.0;
    let mut zero = false;
    for order in 1..=n {
        let (h, t) = (hits[order - 1], totals[order - 1]);
        if h == 0 || t == 0 {
            zero = true;
        } else {
            log_sum += Float::ln(h as f64 / t as f64);
        }
        out.push(if zero { 0.0 } else { bp * Float::exp(log_sum / order as f64) });
    }
    Ok(out)
}

pub fn lcs_len(a: &Tokens, b: &Tokens) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// LCS-based F-measure (β = 1.2), best over references.
pub fn rouge_l<R: AsRef<Tokens>>(candidate: &Tokens, references: &[R]) -> f64 {
    let beta2 = ROUGE_BETA * ROUGE_BETA;
    references
        .iter()
        .map(|r| {
            let r = r.as_ref();
            let lcs = lcs_len(candidate, r);
            if lcs == 0 {
                return 0.0;
            }
            let p = lcs as f64 / candidate.len() as f64;
            let rec = lcs as f64 / r.len() as f64;
            (1.0 + beta2) * p * rec / (rec + beta2 * p)
        })
        .fold(0.0, f64::max)
}

pub const CIDER_MAX_N: usize = 4;
pub const CIDER_SIGMA: f64 = 6.0;

/// Document frequencies of 1..4-grams over a reference corpus (one document per image).
#[derive(Debug, Clone, PartialEq)]
pub struct CiderIdf {
    doc_freq: BTreeMap<Vec<alloc::string::String>, usize>,
    images: usize,
}

impl CiderIdf {
    pub fn from_references<R: AsRef<Tokens>>(corpus: &[Vec<R>]) -> Result<Self, MetricError> {
        if corpus.is_empty() {
            return Err(MetricError::EmptyCorpus);
        }
        let mut doc_freq = BTreeMap::new();
        for refs in corpus {
            let mut seen: BTreeSet<&Tokens> = BTreeSet::new();
            for r in refs {
                for n in 1..=CIDER_MAX_N {
                    seen.extend(ngram_counts(r.as_ref(), n).into_keys());
                }
            }
            for g in seen {
                *doc_freq.entry(g.to_vec()).or_insert(0) += 1;
            }
        }
        Ok(Self { doc_freq, images: corpus.len() })
    }

    pub fn images(&self) -> usize {
        self.images
    }

    pub fn document_frequency(&self, gram: &Tokens) -> usize {
        self.doc_freq.get(gram).copied().unwrap_or(0)
    }

    /// `ln(|I| / max(1, df))`.
    pub fn idf(&self, gram: &Tokens) -> f64 {
        Float::ln(self.images as f64 / self.document_frequency(gram).max(1) as f64)
    }

    fn vector<'a>(&self, tokens: &'a Tokens, n: usize) -> (BTreeMap<&'a Tokens, f64>, f64) {
        let v: BTreeMap<&Tokens, f64> =
            ngram_counts(tokens, n).into_iter().map(|(g, c)| (g, c as f64 * self.idf(g))).collect();
        let norm = Float::sqrt(v.values().map(|x| x * x).sum::<f64>());
        (v, norm)
    }

    fn score<R: AsRef<Tokens>>(&self, candidate: &Tokens, references: &[R], penalized: bool) -> f64 {
        if references.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for r in references {
            let r = r.as_ref();
            let mut per_n = 0.0;
            for n in 1..=CIDER_MAX_N {
                let (vc, nc) = self.vector(candidate, n);
                let (vr, nr) = self.vector(r, n);
                if nc == 0.0 || nr == 0.0 {
                    continue;
                }
                let dot: f64 = vc
                    .iter()
                    .filter_map(|(g, &x)| {
                        vr.get(g).map(|&y| if penalized { x.min(y) * y } else { x * y })
                    })
                    .sum();
                let mut sim = dot / (nc * nr);
                if penalized {
                    let delta = candidate.len() as f64 - r.len() as f64;
                    sim *= Float::exp(-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA));
                }
                per_n += sim;
            }
            total += per_n / CIDER_MAX_N as f64;
        }
        10.0 * total / references.len() as f64
    }

    /// Plain CIDEr of one candidate against its references, in [0, 10].
    pub fn cider<R: AsRef<Tokens>>(&self, candidate: &Tokens, references: &[R]) -> f64 {
        self.score(candidate, references, false)
    }

    /// CIDEr-D: clipped TF-IDF matches with a Gaussian length penalty (σ = 6).
    pub fn cider_d<R: AsRef<Tokens>>(&self, candidate: &Tokens, references: &[R]) -> f64 {
        self.score(candidate, references, true)
    }
}

/// Per-image plain CIDEr and their mean, with document frequencies taken from the
/// given references.
pub fn cider<C, R>(candidates: &[C], references: &[Vec<R>]) -> Result<(Vec<f64>, f64), MetricError>
where
    C: AsRef<Tokens>,
    R: AsRef<Tokens>,
{
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch { candidates: candidates.len(), references: references.len() });
    }
    let idf = CiderIdf::from_references(references)?;
    let scores: Vec<f64> =
        candidates.iter().zip(references).map(|(c, r)| idf.cider(c.as_ref(), r)).collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok((scores, mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::{String, ToString};

    fn s(text: &str) -> Vec<String> {
        text.split_whitespace().map(ToString::to_string).collect()
    }

    #[test]
    fn bleu_perfect_and_disjoint() {
        let r = s("a man riding a wave on a surfboard");
        assert!((bleu(&r, &[r.clone()], 4) - 1.0).abs() < 1e-12);
        assert_eq!(bleu(&s("dogs bark loudly"), &[r.clone()], 4), 0.0);
        assert_eq!(bleu(&[], &[r], 4), 0.0);
    }

    #[test]
    fn clipped_unigram_precision() {
        let cand = s("the the the the the the the");
        let (hit, total) = modified_precision(&cand, &[s("the cat is on the mat")], 1);
        assert_eq!((hit, total), (2, 7));
    }

    #[test]
    fn brevity_uses_closest_reference() {
        // Candidate of length 4 against refs of length 3 and 6: closest is 3 -> no penalty.
        let c = s("a b c d");
        let b = bleu(&c, &[s("a b c"), s("a b c d e f")], 1);
        assert!((b - 1.0).abs() < 1e-12);
        // Against a single length-8 ref: BP = exp(1 - 8/4).
        let b = bleu(&c, &[s("a b c d x x x x")], 1);
        assert!((b - (-1f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn rouge_examples() {
        let c = s("a b c d");
        assert!((rouge_l(&c, &[c.clone()]) - 1.0).abs() < 1e-12);
        assert_eq!(rouge_l(&c, &[s("x y")]), 0.0);
        // LCS 3, P = R = 3/4 -> F_beta = 3/4 regardless of beta.
        let f = rouge_l(&c, &[s("a c d e")]);
        let (p, r, b2) = (0.75, 0.75, 1.44);
        assert!((f - (1.0 + b2) * p * r / (r + b2 * p)).abs() < 1e-12);
        assert!((f - 0.75).abs() < 1e-12);
    }

    #[test]
    fn cider_disjoint_corpus_is_ten() {
        let refs = vec![vec![s("a red ball on grass")], vec![s("two dogs chase each other")]];
        let cands = vec![s("a red ball on grass"), s("two dogs chase each other")];
        let (scores, mean) = cider(&cands, &refs).unwrap();
        for v in scores {
            assert!((v - 10.0).abs() < 1e-6);
        }
        assert!((mean - 10.0).abs() < 1e-6);
    }

    #[test]
    fn cider_zero_without_overlap() {
        let refs = vec![vec![s("a red ball")], vec![s("two dogs")]];
        let idf = CiderIdf::from_references(&refs).unwrap();
        assert_eq!(idf.cider(&s("blue car"), &refs[0]), 0.0);
        assert_eq!(idf.cider_d(&s("blue car"), &refs[0]), 0.0);
        assert_eq!(CiderIdf::from_references::<Vec<String>>(&[]), Err(MetricError::EmptyCorpus));
    }

    #[test]
    fn cider_d_penalizes_length() {
        let refs = vec![vec![s("a red ball on the grass")], vec![s("two dogs chase each other")]];
        let idf = CiderIdf::from_references(&refs).unwrap();
        let exact = idf.cider_d(&s("a red ball on the grass"), &refs[0]);
        assert!((exact - 10.0).abs() < 1e-9);
        let longer = idf.cider_d(&s("a red ball on the grass a red ball on the grass"), &refs[0]);
        assert!(longer < idf.cider(&s("a red ball on the grass a red ball on the grass"), &refs[0]));
    }
}
