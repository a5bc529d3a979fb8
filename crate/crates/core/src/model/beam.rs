use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::ModelError;
use crate::rng::{self, Rng};
use crate::text::{BOS, EOS, PAD};

/// Anything that scores the next token given a prefix.
pub trait NextToken {
    fn vocab_size(&self) -> usize;
    /// Log-probabilities over the vocabulary for the token following `prefix`.
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>, ModelError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeamConfig {
    pub beam: usize,
    /// Maximum number of generated tokens (EOS included).
    pub max_len: usize,
    pub bos: usize,
    pub eos: usize,
    /// Tokens never generated.
    pub banned: Vec<usize>,
}

impl BeamConfig {
    pub fn new(beam: usize, max_len: usize) -> Self {
        Self { beam, max_len, bos: BOS, eos: EOS, banned: alloc::vec![PAD, BOS] }
    }
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self::new(5, 20)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Starts with BOS.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn start(bos: usize) -> Self {
        Self { tokens: alloc::vec![bos], log_prob: 0.0, finished: false }
    }

    /// Generated length, BOS excluded.
    pub fn len(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Generated tokens without BOS and the closing EOS.
    pub fn words(&self, eos: usize) -> &[usize] {
        let body = &self.tokens[1..];
        match body.last() {
            Some(&t) if t == eos => &body[..body.len() - 1],
            _ => body,
        }
    }

    fn extend(&self, token: usize, lp: f64, cfg: &BeamConfig) -> Self {
        let mut tokens = self.tokens.clone();
        tokens.push(token);
        let finished = token == cfg.eos || tokens.len() - 1 >= cfg.max_len;
        Self { tokens, log_prob: self.log_prob + lp, finished }
    }
}

fn allowed(cfg: &BeamConfig, token: usize, lp: f64) -> bool {
    !cfg.banned.contains(&token) && lp.is_finite()
}

fn by_score(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob.partial_cmp(&a.log_prob).unwrap_or(Ordering::Equal)
}

/// Length-terminated beam search over cumulative log-probabilities. Finished
/// hypotheses that rank within the top `beam` are retired; the search stops once the
/// best retired score cannot be beaten.
pub fn beam_search<M: NextToken + ?Sized>(model: &M, cfg: &BeamConfig) -> Result<Hypothesis, ModelError> {
    let beam = cfg.beam.max(1);
    let mut alive = alloc::vec![Hypothesis::start(cfg.bos)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    if cfg.max_len == 0 {
        return Ok(Hypothesis { finished: true, ..Hypothesis::start(cfg.bos) });
    }
    while !alive.is_empty() {
        let mut candidates = Vec::new();
        for h in &alive {
            let lps = model.log_probs(&h.tokens)?;
            for (t, &lp) in lps.iter().enumerate() {
                if allowed(cfg, t, lp) {
                    candidates.push(h.extend(t, lp, cfg));
                }
            }
        }
        candidates.sort_by(by_score);
        alive.clear();
        for (rank, c) in candidates.into_iter().enumerate() {
            if c.finished {
                if rank < beam {
                    finished.push(c);
                }
            } else if alive.len() < beam {
                alive.push(c);
            }
            if rank + 1 >= beam && alive.len() >= beam {
                break;
            }
        }
        let best_done = finished.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        match alive.first() {
            Some(best_alive) if best_alive.log_prob > best_done => {}
            _ => break,
        }
    }
    finished.sort_by(by_score);
    Ok(finished.into_iter().next().or_else(|| alive.into_iter().next()).unwrap_or(Hypothesis::start(cfg.bos)))
}

/// Argmax decoding; ties go to the lower token id.
pub fn greedy<M: NextToken + ?Sized>(model: &M, cfg: &BeamConfig) -> Result<Hypothesis, ModelError> {
    let mut h = Hypothesis::start(cfg.bos);
    while !h.finished && h.len() < cfg.max_len {
        let lps = model.log_probs(&h.tokens)?;
        let best = lps
            .iter()
            .enumerate()
            .filter(|&(t, &lp)| allowed(cfg, t, lp))
            .fold(None, |acc: Option<(usize, f64)>, (t, &lp)| match acc {
                Some((_, b)) if b >= lp => acc,
                _ => Some((t, lp)),
            });
        let Some((t, lp)) = best else { break };
        h = h.extend(t, lp, cfg);
    }
    Ok(h)
}

/// Ancestral sampling from the model distribution (banned tokens removed).
pub fn sample<M: NextToken + ?Sized>(model: &M, cfg: &BeamConfig, rng: &mut Rng) -> Result<Hypothesis, ModelError> {
    let mut h = Hypothesis::start(cfg.bos);
    while !h.finished && h.len() < cfg.max_len {
        let lps = model.log_probs(&h.tokens)?;
        let weights: Vec<f64> =
            lps.iter().enumerate().map(|(t, &lp)| if allowed(cfg, t, lp) { lp.exp() } else { 0.0 }).collect();
        if weights.iter().all(|&w| w <= 0.0) {
            break;
        }
        let t = rng::sample_categorical(&weights, rng);
        h = h.extend(t, lps[t], cfg);
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    /// Fixed next-token table keyed by the last token.
    struct Table(Vec<Vec<f64>>);

    impl NextToken for Table {
        fn vocab_size(&self) -> usize {
            self.0[0].len()
        }
        fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>, ModelError> {
            Ok(self.0[*prefix.last().unwrap()].iter().map(|p| p.ln()).collect())
        }
    }

    #[test]
    fn eos_first_gives_empty_caption() {
        // tokens: 0 pad, 1 bos, 2 eos, 3 word
        let m = Table(vec![vec![0.25; 4], vec![0.0, 0.0, 1.0, 0.0], vec![0.25; 4], vec![0.25; 4]]);
        let h = beam_search(&m, &BeamConfig::default()).unwrap();
        assert_eq!(h.tokens, vec![BOS, EOS]);
        assert!(h.finished);
        assert!(h.words(EOS).is_empty());
    }

    #[test]
    fn max_len_terminates() {
        let m = Table(vec![vec![0.0, 0.0, 0.1, 0.9]; 4]);
        let cfg = BeamConfig::new(3, 4);
        let h = beam_search(&m, &cfg).unwrap();
        assert_eq!(h.tokens, vec![BOS, 3, 3, 3, 3]);
        assert!(h.finished);
        assert_eq!(greedy(&m, &cfg).unwrap(), h);
    }

    #[test]
    fn beam_beats_greedy_trap() {
        // Greedy takes 3 (0.6) then must pay 0.6*0.3; 4 (0.4) leads to EOS with 0.4*1.0.
        let m = Table(vec![
            vec![0.2; 5],
            vec![0.0, 0.0, 0.0, 0.6, 0.4],
            vec![0.2; 5],
            vec![0.0, 0.0, 0.3, 0.35, 0.35],
            vec![0.0, 0.0, 1.0, 0.0, 0.0],
        ]);
        let g = greedy(&m, &BeamConfig::new(1, 2)).unwrap();
        assert_eq!(g.tokens[1], 3);
        let b = beam_search(&m, &BeamConfig::new(2, 2)).unwrap();
        assert_eq!(b.tokens, vec![BOS, 4, EOS]);
        assert!((b.log_prob - 0.4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sampling_respects_support() {
        let m = Table(vec![vec![0.0, 0.0, 0.5, 0.5]; 4]);
        let mut r = rng::seeded(3);
        for _ in 0..20 {
            let h = sample(&m, &BeamConfig::new(1, 5), &mut r).unwrap();
            assert!(h.tokens[1..].iter().all(|&t| t == 2 || t == 3));
            assert!(h.finished);
        }
    }
}
