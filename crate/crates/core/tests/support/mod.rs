//! Independent reference computations shared by the integration tests and the
//! acceptance runner. Nothing here calls the code under test to produce an expected value.

#![allow(dead_code)]

pub mod blocks;

use std::collections::{HashMap, HashSet};

use supercap_core::imaging::{BBox, Image, LabImage};
use supercap_core::model::{BeamConfig, Fusion, ModelConfig, NextToken};
use supercap_core::regions::{FeatureVector, MultiResFeatures, RegionFeature, ResolutionFeatures};
use supercap_core::rng::{self, Rng};
use supercap_core::superpixel::LabelMap;
use supercap_core::tensor::{ParamStore, Tape, Tensor, Var};
use supercap_core::ModelError;

// ---------------------------------------------------------------- colour

/// sRGB (D65) to CIELAB from the textbook definition.
pub fn lab_reference(rgb: [u8; 3]) -> [f64; 3] {
    let lin = |c: u8| {
        let c = f64::from(c) / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let f = |t: f64| {
        let d: f64 = 6.0 / 29.0;
        if t > d.powi(3) {
            t.cbrt()
        } else {
            t / (3.0 * d * d) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x / 0.95047), f(y / 1.0), f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

// ---------------------------------------------------------------- images

/// Random test image: pure noise, flat rectangles, or rectangles plus noise.
pub fn random_image(seed: u64, w: usize, h: usize) -> Image {
    let mut r = rng::seeded(seed);
    let kind = seed % 3;
    let rects: Vec<(usize, usize, usize, usize, [u8; 3])> = (0..1 + rng::below(&mut r, 6))
        .map(|_| {
            let x0 = rng::below(&mut r, w);
            let y0 = rng::below(&mut r, h);
            let x1 = x0 + 1 + rng::below(&mut r, w - x0);
            let y1 = y0 + 1 + rng::below(&mut r, h - y0);
            let c = [rng::below(&mut r, 256) as u8, rng::below(&mut r, 256) as u8, rng::below(&mut r, 256) as u8];
            (x0, y0, x1, y1, c)
        })
        .collect();
    let base = [rng::below(&mut r, 256) as u8, rng::below(&mut r, 256) as u8, rng::below(&mut r, 256) as u8];
    Image::from_fn(w, h, |x, y| {
        if kind == 0 {
            return [rng::below(&mut r, 256) as u8, rng::below(&mut r, 256) as u8, rng::below(&mut r, 256) as u8];
        }
        let mut c = base;
        for &(x0, y0, x1, y1, rc) in &rects {
            if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
                c = rc;
            }
        }
        if kind == 2 {
            for v in &mut c {
                *v = (i32::from(*v) + rng::below(&mut r, 41) as i32 - 20).clamp(0, 255) as u8;
            }
        }
        c
    })
    .expect("valid size")
}

/// 8×8 image, left half one colour and right half another.
pub fn two_half_fixture() -> Image {
    Image::from_fn(8, 8, |x, _| if x < 4 { [200, 30, 30] } else { [30, 30, 200] }).expect("valid size")
}

/// Relabels by first appearance so partitions compare regardless of label ids.
pub fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Number of 4-connected components of every label, by breadth-first flood fill.
pub fn components_per_label(map: &LabelMap) -> HashMap<u32, usize> {
    let (w, h) = (map.width(), map.height());
    let labels = map.labels();
    let mut seen = vec![false; w * h];
    let mut out = HashMap::new();
    for start in 0..w * h {
        if seen[start] {
            continue;
        }
        let l = labels[start];
        *out.entry(l).or_insert(0) += 1;
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            let (x, y) = (p % w, p / w);
            let mut push = |q: usize| {
                if !seen[q] && labels[q] == l {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                push(p - 1);
            }
            if x + 1 < w {
                push(p + 1);
            }
            if y > 0 {
                push(p - w);
            }
            if y + 1 < h {
                push(p + w);
            }
        }
    }
    out
}

/// Best two-cluster partition in joint (L, a, b, x·m/S, y·m/S) space: Lloyd's algorithm
/// restarted from every pair of seed pixels, keeping the lowest objective.
pub fn two_means_oracle(lab: &LabImage, compactness: f64) -> Vec<usize> {
    let (w, h) = (lab.width(), lab.height());
    let n = w * h;
    let s = (n as f64 / 2.0).sqrt();
    let scale = compactness / s;
    let points: Vec<[f64; 5]> = (0..n)
        .map(|p| {
            let c = lab.pixels()[p];
            [c[0], c[1], c[2], (p % w) as f64 * scale, (p / w) as f64 * scale]
        })
        .collect();
    let d2 = |a: &[f64; 5], b: &[f64; 5]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for i in 0..n {
        for j in i + 1..n {
            let mut centers = [points[i], points[j]];
            let mut assign = vec![0usize; n];
            for _ in 0..100 {
                let next: Vec<usize> =
                    points.iter().map(|p| usize::from(d2(p, &centers[1]) < d2(p, &centers[0]))).collect();
                let changed = next != assign;
                assign = next;
                for (c, center) in centers.iter_mut().enumerate() {
                    let members: Vec<&[f64; 5]> = points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
                    if members.is_empty() {
                        continue;
                    }
                    for k in 0..5 {
                        center[k] = members.iter().map(|m| m[k]).sum::<f64>() / members.len() as f64;
                    }
                }
                if !changed {
                    break;
                }
            }
            let objective: f64 = points.iter().zip(&assign).map(|(p, &a)| d2(p, &centers[a])).sum();
            if best.as_ref().is_none_or(|(b, _)| objective < *b - 1e-9) {
                best = Some((objective, canonical(&assign)));
            }
        }
    }
    best.expect("at least two pixels").1
}

// ---------------------------------------------------------------- gradients

/// Fills every parameter with `U(-scale, scale)` noise.
pub fn randomize(store: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut r = rng::seeded(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng::symmetric(&mut r, scale);
        }
    }
}

/// Reduces `out` to a scalar with fixed random weights so every output entry matters.
pub fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let (rows, cols) = tape.shape(out);
    let mut r = rng::seeded(seed);
    let weights = (0..rows * cols).map(|_| rng::symmetric(&mut r, 1.0)).collect();
    let weights = tape.leaf_matrix(rows, cols, weights).expect("shape");
    let weighted = tape.mul(out, weights).expect("shape");
    tape.sum(weighted)
}

/// Largest relative error between backpropagated and central-difference gradients over
/// every parameter entry. `f` records a scalar on a fresh tape.
pub fn gradient_check(store: &mut ParamStore<f64>, f: impl Fn(&ParamStore<f64>, &mut Tape<f64>) -> Var) -> f64 {
    const H: f64 = 1e-5;
    let mut tape = Tape::new();
    let loss = f(store, &mut tape);
    let grads = tape.backward(loss).expect("scalar loss");
    let analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| grads.param(id).map_or_else(|| vec![0.0; store.get(id).numel()], <[f64]>::to_vec))
        .collect();
    let eval = |s: &ParamStore<f64>| {
        let mut t = Tape::new();
        let v = f(s, &mut t);
        t.value(v)[0]
    };
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        for i in 0..store.get(id).numel() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + H;
            let up = eval(store);
            store.get_mut(id).data_mut()[i] = orig - H;
            let down = eval(store);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[pi][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

// ---------------------------------------------------------------- attention

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| (0..b[0].len()).map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum()).collect())
        .collect()
}

pub fn rows_of(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Multi-head attention with residual and layer norm, written with nested vectors.
#[allow(clippy::too_many_arguments)]
pub fn naive_multi_head(
    x: &[Vec<f64>],
    keys: &[Vec<f64>],
    wq: &[Vec<f64>],
    wk: &[Vec<f64>],
    wv: &[Vec<f64>],
    wo: &[Vec<f64>],
    gain: &[f64],
    bias: &[f64],
    heads: usize,
    causal: bool,
) -> Vec<Vec<f64>> {
    let d = wq[0].len();
    let dk = d / heads;
    let (q, k, v) = (matmul(x, wq), matmul(keys, wk), matmul(keys, wv));
    let mut cat = vec![vec![0.0; d]; x.len()];
    for hd in 0..heads {
        let cols = hd * dk..(hd + 1) * dk;
        for i in 0..x.len() {
            let visible = if causal { i + 1 } else { keys.len() };
            let scores: Vec<f64> = (0..visible)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                cat[i][c] = (0..visible).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    let projected = matmul(&cat, wo);
    x.iter()
        .zip(projected)
        .map(|(xr, pr)| {
            let s: Vec<f64> = xr.iter().zip(pr).map(|(a, b)| a + b).collect();
            let mean = s.iter().sum::<f64>() / d as f64;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            s.iter().enumerate().map(|(c, v)| (v - mean) / (var + 1e-5).sqrt() * gain[c] + bias[c]).collect()
        })
        .collect()
}

// ---------------------------------------------------------------- decoding

/// Language model whose next-token distribution is a hash of the prefix.
pub struct HashLm {
    pub vocab: usize,
    pub seed: u64,
    pub temperature: f64,
}

impl NextToken for HashLm {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>, ModelError> {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        for &t in prefix {
            h = (h ^ t as u64).wrapping_mul(0x0100_0000_01b3);
        }
        let mut r = rng::seeded(h);
        let logits: Vec<f64> = (0..self.vocab).map(|_| rng::symmetric(&mut r, self.temperature)).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
        Ok(logits.iter().map(|l| l - lse).collect())
    }
}

/// Exhaustive search over every allowed continuation; returns (tokens with BOS, log-prob).
pub fn brute_force_decode<M: NextToken>(model: &M, cfg: &BeamConfig) -> (Vec<usize>, f64) {
    fn walk<M: NextToken>(m: &M, cfg: &BeamConfig, prefix: &mut Vec<usize>, lp: f64, best: &mut (Vec<usize>, f64)) {
        let done = prefix.len() > 1 && (*prefix.last().unwrap() == cfg.eos || prefix.len() - 1 >= cfg.max_len);
        if done {
            if lp > best.1 {
                *best = (prefix.clone(), lp);
            }
            return;
        }
        let lps = m.log_probs(prefix).unwrap();
        for (t, &l) in lps.iter().enumerate() {
            if cfg.banned.contains(&t) || !l.is_finite() {
                continue;
            }
            prefix.push(t);
            walk(m, cfg, prefix, lp + l, best);
            prefix.pop();
        }
    }
    let mut best = (vec![], f64::NEG_INFINITY);
    walk(model, cfg, &mut vec![cfg.bos], 0.0, &mut best);
    best
}

/// Next-token table keyed by the full prefix (BOS included); missing prefixes are uniform.
pub struct PrefixTable {
    pub vocab: usize,
    pub rows: HashMap<Vec<usize>, Vec<f64>>,
}

impl NextToken for PrefixTable {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>, ModelError> {
        Ok(match self.rows.get(prefix) {
            Some(p) => p.iter().map(|v| v.ln()).collect(),
            None => vec![-(self.vocab as f64).ln(); self.vocab],
        })
    }
}

// ---------------------------------------------------------------- model fixtures

pub fn tiny_config(fusion: Fusion, resolutions: Vec<usize>, vocab_size: usize) -> ModelConfig {
    ModelConfig {
        layers: 1,
        heads: 2,
        d_model: 8,
        d_ff: 16,
        vocab_size,
        resolutions,
        fusion,
        use_global: true,
        max_len: 6,
    }
}

/// Random unit-norm features with the given region count per resolution.
pub fn synthetic_features(dim: usize, layout: &[(usize, usize)], seed: u64) -> MultiResFeatures {
    let mut r = rng::seeded(seed);
    let feature = |label: u32, r: &mut Rng| {
        let v: Vec<f32> = (0..dim).map(|_| rng::symmetric(r, 1.0) as f32).collect();
        RegionFeature { label, bbox: BBox::new(0, 0, 1, 1), vector: FeatureVector::new(v).expect("finite") }
    };
    let global = feature(0, &mut r);
    let resolutions = layout
        .iter()
        .map(|&(k, count)| ResolutionFeatures { k, regions: (0..count as u32).map(|l| feature(l, &mut r)).collect() })
        .collect();
    MultiResFeatures { dim, global, resolutions }
}

// ---------------------------------------------------------------- metrics

/// CIDEr per image straight from the definition: TF-IDF n-gram vectors (document
/// frequency over images' reference sets), cosine per reference, averaged over n = 1..4
/// and references, times 10.
pub fn cider_reference(candidates: &[Vec<&str>], references: &[Vec<Vec<&str>>]) -> Vec<f64> {
    let grams = |s: &[&str], n: usize| -> HashMap<String, f64> {
        let mut m = HashMap::new();
        if s.len() >= n {
            for w in s.windows(n) {
                *m.entry(w.join(" ")).or_insert(0.0) += 1.0;
            }
        }
        m
    };
    let images = references.len() as f64;
    let mut df: Vec<HashMap<String, f64>> = vec![HashMap::new(); 5];
    for refs in references {
        for n in 1..=4 {
            let set: HashSet<String> = refs.iter().flat_map(|r| grams(r, n).into_keys()).collect();
            for g in set {
                *df[n].entry(g).or_insert(0.0) += 1.0;
            }
        }
    }
    let tfidf = |s: &[&str], n: usize| -> HashMap<String, f64> {
        grams(s, n)
            .into_iter()
            .map(|(g, c)| {
                let d = df[n].get(&g).copied().unwrap_or(0.0).max(1.0);
                (g, c * (images / d).ln())
            })
            .collect()
    };
    let norm = |v: &HashMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    candidates
        .iter()
        .zip(references)
        .map(|(c, refs)| {
            let mut total = 0.0;
            for r in refs {
                for n in 1..=4 {
                    let (vc, vr) = (tfidf(c, n), tfidf(r, n));
                    let (nc, nr) = (norm(&vc), norm(&vr));
                    if nc > 0.0 && nr > 0.0 {
                        let dot: f64 = vc.iter().map(|(g, x)| x * vr.get(g).copied().unwrap_or(0.0)).sum();
                        total += dot / (nc * nr) / 4.0;
                    }
                }
            }
            10.0 * total / refs.len() as f64
        })
        .collect()
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}
