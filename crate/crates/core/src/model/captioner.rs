use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use super::beam::NextToken;
use super::layers::{
    decoder_forward, encoder_forward, route_on_tape, router_weights, DecoderLayer, DecoderParams, EncoderLayer,
    Init, RouterParams,
};
use super::{Fusion, ModelConfig};
use crate::error::{ModelError, TensorError};
use crate::regions::MultiResFeatures;
use crate::rng;
use crate::tensor::{ParamStore, Real, Reduction, Tape, Tensor, Var};
use crate::text::{BOS, PAD};

/// Per-resolution token matrices, each `(regions + use_global) × d_model`, with the
/// global feature in row 0 when enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput<T> {
    pub tokens: Vec<Tensor<T>>,
}

impl<T: Real> ModelInput<T> {
    pub fn from_features(features: &MultiResFeatures, cfg: &ModelConfig) -> Result<Self, ModelError> {
        if features.dim != cfg.d_model {
            return Err(ModelError::FeatureDim { expected: cfg.d_model, got: features.dim });
        }
        if features.resolutions.len() != cfg.resolutions.len() {
            return Err(ModelError::ResolutionCount { expected: cfg.resolutions.len(), got: features.resolutions.len() });
        }
        let row = |v: &[f32]| -> Result<Vec<T>, ModelError> {
            if v.len() != cfg.d_model {
                return Err(ModelError::FeatureDim { expected: cfg.d_model, got: v.len() });
            }
            Ok(v.iter().map(|&x| T::from_f64(f64::from(x))).collect())
        };
        let mut tokens = Vec::with_capacity(features.resolutions.len());
        for res in &features.resolutions {
            let mut rows = Vec::with_capacity(res.regions.len() + 1);
            if cfg.use_global {
                rows.push(row(features.global.vector.values())?);
            }
            for r in &res.regions {
                rows.push(row(r.vector.values())?);
            }
            if rows.is_empty() {
                return Err(ModelError::Tensor(TensorError::Empty("resolution tokens")));
            }
            tokens.push(Tensor::from_rows(&rows)?);
        }
        Ok(Self { tokens })
    }

    /// Total number of memory rows under concatenating fusion.
    pub fn row_count(&self) -> usize {
        self.tokens.iter().map(Tensor::rows).sum()
    }
}

/// Encoder outputs on a tape: one memory per decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub memories: Vec<Var>,
    pub routed: bool,
}

/// Encoder outputs detached from any tape, reusable across decode steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Memory<T> {
    pub memories: Vec<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    encoders: Vec<Vec<EncoderLayer>>,
    decoders: Vec<DecoderParams>,
    router: Option<RouterParams>,
}

/// The multi-resolution captioner: encoders, decoders and an optional router.
#[derive(Debug, Clone, PartialEq)]
pub struct Captioner<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
}

impl<T: Real> Captioner<T> {
    /// Randomly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut r = rng::seeded(seed);
        let mut init = Init { store: &mut params, rng: &mut r };
        let (d, k) = (config.d_model, config.resolutions.len());
        let encoders = (0..config.fusion.encoder_count(k))
            .map(|e| {
                (0..config.layers)
                    .map(|l| EncoderLayer {
                        attn: init.attention(&format!("enc{e}.l{l}.attn"), d),
                        ffn: init.feed_forward(&format!("enc{e}.l{l}.ffn"), d, config.d_ff),
                    })
                    .collect()
            })
            .collect();
        let decoders = (0..config.fusion.decoder_count(k))
            .map(|e| DecoderParams {
                embed: init.matrix(&format!("dec{e}.embed"), config.vocab_size, d),
                layers: (0..config.layers)
                    .map(|l| DecoderLayer {
                        self_attn: init.attention(&format!("dec{e}.l{l}.self"), d),
                        cross_attn: init.attention(&format!("dec{e}.l{l}.cross"), d),
                        ffn: init.feed_forward(&format!("dec{e}.l{l}.ffn"), d, config.d_ff),
                    })
                    .collect(),
                out_w: init.matrix(&format!("dec{e}.out_w"), d, config.vocab_size),
                out_b: init.constant(&format!("dec{e}.out_b"), config.vocab_size, 0.0),
            })
            .collect();
        let router = config
            .fusion
            .routed()
            .then(|| RouterParams { w: init.matrix("router.w", d, k), b: init.constant("router.b", k, 0.0) });
        Ok(Self { config, params, layout: Layout { encoders, decoders, router } })
    }

    /// Model with parameters taken from `store`, which must hold exactly the tensors
    /// this configuration defines.
    pub fn from_params(config: ModelConfig, store: &ParamStore<T>) -> Result<Self, ModelError> {
        let mut model = Self::new(config, 0)?;
        if store.len() != model.params.len() {
            let missing = model.params.iter().find(|(n, _)| store.id(n).is_none()).map(|(n, _)| n);
            let name = missing.unwrap_or("<extra tensors>");
            return Err(ModelError::Tensor(TensorError::UnknownParam(name.into())));
        }
        model.params.load_from(store)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Runs the encoders and applies the configured fusion.
    pub fn fuse(&self, tape: &mut Tape<T>, input: &ModelInput<T>) -> Result<Fused, ModelError> {
        let k = self.config.resolutions.len();
        if input.tokens.len() != k {
            return Err(ModelError::ResolutionCount { expected: k, got: input.tokens.len() });
        }
        for t in &input.tokens {
            if t.cols() != self.config.d_model {
                return Err(ModelError::FeatureDim { expected: self.config.d_model, got: t.cols() });
            }
        }
        let heads = self.config.heads;
        let leaves: Vec<Var> = input.tokens.iter().map(|t| tape.leaf(t)).collect();
        let enc = &self.layout.encoders;
        let memories = match self.config.fusion {
            Fusion::Concat => {
                let all = if k == 1 { leaves[0] } else { tape.concat_rows(&leaves)? };
                alloc::vec![encoder_forward(tape, &self.params, &enc[0], heads, all)?]
            }
            Fusion::StackedEncoders => {
                let outs = leaves
                    .iter()
                    .zip(enc)
                    .map(|(&x, layers)| encoder_forward(tape, &self.params, layers, heads, x))
                    .collect::<Result<Vec<_>, _>>()?;
                alloc::vec![if k == 1 { outs[0] } else { tape.concat_rows(&outs)? }]
            }
            Fusion::SharedEncoderRouted => leaves
                .iter()
                .map(|&x| encoder_forward(tape, &self.params, &enc[0], heads, x))
                .collect::<Result<Vec<_>, _>>()?,
            Fusion::PerResolutionRouted => leaves
                .iter()
                .zip(enc)
                .map(|(&x, layers)| encoder_forward(tape, &self.params, layers, heads, x))
                .collect::<Result<Vec<_>, _>>()?,
        };
        Ok(Fused { memories, routed: self.config.fusion.routed() })
    }

    /// Teacher-forced output for every input position. Unrouted models yield decoder
    /// logits; routed models yield the mixture probabilities. Returns `(var, is_probs)`.
    fn outputs(&self, tape: &mut Tape<T>, fused: &Fused, ids: &[usize]) -> Result<(Var, bool), ModelError> {
        self.check_prefix(ids)?;
        let heads = self.config.heads;
        if !fused.routed {
            let (_, logits) = decoder_forward(tape, &self.params, &self.layout.decoders[0], heads, fused.memories[0], ids)?;
            return Ok((logits, false));
        }
        let mut experts = Vec::with_capacity(fused.memories.len());
        let mut hidden = Vec::with_capacity(fused.memories.len());
        for (dec, &mem) in self.layout.decoders.iter().zip(&fused.memories) {
            let (h, logits) = decoder_forward(tape, &self.params, dec, heads, mem, ids)?;
            experts.push(tape.softmax_rows(logits));
            hidden.push(h);
        }
        // Router input: the decoders' final hidden states, averaged.
        let mut acc = hidden[0];
        for &h in &hidden[1..] {
            acc = tape.add(acc, h)?;
        }
        let avg = tape.scale(acc, T::one() / T::from_f64(hidden.len() as f64));
        let router = self.layout.router.as_ref().ok_or(ModelError::Routing("router missing"))?;
        let weights = router_weights(tape, &self.params, router, avg)?;
        Ok((route_on_tape(tape, &experts, weights)?, true))
    }

    fn check_prefix(&self, ids: &[usize]) -> Result<(), ModelError> {
        if ids.first() != Some(&BOS) {
            return Err(ModelError::BadPrefix);
        }
        if ids.len() > self.config.max_len + 1 {
            return Err(ModelError::PrefixTooLong { len: ids.len(), max: self.config.max_len + 1 });
        }
        if let Some(&t) = ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange(t));
        }
        Ok(())
    }

    /// Negative log-likelihood of `tokens[1..]` given `tokens[..n-1]`, PAD targets ignored.
    /// `tokens` must start with BOS.
    pub fn sequence_loss(
        &self,
        tape: &mut Tape<T>,
        fused: &Fused,
        tokens: &[usize],
        reduction: Reduction,
    ) -> Result<Var, ModelError> {
        if tokens.len() < 2 {
            return Err(ModelError::BadPrefix);
        }
        let (inputs, targets) = (&tokens[..tokens.len() - 1], &tokens[1..]);
        if let Some(&t) = targets.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange(t));
        }
        let (out, is_probs) = self.outputs(tape, fused, inputs)?;
        Ok(if is_probs {
            tape.nll(out, targets, Some(PAD), reduction)?
        } else {
            tape.cross_entropy(out, targets, Some(PAD), reduction)?
        })
    }

    /// Encoder pass without gradient tracking.
    pub fn encode(&self, input: &ModelInput<T>) -> Result<Memory<T>, ModelError> {
        let mut tape = Tape::new();
        let fused = self.fuse(&mut tape, input)?;
        Ok(Memory { memories: fused.memories.iter().map(|&m| tape.tensor(m)).collect() })
    }

    /// Logits for every prefix position (`|prefix| × vocab`). For routed models these are
    /// log mixture probabilities.
    pub fn decoder_logits(&self, memory: &Memory<T>, prefix: &[usize]) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let fused = Fused {
            memories: memory.memories.iter().map(|m| tape.leaf(m)).collect(),
            routed: self.config.fusion.routed(),
        };
        if fused.memories.len() != self.layout.decoders.len() {
            return Err(ModelError::ResolutionCount { expected: self.layout.decoders.len(), got: fused.memories.len() });
        }
        let (out, is_probs) = self.outputs(&mut tape, &fused, prefix)?;
        let out = if is_probs { tape.log(out) } else { out };
        Ok(tape.tensor(out))
    }

    /// Logits for the token following `prefix`.
    pub fn decoder_step(&self, memory: &Memory<T>, prefix: &[usize]) -> Result<Vec<T>, ModelError> {
        let all = self.decoder_logits(memory, prefix)?;
        Ok(all.row(all.rows() - 1).to_vec())
    }

    /// Binds a memory for autoregressive decoding.
    pub fn decoding<'a>(&'a self, memory: &'a Memory<T>) -> Decoding<'a, T> {
        Decoding { model: self, memory }
    }
}

/// A model paired with one image's memory.
pub struct Decoding<'a, T> {
    pub model: &'a Captioner<T>,
    pub memory: &'a Memory<T>,
}

impl<T: Real> NextToken for Decoding<'_, T> {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>, ModelError> {
        let logits: Vec<f64> = self.model.decoder_step(self.memory, prefix)?.iter().map(|x| x.as_f64()).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = Float::ln(logits.iter().map(|&x| Float::exp(x - max)).sum::<f64>()) + max;
        Ok(logits.iter().map(|&x| x - lse).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cfg(fusion: Fusion) -> ModelConfig {
        ModelConfig {
            layers: 1,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: 12,
            resolutions: vec![2, 3],
            fusion,
            use_global: true,
            max_len: 6,
        }
    }

    fn input(r: &mut rng::Rng, counts: &[usize]) -> ModelInput<f64> {
        let tokens = counts
            .iter()
            .map(|&n| Tensor::matrix(n, 8, (0..n * 8).map(|_| rng::symmetric(r, 1.0)).collect()).unwrap())
            .collect();
        ModelInput { tokens }
    }

    #[test]
    fn memory_shapes_per_method() {
        let mut r = rng::seeded(1);
        let x = input(&mut r, &[3, 4]);
        for f in Fusion::ALL {
            let m = Captioner::<f64>::new(cfg(f), 5).unwrap();
            let mem = m.encode(&x).unwrap();
            let rows: Vec<usize> = mem.memories.iter().map(Tensor::rows).collect();
            if f.routed() {
                assert_eq!(rows, vec![3, 4]);
            } else {
                assert_eq!(rows, vec![7]);
            }
            let step = m.decoder_step(&mem, &[BOS, 5]).unwrap();
            assert_eq!(step.len(), 12);
        }
    }

    #[test]
    fn prefix_errors() {
        let mut r = rng::seeded(2);
        let m = Captioner::<f64>::new(cfg(Fusion::StackedEncoders), 5).unwrap();
        let mem = m.encode(&input(&mut r, &[3, 4])).unwrap();
        assert_eq!(m.decoder_step(&mem, &[]), Err(ModelError::BadPrefix));
        assert_eq!(m.decoder_step(&mem, &[4]), Err(ModelError::BadPrefix));
        assert!(matches!(m.decoder_step(&mem, &[BOS; 8]), Err(ModelError::PrefixTooLong { .. })));
        assert_eq!(m.decoder_step(&mem, &[BOS, 40]), Err(ModelError::TokenOutOfRange(40)));
    }

    #[test]
    fn routed_log_probs_normalized() {
        let mut r = rng::seeded(3);
        let m = Captioner::<f64>::new(cfg(Fusion::PerResolutionRouted), 9).unwrap();
        let mem = m.encode(&input(&mut r, &[3, 4])).unwrap();
        let lp = m.decoding(&mem).log_probs(&[BOS, 6, 7]).unwrap();
        let total: f64 = lp.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn params_round_trip() {
        let m = Captioner::<f32>::new(cfg(Fusion::SharedEncoderRouted), 4).unwrap();
        let copy = Captioner::from_params(m.config().clone(), m.params()).unwrap();
        assert_eq!(copy, m);
        let other = Captioner::<f32>::new(cfg(Fusion::Concat), 4).unwrap();
        assert!(Captioner::from_params(m.config().clone(), other.params()).is_err());
    }
}
