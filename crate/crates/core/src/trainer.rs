//! Cross-entropy training with a warmup schedule, self-critical CIDEr-D finetuning,
//! and evaluation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use num_traits::Float;

use crate::error::TrainError;
use crate::metrics::{self, CiderIdf};
use crate::model::{beam_search, greedy, sample, BeamConfig, Captioner, Decoding, Hypothesis, ModelInput};
use crate::rng::{self, Rng};
use crate::tensor::{clip_global_norm, AdamConfig, AdamState, Real, Reduction, Tape};
use crate::text::{Vocab, BOS, EOS, PAD};

/// `d^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn noam_lr(step: u64, d_model: usize, warmup: u64) -> Result<f64, TrainError> {
    if step == 0 {
        return Err(TrainError::StepZero);
    }
    let s = step as f64;
    let w = warmup.max(1) as f64;
    Ok(Float::powf(d_model as f64, -0.5) * Float::min(Float::powf(s, -0.5), s * Float::powf(w, -1.5)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub xe_epochs: usize,
    pub scst_epochs: usize,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub scst_lr: f64,
    pub seed: u64,
    /// Global gradient-norm bound applied during SCST.
    pub clip_norm: f64,
    /// Epochs between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            xe_epochs: 30,
            scst_epochs: 30,
            batch_size: 8,
            warmup_steps: 10_000,
            scst_lr: 5e-6,
            seed: 0,
            clip_norm: 5.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive"));
        }
        if !(self.scst_lr > 0.0) {
            return Err(TrainError::Config("scst_lr must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(TrainError::Config("clip_norm must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Xe,
    Scst,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Xe => "xe",
            Phase::Scst => "scst",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub phase: Phase,
    pub lr: f64,
    /// Mean token loss for XE, mean sampled-caption reward for SCST.
    pub value: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub mean_value: f64,
    /// Filled in by an observer that runs validation.
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn next_step(&self) -> u64 {
        self.steps.last().map_or(1, |s| s.step + 1)
    }

    /// `step,phase,lr,loss_or_reward` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,phase,lr,loss_or_reward\n");
        for s in &self.steps {
            let _ = writeln!(out, "{},{},{:e},{}", s.step, s.phase.name(), s.lr, s.value);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Hooks into the training loop: a wall clock and an end-of-epoch callback for
/// validation, checkpoints and early stopping.
pub trait Observer<T> {
    fn now(&self) -> f64 {
        0.0
    }

    fn epoch_end(&mut self, _record: &mut EpochRecord, _model: &Captioner<T>) -> Result<Control, TrainError> {
        Ok(Control::Continue)
    }
}

/// Observer that does nothing.
pub struct Silent;

impl<T> Observer<T> for Silent {}

/// One image with its encoded captions and tokenized references.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub id: String,
    pub input: ModelInput<T>,
    /// `BOS w… EOS`, at most `max_len` words.
    pub captions: Vec<Vec<usize>>,
    pub references: Vec<Vec<String>>,
}

impl<T: Real> Example<T> {
    pub fn new(
        id: impl Into<String>,
        input: ModelInput<T>,
        references: Vec<Vec<String>>,
        vocab: &Vocab,
        max_len: usize,
    ) -> Result<Self, TrainError> {
        let id = id.into();
        if references.is_empty() {
            return Err(TrainError::NoCaptions(id));
        }
        let captions = references
            .iter()
            .map(|r| vocab.encode(&r[..r.len().min(max_len)]))
            .collect();
        Ok(Self { id, input, captions, references })
    }
}

fn check_dataset<T>(data: &[Example<T>]) -> Result<(), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if let Some(e) = data.iter().find(|e| e.captions.is_empty()) {
        return Err(TrainError::NoCaptions(e.id.clone()));
    }
    Ok(())
}

fn finite_or_abort(loss: f64, epoch: usize, step: u64, lr: f64) -> Result<(), TrainError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(TrainError::NonFiniteLoss { loss, epoch, step: step as usize, lr })
    }
}

/// Teacher-forced cross-entropy over one batch of `(example, caption)` pairs; returns the
/// mean token loss and the parameter gradients.
pub fn xe_gradients<T: Real>(
    model: &Captioner<T>,
    batch: &[(&ModelInput<T>, &[usize])],
) -> Result<(f64, Vec<Option<Vec<T>>>), TrainError> {
    let mut tape = Tape::new();
    let mut total: Option<crate::tensor::Var> = None;
    let mut tokens = 0usize;
    for &(input, caption) in batch {
        let fused = model.fuse(&mut tape, input)?;
        let loss = model.sequence_loss(&mut tape, &fused, caption, Reduction::Sum)?;
        tokens += caption[1..].iter().filter(|&&t| t != PAD).count();
        total = Some(match total {
            Some(acc) => tape.add(acc, loss)?,
            None => loss,
        });
    }
    let total = total.ok_or(TrainError::EmptyDataset)?;
    let mean = tape.scale(total, T::one() / T::from_f64(tokens.max(1) as f64));
    let value = tape.value(mean)[0].as_f64();
    let grads = tape.backward(mean)?.into_param_grads(model.params().len());
    Ok((value, grads))
}

/// Cross-entropy phase: each epoch draws one caption per image, shuffles, and takes one
/// Adam step per batch at the warmup learning rate.
pub fn xe_train<T: Real>(
    model: &mut Captioner<T>,
    data: &[Example<T>],
    cfg: &TrainConfig,
    log: &mut TrainLog,
    observer: &mut dyn Observer<T>,
) -> Result<(), TrainError> {
    cfg.validate()?;
    check_dataset(data)?;
    let mut rng = rng::seeded(cfg.seed);
    let mut adam = AdamState::new(model.params(), AdamConfig::default());
    let d = model.config().d_model;
    let mut step = log.next_step();
    let mut phase_step = 1u64;
    for epoch in 1..=cfg.xe_epochs {
        let mut order: Vec<(usize, usize)> =
            data.iter().enumerate().map(|(i, e)| (i, rng::below(&mut rng, e.captions.len()))).collect();
        rng::shuffle(&mut order, &mut rng);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&ModelInput<T>, &[usize])> =
                chunk.iter().map(|&(i, c)| (&data[i].input, data[i].captions[c].as_slice())).collect();
            let lr = noam_lr(phase_step, d, cfg.warmup_steps)?;
            let (loss, grads) = xe_gradients(model, &batch)?;
            finite_or_abort(loss, epoch, step, lr)?;
            adam.step(model.params_mut(), &grads, lr)?;
            log.steps.push(StepRecord { step, phase: Phase::Xe, lr, value: loss, seconds: observer.now() });
            sum += loss;
            count += 1;
            step += 1;
            phase_step += 1;
        }
        if end_epoch(log, observer, model, epoch, Phase::Xe, sum / count as f64)? == Control::Stop {
            break;
        }
    }
    Ok(())
}

fn end_epoch<T>(
    log: &mut TrainLog,
    observer: &mut dyn Observer<T>,
    model: &Captioner<T>,
    epoch: usize,
    phase: Phase,
    mean_value: f64,
) -> Result<Control, TrainError> {
    let mut record = EpochRecord { epoch, phase, mean_value, validation: None };
    let control = observer.epoch_end(&mut record, model)?;
    log.epochs.push(record);
    Ok(control)
}

fn words(vocab: &Vocab, h: &Hypothesis) -> Result<Vec<String>, TrainError> {
    Ok(vocab.decode(h.words(EOS))?)
}

/// Gradients of `-A · Σ log p(sampled tokens)` for one image. Exactly zero when
/// `advantage` is zero.
pub fn scst_gradients<T: Real>(
    model: &Captioner<T>,
    input: &ModelInput<T>,
    sampled: &[usize],
    advantage: f64,
) -> Result<Vec<Option<Vec<T>>>, TrainError> {
    let mut tape = Tape::new();
    let fused = model.fuse(&mut tape, input)?;
    let nll = model.sequence_loss(&mut tape, &fused, sampled, Reduction::Sum)?;
    let loss = tape.scale(nll, T::from_f64(advantage));
    Ok(tape.backward(loss)?.into_param_grads(model.params().len()))
}

/// Sample and greedy decodes for one image with their CIDEr-D rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct ScstRollout {
    pub sample: Hypothesis,
    pub baseline: Hypothesis,
    pub sample_reward: f64,
    pub baseline_reward: f64,
}

impl ScstRollout {
    pub fn advantage(&self) -> f64 {
        self.sample_reward - self.baseline_reward
    }
}

pub fn scst_rollout<T: Real>(
    model: &Captioner<T>,
    example: &Example<T>,
    vocab: &Vocab,
    idf: &CiderIdf,
    rng: &mut Rng,
) -> Result<ScstRollout, TrainError> {
    let memory = model.encode(&example.input)?;
    let decoding = Decoding { model, memory: &memory };
    let cfg = BeamConfig::new(1, model.config().max_len);
    let sample = sample(&decoding, &cfg, rng)?;
    let baseline = greedy(&decoding, &cfg)?;
    let sample_reward = idf.cider_d(&words(vocab, &sample)?, &example.references);
    let baseline_reward = idf.cider_d(&words(vocab, &baseline)?, &example.references);
    Ok(ScstRollout { sample, baseline, sample_reward, baseline_reward })
}

/// Self-critical phase: sampled captions are rewarded by CIDEr-D relative to the greedy
/// decode, at a fixed learning rate with global-norm clipping. IDF statistics come from
/// the training references.
pub fn scst_finetune<T: Real>(
    model: &mut Captioner<T>,
    data: &[Example<T>],
    vocab: &Vocab,
    cfg: &TrainConfig,
    log: &mut TrainLog,
    observer: &mut dyn Observer<T>,
) -> Result<(), TrainError> {
    cfg.validate()?;
    check_dataset(data)?;
    let refs: Vec<Vec<Vec<String>>> = data.iter().map(|e| e.references.clone()).collect();
    let idf = CiderIdf::from_references(&refs)?;
    let mut rng = rng::seeded(cfg.seed ^ 0x5c57);
    let mut adam = AdamState::new(model.params(), AdamConfig::default());
    let n_params = model.params().len();
    let mut step = log.next_step();
    for epoch in 1..=cfg.scst_epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        rng::shuffle(&mut order, &mut rng);
        let mut reward_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Option<Vec<T>>> = alloc::vec![None; n_params];
            let mut reward = 0.0;
            let mut loss = 0.0;
            for &i in chunk {
                let r = scst_rollout(model, &data[i], vocab, &idf, &mut rng)?;
                reward += r.sample_reward;
                let a = r.advantage();
                if a == 0.0 {
                    continue;
                }
                let g = scst_gradients(model, &data[i].input, &r.sample.tokens, a / chunk.len() as f64)?;
                loss += a * r.sample.log_prob;
                accumulate(&mut grads, g);
            }
            finite_or_abort(-loss, epoch, step, cfg.scst_lr)?;
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(model.params_mut(), &grads, cfg.scst_lr)?;
            let mean_reward = reward / chunk.len() as f64;
            log.steps.push(StepRecord {
                step,
                phase: Phase::Scst,
                lr: cfg.scst_lr,
                value: mean_reward,
                seconds: observer.now(),
            });
            reward_sum += mean_reward;
            batches += 1;
            step += 1;
        }
        if end_epoch(log, observer, model, epoch, Phase::Scst, reward_sum / batches as f64)? == Control::Stop {
            break;
        }
    }
    Ok(())
}

fn accumulate<T: Real>(acc: &mut [Option<Vec<T>>], grads: Vec<Option<Vec<T>>>) {
    for (a, g) in acc.iter_mut().zip(grads) {
        match (a.as_mut(), g) {
            (Some(a), Some(g)) => a.iter_mut().zip(g).for_each(|(x, y)| *x = *x + y),
            (None, Some(g)) => *a = Some(g),
            _ => {}
        }
    }
}

/// Mean CIDEr-D of greedy decodes against each example's references.
pub fn greedy_cider_d<T: Real>(model: &Captioner<T>, data: &[Example<T>], vocab: &Vocab) -> Result<f64, TrainError> {
    check_dataset(data)?;
    let refs: Vec<Vec<Vec<String>>> = data.iter().map(|e| e.references.clone()).collect();
    let idf = CiderIdf::from_references(&refs)?;
    let cfg = BeamConfig::new(1, model.config().max_len);
    let mut total = 0.0;
    for e in data {
        let memory = model.encode(&e.input)?;
        let h = greedy(&Decoding { model, memory: &memory }, &cfg)?;
        total += idf.cider_d(&words(vocab, &h)?, &e.references);
    }
    Ok(total / data.len() as f64)
}

/// Beam-search caption for one image, as words.
pub fn caption<T: Real>(
    model: &Captioner<T>,
    input: &ModelInput<T>,
    vocab: &Vocab,
    cfg: &BeamConfig,
) -> Result<Vec<String>, TrainError> {
    let memory = model.encode(input)?;
    let h = beam_search(&Decoding { model, memory: &memory }, cfg)?;
    words(vocab, &h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Corpus BLEU-1 through BLEU-4.
    pub bleu: [f64; 4],
    /// Mean sentence ROUGE-L.
    pub rouge_l: f64,
    /// Mean plain CIDEr.
    pub cider: f64,
}

/// Scores generated captions against per-image references.
pub fn score_captions<C: AsRef<[String]>>(
    candidates: &[C],
    references: &[Vec<Vec<String>>],
) -> Result<MetricReport, TrainError> {
    if candidates.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let b = metrics::corpus_bleu(candidates, references, 4)?;
    let rouge =
        candidates.iter().zip(references).map(|(c, r)| metrics::rouge_l(c.as_ref(), r)).sum::<f64>() / candidates.len() as f64;
    let (_, cider) = metrics::cider(candidates, references)?;
    Ok(MetricReport { bleu: [b[0], b[1], b[2], b[3]], rouge_l: rouge, cider })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    /// `(image id, caption words)` in dataset order.
    pub captions: Vec<(String, Vec<String>)>,
}

/// Beam-search captions for every example, then metrics.
pub fn evaluate<T: Real>(
    model: &Captioner<T>,
    data: &[Example<T>],
    vocab: &Vocab,
    cfg: &BeamConfig,
) -> Result<Evaluation, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let captions = data
        .iter()
        .map(|e| Ok((e.id.clone(), caption(model, &e.input, vocab, cfg)?)))
        .collect::<Result<Vec<_>, TrainError>>()?;
    let cands: Vec<&[String]> = captions.iter().map(|(_, c)| c.as_slice()).collect();
    let refs: Vec<Vec<Vec<String>>> = data.iter().map(|e| e.references.clone()).collect();
    Ok(Evaluation { report: score_captions(&cands, &refs)?, captions })
}

/// Human-readable one-liner for logs.
pub fn summary(report: &MetricReport) -> String {
    format!("BLEU-4 {:.4}  ROUGE-L {:.4}  CIDEr {:.4}", report.bleu[3], report.rouge_l, report.cider)
}

/// Checks that every encoded caption is well formed for the given length limit.
pub fn caption_is_valid(ids: &[usize], max_len: usize) -> bool {
    ids.first() == Some(&BOS) && ids.last() == Some(&EOS) && ids.len() <= max_len + 2
}
