//! The `supercap` command line.
//!
//! Every hyperparameter is a flag; a TOML file passed with `--config` fills in flags
//! that were not given, and built-in defaults fill in the rest.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;
use supercap_core::model::{greedy, BeamConfig, Captioner, Decoding, Fusion, ModelConfig, ModelInput};
use supercap_core::regions::{encode_image, render_overlay, FeatureProvider, MultiResFeatures, RegionConfig};
use supercap_core::superpixel::{slic, SlicConfig};
use supercap_core::text::{build_vocab, Vocab, EOS};
use supercap_core::trainer::{
    caption, score_captions, scst_finetune, summary, xe_train, Control, EpochRecord, Evaluation, Example, Observer,
    TrainConfig, TrainLog,
};
use supercap_core::TrainError;

use crate::checkpoint::{load_model, save_model, write_labels};
use crate::dataset::{load_split, split_counts, CaptionedImage, Split};
use crate::features::{read_features, write_features};
use crate::imageio::{load_image, save_png};
use crate::provider::{build_provider, ProviderSpec};
use crate::report::{sweep_row, CaptionRecord, EvalJson, SWEEP_HEADER};

pub const FEATURE_EXT: &str = "scf";

#[derive(Debug, Parser)]
#[command(name = "supercap", version, about = "Superpixel-region image captioning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment one image and write its label map and boundary overlay.
    Segment {
        image: PathBuf,
        #[arg(short, long)]
        k: usize,
        #[command(flatten)]
        settings: Settings,
    },
    /// Embed every PNG/JPEG in a directory into one feature file per image.
    Features {
        image_dir: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Cross-entropy training.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        settings: Settings,
    },
    /// Self-critical CIDEr-D finetuning of a trained model.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        settings: Settings,
    },
    /// Caption individual images.
    Caption {
        images: Vec<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        /// Argmax decoding instead of beam search.
        #[arg(long)]
        greedy: bool,
        #[command(flatten)]
        settings: Settings,
    },
    /// Caption a dataset split and score it.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        settings: Settings,
    },
    /// Train and evaluate one model per resolution set and global-feature mode.
    Sweep {
        /// Resolution set, e.g. `--set 10 --set 10,25`.
        #[arg(long = "set", required = true, value_delimiter = ';')]
        sets: Vec<String>,
        /// Which global-feature modes to run.
        #[arg(long, default_value = "on", value_parser = ["on", "off", "both"])]
        global_modes: String,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        settings: Settings,
    },
    /// Write the eight-image synthetic toy dataset.
    DemoData {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Karpathy-layout dataset JSON.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Root that dataset file names are relative to (defaults to `<dataset dir>/images`).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Split used for training or evaluation.
    #[arg(long)]
    pub split: Option<String>,
}

/// Flags shared by all commands. All optional so a config file can supply them.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Superpixel counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub resolutions: Option<Vec<usize>>,
    /// `mock`, `http:<url>` or `file:<feature dir>`.
    #[arg(long)]
    pub provider: Option<String>,
    /// Embedding dimension (also the model width).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Provider input resolution in pixels.
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Downscale images so the longer side is at most this before segmenting.
    #[arg(long)]
    pub working_size: Option<usize>,
    #[arg(long)]
    pub compactness: Option<f64>,
    /// Fusion method m1..m4.
    #[arg(long)]
    pub fusion: Option<String>,
    #[arg(long, overrides_with = "no_global")]
    #[serde(skip)]
    pub global: bool,
    #[arg(long = "no-global")]
    #[serde(skip)]
    pub no_global: bool,
    #[arg(skip)]
    #[serde(rename = "global")]
    pub global_setting: Option<bool>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cross-entropy epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub scst_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub scst_lr: Option<f64>,
    /// Keep words seen at least this many times.
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Vocabulary size, special tokens excluded.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Save a checkpoint every N epochs (0 = only at the end).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
}

macro_rules! merge_fields {
    ($a:expr, $b:expr, $($f:ident),*) => { $( if $a.$f.is_none() { $a.$f = $b.$f.clone(); } )* };
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub out: Option<PathBuf>,
    pub resolutions: Vec<usize>,
    pub provider: ProviderSpec,
    pub dim: usize,
    pub input_size: usize,
    pub region: RegionConfig,
    pub fusion: Fusion,
    pub use_global: bool,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub beam: usize,
    pub max_len: usize,
    pub seed: u64,
    pub train: TrainConfig,
    pub min_count: usize,
    pub vocab_size: usize,
    pub workers: usize,
}

impl Settings {
    pub fn resolve(&self) -> Result<Resolved> {
        let mut s = self.clone();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let file: Settings = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            merge_fields!(
                s,
                file,
                resolutions,
                provider,
                dim,
                input_size,
                working_size,
                compactness,
                fusion,
                global_setting,
                layers,
                heads,
                d_ff,
                beam,
                max_len,
                seed,
                epochs,
                scst_epochs,
                batch_size,
                warmup,
                scst_lr,
                min_count,
                vocab_size,
                checkpoint_every,
                workers
            );
        }
        let defaults = TrainConfig::default();
        let resolutions = s.resolutions.unwrap_or_else(|| vec![10, 25]);
        if resolutions.is_empty() || resolutions.contains(&0) {
            bail!("--resolutions must list positive superpixel counts");
        }
        let use_global = if s.no_global {
            false
        } else if s.global {
            true
        } else {
            s.global_setting.unwrap_or(true)
        };
        let seed = s.seed.unwrap_or(0);
        let region = RegionConfig {
            compactness: s.compactness.unwrap_or(RegionConfig::default().compactness),
            working_size: s.working_size,
            ..RegionConfig::default()
        };
        Ok(Resolved {
            out: s.out,
            resolutions,
            provider: s.provider.as_deref().unwrap_or("mock").parse().map_err(|e: String| anyhow!(e))?,
            dim: s.dim.unwrap_or(512),
            input_size: s.input_size.unwrap_or(224),
            region,
            fusion: Fusion::from_flag(s.fusion.as_deref().unwrap_or("m2"))?,
            use_global,
            layers: s.layers.unwrap_or(6),
            heads: s.heads.unwrap_or(8),
            d_ff: s.d_ff.unwrap_or(2048),
            beam: s.beam.unwrap_or(5),
            max_len: s.max_len.unwrap_or(20),
            seed,
            train: TrainConfig {
                xe_epochs: s.epochs.unwrap_or(defaults.xe_epochs),
                scst_epochs: s.scst_epochs.unwrap_or(defaults.scst_epochs),
                batch_size: s.batch_size.unwrap_or(defaults.batch_size),
                warmup_steps: s.warmup.unwrap_or(defaults.warmup_steps),
                scst_lr: s.scst_lr.unwrap_or(defaults.scst_lr),
                seed,
                clip_norm: defaults.clip_norm,
                checkpoint_every: s.checkpoint_every.unwrap_or(0),
            },
            min_count: s.min_count.unwrap_or(6),
            vocab_size: s.vocab_size.unwrap_or(10_000),
            workers: s.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        })
    }
}

impl Resolved {
    fn out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| anyhow!("--out is required for this command"))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        Ok(rayon::ThreadPoolBuilder::new().num_threads(self.workers.max(1)).build()?)
    }

    fn provider(&self) -> Option<Box<dyn FeatureProvider>> {
        build_provider(&self.provider, self.dim, self.input_size, self.seed)
    }

    fn model_config(&self, vocab: &Vocab) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            d_model: self.dim,
            d_ff: self.d_ff,
            vocab_size: vocab.len(),
            resolutions: self.resolutions.clone(),
            fusion: self.fusion,
            use_global: self.use_global,
            max_len: self.max_len,
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Segment { image, k, settings } => cmd_segment(&image, k, &settings.resolve()?),
        Command::Features { image_dir, settings } => cmd_features(&image_dir, &settings.resolve()?).map(|_| ()),
        Command::Train { data, settings } => cmd_train(&data, &settings.resolve()?),
        Command::Finetune { model, data, settings } => cmd_finetune(&model, &data, &settings.resolve()?),
        Command::Caption { images, model, greedy, settings } => {
            for line in cmd_caption(&images, &model, greedy, &settings.resolve()?)? {
                println!("{line}");
            }
            Ok(())
        }
        Command::Eval { model, data, settings } => {
            let json = cmd_eval(&model, &data, &settings.resolve()?)?;
            println!("{}", serde_json::to_string_pretty(&json)?);
            Ok(())
        }
        Command::Sweep { sets, global_modes, data, settings } => {
            cmd_sweep(&sets, &global_modes, &data, &settings.resolve()?).map(|_| ())
        }
        Command::DemoData { out } => {
            let path = crate::toy::write_dataset(&out)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

pub fn cmd_segment(image: &Path, k: usize, s: &Resolved) -> Result<()> {
    let out = s.out()?;
    fs::create_dir_all(out)?;
    let img = s.region.working_image(&load_image(image)?)?;
    let lab = supercap_core::imaging::rgb_to_lab(&img);
    let labels = slic(&lab, &SlicConfig { k, ..s.region.slic(k) })?;
    let name = stem(image);
    write_labels(&labels, out.join(format!("{name}.scl")))?;
    save_png(&render_overlay(&img, &labels)?, out.join(format!("{name}_overlay.png")))?;
    println!("{} regions", labels.region_count());
    Ok(())
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn embed_file(path: &Path, s: &Resolved, provider: &dyn FeatureProvider) -> Result<MultiResFeatures> {
    let img = load_image(path)?;
    encode_image(&img, &s.resolutions, &s.region, provider).with_context(|| format!("embedding {}", path.display()))
}

pub fn cmd_features(dir: &Path, s: &Resolved) -> Result<usize> {
    let out = s.out()?;
    fs::create_dir_all(out)?;
    let provider = s.provider().ok_or_else(|| anyhow!("features needs a mock or http provider"))?;
    let files = image_files(dir)?;
    s.pool()?.install(|| {
        files.par_iter().try_for_each(|path| -> Result<()> {
            let f = embed_file(path, s, provider.as_ref())?;
            write_features(&f, out.join(format!("{}.{FEATURE_EXT}", stem(path))))?;
            Ok(())
        })
    })?;
    eprintln!("wrote {} feature files to {}", files.len(), out.display());
    Ok(files.len())
}

/// Keeps the resolutions listed in `ks`, in that order.
pub fn select_resolutions(f: &MultiResFeatures, ks: &[usize]) -> Result<MultiResFeatures> {
    let resolutions = ks
        .iter()
        .map(|k| {
            f.resolutions
                .iter()
                .find(|r| r.k == *k)
                .cloned()
                .ok_or_else(|| anyhow!("features have no K={k} resolution (have {:?})", f.ks()))
        })
        .collect::<Result<_>>()?;
    Ok(MultiResFeatures { dim: f.dim, global: f.global.clone(), resolutions })
}

fn image_root(data: &DataArgs) -> PathBuf {
    data.images
        .clone()
        .unwrap_or_else(|| data.dataset.parent().unwrap_or(Path::new(".")).join("images"))
}

/// Features for every record at the given resolutions, from disk or a provider.
fn gather_features(records: &[CaptionedImage], root: &Path, s: &Resolved, ks: &[usize]) -> Result<Vec<MultiResFeatures>> {
    let one = |r: &CaptionedImage| -> Result<MultiResFeatures> {
        let f = match &s.provider {
            ProviderSpec::File(dir) => {
                let path = dir.join(format!("{}.{FEATURE_EXT}", r.stem()));
                read_features(&path).with_context(|| format!("features for image {}", r.id))?
            }
            _ => {
                let provider = s.provider().expect("crop-level provider");
                let tuned = Resolved { resolutions: ks.to_vec(), ..s.clone() };
                embed_file(&root.join(&r.path), &tuned, provider.as_ref())?
            }
        };
        select_resolutions(&f, ks)
    };
    s.pool()?.install(|| records.par_iter().map(one).collect())
}

fn records_for(data: &DataArgs, default_split: Split) -> Result<Vec<CaptionedImage>> {
    let all = load_split(&data.dataset)?;
    let split = match &data.split {
        Some(name) => Split::parse(name).ok_or_else(|| anyhow!("unknown split {name:?}"))?,
        None => default_split,
    };
    let counts = split_counts(&all);
    eprintln!("dataset: {counts:?}; using {split}");
    let records: Vec<CaptionedImage> = all.into_iter().filter(|r| r.split == split).collect();
    if records.is_empty() {
        bail!("split {split} of {} is empty", data.dataset.display());
    }
    Ok(records)
}

fn examples(
    records: &[CaptionedImage],
    features: &[MultiResFeatures],
    cfg: &ModelConfig,
    vocab: &Vocab,
) -> Result<Vec<Example<f32>>> {
    records
        .iter()
        .zip(features)
        .map(|(r, f)| {
            let input = ModelInput::from_features(f, cfg).with_context(|| format!("image {}", r.id))?;
            Ok(Example::new(r.id.clone(), input, r.captions.clone(), vocab, cfg.max_len)?)
        })
        .collect()
}

/// Progress printing, periodic checkpoints and wall-clock timestamps.
struct CliObserver<'a> {
    start: Instant,
    every: usize,
    dir: &'a Path,
    vocab: &'a Vocab,
}

impl Observer<f32> for CliObserver<'_> {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn epoch_end(&mut self, r: &mut EpochRecord, model: &Captioner<f32>) -> Result<Control, TrainError> {
        eprintln!("[{}] epoch {} mean {:.5} ({:.1}s)", r.phase.name(), r.epoch, r.mean_value, self.now());
        if self.every > 0 && r.epoch % self.every == 0 {
            let dir = self.dir.join(format!("checkpoint-{}-{}", r.phase.name(), r.epoch));
            if let Err(e) = save_model(&dir, model, self.vocab) {
                eprintln!("checkpoint failed: {e}");
            }
        }
        Ok(Control::Continue)
    }
}

fn write_log(dir: &Path, log: &TrainLog, name: &str) -> Result<()> {
    fs::write(dir.join(name), log.to_csv())?;
    Ok(())
}

/// Trains from scratch and saves the model into `out`.
pub fn train_into(out: &Path, records: &[CaptionedImage], features: &[MultiResFeatures], s: &Resolved) -> Result<()> {
    fs::create_dir_all(out)?;
    let vocab = build_vocab(
        &records.iter().flat_map(|r| r.captions.iter().cloned()).collect::<Vec<_>>(),
        s.min_count,
        s.vocab_size,
    );
    let cfg = s.model_config(&vocab);
    let data = examples(records, features, &cfg, &vocab)?;
    let mut model = Captioner::<f32>::new(cfg, s.seed)?;
    eprintln!("model: {} parameters, vocabulary {}", model.params().scalar_count(), vocab.len());
    let mut log = TrainLog::default();
    let mut obs = CliObserver { start: Instant::now(), every: s.train.checkpoint_every, dir: out, vocab: &vocab };
    xe_train(&mut model, &data, &s.train, &mut log, &mut obs)?;
    save_model(out, &model, &vocab)?;
    write_log(out, &log, "train_log.csv")
}

pub fn cmd_train(data: &DataArgs, s: &Resolved) -> Result<()> {
    let records = records_for(data, Split::Train)?;
    let features = gather_features(&records, &image_root(data), s, &s.resolutions)?;
    train_into(s.out()?, &records, &features, s)
}

/// Settings that must agree with the saved model.
fn with_model(s: &Resolved, cfg: &ModelConfig) -> Resolved {
    Resolved {
        resolutions: cfg.resolutions.clone(),
        dim: cfg.d_model,
        use_global: cfg.use_global,
        fusion: cfg.fusion,
        ..s.clone()
    }
}

pub fn cmd_finetune(model_dir: &Path, data: &DataArgs, s: &Resolved) -> Result<()> {
    let (mut model, vocab) = load_model(model_dir)?;
    let s = with_model(s, model.config());
    let out = s.out()?;
    fs::create_dir_all(out)?;
    let records = records_for(data, Split::Train)?;
    let features = gather_features(&records, &image_root(data), &s, &s.resolutions)?;
    let cfg = model.config().clone();
    let data = examples(&records, &features, &cfg, &vocab)?;
    let mut log = TrainLog::default();
    let mut obs = CliObserver { start: Instant::now(), every: s.train.checkpoint_every, dir: out, vocab: &vocab };
    scst_finetune(&mut model, &data, &vocab, &s.train, &mut log, &mut obs)?;
    save_model(out, &model, &vocab)?;
    write_log(out, &log, "finetune_log.csv")
}

pub fn cmd_caption(images: &[PathBuf], model_dir: &Path, use_greedy: bool, s: &Resolved) -> Result<Vec<String>> {
    let (model, vocab) = load_model(model_dir)?;
    let s = with_model(s, model.config());
    let beam = BeamConfig::new(s.beam, model.config().max_len);
    let mut lines = Vec::with_capacity(images.len());
    for path in images {
        let record = CaptionedImage { id: stem(path), path: path.clone(), split: Split::Test, captions: vec![] };
        let f = gather_features(std::slice::from_ref(&record), Path::new(""), &s, &s.resolutions)?.remove(0);
        let input = ModelInput::from_features(&f, model.config())?;
        let words = if use_greedy {
            let memory = model.encode(&input)?;
            let h = greedy(&Decoding { model: &model, memory: &memory }, &beam)?;
            vocab.decode(h.words(EOS))?
        } else {
            caption(&model, &input, &vocab, &beam)?
        };
        lines.push(format!("{}\t{}", path.display(), words.join(" ")));
    }
    Ok(lines)
}

/// Beam-search captions for every record (in parallel), then metrics.
pub fn evaluate_records(
    model: &Captioner<f32>,
    vocab: &Vocab,
    records: &[CaptionedImage],
    features: &[MultiResFeatures],
    s: &Resolved,
) -> Result<Evaluation> {
    let beam = BeamConfig::new(s.beam, model.config().max_len);
    let captions: Vec<(String, Vec<String>)> = s.pool()?.install(|| {
        records
            .par_iter()
            .zip(features)
            .map(|(r, f)| {
                let input = ModelInput::from_features(f, model.config())?;
                Ok((r.id.clone(), caption(model, &input, vocab, &beam)?))
            })
            .collect::<Result<_>>()
    })?;
    let cands: Vec<&[String]> = captions.iter().map(|(_, c)| c.as_slice()).collect();
    let refs: Vec<Vec<Vec<String>>> = records.iter().map(|r| r.captions.clone()).collect();
    Ok(Evaluation { report: score_captions(&cands, &refs)?, captions })
}

fn write_eval(out: &Path, ev: &Evaluation) -> Result<EvalJson> {
    fs::create_dir_all(out)?;
    let json = EvalJson::from(&ev.report);
    fs::write(out.join("eval.json"), serde_json::to_string_pretty(&json)?)?;
    let dump: Vec<CaptionRecord> =
        ev.captions.iter().map(|(id, c)| CaptionRecord { image_id: id.clone(), caption: c.join(" ") }).collect();
    fs::write(out.join("captions.json"), serde_json::to_string_pretty(&dump)?)?;
    Ok(json)
}

pub fn cmd_eval(model_dir: &Path, data: &DataArgs, s: &Resolved) -> Result<EvalJson> {
    let (model, vocab) = load_model(model_dir)?;
    let s = with_model(s, model.config());
    let records = records_for(data, Split::Test)?;
    let features = gather_features(&records, &image_root(data), &s, &s.resolutions)?;
    let ev = evaluate_records(&model, &vocab, &records, &features, &s)?;
    eprintln!("{}", summary(&ev.report));
    match &s.out {
        Some(out) => write_eval(out, &ev),
        None => Ok(EvalJson::from(&ev.report)),
    }
}

fn parse_set(set: &str) -> Result<Vec<usize>> {
    let ks = set
        .split(|c| c == ',' || c == '+')
        .map(|k| k.trim().parse::<usize>().map_err(|_| anyhow!("bad resolution set {set:?}")))
        .collect::<Result<Vec<_>>>()?;
    if ks.is_empty() || ks.contains(&0) {
        bail!("bad resolution set {set:?}");
    }
    Ok(ks)
}

/// Trains and evaluates every (resolution set, global mode) pair; writes `sweep.csv` and
/// returns its rows.
pub fn cmd_sweep(sets: &[String], modes: &str, data: &DataArgs, s: &Resolved) -> Result<Vec<String>> {
    let out = s.out()?;
    fs::create_dir_all(out)?;
    let sets = sets.iter().map(|x| parse_set(x)).collect::<Result<Vec<_>>>()?;
    let all_ks: Vec<usize> = sets.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let globals: &[bool] = match modes {
        "on" => &[true],
        "off" => &[false],
        _ => &[true, false],
    };
    let train_records = records_for(&DataArgs { split: Some("train".into()), ..data.clone() }, Split::Train)?;
    let eval_records = records_for(data, Split::Test)?;
    let root = image_root(data);
    let train_all = gather_features(&train_records, &root, s, &all_ks)?;
    let eval_all = gather_features(&eval_records, &root, s, &all_ks)?;
    let mut rows = vec![SWEEP_HEADER.to_string()];
    for ks in &sets {
        for &global in globals {
            let names: Vec<String> = ks.iter().map(ToString::to_string).collect();
            let run = out.join(format!("res-{}_global-{}", names.join("+"), if global { "on" } else { "off" }));
            let rs = Resolved { resolutions: ks.clone(), use_global: global, ..s.clone() };
            let pick = |all: &[MultiResFeatures]| all.iter().map(|f| select_resolutions(f, ks)).collect::<Result<Vec<_>>>();
            train_into(&run, &train_records, &pick(&train_all)?, &rs)?;
            let (model, vocab) = load_model(&run)?;
            let ev = evaluate_records(&model, &vocab, &eval_records, &pick(&eval_all)?, &rs)?;
            write_eval(&run, &ev)?;
            eprintln!("{}: {}", run.display(), summary(&ev.report));
            rows.push(sweep_row(ks, global, &ev.report, &run.display().to_string()));
        }
    }
    let mut csv = rows.join("\n");
    csv.push('\n');
    fs::write(out.join("sweep.csv"), csv)?;
    Ok(rows)
}
