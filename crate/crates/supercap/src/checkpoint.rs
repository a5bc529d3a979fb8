//! Named-tensor checkpoints, model directories, vocabulary and label-map files.
//!
//! Checkpoint layout (little-endian): magic `SCP1`, u32 version, u32 tensor count, then
//! per tensor `u32 name length | name | u32 rank | rank×u32 dims | f32 payload`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use supercap_core::model::{Captioner, ModelConfig};
use supercap_core::superpixel::LabelMap;
use supercap_core::tensor::{ParamStore, Tensor};
use supercap_core::text::Vocab;

use crate::error::{io_err, FormatError};

pub const MAGIC: &[u8; 4] = b"SCP1";
pub const VERSION: u32 = 1;
pub const PARAMS_FILE: &str = "params.bin";
pub const CONFIG_FILE: &str = "config.txt";
pub const VOCAB_FILE: &str = "vocab.txt";

pub fn encode_params(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + store.scalar_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, index: Option<usize>) -> Result<&'a [u8], FormatError> {
    if bytes.len() < n {
        return Err(match index {
            Some(index) => FormatError::TruncatedRecord { index },
            None => FormatError::TruncatedHeader,
        });
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn take_u32(bytes: &mut &[u8], index: Option<usize>) -> Result<usize, FormatError> {
    Ok(u32::from_le_bytes(take(bytes, 4, index)?.try_into().expect("4 bytes")) as usize)
}

pub fn decode_params(mut bytes: &[u8]) -> Result<ParamStore<f32>, FormatError> {
    let b = &mut bytes;
    let magic: [u8; 4] = take(b, 4, None)?.try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(FormatError::BadMagic { expected: "SCP1", found: magic });
    }
    let version = take_u32(b, None)? as u32;
    if version != VERSION {
        return Err(FormatError::Version { found: version, supported: VERSION });
    }
    let count = take_u32(b, None)?;
    let mut store = ParamStore::new();
    for i in 0..count {
        let at = Some(i);
        let len = take_u32(b, at)?;
        let name = std::str::from_utf8(take(b, len, at)?)
            .map_err(|_| FormatError::Invalid(format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let rank = take_u32(b, at)?;
        let shape = (0..rank).map(|_| take_u32(b, at)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let payload = take(b, n.checked_mul(4).ok_or(FormatError::Invalid("tensor too large".into()))?, at)?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| FormatError::Invalid(e.to_string()))?;
        if store.id(&name).is_some() {
            return Err(FormatError::Invalid(format!("duplicate tensor {name:?}")));
        }
        store.insert(&name, t);
    }
    if !b.is_empty() {
        return Err(FormatError::Invalid("trailing bytes after the last tensor".into()));
    }
    Ok(store)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    fs::File::create(path).and_then(|mut f| f.write_all(bytes)).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut out)).map_err(io_err(path))?;
    Ok(out)
}

/// Writes `params.bin`, `config.txt` and `vocab.txt` into `dir`.
pub fn save_model(dir: impl AsRef<Path>, model: &Captioner<f32>, vocab: &Vocab) -> Result<(), FormatError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join(PARAMS_FILE), &encode_params(model.params()))?;
    write_file(&dir.join(CONFIG_FILE), model.config().to_kv().as_bytes())?;
    write_file(&dir.join(VOCAB_FILE), vocab_to_text(vocab).as_bytes())
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<(Captioner<f32>, Vocab), FormatError> {
    let dir = dir.as_ref();
    let text = String::from_utf8(read_file(&dir.join(CONFIG_FILE))?)
        .map_err(|_| FormatError::Invalid("config is not UTF-8".into()))?;
    let config = ModelConfig::from_kv(&text).map_err(|e| FormatError::Invalid(e.to_string()))?;
    let store = decode_params(&read_file(&dir.join(PARAMS_FILE))?)?;
    let model = Captioner::from_params(config, &store).map_err(|e| FormatError::Invalid(e.to_string()))?;
    let vocab = vocab_from_text(
        &String::from_utf8(read_file(&dir.join(VOCAB_FILE))?)
            .map_err(|_| FormatError::Invalid("vocabulary is not UTF-8".into()))?,
    )?;
    Ok((model, vocab))
}

/// `word id` per line, in id order.
pub fn vocab_to_text(vocab: &Vocab) -> String {
    vocab.words().iter().enumerate().map(|(i, w)| format!("{w} {i}\n")).collect()
}

pub fn vocab_from_text(text: &str) -> Result<Vocab, FormatError> {
    let mut words = Vec::new();
    for (line_no, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || FormatError::Invalid(format!("vocabulary line {}: {line:?}", line_no + 1));
        let (word, id) = line.rsplit_once(' ').ok_or_else(bad)?;
        if id.parse::<usize>().map_err(|_| bad())? != words.len() {
            return Err(bad());
        }
        words.push(word.to_string());
    }
    let vocab = Vocab::from_words(words.iter().skip(4).map(String::as_str));
    if vocab.words() != words.as_slice() {
        return Err(FormatError::Invalid("vocabulary does not start with the special tokens".into()));
    }
    Ok(vocab)
}

const LABEL_MAGIC: &[u8; 4] = b"SCL1";

/// `SCL1 | u32 width | u32 height | width×height u32 labels`, little-endian.
pub fn write_labels(map: &LabelMap, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut out = Vec::with_capacity(12 + map.labels().len() * 4);
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    for l in map.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    write_file(path.as_ref(), &out)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap, FormatError> {
    let bytes = read_file(path.as_ref())?;
    let b = &mut bytes.as_slice();
    let magic: [u8; 4] = take(b, 4, None)?.try_into().expect("4 bytes");
    if &magic != LABEL_MAGIC {
        return Err(FormatError::BadMagic { expected: "SCL1", found: magic });
    }
    let (w, h) = (take_u32(b, None)?, take_u32(b, None)?);
    let payload = take(b, w * h * 4, Some(0))?;
    let labels = payload.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    LabelMap::new(w, h, labels).map_err(|e| FormatError::Invalid(e.to_string()))
}
