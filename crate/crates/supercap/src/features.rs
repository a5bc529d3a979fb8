//! The `SCF1` feature file: one image's global and per-region embeddings.
//!
//! Layout (little-endian): magic `SCF1`, u32 version, u32 dim, u32 resolution count,
//! then `(u32 K, u32 count)` per resolution, then records of
//! `u8 kind | u32 resolution | u32 label | 4×u32 bbox | dim×f32`, global record first.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use supercap_core::imaging::BBox;
use supercap_core::regions::{FeatureVector, MultiResFeatures, RegionFeature, ResolutionFeatures};

use crate::error::{io_err, FormatError};

pub const MAGIC: &[u8; 4] = b"SCF1";
pub const VERSION: u32 = 1;
const KIND_GLOBAL: u8 = 0;
const KIND_REGION: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, kind: u8, res: usize, f: &RegionFeature) {
    out.push(kind);
    put_u32(out, res);
    out.extend_from_slice(&f.label.to_le_bytes());
    for v in [f.bbox.x, f.bbox.y, f.bbox.w, f.bbox.h] {
        put_u32(out, v);
    }
    for v in f.vector.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_features(f: &MultiResFeatures) -> Result<Vec<u8>, FormatError> {
    if !f.is_consistent() {
        return Err(FormatError::Invalid("vectors do not share the declared dimension".into()));
    }
    let mut out = Vec::with_capacity(16 + f.token_count() * (25 + 4 * f.dim));
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, f.dim);
    put_u32(&mut out, f.resolutions.len());
    for r in &f.resolutions {
        put_u32(&mut out, r.k);
        put_u32(&mut out, r.regions.len());
    }
    put_record(&mut out, KIND_GLOBAL, 0, &f.global);
    for (i, r) in f.resolutions.iter().enumerate() {
        for region in &r.regions {
            put_record(&mut out, KIND_REGION, i, region);
        }
    }
    Ok(out)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, on_eof: impl Fn() -> FormatError) -> Result<[u8; N], FormatError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => on_eof(),
            _ => FormatError::Read(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self, on_eof: impl Fn() -> FormatError) -> Result<usize, FormatError> {
        Ok(u32::from_le_bytes(self.bytes(on_eof)?) as usize)
    }
}

pub fn read_features_from(input: impl Read) -> Result<MultiResFeatures, FormatError> {
    let mut r = Reader { inner: input };
    let header = || FormatError::TruncatedHeader;
    let magic = r.bytes::<4>(header)?;
    if &magic != MAGIC {
        return Err(FormatError::BadMagic { expected: "SCF1", found: magic });
    }
    let version = r.u32(header)? as u32;
    if version != VERSION {
        return Err(FormatError::Version { found: version, supported: VERSION });
    }
    let dim = r.u32(header)?;
    let n_res = r.u32(header)?;
    let mut layout = Vec::with_capacity(n_res.min(1024));
    for _ in 0..n_res {
        layout.push((r.u32(header)?, r.u32(header)?));
    }
    let total = 1 + layout.iter().map(|&(_, c)| c).sum::<usize>();
    let mut records = Vec::with_capacity(total.min(1 << 16));
    for index in 0..total {
        let eof = || FormatError::TruncatedRecord { index };
        let kind = r.bytes::<1>(eof)?[0];
        let res = r.u32(eof)?;
        let label = r.u32(eof)? as u32;
        let mut b = [0usize; 4];
        for v in &mut b {
            *v = r.u32(eof)?;
        }
        let mut values = Vec::with_capacity(dim.min(1 << 16));
        for _ in 0..dim {
            values.push(f32::from_le_bytes(r.bytes(eof)?));
        }
        let vector = FeatureVector::new(values)
            .map_err(|_| FormatError::Invalid(format!("record {index} holds non-finite values")))?;
        records.push((kind, res, RegionFeature { label, bbox: BBox::new(b[0], b[1], b[2], b[3]), vector }));
    }
    let mut extra = [0u8; 1];
    if r.inner.read(&mut extra).map_err(FormatError::Read)? != 0 {
        return Err(FormatError::Invalid("trailing bytes after the last record".into()));
    }
    let mut records = records.into_iter();
    let (kind, _, global) = records.next().expect("at least the global record");
    if kind != KIND_GLOBAL {
        return Err(FormatError::Invalid("first record is not the global feature".into()));
    }
    let mut resolutions = Vec::with_capacity(layout.len());
    for (i, &(k, count)) in layout.iter().enumerate() {
        let mut regions = Vec::with_capacity(count);
        for (kind, res, f) in records.by_ref().take(count) {
            if kind != KIND_REGION || res != i {
                return Err(FormatError::Invalid(format!("region record out of order in resolution {i}")));
            }
            regions.push(f);
        }
        resolutions.push(ResolutionFeatures { k, regions });
    }
    Ok(MultiResFeatures { dim, global, resolutions })
}

pub fn write_features(f: &MultiResFeatures, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    let bytes = encode_features(f)?;
    fs::File::create(path).and_then(|mut file| file.write_all(&bytes)).map_err(io_err(path))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<MultiResFeatures, FormatError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_features_from(io::BufReader::new(file))
}
