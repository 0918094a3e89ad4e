//! Binary model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CPKT"  u32 version  u8 variant
//! u64 len  vocab JSON
//! u64 len  key=value lines (architecture, then free-form extras)
//! u32 count, then per tensor:
//!     u32 len  name   u8 trainable   u32 ndim   u32 dims..   f32 values..
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parser, Variant};
use crate::tensor::ParamStore;
use crate::treebank::Vocab;

pub const MAGIC: &[u8; 4] = b"CPKT";
pub const VERSION: u32 = 1;

/// Extras are stored under this prefix so they cannot shadow architecture keys.
const EXTRA_PREFIX: &str = "extra.";

/// Longest section the reader will allocate for; guards against garbage lengths.
const MAX_SECTION: u64 = 1 << 32;

/// A parser, its weights, and free-form metadata.
#[derive(Debug, Clone)]
pub struct ModelFile {
    pub parser: Parser,
    pub params: ParamStore<f32>,
    pub extra: BTreeMap<String, String>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::ModelFile(msg.into())
}

fn read_err(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        corrupt("truncated file")
    } else {
        Error::Io(e)
    }
}

pub fn write_model(
    w: &mut impl Write,
    parser: &Parser,
    params: &ParamStore<f32>,
    extra: &BTreeMap<String, String>,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u8(parser.variant().tag())?;

    let vocab = serde_json::to_vec(&parser.vocab).map_err(|e| corrupt(format!("vocab: {e}")))?;
    w.write_u64::<LE>(vocab.len() as u64)?;
    w.write_all(&vocab)?;

    let mut kv = String::new();
    for (k, v) in parser.config.to_kv() {
        kv.push_str(&format!("{k}={v}\n"));
    }
    for (k, v) in extra {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(corrupt(format!("metadata key `{k}` cannot be stored")));
        }
        kv.push_str(&format!("{EXTRA_PREFIX}{k}={v}\n"));
    }
    w.write_u64::<LE>(kv.len() as u64)?;
    w.write_all(kv.as_bytes())?;

    w.write_u32::<LE>(params.len() as u32)?;
    for (_, p) in params.iter() {
        w.write_u32::<LE>(p.name.len() as u32)?;
        w.write_all(p.name.as_bytes())?;
        w.write_u8(p.trainable as u8)?;
        w.write_u32::<LE>(p.shape.len() as u32)?;
        for &d in &p.shape {
            w.write_u32::<LE>(d as u32)?;
        }
        for &v in &p.value {
            w.write_f32::<LE>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_section(r: &mut impl Read, len: u64, what: &str) -> Result<Vec<u8>> {
    if len > MAX_SECTION {
        return Err(corrupt(format!("{what} length {len} is implausible")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(read_err)?;
    Ok(buf)
}

pub fn read_model(r: &mut impl Read) -> Result<ModelFile> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(read_err)?;
    if &magic != MAGIC {
        return Err(corrupt("not a model file"));
    }
    let version = r.read_u32::<LE>().map_err(read_err)?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    let tag = r.read_u8().map_err(read_err)?;
    let variant =
        Variant::from_tag(tag).ok_or_else(|| corrupt(format!("unknown variant tag {tag}")))?;

    let len = r.read_u64::<LE>().map_err(read_err)?;
    let vocab: Vocab = serde_json::from_slice(&read_section(r, len, "vocab")?)
        .map_err(|e| corrupt(format!("vocab: {e}")))?;

    let len = r.read_u64::<LE>().map_err(read_err)?;
    let kv = String::from_utf8(read_section(r, len, "hyperparameters")?)
        .map_err(|_| corrupt("hyperparameters are not UTF-8"))?;
    let mut config = ModelConfig::default();
    let mut extra = BTreeMap::new();
    for line in kv.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| corrupt(format!("bad hyperparameter line `{line}`")))?;
        if let Some(k) = k.strip_prefix(EXTRA_PREFIX) {
            extra.insert(k.to_string(), v.to_string());
        } else if !config.set(k, v).map_err(|e| corrupt(e.to_string()))? {
            return Err(corrupt(format!("unknown hyperparameter `{k}`")));
        }
    }
    if config.variant != variant {
        return Err(corrupt("variant tag disagrees with hyperparameters"));
    }

    // Rebuilding fixes the parameter order and shapes; stored values then
    // overwrite the throwaway initialization.
    let (parser, mut params) =
        Parser::build::<f32>(config, vocab, &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| corrupt(format!("cannot rebuild model: {e}")))?;
    let count = r.read_u32::<LE>().map_err(read_err)? as usize;
    if count != params.len() {
        return Err(corrupt(format!(
            "expected {} tensors, found {count}",
            params.len()
        )));
    }
    for _ in 0..count {
        let len = r.read_u32::<LE>().map_err(read_err)?;
        let name = String::from_utf8(read_section(r, len as u64, "tensor name")?)
            .map_err(|_| corrupt("tensor name is not UTF-8"))?;
        let trainable = r.read_u8().map_err(read_err)? != 0;
        let ndim = r.read_u32::<LE>().map_err(read_err)? as usize;
        let shape = (0..ndim)
            .map(|_| r.read_u32::<LE>().map(|d| d as usize))
            .collect::<io::Result<Vec<_>>>()
            .map_err(read_err)?;
        let id = params
            .id(&name)
            .map_err(|_| corrupt(format!("unexpected tensor `{name}`")))?;
        let p = params.get_mut(id);
        if p.shape != shape {
            return Err(corrupt(format!(
                "tensor `{name}` has shape {shape:?}, expected {:?}",
                p.shape
            )));
        }
        r.read_f32_into::<LE>(&mut p.value).map_err(read_err)?;
        p.trainable = trainable;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(corrupt("trailing bytes after the last tensor"));
    }
    Ok(ModelFile {
        parser,
        params,
        extra,
    })
}

pub fn save(
    path: &Path,
    parser: &Parser,
    params: &ParamStore<f32>,
    extra: &BTreeMap<String, String>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, parser, params, extra)
}

pub fn load(path: &Path) -> Result<ModelFile> {
    read_model(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderDims;
    use crate::labeler::LabelerDims;
    use crate::treebank::{collapse_unary, parse_bracketed, Language};

    fn toy(variant: Variant) -> (Parser, ParamStore<f32>) {
        let t = parse_bracketed("(S (NP (DT the) (NN dog)) (VP (VBZ barks)))").unwrap();
        let vocab =
            Vocab::build(&[collapse_unary(&t[0], 4).unwrap()], 1, Language::English).unwrap();
        let config = ModelConfig {
            variant,
            encoder: EncoderDims {
                word_dim: 4,
                pos_dim: 2,
                char_dim: 2,
                char_hidden: 3,
                hidden: 3,
                layers: 1,
            },
            span_hidden: 4,
            proj_dim: 3,
            labeler: LabelerDims {
                tree_hidden: 3,
                label_dim: 2,
                label_hidden: 3,
                out_hidden: 4,
                max_chain: 4,
            },
        };
        Parser::build(config, vocab, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
    }

    fn bytes(
        parser: &Parser,
        params: &ParamStore<f32>,
        extra: &BTreeMap<String, String>,
    ) -> Vec<u8> {
        let mut buf = Vec::new();
        write_model(&mut buf, parser, params, extra).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for variant in Variant::ALL {
            let (parser, mut params) = toy(variant);
            let word = params.id("enc.word").unwrap();
            params.get_mut(word).trainable = false;
            let extra: BTreeMap<_, _> = [("epoch".to_string(), "3".to_string())]
                .into_iter()
                .collect();
            let buf = bytes(&parser, &params, &extra);
            let back = read_model(&mut buf.as_slice()).unwrap();
            assert_eq!(back.parser.vocab, parser.vocab);
            assert_eq!(back.parser.config, parser.config);
            assert_eq!(back.extra, extra);
            for ((_, a), (_, b)) in params.iter().zip(back.params.iter()) {
                assert_eq!(a.name, b.name);
                assert_eq!(a.shape, b.shape);
                assert_eq!(a.trainable, b.trainable);
                assert!(a
                    .value
                    .iter()
                    .zip(&b.value)
                    .all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            assert_eq!(bytes(&back.parser, &back.params, &back.extra), buf);
        }
    }

    #[test]
    fn rejects_damage() {
        let (parser, params) = toy(Variant::BinarySpan);
        let buf = bytes(&parser, &params, &BTreeMap::new());

        let err = read_model(&mut &buf[..buf.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        let mut bumped = buf.clone();
        bumped[4] = 2;
        assert!(read_model(&mut bumped.as_slice())
            .unwrap_err()
            .to_string()
            .contains("version 2"));

        let mut wrong_magic = buf.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(
            read_model(&mut wrong_magic.as_slice()),
            Err(Error::ModelFile(_))
        ));

        let mut tag = buf.clone();
        tag[8] = 3;
        assert!(matches!(
            read_model(&mut tag.as_slice()),
            Err(Error::ModelFile(_))
        ));

        let mut trailing = buf;
        trailing.push(0);
        assert!(matches!(
            read_model(&mut trailing.as_slice()),
            Err(Error::ModelFile(_))
        ));
    }
}
