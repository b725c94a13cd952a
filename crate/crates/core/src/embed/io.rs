//! Binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "SPPVMODL" | u32 version | str config-json
//! u64 min_count | u32 n_words | n_words × (str token, u64 count)
//! u32 n_tags | n_tags × str tag
//! f32s word_in | f32s word_out | f32s doc_vecs
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8; `f32s` is a u64 element
//! count followed by raw little-endian floats, so a round trip is bit-exact.

use std::io::{Read, Write};

use super::model::{EmbedConfig, EmbeddingModel};
use super::vocab::Vocab;
use crate::binio::{BinReader, BinWriter};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"SPPVMODL";
pub const MODEL_VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &EmbeddingModel, out: W) -> Result<W> {
    let mut w = BinWriter::new(out);
    w.bytes(MODEL_MAGIC)?;
    w.u32(MODEL_VERSION)?;
    let config = serde_json::to_string(&model.config).map_err(|e| Error::Serialization(e.to_string()))?;
    w.str(&config)?;
    w.u64(model.vocab.min_count())?;
    w.u32(model.vocab.len() as u32)?;
    for (token, count) in model.vocab.entries() {
        w.str(token)?;
        w.u64(count)?;
    }
    w.u32(model.tags.len() as u32)?;
    for tag in &model.tags {
        w.str(tag)?;
    }
    w.f32s(&model.word_in)?;
    w.f32s(&model.word_out)?;
    w.f32s(&model.doc_vecs)?;
    Ok(w.into_inner())
}

pub fn read_model<R: Read>(input: R) -> Result<EmbeddingModel> {
    let mut r = BinReader::new(input);
    r.magic(MODEL_MAGIC)?;
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Serialization(format!("unsupported model version {version}")));
    }
    let config: EmbedConfig =
        serde_json::from_str(&r.str()?).map_err(|e| Error::Serialization(e.to_string()))?;
    let min_count = r.u64()?;
    let n_words = r.u32()? as usize;
    let mut entries = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        let token = r.str()?;
        entries.push((token, r.u64()?));
    }
    let vocab = Vocab::from_counts(entries, min_count)?;
    let n_tags = r.u32()? as usize;
    let tags = (0..n_tags).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let word_in = r.f32s()?;
    let word_out = r.f32s()?;
    let doc_vecs = r.f32s()?;

    let dim = config.dim;
    let check = |name: &str, m: &[f32], rows: usize| {
        if m.len() != rows * dim {
            Err(Error::Serialization(format!(
                "{name} has {} values, expected {rows}×{dim}",
                m.len()
            )))
        } else {
            Ok(())
        }
    };
    check("word_in", &word_in, vocab.len())?;
    check("word_out", &word_out, vocab.len())?;
    check("doc_vecs", &doc_vecs, tags.len())?;
    let tag_index = tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    Ok(EmbeddingModel {
        config,
        vocab,
        word_in,
        word_out,
        tags,
        tag_index,
        doc_vecs,
    })
}

impl EmbeddingModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        write_model(self, Vec::new()).expect("writing to a Vec cannot fail")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        read_model(bytes)
    }
}
