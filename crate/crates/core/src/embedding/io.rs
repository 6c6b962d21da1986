//! word2vec text and binary model files.
//!
//! Text: header `"<count> <dim>\n"`, then one `token v1 .. vd` line per token.
//! Binary: same header, then per token the token bytes, one space, `dim`
//! little-endian f32 values and a newline. Readers skip whitespace before
//! each token, so files without the trailing newlines also load.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::model::EmbeddingModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFormat {
    Word2vecText,
    Word2vecBinary,
}

impl std::str::FromStr for ModelFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word2vec_text" | "text" => Ok(ModelFormat::Word2vecText),
            "word2vec_binary" | "binary" => Ok(ModelFormat::Word2vecBinary),
            other => Err(Error::Config(format!("unknown model format `{other}`"))),
        }
    }
}

pub fn write_text<W: Write>(model: &EmbeddingModel, mut w: W) -> Result<()> {
    writeln!(w, "{} {}", model.len(), model.dim())?;
    for i in 0..model.len() {
        write!(w, "{}", model.word(i))?;
        for x in model.vector_at(i) {
            write!(w, " {x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_binary<W: Write>(model: &EmbeddingModel, mut w: W) -> Result<()> {
    writeln!(w, "{} {}", model.len(), model.dim())?;
    for i in 0..model.len() {
        w.write_all(model.word(i).as_bytes())?;
        w.write_all(b" ")?;
        for x in model.vector_at(i) {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn model_to_bytes(model: &EmbeddingModel, format: ModelFormat) -> Vec<u8> {
    let mut buf = Vec::new();
    let res = match format {
        ModelFormat::Word2vecText => write_text(model, &mut buf),
        ModelFormat::Word2vecBinary => write_binary(model, &mut buf),
    };
    res.expect("writing to a Vec cannot fail");
    buf
}

pub fn save_model(
    model: &EmbeddingModel,
    path: impl AsRef<Path>,
    format: ModelFormat,
) -> Result<()> {
    fs::write(path, model_to_bytes(model, format))?;
    Ok(())
}

/// Load a model file; vectors are normalized on load.
pub fn load_model(path: impl AsRef<Path>, format: ModelFormat) -> Result<EmbeddingModel> {
    let bytes = fs::read(path)?;
    parse_model(&bytes, format)
}

pub fn parse_model(bytes: &[u8], format: ModelFormat) -> Result<EmbeddingModel> {
    let mut model = match format {
        ModelFormat::Word2vecText => parse_text(bytes)?,
        ModelFormat::Word2vecBinary => parse_binary(bytes)?,
    };
    model.normalize();
    Ok(model)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.pos as u64, msg)
    }

    fn skip_whitespace(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    /// Bytes up to (not including) the next byte matching `stop`.
    fn until(&mut self, stop: impl Fn(u8) -> bool) -> &'a [u8] {
        let start = self.pos;
        while self.pos < self.bytes.len() && !stop(self.bytes[self.pos]) {
            self.pos += 1;
        }
        &self.bytes[start..self.pos]
    }

    fn header(&mut self) -> Result<(usize, usize)> {
        let line = self.until(|b| b == b'\n');
        let text =
            std::str::from_utf8(line).map_err(|_| Error::format(0, "header is not UTF-8"))?;
        let mut parts = text.split_whitespace();
        let parse = |p: Option<&str>| p.and_then(|s| s.parse::<usize>().ok());
        let (Some(n), Some(d), None) = (parse(parts.next()), parse(parts.next()), parts.next())
        else {
            return Err(Error::format(0, format!("bad header `{}`", text.trim())));
        };
        if d == 0 {
            return Err(Error::format(0, "dimension must be >= 1"));
        }
        Ok((n, d))
    }

    fn token(&mut self) -> Result<String> {
        let start = self.pos;
        let raw = self.until(|b| b.is_ascii_whitespace());
        if raw.is_empty() {
            return Err(self.err("expected token"));
        }
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::format(start as u64, "token is not UTF-8"))
    }
}

fn parse_text(bytes: &[u8]) -> Result<EmbeddingModel> {
    let mut c = Cursor { bytes, pos: 0 };
    let (n, d) = c.header()?;
    let mut words = Vec::with_capacity(n);
    let mut flat = Vec::with_capacity(n * d);
    loop {
        c.skip_whitespace();
        if c.at_end() {
            break;
        }
        if words.len() == n {
            return Err(c.err(format!("more than the {n} tokens declared in the header")));
        }
        let line_start = c.pos;
        let line = c.until(|b| b == b'\n');
        let text = std::str::from_utf8(line)
            .map_err(|_| Error::format(line_start as u64, "line is not UTF-8"))?;
        let mut parts = text.split_whitespace();
        let word = parts
            .next()
            .expect("line is non-empty after skipping whitespace");
        let mut count = 0;
        for p in parts {
            let x: f32 = p.parse().map_err(|_| {
                Error::format(line_start as u64, format!("bad number `{p}` for `{word}`"))
            })?;
            flat.push(x);
            count += 1;
        }
        if count != d {
            return Err(Error::format(
                line_start as u64,
                format!("`{word}` has {count} components, expected {d}"),
            ));
        }
        words.push(word.to_string());
    }
    if words.len() != n {
        return Err(c.err(format!("header declares {n} tokens, found {}", words.len())));
    }
    EmbeddingModel::from_parts(words, flat, d)
}

fn parse_binary(bytes: &[u8]) -> Result<EmbeddingModel> {
    let mut c = Cursor { bytes, pos: 0 };
    let (n, d) = c.header()?;
    let mut words = Vec::with_capacity(n);
    let mut flat = Vec::with_capacity(n * d);
    for i in 0..n {
        c.skip_whitespace();
        if c.at_end() {
            return Err(c.err(format!("header declares {n} tokens, found {i}")));
        }
        let word = c.token()?;
        if c.at_end() || c.bytes[c.pos] != b' ' {
            return Err(c.err(format!("expected space after `{word}`")));
        }
        c.pos += 1;
        let need = d * 4;
        if c.bytes.len() - c.pos < need {
            return Err(c.err(format!("truncated vector for `{word}`")));
        }
        for chunk in c.bytes[c.pos..c.pos + need].chunks_exact(4) {
            flat.push(f32::from_le_bytes(chunk.try_into().expect("chunk of 4")));
        }
        c.pos += need;
        words.push(word);
    }
    c.skip_whitespace();
    if !c.at_end() {
        return Err(c.err(format!("trailing data after {n} tokens")));
    }
    EmbeddingModel::from_parts(words, flat, d)
}
