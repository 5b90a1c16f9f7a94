//! Text model file.
//!
//! ```text
//! veritopic-lda 1
//! <K> <V> <alpha> <beta> <seed> <num_docs>
//! <token> <doc_freq>            (V lines, id order)
//! <p_0> <p_1> ... <p_{V-1}>     (K lines, one topic row each)
//! ```
//!
//! Reals are written in shortest round-trip notation, so reading back
//! reproduces every value bit-for-bit.

use std::fs;
use std::path::Path;

use super::lda::TopicModel;
use super::vocab::Vocab;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &str = "veritopic-lda";
pub const MODEL_VERSION: u32 = 1;

pub fn to_string(model: &TopicModel) -> String {
    let v = model.vocab.len();
    let mut out = format!("{MODEL_MAGIC} {MODEL_VERSION}\n");
    out += &format!(
        "{} {} {:e} {:e} {} {}\n",
        model.k,
        v,
        model.alpha,
        model.beta,
        model.seed,
        model.vocab.num_docs()
    );
    for (id, tok) in model.vocab.tokens().iter().enumerate() {
        out += &format!("{tok} {}\n", model.vocab.doc_freq(id));
    }
    for t in 0..model.k {
        let row: Vec<String> = model.topic(t).iter().map(|x| format!("{x:e}")).collect();
        out += &row.join(" ");
        out.push('\n');
    }
    out
}

pub fn from_str(text: &str, path: &Path) -> Result<TopicModel> {
    let mut lines = text.lines().enumerate();
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("unexpected end of file, expected {what}"),
        })
    };
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        msg,
    };

    let (ln, magic) = next("header")?;
    if magic.trim() != format!("{MODEL_MAGIC} {MODEL_VERSION}") {
        return Err(bad(ln, format!("expected `{MODEL_MAGIC} {MODEL_VERSION}`, got `{magic}`")));
    }
    let (ln, dims) = next("dimensions")?;
    let f: Vec<&str> = dims.split_whitespace().collect();
    if f.len() != 6 {
        return Err(bad(ln, "expected `K V alpha beta seed num_docs`".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| bad(ln, format!("{s}: {e}")));
    let int = |s: &str| s.parse::<u64>().map_err(|e| bad(ln, format!("{s}: {e}")));
    let (k, v) = (int(f[0])? as usize, int(f[1])? as usize);
    let (alpha, beta, seed, num_docs) = (num(f[2])?, num(f[3])?, int(f[4])?, int(f[5])? as usize);

    let mut entries = Vec::with_capacity(v);
    for _ in 0..v {
        let (ln, line) = next("vocabulary entry")?;
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(tok), Some(df), None) => {
                let df = df.parse::<usize>().map_err(|e| bad(ln, format!("{df}: {e}")))?;
                entries.push((tok.to_string(), df));
            }
            _ => return Err(bad(ln, format!("expected `<token> <doc_freq>`, got `{line}`"))),
        }
    }
    let mut p = Vec::with_capacity(k * v);
    for _ in 0..k {
        let (ln, line) = next("topic row")?;
        let row = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|e| bad(ln, format!("{s}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != v {
            return Err(bad(ln, format!("topic row has {} values, expected {v}", row.len())));
        }
        p.extend(row);
    }
    Ok(TopicModel {
        k,
        alpha,
        beta,
        seed,
        vocab: Vocab::from_parts(entries, num_docs),
        topic_word: p,
        state: None,
    })
}

pub fn save(path: &Path, model: &TopicModel) -> Result<()> {
    fs::write(path, to_string(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TopicModel> {
    from_str(&fs::read_to_string(path)?, path)
}
