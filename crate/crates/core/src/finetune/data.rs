use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::qa::QaExample;

/// Single-sequence classification record (`{"text", "label"}` per line).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClsRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    pub label: String,
}

/// Sequence-pair record (`{"premise", "hypothesis", "label"}` per line).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub premise: String,
    pub hypothesis: String,
    pub label: String,
}

/// One tagged sentence from CoNLL-style two-column text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(line).map_err(|e| {
            Error::Finetune(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_cls_jsonl(path: &Path) -> Result<Vec<ClsRecord>> {
    read_jsonl(path)
}

pub fn read_pair_jsonl(path: &Path) -> Result<Vec<PairRecord>> {
    read_jsonl(path)
}

pub fn write_cls_jsonl(path: &Path, records: &[ClsRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Two-column `token<TAB>tag` lines with blank-line sentence breaks. A
/// single space also separates columns (both appear in the wild).
pub fn read_conll(path: &Path) -> Result<Vec<TaggedSentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll(&text, &path.display().to_string())
}

pub fn parse_conll(text: &str, origin: &str) -> Result<Vec<TaggedSentence>> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            if !tokens.is_empty() {
                sentences.push(TaggedSentence {
                    tokens: std::mem::take(&mut tokens),
                    tags: std::mem::take(&mut tags),
                });
            }
            continue;
        }
        let (token, tag) = line
            .split_once('\t')
            .or_else(|| line.rsplit_once(' '))
            .ok_or_else(|| Error::Finetune(format!("{origin}:{}: expected two columns", i + 1)))?;
        if token.is_empty() || tag.is_empty() {
            return Err(Error::Finetune(format!("{origin}:{}: empty column", i + 1)));
        }
        tokens.push(token.to_string());
        tags.push(tag.to_string());
    }
    if !tokens.is_empty() {
        sentences.push(TaggedSentence { tokens, tags });
    }
    Ok(sentences)
}

pub fn write_conll(path: &Path, sentences: &[TaggedSentence]) -> Result<()> {
    let mut text = String::new();
    for s in sentences {
        for (tok, tag) in s.tokens.iter().zip(&s.tags) {
            text.push_str(tok);
            text.push('\t');
            text.push_str(tag);
            text.push('\n');
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

// SQuAD-style JSON nesting.
#[derive(Debug, Serialize, Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadArticle {
    #[serde(default)]
    title: Option<String>,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<SquadAnswer>,
    #[serde(default)]
    is_impossible: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

/// Flatten SQuAD-style JSON into QA examples. Answerable items keep their
/// first answer for training; all gold answers stay available to scoring via
/// [`read_squad_golds`].
pub fn read_squad(path: &Path) -> Result<Vec<QaExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SquadFile = serde_json::from_str(&text)?;
    let mut out = Vec::new();
    for article in file.data {
        for para in article.paragraphs {
            for qa in para.qas {
                let answerable = !qa.is_impossible && !qa.answers.is_empty();
                let first = qa.answers.first();
                out.push(QaExample {
                    id: qa.id,
                    context: para.context.clone(),
                    question: qa.question,
                    answer_text: answerable.then(|| first.unwrap().text.clone()),
                    answer_char_start: answerable.then(|| byte_to_char_offset(&para.context, first.unwrap().answer_start)),
                    is_answerable: answerable,
                });
            }
        }
    }
    Ok(out)
}

/// All gold answer strings per example id, for EM/F1 scoring.
pub fn read_squad_golds(path: &Path) -> Result<Vec<(String, Vec<String>, bool)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SquadFile = serde_json::from_str(&text)?;
    let mut out = Vec::new();
    for article in file.data {
        for para in article.paragraphs {
            for qa in para.qas {
                let answerable = !qa.is_impossible && !qa.answers.is_empty();
                out.push((
                    qa.id,
                    qa.answers.into_iter().map(|a| a.text).collect(),
                    answerable,

                ));
            }
        }
    }
    Ok(out)
}

/// SQuAD files index answers by byte offset; the toolkit works in chars.
fn byte_to_char_offset(context: &str, byte_offset: usize) -> usize {
    context
        .char_indices()
        .take_while(|(b, _)| *b < byte_offset)
        .count()
}
