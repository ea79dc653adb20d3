use std::path::PathBuf;

use clap::Args;

use lrlm_core::corpus::ingest_documents;
use lrlm_core::tokenizer::{
    build_alphabet, encode, pack_sequences, train_bilingual_wordpiece, train_wordpiece, write_packed,
    Vocab,
};

use crate::CliError;

#[derive(Args)]
pub struct VocabTrainArgs {
    /// Training corpus (line-oriented JSON documents).
    #[arg(long)]
    input: PathBuf,
    /// Second-language corpus for a joint bilingual vocabulary.
    #[arg(long)]
    bilingual: Option<PathBuf>,
    /// Vocabulary file output (one token per line).
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 32_000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 400)]
    alphabet_limit: usize,
    #[arg(long, default_value_t = 2)]
    min_pair_freq: u64,
}

pub fn run_vocab_train(args: VocabTrainArgs) -> Result<(), CliError> {
    let (docs, _) = ingest_documents(&args.input)?;
    let texts: Vec<String> = docs.into_iter().map(|d| d.text).collect();

    let vocab = match &args.bilingual {
        Some(second) => {
            let (docs_b, _) = ingest_documents(second)?;
            let texts_b: Vec<String> = docs_b.into_iter().map(|d| d.text).collect();
            let all: Vec<&str> = texts.iter().chain(texts_b.iter()).map(String::as_str).collect();
            let alphabet = build_alphabet(all, args.alphabet_limit)?;
            train_bilingual_wordpiece(&texts, &texts_b, args.vocab_size, &alphabet, args.min_pair_freq)?
        }
        None => {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let alphabet = build_alphabet(refs.iter().copied(), args.alphabet_limit)?;
            train_wordpiece(refs, args.vocab_size, &alphabet, args.min_pair_freq)?
        }
    };
    vocab.write(&args.output)?;
    println!(
        "{}",
        serde_json::json!({"vocab_size": vocab.size(), "output": args.output})
    );
    Ok(())
}

#[derive(Args)]
pub struct PackArgs {
    /// Cleaned corpus (line-oriented JSON documents).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Packed dataset output (binary records + JSON stats sidecar).
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 512)]
    max_len: usize,
}

pub fn run_pack(args: PackArgs) -> Result<(), CliError> {
    let vocab = Vocab::read(&args.vocab)?;
    let (docs, _) = ingest_documents(&args.input)?;
    let encoded = docs
        .into_iter()
        .map(|d| (d.id, encode(&d.text, &vocab)));
    let (samples, stats) = pack_sequences(encoded, args.max_len)?;
    write_packed(&args.output, &samples)?;
    println!("{}", serde_json::to_string(&stats).map_err(|e| CliError::runtime(e.to_string()))?);
    Ok(())
}
