use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rvqa_nn::{DenseArray, GruCell, ParameterStore, Tape, Var};

use crate::error::{CoreError, Result};

pub const UNK_TOKEN: &str = "<unk>";

/// Lowercases, drops punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Token list where line number equals index and index 0 is `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl QuestionVocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(CoreError::Input(format!(
                "question vocabulary must start with {UNK_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(CoreError::Input(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Most frequent tokens first, ties alphabetical, capped at `max_size`
    /// entries including `<unk>`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        counts.remove(UNK_TOKEN);
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec![UNK_TOKEN.to_string()];
        tokens.extend(
            ranked
                .into_iter()
                .take(max_size.saturating_sub(1))
                .map(|(t, _)| t),
        );
        Self::from_tokens(tokens).expect("unique tokens")
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn encode(&self, text: &str) -> Result<TokenSequence> {
        let tokens: Vec<usize> = tokenize(text).iter().map(|t| self.index_of(t)).collect();
        TokenSequence::new(tokens, text, self.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<usize>,
    raw_text: String,
}

impl TokenSequence {
    pub fn new(tokens: Vec<usize>, raw_text: &str, vocab_size: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(CoreError::Input(format!("question `{raw_text}` has no tokens")));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(CoreError::Input(format!(
                "token index {bad} outside vocabulary of {vocab_size}"
            )));
        }
        Ok(Self {
            tokens,
            raw_text: raw_text.to_string(),
        })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn raw_text(&self) -> &str {
        &self.raw_text
    }
}

/// Word lookup embedding followed by a GRU; the final hidden state is the
/// question representation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionEncoder {
    prefix: String,
    vocab_size: usize,
    embed_dim: usize,
    cell: GruCell,
}

impl QuestionEncoder {
    pub fn new(prefix: &str, vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            vocab_size,
            embed_dim,
            cell: GruCell::new(&format!("{prefix}.gru"), embed_dim, hidden_dim),
        }
    }

    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        store.add_embedding(&self.embed_name(), self.vocab_size, self.embed_dim, rng)?;
        self.cell.register(store, rng)?;
        Ok(())
    }

    fn embed_name(&self) -> String {
        format!("{}.embed", self.prefix)
    }

    pub fn hidden_dim(&self) -> usize {
        self.cell.hidden_dim()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn encode(&self, tape: &mut Tape<'_>, seq: &TokenSequence) -> Result<Var> {
        let mut h = tape.input(&DenseArray::zeros(&[self.hidden_dim()]));
        let name = self.embed_name();
        for &tok in seq.tokens() {
            let x = tape.param_row(&name, tok)?;
            h = self.cell.step(tape, x, h)?;
        }
        Ok(h)
    }

    pub fn encode_array(&self, store: &ParameterStore, seq: &TokenSequence) -> Result<DenseArray> {
        let mut tape = Tape::new(store);
        let h = self.encode(&mut tape, seq)?;
        Ok(tape.to_array(h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_lowercases_and_strips_punctuation() {
        assert_eq!(tokenize("What's on the  TABLE?"), ["whats", "on", "the", "table"]);
        assert!(tokenize(" ?! ").is_empty());
    }

    #[test]
    fn vocabulary_text_round_trip_and_unk() {
        let v = QuestionVocab::build(["the cat", "the dog", "a cat"], 10);
        assert_eq!(v.token(0), Some(UNK_TOKEN));
        assert_eq!(v.token(1), Some("cat"));
        assert_eq!(v.token(2), Some("the"));
        let back = QuestionVocab::parse(&v.to_text()).unwrap();
        assert_eq!(back, v);
        let seq = v.encode("The zebra").unwrap();
        assert_eq!(seq.tokens(), &[v.index_of("the"), 0]);
        assert!(v.encode("???").is_err());
        assert!(QuestionVocab::parse("cat\n<unk>\n").is_err());
    }

    #[test]
    fn sequence_rejects_out_of_range_tokens() {
        assert!(TokenSequence::new(vec![0, 5], "x", 5).is_err());
        assert!(TokenSequence::new(vec![], "", 5).is_err());
    }
}
