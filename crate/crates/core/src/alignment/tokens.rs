use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::pauses::PauseEvent;
use super::transcript::Transcript;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Word,
    Subword,
    Pause,
}

/// Where a token's audio comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenSource {
    /// Index into the transcript's words.
    Word(usize),
    /// Index into the detected pause events.
    Pause(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
    pub source: TokenSource,
}

/// Interleaves pause marks (",", ".", "...") after the words they follow.
pub fn insert_pause_tokens(transcript: &Transcript, events: &[PauseEvent]) -> Result<Vec<Token>> {
    if events
        .windows(2)
        .any(|w| w[0].after_word_index >= w[1].after_word_index)
    {
        return Err(Error::contract("pause events must be sorted by position"));
    }
    if let Some(e) = events.last() {
        if e.after_word_index >= transcript.words.len() {
            return Err(Error::contract(format!(
                "pause after word {} but transcript has {} words",
                e.after_word_index,
                transcript.words.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(transcript.words.len() + events.len());
    let mut next = events.iter().enumerate().peekable();
    for (i, w) in transcript.words.iter().enumerate() {
        out.push(Token {
            text: w.text.clone(),
            kind: TokenKind::Word,
            source: TokenSource::Word(i),
        });
        while let Some((pi, e)) = next.next_if(|(_, e)| e.after_word_index == i) {
            out.push(Token {
                text: e.category.symbol().to_string(),
                kind: TokenKind::Pause,
                source: TokenSource::Pause(pi),
            });
        }
    }
    Ok(out)
}

/// Subword vocabulary for greedy longest-match segmentation.
#[derive(Clone, Debug, Default)]
pub struct Vocab {
    entries: HashSet<String>,
    longest: usize,
}

impl Vocab {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entries: HashSet<String> = entries
            .into_iter()
            .map(Into::into)
            .filter(|s| !s.is_empty())
            .collect();
        let longest = entries.iter().map(|e| e.chars().count()).max().unwrap_or(0);
        Vocab { entries, longest }
    }

    /// One entry per non-empty line.
    pub fn parse(text: &str) -> Self {
        Vocab::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn contains(&self, s: &str) -> bool {
        self.entries.contains(s)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Greedy longest match from the left; characters not covered by any
    /// entry become single-character tokens.
    pub fn segment(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let max = self.longest.min(chars.len() - i);
            let mut taken = 1;
            for len in (1..=max).rev() {
                let cand: String = chars[i..i + len].iter().collect();
                if self.entries.contains(&cand) {
                    taken = len;
                    break;
                }
            }
            out.push(chars[i..i + taken].iter().collect());
            i += taken;
        }
        out
    }
}

/// How words become model tokens.
#[derive(Clone, Debug, Default)]
pub enum Tokenizer {
    /// Every word is a single token.
    #[default]
    WholeWord,
    Vocabulary(Vocab),
    /// Externally produced `(token, parent_word_index)` list, used verbatim.
    Pretokenized(Vec<(String, usize)>),
}

/// Splits word tokens into subwords. Pause tokens pass through unsplit.
/// Tokens of a word that splits into several pieces get kind `Subword` and
/// keep the parent word as their source.
pub fn expand_subwords(tokens: &[Token], tokenizer: &Tokenizer) -> Result<Vec<Token>> {
    let pre_groups = match tokenizer {
        Tokenizer::Pretokenized(list) => Some(group_pretokenized(list)?),
        _ => None,
    };
    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let TokenSource::Word(wi) = tok.source else {
            out.push(tok.clone());
            continue;
        };
        if tok.text.is_empty() {
            return Err(Error::contract(format!("word {wi} is empty")));
        }
        let pieces: Vec<String> = match (tokenizer, &pre_groups) {
            (Tokenizer::WholeWord, _) => vec![tok.text.clone()],
            (Tokenizer::Vocabulary(v), _) => v.segment(&tok.text),
            (Tokenizer::Pretokenized(_), Some(groups)) => groups
                .get(wi)
                .cloned()
                .ok_or_else(|| Error::contract(format!("no pretokenized pieces for word {wi}")))?,
            (Tokenizer::Pretokenized(_), None) => unreachable!(),
        };
        let kind = if pieces.len() == 1 {
            TokenKind::Word
        } else {
            TokenKind::Subword
        };
        for p in pieces {
            out.push(Token {
                text: p,
                kind,
                source: tok.source,
            });
        }
    }
    if let Some(groups) = pre_groups {
        let words = tokens
            .iter()
            .filter(|t| matches!(t.source, TokenSource::Word(_)))
            .count();
        if groups.len() != words {
            return Err(Error::contract(format!(
                "pretokenized list covers {} words, transcript has {words}",
                groups.len()
            )));
        }
    }
    Ok(out)
}

fn group_pretokenized(list: &[(String, usize)]) -> Result<Vec<Vec<String>>> {
    let mut groups: Vec<Vec<String>> = Vec::new();
    for (i, (tok, parent)) in list.iter().enumerate() {
        if tok.is_empty() {
            return Err(Error::contract(format!("pretokenized token {i} is empty")));
        }
        match parent.cmp(&groups.len()) {
            std::cmp::Ordering::Less if *parent + 1 == groups.len() => {
                groups[*parent].push(tok.clone())
            }
            std::cmp::Ordering::Equal => groups.push(vec![tok.clone()]),
            _ => {
                return Err(Error::contract(format!(
                    "pretokenized token {i} has parent {parent}; parents must be contiguous and start at 0"
                )))
            }
        }
    }
    Ok(groups)
}
