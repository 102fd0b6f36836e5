use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::phoneme::{Level, Phoneme, PhonemeCategory, Token, TokenSequence};

pub const PAD_ID: usize = 0;
pub const SEP_ID: usize = 1;
pub const UNK_ID: usize = 2;

pub const PAD: &str = "<pad>";
pub const SEP: &str = "<sep>";
pub const UNK: &str = "<unk>";

/// Category id of vocabulary entries that are not phonemes.
pub const NO_CATEGORY: usize = PhonemeCategory::ALL.len();
pub const NUM_CATEGORY_IDS: usize = NO_CATEGORY + 1;

pub const CHAR_PAD_ID: usize = 0;
pub const CHAR_UNK_ID: usize = 1;

/// Token vocabulary with PAD/SEP/UNK; word level adds a character vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    pub level: Level,
    pub vocabulary: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub characters: Vec<char>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    #[serde(skip)]
    char_index: HashMap<char, usize>,
    #[serde(skip)]
    categories: Vec<usize>,
}

/// Model-ready form of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum EncodedSeq {
    Ids(Vec<usize>),
    /// Character ids per word.
    Chars(Vec<Vec<usize>>),
}

impl EncodedSeq {
    pub fn len(&self) -> usize {
        match self {
            EncodedSeq::Ids(v) => v.len(),
            EncodedSeq::Chars(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TokenizerSpec {
    pub fn phoneme() -> Self {
        let mut vocabulary: Vec<String> = [PAD, SEP, UNK].iter().map(|s| s.to_string()).collect();
        vocabulary.extend(Phoneme::all().map(|p| p.symbol().to_string()));
        Self::from_parts(Level::Phoneme, vocabulary, Vec::new())
    }

    /// Word tokenizer over the given words; characters are lowercase ASCII
    /// letters, the apostrophe, and anything else seen in `words`.
    pub fn word<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set = BTreeSet::new();
        let mut chars: BTreeSet<char> = ('a'..='z').collect();
        chars.insert('\'');
        for w in words {
            let lower = w.to_lowercase();
            chars.extend(lower.chars());
            set.insert(lower);
        }
        let mut vocabulary: Vec<String> = [PAD, SEP, UNK].iter().map(|s| s.to_string()).collect();
        vocabulary.extend(set);
        Self::from_parts(Level::Word, vocabulary, chars.into_iter().collect())
    }

    pub fn for_level<'a>(level: Level, words: impl IntoIterator<Item = &'a str>) -> Self {
        match level {
            Level::Phoneme => Self::phoneme(),
            Level::Word => Self::word(words),
        }
    }

    fn from_parts(level: Level, vocabulary: Vec<String>, characters: Vec<char>) -> Self {
        let mut spec = TokenizerSpec {
            level,
            vocabulary,
            characters,
            index: HashMap::new(),
            char_index: HashMap::new(),
            categories: Vec::new(),
        };
        spec.rebuild_index();
        spec
    }

    /// Restores lookup tables after deserialisation.
    pub fn rebuild_index(&mut self) {
        self.index = self.vocabulary.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        // Character ids start after PAD and UNK.
        self.char_index = self.characters.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        self.categories = self
            .vocabulary
            .iter()
            .map(|s| {
                Phoneme::parse(s)
                    .ok()
                    .and_then(|p| PhonemeCategory::ALL.iter().position(|c| *c == p.category()))
                    .unwrap_or(NO_CATEGORY)
            })
            .collect();
    }

    /// Phoneme category of a token id, or [`NO_CATEGORY`].
    pub fn category_id(&self, id: usize) -> usize {
        self.categories.get(id).copied().unwrap_or(NO_CATEGORY)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn char_vocab_size(&self) -> usize {
        self.characters.len() + 2
    }

    pub fn token_id(&self, token: &Token) -> usize {
        self.index.get(token.text()).copied().unwrap_or(UNK_ID)
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_index.get(&c).copied().unwrap_or(CHAR_UNK_ID)
    }

    pub fn encode_ids(&self, seq: &TokenSequence) -> Vec<usize> {
        seq.iter().map(|t| self.token_id(t)).collect()
    }

    pub fn decode_ids(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter()
            .map(|&i| self.vocabulary.get(i).map(String::as_str).unwrap_or(UNK))
            .collect()
    }

    /// Ids padded to `len` with PAD, plus the validity mask.
    pub fn encode_padded(&self, seq: &TokenSequence, len: usize) -> (Vec<usize>, Vec<bool>) {
        let mut ids = self.encode_ids(seq);
        ids.truncate(len);
        let mut mask = vec![true; ids.len()];
        ids.resize(len, PAD_ID);
        mask.resize(len, false);
        (ids, mask)
    }

    pub fn encode(&self, seq: &TokenSequence) -> Result<EncodedSeq, ModelError> {
        if seq.level() != self.level {
            return Err(ModelError::LevelMismatch { expected: self.level, found: seq.level() });
        }
        if seq.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        Ok(match self.level {
            Level::Phoneme => EncodedSeq::Ids(self.encode_ids(seq)),
            Level::Word => EncodedSeq::Chars(
                seq.iter().map(|t| t.text().chars().map(|c| self.char_id(c)).collect()).collect(),
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phoneme_ids_are_dense_and_round_trip() {
        let tok = TokenizerSpec::phoneme();
        assert_eq!(tok.vocab_size(), 42);
        assert_eq!(tok.vocabulary[PAD_ID], PAD);
        let seq = TokenSequence::parse(Level::Phoneme, "AH P EH N").unwrap();
        let ids = tok.encode_ids(&seq);
        assert_eq!(tok.decode_ids(&ids).join(" "), "AH P EH N");
        assert!(ids.iter().all(|&i| i > UNK_ID));
        assert_eq!(tok.category_id(ids[0]), tok.category_id(ids[2]));
        assert_ne!(tok.category_id(ids[0]), tok.category_id(ids[1]));
        assert_eq!(tok.category_id(SEP_ID), NO_CATEGORY);
    }

    #[test]
    fn padding_and_unknowns() {
        let tok = TokenizerSpec::word(["a", "pen"]);
        let seq = TokenSequence::parse(Level::Word, "a pen zebra").unwrap();
        let (ids, mask) = tok.encode_padded(&seq, 5);
        assert_eq!(ids[2], UNK_ID);
        assert_eq!(&ids[3..], &[PAD_ID, PAD_ID]);
        assert_eq!(mask, vec![true, true, true, false, false]);
        match tok.encode(&seq).unwrap() {
            EncodedSeq::Chars(words) => {
                assert_eq!(words.len(), 3);
                assert!(words[2].iter().all(|&c| c > CHAR_UNK_ID));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn serde_restores_index() {
        let tok = TokenizerSpec::word(["table", "chair"]);
        let json = serde_json::to_string(&tok).unwrap();
        let mut back: TokenizerSpec = serde_json::from_str(&json).unwrap();
        back.rebuild_index();
        assert_eq!(back, tok);
        assert_eq!(back.token_id(&Token::word("chair").unwrap()), tok.token_id(&Token::word("chair").unwrap()));
    }

    #[test]
    fn empty_or_wrong_level_is_an_error() {
        let tok = TokenizerSpec::phoneme();
        let empty = TokenSequence::parse(Level::Phoneme, "").unwrap();
        assert!(matches!(tok.encode(&empty), Err(ModelError::EmptySequence)));
        let words = TokenSequence::parse(Level::Word, "a").unwrap();
        assert!(tok.encode(&words).is_err());
    }
}
