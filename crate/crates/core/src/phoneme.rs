//! CMU phoneme inventory, articulatory categories and token similarity.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InventoryError {
    #[error("unknown phoneme symbol `{0}`")]
    UnknownSymbol(String),
    #[error("empty token")]
    EmptyToken,
    #[error("invalid word token `{0}`")]
    InvalidWord(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhonemeCategory {
    Plosive,
    Fricative,
    Affricate,
    Nasal,
    Liquid,
    Glide,
    Vowel,
}

impl PhonemeCategory {
    pub const ALL: [PhonemeCategory; 7] = [
        PhonemeCategory::Plosive,
        PhonemeCategory::Fricative,
        PhonemeCategory::Affricate,
        PhonemeCategory::Nasal,
        PhonemeCategory::Liquid,
        PhonemeCategory::Glide,
        PhonemeCategory::Vowel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PhonemeCategory::Plosive => "Plosive",
            PhonemeCategory::Fricative => "Fricative",
            PhonemeCategory::Affricate => "Affricate",
            PhonemeCategory::Nasal => "Nasal",
            PhonemeCategory::Liquid => "Liquid",
            PhonemeCategory::Glide => "Glide",
            PhonemeCategory::Vowel => "Vowel",
        }
    }

    /// Members of this category in inventory order.
    pub fn members(self) -> impl Iterator<Item = Phoneme> {
        Phoneme::all().filter(move |p| p.category() == self)
    }
}

impl fmt::Display for PhonemeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

use PhonemeCategory::*;

// HH has no row in the category table it is taken from; it sits with the
// fricatives (continuant airflow through an open glottis).
static INVENTORY: [(&str, PhonemeCategory); 39] = [
    ("AA", Vowel),
    ("AE", Vowel),
    ("AH", Vowel),
    ("AO", Vowel),
    ("AW", Vowel),
    ("AY", Vowel),
    ("B", Plosive),
    ("CH", Affricate),
    ("D", Plosive),
    ("DH", Fricative),
    ("EH", Vowel),
    ("ER", Vowel),
    ("EY", Vowel),
    ("F", Fricative),
    ("G", Plosive),
    ("HH", Fricative),
    ("IH", Vowel),
    ("IY", Vowel),
    ("JH", Affricate),
    ("K", Plosive),
    ("L", Liquid),
    ("M", Nasal),
    ("N", Nasal),
    ("NG", Nasal),
    ("OW", Vowel),
    ("OY", Vowel),
    ("P", Plosive),
    ("R", Liquid),
    ("S", Fricative),
    ("SH", Fricative),
    ("T", Plosive),
    ("TH", Fricative),
    ("UH", Vowel),
    ("UW", Vowel),
    ("V", Fricative),
    ("W", Glide),
    ("Y", Glide),
    ("Z", Fricative),
    ("ZH", Fricative),
];

/// Number of phonemes in the inventory.
pub const PHONEME_COUNT: usize = INVENTORY.len();

/// A stress-free CMU phoneme, stored as its inventory index.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Phoneme(u8);

impl Phoneme {
    pub fn all() -> impl Iterator<Item = Phoneme> {
        (0..PHONEME_COUNT as u8).map(Phoneme)
    }

    pub fn from_index(index: usize) -> Option<Phoneme> {
        (index < PHONEME_COUNT).then_some(Phoneme(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn symbol(self) -> &'static str {
        INVENTORY[self.index()].0
    }

    pub fn category(self) -> PhonemeCategory {
        INVENTORY[self.index()].1
    }

    /// Parses a CMU symbol, case-insensitively, dropping trailing stress digits.
    pub fn parse(symbol: &str) -> Result<Phoneme, InventoryError> {
        let stripped = symbol.trim().trim_end_matches(|c: char| c.is_ascii_digit());
        if stripped.is_empty() {
            return Err(InventoryError::UnknownSymbol(symbol.to_string()));
        }
        let upper = stripped.to_ascii_uppercase();
        INVENTORY
            .iter()
            .position(|(s, _)| *s == upper)
            .map(|i| Phoneme(i as u8))
            .ok_or_else(|| InventoryError::UnknownSymbol(symbol.to_string()))
    }
}

impl fmt::Debug for Phoneme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl fmt::Display for Phoneme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Phoneme {
    type Err = InventoryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phoneme::parse(s)
    }
}

pub fn category_of(symbol: &str) -> Result<PhonemeCategory, InventoryError> {
    Ok(Phoneme::parse(symbol)?.category())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Similarity {
    Exact,
    Similar,
    Dissimilar,
}

impl Similarity {
    pub fn is_match(self) -> bool {
        self != Similarity::Dissimilar
    }
}

pub fn similar(a: Phoneme, b: Phoneme) -> Similarity {
    if a == b {
        Similarity::Exact
    } else if a.category() == b.category() {
        Similarity::Similar
    } else {
        Similarity::Dissimilar
    }
}

/// Draws a phoneme different from `p`, uniformly from `p`'s category.
///
/// A singleton category falls back to a uniform draw over every other phoneme.
pub fn sample_confusable<R: Rng + ?Sized>(p: Phoneme, rng: &mut R) -> Phoneme {
    let peers: Vec<Phoneme> = p.category().members().filter(|&q| q != p).collect();
    if peers.is_empty() {
        let others: Vec<Phoneme> = Phoneme::all().filter(|&q| q != p).collect();
        return others[rng.random_range(0..others.len())];
    }
    peers[rng.random_range(0..peers.len())]
}

// Grapheme confusion units derived from the articulatory categories.
static GRAPHEME_PAIRS: [(&str, &str); 11] = [
    ("p", "b"),
    ("t", "d"),
    ("k", "g"),
    ("k", "c"),
    ("f", "v"),
    ("s", "z"),
    ("sh", "zh"),
    ("ch", "j"),
    ("m", "n"),
    ("l", "r"),
    ("w", "y"),
];

const VOWEL_LETTERS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Every grapheme that `unit` may be confused with.
pub fn grapheme_confusions(unit: &str) -> Vec<&'static str> {
    let mut out = Vec::new();
    for (a, b) in GRAPHEME_PAIRS.iter() {
        if *a == unit {
            out.push(*b);
        } else if *b == unit {
            out.push(*a);
        }
    }
    if VOWEL_LETTERS.contains(&unit) {
        out.extend(VOWEL_LETTERS.iter().copied().filter(|v| *v != unit));
    }
    out
}

fn confusable_units(a: &str, b: &str) -> bool {
    grapheme_confusions(a).contains(&b)
}

/// Weighted edit distance over letters where confusable grapheme units
/// (including the digraphs `sh`, `zh`, `ch`) substitute at cost 0.5.
pub fn grapheme_distance(a: &str, b: &str) -> f64 {
    let a = a.as_bytes();
    let b = b.as_bytes();
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![vec![f64::INFINITY; m + 1]; n + 1];
    dp[0][0] = 0.0;
    for i in 0..=n {
        for j in 0..=m {
            let cur = dp[i][j];
            if !cur.is_finite() {
                continue;
            }
            if i < n {
                relax(&mut dp[i + 1][j], cur + 1.0);
            }
            if j < m {
                relax(&mut dp[i][j + 1], cur + 1.0);
            }
            if i < n && j < m {
                let cost = if a[i] == b[j] {
                    0.0
                } else if confusable_units(
                    std::str::from_utf8(&a[i..i + 1]).unwrap_or(""),
                    std::str::from_utf8(&b[j..j + 1]).unwrap_or(""),
                ) {
                    0.5
                } else {
                    1.0
                };
                relax(&mut dp[i + 1][j + 1], cur + cost);
            }
            for la in 1..=2 {
                for lb in 1..=2 {
                    if la == 1 && lb == 1 {
                        continue;
                    }
                    if i + la <= n && j + lb <= m {
                        let ua = std::str::from_utf8(&a[i..i + la]).unwrap_or("");
                        let ub = std::str::from_utf8(&b[j..j + lb]).unwrap_or("");
                        if confusable_units(ua, ub) {
                            relax(&mut dp[i + la][j + lb], cur + 0.5);
                        }
                    }
                }
            }
        }
    }
    dp[n][m]
}

fn relax(slot: &mut f64, value: f64) {
    if value < *slot {
        *slot = value;
    }
}

/// Word similarity: Exact on equality, Similar when the grapheme distance is
/// within a third of the longer word (at least one confusion).
pub fn word_similarity(a: &str, b: &str) -> Similarity {
    if a == b {
        return Similarity::Exact;
    }
    let longest = a.len().max(b.len()) as f64;
    let threshold = (longest / 3.0).max(0.5);
    if grapheme_distance(a, b) <= threshold + 1e-9 {
        Similarity::Similar
    } else {
        Similarity::Dissimilar
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Phoneme,
    Word,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Phoneme => "phoneme",
            Level::Word => "word",
        })
    }
}

impl FromStr for Level {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "phoneme" => Ok(Level::Phoneme),
            "word" => Ok(Level::Word),
            other => Err(format!("unknown level `{other}` (expected phoneme|word)")),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Phoneme(Phoneme),
    Word(String),
}

impl Token {
    pub fn parse(level: Level, text: &str) -> Result<Token, InventoryError> {
        match level {
            Level::Phoneme => Ok(Token::Phoneme(Phoneme::parse(text)?)),
            Level::Word => Token::word(text),
        }
    }

    pub fn word(text: &str) -> Result<Token, InventoryError> {
        let lower = text.trim().to_lowercase();
        if lower.is_empty() {
            return Err(InventoryError::EmptyToken);
        }
        if lower.chars().any(char::is_whitespace) {
            return Err(InventoryError::InvalidWord(text.to_string()));
        }
        Ok(Token::Word(lower))
    }

    pub fn level(&self) -> Level {
        match self {
            Token::Phoneme(_) => Level::Phoneme,
            Token::Word(_) => Level::Word,
        }
    }

    pub fn as_phoneme(&self) -> Option<Phoneme> {
        match self {
            Token::Phoneme(p) => Some(*p),
            Token::Word(_) => None,
        }
    }

    pub fn text(&self) -> &str {
        match self {
            Token::Phoneme(p) => p.symbol(),
            Token::Word(w) => w,
        }
    }

    /// Cross-level pairs are always Dissimilar.
    pub fn similarity(&self, other: &Token) -> Similarity {
        match (self, other) {
            (Token::Phoneme(a), Token::Phoneme(b)) => similar(*a, *b),
            (Token::Word(a), Token::Word(b)) => word_similarity(a, b),
            _ => Similarity::Dissimilar,
        }
    }
}

/// Serialized as its text: CMU symbols are uppercase, words lowercase.
impl Serialize for Token {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.text())
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let level = if text.chars().any(|c| c.is_ascii_uppercase()) { Level::Phoneme } else { Level::Word };
        Token::parse(level, &text).map_err(serde::de::Error::custom)
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    level: Level,
    tokens: Vec<Token>,
}

impl TokenSequence {
    /// Builds a sequence, checking that every token has the given level.
    pub fn new(level: Level, tokens: Vec<Token>) -> Result<Self, InventoryError> {
        if let Some(bad) = tokens.iter().find(|t| t.level() != level) {
            return Err(InventoryError::InvalidWord(bad.text().to_string()));
        }
        Ok(TokenSequence { level, tokens })
    }

    pub fn phonemes(phonemes: impl IntoIterator<Item = Phoneme>) -> Self {
        TokenSequence {
            level: Level::Phoneme,
            tokens: phonemes.into_iter().map(Token::Phoneme).collect(),
        }
    }

    /// Parses whitespace-separated tokens.
    pub fn parse(level: Level, text: &str) -> Result<Self, InventoryError> {
        let tokens = text
            .split_whitespace()
            .map(|t| Token::parse(level, t))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TokenSequence { level, tokens })
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Token> {
        self.tokens.get(index)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Token> {
        self.tokens.iter()
    }
}

impl std::ops::Index<usize> for TokenSequence {
    type Output = Token;
    fn index(&self, index: usize) -> &Token {
        &self.tokens[index]
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(t.text())?;
        }
        Ok(())
    }
}

impl fmt::Debug for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{self}]")
    }
}

impl Serialize for TokenSequence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InventoryEntry {
    pub index: usize,
    pub symbol: &'static str,
    pub category: PhonemeCategory,
}

pub fn inventory() -> Vec<InventoryEntry> {
    Phoneme::all()
        .map(|p| InventoryEntry { index: p.index(), symbol: p.symbol(), category: p.category() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn ph(s: &str) -> Phoneme {
        Phoneme::parse(s).unwrap()
    }

    #[test]
    fn categories_follow_the_table() {
        assert_eq!(category_of("P").unwrap(), Plosive);
        assert_eq!(category_of("AH").unwrap(), Vowel);
        assert_eq!(category_of("HH").unwrap(), Fricative);
        assert_eq!(category_of("ch").unwrap(), Affricate);
        assert!(matches!(category_of("QQ"), Err(InventoryError::UnknownSymbol(_))));
    }

    #[test]
    fn inventory_is_partitioned() {
        let mut seen = HashSet::new();
        let mut total = 0;
        for cat in PhonemeCategory::ALL {
            for p in cat.members() {
                assert!(seen.insert(p), "{p} in two categories");
                total += 1;
            }
        }
        assert_eq!(total, 39);
        let counts: Vec<usize> = PhonemeCategory::ALL.iter().map(|c| c.members().count()).collect();
        assert_eq!(counts, vec![6, 9, 2, 3, 2, 2, 15]);
    }

    #[test]
    fn stress_digits_are_stripped() {
        assert_eq!(ph("AH0"), ph("AH"));
        assert_eq!(ph("ah1"), ph("AH"));
        assert!(Phoneme::parse("0").is_err());
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similar(ph("P"), ph("P")), Similarity::Exact);
        assert_eq!(similar(ph("K"), ph("G")), Similarity::Similar);
        assert_eq!(similar(ph("S"), ph("Z")), Similarity::Similar);
        assert_eq!(similar(ph("P"), ph("AH")), Similarity::Dissimilar);
    }

    #[test]
    fn similarity_is_symmetric() {
        for a in Phoneme::all() {
            assert_eq!(similar(a, a), Similarity::Exact);
            for b in Phoneme::all() {
                assert_eq!(similar(a, b), similar(b, a));
            }
        }
    }

    #[test]
    fn confusable_pairs_with_two_member_categories() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            assert_eq!(sample_confusable(ph("CH"), &mut rng), ph("JH"));
            assert_eq!(sample_confusable(ph("L"), &mut rng), ph("R"));
        }
    }

    #[test]
    fn confusable_covers_the_category() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in Phoneme::all() {
            let mut seen = HashSet::new();
            for _ in 0..10_000 {
                let q = sample_confusable(p, &mut rng);
                assert_ne!(q, p);
                assert_eq!(q.category(), p.category());
                seen.insert(q);
            }
            assert_eq!(seen.len(), p.category().members().count() - 1, "coverage for {p}");
        }
        let plosive_peers: HashSet<_> = ["B", "T", "D", "K", "G"].iter().map(|s| ph(s)).collect();
        let draw = sample_confusable(ph("P"), &mut rng);
        assert!(plosive_peers.contains(&draw));
    }

    #[test]
    fn word_similarity_uses_grapheme_confusions() {
        assert_eq!(word_similarity("pen", "ben"), Similarity::Similar);
        assert_eq!(word_similarity("zoo", "soo"), Similarity::Similar);
        assert_eq!(word_similarity("chin", "jin"), Similarity::Similar);
        assert_eq!(word_similarity("pen", "pen"), Similarity::Exact);
        assert_eq!(word_similarity("plays", "table"), Similarity::Dissimilar);
        assert_eq!(word_similarity("a", "the"), Similarity::Dissimilar);
        assert!((grapheme_distance("ship", "zhip") - 0.5).abs() < 1e-12);
        assert!((grapheme_distance("cat", "dog") - 2.5).abs() < 1e-12);
    }

    #[test]
    fn sequence_parsing_checks_level() {
        let seq = TokenSequence::parse(Level::Phoneme, "P EH1 N").unwrap();
        assert_eq!(seq.to_string(), "P EH N");
        assert!(TokenSequence::parse(Level::Phoneme, "P XX").is_err());
        let words = TokenSequence::parse(Level::Word, "A Pen").unwrap();
        assert_eq!(words.to_string(), "a pen");
        assert!(TokenSequence::new(Level::Word, vec![Token::Phoneme(ph("P"))]).is_err());
    }
}
