//! Dysfluency injection with gold alignments and labels.

mod codec;
pub mod jsonl;

pub use codec::{
    alignment_from_labels, boundary_offset, gold_labels_from_alignment, serialize_flat, AlignmentError,
    CodecError, GoldAlignment, Group, JointLabelEncoding, LABEL_BOUNDARY, LABEL_DYSFLUENT, LABEL_MISSING,
};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::Lexicon;
use crate::phoneme::{
    grapheme_confusions, sample_confusable, InventoryError, Level, Phoneme, Similarity, Token, TokenSequence,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DysfluencyType {
    Repetition,
    Insertion,
    Deletion,
    Substitution,
}

impl DysfluencyType {
    /// Order used by proportion vectors.
    pub const ALL: [DysfluencyType; 4] = [
        DysfluencyType::Repetition,
        DysfluencyType::Insertion,
        DysfluencyType::Deletion,
        DysfluencyType::Substitution,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            DysfluencyType::Repetition => "Rep",
            DysfluencyType::Insertion => "Ins",
            DysfluencyType::Deletion => "Del",
            DysfluencyType::Substitution => "Sub",
        }
    }
}

impl fmt::Display for DysfluencyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DysfluencyType::Repetition => "repetition",
            DysfluencyType::Insertion => "insertion",
            DysfluencyType::Deletion => "deletion",
            DysfluencyType::Substitution => "substitution",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DysfluencyEvent {
    pub kind: DysfluencyType,
    pub ref_index: usize,
    pub inserted_tokens: Vec<Token>,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("reference needs at least 2 tokens, got {0}")]
    ReferenceTooShort(usize),
    #[error("reference level {found} does not match configured level {expected}")]
    LevelMismatch { expected: Level, found: Level },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Inventory(#[from] InventoryError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("no usable reference texts")]
    NoTexts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub level: Level,
    /// Weights over [Repetition, Insertion, Deletion, Substitution].
    pub proportions: [f64; 4],
    pub events_per_sentence: (usize, usize),
    pub max_repeat: usize,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            level: Level::Phoneme,
            proportions: [1.0; 4],
            events_per_sentence: (1, 3),
            max_repeat: 3,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.proportions.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(SimError::InvalidConfig("proportions must be finite and non-negative".into()));
        }
        if self.proportions.iter().sum::<f64>() <= 0.0 {
            return Err(SimError::InvalidConfig("proportions must not all be zero".into()));
        }
        if self.events_per_sentence.0 > self.events_per_sentence.1 {
            return Err(SimError::InvalidConfig("events_per_sentence min exceeds max".into()));
        }
        if self.max_repeat == 0 {
            return Err(SimError::InvalidConfig("max_repeat must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parses `1,1.5,1,1.5` or `1:1.5:1:1.5`.
pub fn parse_proportions(text: &str) -> Result<[f64; 4], String> {
    let parts: Vec<&str> = text.split([',', ':']).map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("expected 4 proportions, got {}", parts.len()));
    }
    let mut out = [0.0; 4];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = f64::from_str(part).map_err(|e| format!("bad proportion `{part}`: {e}"))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub id: u64,
    pub level: Level,
    pub reference: TokenSequence,
    pub dysfluent: TokenSequence,
    pub labels: JointLabelEncoding,
    pub gold: GoldAlignment,
    pub events: Vec<DysfluencyEvent>,
    pub warnings: Vec<String>,
}

impl CorpusRecord {
    pub fn kinds(&self) -> BTreeSet<DysfluencyType> {
        self.events.iter().map(|e| e.kind).collect()
    }
}

/// Seed for record `id` under a master seed (splitmix64 finaliser).
pub fn record_seed(master: u64, id: u64) -> u64 {
    let mut z = master ^ id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Injects dysfluencies into `reference` using `cfg.seed`.
pub fn inject(reference: &TokenSequence, cfg: &SimulationConfig) -> Result<CorpusRecord, SimError> {
    cfg.validate()?;
    if reference.level() != cfg.level {
        return Err(SimError::LevelMismatch { expected: cfg.level, found: reference.level() });
    }
    if reference.len() < 2 {
        return Err(SimError::ReferenceTooShort(reference.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = reference.len();
    let mut warnings = Vec::new();

    let (lo, hi) = cfg.events_per_sentence;
    let wanted = rng.random_range(lo..=hi);
    let count = wanted.min(n);
    if count < wanted {
        warnings.push(format!("requested {wanted} events for a reference of {n} tokens; truncated to {count}"));
    }
    let mut positions = sample(&mut rng, n, count).into_vec();
    positions.sort_unstable();

    let weights = WeightedIndex::new(cfg.proportions).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let mut plan: Vec<Option<DysfluencyType>> = vec![None; n];
    for &p in &positions {
        plan[p] = Some(DysfluencyType::ALL[weights.sample(&mut rng)]);
    }
    // At least one reference token has to survive.
    if plan.iter().all(|k| *k == Some(DysfluencyType::Deletion)) {
        let mut no_delete = cfg.proportions;
        no_delete[2] = 0.0;
        match WeightedIndex::new(no_delete) {
            Ok(w) => plan[n - 1] = Some(DysfluencyType::ALL[w.sample(&mut rng)]),
            Err(_) => plan[n - 1] = None,
        }
        warnings.push("every token drawn for deletion; last event redrawn".into());
    }

    let next_surviving: Vec<Option<usize>> = (0..n)
        .map(|i| (i + 1..n).find(|&j| plan[j] != Some(DysfluencyType::Deletion)))
        .collect();

    let lexicon = (cfg.level == Level::Word).then(Lexicon::builtin);
    let mut dys: Vec<Token> = Vec::with_capacity(n + 2 * count);
    let mut groups: Vec<Option<Group>> = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(count);

    for i in 0..n {
        let tok = &reference[i];
        let start = dys.len();
        let mut kind = plan[i];
        if kind == Some(DysfluencyType::Substitution) {
            match substitute(tok, &mut rng) {
                Some(replacement) => {
                    events.push(DysfluencyEvent {
                        kind: DysfluencyType::Substitution,
                        ref_index: i,
                        inserted_tokens: vec![replacement.clone()],
                        detail: format!("{tok}->{replacement}"),
                    });
                    dys.push(replacement);
                }
                None => {
                    warnings.push(format!("no confusable grapheme in `{tok}`; repetition used instead"));
                    kind = Some(DysfluencyType::Repetition);
                }
            }
        }
        match kind {
            None => dys.push(tok.clone()),
            Some(DysfluencyType::Repetition) => {
                let copies = rng.random_range(1..=cfg.max_repeat);
                dys.extend(std::iter::repeat_n(tok.clone(), copies + 1));
                events.push(DysfluencyEvent {
                    kind: DysfluencyType::Repetition,
                    ref_index: i,
                    inserted_tokens: vec![tok.clone(); copies],
                    detail: format!("repeats={copies}"),
                });
            }
            Some(DysfluencyType::Insertion) => {
                dys.push(tok.clone());
                let next = next_surviving[i].map(|j| &reference[j]);
                let how_many = rng.random_range(1..=2);
                let mut inserted = Vec::with_capacity(how_many);
                for _ in 0..how_many {
                    inserted.push(insertion_token(reference, i, next, lexicon.as_ref(), &mut rng));
                }
                dys.extend(inserted.iter().cloned());
                events.push(DysfluencyEvent {
                    kind: DysfluencyType::Insertion,
                    ref_index: i,
                    detail: format!("inserted={how_many}"),
                    inserted_tokens: inserted,
                });
            }
            Some(DysfluencyType::Deletion) => {
                events.push(DysfluencyEvent {
                    kind: DysfluencyType::Deletion,
                    ref_index: i,
                    inserted_tokens: Vec::new(),
                    detail: String::new(),
                });
            }
            Some(DysfluencyType::Substitution) => {}
        }
        let end = dys.len();
        groups.push((end > start).then(|| Group {
            start,
            end,
            boundary: start + boundary_offset(tok, &dys[start..end]),
        }));
    }

    let dysfluent = TokenSequence::new(cfg.level, dys)?;
    let gold = GoldAlignment { groups };
    let labels = gold_labels_from_alignment(&gold, reference, &dysfluent)?;
    Ok(CorpusRecord {
        id: 0,
        level: cfg.level,
        reference: reference.clone(),
        dysfluent,
        labels,
        gold,
        events,
        warnings,
    })
}

/// Word-level injection; identical to [`inject`] once the level is checked.
pub fn inject_word_level(reference: &TokenSequence, cfg: &SimulationConfig) -> Result<CorpusRecord, SimError> {
    if reference.level() != Level::Word || cfg.level != Level::Word {
        return Err(SimError::LevelMismatch { expected: Level::Word, found: reference.level() });
    }
    inject(reference, cfg)
}

fn substitute<R: Rng>(tok: &Token, rng: &mut R) -> Option<Token> {
    match tok {
        Token::Phoneme(p) => Some(Token::Phoneme(sample_confusable(*p, rng))),
        Token::Word(w) => confuse_word(w, rng).map(Token::Word),
    }
}

fn insertion_token<R: Rng>(
    reference: &TokenSequence,
    index: usize,
    next: Option<&Token>,
    lexicon: Option<&Lexicon>,
    rng: &mut R,
) -> Token {
    let target = &reference[index];
    let acceptable = |t: &Token| {
        target.similarity(t) == Similarity::Dissimilar
            && next.is_none_or(|nx| nx.similarity(t) == Similarity::Dissimilar)
    };
    match target {
        Token::Phoneme(_) => {
            let pool: Vec<Phoneme> = Phoneme::all().filter(|&p| acceptable(&Token::Phoneme(p))).collect();
            Token::Phoneme(pool[rng.random_range(0..pool.len())])
        }
        Token::Word(_) => {
            // A corrupted neighbour first, then random lexicon words.
            let neighbours = [index.checked_sub(1), Some(index + 1)];
            for nb in neighbours.into_iter().flatten() {
                if let Some(Token::Word(w)) = reference.get(nb) {
                    if let Some(c) = confuse_word(w, rng).map(Token::Word) {
                        if acceptable(&c) {
                            return c;
                        }
                    }
                }
            }
            let words: Vec<&str> = lexicon.map(|l| l.words().collect()).unwrap_or_default();
            loop {
                let w = words[rng.random_range(0..words.len())];
                let t = Token::Word(w.to_string());
                if acceptable(&t) {
                    return t;
                }
            }
        }
    }
}

/// Applies one or two grapheme confusions to `word`; `None` when nothing applies.
pub fn confuse_word<R: Rng>(word: &str, rng: &mut R) -> Option<String> {
    let bytes = word.as_bytes();
    let mut sites: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if i + 1 < bytes.len() {
            let di = &word[i..i + 2];
            if !grapheme_confusions(di).is_empty() {
                sites.push((i, 2));
                i += 2;
                continue;
            }
        }
        if word.is_char_boundary(i) && word.is_char_boundary(i + 1) && !grapheme_confusions(&word[i..i + 1]).is_empty()
        {
            sites.push((i, 1));
        }
        i += 1;
    }
    if sites.is_empty() {
        return None;
    }
    for attempt in 0..8 {
        let edits = if attempt < 4 && word.len() >= 3 && sites.len() >= 2 && rng.random_bool(0.5) { 2 } else { 1 };
        let mut chosen = sample(rng, sites.len(), edits).into_vec();
        chosen.sort_unstable();
        let mut out = String::with_capacity(word.len() + 1);
        let mut cursor = 0;
        for &s in &chosen {
            let (pos, len) = sites[s];
            out.push_str(&word[cursor..pos]);
            let options = grapheme_confusions(&word[pos..pos + len]);
            out.push_str(options[rng.random_range(0..options.len())]);
            cursor = pos + len;
        }
        out.push_str(&word[cursor..]);
        if crate::phoneme::word_similarity(word, &out) == Similarity::Similar {
            return Some(out);
        }
    }
    None
}

/// Generates `count` records from `texts`, record `i` seeded by
/// [`record_seed`]`(cfg.seed, i)`.
pub fn simulate_corpus(
    texts: &[TokenSequence],
    cfg: &SimulationConfig,
    count: usize,
) -> Result<Vec<CorpusRecord>, SimError> {
    cfg.validate()?;
    let usable: Vec<&TokenSequence> = texts.iter().filter(|t| t.len() >= 2 && t.level() == cfg.level).collect();
    if usable.is_empty() {
        return Err(SimError::NoTexts);
    }
    (0..count as u64)
        .map(|id| {
            let seed = record_seed(cfg.seed, id);
            let pick = (ChaCha8Rng::seed_from_u64(seed ^ 0x5EED).random_range(0..usable.len())) as usize;
            let rec_cfg = SimulationConfig { seed, ..cfg.clone() };
            let mut record = inject(usable[pick], &rec_cfg)?;
            record.id = id;
            Ok(record)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::parse(Level::Phoneme, s).unwrap()
    }

    fn only(kind: DysfluencyType, events: (usize, usize), seed: u64) -> SimulationConfig {
        let mut proportions = [0.0; 4];
        proportions[DysfluencyType::ALL.iter().position(|k| *k == kind).unwrap()] = 1.0;
        SimulationConfig { proportions, events_per_sentence: events, seed, ..Default::default() }
    }

    #[test]
    fn zero_events_is_identity() {
        let r = seq("P EH N");
        let rec = inject(&r, &SimulationConfig { events_per_sentence: (0, 0), ..Default::default() }).unwrap();
        assert_eq!(rec.dysfluent, r);
        assert_eq!(rec.labels, JointLabelEncoding::identity(3));
        assert!(rec.events.is_empty());
    }

    #[test]
    fn single_repetition_labels() {
        let r = seq("P EH N");
        // Search seeds for a one-copy repetition at index 0.
        let rec = (0..500)
            .map(|s| inject(&r, &SimulationConfig { max_repeat: 1, ..only(DysfluencyType::Repetition, (1, 1), s) }).unwrap())
            .find(|rec| rec.events[0].ref_index == 0)
            .unwrap();
        assert_eq!(rec.dysfluent, seq("P P EH N"));
        assert_eq!(rec.labels.ref_labels, vec![1, 1, 1]);
        assert_eq!(rec.labels.dys_labels, vec![0, 1, 1, 1]);
    }

    #[test]
    fn single_deletion_labels() {
        let r = seq("DH AH");
        let rec = (0..500)
            .map(|s| inject(&r, &only(DysfluencyType::Deletion, (1, 1), s)).unwrap())
            .find(|rec| rec.events[0].ref_index == 0)
            .unwrap();
        assert_eq!(rec.dysfluent, seq("AH"));
        assert_eq!(rec.labels.ref_labels, vec![2, 1]);
        assert_eq!(rec.labels.dys_labels, vec![1]);
    }

    #[test]
    fn deleting_everything_is_prevented() {
        let r = seq("DH AH");
        for s in 0..200 {
            let rec = inject(&r, &only(DysfluencyType::Deletion, (2, 2), s)).unwrap();
            assert!(!rec.dysfluent.is_empty());
        }
    }

    #[test]
    fn short_reference_and_bad_config() {
        assert!(matches!(inject(&seq("P"), &SimulationConfig::default()), Err(SimError::ReferenceTooShort(1))));
        let bad = SimulationConfig { proportions: [0.0; 4], ..Default::default() };
        assert!(inject(&seq("P EH"), &bad).is_err());
        let bad = SimulationConfig { events_per_sentence: (3, 1), ..Default::default() };
        assert!(inject(&seq("P EH"), &bad).is_err());
        let bad = SimulationConfig { max_repeat: 0, ..Default::default() };
        assert!(inject(&seq("P EH"), &bad).is_err());
    }

    #[test]
    fn truncation_is_a_warning() {
        let cfg = SimulationConfig { events_per_sentence: (5, 5), ..Default::default() };
        let rec = inject(&seq("P EH N"), &cfg).unwrap();
        assert_eq!(rec.events.len(), 3);
        assert_eq!(rec.warnings.len(), 1);
    }

    #[test]
    fn substitutions_stay_in_category() {
        let r = seq("AH P EH N AA N DH AH T EY B AH L");
        for s in 0..200 {
            let rec = inject(&r, &only(DysfluencyType::Substitution, (1, 3), s)).unwrap();
            for e in &rec.events {
                assert_eq!(r[e.ref_index].similarity(&e.inserted_tokens[0]), Similarity::Similar);
            }
        }
    }

    #[test]
    fn insertions_are_dissimilar_to_their_target() {
        let r = seq("AH P EH N AA N DH AH T EY B AH L");
        for s in 0..200 {
            let rec = inject(&r, &only(DysfluencyType::Insertion, (1, 3), s)).unwrap();
            for e in &rec.events {
                for t in &e.inserted_tokens {
                    assert_eq!(r[e.ref_index].similarity(t), Similarity::Dissimilar);
                }
            }
        }
    }

    #[test]
    fn word_level_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = BTreeSet::new();
        for _ in 0..200 {
            let out = confuse_word("pen", &mut rng).unwrap();
            assert_eq!(crate::phoneme::word_similarity("pen", &out), Similarity::Similar);
            seen.insert(out);
        }
        assert!(seen.contains("ben"));
        let mut seen = BTreeSet::new();
        for _ in 0..200 {
            seen.insert(confuse_word("zoo", &mut rng).unwrap());
        }
        assert!(seen.contains("soo"));

        let r = TokenSequence::parse(Level::Word, "a pen").unwrap();
        let cfg = SimulationConfig { level: Level::Word, max_repeat: 1, ..only(DysfluencyType::Repetition, (1, 1), 0) };
        let rec = (0..100)
            .map(|s| inject_word_level(&r, &SimulationConfig { seed: s, ..cfg.clone() }).unwrap())
            .find(|rec| rec.events[0].ref_index == 0)
            .unwrap();
        assert_eq!(rec.dysfluent.to_string(), "a a pen");
        assert!(inject_word_level(&seq("P EH"), &cfg).is_err());
    }

    #[test]
    fn corpus_is_deterministic_and_round_trips() {
        let texts: Vec<TokenSequence> = crate::lexicon::demo_sentences(30, 2)
            .iter()
            .map(|s| Lexicon::builtin().line_to_sequence(s, Level::Phoneme).unwrap())
            .collect();
        let cfg = SimulationConfig { seed: 9, ..Default::default() };
        let a = simulate_corpus(&texts, &cfg, 300).unwrap();
        let b = simulate_corpus(&texts, &cfg, 300).unwrap();
        assert_eq!(a, b);
        for rec in &a {
            assert!(rec.labels.is_consistent());
            let back = alignment_from_labels(&rec.labels, &rec.reference, &rec.dysfluent).unwrap();
            assert_eq!(back, rec.gold);
            let deletions = rec.events.iter().filter(|e| e.kind == DysfluencyType::Deletion).count();
            let added: usize = rec
                .events
                .iter()
                .filter(|e| matches!(e.kind, DysfluencyType::Repetition | DysfluencyType::Insertion))
                .map(|e| e.inserted_tokens.len())
                .sum();
            assert_eq!(rec.dysfluent.len(), rec.reference.len() - deletions + added);
        }
    }

    #[test]
    fn proportion_parsing() {
        assert_eq!(parse_proportions("1,1.5,1,1.5").unwrap(), [1.0, 1.5, 1.0, 1.5]);
        assert_eq!(parse_proportions("1:1:1.2:1").unwrap(), [1.0, 1.0, 1.2, 1.0]);
        assert!(parse_proportions("1,2").is_err());
    }
}
