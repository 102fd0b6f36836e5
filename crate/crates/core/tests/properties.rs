use dysalign::align::oracle::lcs_bruteforce_oracle;
use dysalign::align::{dtw_align, hard_lcs, soft_lcs, ClassicMethod, ScoringScheme};
use dysalign::evalkit::{alignment_accuracy, predict_corpus, Aligner};
use dysalign::neural::{repair_labels, EncoderConfig, NeuralAligner, TokenizerSpec};
use dysalign::phoneme::{sample_confusable, similar, Phoneme, PhonemeCategory, Similarity, TokenSequence, PHONEME_COUNT};
use dysalign::simulator::{alignment_from_labels, gold_labels_from_alignment, inject, DysfluencyType, JointLabelEncoding, SimulationConfig};
use dysalign::sta::{ctc_greedy_decode, segment, synthesize_emissions, DurationModel, EmissionNoise, StaAligner, TokenTiming};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn phoneme() -> impl Strategy<Value = Phoneme> {
    (0..PHONEME_COUNT).prop_map(|i| Phoneme::from_index(i).unwrap())
}

fn sequence(max: usize) -> impl Strategy<Value = TokenSequence> {
    prop::collection::vec(phoneme(), 1..=max).prop_map(TokenSequence::phonemes)
}

/// The simulator needs at least two reference tokens.
fn reference(max: usize) -> impl Strategy<Value = TokenSequence> {
    prop::collection::vec(phoneme(), 2..=max).prop_map(TokenSequence::phonemes)
}

/// Sequences over a few symbols, so that matches are common.
fn dense_sequence(max: usize) -> impl Strategy<Value = TokenSequence> {
    prop::collection::vec(0..5usize, 1..=max)
        .prop_map(|ix| TokenSequence::phonemes(ix.into_iter().map(|i| Phoneme::from_index(i).unwrap())))
}

#[test]
fn categories_partition_the_inventory() {
    let total: usize = PhonemeCategory::ALL.iter().map(|c| c.members().count()).sum();
    assert_eq!(total, PHONEME_COUNT);
    for p in Phoneme::all() {
        let owners = PhonemeCategory::ALL.iter().filter(|c| c.members().any(|q| q == p)).count();
        assert_eq!(owners, 1, "{}", p.symbol());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn similarity_is_symmetric(a in phoneme(), b in phoneme()) {
        prop_assert_eq!(similar(a, b), similar(b, a));
        prop_assert_eq!(similar(a, a), Similarity::Exact);
    }

    #[test]
    fn confusable_is_a_different_member_of_the_category(p in phoneme(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = sample_confusable(p, &mut rng);
        prop_assert_ne!(q, p);
        prop_assert_eq!(similar(p, q), Similarity::Similar);
    }

    #[test]
    fn hard_lcs_matches_the_oracle(r in dense_sequence(9), d in dense_sequence(9)) {
        let got = hard_lcs(&r, &d).unwrap();
        prop_assert_eq!(got.matched_pairs.len(), lcs_bruteforce_oracle(&r, &d).unwrap());
    }

    #[test]
    fn classic_aligners_are_monotone_and_consistent(r in sequence(14), d in sequence(14)) {
        for method in [ClassicMethod::Hard, ClassicMethod::Soft, ClassicMethod::Dtw] {
            let out = method.align(&r, &d).unwrap();
            prop_assert!(out.is_monotone(), "{method:?}");
            prop_assert!(out.labels.is_consistent(), "{method:?}");
            prop_assert_eq!(out.labels.ref_labels.len(), r.len());
            prop_assert_eq!(out.labels.dys_labels.len(), d.len());
        }
    }

    #[test]
    fn soft_score_bounds_hard_matches(r in dense_sequence(12), d in dense_sequence(12)) {
        let hard = hard_lcs(&r, &d).unwrap().matched_pairs.len() as f64;
        let soft = soft_lcs(&r, &d, &ScoringScheme::default()).unwrap().score;
        prop_assert!(soft >= 2.0 * hard - 1e-9);
    }

    #[test]
    fn dtw_is_zero_on_itself_and_symmetric(r in sequence(12), d in sequence(12)) {
        prop_assert_eq!(dtw_align(&r, &r).unwrap().score, 0.0);
        let ab = dtw_align(&r, &d).unwrap().score;
        let ba = dtw_align(&d, &r).unwrap().score;
        prop_assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn injected_records_keep_their_invariants(r in reference(16), seed in any::<u64>()) {
        let cfg = SimulationConfig { seed, ..SimulationConfig::default() };
        let rec = inject(&r, &cfg).unwrap();
        prop_assert_eq!(&rec, &inject(&r, &cfg).unwrap());

        let deleted = rec.events.iter().filter(|e| e.kind == DysfluencyType::Deletion).count();
        let extra: usize = rec
            .events
            .iter()
            .filter(|e| matches!(e.kind, DysfluencyType::Repetition | DysfluencyType::Insertion))
            .map(|e| e.inserted_tokens.len())
            .sum();
        prop_assert_eq!(rec.dysfluent.len(), r.len() - deleted + extra);

        for e in rec.events.iter().filter(|e| e.kind == DysfluencyType::Substitution) {
            prop_assert_eq!(r[e.ref_index].similarity(&e.inserted_tokens[0]), Similarity::Similar);
        }

        prop_assert!(rec.labels.is_consistent());
        let labels = gold_labels_from_alignment(&rec.gold, &rec.reference, &rec.dysfluent).unwrap();
        prop_assert_eq!(&labels, &rec.labels);
        prop_assert_eq!(alignment_from_labels(&labels, &rec.reference, &rec.dysfluent).unwrap(), rec.gold);
    }

    #[test]
    fn repair_always_restores_the_count(
        ref_raw in prop::collection::vec((any::<bool>(), 0.0f64..1.0), 1..12),
        dys_raw in prop::collection::vec((any::<bool>(), 0.0f64..1.0), 1..12),
    ) {
        let raw = JointLabelEncoding {
            ref_labels: ref_raw.iter().map(|(one, _)| if *one { 1 } else { 2 }).collect(),
            dys_labels: dys_raw.iter().map(|(one, _)| if *one { 1 } else { 0 }).collect(),
        };
        let ref_probs: Vec<[f64; 3]> = ref_raw.iter().map(|(_, p)| [0.0, *p, 1.0 - p]).collect();
        let dys_probs: Vec<[f64; 3]> = dys_raw.iter().map(|(_, p)| [1.0 - p, *p, 0.0]).collect();
        let fixed = repair_labels(&raw, &ref_probs, &dys_probs);
        prop_assert!(fixed.is_consistent());
        if raw.is_consistent() {
            prop_assert_eq!(fixed, raw);
        }
    }

    #[test]
    fn softmax_rows_are_distributions_with_masked_classes(r in sequence(8), d in sequence(8), seed in any::<u64>()) {
        let mut model = NeuralAligner::<f64>::new(EncoderConfig::tiny(), TokenizerSpec::phoneme(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.tensor_mut("out_w").unwrap().mapv_inplace(|_| rng.random_range(-2.0..2.0));
        let probs = model.probabilities(&r, &d).unwrap();
        let n = r.len();
        for (row, p) in probs.rows().into_iter().enumerate() {
            let sum: f64 = p.sum();
            if row == n {
                prop_assert_eq!(sum, 0.0);
                continue;
            }
            prop_assert!((sum - 1.0).abs() < 1e-9);
            let masked = if row < n { 0 } else { 2 };
            prop_assert_eq!(p[masked], 0.0);
        }
    }

    #[test]
    fn clean_emissions_decode_exactly(d in sequence(20), seed in any::<u64>()) {
        let noise = EmissionNoise { epsilon: 0.0, seed, ..EmissionNoise::default() };
        let (emissions, spans) = synthesize_emissions(&d, &DurationModel::default(), &noise).unwrap();
        let (decoded, decoded_spans) = ctc_greedy_decode(&emissions);
        prop_assert_eq!(decoded, d);
        prop_assert_eq!(decoded_spans, spans);
    }

    #[test]
    fn noisy_segmentation_stays_on_the_timeline(r in sequence(12), d in sequence(12), eps in 0.0f64..0.6, seed in any::<u64>()) {
        let noise = EmissionNoise { epsilon: eps, seed, ..EmissionNoise::default() };
        let (emissions, _) = synthesize_emissions(&d, &DurationModel::default(), &noise).unwrap();
        let (decoded, _) = ctc_greedy_decode(&emissions);
        prop_assert!(decoded.len() <= emissions.num_frames());
        let limit = emissions.num_frames() as f64 * emissions.frame_ms;
        let seg = segment(&r, &emissions, StaAligner::Soft).unwrap();
        prop_assert_eq!(seg.timings.len(), r.len());
        let mut last_end = 0.0;
        for t in &seg.timings {
            if let TokenTiming::Span { start_ms, end_ms } = *t {
                prop_assert!(start_ms >= last_end && start_ms < end_ms && end_ms <= limit);
                last_end = end_ms;
            }
        }
    }

    #[test]
    fn exact_match_iff_perfect_token_accuracy(r in reference(12), seed in any::<u64>()) {
        let cfg = SimulationConfig { seed, ..SimulationConfig::default() };
        let gold = vec![inject(&r, &cfg).unwrap()];
        for method in [ClassicMethod::Hard, ClassicMethod::Dtw] {
            let preds = predict_corpus(&gold, Aligner::Classic(method)).unwrap();
            let report = alignment_accuracy("p", &preds, &gold).unwrap();
            prop_assert_eq!(report.sequence_exact_match == 1.0, report.token_label_accuracy == 1.0);
        }
    }
}
