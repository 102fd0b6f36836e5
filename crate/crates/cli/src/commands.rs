use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use dysalign::align::ClassicMethod;
use dysalign::evalkit::{
    alignment_accuracy, predict_corpus, read_predictions, run_ablation, type_specific_accuracy, write_predictions,
    AblationSpec, Aligner, PredictionRecord,
};
use dysalign::lexicon::{demo_sentences, Lexicon};
use dysalign::neural::{train_with, ModelCheckpoint, TokenizerSpec};
use dysalign::phoneme::{inventory, Level, TokenSequence};
use dysalign::simulator::jsonl::{read_corpus, write_corpus};
use dysalign::simulator::{
    alignment_from_labels, parse_proportions, record_seed, simulate_corpus, CorpusRecord, GoldAlignment,
};
use dysalign::sta::{run_sta, synthesize_emissions, write_emissions, write_sidecar, EmissionNoise, GoldSidecar, StaAligner};
use serde::Serialize;

use crate::args::*;
use crate::config::*;
use crate::error::CliError;
use crate::manifest::{write_atomic, ManifestBuilder};

pub fn run(command: Command, config: Option<&Path>) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => simulate(a, config),
        Command::Train(a) => train(a, config),
        Command::Align(a) => align(a, config),
        Command::Sta(a) => sta(a, config),
        Command::Eval(a) => eval(a, config),
        Command::Ablation(a) => ablation(a, config),
        Command::Phonemes(a) => phonemes(a, config),
        Command::Report(a) => report(a, config),
    }
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    value.as_ref().ok_or_else(|| CliError::Usage(format!("missing --{flag}")))
}

/// Writes to `out`, or to stdout when no path is given.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => write_atomic(path, bytes),
        None => io::stdout().lock().write_all(bytes).map_err(CliError::internal),
    }
}

fn to_json(value: &impl Serialize) -> Result<Vec<u8>, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::internal)?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    read_corpus(BufReader::new(file)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_model(path: Option<&PathBuf>) -> Result<ModelCheckpoint, CliError> {
    let path = path.ok_or_else(|| CliError::Usage("the neural aligner needs --model".into()))?;
    ModelCheckpoint::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Reference texts from a file (one per line, blank lines skipped) or the demo set.
fn load_texts(input: Option<&Path>, demo: usize, seed: u64, level: Level) -> Result<Vec<TokenSequence>, CliError> {
    let lexicon = Lexicon::builtin();
    let (lines, name) = match input {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            (text.lines().map(str::to_string).collect::<Vec<_>>(), path.display().to_string())
        }
        None => (demo_sentences(demo, seed), "demo sentences".to_string()),
    };
    let mut texts = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let seq = lexicon
            .line_to_sequence(line, level)
            .map_err(|e| CliError::Data(format!("{name}: line {}: {e}", i + 1)))?;
        texts.push(seq);
    }
    Ok(texts)
}

fn simulate(a: SimulateArgs, config: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = load_section(config, "simulate", SimulateConfig::default())?;
    if a.input.is_some() {
        cfg.input = a.input;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    let sim = &mut cfg.simulation;
    if let Some(level) = a.level {
        sim.level = level;
    }
    if let Some(p) = &a.proportions {
        sim.proportions = parse_proportions(p).map_err(CliError::Usage)?;
    }
    if let Some(e) = &a.events {
        sim.events_per_sentence = parse_range(e, "--events")?;
    }
    if let Some(m) = a.max_repeat {
        sim.max_repeat = m;
    }
    if let Some(s) = a.seed {
        sim.seed = s;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    let mut manifest = ManifestBuilder::start("simulate");
    manifest.seed("simulation", cfg.simulation.seed).input(cfg.input.as_deref());

    let texts = load_texts(cfg.input.as_deref(), cfg.demo_sentences, cfg.simulation.seed, cfg.simulation.level)?;
    let corpus = simulate_corpus(&texts, &cfg.simulation, cfg.n).map_err(CliError::data)?;
    let mut buf = Vec::new();
    write_corpus(&mut buf, &corpus).map_err(CliError::internal)?;
    emit(cfg.out.as_deref(), &buf)?;
    eprintln!("simulated {} records", corpus.len());
    manifest.finish(&cfg, cfg.out.as_deref())
}

fn train(a: TrainArgs, config: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = load_section(config, "train", TrainCmdConfig::default())?;
    if a.corpus.is_some() {
        cfg.corpus = a.corpus;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    if a.level.is_some() {
        cfg.level = a.level;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(g) = a.gamma {
        cfg.loss.gamma = g;
    }
    if let Some(alpha) = &a.alpha {
        cfg.loss.alpha = parse_list::<3>(alpha, "--alpha")?;
    }
    let corpus_path = required(&cfg.corpus, "corpus")?.clone();
    let out = required(&cfg.out, "out")?.clone();
    for check in [cfg.encoder.validate(), cfg.train.validate(), cfg.loss.validate()] {
        check.map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut manifest = ManifestBuilder::start("train");
    manifest.seed("train", cfg.train.seed).input(Some(&corpus_path));

    let records = load_corpus(&corpus_path)?;
    let level = records.first().map(|r| r.level).or(cfg.level).unwrap_or(Level::Phoneme);
    if let Some(expected) = cfg.level {
        if let Some(r) = records.iter().find(|r| r.level != expected) {
            return Err(CliError::Data(format!("record {} is {}-level, expected {expected}", r.id, r.level)));
        }
    }
    let words = records.iter().flat_map(|r| r.reference.iter().chain(r.dysfluent.iter())).map(|t| t.text());
    let tokenizer = TokenizerSpec::for_level(level, words);
    let ckpt = train_with(&records, tokenizer, &cfg.encoder, &cfg.train, &cfg.loss, |r| {
        eprintln!("epoch {:>3}  loss {:.6}", r.epoch, r.loss);
    })
    .map_err(|e| match e {
        dysalign::neural::TrainError::EmptyCorpus | dysalign::neural::TrainError::Record { .. } => CliError::data(e),
        other => CliError::internal(other),
    })?;
    ckpt.save(&out).map_err(|e| CliError::Internal(format!("{}: {e}", out.display())))?;
    manifest.finish(&cfg, Some(&out))
}

fn aligner_for<'a>(method: &str, model: Option<&'a ModelCheckpoint>) -> Result<Aligner<'a>, CliError> {
    match method {
        "neural" => Ok(Aligner::Neural(model.expect("model loaded for neural"))),
        other => other.parse::<ClassicMethod>().map(Aligner::Classic).map_err(CliError::Usage),
    }
}

#[derive(Serialize)]
struct PairOutput<'a> {
    method: &'a str,
    level: Level,
    #[serde(rename = "ref")]
    reference: &'a TokenSequence,
    dys: &'a TokenSequence,
    ref_labels: &'a [u8],
    dys_labels: &'a [u8],
    groups: String,
}

fn align(a: AlignArgs, config: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = load_section(config, "align", AlignConfig::default())?;
    macro_rules! take {
        ($($f:ident),*) => { $( if a.$f.is_some() { cfg.$f = a.$f; } )* };
    }
    take!(model, reference, dys, corpus, out);
    if let Some(m) = a.method {
        cfg.method = m;
    }
    if let Some(l) = a.level {
        cfg.level = l;
    }
    if let Some(f) = a.format {
        cfg.format = f;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if cfg.method != "neural" {
        cfg.method.parse::<ClassicMethod>().map_err(CliError::Usage)?;
    }
    let model = if cfg.method == "neural" { Some(load_model(cfg.model.as_ref())?) } else { None };
    let aligner = aligner_for(&cfg.method, model.as_ref())?;
    let mut manifest = ManifestBuilder::start("align");
    manifest.seed("align", cfg.seed).input(cfg.model.as_deref()).input(cfg.corpus.as_deref());

    if let Some(corpus) = &cfg.corpus {
        let records = load_corpus(corpus)?;
        let preds = predict_corpus(&records, aligner).map_err(CliError::data)?;
        let mut buf = Vec::new();
        write_predictions(&mut buf, &aligner.name(), &preds).map_err(CliError::internal)?;
        emit(cfg.out.as_deref(), &buf)?;
        return manifest.finish(&cfg, cfg.out.as_deref());
    }

    let parse = |text: &Option<String>, flag: &str| -> Result<TokenSequence, CliError> {
        let text = text.as_ref().ok_or_else(|| CliError::Usage(format!("give --{flag} (or --corpus)")))?;
        TokenSequence::parse(cfg.level, text).map_err(|e| CliError::Data(format!("--{flag}: {e}")))
    };
    let reference = parse(&cfg.reference, "ref")?;
    let dys = parse(&cfg.dys, "dys")?;
    let labels = aligner.align(&reference, &dys).map_err(CliError::Data)?;
    let grouping = alignment_from_labels(&labels, &reference, &dys)
        .unwrap_or_else(|_| GoldAlignment { groups: vec![None; reference.len()] });
    let groups = grouping.pretty(&reference, &dys);
    let bytes = match cfg.format.as_str() {
        "pretty" => format!("{groups}\n").into_bytes(),
        "json" => to_json(&PairOutput {
            method: &cfg.method,
            level: cfg.level,
            reference: &reference,
            dys: &dys,
            ref_labels: &labels.ref_labels,
            dys_labels: &labels.dys_labels,
            groups,
        })?,
        other => return Err(CliError::Usage(format!("unknown format `{other}` (expected pretty|json)"))),
    };
    emit(cfg.out.as_deref(), &bytes)?;
    manifest.finish(&cfg, cfg.out.as_deref())
}

fn sta(a: StaArgs, config: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = load_section(config, "sta", StaConfig::default())?;
    macro_rules! take {
        ($($f:ident),*) => { $( if a.$f.is_some() { cfg.$f = a.$f; } )* };
    }
    take!(corpus, model, report, dump);
    if let Some(al) = a.aligner {
        cfg.aligner = al;
    }
    if let Some(e) = a.noise {
        cfg.noise.epsilon = e;
    }
    if let Some(b) = a.bias {
        cfg.noise.confusion_bias = b;
    }
    if let Some(s) = a.seed {
        cfg.noise.seed = s;
    }
    cfg.noise.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let corpus_path = required(&cfg.corpus, "corpus")?.clone();
    let model = match cfg.aligner.as_str() {
        "neural" => Some(load_model(cfg.model.as_ref())?),
        "soft" | "hard" => None,
        other => return Err(CliError::Usage(format!("unknown aligner `{other}` (expected soft|hard|neural)"))),
    };
    let aligner = match (&cfg.aligner[..], &model) {
        ("neural", Some(m)) => StaAligner::Neural(m),
        ("hard", _) => StaAligner::Hard,
        _ => StaAligner::Soft,
    };
    let mut manifest = ManifestBuilder::start("sta");
    manifest.seed("noise", cfg.noise.seed).input(Some(&corpus_path)).input(cfg.model.as_deref());

    let records = load_corpus(&corpus_path)?;
    if records.iter().any(|r| r.level != Level::Phoneme) {
        return Err(CliError::Data("speech-text alignment needs a phoneme-level corpus".into()));
    }
    if let Some(dir) = &cfg.dump {
        dump_emissions(dir, &records, &cfg)?;
    }
    let report = run_sta(&records, &cfg.durations, &cfg.noise, aligner).map_err(CliError::data)?;
    emit(cfg.report.as_deref(), &to_json(&report)?)?;
    eprintln!(
        "{} records, recovery {:.4}, boundary RMSE {:.2} ms",
        report.records, report.recovery_rate, report.boundary.overall.rmse_ms
    );
    manifest.finish(&cfg, cfg.report.as_deref())
}

fn dump_emissions(dir: &Path, records: &[CorpusRecord], cfg: &StaConfig) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("{}: {e}", dir.display())))?;
    for record in records {
        let noise = EmissionNoise { seed: record_seed(cfg.noise.seed, record.id), ..cfg.noise.clone() };
        let (emissions, spans) = synthesize_emissions(&record.dysfluent, &cfg.durations, &noise).map_err(CliError::data)?;
        let stem = dir.join(format!("{:06}", record.id));
        write_emissions(stem.with_extension("emis"), &emissions).map_err(CliError::internal)?;
        let sidecar = GoldSidecar { record_id: Some(record.id), frame_ms: emissions.frame_ms, spans };
        write_sidecar(stem.with_extension("spans.json"), &sidecar).map_err(CliError::internal)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    accuracy: dysalign::evalkit::AlignmentAccuracyReport,
    types: dysalign::evalkit::TypeReport,
}

fn eval(a: EvalArgs, config: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = load_section(config, "eval", EvalConfig::default())?;
    macro_rules! take {
        ($($f:ident),*) => { $( if a.$f.is_some() { cfg.$f = a.$f; } )* };
    }
    take!(pred, gold, out);
    if let Some(f) = a.format {
        cfg.format = f;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let pred_path = required(&cfg.pred, "pred")?.clone();
    let gold_path = required(&cfg.gold, "gold")?.clone();
    if !matches!(cfg.format.as_str(), "json" | "csv") {
        return Err(CliError::Usage(format!("unknown format `{}` (expected json|csv)", cfg.format)));
    }
    let mut manifest = ManifestBuilder::start("eval");
    manifest.seed("eval", cfg.seed).input(Some(&pred_path)).input(Some(&gold_path));

    let gold = load_corpus(&gold_path)?;
    let file = File::open(&pred_path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", pred_path.display())))?;
    let preds: Vec<PredictionRecord> = read_predictions(BufReader::new(file))
        .map_err(|e| CliError::Data(format!("{}: {e}", pred_path.display())))?;
    let method = prediction_method(&pred_path);
    let accuracy = alignment_accuracy(&method, &preds, &gold).map_err(CliError::data)?;
    let types = type_specific_accuracy(&preds, &gold).map_err(CliError::data)?;
    let bytes = if cfg.format == "csv" {
        format!("{}\n{}\n", dysalign::evalkit::AlignmentAccuracyReport::CSV_HEADER, accuracy.csv_row()).into_bytes()
    } else {
        to_json(&EvalOutput { accuracy, types })?
    };
    emit(cfg.out.as_deref(), &bytes)?;
    manifest.finish(&cfg, cfg.out.as_deref())
}

/// The `method` field of the first prediction line, else the file stem.
fn prediction_method(path: &Path) -> String {
    let first = fs::read_to_string(path).ok().and_then(|t| {
        let line = t.lines().find(|l| !l.trim().is_empty())?.to_string();
        let v: serde_json::Value = serde_json::from_str(&line).ok()?;
        v.get("method")?.as_str().map(str::to_string)
    });
    first.unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
}

fn ablation(a: AblationArgs, config: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = load_section(config, "ablation", AblationCmdConfig::default())?;
    macro_rules! take {
        ($($f:ident),*) => { $( if a.$f.is_some() { cfg.$f = a.$f; } )* };
    }
    take!(spec, out, input);
    if a.fast {
        cfg.ablation.records_per_cell = dysalign::evalkit::AblationConfig::fast().records_per_cell;
    }
    if let Some(n) = a.records_per_cell {
        cfg.ablation.records_per_cell = n;
    }
    if let Some(e) = a.epochs {
        cfg.ablation.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.ablation.seed = s;
        cfg.ablation.train.seed = s;
    }
    let spec = match &cfg.spec {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<AblationSpec>(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => AblationSpec::default(),
    };
    spec.validate().map_err(CliError::Data)?;
    let mut manifest = ManifestBuilder::start("ablation");
    manifest.seed("simulation", cfg.ablation.seed).seed("train", cfg.ablation.train.seed);
    manifest.input(cfg.spec.as_deref()).input(cfg.input.as_deref());

    let texts = load_texts(cfg.input.as_deref(), cfg.demo_sentences, cfg.ablation.seed, cfg.ablation.level)?;
    let grid = run_ablation(&texts, &spec, &cfg.ablation, |row| match &row.report {
        Some(r) => eprintln!("{}: Rep {:.4} Ins {:.4}", row.name, r.accuracy(dysalign::evalkit::TypeBucket::Rep), r.accuracy(dysalign::evalkit::TypeBucket::Ins)),
        None => eprintln!("{}: failed: {}", row.name, row.error.as_deref().unwrap_or("")),
    })
    .map_err(CliError::Data)?;
    emit(cfg.out.as_deref(), grid.to_csv().as_bytes())?;
    manifest.finish(&cfg, cfg.out.as_deref())
}

fn phonemes(a: PhonemesArgs, config: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = load_section(config, "phonemes", FormatConfig::with_format("tsv"))?;
    if let Some(f) = a.format {
        cfg.format = f;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let entries = inventory();
    let bytes = match cfg.format.as_str() {
        "json" => to_json(&entries)?,
        "tsv" => {
            let mut out = String::from("index\tsymbol\tcategory\n");
            for e in &entries {
                out.push_str(&format!("{}\t{}\t{}\n", e.index, e.symbol, e.category.name()));
            }
            out.into_bytes()
        }
        other => return Err(CliError::Usage(format!("unknown format `{other}` (expected json|tsv)"))),
    };
    emit(None, &bytes)
}

/// Numeric leaves of a JSON value as `a.b.c` paths, in document order.
fn numeric_leaves(value: &serde_json::Value, prefix: &str, out: &mut Vec<(String, f64)>) {
    match value {
        serde_json::Value::Number(n) => out.extend(n.as_f64().map(|v| (prefix.to_string(), v))),
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                numeric_leaves(v, &path, out);
            }
        }
        _ => {}
    }
}

fn report(a: ReportArgs, config: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = load_section(config, "report", FormatConfig::with_format("pretty"))?;
    if let Some(f) = a.format {
        cfg.format = f;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let mut rows = Vec::new();
    for path in &a.inputs {
        let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut leaves = Vec::new();
        numeric_leaves(&value, "", &mut leaves);
        rows.push((path.display().to_string(), leaves));
    }
    let bytes = match cfg.format.as_str() {
        "pretty" => {
            let mut out = String::new();
            for (name, leaves) in &rows {
                out.push_str(&format!("{name}\n"));
                let width = leaves.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
                for (k, v) in leaves {
                    out.push_str(&format!("  {k:<width$}  {v}\n"));
                }
            }
            out.into_bytes()
        }
        "csv" => {
            let mut out = String::from("file,metric,value\n");
            for (name, leaves) in &rows {
                for (k, v) in leaves {
                    out.push_str(&format!("{name},{k},{v}\n"));
                }
            }
            out.into_bytes()
        }
        "json" => {
            let map: serde_json::Map<String, serde_json::Value> = rows
                .into_iter()
                .map(|(name, leaves)| {
                    let inner = leaves.into_iter().map(|(k, v)| (k, serde_json::json!(v))).collect();
                    (name, serde_json::Value::Object(inner))
                })
                .collect();
            to_json(&map)?
        }
        other => return Err(CliError::Usage(format!("unknown format `{other}` (expected pretty|json|csv)"))),
    };
    emit(None, &bytes)
}
