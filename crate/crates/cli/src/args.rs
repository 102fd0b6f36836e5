use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dysalign::phoneme::Level;

#[derive(Debug, Parser)]
#[command(name = "dysalign", version, about = "Simulate, align and evaluate dysfluent token sequences")]
pub struct Cli {
    /// TOML config file, or a run manifest to replay. Defaults to $DYSALIGN_CONFIG.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inject dysfluencies into reference texts and write a labelled corpus.
    Simulate(SimulateArgs),
    /// Train the neural aligner on a corpus.
    Train(TrainArgs),
    /// Align one pair, or every record of a corpus.
    Align(AlignArgs),
    /// Synthesize emissions, segment them and score boundaries.
    Sta(StaArgs),
    /// Score predictions against a gold corpus.
    Eval(EvalArgs),
    /// Train and score one model per proportion row.
    Ablation(AblationArgs),
    /// Print the phoneme inventory.
    Phonemes(PhonemesArgs),
    /// Summarize JSON reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Text file with one reference per line; the built-in demo sentences otherwise.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub level: Option<Level>,
    /// Weights for repetition, insertion, deletion, substitution, e.g. 1,1.5,1,1.5.
    #[arg(long)]
    pub proportions: Option<String>,
    /// Number of records.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Events per sentence as MIN,MAX.
    #[arg(long)]
    pub events: Option<String>,
    #[arg(long)]
    pub max_repeat: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Expected corpus level; checked against the records.
    #[arg(long)]
    pub level: Option<Level>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Focal weights for labels 0,1,2.
    #[arg(long)]
    pub alpha: Option<String>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// hard, soft, dtw or neural.
    #[arg(long)]
    pub method: Option<String>,
    /// Checkpoint for --method neural.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long = "ref")]
    pub reference: Option<String>,
    #[arg(long)]
    pub dys: Option<String>,
    #[arg(long)]
    pub level: Option<Level>,
    /// pretty or json (single pair only).
    #[arg(long)]
    pub format: Option<String>,
    /// Align every record of this corpus instead of one pair.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct StaArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Probability mass moved off the true class in every frame.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Share of the noise kept within the true phoneme's category.
    #[arg(long)]
    pub bias: Option<f64>,
    /// soft, hard or neural.
    #[arg(long)]
    pub aligner: Option<String>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write each record's emission matrix and gold spans into this directory.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// json or csv.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    /// TOML file with `[[rows]]` entries; the five default rows otherwise.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// 1k-record cells.
    #[arg(long)]
    pub fast: bool,
    /// Text file with one reference per line; the built-in demo sentences otherwise.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub records_per_cell: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PhonemesArgs {
    /// json or tsv.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON reports written by eval or sta.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// pretty, json or csv.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}
