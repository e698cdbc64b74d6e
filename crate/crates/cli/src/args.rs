use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "geomesh", version, about = "Adaptive-mesh image geolocation pipeline")]
pub struct Cli {
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Seed for every random choice; falls back to GEOMESH_SEED.
    #[arg(long, global = true, env = "GEOMESH_SEED")]
    pub seed: Option<u64>,
    /// Comma-separated error thresholds in km.
    #[arg(long, global = true, value_delimiter = ',', default_value = "1,25,200,750,2500")]
    pub thresholds: Vec<f64>,
    /// Keep only records flagged outdoor.
    #[arg(long, global = true)]
    pub outdoor_only: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Refine and prune a mesh over the record locations.
    MeshBuild(MeshBuildArgs),
    /// Geo-class of every record.
    Assign(MeshRecords),
    /// Label point per geo-class.
    Labels(LabelsArgs),
    /// Synthetic records, probability rows and the mesh they were drawn against.
    SynthGen(SynthArgs),
    /// Train the time-adjust network.
    TrainM2(TrainArgs),
    /// Train the album network.
    TrainM3(TrainArgs),
    /// Class probabilities from a trained network.
    Predict(PredictArgs),
    /// One prediction per user from the mean probability row.
    UserAverage(RecordsProbs),
    /// Threshold accuracies, error summary and class bias of predictions.
    Eval(EvalArgs),
    /// Class-distribution divergence of predictions from the truth.
    BiasReport(EvalArgs),
    /// Paired signed-rank test on two error columns.
    Wilcoxon(WilcoxonArgs),
    /// Accuracy when every image is assigned its own cell's label.
    BestPossible(LabelsArgs),
    /// Nearest probability rows to a query row.
    Retrieve(RetrieveArgs),
    /// Bundle evaluation reports into one table.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::MeshBuild(_) => "mesh-build",
            Command::Assign(_) => "assign",
            Command::Labels(_) => "labels",
            Command::SynthGen(_) => "synth-gen",
            Command::TrainM2(_) => "train-m2",
            Command::TrainM3(_) => "train-m3",
            Command::Predict(_) => "predict",
            Command::UserAverage(_) => "user-average",
            Command::Eval(_) => "eval",
            Command::BiasReport(_) => "bias-report",
            Command::Wilcoxon(_) => "wilcoxon",
            Command::BestPossible(_) => "best-possible",
            Command::Retrieve(_) => "retrieve",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Args)]
pub struct MeshBuildArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// coarse, fine or fine_p.
    #[arg(long, default_value = "coarse")]
    pub preset: String,
    #[arg(long)]
    pub init_rows: Option<u32>,
    #[arg(long)]
    pub init_cols: Option<u32>,
    #[arg(long)]
    pub refinement_limit: Option<u64>,
    #[arg(long)]
    pub minimum_examples: Option<u64>,
    #[arg(long)]
    pub max_depth: Option<u32>,
}

#[derive(Debug, Args)]
pub struct MeshRecords {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
}

#[derive(Debug, Args)]
pub struct LabelsArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    /// cell-centroid or imagery-centroid.
    #[arg(long, default_value = "imagery-centroid")]
    pub mode: String,
    /// Label table from `labels`; computed from the records when absent.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    pub users: usize,
    #[arg(long, default_value_t = 10.0)]
    pub images_per_user: f64,
    #[arg(long, default_value_t = 0.8)]
    pub coupling: f64,
    #[arg(long, default_value_t = 150.0)]
    pub coherence_km: f64,
    #[arg(long, default_value_t = 0.6)]
    pub noise_temperature: f64,
    #[arg(long, default_value_t = 0.7)]
    pub outdoor_prob: f64,
    #[arg(long, default_value = "coarse")]
    pub preset: String,
    #[arg(long)]
    pub init_rows: Option<u32>,
    #[arg(long)]
    pub init_cols: Option<u32>,
    #[arg(long)]
    pub refinement_limit: Option<u64>,
    #[arg(long)]
    pub minimum_examples: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub probs: PathBuf,
    /// Share of records held out for early stopping.
    #[arg(long, default_value_t = 0.1)]
    pub valid_fraction: f64,
    /// Hidden width of the dense layers.
    #[arg(long, default_value_t = geomesh_core::models::TABLE_HIDDEN_WIDTH)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, default_value_t = geomesh_core::models::DEFAULT_LSTM_HIDDEN)]
    pub lstm_hidden: usize,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: u32,
    #[arg(long, default_value_t = 5)]
    pub patience: u32,
    #[arg(long, default_value_t = 0)]
    pub warmup_epochs: u32,
    /// Minority oversampling strength of the epoch sampler, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pub sampler_bias: f64,
    #[arg(long, default_value_t = geomesh_core::features::DEFAULT_TOP_K)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub probs: PathBuf,
    #[arg(long, default_value_t = geomesh_core::features::DEFAULT_TOP_K)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct RecordsProbs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub probs: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    /// `image_id,class` file; without it the argmax of `--probs` is used.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub probs: Option<PathBuf>,
    #[arg(long, default_value = "cell-centroid")]
    pub mode: String,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Second prediction file for a paired signed-rank comparison.
    #[arg(long)]
    pub compare: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WilcoxonArgs {
    /// Error file of the first method (`image_id,error_km`).
    pub first: PathBuf,
    /// Error file of the second method.
    pub second: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub probs: PathBuf,
    /// Row used as the query.
    #[arg(long)]
    pub query_row: usize,
    #[arg(short, long, default_value_t = 6)]
    pub k: usize,
    /// Records whose `prob_row` map rows back to image ids.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `name=path/to/report.json` entries, one table row each.
    #[arg(required = true)]
    pub entries: Vec<String>,
}
