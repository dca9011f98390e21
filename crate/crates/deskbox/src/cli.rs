use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use crate::config::{from_table, load_section, set_path, RunConfig, CONFIG_ENV};
use crate::error::{Error, Result};
use crate::estimate::{run_estimate, EstimateArgs};
use crate::eval::run_eval;
use crate::pack::{run_pack, PackConfig};

#[derive(Debug, Parser)]
#[command(
    name = "deskbox",
    version,
    about = "Few-shot evaluation, sequence packing and GPU memory estimates"
)]
pub struct Cli {
    /// Config file (TOML, or JSON by extension) with [eval] and [pack] tables.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a dataset with a model and write a JSON report.
    Eval(EvalFlags),
    /// Pack a token corpus into fixed-length blocks.
    Pack(PackFlags),
    /// Estimate per-GPU training memory.
    Estimate(EstimateFlags),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Generation,
    #[value(alias = "ppl_options")]
    PplOptions,
    #[value(alias = "letter_options")]
    LetterOptions,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExtractorArg {
    #[value(alias = "last_number")]
    LastNumber,
    #[value(alias = "first_line")]
    FirstLine,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Pretrain,
    Instructions,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExhaustionArg {
    Replace,
    Error,
}

fn enum_name<T: ValueEnum>(v: T) -> Value {
    let name = v
        .to_possible_value()
        .expect("no skipped variants")
        .get_name()
        .replace('-', "_");
    Value::String(name)
}

#[derive(Debug, Args)]
pub struct EvalFlags {
    /// Model name (toy, toy-tiny).
    #[arg(short = 'm', long = "model")]
    pub model: Option<String>,
    /// JSONL dataset path.
    #[arg(short = 'd', long = "dataset")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Number of few-shot examples drawn from the train split.
    #[arg(long, visible_alias = "num-shots")]
    pub shots: Option<usize>,
    /// Samples per instance; above 1 enables self-consistency voting.
    #[arg(long = "sample_num", visible_alias = "sample-num")]
    pub sample_num: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path; stdout when omitted.
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
    /// Worker threads. Results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Disable the prefix cache.
    #[arg(long)]
    pub no_cache: bool,
    /// Token budget of the prefix cache.
    #[arg(long)]
    pub cache_budget: Option<usize>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub repetition_penalty: Option<f32>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    #[arg(long)]
    pub stop_token: Option<u32>,
    #[arg(long, value_enum)]
    pub extractor: Option<ExtractorArg>,
}

impl EvalFlags {
    fn merge(&self, mut t: Map<String, Value>) -> Result<RunConfig> {
        if let Some(m) = &self.model {
            t.insert(
                "model".into(),
                serde_json::to_value(crate::config::ModelSpec::named(m)?).expect("plain data"),
            );
        }
        let mut set = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                set_path(&mut t, k, v);
            }
        };
        set("dataset", self.dataset.as_ref().map(|p| json!(p)));
        set("mode", self.mode.map(enum_name));
        set("shots", self.shots.map(|v| json!(v)));
        set("generation.num_samples", self.sample_num.map(|v| json!(v)));
        set("seed", self.seed.map(|v| json!(v)));
        set("output", self.output.as_ref().map(|p| json!(p)));
        set("workers", self.workers.map(|v| json!(v)));
        set("cache.enabled", self.no_cache.then_some(json!(false)));
        set(
            "cache.max_cached_tokens",
            self.cache_budget.map(|v| json!(v)),
        );
        set("generation.strategy", self.strategy.map(enum_name));
        set("generation.temperature", self.temperature.map(|v| json!(v)));
        set("generation.top_p", self.top_p.map(|v| json!(v)));
        set(
            "generation.repetition_penalty",
            self.repetition_penalty.map(|v| json!(v)),
        );
        set(
            "generation.max_new_tokens",
            self.max_new_tokens.map(|v| json!(v)),
        );
        set("generation.stop_token", self.stop_token.map(|v| json!(v)));
        set("extractor", self.extractor.map(enum_name));
        if !t.contains_key("dataset") {
            return Err(Error::Usage("missing required flag -d/--dataset".into()));
        }
        // several samples only make sense when sampling
        let gen = t.get("generation").and_then(Value::as_object);
        let samples = gen
            .and_then(|g| g.get("num_samples"))
            .and_then(Value::as_u64)
            .unwrap_or(1);
        if samples > 1 && gen.is_none_or(|g| !g.contains_key("strategy")) {
            set_path(&mut t, "generation.strategy", json!("sample"));
        }
        from_table(t, "eval")
    }
}

#[derive(Debug, Args)]
pub struct PackFlags {
    /// JSONL corpus with `tokens` or `text` per line.
    #[arg(short = 'i', long)]
    pub input: Option<PathBuf>,
    /// Weighted corpus for mixture sampling, as NAME=PATH:WEIGHT. Repeatable.
    #[arg(long = "source")]
    pub sources: Vec<String>,
    #[arg(long)]
    pub total_samples: Option<usize>,
    #[arg(long, value_enum)]
    pub exhaustion: Option<ExhaustionArg>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Separator token between pretraining documents.
    #[arg(long)]
    pub separator: Option<u32>,
    /// Drop the final partial pretraining block.
    #[arg(long)]
    pub drop_last: bool,
    /// Skip conversations longer than a block instead of failing.
    #[arg(long)]
    pub skip_oversize: bool,
    /// Output directory.
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
    /// Also write tokens.bin and segments.idx.
    #[arg(long)]
    pub binary: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_source(spec: &str) -> Result<Value> {
    let bad = || Error::Usage(format!("--source {spec:?} must look like NAME=PATH:WEIGHT"));
    let (name, rest) = spec.split_once('=').ok_or_else(bad)?;
    let (path, weight) = rest.rsplit_once(':').ok_or_else(bad)?;
    let weight: f64 = weight.parse().map_err(|_| bad())?;
    Ok(json!({ "name": name, "path": path, "weight": weight }))
}

impl PackFlags {
    fn merge(&self, mut t: Map<String, Value>) -> Result<PackConfig> {
        if !self.sources.is_empty() {
            let sources = self
                .sources
                .iter()
                .map(|s| parse_source(s))
                .collect::<Result<Vec<_>>>()?;
            t.insert("sources".into(), Value::Array(sources));
        }
        let mut set = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                set_path(&mut t, k, v);
            }
        };
        set("input", self.input.as_ref().map(|p| json!(p)));
        set("total_samples", self.total_samples.map(|v| json!(v)));
        set("exhaustion", self.exhaustion.map(enum_name));
        set("kind", self.kind.map(enum_name));
        set("max_len", self.max_len.map(|v| json!(v)));
        set("separator", self.separator.map(|v| json!(v)));
        set("drop_last", self.drop_last.then_some(json!(true)));
        set("skip_oversize", self.skip_oversize.then_some(json!(true)));
        set("output", self.output.as_ref().map(|p| json!(p)));
        set("binary", self.binary.then_some(json!(true)));
        set("seed", self.seed.map(|v| json!(v)));
        for (key, flag) in [
            ("kind", "--kind"),
            ("max_len", "--max-len"),
            ("output", "-o/--output"),
        ] {
            if !t.contains_key(key) {
                return Err(Error::Usage(format!("missing required flag {flag}")));
            }
        }
        from_table(t, "pack")
    }
}

#[derive(Debug, Args)]
#[command(disable_help_flag = true)]
pub struct EstimateFlags {
    /// Total parameter count.
    #[arg(short = 'p', long)]
    pub params: Option<u64>,
    /// Number of GPUs; searched for when omitted and --gpu is given.
    #[arg(short = 'n', long)]
    pub gpus: Option<u64>,
    #[arg(short = 'l', long)]
    pub layers: Option<u64>,
    /// Per-GPU batch size.
    #[arg(short = 'b', long)]
    pub batch: Option<u64>,
    /// Sequence length in tokens.
    #[arg(short = 's', long)]
    pub seq_len: Option<u64>,
    /// Hidden size.
    #[arg(short = 'h', long)]
    pub hidden: Option<u64>,
    /// Vocabulary size.
    #[arg(short = 'v', long)]
    pub vocab: Option<u64>,
    /// Named model shape (e.g. llama2-7b).
    #[arg(long)]
    pub preset: Option<String>,
    /// GPU profile: a100, a6000 or NAME=GIB. Repeatable with --table.
    #[arg(long)]
    pub gpu: Vec<String>,
    /// Largest GPU count the search considers.
    #[arg(long, default_value_t = 1024)]
    pub n_max: u64,
    /// Minimum-GPU table over every preset.
    #[arg(long)]
    pub table: bool,
    #[arg(long)]
    pub json: bool,
    /// Print help.
    #[arg(long, action = clap::ArgAction::Help)]
    pub help: Option<bool>,
}

impl From<&EstimateFlags> for EstimateArgs {
    fn from(f: &EstimateFlags) -> Self {
        EstimateArgs {
            params: f.params,
            gpus: f.gpus,
            layers: f.layers,
            batch: f.batch,
            seq_len: f.seq_len,
            hidden: f.hidden,
            vocab: f.vocab,
            preset: f.preset.clone(),
            gpu: f.gpu.clone(),
            n_max: f.n_max,
            table: f.table,
            json: f.json,
        }
    }
}

fn section(cli: &Cli, name: &str) -> Result<Map<String, Value>> {
    match &cli.config {
        Some(p) => load_section(p, name),
        None => Ok(Map::new()),
    }
}

/// Runs a parsed command.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Eval(flags) => {
            let config = flags.merge(section(cli, "eval")?)?;
            let output = config.output.clone();
            let report = run_eval(config)?;
            report.write(output.as_deref())
        }
        Command::Pack(flags) => {
            let config = flags.merge(section(cli, "pack")?)?;
            let summary = run_pack(&config)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            let json = serde_json::to_string_pretty(&summary)
                .map_err(|e| Error::Runtime(e.to_string()))?;
            println!("{json}");
            Ok(())
        }
        Command::Estimate(flags) => {
            print!("{}", run_estimate(&EstimateArgs::from(flags))?);
            Ok(())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Failures print one JSON error record on stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                print!("{e}");
                return 0;
            }
            _ => {
                let err = Error::Usage(e.to_string().trim_end().to_string());
                eprintln!("{}", err.to_record());
                return err.exit_code();
            }
        },
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{}", err.to_record());
            err.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn underscore_flag_aliases_parse() {
        let cli = Cli::try_parse_from([
            "deskbox",
            "eval",
            "-m",
            "toy",
            "-d",
            "x.jsonl",
            "--shots",
            "5",
            "--sample_num",
            "3",
        ])
        .unwrap();
        let Command::Eval(flags) = &cli.command else {
            panic!()
        };
        let c = flags.merge(Map::new()).unwrap();
        assert_eq!(c.shots, 5);
        assert_eq!(c.generation.num_samples, 3);
        assert_eq!(
            c.generation.strategy,
            deskbox_core::scoring::DecodeStrategy::Sample
        );
        let cli = Cli::try_parse_from([
            "deskbox",
            "eval",
            "--dataset",
            "x",
            "--mode",
            "letter_options",
            "--sample-num",
            "1",
        ])
        .unwrap();
        let Command::Eval(flags) = &cli.command else {
            panic!()
        };
        assert_eq!(
            flags.merge(Map::new()).unwrap().mode,
            deskbox_core::dataset::EvalMode::LetterOptions
        );
    }

    #[test]
    fn flags_override_file_values() {
        let mut file = Map::new();
        set_path(&mut file, "dataset", json!("file.jsonl"));
        set_path(&mut file, "shots", json!(1));
        set_path(&mut file, "seed", json!(3));
        let cli = Cli::try_parse_from(["deskbox", "eval", "--shots", "4"]).unwrap();
        let Command::Eval(flags) = &cli.command else {
            panic!()
        };
        let c = flags.merge(file).unwrap();
        assert_eq!((c.shots, c.seed), (4, 3));
        assert_eq!(c.dataset, PathBuf::from("file.jsonl"));
    }

    #[test]
    fn sources_parse() {
        assert_eq!(
            parse_source("flan=a/b.jsonl:50").unwrap()["weight"],
            json!(50.0)
        );
        assert!(parse_source("flan").is_err());
    }
}
