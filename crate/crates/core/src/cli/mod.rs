//! Command-line front end. [`run`] takes the full argument vector so the
//! commands can be driven from tests as well as from `main`.
//!
//! Environment: `SKETCHHASH_ROOT` is prepended to relative paths and
//! `SKETCHHASH_THREADS` sizes the worker pool.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::corpus::{
    content_hash, decode_corpus, encode_corpus, make_splits, parse_sketch_records, rasterize, read_manifest,
    to_stroke_sequence, write_manifest, Corpus, DatasetSplit, RecordFormat, SketchId, SplitPart, SplitQuotas,
};
use crate::encoder::{BinaryCode, Encoder};
use crate::entropy::{image_entropy, EntropyReport};
use crate::eval::{evaluate_retrieval, intra_inter_ratio, DISTANCE_ESTIMATOR, TIE_RULE};
use crate::experiment::zero_shot_experiment;
use crate::gradcheck::{objective_checks, primitive_checks, OBJECTIVE_TOLERANCE, PRIMITIVE_TOLERANCE};
use crate::hamming::{build_gallery, search, PackedCodes};
use crate::synth::{generate, to_ndjson, SynthConfig};
use crate::train::train_pipeline;

pub use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "sketchhash", version, about = "Binary hashing and Hamming retrieval for stroke sketches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// key=value run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_text(&read_text(p)?)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.set_pair(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic drawing corpus as newline-delimited JSON.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        categories: usize,
        #[arg(long, default_value_t = 420)]
        per_category: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
    },
    /// Parse drawing records into a binary corpus file.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "word")]
        category_field: String,
        #[arg(long, default_value = "drawing")]
        drawing_field: String,
        /// Fail on the first rejected record instead of skipping it.
        #[arg(long)]
        strict: bool,
    },
    /// Per-category image-entropy report with keep flags.
    Filter {
        #[arg(long)]
        corpus: PathBuf,
        /// Restrict to the training part of this split.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long, default_value_t = 0.05)]
        lower: f64,
        #[arg(long, default_value_t = 0.95)]
        upper: f64,
    },
    /// Seeded per-category train/validation/retrieval/query split.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 9000)]
        train: usize,
        #[arg(long, default_value_t = 1000)]
        validation: usize,
        #[arg(long, default_value_t = 1000)]
        retrieval: usize,
        #[arg(long, default_value_t = 100)]
        query: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the staged training schedule and index the retrieval split.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only `all` is supported: every stage runs in order.
        #[arg(long, default_value = "all")]
        stage: String,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Encode one split part to hex codes.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, default_value = "query")]
        part: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode one split part into a gallery file.
    Index {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, default_value = "retrieval")]
        part: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank a gallery against one code or one sketch.
    Query {
        #[arg(long)]
        gallery: PathBuf,
        /// Query code as hex.
        #[arg(long, conflicts_with = "sketch")]
        code: Option<String>,
        /// File whose first record is the query drawing.
        #[arg(long, requires = "checkpoint")]
        sketch: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Retrieval metrics of an encoded query file against a gallery.
    Evaluate {
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 200)]
        k: usize,
        /// JSON output; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        pr_csv: Option<PathBuf>,
        #[arg(long)]
        per_query_csv: Option<PathBuf>,
    },
    /// Train on seen categories and retrieve among held-out ones.
    Zeroshot {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 20)]
        holdout: usize,
        #[arg(long, default_value_t = 300)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        validation: usize,
        #[arg(long, default_value_t = 50)]
        retrieval: usize,
        #[arg(long, default_value_t = 10)]
        query: usize,
        #[arg(long, default_value_t = 200)]
        k: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Finite-difference check of the primitives and the full objective.
    Gradcheck {
        #[arg(long, default_value = "toy")]
        profile: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        per_tensor: usize,
    },
    /// Consolidated metrics of a run; unavailable fields are null and listed.
    Report {
        #[arg(long)]
        gallery: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        k: usize,
        /// Checkpoint, corpus and split together enable d1/d2.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        /// Directory written by `train`.
        #[arg(long)]
        train_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        latency_queries: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    configure_threads();
    match cli.command {
        Command::Synth {
            out,
            categories,
            per_category,
            seed,
            noise,
        } => {
            let raw = generate(&SynthConfig {
                categories,
                per_category,
                seed,
                noise_fraction: noise,
            });
            write(&out, to_ndjson(&raw).as_bytes())
        }
        Command::Ingest {
            input,
            out,
            category_field,
            drawing_field,
            strict,
        } => ingest(&input, &out, category_field, drawing_field, strict),
        Command::Filter {
            corpus,
            split,
            out,
            side,
            lower,
            upper,
        } => filter(&corpus, split.as_deref(), &out, side, lower, upper),
        Command::Split {
            corpus,
            out,
            train,
            validation,
            retrieval,
            query,
            seed,
        } => {
            let corpus = load_corpus(&corpus)?;
            let quotas = SplitQuotas {
                train,
                validation,
                retrieval,
                query,
            };
            let split = make_splits(&corpus.labels(), &corpus.categories, quotas, seed).context("sketch_corpus")?;
            write(&out, write_manifest(&split).as_bytes())
        }
        Command::Train {
            corpus,
            split,
            out,
            stage,
            seed,
            config,
        } => {
            if stage != "all" {
                bail!("train: only `--stage all` is supported");
            }
            let mut cfg = config.load()?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            train(&cfg, corpus, split, out)
        }
        Command::Encode {
            checkpoint,
            corpus,
            split,
            part,
            out,
        } => {
            let (encoder, corpus, ids) = load_part(&checkpoint, &corpus, &split, &part)?;
            let mode = crate::exec::Execution::Parallel;
            let sketches: Vec<_> = ids.iter().map(|&id| corpus.get(id).expect("checked")).collect();
            let codes = encoder.encode_codes(&sketches, mode).context("encoder")?;
            let labels: Vec<u16> = sketches.iter().map(|s| s.label).collect();
            write(&out, write_codes(encoder.config.code_bits, &ids, &labels, &codes).as_bytes())
        }
        Command::Index {
            checkpoint,
            corpus,
            split,
            part,
            out,
        } => {
            let (encoder, corpus, ids) = load_part(&checkpoint, &corpus, &split, &part)?;
            let gallery =
                build_gallery(&encoder, &corpus, &ids, crate::exec::Execution::Parallel).context("hamming_index")?;
            write(&out, &gallery.to_bytes())
        }
        Command::Query {
            gallery,
            code,
            sketch,
            checkpoint,
            k,
        } => query(&gallery, code, sketch, checkpoint, k),
        Command::Evaluate {
            gallery,
            queries,
            k,
            out,
            pr_csv,
            per_query_csv,
        } => {
            let (json, report, ids) = evaluate(&gallery, &queries, k)?;
            match out {
                Some(p) => write(&p, json.as_bytes())?,
                None => println!("{json}"),
            }
            if let Some(p) = pr_csv {
                write(&p, report.pr_csv().as_bytes())?;
            }
            if let Some(p) = per_query_csv {
                write(&p, report.per_query_csv(&ids).as_bytes())?;
            }
            Ok(())
        }
        Command::Zeroshot {
            corpus,
            holdout,
            train,
            validation,
            retrieval,
            query,
            k,
            seed,
            out,
            config,
        } => {
            let mut cfg = config.load()?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let corpus = load_corpus(&corpus)?;
            let seen = SplitQuotas {
                train,
                validation,
                retrieval: 0,
                query: 0,
            };
            let unseen = SplitQuotas {
                train: 0,
                validation: 0,
                retrieval,
                query,
            };
            let classes = corpus.categories.len().saturating_sub(holdout);
            let outcome = zero_shot_experiment(
                &corpus,
                cfg.train.seed,
                holdout,
                seen,
                unseen,
                &cfg.encoder_config(classes)?,
                &cfg.train,
                k,
                cfg.execution,
            )
            .context("eval")?;
            let text = serde_json::to_string_pretty(&outcome)?;
            match out {
                Some(p) => write(&p, text.as_bytes()),
                None => {
                    println!("{text}");
                    Ok(())
                }
            }
        }
        Command::Gradcheck {
            profile,
            seed,
            per_tensor,
        } => gradcheck(&profile, seed, per_tensor),
        Command::Report {
            gallery,
            queries,
            k,
            checkpoint,
            corpus,
            split,
            train_dir,
            latency_queries,
            out,
        } => {
            let inputs = ReportInputs {
                gallery,
                queries,
                k,
                checkpoint,
                corpus,
                split,
                train_dir,
                latency_queries,
            };
            let value = export_report(&inputs)?;
            write(&out, serde_json::to_string_pretty(&value)?.as_bytes())
        }
    }
}

fn configure_threads() {
    #[cfg(feature = "parallel")]
    if let Some(n) = std::env::var("SKETCHHASH_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // fails harmlessly when the pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn resolve(path: &Path) -> PathBuf {
    match std::env::var_os("SKETCHHASH_ROOT") {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    let p = resolve(path);
    fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let p = resolve(path);
    fs::read(&p).with_context(|| format!("reading {}", p.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    let p = resolve(path);
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    decode_corpus(&read_bytes(path)?).context("sketch_corpus")
}

fn load_split(path: &Path) -> Result<DatasetSplit> {
    read_manifest(&read_text(path)?).context("sketch_corpus")
}

fn load_encoder(path: &Path) -> Result<Encoder> {
    Encoder::from_bytes(&read_bytes(path)?).context("encoder")
}

fn load_gallery(path: &Path) -> Result<PackedCodes> {
    PackedCodes::from_bytes(&read_bytes(path)?).context("hamming_index")
}

fn load_part(checkpoint: &Path, corpus: &Path, split: &Path, part: &str) -> Result<(Encoder, Corpus, Vec<SketchId>)> {
    let encoder = load_encoder(checkpoint)?;
    let corpus = load_corpus(corpus)?;
    let split = load_split(split)?;
    let part = SplitPart::parse(part).with_context(|| format!("unknown split part `{part}`"))?;
    let ids = split.part(part).to_vec();
    if let Some(bad) = ids.iter().find(|&&id| corpus.get(id).is_none()) {
        bail!("sketch_corpus: split refers to sketch {bad} outside the corpus");
    }
    Ok((encoder, corpus, ids))
}

fn ingest(input: &Path, out: &Path, category_field: String, drawing_field: String, strict: bool) -> Result<()> {
    let p = resolve(input);
    let file = fs::File::open(&p).with_context(|| format!("reading {}", p.display()))?;
    let format = RecordFormat {
        drawing_field,
        category_field,
    };
    let mut records = Vec::new();
    let mut rejected = 0usize;
    for r in parse_sketch_records(BufReader::new(file), &format) {
        match r {
            Ok(s) => records.push(s),
            Err(e) if strict => bail!("sketch_corpus: {e}"),
            Err(e) => {
                rejected += 1;
                eprintln!("skipped {e}");
            }
        }
    }
    let corpus = Corpus::from_raw(&records).context("sketch_corpus")?;
    write(out, &encode_corpus(&corpus))?;
    eprintln!(
        "{} sketches in {} categories, {rejected} rejected",
        corpus.len(),
        corpus.categories.len()
    );
    Ok(())
}

fn filter(corpus: &Path, split: Option<&Path>, out: &Path, side: usize, lower: f64, upper: f64) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let ids: Vec<SketchId> = match split {
        Some(p) => load_split(p)?.train,
        None => (0..corpus.len() as SketchId).collect(),
    };
    let items = crate::exec::try_map(crate::exec::Execution::Parallel, &ids, |&id| {
        let s = corpus
            .get(id)
            .with_context(|| format!("sketch {id} outside the corpus"))?;
        Ok::<_, anyhow::Error>((id, s.label, image_entropy(&rasterize(s, side)?)))
    })?;
    let report = EntropyReport::build(&items, lower, upper).context("entropy_filter")?;
    write(out, report.to_csv(&corpus.categories).as_bytes())
}

fn train(cfg: &RunConfig, corpus: Option<PathBuf>, split: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let corpus_path = corpus.or(cfg.corpus.clone()).context("train needs --corpus")?;
    let split_path = split.or(cfg.split.clone()).context("train needs --split")?;
    let out = out.or(cfg.checkpoints.clone()).context("train needs --out")?;
    let corpus = load_corpus(&corpus_path)?;
    let split = load_split(&split_path)?;
    let enc = cfg.encoder_config(corpus.categories.len())?;
    let dir = resolve(&out);
    let result = train_pipeline(&corpus, &split, &enc, &cfg.train, Some(&dir), cfg.execution).context("trainer")?;
    write(&out.join("run.cfg"), cfg.describe().as_bytes())?;
    eprintln!(
        "trained {} stages; gallery of {} codes at {}",
        result.artifacts.as_ref().map_or(0, |a| a.stage_checkpoints.len()),
        result.gallery.len(),
        dir.join("gallery.bin").display()
    );
    Ok(())
}

/// Code file: a `# code_bits=D` line, then `id<TAB>label<TAB>hex` rows.
pub fn write_codes(code_bits: usize, ids: &[SketchId], labels: &[u16], codes: &[BinaryCode]) -> String {
    let mut s = format!("# code_bits={code_bits}\n");
    for ((id, label), code) in ids.iter().zip(labels).zip(codes) {
        s.push_str(&format!("{id}\t{label}\t{}\n", code.to_hex()));
    }
    s
}

pub fn read_codes(text: &str) -> Result<(Vec<SketchId>, Vec<u16>, Vec<BinaryCode>)> {
    let mut bits = None;
    let (mut ids, mut labels, mut codes) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(v) = line.strip_prefix("# code_bits=") {
            bits = Some(v.parse::<usize>().context("code file: bad code_bits")?);
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let d = bits.context("code file: missing `# code_bits=` header")?;
        let cols: Vec<&str> = line.split('\t').collect();
        let [id, label, hex] = cols[..] else {
            bail!("code file line {}: expected three tab-separated fields", i + 1);
        };
        ids.push(id.parse().with_context(|| format!("code file line {}: bad id", i + 1))?);
        labels.push(label.parse().with_context(|| format!("code file line {}: bad label", i + 1))?);
        codes.push(BinaryCode::from_hex(hex, d).with_context(|| format!("code file line {}", i + 1))?);
    }
    Ok((ids, labels, codes))
}

fn query(gallery: &Path, code: Option<String>, sketch: Option<PathBuf>, checkpoint: Option<PathBuf>, k: usize) -> Result<()> {
    let gallery = load_gallery(gallery)?;
    let d = gallery.code_bits();
    let q = match (code, sketch) {
        (Some(hex), _) => BinaryCode::from_hex(&hex, d).context("encoder")?,
        (None, Some(path)) => {
            let encoder = load_encoder(checkpoint.as_deref().context("--sketch needs --checkpoint")?)?;
            let text = read_text(&path)?;
            let raw = parse_sketch_records(text.as_bytes(), &RecordFormat::default())
                .into_iter()
                .next()
                .context("sketch file holds no record")?
                .context("sketch_corpus")?;
            let s = to_stroke_sequence(&raw, 0).context("sketch_corpus")?;
            encoder
                .encode_codes(&[&s], crate::exec::Execution::Sequential)
                .context("encoder")?
                .remove(0)
        }
        (None, None) => bail!("query needs --code or --sketch"),
    };
    let ranking = search(&q, &gallery, Some(k)).context("hamming_index")?;
    let index: BTreeMap<SketchId, usize> = gallery.ids().iter().enumerate().map(|(i, &id)| (id, i)).collect();
    println!("rank\tid\tdistance\tlabel");
    for (rank, (id, dist)) in ranking.iter().enumerate() {
        let label = gallery
            .labels()
            .map_or("-".to_string(), |l| l[index[id]].to_string());
        println!("{}\t{id}\t{dist}\t{label}", rank + 1);
    }
    Ok(())
}

/// Returns the metrics JSON, the full report and the query ids.
pub fn evaluate(gallery: &Path, queries: &Path, k: usize) -> Result<(String, crate::eval::RetrievalReport, Vec<SketchId>)> {
    let gallery_bytes = read_bytes(gallery)?;
    let query_text = read_text(queries)?;
    let gallery = PackedCodes::from_bytes(&gallery_bytes).context("hamming_index")?;
    let (ids, labels, codes) = read_codes(&query_text)?;
    let report = evaluate_retrieval(&codes, &labels, &gallery, k, crate::exec::Execution::Parallel).context("eval")?;
    let mut hashed = gallery_bytes;
    hashed.extend_from_slice(query_text.as_bytes());
    hashed.extend_from_slice(format!("k={k}").as_bytes());
    Ok((report.to_json(&content_hash(&hashed)), report, ids))
}

fn gradcheck(profile: &str, seed: u64, per_tensor: usize) -> Result<()> {
    let started = Instant::now();
    let primitives = primitive_checks(seed)?;
    let objective = objective_checks(profile, seed, per_tensor)?;
    let prim_max = primitives.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
    let obj_max = objective.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
    let value = json!({
        "profile": profile,
        "primitives": primitives.iter().map(|(n, r)| json!({
            "op": n, "max_rel_error": r.max_rel_error, "coords": r.coords_checked,
        })).collect::<Vec<_>>(),
        "objective": objective.iter().map(|c| json!({
            "lambda_scl": c.weights.scl,
            "lambda_ql": c.weights.ql,
            "max_rel_error": c.report.max_rel_error,
            "coords": c.report.coords_checked,
            "worst": c.report.worst.as_ref().map(|(n, i)| format!("{n}[{i}]")),
        })).collect::<Vec<_>>(),
        "max_rel_error_primitives": prim_max,
        "max_rel_error_objective": obj_max,
        "seconds": started.elapsed().as_secs_f64(),
    });
    println!("{}", serde_json::to_string_pretty(&value)?);
    if prim_max >= PRIMITIVE_TOLERANCE || obj_max >= OBJECTIVE_TOLERANCE {
        bail!("numeric_core: gradient check failed (primitives {prim_max:e}, objective {obj_max:e})");
    }
    Ok(())
}

/// Inputs of [`export_report`]; each metric group needs its own subset.
#[derive(Clone, Debug, Default)]
pub struct ReportInputs {
    pub gallery: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub k: usize,
    pub checkpoint: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub train_dir: Option<PathBuf>,
    pub latency_queries: usize,
}

/// Collects every metric the inputs allow. Missing ones are `null` and named
/// under `absent`; nothing is estimated.
pub fn export_report(inputs: &ReportInputs) -> Result<Value> {
    let mut fields: BTreeMap<&str, Value> = BTreeMap::new();
    let gallery = inputs.gallery.as_deref().map(load_gallery).transpose()?;
    let queries = inputs
        .queries
        .as_deref()
        .map(|p| read_text(p).and_then(|t| read_codes(&t)))
        .transpose()?;

    if let Some(g) = &gallery {
        fields.insert("gallery_size", json!(g.len()));
        fields.insert("code_bits", json!(g.code_bits()));
        fields.insert("memory_bytes", json!(g.memory_bytes()));
    }
    if let (Some(g), Some((_, labels, codes))) = (&gallery, &queries) {
        let report = evaluate_retrieval(codes, labels, g, inputs.k, crate::exec::Execution::Parallel).context("eval")?;
        fields.insert("map", json!(report.map));
        fields.insert("precision_at_k", json!(report.precision_at_k));
        fields.insert("k", json!(report.k));
        fields.insert("pr_curve", json!(report.pr_curve));
        let n = inputs.latency_queries.max(1);
        let mut total = 0.0;
        for i in 0..n {
            let q = &codes[i % codes.len()];
            let t = Instant::now();
            let ranking = search(q, g, None).context("hamming_index")?;
            total += t.elapsed().as_secs_f64();
            std::hint::black_box(ranking);
        }
        fields.insert("query_latency_s", json!(total / n as f64));
        fields.insert("latency_queries", json!(n));
    }
    if let (Some(c), Some(corpus), Some(split)) = (&inputs.checkpoint, &inputs.corpus, &inputs.split) {
        let encoder = load_encoder(c)?;
        let corpus = load_corpus(corpus)?;
        let split = load_split(split)?;
        let items: Vec<_> = split.retrieval.iter().filter_map(|&id| corpus.get(id)).collect();
        let features = encoder
            .encode(&items, crate::exec::Execution::Parallel)
            .context("encoder")?;
        let rows: Vec<&[f64]> = features.iter().map(|f| f.values()).collect();
        let labels: Vec<u16> = items.iter().map(|s| s.label).collect();
        let d = intra_inter_ratio(&rows, &labels).context("eval")?;
        fields.insert("d1", json!(d.d1));
        fields.insert("d2", json!(d.d2));
        fields.insert("d1_d2", json!(d.ratio));
    }
    if let Some(dir) = &inputs.train_dir {
        let manifest: Value = serde_json::from_str(&read_text(&dir.join("manifest.json"))?)
            .context("trainer: manifest.json")?;
        fields.insert("training", manifest);
        let log = read_text(&dir.join("train_log.csv"))?;
        if let Some(last) = log.lines().skip(1).last() {
            let header = crate::train::TrainLog::HEADER.split(',');
            let row: BTreeMap<&str, &str> = header.zip(last.split(',')).collect();
            fields.insert("final_log_row", json!(row));
        }
    }

    const ALL: [&str; 16] = [
        "map",
        "precision_at_k",
        "k",
        "pr_curve",
        "d1",
        "d2",
        "d1_d2",
        "query_latency_s",
        "latency_queries",
        "memory_bytes",
        "gallery_size",
        "code_bits",
        "training",
        "final_log_row",
        "tie_rule",
        "distance_estimator",
    ];
    fields.insert("tie_rule", json!(TIE_RULE));
    fields.insert("distance_estimator", json!(DISTANCE_ESTIMATOR));
    let absent: Vec<&str> = ALL.iter().copied().filter(|k| !fields.contains_key(k)).collect();
    let mut obj = serde_json::Map::new();
    for key in ALL {
        obj.insert(key.to_string(), fields.remove(key).unwrap_or(Value::Null));
    }
    obj.insert("absent".into(), json!(absent));
    Ok(Value::Object(obj))
}
