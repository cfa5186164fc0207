use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::corpus::{content_hash, rasterize, Corpus, DatasetSplit, OffsetNormalizer, SketchId};
use crate::encoder::{BinaryCode, Branch, Encoder, EncoderConfig, SampleInput};
use crate::entropy::{image_entropy, EntropyReport};
use crate::exec::{self, Execution};
use crate::hamming::{build_gallery, PackedCodes};
use crate::losses::{CenterProvenance, CenterTable};

use super::{
    alternating_full_train, compute_centers, finetune_fused, pretrain_branch, CodeRecompute, Stage,
    TrainConfig, TrainError, TrainLog, TrainState,
};

/// Network inputs for a list of sketches, plus their image entropies.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSamples {
    pub ids: Vec<SketchId>,
    pub inputs: Vec<SampleInput>,
    pub entropies: Vec<f64>,
}

impl PreparedSamples {
    /// Keep flags from the per-category entropy percentile filter.
    pub fn entropy_keep(&self, lower: f64, upper: f64) -> Result<(Vec<bool>, EntropyReport), TrainError> {
        let items: Vec<(SketchId, u16, f64)> = self
            .ids
            .iter()
            .zip(&self.inputs)
            .zip(&self.entropies)
            .map(|((&id, s), &e)| (id, s.label, e))
            .collect();
        let report = EntropyReport::build(&items, lower, upper)?;
        let keep = self.ids.iter().map(|&id| report.is_kept(id)).collect();
        Ok((keep, report))
    }

    /// The rows whose flag is set, in order.
    pub fn select(&self, keep: &[bool]) -> PreparedSamples {
        let mut out = PreparedSamples {
            ids: Vec::new(),
            inputs: Vec::new(),
            entropies: Vec::new(),
        };
        for (i, _) in keep.iter().enumerate().filter(|(_, k)| **k) {
            out.ids.push(self.ids[i]);
            out.inputs.push(self.inputs[i].clone());
            out.entropies.push(self.entropies[i]);
        }
        out
    }
}

pub fn prepare_samples(
    encoder: &Encoder,
    corpus: &Corpus,
    ids: &[SketchId],
    mode: Execution,
) -> Result<PreparedSamples, TrainError> {
    let side = encoder.config.raster_side;
    let rows = exec::try_map(mode, ids, |&id| {
        let sketch = corpus
            .get(id)
            .ok_or_else(|| TrainError::Config(format!("sketch id {id} not in corpus")))?;
        let raster = rasterize(sketch, side)?;
        Ok::<_, TrainError>((encoder.prepare_with_raster(sketch, &raster), image_entropy(&raster)))
    })?;
    let (inputs, entropies) = rows.into_iter().unzip();
    Ok(PreparedSamples {
        ids: ids.to_vec(),
        inputs,
        entropies,
    })
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    /// After stage 2: both branches pretrained, temporary heads still present.
    pub pretrained: Encoder,
    /// After stage 3: fused network trained with cross-entropy.
    pub fused: Encoder,
    pub encoder: Encoder,
    pub centers: Option<CenterTable>,
    pub train_codes: Vec<BinaryCode>,
    pub gallery: PackedCodes,
    pub recomputes: Vec<CodeRecompute>,
    /// Center table bytes right after computation and after the last stage.
    pub center_bytes: Option<(Vec<u8>, Vec<u8>)>,
    pub log: TrainLog,
    pub artifacts: Option<PipelineArtifacts>,
}

/// Files written by [`train_pipeline`].
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineArtifacts {
    pub stage_checkpoints: Vec<PathBuf>,
    pub centers: Option<PathBuf>,
    pub gallery: PathBuf,
    pub log: PathBuf,
    pub manifest: PathBuf,
}

struct Writer<'a> {
    dir: Option<&'a Path>,
    written: Vec<PathBuf>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<Option<PathBuf>, TrainError> {
        let Some(dir) = self.dir else { return Ok(None) };
        let path = dir.join(name);
        fs::write(&path, bytes)?;
        self.written.push(path.clone());
        Ok(Some(path))
    }
}

/// Runs stages 1 to 5 on the training split and encodes the retrieval split.
/// With `out_dir`, every stage checkpoint, the center table, the gallery, the
/// CSV log and a JSON manifest are written there as they become available.
pub fn train_pipeline(
    corpus: &Corpus,
    split: &DatasetSplit,
    encoder_config: &EncoderConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    mode: Execution,
) -> Result<PipelineOutput, TrainError> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(TrainError::NoSamples);
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut writer = Writer {
        dir: out_dir,
        written: Vec::new(),
    };
    let mut enc_cfg = encoder_config.clone();
    enc_cfg.classes = corpus.categories.len();
    let train_sketches = split.train.iter().filter_map(|&id| corpus.get(id));
    enc_cfg.offset_scale = OffsetNormalizer::fit(train_sketches).scale;
    let mut encoder = Encoder::init(enc_cfg)?;

    let mut samples = prepare_samples(&encoder, corpus, &split.train, mode)?;
    if cfg.filter_training {
        let (keep, _) = samples.entropy_keep(cfg.entropy_lower, cfg.entropy_upper)?;
        samples = samples.select(&keep);
    }
    let mut state = TrainState::new();
    let mut log = TrainLog::default();
    let mut checkpoints = Vec::new();

    pretrain_branch(&mut encoder, Branch::Cnn, &samples.inputs, cfg, &mut state, &mut log, mode)?;
    checkpoints.extend(writer.put(&format!("{}.ckpt", Stage::PretrainCnn.file_stem()), &encoder.to_bytes())?);
    pretrain_branch(&mut encoder, Branch::Rnn, &samples.inputs, cfg, &mut state, &mut log, mode)?;
    checkpoints.extend(writer.put(&format!("{}.ckpt", Stage::PretrainRnn.file_stem()), &encoder.to_bytes())?);
    let pretrained = encoder.clone();

    encoder.discard_branch_heads();
    finetune_fused(&mut encoder, &samples.inputs, Stage::FusedCel, cfg.weights, None, cfg, &mut state, &mut log, mode)?;
    let fused_bytes = encoder.to_bytes();
    checkpoints.extend(writer.put(&format!("{}.ckpt", Stage::FusedCel.file_stem()), &fused_bytes)?);
    let fused = encoder.clone();

    let finish = finish_from_fused(&mut encoder, corpus, &samples, cfg, &mut state, &mut log, mode)?;
    if !cfg.skip_scl_stage {
        checkpoints.extend(writer.put(&format!("{}.ckpt", Stage::FusedScl.file_stem()), &finish.stage4_bytes)?);
    }
    let final_bytes = encoder.to_bytes();
    checkpoints.extend(writer.put(&format!("{}.ckpt", Stage::Alternating.file_stem()), &final_bytes)?);
    let centers_path = match &finish.centers {
        Some(t) => writer.put("centers.bin", &t.to_bytes())?,
        None => None,
    };

    let gallery = build_gallery(&encoder, corpus, &split.retrieval, mode)
        .map_err(|e| TrainError::Config(format!("gallery: {e}")))?;
    let gallery_path = writer.put("gallery.bin", &gallery.to_bytes())?;
    let log_path = writer.put("train_log.csv", log.to_csv().as_bytes())?;

    let manifest = json!({
        "seed": cfg.seed,
        "corpus_hash": corpus.content_hash(),
        "encoder": encoder.config.to_descriptor(),
        "train": cfg.describe(),
        "gradient_clipping": { "kind": "global_norm", "max_norm": cfg.clip_norm },
        "stage_checkpoints": checkpoints.iter().map(|p| file_name(p)).collect::<Vec<_>>(),
        "final_checkpoint_hash": content_hash(&final_bytes),
        "centers": finish.centers.as_ref().map(|t| json!({
            "source_checkpoint": t.provenance.checkpoint,
            "filtered": t.provenance.filtered,
            "lower": t.provenance.lower,
            "upper": t.provenance.upper,
            "sketches": t.provenance.sketches,
        })),
        "code_updates": finish.recomputes.iter().map(|r| json!({
            "outer": r.outer,
            "ql_before": r.ql_before,
            "ql_after": r.ql_after,
            "changed_bits": r.changed_bits,
        })).collect::<Vec<_>>(),
        "gallery_size": gallery.len(),
        "gallery_hash": content_hash(&gallery.to_bytes()),
    });
    let manifest_text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let manifest_path = writer.put("manifest.json", manifest_text.as_bytes())?;

    let artifacts = match (gallery_path, log_path, manifest_path) {
        (Some(gallery), Some(log), Some(manifest)) => Some(PipelineArtifacts {
            stage_checkpoints: checkpoints,
            centers: centers_path,
            gallery,
            log,
            manifest,
        }),
        _ => None,
    };
    Ok(PipelineOutput {
        pretrained,
        fused,
        encoder,
        centers: finish.centers,
        train_codes: finish.codes,
        gallery,
        recomputes: finish.recomputes,
        center_bytes: finish.center_bytes,
        log,
        artifacts,
    })
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Result of stages 4 and 5.
#[derive(Clone, Debug)]
pub struct Finish {
    pub centers: Option<CenterTable>,
    pub center_bytes: Option<(Vec<u8>, Vec<u8>)>,
    pub stage4_bytes: Vec<u8>,
    pub codes: Vec<BinaryCode>,
    pub recomputes: Vec<CodeRecompute>,
}

/// Stages 4 and 5 starting from a stage-3 encoder.
#[allow(clippy::too_many_arguments)]
pub fn finish_from_fused(
    encoder: &mut Encoder,
    corpus: &Corpus,
    samples: &PreparedSamples,
    cfg: &TrainConfig,
    state: &mut TrainState,
    log: &mut TrainLog,
    mode: Execution,
) -> Result<Finish, TrainError> {
    let needs_centers = !cfg.skip_scl_stage || cfg.weights.scl > 0.0;
    let make_centers = |encoder: &Encoder| -> Result<CenterTable, TrainError> {
        let (keep, filtered) = if cfg.filter_training {
            // outliers are already gone
            (vec![true; samples.inputs.len()], true)
        } else if cfg.filter_centers {
            (samples.entropy_keep(cfg.entropy_lower, cfg.entropy_upper)?.0, true)
        } else {
            (vec![true; samples.inputs.len()], false)
        };
        let provenance = CenterProvenance {
            checkpoint: content_hash(&encoder.to_bytes()),
            filtered,
            lower: cfg.entropy_lower,
            upper: cfg.entropy_upper,
            sketches: keep.iter().filter(|k| **k).count(),
        };
        compute_centers(encoder, &samples.inputs, &keep, &corpus.categories, provenance, mode)
    };
    let mut centers = if needs_centers { Some(make_centers(encoder)?) } else { None };
    let first_bytes = centers.as_ref().map(CenterTable::to_bytes);

    if !cfg.skip_scl_stage {
        finetune_fused(encoder, &samples.inputs, Stage::FusedScl, cfg.weights, centers.as_ref(), cfg, state, log, mode)?;
        if cfg.recompute_centers {
            centers = Some(make_centers(encoder)?);
        }
    }
    let stage4_bytes = encoder.to_bytes();
    let out = alternating_full_train(encoder, centers.as_ref(), &samples.inputs, cfg, state, log, mode)?;
    let center_bytes = match (first_bytes, &centers) {
        (Some(a), Some(t)) if !cfg.recompute_centers => Some((a, t.to_bytes())),
        _ => None,
    };
    Ok(Finish {
        centers,
        center_bytes,
        stage4_bytes,
        codes: out.codes,
        recomputes: out.recomputes,
    })
}
