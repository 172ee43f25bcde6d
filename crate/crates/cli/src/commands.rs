use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clinnote::attribution::{
    deeplift, padding_attribution_stats, reference_embedding, AttributionMap, ReferenceMode, ReferenceSpec,
};
use clinnote::corpus::{self, synth_corpus, PatientDoc, SynthConfig};
use clinnote::eval::{self, mann_whitney_u, Alternative};
use clinnote::model::{train_fold, FoldModel, Predictor};
use clinnote::textpipe::{FoldTag, StopwordList, TokenSequence};
use clinnote::verify::{self, Fault, VerifyOptions};
use clinnote::viz::{self, HeatmapOptions};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{sha256_bytes, sha256_file, Provenance, RunConfig};
use crate::{AttributeArgs, Cli, CliError, CohortArgs, Command, CommonArgs, CorpusArgs, SynthArgs, TrainArgs, VerifyArgs};

type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn dispatch(cli: Cli) -> Result<()> {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_common(&mut cfg, &cli.common);
    if cli.common.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    match cli.command {
        Command::Synth(a) => synth(cfg, &a),
        Command::Cohort(a) => cohort(cfg, &a),
        Command::Train(a) => train(cfg, &a, cli.common.jobs),
        Command::Attribute(a) => attribute(cfg, &a, cli.common.jobs),
        Command::Verify(a) => verify(cfg, &a),
    }
}

fn apply_common(cfg: &mut RunConfig, c: &CommonArgs) {
    if let Some(d) = &c.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(s) = c.seed {
        cfg.model.seed = s;
    }
}

fn apply_corpus(cfg: &mut RunConfig, a: &CorpusArgs) {
    if let Some(p) = &a.corpus {
        cfg.corpus = Some(p.clone());
    }
    for (k, v) in &a.columns {
        cfg.columns.insert(k.clone(), v.clone());
    }
    if let Some(h) = a.min_stay_hours {
        cfg.min_stay_hours = h;
    }
    if let Some(r) = a.require_nursing {
        cfg.require_nursing = r;
    }
    if let Some(w) = a.window_hours {
        cfg.model.window_hours = w;
    }
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("json value serializes");
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable")
}

fn load_stopwords(path: Option<&Path>) -> Result<StopwordList> {
    match path {
        Some(p) => StopwordList::load(p).map_err(|e| CliError::Usage(e.to_string())),
        None => Ok(StopwordList::english()),
    }
}

fn corpus_path(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.corpus
        .clone()
        .ok_or_else(|| CliError::Usage("no corpus given (use --corpus or `corpus` in the config)".into()))
}

struct LoadedCorpus {
    sha256: String,
    store: corpus::NoteStore,
    cohort: corpus::Cohort,
    windowed: corpus::WindowedDocs,
}

fn load_corpus(cfg: &RunConfig) -> Result<LoadedCorpus> {
    let path = corpus_path(cfg)?;
    let columns = cfg.column_map()?;
    let sha256 = sha256_file(&path)?;
    let store = corpus::load_notes(&path, &columns)?;
    log::info!("read {} notes from {}", store.len(), path.display());
    if !store.warnings.is_empty() {
        log::warn!("{} rows skipped while reading the corpus", store.warnings.len());
    }
    let cohort = corpus::build_cohort(&store, cfg.min_stay_hours, cfg.require_nursing)?;
    let windowed = corpus::window_docs(&cohort, cfg.model.window_hours);
    log::info!(
        "cohort: {} patients, {} with nursing notes in the first {}h",
        cohort.patients.len(),
        windowed.docs.len(),
        cfg.model.window_hours
    );
    Ok(LoadedCorpus {
        sha256,
        store,
        cohort,
        windowed,
    })
}

fn synth(mut cfg: RunConfig, a: &SynthArgs) -> Result<()> {
    let defaults = SynthConfig::default();
    let sc = SynthConfig {
        n_patients: a.n,
        positive_rate: a.positive_rate,
        vocab_size: a.vocab_size.unwrap_or(defaults.vocab_size),
        mean_len_pos: a.mean_len_pos.unwrap_or(defaults.mean_len_pos),
        mean_len_neg: a.mean_len_neg.unwrap_or(defaults.mean_len_neg),
        marker_strength: a.marker_strength.unwrap_or(defaults.marker_strength),
        length_sigma: a.length_sigma.unwrap_or(defaults.length_sigma),
        stopword_rate: a.stopword_rate.unwrap_or(defaults.stopword_rate),
        marker_rate: a.marker_rate.unwrap_or(defaults.marker_rate),
        seed: cfg.model.seed,
        ..defaults
    };
    sc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let output = a.output.clone().unwrap_or_else(|| cfg.out_dir.join("notes.csv"));
    cfg.corpus = Some(output.clone());
    cfg.validate()?;

    let (store, report) = synth_corpus(&sc)?;
    let mut csv = Vec::new();
    store.write_csv(&mut csv)?;
    create_out_dir(&cfg.out_dir)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_out_dir(parent)?;
    }
    write_file(&output, &csv)?;
    let prov = Provenance::new("synth", &cfg, Some(sha256_bytes(&csv)));
    write_json(
        &cfg.out_dir.join("markers.json"),
        &json!({ "provenance": prov.json(), "markers": to_value(&report) }),
    )?;
    log::info!(
        "wrote {} notes ({} positive, {} negative) to {}",
        store.len(),
        report.positives,
        report.negatives,
        output.display()
    );
    Ok(())
}

fn length_stats(xs: &[f64]) -> Value {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let mean = if n > 0 { s.iter().sum::<f64>() / n as f64 } else { f64::NAN };
    json!({
        "n": n,
        "mean": if n > 0 { Some(mean) } else { None },
        "median": if n > 0 { Some(viz::quantile(&s, 0.5)) } else { None },
    })
}

/// Word counts of death and survival documents and a one-sided test that
/// death notes are longer.
fn note_length_test(docs: &[PatientDoc]) -> Value {
    let len = |outcome: u8| -> Vec<f64> {
        docs.iter()
            .filter(|d| d.outcome == outcome)
            .map(|d| d.word_count() as f64)
            .collect()
    };
    let (death, survival) = (len(1), len(0));
    let test = mann_whitney_u(&death, &survival, Alternative::Greater)
        .map(|r| to_value(&r))
        .unwrap_or(Value::Null);
    json!({
        "death": length_stats(&death),
        "survival": length_stats(&survival),
        "mann_whitney": test,
    })
}

fn cohort(mut cfg: RunConfig, a: &CohortArgs) -> Result<()> {
    apply_corpus(&mut cfg, &a.corpus);
    cfg.validate()?;
    let lc = load_corpus(&cfg)?;
    let prov = Provenance::new("cohort", &cfg, Some(lc.sha256.clone()));
    let categories: serde_json::Map<String, Value> = lc
        .store
        .category_counts()
        .into_iter()
        .map(|(c, n)| (c.label().to_owned(), json!(n)))
        .collect();
    let report = json!({
        "provenance": prov.json(),
        "rows_read": lc.store.rows_read,
        "rows_skipped": lc.store.warnings.len(),
        "notes": lc.store.len(),
        "categories": categories,
        "cohort": to_value(&lc.cohort.summary),
        "window_hours": lc.windowed.window_hours,
        "windowed_patients": lc.windowed.docs.len(),
        "dropped_empty_window": lc.windowed.dropped_empty,
        "note_length_words": note_length_test(&lc.windowed.docs),
    });
    create_out_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("cohort_summary.json"), &report)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} worker threads: {e}")))
}

fn train(mut cfg: RunConfig, a: &TrainArgs, jobs: usize) -> Result<()> {
    apply_corpus(&mut cfg, &a.corpus);
    if let Some(k) = a.folds {
        cfg.folds = k;
    }
    if let Some(s) = a.stratified {
        cfg.stratified = s;
    }
    if let Some(e) = a.epochs {
        cfg.model.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.model.batch_size = b;
    }
    if let Some(l) = a.max_len {
        cfg.model.max_len = l;
    }
    if let Some(lr) = a.learning_rate {
        cfg.model.adam.lr = lr;
    }
    if let Some(w) = a.class_weight {
        cfg.model.class_weight_pos = Some(w);
    }
    if let Some(p) = &a.stopwords {
        cfg.stopwords = Some(p.clone());
    }
    if let Some(m) = a.ci_method {
        cfg.ci_method = m;
    }
    cfg.validate()?;
    let stopwords = load_stopwords(cfg.stopwords.as_deref())?;
    let lc = load_corpus(&cfg)?;
    let docs = &lc.windowed.docs;
    let labels: Vec<u8> = docs.iter().map(|d| d.outcome).collect();
    let folds = eval::kfold_split(&labels, cfg.folds, cfg.model.seed, cfg.stratified)?;
    let prov = Provenance::new("train", &cfg, Some(lc.sha256.clone())).json();

    let started = Instant::now();
    let pool = thread_pool(jobs)?;
    let trained: Vec<clinnote::Result<FoldModel>> = pool.install(|| {
        (0..cfg.folds)
            .into_par_iter()
            .map(|fold| {
                let (tr, va) = folds.split(fold);
                let pick = |ix: &[usize]| ix.iter().map(|&i| docs[i].clone()).collect::<Vec<_>>();
                let model_cfg = clinnote::model::ModelConfig {
                    seed: cfg.model.seed.wrapping_add(fold as u64),
                    ..cfg.model.clone()
                };
                let tag = FoldTag {
                    fold,
                    k: cfg.folds,
                    seed: cfg.model.seed,
                    window_hours: cfg.model.window_hours,
                };
                log::info!("fold {}/{}: {} train, {} validation", fold + 1, cfg.folds, tr.len(), va.len());
                train_fold(&pick(&tr), &pick(&va), &model_cfg, tag, &stopwords)
            })
            .collect()
    });
    let trained = trained.into_iter().collect::<clinnote::Result<Vec<_>>>()?;
    log::info!("trained {} folds in {:.1}s", trained.len(), started.elapsed().as_secs_f64());

    create_out_dir(&cfg.out_dir)?;
    let mut fold_entries = Vec::new();
    let mut fold_aucs = Vec::new();
    let mut curves = Vec::new();
    let (mut all_scores, mut all_labels) = (Vec::new(), Vec::new());
    for (i, mut fm) in trained.into_iter().enumerate() {
        let vocab_name = format!("fold_{i}.vocab.json");
        let ckpt_name = format!("fold_{i}.ckpt.json");
        let vocab_bytes = fm.vocabulary.to_json();
        write_file(&cfg.out_dir.join(&vocab_name), &vocab_bytes)?;
        fm.checkpoint.vocabulary.path = vocab_name.clone();
        fm.checkpoint.provenance = Some(prov.clone());
        let ckpt_bytes = fm.checkpoint.to_json();
        write_file(&cfg.out_dir.join(&ckpt_name), &ckpt_bytes)?;

        let auc = eval::roc_auc(&fm.val_scores, &fm.val_labels)?;
        let curve = eval::roc_curve(&fm.val_scores, &fm.val_labels)?;
        let op = eval::operating_point(&fm.val_scores, &fm.val_labels, 0.5)?;
        log::info!("fold {}/{}: AUC {auc:.4}", i + 1, cfg.folds);
        fold_aucs.push(auc);
        fold_entries.push(json!({
            "fold": i,
            "n_train": lc.windowed.docs.len() - fm.val_labels.len(),
            "n_val": fm.val_labels.len(),
            "val_positives": fm.val_labels.iter().filter(|&&y| y == 1).count(),
            "auc": auc,
            "operating_point": to_value(&op),
            "history": to_value(&fm.history),
            "checkpoint": ckpt_name,
            "checkpoint_sha256": sha256_bytes(&ckpt_bytes),
            "vocabulary": vocab_name,
            "vocabulary_sha256": sha256_bytes(&vocab_bytes),
            "vocabulary_words": fm.vocabulary.len(),
            "predictions": fm.val_patient_ids.iter().zip(&fm.val_labels).zip(&fm.val_scores)
                .map(|((id, y), p)| json!({ "patient_id": id, "outcome": y, "score": p }))
                .collect::<Vec<_>>(),
            "roc": curve.points.iter().map(|&(x, y)| [x, y]).collect::<Vec<_>>(),
        }));
        curves.push((format!("fold {} (AUC {auc:.3})", i + 1), curve));
        all_scores.extend(&fm.val_scores);
        all_labels.extend(&fm.val_labels);
    }
    let summary = eval::cv_summary(&fold_aucs, cfg.ci_method)?;
    let pooled_auc = eval::roc_auc(&all_scores, &all_labels)?;
    log::info!(
        "mean AUC {:.4} (std {:.4}, CI {:.4}..{:.4})",
        summary.mean,
        summary.std,
        summary.ci_low,
        summary.ci_high
    );
    let metrics = json!({
        "provenance": prov,
        "cohort": to_value(&lc.cohort.summary),
        "window_hours": cfg.model.window_hours,
        "patients": docs.len(),
        "dropped_empty_window": lc.windowed.dropped_empty,
        "fold_sizes": folds.fold_sizes(),
        "folds": fold_entries,
        "summary": to_value(&summary),
        "pooled_auc": pooled_auc,
        "note_length_words": note_length_test(docs),
    });
    write_json(&cfg.out_dir.join("metrics.json"), &metrics)?;
    write_file(&cfg.out_dir.join("roc.svg"), viz::roc_svg(&curves, Some(&prov)).as_bytes())
}

/// File-name-safe form of a patient id.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn attribute(mut cfg: RunConfig, a: &AttributeArgs, jobs: usize) -> Result<()> {
    apply_corpus(&mut cfg, &a.corpus);
    if let Some(p) = &a.stopwords {
        cfg.stopwords = Some(p.clone());
    }
    if let Some(t) = a.target {
        cfg.attribution_target = t;
    }
    if let Some(m) = a.reference_mode {
        cfg.reference_mode = m;
    }
    for (name, q) in [("--neutral-quantile", a.neutral_quantile), ("--clamp-quantile", a.clamp_quantile)] {
        if !(0.0..=1.0).contains(&q) {
            return Err(CliError::Usage(format!("{name} must lie in [0, 1]")));
        }
    }
    let stopwords = load_stopwords(cfg.stopwords.as_deref())?;
    let predictor = Predictor::load_with(&a.checkpoint, stopwords)?;
    let ckpt = predictor.checkpoint();
    // The window and architecture come from the checkpoint.
    let window_override = a.corpus.window_hours;
    cfg.model = ckpt.config.clone();
    if let Some(w) = window_override {
        cfg.model.window_hours = w;
    }
    cfg.validate()?;
    let ckpt_sha = sha256_file(&a.checkpoint)?;

    let (docs, corpus_sha) = match (&a.note_file, &a.patients) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "note".into());
            let doc = PatientDoc {
                patient_id: id,
                text: text.clone(),
                outcome: 0,
                n_notes: 1,
            };
            (vec![doc], sha256_bytes(text.as_bytes()))
        }
        (None, Some(sel)) => {
            let lc = load_corpus(&cfg)?;
            let mut docs = lc.windowed.docs;
            docs.sort_by(|x, y| x.patient_id.cmp(&y.patient_id));
            if sel.trim() != "all" {
                let wanted: BTreeSet<&str> = sel.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
                let found: BTreeSet<&str> = docs.iter().map(|d| d.patient_id.as_str()).collect();
                if let Some(missing) = wanted.iter().find(|w| !found.contains(*w)) {
                    return Err(CliError::Data(format!(
                        "patient `{missing}` has no nursing note within {}h in the cohort",
                        cfg.model.window_hours
                    )));
                }
                docs.retain(|d| wanted.contains(d.patient_id.as_str()));
            }
            (docs, lc.sha256)
        }
        (None, None) => return Err(CliError::Usage("give --patients or --note-file".into())),
    };
    let docs: Vec<PatientDoc> = match a.limit {
        Some(n) => docs.into_iter().take(n).collect(),
        None => docs,
    };
    if docs.is_empty() {
        return Err(CliError::Data("no notes to attribute".into()));
    }

    let model = predictor.model().cast::<f64>();
    let reference = match cfg.reference_mode {
        ReferenceMode::FrequencyWeightedMean => ReferenceSpec {
            mode: ReferenceMode::FrequencyWeightedMean,
            vector: ckpt.training.reference.iter().map(|&x| f64::from(x)).collect(),
        },
        ReferenceMode::UnweightedMean => {
            reference_embedding(&model.params, std::iter::empty::<TokenSequence>(), ReferenceMode::UnweightedMean)?
        }
    };
    let vocab = predictor.pipeline().vocabulary();
    let target = cfg.attribution_target;
    let pool = thread_pool(jobs)?;
    let maps: Vec<(AttributionMap, f64)> = pool.install(|| {
        docs.par_iter()
            .map(|d| {
                let seq = predictor.sequence(&d.patient_id, &d.text);
                let map = deeplift(&model, &seq, vocab, &reference, target)?;
                let p = predictor.predict(&d.text)?;
                Ok((map, p))
            })
            .collect::<clinnote::Result<Vec<_>>>()
    })?;

    let prov = Provenance::new("attribute", &cfg, Some(corpus_sha)).json();
    let heat = HeatmapOptions {
        smoothed: a.smoothed,
        neutral_quantile: a.neutral_quantile,
        clamp_quantile: a.clamp_quantile,
        title: None,
        provenance: Some(prov.clone()),
    };
    create_out_dir(&cfg.out_dir)?;
    for ((map, prob), doc) in maps.iter().zip(&docs) {
        let stem = file_stem(&map.patient_id);
        let opts = HeatmapOptions {
            title: Some(format!("Patient {} (predicted risk {:.3})", map.patient_id, prob)),
            ..heat.clone()
        };
        write_file(
            &cfg.out_dir.join(format!("{stem}.heatmap.html")),
            viz::heatmap_html(map, &opts).as_bytes(),
        )?;
        write_json(
            &cfg.out_dir.join(format!("{stem}.attrib.json")),
            &json!({
                "provenance": prov,
                "checkpoint": a.checkpoint,
                "checkpoint_sha256": ckpt_sha,
                "reference": to_value(&reference),
                "outcome": if a.note_file.is_some() { None } else { Some(doc.outcome) },
                "predicted_probability": prob,
                "completeness_gap": map.completeness_gap(),
                "attribution": to_value(map),
            }),
        )?;
    }
    let only_maps: Vec<AttributionMap> = maps.into_iter().map(|(m, _)| m).collect();
    let words = viz::wordcloud_data(&only_maps);
    write_json(
        &cfg.out_dir.join("wordcloud.json"),
        &json!({ "provenance": prov, "words": to_value(&words) }),
    )?;
    write_file(
        &cfg.out_dir.join("wordcloud.html"),
        viz::wordcloud_html(&words, a.top, Some(&prov)).as_bytes(),
    )?;
    match padding_attribution_stats(&only_maps, a.bins) {
        Ok(stats) => {
            log::info!(
                "{} padding positions, {:.1}% negative",
                stats.n_values,
                100.0 * stats.share_negative
            );
            write_json(
                &cfg.out_dir.join("padding_stats.json"),
                &json!({ "provenance": prov, "padding": to_value(&stats) }),
            )?;
            write_file(
                &cfg.out_dir.join("padding_hist.svg"),
                viz::histogram_svg(&stats, Some(&prov)).as_bytes(),
            )?;
        }
        Err(e) => log::warn!("no padding histogram: {e}"),
    }
    log::info!("attributed {} notes into {}", only_maps.len(), cfg.out_dir.display());
    Ok(())
}

fn verify(cfg: RunConfig, a: &VerifyArgs) -> Result<()> {
    let opts = VerifyOptions {
        seeds: a.seeds.0.clone(),
        gradient_instances: a.gradient_instances,
        completeness_inputs: a.completeness_inputs,
        fault: a.inject_fault.as_ref().map(|_| Fault::FlipGradientSign),
    };
    let report = verify::run_all(&opts);
    for c in &report.checks {
        log::info!(
            "{} {}: measured {:.3e}, tolerance {:.1e} over {} instances",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance,
            c.instances
        );
    }
    create_out_dir(&cfg.out_dir)?;
    let prov = Provenance::new("verify", &cfg, None);
    write_json(
        &cfg.out_dir.join("verify_report.json"),
        &json!({ "provenance": prov.json(), "report": to_value(&report) }),
    )?;
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::Verification(format!("failed checks: {}", failed.join(", "))))
    }
}
