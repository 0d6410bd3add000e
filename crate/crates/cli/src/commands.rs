use std::io::IsTerminal;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use sgid_core::backends::BackendRegistry;
use sgid_core::baselines::{run_baseline, BaselineRun};
use sgid_core::captioning::{caption_record, CaptionCache, CaptionCacheEntry};
use sgid_core::config::PipelineConfig;
use sgid_core::dataset::{import_cifar_binary, read_manifest, scan_dataset, write_manifest, CifarFlavor, DatasetManifest};
use sgid_core::evaluation::{per_label_similarity, render_grid, GridColumn};
use sgid_core::filters::{apply_filter_chain, apply_report, run_filter, FilterReport};
use sgid_core::generation::{run_pipeline, AugmentationManifest, CAPTION_CACHE_FILE, MANIFEST_FILE};
use sgid_core::seed::record_seed;
use sgid_core::synthetic::write_synthetic_dataset;
use sgid_core::trainer::{compare_configs, train_and_evaluate, CompareEntry, FeatureCache};

use crate::{Cli, CliError, Command, GlobalArgs, Outcome};

const DATASET_FILE: &str = "dataset.json";
const FEATURE_CACHE_FILE: &str = "features.jsonl";

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

/// Load the config (or defaults) and apply flag overrides.
pub fn load_config(g: &GlobalArgs) -> Result<PipelineConfig, CliError> {
    let mut c = match &g.config {
        Some(p) => PipelineConfig::load(p).map_err(invalid)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        c.global_seed = s;
    }
    if let Some(w) = g.workers {
        c.workers = w;
    }
    if let Some(d) = &g.out_dir {
        c.out_dir = d.clone();
    }
    if g.no_cache {
        c.no_cache = true;
    }
    if let Some(m) = g.prompt_mode {
        c.prompt_mode = m;
    }
    if let Some(n) = g.noise_rate {
        c.noise_rate = n;
    }
    if let Some(k) = g.k_augment {
        c.k_augment = k;
    }
    if let Some(id) = &g.backend_caption {
        c.backends.caption = id.clone();
    }
    if let Some(id) = &g.backend_score {
        c.backends.score = id.clone();
    }
    if let Some(id) = &g.backend_generate {
        c.backends.generate = id.clone();
    }
    if let Some(d) = &g.dataset {
        c.dataset_manifest = Some(d.clone());
    }
    c.validate().map_err(invalid)?;
    Ok(c)
}

fn open_dataset(path: &Path) -> Result<DatasetManifest, CliError> {
    if path.is_dir() {
        Ok(scan_dataset(path).map_err(invalid)?.manifest)
    } else {
        read_manifest(path).map_err(invalid)
    }
}

/// Dataset from `--dataset` / the config, else from `fallback_root`.
fn dataset(config: &PipelineConfig, fallback_root: Option<&str>) -> Result<DatasetManifest, CliError> {
    match (&config.dataset_manifest, fallback_root) {
        (Some(p), _) => open_dataset(p),
        (None, Some(root)) => open_dataset(Path::new(root)),
        (None, None) => Err(invalid("no dataset: pass --dataset or set dataset_manifest")),
    }
}

fn registry(config: &PipelineConfig) -> Result<BackendRegistry, CliError> {
    config.registry().map_err(invalid)
}

fn read_aug(path: &Path) -> Result<AugmentationManifest, CliError> {
    AugmentationManifest::read(path).map_err(invalid)
}

fn dry_run(extra: Value) -> Outcome {
    let mut v = json!({ "dry_run": true });
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    Outcome::Ok(v)
}

fn progress_printer() -> Option<impl Fn(usize, usize) + Sync> {
    std::io::stderr().is_terminal().then_some(|done: usize, total: usize| {
        eprint!("\r{done}/{total} originals");
        if done == total {
            eprintln!();
        }
    })
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let g = &cli.global;
    let config = load_config(g)?;
    match &cli.command {
        Command::Scan { root, output } => {
            let report = scan_dataset(root).map_err(invalid)?;
            let out = output.clone().unwrap_or_else(|| config.out_dir.join(DATASET_FILE));
            let summary = json!({
                "records": report.manifest.records.len(),
                "labels": report.manifest.label_set.len(),
                "unreadable": report.unreadable.len(),
                "manifest": out,
            });
            if g.dry_run {
                return Ok(dry_run(summary));
            }
            write_manifest(&report.manifest, &out).map_err(failed)?;
            Ok(Outcome::Ok(summary))
        }
        Command::MakeSynthetic {
            root,
            per_label,
            size,
            output,
        } => {
            let out = output.clone().unwrap_or_else(|| config.out_dir.join(DATASET_FILE));
            if g.dry_run {
                return Ok(dry_run(json!({ "root": root, "manifest": out })));
            }
            let m = write_synthetic_dataset(root, *per_label, *size, config.global_seed).map_err(failed)?;
            write_manifest(&m, &out).map_err(failed)?;
            Ok(Outcome::Ok(json!({ "records": m.records.len(), "manifest": out })))
        }
        Command::ImportCifar {
            root,
            archives,
            labels,
            cifar100,
            limit_per_label,
        } => {
            let names: Vec<String> = std::fs::read_to_string(labels)
                .map_err(|e| invalid(format!("{}: {e}", labels.display())))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            if g.dry_run {
                return Ok(dry_run(json!({ "labels": names.len(), "archives": archives.len() })));
            }
            let flavor = if *cifar100 { CifarFlavor::Cifar100 } else { CifarFlavor::Cifar10 };
            let n = import_cifar_binary(archives, &names, flavor, root, *limit_per_label).map_err(failed)?;
            Ok(Outcome::Ok(json!({ "written": n, "root": root })))
        }
        Command::Caption => caption(g, &config),
        Command::Augment => augment(g, &config),
        Command::Baseline { method } => {
            let mut config = config;
            if let Some(m) = method {
                config.baseline.method = *m;
            }
            let ds = dataset(&config, None)?;
            config.baseline.validate().map_err(invalid)?;
            let manifest_path = config.out_dir.join(MANIFEST_FILE);
            if g.dry_run {
                return Ok(dry_run(json!({ "records": ds.records.len(), "manifest": manifest_path })));
            }
            let run = BaselineRun {
                config: &config.baseline,
                global_seed: config.global_seed,
                k_augment: config.k_augment,
                train_only: config.train_only,
                config_hash: config.baseline_hash(),
            };
            let m = run_baseline(&ds, &run, &config.out_dir).map_err(failed)?;
            m.write(&manifest_path).map_err(failed)?;
            Ok(manifest_outcome(&m, &manifest_path))
        }
        Command::Filter { kind, manifest, output } => {
            let m = read_aug(manifest)?;
            let ds = dataset(&config, Some(&m.header.dataset_root))?;
            let reg = registry(&config)?;
            let scorer = reg.scorer(&config.backends.score).map_err(invalid)?;
            let base = AugmentationManifest::base_dir(manifest);
            let out = output
                .clone()
                .unwrap_or_else(|| base.join(format!("manifest.{}.jsonl", kind.as_str())));
            let report_path = out.with_file_name(format!("filter_{}.json", kind.as_str()));
            if out == *manifest {
                return Err(invalid("filter output would overwrite the input manifest"));
            }
            if g.dry_run {
                return Ok(dry_run(json!({ "manifest": out, "report": report_path })));
            }
            let report = run_filter(*kind, &m, &base, &ds, scorer.as_ref()).map_err(failed)?;
            let filtered = apply_report(&m, &report).map_err(failed)?;
            filtered.write(&out).map_err(failed)?;
            report.write(&report_path).map_err(failed)?;
            let summary = json!({
                "manifest": out,
                "report": report_path,
                "kept": report.kept(),
                "dropped": report.dropped(),
                "scoring_failures": report.failures.len(),
            });
            Ok(if report.failures.is_empty() {
                Outcome::Ok(summary)
            } else {
                Outcome::Partial(summary)
            })
        }
        Command::EvalSimilarity { manifest, k } => {
            let m = read_aug(manifest)?;
            let ds = dataset(&config, Some(&m.header.dataset_root))?;
            let reg = registry(&config)?;
            let scorer = reg.scorer(&config.backends.score).map_err(invalid)?;
            let k = k.unwrap_or(m.header.k_augment);
            let stem = format!("similarity_{}", m.header.method);
            let (json_path, csv_path) = (
                config.out_dir.join(format!("{stem}.json")),
                config.out_dir.join(format!("{stem}.csv")),
            );
            if g.dry_run {
                return Ok(dry_run(json!({ "report": json_path })));
            }
            let base = AugmentationManifest::base_dir(manifest);
            let r = per_label_similarity(&m, &base, &ds, scorer.as_ref(), k).map_err(failed)?;
            r.write_json(&json_path).map_err(failed)?;
            r.write_csv(&csv_path).map_err(failed)?;
            Ok(Outcome::Ok(json!({
                "overall": r.overall,
                "records": r.record_count,
                "report": json_path,
                "csv": csv_path,
            })))
        }
        Command::Grid { columns, output } => {
            let parsed = columns
                .iter()
                .map(|c| {
                    let (name, path) = c.split_once('=').ok_or_else(|| invalid(format!("expected NAME=MANIFEST, got {c:?}")))?;
                    Ok((name.to_string(), PathBuf::from(path), read_aug(Path::new(path))?))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let ds = dataset(&config, parsed.first().map(|(_, _, m)| m.header.dataset_root.as_str()))?;
            let out = output.clone().unwrap_or_else(|| config.out_dir.join("grid.png"));
            if g.dry_run {
                return Ok(dry_run(json!({ "grid": out })));
            }
            let bases: Vec<PathBuf> = parsed.iter().map(|(_, p, _)| AugmentationManifest::base_dir(p)).collect();
            let cols: Vec<GridColumn<'_>> = parsed
                .iter()
                .zip(&bases)
                .map(|((name, _, m), base)| GridColumn {
                    name,
                    manifest: m,
                    base_dir: base,
                })
                .collect();
            let layout = render_grid(&ds, &cols, &out).map_err(failed)?;
            Ok(Outcome::Ok(json!({ "grid": out, "layout": layout })))
        }
        Command::Train { manifests } => {
            let loaded = manifests
                .iter()
                .map(|p| Ok((read_aug(p)?, AugmentationManifest::base_dir(p))))
                .collect::<Result<Vec<_>, CliError>>()?;
            let ds = dataset(&config, loaded.first().map(|(m, _)| m.header.dataset_root.as_str()))?;
            let reg = registry(&config)?;
            let scorer = reg.scorer(&config.trainer.feature_source).map_err(invalid)?;
            if g.dry_run {
                return Ok(dry_run(json!({ "manifests": manifests.len() })));
            }
            let cache_path = config.out_dir.join(FEATURE_CACHE_FILE);
            let mut cache = feature_cache(&config, &cache_path)?;
            let refs: Vec<(&AugmentationManifest, &Path)> = loaded.iter().map(|(m, p)| (m, p.as_path())).collect();
            let result = train_and_evaluate(&ds, &refs, scorer.as_ref(), &config.trainer, &mut cache, config.trainer.seed)
                .map_err(failed)?;
            cache.save(&cache_path).map_err(failed)?;
            let v = serde_json::to_value(&result).map_err(failed)?;
            Ok(if result.feature_failures > 0 {
                Outcome::Partial(v)
            } else {
                Outcome::Ok(v)
            })
        }
        Command::Compare { entries } => {
            let mut parsed = Vec::with_capacity(entries.len());
            for e in entries {
                let (name, list) = e
                    .split_once('=')
                    .ok_or_else(|| invalid(format!("expected NAME=MANIFEST[,MANIFEST...], got {e:?}")))?;
                let manifests = list
                    .split(',')
                    .filter(|p| !p.is_empty())
                    .map(|p| Ok((read_aug(Path::new(p))?, AugmentationManifest::base_dir(Path::new(p)))))
                    .collect::<Result<Vec<_>, CliError>>()?;
                parsed.push(CompareEntry {
                    name: name.to_string(),
                    manifests,
                });
            }
            let root = parsed
                .iter()
                .flat_map(|e| e.manifests.first())
                .map(|(m, _)| m.header.dataset_root.clone())
                .next();
            let ds = dataset(&config, root.as_deref())?;
            let reg = registry(&config)?;
            let scorer = reg.scorer(&config.trainer.feature_source).map_err(invalid)?;
            let table_path = config.out_dir.join("compare.json");
            if g.dry_run {
                return Ok(dry_run(json!({ "entries": parsed.len(), "table": table_path })));
            }
            let cache_path = config.out_dir.join(FEATURE_CACHE_FILE);
            let mut cache = feature_cache(&config, &cache_path)?;
            let table = compare_configs(&ds, &parsed, scorer.as_ref(), &config.trainer, &mut cache).map_err(failed)?;
            cache.save(&cache_path).map_err(failed)?;
            let mut text = serde_json::to_string_pretty(&table).map_err(failed)?;
            text.push('\n');
            std::fs::create_dir_all(&config.out_dir).map_err(failed)?;
            std::fs::write(&table_path, text).map_err(failed)?;
            eprint!("{}", table.to_text());
            let rows: Vec<Value> = table
                .rows
                .iter()
                .map(|r| json!({ "name": r.name, "mean_top1": r.mean_top1, "sd_top1": r.sd_top1 }))
                .collect();
            Ok(Outcome::Ok(json!({ "table": table_path, "rows": rows })))
        }
    }
}

fn feature_cache(config: &PipelineConfig, path: &Path) -> Result<FeatureCache, CliError> {
    if config.no_cache {
        Ok(FeatureCache::default())
    } else {
        FeatureCache::load(path).map_err(failed)
    }
}

fn manifest_outcome(m: &AugmentationManifest, path: &Path) -> Outcome {
    let c = m.counts();
    let summary = json!({
        "manifest": path,
        "config_hash": m.header.config_hash,
        "generated": c.total() - c.failed,
        "failed": c.failed,
    });
    if c.failed > 0 {
        Outcome::Partial(summary)
    } else {
        Outcome::Ok(summary)
    }
}

fn caption(g: &GlobalArgs, config: &PipelineConfig) -> Result<Outcome, CliError> {
    let ds = dataset(config, None)?;
    let reg = registry(config)?;
    config.check_backends(&reg).map_err(invalid)?;
    let cache_path = config.out_dir.join(CAPTION_CACHE_FILE);
    if g.dry_run {
        return Ok(dry_run(json!({ "records": ds.records.len(), "captions": cache_path })));
    }
    let captioner = reg.captioner(&config.backends.caption).map_err(invalid)?;
    let scorer = reg.scorer(&config.backends.score).map_err(invalid)?;
    let caption_hash = config.caption_hash();
    let mut cache = if config.no_cache {
        CaptionCache::default()
    } else {
        CaptionCache::load(&cache_path).map_err(failed)?
    };
    let records: Vec<_> = ds.records.iter().filter(|r| !config.train_only || r.is_train()).collect();
    let (mut reused, mut failures) = (0usize, 0usize);
    for r in &records {
        let seed = record_seed(config.global_seed, &r.record_id);
        if cache.lookup(&r.record_id, seed, &caption_hash).is_some() {
            reused += 1;
            continue;
        }
        let result = ds
            .load_image(r)
            .map_err(|e| e.to_string())
            .and_then(|img| {
                caption_record(
                    &r.record_id,
                    &img,
                    captioner.as_ref(),
                    scorer.as_ref(),
                    &config.sampling,
                    config.selection_strategy,
                    config.random_pool,
                    seed,
                )
                .map_err(|e| e.to_string())
            });
        match result {
            Ok(set) => cache.insert(CaptionCacheEntry::from_set(&set, &config.sampling, &caption_hash)),
            Err(e) => {
                log::warn!("record {}: {e}", r.record_id);
                failures += 1;
            }
        }
    }
    let order: Vec<String> = records.iter().map(|r| r.record_id.clone()).collect();
    std::fs::create_dir_all(&config.out_dir).map_err(failed)?;
    cache.save(&cache_path, &order).map_err(failed)?;
    let summary = json!({
        "captions": cache_path,
        "records": records.len(),
        "from_cache": reused,
        "failed": failures,
    });
    Ok(if failures > 0 {
        Outcome::Partial(summary)
    } else {
        Outcome::Ok(summary)
    })
}

fn augment(g: &GlobalArgs, config: &PipelineConfig) -> Result<Outcome, CliError> {
    let ds = dataset(config, None)?;
    ds.validate().map_err(invalid)?;
    let reg = registry(config)?;
    config.check_backends(&reg).map_err(invalid)?;
    let manifest_path = config.out_dir.join(MANIFEST_FILE);
    if g.dry_run {
        return Ok(dry_run(json!({
            "records": ds.records.len(),
            "manifest": manifest_path,
            "config_hash": config.config_hash(),
        })));
    }
    let progress = progress_printer();
    let run = run_pipeline(
        &ds,
        config,
        &reg,
        progress.as_ref().map(|p| p as &(dyn Fn(usize, usize) + Sync)),
    )
    .map_err(failed)?;
    let outcome = manifest_outcome(&run.manifest, &run.manifest_path);
    if config.filters.is_empty() {
        return Ok(outcome);
    }
    let scorer = reg.scorer(&config.backends.score).map_err(invalid)?;
    let (filtered, reports) = apply_filter_chain(&run.manifest, &config.out_dir, &ds, scorer.as_ref(), &config.filters)
        .map_err(failed)?;
    let filtered_path = config.out_dir.join("manifest.filtered.jsonl");
    filtered.write(&filtered_path).map_err(failed)?;
    for r in &reports {
        r.write(&config.out_dir.join(format!("filter_{}.json", r.filter_kind.as_str())))
            .map_err(failed)?;
    }
    let scoring_failures: usize = reports.iter().map(|r: &FilterReport| r.failures.len()).sum();
    let (mut v, partial) = match outcome {
        Outcome::Ok(v) => (v, false),
        Outcome::Partial(v) => (v, true),
    };
    if let Value::Object(m) = &mut v {
        m.insert("filtered_manifest".into(), json!(filtered_path));
        m.insert("kept".into(), json!(filtered.counts().kept));
    }
    Ok(if partial || scoring_failures > 0 {
        Outcome::Partial(v)
    } else {
        Outcome::Ok(v)
    })
}
