use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use apmae::classify::{cross_validate, explain_folds, select_heads, CvReport, FeatureTable, SelectionMode, ShapSummary};
use apmae::cluster::{cluster_heads, cluster_stats, load_models, read_assignments, save_models, write_assignments, HeadSample};
use apmae::intervene::{build_pools, count_schedule, rows_from_csv, rows_to_csv, run_schedule, summarize, summary_csv};
use apmae::io::{read_jsonl, read_to_string, write_atomic, write_jsonl};
use apmae::lm::{harvest_to_store, load_lm, save_lm, split_by_file, train_lm, HarvestRecord, HeadKey, LmParams};
use apmae::mae::{self, cross_evaluate, embed_all, evaluate, reconstruct, MaeParams};
use apmae::miner::{gen_corpus, gen_noise_instance, mine_corpus, read_instances, write_instances, TaskInstance, Vocab};
use apmae::pattern::read_store;
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::plot;
use crate::{Command, ConfigArg, Split};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] apmae::Error),
}

type Result<T> = std::result::Result<T, CliError>;

/// Caps the worker pool when `APMAE_THREADS` is set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("APMAE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("APMAE_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn load_config(arg: &ConfigArg) -> Result<PipelineConfig> {
    let cfg = match &arg.config {
        Some(path) => PipelineConfig::parse(&read_to_string(path)?)?,
        None => PipelineConfig::default(),
    };
    eprintln!("# resolved configuration\n{}", cfg.render());
    Ok(cfg)
}

fn select_split(cfg: &PipelineConfig, instances: Vec<TaskInstance>, split: Split) -> Vec<TaskInstance> {
    match split {
        Split::All => instances,
        Split::Train | Split::Heldout => {
            let (train, held) = split_by_file(&instances, cfg.split.holdout, cfg.split.seed);
            if split == Split::Train {
                train
            } else {
                held
            }
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(apmae::Error::from)?;
    bytes.push(b'\n');
    Ok(write_atomic(path, &bytes)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Core(apmae::Error::format(0, format!("{}: {e}", path.display()))))
}

fn corpus_files(dir: &Path) -> Result<Vec<String>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| apmae::Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "java"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no .java files in {}", dir.display())));
    }
    paths.iter().map(|p| Ok(read_to_string(p)?)).collect()
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenCorpus { cfg, out } => {
            let cfg = load_config(&cfg)?;
            let files = gen_corpus(cfg.corpus.seed, cfg.corpus.files);
            fs::create_dir_all(&out).map_err(|e| apmae::Error::io(&out, e))?;
            for (i, text) in files.iter().enumerate() {
                write_atomic(out.join(format!("{i:05}.java")), text.as_bytes())?;
            }
            eprintln!("wrote {} files to {}", files.len(), out.display());
        }
        Command::Mine { cfg, corpus, out } => {
            let cfg = load_config(&cfg)?;
            let files = corpus_files(&corpus)?;
            let vocab = Vocab::default();
            let mut report = mine_corpus(&files, &cfg.mine.tasks, cfg.mine.context_len, &vocab, cfg.mine.seed)?;
            for i in 0..cfg.mine.noise {
                let seed = cfg.mine.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                report
                    .instances
                    .push(gen_noise_instance(&vocab, cfg.mine.context_len, seed));
            }
            write_instances(&out, &report.instances)?;
            eprintln!("mined {} instances; skipped {:?}", report.instances.len(), report.skipped);
        }
        Command::TrainLm { cfg, tasks, out, metrics } => {
            let cfg = load_config(&cfg)?;
            let all = read_instances(&tasks)?;
            let (train, held) = split_by_file(&all, cfg.split.holdout, cfg.split.seed);
            let mut params = LmParams::<f32>::init(&cfg.lm)?;
            let m = train_lm(&mut params, &train, &held, &Vocab::default())?;
            save_lm(&out, &params)?;
            for (task, acc) in &m.heldout {
                eprintln!("{task}: {:.3} of {}", acc.rate(), acc.total);
            }
            if let Some(path) = metrics {
                write_json(&path, &m)?;
            }
        }
        Command::Harvest {
            cfg,
            lm,
            tasks,
            split,
            out,
            records,
        } => {
            let cfg = load_config(&cfg)?;
            let params = load_lm(&lm)?;
            let wanted: BTreeSet<_> = cfg.harvest.tasks.iter().copied().collect();
            let instances: Vec<TaskInstance> = select_split(&cfg, read_instances(&tasks)?, split)
                .into_iter()
                .filter(|i| wanted.contains(&i.task_id))
                .collect();
            let recs = harvest_to_store(&params, &instances, &cfg.harvest.options, &out)?;
            write_jsonl(&records, &recs)?;
            let correct = recs.iter().filter(|r| r.correct == Some(true)).count();
            eprintln!("harvested {} instances ({correct} correct)", recs.len());
        }
        Command::TrainMae { cfg, patterns, out, loss } => {
            let cfg = load_config(&cfg)?;
            let data = read_store(&patterns)?;
            let mut params = MaeParams::<f32>::init(&cfg.mae, cfg.mae.seed)?;
            let curve = mae::train(&mut params, &data)?;
            mae::save_params(&out, &params)?;
            if let Some(path) = loss {
                mae::write_loss_csv(&curve, &path)?;
            }
            if let Some(last) = curve.last() {
                eprintln!("final batch loss {:.6}", last.loss);
            }
        }
        Command::EvalMae {
            mae: ckpt,
            patterns,
            out,
            recon,
            index,
        } => {
            let params = mae::load_params(&ckpt)?;
            let data = read_store(&patterns)?;
            let report = evaluate(&params, &data)?;
            println!("{}", report.milli());
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            if let Some(path) = recon {
                let p = data
                    .get(index)
                    .ok_or_else(|| CliError::Usage(format!("index {index} outside {} patterns", data.len())))?;
                let r = reconstruct(&params, p, params.config.eval_seed ^ index as u64)?;
                let doc = serde_json::json!({
                    "n": r.n,
                    "original": r.original,
                    "hidden": r.hidden,
                    "composite": r.composite,
                    "loss": r.loss,
                });
                write_json(&path, &doc)?;
            }
        }
        Command::CrossEval { models, data, out } => {
            let mut m = BTreeMap::new();
            for (id, path) in models {
                m.insert(id, mae::load_params(&path)?);
            }
            let mut d = BTreeMap::new();
            for (id, path) in data {
                d.insert(id, read_store(&path)?);
            }
            let table = cross_evaluate(&m, &d)?;
            print!("{}", table.render());
            write_atomic(&out, table.to_csv().as_bytes())?;
        }
        Command::Embed { mae: ckpt, patterns, out } => {
            let params = mae::load_params(&ckpt)?;
            let data = read_store(&patterns)?;
            let embeddings = embed_all(&params, &data)?;
            let samples: Vec<HeadSample> = data
                .iter()
                .zip(embeddings)
                .map(|(p, embedding)| HeadSample {
                    head: HeadKey::new(p.layer as usize, p.head as usize),
                    sample_id: p.meta.sample_id,
                    embedding,
                })
                .collect();
            write_jsonl(&out, &samples)?;
        }
        Command::Cluster {
            cfg,
            embeddings,
            models,
            assignments,
        } => {
            let cfg = load_config(&cfg)?;
            let samples: Vec<HeadSample> = read_jsonl(&embeddings)?;
            let (fitted, assigned) = cluster_heads(&samples, &cfg.cluster)?;
            save_models(&models, &fitted)?;
            write_assignments(&assignments, &assigned)?;
            let noise = assigned.iter().filter(|a| a.label < 0).count();
            eprintln!("{} heads, {} samples, {noise} noise", fitted.len(), assigned.len());
        }
        Command::ClusterStats { models, out, histogram } => {
            let stats = cluster_stats(&load_models(&models)?);
            write_atomic(&out, stats.to_csv().as_bytes())?;
            if let Some(path) = histogram {
                write_atomic(&path, stats.histogram_csv().as_bytes())?;
            }
        }
        Command::Classify {
            cfg,
            assignments,
            records,
            table,
            out,
            accuracy,
        } => {
            let cfg = load_config(&cfg)?;
            let assigned = read_assignments(&assignments)?;
            let recs: Vec<HarvestRecord> = read_jsonl(&records)?;
            let outcomes: BTreeMap<u64, bool> = recs.iter().filter_map(|r| r.correct.map(|c| (r.sample_id, c))).collect();
            let tasks: BTreeSet<String> = recs.iter().map(|r| r.task.to_string()).collect();
            let t = FeatureTable::from_assignments(&assigned, &outcomes)?.balanced(cfg.classify.balance_seed);
            t.save(&table)?;
            let report = cross_validate(&t, &cfg.classify.gbdt, cfg.classify.folds)?;
            for k in &report.skipped {
                eprintln!("warning: fold {k} skipped, a split holds a single label");
            }
            println!("{}", report.render());
            write_json(&out, &report)?;
            if let Some(path) = accuracy {
                let label = tasks.into_iter().collect::<Vec<_>>().join("+");
                let csv = format!(
                    "task,mean,ci95,folds\n{label},{:.6},{:.6},{}\n",
                    report.mean,
                    report.ci95.unwrap_or(0.0),
                    report.folds.len()
                );
                write_atomic(&path, csv.as_bytes())?;
            }
        }
        Command::Shap {
            cv,
            table,
            out,
            importance,
            summary,
        } => {
            let report: CvReport = read_json(&cv)?;
            let t = FeatureTable::load(&table)?;
            let (cells, phis) = explain_folds(&report, &t)?;
            let s = ShapSummary::from_rows(&t.heads, &cells, &phis)?;
            write_atomic(&out, s.to_csv().as_bytes())?;
            write_atomic(&importance, s.importance_csv().as_bytes())?;
            write_json(&summary, &s)?;
        }
        Command::Intervene {
            cfg,
            lm,
            tasks,
            summary,
            split,
            out,
        } => {
            let cfg = load_config(&cfg)?;
            let params = load_lm(&lm)?;
            let s: ShapSummary = read_json(&summary)?;
            let instances = select_split(&cfg, read_instances(&tasks)?, split);
            let plan = &cfg.intervene;
            let pools = build_pools(&params, &instances, plan.task, plan.pool_size, plan.seed)?;
            eprintln!("pools: {} correct, {} incorrect", pools.correct.len(), pools.incorrect.len());
            let total = params.config.layers * params.config.heads;
            let mut rows = Vec::new();
            for mode in SelectionMode::ALL {
                let seeds: Vec<u64> = if mode == SelectionMode::Random {
                    (0..plan.random_seeds as u64).map(|k| plan.seed.wrapping_add(k)).collect()
                } else {
                    vec![plan.seed]
                };
                for seed in seeds {
                    let sel = select_heads(&s, mode, total, seed);
                    let counts = count_schedule(sel.heads.len());
                    if counts.is_empty() {
                        eprintln!("{mode}: no heads available");
                        continue;
                    }
                    let report = run_schedule(&params, &pools, &sel.heads, mode, &counts)?;
                    if report.recovered_after_collapse {
                        eprintln!("warning: {mode} (seed {seed}) recovered after collapse");
                    }
                    eprintln!("{mode} (seed {seed}): collapse at {:?}", report.collapse_at);
                    rows.extend(report.rows);
                }
            }
            write_atomic(&out, rows_to_csv(&rows).as_bytes())?;
        }
        Command::Summarize { inputs, out, curves } => {
            let mut rows = Vec::new();
            for path in &inputs {
                rows.extend(rows_from_csv(&read_to_string(path)?)?);
            }
            write_atomic(&out, summary_csv(&summarize(&rows)?).as_bytes())?;
            if let Some(path) = curves {
                let mut per: BTreeMap<(String, SelectionMode, usize), Vec<i64>> = BTreeMap::new();
                for r in &rows {
                    per.entry((r.task.to_string(), r.mode, r.count)).or_default().push(r.net);
                }
                let mut csv = String::from("task,mode,count,mean_net\n");
                for ((task, mode, count), nets) in per {
                    let mean = nets.iter().sum::<i64>() as f64 / nets.len() as f64;
                    csv.push_str(&format!("{task},{mode},{count},{mean:.6}\n"));
                }
                write_atomic(&path, csv.as_bytes())?;
            }
        }
        Command::Plot { kind, input, out } => {
            let fig = plot::render(kind, &read_to_string(&input)?)?;
            plot::write_figure(&fig, &out)?;
        }
    }
    Ok(())
}
