//! Head-zeroing interventions on fixed pools of correctly and incorrectly
//! predicted instances, with flip accounting and collapse detection.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::SelectionMode;
use crate::error::{Error, Result};
use crate::lm::{predict_batch, HeadKey, LmParams};
use crate::miner::{TaskInstance, TaskKind};

/// Head counts tried, capped by the ranked list length.
pub const COUNT_GRID: [usize; 10] = [1, 2, 5, 10, 20, 50, 100, 200, 400, 800];
pub const DESK_POOL: usize = 200;

/// Grid counts below `available`, then `available` itself.
pub fn count_schedule(available: usize) -> Vec<usize> {
    let mut out: Vec<usize> = COUNT_GRID.iter().copied().filter(|&c| c < available).collect();
    if available > 0 {
        out.push(available);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolMember {
    pub instance: TaskInstance,
    pub baseline: u32,
}

impl PoolMember {
    fn truth(&self) -> u32 {
        self.instance.first_truth.expect("pooled instances carry a truth")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pools {
    pub task: TaskKind,
    pub requested: usize,
    pub correct: Vec<PoolMember>,
    pub incorrect: Vec<PoolMember>,
}

/// Splits the instances of one task by whether the unmodified model gets
/// the first token right, and draws up to `pool_size` of each.
pub fn build_pools(
    params: &LmParams<f32>,
    instances: &[TaskInstance],
    task: TaskKind,
    pool_size: usize,
    seed: u64,
) -> Result<Pools> {
    let own: Vec<TaskInstance> = instances
        .iter()
        .filter(|i| i.task_id == task && i.first_truth.is_some())
        .cloned()
        .collect();
    if own.is_empty() {
        return Err(Error::Data(format!("no {task} instances to pool")));
    }
    let predicted = predict_batch(params, &own, None)?;
    let mut correct = Vec::new();
    let mut incorrect = Vec::new();
    for (instance, baseline) in own.into_iter().zip(predicted) {
        let m = PoolMember { instance, baseline };
        if m.baseline == m.truth() {
            correct.push(m);
        } else {
            incorrect.push(m);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for pool in [&mut correct, &mut incorrect] {
        pool.shuffle(&mut rng);
        pool.truncate(pool_size);
    }
    Ok(Pools {
        task,
        requested: pool_size,
        correct,
        incorrect,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRow {
    pub task: TaskKind,
    pub mode: SelectionMode,
    pub count: usize,
    /// Heads actually zeroed; less than `count` on shortfall.
    pub zeroed: usize,
    pub n_correct: usize,
    pub n_incorrect: usize,
    /// Correct-pool predictions that became wrong.
    pub lost: usize,
    /// Incorrect-pool predictions that became right.
    pub gained: usize,
    pub changed_correct: usize,
    pub changed_incorrect: usize,
    pub net: i64,
    /// Marks the first row of the curve that is collapsed.
    pub collapse: bool,
}

impl InterventionRow {
    pub fn shortfall(&self) -> bool {
        self.zeroed < self.count
    }

    /// Every correct-pool prediction lost and none gained.
    pub fn is_collapsed(&self) -> bool {
        self.n_correct > 0 && self.lost == self.n_correct && self.gained == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    pub task: TaskKind,
    pub mode: SelectionMode,
    pub rows: Vec<InterventionRow>,
    /// Smallest count at which every correct prediction was lost and none gained.
    pub collapse_at: Option<usize>,
    /// Set when net rose again after the collapse point.
    pub recovered_after_collapse: bool,
}

pub const REPORT_HEADER: &str =
    "task,mode,count,zeroed,n_correct,n_incorrect,lost,gained,changed_correct,changed_incorrect,net,collapse";

impl InterventionReport {
    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }
}

pub fn rows_to_csv(rows: &[InterventionRow]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.task,
            r.mode,
            r.count,
            r.zeroed,
            r.n_correct,
            r.n_incorrect,
            r.lost,
            r.gained,
            r.changed_correct,
            r.changed_incorrect,
            r.net,
            r.collapse
        ));
    }
    out
}

/// Parses rows written by [`rows_to_csv`]; errors name the offending column.
pub fn rows_from_csv(text: &str) -> Result<Vec<InterventionRow>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.trim() != REPORT_HEADER {
        return Err(Error::format(0, format!("expected header {REPORT_HEADER:?}")));
    }
    let names: Vec<&str> = REPORT_HEADER.split(',').collect();
    let mut out = Vec::new();
    let mut offset = header.len() as u64 + 1;
    for line in lines {
        if line.trim().is_empty() {
            offset += line.len() as u64 + 1;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != names.len() {
            return Err(Error::format(offset, format!("expected {} columns, found {}", names.len(), f.len())));
        }
        let bad = |i: usize| Error::format(offset, format!("bad value {:?} in column {}", f[i], names[i]));
        let num = |i: usize| f[i].parse::<usize>().map_err(|_| bad(i));
        out.push(InterventionRow {
            task: f[0].parse().map_err(|_| bad(0))?,
            mode: f[1].parse().map_err(|_| bad(1))?,
            count: num(2)?,
            zeroed: num(3)?,
            n_correct: num(4)?,
            n_incorrect: num(5)?,
            lost: num(6)?,
            gained: num(7)?,
            changed_correct: num(8)?,
            changed_incorrect: num(9)?,
            net: f[10].parse().map_err(|_| bad(10))?,
            collapse: f[11].parse().map_err(|_| bad(11))?,
        });
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

/// Zeroes the first `count` ranked heads for each scheduled count and reruns
/// both pools. Zeroed sets are prefixes of `ranked`, so they nest.
pub fn run_schedule(
    params: &LmParams<f32>,
    pools: &Pools,
    ranked: &[HeadKey],
    mode: SelectionMode,
    counts: &[usize],
) -> Result<InterventionReport> {
    if counts.windows(2).any(|w| w[0] >= w[1]) || counts.first() == Some(&0) {
        return Err(Error::Config(format!("counts must be positive and strictly increasing: {counts:?}")));
    }
    let distinct: BTreeSet<HeadKey> = ranked.iter().copied().collect();
    if distinct.len() != ranked.len() {
        return Err(Error::Domain("ranked head list repeats a head".into()));
    }
    let correct: Vec<TaskInstance> = pools.correct.iter().map(|m| m.instance.clone()).collect();
    let incorrect: Vec<TaskInstance> = pools.incorrect.iter().map(|m| m.instance.clone()).collect();
    let mut rows = counts
        .par_iter()
        .map(|&count| {
            let zeroed: BTreeSet<HeadKey> = ranked.iter().take(count).copied().collect();
            let pc = predict_batch(params, &correct, Some(&zeroed))?;
            let pi = predict_batch(params, &incorrect, Some(&zeroed))?;
            let lost = pools.correct.iter().zip(&pc).filter(|(m, &p)| p != m.truth()).count();
            let gained = pools.incorrect.iter().zip(&pi).filter(|(m, &p)| p == m.truth()).count();
            let changed_correct = pools.correct.iter().zip(&pc).filter(|(m, &p)| p != m.baseline).count();
            let changed_incorrect = pools.incorrect.iter().zip(&pi).filter(|(m, &p)| p != m.baseline).count();
            Ok(InterventionRow {
                task: pools.task,
                mode,
                count,
                zeroed: zeroed.len(),
                n_correct: correct.len(),
                n_incorrect: incorrect.len(),
                lost,
                gained,
                changed_correct,
                changed_incorrect,
                net: gained as i64 - lost as i64,
                collapse: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let collapse_at = rows
        .iter()
        .find(|r| r.is_collapsed())
        .map(|r| r.count);
    let mut recovered_after_collapse = false;
    if let Some(c) = collapse_at {
        let at = rows.iter().position(|r| r.count == c).unwrap();
        rows[at].collapse = true;
        let floor = rows[at].net;
        recovered_after_collapse = rows[at + 1..].iter().any(|r| r.net > floor);
    }
    Ok(InterventionReport {
        task: pools.task,
        mode,
        rows,
        collapse_at,
        recovered_after_collapse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub mode: SelectionMode,
    pub count: usize,
    /// Number of curves contributing at this count.
    pub curves: usize,
    pub mean_net: f64,
    /// Population standard deviation across curves.
    pub std_net: f64,
    pub min_net: i64,
    pub max_net: i64,
}

/// Aggregates net change per (mode, count) across every supplied curve.
pub fn summarize(rows: &[InterventionRow]) -> Result<Vec<SummaryPoint>> {
    if rows.is_empty() {
        return Err(Error::Data("no intervention rows to summarize".into()));
    }
    let mut groups: BTreeMap<(SelectionMode, usize), Vec<i64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.mode, r.count)).or_default().push(r.net);
    }
    Ok(groups
        .into_iter()
        .map(|((mode, count), nets)| {
            let n = nets.len() as f64;
            let mean = nets.iter().sum::<i64>() as f64 / n;
            let var = nets.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            SummaryPoint {
                mode,
                count,
                curves: nets.len(),
                mean_net: mean,
                std_net: var.sqrt(),
                min_net: *nets.iter().min().unwrap(),
                max_net: *nets.iter().max().unwrap(),
            }
        })
        .collect())
}

pub fn summary_csv(points: &[SummaryPoint]) -> String {
    let mut out = String::from("mode,count,curves,mean_net,std_net,min_net,max_net\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{},{}\n",
            p.mode, p.count, p.curves, p.mean_net, p.std_net, p.min_net, p.max_net
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;
    use crate::miner::{gen_corpus, mine_corpus, Vocab};

    fn setup() -> (LmParams<f32>, Vec<TaskInstance>) {
        // Wide init so that attention visibly moves the prediction.
        let cfg = LmConfig {
            init_std: 0.5,
            ..LmConfig::tiny()
        };
        let params = LmParams::<f32>::init(&cfg).unwrap();
        let files = gen_corpus(5, 6);
        let mut inst = mine_corpus(&files, &[TaskKind::EndOfLine], cfg.context_len, &Vocab::default(), 0)
            .unwrap()
            .instances;
        inst.truncate(60);
        // Relabel truths so the untrained model is right on even instances
        // and, on odd ones, right only once every head is zeroed.
        let base = predict_batch(&params, &inst, None).unwrap();
        let all: BTreeSet<HeadKey> = HeadKey::all(cfg.layers, cfg.heads).into_iter().collect();
        let dark = predict_batch(&params, &inst, Some(&all)).unwrap();
        for (i, x) in inst.iter_mut().enumerate() {
            x.first_truth = Some(if i % 2 == 0 { base[i] } else if dark[i] != base[i] { dark[i] } else { 999 });
        }
        (params, inst)
    }

    #[test]
    fn schedule_respects_the_grid() {
        assert_eq!(count_schedule(16), vec![1, 2, 5, 10, 16]);
        assert_eq!(count_schedule(20), vec![1, 2, 5, 10, 20]);
        assert_eq!(count_schedule(1000).len(), 11);
        assert!(count_schedule(0).is_empty());
    }

    #[test]
    fn pools_are_disjoint_and_faithful() {
        let (params, inst) = setup();
        let pools = build_pools(&params, &inst, TaskKind::EndOfLine, 20, 3).unwrap();
        assert_eq!(pools.correct.len(), 20);
        assert!(pools.correct.iter().all(|m| m.baseline == m.truth()));
        assert!(pools.incorrect.iter().all(|m| m.baseline != m.truth()));
        let ids: BTreeSet<u64> = pools
            .correct
            .iter()
            .chain(&pools.incorrect)
            .map(|m| m.instance.sample_id())
            .collect();
        assert_eq!(ids.len(), pools.correct.len() + pools.incorrect.len());
        assert_eq!(pools, build_pools(&params, &inst, TaskKind::EndOfLine, 20, 3).unwrap());
        assert!(build_pools(&params, &inst, TaskKind::Identifier, 20, 3).is_err());
    }

    #[test]
    fn accounting_and_collapse() {
        let (params, inst) = setup();
        let pools = build_pools(&params, &inst, TaskKind::EndOfLine, 100, 1).unwrap();
        let c = &params.config;
        let ranked = HeadKey::all(c.layers, c.heads);
        let counts = count_schedule(ranked.len());
        let report = run_schedule(&params, &pools, &ranked, SelectionMode::Random, &counts).unwrap();
        for r in &report.rows {
            assert_eq!(r.net, r.gained as i64 - r.lost as i64);
            assert!(r.lost <= r.changed_correct && r.gained <= r.changed_incorrect);
            assert!(r.lost <= r.n_correct && r.gained <= r.n_incorrect);
        }
        let last = report.rows.last().unwrap();
        assert_eq!(last.zeroed, ranked.len());
        // Odd instances were relabelled to the all-zeroed prediction.
        assert!(last.gained > 0);
        assert_eq!(report, run_schedule(&params, &pools, &ranked, SelectionMode::Random, &counts).unwrap());

        let over = run_schedule(&params, &pools, &ranked[..2], SelectionMode::Positive, &[1, 5]).unwrap();
        assert!(over.rows[1].shortfall());
        assert_eq!(over.rows[1].zeroed, 2);
        assert!(run_schedule(&params, &pools, &ranked, SelectionMode::Positive, &[2, 2]).is_err());
    }

    #[test]
    fn collapse_flags_the_first_total_loss() {
        let (params, inst) = setup();
        let mut pools = build_pools(&params, &inst, TaskKind::EndOfLine, 100, 1).unwrap();
        // No incorrect pool, so every count that loses all correct ones collapses.
        pools.incorrect.clear();
        let c = &params.config;
        let ranked = HeadKey::all(c.layers, c.heads);
        let report = run_schedule(&params, &pools, &ranked, SelectionMode::Neutral, &count_schedule(ranked.len())).unwrap();
        let flagged: Vec<usize> = report.rows.iter().filter(|r| r.collapse).map(|r| r.count).collect();
        assert!(flagged.len() <= 1);
        assert_eq!(flagged.first().copied(), report.collapse_at);
        if let Some(at) = report.collapse_at {
            let r = report.rows.iter().find(|r| r.count == at).unwrap();
            assert_eq!(r.lost, r.n_correct);
        }
    }

    #[test]
    fn csv_round_trip_and_summary() {
        let row = |task, mode, count, lost, gained| InterventionRow {
            task,
            mode,
            count,
            zeroed: count,
            n_correct: 10,
            n_incorrect: 10,
            lost,
            gained,
            changed_correct: lost,
            changed_incorrect: gained,
            net: gained as i64 - lost as i64,
            collapse: false,
        };
        let rows = vec![
            row(TaskKind::EndOfLine, SelectionMode::Positive, 1, 2, 5),
            row(TaskKind::Identifier, SelectionMode::Positive, 1, 4, 1),
            row(TaskKind::EndOfLine, SelectionMode::Random, 1, 0, 0),
        ];
        let text = rows_to_csv(&rows);
        assert_eq!(rows_from_csv(&text).unwrap(), rows);
        let broken = text.replacen("END_OF_LINE,positive,1,", "END_OF_LINE,positive,x,", 1);
        let err = rows_from_csv(&broken).unwrap_err();
        assert!(err.to_string().contains("column count"), "{err}");

        let s = summarize(&rows).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].mode, SelectionMode::Positive);
        assert!((s[0].mean_net - 0.0).abs() < 1e-12);
        assert!((s[0].std_net - 3.0).abs() < 1e-12);
        assert_eq!((s[0].min_net, s[0].max_net), (-3, 3));
        let single = summarize(&rows[..1]).unwrap();
        assert_eq!(single[0].mean_net, 3.0);
        assert!(summarize(&[]).is_err());
    }
}
