use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use shardann::io::{load_fvecs, load_ivecs, save_f32_rows, save_ivecs};
use shardann::neighbor::recall_at_k_ids;
use shardann::segmenter::{learn_apd, learn_rh, MAX_LEVELS};
use shardann::synthetic::ClusteredMixture;
use shardann::{
    batch_query, partitioned_exact, BuildConfig, Dataset, HnswParams, NeighborList, PartitionSpec, PartitionedIndex,
    QuantileMode, QueryConfig, SegmenterTree,
};

use crate::failure::{Context, Failure};
use crate::{
    BenchArgs, BuildArgs, EvaluateArgs, ExactArgs, HnswOpts, LearnArgs, QueryArgs, QueryOpts, SegmenterOpts, Strategy,
    Toggle,
};

pub const DEFAULT_KS: [usize; 6] = [1, 5, 10, 15, 50, 100];

fn load_vectors(path: &Path) -> Result<Dataset, Failure> {
    load_fvecs(path).context(path.display())
}

fn print_json(value: &Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("plain JSON values serialize")
    );
}

fn write_json(value: &Value, path: &Path) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("plain JSON values serialize");
    fs::write(path, text + "\n").context(path.display())
}

/// `min(size, n)` rows drawn without replacement, kept in dataset order.
fn sample_rows(data: &Dataset, size: usize, seed: u64) -> Result<Dataset, Failure> {
    if size == 0 {
        return Err(Failure::usage("--sample-size must be positive"));
    }
    if size >= data.len() {
        return Ok(data.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rand::seq::index::sample(&mut rng, data.len(), size).into_vec();
    rows.sort_unstable();
    Ok(data.select(&rows))
}

fn learn_tree(opts: &SegmenterOpts, data: Option<&Dataset>, seed: u64) -> Result<SegmenterTree, Failure> {
    if opts.levels > MAX_LEVELS {
        return Err(Failure::usage(format!("--levels must be at most {MAX_LEVELS}")));
    }
    if opts.strategy == Strategy::Rs {
        let segments = opts.segments.unwrap_or(1 << opts.levels);
        return Ok(SegmenterTree::random(segments, seed)?);
    }
    if opts.segments.is_some() {
        return Err(Failure::usage("--segments applies to --strategy rs only; use --levels"));
    }
    let data = data.ok_or_else(|| Failure::usage("--input is required for rh and apd"))?;
    let sample = sample_rows(data, opts.sample_size, seed)?;
    let tree = match opts.strategy {
        Strategy::Rh => learn_rh(&sample, opts.levels, opts.alpha, seed),
        _ => learn_apd(&sample, opts.levels, opts.alpha),
    };
    tree.context("learning segmenter")
}

fn hnsw_params(opts: &HnswOpts, ef_search: usize, seed: u64) -> Result<HnswParams, Failure> {
    if opts.m < 2 {
        return Err(Failure::usage("--m must be at least 2"));
    }
    let mut p = HnswParams::with_m(opts.m);
    if let Some(m0) = opts.m0 {
        p.m0 = m0;
    }
    p.ef_construction = opts.ef_construction;
    p.ef_search = ef_search;
    p.seed = seed;
    p.validate()?;
    Ok(p)
}

fn query_config(opts: &QueryOpts, ef_search: usize) -> Result<QueryConfig, Failure> {
    let config = QueryConfig {
        top_k: opts.topk,
        ef_search,
        per_shard_top_k: opts.per_shard_topk == Toggle::On,
        confidence: opts.confidence,
        quantile: if opts.f_literal {
            QuantileMode::Literal
        } else {
            QuantileMode::TwoSided
        },
        ..QueryConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn write_results(
    lists: &[NeighborList],
    width: usize,
    ids_path: &Path,
    distances_path: Option<&Path>,
) -> Result<(), Failure> {
    let mut ids = Vec::with_capacity(lists.len());
    for list in lists {
        let mut row = Vec::with_capacity(width);
        for n in list {
            let id = i32::try_from(n.doc_id)
                .map_err(|_| Failure::data(format!("doc id {} does not fit an ivecs entry", n.doc_id)))?;
            row.push(id);
        }
        row.resize(width, -1);
        ids.push(row);
    }
    save_ivecs(&ids, ids_path).context(ids_path.display())?;
    if let Some(path) = distances_path {
        let rows: Vec<Vec<f32>> = lists
            .iter()
            .map(|l| {
                let mut row: Vec<f32> = l.iter().map(|n| n.distance as f32).collect();
                row.resize(width, f32::INFINITY);
                row
            })
            .collect();
        save_f32_rows(&rows, path).context(path.display())?;
    }
    Ok(())
}

fn check_ks(ks: &[usize]) -> Result<(), Failure> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Failure::usage("recall cut-offs must be positive"));
    }
    Ok(())
}

/// Mean recall at each cut-off. `results` rows may hold -1 padding.
fn recall_table(results: &[Vec<i64>], truth: &[Vec<i64>], ks: Option<&[usize]>) -> Result<Vec<(usize, f64)>, Failure> {
    if results.len() != truth.len() {
        return Err(Failure::data(format!(
            "{} result rows but {} truth rows",
            results.len(),
            truth.len()
        )));
    }
    if results.is_empty() {
        return Err(Failure::data("no rows to evaluate"));
    }
    let width = results.iter().map(Vec::len).min().unwrap_or(0);
    let truth_width = truth.iter().map(Vec::len).min().unwrap_or(0);
    let ks: Vec<usize> = match ks {
        Some(ks) => {
            check_ks(ks)?;
            if let Some(k) = ks.iter().find(|&&k| k > width) {
                return Err(Failure::data(format!("k = {k} exceeds the result width {width}")));
            }
            ks.to_vec()
        }
        None => DEFAULT_KS.iter().copied().filter(|&k| k <= width).collect(),
    };
    if ks.is_empty() {
        return Err(Failure::data("results are empty"));
    }
    if let Some(k) = ks.iter().find(|&&k| k > truth_width) {
        return Err(Failure::data(format!(
            "k = {k} exceeds the ground-truth width {truth_width}"
        )));
    }

    let mut table = Vec::with_capacity(ks.len());
    for &k in &ks {
        let mut total = 0.0;
        for (row, (r, t)) in results.iter().zip(truth).enumerate() {
            let returned: Vec<u64> = r.iter().filter(|&&id| id >= 0).map(|&id| id as u64).collect();
            let wanted = t[..k]
                .iter()
                .map(|&id| u64::try_from(id))
                .collect::<Result<Vec<u64>, _>>()
                .map_err(|_| Failure::data(format!("ground-truth row {row} has padding within the first {k}")))?;
            total += recall_at_k_ids(&returned, &wanted, k)?;
        }
        table.push((k, total / results.len() as f64));
    }
    Ok(table)
}

fn print_table(table: &[(usize, f64)]) {
    println!("{:>6}  {:>8}", "k", "recall");
    for (k, r) in table {
        println!("{k:>6}  {r:>8.4}");
    }
}

fn recall_json(table: &[(usize, f64)]) -> Value {
    table.iter().map(|(k, r)| json!({ "k": k, "recall": r })).collect()
}

fn to_rows(lists: &[NeighborList]) -> Vec<Vec<i64>> {
    lists
        .iter()
        .map(|l| l.iter().map(|n| n.doc_id as i64).collect())
        .collect()
}

fn widen(rows: Vec<Vec<i32>>) -> Vec<Vec<i64>> {
    rows.into_iter()
        .map(|r| r.into_iter().map(i64::from).collect())
        .collect()
}

fn collect_results(results: Vec<shardann::Result<NeighborList>>) -> Result<Vec<NeighborList>, Failure> {
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.context(format!("query {i}")))
        .collect()
}

pub fn learn_segmenter(a: &LearnArgs) -> Result<(), Failure> {
    let data = a.input.as_deref().map(load_vectors).transpose()?;
    let t = Instant::now();
    let tree = learn_tree(&a.segmenter, data.as_ref(), a.seed)?;
    let seconds = t.elapsed().as_secs_f64();
    tree.save(&a.out).context(a.out.display())?;
    print_json(&json!({
        "segments": tree.num_segments(),
        "levels": tree.levels(),
        "kind": tree.kind(),
        "sampleSize": data.map(|d| d.len().min(a.segmenter.sample_size)),
        "learnSeconds": seconds,
    }));
    Ok(())
}

pub fn build(a: &BuildArgs) -> Result<(), Failure> {
    let t = Instant::now();
    let data = load_vectors(&a.input)?;
    let tree = match &a.segmenter {
        Some(path) => SegmenterTree::load(path).context(path.display())?,
        None => SegmenterTree::random(1, 0)?,
    };
    let load_seconds = t.elapsed().as_secs_f64();
    let spec = PartitionSpec::new(a.shards, tree)?;
    let config = BuildConfig {
        hnsw: hnsw_params(&a.hnsw, a.ef_search, a.seed)?,
        distance: a.distance.into(),
        workers: a.workers,
        spill: a.spill.into(),
    };
    let t = Instant::now();
    let index = PartitionedIndex::build(&data, &spec, &config).context("building index")?;
    let build_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    index.save(&a.out).context(a.out.display())?;
    print_json(&json!({
        "docs": index.doc_count(),
        "cells": index.cells().count(),
        "entries": index.total_entries(),
        "loadSeconds": load_seconds,
        "buildSeconds": build_seconds,
        "saveSeconds": t.elapsed().as_secs_f64(),
    }));
    Ok(())
}

pub fn query(a: &QueryArgs) -> Result<(), Failure> {
    let t = Instant::now();
    let index = PartitionedIndex::load(&a.index).context(a.index.display())?;
    let queries = load_vectors(&a.queries)?;
    let load_seconds = t.elapsed().as_secs_f64();
    if queries.dim() != index.dim() {
        return Err(Failure::data(format!(
            "queries have dimension {} but the index has {}",
            queries.dim(),
            index.dim()
        )));
    }
    let config = query_config(&a.query, a.ef_search.unwrap_or(index.hnsw_params().ef_search))?;
    let batch = batch_query(&index, &queries, &config, a.workers)?;
    let lists = collect_results(batch.results)?;
    write_results(&lists, config.top_k, &a.out, a.out_distances.as_deref())?;
    let report = json!({
        "queries": queries.len(),
        "loadSeconds": load_seconds,
        "timing": batch.report,
    });
    if let Some(path) = &a.timing_out {
        write_json(&report, path)?;
    }
    print_json(&report);
    Ok(())
}

pub fn exact(a: &ExactArgs) -> Result<(), Failure> {
    let t = Instant::now();
    let data = load_vectors(&a.input)?;
    let queries = load_vectors(&a.queries)?;
    let load_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let partitions = a.partitions.unwrap_or(a.workers);
    let lists = partitioned_exact(&data, &queries, a.k, a.distance.into(), partitions, a.workers)?;
    let seconds = t.elapsed().as_secs_f64();
    write_results(&lists, a.k, &a.out, a.out_distances.as_deref())?;
    print_json(&json!({
        "queries": queries.len(),
        "k": a.k,
        "loadSeconds": load_seconds,
        "exactSeconds": seconds,
    }));
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), Failure> {
    let results = widen(load_ivecs(&a.results).context(a.results.display())?);
    let truth = widen(load_ivecs(&a.truth).context(a.truth.display())?);
    let table = recall_table(&results, &truth, a.k.as_deref())?;
    let report = json!({ "queries": results.len(), "recall": recall_json(&table) });
    print_table(&table);
    println!(
        "{}",
        serde_json::to_string(&report).expect("plain JSON values serialize")
    );
    if let Some(path) = &a.out {
        write_json(&report, path)?;
    }
    Ok(())
}

pub fn bench(a: &BenchArgs) -> Result<(), Failure> {
    let (data, queries, source) = match (&a.input, &a.queries) {
        (Some(input), Some(queries)) => (load_vectors(input)?, load_vectors(queries)?, "files"),
        _ => {
            if a.synthetic_dim == 0 || a.synthetic_clusters == 0 {
                return Err(Failure::usage("synthetic dimension and cluster count must be positive"));
            }
            let mixture = ClusteredMixture::new(a.synthetic_dim, a.synthetic_clusters, a.seed);
            (
                mixture.sample(a.synthetic_size, a.seed.wrapping_add(1)),
                mixture.sample(a.synthetic_queries, a.seed.wrapping_add(2)),
                "synthetic",
            )
        }
    };
    if data.dim() != queries.dim() {
        return Err(Failure::data("base and query dimensions differ"));
    }
    if let Some(ks) = &a.k {
        check_ks(ks)?;
        if let Some(k) = ks.iter().find(|&&k| k > a.query.topk) {
            return Err(Failure::usage(format!("k = {k} exceeds --topk {}", a.query.topk)));
        }
    }
    let config = query_config(&a.query, a.ef_search)?;

    let t = Instant::now();
    let tree = learn_tree(&a.segmenter, Some(&data), a.seed)?;
    let learn_seconds = t.elapsed().as_secs_f64();

    let spec = PartitionSpec::new(a.shards, tree)?;
    let build_config = BuildConfig {
        hnsw: hnsw_params(&a.hnsw, a.ef_search, a.seed)?,
        distance: a.distance.into(),
        workers: a.workers,
        spill: a.spill.into(),
    };
    let t = Instant::now();
    let index = PartitionedIndex::build(&data, &spec, &build_config).context("building index")?;
    let build_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let truth = partitioned_exact(&data, &queries, a.query.topk, a.distance.into(), a.workers, a.workers)?;
    let exact_seconds = t.elapsed().as_secs_f64();

    let batch = batch_query(&index, &queries, &config, a.workers)?;
    let lists = collect_results(batch.results)?;
    let table = recall_table(&to_rows(&lists), &to_rows(&truth), a.k.as_deref())?;

    let report = json!({
        "dataset": { "source": source, "docs": data.len(), "queries": queries.len(), "dim": data.dim() },
        "segmenter": {
            "kind": index.segmenter().kind(),
            "segments": index.num_segments(),
            "alpha": index.segmenter().alpha(),
            "learnSeconds": learn_seconds,
        },
        "build": {
            "shards": index.num_shards(),
            "cells": index.cells().count(),
            "entries": index.total_entries(),
            "workers": a.workers,
            "buildSeconds": build_seconds,
        },
        "exactSeconds": exact_seconds,
        "timing": batch.report,
        "recall": recall_json(&table),
    });
    print_table(&table);
    print_json(&report);
    if let Some(path) = &a.out {
        write_json(&report, path)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recall_table_handles_padding_and_defaults() {
        let truth = vec![vec![1, 2, 3, 4, 5], vec![6, 7, 8, 9, 10]];
        let results = vec![vec![1, 9, 3, -1, -1], vec![6, 7, 8, 9, 10]];
        let t = recall_table(&results, &truth, None).unwrap();
        assert_eq!(t, vec![(1, 1.0), (5, 0.7)]);
        let t = recall_table(&results, &truth, Some(&[2])).unwrap();
        assert_eq!(t, vec![(2, 0.75)]);
    }

    #[test]
    fn recall_table_errors() {
        let truth = vec![vec![1, 2, 3]];
        assert_eq!(recall_table(&[vec![1, 2, 3]], &truth, Some(&[4])).unwrap_err().code, 2);
        assert_eq!(recall_table(&[vec![1, 2, 3]], &truth, Some(&[0])).unwrap_err().code, 1);
        assert_eq!(recall_table(&[], &truth, None).unwrap_err().code, 2);
        let padded_truth = vec![vec![1, -1, -1]];
        assert_eq!(
            recall_table(&[vec![1, 2, 3]], &padded_truth, Some(&[3]))
                .unwrap_err()
                .code,
            2
        );
    }

    #[test]
    fn sampling_is_seeded_and_sorted() {
        let data = shardann::synthetic::uniform(100, 3, 1);
        let a = sample_rows(&data, 10, 5).unwrap();
        assert_eq!(a, sample_rows(&data, 10, 5).unwrap());
        assert_eq!(a.len(), 10);
        assert!(a.ids().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_rows(&data, 500, 5).unwrap().len(), 100);
    }
}
