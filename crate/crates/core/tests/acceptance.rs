//! Acceptance criteria. Prints one `PASS|FAIL|SKIP <n> <name>: <detail>`
//! line per criterion and exits nonzero if any fails.
//!
//! Pass criterion numbers as arguments to run a subset.

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use gnnrec::eval::{random_baseline_recall, recall_at_k, sampled_forward};
use gnnrec::graph::{degree_histogram, split_train_test, write_edge_list, BipartiteGraph, Direction, Side};
use gnnrec::kernels::counters::{self, KernelKind};
use gnnrec::kernels::{
    sddmm, sddmm_backward, spmm, spmm_backward, spmm_backward_source, spmm_backward_source_weighted,
    spmm_backward_weighted, spmm_weighted, BinaryOp, EdgeMessageMatrix, EmbeddingMatrix, KernelConfig, KernelOptions,
    Matrix, Reduce, SpmmInput,
};
use gnnrec::kron::{expand, ExpandManifest, KronOptions, SeedBlock};
use gnnrec::membench::{available_cpus, run_bench, AccessPattern, BenchRecord, BenchSpec, MemOp};
use gnnrec::models::{
    model_backward, model_forward, model_forward_with, naive_ngcf_layer_forward, ngcf_layer_forward, Dataflow,
    LayerWeights, ModelConfig, ModelKind, ModelParams,
};
use gnnrec::redundancy::{max_batch_under_budget, redundancy_of, subgraph_footprint, Expansion, Vertex};
use gnnrec::scalar::Scalar;
use gnnrec::synth::{power_law_communities, SynthConfig};
use gnnrec::train::{batch_schedule, sample_bpr_batch, scaled_lr, LrScaling, NullMetrics, TrainConfig, Trainer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Fallible<T> = Result<T, Box<dyn std::error::Error>>;
type Criterion = (&'static str, fn() -> Fallible<Outcome>);

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        let status = if ok { Status::Pass } else { Status::Fail };
        Self { status, detail }
    }
}

fn random_graph(rng: &mut ChaCha8Rng, users: usize, items: usize, p: f64) -> BipartiteGraph {
    let mut edges = vec![(0, 0)];
    for u in 0..users as u32 {
        for i in 0..items as u32 {
            if rng.random_bool(p) {
                edges.push((u, i));
            }
        }
    }
    BipartiteGraph::from_edges(users, items, edges).expect("valid random graph")
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Worst relative difference between the optimized and naive dataflows
/// over final embeddings and every parameter gradient.
fn dataflow_gap<T: Scalar>(
    g: &BipartiteGraph,
    params: &ModelParams<T>,
    model: &ModelConfig,
    gu: &EmbeddingMatrix<T>,
    gi: &EmbeddingMatrix<T>,
) -> Fallible<f64> {
    let k = KernelConfig::default();
    let (fo, co) = model_forward_with(g, params, model, &k, Dataflow::Optimized)?;
    let (fn_, cn) = model_forward_with(g, params, model, &k, Dataflow::Naive)?;
    let go = model_backward(g, params, model, &co, gu, gi, &k)?;
    let gn = model_backward(g, params, model, &cn, gu, gi, &k)?;
    let mut pairs = vec![(&*fo.users, &*fn_.users), (&*fo.items, &*fn_.items)];
    pairs.extend(go.tensors().into_iter().zip(gn.tensors()));
    Ok(pairs
        .into_iter()
        .map(|(a, b)| {
            let diff = a.max_abs_diff(b).to_f64_lossy();
            let scale = b.max_abs().to_f64_lossy();
            if diff == 0.0 {
                0.0
            } else {
                diff / scale
            }
        })
        .fold(0.0, f64::max))
}

fn dataflow_equivalence() -> Fallible<Outcome> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    let (mut worst, mut worst32) = (0.0f64, 0.0f64);
    for case in 0..200 {
        let users = rng.random_range(1..=64);
        let items = rng.random_range(1..=64);
        let p = rng.random_range(0.02..0.3);
        let g = random_graph(&mut rng, users, items, p);
        let d = rng.random_range(1..=16);
        let layers = rng.random_range(1..=3);
        let model = ModelConfig::new(ModelKind::Ngcf, layers, d)?.with_normalization(rng.random_bool(0.5));
        let params = ModelParams::<f32>::init(&model, users, items, case)?;
        let od = model.output_dim();
        let gu = EmbeddingMatrix::from(random_matrix(&mut rng, users, od));
        let gi = EmbeddingMatrix::from(random_matrix(&mut rng, items, od));
        let gap = dataflow_gap(&g, &params.cast::<f64>(), &model, &gu, &gi)?;
        worst = worst.max(gap);
        if gap > 1e-5 {
            failures.push(case);
        }
        worst32 = worst32.max(dataflow_gap(&g, &params, &model, &gu.cast(), &gi.cast())?);
    }
    let secs = t.elapsed().as_secs_f64();
    Ok(Outcome::check(
        failures.is_empty() && secs < 60.0,
        format!(
            "200 graphs in f64, worst relative diff {worst:.2e}, failing cases {failures:?}; \
             f32 worst {worst32:.2e} (informational); {secs:.1}s"
        ),
    ))
}

fn complexity_counters() -> Fallible<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut edges: Vec<(u32, u32)> = (0..10u32).flat_map(|u| (0..8u32).map(move |i| (u, i))).collect();
    edges.shuffle(&mut rng);
    edges.truncate(30);
    let g = BipartiteGraph::from_edges(10, 8, edges)?;
    let xu = EmbeddingMatrix::from(random_matrix(&mut rng, 10, 4).cast::<f32>());
    let xi = EmbeddingMatrix::from(random_matrix(&mut rng, 8, 4).cast::<f32>());
    let w = LayerWeights {
        w1: random_matrix(&mut rng, 4, 4).cast::<f32>(),
        w2: random_matrix(&mut rng, 4, 4).cast::<f32>(),
    };
    let k = KernelConfig::default();

    let before = counters::snapshot();
    naive_ngcf_layer_forward(&g, &xu, &xi, &w, None, &k.dense)?;
    let naive = counters::snapshot().since(&before);
    let before = counters::snapshot();
    ngcf_layer_forward(&g, &xu, &xi, &w, None, &k)?;
    let opt = counters::snapshot().since(&before);
    let naive_rows = naive.get(KernelKind::Matmul).rows;
    let opt_rows = opt.get(KernelKind::Matmul).rows;
    let sddmm_calls = opt.get(KernelKind::SddmmMul).calls;

    let model = ModelConfig::new(ModelKind::Ngcf, 3, 4)?;
    let params = ModelParams::<f32>::init(&model, 10, 8, 0)?;
    let before = counters::snapshot();
    model_forward(&g, &params, &model, &k)?;
    let three = counters::snapshot().since(&before);
    let three_calls = three.get(KernelKind::SddmmMul).calls;
    let three_rows = three.get(KernelKind::Matmul).rows;

    Ok(Outcome::check(
        naive_rows == 60 && opt_rows == 18 && sddmm_calls == 1 && three_calls == 3 && three_rows == 54,
        format!(
            "matmul rows naive {naive_rows} optimized {opt_rows}, sddmm-mul calls {sddmm_calls}; \
             3-layer model: {three_calls} calls, {three_rows} rows"
        ),
    ))
}

/// Edge list in canonical order.
fn edge_list(g: &BipartiteGraph) -> Vec<(usize, usize)> {
    (0..g.num_edges())
        .map(|e| {
            let (u, i) = g.edge(e);
            (u as usize, i as usize)
        })
        .collect()
}

/// Dense `(dst, src)` slot for an edge of `dir`.
fn oriented(dir: Direction, (u, i): (usize, usize)) -> (usize, usize) {
    match dir {
        Direction::UserToItem => (i, u),
        Direction::ItemToUser => (u, i),
    }
}

fn dense_sddmm(
    g: &BipartiteGraph,
    dir: Direction,
    xs: &Matrix<f64>,
    xd: &Matrix<f64>,
    op: BinaryOp,
) -> Matrix<f64> {
    let d = xs.cols();
    let (nd, ns) = (xd.rows(), xs.rows());
    // Full dst x src x d tensor, then sampled at the edges.
    let width = if op == BinaryOp::Dot { 1 } else { d };
    let mut full = vec![0.0; nd * ns * width];
    for t in 0..nd {
        for s in 0..ns {
            let cell = &mut full[(t * ns + s) * width..][..width];
            for c in 0..d {
                let (a, b) = (xs.get(s, c), xd.get(t, c));
                match op {
                    BinaryOp::Mul => cell[c] = a * b,
                    BinaryOp::Add => cell[c] = a + b,
                    BinaryOp::Dot => cell[0] += a * b,
                }
            }
        }
    }
    let edges = edge_list(g);
    Matrix::from_fn(edges.len(), width, |e, c| {
        let (t, s) = oriented(dir, edges[e]);
        full[(t * ns + s) * width + c]
    })
}

/// Dense reduction over a `dst x src` mask with optional per-edge weights
/// and either edge messages or source rows.
fn dense_spmm(
    g: &BipartiteGraph,
    dir: Direction,
    messages: Option<&Matrix<f64>>,
    source: Option<&Matrix<f64>>,
    weights: Option<&[f64]>,
    reduce: Reduce,
) -> Matrix<f64> {
    let (nd, ns) = (g.num_on(dir.dst_side()), g.num_on(dir.src_side()));
    let d = messages.or(source).map_or(0, |m| m.cols());
    let mut slot: Vec<Option<usize>> = vec![None; nd * ns];
    for (e, edge) in edge_list(g).into_iter().enumerate() {
        let (t, s) = oriented(dir, edge);
        slot[t * ns + s] = Some(e);
    }
    Matrix::from_fn(nd, d, |t, c| {
        let mut vals = Vec::new();
        for s in 0..ns {
            if let Some(e) = slot[t * ns + s] {
                let m = match (messages, source) {
                    (Some(m), _) => m.get(e, c),
                    (None, Some(x)) => x.get(s, c),
                    _ => unreachable!(),
                };
                vals.push(m * weights.map_or(1.0, |w| w[e]));
            }
        }
        if vals.is_empty() {
            return 0.0;
        }
        match reduce {
            Reduce::Sum => vals.iter().sum(),
            Reduce::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
            Reduce::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    })
}

fn max_abs_err(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.max_abs_diff(b)
}

fn weighted_sum(m: &Matrix<f64>, r: &Matrix<f64>) -> f64 {
    m.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum()
}

/// Largest elementwise relative error between `grad` and central
/// differences of `f` at `x`; entries where both are below `1e-9` count
/// as exact.
fn fd_error(x: &Matrix<f64>, grad: &Matrix<f64>, f: impl Fn(&Matrix<f64>) -> f64) -> f64 {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for p in 0..x.as_slice().len() {
        let mut plus = x.clone();
        plus.as_mut_slice()[p] += h;
        let mut minus = x.clone();
        minus.as_mut_slice()[p] -= h;
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        let an = grad.as_slice()[p];
        let scale = fd.abs().max(an.abs());
        if scale > 1e-9 {
            worst = worst.max((fd - an).abs() / scale);
        }
    }
    worst
}

/// `sum(spmm(input) * r)` with `input` as edge messages or source rows.
fn spmm_loss(
    g: &BipartiteGraph,
    dir: Direction,
    edges: bool,
    input: &Matrix<f64>,
    weights: Option<&[f64]>,
    reduce: Reduce,
    r: &Matrix<f64>,
) -> f64 {
    let o = KernelOptions::default();
    let (em, ex) = (EdgeMessageMatrix::from(input.clone()), EmbeddingMatrix::from(input.clone()));
    let input = if edges { SpmmInput::Edges(&em) } else { SpmmInput::Source(&ex) };
    let out = match weights {
        Some(w) => spmm_weighted(g, dir, input, w, reduce, &o),
        None => spmm(g, dir, input, reduce, &o),
    };
    weighted_sum(&out.expect("valid spmm inputs"), r)
}

fn kernel_oracles() -> Fallible<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dirs = [Direction::UserToItem, Direction::ItemToUser];
    let ops = [BinaryOp::Mul, BinaryOp::Add, BinaryOp::Dot];
    let reduces = [Reduce::Sum, Reduce::Max, Reduce::Mean];
    let mut forward_err: f64 = 0.0;
    let mut forward_f32_rel: f64 = 0.0;
    let mut cases = 0;
    for trial in 0..12 {
        let users = if trial == 0 { 64 } else { rng.random_range(1..=64) };
        let items = if trial == 0 { 64 } else { rng.random_range(1..=64) };
        let p = rng.random_range(0.02..0.5);
        let g = random_graph(&mut rng, users, items, p);
        let d = rng.random_range(1..=16);
        let xu = random_matrix(&mut rng, users, d);
        let xi = random_matrix(&mut rng, items, d);
        let w: Vec<f64> = (0..g.num_edges()).map(|_| rng.random_range(0.1..2.0)).collect();
        let msgs = random_matrix(&mut rng, g.num_edges(), d);
        let opts = KernelOptions::new(1 + trial % 3);
        for dir in dirs {
            let (xs, xd) = match dir {
                Direction::UserToItem => (&xu, &xi),
                Direction::ItemToUser => (&xi, &xu),
            };
            let (es, ed) = (EmbeddingMatrix::from(xs.clone()), EmbeddingMatrix::from(xd.clone()));
            for op in ops {
                let want = dense_sddmm(&g, dir, xs, xd, op);
                let got = sddmm(&g, dir, &es, &ed, op, &opts)?;
                forward_err = forward_err.max(max_abs_err(&got, &want));
                let got32 = sddmm(&g, dir, &es.cast::<f32>(), &ed.cast::<f32>(), op, &opts)?.cast::<f64>();
                forward_f32_rel = forward_f32_rel.max(max_abs_err(&got32, &want) / want.max_abs().max(1.0));
                cases += 2;
            }
            let em = EdgeMessageMatrix::from(msgs.clone());
            for reduce in reduces {
                let checks = [
                    (spmm(&g, dir, SpmmInput::Edges(&em), reduce, &opts)?, dense_spmm(&g, dir, Some(&msgs), None, None, reduce)),
                    (
                        spmm_weighted(&g, dir, SpmmInput::Edges(&em), &w, reduce, &opts)?,
                        dense_spmm(&g, dir, Some(&msgs), None, Some(&w), reduce),
                    ),
                    (spmm(&g, dir, SpmmInput::Source(&es), reduce, &opts)?, dense_spmm(&g, dir, None, Some(xs), None, reduce)),
                    (
                        spmm_weighted(&g, dir, SpmmInput::Source(&es), &w, reduce, &opts)?,
                        dense_spmm(&g, dir, None, Some(xs), Some(&w), reduce),
                    ),
                ];
                for (got, want) in checks {
                    forward_err = forward_err.max(max_abs_err(&got, &want));
                    cases += 1;
                }
            }
        }
    }

    let mut grad_err: f64 = 0.0;
    let mut grad_cases = 0;
    let mut max_rejected = true;
    for _ in 0..6 {
        let (users, items) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let g = random_graph(&mut rng, users, items, 0.5);
        let d = 3;
        let xu = random_matrix(&mut rng, users, d);
        let xi = random_matrix(&mut rng, items, d);
        let w: Vec<f64> = (0..g.num_edges()).map(|_| rng.random_range(0.1..2.0)).collect();
        let msgs = random_matrix(&mut rng, g.num_edges(), d);
        let o = KernelOptions::default();
        for dir in dirs {
            let (xs, xd) = match dir {
                Direction::UserToItem => (&xu, &xi),
                Direction::ItemToUser => (&xi, &xu),
            };
            let nd = xd.rows();
            let emb = |m: &Matrix<f64>| EmbeddingMatrix::from(m.clone());
            for op in ops {
                let width = if op == BinaryOp::Dot { 1 } else { d };
                let r = random_matrix(&mut rng, g.num_edges(), width);
                let (gs, gd) = sddmm_backward(&g, dir, &emb(xs), &emb(xd), op, &EdgeMessageMatrix::from(r.clone()), &o)?;
                let fs = |x: &Matrix<f64>| weighted_sum(&sddmm(&g, dir, &emb(x), &emb(xd), op, &o).unwrap(), &r);
                let fd = |x: &Matrix<f64>| weighted_sum(&sddmm(&g, dir, &emb(xs), &emb(x), op, &o).unwrap(), &r);
                grad_err = grad_err.max(fd_error(xs, &gs, fs)).max(fd_error(xd, &gd, fd));
                grad_cases += 2;
            }
            for reduce in [Reduce::Sum, Reduce::Mean] {
                let r = random_matrix(&mut rng, nd, d);
                let er = EmbeddingMatrix::from(r.clone());
                let ge = spmm_backward(&g, dir, reduce, &er, &o)?;
                let gew = spmm_backward_weighted(&g, dir, reduce, &w, &er, &o)?;
                let gs = spmm_backward_source(&g, dir, reduce, &er, &o)?;
                let gsw = spmm_backward_source_weighted(&g, dir, reduce, &w, &er, &o)?;
                grad_err = grad_err
                    .max(fd_error(&msgs, &ge, |m| spmm_loss(&g, dir, true, m, None, reduce, &r)))
                    .max(fd_error(&msgs, &gew, |m| spmm_loss(&g, dir, true, m, Some(&w), reduce, &r)))
                    .max(fd_error(xs, &gs, |x| spmm_loss(&g, dir, false, x, None, reduce, &r)))
                    .max(fd_error(xs, &gsw, |x| spmm_loss(&g, dir, false, x, Some(&w), reduce, &r)));
                grad_cases += 4;
            }
            let er = EmbeddingMatrix::from(random_matrix(&mut rng, nd, d));
            max_rejected &= spmm_backward(&g, dir, Reduce::Max, &er, &o).is_err();
        }
    }
    Ok(Outcome::check(
        forward_err <= 1e-6 && forward_f32_rel <= 1e-6 && grad_err <= 1e-4 && max_rejected,
        format!(
            "{cases} forward cases, max abs err {forward_err:.1e} (f32 sddmm rel {forward_f32_rel:.1e}); \
             {grad_cases} gradient cases, max FD rel err {grad_err:.1e}; max-reduce backward rejected: {max_rejected}"
        ),
    ))
}

fn kronecker() -> Fallible<Outcome> {
    let g = power_law_communities(&SynthConfig {
        users: 2000,
        items: 1500,
        target_edges: 20_000,
        communities: 10,
        seed: 4,
        ..Default::default()
    })?;
    let pct = |d: f64| format!("{:.3}", d * 100.0);
    let mut ok = true;
    let mut notes = Vec::new();
    for k in [2usize, 3, 5] {
        let out = expand(&g, &SeedBlock::ones(k)?, &KronOptions::default())?;
        let sizes = out.num_edges() == g.num_edges() * k * k
            && out.num_users() == g.num_users() * k
            && out.num_items() == g.num_items() * k;
        let density = pct(out.density()) == pct(g.density());
        let mut slope_gap: f64 = 0.0;
        for side in [Side::User, Side::Item] {
            let before = degree_histogram(&g, side).log_log_slope().ok_or("no slope")?;
            let after = degree_histogram(&out, side).log_log_slope().ok_or("no slope")?;
            slope_gap = slope_gap.max((before - after).abs());
        }
        ok &= sizes && density && slope_gap <= 0.05;
        notes.push(format!("k={k} sizes {sizes} density {}%->{}% slope gap {slope_gap:.3}", pct(g.density()), pct(out.density())));
    }
    // Dataset table rows: movielens-10m -> m-x25 (5x5) and m-x100 (10x10).
    let ml = (69_878u64, 10_677u64, 10_000_054u64);
    for (name, k, users, items, edges_m) in [("m-x25", 5, 349, 53, 250), ("m-x100", 10, 699, 107, 1000)] {
        let m = ExpandManifest::plan(ml.0, ml.1, ml.2, &SeedBlock::ones(k)?)?;
        let thousands = |n: u64| (n as f64 / 1000.0).round() as u64;
        let row = thousands(m.output_users) == users
            && thousands(m.output_items) == items
            && (m.output_edges as f64 / 1e6).round() as u64 == edges_m
            && format!("{:.2}", m.input_density() * 100.0) == "1.34"
            && format!("{:.2}", m.output_density() * 100.0) == "1.34";
        ok &= row;
        notes.push(format!(
            "{name}: {}/{}/{}M {:.2}%->{:.2}%",
            m.output_users,
            m.output_items,
            m.output_edges / 1_000_000,
            m.input_density() * 100.0,
            m.output_density() * 100.0
        ));
    }
    Ok(Outcome::check(ok, notes.join("; ")))
}

fn training_graph() -> Fallible<(BipartiteGraph, String)> {
    match std::env::var_os("GNNREC_DATASET") {
        Some(p) => Ok((BipartiteGraph::load_any(&p)?, Path::new(&p).display().to_string())),
        None => Ok((power_law_communities(&SynthConfig::default())?, "synthetic power-law graph".into())),
    }
}

fn training_behavior() -> Fallible<Outcome> {
    let t = Instant::now();
    let (g, name) = training_graph()?;
    let (train, test) = split_train_test(&g, 0.9, 0)?;
    let model = ModelConfig::new(ModelKind::LightGcn, 2, 64)?.with_normalization(true);
    let config = TrainConfig {
        large_batch: 10_000,
        epochs: 100,
        ..Default::default()
    };
    let k = KernelConfig::default();
    let mut params = ModelParams::init(&model, g.num_users(), g.num_items(), 0)?;
    let log = Trainer::new(&train, model.clone(), config).fit(&mut params, &mut NullMetrics)?;
    let (fin, _) = model_forward(&train, &params, &model, &k)?;
    let recall = recall_at_k(&fin.users, &fin.items, &train, &test, 20)?.recall;
    let baseline = random_baseline_recall(&train, &test, 20)?;
    let losses = log.losses();
    let (first, last) = (losses[0], *losses.last().ok_or("no epochs")?);

    let mut sampled = Vec::new();
    for s in [3usize, 10, 30] {
        let mut total = 0.0;
        for seed in 0..5 {
            let f = sampled_forward(&train, &params, &model, s, seed, &k)?;
            total += recall_at_k(&f.users, &f.items, &train, &test, 20)?.recall;
        }
        sampled.push((s, total / 5.0));
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = recall >= 5.0 * baseline && last < 0.5 * first && sampled.iter().all(|&(_, r)| r <= recall) && secs < 1800.0;
    let sampled_txt: Vec<String> = sampled.iter().map(|(s, r)| format!("s={s}:{r:.4}")).collect();
    Ok(Outcome::check(
        ok,
        format!(
            "{name} ({} edges): recall@20 {recall:.4} vs baseline {baseline:.4} ({:.1}x), loss {first:.4}->{last:.4}, \
             sampled {} , {secs:.0}s",
            g.num_edges(),
            recall / baseline,
            sampled_txt.join(" ")
        ),
    ))
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gnnrec"))
}

fn small_graph_file(dir: &Path) -> Fallible<std::path::PathBuf> {
    let g = power_law_communities(&SynthConfig {
        users: 300,
        items: 200,
        target_edges: 4000,
        communities: 5,
        seed: 9,
        ..Default::default()
    })?;
    let path = dir.join("small.tsv");
    write_edge_list(&g, &path)?;
    Ok(path)
}

fn run_train(graph: &Path, out: &Path, extra: &[&str]) -> Fallible<String> {
    let status = bin()
        .args(["train", "--graph"])
        .arg(graph)
        .arg("--out-dir")
        .arg(out)
        .args(extra)
        .output()?;
    if !status.status.success() {
        return Err(format!("train failed: {}", String::from_utf8_lossy(&status.stderr)).into());
    }
    Ok(std::fs::read_to_string(out.join("metrics.csv"))?)
}

/// `(epoch, batch, lr, loss)` per metrics row.
fn metric_rows(csv: &str) -> Vec<(usize, usize, f64, f64)> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap(), f[4].parse().unwrap())
        })
        .collect()
}

fn schedule_fidelity() -> Fallible<Outcome> {
    let c = TrainConfig {
        large_batch: 150_000,
        ..Default::default()
    };
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs();
    let mut ok = true;
    let mut seen = Vec::new();
    for epoch in 0..5 {
        let batch = batch_schedule(&c, epoch);
        let lr = scaled_lr(c.base_lr, c.base_batch, batch, LrScaling::Linear);
        let (want_b, want_lr) = if epoch < 2 { (15_000, 1.5e-3) } else { (150_000, 1.5e-2) };
        ok &= batch == want_b && close(lr, want_lr);
        seen.push(format!("{epoch}:({batch},{lr:e})"));
    }

    let dir = tempfile::tempdir()?;
    let graph = small_graph_file(dir.path())?;
    let csv = run_train(
        &graph,
        &dir.path().join("run"),
        &["--model", "lightgcn", "--layers", "2", "--dim", "128", "--large-batch", "150000", "--epochs", "3", "--eval-every", "0"],
    )?;
    let mut per_epoch: HashMap<usize, (usize, f64)> = HashMap::new();
    for (epoch, batch, lr, _) in metric_rows(&csv) {
        per_epoch.insert(epoch, (batch, lr));
    }
    for epoch in 0..3 {
        let (want_b, want_lr) = if epoch < 2 { (15_000, 1.5e-3) } else { (150_000, 1.5e-2) };
        let got = per_epoch.get(&epoch).copied();
        ok &= got.is_some_and(|(b, lr)| b == want_b && close(lr, want_lr));
    }
    Ok(Outcome::check(ok, format!("schedule {}; metrics.csv per epoch {per_epoch:?}", seen.join(" "))))
}

fn subset(a: &[u32], b: &[u32]) -> bool {
    a.iter().all(|x| b.binary_search(x).is_ok())
}

fn redundancy() -> Fallible<Outcome> {
    let path = BipartiteGraph::from_edges(2, 2, [(0, 0), (1, 0), (1, 1)])?;
    let r = redundancy_of(&path, &[vec![Vertex::Item(0)], vec![Vertex::Item(1)]], &Expansion::new(2, None, 0))?;
    let hand = r.ratio_vertices == 1.75;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut containment, mut below_one, mut budget, mut duplicates, mut ratio_in_l) = (0, 0, 0, 0, 0);
    let mut example = None;
    for case in 0..500u64 {
        let users = rng.random_range(2..=12);
        let items = rng.random_range(2..=12);
        let p = rng.random_range(0.1..0.5);
        let g = random_graph(&mut rng, users, items, p);
        let workers = rng.random_range(1..=4);
        let groups: Vec<Vec<Vertex>> = (0..workers)
            .map(|_| {
                (0..rng.random_range(1..=3))
                    .map(|_| {
                        if rng.random_bool(0.5) {
                            Vertex::User(rng.random_range(0..users as u32))
                        } else {
                            Vertex::Item(rng.random_range(0..items as u32))
                        }
                    })
                    .collect()
            })
            .collect();
        let l = rng.random_range(0..=2);
        let s = rng.random_range(1..=3);
        let lo = redundancy_of(&g, &groups, &Expansion::new(l, None, case))?;
        let hi = redundancy_of(&g, &groups, &Expansion::new(l + 1, None, case))?;
        let sampled = redundancy_of(&g, &groups, &Expansion::new(l + 1, Some(s), case))?;
        for w in 0..workers {
            let (a, b, c) = (&lo.footprints[w], &hi.footprints[w], &sampled.footprints[w]);
            if !(subset(&a.vertex_set, &b.vertex_set)
                && subset(&a.edge_set, &b.edge_set)
                && subset(&c.vertex_set, &b.vertex_set)
                && subset(&c.edge_set, &b.edge_set))
            {
                containment += 1;
            }
        }
        for r in [&lo, &hi, &sampled] {
            if r.ratio_vertices < 1.0 || r.ratio_edges < 1.0 {
                below_one += 1;
            }
        }
        if hi.duplicate_vertices() < lo.duplicate_vertices() {
            duplicates += 1;
        }
        if hi.ratio_vertices < lo.ratio_vertices {
            ratio_in_l += 1;
            example.get_or_insert(format!(
                "case {case}: L={l} ratio {:.3} -> L={} ratio {:.3}",
                lo.ratio_vertices,
                l + 1,
                hi.ratio_vertices
            ));
        }
        let exp = Expansion::new(l + 1, Some(s), case);
        let full = subgraph_footprint(&g, &[Vertex::User(0)], &exp)?.estimated_bytes;
        let workers = workers.min(g.num_edges());
        let b1 = rng.random_range(1..=full * 4);
        let b2 = b1 + rng.random_range(0..=full * 4);
        if max_batch_under_budget(&g, b1, workers, &exp)? > max_batch_under_budget(&g, b2, workers, &exp)? {
            budget += 1;
        }
    }
    let slash = max_batch_under_budget(&path, 16, 1, &Expansion::new(2, None, 0))?;
    let ok = hand && containment == 0 && below_one == 0 && budget == 0 && duplicates == 0 && ratio_in_l == 0 && slash == 0;
    Ok(Outcome::check(
        ok,
        format!(
            "path ratio {}; 500 instances: containment violations {containment}, ratio<1 {below_one}, \
             budget monotonicity violations {budget}, duplicate-count drops in L {duplicates}, \
             ratio drops in L {ratio_in_l}{}; tiny budget max batch {slash}",
            r.ratio_vertices,
            example.map(|e| format!(" (first: {e})")).unwrap_or_default()
        ),
    ))
}

fn accounting_holds(r: &BenchRecord) -> bool {
    let s = &r.spec;
    let per_rep = match s.pattern {
        AccessPattern::Sequential => (s.region_bytes / s.threads / s.access_size * s.access_size * s.threads) as u64,
        AccessPattern::Random => {
            let blocks = s.region_bytes / s.threads / s.access_size;
            (s.random_accesses.unwrap_or(blocks) * s.access_size * s.threads) as u64
        }
    };
    let product = r.bytes_per_sec * r.elapsed_secs;
    r.bytes_moved == per_rep * s.repetitions as u64 && (product - r.bytes_moved as f64).abs() <= 1e-9 * r.bytes_moved as f64
}

fn membench() -> Fallible<Outcome> {
    let base = BenchSpec {
        repetitions: 3,
        ..Default::default()
    };
    let sizes = [64usize, 128, 256, 512, 1024, 2048, 4096];
    let mut records = Vec::new();
    let mut sweep = |op: MemOp| -> Fallible<Vec<f64>> {
        let mut out = Vec::new();
        for &size in &sizes {
            let r = run_bench(&BenchSpec {
                pattern: AccessPattern::Random,
                op,
                access_size: size,
                ..base.clone()
            })?;
            out.push(r.gbps());
            records.push(r);
        }
        Ok(out)
    };
    let write = sweep(MemOp::Write)?;
    let read = sweep(MemOp::Read)?;
    let monotone = write.windows(2).all(|w| w[1] >= w[0]);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(",");

    let cpus = available_cpus();
    let threads_note;
    let mut threads_ok = true;
    if cpus >= 2 {
        let seq = |threads| {
            run_bench(&BenchSpec {
                access_size: 4096,
                threads,
                ..base.clone()
            })
        };
        let one = seq(1)?;
        let many = seq(cpus.min(4))?;
        threads_ok = many.gbps() >= one.gbps();
        threads_note = format!("sequential read 1 thread {:.2} GB/s, {} threads {:.2} GB/s", one.gbps(), cpus.min(4), many.gbps());
        records.push(one);
        records.push(many);
    } else {
        threads_note = format!("only {cpus} CPU available, thread scaling not measurable");
    }
    let accounting = records.iter().all(accounting_holds);
    let detail = format!(
        "accounting exact on {} records: {accounting}; random write GB/s 64..4096 [{}] non-decreasing: {monotone}; \
         random read GB/s (informational) [{}]; {threads_note}",
        records.len(),
        fmt(&write),
        fmt(&read)
    );
    if !(accounting && monotone && threads_ok) {
        return Ok(Outcome::check(false, detail));
    }
    let status = if cpus >= 2 { Status::Pass } else { Status::Skip };
    Ok(Outcome { status, detail })
}

fn epoch_losses(csv: &str) -> Vec<f64> {
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for (epoch, _, _, loss) in metric_rows(csv) {
        if sums.len() <= epoch {
            sums.resize(epoch + 1, (0.0, 0));
        }
        sums[epoch].0 += loss;
        sums[epoch].1 += 1;
    }
    sums.into_iter().map(|(s, n)| s / n as f64).collect()
}

fn determinism() -> Fallible<Outcome> {
    let dir = tempfile::tempdir()?;
    let graph = small_graph_file(dir.path())?;
    let mut notes = Vec::new();
    let mut ok = true;
    for workers in ["1", "2"] {
        let args = ["--epochs", "4", "--seed", "7", "--workers", workers, "--dim", "16", "--eval-every", "0"];
        let a = epoch_losses(&run_train(&graph, &dir.path().join(format!("a{workers}")), &args)?);
        let b = epoch_losses(&run_train(&graph, &dir.path().join(format!("b{workers}")), &args)?);
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
        ok &= a.len() == 4 && a.len() == b.len() && worst <= 1e-5;
        notes.push(format!("workers {workers}: {} epochs, max rel diff {worst:.1e}", a.len()));
    }

    let g = power_law_communities(&SynthConfig {
        users: 300,
        items: 200,
        target_edges: 4000,
        communities: 5,
        seed: 9,
        ..Default::default()
    })?;
    let mut samplers = Vec::new();
    let mut same = |name: &str, eq: bool| {
        samplers.push(format!("{name}={eq}"));
        eq
    };
    let synth_cfg = SynthConfig { seed: 3, users: 200, items: 150, target_edges: 2000, communities: 4, ..Default::default() };
    ok &= same("synth", power_law_communities(&synth_cfg)? == power_law_communities(&synth_cfg)?);
    ok &= same("split", split_train_test(&g, 0.8, 5)? == split_train_test(&g, 0.8, 5)?);
    let bpr = |seed| sample_bpr_batch(&g, 500, &mut ChaCha8Rng::seed_from_u64(seed));
    ok &= same("bpr", bpr(11)? == bpr(11)?);
    let kron = KronOptions {
        permute_seed: Some(5),
        ..Default::default()
    };
    ok &= same("kron-permute", expand(&g, &SeedBlock::ones(2)?, &kron)? == expand(&g, &SeedBlock::ones(2)?, &kron)?);
    let exp = Expansion::new(2, Some(3), 13);
    let groups = [vec![Vertex::User(1), Vertex::Item(4)], vec![Vertex::User(7)]];
    ok &= same("neighbor-sampling", redundancy_of(&g, &groups, &exp)? == redundancy_of(&g, &groups, &exp)?);
    let model = ModelConfig::new(ModelKind::LightGcn, 2, 8)?;
    let params = ModelParams::<f32>::init(&model, g.num_users(), g.num_items(), 1)?;
    let k = KernelConfig::default();
    let bits = |seed| -> Fallible<Vec<u32>> {
        let f = sampled_forward(&g, &params, &model, 2, seed, &k)?;
        Ok(f.users.as_slice().iter().chain(f.items.as_slice()).map(|x| x.to_bits()).collect())
    };
    ok &= same("sampled-forward", bits(4)? == bits(4)?);
    let bench = BenchSpec {
        pattern: AccessPattern::Random,
        seed: 17,
        ..Default::default()
    };
    ok &= same("membench-random", bench.access_sequence(1, 1 << 16) == bench.clone().access_sequence(1, 1 << 16));
    let init = |seed| ModelParams::<f32>::init(&model, 50, 40, seed).map(|p| p.tensors().into_iter().flat_map(|m| m.as_slice().to_vec()).map(f32::to_bits).collect::<Vec<_>>());
    ok &= same("param-init", init(2)? == init(2)?);
    notes.push(format!("samplers byte-identical: {}", samplers.join(" ")));
    Ok(Outcome::check(ok, notes.join("; ")))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("dataflow-equivalence", dataflow_equivalence),
        ("complexity-counters", complexity_counters),
        ("kernel-oracles", kernel_oracles),
        ("kronecker", kronecker),
        ("training-behavior", training_behavior),
        ("schedule-fidelity", schedule_fidelity),
        ("redundancy-analyzer", redundancy),
        ("membench-properties", membench),
        ("determinism", determinism),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let n = n + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(Ok(o)) => o,
            Ok(Err(e)) => Outcome::check(false, format!("error: {e}")),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Outcome::check(false, format!("panic: {msg}"))
            }
        };
        let tag = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!("{tag} {n} {name}: {}", outcome.detail);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
