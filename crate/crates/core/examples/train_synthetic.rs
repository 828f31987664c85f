//! Train LightGCN on a synthetic power-law graph and report recall@20
//! against the random-ranking baseline.

use gnnrec::eval::{random_baseline_recall, recall_at_k};
use gnnrec::graph::split_train_test;
use gnnrec::models::{model_forward, ModelConfig, ModelKind, ModelParams};
use gnnrec::synth::{power_law_communities, SynthConfig};
use gnnrec::train::{NullMetrics, TrainConfig, Trainer};
use gnnrec::kernels::KernelConfig;

fn main() -> gnnrec::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let g = power_law_communities(&SynthConfig::default())?;
    let (train, test) = split_train_test(&g, 0.9, 0)?;
    println!("graph: {} users, {} items, {} edges", g.num_users(), g.num_items(), g.num_edges());
    let model = ModelConfig::new(ModelKind::LightGcn, 2, 64)?.with_normalization(arg(4, 1.0) > 0.5);
    let config = TrainConfig {
        large_batch: arg(1, 10_000.0) as usize,
        epochs: arg(2, 100.0) as usize,
        l2_coeff: arg(3, 1e-4),
        base_lr: arg(5, 1e-4),
        ..Default::default()
    };
    let mut params = ModelParams::init(&model, g.num_users(), g.num_items(), 0)?;
    let k = KernelConfig::default();
    let (fin, _) = model_forward(&train, &params, &model, &k)?;
    let untrained = recall_at_k(&fin.users, &fin.items, &train, &test, 20)?.recall;
    let t = std::time::Instant::now();
    let log = Trainer::new(&train, model.clone(), config).eval_on(&test, 20, 10).fit(&mut params, &mut NullMetrics)?;
    for e in log.epochs.iter().filter(|e| e.recall.is_some()) {
        println!("epoch {:3} batch {:6} lr {:.2e} loss {:.4} recall@20 {:.4}", e.epoch, e.batch, e.lr, e.loss, e.recall.unwrap());
    }
    let base = random_baseline_recall(&train, &test, 20)?;
    println!("untrained {untrained:.4} random {base:.4} first loss {:.4} last {:.4} in {:.1?}", log.epochs[0].loss, log.epochs.last().unwrap().loss, t.elapsed());
    Ok(())
}
