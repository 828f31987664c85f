//! Compare the naive and optimized NGCF dataflows: outputs, gradients,
//! weight-matmul rows and wall time.

use std::time::Instant;

use gnnrec::kernels::counters::{self, KernelKind};
use gnnrec::kernels::{EmbeddingMatrix, KernelConfig, Matrix};
use gnnrec::models::{model_backward, model_forward_with, Dataflow, ModelConfig, ModelKind, ModelParams};
use gnnrec::synth::{power_law_communities, SynthConfig};

fn main() -> gnnrec::Result<()> {
    let g = power_law_communities(&SynthConfig {
        users: 2000,
        items: 1500,
        target_edges: 30_000,
        communities: 10,
        ..Default::default()
    })?;
    let model = ModelConfig::new(ModelKind::Ngcf, 3, 64)?.with_normalization(true);
    let params = ModelParams::<f32>::init(&model, g.num_users(), g.num_items(), 0)?;
    let k = KernelConfig::default();
    let ones_u = EmbeddingMatrix::from(Matrix::from_fn(g.num_users(), model.output_dim(), |_, _| 1.0));
    let ones_i = EmbeddingMatrix::from(Matrix::from_fn(g.num_items(), model.output_dim(), |_, _| 1.0));

    let mut outputs = Vec::new();
    for flow in [Dataflow::Naive, Dataflow::Optimized] {
        let before = counters::snapshot();
        let t = Instant::now();
        let (fin, cache) = model_forward_with(&g, &params, &model, &k, flow)?;
        let grads = model_backward(&g, &params, &model, &cache, &ones_u, &ones_i, &k)?;
        let stats = counters::snapshot().since(&before);
        println!(
            "{flow}: {:.2?}, matmul rows {}, sddmm-mul calls {}",
            t.elapsed(),
            stats.get(KernelKind::Matmul).rows,
            stats.get(KernelKind::SddmmMul).calls
        );
        outputs.push((fin, grads));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    println!(
        "max |diff|: users {:.2e}, items {:.2e}, first weight grad {:.2e}",
        a.0.users.max_abs_diff(&b.0.users),
        a.0.items.max_abs_diff(&b.0.items),
        a.1.tensors()[2].max_abs_diff(b.1.tensors()[2])
    );
    Ok(())
}
