//! Build an engine config in code, print its canonical file form and
//! parse it back.

use gnnrec::config::EngineConfig;
use gnnrec::models::ModelKind;

fn main() -> gnnrec::Result<()> {
    let mut cfg = EngineConfig::default();
    cfg.model.kind = ModelKind::Ngcf;
    cfg.set("model.combine", "concat")?;
    cfg.set("train.large_batch", "150000")?;
    cfg.set("kernels.workers", "4")?;
    let text = cfg.to_string();
    print!("{text}");
    assert_eq!(text.parse::<EngineConfig>()?, cfg);
    match EngineConfig::parse("model.kind = gcn") {
        Err(e) => println!("rejected: kind={} {e}", e.kind()),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
