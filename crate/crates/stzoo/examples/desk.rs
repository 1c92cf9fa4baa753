//! Train one TinyNet model on a synthetic task and print held-out accuracy.
//!
//! cargo run --release --example desk -- direction TAM
//! cargo run --release --example desk -- adjacency TSN tp 3

use std::time::Instant;

use anyhow::{bail, Context};
use stzoo::datapipe::Task;
use stzoo::desk::{self, DeskConfig};
use stzoo_core::{ArchSpec, Backbone, Family};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (task, family) = match (args.first().map(String::as_str), args.get(1)) {
        (Some("direction"), Some(f)) => (Task::Direction, f),
        (Some("adjacency"), Some(f)) => (Task::Adjacency, f),
        _ => bail!("usage: desk <direction|adjacency> <family> [tp] [seed]"),
    };
    let family: Family = family.parse()?;
    let rest = &args[2..];
    let tp = rest.iter().any(|a| a == "tp");
    let mut cfg = DeskConfig::new(task);
    if let Some(seed) = rest.iter().find(|a| *a != "tp") {
        cfg.seed = seed.parse().context("seed")?;
    }
    let start = Instant::now();
    let spec = ArchSpec::new(family, Backbone::TinyNet, cfg.frames, 2).with_temporal_pool(tp);
    let name = spec.canonical_name()?;
    let r = desk::run(spec, &cfg)?;
    let last = r.train.log.last().context("no epochs")?;
    println!(
        "{task:?} {name}: train loss {:.4} top1 {:.1}, test top1 {:.1} ({:.1}s)",
        last.loss,
        last.top1,
        r.test_top1,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
