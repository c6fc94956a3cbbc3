//! Writes labeled records drawn from a synthetic spec as JSONL, ready for
//! `pacroute calibrate` and friends.
//!
//! cargo run --example synthetic_records -- fixtures/hetero_linear.json 2000 7 records.jsonl

use std::path::PathBuf;

use pacroute::data::Record;
use pacroute::io::write_jsonl;
use pacroute::rng::substream;
use pacroute::simulation::{generate, SyntheticSpec};

fn main() -> pacroute::Result<()> {
    let mut args = std::env::args().skip(1);
    let spec_path: PathBuf = args
        .next()
        .unwrap_or_else(|| "fixtures/hetero_linear.json".into())
        .into();
    let n: usize = args.next().map_or(2000, |s| s.parse().expect("n"));
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("seed"));
    let out: PathBuf = args.next().unwrap_or_else(|| "records.jsonl".into()).into();

    let spec = SyntheticSpec::load(&spec_path)?;
    let records: Vec<Record> = generate(&spec, n, &mut substream(seed, "records"))?
        .into_iter()
        .map(|r| Record {
            id: r.id,
            group_label: r.group_label,
            // Rounded so the file stays readable.
            uncertainty: (r.uncertainty * 1e6).round() / 1e6,
            loss: Some(r.loss),
            tokens_thinking: r.tokens_thinking,
            tokens_cheap: r.tokens_cheap,
            ..Record::default()
        })
        .collect();
    write_jsonl(&out, &records)?;
    println!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}
