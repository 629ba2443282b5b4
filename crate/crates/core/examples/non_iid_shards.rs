//! Splits the digit set and prints each runner's label histogram, for the
//! concentrated half and the uniform half separately.
//!
//! cargo run --example non_iid_shards -- 8

use dagfed::dataset::{build_non_iid_shards, digits, split_train_test};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let shards: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(6);
    let data = digits();
    let (train, test) = split_train_test(&data, 0.75, 1)?;
    // Trim so the train set divides into 2 * shards equal pieces.
    let keep = train.len() - train.len() % (2 * shards);
    let train = train.subset(&(0..keep).collect::<Vec<_>>());
    let plan = build_non_iid_shards(&train, shards, 1)?;
    println!(
        "{} train, {} test, {} samples per shard",
        train.len(),
        test.len(),
        plan.samples_per_shard
    );

    for s in 0..shards {
        let conc = train.subset(plan.concentrated_half(s)).class_histogram();
        let unif = train.subset(plan.uniform_half(s)).class_histogram();
        println!("shard {s:>2} concentrated {conc:?}");
        println!("         uniform      {unif:?}");
    }
    Ok(())
}
