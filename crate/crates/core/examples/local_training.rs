//! Trains two local models on different halves of the digits, averages
//! them by validation score, and checks the gradients of the network.
//!
//! cargo run --release --example local_training

use dagfed::dataset::{digits, split_train_test};
use dagfed::model::{aggregate, evaluate, gradient_check, train, Architecture, Network, TrainingSettings};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (train_set, test) = split_train_test(&digits(), 0.7, 3)?;
    let arch = Architecture::tanh_mlp(train_set.dim(), &[64], 10);
    let net = Network::new(&arch)?;
    let start = net.init_weights(11);
    println!(
        "{} parameters, untrained accuracy {:.3}",
        start.param_count(),
        evaluate(&net, &start, &test)
    );

    let half = train_set.len() / 2;
    let left = train_set.subset(&(0..half).collect::<Vec<_>>());
    let right = train_set.subset(&(half..train_set.len()).collect::<Vec<_>>());
    let rho = TrainingSettings::sgd(5, 0.1, 16, 99);
    let wl = train(&net, &start, &rho, &left)?;
    let wr = train(&net, &start, &rho.with_seed(100), &right)?;
    let (al, ar) = (evaluate(&net, &wl, &test), evaluate(&net, &wr, &test));
    println!("left {al:.3}, right {ar:.3}");

    let merged = aggregate(&[(&wl, al), (&wr, ar)])?;
    println!("weighted average {:.3}", evaluate(&net, &merged, &test));

    // Same settings, same data, same start: bit-identical weights.
    let again = train(&net, &start, &rho, &left)?;
    println!("retrain digest matches: {}", again.digest() == wl.digest());

    let batch = test.subset(&(0..8).collect::<Vec<_>>());
    println!("max relative gradient error {:.2e}", gradient_check(&arch, &batch, 5));
    Ok(())
}
