use std::sync::Arc;

use hilrag_core::embed::{Embedder, Encoder, HashEmbedder};
use hilrag_core::eval::triplet_accuracy;
use hilrag_core::fixtures::separable_triplets;
use hilrag_core::train::{train_adapter, LossKind, TrainingConfig};

fn config(use_negatives: bool) -> TrainingConfig {
    TrainingConfig {
        loss: LossKind::Triplet,
        margin: 0.5,
        learning_rate: 0.1,
        epochs: 20,
        batch_size: 32,
        seed: 7,
        use_negatives,
    }
}

#[test]
fn separable_fixture_trains_and_ablation_holds() {
    let f = separable_triplets(128, 200, 200, 7);
    let base: Arc<dyn Embedder> = Arc::new(HashEmbedder::new(f.dimension).unwrap());
    let untrained = triplet_accuracy(&Encoder::new(base.clone()), &f.benchmark).unwrap();

    let with = train_adapter(base.clone(), &f.train, &config(true), Some(&f.benchmark)).unwrap();
    let without = train_adapter(base.clone(), &f.train, &config(false), None).unwrap();
    let acc = |m| {
        triplet_accuracy(
            &Encoder::new(base.clone()).with_adapter(m).unwrap(),
            &f.benchmark,
        )
        .unwrap()
    };
    let with_acc = acc(with.model.clone());
    let without_acc = acc(without.model);

    assert!(with_acc.accuracy >= 0.95, "{with_acc}");
    assert!(with_acc.accuracy >= untrained.accuracy + 0.15);
    assert!(with_acc.accuracy >= without_acc.accuracy);
    assert!(without_acc.accuracy >= untrained.accuracy);

    let losses = &with.history.epoch_loss;
    assert_eq!(losses.len(), 20);
    assert!(losses.last().unwrap() <= losses.first().unwrap());
    let per_epoch = with.history.epoch_accuracy.as_ref().unwrap();
    assert_eq!(per_epoch.last().copied(), Some(with_acc.accuracy));
}

#[test]
fn retraining_is_bit_identical() {
    let f = separable_triplets(64, 60, 10, 3);
    let base: Arc<dyn Embedder> = Arc::new(HashEmbedder::new(64).unwrap());
    let cfg = TrainingConfig {
        epochs: 3,
        ..config(true)
    };
    let a = train_adapter(base.clone(), &f.train, &cfg, None).unwrap();
    let b = train_adapter(base, &f.train, &cfg, None).unwrap();
    let bits =
        |m: &hilrag_core::AdapterModel| m.weights().iter().map(|w| w.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.model), bits(&b.model));
}
