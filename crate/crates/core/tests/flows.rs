use relgrad_core::data::{self, SplitSizes, ToyKind};
use relgrad_core::invert;
use relgrad_core::linalg::Rng;
use relgrad_core::model::{init_network, BaseDistribution, Nonlinearity};
use relgrad_core::train::{self, Optimizer, TrainConfig, TrainReport};
use relgrad_core::{Error, GradientFlavor};

fn mog_run(
    flavor: GradientFlavor,
    bd: BaseDistribution,
    epochs: usize,
) -> (TrainReport, data::Dataset) {
    let sizes = SplitSizes {
        train: 2000,
        validation: 500,
        test: 1000,
    };
    let ds = data::toy_dataset(ToyKind::Mog, &mut Rng::new(21), sizes);
    let net = init_network(
        &mut Rng::new(22),
        2,
        8,
        Nonlinearity::default(),
        true,
        false,
        None,
    )
    .unwrap();
    let cfg = TrainConfig {
        optimizer: Optimizer::adam(5e-3),
        max_epochs: epochs,
        eval_every: 10,
        patience: usize::MAX,
        gradient_flavor: flavor,
        base_distribution: bd,
        ..TrainConfig::default()
    };
    (train::train(net, &ds, &cfg).unwrap(), ds)
}

#[test]
fn samples_are_consistent_with_model_density() {
    let bd = BaseDistribution::StandardNormal;
    let (report, ds) = mog_run(GradientFlavor::RelativeRight, bd, 300);
    let test_nll = train::evaluate(&report.best, bd, &ds.test).unwrap();
    let samples = invert::sample(&report.best, bd, &mut Rng::new(5), 20_000).unwrap();
    let sample_nll = train::evaluate(&report.best, bd, &samples).unwrap();
    assert!(
        (sample_nll - test_nll).abs() <= 0.1,
        "samples {sample_nll}, test {test_nll}"
    );
}

#[test]
fn every_flavor_and_base_learns() {
    for flavor in [
        GradientFlavor::Ordinary,
        GradientFlavor::RelativeRight,
        GradientFlavor::RelativeLeft,
    ] {
        for bd in [
            BaseDistribution::StandardNormal,
            BaseDistribution::HyperbolicSecant,
        ] {
            let (report, _) = mog_run(flavor, bd, 30);
            let first = report.train_nll[0];
            let best = report.best_validation_nll;
            assert!(best < first - 0.3, "{flavor} {bd:?}: {first} -> {best}");
            let min = report
                .validation
                .iter()
                .map(|e| e.nll)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(best, min);
        }
    }
}

#[test]
fn divergent_training_aborts_with_last_good_snapshot() {
    let ds = data::toy_dataset(
        ToyKind::Sine,
        &mut Rng::new(1),
        SplitSizes {
            train: 200,
            validation: 50,
            test: 50,
        },
    );
    let net = init_network(
        &mut Rng::new(2),
        2,
        3,
        Nonlinearity::default(),
        true,
        false,
        None,
    )
    .unwrap();
    let cfg = TrainConfig {
        optimizer: Optimizer::sgd(1e6),
        batch_size: 200,
        max_epochs: 50,
        gradient_flavor: GradientFlavor::Ordinary,
        ..TrainConfig::default()
    };
    match train::train(net, &ds, &cfg) {
        Err(Error::TrainingAborted { last_good, .. }) => {
            let nll = train::evaluate(&last_good, BaseDistribution::StandardNormal, &ds.validation)
                .unwrap();
            assert!(nll.is_finite());
        }
        other => panic!("expected an abort, got {:?}", other.map(|r| r.epochs_run)),
    }
}
