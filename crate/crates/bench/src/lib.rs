//! Fixtures shared by the benchmarks.

use maxweight_ld::{QueueSource, RateRegion, SourceModel};

/// Two identical compound-Poisson queues with unit capacities.
pub fn two_queues(lambda: f64) -> (SourceModel, RateRegion) {
    let source = QueueSource::compound_poisson(lambda, 0.01).expect("valid source");
    let model = SourceModel::identical(source, 2).expect("valid model");
    let region = RateRegion::simplex(vec![1.0, 1.0]).expect("valid region");
    (model, region)
}
