//! Fixtures shared by the criterion benches.

use decon_core::trainer::{init_net, TrainState};
use decon_core::{Algorithm, Datasets, DualNet, RunConfig};

pub type Batch<'a> = (Vec<(&'a [f64], usize)>, Vec<&'a [f64]>);

pub struct Fixture {
    pub cfg: RunConfig,
    pub data: Datasets,
    pub net: DualNet,
    pub state: TrainState,
}

impl Fixture {
    /// Default desk task with a freshly initialized network.
    pub fn new(algorithm: Algorithm) -> Self {
        let cfg = RunConfig { algorithm, ..RunConfig::default() };
        let data = Datasets::generate(&cfg.resolved_dataset(), cfg.test_per_class).expect("dataset");
        let net = init_net(&cfg, &data).expect("net");
        let state = TrainState::new(&cfg, &net, &data.labeled_counts).expect("state");
        Self { cfg, data, net, state }
    }

    /// The first `b` labeled and `u` unlabeled points.
    pub fn batch(&self, b: usize, u: usize) -> Batch<'_> {
        let lab = self.data.labeled.iter().cycle().take(b).map(|s| (s.x.as_slice(), s.label.unwrap_or(0))).collect();
        let unl = self.data.unlabeled.iter().cycle().take(u).map(|s| s.x.as_slice()).collect();
        (lab, unl)
    }
}
