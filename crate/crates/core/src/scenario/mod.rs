//! Configuration, seeded randomness, and the per-round environment.
//!
//! Every random quantity in a run comes from one of four seeds (`env`,
//! `data`, `model`, `sampling`). Each seed is split into ChaCha8 streams
//! addressed by a [`Domain`] and an index, so any draw can be regenerated
//! in isolation from `(seed, domain, index)`.

mod config;
mod env;
mod partition;

pub use config::{
    db_to_linear, dbm_to_watts, linear_to_db, load_config, watts_to_dbm, AuxInit, BoundForm,
    FadingMode, ObjectiveMode, ProfileArrays, ScenarioConfig, Seeds,
};
pub use env::{
    draw_environment, draw_topology, path_loss_db, path_loss_linear, ChannelDraw, ClientProfile,
    Environment, MIN_DISTANCE_M,
};
pub use partition::{dirichlet_proportions, partition_data, synthetic_dataset, Dataset};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-streams. The discriminant selects the ChaCha stream so that
/// different domains under one seed never overlap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Topology = 1,
    Round = 2,
    Positions = 3,
    Dataset = 10,
    Partition = 11,
    Batches = 12,
    ModelInit = 20,
    Probe = 30,
    MonteCarlo = 40,
    AuxInit = 50,
}

/// A deterministic RNG for `(seed, domain, index)`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 48) ^ index);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, Domain::Round, 3), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, Domain::Round, 3), |r, _| Some(r.random())).collect();
        let c: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, Domain::Round, 4), |r, _| Some(r.random())).collect();
        let d: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, Domain::Probe, 3), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
