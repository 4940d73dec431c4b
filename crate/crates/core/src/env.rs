//! The interface rollouts use to drive either environment.

use crate::error::Result;
use crate::rng::Rng;
use crate::traj::{ActionToken, EnvKind, StateToken};

pub trait Environment {
    /// Full simulator state, possibly richer than what the model observes.
    type State: Clone;

    fn kind(&self) -> EnvKind;
    fn horizon(&self) -> usize;
    fn reset(&self, rng: &mut Rng) -> Self::State;
    fn observe(&self, state: &Self::State) -> StateToken;
    fn step(&self, state: &Self::State, action: &ActionToken) -> Result<(Self::State, f32)>;
}
