//! Unit-test fixtures, shared with the runtime property suite.

pub(crate) use crate::harness::random::{
    bump_pair, column_density, flat_pair, rng_for, uniform_field, wind_with_closed_boundaries,
};
