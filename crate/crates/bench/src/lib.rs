//! Shared fixtures for the benchmarks.

use strb_core::{
    classical_deim_offline, greedy_rb, make_example1, sample_grid, DeimData, GreedyMode,
    GreedySettings, HighFidelityModel, NewtonSettings, RBBasis, Result,
};

/// Example 1 on an `n`-interval mesh with `steps` uniform time steps.
pub fn example1_model(n: usize, steps: usize) -> Result<HighFidelityModel> {
    HighFidelityModel::uniform(make_example1(), n, steps)
}

/// A small trained reduced model for online benchmarks.
pub struct Trained {
    pub model: HighFidelityModel,
    pub basis: RBBasis,
    pub deim: DeimData,
}

pub fn trained_example1(n: usize, steps: usize) -> Result<Trained> {
    let model = example1_model(n, steps)?;
    let train = sample_grid(&model.problem.set, &[9])?;
    let (basis, _) = greedy_rb(
        &model,
        &train,
        1e-2,
        GreedyMode::Estimator,
        &GreedySettings::default(),
    )?;
    let deim = classical_deim_offline(
        &model,
        &train,
        2 * basis.dim().max(1),
        &NewtonSettings::default(),
    )?;
    Ok(Trained { model, basis, deim })
}
