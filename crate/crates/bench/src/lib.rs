//! Fixtures shared by the benchmarks.

use qemlab::ulam::{assemble_operator, AssemblyOptions};
use qemlab::{AnnealedMatrix, BuiltinSystem, GridPartition, NoiseModel, Result, WeightField};

/// Assembled zero-weight operator of a builtin system.
pub fn builtin_operator(
    system: BuiltinSystem,
    resolution: usize,
    epsilon: f64,
) -> Result<(AnnealedMatrix, GridPartition)> {
    let map = system.map();
    let grid = GridPartition::for_map(&map, resolution)?;
    let noise = NoiseModel::new(epsilon, map.dim)?;
    let m = assemble_operator(
        &map,
        &noise,
        &WeightField::zero(),
        &system.survivor_region(),
        &grid,
        &AssemblyOptions::default(),
    )?;
    Ok((m, grid))
}
