use super::streams::{domain, stream};
use crate::models::{draw_coord, Coord, Coordinates, ProcessModel};

/// Past `ω_0, ω_{-1}, …, ω_{1-depth}` number `index` under `seed`.
pub fn draw_past(model: &ProcessModel, depth: usize, seed: u64, index: u64) -> Coordinates {
    let space = model.space();
    let mut rng = stream(seed, domain::PASTS, index).rng();
    if space.is_discrete() {
        Coordinates::Indices(
            (0..depth)
                .map(|_| match draw_coord(space, &mut rng) {
                    Coord::Index(i) => i,
                    Coord::Value(_) => unreachable!(),
                })
                .collect(),
        )
    } else {
        Coordinates::Values((0..depth).map(|_| space.sample_value(&mut rng)).collect())
    }
}

/// `count` pasts covering every lag of the model.
pub fn draw_pasts(model: &ProcessModel, count: usize, seed: u64) -> Vec<Coordinates> {
    (0..count as u64).map(|i| draw_past(model, model.lag().max(1), seed, i)).collect()
}
