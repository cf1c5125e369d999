//! The benchmark targets shipped with the repository.

use crate::error::Result;
use crate::target::DiscreteTarget;
use crate::Scalar;

const SINGLE_POINT: &str = include_str!("../../../benchmarks/single_point.json");
const TWO_POINT: &str = include_str!("../../../benchmarks/two_point.json");
const FIVE_POINT_D3: &str = include_str!("../../../benchmarks/five_point_d3.json");
const RANDOM16_D8: &str = include_str!("../../../benchmarks/random16_d8.json");

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 4] = ["single_point", "two_point", "five_point_d3", "random16_d8"];

/// Dirac mass at 0.5 in one dimension.
pub fn single_point<T: Scalar>() -> DiscreteTarget<T> {
    DiscreteTarget::from_json(SINGLE_POINT).expect("shipped benchmark parses")
}

/// Equal-weight pair at -0.5 and +0.5 in one dimension (R = 1).
pub fn two_point<T: Scalar>() -> DiscreteTarget<T> {
    DiscreteTarget::from_json(TWO_POINT).expect("shipped benchmark parses")
}

/// Asymmetric five-point target in three dimensions.
pub fn five_point_d3<T: Scalar>() -> DiscreteTarget<T> {
    DiscreteTarget::from_json(FIVE_POINT_D3).expect("shipped benchmark parses")
}

/// Sixteen uniform-weight points in eight dimensions.
pub fn random16_d8<T: Scalar>() -> DiscreteTarget<T> {
    DiscreteTarget::from_json(RANDOM16_D8).expect("shipped benchmark parses")
}

pub fn by_name<T: Scalar>(name: &str) -> Option<DiscreteTarget<T>> {
    match name {
        "single_point" => Some(single_point()),
        "two_point" => Some(two_point()),
        "five_point_d3" => Some(five_point_d3()),
        "random16_d8" => Some(random16_d8()),
        _ => None,
    }
}

pub fn all<T: Scalar>() -> Vec<(&'static str, DiscreteTarget<T>)> {
    NAMES
        .iter()
        .map(|&n| (n, by_name(n).expect("known name")))
        .collect()
}

/// Dirac mass at `y`.
pub fn point_mass<T: Scalar>(y: &[T]) -> Result<DiscreteTarget<T>> {
    DiscreteTarget::new(y.len(), &[y.to_vec()], None)
}

/// Equal-weight pair at `-a e_1` and `+a e_1` in `dim` dimensions.
pub fn symmetric_pair<T: Scalar>(a: T, dim: usize) -> Result<DiscreteTarget<T>> {
    let mut lo = vec![T::zero(); dim];
    let mut hi = vec![T::zero(); dim];
    lo[0] = -a;
    hi[0] = a;
    DiscreteTarget::new(dim, &[lo, hi], None)
}
