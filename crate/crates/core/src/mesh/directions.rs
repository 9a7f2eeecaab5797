use super::{norm, MeshError};
use crate::ids::AngleId;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction {
    /// Unit vector.
    pub omega: [f64; 3],
    pub weight: f64,
}

/// An angular quadrature: unit directions with positive weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionSet {
    order: Option<usize>,
    directions: Vec<Direction>,
}

impl DirectionSet {
    /// Wraps an explicit set, normalizing nothing.
    pub fn new(directions: Vec<Direction>) -> Result<Self, MeshError> {
        if directions.is_empty() {
            return Err(MeshError::Argument("direction set is empty".into()));
        }
        for (m, d) in directions.iter().enumerate() {
            if (norm(d.omega) - 1.0).abs() > 1e-12 {
                return Err(MeshError::Argument(format!(
                    "direction {m} is not a unit vector"
                )));
            }
            if !(d.weight > 0.0) {
                return Err(MeshError::Argument(format!(
                    "direction {m} has non-positive weight"
                )));
            }
        }
        let total: f64 = directions.iter().map(|d| d.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MeshError::Argument(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            order: None,
            directions,
        })
    }

    pub fn order(&self) -> Option<usize> {
        self.order
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn get(&self, angle: AngleId) -> &Direction {
        &self.directions[angle.index()]
    }

    pub fn omega(&self, angle: AngleId) -> [f64; 3] {
        self.directions[angle.index()].omega
    }

    pub fn iter(&self) -> impl Iterator<Item = (AngleId, &Direction)> {
        self.directions
            .iter()
            .enumerate()
            .map(|(m, d)| (AngleId::new(m), d))
    }

    pub fn angles(&self) -> impl Iterator<Item = AngleId> {
        (0..self.directions.len()).map(AngleId::new)
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = super::Fnv::default();
        for d in &self.directions {
            for x in d.omega {
                h.write_u64(x.to_bits());
            }
            h.write_u64(d.weight.to_bits());
        }
        h.finish()
    }
}

/// Level-symmetric `S_n` set with `n(n+2)` directions and uniform weights.
///
/// Per octant the points are the index triples `i + j + k = n/2 + 2` over
/// direction cosines `mu_i^2 = mu_1^2 + (i - 1) * delta` with
/// `mu_1^2 = 1 / (3 * n/2)`. Octants are enumerated by sign bits
/// `(x, y, z) = (bit0, bit1, bit2)`, positive first.
pub fn level_symmetric_directions(n: usize) -> Result<DirectionSet, MeshError> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(MeshError::Argument(format!(
            "S_n order must be even and ≥ 2, got {n}"
        )));
    }
    let half = n / 2;
    let mu1_sq = 1.0 / (3.0 * half as f64);
    let delta = if half > 1 {
        (1.0 - 3.0 * mu1_sq) / (half as f64 - 1.0)
    } else {
        0.0
    };
    let mu: Vec<f64> = (0..half)
        .map(|i| (mu1_sq + i as f64 * delta).sqrt())
        .collect();

    let mut octant_points = Vec::new();
    for i in 0..half {
        for j in 0..half {
            for k in 0..half {
                if i + j + k == half - 1 {
                    let v = [mu[i], mu[j], mu[k]];
                    let len = norm(v);
                    octant_points.push([v[0] / len, v[1] / len, v[2] / len]);
                }
            }
        }
    }
    let count = n * (n + 2);
    debug_assert_eq!(octant_points.len() * 8, count);
    let weight = 1.0 / count as f64;

    let mut directions = Vec::with_capacity(count);
    for octant in 0..8u32 {
        let sign = |bit: u32| if octant & (1 << bit) == 0 { 1.0 } else { -1.0 };
        for p in &octant_points {
            directions.push(Direction {
                omega: [sign(0) * p[0], sign(1) * p[1], sign(2) * p[2]],
                weight,
            });
        }
    }
    let mut set = DirectionSet::new(directions)?;
    set.order = Some(n);
    Ok(set)
}
