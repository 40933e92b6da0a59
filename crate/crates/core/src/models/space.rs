use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{LabError, Result};
use crate::numeric::{compensated_sum, gauss_legendre_16, gl_panel, CompensatedSum};

/// Continuous or Monte-Carlo-only innovation laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampler {
    Normal { std_dev: f64 },
    /// Symmetric ±1 signs drawn as values (no exact oracle).
    RademacherSampler,
    Uniform { half_width: f64 },
}

/// `∫_0^{1/2} h(u) du` with dyadic panels accumulating toward 0.
fn integrate_lower_half<F: Fn(f64) -> f64>(h: F, depth: usize) -> f64 {
    let rule = gauss_legendre_16();
    let mut acc = CompensatedSum::new();
    let mut width = 0.5;
    for _ in 0..depth {
        acc.add(gl_panel(rule, width / 2.0, width, &h));
        width /= 2.0;
    }
    acc.value()
}

fn unit() -> f64 {
    1.0
}

/// The coordinate space `(𝒳, μ)` of the product measure.
#[derive(Debug, Clone, PartialEq)]
pub enum InnovationSpace {
    Discrete {
        points: Vec<f64>,
        probs: Vec<f64>,
        cumulative: Vec<f64>,
    },
    Sampler(Sampler),
}

impl InnovationSpace {
    pub fn discrete(points: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != probs.len() {
            return Err(LabError::param(
                "probs",
                format!("{} points but {} probabilities", points.len(), probs.len()),
            ));
        }
        if points.len() > u32::MAX as usize {
            return Err(LabError::param("points", "too many atoms"));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(LabError::param("points", "must be finite"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(LabError::param("probs", "must be finite and ≥ 0"));
        }
        let total = compensated_sum(probs.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(LabError::param("probs", format!("must sum to 1 within 1e-12, got {total}")));
        }
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            cumulative.push(acc);
        }
        *cumulative.last_mut().unwrap() = f64::INFINITY;
        Ok(InnovationSpace::Discrete {
            points,
            probs,
            cumulative,
        })
    }

    /// Two equiprobable atoms `+1, -1`.
    pub fn rademacher() -> Self {
        Self::discrete(vec![1.0, -1.0], vec![0.5, 0.5]).unwrap()
    }

    pub fn normal(std_dev: f64) -> Result<Self> {
        if !(std_dev > 0.0) || !std_dev.is_finite() {
            return Err(LabError::param("std_dev", "must be finite and > 0"));
        }
        Ok(InnovationSpace::Sampler(Sampler::Normal { std_dev }))
    }

    pub fn uniform(half_width: f64) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(LabError::param("half_width", "must be finite and > 0"));
        }
        Ok(InnovationSpace::Sampler(Sampler::Uniform { half_width }))
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, InnovationSpace::Discrete { .. })
    }

    /// Number of atoms of a discrete space.
    pub fn atoms(&self) -> Option<usize> {
        match self {
            InnovationSpace::Discrete { points, .. } => Some(points.len()),
            InnovationSpace::Sampler(_) => None,
        }
    }

    pub fn points(&self) -> Option<&[f64]> {
        match self {
            InnovationSpace::Discrete { points, .. } => Some(points),
            InnovationSpace::Sampler(_) => None,
        }
    }

    pub fn probs(&self) -> Option<&[f64]> {
        match self {
            InnovationSpace::Discrete { probs, .. } => Some(probs),
            InnovationSpace::Sampler(_) => None,
        }
    }

    /// `∫ g dμ`: exact for discrete spaces, quantile-transform quadrature
    /// otherwise.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        match self {
            InnovationSpace::Discrete { points, probs, .. } => {
                compensated_sum(points.iter().zip(probs).map(|(&x, &p)| p * g(x)))
            }
            InnovationSpace::Sampler(Sampler::RademacherSampler) => 0.5 * (g(1.0) + g(-1.0)),
            InnovationSpace::Sampler(Sampler::Uniform { half_width }) => {
                let h = *half_width;
                let rule = gauss_legendre_16();
                compensated_sum((0..16).map(|k| {
                    let a = -h + k as f64 * h / 8.0;
                    gl_panel(rule, a, a + h / 8.0, &g) / (2.0 * h)
                }))
            }
            InnovationSpace::Sampler(Sampler::Normal { std_dev }) => {
                // symmetric law: pair the quantiles at u and 1 − u, u ≤ 1/2
                let s = *std_dev;
                integrate_lower_half(
                    |u| {
                        let q = s * std::f64::consts::SQRT_2 * erfc_inv(2.0 * u);
                        g(-q) + g(q)
                    },
                    60,
                )
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            InnovationSpace::Discrete { .. } => self.expect(|x| x),
            InnovationSpace::Sampler(_) => 0.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            InnovationSpace::Discrete { .. } => {
                let m = self.mean();
                self.expect(|x| (x - m) * (x - m))
            }
            InnovationSpace::Sampler(Sampler::Normal { std_dev }) => std_dev * std_dev,
            InnovationSpace::Sampler(Sampler::RademacherSampler) => 1.0,
            InnovationSpace::Sampler(Sampler::Uniform { half_width }) => half_width * half_width / 3.0,
        }
    }

    /// Index of a drawn atom (discrete spaces only).
    #[inline]
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            InnovationSpace::Discrete { cumulative, .. } => {
                let u: f64 = rng.random();
                cumulative.iter().position(|&c| u < c).unwrap() as u32
            }
            InnovationSpace::Sampler(_) => panic!("sample_index on a sampler space"),
        }
    }

    /// A drawn coordinate value.
    #[inline]
    pub fn sample_value<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            InnovationSpace::Discrete { points, .. } => points[self.sample_index(rng) as usize],
            InnovationSpace::Sampler(Sampler::Normal { std_dev }) => {
                let z: f64 = StandardNormal.sample(rng);
                std_dev * z
            }
            InnovationSpace::Sampler(Sampler::RademacherSampler) => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            InnovationSpace::Sampler(Sampler::Uniform { half_width }) => {
                half_width * (2.0 * rng.random::<f64>() - 1.0)
            }
        }
    }

    /// Index of the atom equal to `x`, if any.
    pub fn index_of(&self, x: f64) -> Option<u32> {
        self.points()?.iter().position(|&p| p == x).map(|i| i as u32)
    }
}

// JSON: {"kind": "discrete", "points": [...], "probs": [...]} | {"kind": "rademacher"}
//     | {"kind": "normal", "std_dev": s} | {"kind": "uniform", "half_width": h}
//     | {"kind": "rademacher_sampler"}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum SpaceDoc {
    Discrete { points: Vec<f64>, probs: Vec<f64> },
    Rademacher,
    Normal {
        #[serde(default = "unit")]
        std_dev: f64,
    },
    RademacherSampler,
    Uniform {
        #[serde(default = "unit")]
        half_width: f64,
    },
}

impl Serialize for InnovationSpace {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let doc = match self {
            InnovationSpace::Discrete { points, probs, .. } => SpaceDoc::Discrete {
                points: points.clone(),
                probs: probs.clone(),
            },
            InnovationSpace::Sampler(Sampler::Normal { std_dev }) => SpaceDoc::Normal { std_dev: *std_dev },
            InnovationSpace::Sampler(Sampler::RademacherSampler) => SpaceDoc::RademacherSampler,
            InnovationSpace::Sampler(Sampler::Uniform { half_width }) => SpaceDoc::Uniform {
                half_width: *half_width,
            },
        };
        doc.serialize(s)
    }
}

impl<'de> Deserialize<'de> for InnovationSpace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let space = match SpaceDoc::deserialize(d)? {
            SpaceDoc::Discrete { points, probs } => InnovationSpace::discrete(points, probs),
            SpaceDoc::Rademacher => Ok(InnovationSpace::rademacher()),
            SpaceDoc::Normal { std_dev } => InnovationSpace::normal(std_dev),
            SpaceDoc::RademacherSampler => Ok(InnovationSpace::Sampler(Sampler::RademacherSampler)),
            SpaceDoc::Uniform { half_width } => InnovationSpace::uniform(half_width),
        };
        space.map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn discrete_validation() {
        assert!(InnovationSpace::discrete(vec![1.0, -1.0], vec![0.5, 0.4]).is_err());
        assert!(InnovationSpace::discrete(vec![1.0, -1.0], vec![1.5, -0.5]).is_err());
        assert!(InnovationSpace::discrete(vec![1.0], vec![0.5, 0.5]).is_err());
        let s = InnovationSpace::discrete(vec![0.0, 3.0], vec![0.75, 0.25]).unwrap();
        assert_eq!(s.mean(), 0.75);
        assert!((s.variance() - 27.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn sampler_moments_by_quadrature() {
        let n = InnovationSpace::normal(2.0).unwrap();
        assert!((n.expect(|x| x * x) - 4.0).abs() < 1e-10);
        assert!(n.expect(|x| x).abs() < 1e-12);
        assert!((n.expect(|x| x.powi(4)) - 48.0).abs() < 1e-8);
        let u = InnovationSpace::uniform(3.0).unwrap();
        assert!((u.expect(|x| x * x) - u.variance()).abs() < 1e-12);
    }

    #[test]
    fn sampling_frequencies() {
        let s = InnovationSpace::discrete(vec![0.0, 1.0, 2.0], vec![0.2, 0.3, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 3];
        let r = 100_000;
        for _ in 0..r {
            counts[s.sample_index(&mut rng) as usize] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.3, 0.5]) {
            let se = (p * (1.0 - p) / r as f64).sqrt();
            assert!(((*c as f64 / r as f64) - p).abs() < 4.0 * se);
        }
    }

    #[test]
    fn json_shapes() {
        let s: InnovationSpace = serde_json::from_str(r#"{"kind":"rademacher"}"#).unwrap();
        assert_eq!(s, InnovationSpace::rademacher());
        let n: InnovationSpace = serde_json::from_str(r#"{"kind":"normal"}"#).unwrap();
        assert_eq!(n.variance(), 1.0);
        assert!(serde_json::from_str::<InnovationSpace>(r#"{"kind":"normal","std_dev":-1}"#).is_err());
        assert!(serde_json::from_str::<InnovationSpace>(
            r#"{"kind":"discrete","points":[1],"probs":[0.9]}"#
        )
        .is_err());
    }
}
