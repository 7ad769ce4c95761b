//! Synthetic 2D target distributions and the global Gaussian source.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::Vec2;

/// A finite set of 2D samples together with the seed that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec2>,
    pub seed: u64,
    pub label: String,
}

impl PointCloud {
    pub fn new(points: Vec<Vec2>, seed: u64, label: impl Into<String>) -> Self {
        Self {
            points,
            seed,
            label: label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sub-cloud made of the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            seed: self.seed,
            label: self.label.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    FiveGaussians,
    TwoMoons,
    Checkerboard,
    IsotropicGaussian,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::FiveGaussians => "five_gaussians",
            DatasetKind::TwoMoons => "two_moons",
            DatasetKind::Checkerboard => "checkerboard",
            DatasetKind::IsotropicGaussian => "isotropic_gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "five_gaussians" => Ok(DatasetKind::FiveGaussians),
            "two_moons" => Ok(DatasetKind::TwoMoons),
            "checkerboard" => Ok(DatasetKind::Checkerboard),
            "isotropic_gaussian" => Ok(DatasetKind::IsotropicGaussian),
            other => Err(Error::parameter("dataset", format!("unknown dataset `{other}`"))),
        }
    }
}

/// Per-kind distribution parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetParams {
    /// Gaussian mixture with a shared isotropic component std.
    FiveGaussians {
        means: Vec<Vec2>,
        std: f64,
        weights: Vec<f64>,
    },
    /// Two interleaving half circles, recentred so the mixture mean is the
    /// origin.
    TwoMoons {
        radius: f64,
        vertical_offset: f64,
        noise: f64,
    },
    /// Uniform over the "black" cells, `(i + j)` even, of a
    /// `cells x cells` board covering `[-half_extent, half_extent]^2`.
    Checkerboard { half_extent: f64, cells: usize },
    IsotropicGaussian { mean: Vec2, std: f64 },
}

impl DatasetParams {
    pub fn kind(&self) -> DatasetKind {
        match self {
            DatasetParams::FiveGaussians { .. } => DatasetKind::FiveGaussians,
            DatasetParams::TwoMoons { .. } => DatasetKind::TwoMoons,
            DatasetParams::Checkerboard { .. } => DatasetKind::Checkerboard,
            DatasetParams::IsotropicGaussian { .. } => DatasetKind::IsotropicGaussian,
        }
    }

    pub fn default_for(kind: DatasetKind) -> Self {
        match kind {
            DatasetKind::FiveGaussians => {
                let means = (0..5)
                    .map(|k| {
                        let a = std::f64::consts::TAU * k as f64 / 5.0;
                        [3.0 * a.cos(), 3.0 * a.sin()]
                    })
                    .collect();
                DatasetParams::FiveGaussians {
                    means,
                    std: 0.35,
                    weights: vec![0.2; 5],
                }
            }
            DatasetKind::TwoMoons => DatasetParams::TwoMoons {
                radius: 1.0,
                vertical_offset: 0.5,
                noise: 0.08,
            },
            DatasetKind::Checkerboard => DatasetParams::Checkerboard {
                half_extent: 2.0,
                cells: 4,
            },
            DatasetKind::IsotropicGaussian => DatasetParams::IsotropicGaussian {
                mean: [0.0, 0.0],
                std: 0.6,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub params: DatasetParams,
    pub n: usize,
}

impl DatasetSpec {
    pub fn new(params: DatasetParams, n: usize) -> Self {
        Self { params, n }
    }

    pub fn default_for(kind: DatasetKind, n: usize) -> Self {
        Self::new(DatasetParams::default_for(kind), n)
    }

    /// The global source used by the baselines: N((0,0), 0.6^2 I).
    pub fn standard_source(n: usize) -> Self {
        Self::default_for(DatasetKind::IsotropicGaussian, n)
    }

    pub fn kind(&self) -> DatasetKind {
        self.params.kind()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::parameter("n", "must be at least 1"));
        }
        let finite = |field: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::parameter(field, "must be finite"))
            }
        };
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::parameter(field, format!("must be > 0, got {v}")))
            }
        };
        match &self.params {
            DatasetParams::FiveGaussians {
                means,
                std,
                weights,
            } => {
                if means.is_empty() {
                    return Err(Error::parameter("means", "need at least one component"));
                }
                if weights.len() != means.len() {
                    return Err(Error::parameter(
                        "weights",
                        format!("{} weights for {} means", weights.len(), means.len()),
                    ));
                }
                for m in means {
                    finite("means", m[0])?;
                    finite("means", m[1])?;
                }
                // std = 0 is allowed: degenerate point masses at the means.
                if !(*std >= 0.0 && std.is_finite()) {
                    return Err(Error::parameter("std", format!("must be >= 0, got {std}")));
                }
                if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
                    return Err(Error::parameter("weights", "must be non-negative"));
                }
                if weights.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::parameter("weights", "must not all be zero"));
                }
            }
            DatasetParams::TwoMoons {
                radius,
                vertical_offset,
                noise,
            } => {
                positive("radius", *radius)?;
                finite("vertical_offset", *vertical_offset)?;
                positive("noise", *noise)?;
            }
            DatasetParams::Checkerboard { half_extent, cells } => {
                positive("half_extent", *half_extent)?;
                if *cells == 0 {
                    return Err(Error::parameter("cells", "must be at least 1"));
                }
            }
            DatasetParams::IsotropicGaussian { mean, std } => {
                finite("mean", mean[0])?;
                finite("mean", mean[1])?;
                positive("std", *std)?;
            }
        }
        Ok(())
    }
}

/// Draw `spec.n` points. Deterministic in `(spec, seed)`.
pub fn generate(spec: &DatasetSpec, seed: u64) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = Stream::new(seed);
    let n = spec.n;
    let points: Vec<Vec2> = match &spec.params {
        DatasetParams::FiveGaussians {
            means,
            std,
            weights,
        } => (0..n)
            .map(|_| {
                let k = rng.categorical(weights);
                let m = means[k];
                [m[0] + std * rng.normal(), m[1] + std * rng.normal()]
            })
            .collect(),
        DatasetParams::TwoMoons {
            radius,
            vertical_offset,
            noise,
        } => {
            let (cx, cy) = (radius / 2.0, vertical_offset / 2.0);
            (0..n)
                .map(|_| {
                    let upper = rng.below(2) == 0;
                    let theta = std::f64::consts::PI * rng.uniform();
                    let (x, y) = if upper {
                        (radius * theta.cos(), radius * theta.sin())
                    } else {
                        (radius * (1.0 - theta.cos()), vertical_offset - radius * theta.sin())
                    };
                    [x - cx + noise * rng.normal(), y - cy + noise * rng.normal()]
                })
                .collect()
        }
        DatasetParams::Checkerboard { half_extent, cells } => {
            let black = black_cells(*cells);
            let size = 2.0 * half_extent / *cells as f64;
            (0..n)
                .map(|_| {
                    let (i, j) = black[rng.below(black.len())];
                    let x = -half_extent + size * (i as f64 + rng.uniform());
                    let y = -half_extent + size * (j as f64 + rng.uniform());
                    [x, y]
                })
                .collect()
        }
        DatasetParams::IsotropicGaussian { mean, std } => (0..n)
            .map(|_| [mean[0] + std * rng.normal(), mean[1] + std * rng.normal()])
            .collect(),
    };
    Ok(PointCloud::new(points, seed, spec.kind().name()))
}

fn black_cells(cells: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(cells * cells / 2 + 1);
    for j in 0..cells {
        for i in 0..cells {
            if (i + j) % 2 == 0 {
                out.push((i, j));
            }
        }
    }
    out
}

/// Arithmetic mean and biased (1/n) covariance.
pub fn empirical_moments(points: &[Vec2]) -> Result<(Vec2, [[f64; 2]; 2])> {
    if points.is_empty() {
        return Err(Error::EmptyInput("point cloud"));
    }
    let n = points.len() as f64;
    let mut mean = [0.0; 2];
    for p in points {
        mean[0] += p[0];
        mean[1] += p[1];
    }
    mean[0] /= n;
    mean[1] /= n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let dx = p[0] - mean[0];
        let dy = p[1] - mean[1];
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let cov = [[sxx / n, sxy / n], [sxy / n, syy / n]];
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_matches_std() {
        let pc = generate(&DatasetSpec::standard_source(1_000_000), 11).unwrap();
        let (mean, cov) = empirical_moments(&pc.points).unwrap();
        assert!(mean[0].abs() < 0.01 && mean[1].abs() < 0.01, "{mean:?}");
        assert!((cov[0][0].sqrt() - 0.6).abs() < 0.01);
        assert!((cov[1][1].sqrt() - 0.6).abs() < 0.01);
    }

    #[test]
    fn degenerate_mixture_is_a_point_mass() {
        let spec = DatasetSpec::new(
            DatasetParams::FiveGaussians {
                means: vec![[0.0, 0.0]; 5],
                std: 0.0,
                weights: vec![0.2; 5],
            },
            500,
        );
        let pc = generate(&spec, 3).unwrap();
        assert!(pc.points.iter().all(|p| *p == [0.0, 0.0]));
    }

    #[test]
    fn checkerboard_points_land_in_black_cells() {
        let pc = generate(&DatasetSpec::default_for(DatasetKind::Checkerboard, 20_000), 5).unwrap();
        for p in &pc.points {
            // independent parity check on the unit cells of [-2, 2]^2
            let i = (p[0] + 2.0).floor() as i64;
            let j = (p[1] + 2.0).floor() as i64;
            assert!((0..4).contains(&i) && (0..4).contains(&j), "{p:?}");
            assert_eq!((i + j).rem_euclid(2), 0, "{p:?} in a white cell");
        }
    }

    #[test]
    fn moments_single_point() {
        let (m, c) = empirical_moments(&[[3.0, -1.0]]).unwrap();
        assert_eq!(m, [3.0, -1.0]);
        assert_eq!(c, [[0.0, 0.0], [0.0, 0.0]]);
    }

    #[test]
    fn moments_symmetric_pair() {
        let (m, c) = empirical_moments(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        assert_eq!(m, [0.0, 0.0]);
        assert_eq!(c, [[1.0, 0.0], [0.0, 0.0]]);
    }

    #[test]
    fn moments_of_source_variance() {
        let pc = generate(&DatasetSpec::standard_source(100_000), 8).unwrap();
        let (_, c) = empirical_moments(&pc.points).unwrap();
        assert!((c[0][0] - 0.36).abs() < 0.02);
        assert!((c[1][1] - 0.36).abs() < 0.02);
        assert_eq!(c[0][1], c[1][0]);
    }

    #[test]
    fn moments_empty_is_error() {
        assert!(matches!(empirical_moments(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn invalid_params_name_the_field() {
        let mut spec = DatasetSpec::default_for(DatasetKind::TwoMoons, 10);
        if let DatasetParams::TwoMoons { noise, .. } = &mut spec.params {
            *noise = -1.0;
        }
        match generate(&spec, 0) {
            Err(Error::Parameter { field, .. }) => assert_eq!(field, "noise"),
            other => panic!("expected parameter error, got {other:?}"),
        }
        let zero = DatasetSpec::default_for(DatasetKind::Checkerboard, 0);
        match generate(&zero, 0) {
            Err(Error::Parameter { field, .. }) => assert_eq!(field, "n"),
            other => panic!("expected parameter error, got {other:?}"),
        }
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let spec = DatasetSpec::default_for(DatasetKind::FiveGaussians, 42);
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kind\":\"five_gaussians\""));
        let back: DatasetSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
