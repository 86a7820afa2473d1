//! Deep Fourier kernel.
//!
//! Frequencies are the push-forward of standard normal noise through a
//! learned network (the spectrum network). A feature set of `D` frequencies
//! with uniform phases realizes the kernel estimate
//!
//! ```text
//! K̃(x, x') = (1/D) Σ_k 2 cos(ω_kᵀ W x + u_k) cos(ω_kᵀ W x' + u_k) = Φ(x)ᵀ Φ(x')
//! ```
//!
//! where `Φ` already carries the `1/√D` factor.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::gradients::Real;
use crate::nn::MlpShape;

/// Network mapping noise in `ℝ^q` to frequencies in `ℝ^r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumNet {
    pub shape: MlpShape,
    #[serde(with = "codec::f64_vec")]
    pub weights: Vec<f64>,
}

impl SpectrumNet {
    pub fn new(noise_dim: usize, hidden: &[usize], feature_dim: usize, rng: &mut impl Rng) -> Self {
        let mut sizes = vec![noise_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(feature_dim);
        let shape = MlpShape::new(sizes);
        let weights = shape.init(rng);
        Self { shape, weights }
    }

    /// Two tanh layers of width 32 with `q = r = 2`.
    pub fn default_architecture(rng: &mut impl Rng) -> Self {
        Self::new(2, &[32, 32], 2, rng)
    }

    /// Maps every noise draw to the zero frequency.
    pub fn zero(noise_dim: usize, feature_dim: usize) -> Self {
        let shape = MlpShape::new(vec![noise_dim, feature_dim]);
        let weights = vec![0.0; shape.param_count()];
        Self { shape, weights }
    }

    /// `ψ₀(ζ) = ζ`, so frequencies are standard normal (Gaussian kernel).
    pub fn identity(dim: usize) -> Self {
        let shape = MlpShape::new(vec![dim, dim]);
        let mut weights = vec![0.0; shape.param_count()];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self { shape, weights }
    }

    pub fn noise_dim(&self) -> usize {
        self.shape.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.shape.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.shape.param_count()
    }

    /// Frequencies for every draw in `noise` (flat, `q` per draw).
    pub fn frequencies<T: Real>(shape: &MlpShape, weights: &[T], noise: &[T]) -> Vec<T> {
        noise
            .chunks(shape.input_dim())
            .flat_map(|z| shape.forward(weights, z))
            .collect()
    }
}

/// Recorded randomness behind one feature set: `ζ_k` and `u_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNoise {
    pub noise_dim: usize,
    #[serde(with = "codec::f64_vec")]
    pub noise: Vec<f64>,
    #[serde(with = "codec::f64_vec")]
    pub phases: Vec<f64>,
}

impl FeatureNoise {
    pub fn sample(count: usize, noise_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument(
                "need at least one Fourier feature".into(),
            ));
        }
        let mut noise = Vec::with_capacity(count * noise_dim);
        let mut phases = Vec::with_capacity(count);
        for _ in 0..count {
            for _ in 0..noise_dim {
                noise.push(rng.sample::<f64, _>(StandardNormal));
            }
            phases.push(rng.random_range(0.0..TAU));
        }
        Ok(Self {
            noise_dim,
            noise,
            phases,
        })
    }

    pub fn count(&self) -> usize {
        self.phases.len()
    }
}

/// `D` frequency vectors with their phases and the noise they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierFeatureSet {
    pub feature_dim: usize,
    #[serde(with = "codec::f64_vec")]
    pub omegas: Vec<f64>,
    #[serde(flatten)]
    pub source: FeatureNoise,
}

impl FourierFeatureSet {
    /// Pushes recorded noise through the spectrum network.
    pub fn realize(net: &SpectrumNet, source: FeatureNoise) -> Result<Self> {
        if source.noise_dim != net.noise_dim() {
            return Err(Error::DimensionMismatch {
                expected: net.noise_dim(),
                got: source.noise_dim,
            });
        }
        let omegas = SpectrumNet::frequencies(&net.shape, &net.weights, &source.noise);
        Ok(Self {
            feature_dim: net.feature_dim(),
            omegas,
            source,
        })
    }

    /// Feature set with explicit frequencies (flat, `r` per feature).
    pub fn from_parts(feature_dim: usize, omegas: Vec<f64>, phases: Vec<f64>) -> Result<Self> {
        if phases.is_empty() || omegas.len() != feature_dim * phases.len() {
            return Err(Error::DimensionMismatch {
                expected: feature_dim * phases.len().max(1),
                got: omegas.len(),
            });
        }
        if phases.iter().any(|u| !(0.0..=TAU).contains(u)) {
            return Err(Error::InvalidArgument("phases must lie in [0, 2pi]".into()));
        }
        Ok(Self {
            feature_dim,
            omegas,
            source: FeatureNoise {
                noise_dim: 0,
                noise: Vec::new(),
                phases,
            },
        })
    }

    pub fn count(&self) -> usize {
        self.source.phases.len()
    }

    pub fn phases(&self) -> &[f64] {
        &self.source.phases
    }

    pub fn omega(&self, k: usize) -> &[f64] {
        &self.omegas[k * self.feature_dim..(k + 1) * self.feature_dim]
    }
}

/// Draws `count` features from the spectrum network.
pub fn sample_features(net: &SpectrumNet, count: usize, rng: &mut impl Rng) -> Result<FourierFeatureSet> {
    let noise = FeatureNoise::sample(count, net.noise_dim(), rng)?;
    FourierFeatureSet::realize(net, noise)
}

/// The `r × (d + 1)` matrix `W`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelProjection {
    pub rows: usize,
    pub cols: usize,
    #[serde(with = "codec::f64_vec")]
    pub data: Vec<f64>,
}

impl KernelProjection {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("projection entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Uniform in `±1/√(d + 1)`.
    pub fn init(feature_dim: usize, mark_dim: usize, rng: &mut impl Rng) -> Self {
        let cols = mark_dim + 1;
        let bound = 1.0 / (cols as f64).sqrt();
        let data = (0..feature_dim * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            rows: feature_dim,
            cols,
            data,
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self {
            rows: dim,
            cols: dim,
            data,
        }
    }

    pub fn mark_dim(&self) -> usize {
        self.cols - 1
    }
}

/// Borrowed kernel ingredients, generic so the same map serves plain
/// evaluation and taped gradients.
pub struct FeatureView<'a, T> {
    pub omegas: &'a [T],
    pub phases: &'a [f64],
    pub projection: &'a [T],
    pub feature_dim: usize,
    pub point_dim: usize,
}

impl<'a, T: Real> FeatureView<'a, T> {
    pub fn count(&self) -> usize {
        self.phases.len()
    }

    /// `Φ(x)` for a point `x = [t, m]`.
    pub fn map(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.point_dim);
        let zero = x[0].constant(0.0);
        let projected: Vec<T> = (0..self.feature_dim)
            .map(|r| {
                T::affine(
                    zero,
                    &self.projection[r * self.point_dim..(r + 1) * self.point_dim],
                    x,
                )
            })
            .collect();
        let scale = (2.0 / self.count() as f64).sqrt();
        self.phases
            .iter()
            .enumerate()
            .map(|(k, &u)| {
                let omega = &self.omegas[k * self.feature_dim..(k + 1) * self.feature_dim];
                T::affine(zero.constant(u), omega, &projected).cos() * scale
            })
            .collect()
    }
}

impl<'a> FeatureView<'a, f64> {
    pub fn new(fs: &'a FourierFeatureSet, w: &'a KernelProjection) -> Result<Self> {
        if fs.feature_dim != w.rows {
            return Err(Error::DimensionMismatch {
                expected: w.rows,
                got: fs.feature_dim,
            });
        }
        Ok(Self {
            omegas: &fs.omegas,
            phases: fs.phases(),
            projection: &w.data,
            feature_dim: fs.feature_dim,
            point_dim: w.cols,
        })
    }
}

/// `Φ(x)` with the `1/√D` scaling, so `Φ(x)ᵀΦ(x')` is the kernel estimate.
pub fn feature_map(x: &[f64], fs: &FourierFeatureSet, w: &KernelProjection) -> Result<Vec<f64>> {
    if x.len() != w.cols {
        return Err(Error::DimensionMismatch {
            expected: w.cols,
            got: x.len(),
        });
    }
    Ok(FeatureView::new(fs, w)?.map(x))
}

pub fn kernel_estimate(
    x: &[f64],
    x_other: &[f64],
    fs: &FourierFeatureSet,
    w: &KernelProjection,
) -> Result<f64> {
    let a = feature_map(x, fs, w)?;
    let b = feature_map(x_other, fs, w)?;
    Ok(a.iter().zip(&b).map(|(p, q)| p * q).sum())
}
