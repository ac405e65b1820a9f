//! Deterministic, seeded generation of Gaussian angle-increment draws and of
//! perturbed operating points approximating the steady-state distribution of
//! bus angles.
//!
//! All randomness flows through [`RandomStream`], a value-like handle on a
//! counter-based generator (ChaCha8). Identical `(seed, stream_id)` pairs
//! produce bit-identical sequences on every platform, and substreams may be
//! consumed concurrently without affecting each other.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::jacobian::{
    angle_covariance, jacobian_full, AngleCovariance, JacobianError, OperatingPoint,
};
use crate::netmodel::{build_ybus, Network};

/// Default number of operating-point samples behind the placement objective's
/// empirical integral.
pub const DEFAULT_SAMPLE_COUNT: usize = 200;

/// A named position in a deterministic random sequence space.
///
/// Streams are cheap values: [`RandomStream::substream`] derives statistically
/// independent child streams from integer ids, so parallel jobs can each own a
/// stream keyed by their job id and still produce a schedule-independent
/// union of results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream { seed, stream_id: 0 }
    }

    /// Child stream for job `id`. Distinct ids give distinct streams; the
    /// derivation is a bijective integer mix, so nested substreams do not
    /// collide in practice.
    pub fn substream(&self, id: u64) -> Self {
        RandomStream {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error(
        "covariance is not positive semidefinite (eigenvalue {eigenvalue:.3e} below tolerance)"
    )]
    NotPsd { eigenvalue: f64 },
    #[error(transparent)]
    Jacobian(#[from] JacobianError),
}

/// Zero-mean multivariate Gaussian sampler built on a symmetric
/// positive-semidefinite factorization `C = A Aᵀ` (eigendecomposition with
/// tiny negative eigenvalues clamped to zero).
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    transform: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self, SamplingError> {
        assert_eq!(cov.nrows(), cov.ncols(), "covariance must be square");
        let n = cov.nrows();
        let eig = cov.clone().symmetric_eigen();
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let tol = 1e-8 * lmax.max(0.0) + 1e-300;
        let mut transform = DMatrix::<f64>::zeros(n, n);
        for c in 0..n {
            let ev = eig.eigenvalues[c];
            if ev < -tol {
                return Err(SamplingError::NotPsd { eigenvalue: ev });
            }
            let s = ev.max(0.0).sqrt();
            for r in 0..n {
                transform[(r, c)] = eig.eigenvectors[(r, c)] * s;
            }
        }
        Ok(GaussianSampler { transform })
    }

    pub fn dimension(&self) -> usize {
        self.transform.nrows()
    }

    /// One draw, consuming `dimension()` standard-normal variates from `rng`
    /// in index order.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let n = self.dimension();
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.transform * z
    }
}

/// `count` i.i.d. zero-mean draws with covariance `cov.matrix`, deterministic
/// per stream.
pub fn sample_dtheta(
    cov: &AngleCovariance,
    stream: RandomStream,
    count: usize,
) -> Result<Vec<DVector<f64>>, SamplingError> {
    let sampler = GaussianSampler::new(&cov.matrix)?;
    let mut rng = stream.rng();
    Ok((0..count).map(|_| sampler.sample(&mut rng)).collect())
}

/// A set of perturbed operating points drawn around `origin`, the empirical
/// stand-in for the steady-state angle distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSampleSet {
    pub samples: Vec<OperatingPoint>,
    pub origin: OperatingPoint,
    pub sigma: f64,
    pub dt: f64,
}

impl AngleSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Wrap into [−π, π]; values already inside pass through unchanged
/// (bit-exact).
fn wrap_angle(x: f64) -> f64 {
    if (-PI..=PI).contains(&x) {
        x
    } else {
        (x + PI).rem_euclid(TAU) - PI
    }
}

/// `m` single-step perturbations of `base`: θ⁽ⁱ⁾ = base.θ + Δθ⁽ⁱ⁾ with
/// Δθ ∼ 𝒩(0, σ²Δt(JᵀJ)⁻¹) evaluated at `base`. The reference-bus angle stays
/// fixed and voltage magnitudes are carried over from `base`; perturbed
/// angles are wrapped into [−π, π].
pub fn sample_operating_points(
    net: &Network,
    base: &OperatingPoint,
    sigma: f64,
    dt: f64,
    m: usize,
    stream: RandomStream,
) -> Result<AngleSampleSet, SamplingError> {
    assert!(m >= 1, "at least one sample required");
    let ybus = build_ybus(net);
    let j = jacobian_full(&ybus, base, net.reference);
    let cov = angle_covariance(&j, sigma, dt)?;
    let sampler = GaussianSampler::new(&cov.matrix)?;
    let mut rng = stream.rng();
    let ref_idx = net.reference_index();
    let keep: Vec<usize> = (0..net.n_buses()).filter(|&i| i != ref_idx).collect();
    let samples = (0..m)
        .map(|_| {
            let dtheta = sampler.sample(&mut rng);
            let mut op = base.clone();
            for (row, &bus_idx) in keep.iter().enumerate() {
                op.theta[bus_idx] = wrap_angle(base.theta[bus_idx] + dtheta[row]);
            }
            op
        })
        .collect();
    Ok(AngleSampleSet {
        samples,
        origin: base.clone(),
        sigma,
        dt,
    })
}

/// Default angular spread (radians) of the wide isotropic prior behind the
/// placement objective.
pub const DEFAULT_ANGLE_SPREAD: f64 = 1.0;

/// `m` draws from a wide isotropic prior over operating points:
/// θ⁽ⁱ⁾ = base.θ + ε⁽ⁱ⁾ with ε ∼ 𝒩(0, spread²·I) on every non-reference bus,
/// wrapped into [−π, π]. The reference-bus angle stays fixed and voltage
/// magnitudes are carried over from `base`.
///
/// This prior feeds the placement objective, which compares full and masked
/// sensitivity matrices across a broad range of angle states; the
/// steady-state fluctuation sampler [`sample_operating_points`] is far too
/// concentrated (and too anisotropic) to discriminate between sensor sets of
/// different sizes. The returned set records `sigma = spread` and `dt = 0`
/// (the prior is timeless).
pub fn sample_angle_prior(
    net: &Network,
    base: &OperatingPoint,
    spread: f64,
    m: usize,
    stream: RandomStream,
) -> AngleSampleSet {
    assert!(m >= 1, "at least one sample required");
    assert!(spread >= 0.0, "spread must be non-negative");
    let mut rng = stream.rng();
    let ref_idx = net.reference_index();
    let samples = (0..m)
        .map(|_| {
            let mut op = base.clone();
            for (i, th) in op.theta.iter_mut().enumerate() {
                if i != ref_idx {
                    let z: f64 = rng.sample(StandardNormal);
                    *th = wrap_angle(*th + spread * z);
                }
            }
            op
        })
        .collect();
    AngleSampleSet {
        samples,
        origin: base.clone(),
        sigma: spread,
        dt: 0.0,
    }
}

/// Mean of a set of equally weighted vectors.
pub fn empirical_mean(draws: &[DVector<f64>]) -> DVector<f64> {
    assert!(!draws.is_empty());
    let n = draws[0].nrows();
    let mut mean = DVector::<f64>::zeros(n);
    for d in draws {
        mean += d;
    }
    mean / draws.len() as f64
}

/// Unbiased (centered, 1/(M−1)) sample covariance.
pub fn empirical_covariance(draws: &[DVector<f64>]) -> DMatrix<f64> {
    assert!(draws.len() >= 2);
    let mean = empirical_mean(draws);
    let n = draws[0].nrows();
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for d in draws {
        let c = d - &mean;
        cov += &c * c.transpose();
    }
    cov / (draws.len() - 1) as f64
}
