//! Particle and temperature populations, their random streams and
//! empirical statistics.
//!
//! Randomness is split into independent ChaCha8 streams, one per block of
//! [`STREAM_CHUNK`] consecutive particles, all keyed by the same master
//! seed. A particle always draws from the stream of its block, in the same
//! order, so the variates it sees do not depend on how blocks are
//! scheduled across threads.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Particles per random stream.
pub const STREAM_CHUNK: usize = 1024;

/// Master seed of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunSeed(pub u64);

impl RunSeed {
    /// Stream `index` of this seed.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(index);
        rng
    }

    /// Seed for repeat `index` of a seed family (splitmix64 finalizer).
    pub fn child(&self, index: u64) -> RunSeed {
        let mut z = self
            .0
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RunSeed(z ^ (z >> 31))
    }
}

/// Initial position law, applied independently to every coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialDistribution {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, std: f64 },
    Dirac { at: f64 },
}

impl Default for InitialDistribution {
    fn default() -> Self {
        InitialDistribution::Uniform { lo: 1.0, hi: 2.0 }
    }
}

impl InitialDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitialDistribution::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                Err(Error::config("initial", format!("uniform needs lo < hi, got [{lo}, {hi}]")))
            }
            InitialDistribution::Gaussian { mean, std } if !(mean.is_finite() && std.is_finite() && std >= 0.0) => {
                Err(Error::config("initial", format!("gaussian needs finite mean and std >= 0, got ({mean}, {std})")))
            }
            InitialDistribution::Dirac { at } if !at.is_finite() => {
                Err(Error::config("initial", "dirac location must be finite"))
            }
            _ => Ok(()),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            InitialDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            InitialDistribution::Gaussian { mean, std } => mean + std * draw_normal(rng),
            InitialDistribution::Dirac { at } => at,
        }
    }
}

#[inline]
pub(crate) fn draw_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniform on `[-a, a)`.
#[inline]
pub(crate) fn draw_symmetric<R: Rng>(rng: &mut R, a: f64) -> f64 {
    a * (2.0 * rng.random::<f64>() - 1.0)
}

/// `n` candidate positions in `R^d`, stored row-major, with their streams.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    positions: Vec<f64>,
    dim: usize,
    streams: Vec<ChaCha8Rng>,
}

impl ParticleEnsemble {
    /// Builds an ensemble from explicit positions (row-major, `dim` per
    /// particle), with fresh streams from `seed`.
    pub fn from_positions(positions: Vec<f64>, dim: usize, seed: RunSeed) -> Result<Self> {
        if dim == 0 || positions.is_empty() || positions.len() % dim != 0 {
            return Err(Error::invalid("positions must hold n > 0 points of dimension d > 0"));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("positions must be finite"));
        }
        let n = positions.len() / dim;
        let streams = (0..n.div_ceil(STREAM_CHUNK) as u64)
            .map(|c| seed.stream(c))
            .collect();
        Ok(ParticleEnsemble {
            positions,
            dim,
            streams,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut [ChaCha8Rng], usize) {
        (&mut self.positions, &mut self.streams, self.dim)
    }
}

/// Draws `n` i.i.d. particles in `R^d` from `spec`.
pub fn init_particles(
    spec: &InitialDistribution,
    n: usize,
    d: usize,
    seed: RunSeed,
) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::invalid("particle count must be positive"));
    }
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    spec.validate()?;
    let mut positions = vec![0.0; n * d];
    let mut streams: Vec<ChaCha8Rng> = (0..n.div_ceil(STREAM_CHUNK) as u64)
        .map(|c| seed.stream(c))
        .collect();
    for (block, rng) in positions.chunks_mut(STREAM_CHUNK * d).zip(streams.iter_mut()) {
        for x in block {
            *x = spec.draw(rng);
        }
    }
    Ok(ParticleEnsemble {
        positions,
        dim: d,
        streams,
    })
}

/// Temperature samples paired one-to-one with the particles.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureSamples {
    temps: Vec<f64>,
}

impl TemperatureSamples {
    pub fn new(temps: Vec<f64>) -> Result<Self> {
        if temps.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::invalid("temperatures must be finite and nonnegative"));
        }
        Ok(TemperatureSamples { temps })
    }

    pub fn len(&self) -> usize {
        self.temps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temps.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.temps
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.temps
    }

    pub fn min(&self) -> f64 {
        self.temps.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn init_temperatures(t0: f64, n: usize) -> Result<TemperatureSamples> {
    if !(t0.is_finite() && t0 >= 0.0) {
        return Err(Error::invalid(format!("initial temperature {t0} must be >= 0")));
    }
    Ok(TemperatureSamples { temps: vec![t0; n] })
}

/// `n` standard normal vectors of dimension `d`, row-major.
pub fn sample_xi<R: Rng>(n: usize, d: usize, rng: &mut R) -> Vec<f64> {
    (0..n * d).map(|_| draw_normal(rng)).collect()
}

/// `n` uniforms on `[-a, a]`.
pub fn sample_eta<R: Rng>(n: usize, a: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(a.is_finite() && a >= 0.0) {
        return Err(Error::invalid(format!("half-width {a} must be >= 0")));
    }
    Ok((0..n).map(|_| draw_symmetric(rng, a)).collect())
}

/// `(1/N) sum T_i^k`, summed in index order.
pub fn empirical_moment(temps: &TemperatureSamples, k: f64) -> f64 {
    moment_of(&temps.temps, k)
}

pub(crate) fn moment_of(values: &[f64], k: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let sum: f64 = if k == 1.0 {
        values.iter().sum()
    } else {
        values.iter().map(|t| t.powf(k)).sum()
    };
    sum / values.len() as f64
}

/// Sample mean and `1/N` variance of a one-dimensional ensemble.
pub fn empirical_mean_var(ens: &ParticleEnsemble) -> Result<(f64, f64)> {
    if ens.dim != 1 {
        return Err(Error::invalid("mean/variance diagnostics are one-dimensional"));
    }
    Ok(mean_var(&ens.positions))
}

pub(crate) fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_init_in_support_with_clt_mean() {
        let spec = InitialDistribution::Uniform { lo: 1.0, hi: 2.0 };
        let ens = init_particles(&spec, 1_000_000, 1, RunSeed(7)).unwrap();
        assert_eq!(ens.len(), 1_000_000);
        assert!(ens.positions().iter().all(|x| (1.0..=2.0).contains(x)));
        let (m, v) = empirical_mean_var(&ens).unwrap();
        assert!((1.495..=1.505).contains(&m), "mean {m}");
        assert!((v - 1.0 / 12.0).abs() < 0.01 / 12.0, "var {v}");
    }

    #[test]
    fn dirac_init_is_exact() {
        let ens = init_particles(&InitialDistribution::Dirac { at: 0.0 }, 5, 1, RunSeed(1)).unwrap();
        assert_eq!(ens.positions(), &[0.0; 5]);
    }

    #[test]
    fn init_rejects_bad_input() {
        let spec = InitialDistribution::default();
        assert!(init_particles(&spec, 0, 1, RunSeed(0)).is_err());
        let bad = InitialDistribution::Uniform { lo: 2.0, hi: 1.0 };
        assert!(matches!(
            init_particles(&bad, 3, 1, RunSeed(0)),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let spec = InitialDistribution::Gaussian { mean: 0.0, std: 1.0 };
        let a = init_particles(&spec, 3000, 2, RunSeed(11)).unwrap();
        let b = init_particles(&spec, 3000, 2, RunSeed(11)).unwrap();
        let c = init_particles(&spec, 3000, 2, RunSeed(12)).unwrap();
        assert_eq!(a.positions(), b.positions());
        assert_ne!(a.positions(), c.positions());
    }

    #[test]
    fn temperatures() {
        assert_eq!(init_temperatures(2.0, 3).unwrap().as_slice(), &[2.0, 2.0, 2.0]);
        assert!(init_temperatures(0.0, 4).unwrap().as_slice().iter().all(|&t| t == 0.0));
        let t0 = 2.0 / std::f64::consts::LN_2;
        assert!(init_temperatures(t0, 2).unwrap().as_slice().iter().all(|&t| t == t0));
        assert!(init_temperatures(-1.0, 3).is_err());
    }

    #[test]
    fn xi_statistics() {
        let mut rng = RunSeed(3).stream(0);
        let xi = sample_xi(1_000_000, 1, &mut rng);
        let (m, v) = mean_var(&xi);
        assert!(m.abs() <= 0.004, "mean {m}");
        assert!((0.995..=1.005).contains(&v), "var {v}");

        let first = sample_xi(1, 1, &mut RunSeed(3).stream(0))[0];
        assert_eq!(first, xi[0]);
    }

    #[test]
    fn eta_statistics() {
        let mut rng = RunSeed(5).stream(0);
        assert!(sample_eta(10, 0.0, &mut rng).unwrap().iter().all(|&e| e == 0.0));
        let eta = sample_eta(1_000_000, 0.3, &mut rng).unwrap();
        assert!(eta.iter().all(|e| e.abs() <= 0.3));
        let (_, v) = mean_var(&eta);
        assert!((v - 0.03).abs() < 0.01 * 0.03, "var {v}");
        assert!(sample_eta(1, -0.1, &mut rng).is_err());
    }

    #[test]
    fn moments() {
        let t = TemperatureSamples::new(vec![2.0; 4]).unwrap();
        assert_eq!(empirical_moment(&t, 1.0), 2.0);
        assert_eq!(empirical_moment(&t, 3.0), 8.0);
        let t = TemperatureSamples::new(vec![1.0, 3.0]).unwrap();
        assert_eq!(empirical_moment(&t, 2.0), 5.0);
        assert_eq!(empirical_moment(&t, 0.0), 1.0);
    }

    #[test]
    fn mean_var_examples() {
        let e = ParticleEnsemble::from_positions(vec![1.0, 3.0], 1, RunSeed(0)).unwrap();
        assert_eq!(empirical_mean_var(&e).unwrap(), (2.0, 1.0));
        let e = ParticleEnsemble::from_positions(vec![4.5; 7], 1, RunSeed(0)).unwrap();
        assert_eq!(empirical_mean_var(&e).unwrap(), (4.5, 0.0));
        let e2 = ParticleEnsemble::from_positions(vec![0.0; 4], 2, RunSeed(0)).unwrap();
        assert!(empirical_mean_var(&e2).is_err());
    }

    #[test]
    fn child_seeds_differ() {
        let s = RunSeed(42);
        assert_ne!(s.child(0), s.child(1));
        assert_eq!(s.child(3), s.child(3));
    }
}
