//! Parametric noise injection.
//!
//! Stands in for a hardware noise simulator by perturbing the Newton linear
//! system (matrix and right-hand side) with symmetric relative Gaussian noise
//! and by corrupting probability reads with either additive Gaussian noise or
//! finite-shot binomial sampling. Everything is seeded and reproducible.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};

/// Noise parameters. All sigmas zero and no shots means bit-exact
/// pass-through.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub seed: u64,
    /// Relative std for matrix entries, scaled by the largest |entry|.
    pub matrix_rel_sigma: f64,
    /// Relative std for rhs entries, scaled by the largest |entry|.
    pub rhs_rel_sigma: f64,
    /// Additive std on probability/expectation reads (no-shots path).
    pub expectation_sigma: f64,
    /// Finite-shot count for binomial sampling of probabilities.
    pub shots: Option<u64>,
}

impl NoiseSpec {
    pub fn quiet(seed: u64) -> Self {
        Self {
            seed,
            matrix_rel_sigma: 0.0,
            rhs_rel_sigma: 0.0,
            expectation_sigma: 0.0,
            shots: None,
        }
    }

    pub fn is_passthrough(&self) -> bool {
        self.matrix_rel_sigma == 0.0
            && self.rhs_rel_sigma == 0.0
            && self.expectation_sigma == 0.0
            && self.shots.is_none()
    }
}

/// Sequential noise source owned by one consumer; distinct streams are
/// independent.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    spec: NoiseSpec,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(spec: &NoiseSpec) -> Self {
        Self {
            spec: spec.clone(),
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
        }
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    /// Perturb a symmetric system: M' = M + (E + E')/2 with iid Gaussian E
    /// scaled by the largest matrix entry, rhs analogously. Symmetrization is
    /// exact, so Hermiticity of M is preserved bit-for-bit.
    pub fn perturb_system(
        &mut self,
        m: &DMatrix<f64>,
        rhs: &DVector<f64>,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let mut mp = m.clone();
        if self.spec.matrix_rel_sigma > 0.0 {
            let scale = m.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let normal = Normal::new(0.0, self.spec.matrix_rel_sigma * scale).unwrap();
            let n = m.nrows();
            for i in 0..n {
                for j in i..n {
                    let eij = normal.sample(&mut self.rng);
                    let eji = if j == i {
                        eij
                    } else {
                        normal.sample(&mut self.rng)
                    };
                    let sym = 0.5 * (eij + eji);
                    mp[(i, j)] += sym;
                    if j != i {
                        mp[(j, i)] += sym;
                    }
                }
            }
        }
        let mut rp = rhs.clone();
        if self.spec.rhs_rel_sigma > 0.0 {
            let scale = rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let normal = Normal::new(0.0, self.spec.rhs_rel_sigma * scale).unwrap();
            for v in rp.iter_mut() {
                *v += normal.sample(&mut self.rng);
            }
        }
        (mp, rp)
    }

    /// Corrupt a probability read: binomial finite-shot estimate when shots
    /// are configured, otherwise additive Gaussian clipped to [0, 1].
    pub fn sample_probability(&mut self, p: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&p));
        if let Some(shots) = self.spec.shots {
            let b = Binomial::new(shots, p.clamp(0.0, 1.0)).unwrap();
            return b.sample(&mut self.rng) as f64 / shots as f64;
        }
        if self.spec.expectation_sigma > 0.0 {
            let normal = Normal::new(0.0, self.spec.expectation_sigma).unwrap();
            return (p + normal.sample(&mut self.rng)).clamp(0.0, 1.0);
        }
        p
    }
}

/// One-shot perturbation: deterministic in (inputs, spec), equivalent to the
/// first draw of a fresh stream.
pub fn perturb_system(
    m: &DMatrix<f64>,
    rhs: &DVector<f64>,
    spec: &NoiseSpec,
) -> (DMatrix<f64>, DVector<f64>) {
    NoiseStream::new(spec).perturb_system(m, rhs)
}

/// One-shot probability sample, deterministic in (p, spec).
pub fn sample_probability(p: f64, spec: &NoiseSpec) -> f64 {
    NoiseStream::new(spec).sample_probability(p)
}
