use std::collections::BTreeMap;
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;

use crate::error::{Error, Result};

/// Probability arithmetic used by [`DiscreteWorld`]: exact rationals or
/// floats.
pub trait Scalar:
    Clone
    + Debug
    + PartialOrd
    + Zero
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Send
    + Sync
{
    fn ratio(num: u64, den: u64) -> Self;
    fn to_f64(&self) -> f64;
    /// Tolerance for "sums to one"; zero for exact arithmetic.
    fn tolerance() -> Self;
}

impl Scalar for f64 {
    fn ratio(num: u64, den: u64) -> Self {
        num as f64 / den as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn tolerance() -> Self {
        1e-12
    }
}

impl Scalar for BigRational {
    fn ratio(num: u64, den: u64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn tolerance() -> Self {
        BigRational::zero()
    }
}

fn abs_diff<P: Scalar>(a: &P, b: &P) -> P {
    if a >= b {
        a.clone() - b.clone()
    } else {
        b.clone() - a.clone()
    }
}

/// L1 distance between integer condition vectors.
fn l1(a: &[i64], b: &[i64]) -> u64 {
    a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).sum()
}

/// A finite image space with a data distribution, a projector table and
/// deterministic encoder/decoder tables. Decoded images are indices into
/// the same image space (they may carry zero data probability).
#[derive(Clone, Debug)]
pub struct DiscreteWorld<P> {
    pub p_data: Vec<P>,
    /// Condition vector of every image.
    pub phi: Vec<Vec<i64>>,
    /// `E(x)`, a latent index per image.
    pub encoder: Vec<usize>,
    /// `D(z)`, an image index per latent.
    pub decoder: Vec<usize>,
}

impl<P: Scalar> DiscreteWorld<P> {
    pub fn new(p_data: Vec<P>, phi: Vec<Vec<i64>>, encoder: Vec<usize>, decoder: Vec<usize>) -> Result<Self> {
        let w = Self {
            p_data,
            phi,
            encoder,
            decoder,
        };
        w.validate()?;
        Ok(w)
    }

    /// Same world with probabilities converted by `f` (not re-validated).
    pub fn convert<Q: Scalar>(&self, f: impl Fn(&P) -> Q) -> DiscreteWorld<Q> {
        DiscreteWorld {
            p_data: self.p_data.iter().map(f).collect(),
            phi: self.phi.clone(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
        }
    }

    pub fn num_images(&self) -> usize {
        self.p_data.len()
    }

    pub fn num_latents(&self) -> usize {
        self.decoder.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_images();
        if n == 0 || self.phi.len() != n || self.encoder.len() != n {
            return Err(Error::DimensionMismatch("world tables disagree on the number of images".into()));
        }
        if self.decoder.is_empty() {
            return Err(Error::InvalidParameter("world has no latents".into()));
        }
        if self.phi.iter().any(|c| c.len() != self.phi[0].len()) {
            return Err(Error::DimensionMismatch("condition vectors differ in length".into()));
        }
        if self.encoder.iter().any(|&z| z >= self.num_latents()) || self.decoder.iter().any(|&x| x >= n) {
            return Err(Error::InvalidParameter("encoder or decoder index out of range".into()));
        }
        if self.p_data.iter().any(|p| *p < P::zero()) {
            return Err(Error::InvalidParameter("negative probability".into()));
        }
        let total = self.p_data.iter().cloned().fold(P::zero(), |a, b| a + b);
        let one = P::ratio(1, 1);
        if abs_diff(&total, &one) > P::tolerance() {
            return Err(Error::InvalidParameter(format!("probabilities sum to {}", total.to_f64())));
        }
        Ok(())
    }

    /// `p(c)` over the conditions with support.
    pub fn condition_marginal(&self) -> BTreeMap<Vec<i64>, P> {
        let mut out: BTreeMap<Vec<i64>, P> = BTreeMap::new();
        for (x, p) in self.p_data.iter().enumerate() {
            let e = out.entry(self.phi[x].clone()).or_insert_with(P::zero);
            *e = e.clone() + p.clone();
        }
        out
    }

    /// `p(c, z) = Σ_{x : φ(x)=c, E(x)=z} p(x)`.
    pub fn joint(&self) -> BTreeMap<(Vec<i64>, usize), P> {
        let mut out: BTreeMap<(Vec<i64>, usize), P> = BTreeMap::new();
        for (x, p) in self.p_data.iter().enumerate() {
            let e = out.entry((self.phi[x].clone(), self.encoder[x])).or_insert_with(P::zero);
            *e = e.clone() + p.clone();
        }
        out
    }

    /// Largest `|Σ_z p(c,z) − p(c)|` over conditions.
    pub fn marginalization_gap(&self) -> P {
        let marginal = self.condition_marginal();
        let mut summed: BTreeMap<Vec<i64>, P> = BTreeMap::new();
        for ((c, _), p) in self.joint() {
            let e = summed.entry(c).or_insert_with(P::zero);
            *e = e.clone() + p;
        }
        let mut worst = P::zero();
        for (c, p) in &marginal {
            let d = abs_diff(p, summed.get(c).unwrap_or(&P::zero()));
            if d > worst {
                worst = d;
            }
        }
        worst
    }

    /// `Σ_c p(c) Σ_z p_E(z|c) ‖φ(D(z)) − c‖`: a generator that samples latents
    /// from the encoder-induced conditional and decodes them.
    pub fn alignment_error_exact(&self) -> P {
        let marginal = self.condition_marginal();
        let mut total = P::zero();
        for ((c, z), p_cz) in self.joint() {
            let p_c = &marginal[&c];
            if p_c.is_zero() {
                continue;
            }
            let p_z_given_c = p_cz / p_c.clone();
            let dist = l1(&self.phi[self.decoder[z]], &c);
            total = total + p_c.clone() * p_z_given_c * P::ratio(dist, 1);
        }
        total
    }

    /// `Σ_x p(x) ‖φ(x) − φ(D(E(x)))‖`.
    pub fn expected_drift_exact(&self) -> P {
        self.p_data
            .iter()
            .enumerate()
            .fold(P::zero(), |acc, (x, p)| {
                let recon = self.decoder[self.encoder[x]];
                acc + p.clone() * P::ratio(l1(&self.phi[x], &self.phi[recon]), 1)
            })
    }
}

/// Integer weights, conditions, encoder and decoder for a random world with
/// `|X| ∈ [2,12]`, `|Z| ∈ [1,12]`. Conditions come from a small pool so
/// that several images often share one; some weights are zero.
pub fn random_world<P: Scalar>(rng: &mut impl Rng) -> DiscreteWorld<P> {
    let nx = rng.gen_range(2..=12);
    let nz = rng.gen_range(1..=12);
    let dim = rng.gen_range(1..=3);
    let pool: Vec<Vec<i64>> = (0..rng.gen_range(1..=nx))
        .map(|_| (0..dim).map(|_| rng.gen_range(-4..=4)).collect())
        .collect();
    let mut weights: Vec<u64> = (0..nx).map(|_| if rng.gen_bool(0.15) { 0 } else { rng.gen_range(1..=97) }).collect();
    if weights.iter().all(|&w| w == 0) {
        weights[0] = 1;
    }
    let total: u64 = weights.iter().sum();
    let p_data = weights.iter().map(|&w| P::ratio(w, total)).collect();
    let phi = (0..nx).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect();
    let encoder = (0..nx).map(|_| rng.gen_range(0..nz)).collect();
    let decoder = (0..nz).map(|_| rng.gen_range(0..nx)).collect();
    let w = DiscreteWorld {
        p_data,
        phi,
        encoder,
        decoder,
    };
    debug_assert!(w.validate().is_ok());
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q(n: u64, d: u64) -> BigRational {
        BigRational::ratio(n, d)
    }

    #[test]
    fn inverting_decoder_has_zero_error() {
        let w = DiscreteWorld::new(vec![q(1, 3), q(2, 3)], vec![vec![0], vec![5]], vec![1, 0], vec![1, 0]).unwrap();
        assert!(w.alignment_error_exact().is_zero());
        assert!(w.expected_drift_exact().is_zero());
    }

    #[test]
    fn two_image_world_error_is_half() {
        // x0 -> x0, x1 (p=1/4) -> x2 whose condition is 2 away
        let w = DiscreteWorld::new(
            vec![q(3, 4), q(1, 4), q(0, 1)],
            vec![vec![0], vec![1], vec![3]],
            vec![0, 1, 0],
            vec![0, 2],
        )
        .unwrap();
        assert_eq!(w.alignment_error_exact(), q(1, 2));
        assert_eq!(w.expected_drift_exact(), q(1, 2));
    }

    #[test]
    fn uniform_four_image_drift() {
        // per-image drifts 0, 0, 1, 3
        let w = DiscreteWorld::new(
            vec![q(1, 4), q(1, 4), q(1, 4), q(1, 4), q(0, 1), q(0, 1)],
            vec![vec![0], vec![10], vec![20], vec![30], vec![21], vec![33]],
            vec![0, 1, 2, 3, 0, 0],
            vec![0, 1, 4, 5],
        )
        .unwrap();
        assert_eq!(w.expected_drift_exact(), q(1, 1));
        assert_eq!(w.alignment_error_exact(), q(1, 1));
    }

    #[test]
    fn many_to_one_encoder_with_shared_condition() {
        // x0, x1 share condition [0] but encode to different latents; x2
        // and x0 share latent 0
        let w = DiscreteWorld::new(
            vec![q(1, 2), q(1, 3), q(1, 6)],
            vec![vec![0], vec![0], vec![4]],
            vec![0, 1, 0],
            vec![2, 1],
        )
        .unwrap();
        // drift: x0 -> x2 (4), x1 -> x1 (0), x2 -> x2 (0)  => 1/2 * 4 = 2
        assert_eq!(w.expected_drift_exact(), q(2, 1));
        assert_eq!(w.alignment_error_exact(), q(2, 1));
        assert!(w.marginalization_gap().is_zero());
    }

    #[test]
    fn malformed_worlds_are_rejected() {
        assert!(DiscreteWorld::new(vec![q(1, 2)], vec![vec![0]], vec![0], vec![0]).is_err());
        assert!(DiscreteWorld::new(vec![q(1, 1)], vec![vec![0]], vec![1], vec![0]).is_err());
        assert!(DiscreteWorld::<f64>::new(vec![0.5, 0.5 + 1e-9], vec![vec![0], vec![1]], vec![0, 0], vec![0]).is_err());
    }

    #[test]
    fn random_worlds_are_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let w: DiscreteWorld<BigRational> = random_world(&mut rng);
            assert!(w.validate().is_ok());
            assert!((2..=12).contains(&w.num_images()));
            assert!((1..=12).contains(&w.num_latents()));
            assert!(w.marginalization_gap().is_zero());
        }
    }
}
