//! Integer structure of the model: multi-prime decompositions, the layer
//! partition of `[1, N]`, smooth numbers and the two weight series that turn
//! layer averages into volume averages.
//!
//! Everything here is exact integer arithmetic except the final weights,
//! which are rounded once to `f64`. Volumes up to `2^40` are supported; any
//! product that would overflow `u64` is reported rather than wrapped.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::error::{Error, Result};

/// A finite set of distinct primes `p_1 < ... < p_d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PrimeBasis {
    primes: Vec<u64>,
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u64;
    while d.saturating_mul(d) <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

impl PrimeBasis {
    /// Builds a basis from primes in any order. Duplicates and non-primes are rejected.
    pub fn new(mut primes: Vec<u64>) -> Result<Self> {
        if primes.is_empty() {
            return Err(Error::InvalidInput("prime basis must be non-empty".into()));
        }
        if let Some(&p) = primes.iter().find(|&&p| !is_prime(p)) {
            return Err(Error::InvalidInput(format!("{p} is not prime")));
        }
        primes.sort_unstable();
        if primes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("duplicate prime in basis".into()));
        }
        Ok(Self { primes })
    }

    /// The basis `{2}` of the multiplicative Ising model.
    pub fn binary() -> Self {
        Self { primes: vec![2] }
    }

    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    pub fn dim(&self) -> usize {
        self.primes.len()
    }

    pub fn axis_of(&self, p: u64) -> Option<usize> {
        self.primes.iter().position(|&q| q == p)
    }

    pub fn is_coprime(&self, n: u64) -> bool {
        self.primes.iter().all(|&p| !n.is_multiple_of(p))
    }

    /// `κ = Π(1 − 1/p_i)` as a reduced fraction, obtained by inclusion–exclusion
    /// over all subsets of the basis.
    pub fn kappa_fraction(&self) -> Result<(u128, u128)> {
        let d = self.dim();
        if d > 24 {
            return Err(Error::Infeasible("inclusion-exclusion over more than 24 primes".into()));
        }
        let mut product: u128 = 1;
        for &p in &self.primes {
            product = product
                .checked_mul(p as u128)
                .ok_or_else(|| Error::Infeasible("prime product overflows u128".into()))?;
        }
        let mut numerator: i128 = 0;
        for mask in 0u32..(1 << d) {
            let mut sub: u128 = 1;
            for (k, &p) in self.primes.iter().enumerate() {
                if mask & (1 << k) != 0 {
                    sub *= p as u128;
                }
            }
            let term = (product / sub) as i128;
            if mask.count_ones() % 2 == 0 {
                numerator += term;
            } else {
                numerator -= term;
            }
        }
        let numerator = numerator as u128;
        let (mut a, mut b) = (numerator, product);
        while b != 0 {
            (a, b) = (b, a % b);
        }
        Ok((numerator / a, product / a))
    }

    /// Density of integers coprime to every basis prime.
    pub fn kappa(&self) -> f64 {
        let (num, den) = self
            .kappa_fraction()
            .expect("basis too large for inclusion-exclusion");
        num as f64 / den as f64
    }
}

/// The coordinates of a positive integer `i = r · Π p_k^{x_k}` with `r` coprime to the basis.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LayerIndex {
    pub r: u64,
    pub exponents: Vec<u32>,
}

impl LayerIndex {
    /// `r · Π p_k^{x_k}`, or `None` on overflow.
    pub fn reconstruct(&self, basis: &PrimeBasis) -> Option<u64> {
        let mut value = self.r;
        for (&p, &x) in basis.primes().iter().zip(&self.exponents) {
            for _ in 0..x {
                value = value.checked_mul(p)?;
            }
        }
        Some(value)
    }
}

pub fn decompose(i: u64, basis: &PrimeBasis) -> Result<LayerIndex> {
    if i == 0 {
        return Err(Error::InvalidInput("index must be >= 1".into()));
    }
    let mut r = i;
    let exponents = basis
        .primes()
        .iter()
        .map(|&p| {
            let mut x = 0;
            while r.is_multiple_of(p) {
                r /= p;
                x += 1;
            }
            x
        })
        .collect();
    Ok(LayerIndex { r, exponents })
}

/// `⌊log₂(N/r)⌋` for odd `r ≤ N`, by repeated doubling.
pub fn psi2(r: u64, n: u64) -> Result<u32> {
    if r == 0 || r.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("layer index {r} must be odd and positive")));
    }
    if r > n {
        return Err(Error::InvalidInput(format!("layer index {r} exceeds volume {n}")));
    }
    let mut v = r;
    let mut psi = 0;
    // v <= n - v  <=>  2v <= n without overflow
    while v <= n - v {
        v *= 2;
        psi += 1;
    }
    Ok(psi)
}

/// Number of odd `r ≤ N` with `ψ₂(r, N) = p`, for `p = 0..=⌊log₂ N⌋`.
///
/// `ψ₂(r, N) ≥ p` iff `r ≤ ⌊N / 2^p⌋`, so the counts are differences of odd counts.
pub fn layer_counts(n: u64) -> Vec<u64> {
    let odd_upto = |m: u64| m.div_ceil(2);
    let mut counts = Vec::new();
    let mut p = 0u32;
    while p < 64 && (n >> p) > 0 {
        let here = odd_upto(n >> p);
        let next = if p + 1 < 64 { odd_upto(n >> (p + 1)) } else { 0 };
        counts.push(here - next);
        p += 1;
    }
    counts
}

/// A finite set of exponent vectors in `ℕ₀^d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Region {
    points: BTreeSet<Vec<u32>>,
}

impl Region {
    pub fn new(points: impl IntoIterator<Item = Vec<u32>>) -> Self {
        Self { points: points.into_iter().collect() }
    }

    /// The lattice interval `{0, …, len−1}` in one dimension.
    pub fn interval(len: u32) -> Self {
        Self::new((0..len).map(|x| vec![x]))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, x: &[u32]) -> bool {
        self.points.contains(x)
    }

    pub fn points(&self) -> impl Iterator<Item = &Vec<u32>> {
        self.points.iter()
    }

    pub fn insert(&mut self, x: Vec<u32>) -> bool {
        self.points.insert(x)
    }

    pub fn dim(&self) -> Option<usize> {
        self.points.iter().next().map(Vec::len)
    }

    /// Divisor-closed: every coordinatewise predecessor of a point is present.
    pub fn is_lower_set(&self) -> bool {
        self.points.iter().all(|x| {
            (0..x.len()).filter(|&k| x[k] > 0).all(|k| {
                let mut y = x.clone();
                y[k] -= 1;
                self.points.contains(&y)
            })
        })
    }
}

/// Partition of `[1, N]` into layers: `r ↦ Λ^r = {x : r Π p_k^{x_k} ≤ N}`.
pub fn layer_partition(n: u64, basis: &PrimeBasis) -> BTreeMap<u64, Region> {
    let mut layers: BTreeMap<u64, Region> = BTreeMap::new();
    for i in 1..=n {
        let idx = decompose(i, basis).expect("i >= 1");
        layers.entry(idx.r).or_default().insert(idx.exponents);
    }
    layers
}

/// Increasing enumeration of basis-smooth numbers `1 = n_1 < n_2 < …`.
///
/// Heap merge of prime multiples; each number is generated exactly once by
/// multiplying only by primes at or above the largest prime already used.
/// Iteration stops before `u64` overflow.
#[derive(Debug, Clone)]
pub struct SmoothNumbers {
    primes: Vec<u64>,
    heap: BinaryHeap<Reverse<(u64, usize)>>,
}

impl SmoothNumbers {
    pub fn new(basis: &PrimeBasis) -> Self {
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((1, 0)));
        Self { primes: basis.primes().to_vec(), heap }
    }
}

impl Iterator for SmoothNumbers {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        let Reverse((n, from)) = self.heap.pop()?;
        for k in from..self.primes.len() {
            if let Some(m) = n.checked_mul(self.primes[k]) {
                self.heap.push(Reverse((m, k)));
            }
        }
        Some(n)
    }
}

/// Exponent vectors of the smooth numbers `≤ m`; this is `Λ^r_N` for `m = ⌊N/r⌋`.
pub fn smooth_region(m: u64, basis: &PrimeBasis) -> Region {
    Region::new(
        SmoothNumbers::new(basis)
            .take_while(|&n| n <= m)
            .map(|n| decompose(n, basis).expect("smooth numbers are positive").exponents),
    )
}

/// The region made of the first `j` smooth numbers (the smallest layer of cardinality `j`).
pub fn canonical_region(j: usize, basis: &PrimeBasis) -> Region {
    Region::new(
        SmoothNumbers::new(basis)
            .take(j)
            .map(|n| decompose(n, basis).expect("smooth numbers are positive").exponents),
    )
}

/// Weight `1/2^{p+2}` attached to layers with `ψ₂ = p` (keyed by `ψ₂`, i.e. cardinality − 1).
pub fn koroa_weight(p: u32) -> f64 {
    2f64.powi(-(p as i32) - 2)
}

pub fn koroa_weights(k_max: u32) -> Vec<f64> {
    (0..=k_max).map(koroa_weight).collect()
}

/// Polynomial growth bound `|φ(n)| ≤ c · max(n, 1)^q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthBound {
    pub c: f64,
    pub q: f64,
}

impl GrowthBound {
    fn at(&self, p: u32) -> f64 {
        self.c * (p.max(1) as f64).powf(self.q)
    }

    /// Bound on `Σ_{p ≥ m} |φ(p)| / 2^{p+2}` via the geometric ratio of the majorant.
    pub fn koroa_tail(&self, m: u32) -> f64 {
        let m = m.max(1);
        let ratio = ((m as f64 + 1.0) / m as f64).powf(self.q) / 2.0;
        if ratio >= 1.0 {
            return f64::INFINITY;
        }
        self.at(m) * koroa_weight(m) / (1.0 - ratio)
    }
}

/// `Σ_p φ(p)/2^{p+2}` truncated once the growth-bound tail is below `tol`.
/// Returns `(value, tail_bound)`.
pub fn koroa_series(phi: impl Fn(u32) -> f64, growth: GrowthBound, tol: f64) -> (f64, f64) {
    let mut sum = 0.0;
    let mut p = 0u32;
    loop {
        sum += phi(p) * koroa_weight(p);
        p += 1;
        let tail = growth.koroa_tail(p);
        if tail < tol || p > 1000 {
            return (sum, tail);
        }
    }
}

/// `(1/N) Σ_{odd i ≤ N} φ(⌊log₂(N/i)⌋)`, evaluated by grouping equal `ψ₂` values.
pub fn finite_average(phi: impl Fn(u32) -> f64, n: u64) -> f64 {
    let total: f64 = layer_counts(n)
        .iter()
        .enumerate()
        .map(|(p, &c)| c as f64 * phi(p as u32))
        .sum();
    total / n as f64
}

/// The weight series `w_j = κ (e^{−ρ⁻(j)} − e^{−ρ⁺(j)})`, keyed by layer cardinality `j ≥ 1`.
///
/// `|D(ρ)|` counts smooth numbers `≤ e^ρ`, so `ρ⁻(j) = log n_j` and `ρ⁺(j) = log n_{j+1}`.
#[derive(Debug, Clone)]
pub struct WeightSeries {
    basis: PrimeBasis,
    kappa: f64,
    /// `n_1, …, n_{J+1}`.
    smooth: Vec<u64>,
    /// `w_1, …, w_J`.
    weights: Vec<f64>,
    tail_first_moment: f64,
}

impl WeightSeries {
    pub fn basis(&self) -> &PrimeBasis {
        &self.basis
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Number of retained terms `J`.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `w_j` for `1 ≤ j ≤ J`.
    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j - 1]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The `j`-th smooth number `n_j` for `1 ≤ j ≤ J + 1`.
    pub fn smooth(&self, j: usize) -> u64 {
        self.smooth[j - 1]
    }

    pub fn rho_minus(&self, j: usize) -> f64 {
        (self.smooth(j) as f64).ln()
    }

    pub fn rho_plus(&self, j: usize) -> f64 {
        (self.smooth(j + 1) as f64).ln()
    }

    /// Upper bound on `Σ_{j > J} j · w_j`.
    pub fn tail_bound(&self) -> f64 {
        self.tail_first_moment
    }

    /// `Σ_{j > J} w_j = κ / n_{J+1}` (exact telescoping).
    pub fn tail_mass(&self) -> f64 {
        self.kappa / *self.smooth.last().expect("n_1 always present") as f64
    }
}

fn neumaier_add(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

/// Builds the weight series, truncated once the first-moment tail drops below `tol`.
///
/// The tail is evaluated from the Abel summation
/// `Σ_{j>J} j w_j = κ (J+1)/n_{J+1} + (1 − κ Σ_{j≤J+1} 1/n_j)`, using
/// `Σ_j 1/n_j = Π p/(p−1) = 1/κ`, plus a rounding margin.
pub fn kie_weights(basis: &PrimeBasis, tol: f64) -> Result<WeightSeries> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let kappa = basis.kappa();
    let mut smooth_iter = SmoothNumbers::new(basis);
    let mut smooth = vec![smooth_iter.next().expect("1 is smooth")];
    let mut weights = Vec::new();
    let (mut recip_sum, mut recip_comp) = (1.0, 0.0);
    loop {
        let j = weights.len();
        let next = smooth_iter.next().ok_or_else(|| {
            Error::Precondition(format!("smooth numbers overflow u64 before tail < {tol:e}"))
        })?;
        let (nj, nnext) = (smooth[j] as f64, next as f64);
        weights.push(kappa * (1.0 / nj - 1.0 / nnext));
        smooth.push(next);
        neumaier_add(&mut recip_sum, &mut recip_comp, 1.0 / nnext);

        let big_j = weights.len();
        let margin = 4.0 * f64::EPSILON * (big_j as f64 + 1.0);
        let tail = kappa * (big_j as f64 + 1.0) / nnext
            + (1.0 - kappa * (recip_sum + recip_comp)).max(0.0)
            + margin;
        if tail < tol {
            return Ok(WeightSeries {
                basis: basis.clone(),
                kappa,
                smooth,
                weights,
                tail_first_moment: tail,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(p: &[u64]) -> PrimeBasis {
        PrimeBasis::new(p.to_vec()).unwrap()
    }

    #[test]
    fn basis_validation() {
        assert!(PrimeBasis::new(vec![]).is_err());
        assert!(PrimeBasis::new(vec![4]).is_err());
        assert!(PrimeBasis::new(vec![3, 3]).is_err());
        assert_eq!(basis(&[5, 2, 3]).primes(), &[2, 3, 5]);
    }

    #[test]
    fn decompose_examples() {
        let d = decompose(12, &basis(&[2])).unwrap();
        assert_eq!((d.r, d.exponents), (3, vec![2]));
        let d = decompose(1, &basis(&[2, 3])).unwrap();
        assert_eq!((d.r, d.exponents), (1, vec![0, 0]));
        let d = decompose(24, &basis(&[2, 3])).unwrap();
        assert_eq!((d.r, d.exponents), (1, vec![3, 1]));
        assert!(decompose(0, &basis(&[2])).is_err());
    }

    #[test]
    fn decompose_reconstructs_up_to_a_million() {
        for b in [basis(&[2]), basis(&[2, 3]), basis(&[2, 3, 5])] {
            for i in 1..=1_000_000u64 {
                let d = decompose(i, &b).unwrap();
                assert_eq!(d.reconstruct(&b), Some(i));
                assert!(b.is_coprime(d.r));
            }
        }
    }

    #[test]
    fn psi2_examples_and_errors() {
        assert_eq!(psi2(1, 8).unwrap(), 3);
        assert_eq!(psi2(3, 8).unwrap(), 1);
        assert_eq!(psi2(5, 8).unwrap(), 0);
        assert!(psi2(9, 8).is_err());
        assert!(psi2(2, 8).is_err());
        assert_eq!(psi2(1, u64::MAX).unwrap(), 63);
    }

    #[test]
    fn psi2_boundary_cases_are_exact() {
        for r in (1..200u64).step_by(2) {
            for k in 0..20 {
                let n = r << k;
                assert_eq!(psi2(r, n).unwrap(), k);
                assert_eq!(psi2(r, n - 1).unwrap_or(0), if k == 0 { 0 } else { k - 1 });
            }
        }
    }

    #[test]
    fn layer_counts_match_direct_loop() {
        for n in 1..600u64 {
            let mut direct = vec![0u64; 64];
            for r in (1..=n).step_by(2) {
                direct[psi2(r, n).unwrap() as usize] += 1;
            }
            let counts = layer_counts(n);
            assert_eq!(&direct[..counts.len()], &counts[..]);
            assert!(direct[counts.len()..].iter().all(|&c| c == 0));
        }
    }

    #[test]
    fn partition_examples() {
        let p = layer_partition(8, &basis(&[2]));
        let cards: Vec<(u64, usize)> = p.iter().map(|(&r, reg)| (r, reg.len())).collect();
        assert_eq!(cards, vec![(1, 4), (3, 2), (5, 1), (7, 1)]);
        assert_eq!(p[&1], Region::interval(4));

        let p = layer_partition(1, &basis(&[2, 3]));
        assert_eq!(p.len(), 1);
        assert_eq!(p[&1], Region::new([vec![0, 0]]));

        let p = layer_partition(6, &basis(&[2, 3]));
        assert_eq!(p.len(), 2);
        assert_eq!(
            p[&1],
            Region::new([vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1]])
        );
        assert_eq!(p[&5], Region::new([vec![0, 0]]));
    }

    /// Grows the partition one integer at a time up to 10^5; each new point must
    /// find all of its predecessors already present, which keeps every `Λ^r`
    /// a lower set for every intermediate `N`.
    #[test]
    fn partition_is_lower_set_for_every_n() {
        for b in [basis(&[2]), basis(&[2, 3]), basis(&[2, 3, 5])] {
            let mut layers: BTreeMap<u64, Region> = BTreeMap::new();
            let mut total = 0usize;
            for i in 1..=100_000u64 {
                let idx = decompose(i, &b).unwrap();
                let region = layers.entry(idx.r).or_default();
                for k in 0..b.dim() {
                    if idx.exponents[k] > 0 {
                        let mut y = idx.exponents.clone();
                        y[k] -= 1;
                        assert!(region.contains(&y), "N={i} breaks lower-set property");
                    }
                }
                assert!(region.insert(idx.exponents), "index {i} placed twice");
                total += 1;
            }
            assert_eq!(layers.values().map(Region::len).sum::<usize>(), total);
            for (&r, region) in &layers {
                assert_eq!(*region, smooth_region(100_000 / r, &b));
            }
        }
    }

    #[test]
    fn partition_snapshots_are_lower_sets() {
        for b in [basis(&[2]), basis(&[2, 3]), basis(&[2, 3, 5])] {
            for n in [1u64, 2, 17, 360, 1000, 4097] {
                let p = layer_partition(n, &b);
                assert_eq!(p.values().map(Region::len).sum::<usize>() as u64, n);
                assert!(p.values().all(Region::is_lower_set));
            }
        }
    }

    #[test]
    fn smooth_numbers_match_trial_division() {
        let b = basis(&[2, 3, 5]);
        let from_heap: Vec<u64> = SmoothNumbers::new(&b).take_while(|&n| n <= 5000).collect();
        let direct: Vec<u64> = (1..=5000u64)
            .filter(|&n| decompose(n, &b).unwrap().r == 1)
            .collect();
        assert_eq!(from_heap, direct);
        assert_eq!(SmoothNumbers::new(&basis(&[2])).count(), 64);
    }

    #[test]
    fn kappa_values() {
        assert_eq!(basis(&[2]).kappa(), 0.5);
        assert_eq!(basis(&[2, 3]).kappa_fraction().unwrap(), (1, 3));
        assert_eq!(basis(&[2, 3, 5]).kappa_fraction().unwrap(), (4, 15));
        assert_eq!(basis(&[2, 3]).kappa(), 1.0 / 3.0);
        let k = basis(&[2, 3, 5]).kappa();
        assert!((k - 0.5 * (2.0 / 3.0) * 0.8).abs() < 1e-15);
    }

    #[test]
    fn koroa_weight_values() {
        assert_eq!(koroa_weight(0), 0.25);
        assert_eq!(koroa_weight(1), 0.125);
        let (sum, tail) = koroa_series(|_| 1.0, GrowthBound { c: 1.0, q: 0.0 }, 1e-12);
        assert!((sum - 0.5).abs() <= tail + 1e-15);
        let (sum, tail) = koroa_series(|p| p as f64, GrowthBound { c: 1.0, q: 1.0 }, 1e-12);
        assert!((sum - 0.5).abs() <= tail + 1e-15);
    }

    #[test]
    fn finite_average_constant_is_odd_density() {
        for n in 1..300u64 {
            let expected = n.div_ceil(2) as f64 / n as f64;
            assert!((finite_average(|_| 1.0, n) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn finite_average_matches_direct_sum() {
        let phi = |p: u32| (p as f64).powi(2) - 3.0;
        for n in [1u64, 7, 64, 1000, 12345] {
            let direct: f64 = (1..=n)
                .step_by(2)
                .map(|i| phi(((n as f64) / (i as f64)).log2().floor() as u32))
                .sum::<f64>()
                / n as f64;
            assert!((finite_average(phi, n) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn kie_weights_binary_basis_reduces_to_koroa() {
        let w = kie_weights(&basis(&[2]), 1e-12).unwrap();
        for j in 1..=w.len() {
            assert_eq!(w.weight(j), 2f64.powi(-(j as i32) - 1));
            assert_eq!(w.weight(j), koroa_weight(j as u32 - 1));
            assert_eq!(w.smooth(j), 1 << (j - 1));
        }
    }

    #[test]
    fn kie_weights_two_three() {
        let w = kie_weights(&basis(&[2, 3]), 1e-9).unwrap();
        let smooth: Vec<u64> = (1..=6).map(|j| w.smooth(j)).collect();
        assert_eq!(smooth, vec![1, 2, 3, 4, 6, 8]);
        assert!((w.weight(1) - 1.0 / 6.0).abs() < 1e-16);
        assert!((w.weight(2) - 1.0 / 18.0).abs() < 1e-16);
        assert_eq!(w.rho_minus(1), 0.0);
        assert!((w.rho_plus(1) - 2f64.ln()).abs() < 1e-16);
    }

    #[test]
    fn kie_mass_identities() {
        for b in [basis(&[2]), basis(&[2, 3]), basis(&[2, 3, 5])] {
            let w = kie_weights(&b, 1e-9).unwrap();
            let mass: f64 = w.weights().iter().sum();
            let first: f64 = w.weights().iter().enumerate().map(|(k, w)| (k + 1) as f64 * w).sum();
            assert!((mass + w.tail_mass() - b.kappa()).abs() < 1e-12);
            assert!((mass - b.kappa()).abs() <= w.tail_mass() + 1e-12);
            assert!(first <= 1.0 + 1e-12);
            assert!((1.0 - first) <= w.tail_bound() + 1e-12, "{:?}", b);
            assert!((first - 1.0).abs() < 1e-8);
        }
    }
}
