//! The multiplicative Ising measure on `{−1, +1}^ℕ`.
//!
//! Under the infinite-volume measure the layers `τ^r_i = σ_{r·2^i}` (odd `r`)
//! are independent copies of the layer chain `(π, Q)`. Cylinder probabilities,
//! entropies and the sampler are all built on that factorization.
//!
//! Finite-volume bookkeeping on `[1, 2N]`: a layer `r ≤ N` with `ψ₂(r, N) = p`
//! carries `p + 1` bonds `σ_iσ_{2i}` (`i ≤ N`) on `p + 2` sites, and the
//! `⌊N/2⌋` odd sites in `(N, 2N]` are isolated. The layer bond counts add up to `N`.
//! Free energies are normalized by `N` even though the volume is `[1, 2N]`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arith::{koroa_weight, layer_counts, psi2};
use crate::error::{Error, Result};
use crate::ising1d::{
    binary_entropy, log_partition, spin_index, transfer, Boundary, ModelParams, TransferData,
};

/// A finite cylinder `{σ_i = s_i}` with `i ≥ 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CylinderSpec {
    assignments: BTreeMap<u64, i8>,
}

impl CylinderSpec {
    pub fn new(assignments: impl IntoIterator<Item = (u64, i8)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, s) in assignments {
            if i == 0 {
                return Err(Error::InvalidInput("site indices start at 1".into()));
            }
            if s != 1 && s != -1 {
                return Err(Error::InvalidInput(format!("spin value {s} is not ±1")));
            }
            if map.insert(i, s).is_some_and(|old| old != s) {
                return Err(Error::InvalidInput(format!("site {i} assigned twice")));
            }
        }
        if map.is_empty() {
            return Err(Error::InvalidInput("cylinder must be non-empty".into()));
        }
        Ok(Self { assignments: map })
    }

    pub fn assignments(&self) -> &BTreeMap<u64, i8> {
        &self.assignments
    }

    /// Assigned sites grouped by layer: odd part `r` ↦ sorted `(position, spin)`.
    fn by_layer(&self) -> BTreeMap<u64, Vec<(u64, i8)>> {
        let mut layers: BTreeMap<u64, Vec<(u64, i8)>> = BTreeMap::new();
        for (&i, &s) in &self.assignments {
            let v = i.trailing_zeros();
            layers.entry(i >> v).or_default().push((v as u64, s));
        }
        layers
    }
}

/// Log-probability of the chain taking the given values at sorted positions;
/// gaps are bridged with powers of `Q`.
fn layer_marginal_logprob(td: &TransferData, sites: &[(u64, i8)]) -> f64 {
    let (p0, s0) = sites[0];
    let mut lp = td.marginal(p0)[spin_index(s0)].ln();
    for w in sites.windows(2) {
        let (pa, sa) = w[0];
        let (pb, sb) = w[1];
        lp += td.q_power(pb - pa)[spin_index(sa)][spin_index(sb)].ln();
    }
    lp
}

/// `log μ^M_∞` of a cylinder: sum over layers of exact chain marginals.
pub fn cylinder_logprob_sigma(spec: &CylinderSpec, params: &ModelParams) -> f64 {
    let td = transfer(params);
    spec.by_layer().values().map(|sites| layer_marginal_logprob(&td, sites)).sum()
}

/// `log Z^b_N` on `[1, 2N]` from the layer factorization.
pub fn volume_log_partition(n: u64, params: &ModelParams, bc: Boundary) -> f64 {
    let layers: f64 = layer_counts(n)
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(p, &c)| c as f64 * log_partition(p + 1, params, bc))
        .sum();
    let isolated = (n / 2) as f64;
    layers + isolated * isolated_site_log_weight(params, bc)
}

fn isolated_site_log_weight(params: &ModelParams, bc: Boundary) -> f64 {
    (2.0 * (params.bh() + params.boundary_field(bc)).cosh()).ln()
}

/// A truncated series value with a bound on the discarded tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    pub value: f64,
    pub trunc_err: f64,
    pub terms: usize,
}

/// `Σ_{p ≥ m} (a + b p) / 2^{p+2}`.
pub(crate) fn linear_koroa_tail(a: f64, b: f64, m: usize) -> f64 {
    let scale = 2f64.powi(-(m as i32) - 1);
    a * scale + b * (m as f64 + 1.0) * scale
}

/// `f^b = lim (1/N) log Z^b_N`
/// `= Σ_p log Z^{chain, b}_{p+1 bonds} / 2^{p+2} + ½ log(2 cosh(βh + boundary field))`.
pub fn free_energy(bc: Boundary, params: &ModelParams, tol: f64) -> Result<SeriesValue> {
    params.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let (bj, bh, bf) = (params.bj().abs(), params.bh().abs(), params.boundary_field(bc).abs());
    let ln2 = std::f64::consts::LN_2;
    // |log Z_{p+1 bonds}| <= (p+2)(ln 2 + |βh|) + (p+1)|βJ| + |bf|
    let a = 2.0 * (ln2 + bh) + bj + bf;
    let b = ln2 + bh + bj;
    let mut value = 0.5 * isolated_site_log_weight(params, bc);
    let mut p = 0usize;
    loop {
        value += koroa_weight(p as u32) * log_partition(p + 1, params, bc);
        p += 1;
        let tail = linear_koroa_tail(a, b, p);
        if tail < tol {
            return Ok(SeriesValue { value, trunc_err: tail, terms: p });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KsMode {
    /// `Σ_k s_{k+1} / 2^{k+2}` over exact cylinder entropies.
    Series,
    /// Closed form with `ℛ = Σ_k 2^{−(k+1)} Qᵏ` as a matrix series.
    Formula,
    /// Closed form with `ℛ(a,b) = Σ_k 2^{−(k+1)} Q(a,b)ᵏ` taken entrywise.
    FormulaEntrywise,
    /// `(log 2)/2 + H(α)/2`, valid only for `h = 0`.
    ClosedH0,
}

/// Kolmogorov–Sinai entropy of the multiplicative measure, in nats.
pub fn ks_entropy(params: &ModelParams, mode: KsMode, tol: f64) -> Result<f64> {
    params.validate()?;
    let td = transfer(params);
    let rows = td.row_entropies();
    match mode {
        KsMode::Series => {
            if !(tol > 0.0) {
                return Err(Error::InvalidInput("tolerance must be positive".into()));
            }
            let ln2 = std::f64::consts::LN_2;
            let mut m = td.pi;
            let mut s_k = binary_entropy(td.pi);
            let mut total = 0.0;
            let mut k = 0usize;
            loop {
                total += s_k * koroa_weight(k as u32);
                // s_{k+1} <= (k+1) log 2, so the tail after k is log 2 · (k+3)/2^{k+2}
                if ln2 * (k as f64 + 3.0) * 2f64.powi(-(k as i32) - 2) < tol {
                    return Ok(total);
                }
                s_k += m[0] * rows[0] + m[1] * rows[1];
                m = [
                    m[0] * td.q[0][0] + m[1] * td.q[1][0],
                    m[0] * td.q[0][1] + m[1] * td.q[1][1],
                ];
                k += 1;
            }
        }
        KsMode::Formula => {
            // ℛ = ½ (I − Q/2)^{-1}
            let a = [[1.0 - td.q[0][0] / 2.0, -td.q[0][1] / 2.0], [-td.q[1][0] / 2.0, 1.0 - td.q[1][1] / 2.0]];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            let r = [
                [0.5 * a[1][1] / det, -0.5 * a[0][1] / det],
                [-0.5 * a[1][0] / det, 0.5 * a[0][0] / det],
            ];
            Ok(ks_closed_form(&td, &r, &rows))
        }
        KsMode::FormulaEntrywise => {
            let r = td.q.map(|row| row.map(|x| 0.5 / (1.0 - x / 2.0)));
            Ok(ks_closed_form(&td, &r, &rows))
        }
        KsMode::ClosedH0 => {
            if params.h != 0.0 {
                return Err(Error::Precondition("closed_h0 entropy requires h = 0".into()));
            }
            let alpha = 1.0 / (1.0 + (-2.0 * params.bj()).exp());
            Ok(0.5 * std::f64::consts::LN_2 + 0.5 * binary_entropy([alpha, 1.0 - alpha]))
        }
    }
}

/// `½ H(π) + ½ Σ_{a,b} π(a) ℛ(a,b) (−Σ_c Q(b,c) log Q(b,c))`.
fn ks_closed_form(td: &TransferData, r: &[[f64; 2]; 2], rows: &[f64; 2]) -> f64 {
    let mut s = 0.5 * binary_entropy(td.pi);
    for a in 0..2 {
        for b in 0..2 {
            s += 0.5 * td.pi[a] * r[a][b] * rows[b];
        }
    }
    s
}

/// Random stream for one `(seed, replica, layer)` triple.
///
/// The key is a splitmix-style hash of the triple; streams never depend on
/// the order in which layers or replicas are visited.
pub fn layer_rng(seed: u64, replica: u64, r: u64) -> Xoshiro256PlusPlus {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    Xoshiro256PlusPlus::seed_from_u64(mix(mix(mix(seed) ^ replica) ^ r))
}

/// Runs the layer chain for `len` sites, calling `emit(position, spin)`.
pub fn sample_layer(td: &TransferData, len: usize, rng: &mut impl Rng, mut emit: impl FnMut(usize, i8)) {
    let draw = |rng: &mut dyn rand::RngCore, p_plus: f64| -> usize {
        if rng.random::<f64>() < p_plus {
            0
        } else {
            1
        }
    };
    let mut state = draw(rng, td.pi[0]);
    emit(0, if state == 0 { 1 } else { -1 });
    for i in 1..len {
        state = draw(rng, td.q[state][0]);
        emit(i, if state == 0 { 1 } else { -1 });
    }
}

/// One configuration `σ_{[1,N]}` (`result[i − 1] = σ_i`).
///
/// Layer `r` uses the stream `(seed, replica, r)` for its `ψ₂(r, N) + 1` sites,
/// so a sample at volume `N` is the restriction of the sample at any larger volume.
pub fn sample_replica(n: u64, td: &TransferData, seed: u64, replica: u64) -> Vec<i8> {
    let mut sigma = vec![0i8; n as usize];
    for r in (1..=n).step_by(2) {
        let len = psi2(r, n).expect("odd r <= n") as usize + 1;
        let mut rng = layer_rng(seed, replica, r);
        sample_layer(td, len, &mut rng, |i, s| sigma[((r << i) - 1) as usize] = s);
    }
    sigma
}

/// A reproducible batch of configurations on `[1, N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub n: u64,
    pub seed: u64,
    pub params: ModelParams,
    pub configurations: Vec<Vec<i8>>,
}

pub fn sample(n: u64, params: &ModelParams, count: usize, seed: u64) -> Result<SampleBatch> {
    params.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("volume must be >= 1".into()));
    }
    let td = transfer(params);
    let configurations = (0..count as u64)
        .into_par_iter()
        .map(|replica| sample_replica(n, &td, seed, replica))
        .collect();
    Ok(SampleBatch { n, seed, params: *params, configurations })
}

impl SampleBatch {
    /// Binary layout (little-endian): `N: u64`, `count: u64`, `seed: u64`,
    /// `beta, J, h: f64`, then `count × N` bytes with `0x00 = −1`, `0x01 = +1`.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.n.to_le_bytes())?;
        w.write_all(&(self.configurations.len() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for x in [self.params.beta, self.params.j, self.params.h] {
            w.write_all(&x.to_le_bytes())?;
        }
        for config in &self.configurations {
            let bytes: Vec<u8> = config.iter().map(|&s| u8::from(s > 0)).collect();
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut dyn Read| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let n = u64::from_le_bytes(next(&mut r)?);
        let count = u64::from_le_bytes(next(&mut r)?);
        let seed = u64::from_le_bytes(next(&mut r)?);
        let beta = f64::from_le_bytes(next(&mut r)?);
        let j = f64::from_le_bytes(next(&mut r)?);
        let h = f64::from_le_bytes(next(&mut r)?);
        let mut configurations = Vec::with_capacity(count as usize);
        let mut buf = vec![0u8; n as usize];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            configurations.push(
                buf.iter()
                    .map(|&b| match b {
                        0 => Ok(-1),
                        1 => Ok(1),
                        other => Err(Error::InvalidInput(format!("bad spin byte {other:#04x}"))),
                    })
                    .collect::<Result<Vec<i8>>>()?,
            );
        }
        Ok(Self { n, seed, params: ModelParams::new(beta, j, h), configurations })
    }

    /// CSV with header `replica,s1,…,sN` and spins as `±1`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["replica".to_string()];
        header.extend((1..=self.n).map(|i| format!("s{i}")));
        out.write_record(&header).map_err(csv_err)?;
        for (k, config) in self.configurations.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(config.iter().map(|s| s.to_string()));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Exact joint laws of `(σ_{p_1}, …, σ_{p_k})` and `(σ_{m p_1}, …, σ_{m p_k})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub indices: Vec<u64>,
    pub multiplier: u64,
    /// Log-probabilities indexed by pattern; bit `j` set means spin `j` is `−1`.
    pub logprob_before: Vec<f64>,
    pub logprob_after: Vec<f64>,
    /// Largest absolute difference of pattern probabilities.
    pub max_abs_diff: f64,
    pub invariant: bool,
}

pub const INVARIANCE_TOL: f64 = 1e-12;

fn joint_logprobs(indices: &[u64], params: &ModelParams) -> Result<Vec<f64>> {
    (0..1usize << indices.len())
        .map(|pattern| {
            let spec = CylinderSpec::new(indices.iter().enumerate().map(|(j, &i)| {
                (i, if (pattern >> j) & 1 == 0 { 1 } else { -1 })
            }))?;
            Ok(cylinder_logprob_sigma(&spec, params))
        })
        .collect()
}

pub fn check_mult_invariance(indices: &[u64], m: u64, params: &ModelParams) -> Result<InvarianceReport> {
    if indices.is_empty() || indices.len() > 16 {
        return Err(Error::InvalidInput("between 1 and 16 indices required".into()));
    }
    if m == 0 {
        return Err(Error::InvalidInput("multiplier must be >= 1".into()));
    }
    let scaled: Vec<u64> = indices
        .iter()
        .map(|&i| i.checked_mul(m).ok_or_else(|| Error::InvalidInput("index overflow".into())))
        .collect::<Result<_>>()?;
    let before = joint_logprobs(indices, params)?;
    let after = joint_logprobs(&scaled, params)?;
    let max_abs_diff = before
        .iter()
        .zip(&after)
        .map(|(a, b)| (a.exp() - b.exp()).abs())
        .fold(0.0, f64::max);
    Ok(InvarianceReport {
        indices: indices.to_vec(),
        multiplier: m,
        logprob_before: before,
        logprob_after: after,
        max_abs_diff,
        invariant: max_abs_diff <= INVARIANCE_TOL,
    })
}

/// `log μ^M_∞(σ_{[1,N]})` of a full configuration.
///
/// Transition counts are collected first and equal log-weights are merged
/// before multiplying, so configurations of a uniform measure all get the
/// bit-identical value.
pub fn configuration_logprob(sigma: &[i8], td: &TransferData) -> f64 {
    let n = sigma.len() as u64;
    let mut init = [0u64; 2];
    let mut trans = [[0u64; 2]; 2];
    for r in (1..=n).step_by(2) {
        let mut prev = spin_index(sigma[(r - 1) as usize]);
        init[prev] += 1;
        let mut i = r * 2;
        while i <= n {
            let cur = spin_index(sigma[(i - 1) as usize]);
            trans[prev][cur] += 1;
            prev = cur;
            i *= 2;
        }
    }
    let mut groups: Vec<(f64, u64)> = Vec::with_capacity(6);
    let mut push = |value: f64, count: u64| {
        if count == 0 {
            return;
        }
        match groups.iter_mut().find(|(v, _)| v.to_bits() == value.to_bits()) {
            Some(g) => g.1 += count,
            None => groups.push((value, count)),
        }
    };
    for a in 0..2 {
        push(td.log_pi(a), init[a]);
        for b in 0..2 {
            push(td.log_q(a, b), trans[a][b]);
        }
    }
    groups.iter().map(|&(v, c)| v * c as f64).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub variance: f64,
    pub count: usize,
}

pub fn mean_estimate(values: &[f64]) -> MeanEstimate {
    let count = values.len();
    // shifting by the first value keeps constant samples exactly constant
    let x0 = values.first().copied().unwrap_or(0.0);
    let mean = x0 + values.iter().map(|x| x - x0).sum::<f64>() / count as f64;
    let variance = if count > 1 {
        values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64
    } else {
        0.0
    };
    MeanEstimate { mean, stderr: (variance / count as f64).sqrt(), variance, count }
}

/// Shannon–McMillan–Breiman statistic `−(1/N) log μ^M_∞(σ_{[1,N]})` over sampled configurations.
pub fn smb_estimate(n: u64, params: &ModelParams, count: usize, seed: u64) -> Result<MeanEstimate> {
    params.validate()?;
    if n == 0 || count == 0 {
        return Err(Error::InvalidInput("volume and count must be >= 1".into()));
    }
    let td = transfer(params);
    let values: Vec<f64> = (0..count as u64)
        .into_par_iter()
        .map(|replica| {
            let sigma = sample_replica(n, &td, seed, replica);
            -configuration_logprob(&sigma, &td) / n as f64
        })
        .collect();
    Ok(mean_estimate(&values))
}
