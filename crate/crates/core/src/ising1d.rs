//! The nearest-neighbour Ising chain that lives on every layer.
//!
//! Spin indices: `0 ↔ +1`, `1 ↔ −1` (so `e_+ = (1, 0)`). The transfer matrix is
//! `K(a, b) = exp(β(J ab + h b))`, i.e. the field of the right site rides on the bond.
//! All logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observable::FirstLayerObservable;

/// Largest window width accepted by the tilted transfer operator.
pub const MAX_WINDOW: u32 = 12;

pub(crate) const SPINS: [f64; 2] = [1.0, -1.0];

/// Index of a spin value in transfer-matrix order.
#[inline]
pub fn spin_index(s: i8) -> usize {
    if s > 0 {
        0
    } else {
        1
    }
}

/// Coupling carried by the `±` boundary term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BcCoupling {
    /// Boundary energy `−βJ(±σ)`.
    #[default]
    J,
    /// Boundary energy `−β(±σ)`.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    Free,
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub h: f64,
    pub bc_coupling: BcCoupling,
}

impl ModelParams {
    pub fn new(beta: f64, j: f64, h: f64) -> Self {
        Self { beta, j, h, bc_coupling: BcCoupling::J }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.beta, self.j, self.h].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput("beta, J and h must be finite".into()))
        }
    }

    /// Reduced coupling `βJ`.
    pub fn bj(&self) -> f64 {
        self.beta * self.j
    }

    /// Reduced field `βh`.
    pub fn bh(&self) -> f64 {
        self.beta * self.h
    }

    /// Reduced field `β c (±1)` added to the last site by the boundary condition.
    pub fn boundary_field(&self, bc: Boundary) -> f64 {
        let c = match self.bc_coupling {
            BcCoupling::J => self.j,
            BcCoupling::Unit => 1.0,
        };
        match bc {
            Boundary::Free => 0.0,
            Boundary::Plus => self.beta * c,
            Boundary::Minus => -self.beta * c,
        }
    }
}

/// Perron data of the layer chain and its Markov representation `(π, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferData {
    pub k: [[f64; 2]; 2],
    pub lambda: f64,
    pub e_tilde: [f64; 2],
    pub q: [[f64; 2]; 2],
    pub pi: [f64; 2],
    log_q: [[f64; 2]; 2],
    log_pi: [f64; 2],
}

pub fn transfer(params: &ModelParams) -> TransferData {
    let (bj, bh) = (params.bj(), params.bh());
    let mut k = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            k[a][b] = (bj * SPINS[a] * SPINS[b] + bh * SPINS[b]).exp();
        }
    }
    let (e, ei) = (bj.exp(), (-bj).exp());
    let (ch, sh) = (bh.cosh(), bh.sinh());
    let sqrt_d = (e * sh).hypot(ei);
    let lambda = e * ch + sqrt_d;

    // Pick the eigenvector row that avoids cancellation in λ − K(a,a).
    let raw = if sh >= 0.0 { [e * sh + sqrt_d, k[1][0]] } else { [k[0][1], sqrt_d - e * sh] };
    let norm = raw[0].hypot(raw[1]);
    let e_tilde = [raw[0] / norm, raw[1] / norm];

    let mut q = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            q[a][b] = k[a][b] * e_tilde[b] / (lambda * e_tilde[a]);
        }
    }

    // Initial law as the closed-form limit of the first-spin marginal:
    // π(s) = e^{βhs} Σ_{a,b} e^{βJsa} e^{βha} ẽ_a ẽ_b / Σ_{a,b} λ e^{βha} ẽ_a ẽ_b.
    let esum = e_tilde[0] + e_tilde[1];
    let den: f64 = (0..2).map(|a| lambda * (bh * SPINS[a]).exp() * e_tilde[a] * esum).sum();
    let num = |s: f64| -> f64 {
        (bh * s).exp()
            * (0..2)
                .map(|a| (bj * s * SPINS[a]).exp() * (bh * SPINS[a]).exp() * e_tilde[a] * esum)
                .sum::<f64>()
    };
    let pi = [num(1.0) / den, num(-1.0) / den];

    let log_q = q.map(|row| row.map(f64::ln));
    let log_pi = pi.map(f64::ln);
    TransferData { k, lambda, e_tilde, q, pi, log_q, log_pi }
}

pub(crate) fn mat_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Shannon entropy (nats) of a distribution on `{+1, −1}`.
pub fn binary_entropy(p: [f64; 2]) -> f64 {
    -(xlogx(p[0]) + xlogx(p[1]))
}

impl TransferData {
    pub fn log_q(&self, a: usize, b: usize) -> f64 {
        self.log_q[a][b]
    }

    pub fn log_pi(&self, a: usize) -> f64 {
        self.log_pi[a]
    }

    /// `Qⁿ` by repeated squaring.
    pub fn q_power(&self, mut n: u64) -> [[f64; 2]; 2] {
        let mut result = [[1.0, 0.0], [0.0, 1.0]];
        let mut base = self.q;
        while n > 0 {
            if n & 1 == 1 {
                result = mat_mul(&result, &base);
            }
            base = mat_mul(&base, &base);
            n >>= 1;
        }
        result
    }

    /// Law of the chain at position `n`: `π Qⁿ`.
    pub fn marginal(&self, n: u64) -> [f64; 2] {
        let qn = self.q_power(n);
        [
            self.pi[0] * qn[0][0] + self.pi[1] * qn[1][0],
            self.pi[0] * qn[0][1] + self.pi[1] * qn[1][1],
        ]
    }

    /// Stationary law of `Q`.
    pub fn stationary(&self) -> [f64; 2] {
        let (a, b) = (self.q[0][1], self.q[1][0]);
        [b / (a + b), a / (a + b)]
    }

    /// Row entropies `−Σ_b Q(a,b) log Q(a,b)`.
    pub fn row_entropies(&self) -> [f64; 2] {
        [binary_entropy(self.q[0]), binary_entropy(self.q[1])]
    }

    /// `log π(η₀) + Σ log Q(ηᵢ, ηᵢ₊₁)` over spin indices.
    pub fn path_logprob(&self, idx: impl IntoIterator<Item = usize>) -> f64 {
        let mut it = idx.into_iter();
        let Some(mut prev) = it.next() else { return 0.0 };
        let mut lp = self.log_pi[prev];
        for cur in it {
            lp += self.log_q[prev][cur];
            prev = cur;
        }
        lp
    }
}

/// `log Z` of the chain on sites `0..=n_bonds` with free left end and the given right boundary.
pub fn log_partition(n_bonds: usize, params: &ModelParams, bc: Boundary) -> f64 {
    log_partition_reduced(n_bonds, params.bj(), params.bh(), params.boundary_field(bc))
}

/// [`log_partition`] in reduced couplings `βJ`, `βh` and boundary field.
pub fn log_partition_reduced(n_bonds: usize, bj: f64, bh: f64, boundary_field: f64) -> f64 {
    let mut k = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            k[a][b] = (bj * SPINS[a] * SPINS[b] + bh * SPINS[b]).exp();
        }
    }
    let mut v = [bh.exp(), (-bh).exp()];
    let mut log_scale = 0.0;
    for _ in 0..n_bonds {
        let next = [v[0] * k[0][0] + v[1] * k[1][0], v[0] * k[0][1] + v[1] * k[1][1]];
        let m = next[0].max(next[1]);
        v = [next[0] / m, next[1] / m];
        log_scale += m.ln();
    }
    log_scale + (v[0] * boundary_field.exp() + v[1] * (-boundary_field).exp()).ln()
}

/// `log μ^{Ising}_∞(η₀, …, η_k)` for the infinite-volume layer chain.
pub fn cylinder_logprob(values: &[i8], params: &ModelParams) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("cylinder must be non-empty".into()));
    }
    Ok(transfer(params).path_logprob(values.iter().map(|&s| spin_index(s))))
}

/// Normalized backward vectors `B_i` with their accumulated log scales, `i = 0..=n`.
fn backward(n: usize, td: &TransferData, boundary_field: f64) -> Vec<([f64; 2], f64)> {
    let mut out = vec![([0.0; 2], 0.0); n + 1];
    let last = [boundary_field.exp(), (-boundary_field).exp()];
    let m = last[0].max(last[1]);
    out[n] = ([last[0] / m, last[1] / m], m.ln());
    for i in (0..n).rev() {
        let (b, s) = out[i + 1];
        let v = [
            td.k[0][0] * b[0] + td.k[0][1] * b[1],
            td.k[1][0] * b[0] + td.k[1][1] * b[1],
        ];
        let m = v[0].max(v[1]);
        out[i] = ([v[0] / m, v[1] / m], s + m.ln());
    }
    out
}

/// Finite-volume Gibbs probability (log) of the first `values.len()` sites of the chain
/// on `0..=n_bonds` with the given right boundary.
pub fn finite_volume_cylinder_logprob(
    values: &[i8],
    n_bonds: usize,
    params: &ModelParams,
    bc: Boundary,
) -> Result<f64> {
    if values.is_empty() || values.len() > n_bonds + 1 {
        return Err(Error::InvalidInput("cylinder must fit inside the chain".into()));
    }
    let td = transfer(params);
    let back = backward(n_bonds, &td, params.boundary_field(bc));
    let idx: Vec<usize> = values.iter().map(|&s| spin_index(s)).collect();
    let mut lw = params.bh() * SPINS[idx[0]];
    for w in idx.windows(2) {
        lw += td.k[w[0]][w[1]].ln();
    }
    let k = idx.len() - 1;
    let (b, s) = back[k];
    Ok(lw + b[idx[k]].ln() + s - log_partition(n_bonds, params, bc))
}

/// `−E log μ^{Ising}_∞(τ₀, …, τ_k)` from the chain marginals `π Qⁱ`.
pub fn marginal_entropy(k: usize, params: &ModelParams) -> f64 {
    let td = transfer(params);
    let rows = td.row_entropies();
    let mut m = td.pi;
    let mut s = binary_entropy(td.pi);
    for _ in 0..k {
        s += m[0] * rows[0] + m[1] * rows[1];
        m = [m[0] * td.q[0][0] + m[1] * td.q[1][0], m[0] * td.q[0][1] + m[1] * td.q[1][1]];
    }
    s
}

/// Gibbs entropy `log Z − β ∂_β log Z` of the free chain on `0..=n_bonds`.
///
/// `β ∂_β log Z = βJ Σ⟨σᵢσᵢ₊₁⟩ + βh Σ⟨σᵢ⟩`, with the expectations taken from
/// forward–backward sums.
pub fn finite_volume_entropy(n_bonds: usize, params: &ModelParams) -> f64 {
    let td = transfer(params);
    let (bj, bh) = (params.bj(), params.bh());
    let back = backward(n_bonds, &td, 0.0);
    let mut fwd = vec![[0.0; 2]; n_bonds + 1];
    fwd[0] = [bh.exp(), (-bh).exp()];
    for i in 0..n_bonds {
        let a = fwd[i];
        let v = [a[0] * td.k[0][0] + a[1] * td.k[1][0], a[0] * td.k[0][1] + a[1] * td.k[1][1]];
        let m = v[0].max(v[1]);
        fwd[i + 1] = [v[0] / m, v[1] / m];
    }
    let mut bond_sum = 0.0;
    let mut site_sum = 0.0;
    for i in 0..=n_bonds {
        let b = back[i].0;
        let w = [fwd[i][0] * b[0], fwd[i][1] * b[1]];
        site_sum += (w[0] - w[1]) / (w[0] + w[1]);
        if i < n_bonds {
            let bn = back[i + 1].0;
            let mut total = 0.0;
            let mut signed = 0.0;
            for a in 0..2 {
                for c in 0..2 {
                    let p = fwd[i][a] * td.k[a][c] * bn[c];
                    total += p;
                    signed += p * SPINS[a] * SPINS[c];
                }
            }
            bond_sum += signed / total;
        }
    }
    log_partition(n_bonds, params, Boundary::Free) - bj * bond_sum - bh * site_sum
}

/// `P^k = log E exp(t Σ_{i=0}^{k} f*(θᵢ τ))` for `k = 0..=k_max`, in one sweep of the
/// sliding-window transfer operator over states `{±1}^w`.
pub fn tilted_layer_pressures(
    k_max: usize,
    fstar: &FirstLayerObservable,
    t: f64,
    td: &TransferData,
) -> Result<Vec<f64>> {
    if fstar.dim() != 1 {
        return Err(Error::InvalidInput("layer pressure needs a one-dimensional observable".into()));
    }
    let w = fstar.width(0);
    if w > MAX_WINDOW {
        return Err(Error::Infeasible(format!(
            "window width {w} exceeds the limit {MAX_WINDOW}"
        )));
    }
    let n_states = 1usize << w;
    let top = w - 1;
    let tilt: Vec<f64> = fstar.window_table().iter().map(|v| t * v).collect();
    let shift = tilt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let factor: Vec<f64> = tilt.iter().map(|v| (v - shift).exp()).collect();

    let mut v: Vec<f64> = (0..n_states)
        .map(|s| {
            let bit = |j: u32| (s >> j) & 1;
            (1..w).fold(td.pi[bit(0)], |p, j| p * td.q[bit(j - 1)][bit(j)])
        })
        .collect();
    let mut next = vec![0.0; n_states];
    let mut log_scale = 0.0;
    let mut out = Vec::with_capacity(k_max + 1);
    for i in 0..=k_max {
        for (x, f) in v.iter_mut().zip(&factor) {
            *x *= f;
        }
        log_scale += shift;
        let total: f64 = v.iter().sum();
        log_scale += total.ln();
        out.push(log_scale);
        if i == k_max {
            break;
        }
        next.iter_mut().for_each(|x| *x = 0.0);
        for (s, &x) in v.iter().enumerate() {
            let x = x / total;
            let last = (s >> top) & 1;
            let base = s >> 1;
            next[base] += x * td.q[last][0];
            next[base | (1 << top)] += x * td.q[last][1];
        }
        std::mem::swap(&mut v, &mut next);
    }
    Ok(out)
}

/// Single-`k` convenience wrapper around [`tilted_layer_pressures`].
pub fn tilted_layer_pressure(
    k: usize,
    fstar: &FirstLayerObservable,
    t: f64,
    params: &ModelParams,
) -> Result<f64> {
    let td = transfer(params);
    Ok(*tilted_layer_pressures(k, fstar, t, &td)?.last().expect("k+1 values"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use approx::assert_relative_eq;

    const ALPHA_BJ1: f64 = 0.880_797_077_977_882_3; // e/(e + e^{-1})

    #[test]
    fn transfer_h0() {
        for bj in [-1.5, 0.0, 0.3, 2.0] {
            let td = transfer(&ModelParams::new(1.0, bj, 0.0));
            assert_relative_eq!(td.lambda, (-bj).exp() + bj.exp(), max_relative = 1e-14);
            assert_relative_eq!(td.e_tilde[0], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
            assert_relative_eq!(td.e_tilde[1], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
            assert_relative_eq!(td.pi[0], 0.5, epsilon = 1e-15);
        }
        let td = transfer(&ModelParams::new(1.0, 1.0, 0.0));
        assert_relative_eq!(td.q[0][0], ALPHA_BJ1, epsilon = 1e-15);
        let td = transfer(&ModelParams::new(0.0, 3.0, -2.0));
        for row in td.q {
            for x in row {
                assert_eq!(x, 0.5);
            }
        }
    }

    #[test]
    fn transfer_invariants_random() {
        let mut seed = 7u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        for _ in 0..200 {
            let p = ModelParams::new(next(), next(), next());
            let td = transfer(&p);
            for a in 0..2 {
                let ke = td.k[a][0] * td.e_tilde[0] + td.k[a][1] * td.e_tilde[1];
                assert_relative_eq!(ke, td.lambda * td.e_tilde[a], max_relative = 1e-14);
                assert!((td.q[a][0] + td.q[a][1] - 1.0).abs() < 1e-14);
                assert!(td.q[a].iter().all(|&x| x > 0.0));
                assert!(td.e_tilde[a] > 0.0);
            }
            assert!((td.pi[0] + td.pi[1] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn log_partition_examples() {
        let p = ModelParams::new(0.7, 1.3, 0.0);
        assert_relative_eq!(log_partition(0, &p, Boundary::Free), 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(
            log_partition(1, &p, Boundary::Free),
            (4.0 * (0.7f64 * 1.3).cosh()).ln(),
            epsilon = 1e-14
        );
        let p0 = ModelParams::new(0.0, 1.3, 0.4);
        assert_relative_eq!(log_partition(1, &p0, Boundary::Plus), 4f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn log_partition_matches_enumeration() {
        let mut seed = 11u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        for _ in 0..20 {
            let mut p = ModelParams::new(next(), next(), next());
            for coupling in [BcCoupling::J, BcCoupling::Unit] {
                p.bc_coupling = coupling;
                for n in 0..=12 {
                    for bc in [Boundary::Free, Boundary::Plus, Boundary::Minus] {
                        let exact = oracle::log_partition_chain(n, &p, bc);
                        let fast = log_partition(n, &p, bc);
                        assert!((fast - exact).abs() <= 1e-10 * exact.abs().max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn log_partition_is_stable_for_long_chains() {
        let p = ModelParams::new(3.0, 2.0, 1.0);
        let z = log_partition(100_000, &p, Boundary::Free);
        assert!(z.is_finite());
        let per_bond = z / 100_000.0;
        assert_relative_eq!(per_bond, transfer(&p).lambda.ln(), max_relative = 1e-3);
    }

    #[test]
    fn cylinder_examples() {
        let h0 = ModelParams::new(1.0, 1.0, 0.0);
        assert_relative_eq!(cylinder_logprob(&[1], &h0).unwrap(), 0.5f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(
            cylinder_logprob(&[1, 1], &h0).unwrap(),
            (0.5 * ALPHA_BJ1).ln(),
            epsilon = 1e-14
        );
        let b0 = ModelParams::new(0.0, 1.0, 1.0);
        let vals = [1i8, -1, -1, 1, -1];
        assert_relative_eq!(
            cylinder_logprob(&vals, &b0).unwrap(),
            -5.0 * 2f64.ln(),
            epsilon = 1e-14
        );
        assert!(cylinder_logprob(&[], &b0).is_err());
    }

    /// The chain `(π, Q)` is the limit of free-chain finite-volume laws, also for `h ≠ 0`.
    #[test]
    fn markov_representation_is_the_finite_volume_limit() {
        let cases = [(1.0, 1.0, 0.0), (1.0, 2.0, 0.5), (2.0, -1.0, 1.0), (1.0, 0.5, -2.0)];
        let cylinders: [&[i8]; 4] = [&[1], &[-1, 1], &[1, 1, -1], &[-1, -1, -1, 1]];
        for (beta, j, h) in cases {
            let p = ModelParams::new(beta, j, h);
            for cyl in cylinders {
                let exact = cylinder_logprob(cyl, &p).unwrap().exp();
                let mut prev = f64::INFINITY;
                for n in (10..=200).step_by(10) {
                    let fv = finite_volume_cylinder_logprob(cyl, n, &p, Boundary::Free)
                        .unwrap()
                        .exp();
                    let err = (fv - exact).abs();
                    assert!(err <= prev + 1e-14, "error grew at n={n} for {p:?}");
                    prev = err;
                }
                assert!(prev <= 1e-8);
            }
        }
    }

    #[test]
    fn finite_volume_cylinder_matches_enumeration() {
        let p = ModelParams::new(0.8, -1.2, 0.6);
        for bc in [Boundary::Free, Boundary::Plus, Boundary::Minus] {
            let exact = oracle::finite_volume_cylinder_prob(&[1, -1, 1], 6, &p, bc);
            let fast = finite_volume_cylinder_logprob(&[1, -1, 1], 6, &p, bc).unwrap().exp();
            assert_relative_eq!(fast, exact, max_relative = 1e-12);
        }
    }

    #[test]
    fn marginal_entropy_examples() {
        let p = ModelParams::new(1.0, 1.0, 0.0);
        assert_relative_eq!(marginal_entropy(0, &p), 2f64.ln(), epsilon = 1e-15);
        let alpha = 1.0 / (1.0 + (-2.0f64).exp());
        let h_alpha = binary_entropy([alpha, 1.0 - alpha]);
        for k in 0..=10 {
            let expected = 2f64.ln() + k as f64 * h_alpha;
            assert_relative_eq!(marginal_entropy(k, &p), expected, epsilon = 1e-13);
            let direct = oracle::cylinder_entropy(k, &p);
            assert_relative_eq!(marginal_entropy(k, &p), direct, epsilon = 1e-12);
        }
        let b0 = ModelParams::new(0.0, 1.0, 1.0);
        assert_relative_eq!(marginal_entropy(6, &b0), 7.0 * 2f64.ln(), epsilon = 1e-13);
        let hp = ModelParams::new(0.9, 0.7, 0.4);
        for k in 0..=8 {
            assert_relative_eq!(
                marginal_entropy(k, &hp),
                oracle::cylinder_entropy(k, &hp),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn finite_volume_entropy_examples() {
        let b0 = ModelParams::new(0.0, 1.0, 0.5);
        for n in 0..6 {
            assert_relative_eq!(
                finite_volume_entropy(n, &b0),
                (n + 1) as f64 * 2f64.ln(),
                epsilon = 1e-13
            );
        }
        let cold = ModelParams::new(20.0, 1.0, 0.0);
        assert!((finite_volume_entropy(7, &cold) - 2f64.ln()).abs() < 1e-6);
        let p = ModelParams::new(1.0, 1.0, 0.0);
        assert_relative_eq!(
            finite_volume_entropy(1, &p),
            (4.0 * 1f64.cosh()).ln() - 1f64.tanh(),
            epsilon = 1e-14
        );
        let q = ModelParams::new(0.6, -1.4, 0.9);
        for n in 0..=10 {
            assert_relative_eq!(
                finite_volume_entropy(n, &q),
                oracle::finite_volume_entropy(n, &q),
                epsilon = 1e-11
            );
        }
    }

    #[test]
    fn tilted_pressure_closed_forms() {
        let b0 = ModelParams::new(0.0, 1.0, 0.0);
        for t in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            let lc = f64::cosh(t).ln();
            for k in 0..=10 {
                let c = tilted_layer_pressure(k, &FirstLayerObservable::coupling(), t, &b0).unwrap();
                let m = tilted_layer_pressure(k, &FirstLayerObservable::magnetization(), t, &b0)
                    .unwrap();
                assert_relative_eq!(c, (k + 1) as f64 * lc, epsilon = 1e-12);
                assert_relative_eq!(m, (k + 1) as f64 * lc, epsilon = 1e-12);
            }
        }
        let p = ModelParams::new(1.3, 0.4, -0.2);
        let f = FirstLayerObservable::one_dim(vec![(vec![0, 2], 0.5), (vec![1], -1.0)]).unwrap();
        assert!(tilted_layer_pressure(5, &f, 0.0, &p).unwrap().abs() < 1e-14);
    }

    #[test]
    fn tilted_pressure_matches_enumeration() {
        let observables = [
            FirstLayerObservable::coupling(),
            FirstLayerObservable::magnetization(),
            FirstLayerObservable::one_dim(vec![(vec![0, 2], 0.5), (vec![1], -1.0), (vec![0, 1, 3], 0.25)])
                .unwrap(),
        ];
        let params = [
            ModelParams::new(1.0, 1.0, 0.0),
            ModelParams::new(0.7, -1.5, 0.8),
            ModelParams::new(1.9, 0.3, -1.1),
        ];
        for f in &observables {
            for p in &params {
                for t in [-1.7, 0.4, 2.5] {
                    let w = f.width(0) as usize;
                    for k in 0..=(16 - w).min(10) {
                        let exact = oracle::tilted_layer_pressure(k, f, t, p);
                        let fast = tilted_layer_pressure(k, f, t, p).unwrap();
                        assert!((fast - exact).abs() <= 1e-10 * exact.abs().max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn tilted_pressure_bound_and_convexity() {
        let p = ModelParams::new(1.1, 0.9, 0.3);
        let f = FirstLayerObservable::one_dim(vec![(vec![0, 1], 1.0), (vec![2], -0.5)]).unwrap();
        let k = 12;
        let grid: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.1).collect();
        let vals: Vec<f64> = grid.iter().map(|&t| tilted_layer_pressure(k, &f, t, &p).unwrap()).collect();
        for (t, v) in grid.iter().zip(&vals) {
            assert!(v.abs() <= (k + 1) as f64 * t.abs() * f.sup_norm() + 1e-12);
        }
        for w in vals.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-9);
        }
    }

    #[test]
    fn large_tilts_do_not_overflow() {
        let p = ModelParams::new(1.0, 1.0, 0.0);
        let v = tilted_layer_pressure(40, &FirstLayerObservable::coupling(), 2000.0, &p).unwrap();
        assert!(v.is_finite());
        assert_relative_eq!(v / 2000.0, 41.0, max_relative = 1e-3);
    }

    #[test]
    fn window_limit() {
        let f = FirstLayerObservable::one_dim(vec![(vec![0, 12], 1.0)]).unwrap();
        let err = tilted_layer_pressure(1, &f, 0.1, &ModelParams::new(1.0, 1.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }
}
