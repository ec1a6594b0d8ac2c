//! Brute-force reference computations.
//!
//! Every function here enumerates configurations directly from a Hamiltonian
//! or from products of `π` and `Q` entries. Nothing reuses the transfer sweeps,
//! matrix powers, or layer bookkeeping of the main modules, so they serve as
//! independent checks. Costs are exponential; callers keep sizes small.

use std::collections::BTreeMap;

use crate::arith::Region;
use crate::ising1d::{transfer, Boundary, ModelParams, TransferData};
use crate::observable::FirstLayerObservable;

fn spin(config: u64, i: usize) -> f64 {
    if (config >> i) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `−H` of the chain on `0..=n` (free left end, boundary field on site `n`).
fn chain_weight(config: u64, n: usize, p: &ModelParams, bc: Boundary) -> f64 {
    let mut w = 0.0;
    for i in 0..=n {
        w += p.bh() * spin(config, i);
        if i < n {
            w += p.bj() * spin(config, i) * spin(config, i + 1);
        }
    }
    w + p.boundary_field(bc) * spin(config, n)
}

pub fn log_partition_chain(n_bonds: usize, p: &ModelParams, bc: Boundary) -> f64 {
    log_sum_exp((0..1u64 << (n_bonds + 1)).map(|c| chain_weight(c, n_bonds, p, bc)))
}

pub fn finite_volume_cylinder_prob(values: &[i8], n_bonds: usize, p: &ModelParams, bc: Boundary) -> f64 {
    let log_z = log_partition_chain(n_bonds, p, bc);
    (0..1u64 << (n_bonds + 1))
        .filter(|&c| values.iter().enumerate().all(|(i, &s)| spin(c, i) == s as f64))
        .map(|c| (chain_weight(c, n_bonds, p, bc) - log_z).exp())
        .sum()
}

pub fn finite_volume_entropy(n_bonds: usize, p: &ModelParams) -> f64 {
    let log_z = log_partition_chain(n_bonds, p, Boundary::Free);
    -(0..1u64 << (n_bonds + 1))
        .map(|c| {
            let lp = chain_weight(c, n_bonds, p, Boundary::Free) - log_z;
            lp.exp() * lp
        })
        .sum::<f64>()
}

fn path_prob(td: &TransferData, config: u64, len: usize) -> f64 {
    let idx = |i: usize| ((config >> i) & 1) as usize;
    let mut p = td.pi[idx(0)];
    for i in 1..len {
        p *= td.q[idx(i - 1)][idx(i)];
    }
    p
}

/// `−Σ μ(η) log μ(η)` over all `2^{k+1}` cylinders of the layer chain.
pub fn cylinder_entropy(k: usize, p: &ModelParams) -> f64 {
    let td = transfer(p);
    -(0..1u64 << (k + 1))
        .map(|c| {
            let pr = path_prob(&td, c, k + 1);
            pr * pr.ln()
        })
        .sum::<f64>()
}

fn eval_first_layer_at(f: &FirstLayerObservable, config: u64, shift: u32) -> f64 {
    f.terms()
        .iter()
        .map(|(a, c)| c * a.iter().map(|x| spin(config, (x[0] + shift) as usize)).product::<f64>())
        .sum()
}

/// `log E exp(t Σ_{i=0}^k f*(θᵢτ))` by enumerating `2^{k+w}` layer paths.
pub fn tilted_layer_pressure(k: usize, f: &FirstLayerObservable, t: f64, p: &ModelParams) -> f64 {
    let td = transfer(p);
    let len = k + f.width(0) as usize;
    log_sum_exp((0..1u64 << len).map(|c| {
        let s: f64 = (0..=k as u32).map(|i| eval_first_layer_at(f, c, i)).sum();
        path_prob(&td, c, len).ln() + t * s
    }))
}

/// `log Z^b_N` of the multiplicative model on `[1, 2N]` straight from its Hamiltonian.
pub fn multiplicative_log_partition(n: usize, p: &ModelParams, bc: Boundary) -> f64 {
    let sites = 2 * n;
    let bf = p.boundary_field(bc);
    log_sum_exp((0..1u64 << sites).map(|c| {
        let s = |i: usize| spin(c, i - 1);
        let mut w = 0.0;
        for i in 1..=n {
            w += p.bj() * s(i) * s(2 * i);
        }
        for i in 1..=sites {
            w += p.bh() * s(i);
        }
        for i in n + 1..=sites {
            w += bf * s(i);
        }
        w
    }))
}

/// Joint law of the layer chain at the given positions, by summing every
/// full path `0..=max(position)`.
pub fn chain_positions_law(positions: &[u64], p: &ModelParams) -> Vec<f64> {
    let td = transfer(p);
    let len = *positions.iter().max().expect("non-empty") as usize + 1;
    let mut law = vec![0.0; 1 << positions.len()];
    for c in 0..1u64 << len {
        let key = positions
            .iter()
            .enumerate()
            .fold(0usize, |k, (j, &pos)| k | ((((c >> pos) & 1) as usize) << j));
        law[key] += path_prob(&td, c, len);
    }
    law
}

/// Brute-force region pressure for the multi-dimensional layer measure: product of
/// independent chains along `base_axis`, tilted by `t Σ_{x∈Λ} f*(θ_x τ)`.
pub fn region_pressure(
    region: &Region,
    f: &FirstLayerObservable,
    t: f64,
    p: &ModelParams,
    base_axis: usize,
) -> f64 {
    let mut sites: Vec<Vec<u32>> = Vec::new();
    for x in region.points() {
        for (a, _) in f.terms() {
            for off in a {
                let y: Vec<u32> = x.iter().zip(off).map(|(u, v)| u + v).collect();
                if !sites.contains(&y) {
                    sites.push(y);
                }
            }
        }
    }
    assert!(sites.len() <= 20, "oracle limited to 20 sites");
    let pos = |y: &Vec<u32>| sites.iter().position(|z| z == y).expect("site present");

    let mut lines: BTreeMap<Vec<u32>, Vec<(u64, usize)>> = BTreeMap::new();
    for (k, y) in sites.iter().enumerate() {
        let mut key = y.clone();
        key.remove(base_axis);
        lines.entry(key).or_default().push((y[base_axis] as u64, k));
    }
    let line_laws: Vec<(Vec<usize>, Vec<f64>)> = lines
        .values()
        .map(|members| {
            let positions: Vec<u64> = members.iter().map(|m| m.0).collect();
            (members.iter().map(|m| m.1).collect(), chain_positions_law(&positions, p))
        })
        .collect();

    log_sum_exp((0..1u64 << sites.len()).map(|c| {
        let mut lp = 0.0;
        for (members, law) in &line_laws {
            let key = members
                .iter()
                .enumerate()
                .fold(0usize, |k, (j, &s)| k | ((((c >> s) & 1) as usize) << j));
            lp += law[key].ln();
        }
        let mut sum = 0.0;
        for x in region.points() {
            for (a, coeff) in f.terms() {
                let prod: f64 = a
                    .iter()
                    .map(|off| {
                        let y: Vec<u32> = x.iter().zip(off).map(|(u, v)| u + v).collect();
                        spin(c, pos(&y))
                    })
                    .product();
                sum += coeff * prod;
            }
        }
        lp + t * sum
    }))
}
