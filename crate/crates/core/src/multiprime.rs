//! Observables that reach beyond one layer, via the dimensional extension.
//!
//! An observable touching `σ_{3i}` or `σ_{5i}` becomes a first-layer function
//! once the basis includes 3 and 5. Layers are then indexed by exponent
//! vectors. The layer measure is a product of independent `(π, Q)` chains
//! along the axis of the prime 2. All other axes carry no interaction.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::arith::{canonical_region, decompose, kie_weights, smooth_region, PrimeBasis, Region, SmoothNumbers};
use crate::error::{Error, Result};
use crate::ising1d::{transfer, ModelParams, TransferData};
use crate::observable::{FirstLayerObservable, Observable};

/// Frontier size above which exact elimination is refused.
pub const MAX_FRONTIER: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedModel {
    pub basis: PrimeBasis,
    /// Axis of the prime 2, along which the Ising coupling acts.
    pub base_axis: usize,
    pub params: ModelParams,
}

impl ExtendedModel {
    pub fn new(basis: PrimeBasis, params: ModelParams) -> Result<Self> {
        params.validate()?;
        let base_axis = basis
            .axis_of(2)
            .ok_or_else(|| Error::InvalidInput("the basis must contain the coupling prime 2".into()))?;
        Ok(Self { basis, base_axis, params })
    }
}

fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        if n.is_multiple_of(p) {
            out.push(p);
            while n.is_multiple_of(p) {
                n /= p;
            }
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Adds the primes of `∪B` to `base` and rewrites `f` with exponent-vector offsets.
pub fn extend_observable(
    f: &Observable,
    base: &PrimeBasis,
    params: &ModelParams,
) -> Result<(ExtendedModel, FirstLayerObservable)> {
    let mut primes: Vec<u64> = base.primes().to_vec();
    for (b, _) in f.terms() {
        for &i in b {
            for p in prime_factors(i) {
                if !primes.contains(&p) {
                    primes.push(p);
                }
            }
        }
    }
    let basis = PrimeBasis::new(primes)?;
    let terms = f
        .terms()
        .iter()
        .map(|(b, c)| {
            let offsets = b
                .iter()
                .map(|&i| Ok(decompose(i, &basis)?.exponents))
                .collect::<Result<Vec<_>>>()?;
            Ok((offsets, *c))
        })
        .collect::<Result<Vec<_>>>()?;
    let fstar = FirstLayerObservable::new(basis.dim(), terms)?;
    Ok((ExtendedModel::new(basis, *params)?, fstar))
}

fn support(fstar: &FirstLayerObservable) -> Vec<Vec<u32>> {
    let mut s: Vec<Vec<u32>> = fstar.terms().iter().flat_map(|(a, _)| a.iter().cloned()).collect();
    s.sort();
    s.dedup();
    s
}

/// `S = Λ ⊕ supp(f*)`, the sites read by `Σ_{x∈Λ} θ_x f*`.
pub fn dependence_set(region: &Region, fstar: &FirstLayerObservable) -> Region {
    let support = support(fstar);
    Region::new(
        region
            .points()
            .flat_map(|x| support.iter().map(move |a| x.iter().zip(a).map(|(u, v)| u + v).collect())),
    )
}

struct Factor {
    scope: Vec<usize>,
    table: Vec<f64>,
    /// Removed from `table` for range; added back to the result.
    log_shift: f64,
}

/// Dependence set, chain factors and tilt factors of `E exp(t Σ_{x∈Λ} θ_x f*)`.
struct Network {
    n_sites: usize,
    coords: Vec<Vec<u32>>,
    factors: Vec<Factor>,
}

fn build_network(region: &Region, fstar: &FirstLayerObservable, t: f64, td: &TransferData, base_axis: usize) -> Network {
    let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut coords: Vec<Vec<u32>> = Vec::new();
    let mut site = |y: Vec<u32>, coords: &mut Vec<Vec<u32>>| -> usize {
        *index.entry(y.clone()).or_insert_with(|| {
            coords.push(y);
            coords.len() - 1
        })
    };
    let support = support(fstar);
    let shift = |x: &[u32], a: &[u32]| -> Vec<u32> { x.iter().zip(a).map(|(u, v)| u + v).collect() };

    let mut factors = Vec::new();
    for x in region.points() {
        let scope: Vec<usize> = support.iter().map(|a| site(shift(x, a), &mut coords)).collect();
        let monomials: Vec<(u32, f64)> = fstar
            .terms()
            .iter()
            .map(|(a, c)| {
                let mask = a.iter().fold(0u32, |m, off| m | 1 << support.iter().position(|s| s == off).expect("in support"));
                (mask, t * c)
            })
            .collect();
        let values: Vec<f64> = (0..1u32 << scope.len())
            .map(|state| {
                monomials
                    .iter()
                    .map(|&(m, c)| if (state & m).count_ones() % 2 == 0 { c } else { -c })
                    .sum()
            })
            .collect();
        let log_shift = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        factors.push(Factor { scope, table: values.iter().map(|v| (v - log_shift).exp()).collect(), log_shift });
    }

    let mut lines: BTreeMap<Vec<u32>, Vec<(u32, usize)>> = BTreeMap::new();
    for (k, y) in coords.iter().enumerate() {
        let mut key = y.clone();
        key.remove(base_axis);
        lines.entry(key).or_default().push((y[base_axis], k));
    }
    for members in lines.values_mut() {
        members.sort_unstable();
        let (p0, s0) = members[0];
        factors.push(Factor { scope: vec![s0], table: td.marginal(p0 as u64).to_vec(), log_shift: 0.0 });
        for w in members.windows(2) {
            let q = td.q_power((w[1].0 - w[0].0) as u64);
            factors.push(Factor {
                scope: vec![w[0].1, w[1].1],
                table: vec![q[0][0], q[1][0], q[0][1], q[1][1]],
                log_shift: 0.0,
            });
        }
    }
    Network { n_sites: coords.len(), coords, factors }
}

/// Elimination plan for one site order: factors attached at their last site,
/// sites summed out after their last use.
struct Plan {
    order: Vec<usize>,
    attach: Vec<Vec<usize>>,
    release: Vec<Vec<usize>>,
    max_frontier: usize,
}

fn plan(net: &Network, order: Vec<usize>) -> Plan {
    let mut rank = vec![0; net.n_sites];
    for (k, &s) in order.iter().enumerate() {
        rank[s] = k;
    }
    let mut attach = vec![Vec::new(); net.n_sites];
    let mut last_use = vec![0; net.n_sites];
    for (fi, f) in net.factors.iter().enumerate() {
        let last = f.scope.iter().map(|&s| rank[s]).max().expect("non-empty scope");
        attach[last].push(fi);
        for &s in &f.scope {
            last_use[s] = last_use[s].max(last);
        }
    }
    let mut release = vec![Vec::new(); net.n_sites];
    for s in 0..net.n_sites {
        release[last_use[s]].push(s);
    }
    let mut active = 0usize;
    let mut max_frontier = 0;
    for k in 0..net.n_sites {
        active += 1;
        max_frontier = max_frontier.max(active);
        active -= release[k].len();
    }
    Plan { order, attach, release, max_frontier }
}

/// Tries "axis `a` most significant" orders for every axis and keeps the narrowest.
fn best_plan(net: &Network) -> Plan {
    let dim = net.coords.first().map_or(1, Vec::len);
    (0..dim)
        .map(|a| {
            let mut order: Vec<usize> = (0..net.n_sites).collect();
            order.sort_by(|&u, &v| {
                let (x, y) = (&net.coords[u], &net.coords[v]);
                x[a].cmp(&y[a]).then_with(|| x.cmp(y))
            });
            plan(net, order)
        })
        .min_by_key(|p| p.max_frontier)
        .expect("at least one axis")
}

fn eliminate(net: &Network, plan: &Plan) -> f64 {
    let mut active: Vec<usize> = Vec::new();
    let mut table = vec![1.0f64];
    let mut log_total: f64 = net.factors.iter().map(|f| f.log_shift).sum();
    for (k, &s) in plan.order.iter().enumerate() {
        active.push(s);
        table.extend_from_within(..);
        for &fi in &plan.attach[k] {
            let f = &net.factors[fi];
            let bits: Vec<usize> = f
                .scope
                .iter()
                .map(|u| active.iter().position(|v| v == u).expect("scope sites are active"))
                .collect();
            for (i, x) in table.iter_mut().enumerate() {
                let key = bits.iter().enumerate().fold(0, |key, (j, &b)| key | ((i >> b) & 1) << j);
                *x *= f.table[key];
            }
        }
        for &u in &plan.release[k] {
            let b = active.iter().position(|&v| v == u).expect("released site is active");
            let low = (1usize << b) - 1;
            table = (0..table.len() / 2)
                .map(|i| {
                    let i0 = (i & low) | ((i & !low) << 1);
                    table[i0] + table[i0 | 1 << b]
                })
                .collect();
            active.remove(b);
        }
        let total: f64 = table.iter().sum();
        log_total += total.ln();
        table.iter_mut().for_each(|x| *x /= total);
    }
    log_total
}

/// `Ψ(Λ) = log E exp(t Σ_{x∈Λ} f*(θ_x τ))` under the extended layer measure, exactly.
pub fn region_pressure(region: &Region, fstar: &FirstLayerObservable, t: f64, model: &ExtendedModel) -> Result<f64> {
    region_pressure_with(region, fstar, t, &transfer(&model.params), model)
}

fn region_pressure_with(
    region: &Region,
    fstar: &FirstLayerObservable,
    t: f64,
    td: &TransferData,
    model: &ExtendedModel,
) -> Result<f64> {
    if fstar.dim() != model.basis.dim() || region.dim().is_some_and(|d| d != fstar.dim()) {
        return Err(Error::InvalidInput("region, observable and basis dimensions differ".into()));
    }
    if region.is_empty() {
        return Ok(0.0);
    }
    if support(fstar).len() > MAX_FRONTIER {
        return Err(Error::Infeasible("observable support exceeds the exact elimination limit".into()));
    }
    let net = build_network(region, fstar, t, td, model.base_axis);
    let plan = best_plan(&net);
    if plan.max_frontier > MAX_FRONTIER {
        return Err(Error::Infeasible(format!(
            "exact region pressure needs a frontier of {} sites (limit {MAX_FRONTIER}); \
             Monte Carlo estimation is not available",
            plan.max_frontier
        )));
    }
    Ok(eliminate(&net, &plan))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KieRow {
    pub j: usize,
    pub n_j: u64,
    pub w_j: f64,
    #[serde(rename = "Psi_j")]
    pub psi_j: f64,
    pub partial_sum: f64,
    /// Bound on the remaining terms `Σ_{i>j} w_i |Ψ_i|`.
    pub tail_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KiePressure {
    pub value: f64,
    pub trunc_err: f64,
    pub rows: Vec<KieRow>,
}

impl KiePressure {
    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["j", "n_j", "w_j", "Psi_j", "partial_sum", "tail_bound"])
            .map_err(crate::gibbs::csv_err)?;
        for r in &self.rows {
            out.write_record([
                r.j.to_string(),
                r.n_j.to_string(),
                crate::ldp::fmt_f64(r.w_j),
                crate::ldp::fmt_f64(r.psi_j),
                crate::ldp::fmt_f64(r.partial_sum),
                crate::ldp::fmt_f64(r.tail_bound),
            ])
            .map_err(crate::gibbs::csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `𝒫^M(t f) = Σ_j w_j Ψ_j` with `Ψ_j` on the region of the first `j` smooth numbers.
///
/// Every layer region `Λ^r_N` is the set of smooth numbers `≤ N/r`, so it equals
/// the canonical region of its cardinality. Truncation uses `|Ψ_j| ≤ j |t| ‖f*‖∞`.
pub fn kie_pressure(f: &Observable, params: &ModelParams, base: &PrimeBasis, t: f64, tol: f64) -> Result<KiePressure> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let (model, fstar) = extend_observable(f, base, params)?;
    let scale = t.abs() * fstar.sup_norm();
    let series = kie_weights(&model.basis, tol / scale.max(1.0))?;
    let td = transfer(&model.params);
    let mut rows = Vec::with_capacity(series.len());
    let mut partial = 0.0;
    let mut moment_after: f64 = series.tail_bound();
    let moments: Vec<f64> = (1..=series.len()).map(|j| j as f64 * series.weight(j)).collect();
    let mut tails = vec![0.0; series.len()];
    for j in (1..=series.len()).rev() {
        tails[j - 1] = moment_after;
        moment_after += moments[j - 1];
    }
    for j in 1..=series.len() {
        let psi = region_pressure_with(&canonical_region(j, &model.basis), &fstar, t, &td, &model)?;
        partial += series.weight(j) * psi;
        rows.push(KieRow {
            j,
            n_j: series.smooth(j),
            w_j: series.weight(j),
            psi_j: psi,
            partial_sum: partial,
            tail_bound: scale * tails[j - 1],
        });
    }
    Ok(KiePressure { value: partial, trunc_err: scale * series.tail_bound(), rows })
}

/// `(1/N) Σ_{r ≤ N, r coprime to the basis} Ψ(Λ^r_N)`, with `Ψ` cached by cardinality.
pub fn finite_pressure_exact_d(f: &Observable, t: f64, n: u64, params: &ModelParams, base: &PrimeBasis) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("volume must be >= 1".into()));
    }
    let (model, fstar) = extend_observable(f, base, params)?;
    let td = transfer(&model.params);
    let smooth: Vec<u64> = SmoothNumbers::new(&model.basis).take_while(|&s| s <= n).collect();
    let mut cache: HashMap<usize, f64> = HashMap::new();
    let (mut total, mut sites) = (0.0, 0u64);
    for r in (1..=n).filter(|&r| model.basis.is_coprime(r)) {
        let j = smooth.partition_point(|&s| s <= n / r);
        sites += j as u64;
        let psi = match cache.get(&j) {
            Some(&v) => v,
            None => {
                let v = region_pressure_with(&canonical_region(j, &model.basis), &fstar, t, &td, &model)?;
                cache.insert(j, v);
                v
            }
        };
        total += psi;
    }
    assert_eq!(sites, n, "layer regions must partition [1, N]");
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeComparison {
    pub cardinality: usize,
    pub regions: usize,
    pub max_abs_diff: f64,
    /// A pair of regions whose pressures differ by more than the tolerance.
    pub witness: Option<(Vec<Vec<u32>>, Vec<Vec<u32>>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeIndependenceReport {
    /// Regions `Λ^r_N` for all `r`, `N`: one region per cardinality.
    pub layer_regions: Vec<ShapeComparison>,
    /// All lower sets of each cardinality, for contrast.
    pub lower_sets: Vec<ShapeComparison>,
}

pub const SHAPE_TOL: f64 = 1e-10;

fn compare(cardinality: usize, regions: &[Region], values: &[f64]) -> ShapeComparison {
    let mut max_abs_diff: f64 = 0.0;
    let mut witness = None;
    for a in 0..regions.len() {
        for b in a + 1..regions.len() {
            let d = (values[a] - values[b]).abs();
            if d > max_abs_diff {
                max_abs_diff = d;
                if d > SHAPE_TOL {
                    witness = Some((regions[a].points().cloned().collect(), regions[b].points().cloned().collect()));
                }
            }
        }
    }
    ShapeComparison { cardinality, regions: regions.len(), max_abs_diff, witness }
}

/// Lower sets of `ℕ₀^d` with `size` points.
fn lower_sets(dim: usize, size: usize) -> Vec<Region> {
    let mut level: Vec<Region> = vec![Region::new(std::iter::empty())];
    for _ in 0..size {
        let mut next: Vec<Region> = Vec::new();
        for r in &level {
            let mut candidates: Vec<Vec<u32>> = vec![vec![0; dim]];
            for x in r.points() {
                for a in 0..dim {
                    let mut y = x.clone();
                    y[a] += 1;
                    candidates.push(y);
                }
            }
            for y in candidates {
                if r.contains(&y) {
                    continue;
                }
                let mut grown = r.clone();
                grown.insert(y);
                if grown.is_lower_set() && !next.contains(&grown) {
                    next.push(grown);
                }
            }
        }
        level = next;
    }
    level
}

/// Compares `Ψ` across equal-cardinality regions up to `max_len` points.
pub fn shape_independence_report(
    fstar: &FirstLayerObservable,
    t: f64,
    model: &ExtendedModel,
    max_len: usize,
) -> Result<ShapeIndependenceReport> {
    let td = transfer(&model.params);
    let dim = model.basis.dim();
    let mut layer_regions = Vec::new();
    let mut lower = Vec::new();
    for len in 1..=max_len {
        // every Λ^r_N is the set of smooth numbers up to some bound m
        let mut arising: Vec<Region> = Vec::new();
        let bound = SmoothNumbers::new(&model.basis).nth(len).expect("infinitely many smooth numbers");
        for m in 1..bound {
            let r = smooth_region(m, &model.basis);
            if r.len() == len && !arising.contains(&r) {
                arising.push(r);
            }
        }
        let values = arising
            .iter()
            .map(|r| region_pressure_with(r, fstar, t, &td, model))
            .collect::<Result<Vec<_>>>()?;
        layer_regions.push(compare(len, &arising, &values));

        let all = lower_sets(dim, len);
        let values = all
            .iter()
            .map(|r| region_pressure_with(r, fstar, t, &td, model))
            .collect::<Result<Vec<_>>>()?;
        lower.push(compare(len, &all, &values));
    }
    Ok(ShapeIndependenceReport { layer_regions, lower_sets: lower })
}
