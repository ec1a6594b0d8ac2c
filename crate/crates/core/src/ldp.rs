//! Pressures of multiplicative ergodic averages, rate functions and CLT variances.
//!
//! For a first-layer observable `f = f*(τ¹)` the pressure of
//! `X_N = (1/N) Σ_{i≤N} T_i f` is `F(t) = Σ_k P^k(t f*) / 2^{k+2}`, where `P^k`
//! is the tilted pressure of `k + 1` consecutive window positions on one layer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arith::{koroa_weight, layer_counts};
use crate::error::{Error, Result};
use crate::gibbs::{mean_estimate, sample_replica, MeanEstimate};
use crate::ising1d::{log_partition_reduced, tilted_layer_pressures, transfer, ModelParams, TransferData};
use crate::observable::{FirstLayerObservable, Observable};

/// Largest `|t|` explored when bracketing a Legendre maximizer.
pub const T_MAX: f64 = 4096.0;
/// Step for first derivatives (Richardson over `h`, `h/2`).
pub const SLOPE_STEP: f64 = 1e-3;
/// Step for second derivatives (Richardson over `h`, `h/2`).
pub const CURVATURE_STEP: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScgfValue {
    pub value: f64,
    pub trunc_err: f64,
    /// Highest layer index `K` kept in the series.
    pub k_max: usize,
}

/// A convex pressure `t ↦ F(t)` with a slope.
pub trait Pressure {
    fn value(&self, t: f64) -> Result<f64>;

    fn slope(&self, t: f64) -> Result<f64> {
        richardson_slope(|s| self.value(s), t, SLOPE_STEP)
    }

    /// A priori bounds on the range of the slope (`[−‖f‖∞, ‖f‖∞]` for bounded `f`).
    fn slope_bounds(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// Wraps a closed-form pressure.
pub struct FnPressure<F>(pub F);

impl<F: Fn(f64) -> f64> Pressure for FnPressure<F> {
    fn value(&self, t: f64) -> Result<f64> {
        Ok((self.0)(t))
    }
}

fn richardson_slope(f: impl Fn(f64) -> Result<f64>, t: f64, h: f64) -> Result<f64> {
    let d = |h: f64| -> Result<f64> { Ok((f(t + h)? - f(t - h)?) / (2.0 * h)) };
    let (coarse, fine) = (d(h)?, d(h / 2.0)?);
    Ok((4.0 * fine - coarse) / 3.0)
}

fn richardson_curvature(f: impl Fn(f64) -> Result<f64>, t: f64, h: f64) -> Result<f64> {
    let f0 = f(t)?;
    let d = |h: f64| -> Result<f64> { Ok((f(t + h)? - 2.0 * f0 + f(t - h)?) / (h * h)) };
    let (coarse, fine) = (d(h)?, d(h / 2.0)?);
    Ok((4.0 * fine - coarse) / 3.0)
}

/// The pressure `F(t) = 𝒫^M(t f | μ^M_∞)` of a one-dimensional first-layer observable.
#[derive(Debug, Clone)]
pub struct ScgfModel {
    fstar: FirstLayerObservable,
    td: TransferData,
    tol: f64,
}

impl ScgfModel {
    pub fn new(fstar: FirstLayerObservable, params: &ModelParams, tol: f64) -> Result<Self> {
        params.validate()?;
        if !(tol > 0.0) {
            return Err(Error::InvalidInput("tolerance must be positive".into()));
        }
        if fstar.dim() != 1 {
            return Err(Error::InvalidInput("the layer pressure needs a one-dimensional observable".into()));
        }
        let model = Self { fstar, td: transfer(params), tol };
        model.evaluate(0.0, 0)?; // surfaces window-width errors early
        Ok(model)
    }

    pub fn observable(&self) -> &FirstLayerObservable {
        &self.fstar
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// `Σ_{k>K} (k+1)|t| ‖f*‖∞ / 2^{k+2} = |t| ‖f*‖∞ (K+3) / 2^{K+2}`.
    pub fn tail_bound(&self, t: f64, k: usize) -> f64 {
        t.abs() * self.fstar.sup_norm() * (k as f64 + 3.0) * 2f64.powi(-(k as i32) - 2)
    }

    /// Smallest `K` whose tail bound at `|t|` is below the tolerance.
    pub fn truncation(&self, t: f64) -> usize {
        (0..).find(|&k| self.tail_bound(t, k) < self.tol).expect("tail bound decays")
    }

    /// The series truncated after layer index `k`.
    pub fn evaluate(&self, t: f64, k: usize) -> Result<ScgfValue> {
        let p = tilted_layer_pressures(k, &self.fstar, t, &self.td)?;
        let value = p.iter().enumerate().map(|(k, pk)| pk * koroa_weight(k as u32)).sum();
        Ok(ScgfValue { value, trunc_err: self.tail_bound(t, k), k_max: k })
    }

    pub fn scgf(&self, t: f64) -> Result<ScgfValue> {
        self.evaluate(t, self.truncation(t))
    }

    /// Truncation for derivatives near `t`: bounds the tail of `F''`,
    /// `Σ_{k>K} (k+1)² ‖f*‖∞² / 2^{k+2}`, with room for `|t|`.
    fn derivative_truncation(&self, t: f64) -> usize {
        let s = self.fstar.sup_norm().max(1.0);
        (self.truncation(t)..)
            .find(|&k| (1.0 + t.abs()) * s * s * (k as f64 + 3.0).powi(2) * 2f64.powi(-(k as i32) - 2) < self.tol)
            .expect("tail bound decays")
    }

    /// `F''(t)` by central differences on a series truncated at one fixed `K`,
    /// so that truncation does not vary across the stencil.
    pub fn curvature(&self, t: f64) -> Result<f64> {
        let k = self.derivative_truncation(t.abs() + CURVATURE_STEP);
        richardson_curvature(|s| Ok(self.evaluate(s, k)?.value), t, CURVATURE_STEP)
    }
}

impl Pressure for ScgfModel {
    fn value(&self, t: f64) -> Result<f64> {
        Ok(self.scgf(t)?.value)
    }

    fn slope(&self, t: f64) -> Result<f64> {
        let k = self.derivative_truncation(t.abs() + SLOPE_STEP);
        richardson_slope(|s| Ok(self.evaluate(s, k)?.value), t, SLOPE_STEP)
    }

    fn slope_bounds(&self) -> (f64, f64) {
        let s = self.fstar.sup_norm();
        (-s, s)
    }
}

/// One-shot `F(t)` for a first-layer observable.
pub fn scgf(fstar: &FirstLayerObservable, params: &ModelParams, t: f64, tol: f64) -> Result<ScgfValue> {
    ScgfModel::new(fstar.clone(), params, tol)?.scgf(t)
}

/// `F(t)` for `f = σ₁σ₂` as a difference of free energies, `f^∅(βJ + t) − f^∅(βJ)`.
///
/// Layer `p` contributes `log Z_{p+1}(βJ + t) − log Z_{p+1}(βJ)` for free chains
/// of `p + 1` bonds. That ratio is the tilted expectation under the free chain,
/// which is the infinite-volume layer law only when `h = 0`. For `h ≠ 0` the free
/// right end makes this differ from [`scgf`].
pub fn scgf_via_free_energy(t: f64, params: &ModelParams, tol: f64) -> Result<ScgfValue> {
    params.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let (bj, bh) = (params.bj(), params.bh());
    let tail = |k: usize| t.abs() * (k as f64 + 3.0) * 2f64.powi(-(k as i32) - 2);
    let mut value = 0.0;
    let mut k = 0usize;
    loop {
        let diff = log_partition_reduced(k + 1, bj + t, bh, 0.0) - log_partition_reduced(k + 1, bj, bh, 0.0);
        value += diff * koroa_weight(k as u32);
        if tail(k) < tol {
            return Ok(ScgfValue { value, trunc_err: tail(k), k_max: k });
        }
        k += 1;
    }
}

/// Evenly spaced grid `start, start + step, …` up to `stop` (inclusive within rounding).
pub fn grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(start.is_finite() && stop.is_finite() && step > 0.0 && step.is_finite()) || stop < start {
        return Err(Error::InvalidInput("grid needs finite start <= stop and step > 0".into()));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    if n > 10_000_000 {
        return Err(Error::Infeasible(format!("grid has {n} points")));
    }
    Ok((0..n).map(|i| start + i as f64 * step).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScgfCurve {
    pub grid: Vec<f64>,
    #[serde(rename = "F")]
    pub f: Vec<f64>,
    #[serde(rename = "Fprime")]
    pub fprime: Vec<f64>,
    pub trunc_err: Vec<f64>,
    pub deriv_step: f64,
}

impl ScgfCurve {
    /// `F` and `F′` on an increasing grid.
    pub fn compute(model: &ScgfModel, grid: &[f64]) -> Result<Self> {
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("grid must be strictly increasing".into()));
        }
        let rows: Vec<(f64, f64, f64)> = grid
            .par_iter()
            .map(|&t| {
                let v = model.scgf(t)?;
                Ok((v.value, model.slope(t)?, v.trunc_err))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            grid: grid.to_vec(),
            f: rows.iter().map(|r| r.0).collect(),
            fprime: rows.iter().map(|r| r.1).collect(),
            trunc_err: rows.iter().map(|r| r.2).collect(),
            deriv_step: SLOPE_STEP,
        })
    }

    /// Rejects curves whose divided second differences fall below `−tol`.
    pub fn check_convex(&self, tol: f64) -> Result<()> {
        for i in 1..self.grid.len().saturating_sub(1) {
            let (t0, t1, t2) = (self.grid[i - 1], self.grid[i], self.grid[i + 1]);
            let left = (self.f[i] - self.f[i - 1]) / (t1 - t0);
            let right = (self.f[i + 1] - self.f[i]) / (t2 - t1);
            if right - left < -tol {
                return Err(Error::Precondition(format!("pressure is not convex near t = {t1}")));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "F", "Fprime", "trunc_err"]).map_err(crate::gibbs::csv_err)?;
        for i in 0..self.grid.len() {
            out.write_record([
                fmt_f64(self.grid[i]),
                fmt_f64(self.f[i]),
                fmt_f64(self.fprime[i]),
                fmt_f64(self.trunc_err[i]),
            ])
            .map_err(crate::gibbs::csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Shortest decimal that round-trips.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainFlag {
    Interior,
    BelowRange,
    AboveRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub x: f64,
    /// `I(x)`; `+∞` outside the open range of `F′`.
    pub rate: f64,
    /// Maximizer `t*` with `F′(t*) = x` (`±∞` outside the range).
    pub t_star: f64,
    pub domain: DomainFlag,
}

/// `I(x) = sup_t (t x − F(t))`, solved through `F′(t*) = x` by bracketing and bisection.
pub fn legendre(pressure: &impl Pressure, x: f64) -> Result<RatePoint> {
    if !x.is_finite() {
        return Err(Error::InvalidInput("x must be finite".into()));
    }
    let outside = |domain, t_star| Ok(RatePoint { x, rate: f64::INFINITY, t_star, domain });
    let (lower, upper) = pressure.slope_bounds();
    if x <= lower {
        return outside(DomainFlag::BelowRange, f64::NEG_INFINITY);
    }
    if x >= upper {
        return outside(DomainFlag::AboveRange, f64::INFINITY);
    }
    let g0 = pressure.slope(0.0)?;
    let not_convex = || Error::Precondition("pressure slope is not increasing".into());

    // bracket [lo, hi] with g(lo) <= x <= g(hi)
    let (mut lo, mut hi) = if x >= g0 {
        let (mut lo, mut g_lo, mut hi) = (0.0, g0, 1.0);
        loop {
            let g_hi = pressure.slope(hi)?;
            if g_hi < g_lo - 1e-12 {
                return Err(not_convex());
            }
            if g_hi >= x {
                break (lo, hi);
            }
            if hi >= T_MAX {
                return outside(DomainFlag::AboveRange, f64::INFINITY);
            }
            (lo, g_lo, hi) = (hi, g_hi, hi * 2.0);
        }
    } else {
        let (mut hi, mut g_hi, mut lo) = (0.0, g0, -1.0);
        loop {
            let g_lo = pressure.slope(lo)?;
            if g_lo > g_hi + 1e-12 {
                return Err(not_convex());
            }
            if g_lo <= x {
                break (lo, hi);
            }
            if lo <= -T_MAX {
                return outside(DomainFlag::BelowRange, f64::NEG_INFINITY);
            }
            (hi, g_hi, lo) = (lo, g_lo, lo * 2.0);
        }
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pressure.slope(mid)? < x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t_star = 0.5 * (lo + hi);
    let rate = (t_star * x - pressure.value(t_star)?).max(0.0);
    Ok(RatePoint { x, rate, t_star, domain: DomainFlag::Interior })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub points: Vec<RatePoint>,
    /// Closure of the range of `F′` (from the slope bounds, tightened by `F′(±T_MAX)`).
    pub domain: (f64, f64),
}

pub fn legendre_curve(pressure: &(impl Pressure + Sync), xs: &[f64]) -> Result<RateCurve> {
    let points = xs.par_iter().map(|&x| legendre(pressure, x)).collect::<Result<Vec<_>>>()?;
    let (lower, upper) = pressure.slope_bounds();
    let domain = (
        pressure.slope(-T_MAX)?.max(lower),
        pressure.slope(T_MAX)?.min(upper),
    );
    Ok(RateCurve { points, domain })
}

impl RateCurve {
    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "I", "t_star", "domain_flag"]).map_err(crate::gibbs::csv_err)?;
        for p in &self.points {
            let flag = match p.domain {
                DomainFlag::Interior => "interior",
                DomainFlag::BelowRange => "below_range",
                DomainFlag::AboveRange => "above_range",
            };
            out.write_record([fmt_f64(p.x), fmt_f64(p.rate), fmt_f64(p.t_star), flag.to_string()])
                .map_err(crate::gibbs::csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `sup_{x ∈ [lo, hi]} (t x − g(x))` for concave `x ↦ t x − g(x)`, by golden-section search.
pub fn convex_conjugate(g: impl Fn(f64) -> f64, t: f64, lo: f64, hi: f64) -> f64 {
    let phi = |x: f64| t * x - g(x);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (phi(c), phi(d));
    for _ in 0..200 {
        if b - a < 1e-13 {
            break;
        }
        if fc > fd {
            b = d;
            (d, fd) = (c, fc);
            c = b - r * (b - a);
            fc = phi(c);
        } else {
            a = c;
            (c, fc) = (d, fd);
            d = a + r * (b - a);
            fd = phi(d);
        }
    }
    phi(lo).max(phi(hi)).max(phi(0.5 * (a + b)))
}

/// Asymptotic variance `σ² = F''(0)`.
pub fn clt_variance(fstar: &FirstLayerObservable, params: &ModelParams, tol: f64) -> Result<f64> {
    ScgfModel::new(fstar.clone(), params, tol)?.curvature(0.0)
}

/// `(1/N) log E exp(t Σ_{i≤N} T_i f)` exactly: layers with equal `ψ₂` share one tilted sweep.
pub fn finite_pressure_exact(fstar: &FirstLayerObservable, t: f64, n: u64, params: &ModelParams) -> Result<f64> {
    params.validate()?;
    if n == 0 || n > 1 << 20 {
        return Err(Error::InvalidInput("finite pressure needs 1 <= N <= 2^20".into()));
    }
    let counts = layer_counts(n);
    let p = tilted_layer_pressures(counts.len() - 1, fstar, t, &transfer(params))?;
    let total: f64 = counts.iter().zip(&p).map(|(&c, pk)| c as f64 * pk).sum();
    Ok(total / n as f64)
}

/// Samples of `X_N(f) = (1/N) Σ_{i≤N} T_i f`, one per replica.
///
/// Each replica is drawn on `[1, N · max_index(f)]`, which covers every spin the average reads.
pub fn ergodic_average_samples(
    f: &Observable,
    params: &ModelParams,
    n: u64,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    params.validate()?;
    if n == 0 || count == 0 {
        return Err(Error::InvalidInput("volume and count must be >= 1".into()));
    }
    let volume = n
        .checked_mul(f.max_index())
        .filter(|&v| v <= 1 << 30)
        .ok_or_else(|| Error::Infeasible("sampling volume N · max_index exceeds 2^30".into()))?;
    let td = transfer(params);
    Ok((0..count as u64)
        .into_par_iter()
        .map(|replica| f.ergodic_average(&sample_replica(volume, &td, seed, replica), n))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRow {
    pub x: f64,
    /// `−(1/N) log P̂` of the tail beyond `x`; `None` when no sample reached it.
    pub emp_rate: Option<f64>,
    #[serde(rename = "I")]
    pub rate: f64,
    pub censored: bool,
}

/// Empirical tail decay rates next to the analytic rate function.
///
/// Uses the upper tail `P̂(X_N ≥ x)` for `x` at or above the sample mean and
/// the lower tail `P̂(X_N ≤ x)` below it. Diagnostic only: at desk-scale `N`
/// the polynomial prefactor of the tail is far from negligible.
pub fn empirical_ldp_check(
    samples: &[f64],
    n: u64,
    pressure: &impl Pressure,
    xs: &[f64],
) -> Result<(MeanEstimate, Vec<EmpiricalRow>)> {
    let est = mean_estimate(samples);
    let rows = xs
        .iter()
        .map(|&x| {
            let hits = if x >= est.mean {
                samples.iter().filter(|&&v| v >= x).count()
            } else {
                samples.iter().filter(|&&v| v <= x).count()
            };
            let emp_rate = (hits > 0).then(|| -(hits as f64 / samples.len() as f64).ln() / n as f64);
            Ok(EmpiricalRow { x, emp_rate, rate: legendre(pressure, x)?.rate, censored: hits == 0 })
        })
        .collect::<Result<_>>()?;
    Ok((est, rows))
}

pub fn write_empirical_csv(rows: &[EmpiricalRow], w: impl std::io::Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "emp_rate", "I", "censored"]).map_err(crate::gibbs::csv_err)?;
    for r in rows {
        out.write_record([
            fmt_f64(r.x),
            r.emp_rate.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.rate),
            r.censored.to_string(),
        ])
        .map_err(crate::gibbs::csv_err)?;
    }
    out.flush()?;
    Ok(())
}
