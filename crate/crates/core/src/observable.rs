//! Local observables: finite sums of signed spin monomials.
//!
//! [`Observable`] lives on the full index set `ℕ` (`σ_B = Π_{i∈B} σ_i`);
//! [`FirstLayerObservable`] lives on one layer and is indexed by lattice
//! offsets (exponent vectors once the layer is multi-dimensional).

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// `f(σ) = Σ_B c_B Π_{i∈B} σ_i` in canonical form: index sets sorted, like
/// terms merged, zero coefficients dropped, monomials sorted by index set.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    terms: Vec<(Vec<u64>, f64)>,
}

impl Observable {
    /// Canonicalizes a list of `(indices, coefficient)` monomials.
    ///
    /// Repeated indices cancel pairwise (`σ_i² = 1`); a monomial that reduces
    /// to a constant is rejected.
    pub fn new(terms: impl IntoIterator<Item = (Vec<u64>, f64)>) -> Result<Self> {
        let mut merged: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
        for (mut indices, coeff) in terms {
            if !coeff.is_finite() {
                return Err(Error::InvalidInput("coefficient must be finite".into()));
            }
            if indices.contains(&0) {
                return Err(Error::InvalidInput("spin indices start at 1".into()));
            }
            indices.sort_unstable();
            let mut reduced: Vec<u64> = Vec::with_capacity(indices.len());
            for i in indices {
                if reduced.last() == Some(&i) {
                    reduced.pop();
                } else {
                    reduced.push(i);
                }
            }
            if reduced.is_empty() {
                return Err(Error::InvalidInput("constant monomials are not supported".into()));
            }
            *merged.entry(reduced).or_insert(0.0) += coeff;
        }
        let terms: Vec<_> = merged.into_iter().filter(|(_, c)| *c != 0.0).collect();
        if terms.is_empty() {
            return Err(Error::InvalidInput("observable has no non-zero terms".into()));
        }
        Ok(Self { terms })
    }

    pub fn terms(&self) -> &[(Vec<u64>, f64)] {
        &self.terms
    }

    pub fn max_index(&self) -> u64 {
        self.terms.iter().flat_map(|(b, _)| b.iter().copied()).max().unwrap_or(1)
    }

    pub fn sup_norm(&self) -> f64 {
        self.terms.iter().map(|(_, c)| c.abs()).sum()
    }

    /// `(T_i f)(σ) = f(σ_{i·})`, with `sigma[k − 1] = σ_k`.
    pub fn evaluate_shifted(&self, sigma: &[i8], i: u64) -> f64 {
        self.terms
            .iter()
            .map(|(b, c)| {
                let sign: i32 = b.iter().map(|&k| sigma[(i * k - 1) as usize] as i32).product();
                c * sign as f64
            })
            .sum()
    }

    /// `(1/N) Σ_{i=1}^N T_i f`; `sigma` must cover indices up to `N · max_index`.
    pub fn ergodic_average(&self, sigma: &[i8], n: u64) -> f64 {
        (1..=n).map(|i| self.evaluate_shifted(sigma, i)).sum::<f64>() / n as f64
    }

    /// Rewrites `f` as a function of the layer `τ¹_k = σ_{2^k}`; every index must be a power of two.
    pub fn to_first_layer(&self) -> Result<FirstLayerObservable> {
        let terms = self
            .terms
            .iter()
            .map(|(b, c)| {
                let offsets = b
                    .iter()
                    .map(|&i| {
                        if i.is_power_of_two() {
                            Ok(vec![i.trailing_zeros()])
                        } else {
                            Err(Error::InvalidInput(format!(
                                "σ_{i} is not on the first layer; use the multi-prime extension"
                            )))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((offsets, *c))
            })
            .collect::<Result<Vec<_>>>()?;
        FirstLayerObservable::new(1, terms)
    }
}

fn fmt_coeff(c: f64) -> String {
    format!("{c:?}")
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (b, c)) in self.terms.iter().enumerate() {
            let magnitude = if k == 0 {
                if *c < 0.0 {
                    write!(f, "-")?;
                }
                c.abs()
            } else {
                write!(f, " {} ", if *c < 0.0 { '-' } else { '+' })?;
                c.abs()
            };
            if magnitude != 1.0 {
                write!(f, "{}*", fmt_coeff(magnitude))?;
            }
            let spins: Vec<String> = b.iter().map(|i| format!("s[{i}]")).collect();
            write!(f, "{}", spins.join("*"))?;
        }
        Ok(())
    }
}

/// A local function `f*` of one layer: `Σ_A c_A Π_{a∈A} τ_a` with offsets in `ℕ₀^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstLayerObservable {
    dim: usize,
    terms: Vec<(Vec<Vec<u32>>, f64)>,
}

impl FirstLayerObservable {
    pub fn new(dim: usize, terms: Vec<(Vec<Vec<u32>>, f64)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        let mut merged: BTreeMap<Vec<Vec<u32>>, f64> = BTreeMap::new();
        for (mut offsets, coeff) in terms {
            if !coeff.is_finite() {
                return Err(Error::InvalidInput("coefficient must be finite".into()));
            }
            if offsets.is_empty() {
                return Err(Error::InvalidInput("monomial offset set must be non-empty".into()));
            }
            if offsets.iter().any(|x| x.len() != dim) {
                return Err(Error::InvalidInput("offset dimension mismatch".into()));
            }
            offsets.sort();
            if offsets.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidInput("repeated offset inside a monomial".into()));
            }
            *merged.entry(offsets).or_insert(0.0) += coeff;
        }
        let terms: Vec<_> = merged.into_iter().filter(|(_, c)| *c != 0.0).collect();
        if terms.is_empty() {
            return Err(Error::InvalidInput("observable has no non-zero terms".into()));
        }
        Ok(Self { dim, terms })
    }

    /// One-dimensional constructor from scalar offsets.
    pub fn one_dim(terms: Vec<(Vec<u32>, f64)>) -> Result<Self> {
        Self::new(
            1,
            terms
                .into_iter()
                .map(|(a, c)| (a.into_iter().map(|x| vec![x]).collect(), c))
                .collect(),
        )
    }

    /// `τ₀τ₁`, the layer form of `σ₁σ₂`.
    pub fn coupling() -> Self {
        Self::one_dim(vec![(vec![0, 1], 1.0)]).expect("valid")
    }

    /// `τ₀`, the layer form of `σ₁`.
    pub fn magnetization() -> Self {
        Self::one_dim(vec![(vec![0], 1.0)]).expect("valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(Vec<Vec<u32>>, f64)] {
        &self.terms
    }

    /// `1 + max offset` along `axis`.
    pub fn width(&self, axis: usize) -> u32 {
        self.terms
            .iter()
            .flat_map(|(a, _)| a.iter().map(move |x| x[axis]))
            .max()
            .unwrap_or(0)
            + 1
    }

    pub fn sup_norm(&self) -> f64 {
        self.terms.iter().map(|(_, c)| c.abs()).sum()
    }

    /// Values of a one-dimensional `f*` on every window state of width `w = width(0)`.
    /// Bit `j` of the state is 1 when `τ_j = −1`.
    pub fn window_table(&self) -> Vec<f64> {
        assert_eq!(self.dim, 1, "window table needs a one-dimensional observable");
        let w = self.width(0);
        let masks: Vec<(u32, f64)> = self
            .terms
            .iter()
            .map(|(a, c)| (a.iter().fold(0u32, |m, x| m | (1 << x[0])), *c))
            .collect();
        (0..1u32 << w)
            .map(|s| {
                masks
                    .iter()
                    .map(|&(m, c)| if (s & m).count_ones() % 2 == 0 { c } else { -c })
                    .sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_merges_and_sorts() {
        let f = Observable::new(vec![(vec![4], 2.5), (vec![4], -1.0)]).unwrap();
        assert_eq!(f.terms(), &[(vec![4], 1.5)]);
        let g = Observable::new(vec![(vec![3, 1], 1.0), (vec![2, 1], 1.0)]).unwrap();
        assert_eq!(g.terms(), &[(vec![1, 2], 1.0), (vec![1, 3], 1.0)]);
        assert_eq!(g.to_string(), "s[1]*s[2] + s[1]*s[3]");
        let h = Observable::new(vec![(vec![1, 1, 2], -0.5)]).unwrap();
        assert_eq!(h.to_string(), "-0.5*s[2]");
        assert!(Observable::new(vec![(vec![1, 1], 1.0)]).is_err());
        assert!(Observable::new(vec![(vec![0], 1.0)]).is_err());
        assert!(Observable::new(vec![(vec![1], 1.0), (vec![1], -1.0)]).is_err());
    }

    #[test]
    fn first_layer_conversion() {
        let f = Observable::new(vec![(vec![1, 2], 1.0)]).unwrap();
        assert_eq!(f.to_first_layer().unwrap(), FirstLayerObservable::coupling());
        let g = Observable::new(vec![(vec![1, 3], 1.0)]).unwrap();
        assert!(g.to_first_layer().is_err());
    }

    #[test]
    fn window_table_coupling() {
        // states: bit j set <=> τ_j = -1
        assert_eq!(FirstLayerObservable::coupling().window_table(), vec![1.0, -1.0, -1.0, 1.0]);
        assert_eq!(FirstLayerObservable::magnetization().window_table(), vec![1.0, -1.0]);
    }

    #[test]
    fn ergodic_average_direct() {
        let f = Observable::new(vec![(vec![1, 2], 1.0)]).unwrap();
        let sigma = [1i8, -1, 1, 1];
        // σ1σ2 + σ2σ4 = -1 + -1
        assert_eq!(f.ergodic_average(&sigma, 2), -1.0);
    }
}
