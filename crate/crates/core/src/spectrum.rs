//! Ordered operator spectra and their CSV exchange format.
//!
//! CSV columns are `m,a_m,provenance` with a 1-based index `m` and
//! eigenvalues in non-increasing order.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eigen1d::PiecewiseEigenfunction;
use crate::operator::RealMode;
use crate::scalar::{from_usize, to_f64, Real};

/// Where an eigenvalue came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Diagonal Fourier formula (constant coefficients, Ω = ambient box).
    ClosedForm,
    /// Root `k` of the even-parity quantization equation.
    Symmetric(usize),
    /// Root `k` of the odd-parity quantization equation.
    Antisymmetric(usize),
    /// Dense Galerkin eigensolve.
    Galerkin,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::ClosedForm => write!(f, "closed-form"),
            Provenance::Symmetric(k) => write!(f, "symmetric:{k}"),
            Provenance::Antisymmetric(k) => write!(f, "antisymmetric:{k}"),
            Provenance::Galerkin => write!(f, "galerkin"),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unknown provenance {s:?}"));
        match s {
            "closed-form" => Ok(Provenance::ClosedForm),
            "galerkin" => Ok(Provenance::Galerkin),
            _ => {
                let (kind, idx) = s.split_once(':').ok_or_else(bad)?;
                let idx: usize = idx.parse().map_err(|_| bad())?;
                match kind {
                    "symmetric" => Ok(Provenance::Symmetric(idx)),
                    "antisymmetric" => Ok(Provenance::Antisymmetric(idx)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

/// Problem parameters a spectrum was computed for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumParams<T> {
    pub lambda: T,
    pub mu: T,
    pub half_width: T,
    pub order: u32,
    pub dim: usize,
}

/// Eigenfunctions attached to a spectrum, when the producer kept them.
#[derive(Clone, Debug)]
pub enum Eigenfunctions<T> {
    /// Exact one-dimensional eigenfunctions, one per eigenvalue.
    Piecewise(Vec<PiecewiseEigenfunction<T>>),
    /// Column `m` holds the coefficients of `v_m` in the real trigonometric
    /// basis `modes`.
    Modes {
        modes: Vec<RealMode>,
        half_width: T,
        vectors: DMatrix<T>,
    },
}

#[derive(Clone, Debug)]
pub struct Spectrum<T> {
    pub values: Vec<T>,
    pub provenance: Vec<Provenance>,
    pub params: Option<SpectrumParams<T>>,
    pub eigenfunctions: Option<Eigenfunctions<T>>,
}

impl<T: Real> Spectrum<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `a_m` with 1-based `m`.
    pub fn get(&self, m: usize) -> Option<T> {
        m.checked_sub(1).and_then(|i| self.values.get(i).copied())
    }

    pub fn is_exact_1d(&self) -> bool {
        !self.is_empty()
            && self
                .provenance
                .iter()
                .all(|p| matches!(p, Provenance::Symmetric(_) | Provenance::Antisymmetric(_)))
    }

    /// Strictly positive and non-increasing.
    pub fn check_ordering(&self) -> Result<()> {
        if self.values.iter().any(|&a| !(a > T::zero())) {
            return Err(Error::Parse("spectrum has a non-positive eigenvalue".into()));
        }
        if self.values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Parse("spectrum is not non-increasing".into()));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["m", "a_m", "provenance"])?;
        for (i, (a, p)) in self.values.iter().zip(&self.provenance).enumerate() {
            w.write_record([(i + 1).to_string(), format_float(*a), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["m", "a_m", "provenance"] {
            return Err(Error::Parse(format!("expected header m,a_m,provenance, got {headers:?}")));
        }
        let mut values = Vec::new();
        let mut provenance = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let m: usize = rec[0]
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad index {:?}", row + 1, &rec[0])))?;
            if m != row + 1 {
                return Err(Error::Parse(format!("row {}: index {m} out of sequence", row + 1)));
            }
            let a: f64 = rec[1]
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad eigenvalue {:?}", row + 1, &rec[1])))?;
            values.push(T::from_f64(a).ok_or_else(|| Error::Parse("eigenvalue not representable".into()))?);
            provenance.push(rec[2].parse()?);
        }
        let spec = Spectrum {
            values,
            provenance,
            params: None,
            eigenfunctions: None,
        };
        spec.check_ordering()?;
        Ok(spec)
    }
}

/// Shortest decimal string that parses back to the same `f64`, in exponent
/// form outside `[1e-5, 1e16)` in magnitude.
pub fn format_float<T: Real>(x: T) -> String {
    let v = to_f64(x);
    if v == 0.0 {
        // Avoid "-0".
        return "0".to_string();
    }
    if v.is_finite() && !(1e-5..1e16).contains(&v.abs()) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Sorts `(value, provenance, column)` triples by non-increasing value.
pub(crate) fn sort_descending<T: Real, P>(items: &mut [(T, P)]) {
    items.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
}

/// Largest `C` with `a_m ≤ C · m^{-p}` over `m ∈ [m_lo, m_hi]` (1-based).
pub fn decay_constant<T: Real>(values: &[T], exponent: T, m_lo: usize, m_hi: usize) -> Option<T> {
    let hi = m_hi.min(values.len());
    if m_lo == 0 || m_lo > hi {
        return None;
    }
    (m_lo..=hi)
        .map(|m| values[m - 1] * from_usize::<T>(m).powf(exponent))
        .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| if v > a { v } else { a })))
}
