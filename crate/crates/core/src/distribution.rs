//! Finite discrete distributions of the normalized input amplitude.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mass points closer than this are merged.
pub const MERGE_TOL: f64 = 1e-9;

/// Allowed deviation of the total probability from one.
pub const SUM_TOL: f64 = 1e-12;

/// One mass point `(r, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassPoint {
    pub r: f64,
    pub p: f64,
}

/// Amplitude distribution with finitely many mass points, stored with
/// strictly increasing amplitudes and strictly positive probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution")]
pub struct DiscreteDistribution {
    points: Vec<MassPoint>,
}

#[derive(Deserialize)]
struct RawDistribution {
    points: Vec<MassPoint>,
}

impl TryFrom<RawDistribution> for DiscreteDistribution {
    type Error = Error;
    fn try_from(raw: RawDistribution) -> Result<Self> {
        Self::from_points(raw.points)
    }
}

impl DiscreteDistribution {
    /// Builds a distribution from `(r, p)` pairs in any order. Points whose
    /// amplitudes differ by less than [`MERGE_TOL`] are merged.
    pub fn new(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        Self::from_points(pairs.into_iter().map(|(r, p)| MassPoint { r, p }).collect())
    }

    /// All mass at amplitude `r`.
    pub fn single(r: f64) -> Result<Self> {
        Self::new([(r, 1.0)])
    }

    fn from_points(points: Vec<MassPoint>) -> Result<Self> {
        let points = Self::canonical(points)?;
        let total: f64 = points.iter().map(|m| m.p).sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { points })
    }

    /// Like [`new`](Self::new) but rescales the probabilities to sum to one
    /// and silently drops points with zero probability.
    pub fn normalized(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let raw: Vec<MassPoint> = pairs
            .into_iter()
            .filter(|&(_, p)| p != 0.0)
            .map(|(r, p)| MassPoint { r, p })
            .collect();
        let mut points = Self::canonical(raw)?;
        let total: f64 = points.iter().map(|m| m.p).sum();
        for m in &mut points {
            m.p /= total;
        }
        Ok(Self { points })
    }

    fn canonical(mut points: Vec<MassPoint>) -> Result<Vec<MassPoint>> {
        if points.is_empty() {
            return Err(Error::InvalidDistribution("no mass points".into()));
        }
        for m in &points {
            if !m.r.is_finite() || m.r < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "amplitude {} is not a finite nonnegative number",
                    m.r
                )));
            }
            if !m.p.is_finite() || m.p <= 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "probability {} at r = {} is not positive",
                    m.p, m.r
                )));
            }
        }
        points.sort_by(|a, b| a.r.total_cmp(&b.r));
        let mut merged: Vec<MassPoint> = Vec::with_capacity(points.len());
        for m in points {
            match merged.last_mut() {
                Some(last) if m.r - last.r < MERGE_TOL => {
                    let p = last.p + m.p;
                    last.r = (last.r * last.p + m.r * m.p) / p;
                    last.p = p;
                }
                _ => merged.push(m),
            }
        }
        Ok(merged)
    }

    pub fn points(&self) -> &[MassPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn amplitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|m| m.r)
    }

    pub fn probabilities(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|m| m.p)
    }

    /// `E{r²}`.
    pub fn average_power(&self) -> f64 {
        self.points.iter().map(|m| m.p * m.r * m.r).sum()
    }

    pub fn max_amplitude(&self) -> f64 {
        self.points.last().map_or(0.0, |m| m.r)
    }
}

impl fmt::Display for DiscreteDistribution {
    /// Formats as `r:p,r:p,...`, the same syntax accepted by [`FromStr`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, m) in self.points.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", m.r, m.p)?;
        }
        Ok(())
    }
}

impl FromStr for DiscreteDistribution {
    type Err = Error;

    /// Parses `r:p,r:p,...`. Parse failures report the byte offset of the
    /// offending field.
    fn from_str(s: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut offset = 0;
        for item in s.split(',') {
            let trimmed_start = offset + (item.len() - item.trim_start().len());
            let Some((r_str, p_str)) = item.split_once(':') else {
                return Err(Error::Parse {
                    position: trimmed_start,
                    reason: format!("expected `r:p`, found `{}`", item.trim()),
                });
            };
            let r = r_str.trim().parse::<f64>().map_err(|e| Error::Parse {
                position: trimmed_start,
                reason: format!("bad amplitude `{}`: {e}", r_str.trim()),
            })?;
            let p_pos = offset + r_str.len() + 1;
            let p = p_str.trim().parse::<f64>().map_err(|e| Error::Parse {
                position: p_pos,
                reason: format!("bad probability `{}`: {e}", p_str.trim()),
            })?;
            pairs.push((r, p));
            offset += item.len() + 1;
        }
        Self::new(pairs)
    }
}
