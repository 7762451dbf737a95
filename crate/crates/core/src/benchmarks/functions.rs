//! Emulation test functions with their standard literature definitions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BenchmarkFunction {
    Borehole,
    Ishigami,
    Branin,
    Hartmann3,
    Friedman1,
    Friedman2,
    Friedman3,
    Forrester,
    CurrinExp,
    Park,
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN_A: [[f64; 3]; 4] = [[3.0, 10.0, 30.0], [0.1, 10.0, 35.0], [3.0, 10.0, 30.0], [0.1, 10.0, 35.0]];
const HARTMANN_P: [[f64; 3]; 4] =
    [[0.3689, 0.1170, 0.2673], [0.4699, 0.4387, 0.7470], [0.1091, 0.8732, 0.5547], [0.0381, 0.5743, 0.8828]];

const PI: f64 = std::f64::consts::PI;

impl BenchmarkFunction {
    pub const ALL: [Self; 10] = [
        Self::Borehole,
        Self::Ishigami,
        Self::Branin,
        Self::Hartmann3,
        Self::Friedman1,
        Self::Friedman2,
        Self::Friedman3,
        Self::Forrester,
        Self::CurrinExp,
        Self::Park,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Borehole => "Borehole",
            Self::Ishigami => "Ishigami",
            Self::Branin => "Branin",
            Self::Hartmann3 => "Hartmann3",
            Self::Friedman1 => "Friedman1",
            Self::Friedman2 => "Friedman2",
            Self::Friedman3 => "Friedman3",
            Self::Forrester => "Forrester",
            Self::CurrinExp => "CurrinExp",
            Self::Park => "Park",
        }
    }

    pub fn dim(self) -> usize {
        self.domain().len()
    }

    /// Closed box `[lo, hi]` per coordinate. Park excludes `x1 = 0`.
    pub fn domain(self) -> Vec<(f64, f64)> {
        match self {
            Self::Borehole => vec![
                (0.05, 0.15),
                (100.0, 50_000.0),
                (63_070.0, 115_600.0),
                (990.0, 1110.0),
                (63.1, 116.0),
                (700.0, 820.0),
                (1120.0, 1680.0),
                (9855.0, 12_045.0),
            ],
            Self::Ishigami => vec![(-PI, PI); 3],
            Self::Branin => vec![(-5.0, 10.0), (0.0, 15.0)],
            Self::Hartmann3 => vec![(0.0, 1.0); 3],
            Self::Friedman1 => vec![(0.0, 1.0); 5],
            Self::Friedman2 | Self::Friedman3 => vec![(0.0, 100.0), (40.0 * PI, 560.0 * PI), (0.0, 1.0), (1.0, 11.0)],
            Self::Forrester => vec![(0.0, 1.0)],
            Self::CurrinExp => vec![(0.0, 1.0); 2],
            Self::Park => vec![(0.0, 1.0); 4],
        }
    }

    fn check_domain<T: Real>(self, x: &[T]) -> Result<()> {
        let dom = self.domain();
        if x.len() != dom.len() {
            return Err(shape(format!("{} takes {} inputs, got {}", self.name(), dom.len(), x.len())));
        }
        for (j, (&v, &(lo, hi))) in x.iter().zip(&dom).enumerate() {
            let v = v.to_f64_lossy();
            let open_low = self == Self::Park && j == 0;
            let inside = v <= hi && if open_low { v > lo } else { v >= lo };
            if !inside {
                let bracket = if open_low { "(" } else { "[" };
                return Err(Error::DomainError {
                    function: self.name().into(),
                    detail: format!("x{} = {v} outside {bracket}{lo}, {hi}]", j + 1),
                });
            }
        }
        Ok(())
    }

    pub fn evaluate<T: Real>(self, x: &[T]) -> Result<T> {
        self.check_domain(x)?;
        let c = T::lit;
        let y = match self {
            Self::Borehole => {
                let (rw, r, tu, hu, tl, hl, l, kw) = (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]);
                let log_ratio = (r / rw).ln();
                let denom = log_ratio * (c(1.0) + c(2.0) * l * tu / (log_ratio * rw * rw * kw) + tu / tl);
                c(2.0 * PI) * tu * (hu - hl) / denom
            }
            Self::Ishigami => {
                let s2 = x[1].sin();
                x[0].sin() + c(7.0) * s2 * s2 + c(0.1) * x[2].powi(4) * x[0].sin()
            }
            Self::Branin => {
                let (b, cc, t) = (5.1 / (4.0 * PI * PI), 5.0 / PI, 1.0 / (8.0 * PI));
                let q = x[1] - c(b) * x[0] * x[0] + c(cc) * x[0] - c(6.0);
                q * q + c(10.0 * (1.0 - t)) * x[0].cos() + c(10.0)
            }
            Self::Hartmann3 => {
                let mut acc = T::zero();
                for i in 0..4 {
                    let inner = (0..3).fold(T::zero(), |s, j| {
                        let d = x[j] - c(HARTMANN_P[i][j]);
                        s + c(HARTMANN_A[i][j]) * d * d
                    });
                    acc += c(HARTMANN_ALPHA[i]) * (-inner).exp();
                }
                -acc
            }
            Self::Friedman1 => {
                c(10.0) * (T::pi() * x[0] * x[1]).sin()
                    + c(20.0) * (x[2] - c(0.5)).powi(2)
                    + c(10.0) * x[3]
                    + c(5.0) * x[4]
            }
            Self::Friedman2 => {
                let inner = x[1] * x[2] - c(1.0) / (x[1] * x[3]);
                (x[0] * x[0] + inner * inner).sqrt()
            }
            Self::Friedman3 => {
                let inner = x[1] * x[2] - c(1.0) / (x[1] * x[3]);
                inner.atan2(x[0])
            }
            Self::Forrester => {
                let a = c(6.0) * x[0] - c(2.0);
                a * a * (c(12.0) * x[0] - c(4.0)).sin()
            }
            Self::CurrinExp => {
                let (x1, x2) = (x[0], x[1]);
                let damp = if x2 > T::zero() { c(1.0) - (c(-1.0) / (c(2.0) * x2)).exp() } else { c(1.0) };
                let num = c(2300.0) * x1.powi(3) + c(1900.0) * x1 * x1 + c(2092.0) * x1 + c(60.0);
                let den = c(100.0) * x1.powi(3) + c(500.0) * x1 * x1 + c(4.0) * x1 + c(20.0);
                damp * num / den
            }
            Self::Park => {
                let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
                let root = (c(1.0) + (x2 + x3 * x3) * x4 / (x1 * x1)).sqrt();
                x1 / c(2.0) * (root - c(1.0)) + (x1 + c(3.0) * x4) * (c(1.0) + x3.sin()).exp()
            }
        };
        Ok(y)
    }
}

impl fmt::Display for BenchmarkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown benchmark function `{s}`")))
    }
}
