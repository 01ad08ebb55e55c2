//! Symbol alphabets and their moments.
//!
//! Square QAM grids are Gray ordered and scaled to unit average power. The
//! two moments that drive every closed form in the crate are stored with the
//! alphabet: the kurtosis `mu4 = E|s|^4` (random-signaling sidelobe floor)
//! and the inverse second moment `nu_m2 = E|s|^-2` (reciprocal-filter noise
//! amplification).

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    name: String,
    points: Vec<Complex64>,
    mu4: f64,
    nu_m2: f64,
}

impl Constellation {
    /// Builds an alphabet from arbitrary points, rescaling to unit mean power.
    pub fn from_points(name: impl Into<String>, points: Vec<Complex64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("constellation needs at least one point".into()));
        }
        if let Some(i) = points
            .iter()
            .position(|s| s.norm_sqr() == 0.0 || !s.norm_sqr().is_finite())
        {
            return Err(Error::Config(format!(
                "constellation point {i} has zero or non-finite magnitude"
            )));
        }
        let m = points.len() as f64;
        let power = points.iter().map(|s| s.norm_sqr()).sum::<f64>() / m;
        let scale = power.sqrt().recip();
        let points: Vec<Complex64> = points.into_iter().map(|s| s * scale).collect();
        let mu4 = points.iter().map(|s| s.norm_sqr().powi(2)).sum::<f64>() / m;
        let nu_m2 = points.iter().map(|s| s.norm_sqr().recip()).sum::<f64>() / m;
        Ok(Self {
            name: name.into(),
            points,
            mu4,
            nu_m2,
        })
    }

    pub fn qpsk() -> Self {
        let pts = (0..4)
            .map(|k| Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4 * (2 * k + 1) as f64))
            .collect();
        Self::from_points("QPSK", pts).expect("QPSK is well formed")
    }

    /// Gray-ordered square M-QAM (M = 4^k).
    pub fn square_qam(order: usize) -> Result<Self> {
        let side = (order as f64).sqrt().round() as usize;
        if side < 2 || side * side != order || !side.is_power_of_two() {
            return Err(Error::UnknownConstellation(format!("{order}QAM")));
        }
        let bits = side.trailing_zeros();
        let level = |g: usize| {
            let b = gray_to_binary(g);
            (2 * b) as f64 - (side - 1) as f64
        };
        let pts = (0..order)
            .map(|idx| {
                let i = idx >> bits;
                let q = idx & (side - 1);
                Complex64::new(level(i), level(q))
            })
            .collect();
        Self::from_points(format!("{order}QAM"), pts)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn mu4(&self) -> f64 {
        self.mu4
    }

    pub fn nu_m2(&self) -> f64 {
        self.nu_m2
    }

    pub fn is_unit_modulus(&self) -> bool {
        self.points.iter().all(|s| (s.norm_sqr() - 1.0).abs() < 1e-12)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        self.points[rng.random_range(0..self.points.len())]
    }

    /// Fills an `m_sym x n` block with i.i.d. uniform draws.
    pub fn draw_block<R: Rng + ?Sized>(&self, rng: &mut R, m_sym: usize, n: usize) -> Array2<Complex64> {
        Array2::from_shape_simple_fn((m_sym, n), || self.draw(rng))
    }
}

fn gray_to_binary(mut g: usize) -> usize {
    let mut b = 0;
    while g != 0 {
        b ^= g;
        g >>= 1;
    }
    b
}

/// Looks up a named alphabet (`QPSK`, `16QAM`, `64QAM`; case-insensitive).
pub fn make_constellation(name: &str) -> Result<Constellation> {
    match name.trim().to_ascii_uppercase().as_str() {
        "QPSK" | "4QAM" => Ok(Constellation::qpsk()),
        "16QAM" | "16-QAM" => Constellation::square_qam(16),
        "64QAM" | "64-QAM" => Constellation::square_qam(64),
        _ => Err(Error::UnknownConstellation(name.to_string())),
    }
}

/// `M_sym x N` block of OFDM symbols plus the seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBlock {
    pub symbols: Array2<Complex64>,
    pub seed: u64,
}

impl SymbolBlock {
    pub fn m_sym(&self) -> usize {
        self.symbols.nrows()
    }

    pub fn n(&self) -> usize {
        self.symbols.ncols()
    }
}

pub fn draw_symbols(c: &Constellation, m_sym: usize, n: usize, seed: u64) -> Result<SymbolBlock> {
    if m_sym == 0 || n == 0 {
        return Err(Error::Config(format!(
            "symbol block must be non-empty (got {m_sym} x {n})"
        )));
    }
    let mut rng = seeded_rng(seed);
    Ok(SymbolBlock {
        symbols: c.draw_block(&mut rng, m_sym, n),
        seed,
    })
}
