//! Laguerre-Gaussian OAM modes, message encoding and derived images.
//!
//! Lengths are in units of the beam waist `w0`. Modes are evaluated in the
//! waist plane with radial index 0:
//!
//! ```text
//! u_l(r, φ) ∝ (√2 r)^|l| · exp(−r²) · exp(i l φ)
//! ```
//!
//! and normalised so that `Σ |u|² Δx² = 1` over the grid.

use std::f64::consts::{PI, TAU};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Square sampling window centred on the beam axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Pixels per axis.
    pub side: usize,
    /// Half-width of the window in units of w0.
    pub extent: f64,
}

impl GridSpec {
    pub fn new(side: usize, extent: f64) -> Result<Self> {
        let g = GridSpec { side, extent };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.side < 8 {
            return Err(Error::invalid(format!("grid side {} < 8", self.side)));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(Error::invalid(format!("grid extent {} must be > 0", self.extent)));
        }
        Ok(())
    }

    /// Pixel pitch.
    pub fn dx(&self) -> f64 {
        2.0 * self.extent / self.side as f64
    }

    /// Physical coordinate of pixel centre `i` (symmetric about 0).
    pub fn coord(&self, i: usize) -> f64 {
        -self.extent + (i as f64 + 0.5) * self.dx()
    }

    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch {
                left: self.to_string(),
                right: other.to_string(),
            });
        }
        Ok(())
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            side: 64,
            extent: 3.0,
        }
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{0}x{0} (extent {1})", self.side, self.extent)
    }
}

/// Ordered list of distinct topological charges; bit `k` of a message
/// activates `charges[k]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSet {
    charges: Vec<i32>,
}

impl ModeSet {
    pub fn new(charges: Vec<i32>) -> Result<Self> {
        if charges.is_empty() {
            return Err(Error::invalid("mode set must contain at least one charge"));
        }
        for (i, c) in charges.iter().enumerate() {
            if charges[..i].contains(c) {
                return Err(Error::invalid(format!("duplicate charge {c} in mode set")));
            }
        }
        Ok(ModeSet { charges })
    }

    /// The first-n-adjacent set {1, …, n}.
    pub fn first_n(n: usize) -> Result<Self> {
        Self::new((1..=n as i32).collect())
    }

    pub fn charges(&self) -> &[i32] {
        &self.charges
    }

    pub fn len(&self) -> usize {
        self.charges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charges.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Message {
    value: u64,
    n_bits: u32,
}

impl Message {
    pub fn new(value: u64, n_bits: u32) -> Result<Self> {
        if n_bits == 0 || n_bits > 32 {
            return Err(Error::invalid(format!("n_bits {n_bits} outside 1..=32")));
        }
        if value >= 1u64 << n_bits {
            return Err(Error::invalid(format!(
                "message {value} does not fit in {n_bits} bits"
            )));
        }
        Ok(Message { value, n_bits })
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn n_bits(&self) -> u32 {
        self.n_bits
    }

    /// Number of distinct messages, M = 2^n.
    pub fn class_count(n_bits: u32) -> usize {
        1usize << n_bits
    }

    /// Indices (0-based, least-significant first) of the set bits.
    pub fn active_bits(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_bits as usize).filter(move |k| self.value >> k & 1 == 1)
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:0width$b}", self.value, width = self.n_bits as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    pub grid: GridSpec,
    /// Row-major, `side × side`.
    pub amplitudes: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: GridSpec) -> Self {
        ComplexField {
            grid,
            amplitudes: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_amplitudes(grid: GridSpec, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != grid.len() {
            return Err(Error::Shape {
                expected: vec![grid.side, grid.side],
                actual: vec![amplitudes.len()],
            });
        }
        if amplitudes.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::invalid("field contains non-finite amplitudes"));
        }
        Ok(ComplexField { grid, amplitudes })
    }

    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.amplitudes[row * self.grid.side + col]
    }

    /// `Σ |a|² Δx²`.
    pub fn power(&self) -> f64 {
        let dx = self.grid.dx();
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * dx * dx
    }

    /// Scale to unit power; a zero field is returned unchanged.
    pub fn normalized(mut self) -> Self {
        let p = self.power();
        if p > 0.0 {
            let s = 1.0 / p.sqrt();
            for a in &mut self.amplitudes {
                *a *= s;
            }
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub grid: GridSpec,
    /// Row-major, `side × side`.
    pub values: Vec<f64>,
}

impl Image {
    pub fn zeros(grid: GridSpec) -> Self {
        Image {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape {
                expected: vec![grid.side, grid.side],
                actual: vec![values.len()],
            });
        }
        Ok(Image { grid, values })
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid.side + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Waist-plane LG mode with radial index 0 and azimuthal index `charge`.
pub fn lg_field(charge: i32, grid: GridSpec) -> ComplexField {
    let n = grid.side;
    let order = charge.unsigned_abs() as i32;
    let mut amplitudes = Vec::with_capacity(grid.len());
    for row in 0..n {
        let y = grid.coord(row);
        for col in 0..n {
            let x = grid.coord(col);
            let r2 = x * x + y * y;
            let mag = (2.0 * r2).sqrt().powi(order) * (-r2).exp();
            let phi = y.atan2(x);
            amplitudes.push(Complex64::from_polar(mag, charge as f64 * phi));
        }
    }
    ComplexField { grid, amplitudes }.normalized()
}

/// Equal-amplitude superposition of the modes whose bits are set.
pub fn encode(message: Message, modes: &ModeSet, grid: GridSpec) -> Result<ComplexField> {
    if message.n_bits() as usize != modes.len() {
        return Err(Error::BitCountMismatch {
            message_bits: message.n_bits(),
            modes: modes.len(),
        });
    }
    let mut field = ComplexField::zeros(grid);
    for k in message.active_bits() {
        let mode = lg_field(modes.charges()[k], grid);
        for (a, m) in field.amplitudes.iter_mut().zip(&mode.amplitudes) {
            *a += m;
        }
    }
    Ok(field.normalized())
}

pub fn intensity(field: &ComplexField) -> Image {
    Image {
        grid: field.grid,
        values: field.amplitudes.iter().map(|a| a.norm_sqr()).collect(),
    }
}

/// Pixelwise argument in [-π, π); pixels below 1e-12 of the peak magnitude
/// read as 0.
pub fn phase(field: &ComplexField) -> Image {
    let peak = field
        .amplitudes
        .iter()
        .map(|a| a.norm())
        .fold(0.0, f64::max);
    let floor = 1e-12 * peak;
    let values = field
        .amplitudes
        .iter()
        .map(|a| {
            if a.norm() < floor || peak == 0.0 {
                0.0
            } else {
                let p = a.im.atan2(a.re);
                if p >= PI {
                    -PI
                } else {
                    p
                }
            }
        })
        .collect();
    Image {
        grid: field.grid,
        values,
    }
}

/// `Σ conj(a) · b · Δx²`.
pub fn inner_product(a: &ComplexField, b: &ComplexField) -> Result<Complex64> {
    a.grid.ensure_same(&b.grid)?;
    let dx = a.grid.dx();
    let s: Complex64 = a
        .amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(x, y)| x.conj() * y)
        .sum();
    Ok(s * dx * dx)
}

/// Bilinear interpolation at physical coordinates (x, y).
fn sample_bilinear(field: &ComplexField, x: f64, y: f64) -> Complex64 {
    let g = field.grid;
    let fx = (x + g.extent) / g.dx() - 0.5;
    let fy = (y + g.extent) / g.dx() - 0.5;
    let c0 = fx.floor();
    let r0 = fy.floor();
    let tx = fx - c0;
    let ty = fy - r0;
    let (c0, r0) = (c0 as usize, r0 as usize);
    let a = field.at(r0, c0);
    let b = field.at(r0, c0 + 1);
    let c = field.at(r0 + 1, c0);
    let d = field.at(r0 + 1, c0 + 1);
    a * ((1.0 - tx) * (1.0 - ty)) + b * (tx * (1.0 - ty)) + c * ((1.0 - tx) * ty) + d * (tx * ty)
}

/// Net number of 2π phase turns along the centred circle of `radius`.
pub fn phase_winding(field: &ComplexField, radius: f64) -> Result<i64> {
    let g = field.grid;
    // Bilinear sampling needs one full pixel of margin around the circle.
    let limit = g.extent - g.dx();
    if !(radius > 0.0) || radius > limit {
        return Err(Error::invalid(format!(
            "winding radius {radius} must lie in (0, {limit}] for grid {g}"
        )));
    }
    let steps = ((TAU * radius / g.dx()) * 8.0).ceil().max(256.0) as usize;
    let mut total = 0.0;
    let mut prev = sample_bilinear(field, radius, 0.0).arg();
    for k in 1..=steps {
        let t = TAU * k as f64 / steps as f64;
        let cur = sample_bilinear(field, radius * t.cos(), radius * t.sin()).arg();
        let mut d = cur - prev;
        if d > PI {
            d -= TAU;
        } else if d < -PI {
            d += TAU;
        }
        total += d;
        prev = cur;
    }
    Ok((total / TAU).round() as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(side: usize, extent: f64) -> GridSpec {
        GridSpec::new(side, extent).unwrap()
    }

    #[test]
    fn fundamental_mode_peaks_at_centre() {
        let g = grid(64, 3.0);
        let f = lg_field(0, g);
        let img = intensity(&f);
        let peak = img.max();
        // Even side: four centre pixels share the maximum.
        assert_eq!(img.at(32, 32), peak);
        assert!(f.amplitudes.iter().all(|a| a.re > 0.0 && a.im.abs() < 1e-12));
        assert_eq!(phase_winding(&f, 1.0).unwrap(), 0);
    }

    #[test]
    fn charge_two_has_central_null() {
        let g = grid(128, 3.0);
        let f = lg_field(2, g);
        let peak = f.amplitudes.iter().map(|a| a.norm()).fold(0.0, f64::max);
        let centre = sample_bilinear(&f, 0.0, 0.0).norm();
        assert!(centre < 1e-6 * peak, "{centre} vs {peak}");
        assert_eq!(phase_winding(&f, 1.0).unwrap(), 2);
    }

    #[test]
    fn bit_convention_matches_active_brackets() {
        let g = grid(64, 3.0);
        let modes = ModeSet::first_n(4).unwrap();
        let msg = Message::new(0b0101, 4).unwrap();
        assert_eq!(msg.to_string(), "0101");
        let bits: Vec<_> = msg.active_bits().map(|k| modes.charges()[k]).collect();
        assert_eq!(bits, vec![1, 3]);

        let enc = encode(msg, &modes, g).unwrap();
        let mut manual = ComplexField::zeros(g);
        for c in [1, 3] {
            for (a, m) in manual.amplitudes.iter_mut().zip(&lg_field(c, g).amplitudes) {
                *a += m;
            }
        }
        let manual = manual.normalized();
        for (a, b) in enc.amplitudes.iter().zip(&manual.amplitudes) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn empty_message_is_zero_field() {
        let g = grid(32, 3.0);
        let modes = ModeSet::first_n(3).unwrap();
        let f = encode(Message::new(0, 3).unwrap(), &modes, g).unwrap();
        assert!(f.amplitudes.iter().all(|a| a.norm() == 0.0));
        assert!(intensity(&f).values.iter().all(|&v| v == 0.0));
        assert!(phase(&f).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_bit_is_the_bare_mode() {
        let g = grid(64, 3.0);
        let modes = ModeSet::first_n(4).unwrap();
        let f = encode(Message::new(1, 4).unwrap(), &modes, g).unwrap();
        let bare = lg_field(1, g);
        for (a, b) in f.amplitudes.iter().zip(&bare.amplitudes) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn encode_rejects_length_mismatch() {
        let modes = ModeSet::first_n(4).unwrap();
        let err = encode(Message::new(1, 3).unwrap(), &modes, GridSpec::default());
        assert!(matches!(err, Err(Error::BitCountMismatch { .. })));
    }

    #[test]
    fn intensity_is_modulus_squared() {
        let g = grid(8, 1.0);
        let mut f = ComplexField::zeros(g);
        f.amplitudes[5] = Complex64::new(3.0, 4.0);
        let img = intensity(&f);
        assert_eq!(img.values[5], 25.0);
        assert_eq!(img.values.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn ring_radius_of_charge_one() {
        // |u_1|² ∝ 2r² e^{-2r²} peaks at r = 1/√2; check along the x axis.
        let g = grid(256, 3.0);
        let img = intensity(&lg_field(1, g));
        let row = g.side / 2;
        let best = (g.side / 2..g.side)
            .max_by(|&a, &b| img.at(row, a).total_cmp(&img.at(row, b)))
            .unwrap();
        let y = g.coord(row);
        let r = (g.coord(best).powi(2) + y * y).sqrt();
        assert!((r - 0.5f64.sqrt()).abs() < g.dx(), "ring at {r}");
        // Analytic profile ratio at two radii.
        let analytic = |r: f64| 2.0 * r * r * (-2.0 * r * r).exp();
        let (a, b) = (best, best + 20);
        let ra = (g.coord(a).powi(2) + y * y).sqrt();
        let rb = (g.coord(b).powi(2) + y * y).sqrt();
        let ratio = img.at(row, b) / img.at(row, a);
        assert!((ratio - analytic(rb) / analytic(ra)).abs() < 1e-10);
        // Near-null at the pixel next to the centre, r = dx/√2.
        assert!(img.at(row, row) < 3e-3 * img.at(row, best));
    }

    #[test]
    fn global_phase_shifts_every_pixel() {
        let g = grid(64, 3.0);
        let f = encode(Message::new(0b110, 3).unwrap(), &ModeSet::first_n(3).unwrap(), g).unwrap();
        let rot = Complex64::from_polar(1.0, PI / 3.0);
        let g2 = ComplexField {
            grid: g,
            amplitudes: f.amplitudes.iter().map(|a| a * rot).collect(),
        };
        let p1 = phase(&f);
        let p2 = phase(&g2);
        for (a, b) in p1.values.iter().zip(&p2.values) {
            if *a == 0.0 && *b == 0.0 {
                continue;
            }
            let d = (b - a - PI / 3.0).rem_euclid(TAU);
            assert!(d < 1e-9 || TAU - d < 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn real_positive_field_has_zero_phase() {
        let f = lg_field(0, grid(32, 3.0));
        assert!(phase(&f).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phase_range_is_half_open() {
        let g = grid(8, 1.0);
        let mut f = ComplexField::zeros(g);
        for a in &mut f.amplitudes {
            *a = Complex64::new(-1.0, 0.0);
        }
        assert!(phase(&f).values.iter().all(|&v| v == -PI));
    }

    #[test]
    fn winding_of_charge_three() {
        let f = lg_field(3, grid(128, 3.0));
        assert_eq!(phase_winding(&f, 1.0).unwrap(), 3);
    }

    #[test]
    fn winding_of_two_mode_superposition() {
        // Regression: at r = 2 the charge-2 term dominates.
        let g = grid(128, 3.0);
        let f = encode(Message::new(0b11, 2).unwrap(), &ModeSet::first_n(2).unwrap(), g).unwrap();
        assert_eq!(phase_winding(&f, 2.0).unwrap(), 2);
    }

    #[test]
    fn winding_rejects_circle_outside_grid() {
        let f = lg_field(1, grid(64, 3.0));
        assert!(phase_winding(&f, 2.99).is_err());
        assert!(phase_winding(&f, 0.0).is_err());
    }

    #[test]
    fn inner_product_properties() {
        let g = grid(256, 4.0);
        let a = lg_field(2, g);
        let b = lg_field(-2, g);
        let aa = inner_product(&a, &a).unwrap();
        assert!((aa - Complex64::new(1.0, 0.0)).norm() < 1e-10);
        assert!(inner_product(&a, &b).unwrap().norm() < 1e-3);
        let c = encode(Message::new(0b11, 2).unwrap(), &ModeSet::new(vec![2, 5]).unwrap(), g)
            .unwrap();
        let ac = inner_product(&a, &c).unwrap();
        let ca = inner_product(&c, &a).unwrap();
        assert!((ac - ca.conj()).norm() < 1e-14);
        assert!(inner_product(&a, &lg_field(1, grid(64, 4.0))).is_err());
    }

    #[test]
    fn distinct_charges_are_orthogonal() {
        let g = grid(256, 4.0);
        let v = inner_product(&lg_field(1, g), &lg_field(3, g)).unwrap();
        assert!(v.norm() < 1e-3, "{v}");
    }

    #[test]
    fn negative_charge_is_conjugate() {
        let g = grid(64, 3.0);
        for l in 1..=4 {
            let p = lg_field(l, g);
            let m = lg_field(-l, g);
            for (a, b) in p.amplitudes.iter().zip(&m.amplitudes) {
                assert!((a.conj() - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(7, 1.0).is_err());
        assert!(GridSpec::new(8, 0.0).is_err());
        let g = grid(8, 1.0);
        assert!((g.coord(0) + g.coord(7)).abs() < 1e-15);
    }

    #[test]
    fn mode_set_rejects_duplicates() {
        assert!(ModeSet::new(vec![1, 2, 1]).is_err());
        assert!(ModeSet::new(vec![]).is_err());
        assert!(Message::new(16, 4).is_err());
    }
}
