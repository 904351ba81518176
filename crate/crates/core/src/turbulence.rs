//! Kolmogorov phase screens and the turbulent channel.
//!
//! Screens are synthesised spectrally on the pixel grid: every FFT cell gets
//! a circular complex Gaussian coefficient whose variance is the phase PSD
//!
//! ```text
//! Φ(f) = 0.023 r0^(-5/3) (f² + 1/L0²)^(-11/6)      (f in cycles per w0)
//! ```
//!
//! integrated over the cell, and the DC cell is refined by three levels of
//! 3×3 subharmonics. The outer scale is `L0 = 100·D`, far enough out that
//! the structure function follows `6.88 (r/r0)^(5/3)` across the aperture.
//! The turbulence level is `T = D / r0` with `D` the aperture width.

use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::io::{self, Reader, Writer};
use crate::optics::{ComplexField, GridSpec, Image};
use crate::rng;
use crate::{Error, Result};

/// Outer scale in units of the aperture width.
pub const OUTER_SCALE_FACTOR: f64 = 100.0;
/// Subharmonic refinement levels around DC.
pub const SUBHARMONIC_LEVELS: usize = 3;
/// Sub-samples per axis when integrating the PSD over a spectral cell.
const CELL_SUBSAMPLES: usize = 8;
/// XOR tag separating the detector-noise stream from the screen stream.
pub const NOISE_STREAM_TAG: u64 = 0x6e6f_6973_655f_7631;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurbulenceSpec {
    /// T = D / r0.
    pub level: f64,
    pub grid: GridSpec,
    /// Aperture width D in units of w0; `None` means the full window.
    pub aperture: Option<f64>,
    /// Free-space propagation after the screen, in Rayleigh ranges (0 = none).
    pub propagation: f64,
    pub seed: u64,
}

impl TurbulenceSpec {
    pub fn new(level: f64, grid: GridSpec, seed: u64) -> Self {
        TurbulenceSpec {
            level,
            grid,
            aperture: None,
            propagation: 0.0,
            seed,
        }
    }

    pub fn aperture_width(&self) -> f64 {
        self.aperture.unwrap_or(2.0 * self.grid.extent)
    }

    /// Fried parameter r0 = D / T (infinite when T = 0).
    pub fn fried_parameter(&self) -> f64 {
        self.aperture_width() / self.level
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.level >= 0.0 && self.level.is_finite()) {
            return Err(Error::invalid(format!("turbulence level {} must be >= 0", self.level)));
        }
        if let Some(d) = self.aperture {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::invalid(format!("aperture {d} must be > 0")));
            }
        }
        if !(self.propagation >= 0.0 && self.propagation.is_finite()) {
            return Err(Error::invalid(format!(
                "propagation {} must be >= 0",
                self.propagation
            )));
        }
        Ok(())
    }
}

/// Unnormalised 2-D FFT on a square row-major buffer.
pub(crate) struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub(crate) fn run(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.inverse } else { &self.forward };
        plan.process(data);
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..n {
            for r in 0..n {
                col[r] = data[r * n + c];
            }
            plan.process(&mut col);
            for r in 0..n {
                data[r * n + c] = col[r];
            }
        }
    }
}

fn fft_freq(k: usize, n: usize, df: f64) -> f64 {
    if k < n.div_ceil(2) {
        k as f64 * df
    } else {
        (k as f64 - n as f64) * df
    }
}

/// Unit-r0 PSD averaged over the square cell of width `width` centred at (fx, fy).
fn cell_psd(fx: f64, fy: f64, width: f64, f0_sq: f64) -> f64 {
    let s = CELL_SUBSAMPLES;
    let mut acc = 0.0;
    for i in 0..s {
        let ox = ((i as f64 + 0.5) / s as f64 - 0.5) * width;
        for j in 0..s {
            let oy = ((j as f64 + 0.5) / s as f64 - 0.5) * width;
            let f2 = (fx + ox).powi(2) + (fy + oy).powi(2);
            acc += 0.023 * (f2 + f0_sq).powf(-11.0 / 6.0);
        }
    }
    acc / (s * s) as f64
}

struct Subharmonic {
    fx: f64,
    fy: f64,
    weight: f64,
}

/// Precomputed spectral weights for one grid/aperture; reusable across seeds.
pub struct ScreenGenerator {
    grid: GridSpec,
    aperture: f64,
    weights: Vec<f64>,
    subharmonics: Vec<Subharmonic>,
    fft: Fft2,
}

impl ScreenGenerator {
    pub fn new(grid: GridSpec, aperture: f64) -> Self {
        let n = grid.side;
        let dx = grid.dx();
        let df = 1.0 / (n as f64 * dx);
        let outer = OUTER_SCALE_FACTOR * aperture;
        let f0_sq = 1.0 / (outer * outer);
        let mut weights = Vec::with_capacity(n * n);
        for r in 0..n {
            let fy = fft_freq(r, n, df);
            for c in 0..n {
                let fx = fft_freq(c, n, df);
                let w = if r == 0 && c == 0 {
                    0.0
                } else {
                    cell_psd(fx, fy, df, f0_sq).sqrt() * df
                };
                weights.push(w);
            }
        }
        let mut subharmonics = Vec::with_capacity(8 * SUBHARMONIC_LEVELS);
        for p in 1..=SUBHARMONIC_LEVELS {
            let dfp = df / 3f64.powi(p as i32);
            for a in -1i32..=1 {
                for b in -1i32..=1 {
                    if a == 0 && b == 0 {
                        continue;
                    }
                    let fx = a as f64 * dfp;
                    let fy = b as f64 * dfp;
                    subharmonics.push(Subharmonic {
                        fx,
                        fy,
                        weight: cell_psd(fx, fy, dfp, f0_sq).sqrt() * dfp,
                    });
                }
            }
        }
        ScreenGenerator {
            grid,
            aperture,
            weights,
            subharmonics,
            fft: Fft2::new(n),
        }
    }

    pub fn for_spec(spec: &TurbulenceSpec) -> Self {
        Self::new(spec.grid, spec.aperture_width())
    }

    /// Phase screen for turbulence level `level` drawn from `seed`.
    pub fn generate(&self, level: f64, seed: u64) -> Image {
        let g = self.grid;
        let n = g.side;
        if level == 0.0 {
            return Image::zeros(g);
        }
        let r0 = self.aperture / level;
        let scale = r0.powf(-5.0 / 6.0);
        let mut rng = rng::stream(seed);

        let mut spec: Vec<Complex64> = self
            .weights
            .iter()
            .map(|&w| {
                let (a, b) = rng::normal_pair(&mut rng);
                Complex64::new(a, b) * (w * scale)
            })
            .collect();
        self.fft.run(&mut spec, true);
        let mut values: Vec<f64> = spec.iter().map(|c| c.re).collect();

        let coords: Vec<f64> = (0..n).map(|i| g.coord(i)).collect();
        let mut ex = vec![Complex64::new(0.0, 0.0); n];
        let mut ey = vec![Complex64::new(0.0, 0.0); n];
        for sh in &self.subharmonics {
            let (a, b) = rng::normal_pair(&mut rng);
            let c = Complex64::new(a, b) * (sh.weight * scale);
            for i in 0..n {
                ex[i] = Complex64::from_polar(1.0, TAU * sh.fx * coords[i]);
                ey[i] = Complex64::from_polar(1.0, TAU * sh.fy * coords[i]);
            }
            for r in 0..n {
                let cy = c * ey[r];
                for col in 0..n {
                    values[r * n + col] += (cy * ex[col]).re;
                }
            }
        }

        let mean = values.iter().sum::<f64>() / values.len() as f64;
        for v in &mut values {
            *v -= mean;
        }
        Image { grid: g, values }
    }
}

/// Kolmogorov phase screen described by `spec`.
pub fn phase_screen(spec: &TurbulenceSpec) -> Result<Image> {
    spec.validate()?;
    if spec.level == 0.0 {
        return Ok(Image::zeros(spec.grid));
    }
    Ok(ScreenGenerator::for_spec(spec).generate(spec.level, spec.seed))
}

/// Multiply the field by `exp(i φ)`.
pub fn apply(field: &ComplexField, screen: &Image) -> Result<ComplexField> {
    field.grid.ensure_same(&screen.grid)?;
    let amplitudes = field
        .amplitudes
        .iter()
        .zip(&screen.values)
        .map(|(a, &p)| a * Complex64::from_polar(1.0, p))
        .collect();
    Ok(ComplexField {
        grid: field.grid,
        amplitudes,
    })
}

/// Paraxial angular-spectrum propagation over `distance` Rayleigh ranges.
///
/// With w0 = 1 the transfer function is `exp(-i π² ζ (fx² + fy²))`. The field
/// is zero-padded to twice the window to suppress wrap-around.
pub fn propagate(field: &ComplexField, distance: f64) -> ComplexField {
    if distance == 0.0 {
        return field.clone();
    }
    let g = field.grid;
    let n = g.side;
    let m = 2 * n;
    let off = n / 2;
    let mut buf = vec![Complex64::new(0.0, 0.0); m * m];
    for r in 0..n {
        buf[(r + off) * m + off..(r + off) * m + off + n]
            .copy_from_slice(&field.amplitudes[r * n..(r + 1) * n]);
    }
    let fft = Fft2::new(m);
    fft.run(&mut buf, false);
    let df = 1.0 / (m as f64 * g.dx());
    let k = -PI * PI * distance;
    for r in 0..m {
        let fy = fft_freq(r, m, df);
        for c in 0..m {
            let fx = fft_freq(c, m, df);
            buf[r * m + c] *= Complex64::from_polar(1.0 / (m * m) as f64, k * (fx * fx + fy * fy));
        }
    }
    fft.run(&mut buf, true);
    let mut amplitudes = Vec::with_capacity(n * n);
    for r in 0..n {
        amplitudes.extend_from_slice(&buf[(r + off) * m + off..(r + off) * m + off + n]);
    }
    ComplexField {
        grid: g,
        amplitudes,
    }
}

/// Screen, optional propagation, then circular complex Gaussian detector
/// noise with `E|n|² = noise_sigma²` per pixel.
pub fn channel(field: &ComplexField, spec: &TurbulenceSpec, noise_sigma: f64) -> Result<ComplexField> {
    let screen = phase_screen(spec)?;
    channel_with_screen(field, spec, &screen, noise_sigma)
}

/// [`channel`] with a precomputed screen (lets callers reuse a
/// [`ScreenGenerator`]).
pub fn channel_with_screen(
    field: &ComplexField,
    spec: &TurbulenceSpec,
    screen: &Image,
    noise_sigma: f64,
) -> Result<ComplexField> {
    spec.validate()?;
    field.grid.ensure_same(&spec.grid)?;
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid(format!("noise_sigma {noise_sigma} must be >= 0")));
    }
    let mut out = apply(field, screen)?;
    if spec.propagation > 0.0 {
        out = propagate(&out, spec.propagation);
    }
    if noise_sigma > 0.0 {
        let mut rng = rng::stream(spec.seed ^ NOISE_STREAM_TAG);
        let s = noise_sigma / 2f64.sqrt();
        for a in &mut out.amplitudes {
            let (x, y) = rng::normal_pair(&mut rng);
            *a += Complex64::new(x * s, y * s);
        }
    }
    Ok(out)
}

/// Serialise a screen as `"PHSC" | u16 side | u16 0 | f32[side²]`, little-endian.
pub fn encode_screen(screen: &Image) -> Result<Vec<u8>> {
    let side = u16::try_from(screen.grid.side)
        .map_err(|_| Error::invalid("screen side exceeds u16"))?;
    let mut w = Writer::new();
    w.bytes(b"PHSC");
    w.u16(side);
    w.u16(0);
    for &v in &screen.values {
        w.f32(v as f32);
    }
    Ok(w.buf)
}

/// Inverse of [`encode_screen`]; the returned grid carries `extent`.
pub fn decode_screen(bytes: &[u8], extent: f64) -> Result<Image> {
    let mut r = Reader::new(bytes, "phase screen");
    r.magic(b"PHSC")?;
    let side = r.u16()? as usize;
    let _reserved = r.u16()?;
    let grid = GridSpec::new(side, extent)?;
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        values.push(r.f32()? as f64);
    }
    r.finish()?;
    Image::from_values(grid, values)
}

pub fn write_screen(path: &Path, screen: &Image) -> Result<()> {
    io::write_atomic(path, &encode_screen(screen)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{encode, intensity, lg_field, Message, ModeSet};

    fn grid(side: usize) -> GridSpec {
        GridSpec::new(side, 3.0).unwrap()
    }

    #[test]
    fn zero_level_gives_zero_screen() {
        let s = phase_screen(&TurbulenceSpec::new(0.0, grid(64), 99)).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn screens_are_deterministic_and_piston_free() {
        let spec = TurbulenceSpec::new(7.0, grid(64), 1234);
        let a = phase_screen(&spec).unwrap();
        let b = phase_screen(&spec).unwrap();
        assert_eq!(a, b);
        let mean = a.values.iter().sum::<f64>() / a.values.len() as f64;
        assert!(mean.abs() < 1e-10);
        let c = phase_screen(&TurbulenceSpec { seed: 1235, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn screen_amplitude_scales_with_level() {
        // Same seed: φ_T = (T/T')^(5/6) φ_T'.
        let a = phase_screen(&TurbulenceSpec::new(2.0, grid(32), 5)).unwrap();
        let b = phase_screen(&TurbulenceSpec::new(4.0, grid(32), 5)).unwrap();
        let k = 2f64.powf(5.0 / 6.0);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x * k - y).abs() < 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn apply_is_pure_phase() {
        let g = grid(64);
        let f = encode(Message::new(0b101, 3).unwrap(), &ModeSet::first_n(3).unwrap(), g).unwrap();
        assert_eq!(apply(&f, &Image::zeros(g)).unwrap(), f);

        let s = phase_screen(&TurbulenceSpec::new(12.0, g, 8)).unwrap();
        let out = apply(&f, &s).unwrap();
        for (a, b) in intensity(&f).values.iter().zip(&intensity(&out).values) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((out.power() - f.power()).abs() < 1e-10);

        let pi = Image::from_values(g, vec![PI; g.len()]).unwrap();
        let neg = apply(&f, &pi).unwrap();
        for (a, b) in f.amplitudes.iter().zip(&neg.amplitudes) {
            assert!((a + b).norm() < 1e-15);
        }
        assert!(apply(&f, &Image::zeros(grid(32))).is_err());
    }

    #[test]
    fn channel_identity_and_composition() {
        let g = grid(64);
        let f = lg_field(2, g);
        let spec0 = TurbulenceSpec::new(0.0, g, 3);
        assert_eq!(channel(&f, &spec0, 0.0).unwrap(), f);

        let spec = TurbulenceSpec::new(5.0, g, 3);
        let direct = apply(&f, &phase_screen(&spec).unwrap()).unwrap();
        assert_eq!(channel(&f, &spec, 0.0).unwrap(), direct);
        assert!(channel(&f, &spec, -1.0).is_err());
    }

    #[test]
    fn channel_regression_hash() {
        let g = grid(64);
        let f = encode(Message::new(0b1011, 4).unwrap(), &ModeSet::first_n(4).unwrap(), g).unwrap();
        let out = channel(&f, &TurbulenceSpec::new(5.0, g, 2024), 0.01).unwrap();
        let mut w = Writer::new();
        for a in &out.amplitudes {
            w.f64(a.re);
            w.f64(a.im);
        }
        assert_eq!(
            io::sha256_hex(&w.buf),
            "a38a9198503f36b42dd3423fd391d419f42ec00b9368b0ba60c8cd7703318bd4"
        );
    }

    #[test]
    fn propagation_conserves_power_and_spreads_gaussian() {
        let g = GridSpec::new(64, 4.0).unwrap();
        let f = lg_field(0, g);
        let out = propagate(&f, 1.0);
        assert!((out.power() - 1.0).abs() < 1e-6);
        // Waist grows by √(1+ζ²): peak intensity halves at one Rayleigh range.
        let p0 = intensity(&f).max();
        let p1 = intensity(&out).max();
        assert!((p1 / p0 - 0.5).abs() < 0.02, "{}", p1 / p0);
    }

    #[test]
    fn screen_file_roundtrip() {
        let s = phase_screen(&TurbulenceSpec::new(3.0, grid(16), 4)).unwrap();
        let bytes = encode_screen(&s).unwrap();
        assert_eq!(&bytes[..4], b"PHSC");
        assert_eq!(bytes.len(), 8 + 4 * 256);
        let back = decode_screen(&bytes, 3.0).unwrap();
        for (a, b) in s.values.iter().zip(&back.values) {
            assert_eq!(*a as f32 as f64, *b);
        }
        assert!(decode_screen(&bytes[..20], 3.0).is_err());
    }
}
