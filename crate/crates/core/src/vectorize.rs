//! Learnable Gaussian-kernel projection of persistence diagrams.
//!
//! Kernel `i` maps a diagram point `p = (b, d)` to
//!
//! ```text
//! G_i(p) = exp(−‖p − μ_i‖ / (2 σ_i²))     (literal)
//! G_i(p) = exp(−‖p − μ_i‖² / (2 σ_i²))    (squared)
//! ```
//!
//! and points with lifetime `d − b < ν` contribute nothing. The feature
//! vector is `v_i = Σ_j G_i(p_j)` over the points of the kernel's homology
//! dimension. Infinite deaths are replaced by the diagram's
//! `max_filtration` first.

use serde::{Deserialize, Serialize};

use crate::homology::{PersistenceDiagram, PersistencePoint};
use crate::{Error, Result};

/// Lower bound enforced on every σ after an update.
pub const SIGMA_MIN: f64 = 1e-3;
/// Default pruning threshold.
pub const DEFAULT_NU: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// Exponent uses the plain Euclidean distance.
    #[default]
    Literal,
    /// Exponent uses the squared distance (ordinary Gaussian).
    Squared,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernel {
    pub mu: [f64; 2],
    pub sigma: f64,
    pub dim: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelBank {
    pub kernels: Vec<Kernel>,
    pub nu: f64,
    pub norm_mode: NormMode,
}

impl KernelBank {
    pub fn new(kernels: Vec<Kernel>, nu: f64, norm_mode: NormMode) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::invalid("kernel bank needs at least one kernel"));
        }
        if !(nu >= 0.0) {
            return Err(Error::invalid(format!("nu {nu} must be >= 0")));
        }
        let mut bank = KernelBank {
            kernels,
            nu,
            norm_mode,
        };
        bank.clamp_sigmas();
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn clamp_sigmas(&mut self) {
        for k in &mut self.kernels {
            k.sigma = k.sigma.max(SIGMA_MIN);
        }
    }

    /// Trainable parameters in the order `(μ₁, μ₂, σ)` per kernel.
    pub fn param_count(&self) -> usize {
        3 * self.kernels.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// ∂loss/∂(μ, σ) for every kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct BankGradient {
    pub mu: Vec<[f64; 2]>,
    pub sigma: Vec<f64>,
}

impl BankGradient {
    pub fn zeros(n: usize) -> Self {
        BankGradient {
            mu: vec![[0.0; 2]; n],
            sigma: vec![0.0; n],
        }
    }

    pub fn add_assign(&mut self, other: &BankGradient) {
        for (a, b) in self.mu.iter_mut().zip(&other.mu) {
            a[0] += b[0];
            a[1] += b[1];
        }
        for (a, b) in self.sigma.iter_mut().zip(&other.sigma) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for m in &mut self.mu {
            m[0] *= s;
            m[1] *= s;
        }
        for g in &mut self.sigma {
            *g *= s;
        }
    }
}

/// Kernel response to one (already capped) point.
pub fn gauss(kernel: &Kernel, point: &PersistencePoint, nu: f64, mode: NormMode) -> f64 {
    if point.dim != kernel.dim || point.lifetime() < nu {
        return 0.0;
    }
    let dx = point.birth - kernel.mu[0];
    let dy = point.death - kernel.mu[1];
    let r2 = dx * dx + dy * dy;
    let r = match mode {
        NormMode::Literal => r2.sqrt(),
        NormMode::Squared => r2,
    };
    (-r / (2.0 * kernel.sigma * kernel.sigma)).exp()
}

/// Points surviving pruning, with infinite deaths capped.
fn surviving(diagram: &PersistenceDiagram, nu: f64) -> impl Iterator<Item = PersistencePoint> + '_ {
    let cap = diagram.max_filtration;
    diagram
        .points
        .iter()
        .map(move |p| {
            let death = if p.death.is_infinite() { cap } else { p.death };
            PersistencePoint::new(p.dim, p.birth, death)
        })
        .filter(move |p| p.lifetime() >= nu)
}

pub fn project(diagram: &PersistenceDiagram, bank: &KernelBank) -> FeatureVector {
    let mut v = vec![0.0; bank.len()];
    for p in surviving(diagram, bank.nu) {
        for (vi, k) in v.iter_mut().zip(&bank.kernels) {
            if k.dim == p.dim {
                *vi += gauss(k, &p, bank.nu, bank.norm_mode);
            }
        }
    }
    FeatureVector(v)
}

/// Gradients of `Σ_i upstream_i · v_i` with respect to every μ_i and σ_i.
///
/// In literal mode the gradient with respect to μ is taken as 0 when the
/// point sits exactly on the centre (the kernel has a cusp there).
pub fn project_backward(
    diagram: &PersistenceDiagram,
    bank: &KernelBank,
    upstream: &[f64],
) -> Result<BankGradient> {
    if upstream.len() != bank.len() {
        return Err(Error::Shape {
            expected: vec![bank.len()],
            actual: vec![upstream.len()],
        });
    }
    let mut grad = BankGradient::zeros(bank.len());
    for p in surviving(diagram, bank.nu) {
        for (i, k) in bank.kernels.iter().enumerate() {
            let up = upstream[i];
            if k.dim != p.dim || up == 0.0 {
                continue;
            }
            let dx = p.birth - k.mu[0];
            let dy = p.death - k.mu[1];
            let r2 = dx * dx + dy * dy;
            let s2 = k.sigma * k.sigma;
            match bank.norm_mode {
                NormMode::Literal => {
                    let r = r2.sqrt();
                    let g = (-r / (2.0 * s2)).exp();
                    if r > 0.0 {
                        let c = up * g / (2.0 * s2 * r);
                        grad.mu[i][0] += c * dx;
                        grad.mu[i][1] += c * dy;
                    }
                    grad.sigma[i] += up * g * r / (s2 * k.sigma);
                }
                NormMode::Squared => {
                    let g = (-r2 / (2.0 * s2)).exp();
                    let c = up * g / s2;
                    grad.mu[i][0] += c * dx;
                    grad.mu[i][1] += c * dy;
                    grad.sigma[i] += up * g * r2 / (s2 * k.sigma);
                }
            }
        }
    }
    Ok(grad)
}

/// Even split of `n` kernels over dimensions `0..=max_dim`, remainder to
/// the lower dimensions.
pub fn even_split(n: usize, max_dim: usize) -> Vec<usize> {
    let dims = max_dim + 1;
    (0..dims)
        .map(|d| n / dims + usize::from(d < n % dims))
        .collect()
}

/// Grid of `count` cells: columns = smallest divisor of `count` not below
/// ⌈√count⌉, rows = count / columns.
pub fn grid_shape(count: usize) -> (usize, usize) {
    let root = (count as f64).sqrt().ceil() as usize;
    let cols = (root.max(1)..=count).find(|c| count % c == 0).unwrap_or(1);
    (count / cols, cols)
}

/// Width giving a kernel response of `e^-1/2` one spacing `h` from its
/// centre.
fn initial_sigma(h: f64, mode: NormMode) -> f64 {
    match mode {
        NormMode::Literal => h.sqrt(),
        NormMode::Squared => h,
    }
}

/// Place `split[d]` kernels over the bounding box of the finite, surviving
/// dimension-`d` points of `samples` (the unit box when there are none).
///
/// Centres sit on the interior nodes `lo + (i+1)·w/(cols+1)` of a
/// `rows × cols` grid ([`grid_shape`]), birth along columns. When every
/// point shares one coordinate the kernels are spread along the other axis
/// instead, so all centres stay inside the box. σ follows from the smaller
/// grid spacing through [`initial_sigma`]; spread kernels take the spacing
/// a square grid of the same count would have, so they overlap.
pub fn init_bank(
    n: usize,
    split: &[usize],
    samples: &[PersistenceDiagram],
    nu: f64,
    norm_mode: NormMode,
) -> Result<KernelBank> {
    if n == 0 {
        return Err(Error::invalid("kernel count must be >= 1"));
    }
    if n < split.len() {
        return Err(Error::invalid(format!(
            "{n} kernels cannot cover {} homology dimensions",
            split.len()
        )));
    }
    if split.iter().sum::<usize>() != n {
        return Err(Error::invalid(format!("split {split:?} does not sum to {n}")));
    }
    if split.len() > 3 {
        return Err(Error::invalid("at most 3 homology dimensions"));
    }
    let mut kernels = Vec::with_capacity(n);
    for (dim, &count) in split.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for d in samples {
            for p in d.points.iter().filter(|p| {
                p.dim as usize == dim && p.death.is_finite() && p.lifetime() >= nu
            }) {
                lo = [lo[0].min(p.birth), lo[1].min(p.death)];
                hi = [hi[0].max(p.birth), hi[1].max(p.death)];
            }
        }
        if !lo[0].is_finite() {
            lo = [0.0, 0.0];
            hi = [1.0, 1.0];
        }
        let flat = [hi[0] - lo[0] < 1e-12, hi[1] - lo[1] < 1e-12];
        let mut push = |mu: [f64; 2], h: f64| {
            kernels.push(Kernel {
                mu,
                sigma: initial_sigma(h, norm_mode),
                dim: dim as u8,
            })
        };
        match flat {
            [false, false] => {
                let (rows, cols) = grid_shape(count);
                let sx = (hi[0] - lo[0]) / (cols + 1) as f64;
                let sy = (hi[1] - lo[1]) / (rows + 1) as f64;
                for i in 0..count {
                    let (r, c) = (i / cols, i % cols);
                    push(
                        [lo[0] + (c + 1) as f64 * sx, lo[1] + (r + 1) as f64 * sy],
                        sx.min(sy),
                    );
                }
            }
            [true, true] => {
                for _ in 0..count {
                    push(lo, 0.5);
                }
            }
            [true, false] | [false, true] => {
                let a = usize::from(flat[0]);
                let w = hi[a] - lo[a];
                let h = w / ((count as f64).sqrt().ceil() + 1.0);
                for i in 0..count {
                    let mut mu = lo;
                    mu[a] = lo[a] + (i + 1) as f64 * w / (count + 1) as f64;
                    push(mu, h);
                }
            }
        }
    }
    KernelBank::new(kernels, nu, norm_mode)
}
