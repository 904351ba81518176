//! Persistence diagrams of received beams.
//!
//! Two realisations are provided:
//!
//! * [`rips_persistence`]: Vietoris-Rips filtration of a point cloud lifted
//!   from the intensity surface ([`image_to_cloud`]); dimensions 0-2.
//!   Filtration value of a simplex is its diameter.
//! * [`cubical_persistence`]: sublevel filtration of `−I` on the
//!   vertex-based cubical complex of the image; dimensions 0-1.
//!
//! [`oracle::oracle_persistence`] is an unoptimised reference reduction
//! used to check both.

mod cloud;
mod cubical;
pub mod oracle;
mod rips;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::io::{Reader, Writer};
use crate::{Error, Result};

pub use cloud::image_to_cloud;
pub use cubical::cubical_persistence;
pub use rips::rips_persistence;

/// Upper bound on cloud size for Rips computations.
pub const MAX_RIPS_POINTS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FiltrationMode {
    Rips,
    Cubical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PersistencePoint {
    pub dim: u8,
    pub birth: f64,
    /// `f64::INFINITY` for essential H0 classes.
    pub death: f64,
}

impl PersistencePoint {
    pub fn new(dim: u8, birth: f64, death: f64) -> Self {
        PersistencePoint { dim, birth, death }
    }

    pub fn lifetime(&self) -> f64 {
        self.death - self.birth
    }

    pub fn is_essential(&self) -> bool {
        self.death.is_infinite()
    }

    fn cmp_total(&self, other: &Self) -> Ordering {
        self.dim
            .cmp(&other.dim)
            .then(self.birth.total_cmp(&other.birth))
            .then(self.death.total_cmp(&other.death))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersistenceDiagram {
    pub points: Vec<PersistencePoint>,
    /// Cap substituted for infinite deaths downstream; every finite death is
    /// at most this value.
    pub max_filtration: f64,
    pub source: FiltrationMode,
}

impl PersistenceDiagram {
    pub fn empty(max_filtration: f64, source: FiltrationMode) -> Self {
        PersistenceDiagram {
            points: Vec::new(),
            max_filtration,
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn in_dim(&self, dim: u8) -> impl Iterator<Item = &PersistencePoint> {
        self.points.iter().filter(move |p| p.dim == dim)
    }

    /// Points sorted by (dim, birth, death); a canonical multiset form.
    pub fn sorted_points(&self) -> Vec<PersistencePoint> {
        let mut v = self.points.clone();
        v.sort_by(PersistencePoint::cmp_total);
        v
    }

    /// Multiset equality of (dim, birth, death), bit-exact.
    pub fn same_points(&self, other: &Self) -> bool {
        let a = self.sorted_points();
        let b = other.sorted_points();
        a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| x.cmp_total(y) == Ordering::Equal)
    }

    pub(crate) fn push_pair(&mut self, dim: u8, birth: f64, death: f64) {
        if death > birth {
            self.points.push(PersistencePoint { dim, birth, death });
        }
    }

    /// Essential class: H0 keeps an infinite death, higher dimensions are
    /// truncated at `max_filtration`.
    pub(crate) fn push_essential(&mut self, dim: u8, birth: f64) {
        if dim == 0 {
            self.points.push(PersistencePoint::new(0, birth, f64::INFINITY));
        } else {
            let cap = self.max_filtration;
            self.push_pair(dim, birth, cap);
        }
    }
}

/// Filtration knobs shared by the CLI and the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiltrationParams {
    pub mode: FiltrationMode,
    pub max_dim: usize,
    pub max_radius: f64,
    /// Intensity threshold as a fraction of the peak.
    pub tau: f64,
    pub max_points: usize,
    /// Height scale of the lifted intensity coordinate.
    pub alpha: f64,
}

impl Default for FiltrationParams {
    fn default() -> Self {
        FiltrationParams {
            mode: FiltrationMode::Rips,
            max_dim: 2,
            max_radius: 1.5,
            tau: 0.2,
            max_points: 192,
            alpha: 0.5,
        }
    }
}

impl FiltrationParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_dim > 2 {
            return Err(Error::invalid(format!("max_dim {} > 2", self.max_dim)));
        }
        if self.mode == FiltrationMode::Cubical && self.max_dim > 1 {
            return Err(Error::invalid("cubical filtration supports max_dim <= 1"));
        }
        if !(self.max_radius > 0.0) {
            return Err(Error::invalid(format!("max_radius {} must be > 0", self.max_radius)));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("tau {} outside [0, 1)", self.tau)));
        }
        if self.max_points < 4 {
            return Err(Error::invalid(format!("max_points {} < 4", self.max_points)));
        }
        if self.mode == FiltrationMode::Rips && self.max_points > MAX_RIPS_POINTS {
            return Err(Error::invalid(format!(
                "rips max_points {} exceeds {MAX_RIPS_POINTS}",
                self.max_points
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::invalid(format!("alpha {} must be > 0", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud3 {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud3 {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("point cloud has non-finite coordinates"));
        }
        Ok(PointCloud3 { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub(crate) fn euclid(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Diagram for one intensity image under `params`.
///
/// Cubical mode filters `−I` in absolute units: with unit beam power a wider
/// pattern has a lower peak, so the diagram keeps the beam's scale. A dark
/// frame gives an empty diagram.
pub fn diagram_for_intensity(
    img: &crate::optics::Image,
    params: &FiltrationParams,
) -> Result<PersistenceDiagram> {
    params.validate()?;
    match params.mode {
        FiltrationMode::Rips => {
            let cloud = image_to_cloud(img, params)?;
            if cloud.is_empty() {
                return Ok(PersistenceDiagram::empty(params.max_radius, FiltrationMode::Rips));
            }
            rips_persistence(&cloud, params.max_dim, params.max_radius)
        }
        FiltrationMode::Cubical => {
            if !(img.max() > 0.0) {
                return Ok(PersistenceDiagram::empty(0.0, FiltrationMode::Cubical));
            }
            cubical_persistence(img, params.max_dim)
        }
    }
}

const CACHE_MAGIC: &[u8; 4] = b"OAMP";
pub const CACHE_VERSION: u32 = 1;

/// Serialise diagrams as the `OAMP` cache format.
///
/// Layout (little-endian): magic, u32 version, u32 sample_count, then per
/// sample u32 point_count and `(u8 dim, f32 birth, f32 death)` triples with
/// infinite deaths stored as f32 infinity.
pub fn encode_diagrams(diagrams: &[PersistenceDiagram]) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(CACHE_MAGIC);
    w.u32(CACHE_VERSION);
    w.u32(diagrams.len() as u32);
    for d in diagrams {
        w.u32(d.points.len() as u32);
        for p in &d.points {
            w.u8(p.dim);
            w.f32(p.birth as f32);
            w.f32(p.death as f32);
        }
    }
    w.buf
}

/// Inverse of [`encode_diagrams`]. The format carries no `max_filtration`
/// or source, so both are supplied by the caller.
pub fn decode_diagrams(
    bytes: &[u8],
    max_filtration: f64,
    source: FiltrationMode,
) -> Result<Vec<PersistenceDiagram>> {
    let mut r = Reader::new(bytes, "diagram cache");
    r.magic(CACHE_MAGIC)?;
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::format("diagram cache", format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let dim = r.u8()?;
            if dim > 2 {
                return Err(Error::format("diagram cache", format!("dimension {dim} > 2")));
            }
            let birth = r.f32()? as f64;
            let death = r.f32()? as f64;
            points.push(PersistencePoint { dim, birth, death });
        }
        out.push(PersistenceDiagram {
            points,
            max_filtration,
            source,
        });
    }
    r.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_roundtrip_keeps_infinity() {
        let d = PersistenceDiagram {
            points: vec![
                PersistencePoint::new(0, 0.0, f64::INFINITY),
                PersistencePoint::new(1, 0.25, 0.5),
            ],
            max_filtration: 1.5,
            source: FiltrationMode::Rips,
        };
        let e = PersistenceDiagram::empty(1.5, FiltrationMode::Rips);
        let bytes = encode_diagrams(&[d.clone(), e.clone()]);
        assert_eq!(&bytes[..4], b"OAMP");
        let back = decode_diagrams(&bytes, 1.5, FiltrationMode::Rips).unwrap();
        assert_eq!(back, vec![d, e]);
        assert!(decode_diagrams(&bytes[..bytes.len() - 1], 1.5, FiltrationMode::Rips).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(FiltrationParams::default().validate().is_ok());
        let p = FiltrationParams {
            mode: FiltrationMode::Cubical,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = FiltrationParams {
            max_points: 600,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = FiltrationParams {
            tau: 1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
