//! Reference persistence by plain column reduction.
//!
//! No clearing, no implicit matrices, no shortcuts: every cell is a column,
//! faces are found by vertex-set inclusion, and columns are reduced left to
//! right. Slow, but simple enough to trust as a test oracle for both the
//! simplicial and the cubical engines.

use std::cmp::Ordering;

use super::{euclid, FiltrationMode, PersistenceDiagram, PointCloud3};
use crate::optics::Image;
use crate::{Error, Result};

/// A simplex or cube given by its (ascending) vertex ids.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleCell {
    pub dim: usize,
    pub value: f64,
    pub vertices: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct OracleComplex {
    /// Sorted by (value, dim, vertices lexicographically).
    pub cells: Vec<OracleCell>,
    pub max_filtration: f64,
    /// Highest homology dimension reported.
    pub max_dim: usize,
    pub source: FiltrationMode,
}

fn cell_order(a: &OracleCell, b: &OracleCell) -> Ordering {
    a.value
        .total_cmp(&b.value)
        .then(a.dim.cmp(&b.dim))
        .then_with(|| a.vertices.cmp(&b.vertices))
}

fn is_subset(small: &[usize], big: &[usize]) -> bool {
    small.iter().all(|v| big.binary_search(v).is_ok())
}

/// Persistence of an explicitly listed filtered complex.
///
/// The boundary of a d-cell is every (d−1)-cell whose vertex set it
/// contains, which is right for simplices and for vertex-based cubes.
pub fn oracle_persistence(complex: &OracleComplex) -> Result<PersistenceDiagram> {
    let cells = &complex.cells;
    for (i, w) in cells.windows(2).enumerate() {
        if cell_order(&w[0], &w[1]) == Ordering::Greater {
            return Err(Error::UnsortedComplex { index: i + 1 });
        }
    }
    for (i, c) in cells.iter().enumerate() {
        if c.vertices.windows(2).any(|w| w[0] >= w[1]) || c.vertices.is_empty() {
            return Err(Error::UnsortedComplex { index: i });
        }
    }

    let n = cells.len();
    let mut columns: Vec<Vec<usize>> = Vec::with_capacity(n);
    for (j, c) in cells.iter().enumerate() {
        let mut col = Vec::new();
        if c.dim > 0 {
            for (i, f) in cells.iter().enumerate() {
                if f.dim + 1 == c.dim && is_subset(&f.vertices, &c.vertices) {
                    if i > j {
                        return Err(Error::UnsortedComplex { index: i });
                    }
                    col.push(i);
                }
            }
        }
        columns.push(col);
    }

    let mut low_owner: Vec<Option<usize>> = vec![None; n];
    let mut paired = vec![false; n];
    let mut diagram = PersistenceDiagram::empty(complex.max_filtration, complex.source);
    for j in 0..n {
        loop {
            let Some(&low) = columns[j].iter().max() else { break };
            match low_owner[low] {
                Some(k) => {
                    let other = columns[k].clone();
                    let col = &mut columns[j];
                    for r in other {
                        if let Some(pos) = col.iter().position(|&x| x == r) {
                            col.swap_remove(pos);
                        } else {
                            col.push(r);
                        }
                    }
                }
                None => {
                    low_owner[low] = Some(j);
                    paired[low] = true;
                    paired[j] = true;
                    diagram.push_pair(cells[low].dim as u8, cells[low].value, cells[j].value);
                    break;
                }
            }
        }
    }
    for (i, c) in cells.iter().enumerate() {
        if !paired[i] && c.dim <= complex.max_dim {
            diagram.push_essential(c.dim as u8, c.value);
        }
    }
    Ok(diagram)
}

/// Every simplex of dimension ≤ `max_dim + 1` with diameter ≤ `max_radius`,
/// listed explicitly and sorted.
pub fn rips_complex(cloud: &PointCloud3, max_dim: usize, max_radius: f64) -> OracleComplex {
    let n = cloud.len();
    let d = |a: usize, b: usize| euclid(&cloud.points[a], &cloud.points[b]);
    let mut cells = Vec::new();
    let mut subset = Vec::new();
    fn rec(
        start: usize,
        n: usize,
        max_size: usize,
        subset: &mut Vec<usize>,
        cells: &mut Vec<OracleCell>,
        d: &dyn Fn(usize, usize) -> f64,
        max_radius: f64,
    ) {
        for v in start..n {
            subset.push(v);
            let mut diam: f64 = 0.0;
            for (i, &a) in subset.iter().enumerate() {
                for &b in &subset[i + 1..] {
                    diam = diam.max(d(a, b));
                }
            }
            if diam <= max_radius {
                cells.push(OracleCell {
                    dim: subset.len() - 1,
                    value: diam,
                    vertices: subset.clone(),
                });
                if subset.len() < max_size {
                    rec(v + 1, n, max_size, subset, cells, d, max_radius);
                }
            }
            subset.pop();
        }
    }
    rec(0, n, max_dim + 2, &mut subset, &mut cells, &d, max_radius);
    cells.sort_by(cell_order);
    OracleComplex {
        cells,
        max_filtration: max_radius,
        max_dim,
        source: FiltrationMode::Rips,
    }
}

/// Vertex-based cubical complex of `−img`, explicitly listed and sorted.
pub fn cubical_complex(img: &Image) -> OracleComplex {
    let w = img.grid.side;
    let h = img.values.len() / w;
    let f = |p: usize| -img.values[p];
    let mut cells = Vec::new();
    for p in 0..w * h {
        cells.push(OracleCell {
            dim: 0,
            value: f(p),
            vertices: vec![p],
        });
    }
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            if c + 1 < w {
                cells.push(OracleCell {
                    dim: 1,
                    value: f(p).max(f(p + 1)),
                    vertices: vec![p, p + 1],
                });
            }
            if r + 1 < h {
                cells.push(OracleCell {
                    dim: 1,
                    value: f(p).max(f(p + w)),
                    vertices: vec![p, p + w],
                });
            }
            if c + 1 < w && r + 1 < h {
                let v = vec![p, p + 1, p + w, p + w + 1];
                let value = v.iter().map(|&q| f(q)).fold(f64::NEG_INFINITY, f64::max);
                cells.push(OracleCell {
                    dim: 2,
                    value,
                    vertices: v,
                });
            }
        }
    }
    cells.sort_by(cell_order);
    let max_filtration = (0..w * h).map(f).fold(f64::NEG_INFINITY, f64::max);
    OracleComplex {
        cells,
        max_filtration,
        max_dim: 1,
        source: FiltrationMode::Cubical,
    }
}
