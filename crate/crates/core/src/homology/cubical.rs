//! Sublevel persistence of `f = −I` on the vertex-based cubical complex.
//!
//! Pixels are vertices, 4-neighbour pairs are edges and 2×2 blocks are
//! squares; every cell takes the maximum of `f` over its pixels. H0 is a
//! union-find sweep over edges (elder rule). H1 reduces square boundaries
//! with pivots restricted to edges that did not merge components.

use std::cmp::Ordering;
use std::collections::HashMap;

use super::{FiltrationMode, PersistenceDiagram};
use crate::optics::Image;
use crate::{Error, Result};

#[derive(Clone, Copy)]
struct Cell {
    value: f64,
    /// Pixel indices, ascending; unused slots are `usize::MAX`.
    verts: [usize; 4],
}

impl Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then_with(|| self.verts.cmp(&other.verts))
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Persistence of the sublevel filtration of `−img`, dimensions ≤ `max_dim`.
pub fn cubical_persistence(img: &Image, max_dim: usize) -> Result<PersistenceDiagram> {
    if max_dim > 1 {
        return Err(Error::invalid("cubical persistence supports max_dim <= 1"));
    }
    let w = img.grid.side;
    let h = img.values.len() / w.max(1);
    let f: Vec<f64> = img.values.iter().map(|v| -v).collect();
    let max_filtration = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut diagram = PersistenceDiagram::empty(max_filtration, FiltrationMode::Cubical);
    if f.is_empty() {
        return Ok(diagram);
    }

    // Vertex order: (value, index).
    let vkey = |a: usize, b: usize| f[a].total_cmp(&f[b]).then(a.cmp(&b));

    let mut edges = Vec::with_capacity(2 * w * h);
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            if c + 1 < w {
                edges.push(Cell {
                    value: f[p].max(f[p + 1]),
                    verts: [p, p + 1, usize::MAX, usize::MAX],
                });
            }
            if r + 1 < h {
                edges.push(Cell {
                    value: f[p].max(f[p + w]),
                    verts: [p, p + w, usize::MAX, usize::MAX],
                });
            }
        }
    }
    edges.sort_by(Cell::cmp);

    // H0: the component born later dies at the merging edge.
    let mut parent: Vec<usize> = (0..f.len()).collect();
    // Root -> oldest vertex in the component.
    let mut eldest: Vec<usize> = (0..f.len()).collect();
    let mut negative = vec![false; edges.len()];
    for (i, e) in edges.iter().enumerate() {
        let a = find(&mut parent, e.verts[0]);
        let b = find(&mut parent, e.verts[1]);
        if a == b {
            continue;
        }
        let (ea, eb) = (eldest[a], eldest[b]);
        let (survivor, dying) = if vkey(ea, eb) == Ordering::Less {
            (ea, eb)
        } else {
            (eb, ea)
        };
        diagram.push_pair(0, f[dying], e.value);
        parent[b] = a;
        eldest[a] = survivor;
        negative[i] = true;
    }
    for v in 0..f.len() {
        if find(&mut parent, v) == v {
            diagram.push_essential(0, f[eldest[v]]);
        }
    }
    if max_dim == 0 {
        return Ok(diagram);
    }

    // H1: squares as columns, edges as rows (by rank in the filtration).
    let rank: HashMap<(usize, usize), usize> = edges
        .iter()
        .enumerate()
        .map(|(i, e)| ((e.verts[0], e.verts[1]), i))
        .collect();
    let mut squares = Vec::with_capacity(w.saturating_sub(1) * h.saturating_sub(1));
    for r in 0..h.saturating_sub(1) {
        for c in 0..w.saturating_sub(1) {
            let p = r * w + c;
            let verts = [p, p + 1, p + w, p + w + 1];
            let value = verts.iter().map(|&v| f[v]).fold(f64::NEG_INFINITY, f64::max);
            squares.push(Cell { value, verts });
        }
    }
    squares.sort_by(Cell::cmp);

    let mut pivot_of: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut paired = vec![false; edges.len()];
    for sq in &squares {
        let [a, b, c, d] = sq.verts;
        let mut col: Vec<usize> = [(a, b), (a, c), (b, d), (c, d)]
            .iter()
            .map(|k| rank[k])
            .collect();
        col.sort_unstable();
        while let Some(&low) = col.last() {
            match pivot_of.get(&low) {
                Some(other) => col = xor_sorted(&col, other),
                None => break,
            }
        }
        if let Some(&low) = col.last() {
            diagram.push_pair(1, edges[low].value, sq.value);
            paired[low] = true;
            pivot_of.insert(low, col);
        }
    }
    for (i, e) in edges.iter().enumerate() {
        if !negative[i] && !paired[i] {
            diagram.push_essential(1, e.value);
        }
    }
    Ok(diagram)
}

fn xor_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}
