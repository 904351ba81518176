//! Vietoris-Rips persistence.
//!
//! H0 comes from a Kruskal sweep over the sorted edges (elder rule). Higher
//! dimensions reduce the coboundary matrix over GF(2), columns in reverse
//! filtration order, with clearing: a d-simplex that was a pivot in
//! dimension d−1 is skipped. Simplices are addressed through the
//! combinatorial number system and cofacets are enumerated on the fly, so
//! only columns that actually needed reduction are stored.
//!
//! Within one dimension, ties in diameter are broken by the combinatorial
//! index. The resulting value multiset does not depend on tie-breaking once
//! zero-lifetime pairs are dropped.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use super::{euclid, FiltrationMode, PersistenceDiagram, PointCloud3, MAX_RIPS_POINTS};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Entry {
    diam: f64,
    index: u64,
}

impl Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.diam
            .total_cmp(&other.diam)
            .then(self.index.cmp(&other.index))
    }
}

struct Binomials {
    table: Vec<Vec<u64>>,
}

impl Binomials {
    fn new(n: usize, k: usize) -> Self {
        let mut table = vec![vec![0u64; k + 1]; n + 1];
        table[0][0] = 1;
        for i in 1..=n {
            table[i][0] = 1;
            for j in 1..=k {
                table[i][j] = table[i - 1][j - 1] + table[i - 1][j];
            }
        }
        Binomials { table }
    }

    fn get(&self, n: usize, k: usize) -> u64 {
        if k > n {
            0
        } else {
            self.table[n][k]
        }
    }

    /// Index of the simplex with vertices sorted descending.
    fn index(&self, desc: &[usize]) -> u64 {
        let d = desc.len();
        desc.iter()
            .enumerate()
            .map(|(i, &v)| self.get(v, d - i))
            .sum()
    }
}

struct Complex<'a> {
    n: usize,
    dist: Vec<f64>,
    threshold: f64,
    binom: &'a Binomials,
}

impl Complex<'_> {
    fn d(&self, a: usize, b: usize) -> f64 {
        self.dist[a * self.n + b]
    }

    /// All simplices of `dim` with diameter ≤ threshold, vertices descending.
    fn simplices(&self, dim: usize) -> Vec<(Entry, Vec<usize>)> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = Vec::with_capacity(dim + 1);
        self.extend(dim + 1, 0.0, &mut stack, &mut out);
        out
    }

    fn extend(
        &self,
        size: usize,
        diam: f64,
        stack: &mut Vec<usize>,
        out: &mut Vec<(Entry, Vec<usize>)>,
    ) {
        if stack.len() == size {
            let mut desc = stack.clone();
            desc.reverse();
            out.push((
                Entry {
                    diam,
                    index: self.binom.index(&desc),
                },
                desc,
            ));
            return;
        }
        let start = stack.last().map_or(0, |&v| v + 1);
        for v in start..self.n {
            let mut dv = diam;
            let mut ok = true;
            for &u in stack.iter() {
                let e = self.d(u, v);
                if e > self.threshold {
                    ok = false;
                    break;
                }
                dv = dv.max(e);
            }
            if ok {
                stack.push(v);
                self.extend(size, dv, stack, out);
                stack.pop();
            }
        }
    }

    /// Sorted coboundary of `desc` (vertices descending) with diameter `diam`.
    fn coboundary(&self, desc: &[usize], diam: f64, buf: &mut Vec<usize>) -> Vec<Entry> {
        let mut out = Vec::new();
        for w in 0..self.n {
            if desc.contains(&w) {
                continue;
            }
            let mut dw = diam;
            let mut ok = true;
            for &v in desc {
                let e = self.d(v, w);
                if e > self.threshold {
                    ok = false;
                    break;
                }
                dw = dw.max(e);
            }
            if !ok {
                continue;
            }
            buf.clear();
            buf.extend_from_slice(desc);
            let pos = buf.iter().position(|&v| v < w).unwrap_or(buf.len());
            buf.insert(pos, w);
            out.push(Entry {
                diam: dw,
                index: self.binom.index(buf),
            });
        }
        out.sort_by(Entry::cmp);
        out
    }
}

/// Symmetric difference of two sorted columns.
fn add_columns(a: &[Entry], b: &[Entry]) -> Vec<Entry> {
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

enum StoredColumn {
    /// Column never needed reduction; recompute the coboundary of this simplex.
    Coboundary { desc: Vec<usize>, diam: f64 },
    Reduced(Vec<Entry>),
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Rips persistence up to `max_dim` with simplices of diameter > `max_radius`
/// excluded. Essential H0 classes die at ∞; essential higher classes are
/// truncated at `max_radius`.
pub fn rips_persistence(
    cloud: &PointCloud3,
    max_dim: usize,
    max_radius: f64,
) -> Result<PersistenceDiagram> {
    if max_dim > 2 {
        return Err(Error::invalid(format!("max_dim {max_dim} > 2")));
    }
    if !(max_radius > 0.0) {
        return Err(Error::invalid(format!("max_radius {max_radius} must be > 0")));
    }
    let n = cloud.len();
    if n > MAX_RIPS_POINTS {
        return Err(Error::invalid(format!("cloud of {n} points exceeds {MAX_RIPS_POINTS}")));
    }
    let mut diagram = PersistenceDiagram::empty(max_radius, FiltrationMode::Rips);
    if n == 0 {
        return Ok(diagram);
    }

    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let d = euclid(&cloud.points[i], &cloud.points[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let binom = Binomials::new(n, max_dim + 2);
    let complex = Complex {
        n,
        dist,
        threshold: max_radius,
        binom: &binom,
    };

    // H0
    let mut edges = complex.simplices(1);
    edges.sort_by(|a, b| a.0.cmp(&b.0));
    let mut parent: Vec<usize> = (0..n).collect();
    let mut cleared: HashSet<u64> = HashSet::new();
    for (e, desc) in &edges {
        let a = find(&mut parent, desc[0]);
        let b = find(&mut parent, desc[1]);
        if a != b {
            // Every vertex is born at 0, so the elder rule reduces to any
            // consistent choice of survivor.
            parent[a.max(b)] = a.min(b);
            diagram.push_pair(0, 0.0, e.diam);
            cleared.insert(e.index);
        }
    }
    for v in 0..n {
        if find(&mut parent, v) == v {
            diagram.push_essential(0, 0.0);
        }
    }

    // H1, H2 via coboundary reduction.
    let mut columns = edges;
    let mut buf = Vec::with_capacity(max_dim + 2);
    for dim in 1..=max_dim {
        if dim > 1 {
            columns = complex.simplices(dim);
            columns.sort_by(|a, b| a.0.cmp(&b.0));
        }
        let mut pivots: HashMap<u64, StoredColumn> = HashMap::new();
        let mut next_cleared = HashSet::new();
        for (sigma, desc) in columns.iter().rev() {
            if cleared.contains(&sigma.index) {
                continue;
            }
            let mut col = complex.coboundary(desc, sigma.diam, &mut buf);
            let mut reduced = false;
            loop {
                let Some(&pivot) = col.first() else {
                    diagram.push_essential(dim as u8, sigma.diam);
                    break;
                };
                match pivots.get(&pivot.index) {
                    Some(StoredColumn::Reduced(other)) => {
                        col = add_columns(&col, other);
                        reduced = true;
                    }
                    Some(StoredColumn::Coboundary { desc: d2, diam }) => {
                        let other = complex.coboundary(d2, *diam, &mut buf);
                        col = add_columns(&col, &other);
                        reduced = true;
                    }
                    None => {
                        diagram.push_pair(dim as u8, sigma.diam, pivot.diam);
                        next_cleared.insert(pivot.index);
                        let stored = if reduced {
                            StoredColumn::Reduced(col)
                        } else {
                            StoredColumn::Coboundary {
                                desc: desc.clone(),
                                diam: sigma.diam,
                            }
                        };
                        pivots.insert(pivot.index, stored);
                        break;
                    }
                }
            }
        }
        cleared = next_cleared;
    }
    Ok(diagram)
}
