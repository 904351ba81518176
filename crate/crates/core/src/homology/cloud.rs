use super::{euclid, FiltrationParams, PointCloud3};
use crate::optics::Image;
use crate::{Error, Result};

/// Lift bright pixels to `(col/side, row/side, α·I/I_max)`.
///
/// Pixels with `I/I_max > tau` qualify. When more than `max_points` do, a
/// farthest-point subset is kept, starting from the brightest pixel (lowest
/// index on ties) so the choice depends only on image content.
pub fn image_to_cloud(img: &Image, params: &FiltrationParams) -> Result<PointCloud3> {
    if img.values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("image_to_cloud expects a non-negative intensity image"));
    }
    let peak = img.max();
    if !(peak > 0.0) {
        return Ok(PointCloud3::default());
    }
    let side = img.grid.side;
    let scale = side as f64;
    let mut candidates = Vec::new();
    let mut brightest = 0usize;
    for (idx, &v) in img.values.iter().enumerate() {
        let norm = v / peak;
        if norm > params.tau {
            if candidates.is_empty() || v > img.values[candidates[brightest]] {
                brightest = candidates.len();
            }
            candidates.push(idx);
        }
    }
    let lift = |idx: usize| -> [f64; 3] {
        let row = idx / side;
        let col = idx % side;
        [col as f64 / scale, row as f64 / scale, params.alpha * img.values[idx] / peak]
    };
    let all: Vec<[f64; 3]> = candidates.iter().map(|&i| lift(i)).collect();
    if all.len() <= params.max_points {
        return PointCloud3::new(all);
    }

    let mut chosen = Vec::with_capacity(params.max_points);
    let mut nearest = vec![f64::INFINITY; all.len()];
    let mut next = brightest;
    while chosen.len() < params.max_points {
        chosen.push(next);
        let p = all[next];
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for (i, q) in all.iter().enumerate() {
            let d = euclid(&p, q);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if nearest[i] > best_d {
                best_d = nearest[i];
                best = i;
            }
        }
        next = best;
    }
    PointCloud3::new(chosen.into_iter().map(|i| all[i]).collect())
}
