use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ChannelKind;
use super::dataset::Dataset;
use crate::homology::{self, FiltrationMode, FiltrationParams, PersistenceDiagram};
use crate::io;
use crate::optics::GridSpec;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CacheStamp {
    dataset_sha256: String,
    filtration: FiltrationParams,
    count: usize,
    cache_sha256: String,
}

fn stamp_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Cap used for infinite deaths of diagrams made with `params`.
pub fn max_filtration(params: &FiltrationParams) -> f64 {
    match params.mode {
        FiltrationMode::Rips => params.max_radius,
        FiltrationMode::Cubical => 0.0,
    }
}

/// Diagrams of the intensity channel of every sample, in sample order.
pub fn compute_diagrams(
    dataset: &Dataset,
    grid: GridSpec,
    params: &FiltrationParams,
) -> Result<Vec<PersistenceDiagram>> {
    params.validate()?;
    (0..dataset.samples.len())
        .into_par_iter()
        .map(|i| {
            let img = dataset.image(i, ChannelKind::Intensity, grid)?;
            let mut d = homology::diagram_for_intensity(&img, params)?;
            // Keep exactly what the cache file can hold.
            for p in &mut d.points {
                p.birth = p.birth as f32 as f64;
                p.death = p.death as f32 as f64;
            }
            d.max_filtration = max_filtration(params);
            Ok(d)
        })
        .collect()
}

/// Compute the diagram cache for `dataset`, or reuse `cache` when its stamp
/// matches the dataset content and filtration parameters.
///
/// A stamp that matches the dataset but whose cache file has the wrong
/// sample count or checksum is reported as [`Error::CacheMismatch`].
pub fn precompute_diagrams(
    dataset: &Dataset,
    grid: GridSpec,
    params: &FiltrationParams,
    cache: &Path,
) -> Result<Vec<PersistenceDiagram>> {
    let dataset_sha256 = io::sha256_hex(&dataset.encode());
    let stamp_file = stamp_path(cache);
    if cache.exists() && stamp_file.exists() {
        let stamp: Option<CacheStamp> = serde_json::from_slice(&io::read_file(&stamp_file)?).ok();
        if let Some(stamp) = stamp.filter(|s| s.dataset_sha256 == dataset_sha256 && s.filtration == *params) {
            let bytes = io::read_file(cache)?;
            let mismatch = |detail: String| Error::CacheMismatch {
                path: cache.to_path_buf(),
                detail,
            };
            if io::sha256_hex(&bytes) != stamp.cache_sha256 {
                return Err(mismatch("checksum differs from stamp".into()));
            }
            let diagrams = homology::decode_diagrams(&bytes, max_filtration(params), params.mode)?;
            if diagrams.len() != dataset.samples.len() || stamp.count != diagrams.len() {
                return Err(mismatch(format!(
                    "{} diagrams for {} samples",
                    diagrams.len(),
                    dataset.samples.len()
                )));
            }
            log::info!("reusing diagram cache {}", cache.display());
            return Ok(diagrams);
        }
    }
    let diagrams = compute_diagrams(dataset, grid, params)?;
    let bytes = homology::encode_diagrams(&diagrams);
    io::write_atomic(cache, &bytes)?;
    let stamp = CacheStamp {
        dataset_sha256,
        filtration: *params,
        count: diagrams.len(),
        cache_sha256: io::sha256_hex(&bytes),
    };
    io::write_atomic(
        &stamp_file,
        serde_json::to_string_pretty(&stamp).expect("stamp serialises").as_bytes(),
    )?;
    Ok(diagrams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::config::DataConfig;
    use crate::pipeline::dataset::{generate_dataset, Sample};

    fn cubical() -> FiltrationParams {
        FiltrationParams {
            mode: FiltrationMode::Cubical,
            max_dim: 1,
            ..Default::default()
        }
    }

    #[test]
    fn empty_image_gives_empty_diagram() {
        let d = Dataset {
            side: 8,
            n_bits: 1,
            channels: vec![ChannelKind::Intensity],
            samples: vec![Sample {
                label: 0,
                seed: 0,
                data: vec![0.0; 64],
            }],
        };
        let g = GridSpec::new(8, 1.0).unwrap();
        for params in [cubical(), FiltrationParams::default()] {
            assert!(compute_diagrams(&d, g, &params).unwrap()[0].is_empty());
        }
    }

    #[test]
    fn cache_is_reused_and_checked() {
        let cfg = DataConfig {
            n_bits: 2,
            side: 16,
            samples_per_class: 2,
            ..DataConfig::default()
        };
        let (d, _) = generate_dataset(&cfg, 1).unwrap();
        let g = cfg.grid().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("d.oamp");
        let first = precompute_diagrams(&d, g, &cubical(), &cache).unwrap();
        let again = precompute_diagrams(&d, g, &cubical(), &cache).unwrap();
        assert_eq!(first, again);

        // A damaged cache with an intact stamp is refused.
        let mut bytes = std::fs::read(&cache).unwrap();
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&cache, &bytes).unwrap();
        let err = precompute_diagrams(&d, g, &cubical(), &cache).unwrap_err();
        assert!(matches!(err, Error::CacheMismatch { .. }));
    }
}
