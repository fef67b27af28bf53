//! CSV helpers shared by the experiments.

use std::path::Path;

use crate::error::Result;

/// Writes `header` followed by `rows` to `path`.
pub(crate) fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Labelled 2-D points as `set,x,y` rows.
pub(crate) fn point_rows(sets: &[(&str, &[[f64; 2]])]) -> Vec<Vec<String>> {
    sets.iter()
        .flat_map(|(name, pts)| pts.iter().map(move |p| vec![name.to_string(), p[0].to_string(), p[1].to_string()]))
        .collect()
}

/// Normalized 2-D histograms of each set over a shared square grid, as
/// `set,x,y,density` rows with bin-centre coordinates.
pub(crate) fn density_rows(sets: &[(&str, &[[f64; 2]])], bins: usize) -> Vec<Vec<String>> {
    let all = sets.iter().flat_map(|(_, p)| p.iter());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in all {
        lo = lo.min(p[0]).min(p[1]);
        hi = hi.max(p[0]).max(p[1]);
    }
    if !(hi > lo) {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let mut rows = Vec::new();
    for (name, pts) in sets {
        let mut counts = vec![0usize; bins * bins];
        for p in pts.iter() {
            let ix = (((p[0] - lo) / width) as usize).min(bins - 1);
            let iy = (((p[1] - lo) / width) as usize).min(bins - 1);
            counts[iy * bins + ix] += 1;
        }
        let total = pts.len().max(1) as f64 * width * width;
        for iy in 0..bins {
            for ix in 0..bins {
                rows.push(vec![
                    name.to_string(),
                    (lo + (ix as f64 + 0.5) * width).to_string(),
                    (lo + (iy as f64 + 0.5) * width).to_string(),
                    (counts[iy * bins + ix] as f64 / total).to_string(),
                ]);
            }
        }
    }
    rows
}

/// Counter-based seed derivation (SplitMix64 finalizer), so corpus items do
/// not depend on how many random numbers other parts of a run consumed.
pub(crate) fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(domain.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
