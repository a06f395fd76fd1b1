//! Sample CSV round-tripping, input hashing, and run-directory bookkeeping.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DVector;
use sha2::{Digest, Sha256};

/// Write samples as CSV with header `x0,...,x{n-1}` and 17 significant
/// digits per value, enough to round-trip binary64 exactly.
pub fn write_samples_csv(path: &Path, samples: &[DVector<f64>], dim: usize) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    w.write_record(&header)?;
    for s in samples {
        let row: Vec<String> = s.iter().map(|v| format!("{v:.16e}")).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<DVector<f64>>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let dim = r.headers()?.len();
    if dim == 0 {
        bail!("{}: empty header", path.display());
    }
    let mut out = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        if record.len() != dim {
            bail!(
                "{}: row {} has {} fields, expected {dim}",
                path.display(),
                i + 2,
                record.len()
            );
        }
        let vals: Vec<f64> = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        out.push(DVector::from_vec(vals));
    }
    Ok(out)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Hash every regular file under a directory, keyed by relative path.
pub fn sha256_dir(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(cur) = stack.pop() {
        for entry in fs::read_dir(&cur).with_context(|| format!("listing {}", cur.display()))? {
            let entry = entry?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(dir)
                    .expect("entries live under dir")
                    .to_string_lossy()
                    .replace('\\', "/");
                out.insert(rel, sha256_file(&path)?);
            }
        }
    }
    Ok(out)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
