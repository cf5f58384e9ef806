//! File formats: data and covariate CSVs, label CSVs, tree JSON, sample
//! JSONL and the long-format co-assignment CSV.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value read back is bit-identical to the one written.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::domain::{AugmentedTree, Dataset, Partition};
use crate::error::{Error, Result};
use crate::matrixtree::EigencheckRow;
use crate::mcmc::McmcSample;

/// Reads a numeric matrix, one row per line.
pub fn read_matrix_csv(path: &Path, header: bool) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(header).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(idx + 1);
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Parse { line, message: format!("'{f}': {e}") })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            let first: &Vec<f64> = first;
            if first.len() != row.len() {
                return Err(Error::Parse { line, message: format!("expected {} columns, found {}", first.len(), row.len()) });
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_dataset_csv(path: &Path, header: bool) -> Result<Dataset> {
    Dataset::from_rows(&read_matrix_csv(path, header)?)
}

pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for i in 0..data.n() {
        w.write_record(data.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `index,label` rows with 0-based indices and labels `1..=K`.
pub fn write_labels_csv(path: &Path, partition: &Partition) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "label"])?;
    for (i, l) in partition.labels().iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels_csv(path: &Path) -> Result<Partition> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let mut labels = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = idx + 2;
        if rec.len() != 2 {
            return Err(Error::Parse { line, message: "expected index,label".into() });
        }
        let parse = |f: &str| f.parse::<usize>().map_err(|e| Error::Parse { line, message: format!("'{f}': {e}") });
        let (i, l) = (parse(&rec[0])?, parse(&rec[1])?);
        if i != idx {
            return Err(Error::Parse { line, message: format!("index {i} out of order") });
        }
        labels.push(l);
    }
    Ok(Partition::from_labels(&labels))
}

pub fn write_tree_json(path: &Path, tree: &AugmentedTree) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, tree)?;
    w.flush()?;
    Ok(())
}

pub fn read_tree_json(path: &Path) -> Result<AugmentedTree> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_samples_jsonl(path: &Path, samples: &[McmcSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads samples, reporting the 1-based line of any malformed record.
pub fn read_samples_jsonl(path: &Path) -> Result<Vec<McmcSample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out: Vec<McmcSample> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let s: McmcSample =
            serde_json::from_str(&text).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        if s.sigma_tilde.len() != s.tree.n() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("sigma_tilde has {} entries for a tree on {} nodes", s.sigma_tilde.len(), s.tree.n()),
            });
        }
        if let Some(first) = out.first() {
            if first.tree.n() != s.tree.n() {
                return Err(Error::Parse { line: line_no, message: format!("expected {} data nodes, found {}", first.tree.n(), s.tree.n()) });
            }
        }
        out.push(s);
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("{} contains no samples", path.display())));
    }
    Ok(out)
}

/// Long format `i,j,probability` over all ordered pairs.
pub fn write_psm_csv(path: &Path, psm: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["i", "j", "probability"])?;
    for i in 0..psm.nrows() {
        for j in 0..psm.ncols() {
            w.write_record([i.to_string(), j.to_string(), psm[(i, j)].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_psm_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut entries = Vec::new();
    let mut n = 0;
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = idx + 2;
        if rec.len() != 3 {
            return Err(Error::Parse { line, message: "expected i,j,probability".into() });
        }
        let i: usize = rec[0].parse().map_err(|e| Error::Parse { line, message: format!("{e}") })?;
        let j: usize = rec[1].parse().map_err(|e| Error::Parse { line, message: format!("{e}") })?;
        let p: f64 = rec[2].parse().map_err(|e| Error::Parse { line, message: format!("{e}") })?;
        n = n.max(i + 1).max(j + 1);
        entries.push((i, j, p));
    }
    if entries.len() != n * n {
        return Err(Error::invalid(format!("expected {} entries for a {n}x{n} matrix, found {}", n * n, entries.len())));
    }
    let mut m = DMatrix::zeros(n, n);
    for (i, j, p) in entries {
        m[(i, j)] = p;
    }
    Ok(m)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Long-format `n,replicate,distance` table.
pub fn write_eigencheck_csv(path: &Path, rows: &[EigencheckRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n", "replicate", "distance"])?;
    for r in rows {
        w.write_record([r.n.to_string(), r.replicate.to_string(), r.distance.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eigencheck_csv(path: &Path) -> Result<Vec<EigencheckRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn write_k_hist_json(path: &Path, hist: &BTreeMap<usize, usize>) -> Result<()> {
    write_json(path, hist)
}
