//! CSV and JSON persistence of intermediate artifacts.
//!
//! Floats are written in shortest round-trip form, so reading an artifact back yields the
//! identical values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::clustering::{ClusterCenters, Clustering};
use crate::error::{Result, SisError};
use crate::nmf::{FactorHeader, FactorPair};

/// Rows of `m` as CSV with header `label,c0,c1,…`.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, label: &str, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec![label.to_string()];
    header.extend((0..m.ncols()).map(|c| format!("c{c}")));
    wr.write_record(&header)?;
    for i in 0..m.nrows() {
        let mut rec = vec![i.to_string()];
        rec.extend(m.row(i).iter().map(|v| v.to_string()));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut rd = csv::Reader::from_reader(r);
    let cols = rd.headers()?.len().saturating_sub(1);
    let mut data = Vec::new();
    let mut rows = 0;
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != cols + 1 {
            return Err(SisError::Parse { line: line + 2, message: format!("expected {} fields", cols + 1) });
        }
        for f in rec.iter().skip(1) {
            data.push(f.trim().parse::<f64>().map_err(|e| SisError::Parse { line: line + 2, message: e.to_string() })?);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn write_json<T: Serialize, P: AsRef<Path>>(value: &T, path: P) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned, P: AsRef<Path>>(path: P) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn create<P: AsRef<Path>>(path: P) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open<P: AsRef<Path>>(path: P) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

/// `factors.json`, `W.csv` and `H.csv` (one row per node) in `dir`.
pub fn save_factor_pair(fp: &FactorPair, dir: &Path) -> Result<()> {
    write_json(&fp.header(), dir.join("factors.json"))?;
    write_matrix_csv(&fp.w.transpose(), "node", create(dir.join("W.csv"))?)?;
    write_matrix_csv(&fp.h.transpose(), "node", create(dir.join("H.csv"))?)?;
    Ok(())
}

pub fn load_factor_pair(dir: &Path) -> Result<FactorPair> {
    let header: FactorHeader = read_json(dir.join("factors.json"))?;
    let w = read_matrix_csv(open(dir.join("W.csv"))?)?.transpose();
    let h = read_matrix_csv(open(dir.join("H.csv"))?)?.transpose();
    FactorPair::from_parts(&header, w, h)
}

/// `clusters.csv` (`node,cluster`) and `centers.json` in `dir`.
pub fn save_clustering(cl: &Clustering, dir: &Path) -> Result<()> {
    let mut wr = csv::Writer::from_writer(create(dir.join("clusters.csv"))?);
    wr.write_record(["node", "cluster"])?;
    for (i, c) in cl.assignment.iter().enumerate() {
        wr.write_record([i.to_string(), c.to_string()])?;
    }
    wr.flush()?;
    write_json(&cl.centers(), dir.join("centers.json"))
}

pub fn load_clustering(dir: &Path) -> Result<Clustering> {
    let centers: ClusterCenters = read_json(dir.join("centers.json"))?;
    let mut rd = csv::Reader::from_reader(open(dir.join("clusters.csv"))?);
    let mut assignment = vec![usize::MAX; centers.n];
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| -> Result<usize> {
            rec.get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| SisError::Parse { line: line + 2, message: "expected node,cluster".into() })
        };
        let (node, cluster) = (parse(0)?, parse(1)?);
        if node >= centers.n {
            return Err(SisError::Parse { line: line + 2, message: format!("node {node} out of range") });
        }
        assignment[node] = cluster;
    }
    if assignment.contains(&usize::MAX) {
        return Err(SisError::validation("cluster assignment does not cover every node"));
    }
    Clustering::from_centers(&centers, assignment)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, 1.0 / 3.0, 2e-300, 5.0, -0.0, 1e17]);
        let mut buf = Vec::new();
        write_matrix_csv(&m, "row", &mut buf).unwrap();
        assert_eq!(read_matrix_csv(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn factor_pair_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let fp = FactorPair {
            k: 2,
            w: DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]),
            h: DMatrix::from_row_slice(2, 3, &[1.0 / 7.0, 0.0, 2.0, 3.0, 4.0, 5.0]),
            lambda: 0.25,
            objective: 1.5,
            iterations: 4,
            seed: 9,
            symmetric: false,
        };
        save_factor_pair(&fp, dir.path()).unwrap();
        assert_eq!(load_factor_pair(dir.path()).unwrap(), fp);
    }
}
