//! File formats: MatrixMarket coordinate matrices, plain or MatrixMarket
//! vectors, partition JSON and reduced-model directories.
//!
//! All numbers are written with 17 significant digits so values survive a
//! text round trip losslessly.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    build_partitioned, AlphaWeights, Disaggregation, Partition, ReducedModel,
};
use crate::benchlab::fmt_f64;
use crate::chain::DEFAULT_TOL;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

const MM_HEADER: &str = "%%MatrixMarket matrix coordinate real general";
const MM_ARRAY_HEADER: &str = "%%MatrixMarket matrix array real general";

/// Parses a MatrixMarket file (coordinate or array, real general).
pub fn read_matrix<R: Read>(reader: R) -> Result<SparseMatrix> {
    let reader = BufReader::new(reader);
    let mut lines = reader.lines();
    let header = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => return Err(Error::Parse("empty MatrixMarket file".into())),
        }
    };
    let header = header.trim().to_ascii_lowercase();
    let coordinate = if header.starts_with("%%matrixmarket") {
        if header.contains("coordinate") && header.contains("real") && header.contains("general") {
            true
        } else if header.contains("array") && header.contains("real") && header.contains("general")
        {
            false
        } else {
            return Err(Error::Parse(format!(
                "unsupported MatrixMarket header: {header}"
            )));
        }
    } else {
        return Err(Error::Parse("missing %%MatrixMarket header".into()));
    };

    let mut size_line = None;
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    let mut dims = (0usize, 0usize, 0usize);
    let mut array_values: Vec<f64> = Vec::new();
    for line in lines {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        if size_line.is_none() {
            let parts: Vec<&str> = trimmed.split_whitespace().collect();
            let expect = if coordinate { 3 } else { 2 };
            if parts.len() != expect {
                return Err(Error::Parse(format!("malformed size line: {trimmed}")));
            }
            let nums: Vec<usize> = parts
                .iter()
                .map(|p| {
                    p.parse()
                        .map_err(|_| Error::Parse(format!("bad size field {p}")))
                })
                .collect::<Result<_>>()?;
            dims = (
                nums[0],
                nums[1],
                if coordinate {
                    nums[2]
                } else {
                    nums[0] * nums[1]
                },
            );
            size_line = Some(());
            continue;
        }
        if coordinate {
            let parts: Vec<&str> = trimmed.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::Parse(format!("malformed entry: {trimmed}")));
            }
            let r: usize = parts[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad row index {}", parts[0])))?;
            let c: usize = parts[1]
                .parse()
                .map_err(|_| Error::Parse(format!("bad col index {}", parts[1])))?;
            let v: f64 = parts[2]
                .parse()
                .map_err(|_| Error::Parse(format!("bad value {}", parts[2])))?;
            if r == 0 || c == 0 {
                return Err(Error::Parse("MatrixMarket indices are 1-based".into()));
            }
            entries.push((r - 1, c - 1, v));
        } else {
            for part in trimmed.split_whitespace() {
                let v: f64 = part
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad value {part}")))?;
                array_values.push(v);
            }
        }
    }
    if size_line.is_none() {
        return Err(Error::Parse("missing size line".into()));
    }
    let (nrows, ncols, _) = dims;
    if coordinate {
        SparseMatrix::from_triplets(nrows, ncols, entries)
    } else {
        if array_values.len() != nrows * ncols {
            return Err(Error::Parse(format!(
                "array body holds {} values, expected {}",
                array_values.len(),
                nrows * ncols
            )));
        }
        // Array format is column-major.
        let mut triplets = Vec::new();
        for c in 0..ncols {
            for r in 0..nrows {
                let v = array_values[c * nrows + r];
                if v != 0.0 {
                    triplets.push((r, c, v));
                }
            }
        }
        SparseMatrix::from_triplets(nrows, ncols, triplets)
    }
}

pub fn read_matrix_file(path: &Path) -> Result<SparseMatrix> {
    read_matrix(fs::File::open(path)?)
}

/// Writes coordinate real general with 1-based indices.
pub fn write_matrix<W: Write>(matrix: &SparseMatrix, mut out: W) -> Result<()> {
    writeln!(out, "{MM_HEADER}")?;
    writeln!(
        out,
        "{} {} {}",
        matrix.nrows(),
        matrix.ncols(),
        matrix.nnz()
    )?;
    for (r, c, v) in matrix.iter() {
        writeln!(out, "{} {} {}", r + 1, c + 1, fmt_f64(v))?;
    }
    Ok(())
}

pub fn write_matrix_file(matrix: &SparseMatrix, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_matrix(matrix, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Writes a dense matrix in MatrixMarket array format (column-major body).
pub fn write_dense_matrix<W: Write>(matrix: &DMatrix<f64>, mut out: W) -> Result<()> {
    writeln!(out, "{MM_ARRAY_HEADER}")?;
    writeln!(out, "{} {}", matrix.nrows(), matrix.ncols())?;
    for c in 0..matrix.ncols() {
        for r in 0..matrix.nrows() {
            writeln!(out, "{}", fmt_f64(matrix[(r, c)]))?;
        }
    }
    Ok(())
}

pub fn write_dense_matrix_file(matrix: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dense_matrix(matrix, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_dense_matrix_file(path: &Path) -> Result<DMatrix<f64>> {
    Ok(read_matrix_file(path)?.to_dense())
}

/// Reads a vector: either a single-column MatrixMarket file or plain
/// newline-separated decimals (with `#` comments allowed).
pub fn read_vector<R: Read>(reader: R) -> Result<DVector<f64>> {
    let mut content = String::new();
    BufReader::new(reader).read_to_string(&mut content)?;
    let Some(first) = content.lines().find(|l| !l.trim().is_empty()) else {
        return Ok(DVector::zeros(0));
    };
    if first.trim_start().starts_with("%%MatrixMarket") {
        let m = read_matrix(content.as_bytes())?;
        let dense = m.to_dense();
        if dense.ncols() == 1 {
            return Ok(DVector::from_column_slice(dense.column(0).as_slice()));
        }
        if dense.nrows() == 1 {
            return Ok(dense.row(0).transpose());
        }
        return Err(Error::Parse(format!(
            "vector file holds a {}x{} matrix",
            dense.nrows(),
            dense.ncols()
        )));
    }
    let mut values = Vec::new();
    for line in content.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with('%') {
            continue;
        }
        values.push(
            trimmed
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad value {trimmed}")))?,
        );
    }
    Ok(DVector::from_vec(values))
}

pub fn read_vector_file(path: &Path) -> Result<DVector<f64>> {
    read_vector(fs::File::open(path)?)
}

/// Writes newline-separated decimals.
pub fn write_vector<W: Write>(v: &DVector<f64>, mut out: W) -> Result<()> {
    for x in v.iter() {
        writeln!(out, "{}", fmt_f64(*x))?;
    }
    Ok(())
}

pub fn write_vector_file(v: &DVector<f64>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_vector(v, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// On-disk partition: 1-based aggregate index per state.
#[derive(Debug, Serialize, Deserialize)]
struct PartitionFile {
    m: usize,
    omega: Vec<usize>,
}

pub fn partition_to_json(partition: &Partition) -> String {
    let file = PartitionFile {
        m: partition.m(),
        omega: partition.omega().iter().map(|&a| a + 1).collect(),
    };
    serde_json::to_string_pretty(&file).expect("partition serializes")
}

pub fn partition_from_json(json: &str) -> Result<Partition> {
    let file: PartitionFile =
        serde_json::from_str(json).map_err(|e| Error::Parse(format!("partition JSON: {e}")))?;
    if file.omega.iter().any(|&a| a == 0 || a > file.m) {
        return Err(Error::Parse(
            "partition omega entries must lie in 1..=m".into(),
        ));
    }
    let partition = Partition::from_omega(file.omega.iter().map(|&a| a - 1).collect())?;
    if partition.m() != file.m {
        return Err(Error::Parse(format!(
            "partition claims {} aggregates but uses {}",
            file.m,
            partition.m()
        )));
    }
    Ok(partition)
}

pub fn read_partition_file(path: &Path) -> Result<Partition> {
    partition_from_json(&fs::read_to_string(path)?)
}

pub fn write_partition_file(partition: &Partition, path: &Path) -> Result<()> {
    fs::write(path, partition_to_json(partition))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    kind: String,
    mode: String,
    stochastic: bool,
    m: usize,
    n: usize,
    tool_version: String,
    files: ModelFiles,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFiles {
    a: String,
    dynamics: String,
    pi0: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    partition: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<String>,
}

/// Writes a reduced model as a directory of MatrixMarket files plus a JSON
/// manifest.
pub fn write_model_dir(model: &ReducedModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_dense_matrix_file(model.disagg.a(), &dir.join("A.mtx"))?;
    write_dense_matrix_file(&model.dynamics, &dir.join("dynamics.mtx"))?;
    write_vector_file(&model.pi0, &dir.join("pi0.txt"))?;
    let (mode, partition_file, alpha_file) = match model.disagg.partition() {
        Some(partition) => {
            write_partition_file(partition, &dir.join("partition.json"))?;
            let alpha = model.disagg.alpha().expect("partitioned mode has alpha");
            write_vector_file(alpha.values(), &dir.join("alpha.txt"))?;
            (
                "partitioned",
                Some("partition.json".to_string()),
                Some("alpha.txt".to_string()),
            )
        }
        None => ("abstract", None, None),
    };
    let manifest = ModelManifest {
        kind: if model.discrete { "dtmc" } else { "ctmc" }.to_string(),
        mode: mode.to_string(),
        stochastic: model.stochastic_flag,
        m: model.m(),
        n: model.n(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        files: ModelFiles {
            a: "A.mtx".to_string(),
            dynamics: "dynamics.mtx".to_string(),
            pi0: "pi0.txt".to_string(),
            partition: partition_file,
            alpha: alpha_file,
        },
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

pub fn read_model_dir(dir: &Path) -> Result<ReducedModel> {
    let manifest: ModelManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| Error::Parse(format!("model manifest: {e}")))?;
    let a = read_dense_matrix_file(&dir.join(&manifest.files.a))?;
    let dynamics = read_dense_matrix_file(&dir.join(&manifest.files.dynamics))?;
    let pi0 = read_vector_file(&dir.join(&manifest.files.pi0))?;
    let discrete = match manifest.kind.as_str() {
        "dtmc" => true,
        "ctmc" => false,
        other => return Err(Error::Parse(format!("unknown model kind {other}"))),
    };
    let disagg = match (
        manifest.mode.as_str(),
        &manifest.files.partition,
        &manifest.files.alpha,
    ) {
        ("partitioned", Some(pf), Some(af)) => {
            let partition = read_partition_file(&dir.join(pf))?;
            let alpha = AlphaWeights::new(read_vector_file(&dir.join(af))?, &partition, 1e-6)?;
            build_partitioned(&partition, &alpha)?
        }
        ("abstract", _, _) => Disaggregation::new_abstract(a.clone()),
        (mode, _, _) => return Err(Error::Parse(format!("inconsistent model mode {mode}"))),
    };
    ReducedModel::new(disagg, dynamics, pi0, discrete, DEFAULT_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn read_rejects_garbage() {
        assert!(read_matrix("not a matrix".as_bytes()).is_err());
        assert!(
            read_matrix("%%MatrixMarket matrix coordinate complex general\n1 1 0".as_bytes())
                .is_err()
        );
    }

    #[test]
    fn vector_formats() {
        let plain = "0.5\n# comment\n0.25\n0.25\n";
        let v = read_vector(plain.as_bytes()).unwrap();
        assert_eq!(v.as_slice(), &[0.5, 0.25, 0.25]);

        let mm = "%%MatrixMarket matrix coordinate real general\n3 1 2\n1 1 0.5\n3 1 0.5\n";
        let v = read_vector(mm.as_bytes()).unwrap();
        assert_eq!(v.as_slice(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn partition_json_round_trip_and_validation() {
        let p = Partition::from_blocks(4, &[vec![0, 2], vec![1], vec![3]]).unwrap();
        let json = partition_to_json(&p);
        let back = partition_from_json(&json).unwrap();
        assert_eq!(p, back);
        assert!(partition_from_json("{\"m\": 2, \"omega\": [1, 3]}").is_err());
        assert!(partition_from_json("{\"m\": 3, \"omega\": [1, 2]}").is_err());
    }

    proptest! {
        /// Sparse matrices survive the MatrixMarket round trip bit for bit.
        #[test]
        fn matrix_round_trip(
            entries in proptest::collection::vec(
                (0usize..6, 0usize..6, -1.0f64..1.0), 0..20
            )
        ) {
            let m = SparseMatrix::from_triplets(6, 6, entries).unwrap();
            let mut buf = Vec::new();
            write_matrix(&m, &mut buf).unwrap();
            let back = read_matrix(buf.as_slice()).unwrap();
            prop_assert_eq!(m, back);
        }

        /// Vectors survive the text round trip bit for bit.
        #[test]
        fn vector_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 0..12)) {
            let v = DVector::from_vec(values);
            let mut buf = Vec::new();
            write_vector(&v, &mut buf).unwrap();
            let back = read_vector(buf.as_slice()).unwrap();
            prop_assert_eq!(v, back);
        }
    }

    #[test]
    fn model_dir_round_trip() {
        use crate::aggregation::{induced_dynamics, uniform_alpha};
        use crate::benchlab::builtin_fixture;
        let f = builtin_fixture("CHAIN_A").unwrap();
        let partition = f.partition.unwrap();
        let alpha = uniform_alpha(&partition);
        let disagg = build_partitioned(&partition, &alpha).unwrap();
        let dynamics = induced_dynamics(&disagg, &f.chain).unwrap();
        let model = ReducedModel::new(
            disagg,
            dynamics,
            DVector::from_vec(vec![0.5, 0.5]),
            true,
            DEFAULT_TOL,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_model_dir(&model, dir.path()).unwrap();
        let back = read_model_dir(dir.path()).unwrap();
        assert_eq!(model.disagg.a(), back.disagg.a());
        assert_eq!(model.dynamics, back.dynamics);
        assert_eq!(model.pi0, back.pi0);
        assert_eq!(model.discrete, back.discrete);
        assert_eq!(model.stochastic_flag, back.stochastic_flag);
        assert!(back.disagg.partition().is_some());
    }
}
