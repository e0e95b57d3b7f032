//! Matrix helpers: nested-array serde and CSV matrices with a header row.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn to_rows<T: Clone>(m: &Array2<T>) -> Vec<Vec<T>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Builds a matrix from equally long rows; `None` when ragged.
pub fn from_rows<T: Clone + Default>(rows: &[Vec<T>]) -> Option<Array2<T>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    let flat: Vec<T> = rows.iter().flat_map(|r| r.iter().cloned()).collect();
    Array2::from_shape_vec((rows.len(), ncols), flat).ok()
}

/// `#[serde(with = "crate::matrix::nested")]` for `Array2` fields.
pub mod nested {
    use super::*;

    pub fn serialize<S, T>(m: &Array2<T>, s: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        T: Serialize + Clone,
    {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D, T>(d: D) -> Result<Array2<T>, D::Error>
    where
        D: Deserializer<'de>,
        T: Deserialize<'de> + Clone + Default,
    {
        let rows = Vec::<Vec<T>>::deserialize(d)?;
        from_rows(&rows).ok_or_else(|| serde::de::Error::custom("ragged matrix"))
    }
}

/// Same as [`nested`] for `Vec<Array2<T>>`.
pub mod nested_vec {
    use super::*;

    pub fn serialize<S, T>(ms: &[Array2<T>], s: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        T: Serialize + Clone,
    {
        ms.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D, T>(d: D) -> Result<Vec<Array2<T>>, D::Error>
    where
        D: Deserializer<'de>,
        T: Deserialize<'de> + Clone + Default,
    {
        let all = Vec::<Vec<Vec<T>>>::deserialize(d)?;
        all.iter()
            .map(|rows| from_rows(rows).ok_or_else(|| serde::de::Error::custom("ragged matrix")))
            .collect()
    }
}

/// Writes `m` as CSV with the given column names. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_matrix_csv<W: Write>(m: &Array2<f64>, header: &[String], writer: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(header)?;
    for row in m.rows() {
        wtr.write_record(row.iter().map(|x| x.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a CSV matrix with a header row. Decimal commas are not accepted.
pub fn read_matrix_csv<R: Read>(reader: R) -> Result<(Vec<String>, Array2<f64>), String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("line {}: `{}` is not a number", i + 2, f))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    let m = from_rows(&rows).ok_or("rows have different lengths")?;
    if !rows.is_empty() && m.ncols() != header.len() {
        return Err(format!("{} columns but {} header names", m.ncols(), header.len()));
    }
    Ok((header, m))
}
