use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{DataError, Panel, PanelRecord, SuppValue, VariableKind, VariableSpec};

/// Reads a long-format panel: `id,year,<variables in spec order>`.
pub fn ingest_csv(path: impl AsRef<Path>, spec: &VariableSpec) -> Result<Panel, DataError> {
    read_csv(File::open(path)?, spec)
}

pub fn read_csv<R: Read>(reader: R, spec: &VariableSpec) -> Result<Panel, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column_of = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let id_col = column_of("id")?;
    let year_col = column_of("year")?;
    let active: Vec<(usize, &str)> = spec
        .active()
        .map(|v| Ok((column_of(&v.id)?, v.id.as_str())))
        .collect::<Result<_, DataError>>()?;
    let supp: Vec<(usize, &str, VariableKind)> = spec
        .supplementary()
        .map(|v| Ok((column_of(&v.id)?, v.id.as_str(), v.kind)))
        .collect::<Result<_, DataError>>()?;

    let mut records = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let row = row?;
        let line = idx + 2;
        let field = |col: usize| row.get(col).unwrap_or("").trim();
        let parse_err = |column: &str, value: &str| DataError::Parse {
            line,
            column: column.to_string(),
            value: value.to_string(),
        };
        let year = field(year_col)
            .parse::<i32>()
            .map_err(|_| parse_err("year", field(year_col)))?;
        let mut answers = Vec::with_capacity(active.len());
        for &(col, name) in &active {
            let raw = field(col);
            // Out-of-range includes zero/negative integers; anything else is a parse error.
            let m = match raw.parse::<i64>() {
                Ok(m) if (1..=i64::from(u16::MAX)).contains(&m) => m as u16,
                Ok(_) => {
                    return Err(DataError::ModalityOutOfRange {
                        line,
                        variable: name.to_string(),
                    })
                }
                Err(_) => return Err(parse_err(name, raw)),
            };
            answers.push(m);
        }
        let mut supplementary = Vec::with_capacity(supp.len());
        for &(col, name, kind) in &supp {
            let raw = field(col);
            let value = if raw.is_empty() {
                SuppValue::Missing
            } else {
                match kind {
                    VariableKind::Categorical { .. } => SuppValue::Modality(
                        raw.parse::<u16>().map_err(|_| parse_err(name, raw))?,
                    ),
                    VariableKind::Numeric => {
                        SuppValue::Numeric(raw.parse::<f64>().map_err(|_| parse_err(name, raw))?)
                    }
                }
            };
            supplementary.push(value);
        }
        records.push(PanelRecord {
            individual_id: field(id_col).to_string(),
            year,
            answers,
            supplementary,
        });
    }
    Panel::new(spec.clone(), records)
}

/// Writes `panel` in the layout accepted by [`read_csv`]: active variables
/// first, then supplementary ones.
pub fn write_csv<W: Write>(panel: &Panel, writer: W) -> Result<(), DataError> {
    let spec = panel.spec();
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "year".to_string()];
    header.extend(spec.active().map(|v| v.id.clone()));
    header.extend(spec.supplementary().map(|v| v.id.clone()));
    wtr.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for rec in panel.records() {
        row.clear();
        row.push(rec.individual_id.clone());
        row.push(rec.year.to_string());
        row.extend(rec.answers.iter().map(|m| m.to_string()));
        row.extend(rec.supplementary.iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Role, Variable};

    fn spec() -> VariableSpec {
        VariableSpec::new(vec![
            Variable {
                id: "v1".into(),
                name: "first".into(),
                role: Role::Active,
                kind: VariableKind::Categorical { modalities: 4 },
            },
            Variable {
                id: "age".into(),
                name: "age".into(),
                role: Role::Supplementary,
                kind: VariableKind::Numeric,
            },
        ])
        .unwrap()
    }

    #[test]
    fn minimal_panel() {
        let text = "id,year,v1,age\nA,1990,1,31.5\nA,1991,2,\nA,1992,4,33\n";
        let panel = read_csv(text.as_bytes(), &spec()).unwrap();
        assert_eq!(panel.individuals().len(), 1);
        assert_eq!(panel.len(), 3);
        assert_eq!(panel.records()[1].supplementary[0], SuppValue::Missing);
    }

    #[test]
    fn errors_carry_locations() {
        let s = spec();
        let out = read_csv("id,year,v1,age\nA,1990,5,\n".as_bytes(), &s);
        assert!(matches!(out, Err(DataError::ModalityOutOfRange { line: 2, .. })));
        let gap = read_csv("id,year,v1,age\nA,1990,1,\nA,1992,1,\n".as_bytes(), &s);
        assert!(matches!(gap, Err(DataError::GapInYears(ref id)) if id == "A"));
        let dup = read_csv("id,year,v1,age\nA,1990,1,\nA,1990,1,\n".as_bytes(), &s);
        assert!(matches!(dup, Err(DataError::DuplicateObservation { line: 3 })));
        let missing = read_csv("id,year,age\nA,1990,\n".as_bytes(), &s);
        assert!(matches!(missing, Err(DataError::MissingColumn(ref c)) if c == "v1"));
        let garbage = read_csv("id,year,v1,age\nA,1990,x,\n".as_bytes(), &s);
        assert!(matches!(garbage, Err(DataError::Parse { line: 2, .. })));
    }
}
