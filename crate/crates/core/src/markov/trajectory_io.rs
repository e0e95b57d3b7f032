use std::io::{Read, Write};

use super::{MarkovError, Trajectory};

fn csv_err(e: impl std::fmt::Display) -> MarkovError {
    MarkovError::Csv(e.to_string())
}

/// Writes `individual_id,start_year,<one column per year>` with 1-based
/// segment labels. All trajectories must share start year and length.
pub fn write_trajectories_csv<W: Write>(trajectories: &[Trajectory], writer: W) -> Result<(), MarkovError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let Some(first) = trajectories.first() else {
        wtr.write_record(["individual_id", "start_year"]).map_err(csv_err)?;
        return wtr.flush().map_err(csv_err);
    };
    let (start, len) = (first.start_year, first.states.len());
    if trajectories.iter().any(|t| t.start_year != start || t.states.len() != len) {
        return Err(MarkovError::HorizonMismatch);
    }
    let mut header = vec!["individual_id".to_string(), "start_year".to_string()];
    header.extend((0..len).map(|i| (start + i as i32).to_string()));
    wtr.write_record(&header).map_err(csv_err)?;
    let mut row = Vec::with_capacity(header.len());
    for t in trajectories {
        row.clear();
        row.push(t.individual_id.clone());
        row.push(t.start_year.to_string());
        row.extend(t.states.iter().map(|s| (s + 1).to_string()));
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush().map_err(csv_err)
}

pub fn read_trajectories_csv<R: Read>(reader: R) -> Result<Vec<Trajectory>, MarkovError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| MarkovError::Csv(format!("line {}: bad {what}", i + 2));
        let start_year = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("start_year"))?;
        let states = rec
            .iter()
            .skip(2)
            .map(|f| match f.parse::<usize>() {
                Ok(label) if label >= 1 => Ok(label - 1),
                _ => Err(bad("state")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(Trajectory {
            individual_id: rec.get(0).unwrap_or_default().to_string(),
            start_year,
            states,
        });
    }
    Ok(out)
}
