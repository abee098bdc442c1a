use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{LongPanel, PanelError, PanelParts};
use crate::scalar::Real;

const COVARIATE_PREFIX: &str = "W_";

fn csv_err(e: impl std::fmt::Display) -> PanelError {
    PanelError::Csv(e.to_string())
}

pub fn read_panel_csv<T: Real>(path: impl AsRef<Path>) -> Result<LongPanel<T>, PanelError> {
    let file = std::fs::File::open(path.as_ref()).map_err(csv_err)?;
    read_panel_csv_from(file)
}

/// Reads a long-form panel: `unit,time,Y,A,W_<name>...` plus optional
/// `weight` and `trials` columns, in any column order. Units keep their
/// order of first appearance.
pub fn read_panel_csv_from<T: Real, R: Read>(reader: R) -> Result<LongPanel<T>, PanelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (unit_c, time_c, y_c, a_c) = match (col("unit"), col("time"), col("Y"), col("A")) {
        (Some(u), Some(t), Some(y), Some(a)) => (u, t, y, a),
        _ => return Err(PanelError::Csv("header must contain unit, time, Y and A".into())),
    };
    let weight_c = col("weight");
    let trials_c = col("trials");
    let cov_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix(COVARIATE_PREFIX).map(|n| (i, n.to_string())))
        .collect();

    struct Row {
        time: usize,
        y: f64,
        a: u8,
        w: Vec<f64>,
        weight: Option<f64>,
        trials: Option<u64>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<Row>> = HashMap::new();
    let num = |rec: &csv::StringRecord, c: usize, line: u64| -> Result<f64, PanelError> {
        rec[c]
            .parse::<f64>()
            .map_err(|_| PanelError::Csv(format!("line {line}: bad number {:?} in column {}", &rec[c], &headers[c])))
    };
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let unit = rec[unit_c].to_string();
        let time = rec[time_c]
            .parse::<usize>()
            .map_err(|_| PanelError::Csv(format!("line {line}: time must be a nonnegative integer")))?;
        let a = match &rec[a_c] {
            "0" => 0,
            "1" => 1,
            _ => return Err(PanelError::NonBinaryTreatment { unit, time }),
        };
        let row = Row {
            time,
            y: num(&rec, y_c, line)?,
            a,
            w: cov_cols.iter().map(|(c, _)| num(&rec, *c, line)).collect::<Result<_, _>>()?,
            weight: match weight_c {
                Some(c) if !rec[c].is_empty() => Some(num(&rec, c, line)?),
                _ => None,
            },
            trials: match trials_c {
                Some(c) if !rec[c].is_empty() => Some(
                    rec[c]
                        .parse::<u64>()
                        .map_err(|_| PanelError::Csv(format!("line {line}: trials must be a positive integer")))?,
                ),
                _ => None,
            },
        };
        if !rows.contains_key(&unit) {
            order.push(unit.clone());
        }
        rows.entry(unit).or_default().push(row);
    }
    if order.is_empty() {
        return Err(PanelError::Csv("no data rows".into()));
    }

    let n_times = rows[&order[0]].len();
    let p = cov_cols.len();
    let mut parts = PanelParts {
        unit_ids: Vec::with_capacity(order.len()),
        n_times,
        covariate_names: cov_cols.into_iter().map(|(_, n)| n).collect(),
        covariates: Vec::with_capacity(order.len() * n_times * p),
        treatment: Vec::with_capacity(order.len() * n_times),
        outcome: Vec::with_capacity(order.len() * n_times),
        unit_weight: None,
        trials: None,
    };
    let mut weights = Vec::with_capacity(order.len());
    let mut trials = Vec::with_capacity(order.len());
    for unit in order {
        let mut r = rows.remove(&unit).expect("unit rows");
        r.sort_by_key(|row| row.time);
        if r.len() != n_times || r.iter().enumerate().any(|(t, row)| row.time != t) {
            return Err(PanelError::NonContiguousTime { unit });
        }
        let w0 = r[0].weight;
        let n0 = r[0].trials;
        if r.iter().any(|row| row.weight != w0 || row.trials != n0) {
            return Err(PanelError::Csv(format!("weight and trials must be constant within unit {unit}")));
        }
        weights.push(w0);
        trials.push(n0);
        for row in &r {
            parts.treatment.push(row.a);
            parts.outcome.push(T::lit(row.y));
            parts.covariates.extend(row.w.iter().map(|&v| T::lit(v)));
        }
        parts.unit_ids.push(unit);
    }
    if weights.iter().all(Option::is_some) {
        parts.unit_weight = Some(weights.into_iter().map(|w| T::lit(w.unwrap())).collect());
    } else if weights.iter().any(Option::is_some) {
        return Err(PanelError::Csv("weight must be given for all units or none".into()));
    }
    if trials.iter().all(Option::is_some) {
        parts.trials = Some(trials.into_iter().map(Option::unwrap).collect());
    } else if trials.iter().any(Option::is_some) {
        return Err(PanelError::Csv("trials must be given for all units or none".into()));
    }
    LongPanel::from_parts(parts)
}

pub fn write_panel_csv<T: Real>(panel: &LongPanel<T>, path: impl AsRef<Path>) -> Result<(), PanelError> {
    let file = std::fs::File::create(path.as_ref()).map_err(csv_err)?;
    write_panel_csv_to(panel, std::io::BufWriter::new(file))
}

/// Writes the panel in long form, one row per unit and time, `weight`
/// always and `trials` when present.
pub fn write_panel_csv_to<T: Real, W: Write>(panel: &LongPanel<T>, writer: W) -> Result<(), PanelError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = vec!["unit".into(), "time".into(), "Y".into(), "A".into()];
    header.extend(panel.covariate_names().iter().map(|n| format!("{COVARIATE_PREFIX}{n}")));
    header.push("weight".into());
    if panel.trials().is_some() {
        header.push("trials".into());
    }
    wtr.write_record(&header).map_err(csv_err)?;
    let p = panel.covariate_names().len();
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..panel.n_units() {
        for t in 0..panel.n_times() {
            rec.clear();
            rec.push(panel.unit_ids()[i].clone());
            rec.push(t.to_string());
            rec.push(panel.outcome(i, t).as_f64().to_string());
            rec.push(panel.treatment(i, t).to_string());
            for c in 0..p {
                rec.push(panel.covariate(i, t, c).as_f64().to_string());
            }
            rec.push(panel.unit_weight(i).as_f64().to_string());
            if let Some(tr) = panel.trials() {
                rec.push(tr[i].to_string());
            }
            wtr.write_record(&rec).map_err(csv_err)?;
        }
    }
    wtr.flush().map_err(csv_err)
}
