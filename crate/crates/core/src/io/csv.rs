//! Panel, effect and τ̂ tables as CSV.
//!
//! Wide panels have the header `id,t0,...,tn` and one row per individual;
//! the step h is not part of the file. Long panels have the header
//! `id,t,y` with one row per observation and carry their own time grid.
//! Numbers are written in Rust's shortest round-trip form, so reading a
//! written file reproduces every value bit for bit.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::PanelData;
use crate::sim::RandomEffectDraw;

/// Allowed relative deviation of a time step from the common step.
pub const GRID_TOLERANCE: f64 = 1e-6;

pub fn panel_to_wide_csv(panel: &PanelData) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string()];
    header.extend((0..=panel.n_steps()).map(|j| format!("t{j}")));
    w.write_record(&header)?;
    for (i, row) in panel.rows().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    into_string(w)
}

pub fn panel_to_long_csv(panel: &PanelData) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "t", "y"])?;
    for (i, row) in panel.rows().enumerate() {
        for (j, v) in row.iter().enumerate() {
            w.write_record([i.to_string(), panel.time(j).to_string(), v.to_string()])?;
        }
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::data(e.to_string()))
}

fn number(field: &str, row: usize, col: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::data_at(format!("non-numeric value '{field}'"), row, Some(col)))?;
    if !v.is_finite() {
        return Err(Error::data_at(format!("non-finite value '{field}'"), row, Some(col)));
    }
    Ok(v)
}

/// Rows of the file with 1-based line numbers, the header included.
fn records(text: &str) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::data_at(e.to_string(), k + 1, None))?;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        out.push((k + 1, rec));
    }
    Ok(out)
}

/// Parse a wide panel. `h` is the observation step.
pub fn parse_wide(text: &str, h: f64) -> Result<PanelData> {
    let recs = records(text)?;
    let (_, header) = recs.first().ok_or_else(|| Error::data("empty panel file"))?;
    let width = header.len();
    if width < 3 || header[0].trim() != "id" {
        return Err(Error::data_at("expected a header 'id,t0,...,tn' with at least two time columns", 1, None));
    }
    for (c, name) in header.iter().enumerate().skip(1) {
        if name.trim() != format!("t{}", c - 1) {
            return Err(Error::data_at(format!("expected column 't{}', found '{name}'", c - 1), 1, Some(c + 1)));
        }
    }
    let mut rows = Vec::with_capacity(recs.len() - 1);
    for (line, rec) in &recs[1..] {
        if rec.len() != width {
            return Err(Error::data_at(format!("ragged row: {} fields, header has {width}", rec.len()), *line, None));
        }
        let values = (1..width).map(|c| number(&rec[c], *line, c + 1)).collect::<Result<Vec<_>>>()?;
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::data("panel file has no individuals"));
    }
    PanelData::from_rows(rows, h)
}

/// Parse a long panel. Individuals appear in order of first occurrence and
/// must share one equally spaced grid.
pub fn parse_long(text: &str) -> Result<PanelData> {
    let recs = records(text)?;
    let (_, header) = recs.first().ok_or_else(|| Error::data("empty panel file"))?;
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != ["id", "t", "y"] {
        return Err(Error::data_at("expected the header 'id,t,y'", 1, None));
    }
    let mut ids: Vec<String> = Vec::new();
    let mut series: Vec<Vec<(f64, f64, usize)>> = Vec::new();
    for (line, rec) in &recs[1..] {
        if rec.len() != 3 {
            return Err(Error::data_at(format!("ragged row: {} fields, expected 3", rec.len()), *line, None));
        }
        let id = rec[0].trim().to_string();
        let t = number(&rec[1], *line, 2)?;
        let y = number(&rec[2], *line, 3)?;
        let k = match ids.iter().position(|x| *x == id) {
            Some(k) => k,
            None => {
                ids.push(id);
                series.push(Vec::new());
                ids.len() - 1
            }
        };
        series[k].push((t, y, *line));
    }
    let first = series.first().ok_or_else(|| Error::data("panel file has no observations"))?;
    if first.len() < 2 {
        return Err(Error::data("each individual needs at least two observations"));
    }
    let t0 = first[0].0;
    let h = (first[first.len() - 1].0 - t0) / (first.len() - 1) as f64;
    if !(h > 0.0) {
        return Err(Error::data("observation times must increase"));
    }
    let mut rows = Vec::with_capacity(series.len());
    for (k, s) in series.iter().enumerate() {
        if s.len() != first.len() {
            return Err(Error::data_at(
                format!("individual '{}' has {} observations, the first has {}", ids[k], s.len(), first.len()),
                s[0].2,
                None,
            ));
        }
        for (j, &(t, _, line)) in s.iter().enumerate() {
            let expected = t0 + j as f64 * h;
            if (t - expected).abs() > GRID_TOLERANCE * h {
                return Err(Error::data_at(
                    format!("observation times must be equally spaced on a common grid (expected t={expected}, found {t})"),
                    line,
                    Some(2),
                ));
            }
        }
        rows.push(s.iter().map(|&(_, y, _)| y).collect());
    }
    PanelData::from_rows_at(rows, h, t0)
}

/// Read a panel file, detecting the format from its header, and multiply
/// every value by `scale`. Wide files need `h`.
pub fn ingest_panel(path: &Path, scale: f64, h: Option<f64>) -> Result<PanelData> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("scale must be positive, got {scale}")));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data { message: format!("cannot read {}: {e}", path.display()), row: None, column: None })?;
    let first = text.lines().next().unwrap_or("");
    let long = first.split(',').map(str::trim).collect::<Vec<_>>() == ["id", "t", "y"];
    let panel = if long {
        let p = parse_long(&text)?;
        if let Some(h) = h {
            if (p.h() - h).abs() > GRID_TOLERANCE * h {
                return Err(Error::data(format!("file step {} differs from the requested step {h}", p.h())));
            }
        }
        p
    } else {
        let h = h.ok_or_else(|| Error::Config("a wide panel needs the observation step (--step)".into()))?;
        parse_wide(&text, h)?
    };
    Ok(if scale == 1.0 { panel } else { panel.scaled(scale) })
}

/// `id,tau,<labels>` sidecar with the simulated random effects.
pub fn effects_to_csv(effects: &[RandomEffectDraw], labels: &[String]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "tau".into()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (i, e) in effects.iter().enumerate() {
        let mut rec = vec![i.to_string(), e.tau.to_string()];
        rec.extend(e.phi_r.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    into_string(w)
}

pub fn parse_effects(text: &str) -> Result<Vec<RandomEffectDraw>> {
    let recs = records(text)?;
    let (_, header) = recs.first().ok_or_else(|| Error::data("empty effects file"))?;
    if header.len() < 2 || header[0].trim() != "id" || header[1].trim() != "tau" {
        return Err(Error::data_at("expected a header starting with 'id,tau'", 1, None));
    }
    recs[1..]
        .iter()
        .map(|(line, rec)| {
            if rec.len() != header.len() {
                return Err(Error::data_at("ragged row", *line, None));
            }
            Ok(RandomEffectDraw {
                tau: number(&rec[1], *line, 2)?,
                phi_r: (2..rec.len()).map(|c| number(&rec[c], *line, c + 1)).collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// `id,<column>` table of one value per individual.
pub fn column_to_csv(column: &str, values: &[f64]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", column])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    into_string(w)
}

/// Pointwise quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `t,lower,median,upper` band of a simulated panel at the given levels.
pub fn band_to_csv(panel: &PanelData, lower: f64, upper: f64) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "lower", "median", "upper"])?;
    for j in 0..=panel.n_steps() {
        let mut col: Vec<f64> = panel.rows().map(|r| r[j]).collect();
        col.sort_by(f64::total_cmp);
        w.write_record([
            panel.time(j).to_string(),
            quantile(&col, lower).to_string(),
            quantile(&col, 0.5).to_string(),
            quantile(&col, upper).to_string(),
        ])?;
    }
    into_string(w)
}
