//! Data ingestion: delimited monthly panels, publication-delay metadata,
//! stationarity transforms and standardization.
//!
//! The data file is comma-separated with a `date` column (YYYY-MM or
//! YYYY-MM-DD) followed by one column per series; empty cells are missing.
//! The metadata file lists `id,frequency,transform,delay_months,delay_day`
//! per series, where `(m, d)` means a month's value is published on day `d`
//! of the `m`-th following month. Quarterly values sit on end-of-quarter
//! rows; the delay counts from the end-of-quarter month, so GDP published
//! at the start of the last month of the next quarter carries `(3, 1)`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use nalgebra::DMatrix;

use mfbvar::core_model::MixedFrequencyDataset;
use mfbvar::{MfbvarError, Result};

/// Monthly or quarterly sampling frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frequency {
    Monthly,
    Quarterly,
}

/// Per-series metadata: identifier, frequency, stationarity transform code
/// (the seven standard codes), and publication delay.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMeta {
    pub id: String,
    pub frequency: Frequency,
    pub transform: u8,
    pub delay_months: u32,
    pub delay_day: u32,
}

impl SeriesMeta {
    pub fn validate(&self) -> Result<()> {
        if !(1..=7).contains(&self.transform) {
            return Err(MfbvarError::Validation(format!(
                "series {}: transform code {} outside 1..=7",
                self.id, self.transform
            )));
        }
        let max_months = match self.frequency {
            Frequency::Monthly => 2,
            Frequency::Quarterly => 3,
        };
        if self.delay_months > max_months {
            return Err(MfbvarError::Validation(format!(
                "series {}: publication delay of {} months exceeds {max_months}",
                self.id, self.delay_months
            )));
        }
        if !(1..=31).contains(&self.delay_day) {
            return Err(MfbvarError::Validation(format!(
                "series {}: publication day {} outside 1..=31",
                self.id, self.delay_day
            )));
        }
        Ok(())
    }
}

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Month {
    pub year: i32,
    pub month: u32,
}

impl Month {
    pub fn index(&self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    #[cfg(test)]
    pub fn from_index(ix: i64) -> Self {
        Self { year: (ix.div_euclid(12)) as i32, month: (ix.rem_euclid(12) + 1) as u32 }
    }

    pub fn is_quarter_end(&self) -> bool {
        self.month % 3 == 0
    }
}

impl std::fmt::Display for Month {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

fn parse_month(s: &str) -> Result<Month> {
    let s = s.trim();
    let full = if s.len() == 7 { format!("{s}-01") } else { s.to_string() };
    let date = NaiveDate::parse_from_str(&full, "%Y-%m-%d")
        .map_err(|_| MfbvarError::Validation(format!("cannot parse date '{s}'")))?;
    Ok(Month { year: date.year(), month: date.month() })
}

/// Result of ingestion: the model-ready dataset plus everything needed to
/// map back to the raw scale.
#[derive(Debug, Clone)]
pub struct IngestedData {
    pub dataset: MixedFrequencyDataset,
    /// Metadata in dataset order (monthly block first).
    pub meta: Vec<SeriesMeta>,
    /// Per-series `(mean, sd)` used for standardization, dataset order.
    pub standardization: Vec<(f64, f64)>,
    /// Calendar month of each row.
    pub months: Vec<Month>,
}

impl IngestedData {
    /// Maps a standardized value back to the (transformed) raw scale.
    pub fn destandardize(&self, series: usize, value: f64) -> f64 {
        let (mean, sd) = self.standardization[series];
        value * sd + mean
    }
}

fn split_csv_line(line: &str) -> Vec<String> {
    line.split(',').map(|s| s.trim().to_string()).collect()
}

/// Reads the metadata file (`id,frequency,transform,delay_months,delay_day`).
pub fn read_metadata(path: &Path) -> Result<Vec<SeriesMeta>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.to_lowercase().starts_with("id,")) {
            continue;
        }
        let fields = split_csv_line(line);
        if fields.len() != 5 {
            return Err(MfbvarError::Validation(format!(
                "metadata line {}: expected 5 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let frequency = match fields[1].to_lowercase().as_str() {
            "monthly" | "m" => Frequency::Monthly,
            "quarterly" | "q" => Frequency::Quarterly,
            other => {
                return Err(MfbvarError::Validation(format!(
                    "metadata line {}: unknown frequency '{other}'",
                    lineno + 1
                )))
            }
        };
        let parse = |s: &str, what: &str| -> Result<u32> {
            s.parse::<u32>().map_err(|_| {
                MfbvarError::Validation(format!("metadata line {}: bad {what} '{s}'", lineno + 1))
            })
        };
        let meta = SeriesMeta {
            id: fields[0].clone(),
            frequency,
            transform: parse(&fields[2], "transform")? as u8,
            delay_months: parse(&fields[3], "delay months")?,
            delay_day: parse(&fields[4], "delay day")?,
        };
        meta.validate()?;
        out.push(meta);
    }
    if out.is_empty() {
        return Err(MfbvarError::Validation("metadata file is empty".into()));
    }
    Ok(out)
}

/// Applies one of the seven standard stationarity transforms to a series of
/// optionally missing values.
pub fn apply_transform(values: &[f64], code: u8) -> Result<Vec<f64>> {
    let diff = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![f64::NAN; v.len()];
        for t in 1..v.len() {
            out[t] = v[t] - v[t - 1];
        }
        out
    };
    let logs = |v: &[f64]| -> Result<Vec<f64>> {
        v.iter()
            .map(|x| {
                if x.is_nan() {
                    Ok(f64::NAN)
                } else if *x > 0.0 {
                    Ok(x.ln())
                } else {
                    Err(MfbvarError::Validation(
                        "log transform applied to a nonpositive value".into(),
                    ))
                }
            })
            .collect()
    };
    Ok(match code {
        1 => values.to_vec(),
        2 => diff(values),
        3 => diff(&diff(values)),
        4 => logs(values)?,
        5 => diff(&logs(values)?),
        6 => diff(&diff(&logs(values)?)),
        7 => {
            // Delta of the period-on-period gross rate minus one.
            let mut rate = vec![f64::NAN; values.len()];
            for t in 1..values.len() {
                rate[t] = values[t] / values[t - 1] - 1.0;
            }
            diff(&rate)
        }
        other => {
            return Err(MfbvarError::Validation(format!("unknown transform code {other}")))
        }
    })
}

/// Last month whose value is visible for a series at the given as-of date.
fn last_visible_month(meta: &SeriesMeta, as_of: NaiveDate) -> i64 {
    let as_of_index = as_of.year() as i64 * 12 + (as_of.month() as i64 - 1);
    let published = as_of_index - meta.delay_months as i64;
    if as_of.day() >= meta.delay_day {
        published
    } else {
        published - 1
    }
}

/// Ingests a data file and its metadata as of a reference date: applies
/// transforms, masks the ragged edge implied by the publication calendar,
/// standardizes on the balanced interior, and returns the model-ready
/// dataset with back-transformation constants.
pub fn ingest(data_path: &Path, meta_path: &Path, as_of: &str) -> Result<IngestedData> {
    let as_of_date = NaiveDate::parse_from_str(as_of, "%Y-%m-%d")
        .map_err(|_| MfbvarError::Validation(format!("cannot parse as-of date '{as_of}'")))?;
    let metas = read_metadata(meta_path)?;
    let meta_by_id: HashMap<&str, &SeriesMeta> =
        metas.iter().map(|m| (m.id.as_str(), m)).collect();

    let text = std::fs::read_to_string(data_path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| MfbvarError::Validation("data file is empty".into()))?;
    let columns = split_csv_line(header);
    if columns.len() < 2 || columns[0].to_lowercase() != "date" {
        return Err(MfbvarError::Validation(
            "data header must start with a 'date' column".into(),
        ));
    }
    let ids: Vec<String> = columns[1..].to_vec();
    for id in &ids {
        if !meta_by_id.contains_key(id.as_str()) {
            return Err(MfbvarError::Validation(format!(
                "unknown series '{id}' in data (not covered by metadata)"
            )));
        }
    }

    let mut months: Vec<Month> = Vec::new();
    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); ids.len()];
    for (lineno, line) in lines.enumerate() {
        let fields = split_csv_line(line);
        if fields.len() != columns.len() {
            return Err(MfbvarError::Validation(format!(
                "data line {}: expected {} fields, got {}",
                lineno + 2,
                columns.len(),
                fields.len()
            )));
        }
        let month = parse_month(&fields[0])?;
        if let Some(prev) = months.last() {
            if month.index() != prev.index() + 1 {
                return Err(MfbvarError::Validation(format!(
                    "dates must advance by one month: {prev} followed by {month}"
                )));
            }
        }
        months.push(month);
        for (k, field) in fields[1..].iter().enumerate() {
            let v = if field.is_empty() || field.eq_ignore_ascii_case("na") {
                f64::NAN
            } else {
                field.parse::<f64>().map_err(|_| {
                    MfbvarError::Validation(format!(
                        "data line {}: cannot parse value '{field}'",
                        lineno + 2
                    ))
                })?
            };
            raw[k].push(v);
        }
    }
    let t_len = months.len();
    if t_len == 0 {
        return Err(MfbvarError::Validation("data file has no rows".into()));
    }

    // Partition into monthly and quarterly blocks, keeping file order
    // within each block.
    let mut monthly_ids: Vec<usize> = Vec::new();
    let mut quarterly_ids: Vec<usize> = Vec::new();
    for (k, id) in ids.iter().enumerate() {
        match meta_by_id[id.as_str()].frequency {
            Frequency::Monthly => monthly_ids.push(k),
            Frequency::Quarterly => quarterly_ids.push(k),
        }
    }

    // Quarterly raw values must sit on end-of-quarter months.
    for &k in &quarterly_ids {
        for t in 0..t_len {
            if raw[k][t].is_finite() && !months[t].is_quarter_end() {
                return Err(MfbvarError::Validation(format!(
                    "series {}: quarterly value on non-quarter-end row {}",
                    ids[k], months[t]
                )));
            }
        }
    }

    // Transforms, then the publication-calendar mask.
    let mut transformed: Vec<Vec<f64>> = Vec::with_capacity(ids.len());
    for (k, values) in raw.iter().enumerate() {
        let meta = meta_by_id[ids[k].as_str()];
        let series = match meta.frequency {
            Frequency::Monthly => apply_transform(values, meta.transform)?,
            Frequency::Quarterly => {
                // Transform the sequence of observed quarterly values.
                let obs: Vec<(usize, f64)> = values
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| v.is_finite())
                    .map(|(t, v)| (t, *v))
                    .collect();
                let seq: Vec<f64> = obs.iter().map(|(_, v)| *v).collect();
                let tf = apply_transform(&seq, meta.transform)?;
                let mut out = vec![f64::NAN; t_len];
                for ((t, _), v) in obs.iter().zip(tf.iter()) {
                    out[*t] = *v;
                }
                out
            }
        };
        transformed.push(series);
    }
    for (k, series) in transformed.iter_mut().enumerate() {
        let meta = meta_by_id[ids[k].as_str()];
        let visible = last_visible_month(meta, as_of_date);
        for (t, month) in months.iter().enumerate() {
            if month.index() > visible {
                series[t] = f64::NAN;
            }
        }
    }

    // Differencing transforms consume leading observations; drop rows
    // until every monthly series is defined.
    let keep_from = (0..t_len)
        .find(|&t| monthly_ids.iter().all(|&k| transformed[k][t].is_finite()))
        .ok_or_else(|| {
            MfbvarError::Validation("no period with all monthly series observed".into())
        })?;
    // Keep the quarter grid aligned by trimming to a multiple of 3 offset
    // relative to nothing in particular; rows simply shift, and the phase
    // is recomputed below from the calendar.
    let months: Vec<Month> = months[keep_from..].to_vec();
    let transformed: Vec<Vec<f64>> =
        transformed.into_iter().map(|s| s[keep_from..].to_vec()).collect();
    let t_len = months.len();

    // Assemble value matrices in (monthly, quarterly) order.
    let n_m = monthly_ids.len();
    let n_q = quarterly_ids.len();
    let mut monthly = DMatrix::from_element(t_len, n_m, f64::NAN);
    for (j, &k) in monthly_ids.iter().enumerate() {
        for t in 0..t_len {
            monthly[(t, j)] = transformed[k][t];
        }
    }
    let mut quarterly = DMatrix::from_element(t_len, n_q, f64::NAN);
    for (j, &k) in quarterly_ids.iter().enumerate() {
        for t in 0..t_len {
            quarterly[(t, j)] = transformed[k][t];
        }
    }
    let quarter_phase = (0..3)
        .find(|ph| months.iter().enumerate().all(|(t, m)| (t % 3 == *ph) == m.is_quarter_end()))
        .ok_or_else(|| {
            MfbvarError::Validation("could not align the quarter grid with the dates".into())
        })?;

    let mut dataset = MixedFrequencyDataset::from_values(monthly, quarterly, quarter_phase)?;

    // Standardize on the observed balanced interior.
    let balanced_end = dataset.balanced_end;
    let mut standardization = Vec::with_capacity(n_m + n_q);
    for j in 0..n_m {
        let vals: Vec<f64> = (0..=balanced_end)
            .map(|t| dataset.monthly[(t, j)])
            .filter(|v| v.is_finite())
            .collect();
        let (mean, sd) = moments(&vals, &ids[monthly_ids[j]])?;
        for t in 0..t_len {
            dataset.monthly[(t, j)] = (dataset.monthly[(t, j)] - mean) / sd;
        }
        standardization.push((mean, sd));
    }
    for j in 0..n_q {
        let vals: Vec<f64> = (0..t_len)
            .filter(|t| *t <= balanced_end)
            .map(|t| dataset.quarterly[(t, j)])
            .filter(|v| v.is_finite())
            .collect();
        let (mean, sd) = moments(&vals, &ids[quarterly_ids[j]])?;
        for t in 0..t_len {
            dataset.quarterly[(t, j)] = (dataset.quarterly[(t, j)] - mean) / sd;
        }
        standardization.push((mean, sd));
    }

    let mut ordered_meta = Vec::with_capacity(n_m + n_q);
    let mut series_ids = Vec::with_capacity(n_m + n_q);
    for &k in monthly_ids.iter().chain(quarterly_ids.iter()) {
        ordered_meta.push(meta_by_id[ids[k].as_str()].clone());
        series_ids.push(ids[k].clone());
    }
    dataset.series_ids = series_ids;

    Ok(IngestedData { dataset, meta: ordered_meta, standardization, months })
}

fn moments(vals: &[f64], id: &str) -> Result<(f64, f64)> {
    if vals.len() < 8 {
        return Err(MfbvarError::Validation(format!(
            "series {id}: only {} usable observations in the balanced interior",
            vals.len()
        )));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(MfbvarError::Validation(format!("series {id}: zero variance")));
    }
    Ok((mean, var.sqrt()))
}

/// Writes a dataset back to the delimited format on the (transformed) raw
/// scale, together with a matching metadata file (transform 1, no delay).
/// Re-ingesting the pair reproduces the dataset.
pub fn export_dataset(data: &IngestedData, data_path: &Path, meta_path: &Path) -> Result<()> {
    let ds = &data.dataset;
    let n_m = ds.n_monthly();
    let mut out = String::from("date");
    for id in &ds.series_ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for (t, month) in data.months.iter().enumerate() {
        let _ = write!(out, "{month}");
        for series in 0..ds.n_vars() {
            out.push(',');
            let v = if series < n_m {
                ds.monthly[(t, series)]
            } else {
                ds.quarterly[(t, series - n_m)]
            };
            if v.is_finite() {
                let _ = write!(out, "{}", data.destandardize(series, v));
            }
        }
        out.push('\n');
    }
    std::fs::write(data_path, out)?;

    let mut meta = String::from("id,frequency,transform,delay_months,delay_day\n");
    for (series, m) in data.meta.iter().enumerate() {
        let freq = if series < n_m { "monthly" } else { "quarterly" };
        let _ = writeln!(meta, "{},{},1,0,1", m.id, freq);
    }
    std::fs::write(meta_path, meta)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }

    fn toy_files(dir: &Path, t_len: usize) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut data = String::from("date,IP,RATE,GDP\n");
        for t in 0..t_len {
            let year = 2000 + t / 12;
            let month = t % 12 + 1;
            let ip = 100.0 * (1.0 + 0.01 * (t as f64 * 0.7).sin());
            let rate = 2.0 + (t as f64 * 0.3).cos();
            let gdp = if month % 3 == 0 { format!("{}", 50.0 + (t as f64 * 0.2).sin()) } else { String::new() };
            data.push_str(&format!("{year:04}-{month:02},{ip},{rate},{gdp}\n"));
        }
        let meta = "id,frequency,transform,delay_months,delay_day\n\
                    IP,monthly,5,1,16\n\
                    RATE,monthly,1,1,1\n\
                    GDP,quarterly,2,3,1\n";
        (write_file(dir, "data.csv", &data), write_file(dir, "meta.csv", meta))
    }

    #[test]
    fn delay_arithmetic() {
        let meta = SeriesMeta {
            id: "X".into(),
            frequency: Frequency::Monthly,
            transform: 1,
            delay_months: 1,
            delay_day: 4,
        };
        // As-of the 1st: publication day 4 not reached, so the last
        // observed month is two months back.
        let as_of = NaiveDate::from_ymd_opt(2020, 6, 1).unwrap();
        let last = last_visible_month(&meta, as_of);
        assert_eq!(Month::from_index(last), Month { year: 2020, month: 4 });
        // As-of the 4th the previous month becomes visible.
        let as_of = NaiveDate::from_ymd_opt(2020, 6, 4).unwrap();
        let last = last_visible_month(&meta, as_of);
        assert_eq!(Month::from_index(last), Month { year: 2020, month: 5 });
    }

    #[test]
    fn gdp_release_timing() {
        // Third-quarter GDP (September row) first appears in December.
        let meta = SeriesMeta {
            id: "GDP".into(),
            frequency: Frequency::Quarterly,
            transform: 1,
            delay_months: 3,
            delay_day: 1,
        };
        let november = NaiveDate::from_ymd_opt(2020, 11, 28).unwrap();
        let september = Month { year: 2020, month: 9 };
        assert!(last_visible_month(&meta, november) < september.index());
        let december = NaiveDate::from_ymd_opt(2020, 12, 1).unwrap();
        assert!(last_visible_month(&meta, december) >= september.index());
    }

    #[test]
    fn ingest_masks_the_ragged_edge() {
        let dir = tempfile::tempdir().unwrap();
        let (data_path, meta_path) = toy_files(dir.path(), 96);
        // Data run through 2007-12; as-of early January 2008 the slow
        // series lags two months, the fast one one month.
        let ingested = ingest(&data_path, &meta_path, "2008-01-02").unwrap();
        let ds = &ingested.dataset;
        assert_eq!(ds.n_monthly(), 2);
        assert_eq!(ds.n_quarterly(), 1);
        let t_last = ds.len() - 1; // 2007-12
        // IP (delay 1,16): December's value is published January 16 and is
        // still dark on January 2; November is already out.
        assert!(ds.monthly[(t_last, 0)].is_nan());
        assert!(ds.monthly[(t_last - 1, 0)].is_finite());
        // RATE (delay 1,1): December visible.
        assert!(ds.monthly[(t_last, 1)].is_finite());
        // GDP (3,1): 2007 Q3 (September) visible, Q4 not yet.
        let september = t_last - 3;
        assert!(ds.quarterly[(september, 0)].is_finite());
        assert!(ds.quarterly[(t_last, 0)].is_nan());
        // Quarter phase is consistent with calendar quarter ends.
        for t in 0..ds.len() {
            assert_eq!(t % 3 == ds.quarter_phase, ingested.months[t].is_quarter_end());
        }
        // Standardized interior has mean zero, variance one.
        let vals: Vec<f64> = (0..=ds.balanced_end)
            .map(|t| ds.monthly[(t, 0)])
            .filter(|v| v.is_finite())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-10);
    }

    #[test]
    fn all_fast_delays_yield_balanced_panel() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = String::from("date,A,B\n");
        for t in 0..48usize {
            let year = 2000 + t / 12;
            let month = t % 12 + 1;
            data.push_str(&format!(
                "{year:04}-{month:02},{},{}\n",
                (t as f64 * 0.37).sin(),
                (t as f64 * 0.61).cos()
            ));
        }
        let data_path = write_file(dir.path(), "data.csv", &data);
        let meta_path = write_file(
            dir.path(),
            "meta.csv",
            "id,frequency,transform,delay_months,delay_day\nA,monthly,1,0,1\nB,monthly,1,0,1\n",
        );
        let ingested = ingest(&data_path, &meta_path, "2004-06-15").unwrap();
        assert_eq!(ingested.dataset.balanced_end, ingested.dataset.len() - 1);
    }

    #[test]
    fn ingest_export_ingest_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let (data_path, meta_path) = toy_files(dir.path(), 96);
        let first = ingest(&data_path, &meta_path, "2008-01-02").unwrap();
        let out_data = dir.path().join("out_data.csv");
        let out_meta = dir.path().join("out_meta.csv");
        export_dataset(&first, &out_data, &out_meta).unwrap();
        let second = ingest(&out_data, &out_meta, "2031-01-01").unwrap();
        assert_eq!(first.dataset.observation_patterns, second.dataset.observation_patterns);
        assert_eq!(first.dataset.balanced_end, second.dataset.balanced_end);
        let ds1 = &first.dataset;
        let ds2 = &second.dataset;
        for t in 0..ds1.len() {
            for j in 0..ds1.n_monthly() {
                let (a, b) = (ds1.monthly[(t, j)], ds2.monthly[(t, j)]);
                assert_eq!(a.is_nan(), b.is_nan());
                if a.is_finite() {
                    assert!((a - b).abs() < 1e-10, "monthly {t},{j}: {a} vs {b}");
                }
            }
            for j in 0..ds1.n_quarterly() {
                let (a, b) = (ds1.quarterly[(t, j)], ds2.quarterly[(t, j)]);
                assert_eq!(a.is_nan(), b.is_nan());
                if a.is_finite() {
                    assert!((a - b).abs() < 1e-10, "quarterly {t},{j}: {a} vs {b}");
                }
            }
        }
        // Back-transform recovers the raw observed values.
        let raw = std::fs::read_to_string(&out_data).unwrap();
        assert!(raw.lines().count() > 90);
    }

    #[test]
    fn rejects_malformed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        // Unknown series.
        let data_path = write_file(dir.path(), "d1.csv", "date,X\n2000-01,1.0\n2000-02,1.1\n");
        let meta_path = write_file(
            dir.path(),
            "m1.csv",
            "id,frequency,transform,delay_months,delay_day\nY,monthly,1,0,1\n",
        );
        assert!(matches!(
            ingest(&data_path, &meta_path, "2001-01-01"),
            Err(MfbvarError::Validation(_))
        ));
        // Non-monotone dates.
        let data_path = write_file(dir.path(), "d2.csv", "date,Y\n2000-01,1.0\n2000-03,1.1\n");
        assert!(ingest(&data_path, &meta_path, "2001-01-01").is_err());
        // Quarterly value off the quarter-end grid.
        let data_path =
            write_file(dir.path(), "d3.csv", "date,Q\n2000-01,1.0\n2000-02,\n2000-03,2.0\n");
        let meta_q = write_file(
            dir.path(),
            "m3.csv",
            "id,frequency,transform,delay_months,delay_day\nQ,quarterly,1,0,1\n",
        );
        assert!(ingest(&data_path, &meta_q, "2001-01-01").is_err());
        // Excessive monthly delay.
        let meta_bad = write_file(
            dir.path(),
            "m4.csv",
            "id,frequency,transform,delay_months,delay_day\nY,monthly,1,3,1\n",
        );
        let data_path = write_file(dir.path(), "d4.csv", "date,Y\n2000-01,1.0\n");
        assert!(ingest(&data_path, &meta_bad, "2001-01-01").is_err());
    }

    #[test]
    fn transforms() {
        let v = [1.0, 2.0, 4.0, 8.0];
        let d = apply_transform(&v, 2).unwrap();
        assert!(d[0].is_nan());
        assert_eq!(d[1..], [1.0, 2.0, 4.0]);
        let dlog = apply_transform(&v, 5).unwrap();
        assert!((dlog[2] - 2.0f64.ln()).abs() < 1e-12);
        assert!(apply_transform(&[1.0, -1.0], 4).is_err());
        let dd = apply_transform(&v, 3).unwrap();
        assert!(dd[1].is_nan());
        assert_eq!(dd[2..], [1.0, 2.0]);
    }
}
