//! CSV ingestion, chronological splits, scaling, and sliding windows.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Real};

/// A multivariate series with one row per timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub names: Vec<String>,
    pub timestamps: Vec<String>,
    pub values: Matrix<f64>,
}

impl TimeSeries {
    pub fn new(names: Vec<String>, timestamps: Vec<String>, values: Matrix<f64>) -> Result<Self> {
        if names.len() != values.cols() || timestamps.len() != values.rows() {
            return Err(Error::data(format!(
                "{} names and {} timestamps do not fit a {}x{} value matrix",
                names.len(),
                timestamps.len(),
                values.rows(),
                values.cols()
            )));
        }
        Ok(TimeSeries {
            names,
            timestamps,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }
}

/// Reads a CSV whose first column is a timestamp and whose remaining
/// columns are numeric channels.
pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file).map_err(|e| match e {
        Error::Data(msg) => Error::data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn read_csv(reader: impl std::io::Read) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::data(format!("unreadable header: {e}")))?
        .clone();
    if header.len() < 2 {
        return Err(Error::data("header needs a timestamp column and at least one channel"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let width = header.len();
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::data(format!("malformed row: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(Error::data(format!(
                "line {line}: expected {width} columns, found {}",
                record.len()
            )));
        }
        timestamps.push(record[0].to_string());
        for (cell, name) in record.iter().skip(1).zip(&names) {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::data(format!("line {line}: column {name:?} has non-numeric value {cell:?}")))?;
            values.push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::data("no data rows after the header"));
    }
    let rows = timestamps.len();
    let values = Matrix::from_vec(rows, names.len(), values)?;
    TimeSeries::new(names, timestamps, values)
}

/// Writes `ts` in the same layout [`load_csv`] reads. Values use the
/// shortest representation that parses back to the identical `f64`.
pub fn write_csv(ts: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(ts, file).map_err(|e| match e {
        Error::Data(msg) => Error::data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_csv_to(ts: &TimeSeries, writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| Error::data(format!("cannot write csv: {e}"));
    let mut header = vec!["date".to_string()];
    header.extend(ts.names.iter().cloned());
    w.write_record(&header).map_err(fail)?;
    for (r, stamp) in ts.timestamps.iter().enumerate() {
        let mut row = vec![stamp.clone()];
        row.extend(ts.values.row(r).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::data(format!("cannot write csv: {e}")))?;
    Ok(())
}

/// How a series is cut into train, validation and test ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// 12/4/4 months of 30 days at hourly sampling (ETTh1, ETTh2).
    EttHourly,
    /// 12/4/4 months at 15-minute sampling (ETTm1, ETTm2).
    EttMinute,
    Fractions { train: f64, val: f64, test: f64 },
}

impl SplitRule {
    pub const DEFAULT_FRACTIONS: SplitRule = SplitRule::Fractions {
        train: 0.7,
        val: 0.1,
        test: 0.2,
    };

    /// The conventional rule for a dataset name.
    pub fn for_dataset(name: &str) -> SplitRule {
        let lower = name.to_ascii_lowercase();
        if lower.starts_with("etth") {
            SplitRule::EttHourly
        } else if lower.starts_with("ettm") {
            SplitRule::EttMinute
        } else {
            SplitRule::DEFAULT_FRACTIONS
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A series with its chronological split boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub series: TimeSeries,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Dataset {
    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }

    /// Same boundaries, values replaced.
    pub fn with_values(&self, values: Matrix<f64>) -> Result<Dataset> {
        Ok(Dataset {
            name: self.name.clone(),
            series: TimeSeries::new(self.series.names.clone(), self.series.timestamps.clone(), values)?,
            train: self.train.clone(),
            val: self.val.clone(),
            test: self.test.clone(),
        })
    }

    /// Standardizes every channel with statistics of the train range.
    pub fn standardized(&self) -> Result<(Dataset, Scaler)> {
        let scaler = Scaler::fit(&self.series.values, self.train.clone())?;
        let values = scaler.transform(&self.series.values)?;
        Ok((self.with_values(values)?, scaler))
    }
}

pub fn chronological_split(name: &str, series: TimeSeries, rule: SplitRule) -> Result<Dataset> {
    let len = series.len();
    let (a, b, c) = match rule {
        SplitRule::EttHourly | SplitRule::EttMinute => {
            let month = if rule == SplitRule::EttHourly { 30 * 24 } else { 30 * 24 * 4 };
            let (a, b, c) = (12 * month, 16 * month, 20 * month);
            if len < c {
                return Err(Error::data(format!(
                    "{name}: {len} rows is shorter than the 20 months the split needs ({c})"
                )));
            }
            (a, b, c)
        }
        SplitRule::Fractions { train, val, test } => {
            let fr = [train, val, test];
            if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || train + val + test > 1.0 + 1e-12 {
                return Err(Error::config(format!(
                    "split fractions must lie in [0, 1] and sum to at most 1, got {fr:?}"
                )));
            }
            let at = |f: f64| ((len as f64 * f).round() as usize).min(len);
            (at(train), at(train + val), at(train + val + test))
        }
    };
    if a == 0 {
        return Err(Error::data(format!("{name}: {len} rows is too short for any split")));
    }
    Ok(Dataset {
        name: name.to_string(),
        series,
        train: 0..a,
        val: a..b,
        test: b..c,
    })
}

/// Per-channel standardization fit on one range of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(values: &Matrix<f64>, rows: Range<usize>) -> Result<Scaler> {
        if rows.is_empty() || rows.end > values.rows() {
            return Err(Error::data(format!(
                "cannot fit a scaler on rows {rows:?} of {}",
                values.rows()
            )));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; values.cols()];
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(values.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; values.cols()];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(values.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Scaler { mean, std })
    }

    pub fn transform(&self, values: &Matrix<f64>) -> Result<Matrix<f64>> {
        self.apply(values, |v, m, s| (v - m) / s)
    }

    pub fn inverse(&self, values: &Matrix<f64>) -> Result<Matrix<f64>> {
        self.apply(values, |v, m, s| v * s + m)
    }

    fn apply(&self, values: &Matrix<f64>, f: impl Fn(f64, f64, f64) -> f64) -> Result<Matrix<f64>> {
        if values.cols() != self.mean.len() {
            return Err(Error::Shape {
                op: "scaler",
                left: values.shape(),
                right: (values.rows(), self.mean.len()),
            });
        }
        let mut out = values.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = f(*v, self.mean[c], self.std[c]);
            }
        }
        Ok(out)
    }
}

/// One forecasting example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T = f64> {
    /// `L × M` history.
    pub input: Matrix<T>,
    /// `T × M` future immediately after `input`.
    pub target: Matrix<T>,
    /// Row index of the first target step in the source series.
    pub origin: usize,
}

impl<T: Real> Sample<T> {
    pub fn cast<U: Real>(&self) -> Sample<U> {
        Sample {
            input: self.input.cast(),
            target: self.target.cast(),
            origin: self.origin,
        }
    }
}

/// How far validation and test inputs may reach into the preceding split.
pub fn context_reach(dataset: &Dataset, split: Split, input_len: usize) -> usize {
    match split {
        Split::Train => 0,
        _ => input_len.saturating_sub(1).min(dataset.range(split).start),
    }
}

/// Number of windows [`make_windows`] yields for a span of `len` rows.
pub fn window_count(len: usize, input_len: usize, horizon: usize, stride: usize) -> usize {
    if stride == 0 || len < input_len + horizon {
        0
    } else {
        (len - input_len - horizon) / stride + 1
    }
}

/// Sliding windows whose targets lie entirely inside `split`. Validation
/// and test inputs may start up to `L − 1` rows before the split.
/// A split too short for one window yields an empty list and a warning on
/// standard error.
pub fn make_windows(dataset: &Dataset, split: Split, input_len: usize, horizon: usize, stride: usize) -> Result<Vec<Sample>> {
    if input_len == 0 || horizon == 0 || stride == 0 {
        return Err(Error::config("window lengths and stride must be at least 1"));
    }
    let range = dataset.range(split);
    let reach = context_reach(dataset, split, input_len);
    let start = range.start - reach;
    let count = window_count(range.end - start, input_len, horizon, stride);
    if count == 0 {
        eprintln!(
            "warning: {} {split:?} split has {} rows, fewer than input_len + horizon = {}; no windows",
            dataset.name,
            range.len(),
            input_len + horizon
        );
        return Ok(Vec::new());
    }
    let values = &dataset.series.values;
    let m = values.cols();
    let rows = |from: usize, n: usize| {
        Matrix::from_vec(n, m, values.as_slice()[from * m..(from + n) * m].to_vec()).expect("in range")
    };
    Ok((0..count)
        .map(|i| {
            let s = start + i * stride;
            Sample {
                input: rows(s, input_len),
                target: rows(s + input_len, horizon),
                origin: s + input_len,
            }
        })
        .collect())
}

/// Noiseless sinusoids, one per channel, with channel `c` having period
/// `period · (1 + c/2)` and phase `c`. Timestamps are step indices.
pub fn sine_series(len: usize, channels: usize, period: f64) -> TimeSeries {
    let mut values = Matrix::zeros(len, channels);
    for t in 0..len {
        for c in 0..channels {
            let p = period * (1.0 + c as f64 / 2.0);
            values.set(t, c, (std::f64::consts::TAU * t as f64 / p + c as f64).sin());
        }
    }
    TimeSeries {
        names: (0..channels).map(|c| format!("sine{c}")).collect(),
        timestamps: (0..len).map(|t| t.to_string()).collect(),
        values,
    }
}

/// Forecast that repeats the last observed value of each channel.
pub fn persistence_forecast<T: Real>(input: &Matrix<T>, horizon: usize) -> Matrix<T> {
    let last = input.row(input.rows() - 1).to_vec();
    let mut out = Matrix::zeros(horizon, input.cols());
    for t in 0..horizon {
        out.row_mut(t).copy_from_slice(&last);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(len: usize, channels: usize) -> TimeSeries {
        let values = Matrix::from_vec(len, channels, (0..len * channels).map(|i| i as f64).collect()).unwrap();
        TimeSeries::new(
            (0..channels).map(|c| format!("c{c}")).collect(),
            (0..len).map(|t| format!("t{t}")).collect(),
            values,
        )
        .unwrap()
    }

    #[test]
    fn reads_small_fixture() {
        let text = "date,a,b\n2016-07-01 00:00:00,1.5,2\n2016-07-01 01:00:00,-3,4e-1\n2016-07-01 02:00:00,5,6\n";
        let ts = read_csv(text.as_bytes()).unwrap();
        assert_eq!(ts.names, ["a", "b"]);
        assert_eq!(ts.values.shape(), (3, 2));
        assert_eq!(ts.values.get(1, 1), 0.4);
        assert_eq!(ts.timestamps[2], "2016-07-01 02:00:00");
    }

    #[test]
    fn rejects_bad_csv() {
        assert!(matches!(read_csv("date,a\n".as_bytes()), Err(Error::Data(_))));
        let e = read_csv("date,a,b\nx,1,2\ny,1\n".as_bytes()).unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        let e = read_csv("date,a,b\nx,1,oops\n".as_bytes()).unwrap_err().to_string();
        assert!(e.contains("\"b\""), "{e}");
    }

    #[test]
    fn fraction_split_example() {
        let d = chronological_split(
            "x",
            series(100, 1),
            SplitRule::Fractions {
                train: 0.6,
                val: 0.2,
                test: 0.2,
            },
        )
        .unwrap();
        assert_eq!((d.train, d.val, d.test), (0..60, 60..80, 80..100));
        let d = chronological_split(
            "x",
            series(100, 1),
            SplitRule::Fractions {
                train: 1.0,
                val: 0.0,
                test: 0.0,
            },
        )
        .unwrap();
        assert!(d.val.is_empty() && d.test.is_empty());
        assert_eq!(d.train, 0..100);
    }

    #[test]
    fn ett_split_uses_months() {
        let d = chronological_split("ETTh1", series(17420, 1), SplitRule::for_dataset("ETTh1")).unwrap();
        assert_eq!((d.train.end, d.val.end, d.test.end), (8640, 11520, 14400));
        assert!(chronological_split("ETTh1", series(100, 1), SplitRule::EttHourly).is_err());
    }

    #[test]
    fn window_counts() {
        let d = chronological_split(
            "x",
            series(50, 2),
            SplitRule::Fractions {
                train: 1.0,
                val: 0.0,
                test: 0.0,
            },
        )
        .unwrap();
        assert_eq!(make_windows(&d, Split::Train, 40, 10, 1).unwrap().len(), 1);
        assert_eq!(make_windows(&d, Split::Train, 37, 10, 1).unwrap().len(), 4);
        assert!(make_windows(&d, Split::Train, 45, 10, 1).unwrap().is_empty());
        let w = make_windows(&d, Split::Train, 5, 3, 1).unwrap();
        assert_eq!(w[2].input.get(0, 1), 5.0);
        assert_eq!(w[2].target.get(0, 0), 14.0);
        assert_eq!(w[2].origin, 7);
    }

    #[test]
    fn scaler_uses_train_rows() {
        let values = Matrix::from_vec(4, 1, vec![1.0, 3.0, 100.0, 100.0]).unwrap();
        let s = Scaler::fit(&values, 0..2).unwrap();
        assert_eq!((s.mean[0], s.std[0]), (2.0, 1.0));
        let back = s.inverse(&s.transform(&values).unwrap()).unwrap();
        assert_eq!(back, values);
    }
}
