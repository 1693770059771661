//! Uniformly sampled input/output time series and their CSV form.
//!
//! A dataset file has a header row `time,<inputs...>,<outputs...>`. The
//! time column holds epoch seconds or ISO-8601 timestamps.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use crate::error::{Error, Result};

/// Relative tolerance on the spacing of consecutive timestamps.
pub const UNIFORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    time: Vec<f64>,
    dt: f64,
    input_names: Vec<String>,
    output_names: Vec<String>,
    /// Row-major `len x n_inputs`.
    inputs: Vec<f64>,
    /// Row-major `len x n_outputs`.
    outputs: Vec<f64>,
}

impl Dataset {
    /// Build and validate a dataset from row-major input and output blocks.
    pub fn new(
        time: Vec<f64>,
        input_names: Vec<String>,
        inputs: Vec<f64>,
        output_names: Vec<String>,
        outputs: Vec<f64>,
    ) -> Result<Self> {
        let n = time.len();
        if n < 2 {
            return Err(Error::Dataset(format!("need at least 2 samples, got {n}")));
        }
        if inputs.len() != n * input_names.len() || outputs.len() != n * output_names.len() {
            return Err(Error::Dimension("dataset blocks do not match the time column".into()));
        }
        if output_names.is_empty() {
            return Err(Error::Dataset("no output column".into()));
        }
        let mut seen = HashSet::new();
        for name in input_names.iter().chain(&output_names) {
            if !seen.insert(name.as_str()) {
                return Err(Error::Dataset(format!("duplicate column `{name}`")));
            }
        }
        let dt = check_uniform(&time)?;
        let ds = Self { time, dt, input_names, output_names, inputs, outputs };
        ds.check_finite()?;
        Ok(ds)
    }

    fn check_finite(&self) -> Result<()> {
        let nu = self.n_inputs();
        let ny = self.n_outputs();
        for k in 0..self.len() {
            for (j, v) in self.input(k).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Dataset(format!("non-finite value in row {}, column `{}`", k + 1, self.input_names[j])));
                }
            }
            for (j, v) in self.output(k).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Dataset(format!(
                        "non-finite value in row {}, column `{}`",
                        k + 1,
                        self.output_names[j]
                    )));
                }
            }
        }
        debug_assert_eq!(self.inputs.len(), self.len() * nu);
        debug_assert_eq!(self.outputs.len(), self.len() * ny);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Sampling interval in seconds.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn n_inputs(&self) -> usize {
        self.input_names.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.output_names.len()
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn output_names(&self) -> &[String] {
        &self.output_names
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    #[inline]
    pub fn input(&self, k: usize) -> &[f64] {
        let nu = self.n_inputs();
        &self.inputs[k * nu..(k + 1) * nu]
    }

    #[inline]
    pub fn output(&self, k: usize) -> &[f64] {
        let ny = self.n_outputs();
        &self.outputs[k * ny..(k + 1) * ny]
    }

    pub fn input_column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|k| self.input(k)[j]).collect()
    }

    pub fn output_column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|k| self.output(k)[j]).collect()
    }

    /// Rows `start..end` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Result<Dataset> {
        if start >= end || end > self.len() {
            return Err(Error::Dataset(format!("invalid row range {start}..{end} for {} rows", self.len())));
        }
        let nu = self.n_inputs();
        let ny = self.n_outputs();
        Dataset::new(
            self.time[start..end].to_vec(),
            self.input_names.clone(),
            self.inputs[start * nu..end * nu].to_vec(),
            self.output_names.clone(),
            self.outputs[start * ny..end * ny].to_vec(),
        )
    }

    /// Split into the first `n` rows and the remainder.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        Ok((self.slice(0, n)?, self.slice(n, self.len())?))
    }

    /// Reorder the columns to the given schema. Every requested column
    /// must exist and every existing column must be requested.
    pub fn with_schema(&self, inputs: &[String], outputs: &[String]) -> Result<Dataset> {
        let have: Vec<&String> = self.input_names.iter().chain(&self.output_names).collect();
        let want: HashSet<&String> = inputs.iter().chain(outputs).collect();
        let unknown: Vec<&str> = have.iter().filter(|c| !want.contains(*c)).map(|c| c.as_str()).collect();
        if !unknown.is_empty() {
            return Err(Error::Dataset(format!("unknown columns: {}", unknown.join(", "))));
        }
        let find = |name: &String| -> Result<(bool, usize)> {
            if let Some(j) = self.input_names.iter().position(|c| c == name) {
                Ok((true, j))
            } else if let Some(j) = self.output_names.iter().position(|c| c == name) {
                Ok((false, j))
            } else {
                Err(Error::Dataset(format!("missing column `{name}`")))
            }
        };
        let pick = |names: &[String]| -> Result<Vec<f64>> {
            let cols = names.iter().map(find).collect::<Result<Vec<_>>>()?;
            let mut out = Vec::with_capacity(self.len() * names.len());
            for k in 0..self.len() {
                for &(is_input, j) in &cols {
                    out.push(if is_input { self.input(k)[j] } else { self.output(k)[j] });
                }
            }
            Ok(out)
        };
        Dataset::new(self.time.clone(), inputs.to_vec(), pick(inputs)?, outputs.to_vec(), pick(outputs)?)
    }

    /// Parse a CSV file whose columns are `time` plus exactly the named
    /// inputs and outputs (in any order).
    pub fn read_csv(path: impl AsRef<Path>, inputs: &[String], outputs: &[String]) -> Result<Dataset> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_reader(file, inputs, outputs)
    }

    pub fn from_reader<R: Read>(reader: R, inputs: &[String], outputs: &[String]) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 2 {
            return Err(Error::Dataset("header needs a time column and at least one signal".into()));
        }
        let columns = header[1..].to_vec();
        let unknown: Vec<&str> = columns
            .iter()
            .filter(|c| !inputs.contains(c) && !outputs.contains(c))
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Dataset(format!("unknown columns: {}", unknown.join(", "))));
        }
        let mut time = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = row + 2;
            if rec.len() != header.len() {
                return Err(Error::Dataset(format!("row {line}: expected {} fields, got {}", header.len(), rec.len())));
            }
            time.push(parse_time(&rec[0]).map_err(|e| Error::Dataset(format!("row {line}: {e}")))?);
            for (j, field) in rec.iter().enumerate().skip(1) {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Dataset(format!("row {line}, column `{}`: cannot parse `{field}`", header[j]))
                })?;
                if !v.is_finite() {
                    return Err(Error::Dataset(format!("row {line}, column `{}`: non-finite value", header[j])));
                }
                values.push(v);
            }
        }
        let n = time.len();
        let nc = columns.len();
        let block = |names: &[String]| -> Result<Vec<f64>> {
            let idx = names
                .iter()
                .map(|name| {
                    columns
                        .iter()
                        .position(|c| c == name)
                        .ok_or_else(|| Error::Dataset(format!("missing column `{name}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut out = Vec::with_capacity(n * idx.len());
            for k in 0..n {
                out.extend(idx.iter().map(|&j| values[k * nc + j]));
            }
            Ok(out)
        };
        let ib = block(inputs)?;
        let ob = block(outputs)?;
        Dataset::new(time, inputs.to_vec(), ib, outputs.to_vec(), ob)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        self.to_writer(file)
    }

    /// Values are written in shortest round-trip form, so reading the
    /// file back yields an identical dataset.
    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        header.extend(self.input_names.iter().cloned());
        header.extend(self.output_names.iter().cloned());
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = vec![self.time[k].to_string()];
            rec.extend(self.input(k).iter().map(f64::to_string));
            rec.extend(self.output(k).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_uniform(time: &[f64]) -> Result<f64> {
    if time.iter().any(|t| !t.is_finite()) {
        return Err(Error::Dataset("non-finite timestamp".into()));
    }
    let dt = (time[time.len() - 1] - time[0]) / (time.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Dataset("timestamps must be strictly increasing".into()));
    }
    for (k, w) in time.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - dt).abs() > UNIFORM_TOL * dt {
            return Err(Error::Dataset(format!(
                "non-uniform sampling between rows {} and {} (step {step}, expected {dt})",
                k + 1,
                k + 2
            )));
        }
    }
    Ok(dt)
}

/// Epoch seconds or an ISO-8601 timestamp (naive timestamps are UTC).
pub fn parse_time(s: &str) -> std::result::Result<f64, String> {
    if let Ok(v) = s.parse::<f64>() {
        return Ok(v);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.timestamp() as f64 + t.timestamp_subsec_nanos() as f64 * 1e-9);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            let t = t.and_utc();
            return Ok(t.timestamp() as f64 + t.timestamp_subsec_nanos() as f64 * 1e-9);
        }
    }
    Err(format!("cannot parse timestamp `{s}`"))
}
