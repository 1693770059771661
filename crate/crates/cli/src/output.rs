//! Artifact writers and readers: manifest, chain traces and small CSV tables.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thermocal::param::ParameterSpace;
use thermocal::sampler::{Chain, ChainSet};
use thermocal::{Error, Result};

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub config: String,
    pub config_hash: String,
    pub seed: u64,
    pub chains: usize,
    pub versions: Versions,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub thermocal: &'static str,
    pub cli: &'static str,
}

impl Versions {
    pub fn current() -> Self {
        Self { thermocal: thermocal::VERSION, cli: env!("CARGO_PKG_VERSION") }
    }
}

/// Output directory that records the files written into it.
pub struct OutDir {
    pub path: PathBuf,
    pub written: Vec<String>,
}

impl OutDir {
    pub fn create(path: &Path) -> Result<Self> {
        fs::create_dir_all(path)?;
        Ok(Self { path: path.to_path_buf(), written: Vec::new() })
    }

    pub fn file(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.path.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.file(name);
        fs::write(p, text)?;
        Ok(())
    }

    /// Writes a CSV with a header and rows of already formatted cells.
    pub fn write_table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.file(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_manifest(&mut self, manifest: Manifest) -> Result<()> {
        let m = Manifest { artifacts: self.written.clone(), ..manifest };
        let json = serde_json::to_string_pretty(&m).map_err(|e| Error::Numerical(e.to_string()))?;
        fs::write(self.path.join("manifest.json"), json + "\n")?;
        Ok(())
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn trace_name(chain: usize) -> String {
    format!("chain_{chain}.csv")
}

/// Writes one chain as `iteration, accepted, log_post, eta_*, theta`.
pub fn write_trace(out: &mut OutDir, index: usize, chain: &Chain, space: &ParameterSpace) -> Result<()> {
    let free = space.free_names();
    let names = space.names();
    let mut header = vec!["iteration".to_string(), "accepted".into(), "log_post".into()];
    header.extend(free.iter().map(|n| format!("eta_{n}")));
    header.extend(names.iter().cloned());
    let mut w = csv::Writer::from_path(out.file(&trace_name(index)))?;
    w.write_record(&header)?;
    for i in 0..chain.len() {
        let eta = chain.draw(i);
        let theta = space.from_unconstrained(eta);
        let mut row = vec![i.to_string(), (chain.accepted[i] as u8).to_string(), num(chain.log_posts[i])];
        row.extend(eta.iter().map(|v| num(*v)));
        row.extend(theta.iter().map(|v| num(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the chain traces written by `calibrate` from `dir`.
pub fn read_traces(dir: &Path, space: &ParameterSpace) -> Result<ChainSet> {
    let free = space.free_names();
    let mut chains = Vec::new();
    for index in 0.. {
        let path = dir.join(trace_name(index));
        if !path.exists() {
            break;
        }
        let mut r = csv::Reader::from_path(&path)?;
        let header = r.headers()?.clone();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Dataset(format!("{}: missing column `{name}`", path.display())))
        };
        let acc = col("accepted")?;
        let lp = col("log_post")?;
        let etas = free.iter().map(|n| col(&format!("eta_{n}"))).collect::<Result<Vec<_>>>()?;
        let mut chain = Chain {
            dim: free.len(),
            initial: Vec::new(),
            samples: Vec::new(),
            log_posts: Vec::new(),
            accepted: Vec::new(),
            evaluations: 0,
            failure: None,
        };
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |j: usize| -> Result<f64> {
                rec[j].parse::<f64>().map_err(|_| {
                    Error::Dataset(format!("{}: row {}: `{}` is not a number", path.display(), row + 2, &rec[j]))
                })
            };
            chain.accepted.push(&rec[acc] == "1");
            chain.log_posts.push(parse(lp)?);
            for &j in &etas {
                chain.samples.push(parse(j)?);
            }
        }
        if let Some(first) = chain.samples.get(..chain.dim) {
            chain.initial = first.to_vec();
        }
        chains.push(chain);
    }
    if chains.is_empty() {
        return Err(Error::Config(format!("no chain traces found in {}", dir.display())));
    }
    Ok(ChainSet { dim: free.len(), chains })
}
