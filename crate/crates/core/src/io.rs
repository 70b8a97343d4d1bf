//! Dataset CSV plus sidecar manifest, JSON artifacts, and run manifests.
//!
//! Numbers are written with 17 significant digits so every `f64` survives a
//! write/read cycle exactly, and columns are written in a canonical order, so
//! rewriting a file that was read in produces identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::nncore::Tensor2;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Sidecar describing a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub n: usize,
    pub d_e: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_z: Option<usize>,
    pub m: usize,
    #[serde(flatten)]
    pub meta: DatasetMeta,
}

/// `data.csv` → `data.manifest.json`.
pub fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("manifest.json")
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

fn canonical_header(ds: &Dataset) -> Vec<String> {
    let mut h: Vec<String> = (1..=ds.d_e()).map(|i| format!("E_{i}")).collect();
    h.extend((1..=ds.m()).map(|i| format!("Yproxy_{i}")));
    h.push("Yobs".into());
    if let Some(d) = ds.d_z() {
        h.extend((1..=d).map(|i| format!("Z_{i}")));
    }
    if ds.a_true.is_some() {
        h.push("A".into());
    }
    if ds.y_true.is_some() {
        h.push("Ytrue".into());
    }
    if ds.group.is_some() {
        h.push("group".into());
    }
    h
}

/// Writes `csv` and its manifest; returns the manifest path.
pub fn write_dataset(ds: &Dataset, csv: &Path) -> Result<PathBuf> {
    ds.validate()?;
    if let Some(parent) = csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(csv)?;
    w.write_record(canonical_header(ds))?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = ds.env.row(i).iter().map(|&v| format_number(v)).collect();
        rec.extend(ds.proxies.row(i).iter().map(|&v| format_number(v)));
        rec.push(format_number(ds.y_obs[i]));
        if let Some(z) = &ds.z_true {
            rec.extend(z.row(i).iter().map(|&v| format_number(v)));
        }
        if let Some(a) = &ds.a_true {
            rec.push(a[i].to_string());
        }
        if let Some(y) = &ds.y_true {
            rec.push(format_number(y[i]));
        }
        if let Some(g) = &ds.group {
            rec.push(g[i].clone());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        n: ds.n(),
        d_e: ds.d_e(),
        d_z: ds.d_z(),
        m: ds.m(),
        meta: ds.meta.clone(),
    };
    let mpath = manifest_path(csv);
    write_json(&mpath, &manifest)?;
    Ok(mpath)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Col {
    Env(usize),
    Proxy(usize),
    Yobs,
    Z(usize),
    A,
    Ytrue,
    Group,
}

fn parse_header(name: &str) -> Result<Col> {
    let indexed = |prefix: &str| -> Option<Result<usize>> {
        name.strip_prefix(prefix).map(|rest| {
            rest.parse::<usize>()
                .ok()
                .filter(|&i| i >= 1)
                .map(|i| i - 1)
                .ok_or_else(|| Error::Schema(format!("bad column index in header `{name}`")))
        })
    };
    if let Some(i) = indexed("E_") {
        return Ok(Col::Env(i?));
    }
    if let Some(i) = indexed("Yproxy_") {
        return Ok(Col::Proxy(i?));
    }
    if let Some(i) = indexed("Z_") {
        return Ok(Col::Z(i?));
    }
    match name {
        "Yobs" => Ok(Col::Yobs),
        "A" => Ok(Col::A),
        "Ytrue" => Ok(Col::Ytrue),
        "group" => Ok(Col::Group),
        other => Err(Error::Schema(format!("unknown column `{other}`"))),
    }
}

fn contiguous(kind: &str, mut idx: Vec<usize>) -> Result<usize> {
    idx.sort_unstable();
    for (want, &got) in idx.iter().enumerate() {
        if want != got {
            return Err(Error::Schema(format!("{kind} columns are not numbered 1..{}", idx.len())));
        }
    }
    Ok(idx.len())
}

fn parse_number(cell: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("row {row}, column {col}: `{cell}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Data(format!("row {row}, column {col}: non-finite value `{cell}`")));
    }
    Ok(v)
}

/// Reads a dataset CSV, with metadata from its manifest when one exists.
/// Rows are numbered from 1 in error messages, counting the header as row 0.
pub fn read_dataset(csv: &Path) -> Result<Dataset> {
    let file = fs::File::open(csv).map_err(|e| with_path(csv, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let cols: Vec<Col> = header.iter().map(|h| parse_header(h)).collect::<Result<_>>()?;
    for (i, c) in cols.iter().enumerate() {
        if cols[..i].contains(c) {
            return Err(Error::Schema(format!("duplicate column `{}`", header[i])));
        }
    }
    let pick = |f: fn(&Col) -> Option<usize>| cols.iter().filter_map(f).collect::<Vec<_>>();
    let d_e = contiguous("E", pick(|c| if let Col::Env(i) = c { Some(*i) } else { None }))?;
    let m = contiguous("Yproxy", pick(|c| if let Col::Proxy(i) = c { Some(*i) } else { None }))?;
    let d_z = contiguous("Z", pick(|c| if let Col::Z(i) = c { Some(*i) } else { None }))?;
    if !cols.contains(&Col::Yobs) {
        return Err(Error::Schema("missing required column `Yobs`".into()));
    }

    let mut env = Vec::new();
    let mut prox = Vec::new();
    let mut z = Vec::new();
    let mut y_obs = Vec::new();
    let mut a: Vec<Option<u8>> = Vec::new();
    let mut y_true: Vec<Option<f64>> = Vec::new();
    let mut group: Vec<Option<String>> = Vec::new();
    for (ri, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = ri + 1;
        if rec.len() != cols.len() {
            return Err(Error::Data(format!("row {row} has {} cells, header has {}", rec.len(), cols.len())));
        }
        let (mut e_row, mut p_row, mut z_row) = (vec![0.0; d_e], vec![0.0; m], vec![0.0; d_z]);
        let (mut a_cell, mut yt_cell, mut g_cell) = (None, None, None);
        for ((cell, col), name) in rec.iter().zip(&cols).zip(&header) {
            match *col {
                Col::Env(i) => e_row[i] = parse_number(cell, row, name)?,
                Col::Proxy(i) => p_row[i] = parse_number(cell, row, name)?,
                Col::Z(i) => z_row[i] = parse_number(cell, row, name)?,
                Col::Yobs => y_obs.push(parse_number(cell, row, name)?),
                Col::A if !cell.trim().is_empty() => {
                    a_cell = Some(match cell.trim() {
                        "0" => 0,
                        "1" => 1,
                        other => return Err(Error::Data(format!("row {row}, column A: `{other}` is not 0 or 1"))),
                    })
                }
                Col::Ytrue if !cell.trim().is_empty() => yt_cell = Some(parse_number(cell, row, name)?),
                Col::Group if !cell.is_empty() => g_cell = Some(cell.to_string()),
                _ => {}
            }
        }
        env.extend(e_row);
        prox.extend(p_row);
        z.extend(z_row);
        a.push(a_cell);
        y_true.push(yt_cell);
        group.push(g_cell);
    }
    let n = y_obs.len();

    fn all_or_none<T>(name: &str, present: bool, v: Vec<Option<T>>) -> Result<Option<Vec<T>>> {
        if !present || v.iter().all(Option::is_none) {
            return Ok(None);
        }
        if let Some(i) = v.iter().position(Option::is_none) {
            return Err(Error::Data(format!("row {}, column {name}: empty cell", i + 1)));
        }
        Ok(Some(v.into_iter().flatten().collect()))
    }

    let mut ds = Dataset {
        env: Tensor2::from_vec(n, d_e, env)?,
        proxies: Tensor2::from_vec(n, m, prox)?,
        y_obs,
        z_true: (d_z > 0).then(|| Tensor2::from_vec(n, d_z, z)).transpose()?,
        a_true: all_or_none("A", cols.contains(&Col::A), a)?,
        y_true: all_or_none("Ytrue", cols.contains(&Col::Ytrue), y_true)?,
        group: all_or_none("group", cols.contains(&Col::Group), group)?,
        meta: DatasetMeta {
            source: "csv".into(),
            ..DatasetMeta::default()
        },
    };

    let mpath = manifest_path(csv);
    if mpath.exists() {
        let man: DatasetManifest = read_json(&mpath)?;
        if man.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "manifest schema version {} is not supported (expected {SCHEMA_VERSION})",
                man.schema_version
            )));
        }
        if man.n != n || man.d_e != d_e || man.m != m || man.d_z.unwrap_or(0) != d_z {
            return Err(Error::Schema(format!(
                "manifest says n={}, d_e={}, m={}, d_z={:?}; file has n={n}, d_e={d_e}, m={m}, d_z={d_z}",
                man.n, man.d_e, man.m, man.d_z
            )));
        }
        ds.meta = man.meta;
    }
    ds.validate()?;
    Ok(ds)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| with_path(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name.
    pub argv: Vec<String>,
    /// Fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        Self {
            tool: "proxycal".into(),
            version: TOOL_VERSION.into(),
            command: command.into(),
            argv,
            config,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Inputs whose current contents differ from the recorded digest.
    pub fn changed_inputs(&self) -> Result<Vec<String>> {
        let mut changed = Vec::new();
        for d in &self.inputs {
            if sha256_file(Path::new(&d.path))? != d.sha256 {
                changed.push(d.path.clone());
            }
        }
        Ok(changed)
    }

    /// Outputs whose current contents differ from the recorded digest.
    pub fn changed_outputs(&self) -> Result<Vec<String>> {
        let mut changed = Vec::new();
        for d in &self.outputs {
            let p = Path::new(&d.path);
            if !p.exists() || sha256_file(p)? != d.sha256 {
                changed.push(d.path.clone());
            }
        }
        Ok(changed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample_dataset, DgpConfig};

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1.7976931348623157e308, 5e-324, 123456.789] {
            assert_eq!(format_number(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn header_names_parse() {
        assert_eq!(parse_header("E_3").unwrap(), Col::Env(2));
        assert_eq!(parse_header("Yproxy_1").unwrap(), Col::Proxy(0));
        assert!(parse_header("E_0").is_err());
        assert!(parse_header("Weird").is_err());
    }

    #[test]
    fn one_row_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, _) = sample_dataset(&DgpConfig::new(10, 2, 1, 3.0, 4)).unwrap();
        let one = ds.subset(&[3]);
        let p = dir.path().join("one.csv");
        write_dataset(&one, &p).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), one);
    }
}
