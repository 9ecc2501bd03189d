//! Files: strict JSON configs, the dataset CSV format and atomic writes.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use aniso_surf::{validate_dataset, Domain, Point, Sheet, SurfaceDataset};
use anyhow::{Context, Result};
use serde::de::DeserializeOwned;

/// Bad user input: maps to exit code 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// Strict parse: unknown keys are rejected and errors name the key path.
pub fn parse_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("FileNotFound: {}: {e}", path.display())))?;
    parse_config_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

pub fn parse_config_str<T: DeserializeOwned>(text: &str) -> std::result::Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        if at == "." {
            format!("ParseError: {}", e.inner())
        } else {
            format!("ParseError: at `{at}`: {}", e.inner())
        }
    })
}

/// Paths inside a config resolve against the config's directory.
pub fn resolve(config_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Write through a sibling temporary file renamed into place; without a path,
/// write to standard output.
pub fn write_output(path: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)?;
            lock.flush()?;
            Ok(())
        }
        Some(p) => {
            let dir = match p.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir)
                .with_context(|| format!("cannot create a file in {}", dir.display()))?;
            {
                let mut w = std::io::BufWriter::new(tmp.as_file_mut());
                body(&mut w)?;
                w.flush()?;
            }
            tmp.persist(p).with_context(|| format!("cannot write {}", p.display()))?;
            Ok(())
        }
    }
}

pub fn unix_time() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// `sheet_id,t1,t2,y` rows after `#` metadata lines for the domain and the
/// noise level. Floats use the shortest representation that round-trips.
pub fn write_dataset(w: &mut dyn Write, ds: &SurfaceDataset, extra_meta: &[(String, String)]) -> Result<()> {
    let d = &ds.domain;
    writeln!(w, "# domain: {},{},{},{}", d.t1_min, d.t1_max, d.t2_min, d.t2_max)?;
    match ds.noise_known_sigma {
        Some(s) => writeln!(w, "# noise_sigma: {s}")?,
        None => writeln!(w, "# noise_sigma: unknown")?,
    }
    for (k, v) in extra_meta {
        writeln!(w, "# {k}: {v}")?;
    }
    writeln!(w, "sheet_id,t1,t2,y")?;
    for sheet in &ds.sheets {
        for (p, y) in sheet.points.iter().zip(&sheet.values) {
            writeln!(w, "{},{},{},{}", sheet.id, p[0], p[1], y)?;
        }
    }
    Ok(())
}

fn parse_f64(s: &str, what: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| invalid(format!("ParseError: line {line}: bad {what} \"{s}\"")))
}

/// Reads a dataset file. Sheets keep their first-appearance order, and sheets
/// with identical point lists share storage. Without a domain line the
/// bounding box of the points is used.
pub fn read_dataset(path: &Path) -> Result<SurfaceDataset> {
    let file = fs::File::open(path).map_err(|e| invalid(format!("FileNotFound: {}: {e}", path.display())))?;
    let mut domain: Option<Domain> = None;
    let mut sigma: Option<f64> = None;
    let mut body = String::new();
    let mut header_line = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if let Some(meta) = line.strip_prefix('#') {
            let (k, v) = meta.split_once(':').unwrap_or((meta, ""));
            match k.trim() {
                "domain" => {
                    let parts: Vec<f64> =
                        v.split(',').map(|s| parse_f64(s, "domain bound", i + 1)).collect::<Result<_>>()?;
                    if parts.len() != 4 {
                        return Err(invalid(format!("ParseError: line {}: domain needs 4 bounds", i + 1)));
                    }
                    domain =
                        Some(Domain::new(parts[0], parts[1], parts[2], parts[3]).map_err(|e| invalid(e.to_string()))?);
                }
                "noise_sigma" if v.trim() != "unknown" => sigma = Some(parse_f64(v, "noise_sigma", i + 1)?),
                _ => {}
            }
            header_line = i + 1;
            continue;
        }
        body.push_str(&line);
        body.push('\n');
    }

    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let headers = rdr.headers().map_err(|e| invalid(format!("ParseError: {e}")))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["sheet_id", "t1", "t2", "y"] {
        return Err(invalid(format!("ParseError: {}: header must be sheet_id,t1,t2,y", path.display())));
    }
    let mut order: Vec<u64> = Vec::new();
    let mut rows: HashMap<u64, (Vec<Point>, Vec<f64>)> = HashMap::new();
    for (r, rec) in rdr.records().enumerate() {
        let line = header_line + r + 2;
        let rec = rec.map_err(|e| invalid(format!("ParseError: line {line}: {e}")))?;
        let id: u64 =
            rec[0].parse().map_err(|_| invalid(format!("ParseError: line {line}: bad sheet_id \"{}\"", &rec[0])))?;
        let p = [parse_f64(&rec[1], "t1", line)?, parse_f64(&rec[2], "t2", line)?];
        let y = parse_f64(&rec[3], "y", line)?;
        let entry = rows.entry(id).or_insert_with(|| {
            order.push(id);
            (Vec::new(), Vec::new())
        });
        entry.0.push(p);
        entry.1.push(y);
    }
    if order.is_empty() {
        return Err(invalid(format!("EmptyDataset: {} has no observations", path.display())));
    }

    let domain = match domain {
        Some(d) => d,
        None => {
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for (pts, _) in rows.values() {
                for p in pts {
                    for k in 0..2 {
                        lo[k] = lo[k].min(p[k]);
                        hi[k] = hi[k].max(p[k]);
                    }
                }
            }
            Domain::new(lo[0], hi[0], lo[1], hi[1]).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        }
    };

    let mut shared: HashMap<Vec<(u64, u64)>, Arc<[Point]>> = HashMap::new();
    let sheets = order
        .into_iter()
        .map(|id| {
            let (pts, values) = rows.remove(&id).expect("recorded id");
            let key: Vec<(u64, u64)> = pts.iter().map(|p| (p[0].to_bits(), p[1].to_bits())).collect();
            let points = Arc::clone(shared.entry(key).or_insert_with(|| pts.into()));
            Sheet { id, points, values }
        })
        .collect();
    let ds = SurfaceDataset { sheets, domain, noise_known_sigma: sigma };
    let report = validate_dataset(&ds);
    if !report.is_empty() {
        let msgs = report.messages();
        return Err(invalid(format!(
            "ValidationError: {}: {}{}",
            path.display(),
            msgs[0],
            if msgs.len() > 1 { format!(" (and {} more)", msgs.len() - 1) } else { String::new() }
        )));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use aniso_surf::RegParams;

    #[test]
    fn dataset_round_trip_is_lossless() {
        let pts: Arc<[Point]> = vec![[1.1, 1.2], [1.0 / 3.0, 1.9]].into();
        let ds = SurfaceDataset {
            sheets: vec![
                Sheet { id: 4, points: Arc::clone(&pts), values: vec![0.1 + 0.2, -1e-300] },
                Sheet { id: 2, points: pts, values: vec![std::f64::consts::PI, 5.0] },
            ],
            domain: Domain::new(0.25, 2.0, 1.0, 2.0).unwrap(),
            noise_known_sigma: Some(0.25),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_output(Some(&path), |w| write_dataset(w, &ds, &[])).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, ds);
        assert!(Arc::ptr_eq(&back.sheets[0].points, &back.sheets[1].points));
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse_config_str::<RegParams>(r#"{"detla": 0.1}"#).unwrap_err();
        assert!(e.contains("detla"), "{e}");
        let e = parse_config_str::<RegParams>(r#"{"delta": 0.1, "policy": {"knd": "x"}}"#).unwrap_err();
        assert!(e.contains("policy") && e.contains("knd"), "{e}");
    }

    #[test]
    fn omitted_tau_follows_delta() {
        let p: RegParams = parse_config_str(r#"{"delta": 0.01}"#).unwrap();
        assert_eq!(p.tau, 0.1);
        assert_eq!(p.beta_low, 0.05);
    }

    #[test]
    fn bad_rows_are_validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "# domain: 1,2,1,2\nsheet_id,t1,t2,y\n0,1.5,3.0,1\n").unwrap();
        let e = read_dataset(&path).unwrap_err();
        assert!(e.downcast_ref::<Invalid>().unwrap().0.contains("out_of_domain"));
        fs::write(&path, "id,t1,t2,y\n0,1.5,1.5,1\n").unwrap();
        assert!(read_dataset(&path).unwrap_err().downcast_ref::<Invalid>().is_some());
    }
}
