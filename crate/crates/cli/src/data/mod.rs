//! CSV input and output for list-experiment and multiple-response data.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use elicit_core::le::{LeRecord, LeSample};
use elicit_core::mle::{ContinuousRecord, MrtContinuousSample};
use elicit_core::mrt::MrtJoint;

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| anyhow!("writing {}: {}", path.display(), e.error))?;
    Ok(())
}

struct Table {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("opening {}", path.display()))?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.iter().all(String::is_empty) {
            bail!("{} has no header row", path.display());
        }
        let rows = rdr
            .records()
            .enumerate()
            .map(|(i, r)| r.with_context(|| format!("row {}: malformed CSV", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            bail!("{} has no data rows", path.display());
        }
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| anyhow!("missing column {name}"))
    }

    fn z_columns(&self) -> Vec<(String, usize)> {
        self.header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with("z_"))
            .map(|(i, h)| (h.clone(), i))
            .collect()
    }
}

fn field<'a>(row: &'a csv::StringRecord, col: usize, name: &str, line: usize) -> Result<&'a str> {
    match row.get(col) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => bail!("row {line}: missing {name}"),
    }
}

fn binary(row: &csv::StringRecord, col: usize, name: &str, line: usize) -> Result<u8> {
    match field(row, col, name, line)? {
        "0" => Ok(0),
        "1" => Ok(1),
        v => bail!("row {line}: {name} = {v:?} is not 0 or 1"),
    }
}

fn integer_code(row: &csv::StringRecord, col: usize, name: &str, line: usize) -> Result<i64> {
    let v = field(row, col, name, line)?;
    v.parse::<i64>().map_err(|_| anyhow!("row {line}: {name} = {v:?} is not an integer code"))
}

/// List-experiment data with optional direct answers of the control group.
#[derive(Debug, Clone, PartialEq)]
pub struct LeData {
    pub sample: LeSample,
    /// Direct answers of control records, in record order.
    pub direct: Option<Vec<u8>>,
    pub z_names: Vec<String>,
}

/// Reads `y`, `t`, optional `z_*` codes and optional `x_direct`.
///
/// Rows are numbered from 1 after the header.
pub fn load_le_csv(path: &Path, j_count: usize) -> Result<LeData> {
    if j_count == 0 {
        bail!("j_count must be at least 1");
    }
    let table = Table::read(path)?;
    let y_col = table.require("y")?;
    let t_col = table.require("t")?;
    let direct_col = table.column("x_direct");
    let z_cols = table.z_columns();
    let mut records = Vec::with_capacity(table.rows.len());
    let mut direct = direct_col.map(|_| Vec::new());
    for (i, row) in table.rows.iter().enumerate() {
        let line = i + 1;
        let y_raw = field(row, y_col, "y", line)?;
        let y: u32 = y_raw.parse().map_err(|_| anyhow!("row {line}: y = {y_raw:?} is not a non-negative integer"))?;
        let t = binary(row, t_col, "t", line)?;
        if t == 0 && y as usize > j_count {
            bail!("row {line}: y exceeds J for control");
        }
        if t == 1 && y as usize > j_count + 1 {
            bail!("row {line}: y exceeds J + 1 for treatment");
        }
        let z = z_cols.iter().map(|(name, c)| integer_code(row, *c, name, line)).collect::<Result<Vec<_>>>()?;
        if let (Some(col), Some(d)) = (direct_col, direct.as_mut()) {
            if t == 0 {
                d.push(binary(row, col, "x_direct", line)?);
            }
        }
        records.push(LeRecord { y, t, z });
    }
    let n0 = records.iter().filter(|r| r.t == 0).count();
    if n0 == 0 {
        bail!("no control rows (t = 0)");
    }
    if n0 == records.len() {
        bail!("no treatment rows (t = 1)");
    }
    let sample = LeSample::new(j_count, records)?;
    Ok(LeData { sample, direct, z_names: z_cols.into_iter().map(|(n, _)| n).collect() })
}

pub fn write_le_csv(path: &Path, data: &LeData) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["y".to_string(), "t".to_string()];
    header.extend(data.z_names.iter().cloned());
    if data.direct.is_some() {
        header.push("x_direct".into());
    }
    w.write_record(&header)?;
    let mut direct = data.direct.as_ref().map(|d| d.iter());
    for r in &data.sample.records {
        let mut row = vec![r.y.to_string(), r.t.to_string()];
        row.extend(r.z.iter().map(i64::to_string));
        if let Some(it) = direct.as_mut() {
            row.push(if r.t == 0 { it.next().map(u8::to_string).unwrap_or_default() } else { String::new() });
        }
        w.write_record(&row)?;
    }
    write_atomic(path, &w.into_inner()?)
}

/// Answers with integer-coded covariates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiscreteMrtData {
    pub z_names: Vec<String>,
    pub records: Vec<([u8; 3], Vec<i64>)>,
}

impl DiscreteMrtData {
    /// One table per distinct covariate vector, in sorted order.
    pub fn cells(&self) -> Vec<(Vec<i64>, MrtJoint)> {
        let mut groups: BTreeMap<Vec<i64>, Vec<[u8; 3]>> = BTreeMap::new();
        for (x, z) in &self.records {
            groups.entry(z.clone()).or_default().push(*x);
        }
        groups
            .into_iter()
            .enumerate()
            .map(|(i, (z, xs))| (z, MrtJoint::from_patterns(i as i64, xs)))
            .collect()
    }

    /// All records as one table.
    pub fn pooled(&self) -> MrtJoint {
        MrtJoint::from_patterns(0, self.records.iter().map(|(x, _)| *x))
    }

    /// One table per level of covariate `k`, in increasing level order.
    pub fn by_covariate(&self, k: usize) -> Vec<(i64, MrtJoint)> {
        let mut groups: BTreeMap<i64, Vec<[u8; 3]>> = BTreeMap::new();
        for (x, z) in &self.records {
            groups.entry(z[k]).or_default().push(*x);
        }
        groups.into_iter().map(|(level, xs)| (level, MrtJoint::from_patterns(level, xs))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MrtData {
    Discrete(DiscreteMrtData),
    Continuous { z_names: Vec<String>, sample: MrtContinuousSample },
}

/// Reads `x1, x2, x3` and the `z_*` columns, integer codes in discrete mode
/// and real values in continuous mode.
pub fn load_mrt_csv(path: &Path, continuous: bool) -> Result<MrtData> {
    let table = Table::read(path)?;
    let x_cols = [table.require("x1")?, table.require("x2")?, table.require("x3")?];
    let z_cols = table.z_columns();
    let z_names: Vec<String> = z_cols.iter().map(|(n, _)| n.clone()).collect();
    let read_x = |row: &csv::StringRecord, line: usize| -> Result<[u8; 3]> {
        Ok([
            binary(row, x_cols[0], "x1", line)?,
            binary(row, x_cols[1], "x2", line)?,
            binary(row, x_cols[2], "x3", line)?,
        ])
    };
    if continuous {
        if z_cols.is_empty() {
            bail!("continuous mode needs at least one z_ column");
        }
        let mut records = Vec::with_capacity(table.rows.len());
        for (i, row) in table.rows.iter().enumerate() {
            let line = i + 1;
            let x = read_x(row, line)?;
            let z = z_cols
                .iter()
                .map(|(name, c)| {
                    let v = field(row, *c, name, line)?;
                    match v.parse::<f64>() {
                        Ok(f) if f.is_finite() => Ok(f),
                        _ => bail!("row {line}: {name} = {v:?} is not a finite number"),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            records.push(ContinuousRecord { x, z });
        }
        let sample = MrtContinuousSample { records };
        sample.validate()?;
        return Ok(MrtData::Continuous { z_names, sample });
    }
    let mut records = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let line = i + 1;
        let x = read_x(row, line)?;
        let z = z_cols
            .iter()
            .map(|(name, c)| {
                integer_code(row, *c, name, line)
                    .map_err(|e| anyhow!("{e}; real-valued covariates need mode = continuous"))
            })
            .collect::<Result<Vec<_>>>()?;
        records.push((x, z));
    }
    Ok(MrtData::Discrete(DiscreteMrtData { z_names, records }))
}

pub fn write_mrt_csv(path: &Path, z_names: &[String], rows: &[([u8; 3], Vec<String>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["x1".to_string(), "x2".to_string(), "x3".to_string()];
    header.extend(z_names.iter().cloned());
    w.write_record(&header)?;
    for (x, z) in rows {
        let mut row: Vec<String> = x.iter().map(u8::to_string).collect();
        row.extend(z.iter().cloned());
        w.write_record(&row)?;
    }
    write_atomic(path, &w.into_inner()?)
}
