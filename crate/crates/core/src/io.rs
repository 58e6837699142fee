//! On-disk formats.
//!
//! Tables are tab-separated with a first line `# epr config_hash=<hex> seed=<n>`
//! and a column-name line. Floats are written with 17 significant digits.
//! Archives pair a little-endian column-major `f64` blob with a text manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::assembly::{MultiTypeDataset, PointObs, RegionObs};
use crate::basis::{ArealRegion, BoundingBox, CellGrid};
use crate::error::{Error, Result};
use crate::sim::SimTruth;

/// Provenance line carried by every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub config_hash: String,
    pub seed: u64,
}

impl Header {
    pub fn line(&self) -> String {
        format!("# epr config_hash={} seed={}", self.config_hash, self.seed)
    }

    pub fn parse(line: &str, source: &str) -> Result<Self> {
        let bad = || Error::data(format!("{source}:1"), format!("malformed header {line:?}"));
        let rest = line.strip_prefix("# epr ").ok_or_else(bad)?;
        let mut hash = None;
        let mut seed = None;
        for kv in rest.split_whitespace() {
            match kv.split_once('=') {
                Some(("config_hash", v)) => hash = Some(v.to_string()),
                Some(("seed", v)) => seed = v.parse().ok(),
                _ => return Err(bad()),
            }
        }
        Ok(Header {
            config_hash: hash.ok_or_else(bad)?,
            seed: seed.ok_or_else(bad)?,
        })
    }
}

/// Hex SHA-256 of `text`.
pub fn config_hash(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Full-precision float text (round-trips exactly).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Header,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Header, columns: &[&str]) -> Self {
        Table {
            header,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_text(&self) -> String {
        let mut s = self.header.line();
        s.push('\n');
        s.push_str(&self.columns.join("\t"));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join("\t"));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::data(path.display().to_string(), e.to_string()))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = Header::parse(lines.next().unwrap_or_default(), source)?;
        let columns: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::data(format!("{source}:2"), "missing column line"))?
            .split('\t')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Vec<String> = line.split('\t').map(str::to_string).collect();
            if row.len() != columns.len() {
                return Err(Error::data(
                    format!("{source}:{}", i + 3),
                    format!("expected {} fields, found {}", columns.len(), row.len()),
                ));
            }
            rows.push(row);
        }
        Ok(Table {
            header,
            columns,
            rows,
        })
    }

    pub fn col(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::data(name, "missing column"))
    }
}

fn parse_f64(s: &str, row: &str, field: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::data(row, format!("{field}: not a number: {s:?}")))
}

fn parse_list(s: &str, row: &str, field: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(|v| parse_f64(v, row, field)).collect()
}

/// Writes `grid.tsv`, `points.tsv` and `regions.tsv` into `dir`.
pub fn write_dataset(dir: &Path, ds: &MultiTypeDataset, header: &Header) -> Result<()> {
    fs::create_dir_all(dir)?;
    let g = &ds.grid;
    let mut grid = Table::new(
        header.clone(),
        &["nx", "ny", "xmin", "ymin", "xmax", "ymax"],
    );
    grid.push(vec![
        g.nx.to_string(),
        g.ny.to_string(),
        fmt_f64(g.domain.min[0]),
        fmt_f64(g.domain.min[1]),
        fmt_f64(g.domain.max[0]),
        fmt_f64(g.domain.max[1]),
    ]);
    grid.write(&dir.join("grid.tsv"))?;

    let mut pts = Table::new(
        header.clone(),
        &["id", "x", "y", "z1", "z3", "var1", "x1", "x3"],
    );
    for p in &ds.points {
        pts.push(vec![
            p.id.clone(),
            fmt_f64(p.coord[0]),
            fmt_f64(p.coord[1]),
            p.z1.map(fmt_f64).unwrap_or_default(),
            (p.z3 as u8).to_string(),
            fmt_f64(p.var1),
            fmt_list(&p.x1),
            fmt_list(&p.x3),
        ]);
    }
    pts.write(&dir.join("points.tsv"))?;

    let mut regs = Table::new(header.clone(), &["id", "cells", "z2", "var2", "x2"]);
    for r in &ds.regions {
        regs.push(vec![
            r.region.id.clone(),
            r.region
                .cells
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            fmt_f64(r.z2),
            fmt_f64(r.var2),
            fmt_list(&r.x2),
        ]);
    }
    regs.write(&dir.join("regions.tsv"))
}

/// Reads and validates a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<(MultiTypeDataset, Header)> {
    let grid_t = Table::read(&dir.join("grid.tsv"))?;
    let row = grid_t
        .rows
        .first()
        .ok_or_else(|| Error::data("grid.tsv", "no grid row"))?;
    let dim = |i: usize| -> Result<usize> {
        row[i]
            .parse()
            .map_err(|_| Error::data("grid.tsv", format!("bad grid size {:?}", row[i])))
    };
    let f = |i: usize| parse_f64(&row[i], "grid.tsv", &grid_t.columns[i]);
    let domain = BoundingBox::new([f(2)?, f(3)?], [f(4)?, f(5)?])?;
    let grid = CellGrid::new(dim(0)?, dim(1)?, domain)?;

    let pts = Table::read(&dir.join("points.tsv"))?;
    let c = |n: &str| pts.col(n);
    let (ci, cx, cy, cz1, cz3, cv, cx1, cx3) = (
        c("id")?,
        c("x")?,
        c("y")?,
        c("z1")?,
        c("z3")?,
        c("var1")?,
        c("x1")?,
        c("x3")?,
    );
    let mut points = Vec::with_capacity(pts.rows.len());
    for r in &pts.rows {
        let id = format!("point {}", r[ci]);
        let z3 = match r[cz3].as_str() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::data(
                    id,
                    format!("z3 must be 0 or 1, found {other:?}"),
                ))
            }
        };
        points.push(PointObs {
            id: r[ci].clone(),
            coord: [parse_f64(&r[cx], &id, "x")?, parse_f64(&r[cy], &id, "y")?],
            z1: if r[cz1].is_empty() {
                None
            } else {
                Some(parse_f64(&r[cz1], &id, "z1")?)
            },
            z3,
            var1: parse_f64(&r[cv], &id, "var1")?,
            x1: parse_list(&r[cx1], &id, "x1")?,
            x3: parse_list(&r[cx3], &id, "x3")?,
        });
    }

    let regs = Table::read(&dir.join("regions.tsv"))?;
    let c = |n: &str| regs.col(n);
    let (ci, cc, cz, cv, cx) = (c("id")?, c("cells")?, c("z2")?, c("var2")?, c("x2")?);
    let mut regions = Vec::with_capacity(regs.rows.len());
    for r in &regs.rows {
        let id = format!("region {}", r[ci]);
        let cells = if r[cc].is_empty() {
            Vec::new()
        } else {
            r[cc]
                .split(';')
                .map(|v| {
                    v.parse()
                        .map_err(|_| Error::data(id.clone(), format!("bad cell index {v:?}")))
                })
                .collect::<Result<Vec<usize>>>()?
        };
        regions.push(RegionObs {
            region: ArealRegion {
                id: r[ci].clone(),
                cells,
                cell_area: grid.cell_area(),
            },
            z2: parse_f64(&r[cz], &id, "z2")?,
            var2: parse_f64(&r[cv], &id, "var2")?,
            x2: parse_list(&r[cx], &id, "x2")?,
        });
    }
    let header = pts.header.clone();
    Ok((MultiTypeDataset::new(grid, points, regions)?, header))
}

/// Writes `truth_points.tsv`, `truth_regions.tsv` and `truth_effects.tsv`.
pub fn write_truth(
    dir: &Path,
    ds: &MultiTypeDataset,
    truth: &SimTruth,
    header: &Header,
) -> Result<()> {
    let mut pts = Table::new(
        header.clone(),
        &["id", "y1", "y3", "prob3", "delta1", "delta3"],
    );
    for (k, p) in ds.points.iter().enumerate() {
        pts.push(vec![
            p.id.clone(),
            fmt_f64(truth.y1[k]),
            fmt_f64(truth.y3[k]),
            fmt_f64(truth.prob3[k]),
            fmt_f64(truth.delta1[k]),
            fmt_f64(truth.delta3[k]),
        ]);
    }
    pts.write(&dir.join("truth_points.tsv"))?;
    let mut regs = Table::new(header.clone(), &["id", "y2", "delta2"]);
    for (j, r) in ds.regions.iter().enumerate() {
        regs.push(vec![
            r.region.id.clone(),
            fmt_f64(truth.y2[j]),
            fmt_f64(truth.delta2[j]),
        ]);
    }
    regs.write(&dir.join("truth_regions.tsv"))?;
    let mut eff = Table::new(header.clone(), &["block", "index", "value"]);
    for (block, v) in [("beta", &truth.beta), ("eta", &truth.eta)] {
        for (i, x) in v.iter().enumerate() {
            eff.push(vec![block.to_string(), i.to_string(), fmt_f64(*x)]);
        }
    }
    eff.write(&dir.join("truth_effects.tsv"))
}

/// Reads the truth files for the dataset they were written with.
pub fn read_truth(dir: &Path, ds: &MultiTypeDataset) -> Result<SimTruth> {
    let pts = Table::read(&dir.join("truth_points.tsv"))?;
    if pts.rows.len() != ds.points.len() {
        return Err(Error::dimension(
            "truth points",
            ds.points.len(),
            pts.rows.len(),
        ));
    }
    let col = |t: &Table, name: &str| -> Result<Vec<f64>> {
        let (c, ci) = (t.col(name)?, t.col("id")?);
        t.rows
            .iter()
            .map(|r| parse_f64(&r[c], &format!("row {}", r[ci]), name))
            .collect()
    };
    for (r, p) in pts.rows.iter().zip(&ds.points) {
        if r[0] != p.id {
            return Err(Error::data(
                format!("point {}", r[0]),
                format!("expected {}", p.id),
            ));
        }
    }
    let regs = Table::read(&dir.join("truth_regions.tsv"))?;
    if regs.rows.len() != ds.regions.len() {
        return Err(Error::dimension(
            "truth regions",
            ds.regions.len(),
            regs.rows.len(),
        ));
    }
    let eff = Table::read(&dir.join("truth_effects.tsv"))?;
    let (mut beta, mut eta) = (Vec::new(), Vec::new());
    for r in &eff.rows {
        let v = parse_f64(&r[2], &format!("effect {}[{}]", r[0], r[1]), "value")?;
        match r[0].as_str() {
            "beta" => beta.push(v),
            "eta" => eta.push(v),
            other => return Err(Error::data(format!("effect {other}"), "unknown block")),
        }
    }
    Ok(SimTruth {
        y1: col(&pts, "y1")?,
        y2: col(&regs, "y2")?,
        y3: col(&pts, "y3")?,
        prob3: col(&pts, "prob3")?,
        z1: ds.points.iter().map(|p| p.z1).collect(),
        z2: ds.regions.iter().map(|r| r.z2).collect(),
        z3: ds.points.iter().map(|p| p.z3).collect(),
        delta1: col(&pts, "delta1")?,
        delta2: col(&regs, "delta2")?,
        delta3: col(&pts, "delta3")?,
        beta,
        eta,
    })
}

/// Writes `<name>.bin` and `<name>.manifest` into `dir`.
pub fn write_archive(
    dir: &Path,
    name: &str,
    header: &Header,
    arrays: &[(&str, &DMatrix<f64>)],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let total: usize = arrays.iter().map(|(_, m)| m.len()).sum();
    let mut blob = Vec::with_capacity(8 * total);
    let mut manifest = header.line();
    manifest.push_str("\nformat\tf64-le\tcolumn-major\n");
    for (label, m) in arrays {
        let _ = writeln!(
            manifest,
            "array\t{label}\t{}\t{}\t{}",
            m.nrows(),
            m.ncols(),
            blob.len()
        );
        for v in m.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let _ = writeln!(manifest, "sha256\t{}", hex(&Sha256::digest(&blob)));
    fs::write(dir.join(format!("{name}.bin")), &blob)?;
    fs::write(dir.join(format!("{name}.manifest")), manifest)?;
    Ok(())
}

/// Reads an archive, checking sizes and the checksum.
pub fn read_archive(dir: &Path, name: &str) -> Result<(Header, BTreeMap<String, DMatrix<f64>>)> {
    let mpath = dir.join(format!("{name}.manifest"));
    let src = mpath.display().to_string();
    let text = fs::read_to_string(&mpath).map_err(|e| Error::data(src.clone(), e.to_string()))?;
    let blob = fs::read(dir.join(format!("{name}.bin")))
        .map_err(|e| Error::data(format!("{name}.bin"), e.to_string()))?;
    let mut lines = text.lines();
    let header = Header::parse(lines.next().unwrap_or_default(), &src)?;
    let mut out = BTreeMap::new();
    let mut checksum = None;
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        let at = format!("{src}:{}", i + 2);
        match f.as_slice() {
            ["format", "f64-le", "column-major"] => {}
            ["array", label, rows, cols, offset] => {
                let num = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| Error::data(at.clone(), format!("bad size {s:?}")))
                };
                let (r, c, o) = (num(rows)?, num(cols)?, num(offset)?);
                let end = o + 8 * r * c;
                if end > blob.len() {
                    return Err(Error::data(at, "array extends past the end of the blob"));
                }
                let vals: Vec<f64> = blob[o..end]
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                    .collect();
                out.insert(label.to_string(), DMatrix::from_vec(r, c, vals));
            }
            ["sha256", h] => checksum = Some(h.to_string()),
            _ => {
                return Err(Error::data(
                    at,
                    format!("unrecognized manifest line {line:?}"),
                ))
            }
        }
    }
    if checksum.as_deref() != Some(hex(&Sha256::digest(&blob)).as_str()) {
        return Err(Error::data(src, "checksum mismatch"));
    }
    Ok((header, out))
}
