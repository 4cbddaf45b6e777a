//! On-disk formats shared by the commands.
//!
//! Everything is diffable text: CSV for correspondences, intrinsics, and
//! normals, ASCII PLY for point clouds, JSON for reports. Floats use the
//! shortest round-trip representation, so output is byte-stable for a given
//! input and seed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use nrsfm_core::{Intrinsics, Vec3};

pub const CORRESPONDENCES_FILE: &str = "correspondences.csv";
pub const INTRINSICS_FILE: &str = "intrinsics.csv";
pub const GT_NORMALS_FILE: &str = "gt_normals.csv";
pub const GT_POINTS_FILE: &str = "gt_points.csv";
pub const SCENE_FILE: &str = "scene.json";
pub const NORMALS_FILE: &str = "normals.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Point-cloud file for one image.
pub fn ply_file(image: u32) -> String {
    format!("points_{image}.ply")
}

/// One observation: a tracked point seen in an image, in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservationRow {
    pub image: u32,
    pub point: u32,
    pub x_px: f64,
    pub y_px: f64,
}

/// One (image, point) cell of a normal field. `normal` is `None` for cells
/// the pipeline observed but could not reconstruct.
#[derive(Clone, Copy, Debug)]
pub struct NormalRow {
    pub image: u32,
    pub point: u32,
    pub normal: Option<Vec3>,
    pub support: usize,
    pub rejected_reason: &'static str,
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn expect_header(rdr: &mut csv::Reader<File>, want: &[&str], path: &Path) -> Result<()> {
    let got = rdr
        .headers()
        .with_context(|| format!("reading header of {}", path.display()))?;
    if got.iter().ne(want.iter().copied()) {
        bail!(
            "{}: expected header {}, got {}",
            path.display(),
            want.join(","),
            got.iter().collect::<Vec<_>>().join(",")
        );
    }
    Ok(())
}

/// Parse one field, reporting the file, 1-based data row, and column name.
fn field<T>(rec: &csv::StringRecord, idx: usize, name: &str, path: &Path, row: usize) -> Result<T>
where
    T: std::str::FromStr,
    T::Err: std::error::Error + Send + Sync + 'static,
{
    let raw = rec
        .get(idx)
        .with_context(|| format!("{}: row {}: missing column {name}", path.display(), row + 1))?;
    raw.trim()
        .parse()
        .with_context(|| format!("{}: row {}: bad {name} value {raw:?}", path.display(), row + 1))
}

fn finite(value: f64, name: &str, path: &Path, row: usize) -> Result<f64> {
    if !value.is_finite() {
        bail!("{}: row {}: non-finite {name}", path.display(), row + 1);
    }
    Ok(value)
}

pub fn write_correspondences(path: &Path, rows: &[ObservationRow]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["image_id", "point_id", "x_px", "y_px"])?;
    for r in rows {
        w.write_record([
            r.image.to_string(),
            r.point.to_string(),
            r.x_px.to_string(),
            r.y_px.to_string(),
        ])?;
    }
    Ok(w.flush()?)
}

pub fn read_correspondences(path: &Path) -> Result<Vec<ObservationRow>> {
    let mut rdr = open(path)?;
    expect_header(&mut rdr, &["image_id", "point_id", "x_px", "y_px"], path)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        rows.push(ObservationRow {
            image: field(&rec, 0, "image_id", path, i)?,
            point: field(&rec, 1, "point_id", path, i)?,
            x_px: finite(field(&rec, 2, "x_px", path, i)?, "x_px", path, i)?,
            y_px: finite(field(&rec, 3, "y_px", path, i)?, "y_px", path, i)?,
        });
    }
    Ok(rows)
}

/// Per-image intrinsics; a file with a single data row applies to every
/// image.
#[derive(Clone, Debug)]
pub struct IntrinsicsTable {
    rows: BTreeMap<u32, Intrinsics>,
    shared: Option<Intrinsics>,
}

impl IntrinsicsTable {
    pub fn for_image(&self, image: u32) -> Result<Intrinsics> {
        if let Some(k) = self.rows.get(&image) {
            return Ok(*k);
        }
        self.shared
            .with_context(|| format!("no intrinsics for image {image}"))
    }
}

pub fn write_intrinsics(path: &Path, rows: &[(u32, Intrinsics)]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["image_id", "fx", "fy", "cx", "cy"])?;
    for (image, k) in rows {
        w.write_record([
            image.to_string(),
            k.fx.to_string(),
            k.fy.to_string(),
            k.cx.to_string(),
            k.cy.to_string(),
        ])?;
    }
    Ok(w.flush()?)
}

pub fn read_intrinsics(path: &Path) -> Result<IntrinsicsTable> {
    let mut rdr = open(path)?;
    expect_header(&mut rdr, &["image_id", "fx", "fy", "cx", "cy"], path)?;
    let mut rows = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        let image: u32 = field(&rec, 0, "image_id", path, i)?;
        let k = Intrinsics::new(
            field(&rec, 1, "fx", path, i)?,
            field(&rec, 2, "fy", path, i)?,
            field(&rec, 3, "cx", path, i)?,
            field(&rec, 4, "cy", path, i)?,
        )
        .with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        if rows.insert(image, k).is_some() {
            bail!("{}: duplicate intrinsics for image {image}", path.display());
        }
    }
    if rows.is_empty() {
        bail!("{}: no intrinsics rows", path.display());
    }
    let shared = (rows.len() == 1).then(|| *rows.values().next().expect("non-empty"));
    Ok(IntrinsicsTable { rows, shared })
}

/// Reconstruction flavor: empty nx,ny,nz for cells without a normal.
pub fn write_normals(path: &Path, rows: &[NormalRow]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["image_id", "point_id", "nx", "ny", "nz", "support", "rejected_reason"])?;
    for r in rows {
        let n = r.normal.map(|n| (n.x.to_string(), n.y.to_string(), n.z.to_string()));
        let (nx, ny, nz) = n.unwrap_or_default();
        w.write_record([
            r.image.to_string(),
            r.point.to_string(),
            nx,
            ny,
            nz,
            r.support.to_string(),
            r.rejected_reason.to_string(),
        ])?;
    }
    Ok(w.flush()?)
}

/// Ground-truth flavor: every row carries a normal.
pub fn write_plain_normals(path: &Path, rows: &[(u32, u32, Vec3)]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["image_id", "point_id", "nx", "ny", "nz"])?;
    for (image, point, n) in rows {
        w.write_record([
            image.to_string(),
            point.to_string(),
            n.x.to_string(),
            n.y.to_string(),
            n.z.to_string(),
        ])?;
    }
    Ok(w.flush()?)
}

/// Accepts both normal-file flavors; the 5-column ground-truth form reads as
/// support 0 with no rejection tag.
pub fn read_normals(path: &Path) -> Result<Vec<NormalRow>> {
    let mut rdr = open(path)?;
    let header = rdr
        .headers()
        .with_context(|| format!("reading header of {}", path.display()))?
        .clone();
    let plain = ["image_id", "point_id", "nx", "ny", "nz"];
    let full = ["image_id", "point_id", "nx", "ny", "nz", "support", "rejected_reason"];
    let has_support = if header.iter().eq(full) {
        true
    } else if header.iter().eq(plain) {
        false
    } else {
        bail!(
            "{}: expected header {} (optionally with support,rejected_reason), got {}",
            path.display(),
            plain.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        );
    };
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        let empty = (2..5).all(|idx| rec.get(idx).is_some_and(|f| f.trim().is_empty()));
        let normal = if empty {
            None
        } else {
            Some(Vec3::new(
                finite(field(&rec, 2, "nx", path, i)?, "nx", path, i)?,
                finite(field(&rec, 3, "ny", path, i)?, "ny", path, i)?,
                finite(field(&rec, 4, "nz", path, i)?, "nz", path, i)?,
            ))
        };
        rows.push(NormalRow {
            image: field(&rec, 0, "image_id", path, i)?,
            point: field(&rec, 1, "point_id", path, i)?,
            normal,
            support: if has_support { field(&rec, 5, "support", path, i)? } else { 0 },
            rejected_reason: "",
        });
    }
    Ok(rows)
}

pub fn write_points_csv(path: &Path, rows: &[(u32, u32, Vec3)]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["image_id", "point_id", "x", "y", "z"])?;
    for (image, point, p) in rows {
        w.write_record([
            image.to_string(),
            point.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.z.to_string(),
        ])?;
    }
    Ok(w.flush()?)
}

pub fn read_points_csv(path: &Path) -> Result<Vec<(u32, u32, Vec3)>> {
    let mut rdr = open(path)?;
    expect_header(&mut rdr, &["image_id", "point_id", "x", "y", "z"], path)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        rows.push((
            field(&rec, 0, "image_id", path, i)?,
            field(&rec, 1, "point_id", path, i)?,
            Vec3::new(
                finite(field(&rec, 2, "x", path, i)?, "x", path, i)?,
                finite(field(&rec, 3, "y", path, i)?, "y", path, i)?,
                finite(field(&rec, 4, "z", path, i)?, "z", path, i)?,
            ),
        ));
    }
    Ok(rows)
}

/// ASCII point cloud with a per-vertex point id.
pub fn write_ply(path: &Path, points: &[(u32, Vec3)]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    writeln!(w, "property uint point_id")?;
    writeln!(w, "end_header")?;
    for (id, p) in points {
        writeln!(w, "{} {} {} {}", p.x, p.y, p.z, id)?;
    }
    Ok(w.flush()?)
}

pub fn read_ply(path: &Path) -> Result<Vec<(u32, Vec3)>> {
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .with_context(|| format!("{}: unexpected end of file", path.display()))?
            .with_context(|| format!("reading {}", path.display()))
    };
    if next()?.trim() != "ply" {
        bail!("{}: not a PLY file", path.display());
    }
    let mut count: Option<usize> = None;
    let mut properties = Vec::new();
    loop {
        let line = next()?;
        let line = line.trim();
        match line.split_whitespace().next() {
            Some("end_header") => break,
            Some("comment") | Some("format") => {
                if line.starts_with("format") && line != "format ascii 1.0" {
                    bail!("{}: only `format ascii 1.0` is supported", path.display());
                }
            }
            Some("element") => {
                let rest: Vec<&str> = line.split_whitespace().collect();
                if rest.get(1) == Some(&"vertex") {
                    count = Some(
                        rest.get(2)
                            .with_context(|| format!("{}: malformed element line", path.display()))?
                            .parse()
                            .with_context(|| format!("{}: malformed vertex count", path.display()))?,
                    );
                } else {
                    bail!("{}: unsupported element {:?}", path.display(), rest.get(1));
                }
            }
            Some("property") => {
                properties.push(line.split_whitespace().nth(2).unwrap_or("").to_string())
            }
            other => bail!("{}: unexpected header line {other:?}", path.display()),
        }
    }
    if properties != ["x", "y", "z", "point_id"] {
        bail!(
            "{}: expected properties x, y, z, point_id, got {properties:?}",
            path.display()
        );
    }
    let count = count.with_context(|| format!("{}: missing vertex element", path.display()))?;
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let line = next().with_context(|| format!("{}: vertex {i}", path.display()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            bail!("{}: vertex {i}: expected 4 fields, got {}", path.display(), fields.len());
        }
        let coord = |idx: usize, name| -> Result<f64> {
            let v: f64 = fields[idx]
                .parse()
                .with_context(|| format!("{}: vertex {i}: bad {name}", path.display()))?;
            if !v.is_finite() {
                bail!("{}: vertex {i}: non-finite {name}", path.display());
            }
            Ok(v)
        };
        let p = Vec3::new(coord(0, "x")?, coord(1, "y")?, coord(2, "z")?);
        let id: u32 = fields[3]
            .parse()
            .with_context(|| format!("{}: vertex {i}: bad point_id", path.display()))?;
        points.push((id, p));
    }
    Ok(points)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .with_context(|| format!("writing {}", path.display()))?;
    w.write_all(b"\n")?;
    Ok(w.flush()?)
}
