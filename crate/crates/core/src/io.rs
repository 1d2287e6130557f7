//! On-disk formats: JSON for measures, instances and couplings, CSV for
//! potentials, fields and curve traces.
//!
//! Floats are written with the shortest representation that round-trips, so
//! reading an artifact back gives bit-identical values. Output order follows
//! the in-memory order, which makes every artifact deterministic.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semigroup::{PotentialField, Provenance};
use crate::spacetime::{GeometrySpec, SpacetimePoint};
use crate::transport::{Coupling, CouplingEntry, DiscreteMeasure, DualPair, DynamicalCoupling};

fn io_err(path: &Path, e: impl Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureFile {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl MeasureFile {
    pub fn from_measure(mu: &DiscreteMeasure) -> Self {
        Self {
            points: mu.points().iter().map(|p| p.coords().to_vec()).collect(),
            weights: mu.weights().to_vec(),
        }
    }

    pub fn to_measure(&self) -> Result<DiscreteMeasure> {
        let pts = self.points.iter().map(|c| SpacetimePoint::from_slice(c)).collect();
        DiscreteMeasure::new(pts, self.weights.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(flatten)]
    pub geometry: GeometrySpec,
    pub mu0: MeasureFile,
    pub mu1: MeasureFile,
}

/// A coupling with the measures it couples, so it can be read on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingFile {
    #[serde(flatten)]
    pub geometry: GeometrySpec,
    pub source: MeasureFile,
    pub target: MeasureFile,
    /// `[source, target, mass]` triples.
    pub entries: Vec<(usize, usize, f64)>,
}

impl CouplingFile {
    pub fn new(geometry: GeometrySpec, pi: &Coupling) -> Self {
        Self {
            geometry,
            source: MeasureFile::from_measure(&pi.source),
            target: MeasureFile::from_measure(&pi.target),
            entries: pi.entries.iter().map(|e| (e.source, e.target, e.mass)).collect(),
        }
    }

    pub fn to_coupling(&self) -> Result<Coupling> {
        let source = self.source.to_measure()?;
        let target = self.target.to_measure()?;
        if source.len() != self.source.points.len() || target.len() != self.target.points.len() {
            return Err(Error::InvalidInput("coupling measures contain duplicate atoms".into()));
        }
        let mut entries = Vec::with_capacity(self.entries.len());
        for &(i, j, mass) in &self.entries {
            if i >= source.len() || j >= target.len() {
                return Err(Error::InvalidInput(format!("coupling entry ({i}, {j}) out of range")));
            }
            entries.push(CouplingEntry { source: i, target: j, mass });
        }
        Ok(Coupling { source, target, entries })
    }
}

/// A measure tagged with its interpolation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolantFile {
    pub t: f64,
    #[serde(flatten)]
    pub measure: MeasureFile,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&s).map_err(|e| io_err(path, e))
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header = r.headers().map_err(|e| io_err(path, e))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn parse<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T>
where
    T::Err: Display,
{
    s.trim().parse().map_err(|e| io_err(path, format!("bad value {s:?}: {e}")))
}

/// `index,value` rows.
pub fn write_potential_csv(path: &Path, values: &[f64]) -> Result<()> {
    let header = vec!["index".to_string(), "value".to_string()];
    write_csv(path, &header, values.iter().enumerate().map(|(i, v)| vec![i.to_string(), v.to_string()]))
}

pub fn read_potential_csv(path: &Path) -> Result<Vec<f64>> {
    let (_, rows) = read_csv(path)?;
    let mut out = vec![f64::NAN; rows.len()];
    for row in &rows {
        if row.len() != 2 {
            return Err(io_err(path, "expected two columns"));
        }
        let i: usize = parse(path, &row[0])?;
        if i >= out.len() {
            return Err(io_err(path, format!("index {i} out of range")));
        }
        out[i] = parse(path, &row[1])?;
    }
    if out.iter().any(|v| v.is_nan()) {
        return Err(io_err(path, "missing or NaN entries"));
    }
    Ok(out)
}

/// Writes `phi.csv` and `psi.csv` into `dir`.
pub fn write_duals(dir: &Path, duals: &DualPair) -> Result<()> {
    write_potential_csv(&dir.join("phi.csv"), &duals.phi)?;
    write_potential_csv(&dir.join("psi.csv"), &duals.psi)
}

/// Anchors are not stored in the CSVs; pass them in from the solve report.
pub fn read_duals(dir: &Path, anchors: Vec<usize>) -> Result<DualPair> {
    Ok(DualPair {
        phi: read_potential_csv(&dir.join("phi.csv"))?,
        psi: read_potential_csv(&dir.join("psi.csv"))?,
        anchors,
    })
}

fn coord_header(dim: usize) -> Vec<String> {
    (0..dim).map(|k| format!("x{k}")).collect()
}

/// Sidecar for a field CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub provenance: Provenance,
    /// Rendered form of `provenance`, e.g. `backward(0.1)∘forward(0.4)`.
    pub provenance_tag: String,
    pub lipschitz: Option<f64>,
    pub sites: usize,
}

/// Field rows `x0..xn, value, argmin, provenance` plus a `<stem>.json` sidecar.
pub fn write_field(path: &Path, field: &PotentialField) -> Result<()> {
    let dim = field.sites().first().map_or(0, |p| p.dim());
    let tag = field.provenance().to_string();
    let mut header = coord_header(dim);
    header.extend(["value", "argmin", "provenance"].map(String::from));
    let rows = field.sites().iter().zip(field.values()).zip(field.argmin()).map(|((p, v), a)| {
        let mut row: Vec<String> = p.coords().iter().map(f64::to_string).collect();
        row.push(v.to_string());
        row.push(a.map_or(String::new(), |a| a.to_string()));
        row.push(tag.clone());
        row
    });
    write_csv(path, &header, rows)?;
    let meta = FieldMeta {
        provenance: field.provenance().clone(),
        provenance_tag: tag,
        lipschitz: field.lipschitz(),
        sites: field.len(),
    };
    write_json(&path.with_extension("json"), &meta)
}

pub fn read_field(path: &Path) -> Result<PotentialField> {
    let meta: FieldMeta = read_json(&path.with_extension("json"))?;
    let (header, rows) = read_csv(path)?;
    if header.len() < 3 {
        return Err(io_err(path, "field CSV needs coordinates, value, argmin, provenance"));
    }
    let dim = header.len() - 3;
    let mut sites = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    let mut argmin = Vec::with_capacity(rows.len());
    for row in &rows {
        if row.len() != header.len() {
            return Err(io_err(path, "ragged row"));
        }
        let c = row[..dim].iter().map(|s| parse(path, s)).collect::<Result<Vec<f64>>>()?;
        sites.push(SpacetimePoint::new(c));
        values.push(parse(path, &row[dim])?);
        argmin.push(match row[dim + 1].trim() {
            "" => None,
            s => Some(parse(path, s)?),
        });
    }
    let f = PotentialField::new(sites, values, argmin, meta.provenance)?;
    Ok(match meta.lipschitz {
        Some(l) => f.with_lipschitz(l),
        None => f,
    })
}

/// Curve traces for plotting: one row per `(curve, sample)`.
pub fn write_curve_samples(path: &Path, pi: &DynamicalCoupling, samples: usize) -> Result<()> {
    let dim = pi.curves.first().map_or(0, |c| c.curve.start.dim());
    let mut header: Vec<String> = ["curve", "source", "target", "mass", "r"].map(String::from).to_vec();
    header.extend(coord_header(dim));
    let n = samples.max(2);
    let rows = pi.curves.iter().enumerate().flat_map(|(k, wc)| {
        (0..n).map(move |i| {
            let r = i as f64 / (n - 1) as f64;
            let p = wc.curve.position(r);
            let mut row = vec![
                k.to_string(),
                wc.source.to_string(),
                wc.target.to_string(),
                wc.mass.to_string(),
                r.to_string(),
            ];
            row.extend(p.coords().iter().map(f64::to_string));
            row
        })
    });
    write_csv(path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semigroup::ProvenanceStep;
    use crate::transport::{dynamical_coupling, solve_kantorovich};
    use crate::Minkowski;

    fn tmp(name: &str) -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("lorentz-ot-io-{}-{name}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }

    fn small() -> (DiscreteMeasure, DiscreteMeasure) {
        let mu0 = DiscreteMeasure::new(
            vec![SpacetimePoint::new(vec![0.0, 0.1]), SpacetimePoint::new(vec![0.0, -0.3])],
            vec![0.3, 0.7],
        )
        .unwrap();
        let mu1 = DiscreteMeasure::new(
            vec![SpacetimePoint::new(vec![2.0, 0.2]), SpacetimePoint::new(vec![2.5, 1.0 / 3.0])],
            vec![0.6, 0.4],
        )
        .unwrap();
        (mu0, mu1)
    }

    #[test]
    fn instance_json_shape() {
        let (mu0, mu1) = small();
        let f = InstanceFile {
            geometry: GeometrySpec::Minkowski { spatial_dim: 1 },
            mu0: MeasureFile::from_measure(&mu0),
            mu1: MeasureFile::from_measure(&mu1),
        };
        let v: serde_json::Value = serde_json::to_value(&f).unwrap();
        assert_eq!(v["geometry"], "minkowski");
        assert_eq!(v["spatial_dim"], 1);
        assert_eq!(v["mu0"]["weights"][1], 0.7);
        let dir = tmp("inst");
        write_json(&dir.join("i.json"), &f).unwrap();
        let back: InstanceFile = read_json(&dir.join("i.json")).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.mu1.to_measure().unwrap(), mu1);
    }

    #[test]
    fn coupling_duals_and_curves_round_trip() {
        let (mu0, mu1) = small();
        let g = Minkowski::new(1).unwrap();
        let sol = solve_kantorovich(&g, &mu0, &mu1).unwrap();
        let dir = tmp("cpl");
        let cf = CouplingFile::new(GeometrySpec::Minkowski { spatial_dim: 1 }, &sol.coupling);
        write_json(&dir.join("c.json"), &cf).unwrap();
        let back: CouplingFile = read_json(&dir.join("c.json")).unwrap();
        assert_eq!(back.to_coupling().unwrap(), sol.coupling);
        write_duals(&dir, &sol.duals).unwrap();
        assert_eq!(read_duals(&dir, sol.duals.anchors.clone()).unwrap(), sol.duals);
        let dc = dynamical_coupling(&g, &sol.coupling).unwrap();
        write_curve_samples(&dir.join("curves.csv"), &dc, 3).unwrap();
        let text = fs::read_to_string(dir.join("curves.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * dc.curves.len());
        assert!(text.starts_with("curve,source,target,mass,r,x0,x1"));
    }

    #[test]
    fn field_round_trip_is_bitwise() {
        let sites = vec![SpacetimePoint::new(vec![0.1, 0.2]), SpacetimePoint::new(vec![0.7, -1e-17])];
        let prov = Provenance::raw("phi").then(ProvenanceStep::Forward { t: 0.4 });
        let f = PotentialField::new(sites, vec![1.0 / 3.0, f64::INFINITY], vec![Some(1), None], prov)
            .unwrap()
            .with_lipschitz(2.5);
        let dir = tmp("field");
        let p = dir.join("f.csv");
        write_field(&p, &f).unwrap();
        let back = read_field(&p).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.lipschitz(), Some(2.5));
        assert!(fs::read_to_string(&p).unwrap().contains("forward(0.4)"));
    }

    #[test]
    fn bad_potential_csv() {
        let dir = tmp("bad");
        let p = dir.join("phi.csv");
        fs::write(&p, "index,value\n0,1.0\n2,3.0\n").unwrap();
        assert!(read_potential_csv(&p).is_err());
        assert!(matches!(read_potential_csv(&dir.join("missing.csv")), Err(Error::Io(_))));
    }
}
