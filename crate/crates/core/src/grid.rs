//! Per-point results of a grid search over `theta`, with coordinate
//! projections and CSV/JSON output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamTheta;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub theta: ParamTheta,
    pub member: bool,
    /// Smallest slack-adjusted moment (identification) or `c - T_n`
    /// (inference); membership holds iff it is nonnegative.
    pub min_moment: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critical_value: Option<f64>,
}

/// `[lo, hi]` of one coordinate over the member points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub coordinate_names: Vec<String>,
    pub points: Vec<GridPoint>,
}

/// Summary written next to the per-point CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub n_points: usize,
    pub n_members: usize,
    pub empty: bool,
    pub projections: Vec<Projection>,
}

impl GridResult {
    pub fn new(coordinate_names: Vec<String>, points: Vec<GridPoint>) -> Self {
        GridResult {
            coordinate_names,
            points,
        }
    }

    pub fn members(&self) -> Vec<ParamTheta> {
        self.points
            .iter()
            .filter(|p| p.member)
            .map(|p| p.theta.clone())
            .collect()
    }

    pub fn n_members(&self) -> usize {
        self.points.iter().filter(|p| p.member).count()
    }

    pub fn is_empty_set(&self) -> bool {
        self.n_members() == 0
    }

    /// Projections onto each coordinate; empty when no point is a member.
    pub fn projections(&self) -> Vec<Projection> {
        let mut out: Vec<Projection> = self
            .coordinate_names
            .iter()
            .map(|n| Projection {
                name: n.clone(),
                lo: f64::INFINITY,
                hi: f64::NEG_INFINITY,
            })
            .collect();
        let mut any = false;
        for p in self.points.iter().filter(|p| p.member) {
            any = true;
            for (proj, c) in out.iter_mut().zip(p.theta.coordinates()) {
                proj.lo = proj.lo.min(c);
                proj.hi = proj.hi.max(c);
            }
        }
        if any {
            out
        } else {
            Vec::new()
        }
    }

    pub fn projection(&self, name: &str) -> Option<(f64, f64)> {
        self.projections()
            .into_iter()
            .find(|p| p.name == name)
            .map(|p| (p.lo, p.hi))
    }

    pub fn summary(&self) -> GridSummary {
        GridSummary {
            n_points: self.points.len(),
            n_members: self.n_members(),
            empty: self.is_empty_set(),
            projections: self.projections(),
        }
    }

    /// One row per point: coordinates, `member`, `min_moment`, and the test
    /// statistic and critical value when present.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let tested = self.points.iter().any(|p| p.statistic.is_some());
        let mut header = self.coordinate_names.clone();
        header.extend(["member".to_string(), "min_moment".to_string()]);
        if tested {
            header.extend(["t_stat".to_string(), "critical_value".to_string()]);
        }
        wtr.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            let mut row: Vec<String> = p.theta.coordinates().iter().map(f64::to_string).collect();
            row.push(p.member.to_string());
            row.push(p.min_moment.to_string());
            if tested {
                row.push(opt(p.statistic));
                row.push(opt(p.critical_value));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Inverse of [`GridResult::write_csv`].
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let col = |name: &str| header.iter().position(|h| h == name);
        let member = col("member").ok_or_else(|| Error::data("grid csv", "missing column member"))?;
        let min_moment = col("min_moment").ok_or_else(|| Error::data("grid csv", "missing column min_moment"))?;
        let (t_stat, crit) = (col("t_stat"), col("critical_value"));
        let names: Vec<String> = header[..member].to_vec();
        let n_beta = names.iter().filter(|n| n.starts_with("beta_")).count();
        if names.first().map(String::as_str) != Some("alpha") {
            return Err(Error::data("grid csv", "first column must be alpha"));
        }
        let mut points = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let loc = || format!("grid csv row {}", line + 2);
            let num = |i: usize| -> Result<f64> {
                record[i]
                    .parse::<f64>()
                    .map_err(|e| Error::data(loc(), format!("column {}: {e}", header[i])))
            };
            let opt = |i: Option<usize>| -> Result<Option<f64>> {
                match i {
                    Some(i) if !record[i].is_empty() => num(i).map(Some),
                    _ => Ok(None),
                }
            };
            let coords = (0..member).map(num).collect::<Result<Vec<f64>>>()?;
            let member_flag = record[member]
                .parse::<bool>()
                .map_err(|e| Error::data(loc(), format!("column member: {e}")))?;
            points.push(GridPoint {
                theta: ParamTheta::new(coords[0], coords[1..1 + n_beta].to_vec(), coords[1 + n_beta..].to_vec()),
                member: member_flag,
                min_moment: num(min_moment)?,
                statistic: opt(t_stat)?,
                critical_value: opt(crit)?,
            });
        }
        Ok(GridResult::new(names, points))
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}
