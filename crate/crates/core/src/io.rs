//! CSV readers and writers.
//!
//! Longitudinal file: `id,time,y,<covariates…>`, one row per measurement.
//! History file: `id,time,state`, one row per observed state entry; the first
//! row of a subject is its entry, the last one repeats the current state at the
//! censoring time unless the subject is absorbed.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::diagnostics::{BinRow, GofRow, ResidualRow};
use crate::domain::{
    validate_dataset, JointDataset, LongitudinalRecord, ParameterVector, SubjectHistory, TransitionTopology,
};
use crate::estimate::{Convergence, FitControl, FitResult, ParameterRow};
use crate::simulate::KnotSpec;
use crate::msprep::TransitionRow;
use crate::transprob::AjPoint;
use crate::{Error, Result};

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, what: &str, file: &str) -> Result<&'a str> {
    rec.get(i)
        .map(str::trim)
        .ok_or_else(|| Error::Parse(format!("{file} line {}: missing `{what}`", line_of(rec))))
}

fn number(rec: &csv::StringRecord, i: usize, what: &str, file: &str) -> Result<f64> {
    let s = field(rec, i, what, file)?;
    s.parse::<f64>()
        .map_err(|_| Error::Parse(format!("{file} line {}: `{what}` is not a number: `{s}`", line_of(rec))))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input)
}

fn expect_header(headers: &csv::StringRecord, want: &[&str], file: &str) -> Result<()> {
    for (i, w) in want.iter().enumerate() {
        if headers.get(i) != Some(*w) {
            return Err(Error::Parse(format!(
                "{file} line 1: expected column {} to be `{w}`, header is `{}`",
                i + 1,
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }
    Ok(())
}

/// Marker records and the covariate column names.
pub fn read_longitudinal<R: Read>(input: R) -> Result<(Vec<LongitudinalRecord>, Vec<String>)> {
    const FILE: &str = "longitudinal csv";
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    expect_header(&headers, &["id", "time", "y"], FILE)?;
    let names: Vec<String> = headers.iter().skip(3).map(str::to_string).collect();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse(format!("{FILE}: {e}")))?;
        if rec.len() != headers.len() {
            return Err(Error::Parse(format!(
                "{FILE} line {}: {} fields, header has {}",
                line_of(&rec),
                rec.len(),
                headers.len()
            )));
        }
        let covariates = names
            .iter()
            .enumerate()
            .map(|(j, n)| number(&rec, 3 + j, n, FILE))
            .collect::<Result<_>>()?;
        out.push(LongitudinalRecord {
            id: field(&rec, 0, "id", FILE)?.to_string(),
            t: number(&rec, 1, "time", FILE)?,
            y: number(&rec, 2, "y", FILE)?,
            covariates,
        });
    }
    Ok((out, names))
}

/// Histories in order of first appearance.
pub fn read_histories<R: Read>(input: R, topology: &TransitionTopology) -> Result<Vec<SubjectHistory>> {
    const FILE: &str = "history csv";
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    expect_header(&headers, &["id", "time", "state"], FILE)?;
    let mut index: HashMap<String, usize> = HashMap::new();
    // (time, state, line) per subject
    type Rows = Vec<(f64, usize, u64)>;
    let mut groups: Vec<(String, Rows)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse(format!("{FILE}: {e}")))?;
        let id = field(&rec, 0, "id", FILE)?.to_string();
        let t = number(&rec, 1, "time", FILE)?;
        let s = field(&rec, 2, "state", FILE)?;
        let state = s.parse::<usize>().map_err(|_| {
            Error::Parse(format!("{FILE} line {}: `state` is not a state index: `{s}`", line_of(&rec)))
        })?;
        let g = *index.entry(id.clone()).or_insert_with(|| {
            groups.push((id, Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push((t, state, line_of(&rec)));
    }
    groups
        .into_iter()
        .map(|(id, rows)| {
            let entries: Vec<(f64, usize)> = rows.iter().map(|r| (r.0, r.1)).collect();
            SubjectHistory::from_entries(id.clone(), &entries, topology).map_err(|e| {
                if e.is_validation() {
                    Error::Validation(format!("{FILE} lines {}-{}: {e}", rows[0].2, rows[rows.len() - 1].2))
                } else {
                    e
                }
            })
        })
        .collect()
}

/// Reads and validates both files.
pub fn read_dataset(
    longitudinal: impl AsRef<Path>,
    histories: impl AsRef<Path>,
    topology: &TransitionTopology,
) -> Result<JointDataset> {
    let (long, names) = read_longitudinal(File::open(longitudinal)?)?;
    let hist = read_histories(File::open(histories)?, topology)?;
    validate_dataset(long, names, hist, topology)
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(out)
}

pub fn write_longitudinal<W: Write>(dataset: &JointDataset, out: W) -> Result<()> {
    let mut w = writer(out);
    let mut header = vec!["id".to_string(), "time".into(), "y".into()];
    header.extend(dataset.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for s in &dataset.subjects {
        for r in &s.longitudinal {
            let mut row = vec![r.id.clone(), r.t.to_string(), r.y.to_string()];
            row.extend(r.covariates.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_histories<W: Write>(dataset: &JointDataset, out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["id", "time", "state"])?;
    for s in &dataset.subjects {
        let h = &s.history;
        w.write_record([h.id.clone(), h.t_entry.to_string(), h.entry_state.to_string()])?;
        for (t, st) in h.times.iter().zip(&h.states) {
            w.write_record([h.id.clone(), t.to_string(), st.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Expanded rows; `trans` is written 1-based.
pub fn write_transition_rows<W: Write>(rows: &[TransitionRow], covariate_names: &[String], out: W) -> Result<()> {
    let mut w = writer(out);
    let mut header: Vec<String> =
        ["id", "from", "to", "trans", "Tstart", "Tstop", "status"].iter().map(|s| s.to_string()).collect();
    header.extend(covariate_names.iter().cloned());
    w.write_record(&header)?;
    for r in rows {
        let mut row = vec![
            r.id.clone(),
            r.from.to_string(),
            r.to.to_string(),
            (r.trans + 1).to_string(),
            r.t_start.to_string(),
            r.t_stop.to_string(),
            u8::from(r.status).to_string(),
        ];
        row.extend(r.covariates.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One `(s, t, from, to)` entry of a transition-probability curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityRow {
    pub s: f64,
    pub t: f64,
    pub from: usize,
    pub to: usize,
    pub estimate: f64,
    pub ci: Option<(f64, f64)>,
}

/// All matrix entries of a parametric curve.
pub fn parametric_rows(s: f64, times: &[f64], mats: &[DMatrix<f64>]) -> Vec<ProbabilityRow> {
    let mut out = Vec::new();
    for (&t, p) in times.iter().zip(mats) {
        for h in 0..p.nrows() {
            for k in 0..p.ncols() {
                out.push(ProbabilityRow { s, t, from: h, to: k, estimate: p[(h, k)], ci: None });
            }
        }
    }
    out
}

/// All matrix entries of an Aalen–Johansen curve with log-scale 95% intervals.
pub fn aalen_johansen_rows(s: f64, path: &[AjPoint<f64>]) -> Vec<ProbabilityRow> {
    let mut out = Vec::new();
    for pt in path {
        let m = pt.p.nrows();
        for h in 0..m {
            for k in 0..m {
                let var = pt.cov[(h + k * m, h + k * m)];
                out.push(ProbabilityRow {
                    s,
                    t: pt.t,
                    from: h,
                    to: k,
                    estimate: pt.p[(h, k)],
                    ci: crate::transprob::aj_confidence_interval(pt.p[(h, k)], var),
                });
            }
        }
    }
    out
}

/// `s,t,from,to,estimate` plus `lo95,hi95` when `with_ci` (empty where undefined).
pub fn write_probabilities<W: Write>(rows: &[ProbabilityRow], with_ci: bool, out: W) -> Result<()> {
    let mut w = writer(out);
    if with_ci {
        w.write_record(["s", "t", "from", "to", "estimate", "lo95", "hi95"])?;
    } else {
        w.write_record(["s", "t", "from", "to", "estimate"])?;
    }
    for r in rows {
        let mut row = vec![r.s.to_string(), r.t.to_string(), r.from.to_string(), r.to.to_string(), r.estimate.to_string()];
        if with_ci {
            match r.ci {
                Some((lo, hi)) => {
                    row.push(lo.to_string());
                    row.push(hi.to_string());
                }
                None => {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Individual curves: `id,s,t,from,to,estimate`.
pub fn write_individual_probabilities<W: Write>(
    curves: &[(String, Vec<ProbabilityRow>)],
    out: W,
) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["id", "s", "t", "from", "to", "estimate"])?;
    for (id, rows) in curves {
        for r in rows {
            w.write_record([
                id.clone(),
                r.s.to_string(),
                r.t.to_string(),
                r.from.to_string(),
                r.to.to_string(),
                r.estimate.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_residuals<W: Write>(rows: &[ResidualRow], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["id", "time", "observed", "fitted", "residual", "standardized"])?;
    for r in rows {
        w.write_record([
            r.id.clone(),
            r.time.to_string(),
            r.observed.to_string(),
            r.fitted.to_string(),
            r.residual.to_string(),
            r.standardized.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bins<W: Write>(rows: &[BinRow], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["lower", "upper", "n", "mean_observed", "mean_predicted", "lo95", "hi95"])?;
    for r in rows {
        let (lo, hi) = r.ci.map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
        w.write_record([
            r.lower.to_string(),
            r.upper.to_string(),
            r.n.to_string(),
            r.mean_observed.to_string(),
            r.mean_predicted.to_string(),
            lo,
            hi,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_gof<W: Write>(rows: &[GofRow], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["s", "t", "from", "to", "parametric", "aalen_johansen", "lo95", "hi95"])?;
    for r in rows {
        let (lo, hi) = r.band.map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
        w.write_record([
            r.s.to_string(),
            r.t.to_string(),
            r.from.to_string(),
            r.to.to_string(),
            r.parametric.to_string(),
            r.aalen_johansen.to_string(),
            lo,
            hi,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fit output document, embedding the resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub config: Config,
    pub version: String,
    pub loglik: f64,
    pub convergence: Convergence,
    pub parameters: Vec<ParameterRow>,
    pub derived: Vec<ParameterRow>,
    /// Row-major.
    pub vcov: Vec<Vec<f64>>,
    pub flags: Vec<String>,
    pub knots: Vec<KnotSpec>,
    pub control: FitControl,
}

impl FitDocument {
    pub fn new(config: &Config, fit: &FitResult) -> Self {
        Self {
            config: config.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            loglik: fit.loglik,
            convergence: fit.convergence.clone(),
            parameters: fit.table(),
            derived: fit.derived.clone(),
            vcov: fit.vcov.clone(),
            flags: fit.flags.clone(),
            knots: fit.knots.clone(),
            control: fit.control.clone(),
        }
    }

    pub fn fit_result(&self) -> FitResult {
        let rows = &self.parameters;
        FitResult {
            theta_hat: ParameterVector {
                values: rows.iter().map(|r| r.estimate).collect(),
                names: rows.iter().map(|r| r.name.clone()).collect(),
            },
            vcov: self.vcov.clone(),
            loglik: self.loglik,
            se: rows.iter().map(|r| r.se).collect(),
            p_values: rows.iter().map(|r| r.p).collect(),
            derived: self.derived.clone(),
            convergence: self.convergence.clone(),
            control: self.control.clone(),
            knots: self.knots.clone(),
            flags: self.flags.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Creates `path`, including missing parent directories.
pub fn create(path: impl AsRef<Path>) -> Result<File> {
    if let Some(dir) = path.as_ref().parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_number_names_the_line() {
        let text = "id,time,y,X\na,0,1.0,2\na,1,oops,2\n";
        let err = read_longitudinal(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn wrong_header_is_rejected() {
        let err = read_histories("id,t,state\n".as_bytes(), &TransitionTopology::illness_death()).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn histories_group_by_id() {
        let topo = TransitionTopology::illness_death();
        let text = "id,time,state\na,0,0\nb,0,0\na,2,1\nb,4,2\na,5,1\n";
        let h = read_histories(text.as_bytes(), &topo).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h[0].times, vec![2.0, 5.0]);
        assert_eq!(h[0].censor_time, Some(5.0));
        assert_eq!(h[1].censor_time, None);
    }

    #[test]
    fn disallowed_transition_reports_lines() {
        let topo = TransitionTopology::illness_death();
        let text = "id,time,state\na,0,1\na,2,0\n";
        let err = read_histories(text.as_bytes(), &topo).unwrap_err();
        assert!(err.to_string().contains("lines 2-3"), "{err}");
    }
}
