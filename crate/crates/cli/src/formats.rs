//! Patient, risk-CDF and plan files.

use std::collections::HashMap;
use std::io::{Read, Write};

use pooltest_core::cohort::{Cohort, CohortError, Patient, PoolingPlan, RiskCdf};
use pooltest_core::Probability;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("expected header `{expected}`, found `{found}`")]
    Header { expected: &'static str, found: String },
    #[error("file has no data rows")]
    NoRows,
    #[error(transparent)]
    Cohort(#[from] CohortError),
}

impl FormatError {
    fn row(line: u64, message: impl Into<String>) -> Self {
        FormatError::Row { line, message: message.into() }
    }
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).has_headers(true).from_reader(source)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &'static str) -> Result<(), FormatError> {
    let headers = rdr.headers().map_err(|e| csv_error(e, 1))?;
    let found: Vec<&str> = headers.iter().collect();
    let found = found.join(",");
    if found != expected {
        return Err(FormatError::Header { expected, found });
    }
    Ok(())
}

fn csv_error(e: csv::Error, fallback_line: u64) -> FormatError {
    if e.is_io_error() {
        return FormatError::Io(e.into());
    }
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} fields, found {len}")
        }
        csv::ErrorKind::Utf8 { .. } => "invalid UTF-8".to_string(),
        _ => e.to_string(),
    };
    FormatError::row(line, message)
}

fn parse_unit(field: &str, name: &str, line: u64) -> Result<f64, FormatError> {
    let v: f64 = field.parse().map_err(|_| FormatError::row(line, format!("{name} `{field}` is not a number")))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(FormatError::row(line, format!("{name} {v} is outside [0, 1]")));
    }
    Ok(v)
}

/// Reads a `patient_id,risk` file. Row order is kept.
pub fn load_patients<R: Read>(source: R) -> Result<Cohort, FormatError> {
    let mut rdr = reader(source);
    check_header(&mut rdr, "patient_id,risk")?;
    let mut patients = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id = &record[0];
        if id.is_empty() {
            return Err(FormatError::row(line, "empty patient_id"));
        }
        let risk = parse_unit(&record[1], "risk", line)?;
        if let Some(first) = seen.insert(id.to_string(), line) {
            return Err(FormatError::row(line, format!("duplicate patient_id `{id}` (first on line {first})")));
        }
        patients.push(Patient { id: id.to_string(), risk: Probability::new(risk).expect("checked") });
    }
    if patients.is_empty() {
        return Err(FormatError::NoRows);
    }
    Ok(Cohort::new(patients)?)
}

/// Reads a `risk,cum_fraction` file.
pub fn load_cdf<R: Read>(source: R) -> Result<RiskCdf, FormatError> {
    let mut rdr = reader(source);
    check_header(&mut rdr, "risk,cum_fraction")?;
    let mut points = Vec::new();
    let mut lines = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let risk = parse_unit(&record[0], "risk", line)?;
        let frac = parse_unit(&record[1], "cum_fraction", line)?;
        points.push((risk, frac));
        lines.push(line);
    }
    if points.is_empty() {
        return Err(FormatError::NoRows);
    }
    RiskCdf::new(points).map_err(|e| match e {
        CohortError::CdfRiskNotIncreasing { index }
        | CohortError::CdfNotMonotone { index }
        | CohortError::CdfOutOfRange { index } => FormatError::row(lines[index], e.to_string()),
        CohortError::CdfIncomplete(_) => FormatError::row(*lines.last().expect("non-empty"), e.to_string()),
        other => other.into(),
    })
}

pub const PLAN_HEADER: [&str; 7] = ["group", "strategy", "pool_size", "risk_estimate", "expected_tpp", "patient_id", "risk"];
const PLAN_HEADER_LINE: &str = "group,strategy,pool_size,risk_estimate,expected_tpp,patient_id,risk";

/// One row per patient, grouped and in strategy layout order.
pub fn write_plan_csv<W: Write>(sink: W, cohort: &Cohort, plan: &PoolingPlan) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(PLAN_HEADER).map_err(|e| csv_error(e, 0))?;
    for (gi, g) in plan.groups.iter().enumerate() {
        for &i in &g.members {
            let patient = &cohort.patients()[i];
            w.write_record([
                gi.to_string(),
                g.strategy.name().to_string(),
                g.strategy.size().get().to_string(),
                g.risk_estimate.to_string(),
                g.expected_tpp.to_string(),
                patient.id.clone(),
                patient.risk.value().to_string(),
            ])
            .map_err(|e| csv_error(e, 0))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanGroupRecord {
    pub group: usize,
    pub strategy: String,
    pub pool_size: usize,
    pub risk_estimate: f64,
    pub expected_tpp: f64,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanDocument {
    pub family: String,
    pub patients: usize,
    pub expected_tests: f64,
    pub expected_tpp: f64,
    pub reduction: f64,
    pub worst_case_rounds: usize,
    pub duplication_count: usize,
    pub duplicated: Vec<String>,
    pub groups: Vec<PlanGroupRecord>,
}

impl PlanDocument {
    pub fn new(cohort: &Cohort, plan: &PoolingPlan) -> Self {
        let id = |i: usize| cohort.patients()[i].id.clone();
        let tpp = plan.expected_tpp();
        PlanDocument {
            family: plan.family.name().to_string(),
            patients: plan.cohort_size,
            expected_tests: plan.expected_tests(),
            expected_tpp: tpp,
            reduction: 1.0 - tpp,
            worst_case_rounds: plan.worst_case_rounds(),
            duplication_count: plan.duplication_count(),
            duplicated: plan.duplicated_members().map(id).collect(),
            groups: plan
                .groups
                .iter()
                .enumerate()
                .map(|(gi, g)| PlanGroupRecord {
                    group: gi,
                    strategy: g.strategy.name().to_string(),
                    pool_size: g.strategy.size().get(),
                    risk_estimate: g.risk_estimate,
                    expected_tpp: g.expected_tpp,
                    members: g.members.iter().map(|&i| id(i)).collect(),
                })
                .collect(),
        }
    }
}

pub fn write_plan_json<W: Write>(mut sink: W, cohort: &Cohort, plan: &PoolingPlan) -> Result<(), FormatError> {
    serde_json::to_writer_pretty(&mut sink, &PlanDocument::new(cohort, plan)).map_err(std::io::Error::from)?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// Reads a plan CSV back into its groups. Patient risks are not kept.
pub fn read_plan_csv<R: Read>(source: R) -> Result<Vec<PlanGroupRecord>, FormatError> {
    let mut rdr = reader(source);
    check_header(&mut rdr, PLAN_HEADER_LINE)?;
    let mut groups: Vec<PlanGroupRecord> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let int = |i: usize| -> Result<usize, FormatError> {
            record[i].parse().map_err(|_| FormatError::row(line, format!("`{}` is not an integer", &record[i])))
        };
        let float = |i: usize| -> Result<f64, FormatError> {
            record[i].parse().map_err(|_| FormatError::row(line, format!("`{}` is not a number", &record[i])))
        };
        let group = int(0)?;
        match groups.last_mut() {
            Some(g) if g.group == group => g.members.push(record[5].to_string()),
            last => {
                if last.is_some_and(|g| g.group > group) {
                    return Err(FormatError::row(line, "groups out of order"));
                }
                groups.push(PlanGroupRecord {
                    group,
                    strategy: record[1].to_string(),
                    pool_size: int(2)?,
                    risk_estimate: float(3)?,
                    expected_tpp: float(4)?,
                    members: vec![record[5].to_string()],
                });
            }
        }
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patients_basic() {
        let c = load_patients("patient_id,risk\na,0.1\nb,0.02\n".as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.patients()[1].id, "b");
    }

    #[test]
    fn patients_crlf() {
        let c = load_patients("patient_id,risk\r\na,0.1\r\nb,0.2\r\n".as_bytes()).unwrap();
        assert_eq!(c.patients()[1].risk.value(), 0.2);
    }

    #[test]
    fn patients_row_errors() {
        let e = load_patients("patient_id,risk\na,0.1\nb,1.5\n".as_bytes()).unwrap_err();
        assert_eq!(e.to_string(), "line 3: risk 1.5 is outside [0, 1]");
        let e = load_patients("patient_id,risk\na,0.1\na,0.2\n".as_bytes()).unwrap_err();
        assert!(e.to_string().starts_with("line 3: duplicate"), "{e}");
        let e = load_patients("patient_id,risk\na,x\n".as_bytes()).unwrap_err();
        assert!(e.to_string().starts_with("line 2:"), "{e}");
        let e = load_patients("patient_id,risk\na,0.1,7\n".as_bytes()).unwrap_err();
        assert!(e.to_string().starts_with("line 2:"), "{e}");
        let e = load_patients("id,risk\na,0.1\n".as_bytes()).unwrap_err();
        assert!(matches!(e, FormatError::Header { .. }));
        assert!(matches!(load_patients("patient_id,risk\n".as_bytes()), Err(FormatError::NoRows)));
    }

    #[test]
    fn cdf_errors_name_rows() {
        let cdf = load_cdf("risk,cum_fraction\n0.01,0.5\n0.02,1\n".as_bytes()).unwrap();
        assert_eq!(cdf.points().len(), 2);
        let e = load_cdf("risk,cum_fraction\n0.01,0.5\n0.02,0.4\n0.03,1\n".as_bytes()).unwrap_err();
        assert!(e.to_string().starts_with("line 3:"), "{e}");
        let e = load_cdf("risk,cum_fraction\n0.01,0.5\n0.02,0.9\n".as_bytes()).unwrap_err();
        assert!(e.to_string().starts_with("line 3:"), "{e}");
    }
}
