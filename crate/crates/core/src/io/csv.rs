//! Result and summary CSV files.
//!
//! UTF-8, LF line endings, `.` decimal separator, one header row. Floats are
//! written with 9 decimals; fields that do not apply are left empty.

use std::io::Write;

use crate::error::{Error, Result};
use crate::estimators::Method;

pub const RESULT_HEADER: [&str; 9] = [
    "trial",
    "method",
    "snr_in_db",
    "mean_hermitian_angle_rad",
    "delta_snr_broadband_db",
    "delta_snr_weighted_db",
    "ods_iterations",
    "ods_converged",
    "error",
];

pub const SUMMARY_HEADER: [&str; 10] = [
    "method",
    "snr_in_db",
    "rows",
    "failed",
    "mean_hermitian_angle_rad",
    "std_hermitian_angle_rad",
    "mean_delta_snr_broadband_db",
    "std_delta_snr_broadband_db",
    "mean_delta_snr_weighted_db",
    "std_delta_snr_weighted_db",
];

/// One trial x method x SNR outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub trial: usize,
    pub method: Method,
    pub snr_in_db: f64,
    pub mean_angle: Option<f64>,
    pub delta_snr_broadband: Option<f64>,
    pub delta_snr_weighted: Option<f64>,
    /// Summed over bins; ODS only.
    pub ods_iterations: Option<usize>,
    /// Every bin converged; ODS only.
    pub ods_converged: Option<bool>,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn failed(trial: usize, method: Method, snr_in_db: f64, error: String) -> Self {
        ResultRow {
            trial,
            method,
            snr_in_db,
            mean_angle: None,
            delta_snr_broadband: None,
            delta_snr_weighted: None,
            ods_iterations: None,
            ods_converged: None,
            error: Some(error),
        }
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.trial.to_string(),
            self.method.as_str().to_string(),
            float(Some(self.snr_in_db)),
            float(self.mean_angle),
            float(self.delta_snr_broadband),
            float(self.delta_snr_weighted),
            self.ods_iterations
                .map(|n| n.to_string())
                .unwrap_or_default(),
            self.ods_converged
                .map(|b| b.to_string())
                .unwrap_or_default(),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

pub fn float(v: Option<f64>) -> String {
    match v {
        Some(0.0) => format!("{:.9}", 0.0),
        Some(x) => format!("{x:.9}"),
        None => String::new(),
    }
}

fn writer<W: Write>(w: W) -> ::csv::Writer<W> {
    ::csv::WriterBuilder::new()
        .terminator(::csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn csv_err(e: ::csv::Error) -> Error {
    match e.into_kind() {
        ::csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes rows with optional leading columns (used by sweeps).
pub fn write_results<W: Write>(
    w: W,
    prefix: &[&str],
    rows: &[(Vec<String>, &ResultRow)],
) -> Result<()> {
    let mut out = writer(w);
    let header: Vec<&str> = prefix.iter().copied().chain(RESULT_HEADER).collect();
    out.write_record(&header).map_err(csv_err)?;
    for (lead, row) in rows {
        let rec: Vec<String> = lead.iter().cloned().chain(row.fields()).collect();
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Mean and sample standard deviation per method and SNR.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub snr_in_db: f64,
    pub rows: usize,
    pub failed: usize,
    pub angle: (f64, f64),
    pub broadband: (f64, f64),
    pub weighted: (f64, f64),
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups rows by (method, SNR) in canonical method order, then by the
/// order in which SNR values first appear.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut snrs: Vec<f64> = Vec::new();
    for r in rows {
        if !snrs.iter().any(|s| s.to_bits() == r.snr_in_db.to_bits()) {
            snrs.push(r.snr_in_db);
        }
    }
    let mut out = Vec::new();
    for method in Method::ALL {
        for &snr in &snrs {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.method == method && r.snr_in_db.to_bits() == snr.to_bits())
                .collect();
            if group.is_empty() {
                continue;
            }
            let pick = |f: fn(&ResultRow) -> Option<f64>| -> Vec<f64> {
                group.iter().filter_map(|r| f(r)).collect()
            };
            out.push(SummaryRow {
                method,
                snr_in_db: snr,
                rows: group.len(),
                failed: group.iter().filter(|r| r.mean_angle.is_none()).count(),
                angle: mean_std(&pick(|r| r.mean_angle)),
                broadband: mean_std(&pick(|r| r.delta_snr_broadband)),
                weighted: mean_std(&pick(|r| r.delta_snr_weighted)),
            });
        }
    }
    out
}

fn stat(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        float(Some(v))
    }
}

pub fn write_summary<W: Write>(
    w: W,
    prefix: &[&str],
    groups: &[(Vec<String>, Vec<SummaryRow>)],
) -> Result<()> {
    let mut out = writer(w);
    let header: Vec<&str> = prefix.iter().copied().chain(SUMMARY_HEADER).collect();
    out.write_record(&header).map_err(csv_err)?;
    for (lead, rows) in groups {
        for s in rows {
            let rec: Vec<String> = lead
                .iter()
                .cloned()
                .chain([
                    s.method.as_str().to_string(),
                    float(Some(s.snr_in_db)),
                    s.rows.to_string(),
                    s.failed.to_string(),
                    stat(s.angle.0),
                    stat(s.angle.1),
                    stat(s.broadband.0),
                    stat(s.broadband.1),
                    stat(s.weighted.0),
                    stat(s.weighted.1),
                ])
                .collect();
            out.write_record(&rec).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(trial: usize, method: Method, snr: f64, angle: f64) -> ResultRow {
        ResultRow {
            trial,
            method,
            snr_in_db: snr,
            mean_angle: Some(angle),
            delta_snr_broadband: Some(angle * 10.0),
            delta_snr_weighted: Some(-angle),
            ods_iterations: (method == Method::Ods).then_some(12),
            ods_converged: (method == Method::Ods).then_some(true),
            error: None,
        }
    }

    #[test]
    fn golden_result_rows() {
        let rows = [
            row(0, Method::Biased, -5.0, 0.25),
            row(0, Method::Ods, -5.0, 0.125),
            ResultRow::failed(1, Method::Cw, 0.0, "bin 3 has no \"speech\", sorry".into()),
        ];
        let mut buf = Vec::new();
        let items: Vec<(Vec<String>, &ResultRow)> = rows.iter().map(|r| (vec![], r)).collect();
        write_results(&mut buf, &[], &items).unwrap();
        let expect = "\
trial,method,snr_in_db,mean_hermitian_angle_rad,delta_snr_broadband_db,delta_snr_weighted_db,ods_iterations,ods_converged,error
0,biased,-5.000000000,0.250000000,2.500000000,-0.250000000,,,
0,ods,-5.000000000,0.125000000,1.250000000,-0.125000000,12,true,
1,cw,0.000000000,,,,,,\"bin 3 has no \"\"speech\"\", sorry\"
";
        assert_eq!(String::from_utf8(buf).unwrap(), expect);
    }

    #[test]
    fn summary_statistics() {
        let rows = [
            row(0, Method::Cw, 0.0, 1.0),
            row(1, Method::Cw, 0.0, 3.0),
            row(0, Method::Biased, 0.0, 2.0),
            ResultRow::failed(2, Method::Cw, 0.0, "x".into()),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].method, Method::Biased);
        assert_eq!(s[0].angle, (2.0, 0.0));
        assert_eq!(s[1].rows, 3);
        assert_eq!(s[1].failed, 1);
        assert_eq!(s[1].angle.0, 2.0);
        assert!((s[1].angle.1 - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn negative_zero_prints_as_zero() {
        assert_eq!(float(Some(-0.0)), "0.000000000");
    }
}
