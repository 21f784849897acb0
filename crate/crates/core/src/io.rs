//! CSV and JSON artifacts.
//!
//! Numbers are written with 12 significant digits in the shortest form that
//! keeps them, so `0.1` stays `0.1`; tiny magnitudes switch to exponent form.

use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::inversion::InversionReport;
use crate::signal::TimeSeries;

pub const SIGNIFICANT_DIGITS: usize = 12;

/// `x` rounded to 12 significant digits.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().expect("formatted float");
    if rounded == 0.0 {
        "0".into()
    } else if rounded.abs() < 1e-4 || rounded.abs() >= 1e15 {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}

fn write_rows<W: Write>(out: W, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `t,<prefix>1,...,<prefix>n`.
pub fn write_series<W: Write>(out: W, series: &TimeSeries, prefix: &str) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend((1..=series.width()).map(|l| format!("{prefix}{l}")));
    let rows = (0..series.len()).map(|i| {
        let mut row = vec![fmt_num(series.time(i))];
        row.extend(series.sample(i).iter().map(|v| fmt_num(*v)));
        row
    });
    write_rows(out, &header, rows)
}

/// Measurement record as `t,y1,...,yn`.
pub fn write_record<W: Write>(out: W, record: &TimeSeries) -> Result<()> {
    write_series(out, record, "y")
}

/// Reads a uniformly sampled series written by [`write_series`].
pub fn read_series<R: Read>(input: R) -> Result<TimeSeries> {
    let mut r = csv::Reader::from_reader(input);
    let width = r.headers()?.len().saturating_sub(1);
    if width == 0 {
        return Err(Error::RecordMismatch("CSV needs a time column and at least one value column".into()));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| Error::RecordMismatch(format!("not a number: {s:?}")))
        };
        times.push(parse(&rec[0])?);
        values.push((1..=width).map(|k| parse(&rec[k])).collect::<Result<Vec<_>>>()?);
    }
    if times.len() < 2 {
        return Err(Error::RecordTooShort { len: times.len(), needed: 2 });
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    for (i, t) in times.iter().enumerate() {
        if (t - (times[0] + i as f64 * dt)).abs() > 1e-6 * dt {
            return Err(Error::RecordMismatch(format!("sample {i} is off the uniform grid")));
        }
    }
    TimeSeries::new(times[0], dt, values)
}

/// `t,u1_hat,...,um_hat,smin,smax,flag`.
pub fn write_inversion<W: Write>(out: W, report: &InversionReport) -> Result<()> {
    let rec = &report.reconstructed;
    let mut header = vec!["t".to_string()];
    header.extend((1..=rec.width()).map(|j| format!("u{j}_hat")));
    header.extend(["smin", "smax", "flag"].map(String::from));
    let rows = (0..rec.len()).map(|i| {
        let mut row = vec![fmt_num(rec.time(i))];
        row.extend(rec.sample(i).iter().map(|v| fmt_num(*v)));
        let c = report.condition_trace[i];
        row.push(fmt_num(c.smin));
        row.push(fmt_num(c.smax));
        row.push(u8::from(report.flags[i]).to_string());
        row
    });
    write_rows(out, &header, rows)
}

#[derive(Serialize)]
struct Window {
    start: f64,
    end: f64,
}

#[derive(Serialize)]
struct WindowSidecar<'a> {
    windows: Vec<Window>,
    total_duration: f64,
    flagged_samples: usize,
    scale: f64,
    singular_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
}

/// JSON sidecar listing the singular windows of a report.
pub fn write_windows<W: Write>(out: W, report: &InversionReport, singular_threshold: f64) -> Result<()> {
    let sidecar = WindowSidecar {
        windows: report.singular_windows.iter().map(|&(start, end)| Window { start, end }).collect(),
        total_duration: report.window_measure(),
        flagged_samples: report.flags.iter().filter(|f| **f).count(),
        scale: report.scale,
        singular_threshold,
        label: None,
    };
    serde_json::to_writer_pretty(out, &sidecar)?;
    Ok(())
}

/// `iter,cost`.
pub fn write_cost_history<W: Write>(out: W, history: &[f64]) -> Result<()> {
    let header = ["iter".to_string(), "cost".to_string()];
    write_rows(out, &header, history.iter().enumerate().map(|(i, c)| vec![i.to_string(), fmt_num(*c)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(fmt_num(0.1), "0.1");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_num(-2.0e-7 / 3.0), "-6.66666666667e-8");
        assert_eq!(fmt_num(-0.0), "0");
    }

    #[test]
    fn record_round_trip() {
        let rec = TimeSeries::new(0.0, 0.1, (0..50).map(|i| vec![(i as f64 * 0.1).sin(), 0.5]).collect()).unwrap();
        let mut buf = Vec::new();
        write_record(&mut buf, &rec).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,y1,y2\n0,0,0.5\n0.1,"));
        let back = read_series(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 50);
        assert!((back.dt() - 0.1).abs() < 1e-12);
        for (a, b) in back.samples().iter().zip(rec.samples()) {
            assert!((a[0] - b[0]).abs() < 1e-11);
        }
    }

    #[test]
    fn cost_history_format() {
        let mut buf = Vec::new();
        write_cost_history(&mut buf, &[2.0, 0.5]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iter,cost\n0,2\n1,0.5\n");
    }
}
