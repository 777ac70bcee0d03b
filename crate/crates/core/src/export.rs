//! File formats for event streams, sweeps and histograms, with importers so
//! every export can be read back.
//!
//! Binary event records are 10 bytes, little-endian:
//! `u8 channel | u64 timestamp_ps | u8 origin` (origin 0 = photon, 1 = dark).

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{Histogram, SweepResult};
use crate::photonics::{DetectionEvent, Origin};

pub const EVENTS_HEADER: [&str; 3] = ["channel", "timestamp_ps", "origin"];
pub const SWEEP_HEADER: [&str; 5] = ["compensation_ps_nm", "fwhm_ps", "fwhm_err_ps", "center_ps", "converged"];
pub const HISTOGRAM_HEADER: [&str; 2] = ["bin_lo_ps", "count"];
const BIN_RECORD: usize = 10;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("bad header: expected {expected}, found {found}")]
    Header { expected: String, found: String },
    #[error("record {index}: {detail}")]
    Record { index: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct EventRow {
    channel: u8,
    timestamp_ps: f64,
    origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub compensation_ps_nm: f64,
    pub fwhm_ps: Option<f64>,
    pub fwhm_err_ps: Option<f64>,
    pub center_ps: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_lo_ps: f64,
    pub count: u64,
}

fn writer<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>, ExportError> {
    // header written by hand so an empty export still has one
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(header)?;
    Ok(out)
}

fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(r: R, header: &[&str]) -> Result<Vec<T>, ExportError> {
    let mut rdr = csv::Reader::from_reader(r);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(ExportError::Header {
            expected: header.join(","),
            found: found.join(","),
        });
    }
    rdr.deserialize()
        .enumerate()
        .map(|(index, row)| {
            row.map_err(|e| ExportError::Record {
                index,
                detail: e.to_string(),
            })
        })
        .collect()
}

pub fn write_events_csv<W: Write>(w: W, events: &[DetectionEvent]) -> Result<(), ExportError> {
    let mut out = writer(w, &EVENTS_HEADER)?;
    for e in events {
        out.serialize(EventRow {
            channel: e.channel,
            timestamp_ps: e.timestamp_ps,
            origin: e.origin,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_events_csv<R: Read>(r: R) -> Result<Vec<DetectionEvent>, ExportError> {
    Ok(read_rows::<_, EventRow>(r, &EVENTS_HEADER)?
        .into_iter()
        .map(|row| DetectionEvent {
            channel: row.channel,
            timestamp_ps: row.timestamp_ps,
            origin: row.origin,
        })
        .collect())
}

/// Binary export. Timestamps are rounded to whole picoseconds.
pub fn write_events_bin<W: Write>(mut w: W, events: &[DetectionEvent]) -> Result<(), ExportError> {
    let mut buf = Vec::with_capacity(events.len() * BIN_RECORD);
    for e in events {
        buf.push(e.channel);
        buf.extend_from_slice(&(e.timestamp_ps.round().max(0.0) as u64).to_le_bytes());
        buf.push(e.origin.code());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_events_bin<R: Read>(mut r: R) -> Result<Vec<DetectionEvent>, ExportError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % BIN_RECORD != 0 {
        return Err(ExportError::Record {
            index: bytes.len() / BIN_RECORD,
            detail: format!("truncated record ({} trailing bytes)", bytes.len() % BIN_RECORD),
        });
    }
    bytes
        .chunks_exact(BIN_RECORD)
        .enumerate()
        .map(|(index, rec)| {
            let origin = Origin::from_code(rec[9]).ok_or_else(|| ExportError::Record {
                index,
                detail: format!("unknown origin code {}", rec[9]),
            })?;
            let ts = u64::from_le_bytes(rec[1..9].try_into().expect("8 bytes"));
            Ok(DetectionEvent {
                channel: rec[0],
                timestamp_ps: ts as f64,
                origin,
            })
        })
        .collect()
}

pub fn sweep_rows(result: &SweepResult) -> Vec<SweepRow> {
    result
        .points
        .iter()
        .map(|p| SweepRow {
            compensation_ps_nm: p.compensation_ps_nm,
            fwhm_ps: p.fit.as_ref().map(|f| f.fwhm_ps),
            fwhm_err_ps: p.fit.as_ref().map(|f| f.fwhm_uncertainty_ps),
            center_ps: p.fit.as_ref().map(|f| f.center_ps),
            converged: p.fit.as_ref().is_some_and(|f| f.converged),
        })
        .collect()
}

/// One row per point; a point without a fit has empty numeric fields.
pub fn write_sweep_csv<W: Write>(w: W, result: &SweepResult) -> Result<(), ExportError> {
    let mut out = writer(w, &SWEEP_HEADER)?;
    for row in sweep_rows(result) {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(r: R) -> Result<Vec<SweepRow>, ExportError> {
    read_rows(r, &SWEEP_HEADER)
}

pub fn write_histogram_csv<W: Write>(w: W, hist: &Histogram) -> Result<(), ExportError> {
    let mut out = writer(w, &HISTOGRAM_HEADER)?;
    for (i, &count) in hist.counts.iter().enumerate() {
        out.serialize(HistogramRow {
            bin_lo_ps: hist.bin_lo(i),
            count,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_histogram_csv<R: Read>(r: R) -> Result<Vec<HistogramRow>, ExportError> {
    read_rows(r, &HISTOGRAM_HEADER)
}
