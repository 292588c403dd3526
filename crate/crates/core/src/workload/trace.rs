//! Columnar text format for traces.
//!
//! One comma-separated record per line after a header. Columns are
//! `episode,user,slot,x,y,n_vf,c_vf,c_pf,n_pf` followed by `L` triples
//! `n_vb_l,c_vb_l,c_pb_l` for `l = 0..L`. Positions are written with the
//! shortest representation that parses back to the same `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{BackgroundRequest, ForegroundRequest, TrackRecord, TraceSet, WorkloadError};

pub const TRACE_FIXED_COLUMNS: [&str; 9] = [
    "episode", "user", "slot", "x", "y", "n_vf", "c_vf", "c_pf", "n_pf",
];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: {0}")]
    Header(String),
    #[error("record {record}: field `{field}`: {reason}")]
    Field {
        record: usize,
        field: String,
        reason: String,
    },
    #[error(transparent)]
    Shape(#[from] WorkloadError),
}

fn header(window: usize) -> Vec<String> {
    let mut h: Vec<String> = TRACE_FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    for l in 0..window {
        h.push(format!("n_vb_{l}"));
        h.push(format!("c_vb_{l}"));
        h.push(format!("c_pb_{l}"));
    }
    h
}

pub fn write_traces<'a, W, I>(out: W, window: usize, records: I) -> Result<(), TraceError>
where
    W: Write,
    I: IntoIterator<Item = &'a TrackRecord>,
{
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(header(window))?;
    let mut row: Vec<String> = Vec::with_capacity(9 + 3 * window);
    for r in records {
        if r.bg_window.len() != window {
            return Err(TraceError::Header(format!(
                "record (episode {}, user {}, slot {}) has window {}, file declares {window}",
                r.episode,
                r.user,
                r.slot,
                r.bg_window.len()
            )));
        }
        row.clear();
        row.extend([
            r.episode.to_string(),
            r.user.to_string(),
            r.slot.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.fg.vertices.to_string(),
            r.fg.vertex_complexity.to_string(),
            r.fg.pixel_complexity.to_string(),
            r.fg.pixels.to_string(),
        ]);
        for bg in &r.bg_window {
            row.push(bg.vertices.to_string());
            row.push(bg.vertex_complexity.to_string());
            row.push(bg.pixel_complexity.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_traces(path: &Path, traces: &TraceSet) -> Result<(), TraceError> {
    let window = traces.records().next().map_or(0, |r| r.bg_window.len());
    let file = BufWriter::new(File::create(path)?);
    write_traces(file, window, traces.records())
}

/// Parses a trace stream into records, reporting the first malformed field
/// by record index (0-based, header excluded) and column name.
pub fn read_traces<R: Read>(input: R) -> Result<Vec<TrackRecord>, TraceError> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let hdr = rd.headers()?.clone();
    let cols: Vec<&str> = hdr.iter().collect();
    if cols.len() < TRACE_FIXED_COLUMNS.len() || !(cols.len() - TRACE_FIXED_COLUMNS.len()).is_multiple_of(3) {
        return Err(TraceError::Header(format!(
            "expected 9 + 3L columns, found {}",
            cols.len()
        )));
    }
    let window = (cols.len() - TRACE_FIXED_COLUMNS.len()) / 3;
    let expected = header(window);
    if let Some((i, (got, want))) = cols
        .iter()
        .zip(expected.iter())
        .enumerate()
        .find(|(_, (g, w))| *g != w)
    {
        return Err(TraceError::Header(format!(
            "column {i} is `{got}`, expected `{want}`"
        )));
    }

    let mut out = Vec::new();
    for (idx, rec) in rd.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| -> Result<&str, TraceError> {
            rec.get(i).ok_or_else(|| TraceError::Field {
                record: idx,
                field: expected[i].clone(),
                reason: "missing (truncated record)".into(),
            })
        };
        let int = |i: usize| -> Result<u32, TraceError> {
            let s = field(i)?;
            s.parse::<u32>().map_err(|e| TraceError::Field {
                record: idx,
                field: expected[i].clone(),
                reason: format!("cannot parse `{s}`: {e}"),
            })
        };
        let float = |i: usize| -> Result<f64, TraceError> {
            let s = field(i)?;
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(v) => Err(TraceError::Field {
                    record: idx,
                    field: expected[i].clone(),
                    reason: format!("non-finite value {v}"),
                }),
                Err(e) => Err(TraceError::Field {
                    record: idx,
                    field: expected[i].clone(),
                    reason: format!("cannot parse `{s}`: {e}"),
                }),
            }
        };
        if rec.len() > expected.len() {
            return Err(TraceError::Field {
                record: idx,
                field: format!("#{}", expected.len()),
                reason: format!("{} fields, header declares {}", rec.len(), expected.len()),
            });
        }
        let mut bg_window = Vec::with_capacity(window);
        for l in 0..window {
            let base = TRACE_FIXED_COLUMNS.len() + 3 * l;
            bg_window.push(BackgroundRequest {
                vertices: int(base)?,
                vertex_complexity: int(base + 1)?,
                pixel_complexity: int(base + 2)?,
            });
        }
        // Fixed columns are parsed after the window so that a truncated line
        // reports the first missing column rather than a valid prefix.
        out.push(TrackRecord {
            episode: int(0)?,
            user: int(1)?,
            slot: int(2)?,
            x: float(3)?,
            y: float(4)?,
            fg: ForegroundRequest {
                vertices: int(5)?,
                vertex_complexity: int(6)?,
                pixel_complexity: int(7)?,
                pixels: int(8)?,
            },
            bg_window,
        });
    }
    Ok(out)
}

pub fn load_traces(path: &Path) -> Result<TraceSet, TraceError> {
    let records = read_traces(BufReader::new(File::open(path)?))?;
    Ok(TraceSet::from_records(records)?)
}
