//! Event CSV: one `t,x,y,q` record per line, `#` comments, blank lines
//! ignored.

use super::IoError;
use crate::event::{EventStream, Geometry};

pub fn parse_csv_events(text: &str, geometry: Geometry) -> Result<EventStream, IoError> {
    let mut raw: Vec<(u16, u16, i8, u64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let parsed = (|| {
            let t = fields.next()?.parse::<u64>().ok()?;
            let x = fields.next()?.parse::<u16>().ok()?;
            let y = fields.next()?.parse::<u16>().ok()?;
            let q = fields.next()?.parse::<i8>().ok()?;
            if fields.next().is_some() {
                return None;
            }
            Some((x, y, q, t))
        })();
        match parsed {
            Some(rec) => raw.push(rec),
            None => return Err(IoError::MalformedLine(lineno + 1)),
        }
    }
    Ok(EventStream::validate_raw(&raw, geometry)?)
}

pub fn write_csv_events(stream: &EventStream) -> String {
    let mut out = String::new();
    for e in stream.events() {
        out.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.q.as_i8()));
    }
    out
}
