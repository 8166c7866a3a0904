//! CSV latency report.
//!
//! Data rows use the columns in [`HEADER`], sorted by op, backend, stack,
//! phase and message size. After them comes one
//! `# max_overhead op=<op> backend=<backend> pct=<x>` line per (op, backend)
//! pair, with `pct=NA` when no row of that pair has a native baseline.

use std::collections::{BTreeMap, HashMap};

use mpidesk_core::{Error, Result};

use crate::bench::Op;
use crate::stack::Stack;

pub const HEADER: [&str; 8] =
    ["op", "backend", "stack", "phase", "msg_size", "median_us", "stddev_us", "overhead_pct"];

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRecord {
    pub op: Op,
    pub backend: String,
    pub stack: Stack,
    pub phase: String,
    pub msg_size: usize,
    pub median_us: f64,
    pub stddev_us: f64,
    /// Relative to the native row with the same op, backend, phase and size.
    pub overhead_pct: Option<f64>,
}

impl LatencyRecord {
    fn sort_key(&self) -> (&'static str, &str, &'static str, &str, usize) {
        (self.op.name(), &self.backend, self.stack.name(), &self.phase, self.msg_size)
    }
}

/// Sets `overhead_pct` on every row that has a native baseline.
pub fn fill_overheads(records: &mut [LatencyRecord]) {
    let baseline: HashMap<(Op, String, String, usize), f64> = records
        .iter()
        .filter(|r| r.stack == Stack::Native)
        .map(|r| ((r.op, r.backend.clone(), r.phase.clone(), r.msg_size), r.median_us))
        .collect();
    for r in records.iter_mut() {
        let key = (r.op, r.backend.clone(), r.phase.clone(), r.msg_size);
        r.overhead_pct = baseline.get(&key).map(|&base| {
            if r.stack == Stack::Native {
                0.0
            } else {
                // a zero-duration baseline would make the ratio infinite
                (r.median_us - base) / base.max(1e-3) * 100.0
            }
        });
    }
}

pub fn emit_report(records: &[LatencyRecord]) -> String {
    let mut rows: Vec<&LatencyRecord> = records.iter().collect();
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for r in &rows {
        w.write_record([
            r.op.name().to_string(),
            r.backend.clone(),
            r.stack.name().to_string(),
            r.phase.clone(),
            r.msg_size.to_string(),
            format!("{:.3}", r.median_us),
            format!("{:.3}", r.stddev_us),
            r.overhead_pct.map(|p| format!("{p:.2}")).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    let mut out = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii");

    // non-native rows decide the maximum; a native-only report falls back
    // to its own zero overheads
    let mut max: BTreeMap<(&str, &str), (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in &rows {
        let (other, native) = max.entry((r.op.name(), r.backend.as_str())).or_default();
        let slot = if r.stack == Stack::Native { native } else { other };
        if let Some(p) = r.overhead_pct {
            *slot = Some(slot.map_or(p, |m| m.max(p)));
        }
    }
    let max = max.into_iter().map(|(k, (other, native))| (k, other.or(native)));
    for ((op, backend), pct) in max {
        let pct = pct.map(|p| format!("{p:.2}")).unwrap_or_else(|| "NA".into());
        out.push_str(&format!("# max_overhead op={op} backend={backend} pct={pct}\n"));
    }
    out
}

/// Reads the data rows of a report back; summary lines are skipped.
pub fn parse_report(text: &str) -> Result<Vec<LatencyRecord>> {
    let bad = |m: String| Error::BackendFailure(format!("report: {m}"));
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(HEADER) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| row[i].parse::<f64>().map_err(|e| bad(format!("{:?}: {e}", &row[i])));
        out.push(LatencyRecord {
            op: Op::from_name(&row[0]).ok_or_else(|| bad(format!("op {:?}", &row[0])))?,
            backend: row[1].to_string(),
            stack: Stack::from_name(&row[2]).ok_or_else(|| bad(format!("stack {:?}", &row[2])))?,
            phase: row[3].to_string(),
            msg_size: row[4].parse().map_err(|e| bad(format!("size: {e}")))?,
            median_us: num(5)?,
            stddev_us: num(6)?,
            overhead_pct: if row[7].is_empty() { None } else { Some(num(7)?) },
        });
    }
    Ok(out)
}
