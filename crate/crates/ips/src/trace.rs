//! Line-oriented session trace export: `seq kind from to payload-json`.

use std::fmt::Write as _;

use ips_core::slp::SlpMessage;

use crate::error::{Error, Result};

pub fn trace_line(m: &SlpMessage) -> Result<String> {
    let payload = serde_json::to_string(&m.payload).map_err(|e| Error::Runtime(e.to_string()))?;
    Ok(format!("{} {} {} {} {}", m.seq, m.kind.label(), m.from, m.to, payload))
}

pub fn render_trace(trace: &[SlpMessage]) -> Result<String> {
    let mut out = String::new();
    for m in trace {
        writeln!(out, "{}", trace_line(m)?).expect("writing to a string");
    }
    Ok(out)
}
