//! Line-oriented, replayable event trace.
//!
//! One event per line: `time<TAB>node<TAB>kind<TAB>key=value;key=value`.
//! Times carry three decimals; kernel-level events use `-` as node.
//! Run counters follow as `#STAT<TAB>key=value` lines.

use std::fmt::{self, Write as _};
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::kernel::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub time: f64,
    pub node: Option<NodeId>,
    pub kind: String,
    pub fields: Vec<(String, String)>,
}

impl TraceEvent {
    pub fn new(time: f64, node: Option<NodeId>, kind: &str) -> Self {
        Self { time, node, kind: kind.to_string(), fields: Vec::new() }
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Parses field `key` into `T`, `None` when absent or malformed.
    pub fn parse_field<T: std::str::FromStr>(&self, key: &str) -> Option<T> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    fn render_into(&self, out: &mut String) {
        let _ = write!(out, "{:.3}\t", self.time);
        match self.node {
            Some(n) => {
                let _ = write!(out, "{}", n.0);
            }
            None => out.push('-'),
        }
        out.push('\t');
        out.push_str(&self.kind);
        out.push('\t');
        for (i, (k, v)) in self.fields.iter().enumerate() {
            if i > 0 {
                out.push(';');
            }
            out.push_str(&escape(k));
            out.push('=');
            out.push_str(&escape(v));
        }
        out.push('\n');
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.render_into(&mut s);
        f.write_str(s.trim_end_matches('\n'))
    }
}

fn escape(s: &str) -> String {
    if !s.contains(['%', ';', '=', '\t', '\n', '\r']) {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len() + 8);
    for c in s.chars() {
        match c {
            '%' => out.push_str("%25"),
            ';' => out.push_str("%3B"),
            '=' => out.push_str("%3D"),
            '\t' => out.push_str("%09"),
            '\n' => out.push_str("%0A"),
            '\r' => out.push_str("%0D"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    if !s.contains('%') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('%') {
        out.push_str(&rest[..i]);
        let code = rest.get(i + 1..i + 3).and_then(|h| u8::from_str_radix(h, 16).ok());
        match code {
            Some(b) => {
                out.push(b as char);
                rest = &rest[i + 3..];
            }
            None => {
                out.push('%');
                rest = &rest[i + 1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Counters reported at the end of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    pub events_processed: u64,
    pub ticks: u64,
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub messages_dropped: u64,
    pub messages_in_flight: u64,
}

impl RunStats {
    pub fn pairs(&self) -> [(&'static str, u64); 6] {
        [
            ("events_processed", self.events_processed),
            ("ticks", self.ticks),
            ("messages_sent", self.messages_sent),
            ("messages_delivered", self.messages_delivered),
            ("messages_dropped", self.messages_dropped),
            ("messages_in_flight", self.messages_in_flight),
        ]
    }
}

#[derive(Debug, Error)]
pub enum TraceParseError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// An in-memory trace plus optional trailing statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub stats: Vec<(String, String)>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, ev: TraceEvent) {
        self.events.push(ev);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn set_stats(&mut self, stats: &RunStats) {
        self.stats = stats.pairs().iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    }

    pub fn stat(&self, key: &str) -> Option<u64> {
        self.stats.iter().find(|(k, _)| k == key).and_then(|(_, v)| v.parse().ok())
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a TraceEvent> + 'a {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 48);
        for ev in &self.events {
            ev.render_into(&mut out);
        }
        for (k, v) in &self.stats {
            let _ = writeln!(out, "#STAT\t{}={}", k, v);
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.render())
    }

    pub fn read_from(path: &Path) -> Result<Self, TraceParseError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, TraceParseError> {
        let mut trace = Trace::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#STAT\t") {
                let (k, v) = rest.split_once('=').ok_or_else(|| TraceParseError::Malformed {
                    line: lineno,
                    reason: "stat without '='".into(),
                })?;
                trace.stats.push((k.to_string(), v.to_string()));
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let mut cols = line.splitn(4, '\t');
            let bad = |reason: &str| TraceParseError::Malformed { line: lineno, reason: reason.into() };
            let time: f64 = cols
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad time column"))?;
            let node = match cols.next().ok_or_else(|| bad("missing node column"))? {
                "-" => None,
                n => Some(NodeId(n.parse().map_err(|_| bad("bad node column"))?)),
            };
            let kind = cols.next().ok_or_else(|| bad("missing kind column"))?.to_string();
            let mut fields = Vec::new();
            if let Some(body) = cols.next() {
                for pair in body.split(';').filter(|p| !p.is_empty()) {
                    let (k, v) = pair.split_once('=').ok_or_else(|| bad("field without '='"))?;
                    fields.push((unescape(k), unescape(v)));
                }
            }
            trace.events.push(TraceEvent { time, node, kind, fields });
        }
        Ok(trace)
    }
}
