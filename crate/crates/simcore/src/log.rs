use std::fmt;
use std::io::{self, Write};

use crate::CoreId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Send,
    Deliver,
    Recv,
    DmaStart,
    DmaDone,
    Cell,
    Note,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Send => "send",
            EventKind::Deliver => "deliver",
            EventKind::Recv => "recv",
            EventKind::DmaStart => "dma_start",
            EventKind::DmaDone => "dma_done",
            EventKind::Cell => "cell",
            EventKind::Note => "note",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One line of the event log. `src`/`dst` are `None` where they do not apply.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub step: u64,
    pub kind: EventKind,
    pub src: Option<CoreId>,
    pub dst: Option<CoreId>,
    pub op: String,
    pub detail: String,
}

fn opt(c: Option<CoreId>) -> String {
    c.map(|c| c.to_string()).unwrap_or_else(|| "-".into())
}

fn clean(s: &str) -> String {
    // keep one event per line and one column per field
    s.replace([',', '\n'], ";")
}

impl Event {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step,
            self.kind,
            opt(self.src),
            opt(self.dst),
            clean(&self.op),
            clean(&self.detail)
        )
    }
}

/// Totally ordered record of a run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    pub events: Vec<Event>,
    pub truncated: bool,
}

impl EventLog {
    pub const HEADER: &'static str = "step,kind,src,dst,op,detail";

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for e in &self.events {
            writeln!(w, "{}", e.csv_line())?;
        }
        if self.truncated {
            writeln!(w, "-,truncated,-,-,-,max_steps reached")?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("event log is utf-8")
    }

    pub fn notes<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a Event> + 'a {
        self.events.iter().filter(move |e| e.kind == EventKind::Note && e.op == tag)
    }

    /// Per-channel FIFO audit: for every (sender, receiver) pair the mailbox arrival order
    /// must be a prefix of the send order, and nothing may arrive twice or unsent.
    /// Envelopes are identified by the `#seq` prefix of the detail field.
    pub fn fifo_violations(&self) -> Vec<String> {
        use std::collections::BTreeMap;
        let mut sent: BTreeMap<(CoreId, CoreId), Vec<u64>> = BTreeMap::new();
        let mut arrived: BTreeMap<(CoreId, CoreId), Vec<u64>> = BTreeMap::new();
        for e in &self.events {
            let (Some(s), Some(d)) = (e.src, e.dst) else { continue };
            let Some(seq) = seq_of(&e.detail) else { continue };
            match e.kind {
                EventKind::Send => sent.entry((s, d)).or_default().push(seq),
                EventKind::Deliver => arrived.entry((s, d)).or_default().push(seq),
                _ => {}
            }
        }
        let mut out = Vec::new();
        for (ch, a) in &arrived {
            let s = sent.get(ch).map(Vec::as_slice).unwrap_or(&[]);
            if a.len() > s.len() || a[..] != s[..a.len()] {
                out.push(format!("channel {ch:?}: arrivals {a:?} do not follow sends {s:?}"));
            }
        }
        out
    }

    /// Envelopes sent but never delivered (only meaningful for a quiescent run).
    pub fn undelivered(&self) -> usize {
        let sends = self.events.iter().filter(|e| e.kind == EventKind::Send).count();
        let dels = self.events.iter().filter(|e| e.kind == EventKind::Deliver).count();
        sends.saturating_sub(dels)
    }
}

pub(crate) fn seq_of(detail: &str) -> Option<u64> {
    let rest = detail.strip_prefix('#')?;
    let end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    rest[..end].parse().ok()
}
