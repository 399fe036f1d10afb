//! Line-oriented CSV trace of a run.
//!
//! Every row carries the same fixed column set; fields that do not apply are
//! empty. Rows are written in non-decreasing time order.

use std::fmt;
use std::io::{Read, Write};

use thiserror::Error;

use crate::time::SimTime;

pub const COLUMNS: [&str; 16] = [
    "time", "node", "layer", "event", "kind", "packet", "src", "dst", "seq", "attempt", "slot", "pulses",
    "collisions", "sinr_db", "reason", "value",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TraceLayer {
    Phy,
    Mac,
    Sensor,
    Energy,
}

impl TraceLayer {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceLayer::Phy => "PHY",
            TraceLayer::Mac => "MAC",
            TraceLayer::Sensor => "SENSOR",
            TraceLayer::Energy => "ENERGY",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "PHY" => TraceLayer::Phy,
            "MAC" => TraceLayer::Mac,
            "SENSOR" => TraceLayer::Sensor,
            "ENERGY" => TraceLayer::Energy,
            _ => return None,
        })
    }
}

macro_rules! events {
    ($($variant:ident => $name:literal),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum TraceEvent { $($variant),* }

        impl TraceEvent {
            pub fn as_str(self) -> &'static str {
                match self { $(TraceEvent::$variant => $name),* }
            }

            pub fn parse(s: &str) -> Option<Self> {
                match s { $($name => Some(TraceEvent::$variant),)* _ => None }
            }
        }
    };
}

events! {
    // PHY
    TxStart => "tx-start",
    TxEnd => "tx-end",
    RxStart => "rx-start",
    RxOk => "rx-ok",
    Drop => "drop",
    Sleep => "sleep",
    Wake => "wake",
    // MAC
    Enqueue => "enqueue",
    Send => "send",
    Deliver => "deliver",
    Duplicate => "duplicate",
    Foreign => "foreign",
    AckUnexpected => "ack-unexpected",
    Sent => "sent",
    Acked => "acked",
    Failed => "failed",
    // SENSOR
    Emit => "emit",
    Detect => "detect",
    Report => "report",
    Suppressed => "suppressed",
    // ENERGY
    PulsesTx => "pulses-tx",
    PulsesRx => "pulses-rx",
    StateTime => "state-time",
    Total => "total",
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Fields {
    /// `DATA` or `ACK`.
    pub kind: Option<&'static str>,
    pub packet: Option<u64>,
    pub src: Option<u32>,
    pub dst: Option<u32>,
    pub seq: Option<u32>,
    pub attempt: Option<u32>,
    pub slot: Option<u64>,
    pub pulses: Option<u32>,
    pub collisions: Option<u32>,
    pub sinr_db: Option<f64>,
    pub reason: Option<String>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub node: Option<u32>,
    pub layer: TraceLayer,
    pub event: TraceEvent,
    pub fields: Fields,
}

impl TraceRecord {
    pub fn new(time: SimTime, node: Option<u32>, layer: TraceLayer, event: TraceEvent) -> Self {
        TraceRecord { time, node, layer, event, fields: Fields::default() }
    }

    pub fn with(mut self, f: impl FnOnce(&mut Fields)) -> Self {
        f(&mut self.fields);
        self
    }

    fn to_row(&self) -> [String; 16] {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(ToString::to_string).unwrap_or_default()
        }
        let f = &self.fields;
        [
            self.time.ticks().to_string(),
            opt(&self.node),
            self.layer.as_str().to_string(),
            self.event.as_str().to_string(),
            opt(&f.kind),
            opt(&f.packet),
            opt(&f.src),
            opt(&f.dst),
            opt(&f.seq),
            opt(&f.attempt),
            opt(&f.slot),
            opt(&f.pulses),
            opt(&f.collisions),
            opt(&f.sinr_db),
            opt(&f.reason),
            opt(&f.value),
        ]
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {message}")]
    Malformed { line: u64, message: String },
}

impl From<csv::Error> for TraceError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        match e.into_kind() {
            csv::ErrorKind::Io(io) => TraceError::Io(io),
            other => TraceError::Malformed { line, message: format!("{other:?}") },
        }
    }
}

pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
    last_time: SimTime,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Result<Self, TraceError> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        inner.write_record(COLUMNS)?;
        Ok(TraceWriter { inner, last_time: SimTime::ZERO })
    }

    pub fn write(&mut self, record: &TraceRecord) -> Result<(), TraceError> {
        debug_assert!(record.time >= self.last_time, "trace rows out of time order");
        self.last_time = record.time;
        self.inner.write_record(record.to_row())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, TraceError> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| TraceError::Io(e.into_error()))
    }
}

/// Where the engine's records go.
pub enum TraceSink {
    Off,
    Memory(Vec<TraceRecord>),
    Writer(Box<TraceWriter<Box<dyn Write + Send>>>),
}

impl TraceSink {
    pub fn to_writer(out: impl Write + Send + 'static) -> Result<Self, TraceError> {
        let out: Box<dyn Write + Send> = Box::new(out);
        Ok(TraceSink::Writer(Box::new(TraceWriter::new(out)?)))
    }

    pub fn record(&mut self, record: TraceRecord) -> Result<(), TraceError> {
        match self {
            TraceSink::Off => Ok(()),
            TraceSink::Memory(v) => {
                v.push(record);
                Ok(())
            }
            TraceSink::Writer(w) => w.write(&record),
        }
    }

    pub fn is_off(&self) -> bool {
        matches!(self, TraceSink::Off)
    }

    /// Flushes a writer sink and returns any in-memory records.
    pub fn finish(self) -> Result<Vec<TraceRecord>, TraceError> {
        match self {
            TraceSink::Off => Ok(Vec::new()),
            TraceSink::Memory(v) => Ok(v),
            TraceSink::Writer(w) => w.finish().map(|_| Vec::new()),
        }
    }
}

fn field<T: std::str::FromStr>(raw: &str, name: &str, line: u64) -> Result<Option<T>, TraceError> {
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse().map(Some).map_err(|_| TraceError::Malformed {
        line,
        message: format!("invalid {name} `{raw}`"),
    })
}

fn kind(raw: &str, line: u64) -> Result<Option<&'static str>, TraceError> {
    match raw {
        "" => Ok(None),
        "DATA" => Ok(Some("DATA")),
        "ACK" => Ok(Some("ACK")),
        other => Err(TraceError::Malformed { line, message: format!("invalid kind `{other}`") }),
    }
}

/// Parses a trace written by [`TraceWriter`], reporting the first malformed
/// row by line number.
pub fn read_trace(input: impl Read) -> Result<Vec<TraceRecord>, TraceError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows = reader.records();
    match rows.next() {
        Some(header) => {
            let header = header?;
            if header.iter().ne(COLUMNS) {
                return Err(TraceError::Malformed { line: 1, message: "unexpected header".into() });
            }
        }
        None => return Err(TraceError::Malformed { line: 1, message: "missing header".into() }),
    }
    let mut out = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != COLUMNS.len() {
            return Err(TraceError::Malformed {
                line,
                message: format!("expected {} fields, found {}", COLUMNS.len(), row.len()),
            });
        }
        let time = field::<u64>(&row[0], "time", line)?
            .map(SimTime::from_ticks)
            .ok_or_else(|| TraceError::Malformed { line, message: "missing time".into() })?;
        let layer = TraceLayer::parse(&row[2])
            .ok_or_else(|| TraceError::Malformed { line, message: format!("invalid layer `{}`", &row[2]) })?;
        let event = TraceEvent::parse(&row[3])
            .ok_or_else(|| TraceError::Malformed { line, message: format!("invalid event `{}`", &row[3]) })?;
        out.push(TraceRecord {
            time,
            node: field(&row[1], "node", line)?,
            layer,
            event,
            fields: Fields {
                kind: kind(&row[4], line)?,
                packet: field(&row[5], "packet", line)?,
                src: field(&row[6], "src", line)?,
                dst: field(&row[7], "dst", line)?,
                seq: field(&row[8], "seq", line)?,
                attempt: field(&row[9], "attempt", line)?,
                slot: field(&row[10], "slot", line)?,
                pulses: field(&row[11], "pulses", line)?,
                collisions: field(&row[12], "collisions", line)?,
                sinr_db: field(&row[13], "sinr_db", line)?,
                reason: (!row[14].is_empty()).then(|| row[14].to_string()),
                value: field(&row[15], "value", line)?,
            },
        });
    }
    Ok(out)
}
