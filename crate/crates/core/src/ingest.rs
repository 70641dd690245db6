//! Parsing of `strace -f -ttt` output and `/proc/<pid>/stat` records, plus
//! the canonical on-disk formats: events as JSON lines, telemetry as CSV.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed stat record: {0}")]
    MalformedStat(String),
    #[error("mixed process groups in aggregate: {0} and {1}")]
    MixedGroup(i64, i64),
    #[error("malformed event record on line {line}: {reason}")]
    MalformedEvent { line: usize, reason: String },
    #[error("malformed telemetry record: {0}")]
    MalformedTelemetry(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Wall-clock instant with microsecond resolution.
///
/// Stored as integer microseconds so that window assignment is exact;
/// serialized as fractional seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const fn from_micros(micros: i64) -> Self {
        Timestamp(micros)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * 1e6).round() as i64)
    }

    pub const fn as_micros(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn now() -> Self {
        let since = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap_or_default();
        Timestamp(since.as_micros() as i64)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:06}", abs / 1_000_000, abs % 1_000_000)
    }
}

impl FromStr for Timestamp {
    type Err = String;

    /// Parses `SECONDS[.FRACTION]` exactly, without a float round trip.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("invalid timestamp {s:?}");
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (whole, frac) = body.split_once('.').unwrap_or((body, ""));
        if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if frac.len() > 6 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            // Finer than a microsecond: fall back to rounding.
            return s
                .parse::<f64>()
                .map(Timestamp::from_secs_f64)
                .map_err(|_| bad());
        }
        let secs: i64 = whole.parse().map_err(|_| bad())?;
        let micros = frac
            .bytes()
            .chain(std::iter::repeat(b'0'))
            .take(6)
            .fold(0i64, |acc, b| acc * 10 + i64::from(b - b'0'));
        let total = secs
            .checked_mul(1_000_000)
            .and_then(|v| v.checked_add(micros))
            .ok_or_else(bad)?;
        Ok(Timestamp(if neg { -total } else { total }))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_secs_f64())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        f64::deserialize(deserializer).map(Timestamp::from_secs_f64)
    }
}

/// One traced system call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyscallEvent {
    pub ts: Timestamp,
    pub pid: u32,
    pub name: String,
}

/// Classification of a single line of strace output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedLine {
    Event(SyscallEvent),
    /// Resumed continuations, signal deliveries and exit notices.
    Noise,
    Malformed(String),
}

pub(crate) fn is_syscall_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Classifies one line of `strace -f -ttt` output.
///
/// Entry lines, including `<unfinished ...>` ones, become events stamped
/// with the call's start time. The `<... name resumed>` half of a split call
/// is noise so each call is counted once.
pub fn parse_strace_line(line: &str) -> ParsedLine {
    let trimmed = line.trim_end_matches(['\n', '\r']);
    let malformed = || ParsedLine::Malformed(trimmed.to_string());

    let mut rest = trimmed.trim_start();
    // `[pid  N]` prefix appears when strace writes to stderr instead of -o.
    if let Some(after) = rest.strip_prefix("[pid") {
        match after.split_once(']') {
            Some((pid, tail)) => {
                rest = tail.trim_start();
                return classify_body(pid.trim(), rest, trimmed);
            }
            None => return malformed(),
        }
    }
    let Some((pid, tail)) = rest.split_once(char::is_whitespace) else {
        return malformed();
    };
    classify_body(pid, tail.trim_start(), trimmed)
}

fn classify_body(pid: &str, rest: &str, original: &str) -> ParsedLine {
    let malformed = || ParsedLine::Malformed(original.to_string());
    let Ok(pid) = pid.parse::<u32>() else {
        return malformed();
    };
    if pid == 0 {
        return malformed();
    }
    let Some((ts, body)) = rest.split_once(char::is_whitespace) else {
        return malformed();
    };
    let Ok(ts) = ts.parse::<Timestamp>() else {
        return malformed();
    };
    if ts.as_micros() < 0 {
        return malformed();
    }
    let body = body.trim_start();

    if body.starts_with("<...") && body.contains("resumed>") {
        return ParsedLine::Noise;
    }
    if body.starts_with("--- ") || body.starts_with("+++ ") {
        return ParsedLine::Noise;
    }

    let Some(open) = body.find('(') else {
        return malformed();
    };
    let name = &body[..open];
    if !is_syscall_name(name) {
        return malformed();
    }
    ParsedLine::Event(SyscallEvent {
        ts,
        pid,
        name: name.to_string(),
    })
}

/// Result of parsing a whole strace log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedStream {
    pub events: Vec<SyscallEvent>,
    pub malformed_count: usize,
}

/// Parses every line, drops noise, and stable-sorts the events by start
/// time since `strace -f` interleaves per-thread output slightly out of order.
pub fn parse_strace_stream<I, S>(lines: I) -> ParsedStream
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = ParsedStream::default();
    for line in lines {
        let line = line.as_ref();
        if line.trim().is_empty() {
            continue;
        }
        match parse_strace_line(line) {
            ParsedLine::Event(ev) => out.events.push(ev),
            ParsedLine::Noise => {}
            ParsedLine::Malformed(_) => out.malformed_count += 1,
        }
    }
    out.events.sort_by_key(|ev| ev.ts);
    out
}

/// Parses a strace log from a reader. Invalid UTF-8 lines count as malformed.
pub fn read_strace<R: BufRead>(reader: R) -> Result<ParsedStream, IngestError> {
    let mut lines = Vec::new();
    let mut bad_utf8 = 0;
    for line in reader.split(b'\n') {
        match String::from_utf8(line?) {
            Ok(s) => lines.push(s),
            Err(_) => bad_utf8 += 1,
        }
    }
    let mut parsed = parse_strace_stream(lines);
    parsed.malformed_count += bad_utf8;
    Ok(parsed)
}

/// The fields of `/proc/<pid>/stat` this toolkit uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcStat {
    pub pid: i64,
    pub comm: String,
    pub state: char,
    pub ppid: i64,
    pub pgrp: i64,
    /// User CPU, jiffies.
    pub utime: u64,
    /// System CPU, jiffies.
    pub stime: u64,
    /// Resident set, pages.
    pub rss: u64,
}

/// Parses the content of one `/proc/<pid>/stat` file.
///
/// `comm` is delimited by the first `(` and the *last* `)`, since the
/// command name may itself contain spaces and parentheses.
pub fn parse_proc_stat(text: &str) -> Result<ProcStat, IngestError> {
    let text = text.trim_end();
    let err = |why: &str| IngestError::MalformedStat(format!("{why}: {text:?}"));

    let open = text.find('(').ok_or_else(|| err("missing '('"))?;
    let close = text.rfind(')').ok_or_else(|| err("missing ')'"))?;
    if close < open {
        return Err(err("unbalanced comm"));
    }
    let pid = text[..open]
        .trim()
        .parse::<i64>()
        .map_err(|_| err("bad pid"))?;
    let comm = text[open + 1..close].to_string();
    // Fields 3.. of the stat layout.
    let rest: Vec<&str> = text[close + 1..].trim_start().split(' ').collect();
    // pid and comm account for the first two fields.
    if rest.len() + 2 < 24 {
        return Err(err("fewer than 24 fields"));
    }
    let field = |n: usize| rest[n - 3];
    let num_i = |n: usize| {
        field(n)
            .parse::<i64>()
            .map_err(|_| err(&format!("field {n}")))
    };
    let num_u = |n: usize| {
        field(n)
            .parse::<u64>()
            .map_err(|_| err(&format!("field {n}")))
    };

    let mut state_chars = field(3).chars();
    let state = match (state_chars.next(), state_chars.next()) {
        (Some(c), None) => c,
        _ => return Err(err("field 3")),
    };
    let pgrp = num_i(5)?;
    if pgrp <= 0 {
        return Err(err("non-positive pgrp"));
    }
    // rss is signed in the kernel's format but never negative for a live task.
    let rss = field(24)
        .parse::<i64>()
        .map_err(|_| err("field 24"))?
        .max(0) as u64;
    Ok(ProcStat {
        pid,
        comm,
        state,
        ppid: num_i(4)?,
        pgrp,
        utime: num_u(14)?,
        stime: num_u(15)?,
        rss,
    })
}

/// Resource snapshot of a whole process group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub ts: Timestamp,
    pub pgid: i64,
    /// Cumulative user+system CPU of all members, in jiffies.
    pub cpu_jiffies: f64,
    pub rss_bytes: u64,
}

/// Sums the members of one process group into a single sample.
pub fn aggregate_group(
    stats: &[ProcStat],
    ts: Timestamp,
    pgid: i64,
    page_size: u64,
) -> Result<TelemetrySample, IngestError> {
    if let Some(other) = stats.iter().find(|s| s.pgrp != pgid) {
        return Err(IngestError::MixedGroup(pgid, other.pgrp));
    }
    let jiffies: u64 = stats.iter().map(|s| s.utime + s.stime).sum();
    let pages: u64 = stats.iter().map(|s| s.rss).sum();
    Ok(TelemetrySample {
        ts,
        pgid,
        cpu_jiffies: jiffies as f64,
        rss_bytes: pages * page_size,
    })
}

/// Host constants needed to turn jiffies and pages into fractions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HostInfo {
    pub ticks_per_second: u64,
    pub page_size: u64,
    pub cores: u32,
}

impl Default for HostInfo {
    fn default() -> Self {
        HostInfo {
            ticks_per_second: 100,
            page_size: 4096,
            cores: 1,
        }
    }
}

impl HostInfo {
    pub fn header_line(&self) -> String {
        format!(
            "# ticks={} page={} cores={}",
            self.ticks_per_second, self.page_size, self.cores
        )
    }

    /// Parses a `# ticks=.. page=.. cores=..` comment line.
    pub fn parse_header(line: &str) -> Option<HostInfo> {
        let body = line.trim().strip_prefix('#')?;
        let mut host = HostInfo::default();
        let mut seen = 0;
        for kv in body.split_whitespace() {
            let (k, v) = kv.split_once('=')?;
            match k {
                "ticks" => host.ticks_per_second = v.parse().ok()?,
                "page" => host.page_size = v.parse().ok()?,
                "cores" => host.cores = v.parse().ok()?,
                _ => continue,
            }
            seen += 1;
        }
        (seen > 0 && host.ticks_per_second > 0 && host.cores > 0).then_some(host)
    }
}

pub fn write_events<W: Write>(mut out: W, events: &[SyscallEvent]) -> Result<(), IngestError> {
    for ev in events {
        serde_json::to_writer(&mut out, ev).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<SyscallEvent>, IngestError> {
    let mut events = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: SyscallEvent =
            serde_json::from_str(&line).map_err(|e| IngestError::MalformedEvent {
                line: n + 1,
                reason: e.to_string(),
            })?;
        if !is_syscall_name(&ev.name) {
            return Err(IngestError::MalformedEvent {
                line: n + 1,
                reason: format!("invalid syscall name {:?}", ev.name),
            });
        }
        events.push(ev);
    }
    Ok(events)
}

const TELEMETRY_HEADER: [&str; 4] = ["ts", "pgid", "cpu_jiffies", "rss_bytes"];

/// Writes the telemetry CSV, preceded by the host-constant comment line.
pub fn write_telemetry<W: Write>(
    mut out: W,
    host: &HostInfo,
    samples: &[TelemetrySample],
) -> Result<(), IngestError> {
    writeln!(out, "{}", host.header_line())?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let csv_err = |e: csv::Error| IngestError::Io(io::Error::other(e));
    w.write_record(TELEMETRY_HEADER).map_err(csv_err)?;
    for s in samples {
        w.write_record([
            s.ts.to_string(),
            s.pgid.to_string(),
            s.cpu_jiffies.to_string(),
            s.rss_bytes.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a telemetry CSV. Host constants default when the header comment
/// is absent.
pub fn read_telemetry<R: BufRead>(
    mut reader: R,
) -> Result<(HostInfo, Vec<TelemetrySample>), IngestError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let host = text
        .lines()
        .take_while(|l| l.trim_start().starts_with('#'))
        .find_map(HostInfo::parse_header)
        .unwrap_or_default();

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let bad = |e: String| IngestError::MalformedTelemetry(e);
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.iter().ne(TELEMETRY_HEADER) {
        return Err(bad(format!("unexpected header {headers:?}")));
    }
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let ts = get(0).parse::<Timestamp>().map_err(bad)?;
        let pgid = get(1).parse::<i64>().map_err(|e| bad(e.to_string()))?;
        let cpu_jiffies = get(2).parse::<f64>().map_err(|e| bad(e.to_string()))?;
        let rss_bytes = get(3).parse::<u64>().map_err(|e| bad(e.to_string()))?;
        if !cpu_jiffies.is_finite() || cpu_jiffies < 0.0 {
            return Err(bad(format!("cpu_jiffies out of range: {cpu_jiffies}")));
        }
        samples.push(TelemetrySample {
            ts,
            pgid,
            cpu_jiffies,
            rss_bytes,
        });
    }
    Ok((host, samples))
}
