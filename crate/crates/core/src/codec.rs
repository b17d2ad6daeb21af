//! Binary trace files and the location mapping file.
//!
//! Trace layout (little-endian):
//!
//! ```text
//! "SPTR" | version u16 = 1
//! source kind u8 | nominal frequency u64 (0 = unknown) | label: u16 len + UTF-8
//! thread id u64 | thread name: u16 len + UTF-8
//! records: tag u8, then
//!   ASB      cycles u64, method id u32
//!   SSB/PSB  cycles u64, method id u32, stream id u64
//!   SE       cycles u64
//! ```
//!
//! The location file is UTF-8 text, one `method_id<TAB>qualified_name` line per
//! entry in ascending id order.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::cycles::{CycleSourceDescriptor, CycleSourceKind};
use crate::recorder::{EventKind, MethodId, SpanEvent, ThreadTrace, LOCATIONS_FILE};

pub const MAGIC: &[u8; 4] = b"SPTR";
pub const FORMAT_VERSION: u16 = 1;
pub const TRACE_EXTENSION: &str = "sptr";

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "string longer than 65535 bytes"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub fn write_header<W: Write>(
    w: &mut W,
    descriptor: &CycleSourceDescriptor,
    thread_id: u64,
    thread_name: &str,
) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[descriptor.kind.code()])?;
    w.write_all(&descriptor.nominal_frequency_hz.unwrap_or(0).to_le_bytes())?;
    write_str(w, &descriptor.platform_label)?;
    w.write_all(&thread_id.to_le_bytes())?;
    write_str(w, thread_name)
}

pub fn write_events<W: Write>(w: &mut W, events: &[SpanEvent]) -> io::Result<()> {
    let mut rec = [0u8; 21];
    for e in events {
        rec[0] = e.kind.tag();
        rec[1..9].copy_from_slice(&e.cycles.to_le_bytes());
        let len = match e.kind {
            EventKind::Asb => {
                rec[9..13].copy_from_slice(&e.method_id.0.to_le_bytes());
                13
            }
            EventKind::Ssb | EventKind::Psb => {
                rec[9..13].copy_from_slice(&e.method_id.0.to_le_bytes());
                rec[13..21].copy_from_slice(&(e.stream_id as u64).to_le_bytes());
                21
            }
            EventKind::Se => 9,
        };
        w.write_all(&rec[..len])?;
    }
    Ok(())
}

/// A decoded trace file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceFile {
    pub descriptor: CycleSourceDescriptor,
    pub trace: ThreadTrace,
}

pub fn encode_trace(descriptor: &CycleSourceDescriptor, trace: &ThreadTrace) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + trace.events.len() * 13);
    write_header(&mut out, descriptor, trace.thread_id, &trace.thread_name).expect("write to Vec");
    write_events(&mut out, &trace.events).expect("write to Vec");
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeErrorKind {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown cycle source kind {0}")]
    UnknownSourceKind(u8),
    #[error("unknown record tag {0}")]
    UnknownTag(u8),
    #[error("truncated {0}")]
    Truncated(&'static str),
    #[error("invalid UTF-8 in {0}")]
    InvalidUtf8(&'static str),
    #[error("stream id {0} out of range")]
    StreamIdOutOfRange(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind} at byte offset {offset}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.pos < n {
            return Err(DecodeError { offset: self.pos, kind: DecodeErrorKind::Truncated(what) });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, DecodeError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &'static str) -> Result<String, DecodeError> {
        let len = self.u16(what)? as usize;
        let start = self.pos;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| DecodeError { offset: start, kind: DecodeErrorKind::InvalidUtf8(what) })
    }
}

pub fn decode_trace(bytes: &[u8]) -> Result<TraceFile, DecodeError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(DecodeError { offset: 0, kind: DecodeErrorKind::BadMagic });
    }
    let version = c.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(DecodeError { offset: 4, kind: DecodeErrorKind::UnsupportedVersion(version) });
    }
    let kind_offset = c.pos;
    let kind_code = c.u8("source kind")?;
    let kind = CycleSourceKind::from_code(kind_code)
        .ok_or(DecodeError { offset: kind_offset, kind: DecodeErrorKind::UnknownSourceKind(kind_code) })?;
    let freq = c.u64("nominal frequency")?;
    let platform_label = c.string("platform label")?;
    let thread_id = c.u64("thread id")?;
    let thread_name = c.string("thread name")?;

    let mut events = Vec::with_capacity((bytes.len() - c.pos) / 13);
    while c.pos < bytes.len() {
        let offset = c.pos;
        let tag = c.u8("record tag")?;
        let kind = EventKind::from_tag(tag).ok_or(DecodeError { offset, kind: DecodeErrorKind::UnknownTag(tag) })?;
        let cycles = c.u64("record cycles")?;
        let event = match kind {
            EventKind::Asb => SpanEvent::anonymous_begin(cycles, MethodId(c.u32("record method id")?)),
            EventKind::Ssb | EventKind::Psb => {
                let method_id = MethodId(c.u32("record method id")?);
                let sid_offset = c.pos;
                let sid = c.u64("record stream id")?;
                if sid > i64::MAX as u64 {
                    return Err(DecodeError { offset: sid_offset, kind: DecodeErrorKind::StreamIdOutOfRange(sid) });
                }
                if kind == EventKind::Ssb {
                    SpanEvent::support_begin(cycles, sid, method_id)
                } else {
                    SpanEvent::primordial_begin(cycles, sid, method_id)
                }
            }
            EventKind::Se => SpanEvent::end(cycles),
        };
        events.push(event);
    }
    Ok(TraceFile {
        descriptor: CycleSourceDescriptor {
            kind,
            nominal_frequency_hz: (freq != 0).then_some(freq),
            platform_label,
        },
        trace: ThreadTrace { thread_id, thread_name, events },
    })
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed trace {}: {source}", path.display())]
    MalformedTrace {
        path: PathBuf,
        #[source]
        source: DecodeError,
    },
    #[error("malformed location file {}, line {line}: {reason}", path.display())]
    MalformedLocations { path: PathBuf, line: usize, reason: String },
}

pub fn read_trace_file(path: &Path) -> Result<TraceFile, LoadError> {
    let bytes = fs::read(path).map_err(|source| LoadError::Io { path: path.to_owned(), source })?;
    decode_trace(&bytes).map_err(|source| LoadError::MalformedTrace { path: path.to_owned(), source })
}

pub fn write_locations(path: &Path, names: &[String]) -> io::Result<()> {
    let mut out = String::new();
    for (id, name) in names.iter().enumerate() {
        out.push_str(&format!("{id}\t{name}\n"));
    }
    fs::write(path, out)
}

/// Parses a location file into names indexed by method id.
pub fn parse_locations(text: &str) -> Result<Vec<String>, (usize, String)> {
    let mut names = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let (id, name) = line.split_once('\t').ok_or((line_no, "missing tab separator".to_owned()))?;
        let id: usize = id.parse().map_err(|_| (line_no, format!("invalid method id `{id}`")))?;
        if id != names.len() {
            return Err((line_no, format!("expected method id {}, found {id}", names.len())));
        }
        if name.is_empty() {
            return Err((line_no, "empty location name".to_owned()));
        }
        names.push(name.to_owned());
    }
    Ok(names)
}

pub fn read_locations(path: &Path) -> Result<Vec<String>, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.to_owned(), source })?;
    parse_locations(&text).map_err(|(line, reason)| LoadError::MalformedLocations { path: path.to_owned(), line, reason })
}

/// Every trace file in a directory plus its location names.
#[derive(Debug, Clone)]
pub struct TraceSet {
    pub files: Vec<TraceFile>,
    pub locations: Vec<String>,
}

/// Loads all `*.sptr` files in `dir` (sorted by file name) and the given location file,
/// defaulting to `dir/locations.tsv`.
pub fn load_trace_dir(dir: &Path, locations: Option<&Path>) -> Result<TraceSet, LoadError> {
    let io_err = |source| LoadError::Io { path: dir.to_owned(), source };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == TRACE_EXTENSION))
        .collect();
    paths.sort();
    let files = paths.iter().map(|p| read_trace_file(p)).collect::<Result<Vec<_>, _>>()?;
    let loc_path = locations.map(Path::to_owned).unwrap_or_else(|| dir.join(LOCATIONS_FILE));
    let locations = read_locations(&loc_path)?;
    Ok(TraceSet { files, locations })
}
