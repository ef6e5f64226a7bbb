//! Trace files.
//!
//! Text format, one access per line:
//!
//! ```text
//! # instruction-gap op virtual-address
//! 0 R 0x1f40
//! 3 W 0xdeadbeef
//! ```
//!
//! `#` starts a comment that runs to the end of the line. The binary variant
//! is the magic `PBT1`, a little-endian `u64` record count, then per record
//! the gap (`u64` LE), the op (`u8`, 0 = R, 1 = W) and the address (`u64` LE).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::PHYS_ADDR_BITS;
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"PBT1";
const BINARY_RECORD_BYTES: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Read,
    Write,
}

impl Op {
    pub fn is_write(self) -> bool {
        self == Op::Write
    }

    fn letter(self) -> char {
        match self {
            Op::Read => 'R',
            Op::Write => 'W',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    /// Non-memory instructions since the previous record.
    pub gap: u64,
    pub op: Op,
    pub vaddr: u64,
}

impl TraceRecord {
    pub fn read(gap: u64, vaddr: u64) -> Self {
        TraceRecord { gap, op: Op::Read, vaddr }
    }

    pub fn write(gap: u64, vaddr: u64) -> Self {
        TraceRecord { gap, op: Op::Write, vaddr }
    }
}

const ADDR_LIMIT: u64 = 1 << PHYS_ADDR_BITS;

fn parse_line(text: &str, line: usize) -> Result<Option<TraceRecord>> {
    let body = text.split('#').next().unwrap_or("");
    let mut fields = body.split_whitespace();
    let Some(gap) = fields.next() else {
        return Ok(None);
    };
    let err = |msg: String| Error::TraceParse { line, msg };
    let gap: u64 = gap.parse().map_err(|_| err(format!("bad instruction gap `{gap}`")))?;
    let op = match fields.next() {
        Some("R") => Op::Read,
        Some("W") => Op::Write,
        Some(other) => return Err(err(format!("bad op `{other}`, expected R or W"))),
        None => return Err(err("missing op".into())),
    };
    let addr = fields.next().ok_or_else(|| err("missing address".into()))?;
    let hex = addr
        .strip_prefix("0x")
        .or_else(|| addr.strip_prefix("0X"))
        .ok_or_else(|| err(format!("address `{addr}` lacks a 0x prefix")))?;
    let vaddr = u64::from_str_radix(hex, 16).map_err(|_| err(format!("bad address `{addr}`")))?;
    if vaddr >= ADDR_LIMIT {
        return Err(err(format!("address {addr} does not fit in 48 bits")));
    }
    if let Some(extra) = fields.next() {
        return Err(err(format!("unexpected trailing field `{extra}`")));
    }
    Ok(Some(TraceRecord { gap, op, vaddr }))
}

/// Streaming reader over the text format.
pub struct TextTraceReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> TextTraceReader<R> {
    pub fn new(reader: R) -> Self {
        TextTraceReader { lines: reader.lines(), line: 0 }
    }
}

impl<R: BufRead> Iterator for TextTraceReader<R> {
    type Item = Result<TraceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            match parse_line(&text, self.line) {
                Ok(Some(r)) => return Some(Ok(r)),
                Ok(None) => continue,
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

pub fn parse_trace<R: BufRead>(reader: R) -> Result<Vec<TraceRecord>> {
    TextTraceReader::new(reader).collect()
}

pub fn parse_trace_str(text: &str) -> Result<Vec<TraceRecord>> {
    parse_trace(text.as_bytes())
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{} {} {:#x}", r.gap, r.op.letter(), r.vaddr)?;
    }
    out.flush()
}

pub fn trace_to_string(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_trace(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("trace text is ASCII")
}

pub fn write_binary<W: Write>(records: &[TraceRecord], mut out: W) -> std::io::Result<()> {
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        out.write_all(&r.gap.to_le_bytes())?;
        out.write_all(&[u8::from(r.op.is_write())])?;
        out.write_all(&r.vaddr.to_le_bytes())?;
    }
    out.flush()
}

pub fn read_binary<R: Read>(mut input: R) -> Result<Vec<TraceRecord>> {
    let bad = |msg: &str| Error::TraceBinary(msg.to_string());
    let mut header = [0u8; 12];
    input.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
    if &header[..4] != BINARY_MAGIC {
        return Err(bad("missing PBT1 magic"));
    }
    let count = u64::from_le_bytes(header[4..].try_into().unwrap());
    let mut records = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut rec = [0u8; BINARY_RECORD_BYTES];
    for i in 0..count {
        input
            .read_exact(&mut rec)
            .map_err(|_| Error::TraceBinary(format!("truncated at record {i} of {count}")))?;
        let gap = u64::from_le_bytes(rec[..8].try_into().unwrap());
        let op = match rec[8] {
            0 => Op::Read,
            1 => Op::Write,
            other => return Err(Error::TraceBinary(format!("record {i}: bad op byte {other}"))),
        };
        let vaddr = u64::from_le_bytes(rec[9..].try_into().unwrap());
        if vaddr >= ADDR_LIMIT {
            return Err(Error::TraceBinary(format!("record {i}: address exceeds 48 bits")));
        }
        records.push(TraceRecord { gap, op, vaddr });
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after the last record"));
    }
    Ok(records)
}

/// Loads a trace file in either format, sniffing the binary magic.
pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let trace_err = |e| Error::TraceFile { path: path.to_path_buf(), source: e };
    let file = File::open(path).map_err(trace_err)?;
    let mut reader = BufReader::new(file);
    let head = reader.fill_buf().map_err(trace_err)?;
    if head.starts_with(BINARY_MAGIC) {
        read_binary(reader)
    } else {
        parse_trace(reader)
    }
}

pub fn save_trace(path: &Path, records: &[TraceRecord], binary: bool) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let out = BufWriter::new(file);
    if binary {
        write_binary(records, out)
    } else {
        write_trace(records, out)
    }
    .map_err(|e| Error::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_examples() {
        let t = parse_trace_str("0 R 0x1F40\n3 W 0xdeadbeef\n").unwrap();
        assert_eq!(t, vec![TraceRecord::read(0, 0x1F40), TraceRecord::write(3, 0xdeadbeef)]);
    }

    #[test]
    fn malformed_gap_reports_line() {
        match parse_trace_str("x R 0x0").unwrap_err() {
            Error::TraceParse { line, .. } => assert_eq!(line, 1),
            e => panic!("{e}"),
        }
        match parse_trace_str("# header\n\n0 R 0x0\n0 Q 0x0\n").unwrap_err() {
            Error::TraceParse { line, .. } => assert_eq!(line, 4),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn rejects_wide_addresses_and_junk() {
        assert!(parse_trace_str("0 R 0x1000000000000").is_err());
        assert!(parse_trace_str("0 R 0xffffffffffff").is_ok());
        assert!(parse_trace_str("0 R 1234").is_err());
        assert!(parse_trace_str("0 R 0x10 extra").is_err());
        assert!(parse_trace_str("-1 R 0x10").is_err());
        assert!(parse_trace_str("0 R").is_err());
    }

    #[test]
    fn comments_are_dropped_on_round_trip() {
        let text = "# generated\n0 R 0x40 # first\n\n7 W 0x80\n";
        let t = parse_trace_str(text).unwrap();
        assert_eq!(trace_to_string(&t), "0 R 0x40\n7 W 0x80\n");
    }

    #[test]
    fn empty_trace_is_empty_file() {
        assert_eq!(trace_to_string(&[]), "");
        assert!(parse_trace_str("").unwrap().is_empty());
    }

    #[test]
    fn binary_round_trip_and_errors() {
        let t = vec![TraceRecord::read(1, 0xabc), TraceRecord::write(0, 0xffff_ffff_ffff)];
        let mut buf = Vec::new();
        write_binary(&t, &mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 2 * BINARY_RECORD_BYTES);
        assert_eq!(read_binary(&buf[..]).unwrap(), t);
        assert!(read_binary(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_binary(&extra[..]).is_err());
        assert!(read_binary(&b"PBT2"[..]).is_err());
    }
}
