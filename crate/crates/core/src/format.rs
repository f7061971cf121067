//! On-disk dump file format.
//!
//! ```text
//! file    := MAGIC frame*            MAGIC = "TDMP0001"
//! frame   := SYNC type len payload crc
//!            SYNC = D7 41 9A 5C, type = 'H' | 'R' | 'E', len = u32 LE,
//!            crc = CRC-32 (IEEE) over type ++ len ++ payload, u32 LE
//! header  := version:u16 chunk_index:u32 column_count:u16 table:str insert_sql:str
//! record  := field_count:u16 field*
//! field   := 0x00 | 0x01 i64 | 0x02 f64 | 0x03 str | 0x04 u32-len octets
//! end     := record_count:u64
//! str     := u32 byte length ++ UTF-8
//! ```
//!
//! All integers are little-endian. A well-formed file holds exactly one
//! header frame (first) and one end frame (last). Payloads are not escaped;
//! the salvage reader relies on length bounds and the CRC to reject false
//! sync markers.

use std::io::{self, BufWriter, Read, Write};

use crate::model::{Row, Value};

pub const MAGIC: [u8; 8] = *b"TDMP0001";
pub const SYNC: [u8; 4] = [0xD7, 0x41, 0x9A, 0x5C];
pub const FORMAT_VERSION: u16 = 1;
pub const DEFAULT_MAX_FRAME_SIZE: u32 = 64 * 1024 * 1024;
/// Sync + type + length + crc.
pub const FRAME_OVERHEAD: usize = 4 + 1 + 4 + 4;

const TAG_NULL: u8 = 0x00;
const TAG_INT: u8 = 0x01;
const TAG_FLOAT: u8 = 0x02;
const TAG_TEXT: u8 = 0x03;
const TAG_BYTES: u8 = 0x04;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a dump file (bad magic)")]
    BadMagic,
    #[error("corrupt frame at byte offset {offset}: {reason}")]
    CorruptFrame { offset: u64, reason: String },
    #[error("missing end frame (file truncated at byte offset {offset})")]
    MissingEndFrame { offset: u64 },
    #[error("end frame declares {expected} records but {found} were read")]
    CountMismatch { expected: u64, found: u64 },
    #[error("row {ordinal} has {found} fields but the header declares {expected} columns")]
    ColumnCountMismatch {
        ordinal: u64,
        expected: u16,
        found: usize,
    },
    #[error("row has {0} fields; at most 65535 are supported")]
    TooManyFields(usize),
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("frame payload of {size} bytes exceeds the {max}-byte limit")]
    FrameTooLarge { size: usize, max: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameType {
    Header = b'H',
    Record = b'R',
    End = b'E',
}

impl FrameType {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            b'H' => Some(FrameType::Header),
            b'R' => Some(FrameType::Record),
            b'E' => Some(FrameType::End),
            _ => None,
        }
    }
}

/// Per-file metadata stored in the header frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpFileHeader {
    pub format_version: u16,
    pub table_name: String,
    pub insert_sql: String,
    /// 1-based position of this file within its table's dump.
    pub chunk_index: u32,
    pub column_count: u16,
}

impl DumpFileHeader {
    pub fn new(
        table_name: impl Into<String>,
        insert_sql: impl Into<String>,
        chunk_index: u32,
        column_count: u16,
    ) -> Self {
        DumpFileHeader {
            format_version: FORMAT_VERSION,
            table_name: table_name.into(),
            insert_sql: insert_sql.into(),
            chunk_index,
            column_count,
        }
    }

    fn validate(&self) -> Result<(), FormatError> {
        if self.format_version != FORMAT_VERSION {
            return Err(FormatError::InvalidHeader(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        if self.chunk_index == 0 {
            return Err(FormatError::InvalidHeader("chunk index must be >= 1".into()));
        }
        if self.column_count == 0 {
            return Err(FormatError::InvalidHeader("column count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, FormatError> {
        self.validate()?;
        let mut out = Vec::with_capacity(16 + self.table_name.len() + self.insert_sql.len());
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&self.chunk_index.to_le_bytes());
        out.extend_from_slice(&self.column_count.to_le_bytes());
        put_str(&mut out, &self.table_name)?;
        put_str(&mut out, &self.insert_sql)?;
        Ok(out)
    }

    pub fn decode(payload: &[u8]) -> Result<Self, FormatError> {
        let bad = |m: String| FormatError::InvalidHeader(m);
        let mut cur = Cursor::new(payload);
        let format_version = cur.u16().map_err(bad)?;
        let chunk_index = cur.u32().map_err(bad)?;
        let column_count = cur.u16().map_err(bad)?;
        let table_name = cur.string().map_err(bad)?;
        let insert_sql = cur.string().map_err(bad)?;
        if !cur.is_empty() {
            return Err(bad(format!("{} trailing bytes", cur.remaining())));
        }
        let header = DumpFileHeader {
            format_version,
            table_name,
            insert_sql,
            chunk_index,
            column_count,
        };
        header.validate()?;
        Ok(header)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), FormatError> {
    put_octets(out, s.as_bytes())
}

fn put_octets(out: &mut Vec<u8>, b: &[u8]) -> Result<(), FormatError> {
    let len = u32::try_from(b.len()).map_err(|_| FormatError::FrameTooLarge {
        size: b.len(),
        max: u32::MAX,
    })?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(b);
    Ok(())
}

/// Appends the record payload for `row` to `out`.
pub fn encode_record_into(row: &Row, out: &mut Vec<u8>) -> Result<(), FormatError> {
    let count = u16::try_from(row.len()).map_err(|_| FormatError::TooManyFields(row.len()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for v in row.fields() {
        match v {
            Value::Null => out.push(TAG_NULL),
            Value::Int(i) => {
                out.push(TAG_INT);
                out.extend_from_slice(&i.to_le_bytes());
            }
            Value::Float(f) => {
                out.push(TAG_FLOAT);
                out.extend_from_slice(&f.to_le_bytes());
            }
            Value::Text(s) => {
                out.push(TAG_TEXT);
                put_str(out, s)?;
            }
            Value::Bytes(b) => {
                out.push(TAG_BYTES);
                put_octets(out, b)?;
            }
        }
    }
    Ok(())
}

pub fn encode_record(row: &Row) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::new();
    encode_record_into(row, &mut out)?;
    Ok(out)
}

pub fn decode_record(payload: &[u8]) -> Result<Row, FormatError> {
    let mut cur = Cursor::new(payload);
    let count = cur.u16().map_err(FormatError::MalformedRecord)?;
    let mut fields = Vec::with_capacity(count as usize);
    for i in 0..count {
        let tag = cur.u8().map_err(FormatError::MalformedRecord)?;
        let v = match tag {
            TAG_NULL => Ok(Value::Null),
            TAG_INT => cur.i64().map(Value::Int),
            TAG_FLOAT => cur.f64().map(Value::Float),
            TAG_TEXT => cur.string().map(Value::Text),
            TAG_BYTES => cur.octets().map(|b| Value::Bytes(b.to_vec())),
            other => Err(format!("unknown tag 0x{other:02x} in field {i}")),
        }
        .map_err(FormatError::MalformedRecord)?;
        fields.push(v);
    }
    if !cur.is_empty() {
        return Err(FormatError::MalformedRecord(format!(
            "{} trailing bytes after {count} fields",
            cur.remaining()
        )));
    }
    Ok(Row(fields))
}

fn decode_end(payload: &[u8]) -> Result<u64, String> {
    let mut cur = Cursor::new(payload);
    let n = cur.u64()?;
    if !cur.is_empty() {
        return Err("trailing bytes in end frame".into());
    }
    Ok(n)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.remaining() < n {
            return Err(format!(
                "truncated: needed {n} bytes at offset {}, {} available",
                self.pos,
                self.remaining()
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, String> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32, String> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, String> {
        self.array().map(u64::from_le_bytes)
    }

    fn i64(&mut self) -> Result<i64, String> {
        self.array().map(i64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, String> {
        self.array().map(f64::from_le_bytes)
    }

    fn octets(&mut self) -> Result<&'a [u8], String> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    fn string(&mut self) -> Result<String, String> {
        let b = self.octets()?;
        std::str::from_utf8(b)
            .map(str::to_owned)
            .map_err(|e| format!("invalid UTF-8 in text: {e}"))
    }
}

fn frame_crc(frame_type: u8, len_bytes: [u8; 4], payload: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&[frame_type]);
    h.update(&len_bytes);
    h.update(payload);
    h.finalize()
}

fn write_frame<W: Write>(
    w: &mut W,
    frame_type: FrameType,
    payload: &[u8],
    max_frame_size: u32,
) -> Result<usize, FormatError> {
    if payload.len() > max_frame_size as usize {
        return Err(FormatError::FrameTooLarge {
            size: payload.len(),
            max: max_frame_size,
        });
    }
    let len = (payload.len() as u32).to_le_bytes();
    let crc = frame_crc(frame_type as u8, len, payload);
    w.write_all(&SYNC)?;
    w.write_all(&[frame_type as u8])?;
    w.write_all(&len)?;
    w.write_all(payload)?;
    w.write_all(&crc.to_le_bytes())?;
    Ok(FRAME_OVERHEAD + payload.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormatOptions {
    pub max_frame_size: u32,
}

impl Default for FormatOptions {
    fn default() -> Self {
        FormatOptions {
            max_frame_size: DEFAULT_MAX_FRAME_SIZE,
        }
    }
}

/// Streaming writer for one dump file.
///
/// Writes the preamble and header frame on construction; [`finish`] appends
/// the end frame and flushes. Dropping without `finish` leaves a file that
/// strict readers reject with `MissingEndFrame`.
///
/// [`finish`]: DumpWriter::finish
pub struct DumpWriter<W: Write> {
    sink: BufWriter<W>,
    column_count: u16,
    records: u64,
    bytes: u64,
    scratch: Vec<u8>,
    opts: FormatOptions,
}

impl<W: Write> DumpWriter<W> {
    pub fn new(sink: W, header: &DumpFileHeader) -> Result<Self, FormatError> {
        Self::with_options(sink, header, FormatOptions::default())
    }

    pub fn with_options(
        sink: W,
        header: &DumpFileHeader,
        opts: FormatOptions,
    ) -> Result<Self, FormatError> {
        let payload = header.encode()?;
        let mut sink = BufWriter::with_capacity(256 * 1024, sink);
        sink.write_all(&MAGIC)?;
        let n = write_frame(&mut sink, FrameType::Header, &payload, opts.max_frame_size)?;
        Ok(DumpWriter {
            sink,
            column_count: header.column_count,
            records: 0,
            bytes: (MAGIC.len() + n) as u64,
            scratch: Vec::with_capacity(256),
            opts,
        })
    }

    pub fn write_row(&mut self, row: &Row) -> Result<(), FormatError> {
        if row.len() != self.column_count as usize {
            return Err(FormatError::ColumnCountMismatch {
                ordinal: self.records + 1,
                expected: self.column_count,
                found: row.len(),
            });
        }
        self.scratch.clear();
        encode_record_into(row, &mut self.scratch)?;
        let n = write_frame(
            &mut self.sink,
            FrameType::Record,
            &self.scratch,
            self.opts.max_frame_size,
        )?;
        self.records += 1;
        self.bytes += n as u64;
        Ok(())
    }

    pub fn records_written(&self) -> u64 {
        self.records
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes
    }

    /// Writes the end frame, flushes, and returns the record count and sink.
    pub fn finish(mut self) -> Result<(u64, W), FormatError> {
        let payload = self.records.to_le_bytes();
        let n = write_frame(&mut self.sink, FrameType::End, &payload, self.opts.max_frame_size)?;
        self.bytes += n as u64;
        self.sink.flush()?;
        let sink = self.sink.into_inner().map_err(|e| e.into_error())?;
        Ok((self.records, sink))
    }
}

/// Writes a complete dump file and returns the number of records written.
pub fn write_dump_file<W, I, R>(sink: W, header: &DumpFileHeader, rows: I) -> Result<u64, FormatError>
where
    W: Write,
    I: IntoIterator<Item = R>,
    R: std::borrow::Borrow<Row>,
{
    let mut w = DumpWriter::new(sink, header)?;
    for row in rows {
        w.write_row(row.borrow())?;
    }
    Ok(w.finish()?.0)
}

/// Strict, streaming reader: any malformed byte is an error.
///
/// Iterate with [`next_row`](StrictReader::next_row) until it yields `None`;
/// at that point the end frame has been validated and the stream is known to
/// hold nothing after it.
pub struct StrictReader<R: Read> {
    source: R,
    header: DumpFileHeader,
    offset: u64,
    records: u64,
    done: bool,
    opts: FormatOptions,
    payload: Vec<u8>,
}

enum FrameRead {
    Frame(FrameType),
    Eof,
}

impl<R: Read> StrictReader<R> {
    pub fn open(source: R) -> Result<Self, FormatError> {
        Self::with_options(source, FormatOptions::default())
    }

    pub fn with_options(mut source: R, opts: FormatOptions) -> Result<Self, FormatError> {
        let mut magic = [0u8; 8];
        if read_full(&mut source, &mut magic)? != magic.len() || magic != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let mut reader = StrictReader {
            source,
            header: DumpFileHeader::new("", "", 1, 1),
            offset: MAGIC.len() as u64,
            records: 0,
            done: false,
            opts,
            payload: Vec::new(),
        };
        let start = reader.offset;
        match reader.read_frame()? {
            FrameRead::Frame(FrameType::Header) => {}
            FrameRead::Frame(other) => {
                return Err(FormatError::CorruptFrame {
                    offset: start,
                    reason: format!("expected header frame, found {other:?}"),
                })
            }
            FrameRead::Eof => return Err(FormatError::MissingEndFrame { offset: start }),
        }
        reader.header =
            DumpFileHeader::decode(&reader.payload).map_err(|e| FormatError::CorruptFrame {
                offset: start,
                reason: e.to_string(),
            })?;
        Ok(reader)
    }

    pub fn header(&self) -> &DumpFileHeader {
        &self.header
    }

    pub fn records_read(&self) -> u64 {
        self.records
    }

    pub fn next_row(&mut self) -> Result<Option<Row>, FormatError> {
        if self.done {
            return Ok(None);
        }
        let start = self.offset;
        let corrupt = |reason: String| FormatError::CorruptFrame {
            offset: start,
            reason,
        };
        match self.read_frame()? {
            FrameRead::Eof => Err(FormatError::MissingEndFrame { offset: start }),
            FrameRead::Frame(FrameType::Header) => Err(corrupt("unexpected second header frame".into())),
            FrameRead::Frame(FrameType::Record) => {
                let row = decode_record(&self.payload).map_err(|e| corrupt(e.to_string()))?;
                if row.len() != self.header.column_count as usize {
                    return Err(corrupt(format!(
                        "record has {} fields, header declares {}",
                        row.len(),
                        self.header.column_count
                    )));
                }
                self.records += 1;
                Ok(Some(row))
            }
            FrameRead::Frame(FrameType::End) => {
                let expected = decode_end(&self.payload).map_err(corrupt)?;
                let mut probe = [0u8; 1];
                if read_full(&mut self.source, &mut probe)? != 0 {
                    return Err(FormatError::CorruptFrame {
                        offset: self.offset,
                        reason: "data after end frame".into(),
                    });
                }
                if expected != self.records {
                    return Err(FormatError::CountMismatch {
                        expected,
                        found: self.records,
                    });
                }
                self.done = true;
                Ok(None)
            }
        }
    }

    fn read_frame(&mut self) -> Result<FrameRead, FormatError> {
        let start = self.offset;
        let mut head = [0u8; 9];
        let got = read_full(&mut self.source, &mut head)?;
        if got == 0 {
            return Ok(FrameRead::Eof);
        }
        if got < head.len() {
            return Err(FormatError::MissingEndFrame { offset: start });
        }
        let corrupt = |reason: String| FormatError::CorruptFrame {
            offset: start,
            reason,
        };
        if head[..4] != SYNC {
            return Err(corrupt("sync marker mismatch".into()));
        }
        let type_byte = head[4];
        let len_bytes: [u8; 4] = head[5..9].try_into().expect("4 bytes");
        let len = u32::from_le_bytes(len_bytes);
        if len > self.opts.max_frame_size {
            return Err(corrupt(format!(
                "payload length {len} exceeds limit {}",
                self.opts.max_frame_size
            )));
        }
        self.payload.resize(len as usize, 0);
        let mut crc = [0u8; 4];
        if read_full(&mut self.source, &mut self.payload)? < len as usize
            || read_full(&mut self.source, &mut crc)? < crc.len()
        {
            return Err(FormatError::MissingEndFrame { offset: start });
        }
        if frame_crc(type_byte, len_bytes, &self.payload) != u32::from_le_bytes(crc) {
            return Err(corrupt("CRC mismatch".into()));
        }
        let frame_type = FrameType::from_byte(type_byte)
            .ok_or_else(|| corrupt(format!("unknown frame type 0x{type_byte:02x}")))?;
        self.offset += (FRAME_OVERHEAD + len as usize) as u64;
        Ok(FrameRead::Frame(frame_type))
    }
}

impl<R: Read> Iterator for StrictReader<R> {
    type Item = Result<Row, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_row() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Reads until `buf` is full or the source is exhausted.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Reads a whole file; succeeds only if it is entirely well-formed.
pub fn read_strict<R: Read>(source: R) -> Result<(DumpFileHeader, Vec<Row>), FormatError> {
    let mut reader = StrictReader::open(source)?;
    let mut rows = Vec::new();
    while let Some(row) = reader.next_row()? {
        rows.push(row);
    }
    Ok((reader.header, rows))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SalvageReport {
    pub records_recovered: u64,
    /// Bytes not covered by the preamble or an accepted frame.
    pub bytes_skipped: u64,
    pub header_found: bool,
    pub end_frame_found: bool,
    /// Record count declared by the end frame, when it survived.
    pub expected_records: Option<u64>,
    pub crc_rejections: u64,
}

impl SalvageReport {
    /// Records known to be lost; `None` if the end frame was not recovered.
    pub fn records_lost(&self) -> Option<u64> {
        self.expected_records
            .map(|e| e.saturating_sub(self.records_recovered))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Salvaged {
    pub header: Option<DumpFileHeader>,
    pub rows: Vec<Row>,
    pub report: SalvageReport,
}

/// Best-effort reader: never fails on corrupt input, only on I/O errors.
pub fn read_salvage<R: Read>(mut source: R) -> io::Result<Salvaged> {
    let mut data = Vec::new();
    source.read_to_end(&mut data)?;
    Ok(salvage_bytes(&data, FormatOptions::default()))
}

/// Scans `data` for sync markers and keeps every frame whose length is in
/// bounds, whose CRC verifies and whose payload parses. After a rejected
/// candidate the scan resumes one byte past its sync marker.
pub fn salvage_bytes(data: &[u8], opts: FormatOptions) -> Salvaged {
    let mut report = SalvageReport::default();
    let mut header = None;
    let mut rows = Vec::new();
    let mut covered: u64 = 0;
    let mut pos = 0;

    if data.starts_with(&MAGIC) {
        pos = MAGIC.len();
        covered += MAGIC.len() as u64;
    }

    while let Some(found) = find_sync(&data[pos..]) {
        let start = pos + found;
        match try_frame(&data[start..], opts) {
            Candidate::Accepted(frame_type, payload, total) => {
                let accepted = match frame_type {
                    FrameType::Header => match DumpFileHeader::decode(payload) {
                        Ok(h) => {
                            if header.is_none() {
                                header = Some(h);
                                report.header_found = true;
                            }
                            true
                        }
                        Err(_) => false,
                    },
                    FrameType::Record => match decode_record(payload) {
                        Ok(row) => {
                            rows.push(row);
                            true
                        }
                        Err(_) => false,
                    },
                    FrameType::End => match decode_end(payload) {
                        Ok(n) => {
                            report.end_frame_found = true;
                            report.expected_records = Some(n);
                            true
                        }
                        Err(_) => false,
                    },
                };
                if accepted {
                    covered += total as u64;
                    pos = start + total;
                } else {
                    pos = start + 1;
                }
            }
            Candidate::CrcMismatch => {
                report.crc_rejections += 1;
                pos = start + 1;
            }
            Candidate::Rejected => pos = start + 1,
        }
    }

    report.records_recovered = rows.len() as u64;
    report.bytes_skipped = data.len() as u64 - covered;
    Salvaged {
        header,
        rows,
        report,
    }
}

enum Candidate<'a> {
    Accepted(FrameType, &'a [u8], usize),
    CrcMismatch,
    Rejected,
}

fn try_frame(buf: &[u8], opts: FormatOptions) -> Candidate<'_> {
    if buf.len() < FRAME_OVERHEAD {
        return Candidate::Rejected;
    }
    let type_byte = buf[4];
    let len_bytes: [u8; 4] = buf[5..9].try_into().expect("4 bytes");
    let len = u32::from_le_bytes(len_bytes);
    if len > opts.max_frame_size {
        return Candidate::Rejected;
    }
    let total = FRAME_OVERHEAD + len as usize;
    if buf.len() < total {
        return Candidate::Rejected;
    }
    let payload = &buf[9..9 + len as usize];
    let crc = u32::from_le_bytes(buf[total - 4..total].try_into().expect("4 bytes"));
    if frame_crc(type_byte, len_bytes, payload) != crc {
        return Candidate::CrcMismatch;
    }
    match FrameType::from_byte(type_byte) {
        Some(t) => Candidate::Accepted(t, payload, total),
        None => Candidate::Rejected,
    }
}

fn find_sync(buf: &[u8]) -> Option<usize> {
    buf.windows(SYNC.len()).position(|w| w == SYNC)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn text(s: &str) -> Value {
        Value::Text(s.into())
    }

    fn sample_rows(n: usize) -> Vec<Row> {
        (0..n)
            .map(|i| {
                Row(vec![
                    text(&format!("c{i}")),
                    Value::Int(i as i64 * 7 - 3),
                    Value::Float(i as f64 / 3.0),
                    if i % 4 == 0 { Value::Null } else { Value::Bytes(vec![i as u8; i % 5]) },
                ])
            })
            .collect()
    }

    fn file_with(rows: &[Row]) -> Vec<u8> {
        let h = DumpFileHeader::new("t", "insert into t (a, b, c, d) values (?, ?, ?, ?)", 1, 4);
        let mut out = Vec::new();
        write_dump_file(&mut out, &h, rows).unwrap();
        out
    }

    #[test]
    fn encode_null_row() {
        assert_eq!(encode_record(&Row(vec![Value::Null])).unwrap(), [0x01, 0x00, 0x00]);
    }

    #[test]
    fn encode_text_row() {
        assert_eq!(
            encode_record(&Row(vec![text("Dollar")])).unwrap(),
            [0x01, 0x00, 0x03, 0x06, 0x00, 0x00, 0x00, 0x44, 0x6F, 0x6C, 0x6C, 0x61, 0x72]
        );
    }

    #[test]
    fn encode_cross_rate_row() {
        let row = Row(vec![
            text("Dollar"),
            text("CdnDlr"),
            Value::Float(1.327299952507019),
            text("1993-11-22 00:00:00.0000"),
        ]);
        let bytes = encode_record(&row).unwrap();
        // 2 (count) + 2 * (1 + 4 + 6) + (1 + 8) + (1 + 4 + 24)
        assert_eq!(bytes.len(), 62);
        assert_eq!(&bytes[24..33], &[0x02, 0x00, 0x00, 0x00, 0xE0, 0x9E, 0x3C, 0xF5, 0x3F][..]);
        assert_eq!(decode_record(&bytes).unwrap(), row);
    }

    #[test]
    fn encode_int_and_bytes_layout() {
        let row = Row(vec![Value::Int(-2), Value::Bytes(vec![0xAA])]);
        assert_eq!(
            encode_record(&row).unwrap(),
            [0x02, 0x00, 0x01, 0xFE, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0x04, 0x01, 0x00, 0x00, 0x00, 0xAA]
        );
    }

    #[test]
    fn too_many_fields() {
        let row = Row(vec![Value::Null; 65536]);
        assert!(matches!(encode_record(&row), Err(FormatError::TooManyFields(65536))));
        assert!(encode_record(&Row(vec![Value::Null; 65535])).is_ok());
    }

    #[test]
    fn decode_errors() {
        for bad in [&[0x01, 0x00, 0x07][..], &[0x02, 0x00, 0x00], &[0x01], &[0x01, 0x00, 0x00, 0x00]] {
            assert!(matches!(decode_record(bad), Err(FormatError::MalformedRecord(_))), "{bad:?}");
        }
        // invalid UTF-8 in text
        let bad = [0x01, 0x00, 0x03, 0x01, 0x00, 0x00, 0x00, 0xFF];
        assert!(matches!(decode_record(&bad), Err(FormatError::MalformedRecord(_))));
    }

    #[test]
    fn empty_file_layout() {
        let h = DumpFileHeader::new("t", "insert into t (a) values (?)", 1, 1);
        let mut out = Vec::new();
        assert_eq!(write_dump_file(&mut out, &h, Vec::<Row>::new()).unwrap(), 0);
        let header_len = FRAME_OVERHEAD + h.encode().unwrap().len();
        assert_eq!(out.len(), 8 + header_len + FRAME_OVERHEAD + 8);
        assert_eq!(&out[..8], b"TDMP0001");
        assert_eq!(&out[8..12], &SYNC);
        assert_eq!(out[12], b'H');
        let end = 8 + header_len;
        assert_eq!(out[end + 4], b'E');
        assert_eq!(&out[end + 9..end + 17], &0u64.to_le_bytes());
        let (h2, rows) = read_strict(&out[..]).unwrap();
        assert_eq!(h2, h);
        assert!(rows.is_empty());
    }

    #[test]
    fn header_crc_is_standard_crc32() {
        let h = DumpFileHeader::new("t", "i", 1, 1);
        let mut out = Vec::new();
        write_dump_file(&mut out, &h, Vec::<Row>::new()).unwrap();
        let payload = h.encode().unwrap();
        let frame_end = 8 + FRAME_OVERHEAD + payload.len();
        let stored = u32::from_le_bytes(out[frame_end - 4..frame_end].try_into().unwrap());
        // CRC input is the type byte through the end of the payload.
        assert_eq!(stored, crc32fast::hash(&out[12..frame_end - 4]));
        // check value of the IEEE polynomial
        assert_eq!(crc32fast::hash(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn column_count_mismatch_reports_ordinal() {
        let h = DumpFileHeader::new("t", "x", 1, 4);
        let mut rows = sample_rows(3);
        rows[1].0.pop();
        let err = write_dump_file(Vec::new(), &h, &rows).unwrap_err();
        assert!(matches!(err, FormatError::ColumnCountMismatch { ordinal: 2, expected: 4, found: 3 }));
    }

    #[test]
    fn invalid_headers_rejected() {
        assert!(write_dump_file(Vec::new(), &DumpFileHeader::new("t", "x", 0, 1), Vec::<Row>::new()).is_err());
        assert!(write_dump_file(Vec::new(), &DumpFileHeader::new("t", "x", 1, 0), Vec::<Row>::new()).is_err());
    }

    #[test]
    fn strict_rejects_bad_magic_and_truncation() {
        assert!(matches!(read_strict(&b"hello world"[..]), Err(FormatError::BadMagic)));
        assert!(matches!(read_strict(&b""[..]), Err(FormatError::BadMagic)));
        let file = file_with(&sample_rows(5));
        for cut in [8, 20, file.len() - 21, file.len() - 1] {
            assert!(
                matches!(read_strict(&file[..cut]), Err(FormatError::MissingEndFrame { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn strict_flags_flipped_payload_byte_at_frame_offset() {
        let rows = sample_rows(5);
        let file = file_with(&rows);
        let clean = salvage_bytes(&file, FormatOptions::default());
        assert_eq!(clean.rows, rows);
        // locate record 3's frame by walking frames
        let mut off = 8;
        let mut frame_starts = vec![];
        while off < file.len() {
            frame_starts.push(off);
            let len = u32::from_le_bytes(file[off + 5..off + 9].try_into().unwrap()) as usize;
            off += FRAME_OVERHEAD + len;
        }
        let rec3 = frame_starts[3];
        let mut bad = file.clone();
        bad[rec3 + 10] ^= 0x01;
        match read_strict(&bad[..]) {
            Err(FormatError::CorruptFrame { offset, .. }) => assert_eq!(offset, rec3 as u64),
            other => panic!("expected CorruptFrame, got {other:?}"),
        }
    }

    #[test]
    fn strict_rejects_trailing_data_and_count_mismatch() {
        let mut file = file_with(&sample_rows(2));
        file.push(0);
        assert!(matches!(read_strict(&file[..]), Err(FormatError::CorruptFrame { .. })));

        // Hand-build a file whose end frame lies about the count.
        let h = DumpFileHeader::new("t", "x", 1, 1);
        let mut out = MAGIC.to_vec();
        write_frame(&mut out, FrameType::Header, &h.encode().unwrap(), u32::MAX).unwrap();
        let rec = encode_record(&Row(vec![Value::Int(1)])).unwrap();
        write_frame(&mut out, FrameType::Record, &rec, u32::MAX).unwrap();
        write_frame(&mut out, FrameType::End, &5u64.to_le_bytes(), u32::MAX).unwrap();
        assert!(matches!(
            read_strict(&out[..]),
            Err(FormatError::CountMismatch { expected: 5, found: 1 })
        ));
    }

    #[test]
    fn salvage_clean_file() {
        let rows = sample_rows(13);
        let s = salvage_bytes(&file_with(&rows), FormatOptions::default());
        assert_eq!(s.rows, rows);
        assert_eq!(s.report.records_recovered, 13);
        assert_eq!(s.report.bytes_skipped, 0);
        assert_eq!(s.report.expected_records, Some(13));
        assert!(s.report.header_found && s.report.end_frame_found);
    }

    #[test]
    fn salvage_with_zeroed_record_syncs() {
        let rows = sample_rows(6);
        let mut file = file_with(&rows);
        let mut off = 8;
        let mut idx = 0;
        let mut zeroed = 0;
        while off < file.len() {
            let len = u32::from_le_bytes(file[off + 5..off + 9].try_into().unwrap()) as usize;
            if file[off + 4] == b'R' {
                file[off..off + 4].fill(0);
                zeroed += 1;
            }
            off += FRAME_OVERHEAD + len;
            idx += 1;
        }
        assert_eq!((idx, zeroed), (8, 6));
        let s = salvage_bytes(&file, FormatOptions::default());
        assert!(s.rows.is_empty());
        assert!(s.report.header_found);
        assert_eq!(s.report.expected_records, Some(6));
        assert_eq!(s.report.records_lost(), Some(6));
    }

    #[test]
    fn salvage_of_garbage_is_empty() {
        let mut garbage: Vec<u8> = (0..4096u32).map(|i| (i.wrapping_mul(2654435761) >> 13) as u8).collect();
        garbage.extend_from_slice(&SYNC);
        garbage.extend_from_slice(&[b'R', 0xFF, 0xFF, 0xFF, 0xFF]);
        let s = salvage_bytes(&garbage, FormatOptions::default());
        assert!(s.rows.is_empty());
        assert!(s.header.is_none());
        assert_eq!(s.report.bytes_skipped, garbage.len() as u64);
    }

    #[test]
    fn max_frame_size_enforced() {
        let opts = FormatOptions { max_frame_size: 40 };
        let h = DumpFileHeader::new("t", "x", 1, 1);
        let mut w = DumpWriter::with_options(Vec::new(), &h, opts).unwrap();
        assert!(matches!(
            w.write_row(&Row(vec![Value::Bytes(vec![0; 64])])),
            Err(FormatError::FrameTooLarge { .. })
        ));
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        prop_oneof![
            Just(Value::Null),
            any::<i64>().prop_map(Value::Int),
            any::<u64>().prop_map(|b| Value::Float(f64::from_bits(b))),
            ".{0,20}".prop_map(Value::Text),
            proptest::collection::vec(any::<u8>(), 0..24).prop_map(Value::Bytes),
        ]
    }

    fn arb_table() -> impl Strategy<Value = (u16, Vec<Row>)> {
        (1u16..6).prop_flat_map(|cols| {
            let row = proptest::collection::vec(arb_value(), cols as usize).prop_map(Row);
            (Just(cols), proptest::collection::vec(row, 0..20))
        })
    }

    proptest! {
        #[test]
        fn record_roundtrip(fields in proptest::collection::vec(arb_value(), 0..12)) {
            let row = Row(fields);
            let bytes = encode_record(&row).unwrap();
            prop_assert_eq!(&encode_record(&row).unwrap(), &bytes);
            prop_assert_eq!(decode_record(&bytes).unwrap(), row);
        }

        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_record(&bytes);
        }

        #[test]
        fn file_roundtrip_and_salvage_superset(
            (cols, rows) in arb_table(),
            name in "[a-z_]{1,10}",
            chunk in 1u32..1000,
        ) {
            let h = DumpFileHeader::new(name, "insert", chunk, cols);
            let mut out = Vec::new();
            write_dump_file(&mut out, &h, &rows).unwrap();
            let (h2, rows2) = read_strict(&out[..]).unwrap();
            prop_assert_eq!(&h2, &h);
            prop_assert_eq!(&rows2, &rows);
            let s = salvage_bytes(&out, FormatOptions::default());
            prop_assert_eq!(s.rows, rows);
            prop_assert_eq!(s.report.bytes_skipped, 0);
            prop_assert_eq!(s.header, Some(h));
        }

        #[test]
        fn salvage_never_invents_rows(
            (cols, rows) in arb_table(),
            hits in proptest::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..4),
        ) {
            let h = DumpFileHeader::new("t", "insert", 1, cols);
            let mut out = Vec::new();
            write_dump_file(&mut out, &h, &rows).unwrap();
            for (idx, val) in &hits {
                let i = idx.index(out.len());
                out[i] = *val;
            }
            let s = salvage_bytes(&out, FormatOptions::default());
            let mut pool: std::collections::HashMap<&Row, usize> = std::collections::HashMap::new();
            for r in &rows {
                *pool.entry(r).or_default() += 1;
            }
            for r in &s.rows {
                let slot = pool.get_mut(r);
                prop_assert!(slot.as_ref().is_some_and(|c| **c > 0), "invented row {:?}", r);
                *slot.unwrap() -= 1;
            }
            prop_assert!(rows.len() - s.rows.len() <= 2 * hits.len());
        }
    }
}
