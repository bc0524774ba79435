//! CSV and VTK XML PolyData output, plus a reader for our own `.vtp` files.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::view::{PolyData, ViewKind};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VtpMode {
    Ascii,
    #[default]
    Binary,
}

/// File format of an emitted view. Written as `csv`, `vtp` (binary) or
/// `vtp-ascii` in configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Format {
    Csv,
    Vtp(VtpMode),
}

impl Format {
    /// ASCII files end in `.ascii.vtp`.
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Vtp(VtpMode::Binary) => "vtp",
            Format::Vtp(VtpMode::Ascii) => "ascii.vtp",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Vtp(VtpMode::Binary) => "vtp",
            Format::Vtp(VtpMode::Ascii) => "vtp-ascii",
        })
    }
}

impl From<Format> for String {
    fn from(f: Format) -> String {
        f.to_string()
    }
}

impl TryFrom<String> for Format {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "vtp" | "vtp-binary" => Ok(Format::Vtp(VtpMode::Binary)),
            "vtp-ascii" => Ok(Format::Vtp(VtpMode::Ascii)),
            _ => Err(Error::Invalid(format!("unknown format '{s}'"))),
        }
    }
}

/// `{view}_{layer}_{step:08}.{ext}`, e.g. `weight_grid_0_00001080.vtp`.
pub fn file_name(view: ViewKind, layer: usize, step: u64, format: Format) -> String {
    format!("{view}_{layer}_{step:08}.{}", format.extension())
}

/// Shortest round-trip decimal form, switching to exponent notation for
/// very small or large magnitudes.
struct Num(f32);

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.0.abs();
        if a == 0.0 || (1e-5..1e9).contains(&a) || !a.is_finite() {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{:e}", self.0)
        }
    }
}

struct Counting<W> {
    inner: W,
    bytes: u64,
}

impl<W: Write> Write for Counting<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.bytes += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

fn with_file(path: &Path, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<u64> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = Counting {
        inner: BufWriter::with_capacity(1 << 20, file),
        bytes: 0,
    };
    body(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))?;
    Ok(out.bytes)
}

/// Writes `x,y,z,<scalars...>` rows, one per point. Returns the byte count.
pub fn write_csv(pd: &PolyData, path: &Path) -> Result<u64> {
    pd.validate()?;
    with_file(path, |w| csv_to(pd, w))
}

pub fn csv_to(pd: &PolyData, w: &mut dyn Write) -> io::Result<()> {
    w.write_all(b"x,y,z")?;
    for name in pd.point_scalars.keys() {
        write!(w, ",{name}")?;
    }
    w.write_all(b"\n")?;
    let columns: Vec<&Vec<f32>> = pd.point_scalars.values().collect();
    for (i, p) in pd.points.iter().enumerate() {
        write!(w, "{},{},{}", Num(p[0]), Num(p[1]), Num(p[2]))?;
        for col in &columns {
            write!(w, ",{}", Num(col[i]))?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes a VTK XML PolyData file. Returns the byte count.
pub fn write_vtp(pd: &PolyData, path: &Path, mode: VtpMode) -> Result<u64> {
    pd.validate()?;
    with_file(path, |w| vtp_to(pd, mode, w))
}

pub fn vtp_bytes(pd: &PolyData, mode: VtpMode) -> Result<Vec<u8>> {
    pd.validate()?;
    let mut out = Vec::new();
    vtp_to(pd, mode, &mut out).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(out)
}

enum Payload<'a> {
    F32(Box<dyn Iterator<Item = f32> + 'a>, usize),
    I64(Box<dyn Iterator<Item = i64> + 'a>, usize),
}

impl Payload<'_> {
    fn type_name(&self) -> &'static str {
        match self {
            Payload::F32(..) => "Float32",
            Payload::I64(..) => "Int64",
        }
    }

    fn byte_len(&self) -> usize {
        match self {
            Payload::F32(_, n) => n * 4,
            Payload::I64(_, n) => n * 8,
        }
    }
}

struct Array<'a> {
    section: &'static str,
    name: String,
    components: usize,
    payload: Payload<'a>,
}

fn arrays(pd: &PolyData) -> Vec<Array<'_>> {
    let mut out = Vec::new();
    for (name, values) in &pd.point_scalars {
        out.push(Array {
            section: "PointData",
            name: name.clone(),
            components: 1,
            payload: Payload::F32(Box::new(values.iter().copied()), values.len()),
        });
    }
    out.push(Array {
        section: "Points",
        name: "Points".into(),
        components: 3,
        payload: Payload::F32(Box::new(pd.points.iter().flatten().copied()), pd.points.len() * 3),
    });
    let nv = pd.verts.len();
    out.push(Array {
        section: "Verts",
        name: "connectivity".into(),
        components: 1,
        payload: Payload::I64(Box::new(pd.verts.iter().map(|&v| v as i64)), nv),
    });
    out.push(Array {
        section: "Verts",
        name: "offsets".into(),
        components: 1,
        payload: Payload::I64(Box::new((1..=nv).map(|o| o as i64)), nv),
    });
    let nq = pd.quads.len();
    out.push(Array {
        section: "Polys",
        name: "connectivity".into(),
        components: 1,
        payload: Payload::I64(Box::new(pd.quads.iter().flatten().map(|&v| v as i64)), nq * 4),
    });
    out.push(Array {
        section: "Polys",
        name: "offsets".into(),
        components: 1,
        payload: Payload::I64(Box::new((1..=nq).map(|o| 4 * o as i64)), nq),
    });
    out
}

fn vtp_to(pd: &PolyData, mode: VtpMode, w: &mut dyn Write) -> io::Result<()> {
    let arrays = arrays(pd);
    writeln!(w, "<?xml version=\"1.0\"?>")?;
    writeln!(w, "<VTKFile type=\"PolyData\" version=\"0.1\" byte_order=\"LittleEndian\">")?;
    writeln!(w, "  <PolyData>")?;
    writeln!(
        w,
        "    <Piece NumberOfPoints=\"{}\" NumberOfVerts=\"{}\" NumberOfLines=\"0\" NumberOfStrips=\"0\" NumberOfPolys=\"{}\">",
        pd.points.len(),
        pd.verts.len(),
        pd.quads.len()
    )?;
    let mut offset = 0usize;
    let mut appended = Vec::new();
    let mut section = "";
    for array in arrays {
        if array.section != section {
            if !section.is_empty() {
                writeln!(w, "      </{section}>")?;
            }
            section = array.section;
            match (section, pd.point_scalars.keys().next()) {
                ("PointData", Some(first)) => writeln!(w, "      <PointData Scalars=\"{}\">", escape(first))?,
                _ => writeln!(w, "      <{section}>")?,
            }
        }
        let components = if array.components > 1 {
            format!(" NumberOfComponents=\"{}\"", array.components)
        } else {
            String::new()
        };
        let head = format!(
            "        <DataArray type=\"{}\" Name=\"{}\"{components}",
            array.payload.type_name(),
            escape(&array.name)
        );
        match mode {
            VtpMode::Binary => {
                writeln!(w, "{head} format=\"appended\" offset=\"{offset}\"/>")?;
                offset += 4 + array.payload.byte_len();
                appended.push(array.payload);
            }
            VtpMode::Ascii => {
                writeln!(w, "{head} format=\"ascii\">")?;
                let per_line = array.components.max(1);
                match array.payload {
                    Payload::F32(values, _) => write_ascii(w, values.map(Num), per_line)?,
                    Payload::I64(values, _) => write_ascii(w, values, per_line)?,
                }
                writeln!(w, "        </DataArray>")?;
            }
        }
    }
    writeln!(w, "      </{section}>")?;
    writeln!(w, "    </Piece>")?;
    writeln!(w, "  </PolyData>")?;
    if mode == VtpMode::Binary {
        w.write_all(b"  <AppendedData encoding=\"raw\">\n   _")?;
        for payload in appended {
            w.write_all(&(payload.byte_len() as u32).to_le_bytes())?;
            match payload {
                Payload::F32(values, _) => {
                    for v in values {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                Payload::I64(values, _) => {
                    for v in values {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        w.write_all(b"\n  </AppendedData>\n")?;
    }
    writeln!(w, "</VTKFile>")
}

fn write_ascii<V: fmt::Display>(w: &mut dyn Write, values: impl Iterator<Item = V>, per_line: usize) -> io::Result<()> {
    let mut col = 0;
    for v in values {
        if col == 0 {
            w.write_all(b"          ")?;
        } else {
            w.write_all(b" ")?;
        }
        write!(w, "{v}")?;
        col += 1;
        if col == per_line {
            w.write_all(b"\n")?;
            col = 0;
        }
    }
    if col != 0 {
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn escape(s: &str) -> String {
    quick_xml::escape::escape(s).into_owned()
}

/// Reads a file written by [`write_vtp`].
pub fn read_vtp(path: &Path) -> Result<PolyData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_vtp(&bytes)
}

#[derive(Debug, Default)]
struct ArrayDecl {
    section: String,
    name: String,
    kind: String,
    components: usize,
    offset: Option<usize>,
    text: String,
}

#[derive(Debug, Default)]
struct Header {
    points: Option<usize>,
    verts: usize,
    polys: usize,
    arrays: Vec<ArrayDecl>,
    sections: Vec<String>,
    appended_at: Option<usize>,
}

fn perr(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn attr(e: &BytesStart<'_>, key: &str) -> Result<Option<String>> {
    for a in e.attributes() {
        let a = a.map_err(|err| perr(format!("bad attribute: {err}")))?;
        if a.key.as_ref() == key.as_bytes() {
            let v = a
                .unescape_value()
                .map_err(|err| perr(format!("bad attribute '{key}': {err}")))?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

fn count_attr(e: &BytesStart<'_>, key: &str) -> Result<Option<usize>> {
    attr(e, key)?
        .map(|v| v.parse().map_err(|_| perr(format!("<Piece> {key}=\"{v}\" is not a count"))))
        .transpose()
}

fn element_name(e: &BytesStart<'_>) -> String {
    String::from_utf8_lossy(e.name().as_ref()).into_owned()
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let xml_end = find(bytes, b"<AppendedData").unwrap_or(bytes.len());
    let mut reader = Reader::from_reader(&bytes[..xml_end]);
    let mut buf = Vec::new();
    let mut stack: Vec<String> = Vec::new();
    let mut header = Header::default();
    let mut saw_root = false;
    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| perr(format!("malformed XML at byte {}: {e}", reader.buffer_position())))?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let empty = matches!(event, Event::Empty(_));
                let name = element_name(e);
                match name.as_str() {
                    "VTKFile" => {
                        if attr(e, "type")?.as_deref() != Some("PolyData") {
                            return Err(perr("<VTKFile> is not of type PolyData"));
                        }
                        if let Some(order) = attr(e, "byte_order")? {
                            if order != "LittleEndian" {
                                return Err(perr(format!("unsupported byte_order {order}")));
                            }
                        }
                        saw_root = true;
                    }
                    "Piece" => {
                        header.points = count_attr(e, "NumberOfPoints")?;
                        header.verts = count_attr(e, "NumberOfVerts")?.unwrap_or(0);
                        header.polys = count_attr(e, "NumberOfPolys")?.unwrap_or(0);
                        for other in ["NumberOfLines", "NumberOfStrips"] {
                            if count_attr(e, other)?.unwrap_or(0) != 0 {
                                return Err(perr(format!("unsupported {other}")));
                            }
                        }
                    }
                    "PointData" | "Points" | "Verts" | "Polys" => header.sections.push(name.clone()),
                    "DataArray" => {
                        let section = stack
                            .last()
                            .cloned()
                            .ok_or_else(|| perr("<DataArray> outside a section"))?;
                        let format = attr(e, "format")?.unwrap_or_else(|| "ascii".into());
                        let offset = match format.as_str() {
                            "ascii" => None,
                            "appended" => Some(
                                attr(e, "offset")?
                                    .ok_or_else(|| perr("appended <DataArray> without offset"))?
                                    .parse()
                                    .map_err(|_| perr("bad <DataArray> offset"))?,
                            ),
                            other => return Err(perr(format!("unsupported DataArray format '{other}'"))),
                        };
                        let components = match attr(e, "NumberOfComponents")? {
                            Some(v) => v.parse().map_err(|_| perr("bad NumberOfComponents"))?,
                            None => 1,
                        };
                        header.arrays.push(ArrayDecl {
                            section,
                            name: attr(e, "Name")?.unwrap_or_default(),
                            kind: attr(e, "type")?.ok_or_else(|| perr("<DataArray> without type"))?,
                            components,
                            offset,
                            text: String::new(),
                        });
                    }
                    _ => {}
                }
                if !empty {
                    stack.push(name);
                }
            }
            Event::Text(t) => {
                if stack.last().map(String::as_str) == Some("DataArray") {
                    let text = t.unescape().map_err(|e| perr(format!("bad text: {e}")))?;
                    if let Some(a) = header.arrays.last_mut() {
                        a.text.push_str(&text);
                    }
                }
            }
            Event::End(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                if stack.pop().as_deref() != Some(name.as_str()) {
                    return Err(perr(format!("unexpected </{name}>")));
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if !saw_root {
        return Err(perr("missing <VTKFile>"));
    }
    if xml_end < bytes.len() {
        if stack != ["VTKFile"] {
            return Err(perr(format!("<AppendedData> inside <{}>", stack.join("><"))));
        }
        let tag_end = bytes[xml_end..]
            .iter()
            .position(|&b| b == b'>')
            .ok_or_else(|| perr("truncated <AppendedData> tag"))?;
        let mut at = xml_end + tag_end + 1;
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if bytes.get(at) != Some(&b'_') {
            return Err(perr("<AppendedData> lacks the '_' marker"));
        }
        header.appended_at = Some(at + 1);
        let tail = bytes.trim_ascii_end();
        if !tail.ends_with(b"</VTKFile>") {
            return Err(perr("truncated file: missing </VTKFile>"));
        }
    } else if let Some(open) = stack.last() {
        return Err(perr(format!("unexpected end of file inside <{open}>")));
    }
    if header.points.is_none() {
        return Err(perr("missing <Piece>"));
    }
    for required in ["Points", "Verts", "Polys"] {
        if !header.sections.iter().any(|s| s == required) {
            return Err(perr(format!("missing <{required}>")));
        }
    }
    Ok(header)
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

enum Values {
    F32(Vec<f32>),
    I64(Vec<i64>),
}

fn decode(decl: &ArrayDecl, bytes: &[u8], appended_at: Option<usize>) -> Result<Values> {
    let label = format!("<DataArray Name=\"{}\"> in <{}>", decl.name, decl.section);
    let width = match decl.kind.as_str() {
        "Float32" => 4,
        "Int64" => 8,
        other => return Err(perr(format!("{label}: unsupported type {other}"))),
    };
    match decl.offset {
        None => {
            let tokens = decl.text.split_ascii_whitespace();
            if width == 4 {
                tokens
                    .map(|t| t.parse::<f32>().map_err(|_| perr(format!("{label}: bad value '{t}'"))))
                    .collect::<Result<_>>()
                    .map(Values::F32)
            } else {
                tokens
                    .map(|t| t.parse::<i64>().map_err(|_| perr(format!("{label}: bad value '{t}'"))))
                    .collect::<Result<_>>()
                    .map(Values::I64)
            }
        }
        Some(offset) => {
            let base = appended_at.ok_or_else(|| perr(format!("{label}: missing <AppendedData>")))?;
            let start = base + offset;
            let len_bytes = bytes
                .get(start..start + 4)
                .ok_or_else(|| perr(format!("{label}: truncated <AppendedData>")))?;
            let len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
            if !len.is_multiple_of(width) {
                return Err(perr(format!("{label}: {len} bytes is not a whole number of values")));
            }
            let data = bytes
                .get(start + 4..start + 4 + len)
                .ok_or_else(|| perr(format!("{label}: truncated <AppendedData>")))?;
            Ok(if width == 4 {
                Values::F32(
                    data.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                )
            } else {
                Values::I64(
                    data.chunks_exact(8)
                        .map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                )
            })
        }
    }
}

fn cells(section: &str, conn: Vec<i64>, offsets: Vec<i64>, count: usize, points: usize) -> Result<Vec<Vec<usize>>> {
    if offsets.len() != count {
        return Err(perr(format!("<{section}> has {} offsets for {count} cells", offsets.len())));
    }
    let mut out = Vec::with_capacity(count);
    let mut start = 0usize;
    for &end in &offsets {
        let end = usize::try_from(end).map_err(|_| perr(format!("<{section}> negative offset")))?;
        if end < start || end > conn.len() {
            return Err(perr(format!("<{section}> offset {end} out of range")));
        }
        let cell = conn[start..end]
            .iter()
            .map(|&i| usize::try_from(i).ok().filter(|&i| i < points))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| perr(format!("<{section}> references a missing point")))?;
        out.push(cell);
        start = end;
    }
    if start != conn.len() {
        return Err(perr(format!("<{section}> connectivity has trailing entries")));
    }
    Ok(out)
}

/// Parses `.vtp` bytes written by [`write_vtp`] in either mode.
pub fn parse_vtp(bytes: &[u8]) -> Result<PolyData> {
    let header = parse_header(bytes)?;
    let n = header.points.unwrap_or(0);
    let mut pd = PolyData::new();
    let mut conn: IndexMap<(String, String), Vec<i64>> = IndexMap::new();
    let mut saw_points = false;
    for decl in &header.arrays {
        let values = decode(decl, bytes, header.appended_at)?;
        match (decl.section.as_str(), values) {
            ("PointData", Values::F32(v)) => {
                if v.len() != n || decl.components != 1 {
                    return Err(perr(format!("scalar '{}' has {} values for {n} points", decl.name, v.len())));
                }
                pd.point_scalars.insert(decl.name.clone(), v);
            }
            ("Points", Values::F32(v)) => {
                if decl.components != 3 || v.len() != 3 * n {
                    return Err(perr(format!("<Points> holds {} values for {n} points", v.len())));
                }
                pd.points = v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
                saw_points = true;
            }
            (s @ ("Verts" | "Polys"), Values::I64(v)) => {
                conn.insert((s.to_string(), decl.name.clone()), v);
            }
            (s, _) => return Err(perr(format!("unexpected {} array '{}' in <{s}>", decl.kind, decl.name))),
        }
    }
    if !saw_points {
        return Err(perr("missing <DataArray> in <Points>"));
    }
    let mut take = |section: &str, name: &str| {
        conn.shift_remove(&(section.to_string(), name.to_string()))
            .ok_or_else(|| perr(format!("missing <DataArray Name=\"{name}\"> in <{section}>")))
    };
    let verts = cells("Verts", take("Verts", "connectivity")?, take("Verts", "offsets")?, header.verts, n)?;
    let polys = cells("Polys", take("Polys", "connectivity")?, take("Polys", "offsets")?, header.polys, n)?;
    pd.verts = verts
        .into_iter()
        .map(|c| match c[..] {
            [v] => Ok(v),
            _ => Err(perr("unsupported multi-point vertex cell")),
        })
        .collect::<Result<_>>()?;
    pd.quads = polys
        .into_iter()
        .map(|c| match c[..] {
            [a, b, c, d] => Ok([a, b, c, d]),
            _ => Err(perr("unsupported non-quad polygon")),
        })
        .collect::<Result<_>>()?;
    Ok(pd)
}
