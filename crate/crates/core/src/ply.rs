//! Minimal PLY support for point clouds.
//!
//! Reads ASCII and binary little-endian files. The `vertex` element must carry
//! `x`, `y` and `z`; an integer `label` property, if present, becomes the
//! per-point category. Other elements and properties are skipped.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::pointcloud::{CloudError, Point3, PointCloud};

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("PLY header, line {line}: {msg}")]
    Header { line: usize, msg: String },
    #[error("PLY body, line {line}: {msg}")]
    AsciiBody { line: usize, msg: String },
    #[error("PLY body, byte offset {offset}: {msg}")]
    BinaryBody { offset: usize, msg: String },
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Self::F32 | Self::F64)
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => f64::from(b[0] as i8),
            Self::U8 => f64::from(b[0]),
            Self::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Self::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Self::I32 => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Self::U32 => f64::from(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Self::F32 => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
    body_line: usize,
}

fn header_err(line: usize, msg: impl Into<String>) -> PlyError {
    PlyError::Header {
        line,
        msg: msg.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut offset = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| header_err(line_no + 1, "missing end_header"))?;
        line_no += 1;
        let raw = std::str::from_utf8(&rest[..end])
            .map_err(|_| header_err(line_no, "header is not valid UTF-8"))?;
        offset += end + 1;
        let line = raw.trim_end_matches('\r').trim();
        let mut words = line.split_whitespace();
        let keyword = words.next().unwrap_or("");
        if line_no == 1 {
            if line != "ply" {
                return Err(header_err(1, "missing 'ply' magic"));
            }
            continue;
        }
        match keyword {
            "" | "comment" | "obj_info" => {}
            "format" => {
                format = Some(match (words.next(), words.next()) {
                    (Some("ascii"), Some("1.0")) => PlyFormat::Ascii,
                    (Some("binary_little_endian"), Some("1.0")) => PlyFormat::BinaryLittleEndian,
                    (Some(other), _) => {
                        return Err(header_err(line_no, format!("unsupported format '{other}'")))
                    }
                    _ => return Err(header_err(line_no, "malformed format line")),
                });
            }
            "element" => {
                let name = words
                    .next()
                    .ok_or_else(|| header_err(line_no, "element without name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| header_err(line_no, "element count is not an integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line_no, "property before any element"))?;
                let ty = words
                    .next()
                    .ok_or_else(|| header_err(line_no, "property without type"))?;
                let prop = if ty == "list" {
                    let count = words.next().and_then(Scalar::parse);
                    let item = words.next().and_then(Scalar::parse);
                    match (count, item, words.next()) {
                        (Some(count), Some(item), Some(_)) if count.is_integer() => {
                            Property::List { count, item }
                        }
                        _ => return Err(header_err(line_no, "malformed list property")),
                    }
                } else {
                    let ty = Scalar::parse(ty)
                        .ok_or_else(|| header_err(line_no, format!("unknown type '{ty}'")))?;
                    let name = words
                        .next()
                        .ok_or_else(|| header_err(line_no, "property without name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                element.props.push(prop);
            }
            "end_header" => break,
            other => return Err(header_err(line_no, format!("unexpected keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| header_err(line_no, "missing format line"))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset,
        body_line: line_no,
    })
}

/// Column positions of the properties we care about within the vertex element.
struct VertexLayout {
    xyz: [usize; 3],
    label: Option<usize>,
}

fn vertex_layout(element: &Element, line: usize) -> Result<VertexLayout, PlyError> {
    let find = |wanted: &str| {
        element.props.iter().position(|p| match p {
            Property::Scalar { name, .. } => name == wanted,
            Property::List { .. } => false,
        })
    };
    let mut xyz = [0; 3];
    for (a, name) in ["x", "y", "z"].iter().enumerate() {
        xyz[a] = find(name)
            .ok_or_else(|| header_err(line, format!("vertex element has no '{name}' property")))?;
    }
    let label = find("label");
    if let Some(i) = label {
        if let Property::Scalar { ty, .. } = element.props[i] {
            if !ty.is_integer() {
                return Err(header_err(line, "label property must be an integer type"));
            }
        }
    }
    Ok(VertexLayout { xyz, label })
}

#[derive(Default)]
struct Sink {
    positions: Vec<Point3>,
    labels: Vec<u32>,
}

fn label_value(v: f64) -> Option<u32> {
    (v >= 0.0 && v <= f64::from(u32::MAX) && v.fract() == 0.0).then_some(v as u32)
}

/// Parses a PLY file into a point cloud, points in file order.
pub fn read_ply(bytes: &[u8]) -> Result<PointCloud, PlyError> {
    let header = parse_header(bytes)?;
    let vertex_idx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| header_err(header.body_line, "no vertex element"))?;
    let layout = vertex_layout(&header.elements[vertex_idx], header.body_line)?;
    let mut sink = Sink::default();
    let body = &bytes[header.body_offset..];
    match header.format {
        PlyFormat::Ascii => read_ascii(body, &header, vertex_idx, &layout, &mut sink)?,
        PlyFormat::BinaryLittleEndian => {
            read_binary(body, header.body_offset, &header, vertex_idx, &layout, &mut sink)?
        }
    }
    let labels = layout.label.map(|_| sink.labels);
    Ok(PointCloud::with_labels(sink.positions, labels)?)
}

fn read_ascii(
    body: &[u8],
    header: &Header,
    vertex_idx: usize,
    layout: &VertexLayout,
    sink: &mut Sink,
) -> Result<(), PlyError> {
    let text = std::str::from_utf8(body).map_err(|e| PlyError::AsciiBody {
        line: header.body_line + 1,
        msg: format!("body is not valid UTF-8: {e}"),
    })?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (header.body_line + 1 + i, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut values = Vec::new();
    for (ei, element) in header.elements.iter().enumerate() {
        for k in 0..element.count {
            let (line, content) = lines.next().ok_or_else(|| PlyError::AsciiBody {
                line: header.body_line + text.lines().count() + 1,
                msg: format!(
                    "unexpected end of data at {} {} of {}",
                    element.name,
                    k + 1,
                    element.count
                ),
            })?;
            let err = |msg: String| PlyError::AsciiBody { line, msg };
            let mut tokens = content.split_whitespace();
            values.clear();
            for prop in &element.props {
                let mut next = |what: &str| -> Result<f64, PlyError> {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| err(format!("missing value for {what}")))?;
                    f64::from_str(tok).map_err(|_| err(format!("'{tok}' is not a number")))
                };
                match prop {
                    Property::Scalar { name, .. } => values.push(next(name)?),
                    Property::List { .. } => {
                        let n = next("list count")?;
                        for _ in 0..(n as usize) {
                            next("list item")?;
                        }
                        values.push(0.0);
                    }
                }
            }
            if tokens.next().is_some() {
                return Err(err(format!("too many values for {} {}", element.name, k + 1)));
            }
            if ei == vertex_idx {
                push_vertex(&values, layout, sink).map_err(|m| err(format!("vertex {}: {m}", k + 1)))?;
            }
        }
    }
    Ok(())
}

fn push_vertex(values: &[f64], layout: &VertexLayout, sink: &mut Sink) -> Result<(), String> {
    let p = [values[layout.xyz[0]], values[layout.xyz[1]], values[layout.xyz[2]]];
    if !p.iter().all(|c| c.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    sink.positions.push(p);
    if let Some(li) = layout.label {
        let l = label_value(values[li]).ok_or_else(|| format!("invalid label {}", values[li]))?;
        sink.labels.push(l);
    }
    Ok(())
}

fn read_binary(
    body: &[u8],
    base: usize,
    header: &Header,
    vertex_idx: usize,
    layout: &VertexLayout,
    sink: &mut Sink,
) -> Result<(), PlyError> {
    let mut pos = 0usize;
    let mut values = Vec::new();
    for (ei, element) in header.elements.iter().enumerate() {
        for k in 0..element.count {
            let start = pos;
            let err = |offset: usize, msg: String| PlyError::BinaryBody {
                offset: base + offset,
                msg,
            };
            let take = |ty: Scalar, pos: &mut usize| -> Result<f64, PlyError> {
                let end = *pos + ty.size();
                let b = body.get(*pos..end).ok_or_else(|| {
                    err(
                        *pos,
                        format!(
                            "unexpected end of data at {} {} of {}",
                            element.name,
                            k + 1,
                            element.count
                        ),
                    )
                })?;
                *pos = end;
                Ok(ty.read_le(b))
            };
            values.clear();
            for prop in &element.props {
                match *prop {
                    Property::Scalar { ty, .. } => values.push(take(ty, &mut pos)?),
                    Property::List { count, item } => {
                        let n = take(count, &mut pos)? as usize;
                        for _ in 0..n {
                            take(item, &mut pos)?;
                        }
                        values.push(0.0);
                    }
                }
            }
            if ei == vertex_idx {
                push_vertex(&values, layout, sink)
                    .map_err(|m| err(start, format!("vertex {}: {m}", k + 1)))?;
            }
        }
    }
    Ok(())
}

/// Serializes a cloud. Coordinates are written as `double`; ASCII output uses
/// the shortest representation that parses back to the same `f64`.
pub fn write_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let mut header = String::from("ply\n");
    header.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    let _ = writeln!(header, "element vertex {}", cloud.len());
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.labels().is_some() {
        header.push_str("property uint label\n");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    let labels = cloud.labels();
    match format {
        PlyFormat::Ascii => {
            let mut line = String::new();
            for (i, p) in cloud.positions().iter().enumerate() {
                line.clear();
                let _ = write!(line, "{} {} {}", p[0], p[1], p[2]);
                if let Some(l) = labels {
                    let _ = write!(line, " {}", l[i]);
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for (i, p) in cloud.positions().iter().enumerate() {
                for c in p {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                if let Some(l) = labels {
                    out.extend_from_slice(&l[i].to_le_bytes());
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 2 3\n";

    #[test]
    fn reads_ascii() {
        let c = read_ply(TWO.as_bytes()).unwrap();
        assert_eq!(c.positions(), &[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]);
        assert!(c.labels().is_none());
    }

    #[test]
    fn reads_uchar_label() {
        let src = "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar label\nend_header\n0 0 0 3\n1 2 3 7\n";
        let c = read_ply(src.as_bytes()).unwrap();
        assert_eq!(c.labels(), Some(&[3, 7][..]));
    }

    #[test]
    fn short_body_names_missing_vertex() {
        let src = TWO.replace("vertex 2", "vertex 3");
        let err = read_ply(src.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("vertex 3 of 3"), "{err}");

        let bin = write_ply(
            &PointCloud::new(vec![[1.0; 3], [2.0; 3]]).unwrap(),
            PlyFormat::BinaryLittleEndian,
        );
        let text = String::from_utf8_lossy(&bin).replace("vertex 2", "vertex 3");
        let mut patched = text.as_bytes()[..text.find("end_header").unwrap()].to_vec();
        patched.extend_from_slice(&bin[bin.windows(10).position(|w| w == b"end_header").unwrap()..]);
        let err = read_ply(&patched).unwrap_err();
        assert!(matches!(err, PlyError::BinaryBody { offset, .. } if offset > 0));
        assert!(err.to_string().contains("vertex 3 of 3"));
    }

    #[test]
    fn rejects_malformed_header() {
        assert!(matches!(
            read_ply(b"plx\n").unwrap_err(),
            PlyError::Header { line: 1, .. }
        ));
        let no_format = "ply\nelement vertex 0\nproperty float x\nend_header\n";
        assert!(matches!(read_ply(no_format.as_bytes()), Err(PlyError::Header { .. })));
        let no_z = "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nend_header\n";
        assert!(read_ply(no_z.as_bytes()).unwrap_err().to_string().contains("'z'"));
        let be = "ply\nformat binary_big_endian 1.0\nend_header\n";
        assert!(read_ply(be.as_bytes()).is_err());
    }

    #[test]
    fn rejects_non_finite_coordinate() {
        let src = TWO.replace("1 2 3", "1 nan 3");
        let err = read_ply(src.as_bytes()).unwrap_err();
        assert!(matches!(err, PlyError::AsciiBody { line: 9, .. }), "{err}");
    }

    #[test]
    fn skips_faces_and_extra_properties() {
        let src = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float nx\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 9 0 0\n1 9 0 0\n0 9 1 0\n3 0 1 2\n";
        let c = read_ply(src.as_bytes()).unwrap();
        assert_eq!(c.positions()[2], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_cloud_round_trips() {
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let bytes = write_ply(&PointCloud::empty(), fmt);
            assert!(String::from_utf8_lossy(&bytes).contains("element vertex 0"));
            assert!(read_ply(&bytes).unwrap().is_empty());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_cloud() -> impl Strategy<Value = PointCloud> {
            prop::collection::vec((prop::array::uniform3(-1e6f64..1e6), 0u32..40), 0..100).prop_map(
                |pts| {
                    let (pos, labels): (Vec<_>, Vec<_>) = pts.into_iter().unzip();
                    PointCloud::with_labels(pos, Some(labels)).unwrap()
                },
            )
        }

        proptest! {
            #[test]
            fn round_trip_is_bit_exact(cloud in arb_cloud(), ascii in any::<bool>()) {
                let fmt = if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
                let back = read_ply(&write_ply(&cloud, fmt)).unwrap();
                prop_assert_eq!(back, cloud);
            }
        }
    }
}
