//! PLY 1.0 point-cloud serialization, ascii and binary little-endian.
//!
//! The exported vertex schema is fixed: x, y, z, nx, ny, nz as float32
//! (normals always zero) and red, green, blue as uint8, in that order, so
//! common splat initializers can consume the file directly. Confidence is
//! not part of the schema; re-imported clouds default it to 1.
//!
//! The importer is more liberal: it needs x, y, z and tolerates extra
//! scalar properties, reading color and confidence when present.

use super::{CloudPoint, PointCloud, DEFAULT_COLOR};
use crate::geometry::Point3;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("byte {offset}: {message}")]
    Parse { offset: usize, message: String },
}

fn parse_err(offset: usize, message: impl Into<String>) -> PlyError {
    PlyError::Parse {
        offset,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

/// Writes the cloud with the fixed vertex schema described in the module
/// docs. Positions are narrowed to float32.
pub fn export_ply<W: Write>(
    cloud: &PointCloud,
    sink: &mut W,
    encoding: PlyEncoding,
) -> Result<(), PlyError> {
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        sink,
        "ply\nformat {format} 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property float nx\nproperty float ny\nproperty float nz\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         end_header\n",
        cloud.len()
    )?;
    for p in cloud.points() {
        let (x, y, z) = (
            p.position.x as f32,
            p.position.y as f32,
            p.position.z as f32,
        );
        match encoding {
            PlyEncoding::Ascii => {
                writeln!(
                    sink,
                    "{x} {y} {z} 0 0 0 {} {} {}",
                    p.color[0], p.color[1], p.color[2]
                )?;
            }
            PlyEncoding::BinaryLittleEndian => {
                for v in [x, y, z, 0.0, 0.0, 0.0] {
                    sink.write_all(&v.to_le_bytes())?;
                }
                sink.write_all(&p.color)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    F32,
    F64,
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
}

impl ScalarType {
    fn from_word(word: &str) -> Option<Self> {
        Some(match word {
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            "uchar" | "uint8" => Self::U8,
            "char" | "int8" => Self::I8,
            "ushort" | "uint16" => Self::U16,
            "short" | "int16" => Self::I16,
            "uint" | "uint32" => Self::U32,
            "int" | "int32" => Self::I32,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::U8 | Self::I8 => 1,
            Self::U16 | Self::I16 => 2,
            Self::F32 | Self::U32 | Self::I32 => 4,
            Self::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Self::F32 | Self::F64)
    }

    fn read_binary(self, bytes: &[u8]) -> f64 {
        match self {
            Self::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
            Self::U8 => bytes[0] as f64,
            Self::I8 => bytes[0] as i8 as f64,
            Self::U16 => u16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            Self::I16 => i16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Self::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
        }
    }

    fn read_ascii(self, token: &str, offset: usize) -> Result<f64, PlyError> {
        match self {
            // Parsing at the declared width keeps ascii and binary bodies
            // bit-equivalent: a float32 token widens exactly like the four
            // bytes it came from.
            Self::F32 => token
                .parse::<f32>()
                .map(|v| v as f64)
                .map_err(|_| parse_err(offset, format!("`{token}` is not a number"))),
            Self::F64 => token
                .parse::<f64>()
                .map_err(|_| parse_err(offset, format!("`{token}` is not a number"))),
            _ => token
                .parse::<i64>()
                .map(|v| v as f64)
                .map_err(|_| parse_err(offset, format!("`{token}` is not an integer"))),
        }
    }
}

struct HeaderInfo {
    encoding: PlyEncoding,
    vertex_count: usize,
    properties: Vec<(ScalarType, String)>,
    body_start: usize,
}

/// Pulls the next newline-terminated line out of `bytes`, advancing
/// `offset`. Returns the line (without the terminator) and its start.
fn next_line<'a>(bytes: &'a [u8], offset: &mut usize) -> Result<(&'a str, usize), PlyError> {
    let start = *offset;
    if start >= bytes.len() {
        return Err(parse_err(start, "unexpected end of file"));
    }
    let end = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| start + p)
        .unwrap_or(bytes.len());
    *offset = (end + 1).min(bytes.len() + 1);
    let mut line = &bytes[start..end];
    if line.last() == Some(&b'\r') {
        line = &line[..line.len() - 1];
    }
    std::str::from_utf8(line)
        .map(|s| (s, start))
        .map_err(|_| parse_err(start, "line is not valid UTF-8"))
}

fn parse_header(bytes: &[u8]) -> Result<HeaderInfo, PlyError> {
    let mut offset = 0usize;
    let (magic, _) = next_line(bytes, &mut offset)?;
    if magic != "ply" {
        return Err(parse_err(0, format!("not a PLY file: first line `{magic}`")));
    }
    let mut encoding = None;
    let mut vertex_count = None;
    let mut properties = Vec::new();
    loop {
        let (line, line_start) = next_line(bytes, &mut offset)?;
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                let (kind, version) = (words.next(), words.next());
                match (kind, version) {
                    (Some("ascii"), Some("1.0")) => encoding = Some(PlyEncoding::Ascii),
                    (Some("binary_little_endian"), Some("1.0")) => {
                        encoding = Some(PlyEncoding::BinaryLittleEndian)
                    }
                    _ => {
                        return Err(parse_err(
                            line_start,
                            format!("unsupported format `{line}`"),
                        ))
                    }
                }
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let name = words.next().unwrap_or("");
                if name != "vertex" {
                    return Err(parse_err(
                        line_start,
                        format!("unsupported element `{name}`; only vertex clouds are handled"),
                    ));
                }
                if vertex_count.is_some() {
                    return Err(parse_err(line_start, "duplicate vertex element"));
                }
                let count = words
                    .next()
                    .and_then(|w| w.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(line_start, "element vertex needs a count"))?;
                vertex_count = Some(count);
            }
            Some("property") => {
                if vertex_count.is_none() {
                    return Err(parse_err(line_start, "property before any element"));
                }
                let type_word = words.next().unwrap_or("");
                if type_word == "list" {
                    return Err(parse_err(
                        line_start,
                        "list properties are not supported for vertices",
                    ));
                }
                let scalar = ScalarType::from_word(type_word).ok_or_else(|| {
                    parse_err(line_start, format!("unknown property type `{type_word}`"))
                })?;
                let name = words
                    .next()
                    .ok_or_else(|| parse_err(line_start, "property needs a name"))?;
                properties.push((scalar, name.to_string()));
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(parse_err(
                    line_start,
                    format!("unexpected header keyword `{other}`"),
                ))
            }
            None => {}
        }
    }
    let encoding =
        encoding.ok_or_else(|| parse_err(offset, "header ended without a format line"))?;
    let vertex_count =
        vertex_count.ok_or_else(|| parse_err(offset, "header declares no vertex element"))?;
    Ok(HeaderInfo {
        encoding,
        vertex_count,
        properties,
        body_start: offset,
    })
}

struct FieldMap {
    x: usize,
    y: usize,
    z: usize,
    red: Option<usize>,
    green: Option<usize>,
    blue: Option<usize>,
    confidence: Option<usize>,
}

impl FieldMap {
    fn build(header: &HeaderInfo) -> Result<Self, PlyError> {
        let find = |name: &str| header.properties.iter().position(|(_, n)| n == name);
        let require = |name: &str| {
            find(name).ok_or_else(|| {
                parse_err(
                    header.body_start,
                    format!("missing required vertex property `{name}`"),
                )
            })
        };
        let color = |name: &str| -> Result<Option<usize>, PlyError> {
            match find(name) {
                Some(i) if header.properties[i].0.is_float() => Err(parse_err(
                    header.body_start,
                    format!("color property `{name}` must be an integer type"),
                )),
                other => Ok(other),
            }
        };
        Ok(Self {
            x: require("x")?,
            y: require("y")?,
            z: require("z")?,
            red: color("red")?,
            green: color("green")?,
            blue: color("blue")?,
            confidence: find("confidence"),
        })
    }

    fn point(&self, values: &[f64], offset: usize) -> Result<CloudPoint, PlyError> {
        let position = Point3::new(values[self.x], values[self.y], values[self.z])
            .map_err(|e| parse_err(offset, format!("bad vertex position: {e}")))?;
        let channel = |idx: Option<usize>, name: &str| -> Result<u8, PlyError> {
            match idx {
                None => Ok(DEFAULT_COLOR[0]),
                Some(i) => {
                    let v = values[i];
                    if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                        Ok(v as u8)
                    } else {
                        Err(parse_err(
                            offset,
                            format!("color channel {name} out of range: {v}"),
                        ))
                    }
                }
            }
        };
        let confidence = match self.confidence {
            None => 1.0,
            Some(i) => {
                let c = values[i];
                if !c.is_finite() || !(0.0..=1.0).contains(&c) {
                    return Err(parse_err(
                        offset,
                        format!("confidence must lie in [0, 1], got {c}"),
                    ));
                }
                c
            }
        };
        Ok(CloudPoint {
            position,
            color: [
                channel(self.red, "red")?,
                channel(self.green, "green")?,
                channel(self.blue, "blue")?,
            ],
            confidence,
        })
    }
}

/// Reads a PLY vertex cloud from a complete byte buffer.
pub fn import_ply(bytes: &[u8]) -> Result<PointCloud, PlyError> {
    let header = parse_header(bytes)?;
    let fields = FieldMap::build(&header)?;
    let mut points = Vec::with_capacity(header.vertex_count);
    let mut values = vec![0f64; header.properties.len()];

    match header.encoding {
        PlyEncoding::Ascii => {
            let mut offset = header.body_start;
            for _ in 0..header.vertex_count {
                let (line, line_start) = next_line(bytes, &mut offset)?;
                let tokens: Vec<&str> = line.split_whitespace().collect();
                if tokens.len() != header.properties.len() {
                    return Err(parse_err(
                        line_start,
                        format!(
                            "expected {} values, found {}",
                            header.properties.len(),
                            tokens.len()
                        ),
                    ));
                }
                for ((value, (scalar, _)), token) in
                    values.iter_mut().zip(&header.properties).zip(&tokens)
                {
                    *value = scalar.read_ascii(token, line_start)?;
                }
                points.push(fields.point(&values, line_start)?);
            }
            // Only blank space may follow the last vertex.
            if bytes[offset.min(bytes.len())..]
                .iter()
                .any(|b| !b.is_ascii_whitespace())
            {
                return Err(parse_err(offset, "trailing data after the last vertex"));
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            let stride: usize = header.properties.iter().map(|(s, _)| s.size()).sum();
            let need = header.vertex_count * stride;
            let body = &bytes[header.body_start.min(bytes.len())..];
            if body.len() < need {
                return Err(parse_err(
                    bytes.len(),
                    format!(
                        "vertex data truncated: need {need} bytes, found {}",
                        body.len()
                    ),
                ));
            }
            if body.len() > need {
                return Err(parse_err(
                    header.body_start + need,
                    "trailing data after the last vertex",
                ));
            }
            for i in 0..header.vertex_count {
                let vertex_offset = header.body_start + i * stride;
                let mut cursor = i * stride;
                for (value, (scalar, _)) in values.iter_mut().zip(&header.properties) {
                    *value = scalar.read_binary(&body[cursor..]);
                    cursor += scalar.size();
                }
                points.push(fields.point(&values, vertex_offset)?);
            }
        }
    }
    PointCloud::new(points).map_err(|e| parse_err(header.body_start, e.to_string()))
}
