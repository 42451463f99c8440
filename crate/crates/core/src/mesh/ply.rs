//! PLY reading and writing (ASCII and binary, either byte order on read).
//!
//! Written files carry `double` positions, `float` normals, optional `uchar`
//! RGB colours and a `vertex_indices` face list. The reader accepts any
//! scalar types for those properties, fans polygons into triangles and skips
//! unknown elements.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use super::TriangleMesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    Binary { big_endian: bool },
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
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::format("ply header", format!("unknown scalar type '{other}'"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Cursor over the body in either encoding.
struct Body<'a> {
    bytes: &'a [u8],
    pos: usize,
    encoding: Encoding,
}

impl Body<'_> {
    fn next_token(&mut self) -> Result<&str> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format("ply body", "unexpected end of data"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|e| Error::format("ply body", e.to_string()))
    }

    fn read(&mut self, ty: Scalar) -> Result<f64> {
        match self.encoding {
            Encoding::Ascii => {
                let tok = self.next_token()?;
                tok.parse::<f64>()
                    .map_err(|e| Error::format("ply body", format!("'{tok}': {e}")))
            }
            Encoding::Binary { big_endian } => {
                let n = ty.size();
                let raw = self
                    .bytes
                    .get(self.pos..self.pos + n)
                    .ok_or_else(|| Error::format("ply body", "unexpected end of data"))?;
                self.pos += n;
                let mut buf = [0u8; 8];
                buf[..n].copy_from_slice(raw);
                if big_endian {
                    buf[..n].reverse();
                }
                Ok(match ty {
                    Scalar::I8 => buf[0] as i8 as f64,
                    Scalar::U8 => buf[0] as f64,
                    Scalar::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
                    Scalar::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
                    Scalar::I32 => i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
                    Scalar::U32 => u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
                    Scalar::F32 => f32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
                    Scalar::F64 => f64::from_le_bytes(buf),
                })
            }
        }
    }
}

fn parse_header(bytes: &[u8]) -> Result<(Encoding, Vec<Element>, usize)> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::format("ply header", "missing end_header"))?;
    let mut body_start = end + END.len();
    // Skip the line terminator after end_header.
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let text = std::str::from_utf8(&bytes[..end]).map_err(|e| Error::format("ply header", e.to_string()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::format("ply header", "missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::Binary { big_endian: false },
                    "binary_big_endian" => Encoding::Binary { big_endian: true },
                    other => return Err(Error::format("ply header", format!("unknown format '{other}'"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::format("ply header", format!("bad element count '{count}'")))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => elements
                .last_mut()
                .ok_or_else(|| Error::format("ply header", "property before element"))?
                .props
                .push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count)?,
                    item: Scalar::parse(item)?,
                }),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::format("ply header", "property before element"))?
                .props
                .push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty)?,
                }),
            _ => return Err(Error::format("ply header", format!("unrecognised line '{line}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::format("ply header", "missing format line"))?;
    Ok((encoding, elements, body_start))
}

pub fn read_ply(path: &Path) -> Result<TriangleMesh> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

pub fn parse_ply(bytes: &[u8]) -> Result<TriangleMesh> {
    let (encoding, elements, body_start) = parse_header(bytes)?;
    let mut body = Body {
        bytes,
        pos: body_start,
        encoding,
    };
    let mut vertices = Vec::new();
    let mut normals: Vec<Vector3<f64>> = Vec::new();
    let mut colors: Vec<[u8; 3]> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    for el in &elements {
        let slot = |name: &str| {
            el.props
                .iter()
                .position(|p| matches!(p, Property::Scalar { name: n, .. } if n == name))
        };
        let xyz = [slot("x"), slot("y"), slot("z")];
        let nxyz = [slot("nx"), slot("ny"), slot("nz")];
        let rgb = [slot("red"), slot("green"), slot("blue")];
        let has_normals = nxyz.iter().all(Option::is_some);
        let has_colors = rgb.iter().all(Option::is_some);
        let mut scalars = vec![0.0; el.props.len()];
        for _ in 0..el.count {
            let mut list: Vec<u32> = Vec::new();
            for (pi, prop) in el.props.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => scalars[pi] = body.read(*ty)?,
                    Property::List { name, count, item } => {
                        let n = body.read(*count)? as usize;
                        let wanted = name == "vertex_indices" || name == "vertex_index";
                        for _ in 0..n {
                            let v = body.read(*item)?;
                            if wanted {
                                list.push(v as u32);
                            }
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    let [Some(x), Some(y), Some(z)] = xyz else {
                        return Err(Error::format("ply header", "vertex element lacks x/y/z"));
                    };
                    vertices.push(Point3::new(scalars[x], scalars[y], scalars[z]));
                    if has_normals {
                        let n = nxyz.map(|s| scalars[s.unwrap()]);
                        normals.push(Vector3::from(n));
                    }
                    if has_colors {
                        colors.push(rgb.map(|s| scalars[s.unwrap()].clamp(0.0, 255.0) as u8));
                    }
                }
                "face" => {
                    for i in 1..list.len().saturating_sub(1) {
                        triangles.push([list[0], list[i], list[i + 1]]);
                    }
                }
                _ => {}
            }
        }
    }

    let mesh = if triangles.is_empty() {
        TriangleMesh::from_points(vertices, (!normals.is_empty()).then_some(normals))?
    } else {
        TriangleMesh::new(vertices, triangles)?
    };
    if colors.len() == mesh.vertices().len() && !colors.is_empty() {
        mesh.with_colors(colors)
    } else {
        Ok(mesh)
    }
}

pub fn write_ply(path: &Path, mesh: &TriangleMesh, format: PlyFormat) -> Result<()> {
    fs::write(path, encode_ply(mesh, format)).map_err(|e| Error::io(path, e))
}

pub fn encode_ply(mesh: &TriangleMesh, format: PlyFormat) -> Vec<u8> {
    let colors = mesh.colors();
    let mut header = String::from("ply\n");
    header.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    header.push_str("comment written by skinfuse\n");
    let _ = writeln!(header, "element vertex {}", mesh.vertices().len());
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    let _ = writeln!(header, "element face {}", mesh.triangles().len());
    header.push_str("property list uchar int vertex_indices\nend_header\n");

    let mut out = header.into_bytes();
    match format {
        PlyFormat::Ascii => {
            let mut s = String::new();
            for (i, p) in mesh.vertices().iter().enumerate() {
                let n = mesh.normals()[i].map(|v| v as f32);
                let _ = write!(s, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z);
                if let Some(c) = colors {
                    let _ = write!(s, " {} {} {}", c[i][0], c[i][1], c[i][2]);
                }
                s.push('\n');
            }
            for t in mesh.triangles() {
                let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
            }
            out.extend_from_slice(s.as_bytes());
        }
        PlyFormat::BinaryLittleEndian => {
            for (i, p) in mesh.vertices().iter().enumerate() {
                for v in p.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for v in mesh.normals()[i].iter() {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
                if let Some(c) = colors {
                    out.extend_from_slice(&c[i]);
                }
            }
            for t in mesh.triangles() {
                out.push(3);
                for &i in t {
                    out.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
        }
    }
    out
}
