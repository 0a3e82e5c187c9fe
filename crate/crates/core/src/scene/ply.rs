//! Binary little-endian PLY in the de-facto Gaussian splatting export schema.
//!
//! Scales are stored as natural logs, opacity as a pre-sigmoid logit and color
//! as the degree-0 spherical harmonic coefficient. Extra vertex properties
//! (normals, higher-order SH) are ignored on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{Gaussian3D, Scene, SceneError};
use crate::Real;

/// Degree-0 spherical harmonic basis constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

const OPACITY_CLAMP: f64 = 1e-6;

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity",
    "f_dc_0", "f_dc_1", "f_dc_2",
];

#[derive(Clone, Copy, Debug, PartialEq)]
enum ScalarKind {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarKind {
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

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, ScalarKind)>,
    has_list: bool,
}

impl Element {
    fn stride(&self) -> usize {
        self.props.iter().map(|(_, k)| k.size()).sum()
    }
}

struct Header {
    elements: Vec<Element>,
    background: Option<[f64; 3]>,
    body_offset: usize,
}

fn parse_err(msg: impl Into<String>) -> SceneError {
    SceneError::Parse(msg.into())
}

fn parse_header(bytes: &[u8]) -> Result<Header, SceneError> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| parse_err("missing end_header"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| parse_err("header is not utf-8"))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(parse_err("missing ply magic"));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut background = None;
    let mut format_ok = false;
    for line in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("binary_little_endian") {
                    return Err(parse_err("only binary_little_endian is supported"));
                }
                format_ok = true;
            }
            Some("comment") => {
                if tok.next() == Some("background") {
                    let v: Vec<f64> = tok.filter_map(|t| t.parse().ok()).collect();
                    if v.len() == 3 {
                        background = Some([v[0], v[1], v[2]]);
                    }
                }
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| parse_err("element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(format!("bad count for element {name}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                    has_list: false,
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err("property before element"))?;
                let ty = tok.next().ok_or_else(|| parse_err("property without type"))?;
                if ty == "list" {
                    el.has_list = true;
                    continue;
                }
                let kind = ScalarKind::parse(ty)
                    .ok_or_else(|| parse_err(format!("unknown property type {ty}")))?;
                let name = tok.next().ok_or_else(|| parse_err("property without name"))?;
                el.props.push((name.to_string(), kind));
            }
            Some("obj_info") | None => {}
            Some(other) => return Err(parse_err(format!("unexpected header keyword {other}"))),
        }
    }
    if !format_ok {
        return Err(parse_err("missing format line"));
    }
    Ok(Header {
        elements,
        background,
        body_offset: end + END.len(),
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parses a scene from PLY bytes. Never returns a partially filled scene.
pub fn read_ply<T: Real>(bytes: &[u8]) -> Result<Scene<T>, SceneError> {
    let header = parse_header(bytes)?;
    let mut offset = header.body_offset;
    let mut vertex = None;
    for el in &header.elements {
        if el.name == "vertex" {
            vertex = Some(el);
            break;
        }
        if el.has_list {
            return Err(parse_err(format!(
                "list property in element `{}` preceding vertices",
                el.name
            )));
        }
        offset += el.count * el.stride();
    }
    let vertex = vertex.ok_or_else(|| SceneError::SchemaMismatch("vertex".into()))?;
    if vertex.has_list {
        return Err(parse_err("list properties in vertex element"));
    }

    let mut slots = [(0usize, ScalarKind::F32); REQUIRED.len()];
    for (slot, name) in slots.iter_mut().zip(REQUIRED) {
        let mut at = 0;
        let mut found = None;
        for (pname, kind) in &vertex.props {
            if pname == name {
                found = Some((at, *kind));
                break;
            }
            at += kind.size();
        }
        *slot = found.ok_or_else(|| SceneError::SchemaMismatch(name.to_string()))?;
    }
    if vertex.count == 0 {
        return Err(SceneError::EmptyScene);
    }

    let stride = vertex.stride();
    let needed = vertex.count * stride;
    let body = bytes
        .get(offset..offset + needed)
        .ok_or_else(|| parse_err(format!(
            "truncated vertex data: need {needed} bytes, have {}",
            bytes.len().saturating_sub(offset)
        )))?;

    let mut gaussians = Vec::with_capacity(vertex.count);
    for rec in body.chunks_exact(stride) {
        let mut f = [0.0f64; REQUIRED.len()];
        for (v, (at, kind)) in f.iter_mut().zip(slots) {
            *v = kind.read(&rec[at..]);
        }
        let t = T::lit;
        let q = Quaternion::new(t(f[6]), t(f[7]), t(f[8]), t(f[9]));
        if q.norm().as_f64() == 0.0 {
            return Err(parse_err("zero-norm rotation quaternion"));
        }
        gaussians.push(Gaussian3D {
            mean: Vector3::new(t(f[0]), t(f[1]), t(f[2])),
            scale: Vector3::new(t(f[3].exp()), t(f[4].exp()), t(f[5].exp())),
            rot: UnitQuaternion::new_normalize(q),
            opacity: t(sigmoid(f[10])),
            color: Vector3::new(
                t((0.5 + SH_C0 * f[11]).clamp(0.0, 1.0)),
                t((0.5 + SH_C0 * f[12]).clamp(0.0, 1.0)),
                t((0.5 + SH_C0 * f[13]).clamp(0.0, 1.0)),
            ),
        });
    }
    let bg = header.background.unwrap_or([0.0; 3]);
    Scene::with_background(gaussians, Vector3::new(T::lit(bg[0]), T::lit(bg[1]), T::lit(bg[2])))
}

/// Serializes a scene; inverse of [`read_ply`] up to float32 storage.
pub fn write_ply<T: Real>(scene: &Scene<T>) -> Result<Vec<u8>, SceneError> {
    if scene.is_empty() {
        return Err(SceneError::EmptyScene);
    }
    let bg = scene.background();
    let mut out = Vec::with_capacity(256 + scene.len() * 14 * 4);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\ncomment background {:?} {:?} {:?}\nelement vertex {}\n",
        bg.x.as_f64(),
        bg.y.as_f64(),
        bg.z.as_f64(),
        scene.len()
    )
    .expect("write to vec");
    for name in [
        "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
        "rot_0", "rot_1", "rot_2", "rot_3",
    ] {
        writeln!(out, "property float {name}").expect("write to vec");
    }
    out.extend_from_slice(b"end_header\n");
    for g in scene.gaussians() {
        let o = g.opacity.as_f64().clamp(OPACITY_CLAMP, 1.0 - OPACITY_CLAMP);
        let q = g.rot.as_ref();
        let fields = [
            g.mean.x.as_f64(),
            g.mean.y.as_f64(),
            g.mean.z.as_f64(),
            (g.color.x.as_f64() - 0.5) / SH_C0,
            (g.color.y.as_f64() - 0.5) / SH_C0,
            (g.color.z.as_f64() - 0.5) / SH_C0,
            (o / (1.0 - o)).ln(),
            g.scale.x.as_f64().ln(),
            g.scale.y.as_f64().ln(),
            g.scale.z.as_f64().ln(),
            q.w.as_f64(),
            q.i.as_f64(),
            q.j.as_f64(),
            q.k.as_f64(),
        ];
        for v in fields {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_ply<T: Real>(path: impl AsRef<Path>) -> Result<Scene<T>, SceneError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_ply(&bytes)
}

pub fn save_ply<T: Real>(scene: &Scene<T>, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    let bytes = write_ply(scene)?;
    fs::write(path, bytes).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })
}
