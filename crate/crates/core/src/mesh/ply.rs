//! Binary little-endian PLY and plain OBJ.

use super::Mesh;
use crate::{Error, Result, Vec3};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Vertices carry `double x y z`, `float nx ny nz`, `uchar red green blue`
/// and, when present, `int label`; faces are `list uchar int`.
pub fn export_ply(mesh: &Mesh, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply(mesh, &mut w)?;
    w.flush()?;
    Ok(())
}

fn write_ply<W: Write>(mesh: &Mesh, w: &mut W) -> Result<()> {
    let n = mesh.vertices.len();
    assert!(mesh.normals.len() == n && mesh.colors.len() == n, "per-vertex attributes must match");
    writeln!(w, "ply\nformat binary_little_endian 1.0")?;
    writeln!(w, "element vertex {n}")?;
    for p in ["x", "y", "z"] {
        writeln!(w, "property double {p}")?;
    }
    for p in ["nx", "ny", "nz"] {
        writeln!(w, "property float {p}")?;
    }
    for p in ["red", "green", "blue"] {
        writeln!(w, "property uchar {p}")?;
    }
    if mesh.labels.is_some() {
        writeln!(w, "property int label")?;
    }
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar int vertex_indices\nend_header")?;
    let mut buf = Vec::with_capacity(n * 43);
    for i in 0..n {
        for v in mesh.vertices[i].iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in mesh.normals[i].iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for c in mesh.colors[i] {
            buf.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        if let Some(l) = &mesh.labels {
            buf.extend_from_slice(&l[i].to_le_bytes());
        }
    }
    for t in &mesh.triangles {
        buf.push(3);
        for i in t {
            buf.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn read(self, r: &mut impl Read) -> std::io::Result<f64> {
        let mut b = [0u8; 8];
        Ok(match self {
            Scalar::I8 => {
                r.read_exact(&mut b[..1])?;
                b[0] as i8 as f64
            }
            Scalar::U8 => {
                r.read_exact(&mut b[..1])?;
                b[0] as f64
            }
            Scalar::I16 => {
                r.read_exact(&mut b[..2])?;
                i16::from_le_bytes([b[0], b[1]]) as f64
            }
            Scalar::U16 => {
                r.read_exact(&mut b[..2])?;
                u16::from_le_bytes([b[0], b[1]]) as f64
            }
            Scalar::I32 => {
                r.read_exact(&mut b[..4])?;
                i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Scalar::U32 => {
                r.read_exact(&mut b[..4])?;
                u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Scalar::F32 => {
                r.read_exact(&mut b[..4])?;
                f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Scalar::F64 => {
                r.read_exact(&mut b)?;
                f64::from_le_bytes(b)
            }
        })
    }
}

enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Read a binary little-endian PLY with triangle (or polygon, fan
/// triangulated) faces. Unknown vertex properties are skipped.
pub fn import_ply(path: &Path) -> Result<Mesh> {
    let f = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: path.to_path_buf() },
        _ => e.into(),
    })?;
    let mut r = BufReader::new(f);
    let bad = |m: &str| Error::format(path, m);
    let mut line = String::new();
    let mut elements: Vec<Element> = Vec::new();
    r.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(bad("missing ply magic"));
    }
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("unterminated header"));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(bad("only binary_little_endian is supported"));
                }
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let (c, i) = (Scalar::parse(ct), Scalar::parse(it));
                let e = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                e.props.push(Property::List(
                    name.to_string(),
                    c.ok_or_else(|| bad("bad list count type"))?,
                    i.ok_or_else(|| bad("bad list item type"))?,
                ));
            }
            ["property", ty, name] => {
                let t = Scalar::parse(ty).ok_or_else(|| bad("bad property type"))?;
                let e = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                e.props.push(Property::Scalar(name.to_string(), t));
            }
            ["end_header"] => break,
            _ => {}
        }
    }

    let mut mesh = Mesh::default();
    for e in &elements {
        for _ in 0..e.count {
            let mut pos = Vec3::zeros();
            let mut nrm = Vec3::zeros();
            let mut rgb = [0.0f32; 3];
            let mut label = None;
            for p in &e.props {
                match p {
                    Property::Scalar(name, t) => {
                        let v = t.read(&mut r)?;
                        match name.as_str() {
                            "x" => pos.x = v,
                            "y" => pos.y = v,
                            "z" => pos.z = v,
                            "nx" => nrm.x = v,
                            "ny" => nrm.y = v,
                            "nz" => nrm.z = v,
                            "red" => rgb[0] = (v / 255.0) as f32,
                            "green" => rgb[1] = (v / 255.0) as f32,
                            "blue" => rgb[2] = (v / 255.0) as f32,
                            "label" => label = Some(v as i32),
                            _ => {}
                        }
                    }
                    Property::List(name, ct, it) => {
                        let n = ct.read(&mut r)? as usize;
                        let idx = (0..n).map(|_| it.read(&mut r).map(|v| v as u32)).collect::<std::io::Result<Vec<_>>>()?;
                        if e.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            for k in 1..n.saturating_sub(1) {
                                mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                            }
                        }
                    }
                }
            }
            if e.name == "vertex" {
                mesh.vertices.push(pos);
                mesh.normals.push(nrm);
                mesh.colors.push(rgb);
                if let Some(l) = label {
                    mesh.labels.get_or_insert_with(Vec::new).push(l);
                }
            }
        }
    }
    let nv = mesh.vertices.len() as u32;
    if mesh.triangles.iter().flatten().any(|&i| i >= nv) {
        return Err(bad("face references a missing vertex"));
    }
    Ok(mesh)
}

/// Positions and faces only.
pub fn export_obj(mesh: &Mesh, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}
