//! Indexed triangle meshes and their file formats.
//!
//! PLY is read in ASCII and little/big-endian binary flavors and written in
//! ASCII or little-endian binary. STL is written binary only.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::camera::Point3;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let m = Self { vertices, triangles };
        m.validate().map_err(Error::InvalidArgument)?;
        Ok(m)
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if let Some(i) = self.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(format!("vertex {i} is not finite"));
        }
        let n = self.vertices.len() as u32;
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&j| j >= n) {
                return Err(format!("triangle {i} has an index out of range"));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(format!("triangle {i} repeats a vertex"));
            }
        }
        Ok(())
    }

    /// Undirected edges with their incidence counts, in first-seen order.
    fn edge_counts(&self) -> Vec<((u32, u32), usize)> {
        let mut index: HashMap<(u32, u32), usize> = HashMap::new();
        let mut out: Vec<((u32, u32), usize)> = Vec::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                match index.get(&key) {
                    Some(&i) => out[i].1 += 1,
                    None => {
                        index.insert(key, out.len());
                        out.push((key, 1));
                    }
                }
            }
        }
        out
    }

    /// Edges used by exactly one triangle.
    pub fn boundary_edge_count(&self) -> usize {
        self.edge_counts().iter().filter(|(_, c)| *c == 1).count()
    }

    /// Edges used by more than two triangles.
    pub fn non_manifold_edge_count(&self) -> usize {
        self.edge_counts().iter().filter(|(_, c)| *c > 2).count()
    }

    /// `V − E + F` over vertices referenced by at least one triangle.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|u| **u).count() as i64;
        v - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }

    /// Signed enclosed volume; positive when triangles wind counter-clockwise
    /// seen from outside.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn write_ply(&self, w: &mut impl Write, format: PlyFormat) -> std::io::Result<()> {
        write_ply_impl(w, self, None, format)
    }

    /// PLY with an RGB color per vertex.
    pub fn write_colored_ply(&self, w: &mut impl Write, colors: &[[u8; 3]], format: PlyFormat) -> std::io::Result<()> {
        assert_eq!(colors.len(), self.vertices.len(), "one color per vertex");
        write_ply_impl(w, self, Some(colors), format)
    }

    pub fn save_ply(&self, path: &Path, format: PlyFormat) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_ply(&mut w, format)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load_ply(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        read_ply(&mut BufReader::new(f)).map_err(|m| Error::format(path, m))
    }

    /// Binary STL with per-facet normals.
    pub fn write_stl(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut header = [0u8; 80];
        let tag = b"depthfuse binary stl";
        header[..tag.len()].copy_from_slice(tag);
        w.write_all(&header)?;
        w.write_all(&(self.triangles.len() as u32).to_le_bytes())?;
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| self.vertices[i as usize]);
            let n = (b - a).cross(&(c - a));
            let n = if n.norm() > 0.0 { n.normalize() } else { n };
            for p in [n, a, b, c] {
                for k in 0..3 {
                    w.write_all(&(p[k] as f32).to_le_bytes())?;
                }
            }
            w.write_all(&[0, 0])?;
        }
        Ok(())
    }

    pub fn save_stl(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_stl(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

fn write_ply_impl(
    w: &mut impl Write,
    mesh: &TriangleMesh,
    colors: Option<&[[u8; 3]]>,
    format: PlyFormat,
) -> std::io::Result<()> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {fmt} 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    if colors.is_some() {
        writeln!(w, "property uchar red")?;
        writeln!(w, "property uchar green")?;
        writeln!(w, "property uchar blue")?;
    }
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    match format {
        PlyFormat::Ascii => {
            for (i, v) in mesh.vertices.iter().enumerate() {
                write!(w, "{} {} {}", v.x, v.y, v.z)?;
                if let Some(c) = colors {
                    write!(w, " {} {} {}", c[i][0], c[i][1], c[i][2])?;
                }
                writeln!(w)?;
            }
            for t in &mesh.triangles {
                writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for (i, v) in mesh.vertices.iter().enumerate() {
                for k in 0..3 {
                    w.write_all(&v[k].to_le_bytes())?;
                }
                if let Some(c) = colors {
                    w.write_all(&c[i])?;
                }
            }
            for t in &mesh.triangles {
                w.write_all(&[3])?;
                for &i in t {
                    w.write_all(&(i as i32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
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
    fn parse(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(format!("unknown property type {other:?}")),
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

    fn read(self, r: &mut impl Read, big: bool) -> std::result::Result<f64, String> {
        let mut buf = [0u8; 8];
        let n = self.size();
        r.read_exact(&mut buf[..n]).map_err(|e| format!("truncated body: {e}"))?;
        if big {
            buf[..n].reverse();
        }
        let b = &buf;
        Ok(match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(*b),
        })
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Parses ASCII and binary PLY. Polygons with more than three corners are
/// fan-triangulated.
pub fn read_ply(r: &mut impl BufRead) -> std::result::Result<TriangleMesh, String> {
    let mut line = String::new();
    let mut next_line = |r: &mut dyn BufRead| -> std::result::Result<String, String> {
        line.clear();
        let n = r.read_line(&mut line).map_err(|e| e.to_string())?;
        if n == 0 {
            return Err("unexpected end of header".into());
        }
        Ok(line.trim().to_string())
    };
    if next_line(r)? != "ply" {
        return Err("missing ply magic".into());
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let l = next_line(r)?;
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["format", f, _] => format = Some(f.to_string()),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| format!("bad element count {count:?}"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => elements
                .last_mut()
                .ok_or("property before element")?
                .props
                .push(Property::List(name.to_string(), Scalar::parse(ct)?, Scalar::parse(it)?)),
            ["property", t, name] => elements
                .last_mut()
                .ok_or("property before element")?
                .props
                .push(Property::Scalar(name.to_string(), Scalar::parse(t)?)),
            ["end_header"] => break,
            _ => return Err(format!("unrecognized header line {l:?}")),
        }
    }
    let format = format.ok_or("missing format line")?;
    let (ascii, big) = match format.as_str() {
        "ascii" => (true, false),
        "binary_little_endian" => (false, false),
        "binary_big_endian" => (false, true),
        f => return Err(format!("unsupported format {f:?}")),
    };

    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    if ascii {
        let mut rest = String::new();
        r.read_to_string(&mut rest).map_err(|e| e.to_string())?;
        tokens = rest.split_whitespace().map(str::to_string).collect();
    }
    let mut cursor = 0usize;
    let mut next_value = |r: &mut dyn BufRead, t: Scalar| -> std::result::Result<f64, String> {
        if ascii {
            let s = tokens.get(cursor).ok_or("truncated body")?;
            cursor += 1;
            s.parse::<f64>().map_err(|_| format!("bad number {s:?}"))
        } else {
            let mut rr = r;
            t.read(&mut rr, big)
        }
    };

    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [None; 3];
            let mut face: Vec<u32> = Vec::new();
            for p in &el.props {
                match p {
                    Property::Scalar(name, t) => {
                        let v = next_value(r, *t)?;
                        match name.as_str() {
                            "x" => xyz[0] = Some(v),
                            "y" => xyz[1] = Some(v),
                            "z" => xyz[2] = Some(v),
                            _ => {}
                        }
                    }
                    Property::List(name, ct, it) => {
                        let n = next_value(r, *ct)?;
                        if !(n >= 0.0 && n.fract() == 0.0) {
                            return Err("bad list length".into());
                        }
                        let is_face = matches!(name.as_str(), "vertex_indices" | "vertex_index");
                        for _ in 0..n as usize {
                            let v = next_value(r, *it)?;
                            if is_face {
                                if !(v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64) {
                                    return Err(format!("bad vertex index {v}"));
                                }
                                face.push(v as u32);
                            }
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    let [Some(x), Some(y), Some(z)] = xyz else {
                        return Err("vertex without x, y, z".into());
                    };
                    vertices.push(Point3::new(x, y, z));
                }
                "face" => {
                    if face.len() < 3 {
                        return Err("face with fewer than 3 vertices".into());
                    }
                    for k in 1..face.len() - 1 {
                        triangles.push([face[0], face[k], face[k + 1]]);
                    }
                }
                _ => {}
            }
        }
    }
    let mesh = TriangleMesh { vertices, triangles };
    mesh.validate()?;
    Ok(mesh)
}

/// Blue to red ramp over `[0, max]`.
pub fn heat_color(value: f64, max: f64) -> [u8; 3] {
    let t = if max > 0.0 { (value / max).clamp(0.0, 1.0) } else { 0.0 };
    let r = (255.0 * t).round() as u8;
    let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    [r, g, b]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn validation() {
        assert!(TriangleMesh::new(vec![Point3::zeros(); 3], vec![[0, 1, 3]]).is_err());
        assert!(TriangleMesh::new(vec![Point3::zeros(); 3], vec![[0, 1, 1]]).is_err());
        assert!(TriangleMesh::new(vec![Point3::new(f64::NAN, 0.0, 0.0)], vec![]).is_err());
    }

    #[test]
    fn tetra_topology() {
        let t = tetra();
        assert_eq!(t.euler_characteristic(), 2);
        assert_eq!(t.boundary_edge_count(), 0);
        assert_eq!(t.non_manifold_edge_count(), 0);
        assert!((t.signed_volume() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ply_round_trips() {
        let mut m = tetra();
        m.vertices[1].x = 0.1 + 0.2;
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let mut bytes = Vec::new();
            m.write_ply(&mut bytes, fmt).unwrap();
            let back = read_ply(&mut bytes.as_slice()).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn reads_foreign_ply() {
        let text = "ply\nformat ascii 1.0\ncomment made elsewhere\nelement vertex 4\n\
                    property float x\nproperty float y\nproperty float z\nproperty uchar red\n\
                    element face 1\nproperty list uchar uint vertex_index\nend_header\n\
                    0 0 0 1\n1 0 0 2\n1 1 0 3\n0 1 0 4\n4 0 1 2 3\n";
        let m = read_ply(&mut text.as_bytes()).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);

        let mut big = b"ply\nformat binary_big_endian 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        for v in [[0f32, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]] {
            for c in v {
                big.extend_from_slice(&c.to_be_bytes());
            }
        }
        big.push(3);
        for i in [0i32, 1, 2] {
            big.extend_from_slice(&i.to_be_bytes());
        }
        let m = read_ply(&mut big.as_slice()).unwrap();
        assert_eq!(m.vertices[2], Point3::new(0.0, 2.0, 0.0));
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn rejects_malformed_ply() {
        assert!(read_ply(&mut "plx\n".as_bytes()).is_err());
        let bad = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        assert!(read_ply(&mut bad.as_bytes()).is_err());
        let oob = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n3 0 1 2\n";
        assert!(read_ply(&mut oob.as_bytes()).is_err());
    }

    #[test]
    fn stl_layout() {
        let t = tetra();
        let mut bytes = Vec::new();
        t.write_stl(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 84 + 50 * 4);
        assert_eq!(u32::from_le_bytes(bytes[80..84].try_into().unwrap()), 4);
    }

    #[test]
    fn colored_ply_has_color_properties() {
        let t = tetra();
        let colors: Vec<[u8; 3]> = (0..4).map(|i| heat_color(i as f64, 3.0)).collect();
        let mut bytes = Vec::new();
        t.write_colored_ply(&mut bytes, &colors, PlyFormat::Ascii).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("property uchar red"));
        assert_eq!(read_ply(&mut bytes.as_slice()).unwrap(), t);
        assert_eq!(heat_color(0.0, 1.0), [0, 0, 255]);
        assert_eq!(heat_color(1.0, 1.0), [255, 0, 0]);
    }
}
