//! Binary little-endian PLY in the reference Gaussian-splatting layout.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{normalize_quat, sigmoid, Gaussian, GaussianScene, MAX_SH_COEFFS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, ScalarType)>,
}

impl Element {
    fn stride(&self) -> usize {
        self.props.iter().map(|(_, t)| t.size()).sum()
    }

    fn offset_of(&self, name: &str) -> Option<(usize, ScalarType)> {
        let mut off = 0;
        for (n, t) in &self.props {
            if n == name {
                return Some((off, *t));
            }
            off += t.size();
        }
        None
    }
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Vec<Element>> {
    let mut line = String::new();
    let mut next_line = |r: &mut R| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::format("unexpected end of PLY header"));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };
    if next_line(r)? != "ply" {
        return Err(Error::format("missing `ply` magic"));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    loop {
        let l = next_line(r)?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", _] => saw_format = true,
            ["format", other, _] => return Err(Error::format(format!("unsupported PLY format `{other}`"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::format(format!("bad element count `{count}`")))?,
                props: Vec::new(),
            }),
            ["property", "list", ..] => {
                let el = elements.last().ok_or_else(|| Error::format("property before element"))?;
                return Err(Error::format(format!("list properties are not supported (element `{}`)", el.name)));
            }
            ["property", ty, name] => {
                let ty = ScalarType::parse(ty).ok_or_else(|| Error::format(format!("unknown property type `{ty}`")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::format("property before element"))?
                    .props
                    .push((name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => return Err(Error::format(format!("unrecognized header line `{l}`"))),
        }
    }
    if !saw_format {
        return Err(Error::format("missing format line"));
    }
    Ok(elements)
}

/// Parses a scene from PLY bytes.
pub fn read_scene<R: Read>(reader: R) -> Result<GaussianScene> {
    let mut r = BufReader::new(reader);
    let elements = read_header(&mut r)?;
    let vi = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::format("no `vertex` element"))?;
    // Skip fixed-size elements that precede the vertices.
    for e in &elements[..vi] {
        let mut skip = vec![0u8; e.stride() * e.count];
        r.read_exact(&mut skip).map_err(|_| Error::format("truncated PLY body"))?;
    }
    let vertex = &elements[vi];

    let need = |name: &str| {
        vertex
            .offset_of(name)
            .ok_or_else(|| Error::format(format!("missing required property `{name}`")))
    };
    let pos = [need("x")?, need("y")?, need("z")?];
    let scale = [need("scale_0")?, need("scale_1")?, need("scale_2")?];
    let rot = [need("rot_0")?, need("rot_1")?, need("rot_2")?, need("rot_3")?];
    let opacity = need("opacity")?;
    let dc = [need("f_dc_0")?, need("f_dc_1")?, need("f_dc_2")?];
    let mut rest = Vec::new();
    while let Some(off) = vertex.offset_of(&format!("f_rest_{}", rest.len())) {
        rest.push(off);
    }
    let sh_degree = match rest.len() {
        0 => 0,
        9 => 1,
        24 => 2,
        45 => 3,
        n => return Err(Error::format(format!("{n} f_rest properties do not match an SH degree"))),
    };
    if vertex.count == 0 {
        return Err(Error::EmptyScene);
    }
    let per_channel = rest.len() / 3;

    let stride = vertex.stride();
    let mut body = vec![0u8; stride * vertex.count];
    r.read_exact(&mut body).map_err(|_| Error::format("truncated PLY body"))?;

    let gaussians = body
        .chunks_exact(stride)
        .map(|rec| {
            let get = |(off, ty): (usize, ScalarType)| ty.read(&rec[off..]);
            let mut sh = [[0.0f32; 3]; MAX_SH_COEFFS];
            for c in 0..3 {
                sh[0][c] = get(dc[c]) as f32;
                for k in 0..per_channel {
                    sh[k + 1][c] = get(rest[c * per_channel + k]) as f32;
                }
            }
            Gaussian::from_stored(
                pos.map(|p| get(p) as f32),
                scale.map(|s| get(s) as f32),
                rot.map(|q| get(q) as f32),
                get(opacity) as f32,
                sh,
            )
        })
        .collect();
    Ok(GaussianScene::new(gaussians, sh_degree))
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<GaussianScene> {
    read_scene(std::fs::File::open(path)?)
}

/// Finds an f32 `x` with `f(x)` rounding back to `target`, searching a few
/// ULPs around `guess`; falls back to the closest candidate.
fn preimage(guess: f64, target: f32, f: impl Fn(f64) -> f64) -> f32 {
    let mut x = (guess as f32).clamp(-1e30, 1e30);
    for _ in 0..4 {
        x = x.next_down();
    }
    let mut best = (f64::INFINITY, guess as f32);
    for _ in 0..9 {
        let y = f(x as f64) as f32;
        if y == target {
            return x;
        }
        let err = (y as f64 - target as f64).abs();
        if err < best.0 {
            best = (err, x);
        }
        x = x.next_up();
    }
    best.1
}

fn stored_log_scale(s: f32) -> f32 {
    preimage((s as f64).ln(), s, f64::exp)
}

fn stored_logit(o: f32) -> f32 {
    let o64 = (o as f64).clamp(1e-12, 1.0 - 1e-12);
    preimage((o64 / (1.0 - o64)).ln(), o, sigmoid)
}

/// Writes a scene; opacities are stored as logits and scales as logs.
pub fn write_scene<W: Write>(writer: W, scene: &GaussianScene) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let per_channel = super::sh::coeff_count(scene.sh_degree()) - 1;
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header += &format!("element vertex {}\n", scene.len());
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..3 * per_channel).map(|k| format!("f_rest_{k}")));
    names.push("opacity".into());
    names.extend((0..3).map(|k| format!("scale_{k}")));
    names.extend((0..4).map(|k| format!("rot_{k}")));
    for n in &names {
        header += &format!("property float {n}\n");
    }
    header += "end_header\n";
    w.write_all(header.as_bytes())?;

    let mut rec: Vec<f32> = Vec::with_capacity(names.len());
    for g in scene.gaussians() {
        rec.clear();
        rec.extend_from_slice(&g.position);
        rec.extend_from_slice(&[0.0, 0.0, 0.0]);
        rec.extend_from_slice(&g.sh[0]);
        for c in 0..3 {
            rec.extend((0..per_channel).map(|k| g.sh[k + 1][c]));
        }
        rec.push(stored_logit(g.opacity));
        rec.extend(g.scale.map(stored_log_scale));
        rec.extend_from_slice(&normalize_quat(g.rotation));
        for v in &rec {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_scene(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<()> {
    write_scene(std::fs::File::create(path)?, scene)
}
