//! STL triangle meshes: ASCII and binary readers and writers.

use std::collections::HashMap;

use crate::error::GeometryError;
use crate::math::Vect;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vect>,
    pub triangles: Vec<[usize; 3]>,
    pub normals: Vec<Vect>,
}

/// A parsed mesh and the number of zero-area facets that were dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct StlMesh {
    pub mesh: TriangleMesh,
    pub dropped: usize,
}

impl TriangleMesh {
    /// Builds a mesh from facet corner triples, merging bit-identical vertices
    /// and dropping degenerate facets.
    pub fn from_facets(facets: &[[Vect; 3]]) -> StlMesh {
        let mut mesh = TriangleMesh::default();
        let mut index: HashMap<[u64; 3], usize> = HashMap::new();
        let mut dropped = 0;
        for corners in facets {
            let n = (corners[1] - corners[0]).cross(&(corners[2] - corners[0]));
            let scale = (corners[1] - corners[0]).norm_squared().max((corners[2] - corners[0]).norm_squared());
            if !(n.norm() > 1e-12 * scale) {
                dropped += 1;
                continue;
            }
            let mut tri = [0; 3];
            for (slot, v) in tri.iter_mut().zip(corners) {
                let key = [v.x.to_bits(), v.y.to_bits(), v.z.to_bits()];
                *slot = *index.entry(key).or_insert_with(|| {
                    mesh.vertices.push(*v);
                    mesh.vertices.len() - 1
                });
            }
            mesh.triangles.push(tri);
            mesh.normals.push(n.normalize());
        }
        StlMesh { mesh, dropped }
    }

    pub fn corners(&self, t: usize) -> [Vect; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn bounding_box(&self) -> (Vect, Vect) {
        let mut lo = Vect::repeat(f64::INFINITY);
        let mut hi = Vect::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Every undirected edge is shared by exactly two facets.
    pub fn is_watertight(&self) -> bool {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        !count.is_empty() && count.values().all(|&c| c == 2)
    }

    /// Enclosed volume by the divergence theorem (outward-oriented facets).
    pub fn volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Axis-aligned box with outward-facing facets.
    pub fn cuboid(lower: Vect, upper: Vect) -> TriangleMesh {
        let p = |i: usize| {
            Vect::new(
                if i & 1 == 0 { lower.x } else { upper.x },
                if i & 2 == 0 { lower.y } else { upper.y },
                if i & 4 == 0 { lower.z } else { upper.z },
            )
        };
        let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
        let mut facets = Vec::new();
        for q in quads {
            facets.push([p(q[0]), p(q[1]), p(q[2])]);
            facets.push([p(q[0]), p(q[2]), p(q[3])]);
        }
        TriangleMesh::from_facets(&facets).mesh
    }

    /// Icosahedron refined `levels` times, vertices projected to the sphere.
    pub fn icosphere(center: Vect, radius: f64, levels: usize) -> TriangleMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vect> = [
            (-1.0, t, 0.0), (1.0, t, 0.0), (-1.0, -t, 0.0), (1.0, -t, 0.0),
            (0.0, -1.0, t), (0.0, 1.0, t), (0.0, -1.0, -t), (0.0, 1.0, -t),
            (t, 0.0, -1.0), (t, 0.0, 1.0), (-t, 0.0, -1.0), (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vect::new(x, y, z).normalize())
        .collect();
        let mut tris: Vec<[usize; 3]> = vec![
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ];
        for _ in 0..levels {
            let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
            let mut next = Vec::with_capacity(tris.len() * 4);
            let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vect>| {
                *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    verts.push((verts[a] + verts[b]).normalize());
                    verts.len() - 1
                })
            };
            for [a, b, c] in tris {
                let ab = midpoint(a, b, &mut verts);
                let bc = midpoint(b, c, &mut verts);
                let ca = midpoint(c, a, &mut verts);
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            tris = next;
        }
        let facets: Vec<[Vect; 3]> = tris
            .iter()
            .map(|t| t.map(|i| center + verts[i] * radius))
            .collect();
        TriangleMesh::from_facets(&facets).mesh
    }

    pub fn to_ascii(&self, name: &str) -> String {
        let mut out = format!("solid {name}\n");
        for (t, n) in self.normals.iter().enumerate() {
            out += &format!("  facet normal {:e} {:e} {:e}\n    outer loop\n", n.x, n.y, n.z);
            for v in self.corners(t) {
                out += &format!("      vertex {:e} {:e} {:e}\n", v.x, v.y, v.z);
            }
            out += "    endloop\n  endfacet\n";
        }
        out + &format!("endsolid {name}\n")
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = vec![0u8; 80];
        out.extend((self.triangles.len() as u32).to_le_bytes());
        for (t, n) in self.normals.iter().enumerate() {
            for v in std::iter::once(*n).chain(self.corners(t)) {
                for c in [v.x, v.y, v.z] {
                    out.extend((c as f32).to_le_bytes());
                }
            }
            out.extend([0u8, 0u8]);
        }
        out
    }
}

/// Reads an ASCII or binary STL stream. Binary files are recognized by their
/// exact length `84 + 50 n`; anything else starting with `solid` is ASCII.
pub fn parse_stl(bytes: &[u8]) -> Result<StlMesh, GeometryError> {
    if bytes.len() >= 84 {
        let declared = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
        if bytes.len() == 84 + 50 * declared {
            return parse_binary(bytes, declared);
        }
    }
    let trimmed = bytes.iter().position(|b| !b.is_ascii_whitespace()).unwrap_or(bytes.len());
    if bytes[trimmed..].starts_with(b"solid") {
        return parse_ascii(bytes);
    }
    if bytes.len() >= 84 {
        let declared = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
        return Err(GeometryError::FacetCount { expected: declared, found: (bytes.len() - 84) / 50 });
    }
    Err(GeometryError::Stl { offset: 0, message: "stream is neither ASCII nor binary STL".into() })
}

fn parse_binary(bytes: &[u8], count: usize) -> Result<StlMesh, GeometryError> {
    let mut facets = Vec::with_capacity(count);
    for f in 0..count {
        let base = 84 + 50 * f;
        let mut corners = [Vect::zeros(); 3];
        for (k, corner) in corners.iter_mut().enumerate() {
            for a in 0..3 {
                let off = base + 12 + 12 * k + 4 * a;
                let c = f32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]);
                if !c.is_finite() {
                    return Err(GeometryError::Stl { offset: off, message: "non-finite coordinate".into() });
                }
                corner[a] = c as f64;
            }
        }
        facets.push(corners);
    }
    Ok(TriangleMesh::from_facets(&facets))
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok().map(|s| (start, s))
    }

    fn skip_line(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
            self.pos += 1;
        }
    }

    fn expect(&mut self, word: &str) -> Result<(), GeometryError> {
        match self.next() {
            Some((_, w)) if w.eq_ignore_ascii_case(word) => Ok(()),
            Some((off, w)) => Err(GeometryError::Stl { offset: off, message: format!("expected `{word}`, found `{w}`") }),
            None => Err(self.eof(word)),
        }
    }

    fn number(&mut self) -> Result<f64, GeometryError> {
        let (off, w) = self.next().ok_or_else(|| self.eof("a number"))?;
        match w.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(GeometryError::Stl { offset: off, message: format!("invalid coordinate `{w}`") }),
        }
    }

    fn eof(&self, wanted: &str) -> GeometryError {
        GeometryError::Stl { offset: self.bytes.len(), message: format!("unexpected end of stream, expected {wanted}") }
    }
}

fn parse_ascii(bytes: &[u8]) -> Result<StlMesh, GeometryError> {
    let mut tok = Tokens { bytes, pos: 0 };
    tok.expect("solid")?;
    tok.skip_line();
    let mut facets = Vec::new();
    loop {
        match tok.next() {
            Some((_, w)) if w.eq_ignore_ascii_case("endsolid") => break,
            Some((_, w)) if w.eq_ignore_ascii_case("facet") => {
                tok.expect("normal")?;
                for _ in 0..3 {
                    tok.number()?;
                }
                tok.expect("outer")?;
                tok.expect("loop")?;
                let mut corners = [Vect::zeros(); 3];
                for c in &mut corners {
                    tok.expect("vertex")?;
                    *c = Vect::new(tok.number()?, tok.number()?, tok.number()?);
                }
                tok.expect("endloop")?;
                tok.expect("endfacet")?;
                facets.push(corners);
            }
            Some((off, w)) => {
                return Err(GeometryError::Stl { offset: off, message: format!("expected `facet` or `endsolid`, found `{w}`") })
            }
            None => return Err(tok.eof("`facet` or `endsolid`")),
        }
    }
    Ok(TriangleMesh::from_facets(&facets))
}
