//! Pyramid meshes of the cube `[-1, 1]^3`: each of `K1D^3` hexahedra is split into six
//! pyramids sharing the hex center as apex.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PyrError, Result};
use crate::geometry::VertexMappedPyramid;
use crate::refelem::{surface_cubature, NUM_FACES};

/// Version tag written into exported mesh documents.
pub const MESH_FORMAT_VERSION: u32 = 1;

const MAX_RETRIES: usize = 100;
/// Centroid matching tolerance.
pub const MATCH_TOL: f64 = 1e-8;
const CUBE_PERIOD: f64 = 2.0;

/// Default perturbation magnitude `0.1 h` with `h = 2 / K1D`.
pub fn default_delta(k1d: usize) -> f64 {
    0.1 * 2.0 / k1d as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaceKind {
    Interior,
    /// Boundary face coupled to its partner across the periodic cube.
    Periodic,
    FreeSurface,
}

/// One local face of one element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceConnection {
    pub element: usize,
    pub face: usize,
    pub kind: FaceKind,
    /// `(element, local face)` of the partner; `None` on free-surface faces.
    pub neighbor: Option<(usize, usize)>,
    /// `permutation[q]` is the partner's local point coinciding with local point `q`.
    /// Identity on free-surface faces.
    pub permutation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidMesh {
    pub vertices: Vec<[f64; 3]>,
    pub elements: Vec<[usize; 5]>,
    /// Indexed by `5 * element + local face`.
    pub faces: Vec<FaceConnection>,
    pub periodic: bool,
    pub k1d: usize,
    pub seed: u64,
    pub delta: f64,
    /// Order the face permutations were built for.
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshDocument {
    pub version: u32,
    #[serde(rename = "K1D")]
    pub k1d: usize,
    pub delta: f64,
    pub seed: u64,
    pub periodic: bool,
    pub vertices: Vec<[f64; 3]>,
    pub elements: Vec<[usize; 5]>,
}

impl PyramidMesh {
    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element(&self, e: usize) -> VertexMappedPyramid {
        VertexMappedPyramid::new(self.elements[e].map(|v| self.vertices[v]))
    }

    pub fn pyramids(&self) -> Vec<VertexMappedPyramid> {
        (0..self.num_elements()).map(|e| self.element(e)).collect()
    }

    pub fn face(&self, e: usize, f: usize) -> &FaceConnection {
        &self.faces[NUM_FACES * e + f]
    }

    /// Nominal mesh size `2 / K1D`.
    pub fn h(&self) -> f64 {
        CUBE_PERIOD / self.k1d as f64
    }

    pub fn to_document(&self) -> MeshDocument {
        MeshDocument {
            version: MESH_FORMAT_VERSION,
            k1d: self.k1d,
            delta: self.delta,
            seed: self.seed,
            periodic: self.periodic,
            vertices: self.vertices.clone(),
            elements: self.elements.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.to_document())
            .map_err(|e| PyrError::Serialization(e.to_string()))
    }

    /// Rebuilds a mesh from its document; connectivity is recomputed for order `n`.
    pub fn from_document(doc: MeshDocument, n: usize) -> Result<Self> {
        if doc.version != MESH_FORMAT_VERSION {
            return Err(PyrError::Serialization(format!(
                "unsupported mesh format version {} (expected {MESH_FORMAT_VERSION})",
                doc.version
            )));
        }
        if doc.k1d == 0 {
            return Err(PyrError::Serialization("K1D must be at least 1".into()));
        }
        if let Some(bad) = doc.elements.iter().flatten().find(|&&v| v >= doc.vertices.len()) {
            return Err(PyrError::Serialization(format!(
                "element references vertex {bad}, but only {} vertices exist",
                doc.vertices.len()
            )));
        }
        let mut mesh = Self {
            vertices: doc.vertices,
            elements: doc.elements,
            faces: Vec::new(),
            periodic: doc.periodic,
            k1d: doc.k1d,
            seed: doc.seed,
            delta: doc.delta,
            order: n,
        };
        for e in 0..mesh.num_elements() {
            mesh.element(e).validate(n)?;
        }
        mesh.faces = connect_faces(&mesh, n)?;
        Ok(mesh)
    }

    pub fn from_json(text: &str, n: usize) -> Result<Self> {
        let doc: MeshDocument =
            serde_json::from_str(text).map_err(|e| PyrError::Serialization(e.to_string()))?;
        Self::from_document(doc, n)
    }

    /// SHA-256 over the periodic flag, the vertex bit patterns and the element table.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update([self.periodic as u8]);
        h.update((self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for x in v {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        h.update((self.elements.len() as u64).to_le_bytes());
        for el in &self.elements {
            for &v in el {
                h.update((v as u64).to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

struct Grid {
    k: usize,
}

impl Grid {
    fn vertex(&self, i: usize, j: usize, l: usize) -> usize {
        let m = self.k + 1;
        i + m * (j + m * l)
    }

    fn num_grid_vertices(&self) -> usize {
        (self.k + 1).pow(3)
    }

    fn hex(&self, i: usize, j: usize, l: usize) -> usize {
        i + self.k * (j + self.k * l)
    }

    /// Six pyramids of hex `(i, j, l)` as vertex indices, bases on the hex faces.
    fn pyramids(&self, i: usize, j: usize, l: usize) -> [[usize; 5]; 6] {
        let center = self.num_grid_vertices() + self.hex(i, j, l);
        let corner = |d: [usize; 3]| self.vertex(i + d[0], j + d[1], l + d[2]);
        let mut out = [[0; 5]; 6];
        for (slot, (axis, side)) in [(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)].iter().enumerate() {
            let (ua, va) = match axis {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let p = |u: usize, v: usize| {
                let mut d = [0; 3];
                d[*axis] = *side;
                d[ua] = u;
                d[va] = v;
                corner(d)
            };
            // V1..V4 at (u, v) = (0,0), (0,1), (1,0), (1,1); orientation fixed later
            out[slot] = [p(0, 0), p(0, 1), p(1, 0), p(1, 1), center];
        }
        out
    }
}

fn draw_offset(rng: &mut ChaCha8Rng, delta: f64) -> [f64; 3] {
    if delta > 0.0 {
        [
            rng.random_range(-delta..=delta),
            rng.random_range(-delta..=delta),
            rng.random_range(-delta..=delta),
        ]
    } else {
        [0.0; 3]
    }
}

fn check_params(k1d: usize, delta: f64) -> Result<()> {
    if k1d == 0 {
        return Err(PyrError::InvalidParameter("K1D must be at least 1".into()));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(PyrError::InvalidParameter(format!(
            "perturbation magnitude must be finite and nonnegative, got {delta}"
        )));
    }
    if delta >= 0.5 * CUBE_PERIOD / k1d as f64 {
        return Err(PyrError::InvalidParameter(format!(
            "perturbation {delta} is at least half the hex size; elements would fold"
        )));
    }
    Ok(())
}

/// Builds the `6 K1D^3`-element pyramid mesh with seeded vertex perturbation.
pub fn build_mesh(k1d: usize, n: usize, delta: f64, seed: u64, periodic: bool) -> Result<PyramidMesh> {
    check_params(k1d, delta)?;
    crate::error::check_order(n)?;
    let grid = Grid { k: k1d };
    let h = CUBE_PERIOD / k1d as f64;
    let m = k1d + 1;

    // Offsets live on canonical vertices; periodic images share the offset of index mod K1D.
    let canonical = |i: usize, j: usize, l: usize| {
        if periodic {
            grid.vertex(i % k1d, j % k1d, l % k1d)
        } else {
            grid.vertex(i, j, l)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offsets = vec![[0.0; 3]; grid.num_grid_vertices()];
    for l in 0..m {
        for j in 0..m {
            for i in 0..m {
                let v = grid.vertex(i, j, l);
                if canonical(i, j, l) == v {
                    offsets[v] = draw_offset(&mut rng, delta);
                }
            }
        }
    }

    let mut elements = Vec::with_capacity(6 * k1d.pow(3));
    let mut hex_of = Vec::with_capacity(6 * k1d.pow(3));
    for l in 0..k1d {
        for j in 0..k1d {
            for i in 0..k1d {
                for p in grid.pyramids(i, j, l) {
                    elements.push(p);
                    hex_of.push([i, j, l]);
                }
            }
        }
    }

    let place = |offsets: &[[f64; 3]]| -> Vec<[f64; 3]> {
        let mut verts = vec![[0.0; 3]; grid.num_grid_vertices() + k1d.pow(3)];
        for l in 0..m {
            for j in 0..m {
                for i in 0..m {
                    let idx = [i, j, l];
                    let off = offsets[canonical(i, j, l)];
                    let v = &mut verts[grid.vertex(i, j, l)];
                    for d in 0..3 {
                        let on_boundary = idx[d] == 0 || idx[d] == k1d;
                        let shift = if on_boundary && !periodic { 0.0 } else { off[d] };
                        v[d] = -1.0 + h * idx[d] as f64 + shift;
                    }
                }
            }
        }
        for l in 0..k1d {
            for j in 0..k1d {
                for i in 0..k1d {
                    let mut c = [0.0; 3];
                    for dl in 0..2 {
                        for dj in 0..2 {
                            for di in 0..2 {
                                let p = verts[grid.vertex(i + di, j + dj, l + dl)];
                                for d in 0..3 {
                                    c[d] += p[d] / 8.0;
                                }
                            }
                        }
                    }
                    verts[grid.num_grid_vertices() + grid.hex(i, j, l)] = c;
                }
            }
        }
        verts
    };

    let reference = place(&vec![[0.0; 3]; offsets.len()]);
    for el in elements.iter_mut() {
        let j = VertexMappedPyramid::new(el.map(|v| reference[v])).jacobian_det_collapsed(0.0, 0.0, -1.0)?;
        if j < 0.0 {
            el.swap(1, 2);
        }
    }

    let mut vertices = place(&offsets);
    let mut retries = 0;
    loop {
        let failing: Vec<usize> = elements
            .iter()
            .enumerate()
            .filter(|(_, el)| {
                VertexMappedPyramid::new(el.map(|v| vertices[v])).validate(n).is_err()
            })
            .map(|(e, _)| e)
            .collect();
        if failing.is_empty() {
            break;
        }
        if retries == MAX_RETRIES {
            return Err(PyrError::MeshGeneration(format!(
                "{} elements still invalid after {MAX_RETRIES} redraws; reduce the perturbation",
                failing.len()
            )));
        }
        retries += 1;
        let mut redraw: Vec<usize> = Vec::new();
        for e in failing {
            let [i, j, l] = hex_of[e];
            for (di, dj, dl) in (0..8).map(|c| (c & 1, (c >> 1) & 1, (c >> 2) & 1)) {
                redraw.push(canonical(i + di, j + dj, l + dl));
            }
        }
        redraw.sort_unstable();
        redraw.dedup();
        for v in redraw {
            offsets[v] = draw_offset(&mut rng, delta);
        }
        vertices = place(&offsets);
    }

    let mut mesh = PyramidMesh {
        vertices,
        elements,
        faces: Vec::new(),
        periodic,
        k1d,
        seed,
        delta,
        order: n,
    };
    mesh.faces = connect_faces(&mesh, n)?;
    Ok(mesh)
}

fn face_centroid(mesh: &PyramidMesh, e: usize, f: usize) -> [f64; 3] {
    mesh.element(e).face_centroid(f)
}

struct CentroidIndex {
    cells: HashMap<[i64; 3], Vec<(usize, usize)>>,
    cell: f64,
}

impl CentroidIndex {
    fn key(&self, p: [f64; 3]) -> [i64; 3] {
        p.map(|x| (x / self.cell).floor() as i64)
    }

    fn insert(&mut self, p: [f64; 3], id: (usize, usize)) {
        let k = self.key(p);
        self.cells.entry(k).or_default().push(id);
    }

    fn query(&self, p: [f64; 3], mesh: &PyramidMesh, skip: (usize, usize), out: &mut Vec<(usize, usize)>) {
        out.clear();
        let k = self.key(p);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let cell = [k[0] + dx, k[1] + dy, k[2] + dz];
                    if let Some(ids) = self.cells.get(&cell) {
                        for &id in ids {
                            if id == skip {
                                continue;
                            }
                            let c = face_centroid(mesh, id.0, id.1);
                            if dist(c, p) < MATCH_TOL {
                                out.push(id);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Physical surface cubature points of local face `f` of element `e` for order `n`.
pub fn face_points(mesh: &PyramidMesh, e: usize, f: usize, n: usize) -> Result<Vec<[f64; 3]>> {
    let surf = surface_cubature(n)?;
    face_points_with(mesh, e, f, &surf.points, surf.points_per_face())
}

fn face_points_with(
    mesh: &PyramidMesh,
    e: usize,
    f: usize,
    points: &[[f64; 3]],
    per_face: usize,
) -> Result<Vec<[f64; 3]>> {
    let pyr = mesh.element(e);
    points[f * per_face..(f + 1) * per_face]
        .iter()
        .map(|p| pyr.map_to_physical(p[0], p[1], p[2]))
        .collect()
}

/// Face table with nearest-point permutations between partner faces.
pub fn connect_faces(mesh: &PyramidMesh, n: usize) -> Result<Vec<FaceConnection>> {
    let surf = surface_cubature(n)?;
    let per_face = surf.points_per_face();
    let ne = mesh.num_elements();
    let mut index = CentroidIndex {
        cells: HashMap::new(),
        cell: 1e-6,
    };
    for e in 0..ne {
        for f in 0..NUM_FACES {
            index.insert(face_centroid(mesh, e, f), (e, f));
        }
    }

    let shifts: Vec<[f64; 3]> = (0..3)
        .flat_map(|d| {
            [-CUBE_PERIOD, CUBE_PERIOD].map(|s| {
                let mut v = [0.0; 3];
                v[d] = s;
                v
            })
        })
        .collect();

    let mut faces = Vec::with_capacity(ne * NUM_FACES);
    let mut found = Vec::new();
    for e in 0..ne {
        for f in 0..NUM_FACES {
            let c = face_centroid(mesh, e, f);
            index.query(c, mesh, (e, f), &mut found);
            let (kind, partner, shift) = match found.len() {
                1 => (FaceKind::Interior, Some(found[0]), [0.0; 3]),
                0 => {
                    let mut hit = None;
                    if mesh.periodic {
                        for s in &shifts {
                            let shifted = [c[0] + s[0], c[1] + s[1], c[2] + s[2]];
                            index.query(shifted, mesh, (e, f), &mut found);
                            match found.len() {
                                0 => {}
                                1 if hit.is_none() => hit = Some((found[0], *s)),
                                _ => {
                                    return Err(PyrError::Connectivity(format!(
                                        "face {f} of element {e} has several periodic partners"
                                    )))
                                }
                            }
                        }
                    }
                    match hit {
                        Some((p, s)) => (FaceKind::Periodic, Some(p), s),
                        None if mesh.periodic => {
                            return Err(PyrError::Connectivity(format!(
                                "face {f} of element {e} has no partner on a periodic mesh"
                            )))
                        }
                        None => (FaceKind::FreeSurface, None, [0.0; 3]),
                    }
                }
                _ => {
                    return Err(PyrError::Connectivity(format!(
                        "face {f} of element {e} matches {} faces",
                        found.len()
                    )))
                }
            };

            let permutation = match partner {
                None => (0..per_face).collect(),
                Some((pe, pf)) => {
                    if (f == 0) != (pf == 0) {
                        return Err(PyrError::Connectivity(format!(
                            "face {f} of element {e} pairs a quad with a triangle"
                        )));
                    }
                    let mine = face_points_with(mesh, e, f, &surf.points, per_face)?;
                    let theirs = face_points_with(mesh, pe, pf, &surf.points, per_face)?;
                    match_points(&mine, &theirs, shift).ok_or_else(|| {
                        PyrError::Connectivity(format!(
                            "cubature points of face {f} of element {e} do not coincide with face {pf} of element {pe}"
                        ))
                    })?
                }
            };
            faces.push(FaceConnection {
                element: e,
                face: f,
                kind,
                neighbor: partner,
                permutation,
            });
        }
    }
    Ok(faces)
}

/// Bijective nearest-point matching of `mine + shift` onto `theirs`.
fn match_points(mine: &[[f64; 3]], theirs: &[[f64; 3]], shift: [f64; 3]) -> Option<Vec<usize>> {
    let mut used = vec![false; theirs.len()];
    let mut perm = Vec::with_capacity(mine.len());
    for p in mine {
        let target = [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]];
        let (best, d) = theirs
            .iter()
            .enumerate()
            .map(|(i, q)| (i, dist(*q, target)))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        if d > MATCH_TOL || used[best] {
            return None;
        }
        used[best] = true;
        perm.push(best);
    }
    Some(perm)
}
