use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DgContext, QuadratureTable};
use crate::error::{PyrError, Result};
use crate::mesh::{connect_faces, FaceKind, PyramidMesh};
use crate::refelem::{num_basis, OperatorSet};

/// Bumped whenever the cached layout changes; older files are rebuilt.
pub const CACHE_FORMAT_VERSION: u32 = 1;

/// Reference operators and per-element geometry of a `DgContext` with the minimal
/// volume rule, keyed by mesh hash and order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryCache {
    pub version: u32,
    pub mesh_hash: String,
    pub order: usize,
    pub ops: OperatorSet,
    pub wj: Vec<f64>,
    pub metric: Vec<[f64; 9]>,
    pub normals: Vec<[f64; 3]>,
    pub wsj: Vec<f64>,
    pub mass: Vec<f64>,
    pub x_vol: Vec<[f64; 3]>,
    pub x_surf: Vec<[f64; 3]>,
    pub ext: Vec<usize>,
    pub point_kind: Vec<FaceKind>,
    pub elem_h: Vec<f64>,
    pub quad: QuadratureTable,
}

/// How [`DgContext::load_or_build`] obtained its data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    /// Read from a matching cache file.
    Hit,
    /// No cache file existed; built and written.
    Built,
    /// A cache file existed for another mesh, order or version, or was unreadable;
    /// rebuilt and overwritten.
    Rebuilt,
}

/// Default cache file name for a mesh hash and order.
pub fn cache_file_name(mesh_hash: &str, n: usize) -> String {
    let short = &mesh_hash[..mesh_hash.len().min(16)];
    format!("pyrdg-geometry-{short}-N{n}.json")
}

impl GeometryCache {
    pub fn from_context(ctx: &DgContext) -> Self {
        Self {
            version: CACHE_FORMAT_VERSION,
            mesh_hash: ctx.mesh.hash(),
            order: ctx.order,
            ops: ctx.ops.clone(),
            wj: ctx.wj.clone(),
            metric: ctx.metric.clone(),
            normals: ctx.normals.clone(),
            wsj: ctx.wsj.clone(),
            mass: ctx.mass.clone(),
            x_vol: ctx.x_vol.clone(),
            x_surf: ctx.x_surf.clone(),
            ext: ctx.ext.clone(),
            point_kind: ctx.point_kind.clone(),
            elem_h: ctx.elem_h.clone(),
            quad: ctx.quad.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| PyrError::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PyrError::Serialization(e.to_string()))
    }

    fn matches(&self, mesh_hash: &str, n: usize) -> bool {
        self.version == CACHE_FORMAT_VERSION && self.mesh_hash == mesh_hash && self.order == n
    }

    /// Rebuilds a context for `mesh`, checking array sizes against the mesh.
    pub fn into_context(self, mut mesh: PyramidMesh) -> Result<DgContext> {
        let n = self.order;
        if mesh.hash() != self.mesh_hash {
            return Err(PyrError::ShapeMismatch("cache belongs to a different mesh".into()));
        }
        if mesh.order != n {
            mesh.faces = connect_faces(&mesh, n)?;
            mesh.order = n;
        }
        let k = mesh.num_elements();
        let np = num_basis(n);
        let nc = self.ops.v.nrows();
        let nfc = self.ops.vf.nrows();
        let consistent = self.ops.v.ncols() == np
            && self.wj.len() == k * nc
            && self.metric.len() == k * nc
            && self.x_vol.len() == k * nc
            && self.normals.len() == k * nfc
            && self.wsj.len() == k * nfc
            && self.x_surf.len() == k * nfc
            && self.ext.len() == k * nfc
            && self.point_kind.len() == k * nfc
            && self.mass.len() == k * np
            && self.elem_h.len() == k
            && self.quad.wj.len() == k * self.quad.npts;
        if !consistent {
            return Err(PyrError::ShapeMismatch("cache arrays do not match the mesh".into()));
        }
        let inv_mass = self.mass.iter().map(|m| 1.0 / m).collect();
        let per_face = nfc / 5;
        Ok(DgContext::assemble(
            n,
            mesh,
            self.ops,
            np,
            nc,
            nfc,
            per_face,
            self.wj,
            self.metric,
            self.normals,
            self.wsj,
            self.mass,
            inv_mass,
            self.x_vol,
            self.x_surf,
            self.ext,
            self.point_kind,
            self.elem_h,
            self.quad,
        ))
    }
}

pub(super) fn load_or_build(mesh: PyramidMesh, n: usize, path: &Path) -> Result<(DgContext, CacheStatus)> {
    let hash = mesh.hash();
    let existed = path.exists();
    if existed {
        let loaded = fs::read_to_string(path)
            .map_err(|e| PyrError::Serialization(e.to_string()))
            .and_then(|text| GeometryCache::from_json(&text));
        if let Ok(cache) = loaded {
            if cache.matches(&hash, n) {
                if let Ok(ctx) = cache.into_context(mesh.clone()) {
                    return Ok((ctx, CacheStatus::Hit));
                }
            }
        }
    }
    let ctx = DgContext::new(mesh, n)?;
    let text = GeometryCache::from_context(&ctx).to_json()?;
    fs::write(path, text).map_err(|e| PyrError::Serialization(format!("{}: {e}", path.display())))?;
    let status = if existed { CacheStatus::Rebuilt } else { CacheStatus::Built };
    Ok((ctx, status))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dg::{advection_rhs, Advection};
    use crate::mesh::build_mesh;

    fn temp_path(tag: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("pyrdg-cache-test-{}-{tag}.json", std::process::id()))
    }

    #[test]
    fn round_trip_reproduces_context() {
        let mesh = build_mesh(2, 2, 0.1, 9, true).unwrap();
        let path = temp_path("rt");
        let _ = fs::remove_file(&path);
        let (built, s1) = DgContext::load_or_build(mesh.clone(), 2, &path).unwrap();
        assert_eq!(s1, CacheStatus::Built);
        let (loaded, s2) = DgContext::load_or_build(mesh.clone(), 2, &path).unwrap();
        assert_eq!(s2, CacheStatus::Hit);
        assert_eq!(GeometryCache::from_context(&built), GeometryCache::from_context(&loaded));

        let adv = Advection::constant(&built, [0.3, 1.0, -0.4], 1.0).unwrap();
        let st = built.project(1, |x, o| o[0] = (x[0] + 2.0 * x[1]).sin()).unwrap();
        let st2 = loaded.project(1, |x, o| o[0] = (x[0] + 2.0 * x[1]).sin()).unwrap();
        assert_eq!(advection_rhs(&built, &st, &adv).unwrap(), advection_rhs(&loaded, &st2, &adv).unwrap());

        // a different order or mesh invalidates the file
        let (_, s3) = DgContext::load_or_build(mesh, 1, &path).unwrap();
        assert_eq!(s3, CacheStatus::Rebuilt);
        let other = build_mesh(2, 1, 0.1, 10, true).unwrap();
        let (_, s4) = DgContext::load_or_build(other, 1, &path).unwrap();
        assert_eq!(s4, CacheStatus::Rebuilt);
        fs::remove_file(&path).unwrap();
    }

    #[test]
    fn stale_version_and_garbage_rebuild() {
        let mesh = build_mesh(1, 1, 0.0, 0, false).unwrap();
        let path = temp_path("ver");
        let ctx = DgContext::new(mesh.clone(), 1).unwrap();
        let mut cache = GeometryCache::from_context(&ctx);
        cache.version = CACHE_FORMAT_VERSION + 1;
        fs::write(&path, cache.to_json().unwrap()).unwrap();
        assert_eq!(DgContext::load_or_build(mesh.clone(), 1, &path).unwrap().1, CacheStatus::Rebuilt);
        fs::write(&path, "not json").unwrap();
        assert_eq!(DgContext::load_or_build(mesh.clone(), 1, &path).unwrap().1, CacheStatus::Rebuilt);
        assert_eq!(DgContext::load_or_build(mesh, 1, &path).unwrap().1, CacheStatus::Hit);
        fs::remove_file(&path).unwrap();
    }

    #[test]
    fn file_name_is_keyed() {
        assert_eq!(cache_file_name("0123456789abcdef0123", 3), "pyrdg-geometry-0123456789abcdef-N3.json");
        assert_ne!(cache_file_name("aa", 1), cache_file_name("aa", 2));
    }
}
