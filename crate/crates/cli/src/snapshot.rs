//! Serialized triangulation: the input mesh, the live bisector ids and the
//! view that produced them.

use std::io::Cursor;
use std::sync::Arc;

use cbt_tess::bisector::{bisector_vertices, Triangle};
use cbt_tess::lod::project_planet;
use cbt_tess::{Camera, HalfedgeMesh, HeapId, Lod, LodConfig, RootLayout, TriangulationState};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    /// The polygon mesh as OBJ. Faces are written in halfedge order, so
    /// reloading reproduces the halfedge indices the ids refer to.
    pub mesh_obj: String,
    pub cbt_depth: u32,
    pub ids: Vec<u64>,
    pub camera: Option<Camera>,
    pub lod: Option<LodConfig>,
}

impl Snapshot {
    pub fn capture(state: &TriangulationState, camera: Option<Camera>, lod: Option<LodConfig>) -> Self {
        Self {
            mesh_obj: state.mesh().to_obj(),
            cbt_depth: state.cbt().depth(),
            ids: state.live_ids().into_iter().map(HeapId::get).collect(),
            camera,
            lod,
        }
    }

    pub fn mesh(&self) -> anyhow::Result<HalfedgeMesh> {
        Ok(HalfedgeMesh::load_obj(Cursor::new(self.mesh_obj.as_bytes()))?)
    }

    /// Decoded triangles, projected onto the planet when the snapshot was
    /// taken in planet mode.
    pub fn triangles(&self, mesh: &Arc<HalfedgeMesh>) -> anyhow::Result<Vec<Triangle>> {
        let layout = RootLayout::new(mesh.halfedge_count() as u32);
        let planet = self.lod.filter(|c| c.planet_mode).map(|c| c.planet_radius);
        self.ids
            .iter()
            .map(|&raw| {
                let id = HeapId::new(raw).filter(|id| layout.is_valid(*id));
                let id = id.ok_or_else(|| anyhow::anyhow!("bisector id {raw} does not belong to this mesh"))?;
                let t = bisector_vertices(mesh, &layout, id);
                Ok(match planet {
                    Some(r) => t.map(|p| project_planet(r, p).unwrap_or(p)),
                    None => t,
                })
            })
            .collect()
    }

    pub fn lod_for(&self, mesh: &Arc<HalfedgeMesh>) -> Option<Lod> {
        Some(Lod::new(self.lod?, self.camera?, mesh.clone()))
    }
}
