//! OBJ and SVG output of a triangulation.

use std::collections::HashMap;
use std::fmt::Write as _;

use glam::DVec3;

use crate::bisector::Triangle;
use crate::lod::Camera;

/// Quantization step used when welding vertices.
pub const WELD_EPS: f64 = 1e-7;

/// Triangle soup as OBJ text. With `weld`, vertices closer than
/// [`WELD_EPS`] on every axis share one index.
pub fn to_obj(triangles: &[Triangle], weld: bool) -> String {
    let mut out = String::new();
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut verts: Vec<DVec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::with_capacity(triangles.len());
    for t in triangles {
        let mut f = [0; 3];
        for (k, p) in t.iter().enumerate() {
            f[k] = if weld {
                let key = p.to_array().map(|c| (c / WELD_EPS).round() as i64);
                *index.entry(key).or_insert_with(|| {
                    verts.push(*p);
                    verts.len() - 1
                })
            } else {
                verts.push(*p);
                verts.len() - 1
            };
        }
        faces.push(f);
    }
    for v in &verts {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for [a, b, c] in faces {
        let _ = writeln!(out, "f {} {} {}", a + 1, b + 1, c + 1);
    }
    out
}

/// Wireframe under `camera`, one polyline per triangle. `keep` filters
/// triangles, e.g. to drop culled ones.
pub fn to_svg<F>(triangles: &[Triangle], camera: &Camera, keep: F) -> String
where
    F: Fn(&Triangle) -> bool,
{
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = camera.width,
        h = camera.height
    );
    let _ = writeln!(out, r#"<g fill="none" stroke="black" stroke-width="0.5">"#);
    for t in triangles.iter().filter(|t| keep(t)) {
        let [a, b, c] = t.map(|p| camera.project(p));
        let _ = writeln!(
            out,
            r#"<polyline points="{:.3},{:.3} {:.3},{:.3} {:.3},{:.3} {:.3},{:.3}"/>"#,
            a.x, a.y, b.x, b.y, c.x, c.y, a.x, a.y
        );
    }
    out.push_str("</g>\n</svg>\n");
    out
}
