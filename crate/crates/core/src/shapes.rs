//! Built-in base meshes.

use glam::DVec3;

use crate::mesh::HalfedgeMesh;

/// Single counter-clockwise triangle in the xy-plane.
pub fn triangle() -> HalfedgeMesh {
    HalfedgeMesh::from_polygons(
        vec![DVec3::ZERO, DVec3::X, DVec3::Y],
        &[vec![0, 1, 2]],
    )
    .expect("triangle is valid")
}

/// `nx` by `ny` grid of unit quads in the xy-plane, counter-clockwise.
pub fn quad_grid(nx: u32, ny: u32) -> HalfedgeMesh {
    assert!(nx > 0 && ny > 0);
    let mut positions = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            positions.push(DVec3::new(i as f64, j as f64, 0.0));
        }
    }
    let at = |i: u32, j: u32| j * (nx + 1) + i;
    let mut faces = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            faces.push(vec![at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    HalfedgeMesh::from_polygons(positions, &faces).expect("grid is valid")
}

/// Regular dodecahedron with circumradius 1, outward-facing pentagons.
pub fn dodecahedron() -> HalfedgeMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let inv = 1.0 / phi;
    let mut verts = Vec::with_capacity(20);
    for &x in &[-1.0, 1.0] {
        for &y in &[-1.0, 1.0] {
            for &z in &[-1.0, 1.0] {
                verts.push(DVec3::new(x, y, z));
            }
        }
    }
    for &a in &[-1.0, 1.0] {
        for &b in &[-1.0, 1.0] {
            verts.push(DVec3::new(0.0, a * inv, b * phi));
            verts.push(DVec3::new(a * inv, b * phi, 0.0));
            verts.push(DVec3::new(a * phi, 0.0, b * inv));
        }
    }
    // face normals are the icosahedron's vertices
    let mut normals = Vec::with_capacity(12);
    for &a in &[-1.0, 1.0] {
        for &b in &[-1.0, 1.0] {
            normals.push(DVec3::new(0.0, a * phi, b));
            normals.push(DVec3::new(a, 0.0, b * phi));
            normals.push(DVec3::new(a * phi, b, 0.0));
        }
    }
    let faces: Vec<Vec<u32>> = normals
        .iter()
        .map(|n| {
            let n = n.normalize();
            let mut idx: Vec<u32> = (0..20).collect();
            idx.sort_by(|&a, &b| n.dot(verts[b as usize]).total_cmp(&n.dot(verts[a as usize])));
            idx.truncate(5);
            let centre = idx.iter().map(|&i| verts[i as usize]).sum::<DVec3>() / 5.0;
            let u = (verts[idx[0] as usize] - centre).normalize();
            let w = n.cross(u);
            idx.sort_by(|&a, &b| {
                let angle = |i: u32| {
                    let d = verts[i as usize] - centre;
                    d.dot(w).atan2(d.dot(u))
                };
                angle(a).total_cmp(&angle(b))
            });
            idx
        })
        .collect();
    let scale = 1.0 / 3f64.sqrt();
    let positions = verts.into_iter().map(|v| v * scale).collect();
    HalfedgeMesh::from_polygons(positions, &faces).expect("dodecahedron is valid")
}

/// Resolves a built-in mesh name such as `dodecahedron`, `triangle` or
/// `grid:4x4`.
pub fn builtin(name: &str) -> Option<HalfedgeMesh> {
    match name {
        "triangle" => Some(triangle()),
        "dodecahedron" => Some(dodecahedron()),
        _ => {
            let dims = name.strip_prefix("grid:")?;
            let (a, b) = dims.split_once('x')?;
            let (nx, ny) = (a.parse().ok()?, b.parse().ok()?);
            (nx > 0 && ny > 0).then(|| quad_grid(nx, ny))
        }
    }
}
