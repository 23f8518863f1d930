//! Z-buffer rasterizer with per-vertex albedo under second-order spherical
//! harmonics lighting.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, Z_MIN};
use crate::error::{invalid, Result};
use crate::imaging::{Mask, RgbImage};

pub const NUM_SH: usize = 9;
pub const NUM_LIGHTING: usize = 3 * NUM_SH;

/// Real SH basis, bands 0 to 2, evaluated at a unit normal.
pub fn sh_basis(n: &Vector3<f64>) -> [f64; NUM_SH] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        0.282095,
        0.488603 * y,
        0.488603 * z,
        0.488603 * x,
        1.092548 * x * y,
        1.092548 * y * z,
        0.315392 * (3.0 * z * z - 1.0),
        1.092548 * x * z,
        0.546274 * (x * x - y * y),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct Texture {
    rgb: Vec<[f64; 3]>,
}

impl TryFrom<Vec<[f64; 3]>> for Texture {
    type Error = crate::Error;

    fn try_from(rgb: Vec<[f64; 3]>) -> Result<Self> {
        Texture::new(rgb)
    }
}

impl From<Texture> for Vec<[f64; 3]> {
    fn from(t: Texture) -> Self {
        t.rgb
    }
}

impl Texture {
    pub fn new(rgb: Vec<[f64; 3]>) -> Result<Self> {
        if let Some(i) = rgb.iter().position(|c| c.iter().any(|v| !(0.0..=1.0).contains(v))) {
            return Err(invalid("texture", format!("vertex {i} albedo outside [0, 1]")));
        }
        Ok(Self { rgb })
    }

    pub fn uniform(n: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::new(vec![rgb; n])
    }

    pub fn rgb(&self) -> &[[f64; 3]] {
        &self.rgb
    }

    pub fn len(&self) -> usize {
        self.rgb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rgb.is_empty()
    }

    /// Clamps every entry into [0, 1].
    pub fn from_unclamped(rgb: &[[f64; 3]]) -> Self {
        Self {
            rgb: rgb.iter().map(|c| c.map(|v| v.clamp(0.0, 1.0))).collect(),
        }
    }
}

/// Nine SH coefficients per color channel, indexed `channel * 9 + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    pub sh_coeffs: [f64; NUM_LIGHTING],
}

impl Lighting {
    pub fn zeros() -> Self {
        Self {
            sh_coeffs: [0.0; NUM_LIGHTING],
        }
    }

    /// Constant irradiance `level` in every channel.
    pub fn ambient(level: f64) -> Self {
        let mut l = Self::zeros();
        for c in 0..3 {
            l.sh_coeffs[c * NUM_SH] = level / sh_basis(&Vector3::z())[0];
        }
        l
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_coeffs.iter().any(|v| !v.is_finite()) {
            return Err(invalid("lighting", "non-finite coefficient"));
        }
        Ok(())
    }

    /// Lighting of the scene reflected through the x = 0 plane.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for c in 0..3 {
            // basis terms odd in x
            for k in [3, 4, 7] {
                out.sh_coeffs[c * NUM_SH + k] = -out.sh_coeffs[c * NUM_SH + k];
            }
        }
        out
    }

    pub(crate) fn irradiance(&self, n: &Vector3<f64>) -> [f64; 3] {
        let h = sh_basis(n);
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = (0..NUM_SH).map(|k| self.sh_coeffs[c * NUM_SH + k] * h[k]).sum();
        }
        out
    }
}

/// Area-weighted vertex normals; vertices touching only degenerate faces get +z.
pub fn vertex_normals(vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for f in faces {
        // cross product length is twice the area, which is the weighting we want
        let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
        for &i in f {
            acc[i] += n;
        }
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                n / len
            } else {
                Vector3::z()
            }
        })
        .collect()
}

/// Shaded colors before clamping.
pub fn shade_vertices_unclamped(
    texture: &Texture,
    lighting: &Lighting,
    normals: &[Vector3<f64>],
) -> Result<Vec<[f64; 3]>> {
    if texture.len() != normals.len() {
        return Err(invalid(
            "normals",
            format!("{} normals for {} textured vertices", normals.len(), texture.len()),
        ));
    }
    lighting.validate()?;
    Ok(texture
        .rgb
        .iter()
        .zip(normals)
        .map(|(a, n)| {
            let e = lighting.irradiance(n);
            [a[0] * e[0], a[1] * e[1], a[2] * e[2]]
        })
        .collect())
}

pub fn shade_vertices(texture: &Texture, lighting: &Lighting, normals: &[Vector3<f64>]) -> Result<Vec<[f64; 3]>> {
    Ok(shade_vertices_unclamped(texture, lighting, normals)?
        .into_iter()
        .map(|c| c.map(|v| v.clamp(0.0, 1.0)))
        .collect())
}

/// Visible surface at a pixel: face index and perspective-correct vertex weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub face: usize,
    pub weights: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: RgbImage,
    pub silhouette: Mask,
    /// Camera-frame z per pixel, `+inf` where empty.
    pub depth: Vec<f64>,
    pub fragments: Vec<Option<Fragment>>,
}

impl RenderOutput {
    pub fn width(&self) -> u32 {
        self.rgb.width
    }

    pub fn height(&self) -> u32 {
        self.rgb.height
    }

    pub fn depth_at(&self, x: u32, y: u32) -> f64 {
        self.depth[y as usize * self.width() as usize + x as usize]
    }
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Pixel `(x, y)` samples the point at integer coordinates `(x, y)`.
/// Triangles with any vertex at or behind the near plane are skipped.
pub fn rasterize(
    vertices: &[Vector3<f64>],
    faces: &[[usize; 3]],
    colors: &[[f64; 3]],
    k: &CameraIntrinsics,
) -> Result<RenderOutput> {
    if colors.len() != vertices.len() {
        return Err(invalid("colors", format!("{} colors for {} vertices", colors.len(), vertices.len())));
    }
    if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
        return Err(invalid("faces", format!("face {f:?} indexes past {} vertices", vertices.len())));
    }
    k.validate_crop()?;
    let (w, h) = (k.width, k.height);
    let n = w as usize * h as usize;
    let mut depth = vec![f64::INFINITY; n];
    let mut fragments = vec![None; n];
    let screen: Vec<(f64, f64)> = vertices
        .iter()
        .map(|p| {
            let q = k.project_point(p);
            (q.x, q.y)
        })
        .collect();

    for (fi, f) in faces.iter().enumerate() {
        if f.iter().any(|&i| !(vertices[i].z > Z_MIN)) {
            continue;
        }
        let s = [screen[f[0]], screen[f[1]], screen[f[2]]];
        let area = edge(s[0], s[1], s[2]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let min_x = s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_x = s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).floor().min(w as f64 - 1.0);
        let min_y = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_y = s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).floor().min(h as f64 - 1.0);
        if min_x > max_x || min_y > max_y {
            continue;
        }
        let inv_z = [1.0 / vertices[f[0]].z, 1.0 / vertices[f[1]].z, 1.0 / vertices[f[2]].z];
        for y in min_y as u32..=max_y as u32 {
            for x in min_x as u32..=max_x as u32 {
                let p = (x as f64, y as f64);
                let b = [
                    edge(s[1], s[2], p) / area,
                    edge(s[2], s[0], p) / area,
                    edge(s[0], s[1], p) / area,
                ];
                if b.iter().any(|v| *v < 0.0) {
                    continue;
                }
                let pw = [b[0] * inv_z[0], b[1] * inv_z[1], b[2] * inv_z[2]];
                let sum = pw[0] + pw[1] + pw[2];
                let z = 1.0 / sum;
                let i = y as usize * w as usize + x as usize;
                if z < depth[i] {
                    depth[i] = z;
                    fragments[i] = Some(Fragment {
                        face: fi,
                        weights: [pw[0] / sum, pw[1] / sum, pw[2] / sum],
                    });
                }
            }
        }
    }

    let mut rgb = RgbImage::filled(w, h, [0.0; 3]);
    let mut silhouette = Mask::empty(w, h);
    for (i, frag) in fragments.iter().enumerate() {
        if let Some(fr) = frag {
            let f = faces[fr.face];
            let mut c = [0.0; 3];
            for (v, wv) in f.iter().zip(fr.weights) {
                for ch in 0..3 {
                    c[ch] += wv * colors[*v][ch];
                }
            }
            rgb.data[i] = c;
            silhouette.data[i] = true;
        }
    }
    Ok(RenderOutput {
        rgb,
        silhouette,
        depth,
        fragments,
    })
}

/// Normals, shading and rasterization in one call.
pub fn render_mesh(
    vertices: &[Vector3<f64>],
    faces: &[[usize; 3]],
    texture: &Texture,
    lighting: &Lighting,
    k: &CameraIntrinsics,
) -> Result<RenderOutput> {
    let normals = vertex_normals(vertices, faces);
    let colors = shade_vertices(texture, lighting, &normals)?;
    rasterize(vertices, faces, &colors, k)
}

fn check_dims(what: &'static str, a: (u32, u32), b: (u32, u32)) -> Result<()> {
    if a != b {
        return Err(invalid(what, format!("{}x{} against {}x{}", b.0, b.1, a.0, a.1)));
    }
    Ok(())
}

/// Mean color distance over pixels covered by both the silhouette and
/// `skin_mask`; 0 when that set is empty.
pub fn photometric_loss(rendered: &RenderOutput, target: &RgbImage, skin_mask: &Mask) -> Result<f64> {
    let dims = rendered.rgb.dims();
    check_dims("target", dims, target.dims())?;
    check_dims("skin_mask", dims, skin_mask.dims())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..rendered.rgb.data.len() {
        if rendered.silhouette.data[i] && skin_mask.data[i] {
            let a = rendered.rgb.data[i];
            let b = target.data[i];
            sum += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Masked PSNR in dB for images in [0, 1]; `+inf` for an empty mask or zero error.
pub fn psnr(a: &RgbImage, b: &RgbImage, mask: &Mask) -> Result<f64> {
    check_dims("b", a.dims(), b.dims())?;
    check_dims("mask", a.dims(), mask.dims())?;
    let mut se = 0.0;
    let mut count = 0usize;
    for i in 0..a.data.len() {
        if mask.data[i] {
            for c in 0..3 {
                se += (a.data[i][c] - b.data[i][c]).powi(2);
            }
            count += 3;
        }
    }
    if count == 0 || se == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / (se / count as f64)).log10())
}
