use nalgebra::Vector3;

use super::{Adam, FitConfig};
use crate::camera::CameraIntrinsics;
use crate::error::{invalid, Result};
use crate::imaging::{Mask, RgbImage};
use crate::renderer::{rasterize, sh_basis, vertex_normals, Lighting, Texture, NUM_LIGHTING, NUM_SH};

#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceFit {
    pub texture: Texture,
    pub lighting: Lighting,
    /// Best photometric loss reached.
    pub loss: f64,
    /// `(iteration, loss, best so far)` per iteration.
    pub trace: Vec<(usize, f64, f64)>,
}

/// A covered pixel: its target color and the weighted vertices behind it.
struct Sample {
    target: [f64; 3],
    verts: [(usize, f64); 3],
}

struct Problem {
    basis: Vec<[f64; NUM_SH]>,
    samples: Vec<Sample>,
}

impl Problem {
    /// Loss and gradients for albedo (per vertex) and lighting.
    fn eval(&self, albedo: &[[f64; 3]], light: &[f64; NUM_LIGHTING], grad: bool) -> (f64, Vec<[f64; 3]>, [f64; NUM_LIGHTING]) {
        let n = albedo.len();
        let mut irr = vec![[0.0; 3]; n];
        let mut shaded = vec![[0.0; 3]; n];
        for i in 0..n {
            for c in 0..3 {
                let e: f64 = (0..NUM_SH).map(|k| light[c * NUM_SH + k] * self.basis[i][k]).sum();
                irr[i][c] = e;
                shaded[i][c] = albedo[i][c] * e;
            }
        }
        let mut loss = 0.0;
        let mut g_shaded = vec![[0.0; 3]; if grad { n } else { 0 }];
        let inv = 1.0 / self.samples.len().max(1) as f64;
        for s in &self.samples {
            let mut col = [0.0; 3];
            for &(v, w) in &s.verts {
                for c in 0..3 {
                    col[c] += w * shaded[v][c].clamp(0.0, 1.0);
                }
            }
            let diff = [col[0] - s.target[0], col[1] - s.target[1], col[2] - s.target[2]];
            let d = (diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]).sqrt();
            loss += d;
            if grad && d > 0.0 {
                for &(v, w) in &s.verts {
                    for c in 0..3 {
                        let x = shaded[v][c];
                        if x > 0.0 && x < 1.0 {
                            g_shaded[v][c] += w * diff[c] / d * inv;
                        }
                    }
                }
            }
        }
        let mut g_albedo = vec![[0.0; 3]; if grad { n } else { 0 }];
        let mut g_light = [0.0; NUM_LIGHTING];
        if grad {
            for i in 0..n {
                for c in 0..3 {
                    let g = g_shaded[i][c];
                    if g == 0.0 {
                        continue;
                    }
                    g_albedo[i][c] = g * irr[i][c];
                    for k in 0..NUM_SH {
                        g_light[c * NUM_SH + k] += g * albedo[i][c] * self.basis[i][k];
                    }
                }
            }
        }
        (loss * inv, g_albedo, g_light)
    }
}

/// Per-vertex albedo and SH lighting for a fixed mesh by Adam on the analytic
/// gradient of the masked photometric loss. Visibility is frozen from one
/// rasterization of the mesh.
#[allow(clippy::too_many_arguments)]
pub fn fit_appearance(
    vertices: &[Vector3<f64>],
    faces: &[[usize; 3]],
    image: &RgbImage,
    skin_mask: &Mask,
    k: &CameraIntrinsics,
    texture: &Texture,
    lighting: &Lighting,
    cfg: &FitConfig,
) -> Result<AppearanceFit> {
    if texture.len() != vertices.len() {
        return Err(invalid("texture", format!("{} colors for {} vertices", texture.len(), vertices.len())));
    }
    lighting.validate()?;
    let dims = (k.width, k.height);
    if image.dims() != dims || skin_mask.dims() != dims {
        return Err(invalid("image", "image, mask and intrinsics sizes differ"));
    }
    let normals = vertex_normals(vertices, faces);
    let basis: Vec<[f64; NUM_SH]> = normals.iter().map(sh_basis).collect();
    let out = rasterize(vertices, faces, &vec![[0.0; 3]; vertices.len()], k)?;
    let samples: Vec<Sample> = out
        .fragments
        .iter()
        .enumerate()
        .filter(|(i, _)| skin_mask.data[*i])
        .filter_map(|(i, f)| {
            let f = (*f)?;
            let face = faces[f.face];
            Some(Sample {
                target: image.data[i],
                verts: [(face[0], f.weights[0]), (face[1], f.weights[1]), (face[2], f.weights[2])],
            })
        })
        .collect();
    let problem = Problem { basis, samples };

    let n = vertices.len();
    let mut albedo = texture.rgb().to_vec();
    let mut light = lighting.sh_coeffs;
    let mut adam = Adam::new(3 * n + NUM_LIGHTING);
    let mut best = f64::INFINITY;
    let mut best_state = (albedo.clone(), light);
    let mut trace = Vec::with_capacity(cfg.stage2_iters);
    for it in 0..=cfg.stage2_iters {
        let last = it == cfg.stage2_iters;
        let (loss, ga, gl) = problem.eval(&albedo, &light, !last);
        if loss < best {
            best = loss;
            best_state = (albedo.clone(), light);
        }
        if last || problem.samples.is_empty() {
            break;
        }
        trace.push((it, loss, best));
        let mut g: Vec<f64> = ga.iter().flatten().copied().collect();
        g.extend_from_slice(&gl);
        let lr = FitConfig::rate_at(cfg.stage2_learning_rate, &cfg.stage2_decay_milestones, cfg.decay_factor, it);
        let step = adam.step(&g, &vec![lr; g.len()]);
        for (i, a) in albedo.iter_mut().enumerate() {
            for c in 0..3 {
                a[c] = (a[c] + step[3 * i + c]).clamp(0.0, 1.0);
            }
        }
        for (l, s) in light.iter_mut().zip(&step[3 * n..]) {
            *l += s;
        }
    }
    Ok(AppearanceFit {
        texture: Texture::new(best_state.0)?,
        lighting: Lighting { sh_coeffs: best_state.1 },
        loss: best,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renderer::{photometric_loss, render_mesh};
    use crate::renderer::tests::icosphere;

    fn sphere_scene() -> (Vec<Vector3<f64>>, Vec<[usize; 3]>, CameraIntrinsics) {
        let (v, f) = icosphere(2);
        let v = v.iter().map(|p| p * 0.05 + Vector3::new(0.0, 0.0, 0.4)).collect();
        (v, f, CameraIntrinsics::centered(96, 96))
    }

    #[test]
    fn loss_matches_renderer() {
        let (v, f, k) = sphere_scene();
        let tex = Texture::new((0..v.len()).map(|i| [0.2 + 0.001 * i as f64 % 0.5, 0.4, 0.6]).collect()).unwrap();
        let mut light = Lighting::ambient(0.9);
        light.sh_coeffs[2] = 0.3;
        let target = RgbImage::filled(96, 96, [0.3, 0.5, 0.2]);
        let mask = Mask::full(96, 96);
        let cfg = FitConfig {
            stage2_iters: 0,
            ..FitConfig::default()
        };
        let fit = fit_appearance(&v, &f, &target, &mask, &k, &tex, &light, &cfg).unwrap();
        let out = render_mesh(&v, &f, &tex, &light, &k).unwrap();
        let reference = photometric_loss(&out, &target, &mask).unwrap();
        assert!((fit.loss - reference).abs() < 1e-12, "{} {}", fit.loss, reference);
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let (v, f, k) = sphere_scene();
        let normals = vertex_normals(&v, &f);
        let out = rasterize(&v, &f, &vec![[0.0; 3]; v.len()], &k).unwrap();
        let target = [0.35, 0.55, 0.25];
        let samples: Vec<Sample> = out
            .fragments
            .iter()
            .flatten()
            .map(|fr| {
                let face = f[fr.face];
                Sample {
                    target,
                    verts: [(face[0], fr.weights[0]), (face[1], fr.weights[1]), (face[2], fr.weights[2])],
                }
            })
            .collect();
        let p = Problem {
            basis: normals.iter().map(sh_basis).collect(),
            samples,
        };
        let albedo: Vec<[f64; 3]> = (0..v.len()).map(|i| [0.3 + 0.2 * ((i % 7) as f64 / 7.0), 0.5, 0.45]).collect();
        let mut light = Lighting::ambient(0.8).sh_coeffs;
        light[1] = 0.05;
        light[NUM_SH + 3] = -0.04;
        let (_, ga, gl) = p.eval(&albedo, &light, true);
        let h = 1e-6;
        for idx in [0usize, 5, 13, 26] {
            let mut up = light;
            up[idx] += h;
            let mut dn = light;
            dn[idx] -= h;
            let fd = (p.eval(&albedo, &up, false).0 - p.eval(&albedo, &dn, false).0) / (2.0 * h);
            assert!((fd - gl[idx]).abs() < 1e-6 * (1.0 + fd.abs()), "light {idx}: {fd} vs {}", gl[idx]);
        }
        for (vi, c) in [(0usize, 0usize), (10, 1), (40, 2), (100, 0)] {
            let mut up = albedo.clone();
            up[vi][c] += h;
            let mut dn = albedo.clone();
            dn[vi][c] -= h;
            let fd = (p.eval(&up, &light, false).0 - p.eval(&dn, &light, false).0) / (2.0 * h);
            assert!((fd - ga[vi][c]).abs() < 1e-6, "albedo {vi}/{c}: {fd} vs {}", ga[vi][c]);
        }
    }

    #[test]
    fn recovers_uniform_target() {
        let (v, f, k) = sphere_scene();
        let truth_tex = Texture::uniform(v.len(), [0.7, 0.45, 0.35]).unwrap();
        let truth_light = Lighting::ambient(0.9);
        let target = render_mesh(&v, &f, &truth_tex, &truth_light, &k).unwrap();
        let init_tex = Texture::uniform(v.len(), [0.5; 3]).unwrap();
        let cfg = FitConfig::default();
        let fit = fit_appearance(&v, &f, &target.rgb, &target.silhouette, &k, &init_tex, &Lighting::ambient(1.0), &cfg).unwrap();
        let start = fit.trace[0].1;
        assert!(fit.loss < 0.1 * start, "{start} -> {}", fit.loss);
        assert!(fit.trace.windows(2).all(|w| w[1].2 <= w[0].2));
    }

    #[test]
    fn empty_mask_keeps_initial_state() {
        let (v, f, k) = sphere_scene();
        let tex = Texture::uniform(v.len(), [0.5; 3]).unwrap();
        let target = RgbImage::filled(96, 96, [0.1; 3]);
        let fit = fit_appearance(&v, &f, &target, &Mask::empty(96, 96), &k, &tex, &Lighting::ambient(1.0), &FitConfig::default()).unwrap();
        assert_eq!(fit.loss, 0.0);
        assert_eq!(fit.texture, tex);
    }
}
