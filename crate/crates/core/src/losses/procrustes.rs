use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn apply_all(&self, pts: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        pts.iter().map(|p| self.apply(p)).collect()
    }
}

fn centroid(pts: &[Vector3<f64>]) -> Vector3<f64> {
    pts.iter().sum::<Vector3<f64>>() / pts.len() as f64
}

/// Least-squares similarity taking `pred` onto `gt`, with a determinant
/// correction so the rotation is proper.
pub fn procrustes_align(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Similarity> {
    if pred.len() != gt.len() {
        return Err(Error::Alignment(format!("{} points against {}", pred.len(), gt.len())));
    }
    if pred.len() < 3 {
        return Err(Error::Alignment(format!("need at least 3 points, got {}", pred.len())));
    }
    if pred.iter().chain(gt).any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::Alignment("non-finite coordinates".into()));
    }
    let mp = centroid(pred);
    let mg = centroid(gt);
    let n = pred.len() as f64;
    let mut cov = Matrix3::zeros();
    let mut gt_scatter = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let dp = p - mp;
        let dg = g - mg;
        cov += dg * dp.transpose();
        gt_scatter += dg * dg.transpose();
        var_p += dp.norm_squared();
    }
    cov /= n;
    var_p /= n;
    let gsv = gt_scatter.singular_values();
    let (g0, g1) = (gsv.max(), {
        let mut s: Vec<f64> = gsv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s[1]
    });
    if !(g0 > 0.0) || g1 <= 1e-12 * g0 {
        return Err(Error::Alignment("target points are collinear or coincident".into()));
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = if (u * vt).determinant() < 0.0 { -1.0 } else { 1.0 };
    // smallest singular value takes the sign flip
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut s = Matrix3::identity();
    s[(order[2], order[2])] = d;
    let rotation = u * s * vt;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * s[(i, i)]).sum();
    let scale = if var_p > 0.0 { trace / var_p } else { 0.0 };
    let translation = mg - scale * (rotation * mp);
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}
