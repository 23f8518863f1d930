use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::procrustes::procrustes_align;
use crate::error::{invalid, Result};
use crate::keypoints::Keypoints2D;

pub const PCK_THRESHOLDS: usize = 100;
/// Upper end of the PCK threshold range, meters.
pub const PCK_MAX_M: f64 = 0.05;
pub const F_THRESHOLDS_M: [f64; 2] = [0.005, 0.015];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    #[default]
    Procrustes,
    RootAligned,
    None,
}

/// Errors for one hand. Distances in centimeters, 2D error in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpjpe_cm: f64,
    pub mpvpe_cm: f64,
    pub auc_joints: f64,
    pub auc_vertices: f64,
    pub f_at_5mm: f64,
    pub f_at_15mm: f64,
    pub epe_cm: f64,
    pub mpjpe_2d_px: Option<f64>,
}

impl MetricReport {
    /// Field-wise mean; `mpjpe_2d_px` averages the reports that carry it.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let px: Vec<f64> = reports.iter().filter_map(|r| r.mpjpe_2d_px).collect();
        Some(MetricReport {
            mpjpe_cm: avg(|r| r.mpjpe_cm),
            mpvpe_cm: avg(|r| r.mpvpe_cm),
            auc_joints: avg(|r| r.auc_joints),
            auc_vertices: avg(|r| r.auc_vertices),
            f_at_5mm: avg(|r| r.f_at_5mm),
            f_at_15mm: avg(|r| r.f_at_15mm),
            epe_cm: avg(|r| r.epe_cm),
            mpjpe_2d_px: (!px.is_empty()).then(|| px.iter().sum::<f64>() / px.len() as f64),
        })
    }
}

/// Fraction of errors at or below each of the thresholds 0.05 cm, 0.10 cm,
/// ..., 5 cm.
pub fn pck_curve(errors_m: &[f64]) -> Vec<f64> {
    (0..PCK_THRESHOLDS)
        .map(|i| {
            let tau = PCK_MAX_M * (i + 1) as f64 / PCK_THRESHOLDS as f64;
            if errors_m.is_empty() {
                return 1.0;
            }
            errors_m.iter().filter(|e| **e <= tau).count() as f64 / errors_m.len() as f64
        })
        .collect()
}

fn auc(errors_m: &[f64]) -> f64 {
    pck_curve(errors_m).iter().sum::<f64>() / PCK_THRESHOLDS as f64
}

fn nearest(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> Vec<f64> {
    from.iter()
        .map(|p| to.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt())
        .collect()
}

/// Harmonic mean of precision and recall of nearest-vertex distances within
/// `threshold` meters.
pub fn f_score(pred: &[Vector3<f64>], gt: &[Vector3<f64>], threshold: f64) -> f64 {
    f_from_nearest(&nearest(pred, gt), &nearest(gt, pred), threshold)
}

fn f_from_nearest(p2g: &[f64], g2p: &[f64], threshold: f64) -> f64 {
    let frac = |d: &[f64]| d.iter().filter(|v| **v <= threshold).count() as f64 / d.len().max(1) as f64;
    let (p, r) = (frac(p2g), frac(g2p));
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn distances(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn root_aligned(pts: &[Vector3<f64>], root: &Vector3<f64>) -> Vec<Vector3<f64>> {
    pts.iter().map(|p| p - root).collect()
}

/// Evaluates one predicted hand against ground truth.
///
/// Procrustes mode aligns joints and vertices with separate similarity fits.
/// Root-aligned mode subtracts joint 0 from each set. EPE is always measured
/// after root alignment of the mode-aligned joints.
pub fn metrics(
    pred_vertices: &[Vector3<f64>],
    pred_joints: &[Vector3<f64>],
    gt_vertices: &[Vector3<f64>],
    gt_joints: &[Vector3<f64>],
    mode: AlignMode,
    keypoints: Option<(&Keypoints2D, &Keypoints2D)>,
) -> Result<MetricReport> {
    if pred_vertices.len() != gt_vertices.len() || pred_vertices.is_empty() {
        return Err(invalid(
            "vertices",
            format!("{} predicted against {} targets", pred_vertices.len(), gt_vertices.len()),
        ));
    }
    if pred_joints.len() != gt_joints.len() || pred_joints.is_empty() {
        return Err(invalid(
            "joints",
            format!("{} predicted against {} targets", pred_joints.len(), gt_joints.len()),
        ));
    }
    let (pj, pv, gj, gv) = match mode {
        AlignMode::None => (pred_joints.to_vec(), pred_vertices.to_vec(), gt_joints.to_vec(), gt_vertices.to_vec()),
        AlignMode::RootAligned => (
            root_aligned(pred_joints, &pred_joints[0]),
            root_aligned(pred_vertices, &pred_joints[0]),
            root_aligned(gt_joints, &gt_joints[0]),
            root_aligned(gt_vertices, &gt_joints[0]),
        ),
        AlignMode::Procrustes => (
            procrustes_align(pred_joints, gt_joints)?.apply_all(pred_joints),
            procrustes_align(pred_vertices, gt_vertices)?.apply_all(pred_vertices),
            gt_joints.to_vec(),
            gt_vertices.to_vec(),
        ),
    };
    let je = distances(&pj, &gj);
    let ve = distances(&pv, &gv);
    let epe = mean(&distances(&root_aligned(&pj, &pj[0]), &root_aligned(&gj, &gj[0])));
    let p2g = nearest(&pv, &gv);
    let g2p = nearest(&gv, &pv);
    let mpjpe_2d_px = match keypoints {
        Some((p, g)) => {
            let d: Vec<f64> = (0..p.points().len())
                .filter_map(|j| Some((p.get(j)? - g.get(j)?).norm()))
                .collect();
            (!d.is_empty()).then(|| mean(&d))
        }
        None => None,
    };
    Ok(MetricReport {
        mpjpe_cm: 100.0 * mean(&je),
        mpvpe_cm: 100.0 * mean(&ve),
        auc_joints: auc(&je),
        auc_vertices: auc(&ve),
        f_at_5mm: f_from_nearest(&p2g, &g2p, F_THRESHOLDS_M[0]),
        f_at_15mm: f_from_nearest(&p2g, &g2p, F_THRESHOLDS_M[1]),
        epe_cm: 100.0 * epe,
        mpjpe_2d_px,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.5..0.7)))
            .collect()
    }

    #[test]
    fn zero_error_ceiling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = cloud(&mut rng, 100);
        let j = cloud(&mut rng, 21);
        for mode in [AlignMode::Procrustes, AlignMode::RootAligned, AlignMode::None] {
            let r = metrics(&v, &j, &v, &j, mode, None).unwrap();
            assert!(r.mpjpe_cm < 1e-9 && r.mpvpe_cm < 1e-9 && r.epe_cm < 1e-9);
            assert_eq!((r.auc_joints, r.auc_vertices, r.f_at_5mm, r.f_at_15mm), (1.0, 1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn uniform_centimeter_error_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = cloud(&mut rng, 21);
        // each joint off by exactly 1 cm in its own direction, root included
        let p: Vec<_> = j
            .iter()
            .map(|q| {
                let d = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
                q + d * 0.01
            })
            .collect();
        let r = metrics(&j, &p, &j, &j, AlignMode::None, None).unwrap();
        assert!((r.mpjpe_cm - 1.0).abs() < 1e-9);
        // 80 or 81 of the 100 thresholds sit at or above 1 cm depending on rounding
        assert!((r.auc_joints - 0.8).abs() <= 0.01, "{}", r.auc_joints);
    }

    #[test]
    fn procrustes_ignores_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = cloud(&mut rng, 60);
        let j = cloud(&mut rng, 21);
        let r = Rotation3::new(Vector3::new(0.3, -1.2, 0.7));
        let f = |p: &Vector3<f64>| 1.7 * (r * p) + Vector3::new(0.2, -0.1, 0.4);
        let pv: Vec<_> = v.iter().map(f).collect();
        let pj: Vec<_> = j.iter().map(f).collect();
        let m = metrics(&pv, &pj, &v, &j, AlignMode::Procrustes, None).unwrap();
        assert!(m.mpjpe_cm < 1e-7 && m.mpvpe_cm < 1e-7 && m.epe_cm < 1e-7);
    }

    #[test]
    fn epe_ignores_prediction_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = cloud(&mut rng, 30);
        let j = cloud(&mut rng, 21);
        let pj = cloud(&mut rng, 21);
        let shift = Vector3::new(0.3, 0.1, -0.2);
        let moved: Vec<_> = pj.iter().map(|p| p + shift).collect();
        for mode in [AlignMode::RootAligned, AlignMode::None] {
            let a = metrics(&v, &pj, &v, &j, mode, None).unwrap();
            let b = metrics(&v, &moved, &v, &j, mode, None).unwrap();
            assert!((a.epe_cm - b.epe_cm).abs() < 1e-9);
        }
    }

    #[test]
    fn f_score_brute_force() {
        let a = vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)];
        let b = vec![Vector3::new(0.004, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0), Vector3::new(0.0, 0.0, 2.0)];
        // precision 1/2, recall 1/3
        let f = f_score(&a, &b, 0.005);
        assert!((f - 2.0 * 0.5 / 3.0 / (0.5 + 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(f_score(&a, &b, 1e-4), 0.0);
    }

    #[test]
    fn auc_monotone_in_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut e: Vec<f64> = (0..21).map(|_| rng.random_range(0.0..0.06)).collect();
        let mut prev = auc(&e);
        assert!((prev - pck_curve(&e).iter().sum::<f64>() / 100.0).abs() < 1e-15);
        for i in 0..21 {
            e[i] += 0.004;
            let a = auc(&e);
            assert!(a <= prev);
            prev = a;
        }
    }

    #[test]
    fn dimension_mismatch() {
        let v = vec![Vector3::zeros(); 5];
        assert!(metrics(&v, &v, &v[..4], &v, AlignMode::None, None).is_err());
    }

    #[test]
    fn report_csv_and_json() {
        let r = MetricReport {
            mpjpe_cm: 1.0,
            mpvpe_cm: 2.0,
            auc_joints: 0.5,
            auc_vertices: 0.25,
            f_at_5mm: 0.1,
            f_at_15mm: 0.9,
            epe_cm: 3.0,
            mpjpe_2d_px: None,
        };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<MetricReport>(&s).unwrap(), r);
        let mean = MetricReport::mean(&[r.clone(), MetricReport { mpjpe_cm: 3.0, mpjpe_2d_px: Some(4.0), ..r.clone() }]).unwrap();
        assert_eq!(mean.mpjpe_cm, 2.0);
        assert_eq!(mean.mpjpe_2d_px, Some(4.0));
    }
}
