//! 3D to 2D projection with depth-raster occlusion testing.
//!
//! Pixel coordinates are reported row-first. The intrinsic matrix follows the
//! usual pinhole layout, so the first dehomogenized component runs along the
//! image columns and the second along the rows.

use nalgebra::{Point3, Vector4};

use super::{CameraFrame, SceneCloud};

/// Continuous image position and camera-space depth of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub row: f64,
    pub col: f64,
    /// Camera-space depth in meters.
    pub depth: f64,
}

/// Integer pixel at RGB resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub row: u32,
    pub col: u32,
}

/// Projects a world point into `frame`; `None` if it lies on or behind the
/// image plane.
pub fn project_point(p: &Point3<f64>, frame: &CameraFrame) -> Option<Projection> {
    let cam = frame.extrinsic() * Vector4::new(p.x, p.y, p.z, 1.0);
    let depth = cam.z;
    if !(depth > 0.0) {
        return None;
    }
    let uvw = frame.intrinsic() * cam.xyz();
    Some(Projection {
        row: uvw.y / uvw.z,
        col: uvw.x / uvw.z,
        depth,
    })
}

#[inline]
fn round_into(v: f64, len: usize) -> Option<usize> {
    let r = v.round();
    (r >= 0.0 && r < len as f64).then_some(r as usize)
}

/// Returns the RGB pixel of `p` if it projects inside the image, hits a valid
/// depth sample and agrees with that sample to within `depth_tolerance` meters.
pub fn visible_in_frame(p: &Point3<f64>, frame: &CameraFrame, depth_tolerance: f64) -> Option<Pixel> {
    let proj = project_point(p, frame)?;
    let (rgb_h, rgb_w) = frame.rgb_size();
    let row = round_into(proj.row, rgb_h)?;
    let col = round_into(proj.col, rgb_w)?;

    let depth = frame.depth();
    let drow = round_into(proj.row * depth.height() as f64 / rgb_h as f64, depth.height())?;
    let dcol = round_into(proj.col * depth.width() as f64 / rgb_w as f64, depth.width())?;
    let sensed = depth.meters(drow, dcol)?;
    if (proj.depth - sensed).abs() <= depth_tolerance {
        Some(Pixel {
            row: row as u32,
            col: col as u32,
        })
    } else {
        None
    }
}

/// Every visible point of `cloud` in `frame`, sorted by point index.
pub fn project_cloud(cloud: &SceneCloud, frame: &CameraFrame, depth_tolerance: f64) -> Vec<(u32, Pixel)> {
    cloud
        .positions()
        .iter()
        .enumerate()
        .filter_map(|(n, p)| visible_in_frame(p, frame, depth_tolerance).map(|px| (n as u32, px)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::DepthRaster;
    use nalgebra::{Isometry3, Matrix3, Matrix4, Translation3, UnitQuaternion, Vector3};
    use proptest::prelude::*;

    fn frame(k: Matrix3<f64>, e: Matrix4<f64>, depth: DepthRaster, rgb: (usize, usize)) -> CameraFrame {
        CameraFrame::new(0, k, e, depth, rgb).unwrap()
    }

    fn flat_depth(h: usize, w: usize, mm: u16) -> DepthRaster {
        DepthRaster::new(h, w, vec![mm; h * w]).unwrap()
    }

    fn pinhole() -> Matrix3<f64> {
        Matrix3::new(100.0, 0.0, 50.0, 0.0, 100.0, 50.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn identity_projection() {
        let f = frame(Matrix3::identity(), Matrix4::identity(), flat_depth(1, 1, 1000), (1, 1));
        let p = project_point(&Point3::new(0.0, 0.0, 1.0), &f).unwrap();
        assert_eq!((p.row, p.col, p.depth), (0.0, 0.0, 1.0));
        assert!(project_point(&Point3::new(0.0, 0.0, -1.0), &f).is_none());
    }

    #[test]
    fn pinhole_hand_evaluated() {
        // K * p = (100*0.1 + 50*2, 100*0.2 + 50*2, 2) = (110, 120, 2)
        let f = frame(pinhole(), Matrix4::identity(), flat_depth(100, 100, 2000), (100, 100));
        let p = project_point(&Point3::new(0.1, 0.2, 2.0), &f).unwrap();
        assert_eq!(p.row, 60.0);
        assert_eq!(p.col, 55.0);
        assert_eq!(p.depth, 2.0);
    }

    #[test]
    fn visibility_rules() {
        let tol = 0.05;
        let mut data = vec![2000u16; 100 * 100];
        let f = frame(pinhole(), Matrix4::identity(), DepthRaster::new(100, 100, data.clone()).unwrap(), (100, 100));
        let p = Point3::new(0.1, 0.2, 2.0);
        assert_eq!(visible_in_frame(&p, &f, tol), Some(Pixel { row: 60, col: 55 }));

        data[60 * 100 + 55] = 0;
        let f0 = frame(pinhole(), Matrix4::identity(), DepthRaster::new(100, 100, data).unwrap(), (100, 100));
        assert_eq!(visible_in_frame(&p, &f0, tol), None);

        let occluded = Point3::new(0.1 * 2.1 / 2.0, 0.2 * 2.1 / 2.0, 2.0 + 2.0 * tol);
        assert_eq!(visible_in_frame(&occluded, &f, tol), None);
    }

    #[test]
    fn boundary_pixel_rejected() {
        let f = frame(pinhole(), Matrix4::identity(), flat_depth(100, 100, 1000), (100, 100));
        // row lands on 99.6 -> rounds to 100 == H
        let p = Point3::new(0.0, 0.496, 1.0);
        assert!(project_point(&p, &f).is_some());
        assert_eq!(visible_in_frame(&p, &f, 0.05), None);
    }

    #[test]
    fn depth_raster_at_lower_resolution() {
        // 50x50 depth for a 100x100 image: (60, 55) scales to (30, 27.5 -> 28)
        let mut data = vec![0u16; 50 * 50];
        data[30 * 50 + 28] = 2000;
        let f = frame(pinhole(), Matrix4::identity(), DepthRaster::new(50, 50, data).unwrap(), (100, 100));
        assert_eq!(
            visible_in_frame(&Point3::new(0.1, 0.2, 2.0), &f, 0.05),
            Some(Pixel { row: 60, col: 55 })
        );
    }

    #[test]
    fn project_cloud_empty_when_facing_away() {
        let f = frame(pinhole(), Matrix4::identity(), flat_depth(100, 100, 1000), (100, 100));
        let cloud = SceneCloud::from_positions("s", vec![Point3::new(0.0, 0.0, -1.0), Point3::new(1.0, 1.0, -3.0)]).unwrap();
        assert!(project_cloud(&cloud, &f, 0.05).is_empty());
        let single = SceneCloud::from_positions("s", vec![Point3::new(0.0, 0.0, 1.0)]).unwrap();
        let out = project_cloud(&single, &f, 0.05);
        assert_eq!(out, vec![(0, visible_in_frame(single.position(0), &f, 0.05).unwrap())]);
    }

    proptest! {
        #[test]
        fn rigid_motion_leaves_projection_unchanged(
            px in -1.0f64..1.0, py in -1.0f64..1.0, pz in 1.0f64..4.0,
            ax in -3.0f64..3.0, ay in -3.0f64..3.0, az in -3.0f64..3.0,
            tx in -5.0f64..5.0, ty in -5.0f64..5.0, tz in -5.0f64..5.0,
        ) {
            let f = frame(pinhole(), Matrix4::identity(), flat_depth(100, 100, 1000), (100, 100));
            let p = Point3::new(px, py, pz);
            let motion = Isometry3::from_parts(
                Translation3::new(tx, ty, tz),
                UnitQuaternion::from_scaled_axis(Vector3::new(ax, ay, az) * 0.5),
            );
            let moved = motion * p;
            let e2 = f.extrinsic() * motion.inverse().to_homogeneous();
            let f2 = frame(pinhole(), e2, flat_depth(100, 100, 1000), (100, 100));
            let a = project_point(&p, &f).unwrap();
            let b = project_point(&moved, &f2).unwrap();
            prop_assert!((a.row - b.row).abs() < 1e-5);
            prop_assert!((a.col - b.col).abs() < 1e-5);
        }
    }
}
