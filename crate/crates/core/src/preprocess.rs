//! Preprocessing geometry: mouth center, mouth crop and 5-point face alignment.

use nalgebra::{DMatrix, SMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::types::{mouth, CropSpec, LandmarkFrame, Point2};

/// Mean of the 20 lip landmarks of a 39-point mouth frame.
pub fn mouth_center(frame: &LandmarkFrame) -> Result<Point2> {
    frame.require_mouth()?;
    let lips = &frame.points[mouth::LIPS];
    let (sx, sy) = lips
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    let n = lips.len() as f64;
    Ok(Point2::new(sx / n, sy / n))
}

/// Cuts the `side x side` mouth region around the frame's mouth center.
///
/// Samples outside the source replicate the nearest edge pixel.
pub fn crop_mouth(image: &Image, frame: &LandmarkFrame, spec: CropSpec) -> Result<Image> {
    let center = mouth_center(frame)?;
    crop_at(image, center, spec)
}

/// Crop with an explicit center; shared by the bank builder and compositing.
pub fn crop_at(image: &Image, center: Point2, spec: CropSpec) -> Result<Image> {
    if image.is_empty() {
        return Err(Error::invalid("cannot crop an empty image"));
    }
    let (x0, y0) = spec.top_left(center);
    let ch = image.channels();
    let side = spec.side;
    let mut pixels = Vec::with_capacity(side * side * ch);
    for y in 0..side as i64 {
        for x in 0..side as i64 {
            for c in 0..ch {
                pixels.push(image.get_clamped(x0 + x, y0 + y, c));
            }
        }
    }
    Image::new(side, side, ch, pixels)
}

/// Five alignment landmarks: eye centers, nose tip, mouth corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FivePoints(pub [Point2; 5]);

/// 2x3 affine map `p -> M [x, y, 1]^T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            m: [[1.0, 0.0, dx], [0.0, 1.0, dy]],
        }
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        let m = &self.m;
        Point2::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2],
            m[1][0] * p.x + m[1][1] * p.y + m[1][2],
        )
    }

    pub fn max_abs_diff(&self, other: &AffineTransform) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Least-squares affine transform taking `frame` onto `reference`.
pub fn align_face(frame: &FivePoints, reference: &FivePoints) -> Result<AffineTransform> {
    let design = DMatrix::from_fn(5, 3, |r, c| match c {
        0 => frame.0[r].x,
        1 => frame.0[r].y,
        _ => 1.0,
    });
    let targets = DMatrix::from_fn(5, 2, |r, c| {
        if c == 0 {
            reference.0[r].x
        } else {
            reference.0[r].y
        }
    });

    // The design matrix loses rank exactly when the source points are collinear
    // (which includes all of them coinciding).
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= smax * 1e-10 {
        return Err(Error::DegenerateConfiguration(
            "alignment points are collinear or coincident".into(),
        ));
    }
    let sol = svd
        .solve(&targets, 0.0)
        .map_err(|e| Error::DegenerateConfiguration(e.to_string()))?;
    let sol: SMatrix<f64, 3, 2> = sol.fixed_view::<3, 2>(0, 0).into_owned();
    Ok(AffineTransform {
        m: [
            [sol[(0, 0)], sol[(1, 0)], sol[(2, 0)]],
            [sol[(0, 1)], sol[(1, 1)], sol[(2, 1)]],
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mouth_frame_with_lips(lips: &[Point2]) -> LandmarkFrame {
        let mut pts = lips.to_vec();
        pts.extend((0..19).map(|i| Point2::new(i as f64, 100.0)));
        LandmarkFrame::new(pts)
    }

    #[test]
    fn center_of_constant_lips() {
        let f = mouth_frame_with_lips(&[Point2::new(10.0, 20.0); 20]);
        assert_eq!(mouth_center(&f).unwrap(), Point2::new(10.0, 20.0));
    }

    #[test]
    fn center_of_regular_polygon() {
        let lips: Vec<_> = (0..20)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 20.0;
                Point2::new(74.0 + 30.0 * a.cos(), 74.0 + 30.0 * a.sin())
            })
            .collect();
        let c = mouth_center(&mouth_frame_with_lips(&lips)).unwrap();
        assert!((c.x - 74.0).abs() < 1e-12 && (c.y - 74.0).abs() < 1e-12);
    }

    #[test]
    fn center_matches_summation_and_is_translation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let lips: Vec<_> = (0..20)
                .map(|_| Point2::new(rng.random_range(0.0..300.0), rng.random_range(0.0..300.0)))
                .collect();
            let f = mouth_frame_with_lips(&lips);
            let mut sx = 0.0;
            let mut sy = 0.0;
            for p in &lips {
                sx += p.x;
                sy += p.y;
            }
            let c = mouth_center(&f).unwrap();
            assert!((c.x - sx / 20.0).abs() < 1e-12);
            assert!((c.y - sy / 20.0).abs() < 1e-12);

            let d = Point2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            let ct = mouth_center(&f.translated(d)).unwrap();
            assert!((ct.x - (c.x + d.x)).abs() < 1e-9 && (ct.y - (c.y + d.y)).abs() < 1e-9);
        }
    }

    #[test]
    fn center_rejects_other_conventions() {
        let f = LandmarkFrame::new(vec![Point2::default(); 68]);
        assert!(matches!(
            mouth_center(&f),
            Err(Error::ConventionViolation { expected: 39, found: 68 })
        ));
    }

    fn gradient_image(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 3, |x, y, c| ((x * 7 + y * 3 + c * 50) % 256) as u8).unwrap()
    }

    #[test]
    fn crop_inside_bounds() {
        let img = gradient_image(300, 300);
        let c = crop_at(&img, Point2::new(150.0, 150.0), CropSpec::default()).unwrap();
        assert_eq!((c.width(), c.height()), (148, 148));
        assert_eq!(c.get(0, 0, 0), img.get(76, 76, 0));
        assert_eq!(c.get(147, 147, 2), img.get(223, 223, 2));
    }

    #[test]
    fn crop_clamps_past_border() {
        let img = gradient_image(300, 300);
        let c = crop_at(&img, Point2::new(10.0, 10.0), CropSpec::default()).unwrap();
        // top-left is (-64, -64): everything left of/above the source repeats the edge.
        assert_eq!(c.get(0, 0, 1), img.get(0, 0, 1));
        assert_eq!(c.get(63, 5, 0), img.get(0, 0, 0));
        assert_eq!(c.get(64, 64, 0), img.get(0, 0, 0));
        assert_eq!(c.get(100, 70, 0), img.get(36, 6, 0));
    }

    #[test]
    fn crop_matches_pixel_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = Image::from_fn(97, 61, 1, |_, _, _| rng.random()).unwrap();
        let spec = CropSpec::new(40).unwrap();
        for _ in 0..20 {
            let center = Point2::new(rng.random_range(-20.0..120.0), rng.random_range(-20.0..80.0));
            let crop = crop_at(&img, center, spec).unwrap();
            let x0 = center.x.round() as i64 - 20;
            let y0 = center.y.round() as i64 - 20;
            for y in 0..40i64 {
                for x in 0..40i64 {
                    let sx = (x0 + x).max(0).min(96) as usize;
                    let sy = (y0 + y).max(0).min(60) as usize;
                    assert_eq!(crop.get(x as usize, y as usize, 0), img.get(sx, sy, 0));
                }
            }
        }
    }

    #[test]
    fn crop_idempotent_when_centered() {
        let img = gradient_image(200, 200);
        let spec = CropSpec::new(60).unwrap();
        let a = crop_at(&img, Point2::new(100.0, 90.0), spec).unwrap();
        let b = crop_at(&a, Point2::new(30.0, 30.0), spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn crop_rejects_empty_image() {
        let img = Image::new(0, 10, 1, vec![]).unwrap();
        assert!(crop_at(&img, Point2::default(), CropSpec::default()).is_err());
    }

    fn five(rng: &mut ChaCha8Rng) -> FivePoints {
        FivePoints(std::array::from_fn(|_| {
            Point2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0))
        }))
    }

    #[test]
    fn align_identity_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = five(&mut rng);
        let t = align_face(&f, &f).unwrap();
        assert!(t.max_abs_diff(&AffineTransform::IDENTITY) < 1e-10);

        let shifted = FivePoints(f.0.map(|p| p + Point2::new(5.0, -3.0)));
        // frame = reference shifted by (5, -3)
        let t = align_face(&shifted, &f).unwrap();
        assert!(t.max_abs_diff(&AffineTransform::translation(-5.0, 3.0)) < 1e-9);
    }

    #[test]
    fn align_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let f = five(&mut rng);
            let r = five(&mut rng);
            let t = align_face(&f, &r).unwrap();

            let mut ata = [[0.0f64; 3]; 3];
            let mut atb = [[0.0f64; 2]; 3];
            for k in 0..5 {
                let row = [f.0[k].x, f.0[k].y, 1.0];
                let tgt = [r.0[k].x, r.0[k].y];
                for i in 0..3 {
                    for j in 0..3 {
                        ata[i][j] += row[i] * row[j];
                    }
                    for j in 0..2 {
                        atb[i][j] += row[i] * tgt[j];
                    }
                }
            }
            let ata = nalgebra::Matrix3::from_fn(|i, j| ata[i][j]);
            let inv = ata.try_inverse().unwrap();
            for out in 0..2 {
                let rhs = nalgebra::Vector3::new(atb[0][out], atb[1][out], atb[2][out]);
                let sol = inv * rhs;
                for k in 0..3 {
                    let scale = 1.0 + sol[k].abs();
                    assert!((t.m[out][k] - sol[k]).abs() < 1e-8 * scale);
                }
            }
        }
    }

    #[test]
    fn align_rejects_collinear() {
        let line = FivePoints(std::array::from_fn(|k| Point2::new(k as f64, 2.0 * k as f64 + 1.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(matches!(
            align_face(&line, &five(&mut rng)),
            Err(Error::DegenerateConfiguration(_))
        ));
        let same = FivePoints([Point2::new(3.0, 3.0); 5]);
        assert!(align_face(&same, &line).is_err());
    }
}
