//! Forward splatting: EWA projection of 3D Gaussians and depth-sorted
//! front-to-back compositing.

mod camera;
mod image;

use nalgebra::{Matrix2, Matrix2x3, Vector2};
use rayon::prelude::*;

use crate::cloud::Gaussian3D;

pub use camera::{format_camera, load_camera, parse_camera, Camera, CameraSpec};
pub use image::{
    decode_pfm, decode_pgm, decode_ppm, encode_pfm, encode_pgm, encode_ppm, quantize, read_image, sibling,
    write_image_set, ImageRGBA,
};

pub const NEAR_PLANE: f64 = 0.01;
/// Added to both diagonal entries of every projected covariance, px².
pub const LOW_PASS: f64 = 0.3;
/// Splat support radius in standard deviations.
pub const CUTOFF_SIGMA: f64 = 4.0;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean: Vector2<f64>,
    /// Includes the low-pass floor.
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

impl Splat2D {
    /// `cov2d` inverse, or `None` if singular.
    pub fn conic(&self) -> Option<Matrix2<f64>> {
        self.cov2d.try_inverse()
    }

    /// Opacity-weighted falloff at pixel position `p`; zero beyond the cutoff ellipse.
    pub fn alpha_at(&self, conic: &Matrix2<f64>, p: &Vector2<f64>) -> f64 {
        let d = p - self.mean;
        let m = (d.transpose() * conic * d)[(0, 0)];
        if m > CUTOFF_SIGMA * CUTOFF_SIGMA {
            0.0
        } else {
            self.opacity * (-0.5 * m).exp()
        }
    }

    /// Pixel-index bounds of the cutoff box, clipped to the image; `None` if empty.
    fn pixel_box(&self, width: usize, height: usize) -> Option<[usize; 4]> {
        let rx = CUTOFF_SIGMA * self.cov2d[(0, 0)].sqrt();
        let ry = CUTOFF_SIGMA * self.cov2d[(1, 1)].sqrt();
        // pixel i is centered at i + 0.5
        let lo = |c: f64| (c - 0.5).ceil().max(0.0);
        let hi = |c: f64, n: usize| (c - 0.5).floor().min(n as f64 - 1.0);
        let (x0, x1) = (lo(self.mean.x - rx), hi(self.mean.x + rx, width));
        let (y0, y1) = (lo(self.mean.y - ry), hi(self.mean.y + ry, height));
        (x0 <= x1 && y0 <= y1).then_some([x0 as usize, x1 as usize, y0 as usize, y1 as usize])
    }
}

/// Projects one Gaussian; `None` when behind the near plane or entirely
/// (beyond the cutoff) outside the viewport.
pub fn project(g: &Gaussian3D, cam: &Camera) -> Option<Splat2D> {
    let t = cam.to_camera_frame(&g.position);
    if !(t.z >= NEAR_PLANE) {
        return None;
    }
    let inv_z = 1.0 / t.z;
    let mean = Vector2::new(cam.fx * t.x * inv_z + cam.cx, cam.fy * t.y * inv_z + cam.cy);
    let j = Matrix2x3::new(
        cam.fx * inv_z,
        0.0,
        -cam.fx * t.x * inv_z * inv_z,
        0.0,
        cam.fy * inv_z,
        -cam.fy * t.y * inv_z * inv_z,
    );
    let w = cam.rotation.matrix();
    let jw = j * w;
    let mut cov2d = jw * g.covariance() * jw.transpose();
    cov2d = 0.5 * (cov2d + cov2d.transpose());
    cov2d[(0, 0)] += LOW_PASS;
    cov2d[(1, 1)] += LOW_PASS;
    let rx = CUTOFF_SIGMA * cov2d[(0, 0)].sqrt();
    let ry = CUTOFF_SIGMA * cov2d[(1, 1)].sqrt();
    if mean.x + rx < 0.0 || mean.x - rx > cam.width as f64 || mean.y + ry < 0.0 || mean.y - ry > cam.height as f64 {
        return None;
    }
    Some(Splat2D { mean, cov2d, depth: t.z, color: g.color, opacity: g.opacity })
}

/// Front-to-back alpha compositing in depth order (ties by input index).
/// Pixel `(x, y)` is sampled at `(x + 0.5, y + 0.5)`.
pub fn composite(splats: &[Splat2D], width: usize, height: usize) -> ImageRGBA {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| splats[a].depth.total_cmp(&splats[b].depth).then(a.cmp(&b)));
    let prepared: Vec<(&Splat2D, Matrix2<f64>, [usize; 4])> = order
        .iter()
        .filter_map(|&i| {
            let s = &splats[i];
            Some((s, s.conic()?, s.pixel_box(width, height)?))
        })
        .collect();

    let rows: Vec<Vec<([f64; 3], f64, f64)>> = (0..height)
        .into_par_iter()
        .map(|y| {
            let active: Vec<_> = prepared.iter().filter(|p| p.2[2] <= y && y <= p.2[3]).collect();
            (0..width)
                .map(|x| {
                    let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let mut t = 1.0;
                    let mut rgb = [0.0; 3];
                    let mut depth = 0.0;
                    for (s, conic, bx) in &active {
                        if x < bx[0] || x > bx[1] {
                            continue;
                        }
                        let a = s.alpha_at(conic, &p);
                        if a <= 0.0 {
                            continue;
                        }
                        let w = t * a;
                        for (c, sc) in rgb.iter_mut().zip(s.color) {
                            *c += w * sc;
                        }
                        depth += w * s.depth;
                        let next = t * (1.0 - a);
                        debug_assert!(next <= t, "alpha must not decrease");
                        t = next;
                        if t < MIN_TRANSMITTANCE {
                            break;
                        }
                    }
                    let alpha = 1.0 - t;
                    let depth = if alpha > 0.0 { depth / alpha } else { f64::INFINITY };
                    (rgb.map(|c| c.clamp(0.0, 1.0)), alpha, depth)
                })
                .collect()
        })
        .collect();

    let mut img = ImageRGBA::transparent(width, height);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (rgb, a, d)) in row.into_iter().enumerate() {
            let i = img.index(x, y);
            img.rgb[i] = rgb;
            img.alpha[i] = a;
            img.depth[i] = d;
        }
    }
    img
}

pub fn render(gaussians: &[Gaussian3D], cam: &Camera) -> ImageRGBA {
    let splats: Vec<Splat2D> = gaussians.iter().filter_map(|g| project(g, cam)).collect();
    composite(&splats, cam.width, cam.height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{RotationMatrix, Vec3};

    fn cam(w: usize, h: usize, f: f64) -> Camera {
        Camera::new(RotationMatrix::identity(), Vec3::zeros(), [f, f], [w as f64 / 2.0, h as f64 / 2.0], w, h).unwrap()
    }

    fn ball(p: Vec3, s: f64, opacity: f64, color: [f64; 3]) -> Gaussian3D {
        Gaussian3D::new(p, RotationMatrix::identity(), Vec3::new(s, s, s), opacity, color).unwrap()
    }

    #[test]
    fn on_axis_projection() {
        let (f, s, d) = (100.0, 0.05, 2.0);
        let sp = project(&ball(Vec3::new(0.0, 0.0, d), s, 1.0, [1.0; 3]), &cam(64, 64, f)).unwrap();
        let expect = (f * s / d).powi(2);
        assert!((sp.cov2d[(0, 0)] - LOW_PASS - expect).abs() < 1e-12);
        assert!((sp.cov2d[(1, 1)] - LOW_PASS - expect).abs() < 1e-12);
        assert!(sp.cov2d[(0, 1)].abs() < 1e-15);
        assert_eq!(sp.mean, Vector2::new(32.0, 32.0));
    }

    #[test]
    fn culling() {
        let c = cam(32, 32, 50.0);
        assert!(project(&ball(Vec3::new(0.0, 0.0, -1.0), 0.1, 1.0, [1.0; 3]), &c).is_none());
        assert!(project(&ball(Vec3::new(0.0, 0.0, 0.005), 0.1, 1.0, [1.0; 3]), &c).is_none());
        assert!(project(&ball(Vec3::new(50.0, 0.0, 1.0), 0.01, 1.0, [1.0; 3]), &c).is_none());
    }

    #[test]
    fn empty_and_single() {
        let img = composite(&[], 4, 3);
        assert!(img.alpha.iter().all(|&a| a == 0.0));
        assert!(img.depth.iter().all(|d| d.is_infinite()));

        let c = cam(33, 33, 100.0);
        let img = render(&[ball(Vec3::new(0.0, 0.0, 2.0), 0.1, 0.6, [0.2, 0.4, 0.8])], &c);
        let i = img.index(16, 16); // center 16.5 == cx
        assert!((img.alpha[i] - 0.6).abs() < 1e-15);
        let st = img.straight(i);
        for k in 0..3 {
            assert!((st[k] - [0.2, 0.4, 0.8][k]).abs() < 1e-15);
        }
        assert!((img.depth[i] - 2.0).abs() < 1e-15);
    }
}
