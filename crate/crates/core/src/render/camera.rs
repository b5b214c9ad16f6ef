use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{Mat3, RotationMatrix, Vec3};

/// Pinhole camera, OpenCV axes: x right, y down, looking along +z.
/// `p_cam = rotation · p_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub rotation: RotationMatrix,
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        rotation: RotationMatrix,
        translation: Vec3,
        [fx, fy]: [f64; 2],
        [cx, cy]: [f64; 2],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self { rotation, translation, fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidCamera(format!("focal lengths ({}, {}) must be positive", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera(format!("image size {}x{}", self.width, self.height)));
        }
        if !(self.cx.is_finite() && self.cy.is_finite() && self.translation.iter().all(|t| t.is_finite())) {
            return Err(Error::InvalidCamera("non-finite principal point or translation".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` points toward image top.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Result<Self> {
        let z = target - eye;
        let x = z.cross(&up);
        if z.norm() == 0.0 || x.norm() < 1e-12 * z.norm() * up.norm() {
            return Err(Error::InvalidCamera("degenerate look-at frame".into()));
        }
        let z = z.normalize();
        let x = x.normalize();
        let y = z.cross(&x);
        let r = RotationMatrix::new(Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]))?;
        let t = -r.rotate(&eye);
        Self::new(r, t, [focal, focal], [width as f64 / 2.0, height as f64 / 2.0], width, height)
    }

    pub fn to_camera_frame(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    /// World position of the optical center.
    pub fn center(&self) -> Vec3 {
        -self.rotation.inverse().rotate(&self.translation)
    }
}

/// On-disk camera: either explicit extrinsics or a look-at frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
    /// Row-major world-to-camera rotation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eye: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub up: Option<[f64; 3]>,
}

impl CameraSpec {
    pub fn build(&self) -> Result<Camera> {
        let fy = self.fy.unwrap_or(self.fx);
        let cx = self.cx.unwrap_or(self.width as f64 / 2.0);
        let cy = self.cy.unwrap_or(self.height as f64 / 2.0);
        let (rotation, translation) = match (self.rotation, self.translation, self.eye, self.target) {
            (Some(r), t, None, None) => {
                let m = Mat3::from_fn(|i, j| r[i][j]);
                (RotationMatrix::new(m)?, Vec3::from(t.unwrap_or([0.0; 3])))
            }
            (None, None, Some(eye), Some(target)) => {
                let up = Vec3::from(self.up.unwrap_or([0.0, 0.0, 1.0]));
                let c = Camera::look_at(Vec3::from(eye), Vec3::from(target), up, self.fx, self.width, self.height)?;
                (c.rotation, c.translation)
            }
            (None, None, None, None) => (RotationMatrix::identity(), Vec3::zeros()),
            _ => {
                return Err(Error::InvalidCamera("give either rotation/translation or eye/target/up, not a mix".into()))
            }
        };
        Camera::new(rotation, translation, [self.fx, fy], [cx, cy], self.width, self.height)
    }

    pub fn from_camera(c: &Camera) -> Self {
        let m = c.rotation.matrix();
        Self {
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: Some(c.fy),
            cx: Some(c.cx),
            cy: Some(c.cy),
            rotation: Some([0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]])),
            translation: Some(c.translation.into()),
            eye: None,
            target: None,
            up: None,
        }
    }
}

pub fn parse_camera(text: &str, origin: &str) -> Result<Camera> {
    let spec: CameraSpec = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
    spec.build()
}

pub fn load_camera(path: impl AsRef<Path>) -> Result<Camera> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_camera(&text, &path.display().to_string())
}

pub fn format_camera(c: &Camera) -> String {
    toml::to_string(&CameraSpec::from_camera(c)).expect("camera spec serializes")
}
