//! Sphere/frame geometry for equirectangular frames.

use nalgebra::Vector3;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::wavelet::BitGrid;

/// Head orientation and field of view, all in degrees.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraPose {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub fov_h: f64,
    pub fov_v: f64,
}

impl Default for CameraPose {
    fn default() -> Self {
        Self {
            yaw: 0.0,
            pitch: 0.0,
            roll: 0.0,
            fov_h: 90.0,
            fov_v: 90.0,
        }
    }
}

impl CameraPose {
    pub fn new(yaw: f64, pitch: f64, roll: f64, fov_h: f64, fov_v: f64) -> Result<Self> {
        let pose = Self {
            yaw,
            pitch,
            roll,
            fov_h,
            fov_v,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// The whole sphere.
    pub fn full_sphere() -> Self {
        Self {
            fov_h: 360.0,
            fov_v: 180.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPose(m));
        if ![self.yaw, self.pitch, self.roll, self.fov_h, self.fov_v]
            .iter()
            .all(|v| v.is_finite())
        {
            return bad("non-finite angle".into());
        }
        if !(self.fov_h > 0.0 && self.fov_h <= 360.0) {
            return bad(format!("fov_h {} outside (0, 360]", self.fov_h));
        }
        if !(self.fov_v > 0.0 && self.fov_v <= 180.0) {
            return bad(format!("fov_v {} outside (0, 180]", self.fov_v));
        }
        if !(-90.0..=90.0).contains(&self.pitch) {
            return bad(format!("pitch {} outside [-90, 90]", self.pitch));
        }
        Ok(())
    }

    fn wide(&self) -> bool {
        self.fov_h >= 180.0 || self.fov_v >= 180.0
    }

    /// Right, up and forward unit vectors in world space.
    pub fn basis(&self) -> [Vector3<f64>; 3] {
        let (yaw, roll) = (self.yaw.to_radians(), self.roll.to_radians());
        let f = sphere_direction(self.yaw, self.pitch);
        let r = Vector3::new(yaw.cos(), 0.0, -yaw.sin());
        let u = f.cross(&r);
        let (s, c) = roll.sin_cos();
        [r * c + u * s, u * c - r * s, f]
    }

    /// Azimuth/elevation test of a world direction against the half-FOVs,
    /// widened by `margin` degrees.
    fn sees(&self, basis: &[Vector3<f64>; 3], d: &Vector3<f64>, margin: f64) -> bool {
        let (cx, cy, cz) = (d.dot(&basis[0]), d.dot(&basis[1]), d.dot(&basis[2]));
        let az = cx.atan2(cz).to_degrees();
        let el = cy.atan2(cx.hypot(cz)).to_degrees();
        (self.fov_h >= 360.0 || az.abs() <= self.fov_h / 2.0 + margin)
            && el.abs() <= self.fov_v / 2.0 + margin
    }
}

/// Unit vector for longitude/latitude in degrees; +z is longitude 0,
/// +y the north pole.
pub fn sphere_direction(lon: f64, lat: f64) -> Vector3<f64> {
    let (lon, lat) = (lon.to_radians(), lat.to_radians());
    Vector3::new(lat.cos() * lon.sin(), lat.sin(), lat.cos() * lon.cos())
}

/// Equirectangular threshold boost `1 - sin(y*pi/S_y)`.
pub fn mapping_factor(y: f64, height: f64) -> f64 {
    (1.0 - (y * PI / height).sin()).clamp(0.0, 1.0)
}

/// Per-row mapping factors of a frame; stereo frames repeat the profile
/// for each eye.
pub fn mapping_factors(height: usize, stereo: bool) -> Vec<f32> {
    let eye = if stereo { height / 2 } else { height };
    (0..height)
        .map(|y| mapping_factor((y % eye) as f64, eye as f64) as f32)
        .collect()
}

/// Direction through continuous frame position `(x, y)`.
pub fn direction_of_pixel(x: f64, y: f64, dims: (usize, usize)) -> Vector3<f64> {
    let lon = x / dims.0 as f64 * 360.0 - 180.0;
    let lat = 90.0 - y / dims.1 as f64 * 180.0;
    sphere_direction(lon, lat)
}

/// Continuous frame position of a world direction (inverse of
/// [`direction_of_pixel`]).
pub fn pixel_of_direction(d: &Vector3<f64>, dims: (usize, usize)) -> (f64, f64) {
    let lon = d.x.atan2(d.z).to_degrees();
    let lat = d.y.clamp(-1.0, 1.0).asin().to_degrees();
    (
        (lon + 180.0) / 360.0 * dims.0 as f64,
        (90.0 - lat) / 180.0 * dims.1 as f64,
    )
}

/// Low-resolution binary grid of the frame regions a pose can see. Stereo
/// masks hold the left eye on top of the right.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewportMask {
    pub grid: BitGrid,
    pub stereo: bool,
}

impl ViewportMask {
    pub fn full(dims: (usize, usize), stereo: bool) -> Self {
        Self {
            grid: BitGrid::filled(dims.0, dims.1),
            stereo,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    /// Fraction of mask cells set.
    pub fn coverage(&self) -> f64 {
        self.grid.count() as f64 / (self.grid.width * self.grid.height) as f64
    }

    /// The mask blown up to a frame of `frame_dims`.
    pub fn to_frame(&self, frame_dims: (usize, usize)) -> Result<BitGrid> {
        let (w, h) = self.dims();
        if w == 0 || h == 0 || frame_dims.0 % w != 0 || frame_dims.1 % h != 0 {
            return Err(Error::Shape(format!(
                "mask {w}x{h} does not divide frame {}x{}",
                frame_dims.0, frame_dims.1
            )));
        }
        Ok(self.grid.upscale(frame_dims.0 / w, frame_dims.1 / h))
    }
}

/// Marks the mask cells that overlap the pose's field of view, then grows the result by one cell (wrapping in
/// longitude). A pole row is filled whole once the pole comes within a cell
/// of the view.
pub fn viewport_to_mask(
    pose: &CameraPose,
    dims: (usize, usize),
    stereo: bool,
) -> Result<ViewportMask> {
    pose.validate()?;
    let (w, h) = dims;
    let eye_h = if stereo { h / 2 } else { h };
    if w == 0 || eye_h == 0 || (stereo && h % 2 != 0) {
        return Err(Error::Shape(format!("mask {w}x{h}")));
    }
    let basis = pose.basis();
    // Corner, edge-midpoint and center samples; equirectangular distortion
    // near the poles makes center-only tests miss slivers of the view.
    let mut eye = BitGrid::from_fn(w, eye_h, |x, y| {
        (0..3).any(|j| {
            (0..3).any(|i| {
                let d = direction_of_pixel(
                    x as f64 + i as f64 * 0.5,
                    y as f64 + j as f64 * 0.5,
                    (w, eye_h),
                );
                pose.sees(&basis, &d, 0.0)
            })
        })
    });
    eye = dilate_wrapped(&eye);
    let cell = 180.0 / eye_h as f64;
    for (row, pole) in [(0, Vector3::y()), (eye_h - 1, -Vector3::y())] {
        if pose.sees(&basis, &pole, cell) {
            for x in 0..w {
                eye.set(x, row, true);
            }
        }
    }
    let grid = if stereo {
        BitGrid::from_fn(w, h, |x, y| eye.get(x, y % eye_h))
    } else {
        eye
    };
    Ok(ViewportMask { grid, stereo })
}

// One-cell Chebyshev dilation, circular in x and clamped in y.
fn dilate_wrapped(g: &BitGrid) -> BitGrid {
    let (w, h) = g.dims();
    BitGrid::from_fn(w, h, |x, y| {
        (y.saturating_sub(1)..(y + 2).min(h)).any(|yy| {
            [(x + w - 1) % w, x, (x + 1) % w]
                .iter()
                .any(|&xx| g.get(xx, yy))
        })
    })
}

/// Re-projects an equirectangular frame into the pose's view. Narrow views
/// use a pinhole camera; views of 180 degrees or more are sampled
/// equiangularly. Samples touching pixels outside `footprint` fail with
/// [`Error::Coverage`].
pub fn render_perspective(
    region: &Frame,
    footprint: &BitGrid,
    pose: &CameraPose,
    out_dims: (usize, usize),
) -> Result<Frame> {
    render_eye(region, footprint, pose, out_dims, 0, 1)
}

/// [`render_perspective`] for eye `eye` of a frame stacking `eyes` views
/// top to bottom.
pub fn render_eye(
    region: &Frame,
    footprint: &BitGrid,
    pose: &CameraPose,
    out_dims: (usize, usize),
    eye: usize,
    eyes: usize,
) -> Result<Frame> {
    pose.validate()?;
    if footprint.dims() != (region.width, region.height) {
        return Err(Error::Shape(format!(
            "footprint {:?} for a {}x{} region",
            footprint.dims(),
            region.width,
            region.height
        )));
    }
    if eyes == 0 || eye >= eyes || region.height % eyes != 0 {
        return Err(Error::Shape(format!("eye {eye} of {eyes}")));
    }
    let (ow, oh) = out_dims;
    if ow == 0 || oh == 0 {
        return Err(Error::Shape("empty output".into()));
    }
    let (n, m) = (region.width, region.height / eyes);
    let row0 = eye * m;
    let basis = pose.basis();
    let c = region.channels;
    let mut out = Frame::new(ow, oh, c);
    let (th, tv) = (
        (pose.fov_h / 2.0).to_radians().tan(),
        (pose.fov_v / 2.0).to_radians().tan(),
    );
    let mut px = vec![0.0f64; c];
    for j in 0..oh {
        for i in 0..ow {
            let u = (i as f64 + 0.5) / ow as f64;
            let v = (j as f64 + 0.5) / oh as f64;
            let cam = if pose.wide() {
                let az = ((u - 0.5) * pose.fov_h).to_radians();
                let el = ((0.5 - v) * pose.fov_v).to_radians();
                Vector3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos())
            } else {
                Vector3::new((2.0 * u - 1.0) * th, (1.0 - 2.0 * v) * tv, 1.0).normalize()
            };
            let d = basis[0] * cam.x + basis[1] * cam.y + basis[2] * cam.z;
            let (x, y) = pixel_of_direction(&d, (n, m));
            sample_bilinear(region, footprint, x - 0.5, y - 0.5, (n, m), row0, &mut px)?;
            for (dst, v) in out.pixel_mut(i, j).iter_mut().zip(&px) {
                *dst = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(out)
}

fn sample_bilinear(
    region: &Frame,
    footprint: &BitGrid,
    x: f64,
    y: f64,
    (n, m): (usize, usize),
    row0: usize,
    out: &mut [f64],
) -> Result<()> {
    let (fx, fy) = (x.floor(), y.floor());
    let (ax, ay) = (x - fx, y - fy);
    let x0 = (fx as i64).rem_euclid(n as i64) as usize;
    let x1 = (x0 + 1) % n;
    let y0 = (fy as i64).clamp(0, m as i64 - 1) as usize;
    let y1 = (fy as i64 + 1).clamp(0, m as i64 - 1) as usize;
    out.iter_mut().for_each(|v| *v = 0.0);
    for (xx, yy, wgt) in [
        (x0, y0, (1.0 - ax) * (1.0 - ay)),
        (x1, y0, ax * (1.0 - ay)),
        (x0, y1, (1.0 - ax) * ay),
        (x1, y1, ax * ay),
    ] {
        if wgt == 0.0 {
            continue;
        }
        let yy = row0 + yy;
        if !footprint.get(xx, yy) {
            return Err(Error::Coverage { x: xx, y: yy });
        }
        for (o, &p) in out.iter_mut().zip(region.pixel(xx, yy)) {
            *o += wgt * p as f64;
        }
    }
    Ok(())
}
