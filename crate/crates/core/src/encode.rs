//! Network inputs: a ray-cast rendering of the scene with a mask channel around the
//! target (optionally a depth channel), and a force image that encodes the impact point as
//! a Gaussian blob tinted by a colour-wheel colour for the force direction and magnitude.

use serde::{Deserialize, Serialize};

use crate::quantize::VelocitySequence;
use crate::scene::{Category, ForceApplication, SceneSpec, Surface, Vec3};
use crate::{Error, Result};

/// Channel-major `channels × height × width` grid of values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Stacks the channels of several tensors of equal spatial size.
    pub fn stack(parts: &[&ImageTensor]) -> Result<ImageTensor> {
        let (h, w) = (parts[0].height, parts[0].width);
        if parts.iter().any(|p| p.height != h || p.width != w) {
            return Err(Error::Shape("cannot stack tensors of different sizes".into()));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(ImageTensor {
            channels: parts.iter().map(|p| p.channels).sum(),
            height: h,
            width: w,
            data,
        })
    }

    /// `(x, y)` of the largest value in channel `c`; ties go to the first in row-major order.
    pub fn argmax(&self, c: usize) -> (usize, usize) {
        let ch = self.channel(c);
        let mut best = 0;
        for (i, &v) in ch.iter().enumerate() {
            if v > ch[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }
}

pub const SKY_COLOR: [f64; 3] = [0.6, 0.75, 0.9];
pub const FLOOR_COLOR: [f64; 3] = [0.55, 0.55, 0.55];
pub const WALL_COLOR: [f64; 3] = [0.8, 0.8, 0.78];
pub const AMBIENT: f64 = 0.3;
/// Near plane used to normalize inverse depth.
pub const DEPTH_NEAR: f64 = 0.5;

/// Unit direction towards the single directional light.
pub fn light_direction() -> Vec3 {
    Vec3::new(0.4, 0.3, 1.0).normalized().unwrap()
}

pub fn lambert(normal: Vec3) -> f64 {
    AMBIENT + (1.0 - AMBIENT) * normal.dot(light_direction()).max(0.0)
}

/// Base colour for a category: evenly spaced hues at fixed saturation and value.
pub fn category_color(c: Category) -> [f64; 3] {
    let hue = 360.0 * c.index() as f64 / Category::ALL.len() as f64;
    hsv_to_rgb(hue, 0.7, 0.9)
}

/// HSV (hue in degrees) to RGB.
pub fn hsv_to_rgb(hue_deg: f64, s: f64, v: f64) -> [f64; 3] {
    let h = hue_deg.rem_euclid(360.0) / 60.0;
    let sector = h.floor();
    let f = h - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as i32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Hue in degrees of an RGB colour (0 for greys).
pub fn rgb_hue(rgb: [f64; 3]) -> f64 {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d <= 0.0 {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    60.0 * h
}

/// Renders RGB (and optionally normalized inverse depth as a fourth channel).
pub fn render_scene(scene: &SceneSpec, with_depth: bool) -> Result<ImageTensor> {
    let cam = &scene.camera;
    cam.validate()?;
    let (w, h) = (cam.image_width as usize, cam.image_height as usize);
    let channels = if with_depth { 4 } else { 3 };
    let mut img = ImageTensor::zeros(channels, h, w);
    let forward = cam.basis().forward;
    for y in 0..h {
        for x in 0..w {
            let ray = cam.ray_at_unit_depth(x as f64, y as f64);
            let dir = ray.normalized().unwrap();
            let (rgb, inv_depth) = match scene.cast_ray(cam.eye, dir) {
                None => (SKY_COLOR, 0.0),
                Some(hit) => {
                    let base = match hit.surface {
                        Surface::Floor => FLOOR_COLOR,
                        Surface::Wall(_) => WALL_COLOR,
                        Surface::Body(id) => category_color(scene.body(id)?.category),
                    };
                    let shade = lambert(hit.normal);
                    let depth = dir.dot(forward) * hit.t;
                    (
                        base.map(|c| c * shade),
                        (DEPTH_NEAR / depth.max(DEPTH_NEAR)).clamp(0.0, 1.0),
                    )
                }
            };
            for (c, v) in rgb.iter().enumerate() {
                img.set(c, y, x, *v);
            }
            if with_depth {
                img.set(3, y, x, inv_depth);
            }
        }
    }
    Ok(img)
}

/// Axis-aligned pixel rectangle with inclusive continuous bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox2 {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox2 {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Projected 2D bounding box of a body (corners behind the camera are ignored).
pub fn project_bbox(scene: &SceneSpec, body_id: u32) -> Result<BBox2> {
    let body = scene.body(body_id)?;
    let mut bb = BBox2 {
        x0: f64::INFINITY,
        y0: f64::INFINITY,
        x1: f64::NEG_INFINITY,
        y1: f64::NEG_INFINITY,
    };
    let mut any = false;
    for c in body.corners() {
        if let Ok(px) = scene.camera.project(c) {
            any = true;
            bb.x0 = bb.x0.min(px.u);
            bb.y0 = bb.y0.min(px.v);
            bb.x1 = bb.x1.max(px.u);
            bb.y1 = bb.y1.max(px.v);
        }
    }
    if !any {
        return Err(Error::BehindCamera(scene.camera.depth(body.position)));
    }
    Ok(bb)
}

/// Edge-normalized 1D blur of the interval indicator `[lo, hi]` over `n` pixels.
fn blurred_interval(n: usize, lo: f64, hi: f64, sigma: f64) -> Vec<f64> {
    let inside: Vec<f64> = (0..n)
        .map(|k| if (k as f64) >= lo && (k as f64) <= hi { 1.0 } else { 0.0 })
        .collect();
    (0..n)
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for (k, ind) in inside.iter().enumerate() {
                let d = i as f64 - k as f64;
                let g = (-d * d / (2.0 * sigma * sigma)).exp();
                num += g * ind;
                den += g;
            }
            num / den
        })
        .collect()
}

/// Pixel centres inside `[lo, hi]`, clipped to the image. An interval that overlaps the
/// image but falls between two centres maps to the pixel containing its midpoint.
fn covered_pixels(lo: f64, hi: f64, n: usize) -> Option<(f64, f64)> {
    let last = (n - 1) as f64;
    if hi < -0.5 || lo > last + 0.5 || lo > hi {
        return None;
    }
    let (a, b) = (lo.max(0.0).ceil(), hi.min(last).floor());
    if a <= b {
        return Some((a, b));
    }
    let c = (0.5 * (lo + hi)).round().clamp(0.0, last);
    Some((c, c))
}

/// Binary bounding-box image smoothed by an isotropic Gaussian and rescaled to peak 1.
///
/// The convolution is normalized by the kernel mass that falls inside the image, so a box
/// covering the whole frame stays at 1 everywhere. The rectangle is separable, so the 2D
/// result is the outer product of two 1D blurs.
pub fn make_mask(bbox: BBox2, width: usize, height: usize, sigma: f64) -> Result<ImageTensor> {
    if !(sigma > 0.0) {
        return Err(Error::Config("mask sigma must be > 0".into()));
    }
    let (Some((lo_x, hi_x)), Some((lo_y, hi_y))) =
        (covered_pixels(bbox.x0, bbox.x1, width), covered_pixels(bbox.y0, bbox.y1, height))
    else {
        return Err(Error::Shape(format!(
            "bounding box {bbox:?} lies outside a {width}x{height} image"
        )));
    };
    let gx = blurred_interval(width, lo_x, hi_x, sigma);
    let gy = blurred_interval(height, lo_y, hi_y, sigma);
    let peak = gx.iter().cloned().fold(0.0, f64::max) * gy.iter().cloned().fold(0.0, f64::max);
    let mut img = ImageTensor::zeros(1, height, width);
    for (y, vy) in gy.iter().enumerate() {
        for (x, vx) in gx.iter().enumerate() {
            img.set(0, y, x, vx * vy / peak);
        }
    }
    Ok(img)
}

/// Colour-wheel colour of a force: hue from the world-frame azimuth, saturation from the
/// magnitude relative to `f_max`, full value.
pub fn force_color(force: &ForceApplication, f_max: f64) -> [f64; 3] {
    let s = (force.magnitude() / f_max).min(1.0);
    hsv_to_rgb(force.azimuth().to_degrees(), s, 1.0)
}

pub fn make_force_image(
    force: &ForceApplication,
    width: usize,
    height: usize,
    sigma: f64,
    f_max: f64,
) -> Result<ImageTensor> {
    let p = force.impact_point_2d;
    if !(p.u >= 0.0 && p.v >= 0.0 && p.u <= (width - 1) as f64 && p.v <= (height - 1) as f64) {
        return Err(Error::Shape(format!(
            "impact point ({}, {}) outside {width}x{height} image",
            p.u, p.v
        )));
    }
    if !(sigma > 0.0 && f_max > 0.0) {
        return Err(Error::Config("force image needs sigma > 0 and f_max > 0".into()));
    }
    let color = force_color(force, f_max);
    let mut img = ImageTensor::zeros(3, height, width);
    for y in 0..height {
        for x in 0..width {
            let dx = x as f64 - p.u;
            let dy = y as f64 - p.v;
            let g = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            for (c, v) in color.iter().enumerate() {
                img.set(c, y, x, v * g);
            }
        }
    }
    Ok(img)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeOptions {
    pub with_depth: bool,
    pub mask_sigma: f64,
    pub force_sigma: f64,
    pub f_max: f64,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            with_depth: false,
            mask_sigma: 5.0,
            force_sigma: 5.0,
            f_max: 30.0,
        }
    }
}

impl EncodeOptions {
    pub fn image_channels(&self) -> usize {
        if self.with_depth {
            5
        } else {
            4
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub scene_seed: u64,
    pub body_id: u32,
    pub category: Category,
    pub force: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSample {
    /// R, G, B, mask (and depth) channels.
    pub rgbm: ImageTensor,
    pub force_image: ImageTensor,
    pub label: VelocitySequence,
    pub meta: SampleMeta,
}

pub fn encode_sample(
    scene: &SceneSpec,
    force: &ForceApplication,
    label: &VelocitySequence,
    options: &EncodeOptions,
) -> Result<EncodedSample> {
    let (w, h) = (
        scene.camera.image_width as usize,
        scene.camera.image_height as usize,
    );
    let render = render_scene(scene, options.with_depth)?;
    let bbox = project_bbox(scene, force.body_id)?;
    let mask = make_mask(bbox, w, h, options.mask_sigma)?;
    let rgb = ImageTensor {
        channels: 3,
        height: h,
        width: w,
        data: render.data[..3 * w * h].to_vec(),
    };
    let rgbm = if options.with_depth {
        let depth = ImageTensor {
            channels: 1,
            height: h,
            width: w,
            data: render.data[3 * w * h..].to_vec(),
        };
        ImageTensor::stack(&[&rgb, &mask, &depth])?
    } else {
        ImageTensor::stack(&[&rgb, &mask])?
    };
    let force_image = make_force_image(force, w, h, options.force_sigma, options.f_max)?;
    Ok(EncodedSample {
        rgbm,
        force_image,
        label: label.clone(),
        meta: SampleMeta {
            scene_seed: scene.seed,
            body_id: force.body_id,
            category: scene.body(force.body_id)?.category,
            force: force.force,
        },
    })
}
