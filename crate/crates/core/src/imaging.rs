//! Image buffers, target-color classification and the synthetic gate renderer.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{Attitude, CameraModel, Pixel};
use crate::pose::GateGeometry;

/// Row-major 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Option<Self> {
        (pixels.len() == width as usize * height as usize * 3).then_some(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    /// Fill the axis-aligned rectangle `[x0, x1) x [y0, y1)`, clipped to the image.
    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [u8; 3]) {
        let xa = x0.max(0) as u32;
        let ya = y0.max(0) as u32;
        let xb = x1.min(self.width as i64).max(0) as u32;
        let yb = y1.min(self.height as i64).max(0) as u32;
        for y in ya..yb {
            for x in xa..xb {
                self.set(x, y, rgb);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    #[default]
    #[serde(rename = "ycbcr")]
    YCbCr,
}

/// Full-range BT.601 RGB -> Y'CbCr.
pub fn rgb_to_ycbcr(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(f64::from);
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b,
        128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b,
    ]
}

pub fn ycbcr_to_rgb(ycc: [f64; 3]) -> [u8; 3] {
    let [y, cb, cr] = ycc;
    let r = y + 1.402 * (cr - 128.0);
    let g = y - 0.344136 * (cb - 128.0) - 0.714136 * (cr - 128.0);
    let b = y + 1.772 * (cb - 128.0);
    [r, g, b].map(|c| c.round().clamp(0.0, 255.0) as u8)
}

/// Per-channel inclusive band in a chosen color space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorBounds {
    #[serde(default)]
    pub space: ColorSpace,
    pub min: [u8; 3],
    pub max: [u8; 3],
}

impl Default for ColorBounds {
    /// Orange band in Y'CbCr.
    fn default() -> Self {
        Self {
            space: ColorSpace::YCbCr,
            min: [50, 0, 165],
            max: [230, 110, 255],
        }
    }
}

impl ColorBounds {
    pub fn violations(&self) -> Vec<String> {
        (0..3)
            .filter(|&c| self.min[c] > self.max[c])
            .map(|c| {
                format!(
                    "color bounds channel {c}: min {} exceeds max {}",
                    self.min[c], self.max[c]
                )
            })
            .collect()
    }

    pub fn contains(&self, rgb: [u8; 3]) -> bool {
        match self.space {
            ColorSpace::Rgb => (0..3).all(|c| rgb[c] >= self.min[c] && rgb[c] <= self.max[c]),
            ColorSpace::YCbCr => {
                let ycc = rgb_to_ycbcr(rgb);
                (0..3).all(|c| ycc[c] >= self.min[c] as f64 && ycc[c] <= self.max[c] as f64)
            }
        }
    }

    /// RGB color at the center of the band.
    pub fn midpoint_rgb(&self) -> [u8; 3] {
        let mid: [f64; 3] =
            std::array::from_fn(|c| 0.5 * (self.min[c] as f64 + self.max[c] as f64));
        match self.space {
            ColorSpace::Rgb => mid.map(|c| c.round() as u8),
            ColorSpace::YCbCr => ycbcr_to_rgb(mid),
        }
    }
}

/// Target-color predicate; probes outside the image are never target.
#[inline]
pub fn classify_pixel(img: &Image, x: i64, y: i64, bounds: &ColorBounds) -> bool {
    img.contains(x, y) && bounds.contains(img.get(x as u32, y as u32))
}

/// Per-pixel classification of a whole image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorMask {
    pub width: u32,
    pub height: u32,
    pub mask: Vec<bool>,
}

impl ColorMask {
    pub fn new(img: &Image, bounds: &ColorBounds) -> Self {
        let mask = img
            .pixels
            .chunks_exact(3)
            .map(|p| bounds.contains([p[0], p[1], p[2]]))
            .collect();
        Self {
            width: img.width,
            height: img.height,
            mask,
        }
    }

    #[inline]
    pub fn at(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && x < self.width as i64
            && y < self.height as i64
            && self.mask[y as usize * self.width as usize + x as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bar {
    Left,
    Right,
    Top,
    Bottom,
}

/// A stretch of one bar rendered with a fixed brightness gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Glare {
    pub bar: Bar,
    /// Start and end as fractions along the bar (left-to-right or top-to-bottom).
    pub from: f64,
    pub to: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub center: [f64; 3],
    pub yaw: f64,
    pub side: f64,
    pub bar_width: f64,
    pub color: [u8; 3],
    #[serde(default)]
    pub glare: Vec<Glare>,
}

impl GateSpec {
    pub fn new(center: Vector3<f64>, yaw: f64, side: f64, color: [u8; 3]) -> Self {
        Self {
            center: center.into(),
            yaw,
            side,
            bar_width: 0.1 * side,
            color,
            glare: Vec::new(),
        }
    }

    pub fn geometry(&self) -> GateGeometry {
        GateGeometry::from_placement(Vector3::from(self.center), self.yaw, self.side)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClutterSpec {
    pub count: usize,
    pub size_min: u32,
    pub size_max: u32,
    /// Probability that a clutter block takes the target color.
    pub near_target_prob: f64,
}

impl Default for ClutterSpec {
    fn default() -> Self {
        Self {
            count: 0,
            size_min: 3,
            size_max: 20,
            near_target_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExposureSpec {
    /// Range of the per-bar brightness gain.
    pub gain_min: f64,
    pub gain_max: f64,
    /// Std-dev of additive per-channel pixel noise.
    pub noise_sigma: f64,
}

impl Default for ExposureSpec {
    fn default() -> Self {
        Self {
            gain_min: 0.85,
            gain_max: 1.15,
            noise_sigma: 4.0,
        }
    }
}

impl ExposureSpec {
    pub const CLEAN: ExposureSpec = ExposureSpec {
        gain_min: 1.0,
        gain_max: 1.0,
        noise_sigma: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub gates: Vec<GateSpec>,
    #[serde(default)]
    pub clutter: ClutterSpec,
    #[serde(default)]
    pub exposure: ExposureSpec,
    pub background: [u8; 3],
    /// Color of near-target clutter.
    pub target_rgb: [u8; 3],
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            gates: Vec::new(),
            clutter: ClutterSpec::default(),
            exposure: ExposureSpec::CLEAN,
            background: [90, 90, 90],
            target_rgb: ColorBounds::default().midpoint_rgb(),
        }
    }
}

impl SceneSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, g) in self.gates.iter().enumerate() {
            if !(g.side > 0.0) {
                out.push(format!("gate {i}: side must be > 0 (got {})", g.side));
            }
            if !(g.bar_width > 0.0 && g.bar_width < g.side / 2.0) {
                out.push(format!(
                    "gate {i}: bar width must lie in (0, side/2) (got {})",
                    g.bar_width
                ));
            }
        }
        if self.clutter.size_min > self.clutter.size_max {
            out.push("clutter.size_min exceeds clutter.size_max".into());
        }
        if self.exposure.gain_min > self.exposure.gain_max {
            out.push("exposure.gain_min exceeds exposure.gain_max".into());
        }
        out
    }
}

/// Brightness gain: darkens by scaling below 1, washes toward white above 1.
pub fn apply_gain(rgb: [u8; 3], gain: f64) -> [u8; 3] {
    rgb.map(|c| {
        let c = c as f64;
        let out = if gain <= 1.0 {
            c * gain.max(0.0)
        } else {
            c + (255.0 - c) * (gain - 1.0).min(1.0)
        };
        out.round().clamp(0.0, 255.0) as u8
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerLabel {
    /// Raw pixel; NaN when the corner is behind the camera.
    pub px: Pixel,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateLabel {
    pub gate_id: usize,
    /// Top-left, top-right, bottom-left, bottom-right.
    pub corners: [CornerLabel; 4],
}

impl GateLabel {
    pub fn fully_visible(&self) -> bool {
        self.corners.iter().all(|c| c.visible)
    }
}

pub type GroundTruthLabels = Vec<GateLabel>;

/// Renderer with a cached per-pixel camera-frame ray table.
#[derive(Debug, Clone)]
pub struct SceneRenderer {
    cam: CameraModel,
    rays: Vec<Vector3<f64>>,
}

struct PreparedGate {
    center: Vector3<f64>,
    normal: Vector3<f64>,
    right: Vector3<f64>,
    down: Vector3<f64>,
    half: f64,
    half_bar: f64,
    side: f64,
    bar_rgb: [[u8; 3]; 4],
    glare: Vec<Glare>,
    base_rgb: [u8; 3],
}

impl PreparedGate {
    /// Color of the gate frame at local coordinates, if the point is on a bar.
    fn shade(&self, a: f64, b: f64) -> Option<[u8; 3]> {
        let outer = self.half + self.half_bar;
        let inner = self.half - self.half_bar;
        if a.abs() > outer || b.abs() > outer || (a.abs() < inner && b.abs() < inner) {
            return None;
        }
        let (bar, t) = if (a + self.half).abs() <= self.half_bar {
            (Bar::Left, (b + self.half) / self.side)
        } else if (a - self.half).abs() <= self.half_bar {
            (Bar::Right, (b + self.half) / self.side)
        } else if (b + self.half).abs() <= self.half_bar {
            (Bar::Top, (a + self.half) / self.side)
        } else {
            (Bar::Bottom, (a + self.half) / self.side)
        };
        for g in &self.glare {
            if g.bar == bar && t >= g.from && t <= g.to {
                return Some(apply_gain(self.base_rgb, g.gain));
            }
        }
        Some(self.bar_rgb[bar as usize])
    }
}

impl SceneRenderer {
    pub fn new(cam: &CameraModel) -> Self {
        let mut rays = Vec::with_capacity(cam.width as usize * cam.height as usize);
        for y in 0..cam.height {
            for x in 0..cam.width {
                rays.push(cam.bearing_from_raw_pixel(&Pixel::new(x as f64, y as f64)));
            }
        }
        Self {
            cam: cam.clone(),
            rays,
        }
    }

    pub fn camera(&self) -> &CameraModel {
        &self.cam
    }

    /// Render the scene from a body pose; the camera sits at the body origin.
    pub fn render(
        &self,
        scene: &SceneSpec,
        position: &Vector3<f64>,
        att: &Attitude,
        seed: u64,
    ) -> (Image, GroundTruthLabels) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cam = &self.cam;
        let mut img = Image::filled(cam.width, cam.height, scene.background);

        for _ in 0..scene.clutter.count {
            let w = rng.random_range(scene.clutter.size_min..=scene.clutter.size_max) as i64;
            let h = rng.random_range(scene.clutter.size_min..=scene.clutter.size_max) as i64;
            let x0 = rng.random_range(0..cam.width as i64);
            let y0 = rng.random_range(0..cam.height as i64);
            let rgb = if rng.random_bool(scene.clutter.near_target_prob.clamp(0.0, 1.0)) {
                scene.target_rgb
            } else {
                loop {
                    let c: [u8; 3] = [rng.random(), rng.random(), rng.random()];
                    if rgb_to_ycbcr(c)[2] < 150.0 {
                        break c;
                    }
                }
            };
            img.fill_rect(x0, y0, x0 + w, y0 + h, rgb);
        }

        let r_ce = cam.camera_to_earth(att);
        let prepared: Vec<PreparedGate> = scene
            .gates
            .iter()
            .map(|g| {
                let geo = g.geometry();
                let bar_rgb = std::array::from_fn(|_| {
                    let gain = if scene.exposure.gain_max > scene.exposure.gain_min {
                        rng.random_range(scene.exposure.gain_min..=scene.exposure.gain_max)
                    } else {
                        scene.exposure.gain_min
                    };
                    apply_gain(g.color, gain)
                });
                PreparedGate {
                    center: geo.center(),
                    normal: geo.normal(),
                    right: geo.right(),
                    down: Vector3::z(),
                    half: 0.5 * g.side,
                    half_bar: 0.5 * g.bar_width,
                    side: g.side,
                    bar_rgb,
                    glare: g.glare.clone(),
                    base_rgb: g.color,
                }
            })
            .collect();

        if !prepared.is_empty() {
            self.draw_gates(&mut img, &prepared, position, &r_ce);
        }

        if scene.exposure.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, scene.exposure.noise_sigma).expect("finite sigma");
            for c in img.pixels.iter_mut() {
                let v = *c as f64 + normal.sample(&mut rng);
                *c = v.round().clamp(0.0, 255.0) as u8;
            }
        }

        let labels = label_gates(cam, scene, position, &r_ce);
        (img, labels)
    }

    fn draw_gates(
        &self,
        img: &mut Image,
        gates: &[PreparedGate],
        position: &Vector3<f64>,
        r_ce: &Matrix3<f64>,
    ) {
        let w = self.cam.width as usize;
        for (i, ray_c) in self.rays.iter().enumerate() {
            let ray = r_ce * ray_c;
            let mut best: Option<(f64, [u8; 3])> = None;
            for g in gates {
                let denom = g.normal.dot(&ray);
                if denom.abs() < 1e-12 {
                    continue;
                }
                let lambda = g.normal.dot(&(g.center - position)) / denom;
                if !(lambda > 0.0) || best.is_some_and(|(l, _)| l <= lambda) {
                    continue;
                }
                let q = position + ray * lambda - g.center;
                if let Some(rgb) = g.shade(g.right.dot(&q), g.down.dot(&q)) {
                    best = Some((lambda, rgb));
                }
            }
            if let Some((_, rgb)) = best {
                img.set((i % w) as u32, (i / w) as u32, rgb);
            }
        }
    }
}

/// Exact raw-pixel corner labels for every gate with at least one corner in view.
pub fn label_gates(
    cam: &CameraModel,
    scene: &SceneSpec,
    position: &Vector3<f64>,
    r_ce: &Matrix3<f64>,
) -> GroundTruthLabels {
    let r_ec = r_ce.transpose();
    scene
        .gates
        .iter()
        .enumerate()
        .filter_map(|(gate_id, g)| {
            let corners = g.geometry().corners.map(|p| {
                let pc = r_ec * (p - position);
                match cam.project_unbounded(&pc) {
                    Some(px) => CornerLabel {
                        px,
                        visible: cam.in_image(&px),
                    },
                    None => CornerLabel {
                        px: Pixel::new(f64::NAN, f64::NAN),
                        visible: false,
                    },
                }
            });
            corners
                .iter()
                .any(|c| c.visible)
                .then_some(GateLabel { gate_id, corners })
        })
        .collect()
}

/// Render a scene from a body pose. Deterministic in `seed`.
pub fn render_scene(
    scene: &SceneSpec,
    position: &Vector3<f64>,
    att: &Attitude,
    cam: &CameraModel,
    seed: u64,
) -> (Image, GroundTruthLabels) {
    SceneRenderer::new(cam).render(scene, position, att, seed)
}
