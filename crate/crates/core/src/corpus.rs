//! Labeled synthetic image corpora: generation and on-disk format.
//!
//! A corpus directory holds `img_NNNNN.ppm` frames, a sidecar
//! `img_NNNNN.txt` per frame with lines `gate_id corner_idx u v visible`,
//! and a `manifest.json` with the generation seed and per-gate metadata.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Attitude, CameraModel, Pixel};
use crate::imaging::{
    Bar, ClutterSpec, ColorBounds, CornerLabel, ExposureSpec, GateLabel, GateSpec, Glare, Image,
    SceneRenderer, SceneSpec,
};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    /// Fraction of frames rendered without a gate.
    pub empty_fraction: f64,
    pub distance_min: f64,
    pub distance_max: f64,
    pub gate_side: f64,
    /// Gate yaw offset from facing the camera, uniform in +-this (deg).
    pub yaw_max_deg: f64,
    /// Camera roll and pitch, uniform in +-this (deg).
    pub tilt_max_deg: f64,
    /// Gate centers project inside this central fraction of the frame width.
    pub view_frac: f64,
    /// Gate center elevation above or below the optical axis, uniform in
    /// +-this (deg). Upright gates far off the horizon image as strong
    /// keystones that racing footage rarely shows.
    pub elevation_max_deg: f64,
    pub glare_prob: f64,
    pub glare_gain: f64,
    pub clutter: ClutterSpec,
    pub exposure: ExposureSpec,
    pub background: [u8; 3],
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            empty_fraction: 0.15,
            distance_min: 1.0,
            distance_max: 3.5,
            gate_side: 1.0,
            yaw_max_deg: 15.0,
            tilt_max_deg: 5.0,
            view_frac: 0.6,
            elevation_max_deg: 10.0,
            glare_prob: 0.2,
            glare_gain: 1.8,
            clutter: ClutterSpec {
                count: 4,
                ..ClutterSpec::default()
            },
            exposure: ExposureSpec::default(),
            background: [90, 90, 90],
        }
    }
}

impl CorpusSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.empty_fraction) {
            out.push("corpus.empty_fraction must lie in [0, 1]".into());
        }
        if !(self.distance_min > 0.0 && self.distance_min <= self.distance_max) {
            out.push(format!(
                "corpus distance range must satisfy 0 < min <= max (got {}..{})",
                self.distance_min, self.distance_max
            ));
        }
        if !(self.gate_side > 0.0) {
            out.push("corpus.gate_side must be > 0".into());
        }
        if !(self.view_frac > 0.0 && self.view_frac <= 1.0) {
            out.push("corpus.view_frac must lie in (0, 1]".into());
        }
        if !(0.0..60.0).contains(&self.elevation_max_deg) {
            out.push("corpus.elevation_max_deg must lie in [0, 60)".into());
        }
        if !(0.0..=1.0).contains(&self.glare_prob) {
            out.push("corpus.glare_prob must lie in [0, 1]".into());
        }
        if self.clutter.size_min > self.clutter.size_max {
            out.push("corpus.clutter.size_min exceeds size_max".into());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateMeta {
    pub gate_id: usize,
    /// Camera to gate center (m).
    pub distance: f64,
    pub yaw_offset_deg: f64,
    pub glare: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub file: String,
    pub seed: u64,
    pub gates: Vec<GateMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub count: usize,
    pub images: Vec<ImageMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub image: Image,
    pub labels: Vec<GateLabel>,
    pub meta: ImageMeta,
}

impl CorpusItem {
    pub fn gate_meta(&self, gate_id: usize) -> Option<&GateMeta> {
        self.meta.gates.iter().find(|g| g.gate_id == gate_id)
    }
}

fn frame_name(i: usize) -> String {
    format!("img_{i:05}")
}

/// Scene and camera attitude for frame `i`.
fn sample_frame(
    spec: &CorpusSpec,
    cam: &CameraModel,
    bounds: &ColorBounds,
    rng: &mut ChaCha8Rng,
) -> (SceneSpec, Attitude, Vec<GateMeta>) {
    let tilt = spec.tilt_max_deg.to_radians();
    let sym = |rng: &mut ChaCha8Rng, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let att = Attitude::new(
        sym(rng, tilt),
        sym(rng, tilt),
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    );
    let mut scene = SceneSpec {
        clutter: spec.clutter,
        exposure: spec.exposure,
        background: spec.background,
        target_rgb: bounds.midpoint_rgb(),
        ..SceneSpec::default()
    };
    let mut metas = Vec::new();
    if !rng.random_bool(spec.empty_fraction) {
        let margin = 0.5 * (1.0 - spec.view_frac);
        let u = rng.random_range(margin..=1.0 - margin) * cam.width as f64;
        let ideal_u = cam.undistort_pixel(&Pixel::new(u, cam.cy)).x;
        let elevation = sym(rng, spec.elevation_max_deg).to_radians();
        let v = cam.cy + cam.fy * elevation.tan();
        let ray = cam.camera_to_earth(&att)
            * cam.bearing_from_pixel(&Pixel::new(ideal_u, v)).normalize();
        let d = rng.random_range(spec.distance_min..=spec.distance_max);
        let yaw_off = sym(rng, spec.yaw_max_deg);
        let center: Vector3<f64> = ray * d;
        let yaw = ray.y.atan2(ray.x) + yaw_off.to_radians();
        let mut gate = GateSpec::new(center, yaw, spec.gate_side, bounds.midpoint_rgb());
        let glare = rng.random_bool(spec.glare_prob);
        if glare {
            let bar = [Bar::Left, Bar::Right, Bar::Top, Bar::Bottom][rng.random_range(0..4)];
            let from = rng.random_range(0.0..0.6);
            let len = rng.random_range(0.2..0.4);
            gate.glare.push(Glare {
                bar,
                from,
                to: from + len,
                gain: spec.glare_gain,
            });
        }
        scene.gates.push(gate);
        metas.push(GateMeta {
            gate_id: 0,
            distance: d,
            yaw_offset_deg: yaw_off,
            glare,
        });
    }
    (scene, att, metas)
}

/// Render `n` labeled frames. Frame `i` depends only on `(seed, i)`.
pub fn generate_corpus(
    spec: &CorpusSpec,
    cam: &CameraModel,
    bounds: &ColorBounds,
    n: usize,
    seed: u64,
) -> Vec<CorpusItem> {
    let renderer = SceneRenderer::new(cam);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (scene, att, gates) = sample_frame(spec, cam, bounds, &mut rng);
            let render_seed: u64 = rng.random();
            let (image, labels) = renderer.render(&scene, &Vector3::zeros(), &att, render_seed);
            CorpusItem {
                image,
                labels,
                meta: ImageMeta {
                    file: format!("{}.ppm", frame_name(i)),
                    seed: render_seed,
                    gates,
                },
            }
        })
        .collect()
}

pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&img.pixels, img.width, img.height, ExtendedColorType::Rgb8)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = decoded.dimensions();
    Ok(Image::from_raw(w, h, decoded.into_raw()).expect("decoder returns w*h*3 bytes"))
}

pub fn format_labels(labels: &[GateLabel]) -> String {
    let mut s = String::new();
    for l in labels {
        for (k, c) in l.corners.iter().enumerate() {
            let _ = writeln!(
                s,
                "{} {} {:.4} {:.4} {}",
                l.gate_id,
                k,
                c.px.x,
                c.px.y,
                u8::from(c.visible)
            );
        }
    }
    s
}

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<GateLabel>> {
    let err = |line: usize, msg: &str| Error::Corpus {
        path: path.to_path_buf(),
        msg: format!("line {line}: {msg}"),
    };
    let mut out: Vec<(usize, [Option<CornerLabel>; 4])> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(err(n + 1, "expected `gate_id corner_idx u v visible`"));
        }
        let gate_id: usize = f[0].parse().map_err(|_| err(n + 1, "bad gate_id"))?;
        let k: usize = f[1].parse().map_err(|_| err(n + 1, "bad corner_idx"))?;
        if k > 3 {
            return Err(err(n + 1, "corner_idx must be 0..=3"));
        }
        let u: f64 = f[2].parse().map_err(|_| err(n + 1, "bad u"))?;
        let v: f64 = f[3].parse().map_err(|_| err(n + 1, "bad v"))?;
        let visible = match f[4] {
            "0" => false,
            "1" => true,
            _ => return Err(err(n + 1, "visible must be 0 or 1")),
        };
        let idx = match out.iter().position(|(g, _)| *g == gate_id) {
            Some(i) => i,
            None => {
                out.push((gate_id, [None; 4]));
                out.len() - 1
            }
        };
        out[idx].1[k] = Some(CornerLabel {
            px: Pixel::new(u, v),
            visible,
        });
    }
    out.into_iter()
        .map(|(gate_id, c)| {
            if c.iter().any(Option::is_none) {
                return Err(Error::Corpus {
                    path: path.to_path_buf(),
                    msg: format!("gate {gate_id} does not list all four corners"),
                });
            }
            Ok(GateLabel {
                gate_id,
                corners: c.map(Option::unwrap),
            })
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write frames, sidecars and the manifest into `dir`, creating it if needed.
pub fn write_corpus(items: &[CorpusItem], seed: u64, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    items.par_iter().try_for_each(|item| {
        let ppm = dir.join(&item.meta.file);
        write_ppm(&item.image, &ppm)?;
        write_text(&ppm.with_extension("txt"), &format_labels(&item.labels))
    })?;
    let manifest = Manifest {
        seed,
        count: items.len(),
        images: items.iter().map(|i| i.meta.clone()).collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&dir.join(MANIFEST_FILE), &(json + "\n"))
}

/// Load every `.ppm` frame in `dir` (sorted by name) with its sidecar.
/// Metadata comes from the manifest when one is present.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusItem>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    frames.sort();

    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Option<Manifest> = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        Some(serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: manifest_path.clone(),
            msg: e.to_string(),
        })?)
    } else {
        None
    };

    frames
        .par_iter()
        .map(|ppm| {
            let sidecar = ppm.with_extension("txt");
            if !sidecar.exists() {
                return Err(Error::Corpus {
                    path: sidecar,
                    msg: "missing label sidecar".into(),
                });
            }
            let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            let labels = parse_labels(&text, &sidecar)?;
            let image = read_ppm(ppm)?;
            let file = ppm
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default();
            let meta = manifest
                .as_ref()
                .and_then(|m| m.images.iter().find(|i| i.file == file).cloned())
                .unwrap_or(ImageMeta {
                    file,
                    seed: 0,
                    gates: Vec::new(),
                });
            Ok(CorpusItem {
                image,
                labels,
                meta,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        let labels = vec![GateLabel {
            gate_id: 2,
            corners: [
                CornerLabel { px: Pixel::new(1.5, 2.25), visible: true },
                CornerLabel { px: Pixel::new(10.0, 2.0), visible: true },
                CornerLabel { px: Pixel::new(1.0, 20.0), visible: false },
                CornerLabel { px: Pixel::new(f64::NAN, f64::NAN), visible: false },
            ],
        }];
        let text = format_labels(&labels);
        let back = parse_labels(&text, Path::new("x.txt")).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].corners[0], labels[0].corners[0]);
        assert!(back[0].corners[3].px.x.is_nan());
    }

    #[test]
    fn parse_rejects_incomplete_gate() {
        let e = parse_labels("0 0 1 2 1\n", Path::new("f.txt")).unwrap_err();
        assert!(e.to_string().contains("f.txt"));
    }

    #[test]
    fn generation_is_deterministic_and_indexed() {
        let cam = CameraModel::default();
        let b = ColorBounds::default();
        let spec = CorpusSpec::default();
        let a = generate_corpus(&spec, &cam, &b, 3, 11);
        let c = generate_corpus(&spec, &cam, &b, 5, 11);
        assert_eq!(a[..], c[..3]);
        assert_ne!(a[0].image, generate_corpus(&spec, &cam, &b, 1, 12)[0].image);
    }
}
