use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mot::MotRow;
use crate::assoc_net::{BoundingBox, EmbeddingTable};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

const MAX_ATTEMPTS: usize = 2000;

/// How object trajectories are arranged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Independent straight paths.
    Random,
    /// Objects paired up so that each pair meets at one point mid-sequence.
    Crossing,
    /// Objects paired up on parallel paths `twin_offset` pixels apart.
    Twins,
}

/// Parameters of a synthetic scene. Every field has a default, so a config
/// file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    /// Number of independent sequences generated from `seed`.
    pub sequences: usize,
    pub num_objects: usize,
    pub num_frames: usize,
    pub width: f64,
    pub height: f64,
    pub min_box_width: f64,
    pub max_box_width: f64,
    /// Box height divided by width.
    pub aspect: f64,
    /// Object speed range in pixels per frame.
    pub min_speed: f64,
    pub max_speed: f64,
    pub layout: Layout,
    pub twin_offset: f64,
    /// Minimum center distance, at every frame, between objects that are not
    /// paired by the layout. Zero disables the check.
    pub min_separation: f64,
    /// Occlusion gaps: each hides one random object for `gap_length` frames.
    pub num_gaps: usize,
    pub gap_length: usize,
    pub miss_rate: f64,
    /// Probability, per object and frame, of one extra spurious detection.
    pub fp_rate: f64,
    /// Standard deviation of detection center noise in pixels.
    pub center_noise: f64,
    /// Standard deviation of detection width/height noise in pixels.
    pub size_noise: f64,
    /// Dimension of the per-identity embeddings; zero disables them.
    pub embedding_dim: usize,
    pub embedding_noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sequences: 1,
            num_objects: 5,
            num_frames: 50,
            width: 1920.0,
            height: 1080.0,
            min_box_width: 30.0,
            max_box_width: 60.0,
            aspect: 2.0,
            min_speed: 1.0,
            max_speed: 6.0,
            layout: Layout::Random,
            twin_offset: 20.0,
            min_separation: 0.0,
            num_gaps: 0,
            gap_length: 10,
            miss_rate: 0.0,
            fp_rate: 0.0,
            center_noise: 0.0,
            size_noise: 0.0,
            embedding_dim: 16,
            embedding_noise: 0.1,
        }
    }
}

impl SceneConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SceneConfig =
            toml::from_str(text).map_err(|e| Error::config("scene config", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let rate = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(name, format!("{v} is not in [0, 1)")))
            }
        };
        rate("miss_rate", self.miss_rate)?;
        rate("fp_rate", self.fp_rate)?;
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(
                    name,
                    format!("{v} must be finite and non-negative"),
                ))
            }
        };
        non_negative("center_noise", self.center_noise)?;
        non_negative("size_noise", self.size_noise)?;
        non_negative("embedding_noise", self.embedding_noise)?;
        non_negative("twin_offset", self.twin_offset)?;
        non_negative("min_separation", self.min_separation)?;
        non_negative("min_speed", self.min_speed)?;
        if self.max_speed < self.min_speed {
            return Err(Error::config("max_speed", "must be at least min_speed"));
        }
        if self.sequences == 0 {
            return Err(Error::config("sequences", "must be at least 1"));
        }
        if self.num_frames < 1 {
            return Err(Error::config("num_frames", "must be at least 1"));
        }
        if !(self.min_box_width > 0.0 && self.max_box_width >= self.min_box_width) {
            return Err(Error::config(
                "min_box_width",
                "need 0 < min_box_width ≤ max_box_width",
            ));
        }
        if self.aspect.is_nan() || self.aspect <= 0.0 {
            return Err(Error::config("aspect", "must be positive"));
        }
        if !(self.width > self.max_box_width && self.height > self.max_box_width * self.aspect) {
            return Err(Error::config(
                "width",
                "image bounds smaller than the largest box",
            ));
        }
        if self.num_gaps > 0 && self.num_frames < self.gap_length + 2 {
            return Err(Error::config(
                "gap_length",
                "gaps need at least one visible frame before and after",
            ));
        }
        Ok(())
    }
}

/// Ground truth, detections and embeddings of one generated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// One row per object and frame, ids from 1.
    pub ground_truth: Vec<MotRow>,
    /// Detection rows (`id = -1`) in per-frame shuffled order.
    pub detections: Vec<MotRow>,
    /// Identity behind each detection row; `None` for spurious detections.
    pub detection_truth: Vec<Option<i64>>,
    /// Raw embeddings keyed by [`crop_id`]; empty when disabled.
    pub embeddings: EmbeddingTable,
}

/// Crop id of the `index`-th detection (file order) of `frame`.
pub fn crop_id(frame: u32, index: usize) -> String {
    format!("{frame}:{index}")
}

#[derive(Debug, Clone, Copy)]
struct Path {
    x0: f64,
    y0: f64,
    vx: f64,
    vy: f64,
    w: f64,
    h: f64,
}

impl Path {
    fn at(&self, f: usize) -> (f64, f64) {
        (self.x0 + self.vx * f as f64, self.y0 + self.vy * f as f64)
    }
}

fn random_velocity(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let speed = if cfg.max_speed > cfg.min_speed {
        rng.random_range(cfg.min_speed..=cfg.max_speed)
    } else {
        cfg.min_speed
    };
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    (speed * angle.cos(), speed * angle.sin())
}

fn random_size(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let w = if cfg.max_box_width > cfg.min_box_width {
        rng.random_range(cfg.min_box_width..=cfg.max_box_width)
    } else {
        cfg.min_box_width
    };
    (w, w * cfg.aspect)
}

fn random_point(cfg: &SceneConfig, rng: &mut ChaCha8Rng, w: f64, h: f64) -> (f64, f64) {
    (
        rng.random_range(0.5 * w..cfg.width - 0.5 * w),
        rng.random_range(0.5 * h..cfg.height - 0.5 * h),
    )
}

fn sample_paths(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<Path> {
    let k = cfg.num_objects;
    let t = cfg.num_frames;
    let mut paths = Vec::with_capacity(k);
    let paired = cfg.layout != Layout::Random;
    let mut i = 0;
    while i < k {
        let (w, h) = random_size(cfg, rng);
        let (vx, vy) = random_velocity(cfg, rng);
        if paired && i + 1 < k {
            match cfg.layout {
                Layout::Crossing => {
                    let (cx, cy) = random_point(cfg, rng, w, h);
                    let tc = rng.random_range(0.3..=0.7) * (t.max(2) - 1) as f64;
                    // Second direction at least 45° away from the first.
                    let speed2 = (vx * vx + vy * vy).sqrt();
                    let turn = rng.random_range(
                        std::f64::consts::FRAC_PI_4
                            ..(2.0 * std::f64::consts::PI - std::f64::consts::FRAC_PI_4),
                    );
                    let (s, c) = turn.sin_cos();
                    let (vx2, vy2) = (c * vx - s * vy, s * vx + c * vy);
                    let (vx2, vy2) = if speed2 > 0.0 { (vx2, vy2) } else { (vx, vy) };
                    let (w2, h2) = random_size(cfg, rng);
                    paths.push(Path {
                        x0: cx - vx * tc,
                        y0: cy - vy * tc,
                        vx,
                        vy,
                        w,
                        h,
                    });
                    paths.push(Path {
                        x0: cx - vx2 * tc,
                        y0: cy - vy2 * tc,
                        vx: vx2,
                        vy: vy2,
                        w: w2,
                        h: h2,
                    });
                }
                Layout::Twins => {
                    let (x0, y0) = random_point(cfg, rng, w, h);
                    let norm = (vx * vx + vy * vy).sqrt().max(1e-12);
                    let (ox, oy) = (-vy / norm * cfg.twin_offset, vx / norm * cfg.twin_offset);
                    paths.push(Path {
                        x0,
                        y0,
                        vx,
                        vy,
                        w,
                        h,
                    });
                    paths.push(Path {
                        x0: x0 + ox,
                        y0: y0 + oy,
                        vx,
                        vy,
                        w,
                        h,
                    });
                }
                Layout::Random => unreachable!(),
            }
            i += 2;
        } else {
            let (x0, y0) = random_point(cfg, rng, w, h);
            paths.push(Path {
                x0,
                y0,
                vx,
                vy,
                w,
                h,
            });
            i += 1;
        }
    }
    paths
}

fn paths_feasible(cfg: &SceneConfig, paths: &[Path]) -> bool {
    let paired = |a: usize, b: usize| cfg.layout != Layout::Random && a / 2 == b / 2;
    for f in 0..cfg.num_frames {
        for (a, p) in paths.iter().enumerate() {
            let (x, y) = p.at(f);
            if x - 0.5 * p.w < 0.0
                || y - 0.5 * p.h < 0.0
                || x + 0.5 * p.w > cfg.width
                || y + 0.5 * p.h > cfg.height
            {
                return false;
            }
            if cfg.min_separation > 0.0 {
                for (b, q) in paths.iter().enumerate().skip(a + 1) {
                    if paired(a, b) {
                        continue;
                    }
                    let (u, v) = q.at(f);
                    if (x - u).hypot(y - v) < cfg.min_separation {
                        return false;
                    }
                }
            }
        }
    }
    true
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v: DVector<f64> = DVector::from_fn(dim, |_, _| {
            Distribution::<f64>::sample(&StandardNormal, rng)
        });
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Generates `cfg.sequences` independent scenes, all determined by
/// `cfg.seed`.
pub fn generate_scenes(cfg: &SceneConfig) -> Result<Vec<SyntheticScene>> {
    cfg.validate()?;
    let mut master = stream_rng(cfg.seed, Stream::Scene);
    (0..cfg.sequences)
        .map(|_| {
            let seed: u64 = master.random();
            generate_scene_with(cfg, &mut stream_rng(seed, Stream::Scene))
        })
        .collect()
}

/// Generates the first sequence of `cfg`.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SyntheticScene> {
    let single = SceneConfig {
        sequences: 1,
        ..cfg.clone()
    };
    Ok(generate_scenes(&single)?.remove(0))
}

fn generate_scene_with(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<SyntheticScene> {
    let k = cfg.num_objects;
    let t = cfg.num_frames;
    let paths = (0..MAX_ATTEMPTS)
        .map(|_| sample_paths(cfg, rng))
        .find(|p| paths_feasible(cfg, p))
        .ok_or_else(|| {
            Error::config(
                "width",
                format!("no feasible trajectories after {MAX_ATTEMPTS} attempts; enlarge the image or relax separation and speed"),
            )
        })?;

    let mut hidden = vec![vec![false; t]; k];
    for _ in 0..cfg.num_gaps {
        let obj = rng.random_range(0..k.max(1));
        let start = rng.random_range(1..=t - cfg.gap_length - 1);
        if let Some(row) = hidden.get_mut(obj) {
            for h in &mut row[start..start + cfg.gap_length] {
                *h = true;
            }
        }
    }

    let identity_vecs: Vec<DVector<f64>> = (0..k)
        .map(|_| {
            if cfg.embedding_dim > 0 {
                unit_vector(cfg.embedding_dim, rng)
            } else {
                DVector::zeros(0)
            }
        })
        .collect();

    let center = Normal::new(0.0, cfg.center_noise).expect("validated noise");
    let size = Normal::new(0.0, cfg.size_noise).expect("validated noise");
    let mut ground_truth = Vec::with_capacity(k * t);
    let mut detections = Vec::new();
    let mut detection_truth = Vec::new();
    let mut embeddings = EmbeddingTable::new(cfg.embedding_dim);

    for f in 0..t {
        let frame = (f + 1) as u32;
        let mut dets: Vec<(BoundingBox, Option<usize>)> = Vec::new();
        for (obj, p) in paths.iter().enumerate() {
            let (x, y) = p.at(f);
            let gt = BoundingBox::new(x, y, p.w, p.h, 1.0);
            ground_truth.push(MotRow::new(frame, obj as i64 + 1, &gt));
            if hidden[obj].get(f) == Some(&true) || rng.random::<f64>() < cfg.miss_rate {
                continue;
            }
            let conf = rng.random_range(0.7..=1.0);
            let det = BoundingBox::new(
                x + center.sample(rng),
                y + center.sample(rng),
                (p.w + size.sample(rng)).max(1.0),
                (p.h + size.sample(rng)).max(1.0),
                conf,
            );
            dets.push((det, Some(obj)));
        }
        for _ in 0..k {
            if rng.random::<f64>() < cfg.fp_rate {
                let (w, h) = random_size(cfg, rng);
                let (x, y) = random_point(cfg, rng, w, h);
                let conf = rng.random_range(0.3..=0.8);
                dets.push((BoundingBox::new(x, y, w, h, conf), None));
            }
        }
        dets.shuffle(rng);
        for (index, (bbox, obj)) in dets.into_iter().enumerate() {
            detections.push(MotRow::new(frame, -1, &bbox));
            detection_truth.push(obj.map(|o| o as i64 + 1));
            if cfg.embedding_dim > 0 {
                let raw = match obj {
                    Some(o) => {
                        &identity_vecs[o]
                            + DVector::from_fn(cfg.embedding_dim, |_, _| {
                                cfg.embedding_noise
                                    * Distribution::<f64>::sample(&StandardNormal, rng)
                            })
                    }
                    None => unit_vector(cfg.embedding_dim, rng),
                };
                embeddings.insert(crop_id(frame, index), raw)?;
            }
        }
    }
    Ok(SyntheticScene {
        ground_truth,
        detections,
        detection_truth,
        embeddings,
    })
}
