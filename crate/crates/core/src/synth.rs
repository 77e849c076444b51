//! Synthetic cohorts: curved villi above a shoulder curve, crypts between
//! the shoulder and the crypt border, a simulated detector, and label maps.
//!
//! Each image draws its ground truth from sub-stream `i` of the seed and its
//! detector noise from sub-stream `NOISE_STREAM + i`, so the ground truth
//! does not depend on the noise settings.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{polyline_length, ClassLabel, Point};
use crate::io::{write_records, Annotation, ImageInfo, ImageRecord};
use crate::raster::{LabelMap, BORDER, CRYPT, SHOULDER, VILLI};
use crate::rng::{stream, StreamRng};

const NOISE_STREAM: u64 = 1 << 32;

/// Vd:Cd bands for Normal, Marsh 1, Marsh 2 and Marsh 3, kept clear of the
/// grade cut points.
pub const MARSH_BANDS: [[f64; 2]; 4] = [[3.2, 5.0], [1.1, 2.9], [0.96, 1.04], [0.4, 0.9]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_images: usize,
    /// Inclusive range.
    pub villi_per_image: [usize; 2],
    /// Inclusive range.
    pub crypts_per_image: [usize; 2],
    /// Per-coordinate detector noise in pixels.
    pub noise_sigma: f64,
    pub drop_rate: f64,
    /// Mean number of spurious detections per image.
    pub spurious_rate: f64,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    /// Target Vd:Cd band; each image picks one of [`MARSH_BANDS`] when unset.
    pub ratio_band: Option<[f64; 2]>,
    /// Fraction of villi annotated by their two end points only.
    pub two_point_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_images: 10,
            villi_per_image: [3, 6],
            crypts_per_image: [3, 6],
            noise_sigma: 0.0,
            drop_rate: 0.0,
            spurious_rate: 0.0,
            seed: 0,
            width: 640,
            height: 640,
            ratio_band: None,
            two_point_fraction: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse(format!("synth config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        for (name, [lo, hi]) in [("villi_per_image", self.villi_per_image), ("crypts_per_image", self.crypts_per_image)] {
            if lo > hi {
                return bad(format!("{name}: lower bound {lo} above upper bound {hi}"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return bad(format!("drop_rate must lie in [0, 1), got {}", self.drop_rate));
        }
        if !(self.spurious_rate >= 0.0 && self.spurious_rate.is_finite()) {
            return bad(format!("spurious_rate must be finite and >= 0, got {}", self.spurious_rate));
        }
        if !(0.0..=1.0).contains(&self.two_point_fraction) {
            return bad(format!("two_point_fraction must lie in [0, 1], got {}", self.two_point_fraction));
        }
        if self.width < 128 || self.height < 128 {
            return bad(format!("image size must be at least 128x128, got {}x{}", self.width, self.height));
        }
        if let Some([lo, hi]) = self.ratio_band {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("ratio_band [{lo}, {hi}] is not a positive interval"));
            }
        }
        Ok(())
    }
}

/// One ground-truth instance before annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub class: ClassLabel,
    /// The true three-point arc.
    pub arc: [Point<f64>; 3],
    /// What the annotator recorded: the arc, or its two end points.
    pub annotated: Vec<Point<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub id: String,
    pub target_ratio: f64,
    pub instances: Vec<Instance>,
    pub shoulder: Vec<Point<f64>>,
    pub border: Vec<Point<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub images: Vec<SynthImage>,
    pub gt: Vec<ImageRecord>,
    pub pred: Vec<ImageRecord>,
    /// For every prediction, the ground-truth annotation it was derived
    /// from (`None` for spurious ones).
    pub sources: Vec<Vec<Option<usize>>>,
    pub masks: Vec<LabelMap>,
}

impl SynthOutput {
    /// Writes `gt.jsonl`, `pred.jsonl` and `masks/<id>.pgm`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("masks"))?;
        write_records(&self.gt, std::io::BufWriter::new(std::fs::File::create(dir.join("gt.jsonl"))?))?;
        write_records(&self.pred, std::io::BufWriter::new(std::fs::File::create(dir.join("pred.jsonl"))?))?;
        for (img, m) in self.images.iter().zip(&self.masks) {
            m.write_pgm(dir.join("masks").join(format!("{}.pgm", img.id)))?;
        }
        Ok(())
    }
}

fn unit(theta: f64) -> Point<f64> {
    Point::new(theta.cos(), theta.sin())
}

fn arc(start: Point<f64>, heading: f64, bend: f64, length: f64) -> [Point<f64>; 3] {
    let (a, b) = (unit(heading - bend / 2.0), unit(heading + bend / 2.0));
    let half = length / 2.0;
    let p1 = Point::new(start.x + half * a.x, start.y + half * a.y);
    let p2 = Point::new(p1.x + half * b.x, p1.y + half * b.y);
    [start, p1, p2]
}

/// Lengths with mean exactly `mean`, spread by +-10%.
fn lengths(rng: &mut StreamRng, n: usize, mean: f64) -> Vec<f64> {
    let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.9..1.1)).collect();
    let m = s.iter().sum::<f64>() / n.max(1) as f64;
    s.iter().map(|v| mean * v / m).collect()
}

/// Gentle sinusoid across the full image width.
fn curve(base: f64, amp: f64, phase: f64, w: f64) -> Vec<Point<f64>> {
    (0..=16)
        .map(|k| {
            let x = w * k as f64 / 16.0;
            Point::new(x, base + amp * (2.0 * PI * x / w + phase).sin())
        })
        .collect()
}

fn curve_y(c: &[Point<f64>], x: f64) -> f64 {
    let i = c.windows(2).position(|s| x <= s[1].x).unwrap_or(c.len() - 2);
    let (a, b) = (c[i], c[i + 1]);
    a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x)
}

/// Evenly spread start columns with jitter, kept within the middle 80%.
fn columns(rng: &mut StreamRng, n: usize, w: f64, offset: f64) -> Vec<f64> {
    let slot = 0.8 * w / n.max(1) as f64;
    (0..n)
        .map(|k| 0.1 * w + slot * (k as f64 + 0.5 + offset) + rng.random_range(-0.15..0.15) * slot)
        .map(|x| x.clamp(0.1 * w, 0.9 * w))
        .collect()
}

pub fn generate_image(cfg: &SynthConfig, index: usize) -> SynthImage {
    let mut rng = stream(cfg.seed, index as u64);
    let (w, h) = (f64::from(cfg.width), f64::from(cfg.height));
    let band = cfg
        .ratio_band
        .unwrap_or_else(|| MARSH_BANDS[rng.random_range(0..MARSH_BANDS.len())]);
    let ratio = if band[0] < band[1] {
        rng.random_range(band[0]..band[1])
    } else {
        band[0]
    };
    let n_v = rng.random_range(cfg.villi_per_image[0]..=cfg.villi_per_image[1]);
    let n_c = rng.random_range(cfg.crypts_per_image[0]..=cfg.crypts_per_image[1]);

    // villi grow up from the shoulder, so their longest member must fit
    // above it; crypts shrink if needed to keep the ratio exact
    let shoulder_base = h * rng.random_range(0.55..0.6);
    let room = shoulder_base - 0.03 * h;
    let max_crypt = 0.08 * h;
    let crypt_mean = rng.random_range(0.04 * h..0.075 * h).min(room / (1.25 * ratio)).min(max_crypt / 1.25);
    let villi_mean = ratio * crypt_mean;

    let amp = rng.random_range(0.0..0.012 * h);
    let phase = rng.random_range(0.0..2.0 * PI);
    let shoulder = curve(shoulder_base, amp, phase, w);
    let border = curve(shoulder_base + 0.12 * h, amp, phase, w);

    let mut instances = Vec::with_capacity(n_v + n_c);
    let specs = [
        (ClassLabel::Villi, n_v, villi_mean, -PI / 2.0, -0.005 * h, 0.0),
        (ClassLabel::Crypt, n_c, crypt_mean, PI / 2.0, 0.005 * h, 0.5f64),
    ];
    for (class, n, mean, up_down, gap, offset) in specs {
        let ls = lengths(&mut rng, n, mean);
        let xs = columns(&mut rng, n, w, offset);
        for (len, x) in ls.into_iter().zip(xs) {
            // lean toward the image centre so arcs stay inside
            let lean = rng.random_range(0.0..0.2) * (w / 2.0 - x).signum();
            let heading = up_down - lean * up_down.signum();
            let bend = rng.random_range(-0.3..0.3);
            let start = Point::new(x, curve_y(&shoulder, x) + gap);
            let arc = arc(start, heading, bend, len);
            let two_point = class == ClassLabel::Villi && rng.random::<f64>() < cfg.two_point_fraction;
            let annotated = if two_point { vec![arc[0], arc[2]] } else { arc.to_vec() };
            instances.push(Instance { class, arc, annotated });
        }
    }
    SynthImage {
        id: format!("img{index:04}"),
        target_ratio: ratio,
        instances,
        shoulder,
        border,
    }
}

fn points_xy(p: &[Point<f64>]) -> Vec<[f64; 2]> {
    p.iter().map(|q| [q.x, q.y]).collect()
}

fn gt_record(img: &SynthImage, cfg: &SynthConfig) -> ImageRecord {
    ImageRecord {
        image: ImageInfo {
            id: img.id.clone(),
            width: cfg.width,
            height: cfg.height,
        },
        annotations: img
            .instances
            .iter()
            .map(|inst| Annotation {
                class: inst.class,
                points: points_xy(&inst.annotated),
                confidence: None,
            })
            .collect(),
        shoulder: Some(points_xy(&img.shoulder)),
        border: Some(points_xy(&img.border)),
    }
}

fn pred_record(img: &SynthImage, cfg: &SynthConfig, index: usize) -> (ImageRecord, Vec<Option<usize>>) {
    let mut rng = stream(cfg.seed, NOISE_STREAM + index as u64);
    let (w, h) = (f64::from(cfg.width), f64::from(cfg.height));
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let jitter = |p: &Point<f64>, rng: &mut StreamRng| -> [f64; 2] {
        if cfg.noise_sigma == 0.0 {
            return [p.x, p.y];
        }
        [
            (p.x + noise.sample(rng)).clamp(0.0, w),
            (p.y + noise.sample(rng)).clamp(0.0, h),
        ]
    };
    let mut annotations = Vec::new();
    let mut sources = Vec::new();
    for (k, inst) in img.instances.iter().enumerate() {
        // draws happen whether or not the instance is kept
        let dropped = rng.random::<f64>() < cfg.drop_rate;
        let confidence = rng.random_range(0.6..=1.0);
        let points: Vec<[f64; 2]> = inst.annotated.iter().map(|p| jitter(p, &mut rng)).collect();
        if !dropped {
            annotations.push(Annotation {
                class: inst.class,
                points,
                confidence: Some(confidence),
            });
            sources.push(Some(k));
        }
    }
    let n_spurious = if cfg.spurious_rate > 0.0 {
        Poisson::new(cfg.spurious_rate).expect("positive rate").sample(&mut rng) as usize
    } else {
        0
    };
    for _ in 0..n_spurious {
        let class = if rng.random::<bool>() { ClassLabel::Villi } else { ClassLabel::Crypt };
        let start = Point::new(rng.random_range(0.1 * w..0.9 * w), rng.random_range(0.1 * h..0.9 * h));
        let len = rng.random_range(0.03 * h..0.2 * h);
        let heading = rng.random_range(0.0..2.0 * PI);
        let arc = arc(start, heading, rng.random_range(-0.3..0.3), len);
        annotations.push(Annotation {
            class,
            points: arc.iter().map(|p| [p.x.clamp(0.0, w), p.y.clamp(0.0, h)]).collect(),
            confidence: Some(rng.random_range(0.5..=1.0)),
        });
        sources.push(None);
    }
    let record = ImageRecord {
        image: ImageInfo {
            id: img.id.clone(),
            width: cfg.width,
            height: cfg.height,
        },
        annotations,
        shoulder: None,
        border: None,
    };
    (record, sources)
}

fn paint_path(m: &mut LabelMap, pts: &[Point<f64>], radius: i64, label: u8) {
    for s in pts.windows(2) {
        let steps = (s[0].dist(&s[1]) * 4.0).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let x = (s[0].x + t * (s[1].x - s[0].x)).round() as i64;
            let y = (s[0].y + t * (s[1].y - s[0].y)).round() as i64;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    m.paint(x + dx, y + dy, label);
                }
            }
        }
    }
    if let [p] = pts {
        m.paint(p.x.round() as i64, p.y.round() as i64, label);
    }
}

/// Villi and crypts as 3-pixel strips, shoulder and border as 1-pixel
/// curves.
pub fn rasterize(img: &SynthImage, width: u32, height: u32) -> LabelMap {
    let mut m = LabelMap::empty(width as usize, height as usize).expect("validated size");
    for inst in &img.instances {
        let label = if inst.class == ClassLabel::Villi { VILLI } else { CRYPT };
        paint_path(&mut m, &inst.arc, 1, label);
    }
    paint_path(&mut m, &img.shoulder, 0, SHOULDER);
    paint_path(&mut m, &img.border, 0, BORDER);
    m
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let images: Vec<SynthImage> = (0..cfg.n_images).map(|i| generate_image(cfg, i)).collect();
    let gt = images.iter().map(|im| gt_record(im, cfg)).collect();
    let (pred, sources) = images.iter().enumerate().map(|(i, im)| pred_record(im, cfg, i)).unzip();
    let masks = images.iter().map(|im| rasterize(im, cfg.width, cfg.height)).collect();
    Ok(SynthOutput {
        images,
        gt,
        pred,
        sources,
        masks,
    })
}

/// Mean villi over mean crypt length of the annotated instances.
pub fn annotated_ratio(img: &SynthImage) -> Option<f64> {
    let mean = |class| {
        let l: Vec<f64> = img
            .instances
            .iter()
            .filter(|i| i.class == class)
            .map(|i| polyline_length(&i.annotated))
            .collect();
        (!l.is_empty()).then(|| l.iter().sum::<f64>() / l.len() as f64)
    };
    Some(mean(ClassLabel::Villi)? / mean(ClassLabel::Crypt)?)
}
