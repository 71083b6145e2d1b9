use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelMap, IGNORE_INDEX};
use crate::numerics::Tensor;

/// Parameters of the procedural scene generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Background plus `num_classes - 1` shape classes.
    pub num_classes: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise_sigma: f64,
    /// Colour prototypes per shape class; each shape picks one at random.
    pub colors_per_class: usize,
    /// Standard deviation of the per-shape colour offset from its prototype.
    pub color_jitter: f64,
    /// Per-scene brightness gain is drawn from `1 ± illumination`.
    pub illumination: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 64,
            width: 64,
            num_classes: 4,
            shapes_min: 2,
            shapes_max: 5,
            noise_sigma: 0.1,
            colors_per_class: 1,
            color_jitter: 0.1,
            illumination: 0.3,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("scene image size must be positive".into()));
        }
        if self.num_classes < 2 || self.num_classes >= IGNORE_INDEX as usize {
            return Err(Error::Config(format!(
                "num_classes must be in 2..{}, got {}",
                IGNORE_INDEX, self.num_classes
            )));
        }
        if self.colors_per_class == 0 {
            return Err(Error::Config("colors_per_class must be >= 1".into()));
        }
        if self.shapes_min > self.shapes_max {
            return Err(Error::Config("shapes_min exceeds shapes_max".into()));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("color_jitter", self.color_jitter),
            ("illumination", self.illumination),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Mean colour of class `c`: background is mid-grey, shape classes are
    /// spread evenly around the hue circle.
    pub fn class_color(&self, class: usize) -> [f64; 3] {
        if class == 0 {
            return [0.5, 0.5, 0.5];
        }
        let hue = (class - 1) as f64 / (self.num_classes - 1) as f64 * 6.0;
        let x = 1.0 - ((hue % 2.0) - 1.0).abs();
        let (r, g, b) = match hue as usize {
            0 => (1.0, x, 0.0),
            1 => (x, 1.0, 0.0),
            2 => (0.0, 1.0, x),
            3 => (0.0, x, 1.0),
            4 => (x, 0.0, 1.0),
            _ => (1.0, 0.0, x),
        };
        // Keep away from the clamp limits so jitter stays symmetric.
        [0.15 + 0.7 * r, 0.15 + 0.7 * g, 0.15 + 0.7 * b]
    }

    /// Colour prototypes of every class, indexed `[class][prototype]`.
    ///
    /// With one prototype per class this is [`SceneSpec::class_color`];
    /// otherwise prototypes are drawn uniformly from `[0.1, 0.9]^3` by a
    /// generator stream reserved for the palette.
    pub fn palette(&self) -> Vec<Vec<[f64; 3]>> {
        if self.colors_per_class == 1 {
            return (0..self.num_classes).map(|c| vec![self.class_color(c)]).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX);
        (0..self.num_classes)
            .map(|_| {
                (0..self.colors_per_class)
                    .map(|_| std::array::from_fn(|_| rng.gen_range(0.1..0.9)))
                    .collect()
            })
            .collect()
    }
}

/// One rendered scene: a `[1,3,H,W]` image in `[0,1]` and its `[1,H,W]` labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SegSample {
    pub image: Tensor,
    pub labels: LabelMap,
}

#[derive(Clone, Copy)]
enum Shape {
    Rect { cx: f64, cy: f64, hw: f64, hh: f64 },
    Disk { cx: f64, cy: f64, r: f64 },
    Triangle([(f64, f64); 3]),
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { cx, cy, hw, hh } => (x - cx).abs() <= hw && (y - cy).abs() <= hh,
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Triangle(v) => {
                let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
                let (d0, d1, d2) = (edge(v[0], v[1]), edge(v[1], v[2]), edge(v[2], v[0]));
                (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
            }
        }
    }
}

/// Renders scene `index`; a pure function of `(spec, index)`.
///
/// Shapes are painted in order over a flat background; a pixel whose
/// label differs from its left or upper neighbour is marked
/// [`IGNORE_INDEX`], giving one-pixel boundaries.
pub fn generate_scene(spec: &SceneSpec, index: u64) -> SegSample {
    let (h, w) = (spec.height, spec.width);
    let palette = spec.palette();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);

    let mut labels = vec![0u8; h * w];
    let mut color = vec![[0.0f64; 3]; h * w];

    let bg = spec.class_color(0);
    let base: [f64; 3] = std::array::from_fn(|c| bg[c] + rng.gen_range(-0.15..0.15));
    color.iter_mut().for_each(|px| *px = base);

    let count = rng.gen_range(spec.shapes_min..=spec.shapes_max);
    let min_side = h.min(w) as f64;
    let jitter = Normal::new(0.0, spec.color_jitter.max(1e-300)).expect("valid normal");
    for _ in 0..count {
        let class = rng.gen_range(1..spec.num_classes);
        let kind = rng.gen_range(0..3);
        let r = rng.gen_range(min_side / 10.0..min_side / 4.0);
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let shape = match kind {
            0 => Shape::Rect { cx, cy, hw: r * rng.gen_range(0.6..1.0), hh: r * rng.gen_range(0.6..1.0) },
            1 => Shape::Disk { cx, cy, r },
            _ => {
                let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = r * 1.3;
                Shape::Triangle(std::array::from_fn(|k| {
                    let a = theta + k as f64 * std::f64::consts::TAU / 3.0;
                    (cx + r * a.cos(), cy + r * a.sin())
                }))
            }
        };
        let choices = &palette[class];
        let mean = choices[if choices.len() > 1 { rng.gen_range(0..choices.len()) } else { 0 }];
        let fill: [f64; 3] = std::array::from_fn(|c| {
            let j = if spec.color_jitter > 0.0 { jitter.sample(&mut rng) } else { 0.0 };
            mean[c] + j
        });
        for y in 0..h {
            for x in 0..w {
                if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    labels[y * w + x] = class as u8;
                    color[y * w + x] = fill;
                }
            }
        }
    }

    let gain = 1.0 + rng.gen_range(-1.0..=1.0) * spec.illumination;
    let noise = Normal::new(0.0, spec.noise_sigma.max(1e-300)).expect("valid normal");
    let plane = h * w;
    let mut image = vec![0.0; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            image[c * plane + p] = (color[p][c] * gain + n).clamp(0.0, 1.0);
        }
    }

    let mut marked = labels.clone();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if (x > 0 && labels[y * w + x - 1] != l) || (y > 0 && labels[(y - 1) * w + x] != l) {
                marked[y * w + x] = IGNORE_INDEX;
            }
        }
    }

    SegSample {
        image: Tensor::from_parts(vec![1, 3, h, w], image),
        labels: LabelMap::new([1, h, w], marked).expect("sized label map"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let spec = SceneSpec { seed: 42, ..SceneSpec::default() };
        assert_eq!(generate_scene(&spec, 7), generate_scene(&spec, 7));
        assert_ne!(generate_scene(&spec, 7).image, generate_scene(&spec, 8).image);
    }

    #[test]
    fn degenerate_scene_is_flat_background() {
        let spec = SceneSpec {
            shapes_min: 0,
            shapes_max: 0,
            noise_sigma: 0.0,
            illumination: 0.0,
            ..SceneSpec::default()
        };
        let s = generate_scene(&spec, 3);
        assert!(s.labels.data().iter().all(|&l| l == 0));
        let d = s.image.data();
        for c in 0..3 {
            let plane = &d[c * 64 * 64..(c + 1) * 64 * 64];
            assert!(plane.iter().all(|&v| v == plane[0]));
        }
    }

    #[test]
    fn labels_in_range() {
        let spec = SceneSpec::default();
        for i in 0..20 {
            let s = generate_scene(&spec, i);
            s.labels.validate(spec.num_classes, IGNORE_INDEX).unwrap();
        }
    }
}
