//! Synthetic stand-in dataset: coloured shapes on a plain backdrop, written
//! as a `Training/` + `Test/` tree. Some classes come in deceptive pairs that
//! share every drawing parameter except a small hue offset.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{scan_directory_tree, DatasetIndex, Provenance};
use crate::error::{Error, Result};
use crate::imaging::{png_bytes, ImageRgb8};

/// Category file written next to the class folders: one deceptive pair per line.
pub const GROUPS_FILE: &str = "groups.txt";
const MARKER_FILE: &str = "SYNTHETIC";
/// Upper bound on the mean-hue gap between the two classes of a pair.
pub const MAX_HUE_DELTA: f64 = 20.0 / 360.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub per_class: usize,
    /// Square image side in pixels.
    pub size: usize,
    /// Deceptive pairs: classes (0,1), (2,3), ... share a look up to hue.
    pub pairs: usize,
    /// Upper bound on the pair mean-hue gap, as a fraction of the hue circle.
    pub hue_delta: f64,
    pub seed: u64,
    /// Tinted, noisy backdrop instead of white; needs flood fill to remove.
    pub clutter: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_classes: 8,
            per_class: 60,
            size: 32,
            pairs: 3,
            hue_delta: MAX_HUE_DELTA,
            seed: 0,
            clutter: false,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_classes < 2 {
            return bad(format!("synthetic classes must be ≥ 2, got {}", self.n_classes));
        }
        if self.per_class < 4 {
            return bad(format!("per-class must be ≥ 4, got {}", self.per_class));
        }
        if self.size < 8 {
            return bad(format!("size must be ≥ 8, got {}", self.size));
        }
        if 2 * self.pairs > self.n_classes {
            return bad(format!("{} pairs need {} classes", self.pairs, 2 * self.pairs));
        }
        if !(self.hue_delta > 0.0 && self.hue_delta <= MAX_HUE_DELTA + 1e-12) {
            return bad(format!("hue-delta must be in (0, 20/360], got {}", self.hue_delta));
        }
        Ok(())
    }

    /// Test images per class (a quarter, rounded).
    pub fn test_per_class(&self) -> usize {
        (self.per_class as f64 * 0.25).round() as usize
    }

    pub fn class_name(c: usize) -> String {
        format!("synth_{c:02}")
    }

    /// Category lines pairing up the deceptive classes.
    pub fn groups_text(&self) -> String {
        (0..self.pairs)
            .map(|k| {
                format!(
                    "pair_{}, {}, {}\n",
                    k + 1,
                    Self::class_name(2 * k),
                    Self::class_name(2 * k + 1)
                )
            })
            .collect()
    }
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "classes={} per-class={} size={} pairs={} hue-delta={} seed={} clutter={}",
            self.n_classes, self.per_class, self.size, self.pairs, self.hue_delta, self.seed, self.clutter
        )
    }
}

/// Whitespace- or comma-separated `key=value` tokens; unknown keys are errors.
impl FromStr for SynthSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = SynthSpec::default();
        for token in s.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("synthetic token `{token}` is not key=value")))?;
            let parse_err = || Error::Config(format!("bad value for synthetic `{key}`: `{value}`"));
            match key {
                "classes" => spec.n_classes = value.parse().map_err(|_| parse_err())?,
                "per-class" => spec.per_class = value.parse().map_err(|_| parse_err())?,
                "size" => spec.size = value.parse().map_err(|_| parse_err())?,
                "pairs" => spec.pairs = value.parse().map_err(|_| parse_err())?,
                "hue-delta" => spec.hue_delta = value.parse().map_err(|_| parse_err())?,
                "seed" => spec.seed = value.parse().map_err(|_| parse_err())?,
                "clutter" => spec.clutter = value.parse().map_err(|_| parse_err())?,
                other => return Err(Error::Config(format!("unknown synthetic key `{other}`"))),
            }
        }
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug)]
struct Look {
    /// 0 = ellipse, otherwise a regular polygon with this many sides.
    sides: u32,
    radius: f64,
    aspect: f64,
    hue: f64,
    saturation: f64,
    value: f64,
}

/// Drawing parameters per class. Pair members get the same look and differ
/// only by `0.75 · hue_delta` of hue.
fn class_looks(spec: &SynthSpec) -> Vec<Look> {
    let n_looks = spec.n_classes - spec.pairs;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let offset: f64 = rng.random_range(0.0..0.05);
    // Hues stay clear of the red wrap-around so pair shifts never cross 1.0.
    let span = 0.88 - spec.hue_delta;
    let looks: Vec<Look> = (0..n_looks)
        .map(|a| Look {
            sides: [0, 3, 4, 5, 6, 0, 7, 8][a % 8],
            radius: rng.random_range(0.26..0.38),
            aspect: rng.random_range(0.7..1.0),
            hue: 0.04 + offset + span * a as f64 / n_looks as f64,
            saturation: rng.random_range(0.55..0.9),
            value: rng.random_range(0.6..0.95),
        })
        .collect();
    let shift = 0.75 * spec.hue_delta;
    (0..spec.n_classes)
        .map(|c| {
            if c < 2 * spec.pairs {
                let mut look = looks[c / 2];
                if c % 2 == 1 {
                    look.hue += shift;
                }
                look
            } else {
                looks[c - spec.pairs]
            }
        })
        .collect()
}

fn hsv_to_rgb8(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(1.0)) * 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m].map(|u| (u * 255.0).round().clamp(0.0, 255.0) as u8)
}

fn inside(look: &Look, dx: f64, dy: f64, rotation: f64, radius: f64) -> Option<f64> {
    let (s, c) = rotation.sin_cos();
    let u = (c * dx + s * dy) / radius;
    let v = (-s * dx + c * dy) / (radius * look.aspect);
    let r = (u * u + v * v).sqrt();
    let limit = if look.sides == 0 {
        1.0
    } else {
        // Distance to the edge of a regular polygon along this direction.
        let n = look.sides as f64;
        let sector = std::f64::consts::TAU / n;
        let theta = v.atan2(u).rem_euclid(sector) - sector / 2.0;
        (sector / 2.0).cos() / theta.cos()
    };
    (r <= limit).then_some(r / limit)
}

fn render(spec: &SynthSpec, look: &Look, rng: &mut ChaCha8Rng) -> ImageRgb8 {
    let n = spec.size;
    let size = n as f64;
    let jitter = spec.hue_delta / 6.0;
    let hue = look.hue + rng.random_range(-jitter..jitter);
    let sat = (look.saturation + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
    let val = (look.value + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
    let radius = look.radius * size * rng.random_range(0.9..1.1);
    let cx = size / 2.0 + rng.random_range(-0.08..0.08) * size;
    let cy = size / 2.0 + rng.random_range(-0.08..0.08) * size;
    let rotation = rng.random_range(0.0..std::f64::consts::TAU);
    let backdrop: [u8; 3] = if spec.clutter {
        [rng.random_range(150..230), rng.random_range(150..230), rng.random_range(150..230)]
    } else {
        [255, 255, 255]
    };
    let mut img = ImageRgb8::filled(n, n, backdrop);
    for y in 0..n {
        for x in 0..n {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            match inside(look, dx, dy, rotation, radius) {
                Some(r) => {
                    // Darker towards the rim, like a lit round object.
                    let shade = 1.0 - 0.25 * r * r;
                    let mut rgb = hsv_to_rgb8(hue, sat, val * shade);
                    for ch in &mut rgb {
                        *ch = (*ch as i32 + rng.random_range(-3..=3)).clamp(0, 255) as u8;
                    }
                    img.set(x, y, rgb);
                }
                None if spec.clutter => {
                    let mut rgb = backdrop;
                    for ch in &mut rgb {
                        *ch = (*ch as i32 + rng.random_range(-2..=2)).clamp(0, 255) as u8;
                    }
                    img.set(x, y, rgb);
                }
                None => {}
            }
        }
    }
    img
}

/// Writes `out_root/Training/<class>/NNNN.png` and `out_root/Test/...`
/// (three quarters training, a quarter test, per class) plus the pair
/// groups file, then indexes the tree like any other dataset. A previous
/// synthetic tree in `out_root` is replaced; any other content is refused.
pub fn generate_synthetic(spec: &SynthSpec, out_root: &Path) -> Result<DatasetIndex> {
    spec.validate()?;
    let marker = out_root.join(MARKER_FILE);
    for sub in ["Training", "Test"] {
        let dir = out_root.join(sub);
        if dir.exists() {
            if !marker.exists() {
                return Err(Error::Config(format!(
                    "{} already exists and was not written by the synthetic generator",
                    dir.display()
                )));
            }
            fs::remove_dir_all(&dir)?;
        }
    }
    let looks = class_looks(spec);
    let n_test = spec.test_per_class();
    for c in 0..spec.n_classes {
        let name = SynthSpec::class_name(c);
        fs::create_dir_all(out_root.join("Training").join(&name))?;
        fs::create_dir_all(out_root.join("Test").join(&name))?;
    }
    fs::write(&marker, format!("{spec}\n"))?;
    (0..spec.n_classes * spec.per_class)
        .into_par_iter()
        .try_for_each(|k| -> Result<()> {
            let (c, i) = (k / spec.per_class, k % spec.per_class);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(1 + k as u64);
            let img = render(spec, &looks[c], &mut rng);
            let split = if i < spec.per_class - n_test { "Training" } else { "Test" };
            let path = out_root
                .join(split)
                .join(SynthSpec::class_name(c))
                .join(format!("{i:04}.png"));
            fs::write(path, png_bytes(&img)?)?;
            Ok(())
        })?;
    fs::write(out_root.join(GROUPS_FILE), spec.groups_text())?;
    let mut index = scan_directory_tree(out_root)?;
    index.provenance = Provenance::Synthetic { seed: spec.seed };
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::parse_groups;
    use crate::imaging::{load_image, rgb_to_hsv};

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            n_classes: 4,
            per_class: 60,
            size: 16,
            pairs: 1,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn layout_follows_three_quarter_split() {
        let dir = tempfile::tempdir().unwrap();
        let idx = generate_synthetic(&small(1), dir.path()).unwrap();
        assert_eq!(idx.class_names.len(), 4);
        for c in 0..4 {
            assert_eq!(idx.train.iter().filter(|r| r.label == c).count(), 45);
            assert_eq!(idx.test.iter().filter(|r| r.label == c).count(), 15);
        }
        assert_eq!(idx.provenance, Provenance::Synthetic { seed: 1 });
        let groups = parse_groups(&fs::read_to_string(dir.path().join(GROUPS_FILE)).unwrap()).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].members, ["synth_00", "synth_01"]);
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let spec = SynthSpec { per_class: 8, ..small(3) };
        let ia = generate_synthetic(&spec, a.path()).unwrap();
        generate_synthetic(&spec, b.path()).unwrap();
        for r in ia.train.iter().chain(&ia.test) {
            assert_eq!(fs::read(a.path().join(&r.path)).unwrap(), fs::read(b.path().join(&r.path)).unwrap());
        }
        // Regenerating in place replaces the previous tree.
        assert_eq!(generate_synthetic(&spec, a.path()).unwrap(), ia);
    }

    #[test]
    fn refuses_foreign_tree() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("Training/mine")).unwrap();
        assert!(matches!(generate_synthetic(&small(0), dir.path()), Err(Error::Config(_))));
    }

    fn mean_hue(root: &Path, idx: &DatasetIndex, label: usize) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for r in idx.train.iter().chain(&idx.test).filter(|r| r.label == label) {
            let img = load_image(&root.join(&r.path)).unwrap();
            for px in img.pixels().chunks(3) {
                let (h, s, _) = rgb_to_hsv(px[0], px[1], px[2]);
                if s > 0.3 {
                    sum += h as f64;
                    n += 1;
                }
            }
        }
        sum / n as f64
    }

    #[test]
    fn pair_hue_gap_is_within_delta() {
        for seed in 0..3 {
            let dir = tempfile::tempdir().unwrap();
            let spec = SynthSpec { per_class: 12, ..small(seed) };
            let idx = generate_synthetic(&spec, dir.path()).unwrap();
            let gap = (mean_hue(dir.path(), &idx, 0) - mean_hue(dir.path(), &idx, 1)).abs();
            assert!(gap <= spec.hue_delta, "gap {gap}");
            assert!(gap > 0.25 * spec.hue_delta, "gap {gap}");
            // Non-pair classes are far apart in hue.
            let far = (mean_hue(dir.path(), &idx, 0) - mean_hue(dir.path(), &idx, 2)).abs();
            assert!(far > 2.0 * spec.hue_delta);
        }
    }

    #[test]
    fn spec_parsing() {
        let s: SynthSpec = "classes=6 per-class=60 seed=7".parse().unwrap();
        assert_eq!((s.n_classes, s.per_class, s.seed), (6, 60, 7));
        let t: SynthSpec = s.to_string().parse().unwrap();
        assert_eq!(t, s);
        assert!("classes".parse::<SynthSpec>().is_err());
        assert!("colour=red".parse::<SynthSpec>().is_err());
        assert!(SynthSpec { hue_delta: 0.1, ..Default::default() }.validate().is_err());
        assert!(SynthSpec { pairs: 5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn clutter_backdrop_is_removable() {
        use crate::imaging::{flood_fill_background, DEFAULT_FILL_THRESHOLD};
        let spec = SynthSpec { clutter: true, ..small(5) };
        let looks = class_looks(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = render(&spec, &looks[2], &mut rng);
        let mask = flood_fill_background(&img, DEFAULT_FILL_THRESHOLD);
        let fg = 256 - mask.count();
        // A triangle at the smallest radius covers about 20 pixels of 256.
        assert!((15..=200).contains(&fg), "{fg} foreground pixels");
    }
}
