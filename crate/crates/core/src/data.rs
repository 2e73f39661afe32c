//! Synthetic texture-segmentation data and image I/O.
//!
//! Every region is filled with a texture whose mean intensity is 0.5, so a
//! class can only be told apart by how neighbouring pixels relate.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IGNORE_LABEL: u8 = 255;
/// Half-width of the class-0 uniform noise.
pub const NOISE_AMPLITUDE: f64 = 0.4;
/// Offset of the two checkerboard / stripe values from 0.5.
pub const PATTERN_CONTRAST: f64 = 0.25;
const GRADIENT_SPAN: f64 = 0.3;
const GRADIENT_NOISE: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("LabelMap", &[height, width], &[data.len()]));
        }
        Ok(Self { height, width, data })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    Noise,
    Checkerboard,
    Stripes,
    Gradient,
}

impl Texture {
    pub fn for_class(class: u8) -> Texture {
        match class {
            0 => Texture::Noise,
            1 => Texture::Checkerboard,
            2 => Texture::Stripes,
            _ => Texture::Gradient,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecipe {
    pub class: u8,
    pub texture: Texture,
    /// Voronoi site `(row, col)`.
    pub site: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    /// `[3 × H × W]` in `[0, 1]`, already quantized to 8 bits.
    pub image: Tensor,
    pub labels: LabelMap,
    pub seed: u64,
    pub recipe: Vec<RegionRecipe>,
}

/// Seeded samples split into train and validation index lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SegSample>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleMeta {
    seed: u64,
    recipe: Vec<RegionRecipe>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    seed: u64,
    size: usize,
    num_classes: usize,
    samples: Vec<SampleMeta>,
    train: Vec<usize>,
    val: Vec<usize>,
}

pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn fill_region(
    texture: Texture,
    pixels: &[(usize, usize)],
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let n = pixels.len() as f64;
    let (cy, cx) = pixels
        .iter()
        .fold((0.0, 0.0), |(a, b), &(y, x)| (a + y as f64 / n, b + x as f64 / n));
    let mut vals: Vec<f64> = pixels
        .iter()
        .map(|&(y, x)| match texture {
            Texture::Noise => 0.5 + rng.gen_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE),
            Texture::Checkerboard => {
                let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
                0.5 + sign * PATTERN_CONTRAST
            }
            Texture::Stripes => {
                let sign = if y % 4 < 2 { 1.0 } else { -1.0 };
                0.5 + sign * PATTERN_CONTRAST
            }
            Texture::Gradient => {
                let t = ((x as f64 - cx) * angle.cos() + (y as f64 - cy) * angle.sin()) / size as f64;
                0.5 + GRADIENT_SPAN * t + rng.gen_range(-GRADIENT_NOISE..GRADIENT_NOISE)
            }
        })
        .collect();
    let shift = 0.5 - vals.iter().sum::<f64>() / n;
    for v in &mut vals {
        *v = (*v + shift).clamp(0.0, 1.0);
    }
    vals
}

pub fn generate_sample(size: usize, num_classes: usize, seed: u64) -> Result<SegSample> {
    validate(size, num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(2..=4);
    let mut sites: Vec<(usize, usize)> = Vec::with_capacity(k);
    while sites.len() < k {
        let s = (rng.gen_range(0..size), rng.gen_range(0..size));
        if !sites.contains(&s) {
            sites.push(s);
        }
    }
    let recipe: Vec<RegionRecipe> = sites
        .iter()
        .map(|&site| {
            let class = rng.gen_range(0..num_classes) as u8;
            RegionRecipe {
                class,
                texture: Texture::for_class(class),
                site,
            }
        })
        .collect();

    let mut owner = vec![0usize; size * size];
    let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
    for y in 0..size {
        for x in 0..size {
            let d2 = |&(sy, sx): &(usize, usize)| {
                let dy = y as i64 - sy as i64;
                let dx = x as i64 - sx as i64;
                dy * dy + dx * dx
            };
            let r = (0..k).min_by_key(|&r| d2(&sites[r])).unwrap_or(0);
            owner[y * size + x] = r;
            members[r].push((y, x));
        }
    }

    let mut plane = vec![0.0; size * size];
    for (r, pixels) in members.iter().enumerate() {
        let vals = fill_region(recipe[r].texture, pixels, size, &mut rng);
        for (&(y, x), v) in pixels.iter().zip(vals) {
            plane[y * size + x] = f64::from(quantize_u8(v)) / 255.0;
        }
    }
    let labels = owner.iter().map(|&r| recipe[r].class).collect();
    let hw = size * size;
    Ok(SegSample {
        image: Tensor::from_fn(&[3, size, size], |i| plane[i % hw]),
        labels: LabelMap::new(size, size, labels)?,
        seed,
        recipe,
    })
}

fn validate(size: usize, num_classes: usize) -> Result<()> {
    if !(2..=4).contains(&num_classes) {
        return Err(Error::InvalidArgument(format!(
            "num_classes must be 2, 3 or 4, got {num_classes}"
        )));
    }
    if size < 32 {
        return Err(Error::InvalidArgument(format!("size must be >= 32, got {size}")));
    }
    Ok(())
}

/// `n` samples; sample `i` is generated from seed `seed + i`.
pub fn generate_dataset(n: usize, size: usize, num_classes: usize, seed: u64) -> Result<Vec<SegSample>> {
    validate(size, num_classes)?;
    (0..n)
        .map(|i| generate_sample(size, num_classes, seed.wrapping_add(i as u64)))
        .collect()
}

/// Seeded 80/20 split of `0..n`, each list sorted.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    idx.shuffle(&mut rng);
    let n_train = n * 4 / 5;
    let (mut train, mut val) = (idx[..n_train].to_vec(), idx[n_train..].to_vec());
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

impl Dataset {
    pub fn generate(n: usize, size: usize, num_classes: usize, seed: u64) -> Result<Self> {
        let samples = generate_dataset(n, size, num_classes, seed)?;
        let (train, val) = split_indices(n, seed);
        Ok(Self {
            samples,
            train,
            val,
            num_classes,
            seed,
        })
    }

    pub fn size(&self) -> usize {
        self.samples.first().map_or(0, |s| s.labels.height)
    }

    pub fn train_samples(&self) -> impl Iterator<Item = &SegSample> {
        self.train.iter().map(|&i| &self.samples[i])
    }

    pub fn val_samples(&self) -> impl Iterator<Item = &SegSample> {
        self.val.iter().map(|&i| &self.samples[i])
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for sub in ["images", "labels"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        for (i, s) in self.samples.iter().enumerate() {
            save_png(&s.image, dir.join(format!("images/{i:04}.png")))?;
            save_label_png(&s.labels, dir.join(format!("labels/{i:04}.png")))?;
        }
        let meta = Meta {
            seed: self.seed,
            size: self.size(),
            num_classes: self.num_classes,
            samples: self
                .samples
                .iter()
                .map(|s| SampleMeta {
                    seed: s.seed,
                    recipe: s.recipe.clone(),
                })
                .collect(),
            train: self.train.clone(),
            val: self.val.clone(),
        };
        write_json(&meta, dir.join("meta.json"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: Meta = read_json(dir.join("meta.json"))?;
        let n = meta.samples.len();
        if let Some(&bad) = meta.train.iter().chain(&meta.val).find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!(
                "meta.json split index {bad} out of range for {n} samples"
            )));
        }
        let samples = meta
            .samples
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                let image = load_png(dir.join(format!("images/{i:04}.png")))?;
                let labels = load_label_png(dir.join(format!("labels/{i:04}.png")))?;
                if image.shape()[1..] != [labels.height, labels.width] {
                    return Err(Error::shape("dataset sample", image.shape(), &[labels.height, labels.width]));
                }
                Ok(SegSample {
                    image,
                    labels,
                    seed: m.seed,
                    recipe: m.recipe,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples,
            train: meta.train,
            val: meta.val,
            num_classes: meta.num_classes,
            seed: meta.seed,
        })
    }
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Write a `[3×H×W]`, `[1×H×W]` or `[H×W]` tensor in `[0,1]` as an 8-bit PNG.
pub fn save_png(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = match *t.shape() {
        [h, w] => (1, h, w),
        [c @ (1 | 3), h, w] => (c, h, w),
        _ => return Err(Error::shape("save_png", &[3, 0, 0], t.shape())),
    };
    let hw = h * w;
    let d = t.data();
    let (wu, hu) = (w as u32, h as u32);
    if c == 1 {
        let img = GrayImage::from_fn(wu, hu, |x, y| {
            image::Luma([quantize_u8(d[y as usize * w + x as usize])])
        });
        img.save(path).map_err(image_err(path))
    } else {
        let img = RgbImage::from_fn(wu, hu, |x, y| {
            let i = y as usize * w + x as usize;
            Rgb([quantize_u8(d[i]), quantize_u8(d[hw + i]), quantize_u8(d[2 * hw + i])])
        });
        img.save(path).map_err(image_err(path))
    }
}

/// Load any PNG as `[3×H×W]` in `[0,1]`.
pub fn load_png(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = image::open(path).map_err(image_err(path))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let hw = h * w;
    let raw = img.into_raw();
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / hw, i % hw);
        f64::from(raw[p * 3 + c]) / 255.0
    }))
}

/// Load a PNG as 8-bit luma, returning `(height, width, pixels)`.
pub fn load_gray_u8(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let img = image::open(path).map_err(image_err(path))?.to_luma8();
    Ok((img.height() as usize, img.width() as usize, img.into_raw()))
}

pub fn save_gray_u8(height: usize, width: usize, pixels: &[u8], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img = GrayImage::from_raw(width as u32, height as u32, pixels.to_vec())
        .ok_or_else(|| Error::shape("save_gray_u8", &[height, width], &[pixels.len()]))?;
    img.save(path).map_err(image_err(path))
}

/// Label maps are stored with the class index in the red channel.
pub fn save_label_png(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img: RgbImage = ImageBuffer::from_fn(labels.width as u32, labels.height as u32, |x, y| {
        Rgb([labels.data[y as usize * labels.width + x as usize], 0, 0])
    });
    img.save(path).map_err(image_err(path))
}

pub fn load_label_png(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let img = image::open(path).map_err(image_err(path))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0[0]).collect();
    LabelMap::new(h, w, data)
}
