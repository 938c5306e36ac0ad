//! Synthetic survey with exactly separable stub features.
//!
//! Each image is a 3×3 grid of uniform 224×224 tiles. Tile 0 is black and
//! tile 1 white, so the percentile stretch maps every channel onto itself.
//! The other seven tiles take a class colour and carry one labelled point at
//! the tile centre; the patch around that point is exactly the tile. Patches
//! of one class are therefore identical in every image, and so are their
//! hashed features.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{io_err, Error, Result};
use crate::ingest::{PointLabel, SurveyImage};
use crate::PATCH_SIZE;

pub const GRID: usize = 3;
pub const SIDE: usize = GRID * PATCH_SIZE;
pub const DEFAULT_IMAGES: usize = 20;
pub const DEFAULT_SEED: u64 = 2013;

/// Class codes and their tile colours.
pub const CLASSES: [(&str, [u8; 3]); 5] = [
    ("MAECK", [120, 84, 30]),
    ("MACAU", [40, 150, 60]),
    ("MASR", [170, 40, 50]),
    ("SUS", [220, 200, 150]),
    ("CSBL", [90, 110, 200]),
];

const SITES: [&str; 4] = ["S1", "S2", "S3", "S4"];
const YEARS: [i32; 4] = [2010, 2011, 2012, 2013];
const KELP_PROBABILITY: f64 = 0.4;

pub struct SynthImage {
    pub meta: SurveyImage,
    pub pixels: image::RgbImage,
}

pub struct SynthDataset {
    pub images: Vec<SynthImage>,
    pub labels: Vec<PointLabel>,
}

fn tile_centre(tile: usize) -> (u32, u32) {
    let (row, col) = (tile / GRID, tile % GRID);
    ((col * PATCH_SIZE + PATCH_SIZE / 2) as u32, (row * PATCH_SIZE + PATCH_SIZE / 2) as u32)
}

/// Image `i` lies at site `i mod 4` in year `YEARS[(i / 4) mod 4]`.
pub fn generate(count: usize, seed: u64) -> SynthDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::new();
    for i in 0..count {
        let image_id = format!("syn-{i:02}");
        let site = SITES[i % SITES.len()];
        let mut pixels = image::RgbImage::new(SIDE as u32, SIDE as u32);
        let mut tiles = [[0u8; 3]; GRID * GRID];
        tiles[1] = [255; 3];
        for (tile, colour) in tiles.iter_mut().enumerate().skip(2) {
            let class = if rng.random_bool(KELP_PROBABILITY) {
                0
            } else {
                rng.random_range(1..CLASSES.len())
            };
            *colour = CLASSES[class].1;
            let (x, y) = tile_centre(tile);
            labels.push(PointLabel {
                image_id: image_id.clone(),
                x_px: x,
                y_px: y,
                class_code: CLASSES[class].0.to_string(),
            });
        }
        for (x, y, p) in pixels.enumerate_pixels_mut() {
            let tile = (y as usize / PATCH_SIZE) * GRID + x as usize / PATCH_SIZE;
            *p = image::Rgb(tiles[tile]);
        }
        images.push(SynthImage {
            meta: SurveyImage {
                image_id: image_id.clone(),
                file_path: PathBuf::from(format!("images/{image_id}.png")),
                site_id: site.to_string(),
                year: YEARS[(i / SITES.len()) % YEARS.len()],
                depth_m: 10.0 + 2.0 * (i % SITES.len()) as f64,
                width_px: SIDE as u32,
                height_px: SIDE as u32,
            },
            pixels,
        });
    }
    SynthDataset { images, labels }
}

/// Writes `images.csv`, `labels.csv` and `images/*.png` under `dir`;
/// returns the two manifest paths.
pub fn write_dataset(dataset: &SynthDataset, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let image_dir = dir.join("images");
    fs::create_dir_all(&image_dir).map_err(io_err(&image_dir))?;
    let mut images_csv = String::from("image_id,file_path,site_id,year,depth_m,width_px,height_px\n");
    for img in &dataset.images {
        let m = &img.meta;
        let path = dir.join(&m.file_path);
        img.pixels.save(&path).map_err(|e| Error::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        images_csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.image_id,
            m.file_path.display(),
            m.site_id,
            m.year,
            m.depth_m,
            m.width_px,
            m.height_px
        ));
    }
    let mut labels_csv = String::from("image_id,x_px,y_px,class_code\n");
    for l in &dataset.labels {
        labels_csv.push_str(&format!("{},{},{},{}\n", l.image_id, l.x_px, l.y_px, l.class_code));
    }
    let ip = dir.join("images.csv");
    let lp = dir.join("labels.csv");
    fs::write(&ip, images_csv).map_err(io_err(&ip))?;
    fs::write(&lp, labels_csv).map_err(io_err(&lp))?;
    Ok((ip, lp))
}
