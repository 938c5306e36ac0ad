//! Survey manifests (images + point labels), validation and train/test splits.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::TaxonomyTree;

/// CPCe-style annotation caps each image at this many labelled points.
pub const MAX_POINTS_PER_IMAGE: usize = 50;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: malformed row: {reason}")]
    MalformedRow {
        file: String,
        line: u64,
        reason: String,
    },
    #[error("{file}:{line}: label references unknown image {image_id}")]
    UnknownImageReference {
        file: String,
        line: u64,
        image_id: String,
    },
    #[error("{file}:{line}: duplicate image id {image_id}")]
    DuplicateImageId {
        file: String,
        line: u64,
        image_id: String,
    },
    #[error("class code {code} (image {image_id}) is not in the taxonomy")]
    UnknownClassCode { image_id: String, code: String },
    #[error("image {image_id} has {count} labelled points (limit {MAX_POINTS_PER_IMAGE})")]
    TooManyPoints { image_id: String, count: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("site {site_id} has {images} image(s); a location split needs at least 2")]
    EmptySite { site_id: String, images: usize },
    #[error("image {image_id} from year {year} is in neither the train nor the test years")]
    YearNotCovered { image_id: String, year: i32 },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyImage {
    pub image_id: String,
    pub file_path: PathBuf,
    pub site_id: String,
    pub year: i32,
    pub depth_m: f64,
    pub width_px: u32,
    pub height_px: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointLabel {
    pub image_id: String,
    pub x_px: u32,
    pub y_px: u32,
    pub class_code: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub images: Vec<SurveyImage>,
    pub labels: Vec<PointLabel>,
}

#[derive(Deserialize)]
struct ImageRow {
    image_id: String,
    file_path: String,
    site_id: String,
    year: i32,
    depth_m: f64,
    width_px: u32,
    height_px: u32,
}

#[derive(Deserialize)]
struct LabelRow {
    image_id: String,
    x_px: u32,
    y_px: u32,
    class_code: String,
}

/// Parses `images.csv` and `labels.csv`. Relative `file_path` entries are
/// resolved against the directory holding `images.csv`.
pub fn parse_manifest(images_csv: &Path, labels_csv: &Path) -> Result<Dataset, IngestError> {
    let open = |p: &Path| {
        File::open(p).map_err(|source| IngestError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    let base = images_csv.parent().unwrap_or(Path::new("."));
    let images = read_images(open(images_csv)?, &images_csv.display().to_string(), base)?;
    let labels = read_labels(open(labels_csv)?, &labels_csv.display().to_string(), &images)?;
    Ok(Dataset { images, labels })
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn malformed(file: &str, line: u64, reason: impl fmt::Display) -> IngestError {
    IngestError::MalformedRow {
        file: file.to_string(),
        line,
        reason: reason.to_string(),
    }
}

fn csv_line(err: &csv::Error) -> u64 {
    err.position().map(|p| p.line()).unwrap_or(0)
}

pub fn read_images<R: Read>(reader: R, file: &str, base_dir: &Path) -> Result<Vec<SurveyImage>, IngestError> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers().map_err(|e| malformed(file, 1, e))?.clone();
    let mut seen = HashSet::new();
    let mut images = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| malformed(file, csv_line(&e), e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: ImageRow = record.deserialize(Some(&headers)).map_err(|e| malformed(file, line, e))?;
        if row.image_id.is_empty() {
            return Err(malformed(file, line, "empty image_id"));
        }
        if row.width_px == 0 || row.height_px == 0 {
            return Err(malformed(file, line, "image dimensions must be positive"));
        }
        if !(row.depth_m.is_finite() && row.depth_m >= 0.0) {
            return Err(malformed(file, line, "depth_m must be a nonnegative number"));
        }
        if !seen.insert(row.image_id.clone()) {
            return Err(IngestError::DuplicateImageId {
                file: file.to_string(),
                line,
                image_id: row.image_id,
            });
        }
        let path = PathBuf::from(&row.file_path);
        let file_path = if path.is_relative() { base_dir.join(path) } else { path };
        images.push(SurveyImage {
            image_id: row.image_id,
            file_path,
            site_id: row.site_id,
            year: row.year,
            depth_m: row.depth_m,
            width_px: row.width_px,
            height_px: row.height_px,
        });
    }
    Ok(images)
}

pub fn read_labels<R: Read>(reader: R, file: &str, images: &[SurveyImage]) -> Result<Vec<PointLabel>, IngestError> {
    let dims: HashMap<&str, (u32, u32)> = images
        .iter()
        .map(|im| (im.image_id.as_str(), (im.width_px, im.height_px)))
        .collect();
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers().map_err(|e| malformed(file, 1, e))?.clone();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| malformed(file, csv_line(&e), e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: LabelRow = record.deserialize(Some(&headers)).map_err(|e| malformed(file, line, e))?;
        let Some(&(w, h)) = dims.get(row.image_id.as_str()) else {
            return Err(IngestError::UnknownImageReference {
                file: file.to_string(),
                line,
                image_id: row.image_id,
            });
        };
        if row.x_px >= w || row.y_px >= h {
            return Err(malformed(
                file,
                line,
                format!("point ({}, {}) outside {}x{} image", row.x_px, row.y_px, w, h),
            ));
        }
        if row.class_code.is_empty() {
            return Err(malformed(file, line, "empty class_code"));
        }
        labels.push(PointLabel {
            image_id: row.image_id,
            x_px: row.x_px,
            y_px: row.y_px,
            class_code: row.class_code,
        });
    }
    Ok(labels)
}

impl Dataset {
    /// Checks class codes against the taxonomy and the per-image point cap.
    pub fn validate(&self, tree: &TaxonomyTree) -> Result<(), IngestError> {
        let mut per_image: HashMap<&str, usize> = HashMap::new();
        for label in &self.labels {
            if !tree.contains_code(&label.class_code) {
                return Err(IngestError::UnknownClassCode {
                    image_id: label.image_id.clone(),
                    code: label.class_code.clone(),
                });
            }
            *per_image.entry(&label.image_id).or_default() += 1;
        }
        // report in manifest order
        for image in &self.images {
            let count = per_image.get(image.image_id.as_str()).copied().unwrap_or(0);
            if count > MAX_POINTS_PER_IMAGE {
                return Err(IngestError::TooManyPoints {
                    image_id: image.image_id.clone(),
                    count,
                });
            }
        }
        Ok(())
    }

    pub fn image(&self, image_id: &str) -> Option<&SurveyImage> {
        self.images.iter().find(|im| im.image_id == image_id)
    }

    /// Label indices grouped per image, in image order; each group keeps label order.
    pub fn labels_by_image(&self) -> Vec<(&SurveyImage, Vec<usize>)> {
        let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, label) in self.labels.iter().enumerate() {
            groups.entry(label.image_id.as_str()).or_default().push(i);
        }
        self.images
            .iter()
            .map(|im| (im, groups.remove(im.image_id.as_str()).unwrap_or_default()))
            .collect()
    }

    /// Keeps the images in `keep` (and their labels), preserving order.
    pub fn subset(&self, keep: &HashSet<&str>) -> Dataset {
        Dataset {
            images: self
                .images
                .iter()
                .filter(|im| keep.contains(im.image_id.as_str()))
                .cloned()
                .collect(),
            labels: self
                .labels
                .iter()
                .filter(|l| keep.contains(l.image_id.as_str()))
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum SplitSpec {
    ByLocationFraction { fraction: f64, seed: u64 },
    ByYear { train_years: BTreeSet<i32>, test_years: BTreeSet<i32> },
}

impl SplitSpec {
    /// The Rottnest protocol: 2010-2012 train, 2013 test.
    pub fn rottnest_years() -> Self {
        SplitSpec::ByYear {
            train_years: BTreeSet::from([2010, 2011, 2012]),
            test_years: BTreeSet::from([2013]),
        }
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |ys: &BTreeSet<i32>| ys.iter().map(|y| y.to_string()).collect::<Vec<_>>().join(",");
        match self {
            SplitSpec::ByLocationFraction { fraction, seed } => write!(f, "location:{fraction}:{seed}"),
            SplitSpec::ByYear { train_years, test_years } => {
                write!(f, "years:{}/{}", join(train_years), join(test_years))
            }
        }
    }
}

impl FromStr for SplitSpec {
    type Err = IngestError;

    /// `location:0.7:SEED` or `years:2010,2011,2012/2013`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| IngestError::InvalidSplit(format!("{s:?}: {why}"));
        let (kind, rest) = s.split_once(':').ok_or_else(|| bad("missing ':'"))?;
        match kind {
            "location" => {
                let (frac, seed) = rest.split_once(':').ok_or_else(|| bad("expected location:FRACTION:SEED"))?;
                let fraction: f64 = frac.parse().map_err(|_| bad("fraction is not a number"))?;
                let seed: u64 = seed.parse().map_err(|_| bad("seed is not an integer"))?;
                if !(fraction > 0.0 && fraction < 1.0) {
                    return Err(bad("fraction must lie in (0, 1)"));
                }
                Ok(SplitSpec::ByLocationFraction { fraction, seed })
            }
            "years" => {
                let (train, test) = rest.split_once('/').ok_or_else(|| bad("expected years:TRAIN/TEST"))?;
                let parse = |list: &str| -> Result<BTreeSet<i32>, IngestError> {
                    list.split(',')
                        .map(|y| y.trim().parse::<i32>().map_err(|_| bad("year is not an integer")))
                        .collect()
                };
                let spec = SplitSpec::ByYear {
                    train_years: parse(train)?,
                    test_years: parse(test)?,
                };
                spec.check()?;
                Ok(spec)
            }
            _ => Err(bad("unknown split kind")),
        }
    }
}

impl SplitSpec {
    fn check(&self) -> Result<(), IngestError> {
        match self {
            SplitSpec::ByLocationFraction { fraction, .. } => {
                if !(*fraction > 0.0 && *fraction < 1.0) {
                    return Err(IngestError::InvalidSplit(format!("fraction {fraction} outside (0, 1)")));
                }
            }
            SplitSpec::ByYear { train_years, test_years } => {
                if let Some(y) = train_years.intersection(test_years).next() {
                    return Err(IngestError::InvalidSplit(format!("year {y} is in both train and test")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Dataset,
    pub test: Dataset,
}

/// Image-level train/test partition.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Partition, IngestError> {
    if dataset.images.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    spec.check()?;
    let mut train_ids: HashSet<&str> = HashSet::new();
    match spec {
        SplitSpec::ByLocationFraction { fraction, seed } => {
            let mut sites: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for im in &dataset.images {
                sites.entry(&im.site_id).or_default().push(&im.image_id);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for (site, mut ids) in sites {
                if ids.len() < 2 {
                    return Err(IngestError::EmptySite {
                        site_id: site.to_string(),
                        images: ids.len(),
                    });
                }
                // guards against 0.29 * 100 = 28.999...
                let n_train = (fraction * ids.len() as f64 + 1e-9).floor() as usize;
                ids.shuffle(&mut rng);
                train_ids.extend(&ids[..n_train]);
            }
        }
        SplitSpec::ByYear { train_years, test_years } => {
            for im in &dataset.images {
                if train_years.contains(&im.year) {
                    train_ids.insert(&im.image_id);
                } else if !test_years.contains(&im.year) {
                    return Err(IngestError::YearNotCovered {
                        image_id: im.image_id.clone(),
                        year: im.year,
                    });
                }
            }
        }
    }
    let test_ids: HashSet<&str> = dataset
        .images
        .iter()
        .map(|im| im.image_id.as_str())
        .filter(|id| !train_ids.contains(id))
        .collect();
    Ok(Partition {
        train: dataset.subset(&train_ids),
        test: dataset.subset(&test_ids),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub class_counts: BTreeMap<String, usize>,
    pub image_count: usize,
    pub point_count: usize,
}

/// Per-class point counts; `image_count` counts distinct images among the labels.
pub fn summarize(labels: &[PointLabel]) -> DatasetSummary {
    let mut class_counts = BTreeMap::new();
    let mut images = HashSet::new();
    for label in labels {
        *class_counts.entry(label.class_code.clone()).or_insert(0) += 1;
        images.insert(label.image_id.as_str());
    }
    DatasetSummary {
        class_counts,
        image_count: images.len(),
        point_count: labels.len(),
    }
}

impl DatasetSummary {
    /// Adds zero entries for requested codes that the taxonomy knows but the labels lack.
    pub fn include_zero_counts<'a>(&mut self, tree: &TaxonomyTree, codes: impl IntoIterator<Item = &'a str>) {
        for code in codes {
            if tree.contains_code(code) {
                self.class_counts.entry(code.to_string()).or_insert(0);
            }
        }
    }

    pub fn count(&self, code: &str) -> usize {
        self.class_counts.get(code).copied().unwrap_or(0)
    }

    /// Class-wise sum of two summaries over disjoint image sets.
    pub fn combined(&self, other: &DatasetSummary) -> DatasetSummary {
        let mut class_counts = self.class_counts.clone();
        for (code, n) in &other.class_counts {
            *class_counts.entry(code.clone()).or_insert(0) += n;
        }
        DatasetSummary {
            class_counts,
            image_count: self.image_count + other.image_count,
            point_count: self.point_count + other.point_count,
        }
    }
}
