//! The DeepPCB directory layout.
//!
//! ```text
//! <root>/PCBData/
//!     trainval.txt            # "groupG/G/NAME.png groupG/G_not/NAME.txt" per line
//!     test.txt
//!     groupG/G/NAME_temp.png  # template
//!     groupG/G/NAME_test.png  # tested
//!     groupG/G_not/NAME.txt   # annotations
//! ```
//!
//! The list files may also sit directly in the given root. Images in the
//! list carry no suffix; `_temp` and `_test` are inserted before the
//! extension.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::annotation::{format_annotations, parse_annotation_file};
use super::imageio::{read_binary, write_binary_png, ReadOptions};
use super::{Annotation, ImagePair, Sample};

pub const TRAIN_LIST: &str = "trainval.txt";
pub const TEST_LIST: &str = "test.txt";

/// One indexed pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub id: String,
    pub template_path: PathBuf,
    pub tested_path: PathBuf,
    pub annotation_path: PathBuf,
    pub width: usize,
    pub height: usize,
    pub annotations: Vec<Annotation>,
}

impl PairRecord {
    /// Reads and binarizes both images, checking that their sizes agree.
    pub fn load(&self, opts: &ReadOptions) -> Result<Sample> {
        let template = read_binary(&self.template_path, opts)?;
        let tested = read_binary(&self.tested_path, opts)?;
        if !template.same_shape(&tested) {
            return Err(Error::DatasetIntegrity {
                message: "template and tested sizes differ".into(),
                ids: vec![self.id.clone()],
            });
        }
        Ok(Sample {
            pair: ImagePair::new(template, tested, self.id.clone())?,
            annotations: self.annotations.clone(),
        })
    }
}

/// Train and test splits of a dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub train: Vec<PairRecord>,
    pub test: Vec<PairRecord>,
}

fn with_suffix(image: &Path, suffix: &str) -> PathBuf {
    let stem = image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    let name = match image.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}{suffix}.{ext}"),
        None => format!("{stem}{suffix}"),
    };
    image.with_file_name(name)
}

fn find_list_dir(root: &Path) -> Option<PathBuf> {
    [root.to_path_buf(), root.join("PCBData")]
        .into_iter()
        .find(|d| d.join(TRAIN_LIST).is_file() || d.join(TEST_LIST).is_file())
}

fn read_split(base: &Path, list: &Path) -> Result<(Vec<PairRecord>, Vec<String>)> {
    let mut records = Vec::new();
    let mut broken = Vec::new();
    if !list.is_file() {
        return Ok((records, broken));
    }
    let text = fs::read_to_string(list)?;
    for (idx, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.is_empty() {
            continue;
        }
        if parts.len() != 2 {
            return Err(Error::Parse {
                path: list.to_path_buf(),
                line: idx + 1,
                message: format!(
                    "expected image and annotation paths, found {} fields",
                    parts.len()
                ),
            });
        }
        let image = base.join(parts[0]);
        let id = image
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(parts[0])
            .to_string();
        let template_path = with_suffix(&image, "_temp");
        let tested_path = with_suffix(&image, "_test");
        let annotation_path = base.join(parts[1]);
        if !template_path.is_file() || !tested_path.is_file() || !annotation_path.is_file() {
            broken.push(id);
            continue;
        }
        let (w, h) = image::image_dimensions(&tested_path).map_err(|e| Error::Image {
            path: tested_path.clone(),
            message: e.to_string(),
        })?;
        let annotations = parse_annotation_file(&annotation_path, w as usize, h as usize)?;
        records.push(PairRecord {
            id,
            template_path,
            tested_path,
            annotation_path,
            width: w as usize,
            height: h as usize,
            annotations,
        });
    }
    Ok((records, broken))
}

/// Indexes a dataset in DeepPCB layout. Images are only read on
/// [`PairRecord::load`].
pub fn load_deeppcb(root: &Path) -> Result<DatasetIndex> {
    let Some(base) = find_list_dir(root) else {
        return Err(Error::DatasetIntegrity {
            message: format!("no {TRAIN_LIST} or {TEST_LIST} under {}", root.display()),
            ids: Vec::new(),
        });
    };
    let (train, mut broken) = read_split(&base, &base.join(TRAIN_LIST))?;
    let (test, broken_test) = read_split(&base, &base.join(TEST_LIST))?;
    broken.extend(broken_test);
    if !broken.is_empty() {
        return Err(Error::DatasetIntegrity {
            message: "missing template, tested image or annotation file".into(),
            ids: broken,
        });
    }
    if train.is_empty() && test.is_empty() {
        return Err(Error::DatasetIntegrity {
            message: "dataset lists are empty".into(),
            ids: Vec::new(),
        });
    }
    Ok(DatasetIndex {
        root: base,
        train,
        test,
    })
}

/// Pairs per group directory when writing.
const GROUP_SIZE: usize = 100;

/// Writes samples in DeepPCB layout under `<root>/PCBData` with PNG images.
pub fn write_deeppcb(root: &Path, train: &[Sample], test: &[Sample]) -> Result<DatasetIndex> {
    let base = root.join("PCBData");
    fs::create_dir_all(&base)?;
    let mut counter = 0usize;
    for (list_name, samples) in [(TRAIN_LIST, train), (TEST_LIST, test)] {
        let mut list = String::new();
        for s in samples {
            let group = 10_000 + counter / GROUP_SIZE;
            let name = format!("{group:05}{:03}", counter % GROUP_SIZE);
            counter += 1;
            let img_dir = format!("group{group:05}/{group:05}");
            let ann_dir = format!("group{group:05}/{group:05}_not");
            fs::create_dir_all(base.join(&img_dir))?;
            fs::create_dir_all(base.join(&ann_dir))?;
            write_binary_png(
                &s.pair.template,
                &base.join(format!("{img_dir}/{name}_temp.png")),
            )?;
            write_binary_png(
                &s.pair.tested,
                &base.join(format!("{img_dir}/{name}_test.png")),
            )?;
            fs::write(
                base.join(format!("{ann_dir}/{name}.txt")),
                format_annotations(&s.annotations, s.pair.width(), s.pair.height()),
            )?;
            list.push_str(&format!("{img_dir}/{name}.png {ann_dir}/{name}.txt\n"));
        }
        fs::write(base.join(list_name), list)?;
    }
    load_deeppcb(root)
}
