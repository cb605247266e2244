//! Image pairs, annotations, preprocessing, augmentation, synthetic data and
//! the DeepPCB directory layout.

pub mod annotation;
pub mod augment;
pub mod deeppcb;
pub mod imageio;
pub mod preprocess;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub use annotation::{format_annotations, parse_annotation_file, parse_annotations};
pub use augment::{augment_pair, AugmentParams};
pub use deeppcb::{load_deeppcb, write_deeppcb, DatasetIndex, PairRecord};
pub use preprocess::{align, binarize, otsu_threshold};
pub use synth::{inject_defects, synthesize_template, GeneratorConfig};

/// The six defect classes, numbered as in the DeepPCB annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum DefectClass {
    Open = 1,
    Short = 2,
    Mousebite = 3,
    Spur = 4,
    SpuriousCopper = 5,
    PinHole = 6,
}

impl DefectClass {
    pub const ALL: [DefectClass; 6] = [
        DefectClass::Open,
        DefectClass::Short,
        DefectClass::Mousebite,
        DefectClass::Spur,
        DefectClass::SpuriousCopper,
        DefectClass::PinHole,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get((id as usize).wrapping_sub(1)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DefectClass::Open => "open",
            DefectClass::Short => "short",
            DefectClass::Mousebite => "mousebite",
            DefectClass::Spur => "spur",
            DefectClass::SpuriousCopper => "copper",
            DefectClass::PinHole => "pin-hole",
        }
    }
}

impl fmt::Display for DefectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DefectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown defect class {s:?}")))
    }
}

/// A labeled defect box on a tested image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub bbox: BBox,
    pub class_id: u8,
}

impl Annotation {
    pub fn new(bbox: BBox, class: DefectClass) -> Self {
        Self {
            bbox,
            class_id: class.id(),
        }
    }

    pub fn class(&self) -> Option<DefectClass> {
        DefectClass::from_id(self.class_id)
    }
}

/// Single-channel raster stored row-major, one byte per pixel.
///
/// After binarization values are exactly 0 (background) or 1 (copper).
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl fmt::Debug for Raster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Raster({}x{})", self.width, self.height)
    }
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0)
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "raster data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Value at signed coordinates, or `None` outside the raster.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> Option<u8> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(self.get(x as usize, y as usize))
        }
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn flip_horizontal(&self) -> Raster {
        let mut out = Raster::new(self.width, self.height);
        for y in 0..self.height {
            let src = &self.data[y * self.width..(y + 1) * self.width];
            let dst = &mut out.data[y * self.width..(y + 1) * self.width];
            for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                *d = *s;
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> Raster {
        let mut out = Raster::new(self.width, self.height);
        for y in 0..self.height {
            let src = &self.data[y * self.width..(y + 1) * self.width];
            let dy = self.height - 1 - y;
            out.data[dy * self.width..(dy + 1) * self.width].copy_from_slice(src);
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Raster> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidConfig(format!(
                "crop {width}x{height} at ({x0},{y0}) exceeds {}x{} raster",
                self.width, self.height
            )));
        }
        let mut out = Raster::new(width, height);
        for y in 0..height {
            let src = &self.data[(y0 + y) * self.width + x0..(y0 + y) * self.width + x0 + width];
            out.data[y * width..(y + 1) * width].copy_from_slice(src);
        }
        Ok(out)
    }
}

/// Aligned template and tested images of identical dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub template: Raster,
    pub tested: Raster,
    pub source_id: String,
}

impl ImagePair {
    pub fn new(template: Raster, tested: Raster, source_id: impl Into<String>) -> Result<Self> {
        if !template.same_shape(&tested) {
            return Err(Error::InvalidInput(format!(
                "template {}x{} and tested {}x{} differ in size",
                template.width, template.height, tested.width, tested.height
            )));
        }
        Ok(Self {
            template,
            tested,
            source_id: source_id.into(),
        })
    }

    pub fn width(&self) -> usize {
        self.template.width
    }

    pub fn height(&self) -> usize {
        self.template.height
    }
}

/// An image pair together with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pair: ImagePair,
    pub annotations: Vec<Annotation>,
}
