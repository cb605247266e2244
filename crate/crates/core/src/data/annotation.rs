//! DeepPCB annotation text files.
//!
//! One defect per line: `x1 y1 x2 y2 class_id` in pixel corner coordinates of
//! the tested image. Fields are separated by whitespace; commas are accepted
//! as well.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BBox;

use super::{Annotation, DefectClass};

/// Splits one annotation line into fields.
fn fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|f| !f.is_empty())
}

/// Parses annotation text for an image of `width` x `height` pixels.
/// `path` is only used for error messages.
pub fn parse_annotations(
    text: &str,
    path: &Path,
    width: usize,
    height: usize,
) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = fields(line).collect();
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        if parts.len() != 5 {
            return Err(parse_err(format!(
                "expected 5 fields, found {}",
                parts.len()
            )));
        }
        let mut v = [0i64; 5];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .parse::<i64>()
                .map_err(|_| parse_err(format!("field {p:?} is not an integer")))?;
        }
        let [x1, y1, x2, y2, class_id] = v;
        let class = u8::try_from(class_id)
            .ok()
            .and_then(DefectClass::from_id)
            .ok_or_else(|| Error::Schema {
                path: path.to_path_buf(),
                line: line_no,
                class_id,
            })?;
        if x2 <= x1 || y2 <= y1 {
            return Err(parse_err(format!("empty box ({x1},{y1})-({x2},{y2})")));
        }
        let bbox =
            BBox::from_pixel_corners(x1 as f64, y1 as f64, x2 as f64, y2 as f64, width, height);
        out.push(Annotation::new(bbox, class));
    }
    Ok(out)
}

/// Reads and parses an annotation file.
pub fn parse_annotation_file(path: &Path, width: usize, height: usize) -> Result<Vec<Annotation>> {
    let text = std::fs::read_to_string(path)?;
    parse_annotations(&text, path, width, height)
}

/// Formats annotations in the same schema, rounding corners to whole pixels.
pub fn format_annotations(annotations: &[Annotation], width: usize, height: usize) -> String {
    let mut s = String::new();
    for a in annotations {
        let [x1, y1, x2, y2] = a.bbox.pixel_corners(width, height);
        let _ = writeln!(
            s,
            "{} {} {} {} {}",
            x1.round() as i64,
            y1.round() as i64,
            x2.round() as i64,
            y2.round() as i64,
            a.class_id
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p() -> &'static Path {
        Path::new("t.txt")
    }

    #[test]
    fn parses_dataset_line() {
        let a = parse_annotations("130 270 165 305 3\n", p(), 640, 640).unwrap();
        assert_eq!(a.len(), 1);
        assert_abs_diff_eq!(a[0].bbox.cx, 147.5 / 640.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[0].bbox.cy, 287.5 / 640.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[0].bbox.w, 35.0 / 640.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[0].bbox.h, 35.0 / 640.0, epsilon = 1e-12);
        assert_eq!(a[0].class(), Some(DefectClass::Mousebite));
    }

    #[test]
    fn empty_and_commas() {
        assert!(parse_annotations("", p(), 640, 640).unwrap().is_empty());
        let a = parse_annotations("1,2,30,40,6\r\n\n", p(), 640, 640).unwrap();
        assert_eq!(a[0].class(), Some(DefectClass::PinHole));
    }

    #[test]
    fn arity_error_names_line() {
        let err = parse_annotations("1 2 3 4 1\n1 2 3 4\n", p(), 640, 640).unwrap_err();
        match err {
            Error::Parse { line, path, .. } => {
                assert_eq!(line, 2);
                assert_eq!(path, Path::new("t.txt"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn class_out_of_range() {
        assert!(matches!(
            parse_annotations("1 2 30 40 7", p(), 640, 640),
            Err(Error::Schema { class_id: 7, .. })
        ));
        assert!(matches!(
            parse_annotations("1 2 30 40 0", p(), 640, 640),
            Err(Error::Schema { class_id: 0, .. })
        ));
    }

    #[test]
    fn format_round_trip() {
        let text = "130 270 165 305 3\n0 0 640 12 1\n";
        let a = parse_annotations(text, p(), 640, 640).unwrap();
        assert_eq!(format_annotations(&a, 640, 640), text);
    }
}
