//! Detection overlays: boxes in per-class colors over the tested image,
//! labeled with a 3×5 bitmap font.

use image::{Rgb, RgbImage};
use pcb_gpp::data::DefectClass;
use pcb_gpp::geometry::ScoredBox;

pub fn class_color(class_id: u8) -> Rgb<u8> {
    match class_id {
        1 => Rgb([230, 60, 60]),
        2 => Rgb([250, 170, 30]),
        3 => Rgb([240, 230, 60]),
        4 => Rgb([80, 200, 80]),
        5 => Rgb([60, 160, 240]),
        6 => Rgb([200, 90, 230]),
        _ => Rgb([255, 255, 255]),
    }
}

/// Rows top to bottom, bit 2 is the left column.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 3, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 2, 2],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [3, 4, 4, 4, 3],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'P' => [6, 5, 6, 4, 4],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        _ => [0; 5],
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Draws `text` with its top-left corner at (x, y) on a dark backing
/// strip; `scale` multiplies the 3×5 cell.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>, scale: i64) {
    let n = text.chars().count() as i64;
    for dy in -1..=5 * scale {
        for dx in -1..=4 * scale * n {
            put(img, x + dx, y + dy, Rgb([0, 0, 0]));
        }
    }
    for (i, ch) in text.chars().enumerate() {
        let rows = glyph(ch);
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..3 {
                if bits & (4 >> col) != 0 {
                    for sy in 0..scale {
                        for sx in 0..scale {
                            let px = x + (i as i64 * 4 + col) * scale + sx;
                            let py = y + r as i64 * scale + sy;
                            put(img, px, py, color);
                        }
                    }
                }
            }
        }
    }
}

pub fn draw_rect(img: &mut RgbImage, corners: [f64; 4], color: Rgb<u8>, thickness: i64) {
    let [x1, y1, x2, y2] = corners.map(|v| v.round() as i64);
    for t in 0..thickness {
        for x in x1..=x2 {
            put(img, x, y1 + t, color);
            put(img, x, y2 - t, color);
        }
        for y in y1..=y2 {
            put(img, x1 + t, y, color);
            put(img, x2 - t, y, color);
        }
    }
}

fn short_name(class_id: u8) -> &'static str {
    match DefectClass::from_id(class_id) {
        Some(DefectClass::Open) => "open",
        Some(DefectClass::Short) => "short",
        Some(DefectClass::Mousebite) => "mbite",
        Some(DefectClass::Spur) => "spur",
        Some(DefectClass::SpuriousCopper) => "copper",
        Some(DefectClass::PinHole) => "pinhole",
        None => "-",
    }
}

/// Draws every detection with a "name score" label above its box.
pub fn render(base: &RgbImage, dets: &[ScoredBox]) -> RgbImage {
    let mut img = base.clone();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let scale = (w.max(h) / 320).max(1) as i64;
    for d in dets {
        let corners = d.bbox.pixel_corners(w, h);
        let color = class_color(d.class_id);
        draw_rect(&mut img, corners, color, scale);
        let label = format!("{} {:.2}", short_name(d.class_id), d.score);
        let ty = (corners[1].round() as i64 - 6 * scale - 1).max(1);
        draw_text(
            &mut img,
            corners[0].round() as i64,
            ty,
            &label,
            color,
            scale,
        );
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use pcb_gpp::geometry::BBox;

    #[test]
    fn labels_have_glyphs() {
        for id in 1..=6 {
            for ch in short_name(id).chars().chain("0123456789.".chars()) {
                assert_ne!(glyph(ch), [0; 5], "{ch}");
            }
        }
    }

    #[test]
    fn boxes_are_drawn_in_class_color() {
        let base = RgbImage::new(64, 64);
        let det = ScoredBox {
            bbox: BBox::from_pixel_corners(20.0, 30.0, 40.0, 50.0, 64, 64),
            score: 0.9,
            class_id: 2,
        };
        let img = render(&base, &[det]);
        assert_eq!(*img.get_pixel(30, 50), class_color(2));
        assert_eq!(*img.get_pixel(20, 40), class_color(2));
        assert_eq!(*img.get_pixel(30, 40), Rgb([0, 0, 0]));
    }
}
