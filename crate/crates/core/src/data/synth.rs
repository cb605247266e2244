//! Synthetic PCB pairs with exact ground truth.
//!
//! [`synthesize_template`] renders a binary pseudo-board: pads with drill
//! holes on a jittered grid, a few copper pours, and traces routed with a
//! straight run plus a 45 degree run while keeping a clearance to every other
//! net. [`inject_defects`] then edits a copy of the template. Each edit is
//! derived from the raster alone (component labels and distance
//! transforms), so it also works on real templates.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

use super::{Annotation, DefectClass, Raster};

/// Padding in pixels added around the changed pixels of each defect.
pub const BOX_PADDING: i64 = 2;

const LAYOUT_RETRIES: u64 = 8;
const ATTEMPTS_PER_CLASS: usize = 40;

/// Generator parameters. Lengths are pixels at `feature_scale = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub image_size: usize,
    /// Multiplies every geometric length below.
    pub feature_scale: f64,
    pub trace_count: [usize; 2],
    pub trace_width: [f64; 2],
    /// Distance between pad grid sites.
    pub pad_pitch: f64,
    /// Probability that a grid site carries a pad.
    pub pad_density: f64,
    pub pad_radius: [f64; 2],
    /// Drill hole radius as a fraction of the pad radius.
    pub hole_fraction: [f64; 2],
    pub pour_count: [usize; 2],
    pub pour_size: [f64; 2],
    /// Minimum gap between distinct nets.
    pub clearance: f64,
    pub defects_per_image: [usize; 2],
    /// Sampling weights in class-id order (open, short, mousebite, spur,
    /// spurious copper, pin-hole).
    pub class_weights: [f64; 6],
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            image_size: 640,
            feature_scale: 1.0,
            trace_count: [10, 24],
            trace_width: [6.0, 14.0],
            pad_pitch: 80.0,
            pad_density: 0.55,
            pad_radius: [9.0, 16.0],
            hole_fraction: [0.3, 0.5],
            pour_count: [0, 2],
            pour_size: [60.0, 160.0],
            clearance: 8.0,
            defects_per_image: [3, 12],
            class_weights: [1.0; 6],
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// Small images for CPU-scale experiments: 160 px boards with geometry
    /// at half scale.
    pub fn desk_scale() -> Self {
        Self {
            image_size: 160,
            feature_scale: 0.5,
            trace_count: [4, 10],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let [dmin, dmax] = self.defects_per_image;
        if dmin < 1 || dmax > 64 || dmin > dmax {
            return bad(format!(
                "defects_per_image {:?} must lie within [1, 64]",
                self.defects_per_image
            ));
        }
        if self.image_size < 16 {
            return bad(format!("image_size {} too small", self.image_size));
        }
        if !(self.feature_scale > 0.0) {
            return bad("feature_scale must be positive".into());
        }
        if self.trace_count[0] > self.trace_count[1] || self.pour_count[0] > self.pour_count[1] {
            return bad("count ranges must be non-empty".into());
        }
        for (name, r) in [
            ("trace_width", self.trace_width),
            ("pad_radius", self.pad_radius),
            ("hole_fraction", self.hole_fraction),
            ("pour_size", self.pour_size),
        ] {
            if !(r[0] > 0.0 && r[0] <= r[1]) {
                return bad(format!("{name} range {r:?} must be positive and non-empty"));
            }
        }
        if self.hole_fraction[1] >= 1.0 {
            return bad("hole_fraction must stay below 1".into());
        }
        if !(0.0..=1.0).contains(&self.pad_density) || !(self.pad_pitch > 0.0) {
            return bad("pad_density must be in [0, 1] and pad_pitch positive".into());
        }
        if self.class_weights.iter().any(|&w| !(w >= 0.0))
            || self.class_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("class_weights must be non-negative with a positive sum".into());
        }
        Ok(())
    }

    fn px(&self, v: f64) -> f64 {
        v * self.feature_scale
    }

    fn range(&self, rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
        let (a, b) = (self.px(r[0]), self.px(r[1]));
        if a >= b {
            a
        } else {
            rng.random_range(a..=b)
        }
    }
}

// ---------------------------------------------------------------------------
// Raster drawing helpers

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pt {
    x: f64,
    y: f64,
}

fn pt(x: f64, y: f64) -> Pt {
    Pt { x, y }
}

/// Pixels within `r` of the segment `a`-`b`, clipped to the image.
fn capsule_pixels(w: usize, h: usize, a: Pt, b: Pt, r: f64, out: &mut Vec<(usize, usize)>) {
    let x0 = (a.x.min(b.x) - r).floor().max(0.0) as i64;
    let x1 = (a.x.max(b.x) + r).ceil().min(w as f64 - 1.0) as i64;
    let y0 = (a.y.min(b.y) - r).floor().max(0.0) as i64;
    let y1 = (a.y.max(b.y) + r).ceil().min(h as f64 - 1.0) as i64;
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let r2 = r * r;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 - a.x, y as f64 - a.y);
            let t = if len2 > 0.0 {
                ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (ex, ey) = (px - t * dx, py - t * dy);
            if ex * ex + ey * ey <= r2 {
                out.push((x as usize, y as usize));
            }
        }
    }
}

fn disk_pixels(w: usize, h: usize, c: Pt, r: f64, out: &mut Vec<(usize, usize)>) {
    capsule_pixels(w, h, c, c, r, out);
}

fn rect_pixels(
    w: usize,
    h: usize,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    out: &mut Vec<(usize, usize)>,
) {
    let xa = x0.round().max(0.0) as usize;
    let ya = y0.round().max(0.0) as usize;
    let xb = (x1.round() as usize).min(w);
    let yb = (y1.round() as usize).min(h);
    for y in ya..yb {
        for x in xa..xb {
            out.push((x, y));
        }
    }
}

// ---------------------------------------------------------------------------
// Template rendering

struct Board {
    w: usize,
    copper: Vec<u8>,
    /// Net id per pixel, 0 for none.
    net: Vec<u32>,
    next_net: u32,
}

impl Board {
    fn new(w: usize, h: usize) -> Self {
        Self {
            w,
            copper: vec![0; w * h],
            net: vec![0; w * h],
            next_net: 1,
        }
    }

    fn new_net(&mut self) -> u32 {
        let n = self.next_net;
        self.next_net += 1;
        n
    }

    /// True when no pixel of `keepout` belongs to a net outside `allowed`.
    fn is_clear(&self, keepout: &[(usize, usize)], allowed: &[u32]) -> bool {
        keepout.iter().all(|&(x, y)| {
            let n = self.net[y * self.w + x];
            n == 0 || allowed.contains(&n)
        })
    }

    fn paint(&mut self, pixels: &[(usize, usize)], net: u32) {
        for &(x, y) in pixels {
            let i = y * self.w + x;
            self.copper[i] = 1;
            self.net[i] = net;
        }
    }

    fn merge_nets(&mut self, from: u32, into: u32) {
        if from == into {
            return;
        }
        for n in &mut self.net {
            if *n == from {
                *n = into;
            }
        }
    }
}

struct Pad {
    center: Pt,
    radius: f64,
    net: u32,
}

/// Renders a binary pseudo-PCB template; identical seeds give identical
/// rasters.
pub fn synthesize_template(config: &GeneratorConfig, seed: u64) -> Result<Raster> {
    config.validate()?;
    let mut last_err = None;
    for retry in 0..LAYOUT_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (retry.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        match render_layout(config, &mut rng) {
            Ok(r) => return Ok(r),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Generation("layout failed".into())))
}

fn render_layout(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Raster> {
    let (w, h) = (config.image_size, config.image_size);
    let mut board = Board::new(w, h);
    let clearance = config.px(config.clearance);
    let mut scratch = Vec::new();

    // Copper pours.
    let n_pours = rng.random_range(config.pour_count[0]..=config.pour_count[1]);
    for _ in 0..n_pours {
        for _attempt in 0..10 {
            let pw = config.range(rng, config.pour_size);
            let ph = config.range(rng, config.pour_size);
            if pw >= w as f64 || ph >= h as f64 {
                break;
            }
            let x0 = rng.random_range(0.0..(w as f64 - pw));
            let y0 = rng.random_range(0.0..(h as f64 - ph));
            scratch.clear();
            rect_pixels(
                w,
                h,
                x0 - clearance,
                y0 - clearance,
                x0 + pw + clearance,
                y0 + ph + clearance,
                &mut scratch,
            );
            if board.is_clear(&scratch, &[]) {
                scratch.clear();
                rect_pixels(w, h, x0, y0, x0 + pw, y0 + ph, &mut scratch);
                let net = board.new_net();
                board.paint(&scratch, net);
                break;
            }
        }
    }

    // Pads on a jittered grid.
    let pitch = config.px(config.pad_pitch);
    let mut pads: Vec<Pad> = Vec::new();
    let sites = (w as f64 / pitch).floor() as usize;
    for gy in 0..sites {
        for gx in 0..sites {
            if !rng.random_bool(config.pad_density) {
                continue;
            }
            let jitter = 0.2 * pitch;
            let c = pt(
                (gx as f64 + 0.5) * pitch + rng.random_range(-jitter..=jitter),
                (gy as f64 + 0.5) * pitch + rng.random_range(-jitter..=jitter),
            );
            let r = config.range(rng, config.pad_radius);
            let square = rng.random_bool(0.4);
            scratch.clear();
            if square {
                rect_pixels(
                    w,
                    h,
                    c.x - r - clearance,
                    c.y - r - clearance,
                    c.x + r + clearance,
                    c.y + r + clearance,
                    &mut scratch,
                );
            } else {
                disk_pixels(w, h, c, r + clearance, &mut scratch);
            }
            if c.x - r < 1.0
                || c.y - r < 1.0
                || c.x + r > w as f64 - 2.0
                || c.y + r > h as f64 - 2.0
            {
                continue;
            }
            if !board.is_clear(&scratch, &[]) {
                continue;
            }
            scratch.clear();
            if square {
                rect_pixels(w, h, c.x - r, c.y - r, c.x + r, c.y + r, &mut scratch);
            } else {
                disk_pixels(w, h, c, r, &mut scratch);
            }
            let net = board.new_net();
            board.paint(&scratch, net);
            pads.push(Pad {
                center: c,
                radius: r,
                net,
            });
        }
    }

    // Traces.
    let wanted = rng.random_range(config.trace_count[0]..=config.trace_count[1]);
    let mut routed = 0;
    let mut attempts = 0;
    let max_attempts = 40 * wanted.max(1);
    while routed < wanted && attempts < max_attempts {
        attempts += 1;
        if pads.is_empty() {
            break;
        }
        let a = pads.choose(rng).unwrap();
        let width = config.range(rng, config.trace_width);
        let net_a = board.net[a.center.y as usize * w + a.center.x as usize];
        let (end, net_b) = if rng.random_bool(0.3) {
            // run off the board edge
            let e = match rng.random_range(0..4) {
                0 => pt(a.center.x, -width),
                1 => pt(a.center.x, h as f64 + width),
                2 => pt(-width, a.center.y),
                _ => pt(w as f64 + width, a.center.y),
            };
            (e, net_a)
        } else {
            let near: Vec<&Pad> = pads
                .iter()
                .filter(|p| {
                    let d = (p.center.x - a.center.x).hypot(p.center.y - a.center.y);
                    d > 1.0 && d < 3.2 * pitch
                })
                .collect();
            let Some(b) = near.choose(rng) else { continue };
            let nb = board.net[b.center.y as usize * w + b.center.x as usize];
            if nb == net_a {
                continue;
            }
            (b.center, nb)
        };
        let path = route(a.center, end, rng.random_bool(0.5));
        // Keep-out region excludes the pads at both ends.
        scratch.clear();
        for seg in path.windows(2) {
            capsule_pixels(w, h, seg[0], seg[1], 0.5 * width + clearance, &mut scratch);
        }
        let clear_of_ends: Vec<(usize, usize)> = scratch
            .iter()
            .copied()
            .filter(|&(x, y)| {
                let p = pt(x as f64, y as f64);
                let near_end = |c: Pt, r: f64| {
                    (p.x - c.x).hypot(p.y - c.y) <= r + 0.5 * width + clearance + 1.0
                };
                !(near_end(a.center, a.radius * std::f64::consts::SQRT_2)
                    || (net_b != net_a
                        && near_end(end, pad_radius_at(&pads, end) * std::f64::consts::SQRT_2)))
            })
            .collect();
        if !board.is_clear(&clear_of_ends, &[net_a, net_b]) {
            continue;
        }
        scratch.clear();
        for seg in path.windows(2) {
            capsule_pixels(w, h, seg[0], seg[1], 0.5 * width, &mut scratch);
        }
        if !board.is_clear(&scratch, &[net_a, net_b]) {
            continue;
        }
        board.paint(&scratch, net_a);
        board.merge_nets(net_b, net_a);
        for p in pads.iter_mut() {
            if p.net == net_b {
                p.net = net_a;
            }
        }
        routed += 1;
    }
    if routed < config.trace_count[0] {
        return Err(Error::Generation(format!(
            "routed {routed} of at least {} traces",
            config.trace_count[0]
        )));
    }

    // Drill holes.
    let mut raster = Raster::from_vec(w, h, board.copper)?;
    for p in &pads {
        let frac = rng.random_range(config.hole_fraction[0]..=config.hole_fraction[1]);
        scratch.clear();
        disk_pixels(w, h, p.center, (p.radius * frac).max(1.0), &mut scratch);
        for &(x, y) in &scratch {
            raster.set(x, y, 0);
        }
    }
    Ok(raster)
}

fn pad_radius_at(pads: &[Pad], c: Pt) -> f64 {
    pads.iter()
        .find(|p| p.center == c)
        .map_or(0.0, |p| p.radius)
}

/// Two-leg route: an axis-aligned run and a 45 degree run, in either order.
fn route(a: Pt, b: Pt, diagonal_first: bool) -> Vec<Pt> {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let d = dx.abs().min(dy.abs());
    let diag = pt(a.x + d * dx.signum(), a.y + d * dy.signum());
    let corner = if diagonal_first {
        diag
    } else {
        // straight leg first: end of straight leg = b minus the diagonal
        pt(b.x - d * dx.signum(), b.y - d * dy.signum())
    };
    vec![a, corner, b]
}

// ---------------------------------------------------------------------------
// Raster analysis

/// Exact Euclidean distance transform: distance from every pixel to the
/// nearest pixel where `feature` is true (infinite if none).
pub(crate) fn distance_transform(w: usize, h: usize, feature: impl Fn(usize) -> bool) -> Vec<f64> {
    const INF: f64 = 1e20;
    let mut f = vec![0.0f64; w * h];
    for (i, v) in f.iter_mut().enumerate() {
        *v = if feature(i) { 0.0 } else { INF };
    }
    let n = w.max(h);
    let mut buf = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    // columns
    for x in 0..w {
        for y in 0..h {
            buf[y] = f[y * w + x];
        }
        edt_1d(&buf[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            f[y * w + x] = out[y];
        }
    }
    // rows
    for y in 0..h {
        buf[..w].copy_from_slice(&f[y * w..(y + 1) * w]);
        edt_1d(&buf[..w], &mut out[..w], &mut v, &mut z);
        for x in 0..w {
            f[y * w + x] = out[x];
        }
    }
    f.iter()
        .map(|&d| {
            if d >= INF * 0.5 {
                f64::INFINITY
            } else {
                d.sqrt()
            }
        })
        .collect()
}

/// Lower envelope of parabolas (squared distances in, squared distances out).
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s =
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
            } else if s <= z[k] {
                // k == 0 and z[0] = -inf cannot happen; kept for clarity
                break;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

/// 8-connected component labels of copper, 0 for background.
pub(crate) fn label_components(r: &Raster) -> Vec<u32> {
    let (w, h) = (r.width, r.height);
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if r.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if r.data[j] != 0 && labels[j] == 0 {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    labels
}

struct Analysis {
    w: usize,
    h: usize,
    labels: Vec<u32>,
    /// distance to nearest background, for copper pixels
    inside: Vec<f64>,
    /// distance to nearest copper, for background pixels
    outside: Vec<f64>,
    /// local ridge of `inside` restricted to trace-width copper
    centerline: Vec<usize>,
    deep_copper: Vec<usize>,
    open_background: Vec<usize>,
}

impl Analysis {
    fn new(template: &Raster, config: &GeneratorConfig) -> Self {
        let (w, h) = (template.width, template.height);
        let labels = label_components(template);
        let inside = distance_transform(w, h, |i| template.data[i] == 0);
        let outside = distance_transform(w, h, |i| template.data[i] != 0);
        let max_half = 0.5 * config.px(config.trace_width[1]) + 1.0;
        let min_half = 1.0;
        let mut centerline = Vec::new();
        let mut deep_copper = Vec::new();
        let mut open_background = Vec::new();
        let pin_min = config.px(PIN_RADIUS[0]) + 1.5;
        let blob_min = 1.5 * config.px(BLOB_RADIUS[0]) + config.px(config.clearance) * 0.5 + 1.0;
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let i = y * w + x;
                if template.data[i] != 0 {
                    let d = inside[i];
                    if d >= pin_min {
                        deep_copper.push(i);
                    }
                    if d >= min_half && d <= max_half {
                        let ridge = [i - 1, i + 1, i - w, i + w].iter().all(|&j| inside[j] <= d);
                        let strict = (inside[i - 1] < d || inside[i + 1] < d)
                            || (inside[i - w] < d || inside[i + w] < d);
                        if ridge && strict {
                            centerline.push(i);
                        }
                    }
                } else if outside[i] >= blob_min {
                    open_background.push(i);
                }
            }
        }
        Self {
            w,
            h,
            labels,
            inside,
            outside,
            centerline,
            deep_copper,
            open_background,
        }
    }

    fn xy(&self, i: usize) -> (i64, i64) {
        ((i % self.w) as i64, (i / self.w) as i64)
    }

    fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.w as i64 && y < self.h as i64
    }
}

const PIN_RADIUS: [f64; 2] = [2.0, 5.0];
const BLOB_RADIUS: [f64; 2] = [3.0, 7.0];
const DIRS: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

/// One proposed edit: pixels to set to copper (`add`) or background.
struct Edit {
    pixels: Vec<(usize, usize)>,
    add: bool,
}

fn propose(
    class: DefectClass,
    a: &Analysis,
    tested: &Raster,
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) -> Option<Edit> {
    let (w, h) = (a.w, a.h);
    let mut px = Vec::new();
    match class {
        DefectClass::Open => {
            let &c = a.centerline.choose(rng)?;
            let (x, y) = a.xy(c);
            let r = a.inside[c] + 1.0 + rng.random_range(0.0..=config.px(2.0).max(0.5));
            disk_pixels(w, h, pt(x as f64, y as f64), r, &mut px);
            px.retain(|&(x, y)| tested.get(x, y) != 0 && a.labels[y * w + x] == a.labels[c]);
            Some(Edit {
                pixels: px,
                add: false,
            })
        }
        DefectClass::Mousebite => {
            let &c = a.centerline.choose(rng)?;
            let half = a.inside[c];
            if half < 1.5 {
                return None;
            }
            let (e, _) = march_to_edge(a, c, rng)?;
            let r = half * rng.random_range(0.6..=1.0);
            disk_pixels(w, h, pt(e.0 as f64, e.1 as f64), r, &mut px);
            px.retain(|&(x, y)| tested.get(x, y) != 0 && a.labels[y * w + x] == a.labels[c]);
            Some(Edit {
                pixels: px,
                add: false,
            })
        }
        DefectClass::Spur => {
            let &c = a.centerline.choose(rng)?;
            let (e, dir) = march_to_edge(a, c, rng)?;
            let len = config.px(rng.random_range(6.0..=14.0));
            let width = config.px(rng.random_range(2.0..=4.0)).max(1.0);
            let norm = (dir.0 as f64).hypot(dir.1 as f64);
            let start = pt(e.0 as f64, e.1 as f64);
            let end = pt(
                start.x + dir.0 as f64 / norm * len,
                start.y + dir.1 as f64 / norm * len,
            );
            if !a.in_bounds(end.x as i64, end.y as i64) {
                return None;
            }
            capsule_pixels(w, h, start, end, 0.5 * width, &mut px);
            // the protrusion must stay clear of every other conductor
            let gap = config.px(3.0).max(2.0);
            let own = a.labels[c];
            let mut halo = Vec::new();
            capsule_pixels(w, h, start, end, 0.5 * width + gap, &mut halo);
            if halo.iter().any(|&(x, y)| {
                let l = a.labels[y * w + x];
                l != 0 && l != own
            }) {
                return None;
            }
            px.retain(|&(x, y)| tested.get(x, y) == 0);
            Some(Edit {
                pixels: px,
                add: true,
            })
        }
        DefectClass::Short => {
            let &c = a.centerline.choose(rng)?;
            let (e, dir) = march_to_edge(a, c, rng)?;
            let own = a.labels[c];
            let max_len = 3.0 * config.px(config.clearance) + 2.0;
            let (mut x, mut y) = e;
            let mut hit = None;
            let mut steps = 0.0;
            let step_len = (dir.0 as f64).hypot(dir.1 as f64);
            while steps <= max_len {
                x += dir.0;
                y += dir.1;
                steps += step_len;
                if !a.in_bounds(x, y) {
                    return None;
                }
                let l = a.labels[y as usize * w + x as usize];
                if l == own {
                    return None;
                }
                if l != 0 {
                    hit = Some((x, y));
                    break;
                }
            }
            let (hx, hy) = hit?;
            let width = config.px(rng.random_range(3.0..=6.0)).max(1.5);
            capsule_pixels(
                w,
                h,
                pt(e.0 as f64, e.1 as f64),
                pt(hx as f64, hy as f64),
                0.5 * width,
                &mut px,
            );
            px.retain(|&(x, y)| tested.get(x, y) == 0);
            Some(Edit {
                pixels: px,
                add: true,
            })
        }
        DefectClass::PinHole => {
            let &c = a.deep_copper.choose(rng)?;
            let max_r = config.px(PIN_RADIUS[1]).min(a.inside[c] - 1.5);
            let min_r = config.px(PIN_RADIUS[0]);
            if max_r < min_r {
                return None;
            }
            let r = rng.random_range(min_r..=max_r);
            let (x, y) = a.xy(c);
            disk_pixels(w, h, pt(x as f64, y as f64), r, &mut px);
            px.retain(|&(x, y)| tested.get(x, y) != 0);
            Some(Edit {
                pixels: px,
                add: false,
            })
        }
        DefectClass::SpuriousCopper => {
            let &c = a.open_background.choose(rng)?;
            let gap = 0.5 * config.px(config.clearance) + 1.0;
            let max_r = config.px(BLOB_RADIUS[1]).min((a.outside[c] - gap) / 1.5);
            let min_r = config.px(BLOB_RADIUS[0]);
            if max_r < min_r {
                return None;
            }
            let r = rng.random_range(min_r..=max_r);
            let (x, y) = a.xy(c);
            let center = pt(x as f64, y as f64);
            disk_pixels(w, h, center, r, &mut px);
            for _ in 0..rng.random_range(1..=2) {
                let ang = rng.random_range(0.0..std::f64::consts::TAU);
                let off = 0.5 * r;
                let c2 = pt(center.x + off * ang.cos(), center.y + off * ang.sin());
                disk_pixels(w, h, c2, r * rng.random_range(0.5..=1.0), &mut px);
            }
            px.sort_unstable();
            px.dedup();
            px.retain(|&(x, y)| tested.get(x, y) == 0);
            Some(Edit {
                pixels: px,
                add: true,
            })
        }
    }
}

/// Walks from a centerline pixel in a random direction to the last copper
/// pixel of the same trace. Returns that edge pixel and the direction.
fn march_to_edge(a: &Analysis, c: usize, rng: &mut ChaCha8Rng) -> Option<((i64, i64), (i64, i64))> {
    let dir = *DIRS.choose(rng)?;
    let (mut x, mut y) = a.xy(c);
    let own = a.labels[c];
    let limit = (2.0 * a.inside[c] + 2.0).ceil() as i64;
    for _ in 0..limit {
        let (nx, ny) = (x + dir.0, y + dir.1);
        if !a.in_bounds(nx, ny) {
            return None;
        }
        if a.labels[ny as usize * a.w + nx as usize] != own {
            return Some(((x, y), dir));
        }
        x = nx;
        y = ny;
    }
    None
}

/// Result of defect injection.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectedDefects {
    pub tested: Raster,
    pub annotations: Vec<Annotation>,
    /// Set when fewer defects than requested could be placed.
    pub incomplete: bool,
    pub requested: usize,
}

fn pick_class(
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
    exclude: &[bool; 6],
) -> Option<DefectClass> {
    let total: f64 = config
        .class_weights
        .iter()
        .zip(exclude)
        .filter(|(_, &x)| !x)
        .map(|(w, _)| w)
        .sum();
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.random_range(0.0..total);
    for (i, (&w, &x)) in config.class_weights.iter().zip(exclude).enumerate() {
        if x || w <= 0.0 {
            continue;
        }
        if u < w {
            return Some(DefectClass::ALL[i]);
        }
        u -= w;
    }
    DefectClass::ALL
        .iter()
        .zip(exclude)
        .rev()
        .find(|(c, &x)| !x && config.class_weights[c.id() as usize - 1] > 0.0)
        .map(|(c, _)| *c)
}

/// Applies randomly placed defects to a copy of `template`.
///
/// Each annotation box is the tight bounding box of the changed pixels padded
/// by [`BOX_PADDING`]; boxes never overlap, so every changed pixel lies in
/// exactly one box.
pub fn inject_defects(
    template: &Raster,
    config: &GeneratorConfig,
    seed: u64,
) -> Result<InjectedDefects> {
    config.validate()?;
    if !template.is_binary() {
        return Err(Error::InvalidInput("template must be binary".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let analysis = Analysis::new(template, config);
    let (w, h) = (template.width, template.height);
    let requested = rng.random_range(config.defects_per_image[0]..=config.defects_per_image[1]);
    let mut tested = template.clone();
    let mut boxes: Vec<[i64; 4]> = Vec::new();
    let mut annotations = Vec::new();
    let mut infeasible = [false; 6];

    while annotations.len() < requested {
        let Some(class) = pick_class(config, &mut rng, &infeasible) else {
            break;
        };
        let mut placed = false;
        for _ in 0..ATTEMPTS_PER_CLASS {
            let Some(edit) = propose(class, &analysis, &tested, config, &mut rng) else {
                continue;
            };
            if edit.pixels.is_empty() {
                continue;
            }
            let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
            for &(x, y) in &edit.pixels {
                x0 = x0.min(x as i64);
                y0 = y0.min(y as i64);
                x1 = x1.max(x as i64);
                y1 = y1.max(y as i64);
            }
            // exclusive pixel corners, padded and clipped
            let b = [
                (x0 - BOX_PADDING).max(0),
                (y0 - BOX_PADDING).max(0),
                (x1 + 1 + BOX_PADDING).min(w as i64),
                (y1 + 1 + BOX_PADDING).min(h as i64),
            ];
            if boxes
                .iter()
                .any(|o| b[0] < o[2] && o[0] < b[2] && b[1] < o[3] && o[1] < b[3])
            {
                continue;
            }
            let v = u8::from(edit.add);
            for &(x, y) in &edit.pixels {
                tested.set(x, y, v);
            }
            boxes.push(b);
            annotations.push(Annotation::new(
                BBox::from_pixel_corners(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64, w, h),
                class,
            ));
            placed = true;
            break;
        }
        if !placed {
            infeasible[class.id() as usize - 1] = true;
        }
    }
    if annotations.is_empty() {
        return Err(Error::Generation(
            "no defect could be placed on this template".into(),
        ));
    }
    if annotations.len() < requested {
        log::warn!(
            "placed {} of {} requested defects",
            annotations.len(),
            requested
        );
    }
    Ok(InjectedDefects {
        tested,
        incomplete: annotations.len() < requested,
        requested,
        annotations,
    })
}

/// Generates a complete synthetic sample: template plus defective copy.
pub fn generate_sample(
    config: &GeneratorConfig,
    seed: u64,
    id: impl Into<String>,
) -> Result<super::Sample> {
    let mut last_err = None;
    for retry in 0..LAYOUT_RETRIES {
        let s = seed.wrapping_add(retry.wrapping_mul(0x5851_F42D_4C95_7F2D));
        let template = synthesize_template(config, s)?;
        match inject_defects(&template, config, s ^ 0xA5A5_A5A5) {
            Ok(inj) => {
                let pair = super::ImagePair::new(template, inj.tested, id)?;
                return Ok(super::Sample {
                    pair,
                    annotations: inj.annotations,
                });
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Generation("sample generation failed".into())))
}

/// Test-split sample seeds start this far from the training seeds.
const TEST_SEED_OFFSET: u64 = 1 << 32;

/// Train and test splits drawn from `config.seed`; the two splits never
/// share a sample seed.
pub fn generate_dataset(
    config: &GeneratorConfig,
    train: usize,
    test: usize,
) -> Result<(Vec<super::Sample>, Vec<super::Sample>)> {
    config.validate()?;
    let base = config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let split = |n: usize, offset: u64, prefix: &str| {
        (0..n)
            .map(|i| {
                generate_sample(
                    config,
                    base.wrapping_add(offset + i as u64),
                    format!("{prefix}{i:05}"),
                )
            })
            .collect::<Result<Vec<_>>>()
    };
    Ok((
        split(train, 0, "train")?,
        split(test, TEST_SEED_OFFSET, "test")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig::desk_scale()
    }

    #[test]
    fn template_is_binary_and_deterministic() {
        let c = small();
        let a = synthesize_template(&c, 5).unwrap();
        let b = synthesize_template(&c, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.is_binary());
        assert_ne!(a, synthesize_template(&c, 6).unwrap());
    }

    #[test]
    fn empty_layout_is_background() {
        let c = GeneratorConfig {
            trace_count: [0, 0],
            pad_density: 0.0,
            pour_count: [0, 0],
            ..small()
        };
        let t = synthesize_template(&c, 1).unwrap();
        assert_eq!(t.count_nonzero(), 0);
    }

    #[test]
    fn invalid_configs() {
        let mut c = small();
        c.defects_per_image = [0, 4];
        assert!(c.validate().is_err());
        c.defects_per_image = [3, 65];
        assert!(c.validate().is_err());
        c.defects_per_image = [5, 3];
        assert!(c.validate().is_err());
        let c = GeneratorConfig {
            trace_count: [3, 2],
            ..small()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn infeasible_route_count_errors() {
        let c = GeneratorConfig {
            pad_density: 0.0,
            trace_count: [5, 5],
            ..small()
        };
        assert!(matches!(
            synthesize_template(&c, 0),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn edits_are_local_to_boxes() {
        let c = small();
        for seed in 0..10 {
            let t = synthesize_template(&c, seed).unwrap();
            let inj = inject_defects(&t, &c, seed + 100).unwrap();
            let (w, h) = (t.width, t.height);
            let boxes: Vec<[f64; 4]> = inj
                .annotations
                .iter()
                .map(|a| a.bbox.pixel_corners(w, h))
                .collect();
            let inside = |x: usize, y: usize, b: &[f64; 4]| {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                fx > b[0] && fx < b[2] && fy > b[1] && fy < b[3]
            };
            for y in 0..h {
                for x in 0..w {
                    if t.get(x, y) != inj.tested.get(x, y) {
                        assert!(
                            boxes.iter().any(|b| inside(x, y, b)),
                            "seed {seed}: change at ({x},{y}) uncovered"
                        );
                    }
                }
            }
            for b in &boxes {
                let changed = (0..h)
                    .flat_map(|y| (0..w).map(move |x| (x, y)))
                    .any(|(x, y)| inside(x, y, b) && t.get(x, y) != inj.tested.get(x, y));
                assert!(changed, "seed {seed}: box {b:?} without change");
            }
            assert!(inj.tested.is_binary());
        }
    }

    #[test]
    fn dataset_splits_are_disjoint_and_reproducible() {
        let c = GeneratorConfig {
            image_size: 64,
            ..small()
        };
        let (a, b) = generate_dataset(&c, 3, 2).unwrap();
        assert_eq!((a.len(), b.len()), (3, 2));
        assert!(a.iter().all(|s| b.iter().all(|t| s.pair != t.pair)));
        let (a2, _) = generate_dataset(&c, 3, 0).unwrap();
        assert_eq!(a[2].pair, a2[2].pair);
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let mut r = Raster::new(13, 9);
        for &(x, y) in &[(2, 3), (10, 1), (6, 7)] {
            r.set(x, y, 1);
        }
        let d = distance_transform(13, 9, |i| r.data[i] != 0);
        for y in 0..9 {
            for x in 0..13 {
                let best = [(2.0, 3.0), (10.0, 1.0), (6.0, 7.0)]
                    .iter()
                    .map(|&(fx, fy): &(f64, f64)| (x as f64 - fx).hypot(y as f64 - fy))
                    .fold(f64::INFINITY, f64::min);
                assert!((d[y * 13 + x] - best).abs() < 1e-9);
            }
        }
    }
}
