//! Deterministic procedural test photos.
//!
//! Indoor-looking scenes (wall, floor, furniture-like blocks, a window) used
//! by the automated benchmarks, plus helpers to degrade them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::{apply_edit, Image};

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Smooth value noise in roughly `[-1, 1]` on a coarse random lattice.
struct ValueNoise {
    gw: usize,
    gh: usize,
    grid: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, gw: usize, gh: usize) -> Self {
        let grid = (0..(gw + 1) * (gh + 1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self { gw, gh, grid }
    }

    /// `u`, `v` in `[0, 1]`.
    fn at(&self, u: f64, v: f64) -> f64 {
        let fx = u.clamp(0.0, 1.0) * self.gw as f64;
        let fy = v.clamp(0.0, 1.0) * self.gh as f64;
        let (x0, y0) = ((fx as usize).min(self.gw - 1), (fy as usize).min(self.gh - 1));
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(fx - x0 as f64), smooth(fy - y0 as f64));
        let g = |x: usize, y: usize| self.grid[y * (self.gw + 1) + x];
        let top = g(x0, y0) * (1.0 - tx) + g(x0 + 1, y0) * tx;
        let bottom = g(x0, y0 + 1) * (1.0 - tx) + g(x0 + 1, y0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone, Copy)]
struct Object {
    shape: Shape,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    color: [f64; 3],
}

impl Object {
    /// Normalized local coordinates if inside, for shading.
    fn local(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        let (dx, dy) = ((u - self.cx) / self.rx, (v - self.cy) / self.ry);
        let inside = match self.shape {
            Shape::Rect => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            Shape::Ellipse => dx * dx + dy * dy <= 1.0,
        };
        inside.then_some((dx, dy))
    }
}

#[derive(Debug, Clone, Copy)]
struct Window {
    u0: f64,
    u1: f64,
    v0: f64,
    v1: f64,
}

impl Window {
    fn contains(&self, u: f64, v: f64) -> bool {
        (self.u0..=self.u1).contains(&u) && (self.v0..=self.v1).contains(&v)
    }
}

struct Layout {
    wall: [f64; 3],
    floor: [f64; 3],
    horizon: f64,
    window: Window,
    sky: [f64; 3],
    objects: Vec<Object>,
    texture: ValueNoise,
    light: ValueNoise,
    lamp: (f64, f64, f64),
    ambient: f64,
    /// Offset of cast shadows, away from the lamp.
    shadow: (f64, f64),
}

impl Layout {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE4_E5EE_D000_0000);
        let wall = hsv(rng.gen(), rng.gen_range(0.15..0.45), rng.gen_range(0.55..0.8));
        let floor = hsv(rng.gen(), rng.gen_range(0.3..0.6), rng.gen_range(0.3..0.55));
        let horizon = rng.gen_range(0.6..0.75);
        let wu = rng.gen_range(0.12..0.3);
        let wu0 = rng.gen_range(0.1..0.9 - wu);
        let wv0 = rng.gen_range(0.05..0.2);
        let window = Window {
            u0: wu0,
            u1: wu0 + wu,
            v0: wv0,
            v1: wv0 + rng.gen_range(0.25..0.4),
        };
        let sky = hsv(rng.gen_range(0.52..0.62), rng.gen_range(0.2..0.45), rng.gen_range(0.85..0.97));
        let n_objects = rng.gen_range(4..8);
        let objects = (0..n_objects)
            .map(|_| Object {
                shape: if rng.gen_bool(0.5) { Shape::Rect } else { Shape::Ellipse },
                cx: rng.gen_range(0.08..0.92),
                cy: rng.gen_range(0.35..0.9),
                rx: rng.gen_range(0.05..0.16),
                ry: rng.gen_range(0.06..0.2),
                color: hsv(rng.gen(), rng.gen_range(0.45..0.9), rng.gen_range(0.35..0.9)),
            })
            .collect();
        let texture = ValueNoise::new(&mut rng, 24, 18);
        let light = ValueNoise::new(&mut rng, 3, 2);
        let lamp_u = if rng.gen_bool(0.5) {
            rng.gen_range(0.0..(window.u0 - 0.05).max(0.01))
        } else {
            rng.gen_range((window.u1 + 0.05).min(0.99)..1.0)
        };
        let lamp = (lamp_u, rng.gen_range(0.3..0.7), rng.gen_range(0.1..0.2));
        let ambient = rng.gen_range(0.3..0.5);
        let away = if lamp_u < window.u0 { 1.0 } else { -1.0 };
        let shadow = (away * rng.gen_range(0.04..0.09), rng.gen_range(0.02..0.05));
        Self {
            wall,
            floor,
            horizon,
            window,
            sky,
            objects,
            texture,
            light,
            lamp,
            ambient,
            shadow,
        }
    }

    /// Sunlit patch on the floor below the window, sheared like a projection.
    fn in_sun_patch(&self, u: f64, v: f64) -> bool {
        let w = &self.window;
        let top = self.horizon + 0.04;
        let depth = 0.6 * (w.v1 - w.v0);
        if !(top..=top + depth).contains(&v) {
            return false;
        }
        let shift = 0.5 * (v - top);
        (w.u0 + shift..=w.u1 + shift).contains(&u)
    }

    fn in_cast_shadow(&self, u: f64, v: f64) -> bool {
        let (du, dv) = self.shadow;
        self.objects.iter().all(|o| o.local(u, v).is_none())
            && self.objects.iter().any(|o| o.local(u - du, v - dv).is_some())
    }

    /// Well-exposed scene color.
    fn albedo(&self, u: f64, v: f64) -> [f64; 3] {
        if self.window.contains(u, v) {
            let t = (v - self.window.v0) / (self.window.v1 - self.window.v0);
            let bar = ((u - (self.window.u0 + self.window.u1) / 2.0).abs() < 0.006) as u8 as f64;
            return self.sky.map(|c| (c * (1.0 - 0.15 * t) - 0.5 * bar).clamp(0.0, 1.0));
        }
        let tex = 0.06 * self.texture.at(u, v);
        let mut rgb = if v < self.horizon {
            let g = 1.0 - 0.15 * (v / self.horizon);
            self.wall.map(|c| c * g + tex)
        } else {
            let g = 0.85 + 0.15 * ((v - self.horizon) / (1.0 - self.horizon));
            self.floor.map(|c| c * g + tex)
        };
        for obj in &self.objects {
            if let Some((dx, dy)) = obj.local(u, v) {
                let shade = 1.0 - 0.18 * (dx + dy) / 2.0;
                rgb = obj.color.map(|c| c * shade + 0.5 * tex);
            }
        }
        rgb.map(|c| c.clamp(0.0, 1.0))
    }

    /// Multiplicative light for the low-light variant: a dim ambient level,
    /// a lamp pool, a fully lit window with its sun patch, and hard shadows.
    fn gain(&self, u: f64, v: f64) -> f64 {
        if self.window.contains(u, v) {
            return 1.0;
        }
        let (lu, lv, lr) = self.lamp;
        let d2 = ((u - lu).powi(2) + (v - lv).powi(2)) / (lr * lr);
        let lamp = 0.75 * (-0.5 * d2).exp();
        let wu = ((u - (self.window.u0 + self.window.u1) / 2.0) / 0.25).powi(2);
        let spill = 0.25 * (-wu).exp() * (1.0 - v).max(0.0);
        let mut g = self.ambient * (1.0 + 0.25 * self.light.at(u, v)) + lamp + spill;
        if self.in_sun_patch(u, v) {
            g += 0.55;
        }
        if self.in_cast_shadow(u, v) {
            g *= 0.5;
        }
        g.min(1.0)
    }
}

fn render(width: usize, height: usize, f: impl Fn(f64, f64) -> [f64; 3]) -> Image {
    Image::from_fn(width, height, |x, y| {
        let u = (x as f64 + 0.5) / width as f64;
        let v = (y as f64 + 0.5) / height as f64;
        f(u, v).map(|c| c as f32)
    })
    .expect("scene dimensions are positive")
}

/// Evenly lit scene. Panics on zero dimensions.
pub fn reference_scene(seed: u64, width: usize, height: usize) -> Image {
    let layout = Layout::new(seed);
    render(width, height, |u, v| layout.albedo(u, v))
}

/// The same scene under dim, uneven light with a bright window.
pub fn low_light_scene(seed: u64, width: usize, height: usize) -> Image {
    let layout = Layout::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x0015_E000));
    let noise: Vec<f64> = (0..width * height).map(|_| rng.gen_range(-0.008..0.008)).collect();
    render(width, height, |u, v| {
        let g = layout.gain(u, v);
        let idx = ((v * height as f64) as usize).min(height - 1) * width + ((u * width as f64) as usize).min(width - 1);
        layout.albedo(u, v).map(|c| (c * g + noise[idx]).clamp(0.0, 1.0))
    })
}

/// Applies the edit `p` to the left half of the image (`x < width / 2`).
pub fn edit_left_half(image: &Image, p: &[f64; 3]) -> Image {
    let half = image.width() / 2;
    Image::from_fn(image.width(), image.height(), |x, y| {
        let px = image.pixel(x, y);
        if x < half {
            apply_edit(px.map(f64::from), p).map(|c| c as f32)
        } else {
            px
        }
    })
    .expect("same dimensions as the input")
}
