//! Procedural road scenes: sky, road with lane markings, roadside, a handful
//! of normal objects and optionally one anomalous object on the road.

use rand::Rng;

use crate::rng::SplitMix64;

pub(crate) type Rgb = [f32; 3];

/// Per-scenario layout, fixed over all frames.
#[derive(Debug, Clone)]
pub(crate) struct SceneLayout {
    pub height: usize,
    pub width: usize,
    pub horizon: usize,
    /// First row of the ego-vehicle hood (ignored in ground truth).
    pub hood: usize,
    pub vanish_x: f64,
    pub road_half_width: f64,
    pub sky_top: Rgb,
    pub sky_bottom: Rgb,
    pub road: Rgb,
    pub grass: Rgb,
    pub texture_seed: u64,
    pub objects: Vec<ObjectTrack>,
    pub anomaly: Option<AnomalyTrack>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ObjectKind {
    Car,
    Tree,
    Sign,
}

#[derive(Debug, Clone)]
pub(crate) struct ObjectTrack {
    pub kind: ObjectKind,
    pub color: Rgb,
    /// Lateral position in road half-widths; |u| < 1 is on the road.
    pub lateral: f64,
    /// Depth in (0, 1): 0 at the horizon, 1 at the hood.
    pub depth: f64,
    pub depth_velocity: f64,
    pub size: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct AnomalyTrack {
    pub colors: [Rgb; 2],
    pub lateral: f64,
    pub depth: f64,
    pub depth_velocity: f64,
    pub size: f64,
    pub stripe: usize,
}

/// Rendered frame: colours plus instance and anomaly labels.
pub(crate) struct Canvas {
    pub width: usize,
    pub rgb: Vec<f32>,
    pub instances: Vec<u32>,
    pub anomaly: Vec<bool>,
    pub ignore: Vec<bool>,
}

impl Canvas {
    fn new(height: usize, width: usize) -> Self {
        Self {
            width,
            rgb: vec![0.0; height * width * 3],
            instances: vec![0; height * width],
            anomaly: vec![false; height * width],
            ignore: vec![false; height * width],
        }
    }

    fn set(&mut self, y: usize, x: usize, c: Rgb) {
        let i = (y * self.width + x) * 3;
        self.rgb[i..i + 3].copy_from_slice(&c);
    }
}

fn mix(a: Rgb, b: Rgb, t: f32) -> Rgb {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

fn scale(c: Rgb, s: f32) -> Rgb {
    c.map(|v| (v * s).clamp(0.0, 1.0))
}

fn jitter(rng: &mut SplitMix64, base: Rgb, amount: f32) -> Rgb {
    base.map(|v| (v + rng.random_range(-amount..=amount)).clamp(0.05, 0.9))
}

/// Static per-pixel texture in [-1, 1], a function of position only.
fn texture(seed: u64, y: usize, x: usize) -> f32 {
    SplitMix64::keyed(seed, &[y as u64, x as u64]).next_signed_unit() as f32
}

const NORMAL_PALETTE: [Rgb; 6] = [
    [0.55, 0.12, 0.12],
    [0.15, 0.22, 0.55],
    [0.75, 0.75, 0.72],
    [0.20, 0.20, 0.22],
    [0.60, 0.55, 0.20],
    [0.25, 0.45, 0.30],
];

/// Marking colours of the anomalous object. Its body takes a road-like tone,
/// so only part of the object stands out pixel by pixel.
const ANOMALY_MARKINGS: [Rgb; 4] = [
    [0.98, 0.45, 0.05],
    [0.95, 0.05, 0.85],
    [0.10, 0.95, 0.95],
    [0.98, 0.98, 0.10],
];

impl SceneLayout {
    pub(crate) fn sample(
        rng: &mut SplitMix64,
        height: usize,
        width: usize,
        anomalous: bool,
    ) -> Self {
        let h = height as f64;
        let w = width as f64;
        let horizon = (h * rng.random_range(0.35..0.45)).round() as usize;
        let hood = height - (height / 24).max(1);
        let overcast = rng.random_range(0.0f32..0.6);
        let sky_top = mix([0.25, 0.45, 0.85], [0.55, 0.58, 0.62], overcast);
        let sky_bottom = mix([0.70, 0.80, 0.92], [0.75, 0.76, 0.78], overcast);
        let grey = rng.random_range(0.30f32..0.42);
        let road = [grey, grey, grey * 1.03];
        let grass = jitter(rng, [0.25, 0.50, 0.20], 0.06);
        let count = rng.random_range(3..=8usize);
        let objects = (0..count).map(|_| ObjectTrack::sample(rng)).collect();
        let anomaly = anomalous.then(|| {
            let mut a = AnomalyTrack::sample(rng);
            a.colors[1] = scale(road, rng.random_range(0.92..1.08));
            a
        });
        Self {
            height,
            width,
            horizon: horizon.max(2).min(hood.saturating_sub(8)),
            hood,
            vanish_x: w * rng.random_range(0.45..0.55),
            road_half_width: w * rng.random_range(0.38..0.48),
            sky_top,
            sky_bottom,
            road,
            grass,
            texture_seed: rng.next(),
            objects,
            anomaly,
        }
    }

    /// Screen row for a depth in (0, 1).
    fn row(&self, depth: f64) -> f64 {
        self.horizon as f64 + depth * (self.hood as f64 - 1.0 - self.horizon as f64)
    }

    /// Road half-width in pixels at a screen row.
    fn half_width_at(&self, y: f64) -> f64 {
        let t = ((y - self.horizon as f64) / (self.hood as f64 - self.horizon as f64)).max(0.0);
        1.0 + t * self.road_half_width
    }

    fn background(&self, canvas: &mut Canvas, frame: usize) {
        for y in 0..self.height {
            for x in 0..self.width {
                let tex = texture(self.texture_seed, y, x);
                let c = if y >= self.hood {
                    canvas.ignore[y * self.width + x] = true;
                    [0.08, 0.08, 0.09]
                } else if y < self.horizon {
                    let t = y as f32 / self.horizon as f32;
                    mix(self.sky_top, self.sky_bottom, t)
                } else {
                    let yf = y as f64;
                    let dx = (x as f64 - self.vanish_x).abs();
                    let half = self.half_width_at(yf);
                    if dx <= half {
                        let depth = (yf - self.horizon as f64) / (self.hood as f64 - self.horizon as f64);
                        // Dashes advance with the frame index (ego motion).
                        let phase = (1.0 / (depth + 0.05)) * 6.0 + frame as f64 * 0.9;
                        let marking = dx <= (0.03 * half).max(0.5) && phase.rem_euclid(4.0) < 2.0;
                        if marking {
                            [0.85, 0.85, 0.8]
                        } else {
                            scale(self.road, 1.0 + 0.06 * tex)
                        }
                    } else {
                        scale(self.grass, 1.0 + 0.12 * tex)
                    }
                };
                canvas.set(y, x, c);
            }
        }
    }

    pub(crate) fn render(&self, frame: usize, with_anomaly: bool) -> Canvas {
        let mut canvas = Canvas::new(self.height, self.width);
        self.background(&mut canvas, frame);
        for (i, obj) in self.objects.iter().enumerate() {
            obj.draw(self, &mut canvas, frame, i as u32 + 1);
        }
        if with_anomaly {
            if let Some(a) = &self.anomaly {
                a.draw(self, &mut canvas, frame, self.anomaly_id());
            }
        }
        canvas
    }

    pub(crate) fn anomaly_id(&self) -> u32 {
        self.objects.len() as u32 + 1
    }

    /// Pixel rectangle (y0, y1, x0, x1), exclusive ends, clipped above the hood.
    fn rect(&self, cy: f64, cx: f64, hh: f64, hw: f64) -> (usize, usize, usize, usize) {
        let clip = |v: f64, hi: usize| v.round().clamp(0.0, hi as f64) as usize;
        (
            clip(cy - hh, self.hood),
            clip(cy + hh, self.hood),
            clip(cx - hw, self.width),
            clip(cx + hw, self.width),
        )
    }
}

impl ObjectTrack {
    fn sample(rng: &mut SplitMix64) -> Self {
        let kind = match rng.random_range(0..3) {
            0 => ObjectKind::Car,
            1 => ObjectKind::Tree,
            _ => ObjectKind::Sign,
        };
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let lateral = match kind {
            // Cars keep to the outer lanes, clear of the centre.
            ObjectKind::Car => side * rng.random_range(0.55..0.85),
            _ => side * rng.random_range(1.15..1.6),
        };
        let palette = NORMAL_PALETTE[rng.random_range(0..NORMAL_PALETTE.len())];
        Self {
            kind,
            color: jitter(rng, palette, 0.05),
            lateral,
            depth: rng.random_range(0.15..0.55),
            depth_velocity: rng.random_range(-0.005..0.015),
            size: rng.random_range(18.0..30.0),
        }
    }

    fn depth_at(&self, frame: usize) -> f64 {
        (self.depth + self.depth_velocity * frame as f64).clamp(0.1, 0.9)
    }

    fn draw(&self, scene: &SceneLayout, canvas: &mut Canvas, frame: usize, id: u32) {
        let depth = self.depth_at(frame);
        let base_y = scene.row(depth);
        let cx = scene.vanish_x + self.lateral * scene.half_width_at(base_y);
        let s = (self.size * depth).max(3.0);
        let paint = |canvas: &mut Canvas, y: usize, x: usize, c: Rgb| {
            canvas.set(y, x, c);
            canvas.instances[y * canvas.width + x] = id;
        };
        match self.kind {
            ObjectKind::Car => {
                let (y0, y1, x0, x1) = scene.rect(base_y - s * 0.3, cx, s * 0.3, s * 0.5);
                let window_end = y0 + (y1 - y0) / 3;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let c = if y < window_end { scale(self.color, 0.45) } else { self.color };
                        paint(canvas, y, x, c);
                    }
                }
            }
            ObjectKind::Tree => {
                let (ty0, ty1, tx0, tx1) = scene.rect(base_y - s * 0.25, cx, s * 0.25, s * 0.08);
                for y in ty0..ty1 {
                    for x in tx0..tx1 {
                        paint(canvas, y, x, [0.35, 0.22, 0.12]);
                    }
                }
                let (ccy, r) = (base_y - s * 0.75, s * 0.35);
                let (y0, y1, x0, x1) = scene.rect(ccy, cx, r, r);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let (dy, dx) = (y as f64 + 0.5 - ccy, x as f64 + 0.5 - cx);
                        if dy * dy + dx * dx <= r * r {
                            paint(canvas, y, x, self.color);
                        }
                    }
                }
            }
            ObjectKind::Sign => {
                let (py0, py1, px0, px1) = scene.rect(base_y - s * 0.4, cx, s * 0.4, (s * 0.04).max(0.5));
                for y in py0..py1 {
                    for x in px0..px1 {
                        paint(canvas, y, x, [0.55, 0.55, 0.58]);
                    }
                }
                let (y0, y1, x0, x1) = scene.rect(base_y - s * 0.9, cx, s * 0.15, s * 0.2);
                for y in y0..y1 {
                    for x in x0..x1 {
                        paint(canvas, y, x, self.color);
                    }
                }
            }
        }
    }
}

impl AnomalyTrack {
    fn sample(rng: &mut SplitMix64) -> Self {
        Self {
            colors: [
                ANOMALY_MARKINGS[rng.random_range(0..ANOMALY_MARKINGS.len())],
                [0.0; 3],
            ],
            lateral: rng.random_range(-0.35..0.35),
            depth: rng.random_range(0.3..0.45),
            depth_velocity: rng.random_range(0.01..0.02),
            size: rng.random_range(20.0..28.0),
            stripe: rng.random_range(2..4),
        }
    }

    fn draw(&self, scene: &SceneLayout, canvas: &mut Canvas, frame: usize, id: u32) {
        let depth = (self.depth + self.depth_velocity * frame as f64).min(0.85);
        let base_y = scene.row(depth);
        let cx = scene.vanish_x + self.lateral * scene.half_width_at(base_y);
        let s = (self.size * depth).max(4.0);
        let (y0, y1, x0, x1) = scene.rect(base_y - s * 0.4, cx, s * 0.4, s * 0.5);
        for y in y0..y1 {
            for x in x0..x1 {
                let band = ((y - y0) / self.stripe + (x - x0) / self.stripe) % 2;
                canvas.set(y, x, self.colors[band]);
                let i = y * canvas.width + x;
                canvas.instances[i] = id;
                canvas.anomaly[i] = true;
            }
        }
    }
}
