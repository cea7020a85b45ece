//! Deterministic synthetic talking-mouth clips.
//!
//! A speaker id fixes appearance (colors, mouth and jaw size, face position);
//! a seed fixes the aperture trajectory, slow head drift and landmark jitter.
//! Frames are rendered from the clean landmarks; the jittered landmarks stand
//! in for a noisy detector.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use tpswarp::io::{write_frames, write_landmarks};
use tpswarp::types::{mouth, DEFAULT_FPS};
use tpswarp::{Image, LandmarkFrame, LandmarkSequence, Point2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub speaker: u64,
    pub frames: usize,
    /// Standard deviation of the per-coordinate landmark noise, px.
    pub jitter: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            speaker: 0,
            frames: 36,
            jitter: 1.0,
            width: 256,
            height: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Speaker {
    pub skin: [f64; 3],
    pub lip: [f64; 3],
    pub cavity: [f64; 3],
    pub teeth: [f64; 3],
    /// Mouth center as a fraction of the frame size.
    pub anchor: (f64, f64),
    pub half_width: f64,
    pub inner_half_width: f64,
    pub jaw_half_width: f64,
    pub jaw_depth: f64,
    pub max_aperture: f64,
    texture_phase: (f64, f64),
}

impl Speaker {
    pub fn new(id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(id ^ 0x5eed_5bea_4e12_0000);
        let mut jitter = |base: f64, spread: f64| base + rng.random_range(-spread..spread);
        let skin = [jitter(200.0, 25.0), jitter(160.0, 25.0), jitter(135.0, 25.0)];
        let lip = [jitter(175.0, 20.0), jitter(70.0, 15.0), jitter(80.0, 15.0)];
        let half_width = jitter(30.0, 4.0);
        Self {
            skin,
            lip,
            cavity: [jitter(55.0, 10.0), jitter(20.0, 8.0), jitter(25.0, 8.0)],
            teeth: [jitter(235.0, 10.0), jitter(230.0, 10.0), jitter(215.0, 10.0)],
            anchor: (jitter(0.5, 0.02), jitter(0.56, 0.02)),
            half_width,
            inner_half_width: half_width * jitter(0.78, 0.05),
            jaw_half_width: half_width * jitter(1.9, 0.1),
            jaw_depth: jitter(42.0, 4.0),
            max_aperture: jitter(18.0, 3.0),
            texture_phase: (jitter(0.0, PI), jitter(0.0, PI)),
        }
    }

    /// The 39 mouth landmarks for a given aperture and mouth center.
    pub fn landmarks(&self, aperture: f64, center: Point2) -> LandmarkFrame {
        let (cx, cy) = (center.x, center.y);
        let h = aperture.max(0.0);
        let mut pts = Vec::with_capacity(mouth::POINTS);
        // Outer lip, clockwise on screen from the left corner over the top.
        let (up, down) = (7.0 + 0.5 * h, 9.0 + 0.5 * h);
        for k in 0..12 {
            let phi = PI - 2.0 * PI * k as f64 / 12.0;
            let s = phi.sin();
            let r = if s >= 0.0 { up } else { down };
            pts.push(Point2::new(cx + self.half_width * phi.cos(), cy - r * s));
        }
        // Inner lip: left corner, upper arc, right corner, lower arc back.
        let a = self.inner_half_width;
        for phi in [PI, 0.75 * PI, FRAC_PI_2, 0.25 * PI, 0.0, -0.25 * PI, -FRAC_PI_2, -0.75 * PI] {
            pts.push(Point2::new(cx + a * phi.cos(), cy - 0.5 * h * phi.sin()));
        }
        // Jaw from the left, round the chin, to the right; the chin drops as
        // the mouth opens.
        let top = cy - 6.0;
        let depth = self.jaw_depth + 0.6 * h;
        for k in 0..19 {
            let psi = PI * k as f64 / 18.0;
            pts.push(Point2::new(cx - self.jaw_half_width * psi.cos(), top + depth * psi.sin()));
        }
        LandmarkFrame::new(pts)
    }

    fn skin_texture(&self, x: f64, y: f64) -> f64 {
        let (p, q) = self.texture_phase;
        let broad = 10.0 * (0.045 * x + p).sin() * (0.038 * y + q).cos();
        let fine = 6.0 * (0.9 * x + 0.35 * y + p).sin() * (0.7 * y - 0.2 * x + q).sin();
        broad + fine
    }

    /// Renders a face frame from its (clean) mouth landmarks, 2×2 supersampled.
    pub fn render(&self, lm: &LandmarkFrame, width: usize, height: usize) -> Image {
        let pts = &lm.points;
        let outer = &pts[mouth::OUTER_LIP];
        let inner = &pts[mouth::INNER_LIP];
        let jaw = &pts[mouth::JAW];
        let center = pts[mouth::LIPS].iter().fold(Point2::new(0.0, 0.0), |a, p| a + *p);
        let center = (1.0 / mouth::LIPS.len() as f64) * center;
        let inner_top = inner[2].y;
        let jaw_top = jaw[0].y.min(jaw[18].y);
        let (lo, hi) = bounds(outer);

        // Each sample is `factor * base[c] + offset`.
        let shade = |x: f64, y: f64| -> (&[f64; 3], f64, f64) {
            let in_lips = x >= lo.x && x <= hi.x && y >= lo.y && y <= hi.y;
            if in_lips && inside(inner, x, y) {
                if y < inner_top + 3.0 {
                    (&self.teeth, 1.0, 0.0)
                } else {
                    (&self.cavity, 1.0, 10.0 * ((x - center.x) * 0.3).sin())
                }
            } else if in_lips && inside(outer, x, y) {
                let crease = 14.0 * ((x - center.x) * 0.55).sin() * (1.0 - ((y - center.y) / 14.0).abs()).max(0.0);
                (&self.lip, 1.0, crease)
            } else if y > jaw_top && (x - center.x).abs() < 2.0 * self.jaw_half_width && !inside(jaw, x, y) {
                (&self.skin, 0.55, 0.55 * self.skin_texture(x, y))
            } else {
                (&self.skin, 1.0, self.skin_texture(x, y))
            }
        };

        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                let mut acc = [0.0; 3];
                for (dx, dy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                    let (base, factor, offset) = shade(x as f64 + dx, y as f64 + dy);
                    for c in 0..3 {
                        acc[c] += factor * base[c] + offset;
                    }
                }
                data.extend(acc.iter().map(|a| (a / 4.0).round().clamp(0.0, 255.0) as u8));
            }
        }
        Image::new(width, height, 3, data).expect("non-empty frame")
    }
}

fn bounds(poly: &[Point2]) -> (Point2, Point2) {
    poly.iter().fold(
        (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(lo, hi), p| (Point2::new(lo.x.min(p.x), lo.y.min(p.y)), Point2::new(hi.x.max(p.x), hi.y.max(p.y))),
    )
}

/// Even-odd point-in-polygon test.
fn inside(poly: &[Point2], x: f64, y: f64) -> bool {
    let mut odd = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > y) != (b.y > y) && x < a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y) {
            odd = !odd;
        }
        j = i;
    }
    odd
}

#[derive(Debug, Clone)]
pub struct SynthClip {
    pub frames: Vec<Image>,
    pub clean: LandmarkSequence,
    pub noisy: LandmarkSequence,
}

struct Wave {
    amp: f64,
    omega: f64,
    phase: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, amp: f64, hz: (f64, f64)) -> Self {
        Self {
            amp,
            omega: 2.0 * PI * rng.random_range(hz.0..hz.1) / DEFAULT_FPS,
            phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.amp * (self.omega * t + self.phase).sin()
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthClip> {
    ensure!(cfg.frames > 0, "frame count must be positive");
    ensure!(cfg.jitter.is_finite() && cfg.jitter >= 0.0, "jitter must be >= 0");
    ensure!(cfg.width >= 160 && cfg.height >= 160, "frames must be at least 160x160");
    let speaker = Speaker::new(cfg.speaker);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let syllable = Wave::random(&mut rng, 0.35, (0.8, 2.0));
    let phrase = Wave::random(&mut rng, 0.2, (0.2, 0.5));
    let drift_x = Wave::random(&mut rng, 2.0, (0.1, 0.3));
    let drift_y = Wave::random(&mut rng, 1.5, (0.1, 0.3));
    let base = Point2::new(speaker.anchor.0 * cfg.width as f64, speaker.anchor.1 * cfg.height as f64);

    let clean: Vec<LandmarkFrame> = (0..cfg.frames)
        .map(|t| {
            let t = t as f64;
            let open = (0.45 + syllable.at(t) + phrase.at(t)).clamp(0.0, 1.0);
            let center = base + Point2::new(drift_x.at(t), drift_y.at(t));
            speaker.landmarks(speaker.max_aperture * open, center)
        })
        .collect();

    let noisy: Vec<LandmarkFrame> = if cfg.jitter > 0.0 {
        let normal = Normal::new(0.0, cfg.jitter)?;
        clean
            .iter()
            .map(|f| {
                LandmarkFrame::new(
                    f.points
                        .iter()
                        .map(|p| *p + Point2::new(normal.sample(&mut rng), normal.sample(&mut rng)))
                        .collect(),
                )
            })
            .collect()
    } else {
        clean.clone()
    };

    let frames = clean.iter().map(|lm| speaker.render(lm, cfg.width, cfg.height)).collect();
    Ok(SynthClip {
        frames,
        clean: LandmarkSequence::new(clean, DEFAULT_FPS)?,
        noisy: LandmarkSequence::new(noisy, DEFAULT_FPS)?,
    })
}

/// Writes `frames/`, `landmarks.json` (jittered) and `landmarks_clean.json`.
pub fn write_clip(clip: &SynthClip, dir: &Path) -> Result<()> {
    write_frames(&dir.join("frames"), &clip.frames)?;
    write_landmarks(&dir.join("landmarks.json"), &clip.noisy)?;
    write_landmarks(&dir.join("landmarks_clean.json"), &clip.clean)?;
    Ok(())
}
