//! Texture bank: stride-1 sliding windows of (mouth landmarks, mouth crops)
//! harvested from a clip, searched by L1 landmark distance.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, ImageSequence, ImageWindow};
use crate::io::{read_png, write_png};
use crate::preprocess::{crop_at, mouth_center};
use crate::types::{CropSpec, LandmarkFrame, LandmarkSequence, LandmarkWindow, Point2};

pub const DEFAULT_WINDOW_LEN: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    /// First source frame of the window.
    pub start: usize,
    /// Mouth landmarks in crop-local coordinates.
    pub landmarks: LandmarkWindow,
    pub images: ImageWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureBank {
    entries: Vec<BankEntry>,
    window_len: usize,
    crop: CropSpec,
}

/// Sum over frames and points of `|dx| + |dy|`.
pub fn landmark_l1(a: &LandmarkWindow, b: &LandmarkWindow) -> Result<f64> {
    a.require_same_shape(b, "landmark distance")?;
    Ok(l1_unchecked(a, b))
}

fn l1_unchecked(a: &LandmarkWindow, b: &LandmarkWindow) -> f64 {
    a.frames()
        .iter()
        .zip(b.frames())
        .flat_map(|(fa, fb)| fa.points.iter().zip(&fb.points))
        .map(|(p, q)| (*p - *q).l1_norm())
        .sum()
}

/// Re-expresses a full-frame mouth landmark frame relative to its crop.
pub fn to_crop_local(frame: &LandmarkFrame, crop: CropSpec) -> Result<(LandmarkFrame, (i64, i64))> {
    let (x0, y0) = crop.top_left(mouth_center(frame)?);
    let offset = Point2::new(-(x0 as f64), -(y0 as f64));
    Ok((frame.translated(offset), (x0, y0)))
}

/// Cuts `frames` and `landmarks` into overlapping windows `[k, k + window_len)`.
pub fn build_bank(
    frames: &ImageSequence,
    landmarks: &LandmarkSequence,
    window_len: usize,
    crop: CropSpec,
) -> Result<TextureBank> {
    if window_len == 0 {
        return Err(Error::invalid("window length must be positive"));
    }
    if frames.len() != landmarks.len() {
        return Err(Error::invalid(format!(
            "{} frames but {} landmark frames",
            frames.len(),
            landmarks.len()
        )));
    }
    if frames.len() < window_len {
        return Err(Error::InsufficientData(format!(
            "clip has {} frames, window needs {window_len}",
            frames.len()
        )));
    }

    // Crop every frame once; windows share them.
    let mut crops = Vec::with_capacity(frames.len());
    let mut local = Vec::with_capacity(frames.len());
    for (t, (img, lm)) in frames.frames().iter().zip(landmarks.frames()).enumerate() {
        let center = mouth_center(lm).map_err(|e| e.in_frame(t))?;
        crops.push(crop_at(img, center, crop).map_err(|e| e.in_frame(t))?);
        local.push(to_crop_local(lm, crop)?.0);
    }

    let entries = (0..=frames.len() - window_len)
        .map(|k| {
            Ok(BankEntry {
                start: k,
                landmarks: LandmarkWindow::new(local[k..k + window_len].to_vec(), landmarks.fps)?,
                images: ImageWindow::new(crops[k..k + window_len].to_vec())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TextureBank {
        entries,
        window_len,
        crop,
    })
}

impl TextureBank {
    pub fn new(entries: Vec<BankEntry>, window_len: usize, crop: CropSpec) -> Result<Self> {
        let mut last_start = None;
        for (i, e) in entries.iter().enumerate() {
            if e.landmarks.len() != window_len || e.images.len() != window_len {
                return Err(Error::invalid(format!("entry {i} does not span {window_len} frames")));
            }
            if e.landmarks.points_per_frame() != entries[0].landmarks.points_per_frame() {
                return Err(Error::invalid(format!("entry {i} has a different point count")));
            }
            let img = e.images.frame(0);
            if img.width() != crop.side || img.height() != crop.side {
                return Err(Error::invalid(format!("entry {i} crops are not {0}x{0}", crop.side)));
            }
            if last_start.is_some_and(|s| e.start <= s) {
                return Err(Error::invalid("entries must be ordered by start frame"));
            }
            last_start = Some(e.start);
        }
        Ok(Self {
            entries,
            window_len,
            crop,
        })
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn crop(&self) -> CropSpec {
        self.crop
    }

    /// Entry nearest to `query` in [`landmark_l1`]; ties go to the lowest index.
    pub fn retrieve(&self, query: &LandmarkWindow) -> Result<(usize, &BankEntry, f64)> {
        let first = self.entries.first().ok_or(Error::EmptyBank)?;
        first.landmarks.require_same_shape(query, "retrieval query")?;
        let mut best = (0, f64::INFINITY);
        for (i, e) in self.entries.iter().enumerate() {
            let d = l1_unchecked(&e.landmarks, query);
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok((best.0, &self.entries[best.0], best.1))
    }

    /// Writes `manifest.json` plus one PNG per crop at `{entry}/{frame}.png`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            window_len: self.window_len,
            crop: self.crop,
            points_per_frame: self.entries.first().map_or(0, |e| e.landmarks.points_per_frame()),
            fps: self.entries.first().map_or(crate::types::DEFAULT_FPS, |e| e.landmarks.fps),
            entries: self
                .entries
                .iter()
                .map(|e| ManifestEntry {
                    start: e.start,
                    end: e.start + self.window_len,
                    landmarks: e.landmarks.frames().iter().map(|f| f.points.clone()).collect(),
                })
                .collect(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        for (i, e) in self.entries.iter().enumerate() {
            let sub = dir.join(i.to_string());
            fs::create_dir_all(&sub)?;
            for (t, img) in e.images.frames().iter().enumerate() {
                write_png(&sub.join(format!("{t}.png")), img)?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        let crop = CropSpec::new(manifest.crop.side)?;
        let entries = manifest
            .entries
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                if m.end != m.start + manifest.window_len {
                    return Err(Error::invalid(format!("entry {i} bounds disagree with window length")));
                }
                let landmarks = LandmarkWindow::new(
                    m.landmarks.into_iter().map(LandmarkFrame::new).collect(),
                    manifest.fps,
                )?;
                let images = (0..manifest.window_len)
                    .map(|t| read_png(&dir.join(i.to_string()).join(format!("{t}.png"))))
                    .collect::<Result<Vec<Image>>>()?;
                Ok(BankEntry {
                    start: m.start,
                    landmarks,
                    images: ImageWindow::new(images)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries, manifest.window_len, crop)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    window_len: usize,
    crop: CropSpec,
    points_per_frame: usize,
    fps: f64,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    start: usize,
    end: usize,
    landmarks: Vec<Vec<Point2>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::mouth;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_window(rng: &mut ChaCha8Rng, t: usize, p: usize) -> LandmarkWindow {
        LandmarkWindow::from_points(
            (0..t)
                .map(|_| (0..p).map(|_| Point2::new(rng.random_range(0.0..50.0), rng.random_range(0.0..50.0))).collect())
                .collect(),
        )
        .unwrap()
    }

    fn mouth_clip(rng: &mut ChaCha8Rng, n: usize) -> (ImageSequence, LandmarkSequence) {
        let frames = (0..n)
            .map(|t| Image::from_fn(64, 48, 1, |x, y, _| ((x + 2 * y + 9 * t) % 251) as u8).unwrap())
            .collect();
        let lms = (0..n)
            .map(|_| {
                (0..mouth::POINTS)
                    .map(|_| Point2::new(rng.random_range(20.0..44.0), rng.random_range(14.0..34.0)))
                    .collect()
            })
            .collect();
        (ImageWindow::new(frames).unwrap(), LandmarkWindow::from_points(lms).unwrap())
    }

    #[test]
    fn l1_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_window(&mut rng, 6, 39);
        assert_eq!(landmark_l1(&a, &a).unwrap(), 0.0);
        let b = a.map_frames(|f| f.translated(Point2::new(1.0, 0.0)));
        assert!((landmark_l1(&a, &b).unwrap() - 234.0).abs() < 1e-9);
        let c = random_window(&mut rng, 6, 38);
        assert!(landmark_l1(&a, &c).is_err());
    }

    #[test]
    fn l1_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_window(&mut rng, 4, 7);
        let b = random_window(&mut rng, 4, 7);
        let mut sum = 0.0;
        for t in 0..4 {
            for i in 0..7 {
                sum += (a.frame(t).points[i].x - b.frame(t).points[i].x).abs();
                sum += (a.frame(t).points[i].y - b.frame(t).points[i].y).abs();
            }
        }
        assert!((landmark_l1(&a, &b).unwrap() - sum).abs() < 1e-9);
    }

    #[test]
    fn bank_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = CropSpec::new(20).unwrap();
        let (f, l) = mouth_clip(&mut rng, 6);
        assert_eq!(build_bank(&f, &l, 6, spec).unwrap().len(), 1);
        let (f, l) = mouth_clip(&mut rng, 15);
        assert_eq!(build_bank(&f, &l, 6, spec).unwrap().len(), 10);
        let (f, l) = mouth_clip(&mut rng, 5);
        assert!(matches!(build_bank(&f, &l, 6, spec), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn bank_entries_match_explicit_slicing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = CropSpec::new(20).unwrap();
        let (f, l) = mouth_clip(&mut rng, 9);
        let bank = build_bank(&f, &l, 4, spec).unwrap();
        for (k, e) in bank.entries().iter().enumerate() {
            assert_eq!(e.start, k);
            for t in 0..4 {
                let lm = l.frame(k + t);
                let c = mouth_center(lm).unwrap();
                let x0 = c.x.round() - 10.0;
                let y0 = c.y.round() - 10.0;
                for (p, q) in e.landmarks.frame(t).points.iter().zip(&lm.points) {
                    assert_eq!(*p, Point2::new(q.x - x0, q.y - y0));
                }
                let img = e.images.frame(t);
                for y in 0..20 {
                    for x in 0..20 {
                        let sx = (x0 as i64 + x as i64).clamp(0, 63) as usize;
                        let sy = (y0 as i64 + y as i64).clamp(0, 47) as usize;
                        assert_eq!(img.get(x, y, 0), f.frame(k + t).get(sx, sy, 0));
                    }
                }
            }
        }
    }

    fn synthetic_bank(rng: &mut ChaCha8Rng, n: usize, t: usize, p: usize) -> TextureBank {
        let img = ImageWindow::new(vec![Image::filled(4, 4, 1, 0).unwrap(); t]).unwrap();
        let entries = (0..n)
            .map(|k| BankEntry {
                start: k,
                landmarks: random_window(rng, t, p),
                images: img.clone(),
            })
            .collect();
        TextureBank::new(entries, t, CropSpec::new(4).unwrap()).unwrap()
    }

    #[test]
    fn retrieve_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bank = synthetic_bank(&mut rng, 8, 3, 5);
        let q = bank.entries()[3].landmarks.clone();
        let (i, _, d) = bank.retrieve(&q).unwrap();
        assert_eq!((i, d), (3, 0.0));

        let single = synthetic_bank(&mut rng, 1, 3, 5);
        let q = random_window(&mut rng, 3, 5);
        assert_eq!(single.retrieve(&q).unwrap().0, 0);

        let empty = TextureBank::new(vec![], 3, CropSpec::new(4).unwrap()).unwrap();
        assert!(matches!(empty.retrieve(&q), Err(Error::EmptyBank)));
        assert!(bank.retrieve(&random_window(&mut rng, 3, 6)).is_err());
    }

    #[test]
    fn retrieve_matches_brute_force_and_breaks_ties_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let bank = synthetic_bank(&mut rng, 50, 6, 4);
            let q = random_window(&mut rng, 6, 4);
            let dists: Vec<f64> = bank.entries().iter().map(|e| landmark_l1(&e.landmarks, &q).unwrap()).collect();
            let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let want = dists.iter().position(|&d| d == min).unwrap();
            assert_eq!(bank.retrieve(&q).unwrap().0, want);
        }
        // Duplicate entries: the first copy wins.
        let mut bank = synthetic_bank(&mut rng, 5, 2, 3);
        let dup = bank.entries[1].landmarks.clone();
        bank.entries[4].landmarks = dup.clone();
        assert_eq!(bank.retrieve(&dup).unwrap().0, 1);
    }

    #[test]
    fn save_load_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = CropSpec::new(20).unwrap();
        let (f, l) = mouth_clip(&mut rng, 8);
        let bank = build_bank(&f, &l, 6, spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        bank.save(dir.path()).unwrap();
        assert!(dir.path().join("2/5.png").exists());
        let back = TextureBank::load(dir.path()).unwrap();
        assert_eq!(back, bank);
    }

    proptest! {
        #[test]
        fn l1_is_a_metric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_window(&mut rng, 3, 4);
            let b = random_window(&mut rng, 3, 4);
            let c = random_window(&mut rng, 3, 4);
            let ab = landmark_l1(&a, &b).unwrap();
            prop_assert_eq!(ab, landmark_l1(&b, &a).unwrap());
            prop_assert!(ab > 0.0);
            prop_assert!(landmark_l1(&a, &c).unwrap() <= ab + landmark_l1(&b, &c).unwrap() + 1e-9);
        }

        #[test]
        fn appending_farther_entries_keeps_the_answer(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut bank = synthetic_bank(&mut rng, 10, 3, 4);
            let q = random_window(&mut rng, 3, 4);
            let (i, _, d) = bank.retrieve(&q).unwrap();
            let far = q.map_frames(|f| f.translated(Point2::new(d + 1.0, 0.0)));
            bank.entries.push(BankEntry { start: 10, landmarks: far, images: bank.entries[0].images.clone() });
            prop_assert_eq!(bank.retrieve(&q).unwrap().0, i);
        }
    }
}
