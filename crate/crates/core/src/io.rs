//! Landmark JSON and PNG frame I/O.
//!
//! Landmark files look like
//! `{"fps": 30.0, "points_per_frame": 39, "frames": [[[x, y], ...], ...]}`.
//! Frame directories hold `00000.png`, `00001.png`, ...

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, ImageSequence, ImageWindow};
use crate::types::{LandmarkFrame, LandmarkSequence, Point2};

#[derive(Debug, Serialize, Deserialize)]
struct LandmarkFile {
    fps: f64,
    points_per_frame: usize,
    frames: Vec<Vec<Point2>>,
}

pub fn landmarks_to_json(seq: &LandmarkSequence) -> Result<String> {
    let file = LandmarkFile {
        fps: seq.fps,
        points_per_frame: seq.points_per_frame(),
        frames: seq.frames().iter().map(|f| f.points.clone()).collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn landmarks_from_json(text: &str) -> Result<LandmarkSequence> {
    let file: LandmarkFile = serde_json::from_str(text)?;
    if let Some((t, f)) = file.frames.iter().enumerate().find(|(_, f)| f.len() != file.points_per_frame) {
        return Err(Error::ConventionViolation {
            expected: file.points_per_frame,
            found: f.len(),
        }
        .in_frame(t));
    }
    LandmarkSequence::new(file.frames.into_iter().map(LandmarkFrame::new).collect(), file.fps)
}

pub fn read_landmarks(path: &Path) -> Result<LandmarkSequence> {
    landmarks_from_json(&fs::read_to_string(path)?)
}

pub fn write_landmarks(path: &Path, seq: &LandmarkSequence) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, landmarks_to_json(seq)?)?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<Image> {
    let dynamic = ::image::open(path)?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    match dynamic {
        ::image::DynamicImage::ImageLuma8(buf) => Image::new(w, h, 1, buf.into_raw()),
        other => Image::new(w, h, 3, other.into_rgb8().into_raw()),
    }
}

pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let color = match image.channels() {
        1 => ::image::ExtendedColorType::L8,
        _ => ::image::ExtendedColorType::Rgb8,
    };
    ::image::save_buffer(path, image.pixels(), image.width() as u32, image.height() as u32, color)?;
    Ok(())
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:05}.png"))
}

/// Reads every `*.png` in `dir`, in file-name order.
pub fn read_frames(dir: &Path) -> Result<ImageSequence> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InsufficientData(format!("no PNG frames in {}", dir.display())));
    }
    ImageWindow::new(paths.iter().map(|p| read_png(p)).collect::<Result<_>>()?)
}

pub fn write_frames(dir: &Path, frames: &[Image]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        write_png(&frame_path(dir, i), f)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn landmark_round_trip() {
        let seq = LandmarkSequence::new(
            vec![
                LandmarkFrame::new(vec![Point2::new(1.5, 2.0), Point2::new(-3.0, 4.25)]),
                LandmarkFrame::new(vec![Point2::new(0.0, 0.0), Point2::new(7.0, 8.0)]),
            ],
            25.0,
        )
        .unwrap();
        let text = landmarks_to_json(&seq).unwrap();
        assert_eq!(
            text,
            r#"{"fps":25.0,"points_per_frame":2,"frames":[[[1.5,2.0],[-3.0,4.25]],[[0.0,0.0],[7.0,8.0]]]}"#
        );
        assert_eq!(landmarks_from_json(&text).unwrap(), seq);
    }

    #[test]
    fn ragged_landmarks_rejected() {
        let text = r#"{"fps":30,"points_per_frame":2,"frames":[[[0,0],[1,1]],[[0,0]]]}"#;
        let err = landmarks_from_json(text).unwrap_err();
        assert!(matches!(err, Error::Frame { frame: 1, .. }));
    }

    #[test]
    fn png_round_trip_gray_and_rgb() {
        let dir = tempfile::tempdir().unwrap();
        for ch in [1, 3] {
            let img = Image::from_fn(7, 5, ch, |x, y, c| (x * 31 + y * 7 + c * 50) as u8).unwrap();
            let p = dir.path().join(format!("{ch}.png"));
            write_png(&p, &img).unwrap();
            assert_eq!(read_png(&p).unwrap(), img);
        }
    }

    #[test]
    fn frame_directory_order() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Image> = (0..12).map(|i| Image::filled(3, 3, 1, i as u8).unwrap()).collect();
        write_frames(dir.path(), &frames).unwrap();
        assert!(dir.path().join("00011.png").exists());
        let back = read_frames(dir.path()).unwrap();
        assert_eq!(back.frames(), &frames[..]);
        let empty = tempfile::tempdir().unwrap();
        assert!(read_frames(empty.path()).is_err());
    }
}
