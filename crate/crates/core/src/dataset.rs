//! Posed, timestamped projection images and their on-disk layout.
//!
//! A dataset directory holds `meta.json` and one image per frame:
//!
//! ```json
//! {
//!   "version": 1,
//!   "width": 128,
//!   "height": 128,
//!   "frames": [
//!     { "file": "frame_000.png", "view": 0, "t": 0.0, "split": "train", "camera": { ... } }
//!   ]
//! }
//! ```
//!
//! Images may be 8/16-bit grayscale PNG or binary PGM.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, IoContext, Result};
use crate::imageio::{read_image, write_image, BitDepth};
use crate::raster::Image;

pub const META_FILE: &str = "meta.json";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Dataset(format!("unknown split {other:?} (expected train or test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub file: String,
    pub view: usize,
    pub t: f64,
    pub split: Split,
    pub camera: Camera,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub width: u32,
    pub height: u32,
    /// Axis-aligned box enclosing the scene, `[min, max]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[[f64; 3]; 2]>,
    pub frames: Vec<FrameMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: Image<f32>,
    pub camera: Camera,
    pub t: f64,
    pub view: usize,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub bounds: Option<[[f64; 3]; 2]>,
}

impl Dataset {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let d = Self { frames, bounds: None };
        d.validate()?;
        Ok(d)
    }

    /// Every `t` lies in `[0, 1]` and every image matches its camera and the
    /// first frame's size.
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Ok(());
        };
        let (w, h) = (first.image.width(), first.image.height());
        for f in &self.frames {
            if !(0.0..=1.0).contains(&f.t) {
                return Err(Error::Dataset(format!("frame of view {} has t = {} outside [0, 1]", f.view, f.t)));
            }
            if f.image.width() != w || f.image.height() != h {
                return Err(Error::Dataset(format!(
                    "frame of view {} is {}x{}, expected {w}x{h}",
                    f.view,
                    f.image.width(),
                    f.image.height()
                )));
            }
            if f.camera.width as usize != w || f.camera.height as usize != h {
                return Err(Error::Dataset(format!("camera of view {} does not match image size", f.view)));
            }
            f.camera.validate()?;
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&Frame> {
        self.frames.iter().filter(|f| f.split == split).collect()
    }

    pub fn train(&self) -> Vec<&Frame> {
        self.split(Split::Train)
    }

    pub fn test(&self) -> Vec<&Frame> {
        self.split(Split::Test)
    }

    /// Keeps `count` training frames spread evenly over the training views
    /// (by view order); test frames are untouched.
    pub fn with_train_views(&self, count: usize) -> Result<Self> {
        let train: Vec<&Frame> = {
            let mut v = self.train();
            v.sort_by_key(|f| f.view);
            v
        };
        if count == 0 || count > train.len() {
            return Err(Error::Dataset(format!(
                "requested {count} training views, dataset has {}",
                train.len()
            )));
        }
        let chosen: Vec<usize> = (0..count).map(|i| train[i * train.len() / count].view).collect();
        let frames = self
            .frames
            .iter()
            .filter(|f| f.split == Split::Test || chosen.contains(&f.view))
            .cloned()
            .collect();
        Ok(Self {
            frames,
            bounds: self.bounds,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).with_path(&meta_path)?;
        let meta: DatasetMeta = serde_json::from_str(&text)?;
        if meta.version != DATASET_VERSION {
            return Err(Error::Dataset(format!(
                "dataset version {} is not supported (expected {DATASET_VERSION})",
                meta.version
            )));
        }
        let mut frames = Vec::with_capacity(meta.frames.len());
        for fm in meta.frames {
            let image = read_image(&dir.join(&fm.file))?;
            if image.width() != meta.width as usize || image.height() != meta.height as usize {
                return Err(Error::Dataset(format!("{} does not match the declared size", fm.file)));
            }
            frames.push(Frame {
                image,
                camera: fm.camera,
                t: fm.t,
                view: fm.view,
                split: fm.split,
            });
        }
        let mut d = Self::new(frames)?;
        d.bounds = meta.bounds;
        Ok(d)
    }

    /// Writes images as `frame_NNN.png` plus `meta.json`.
    pub fn save(&self, dir: &Path, depth: BitDepth) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).with_path(dir)?;
        let (width, height) = self
            .frames
            .first()
            .map(|f| (f.image.width() as u32, f.image.height() as u32))
            .unwrap_or((0, 0));
        let mut metas = Vec::with_capacity(self.frames.len());
        for (i, f) in self.frames.iter().enumerate() {
            let file = format!("frame_{i:03}.png");
            write_image(&dir.join(&file), &f.image, depth)?;
            metas.push(FrameMeta {
                file,
                view: f.view,
                t: f.t,
                split: f.split,
                camera: f.camera.clone(),
            });
        }
        let meta = DatasetMeta {
            version: DATASET_VERSION,
            width,
            height,
            bounds: self.bounds,
            frames: metas,
        };
        let meta_path = dir.join(META_FILE);
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        fs::write(&meta_path, text).with_path(&meta_path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::frontal_camera;

    fn frame(view: usize, t: f64, split: Split) -> Frame {
        Frame {
            image: Image::from_fn(8, 6, |x, y| ((x * y + view) % 7) as f32 / 6.0),
            camera: frontal_camera(8, 6),
            t,
            view,
            split,
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::new(vec![frame(0, 0.0, Split::Train), frame(1, 0.5, Split::Test), frame(2, 1.0, Split::Train)]).unwrap();
        d.save(dir.path(), BitDepth::Sixteen).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.frames.len(), 3);
        for (a, b) in d.frames.iter().zip(&back.frames) {
            assert_eq!((a.view, a.t, a.split, &a.camera), (b.view, b.t, b.split, &b.camera));
            assert!(a.image.data().iter().zip(b.image.data()).all(|(x, y)| (x - y).abs() < 1e-5));
        }
    }

    #[test]
    fn rejects_bad_time_and_size() {
        assert!(Dataset::new(vec![frame(0, 1.5, Split::Train)]).is_err());
        let mut odd = frame(1, 0.2, Split::Train);
        odd.image = Image::zeros(4, 4);
        assert!(Dataset::new(vec![frame(0, 0.0, Split::Train), odd]).is_err());
    }

    #[test]
    fn train_view_subset_is_even() {
        let frames = (0..12)
            .map(|v| frame(v, v as f64 / 11.0, if v % 4 == 3 { Split::Test } else { Split::Train }))
            .collect();
        let d = Dataset::new(frames).unwrap();
        let sub = d.with_train_views(3).unwrap();
        let views: Vec<usize> = sub.train().iter().map(|f| f.view).collect();
        assert_eq!(views, [0, 4, 8]);
        assert_eq!(sub.test().len(), 3);
        assert!(d.with_train_views(10).is_err());
    }
}
