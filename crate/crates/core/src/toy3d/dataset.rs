//! Frame collections and their JSON-lines form.
//!
//! Only the scene description is stored; feature grids are re-rendered from
//! the frame seed on load.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::camera::CameraModel;
use super::scene::{generate_scene, render, RenderedFrame, SceneConfig, SceneObject};
use crate::error::{Error, Result};
use crate::par::par_map;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FrameRecord {
    seed: u64,
    objects: Vec<SceneObject>,
    camera: CameraModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: SceneConfig,
    pub frames: Vec<RenderedFrame>,
}

/// Seed of frame `index` in split `split` of the dataset drawn from `seed`.
pub fn frame_seed(seed: u64, split: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (split << 40) ^ index
}

impl Dataset {
    pub fn empty(config: SceneConfig) -> Self {
        Self { config, frames: Vec::new() }
    }

    /// Renders one frame per seed using up to `threads` workers.
    pub fn generate(config: &SceneConfig, seeds: &[u64], threads: usize) -> Result<Self> {
        config.validate()?;
        let frames = par_map(seeds, threads, |&s| generate_scene(s, config)).into_iter().collect::<Result<_>>()?;
        Ok(Self { config: config.clone(), frames })
    }

    /// Disjoint train and validation sets drawn from `seed`.
    pub fn train_val(config: &SceneConfig, n_train: usize, n_val: usize, seed: u64, threads: usize) -> Result<(Self, Self)> {
        let train: Vec<u64> = (0..n_train as u64).map(|i| frame_seed(seed, 0, i)).collect();
        let val: Vec<u64> = (0..n_val as u64).map(|i| frame_seed(seed, 1, i)).collect();
        Ok((Self::generate(config, &train, threads)?, Self::generate(config, &val, threads)?))
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for f in &self.frames {
            let rec = FrameRecord { seed: f.seed, objects: f.objects.clone(), camera: f.camera };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses JSON lines and re-renders each frame under `config`. Blank
    /// lines are skipped.
    pub fn from_jsonl(text: &str, config: &SceneConfig) -> Result<Self> {
        Self::read_lines(text.lines().map(|l| Ok(l.to_string())), config)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path, config: &SceneConfig) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        Self::read_lines(reader.lines().map(|l| l.map_err(Error::from)), config)
    }

    fn read_lines(lines: impl Iterator<Item = Result<String>>, config: &SceneConfig) -> Result<Self> {
        config.validate()?;
        let mut frames = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                field: n + 1,
                message: format!("line {}: {e}", n + 1),
            })?;
            frames.push(render(&rec.objects, &rec.camera, config, rec.seed)?);
        }
        Ok(Self { config: config.clone(), frames })
    }
}
