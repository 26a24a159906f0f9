//! Browser demo: augmentation preview, the timestamp-spread replay buffer and
//! a relation module trained on 2-D points.
//!
//! Each export returns a JSON string; the plain Rust functions underneath are
//! usable (and tested) natively.

use harcl::augment::{jitter, magnitude_warp, scale, time_warp};
use harcl::datasets::{synth_generate, SynthSpec};
use harcl::fe::EmbeddingSample;
use harcl::relation::{classify, train_rm, ClassSamples, RmConfig, RmModel};
use harcl::replay::{d_m, ReplayBuffer};
use harcl::{seeded_rng, ClassId, Error, Result};
use ndarray::{s, Array2};
use rand::Rng;
use serde_json::{json, Value};
use std::collections::{BTreeMap, VecDeque};
use wasm_bindgen::prelude::*;

const PREVIEW_LEN: usize = 128;

fn columns(x: &Array2<f64>) -> Vec<Vec<f64>> {
    x.columns().into_iter().map(|c| c.to_vec()).collect()
}

/// One synthetic window of `class` and its four augmentations, channel-major.
pub fn augmentation_preview(class: ClassId, seed: u64, sigmas: [f64; 4], n_knots: usize) -> Result<Value> {
    let spec = SynthSpec { n_subjects: 1, samples_per_class: PREVIEW_LEN, seed, ..SynthSpec::default() };
    if class as usize >= spec.n_classes {
        return Err(Error::InvalidConfig(format!("class must be below {}", spec.n_classes)));
    }
    if sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidConfig("sigmas must be non-negative".into()));
    }
    let rec = synth_generate(&spec)?
        .into_iter()
        .find(|r| r.labels[0] == class)
        .ok_or_else(|| Error::EmptyClass(class))?;
    let x = rec.channels.slice(s![..PREVIEW_LEN, ..]).to_owned();
    let mut rng = seeded_rng(seed ^ 0xa5a5);
    Ok(json!({
        "original": columns(&x),
        "jitter": columns(&jitter(&x, sigmas[0], &mut rng)),
        "scale": columns(&scale(&x, sigmas[1], &mut rng)),
        "magnitude_warp": columns(&magnitude_warp(&x, sigmas[2], n_knots, &mut rng)),
        "time_warp": columns(&time_warp(&x, sigmas[3], n_knots, &mut rng)),
    }))
}

#[wasm_bindgen(js_name = augmentationPreview)]
pub fn augmentation_preview_js(
    class: u32,
    seed: u32,
    sigma_jitter: f64,
    sigma_scale: f64,
    sigma_mwarp: f64,
    sigma_twarp: f64,
) -> std::result::Result<String, String> {
    augmentation_preview(class, seed as u64, [sigma_jitter, sigma_scale, sigma_mwarp, sigma_twarp], 4)
        .map(|v| v.to_string())
        .map_err(|e| e.to_string())
}

/// A replay buffer fed from a simulated stream, next to a first-in-first-out
/// buffer of the same size for comparison.
#[wasm_bindgen]
pub struct ReplaySim {
    buffer: ReplayBuffer,
    fifo: BTreeMap<ClassId, VecDeque<f64>>,
    n_classes: u32,
    clock: f64,
    rng: harcl::SeededRng,
    steps: usize,
    retrains: usize,
}

impl ReplaySim {
    pub fn create(capacity: usize, n_classes: u32, seed: u64) -> Result<ReplaySim> {
        if n_classes == 0 {
            return Err(Error::InvalidConfig("need at least one class".into()));
        }
        Ok(ReplaySim {
            buffer: ReplayBuffer::new(capacity, 1)?,
            fifo: BTreeMap::new(),
            n_classes,
            clock: 0.0,
            rng: seeded_rng(seed),
            steps: 0,
            retrains: 0,
        })
    }

    /// Feeds `n` labeled samples at irregular times; a retrain is simulated
    /// (trigger reset) whenever the buffer asks for one.
    pub fn advance(&mut self, n: usize) -> Result<Value> {
        for _ in 0..n {
            self.clock += self.rng.random_range(0.1..2.0);
            let class = self.rng.random_range(0..self.n_classes);
            let sample = EmbeddingSample { vector: vec![0.0], label: Some(class), timestamp: self.clock };
            self.buffer.update(&[sample])?;
            let q = self.fifo.entry(class).or_default();
            q.push_back(self.clock);
            if q.len() > self.buffer.capacity() {
                q.pop_front();
            }
            if self.buffer.should_retrain().is_some() {
                self.buffer.reset_trigger();
                self.retrains += 1;
            }
            self.steps += 1;
        }
        Ok(self.state())
    }

    pub fn state(&self) -> Value {
        let classes: Vec<Value> = self
            .buffer
            .classes()
            .iter()
            .map(|(c, samples)| {
                let kept: Vec<f64> = samples.iter().map(|s| s.timestamp).collect();
                let fifo: Vec<f64> = self.fifo.get(c).map(|q| q.iter().copied().collect()).unwrap_or_default();
                json!({
                    "class": c,
                    "kept": kept,
                    "d_m": d_m(&kept),
                    "fifo": fifo,
                    "fifo_d_m": d_m(&fifo),
                })
            })
            .collect();
        json!({ "clock": self.clock, "steps": self.steps, "retrains": self.retrains, "classes": classes })
    }
}

#[wasm_bindgen]
impl ReplaySim {
    #[wasm_bindgen(constructor)]
    pub fn new(capacity: usize, n_classes: u32, seed: u32) -> std::result::Result<ReplaySim, String> {
        Self::create(capacity, n_classes, seed as u64).map_err(|e| e.to_string())
    }

    #[wasm_bindgen(js_name = advance)]
    pub fn advance_js(&mut self, n: usize) -> std::result::Result<String, String> {
        self.advance(n).map(|v| v.to_string()).map_err(|e| e.to_string())
    }
}

/// Relation module on hand-placed 2-D points standing in for embeddings.
#[wasm_bindgen]
pub struct RelationPlayground {
    points: ClassSamples,
    model: Option<RmModel>,
    seed: u64,
}

impl RelationPlayground {
    pub fn create(seed: u64) -> RelationPlayground {
        RelationPlayground { points: ClassSamples::new(), model: None, seed }
    }

    pub fn add(&mut self, class: ClassId, x: f64, y: f64) {
        let list = self.points.entry(class).or_default();
        let t = list.len() as f64;
        list.push(EmbeddingSample { vector: vec![x as f32, y as f32], label: Some(class), timestamp: t });
    }

    fn config(&self, epochs: usize) -> RmConfig {
        RmConfig {
            embedding_dim: 2,
            support_per_class: 2,
            conv_filters: 8,
            hidden: 16,
            lr: 1e-2,
            epochs,
            seed: self.seed,
            ..RmConfig::default()
        }
    }

    pub fn fit(&mut self, epochs: usize) -> Result<Value> {
        let (rm, report) = train_rm(&self.points, &self.config(epochs))?;
        self.model = Some(rm);
        Ok(json!({ "epoch_losses": report.epoch_losses, "final_episode_accuracy": report.final_episode_accuracy }))
    }

    /// Predicted class over a `resolution × resolution` grid of
    /// `[-1, 1]²`, row-major from the top-left corner.
    pub fn grid(&self, resolution: usize) -> Result<Value> {
        let rm = self.model.as_ref().ok_or_else(|| Error::InvalidConfig("train the model first".into()))?;
        let step = 2.0 / resolution.max(1) as f64;
        let queries: Vec<EmbeddingSample> = (0..resolution * resolution)
            .map(|k| {
                let x = -1.0 + step * ((k % resolution) as f64 + 0.5);
                let y = 1.0 - step * ((k / resolution) as f64 + 0.5);
                EmbeddingSample { vector: vec![x as f32, y as f32], label: None, timestamp: 0.0 }
            })
            .collect();
        let out = classify(rm, &self.points, &queries)?;
        let confidence: Vec<f64> = out.scores.columns().into_iter().map(|c| c.fold(0.0, |a: f64, &b| a.max(b))).collect();
        Ok(json!({ "resolution": resolution, "labels": out.labels, "confidence": confidence }))
    }
}

#[wasm_bindgen]
impl RelationPlayground {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> RelationPlayground {
        Self::create(seed as u64)
    }

    #[wasm_bindgen(js_name = addPoint)]
    pub fn add_point(&mut self, class: u32, x: f64, y: f64) {
        self.add(class, x, y);
    }

    pub fn clear(&mut self) {
        self.points.clear();
        self.model = None;
    }

    #[wasm_bindgen(js_name = train)]
    pub fn train_js(&mut self, epochs: usize) -> std::result::Result<String, String> {
        self.fit(epochs).map(|v| v.to_string()).map_err(|e| e.to_string())
    }

    #[wasm_bindgen(js_name = grid)]
    pub fn grid_js(&self, resolution: usize) -> std::result::Result<String, String> {
        self.grid(resolution).map(|v| v.to_string()).map_err(|e| e.to_string())
    }
}
