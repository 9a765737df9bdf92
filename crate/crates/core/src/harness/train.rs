use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{self, EncoderLossInputs, GroundTruthPair, PerceptualExtractor};
use crate::nn::ParamStore;
use crate::render::{hflip_tensor, mirror_camera, Camera};
use crate::vq::{scalar, SketchCodec};

use super::checkpoint::Checkpoint;
use super::config::{OptimConfig, Stage, TrainConfig};
use super::model::SsspModel;

#[derive(Debug, Clone, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub total: f64,
    pub terms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub logs: Vec<StepLog>,
    /// Named scalar results (e.g. held-out accuracy).
    pub metrics: BTreeMap<String, f64>,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.logs.first().map_or(f64::NAN, |l| l.total)
    }

    /// Mean total loss over the last `n` logged steps.
    pub fn final_loss(&self, n: usize) -> f64 {
        let k = n.min(self.logs.len()).max(1);
        self.logs[self.logs.len().saturating_sub(k)..].iter().map(|l| l.total).sum::<f64>() / k as f64
    }
}

struct Trainer {
    opt: AdamW,
    logs: Vec<StepLog>,
    running: Option<f64>,
    cfg: OptimConfig,
}

impl Trainer {
    fn new(vars: Vec<Var>, cfg: &OptimConfig) -> Result<Self> {
        if vars.is_empty() {
            return Err(Error::Config("no trainable parameters".into()));
        }
        let params = ParamsAdamW {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        Ok(Self { opt: AdamW::new(vars, params)?, logs: Vec::new(), running: None, cfg: *cfg })
    }

    /// Applies one update; returns `true` once the early-stop target is met.
    fn step(&mut self, step: usize, loss: &Tensor, terms: BTreeMap<String, f64>) -> Result<bool> {
        let total = scalar(loss)?;
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step}: {total}; terms {terms:?}")));
        }
        self.opt.backward_step(loss)?;
        if self.cfg.log_every > 0 && step % self.cfg.log_every == 0 {
            log::info!("step {step}: loss {total:.5} {terms:?}");
        }
        self.logs.push(StepLog { step, total, terms });
        let r = match self.running {
            None => total,
            Some(r) => 0.9 * r + 0.1 * total,
        };
        self.running = Some(r);
        let initial = self.logs[0].total;
        Ok(match self.cfg.stop_below_fraction {
            Some(f) => self.logs.len() >= 10 && r < f * initial,
            None => false,
        })
    }
}

/// Deterministic shuffled minibatches over `n` items.
struct Batches {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl Batches {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, batch: batch.min(n), rng }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

fn load_split(cfg: &TrainConfig, split: Split, n: usize) -> Result<Vec<Sample>> {
    Dataset::new(split, n, cfg.data.seed, cfg.sample_options())?.load_all()
}

fn stack(images: Vec<&Image>) -> Result<Tensor> {
    Image::batch_tensor(&images, DType::F32, &Device::Cpu)
}

fn sketch_batch(samples: &[Sample], idx: &[usize]) -> Result<Tensor> {
    stack(idx.iter().map(|&i| samples[i].sketch.image()).collect())
}

fn contour_batch(samples: &[Sample], idx: &[usize]) -> Result<Tensor> {
    stack(idx.iter().map(|&i| samples[i].contour.image()).collect())
}

pub(crate) const VQ_PREFIXES: [&str; 3] = ["vq.tokenizer.", "vq.codebook", "vq.decoder."];

fn grid_cells(z: &Tensor) -> Result<(Vec<f32>, usize, usize)> {
    let (b, d, g, _) = z.dims4()?;
    let cells = z.permute((0, 2, 3, 1))?.reshape((b * g * g, d))?.flatten_all()?.to_vec1()?;
    Ok((cells, b * g * g, d))
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum()
}

/// Squared distance from every cell to its nearest center.
fn nearest_sq_dist(cells: &[f32], d: usize, centers: &[&[f32]]) -> Vec<f64> {
    cells
        .chunks(d)
        .map(|c| centers.iter().map(|e| sq_dist(c, e)).fold(f64::INFINITY, f64::min))
        .collect()
}

/// Draws a cell index with probability proportional to `weights`; `None`
/// when every weight is zero.
fn weighted_pick(weights: &[f64], rng: &mut ChaCha8Rng) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return None;
    }
    let mut t = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if t < w {
            return Some(i);
        }
        t -= w;
    }
    weights.iter().rposition(|&w| w > 0.0)
}

/// Lowers `dist` with the distances to a newly placed center.
fn absorb(dist: &mut [f64], cells: &[f32], d: usize, center: &[f32]) {
    for (m, c) in dist.iter_mut().zip(cells.chunks(d)) {
        *m = m.min(sq_dist(c, center));
    }
}

/// Seeds the codebook from tokenizer outputs of the given sketches with
/// k-means++ sampling, so repeated cells (blank paper) claim one entry
/// rather than many. Entries left over once every distinct cell is covered
/// are jittered copies.
pub fn init_codebook_from_data(codec: &SketchCodec, store: &ParamStore, sketches: &Tensor, seed: u64) -> Result<()> {
    let (cells, n, d) = grid_cells(&codec.tokenize(sketches)?.detach())?;
    let k = codec.cfg.codebook_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..n);
    let mut picks = vec![first];
    let mut dist = vec![f64::INFINITY; n];
    absorb(&mut dist, &cells, d, &cells[first * d..(first + 1) * d]);
    while picks.len() < k {
        let Some(i) = weighted_pick(&dist, &mut rng) else { break };
        picks.push(i);
        absorb(&mut dist, &cells, d, &cells[i * d..(i + 1) * d]);
    }
    let mut data = Vec::with_capacity(k * d);
    for i in 0..k {
        let src = picks.get(i).copied().unwrap_or_else(|| picks[rng.gen_range(0..picks.len())]);
        let jitter = if i < picks.len() { 0.0 } else { 1e-2 };
        data.extend(cells[src * d..(src + 1) * d].iter().map(|v| v + jitter * rng.gen_range(-1.0f32..1.0)));
    }
    store.insert("vq.codebook", &Tensor::from_vec(data, (k, d), &Device::Cpu)?)
}

/// Moves codebook entries that no cell selected onto current cells, drawn
/// in proportion to their squared distance from the live entries.
fn restart_dead_codes(store: &ParamStore, usage: &[usize], z: &Tensor, rng: &mut ChaCha8Rng) -> Result<usize> {
    let dead: Vec<usize> = usage.iter().enumerate().filter(|(_, &u)| u == 0).map(|(i, _)| i).collect();
    if dead.is_empty() {
        return Ok(0);
    }
    let var = store.get("vq.codebook").ok_or_else(|| Error::Config("codebook missing".into()))?;
    let (k, d) = var.as_tensor().dims2()?;
    let mut book: Vec<f32> = var.as_tensor().flatten_all()?.to_vec1()?;
    let (cells, _, _) = grid_cells(z)?;
    let live: Vec<&[f32]> = book.chunks(d).zip(usage).filter(|(_, &u)| u > 0).map(|(e, _)| e).collect();
    let mut dist = nearest_sq_dist(&cells, d, &live);
    let mut moved = 0;
    for &e in &dead {
        let Some(src) = weighted_pick(&dist, rng) else { break };
        book[e * d..(e + 1) * d].copy_from_slice(&cells[src * d..(src + 1) * d]);
        absorb(&mut dist, &cells, d, &cells[src * d..(src + 1) * d]);
        moved += 1;
    }
    var.set(&Tensor::from_vec(book, (k, d), &Device::Cpu)?)?;
    Ok(moved)
}

/// Trains the sketch tokenizer, codebook and decoder.
pub fn train_vq(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.stage != Stage::Vq {
        return Err(Error::Config("train_vq needs stage \"vq\"".into()));
    }
    let store = ParamStore::new(DType::F32, cfg.seed);
    let codec = SketchCodec::new(&store.root().pp("vq"), cfg.vq)?;
    let samples = load_split(cfg, Split::Train, cfg.data.train_samples)?;
    let mut batches = Batches::new(samples.len(), cfg.optim.batch_size, cfg.seed);
    if cfg.vq_data_init {
        let all: Vec<usize> = (0..samples.len().min(64)).collect();
        init_codebook_from_data(&codec, &store, &sketch_batch(&samples, &all)?, cfg.seed)?;
    }
    let vars = store.vars_with_prefix(&VQ_PREFIXES).into_iter().map(|(_, v)| v).collect();
    let mut trainer = Trainer::new(vars, &cfg.optim)?;
    let mut usage = vec![0usize; cfg.vq.codebook_size];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7e57);
    for step in 0..cfg.optim.steps {
        let x = sketch_batch(&samples, &batches.next())?;
        let s = codec.vq_step(&x)?;
        for t in s.tokens.flat() {
            usage[t as usize] += 1;
        }
        let terms = BTreeMap::from([
            ("recon".to_string(), scalar(&s.recon)?),
            ("codebook".to_string(), scalar(&s.codebook)?),
            ("commitment".to_string(), scalar(&s.commitment)?),
        ]);
        let stop = trainer.step(step, &s.loss, terms)?;
        if cfg.vq_restart_every > 0 && (step + 1) % cfg.vq_restart_every == 0 && step + 1 < cfg.optim.steps {
            let z = codec.tokenize(&x)?.detach();
            let moved = restart_dead_codes(&store, &usage, &z, &mut rng)?;
            log::debug!("step {step}: restarted {moved} codebook entries");
            usage.iter_mut().for_each(|u| *u = 0);
        }
        if stop {
            break;
        }
    }
    let mut metrics = BTreeMap::new();
    let val = load_split(cfg, Split::Val, cfg.data.val_samples.max(1))?;
    metrics.insert("val_recon_l1".into(), vq_recon_l1(&codec, &val)?);
    let steps = trainer.logs.len() as u64;
    let checkpoint = Checkpoint::from_store(&store, &VQ_PREFIXES, cfg.to_value()?, steps)?;
    finish(cfg, TrainOutcome { checkpoint, logs: trainer.logs, metrics })
}

/// Mean `|S - S'|` of the full encode-quantize-decode path.
pub fn vq_recon_l1(codec: &SketchCodec, samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in (0..samples.len()).collect::<Vec<_>>().chunks(16) {
        let x = sketch_batch(samples, chunk)?;
        let (_, s) = codec.reconstruct(&x)?;
        total += scalar(&(s - &x)?.abs()?.mean_all()?)? * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Fraction of grid cells where `q(E_C(C))` equals the teacher token `q(T_S(S))`.
pub fn contour_token_accuracy(codec: &SketchCodec, samples: &[Sample]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for chunk in (0..samples.len()).collect::<Vec<_>>().chunks(16) {
        let (teacher, _) = codec.teacher(&sketch_batch(samples, chunk)?)?;
        let (student, _) = codec.codebook.quantize(&codec.encode_contour(&contour_batch(samples, chunk)?)?)?;
        for (a, b) in teacher.flat().iter().zip(student.flat()) {
            hits += (*a == b) as usize;
            total += 1;
        }
    }
    Ok(hits as f64 / total.max(1) as f64)
}

/// Copies `vq.tokenizer.*` into `vq.contour_encoder.*`.
pub fn clone_teacher_into_contour_encoder(store: &ParamStore) -> Result<()> {
    for (name, var) in store.vars_with_prefix(&["vq.tokenizer."]) {
        let target = name.replacen("vq.tokenizer.", "vq.contour_encoder.", 1);
        store.insert(&target, &var.as_tensor().copy()?)?;
    }
    Ok(())
}

/// Trains the contour encoder against a frozen VQ teacher.
pub fn train_contour(cfg: &TrainConfig, teacher: &Checkpoint) -> Result<TrainOutcome> {
    train_contour_on(cfg, teacher, None)
}

/// As [`train_contour`], optionally with explicit training samples.
pub fn train_contour_on(cfg: &TrainConfig, teacher: &Checkpoint, samples: Option<Vec<Sample>>) -> Result<TrainOutcome> {
    if cfg.stage != Stage::Contour {
        return Err(Error::Config("train_contour needs stage \"contour\"".into()));
    }
    cfg.vq.validate()?;
    let store = ParamStore::new(DType::F32, cfg.seed);
    teacher.load_into(&store)?;
    let codec = SketchCodec::new(&store.root().pp("vq"), cfg.vq)?;
    if cfg.contour.init_from_teacher {
        clone_teacher_into_contour_encoder(&store)?;
    }
    let samples = match samples {
        Some(s) => s,
        None => load_split(cfg, Split::Train, cfg.data.train_samples)?,
    };
    let mut batches = Batches::new(samples.len(), cfg.optim.batch_size, cfg.seed);
    let vars = store.vars_with_prefix(&["vq.contour_encoder."]).into_iter().map(|(_, v)| v).collect();
    let mut trainer = Trainer::new(vars, &cfg.optim)?;
    for step in 0..cfg.optim.steps {
        let idx = batches.next();
        let s = codec.contour_step(&contour_batch(&samples, &idx)?, &sketch_batch(&samples, &idx)?)?;
        let loss = ((&s.cross_entropy * cfg.contour.ce_weight)? + (&s.distance * cfg.contour.distance_weight)?)?;
        let terms = BTreeMap::from([
            ("cross_entropy".to_string(), scalar(&s.cross_entropy)?),
            ("distance".to_string(), scalar(&s.distance)?),
            ("accuracy".to_string(), s.accuracy),
        ]);
        if trainer.step(step, &loss, terms)? {
            break;
        }
    }
    let mut metrics = BTreeMap::new();
    let val = load_split(cfg, Split::Val, cfg.data.val_samples.max(1))?;
    metrics.insert("val_token_accuracy".into(), contour_token_accuracy(&codec, &val)?);
    let steps = trainer.logs.len() as u64;
    let checkpoint = Checkpoint::from_store(&store, &["vq."], cfg.to_value()?, steps)?;
    finish(cfg, TrainOutcome { checkpoint, logs: trainer.logs, metrics })
}

/// Prepared supervision for one sample.
struct Prepared {
    sketch: Tensor,
    sketch_flipped: Tensor,
    gt: GroundTruthPair,
    camera: Camera,
    regions: Vec<crate::render::RegionSpec>,
}

fn prepare(samples: &[Sample], h: usize) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            let sketch = s.sketch.image().to_tensor(DType::F32, &Device::Cpu)?;
            Ok(Prepared {
                sketch_flipped: hflip_tensor(&sketch)?,
                sketch,
                gt: GroundTruthPair::new(s.image.clone(), h, &s.regions)?,
                camera: s.camera,
                regions: s.regions.clone(),
            })
        })
        .collect()
}

/// Trains the sketch encoder and (unless frozen) the generator.
pub fn train_sssp(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.stage != Stage::Sssp {
        return Err(Error::Config("train_sssp needs stage \"sssp\"".into()));
    }
    let store = ParamStore::new(DType::F32, cfg.seed);
    if let Some(path) = &cfg.init_checkpoint {
        Checkpoint::load(path)?.load_into(&store)?;
    }
    let model = SsspModel::with_store(cfg.model, store)?;
    let samples = load_split(cfg, Split::Train, cfg.data.train_samples)?;
    let h = cfg.model.render_resolution;
    let prepared = prepare(&samples, h)?;
    let px = match &cfg.perceptual {
        Some(p) => Some(PerceptualExtractor::new(3, p)?),
        None => None,
    };
    let prefixes: &[&str] = if cfg.frozen_generator { &["encoder."] } else { &["encoder.", "generator."] };
    let vars = model.store.vars_with_prefix(prefixes).into_iter().map(|(_, v)| v).collect();
    let mut trainer = Trainer::new(vars, &cfg.optim)?;
    let mut batches = Batches::new(prepared.len(), cfg.optim.batch_size, cfg.seed);
    let w = cfg.loss_weights;
    for step in 0..cfg.optim.steps {
        let batch: Vec<&Prepared> = batches.next().into_iter().map(|i| &prepared[i]).collect();
        let sketches = Tensor::cat(&batch.iter().map(|p| p.sketch.clone()).collect::<Vec<_>>(), 0)?;
        let cams: Vec<Camera> = batch.iter().map(|p| p.camera).collect();
        let gt = stack(batch.iter().map(|p| &p.gt.low).collect())?;
        let code = model.encode(&sketches)?;
        let planes = model.synthesize(&code)?;
        let features = model.render_features(&planes, &cams)?;
        let rgb = features.rgb()?;
        let (region_renders, region_gts) = if cfg.region_loss && w.region != 0.0 {
            let regions: Vec<_> = batch.iter().map(|p| p.regions.clone()).collect();
            let r = model.render_regions(&planes, &cams, &regions)?;
            let renders = losses::split_regions(&r.rgb()?, 4)?;
            let gts = (0..4)
                .map(|k| stack(batch.iter().map(|p| &p.gt.regions[k]).collect()))
                .collect::<Result<Vec<_>>>()?;
            (renders, gts)
        } else {
            (Vec::new(), Vec::new())
        };
        let flipped_planes = if w.symmetry != 0.0 {
            let flipped = Tensor::cat(&batch.iter().map(|p| p.sketch_flipped.clone()).collect::<Vec<_>>(), 0)?;
            Some(model.synthesize(&model.encode(&flipped)?)?)
        } else {
            None
        };
        let inputs = EncoderLossInputs {
            rgb: &rgb,
            gt: &gt,
            region_renders: &region_renders,
            region_gts: &region_gts,
            planes: &planes,
            planes_flipped: flipped_planes.as_ref(),
        };
        let weights = if region_renders.is_empty() { losses::LossWeights { region: 0.0, ..w } } else { w };
        let (mut loss, breakdown) = losses::total_encoder_loss(&inputs, &weights, px.as_ref())?;
        let mut terms = BTreeMap::from([
            ("recon".to_string(), breakdown.recon),
            ("region".to_string(), breakdown.region),
            ("symmetry".to_string(), breakdown.symmetry),
        ]);
        if cfg.loss_on_final {
            let full = stack(batch.iter().map(|p| &p.gt.full).collect())?;
            let final_loss = losses::recon_loss(&model.upsample(&features, &code)?, &full, px.as_ref())?;
            terms.insert("final".into(), scalar(&final_loss)?);
            loss = (loss + (final_loss * w.recon)?)?;
        }
        if trainer.step(step, &loss, terms)? {
            break;
        }
    }
    let steps = trainer.logs.len() as u64;
    let checkpoint = Checkpoint::from_store(&model.store, &["encoder.", "generator."], cfg.to_value()?, steps)?;
    finish(cfg, TrainOutcome { checkpoint, logs: trainer.logs, metrics: BTreeMap::new() })
}

/// Flip-consistency score: mean `|render(E(S̄), mirror(cam)) - hflip(render(E(S), cam))|`
/// over the samples, at the working resolution.
pub fn flip_consistency(model: &SsspModel, samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let x = s.sketch.image().to_tensor(DType::F32, &Device::Cpu)?;
        let a = model.render_features(&model.synthesize(&model.encode(&x)?)?, &[s.camera])?.rgb()?;
        let b = model
            .render_features(&model.synthesize(&model.encode(&hflip_tensor(&x)?)?)?, &[mirror_camera(&s.camera)])?
            .rgb()?;
        total += scalar(&(b - hflip_tensor(&a)?)?.abs()?.mean_all()?)?;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Dispatches on `cfg.stage`; the contour stage reads `cfg.vq_checkpoint`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    match cfg.stage {
        Stage::Vq => train_vq(cfg),
        Stage::Contour => {
            let path = cfg.vq_checkpoint.as_ref().ok_or_else(|| Error::Config("contour stage needs vq_checkpoint".into()))?;
            train_contour(cfg, &Checkpoint::load(path)?)
        }
        Stage::Sssp => train_sssp(cfg),
    }
}

fn finish(cfg: &TrainConfig, out: TrainOutcome) -> Result<TrainOutcome> {
    if let Some(path) = &cfg.output {
        out.checkpoint.save(path)?;
        log::info!("saved checkpoint to {}", path.display());
    }
    Ok(out)
}
