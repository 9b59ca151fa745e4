//! End-to-end alternating optimization of the coarse generator and booster
//! against the adversary, with checkpointing and deterministic
//! resumability. Default schedule: two generator updates then one
//! discriminator update per cycle, fresh batches for every update.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::booster::Booster;
use crate::checkpoint::Container;
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::facedata::{
    make_batch, mix_seed, Dataset, FaceSample, ImageTensor, OccludedQuadruple, OcclusionMode,
};
use crate::generator::{CoarseGenerator, GeneratorConfig, GeneratorGrads};
use crate::identity::{train_standin, IdentityConfig, IdentityNet};
use crate::losses::{
    adv_d_loss_grads, adv_g_loss_grads, identity_loss_grads, pixel_multiscale_loss_grads,
    symmetry_loss_grads, total_generator_loss, tv_loss_grads, GeneratedSet, LossBreakdown,
    LossWeights, SetGrads,
};
use crate::nn::Adam;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub generator_steps_per_cycle: usize,
    pub discriminator_steps_per_cycle: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub total_cycles: u64,
    /// Checkpoint every this many cycles (plus an initial and a final one).
    pub checkpoint_interval: u64,
    pub occlusion_mode: OcclusionMode,
    pub loss_weights: LossWeights,
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    /// Frozen extractor checkpoint; when absent a stand-in is trained from
    /// the manifest and saved next to the other outputs.
    pub extractor: Option<PathBuf>,
    pub standin_epochs: usize,
    pub generator_arch: GeneratorConfig,
    pub discriminator_arch: DiscriminatorConfig,
    pub extractor_arch: IdentityConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 1,
            generator_steps_per_cycle: 2,
            discriminator_steps_per_cycle: 1,
            lr_generator: 1e-4,
            lr_discriminator: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            total_cycles: 0,
            checkpoint_interval: 500,
            occlusion_mode: OcclusionMode::Keypoint,
            loss_weights: LossWeights::default(),
            manifest: PathBuf::new(),
            out_dir: PathBuf::new(),
            extractor: None,
            standin_epochs: 20,
            generator_arch: GeneratorConfig::canonical(),
            discriminator_arch: DiscriminatorConfig::canonical(),
            extractor_arch: IdentityConfig::canonical(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.generator_steps_per_cycle < 1 || self.discriminator_steps_per_cycle < 1 {
            return Err(Error::config(
                "generator_steps_per_cycle/discriminator_steps_per_cycle",
                "must be >= 1",
            ));
        }
        if !(self.lr_generator > 0.0) || !(self.lr_discriminator > 0.0) {
            return Err(Error::config("lr_generator/lr_discriminator", "must be > 0"));
        }
        if self.checkpoint_interval < 1 {
            return Err(Error::config("checkpoint_interval", "must be >= 1"));
        }
        for (name, v) in [
            ("loss_weights.adv", self.loss_weights.adv),
            ("loss_weights.pix", self.loss_weights.pix),
            ("loss_weights.sym", self.loss_weights.sym),
            ("loss_weights.ip", self.loss_weights.ip),
            ("loss_weights.tv", self.loss_weights.tv),
        ] {
            if !(v >= 0.0) {
                return Err(Error::config(name, "must be a nonnegative number"));
            }
        }
        self.generator_arch.validate()?;
        self.discriminator_arch.validate()?;
        self.extractor_arch.validate()?;
        if self.generator_arch.input_size != self.discriminator_arch.input_size
            || self.generator_arch.input_size != self.extractor_arch.input_size
        {
            return Err(Error::config(
                "generator_arch/discriminator_arch/extractor_arch",
                "all input sizes must agree",
            ));
        }
        Ok(())
    }

    /// Fields that must match between a checkpoint and the resuming config
    /// for bit-compatible continuation.
    fn schedule_echo(&self) -> serde_json::Value {
        serde_json::json!({
            "seed": self.seed,
            "batch_size": self.batch_size,
            "generator_steps_per_cycle": self.generator_steps_per_cycle,
            "discriminator_steps_per_cycle": self.discriminator_steps_per_cycle,
            "lr_generator": self.lr_generator,
            "lr_discriminator": self.lr_discriminator,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "occlusion_mode": self.occlusion_mode,
            "loss_weights": self.loss_weights,
        })
    }
}

/// Losses logged for one optimizer step.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub kind: &'static str,
    pub adv: f64,
    pub pix: f64,
    pub sym: f64,
    pub ip: f64,
    pub tv: f64,
    pub total: f64,
}

pub struct CycleReport {
    pub generator: Vec<LossBreakdown>,
    pub discriminator: Vec<f64>,
}

pub struct Trainer<F: Scalar> {
    pub cfg: TrainConfig,
    pub dataset: Dataset<F>,
    pub generator: CoarseGenerator<F>,
    pub booster: Booster<F>,
    pub discriminator: Discriminator<F>,
    pub extractor: IdentityNet<F>,
    opt_g: Adam<F>,
    opt_d: Adam<F>,
    pub cycle: u64,
    pub step: u64,
    batch_counter: u64,
    cursor_epoch: u64,
    cursor_pos: usize,
    records: Vec<StepRecord>,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(cfg: TrainConfig, dataset: Dataset<F>, extractor: IdentityNet<F>) -> Result<Self> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(Error::config("manifest", "dataset is empty"));
        }
        if !extractor.is_frozen() {
            return Err(Error::Invalid {
                what: "identity extractor".into(),
                detail: "trainer requires a frozen extractor".into(),
            });
        }
        let generator = CoarseGenerator::new(cfg.generator_arch.clone(), mix_seed(cfg.seed, 0x6e))?;
        let booster = Booster::new(mix_seed(cfg.seed, 0xb0));
        let discriminator =
            Discriminator::new(cfg.discriminator_arch.clone(), mix_seed(cfg.seed, 0xd1))?;
        let opt_g = Adam::new(cfg.lr_generator, cfg.adam_beta1, cfg.adam_beta2);
        let opt_d = Adam::new(cfg.lr_discriminator, cfg.adam_beta1, cfg.adam_beta2);
        Ok(Self {
            cfg,
            dataset,
            generator,
            booster,
            discriminator,
            extractor,
            opt_g,
            opt_d,
            cycle: 0,
            step: 0,
            batch_counter: 0,
            cursor_epoch: 0,
            cursor_pos: 0,
            records: Vec::new(),
        })
    }

    /// Deterministic shuffled order for one epoch.
    fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        use rand::RngCore;
        use rand::SeedableRng;
        let mut order: Vec<usize> = (0..self.dataset.len()).collect();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(mix_seed(self.cfg.seed, 0xE9 ^ epoch));
        for i in (1..order.len()).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }
        order
    }

    /// The next batch in the seed-determined order; batches may span epochs.
    fn next_batch(&mut self) -> Result<Vec<(OccludedQuadruple<F>, FaceSample<F>)>> {
        let mut indices = Vec::with_capacity(self.cfg.batch_size);
        while indices.len() < self.cfg.batch_size {
            let order = self.epoch_order(self.cursor_epoch);
            while self.cursor_pos < order.len() && indices.len() < self.cfg.batch_size {
                indices.push(order[self.cursor_pos]);
                self.cursor_pos += 1;
            }
            if self.cursor_pos >= order.len() {
                self.cursor_epoch += 1;
                self.cursor_pos = 0;
            }
        }
        let seed = mix_seed(self.cfg.seed, 0x0CC ^ self.batch_counter);
        self.batch_counter += 1;
        make_batch(&self.dataset, &indices, self.cfg.occlusion_mode, seed)
    }

    fn forward_sample(
        &self,
        quad: &OccludedQuadruple<F>,
    ) -> Result<(
        GeneratedSet<F>,
        [crate::generator::GeneratorTrace<F>; 4],
        crate::booster::BoosterTrace<F>,
    )> {
        let results: Vec<_> = quad
            .images
            .par_iter()
            .map(|img| self.generator.forward_trace(img))
            .collect();
        let mut outs = Vec::with_capacity(4);
        let mut traces = Vec::with_capacity(4);
        for r in results {
            let (o, t) = r?;
            outs.push(o);
            traces.push(t);
        }
        let coarse: [crate::generator::MultiScaleOutput<F>; 4] =
            outs.try_into().map_err(|_| ()).expect("four outputs");
        let (boosted, btrace) = self.booster.forward_trace([
            &coarse[0].full,
            &coarse[1].full,
            &coarse[2].full,
            &coarse[3].full,
        ])?;
        let set = GeneratedSet { coarse, boosted };
        let traces: [crate::generator::GeneratorTrace<F>; 4] =
            traces.try_into().map_err(|_| ()).expect("four traces");
        Ok((set, traces, btrace))
    }

    /// One generator update on a fresh batch: minimizes the weighted total
    /// objective, gradients flowing end-to-end through the booster and all
    /// four shared-weight coarse branches.
    pub fn generator_step(&mut self) -> Result<LossBreakdown> {
        let batch = self.next_batch()?;
        let n = batch.len();
        let inv_n = F::cast(1.0 / n as f64);
        let w = self.cfg.loss_weights;

        let mut g_grads = self.generator.grads();
        let mut b_grads = self.booster.grads();
        let (mut adv_s, mut pix_s, mut sym_s, mut ip_s, mut tv_s) = (0.0, 0.0, 0.0, 0.0, 0.0);

        for (quad, sample) in &batch {
            let (set, traces, btrace) = self.forward_sample(quad)?;

            let (adv, adv_g) = adv_g_loss_grads(&self.discriminator, &set)?;
            let (pix, pix_g) = pixel_multiscale_loss_grads(&set, &sample.frontal_gt)?;
            let (sym, sym_g) = symmetry_loss_grads(&set)?;
            let (ip, ip_g) = identity_loss_grads(&self.extractor, &set, &sample.frontal_gt)?;
            let (tv, tv_g) = tv_loss_grads(&set);

            // Validate finiteness before touching any parameter.
            total_generator_loss(
                &w,
                adv.to_f64x(),
                pix.to_f64x(),
                sym.to_f64x(),
                ip.to_f64x(),
                tv.to_f64x(),
            )?;
            adv_s += adv.to_f64x();
            pix_s += pix.to_f64x();
            sym_s += sym.to_f64x();
            ip_s += ip.to_f64x();
            tv_s += tv.to_f64x();

            // Weighted image-space gradient, averaged over the batch.
            let mut d_set = SetGrads::zeros_like(&set);
            d_set.add_scaled(&adv_g, F::cast(w.adv) * inv_n);
            d_set.add_scaled(&pix_g, F::cast(w.pix) * inv_n);
            d_set.add_scaled(&sym_g, F::cast(w.sym) * inv_n);
            d_set.add_scaled(&ip_g, F::cast(w.ip) * inv_n);
            d_set.add_scaled(&tv_g, F::cast(w.tv) * inv_n);

            // Through the booster: adds the fusion path to each coarse full
            // output's gradient.
            let d_boost_inputs = self.booster.backward(&btrace, &d_set.boosted, &mut b_grads);
            for (i, d) in d_boost_inputs.into_iter().enumerate() {
                d_set.coarse_full[i].zip_mut_with(&d, |a, &b| *a = *a + b);
            }

            // Through the four shared-weight branches, in parallel with
            // private buffers, reduced in branch order.
            let branch_grads: Vec<GeneratorGrads<F>> = (0..4usize)
                .into_par_iter()
                .map(|i| {
                    let mut local = self.generator.grads();
                    self.generator.backward(
                        &traces[i],
                        &d_set.coarse_full[i],
                        &d_set.coarse_half[i],
                        &d_set.coarse_quarter[i],
                        &mut local,
                    );
                    local
                })
                .collect();
            for bg in &branch_grads {
                g_grads.add(bg);
            }
        }

        let inv = 1.0 / n as f64;
        let breakdown = total_generator_loss(
            &w,
            adv_s * inv,
            pix_s * inv,
            sym_s * inv,
            ip_s * inv,
            tv_s * inv,
        )?;

        // Joint update over generator and booster parameters.
        let mut params = self.generator.flat_mut();
        params.extend(self.booster.flat_mut());
        let mut grads = g_grads.flat();
        grads.extend(b_grads.flat());
        self.opt_g.step(&mut params, &grads);

        self.step += 1;
        self.records.push(StepRecord {
            step: self.step,
            kind: "g",
            adv: breakdown.adv,
            pix: breakdown.pix,
            sym: breakdown.sym,
            ip: breakdown.ip,
            tv: breakdown.tv,
            total: breakdown.total,
        });
        Ok(breakdown)
    }

    /// One discriminator update on a fresh batch (generated images are
    /// produced in inference mode; no generator gradients).
    pub fn discriminator_step(&mut self) -> Result<f64> {
        let batch = self.next_batch()?;
        let mut reals: Vec<ImageTensor<F>> = Vec::with_capacity(batch.len());
        let mut sets: Vec<GeneratedSet<F>> = Vec::with_capacity(batch.len());
        for (quad, sample) in &batch {
            let coarse = self.generator.forward_quadruple(quad)?;
            let boosted = self.booster.forward([
                &coarse[0].full,
                &coarse[1].full,
                &coarse[2].full,
                &coarse[3].full,
            ])?;
            sets.push(GeneratedSet { coarse, boosted });
            reals.push(sample.frontal_gt.clone());
        }
        let mut d_grads = self.discriminator.grads();
        let loss = adv_d_loss_grads(&self.discriminator, &reals, &sets, &mut d_grads)?;
        let loss_f = loss.to_f64x();
        if !loss_f.is_finite() {
            return Err(Error::NonFinite {
                component: "adv_d".into(),
            });
        }
        self.opt_d.step(&mut self.discriminator.flat_mut(), &d_grads.flat());

        self.step += 1;
        self.records.push(StepRecord {
            step: self.step,
            kind: "d",
            adv: loss_f,
            pix: 0.0,
            sym: 0.0,
            ip: 0.0,
            tv: 0.0,
            total: loss_f,
        });
        Ok(loss_f)
    }

    /// One full cycle: the configured number of generator updates, then
    /// discriminator updates, each on fresh batches.
    pub fn train_cycle(&mut self) -> Result<CycleReport> {
        let mut generator = Vec::with_capacity(self.cfg.generator_steps_per_cycle);
        for _ in 0..self.cfg.generator_steps_per_cycle {
            generator.push(self.generator_step()?);
        }
        let mut discriminator = Vec::with_capacity(self.cfg.discriminator_steps_per_cycle);
        for _ in 0..self.cfg.discriminator_steps_per_cycle {
            discriminator.push(self.discriminator_step()?);
        }
        self.cycle += 1;
        Ok(CycleReport {
            generator,
            discriminator,
        })
    }

    /// Step records accumulated since the last drain.
    pub fn drain_records(&mut self) -> Vec<StepRecord> {
        std::mem::take(&mut self.records)
    }

    pub fn save_state(&self, path: &Path) -> Result<()> {
        let mut container = Container::<F>::new(serde_json::json!({
            "arch": {},
            "step": self.step,
            "cycle": self.cycle,
            "batch_counter": self.batch_counter,
            "cursor": { "epoch": self.cursor_epoch, "pos": self.cursor_pos },
            "opt": { "g_t": self.opt_g.t, "d_t": self.opt_d.t },
            "schedule": self.cfg.schedule_echo(),
        }));
        self.generator.save_into("generator", &mut container);
        self.booster.save_into("booster", &mut container);
        self.discriminator.save_into("discriminator", &mut container);
        self.extractor.save_into("extractor", &mut container);
        let push_moments = |container: &mut Container<F>, tag: &str, m: &[Vec<F>], v: &[Vec<F>]| {
            for (i, (mi, vi)) in m.iter().zip(v).enumerate() {
                container.push(format!("{tag}/m/{i:04}"), vec![mi.len()], mi.clone());
                container.push(format!("{tag}/v/{i:04}"), vec![vi.len()], vi.clone());
            }
        };
        let (_, gm, gv) = self.opt_g.state();
        push_moments(&mut container, "opt_g", gm, gv);
        let (_, dm, dv) = self.opt_d.state();
        push_moments(&mut container, "opt_d", dm, dv);
        container.save(path)
    }

    /// Rebuilds a trainer from a saved state; continues bit-compatibly.
    pub fn load_state(cfg: TrainConfig, dataset: Dataset<F>, path: &Path) -> Result<Self> {
        let container = Container::<F>::load(path)?;
        let schedule = cfg.schedule_echo();
        if container.meta["schedule"] != schedule {
            return Err(Error::checkpoint(
                path,
                "training schedule in checkpoint does not match the resuming config",
            ));
        }
        let extractor = IdentityNet::load_from("extractor", &container)?;
        let mut trainer = Trainer::new(cfg, dataset, extractor)?;
        trainer.generator.load_from("generator", &container)?;
        trainer.booster.load_from("booster", &container)?;
        trainer.discriminator.load_from("discriminator", &container)?;

        let meta = &container.meta;
        trainer.step = meta["step"].as_u64().unwrap_or(0);
        trainer.cycle = meta["cycle"].as_u64().unwrap_or(0);
        trainer.batch_counter = meta["batch_counter"].as_u64().unwrap_or(0);
        trainer.cursor_epoch = meta["cursor"]["epoch"].as_u64().unwrap_or(0);
        trainer.cursor_pos = meta["cursor"]["pos"].as_u64().unwrap_or(0) as usize;

        let load_moments = |tag: &str, count: usize| -> Result<(Vec<Vec<F>>, Vec<Vec<F>>)> {
            let mut m = Vec::with_capacity(count);
            let mut v = Vec::with_capacity(count);
            for i in 0..count {
                let (_, data) = container
                    .get(&format!("{tag}/m/{i:04}"))
                    .ok_or_else(|| Error::checkpoint(path, format!("missing {tag} moment {i}")))?;
                m.push(data.to_vec());
                let (_, data) = container
                    .get(&format!("{tag}/v/{i:04}"))
                    .ok_or_else(|| Error::checkpoint(path, format!("missing {tag} moment {i}")))?;
                v.push(data.to_vec());
            }
            Ok((m, v))
        };
        let g_param_count = trainer.generator.flat_mut().len() + trainer.booster.flat_mut().len();
        let d_param_count = trainer.discriminator.flat_mut().len();
        let (gm, gv) = load_moments("opt_g", g_param_count)?;
        trainer
            .opt_g
            .restore(meta["opt"]["g_t"].as_u64().unwrap_or(0), gm, gv);
        let (dm, dv) = load_moments("opt_d", d_param_count)?;
        trainer
            .opt_d
            .restore(meta["opt"]["d_t"].as_u64().unwrap_or(0), dm, dv);
        Ok(trainer)
    }
}

/// Result paths of a full training run.
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub extractor: PathBuf,
}

/// Full training entry point: loads the manifest, obtains a frozen
/// extractor (loading or pretraining a stand-in), then runs the configured
/// number of cycles with periodic checkpoints and a JSON-lines metrics log.
pub fn train<F: Scalar>(cfg: TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let manifest = crate::facedata::load_manifest(&cfg.manifest)?;
    let dataset = Dataset::<F>::load(manifest)?;

    let extractor_path = match &cfg.extractor {
        Some(p) => p.clone(),
        None => {
            let net = train_standin(
                &dataset,
                cfg.extractor_arch.clone(),
                cfg.standin_epochs,
                mix_seed(cfg.seed, 0x1DE),
            )?;
            let p = cfg.out_dir.join("extractor.bgnc");
            let mut c = Container::<F>::new(serde_json::json!({"arch": {}}));
            net.save_into("extractor", &mut c);
            c.save(&p)?;
            p
        }
    };
    let extractor = IdentityNet::<F>::load_from("extractor", &Container::load(&extractor_path)?)?;

    let mut trainer = Trainer::new(cfg.clone(), dataset, extractor)?;
    let metrics_path = cfg.out_dir.join("metrics.jsonl");
    let mut metrics = std::fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;

    let initial = cfg.out_dir.join("state_initial.bgnc");
    trainer.save_state(&initial)?;
    if cfg.total_cycles == 0 {
        return Ok(TrainOutcome {
            final_checkpoint: initial,
            metrics: metrics_path,
            extractor: extractor_path,
        });
    }

    for cycle in 1..=cfg.total_cycles {
        trainer.train_cycle()?;
        for record in trainer.drain_records() {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(metrics, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        }
        if cycle % cfg.checkpoint_interval == 0 && cycle != cfg.total_cycles {
            trainer.save_state(&cfg.out_dir.join(format!("state_{cycle:06}.bgnc")))?;
        }
    }
    let final_path = cfg.out_dir.join("state_final.bgnc");
    trainer.save_state(&final_path)?;
    Ok(TrainOutcome {
        final_checkpoint: final_path,
        metrics: metrics_path,
        extractor: extractor_path,
    })
}

/// Mean multi-scale pixel loss of the current model over a whole dataset,
/// with deterministic occlusions. Used as the convergence measurement.
pub fn dataset_pixel_loss<F: Scalar>(
    generator: &CoarseGenerator<F>,
    booster: &Booster<F>,
    dataset: &Dataset<F>,
    mode: OcclusionMode,
    seed: u64,
) -> Result<f64> {
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let batch = make_batch(dataset, &indices, mode, seed)?;
    let mut total = 0.0;
    for (quad, sample) in &batch {
        let coarse = generator.forward_quadruple(quad)?;
        let boosted = booster.forward([
            &coarse[0].full,
            &coarse[1].full,
            &coarse[2].full,
            &coarse[3].full,
        ])?;
        let set = GeneratedSet { coarse, boosted };
        total += crate::losses::pixel_multiscale_loss(&set, &sample.frontal_gt)?.to_f64x();
    }
    Ok(total / batch.len() as f64)
}
