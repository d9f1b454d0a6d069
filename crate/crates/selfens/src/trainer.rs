//! The training loop: one Adam step per joint-loss evaluation, per-epoch
//! evaluation on the held-out test split, CSV logging, and best/final
//! checkpointing into a run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use selfens_core::adam::{AdamConfig, AdamState};
use selfens_core::loss::joint_loss;
use selfens_core::metrics::MetricsReport;
use selfens_core::network::{canonical_spec, compact_spec, Network, ParamBinding, ParamId};
use selfens_core::tape::Tape;
use selfens_core::tensor::Tensor;

use crate::batches::{EpochSchedule, ImageStore};
use crate::config::{Arch, StepMode, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluate::evaluate;
use crate::manifest::{Manifest, SplitPlan};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub sup_loss: f32,
    pub cons_loss: f32,
    pub eval_acc: f64,
}

pub struct FitOutcome {
    pub net: Network<f32>,
    pub best: Network<f32>,
    pub best_epoch: usize,
    pub best_report: MetricsReport,
    pub log: Vec<EpochRow>,
}

pub fn epochs_csv(log: &[EpochRow]) -> String {
    let mut out = String::from("epoch,sup_loss,cons_loss,eval_acc\n");
    for r in log {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.sup_loss, r.cons_loss, r.eval_acc);
    }
    out
}

struct Run<'a> {
    cfg: &'a TrainConfig,
    adam_cfg: AdamConfig<f32>,
    ids: Vec<ParamId>,
}

impl Run<'_> {
    /// Backward, gather gradients scaled by `scale`, apply one Adam step.
    fn apply_step(
        &self,
        net: &mut Network<f32>,
        adam: &mut AdamState<f32>,
        tape: &mut Tape<f32>,
        loss: selfens_core::tape::Var,
        binding: &ParamBinding,
        scale: f32,
    ) -> Result<()> {
        tape.backward(loss)?;
        let grads: Vec<Tensor<f32>> = self
            .ids
            .iter()
            .map(|&id| {
                let v = binding.var(id).expect("param bound during forward");
                let g = tape.grad(v).expect("grad after backward");
                if scale == 1.0 {
                    g.clone()
                } else {
                    g.map(|x| x * scale)
                }
            })
            .collect();
        let mut params: Vec<Tensor<f32>> =
            self.ids.iter().map(|&id| net.param(id).clone()).collect();
        {
            let mut prefs: Vec<&mut Tensor<f32>> = params.iter_mut().collect();
            let grefs: Vec<&Tensor<f32>> = grads.iter().collect();
            adam.step(&mut prefs, &grefs, &self.adam_cfg)?;
        }
        for (&id, p) in self.ids.iter().zip(params) {
            *net.param_mut(id) = p;
        }
        Ok(())
    }
}

/// Train per the config on the given split. When `out_dir` is set the run
/// directory receives config.snapshot, epochs.csv, best.ckpt, final.ckpt,
/// and report.csv; final.ckpt is refreshed after every epoch so an
/// aborted run keeps its last completed state.
pub fn fit(
    manifest: &Manifest,
    plan: &SplitPlan,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if plan.labeled.is_empty() {
        return Err(Error::Data("fit: split has no labeled records".into()));
    }
    if plan.test.is_empty() {
        return Err(Error::Data("fit: split has no test records".into()));
    }
    let num_classes = manifest.classes.len();
    if num_classes < 2 {
        return Err(Error::Data(format!("fit: need at least 2 classes, got {num_classes}")));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        fs::write(dir.join("config.snapshot"), cfg.snapshot())
            .map_err(Error::io(dir.join("config.snapshot")))?;
    }

    let spec = match cfg.arch {
        Arch::Canonical => canonical_spec(num_classes),
        Arch::Compact => compact_spec(num_classes),
    };
    let mut net = Network::<f32>::from_spec(spec, cfg.seed);
    let aug = cfg.augment_spec();
    let all: Vec<usize> = plan
        .labeled
        .iter()
        .chain(&plan.unlabeled)
        .chain(&plan.test)
        .copied()
        .collect();
    let store = ImageStore::load(manifest, &all, &aug)?;

    let run = Run {
        cfg,
        adam_cfg: AdamConfig {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        },
        ids: net.param_ids(),
    };
    let param_refs: Vec<&Tensor<f32>> = run.ids.iter().map(|&id| net.param(id)).collect();
    let mut adam = AdamState::new(&param_refs);
    drop(param_refs);

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Network<f32>, MetricsReport)> = None;

    for epoch in 0..cfg.epochs {
        let alpha = cfg.alpha_at(epoch);
        let sched =
            EpochSchedule::new(&plan.labeled, &plan.unlabeled, cfg.batch_size, cfg.seed, epoch as u64)?;
        let mut sup_sum = 0.0f32;
        let mut cons_sum = 0.0f32;
        for step in 0..sched.steps {
            let batch = sched.step_batch(&store, &aug, step)?;
            let views = if alpha > 0.0 { batch.unlabeled_views } else { None };
            match (run.cfg.step_mode, views) {
                (StepMode::Alternating, Some((v1, v2))) => {
                    // supervised step, then a separate consistency step
                    let mut tape = Tape::new();
                    let mut binding = ParamBinding::new();
                    let (loss, parts) = joint_loss(
                        &mut net,
                        &mut tape,
                        batch.labeled_images,
                        batch.targets,
                        None,
                        0.0,
                        cfg.consistency_target,
                        &mut binding,
                    )?;
                    check_finite(parts.total)?;
                    run.apply_step(&mut net, &mut adam, &mut tape, loss, &binding, 1.0)?;
                    sup_sum += parts.supervised;

                    let mut tape = Tape::new();
                    let mut binding = ParamBinding::new();
                    let z1 = net.forward_train(&mut tape, v1, &mut binding)?;
                    let z2 = net.forward_train(&mut tape, v2, &mut binding)?;
                    let (p1, p2) = match cfg.consistency_target {
                        selfens_core::loss::ConsistencyTarget::Probabilities => {
                            (tape.softmax(z1)?, tape.softmax(z2)?)
                        }
                        selfens_core::loss::ConsistencyTarget::Logits => (z1, z2),
                    };
                    let mse = tape.mse_loss(p1, p2)?;
                    let cons = tape.value(mse).item()?;
                    check_finite(cons)?;
                    run.apply_step(&mut net, &mut adam, &mut tape, mse, &binding, alpha)?;
                    cons_sum += cons;
                }
                (_, views) => {
                    let mut tape = Tape::new();
                    let mut binding = ParamBinding::new();
                    let (loss, parts) = joint_loss(
                        &mut net,
                        &mut tape,
                        batch.labeled_images,
                        batch.targets,
                        views,
                        alpha,
                        cfg.consistency_target,
                        &mut binding,
                    )?;
                    check_finite(parts.total)?;
                    run.apply_step(&mut net, &mut adam, &mut tape, loss, &binding, 1.0)?;
                    sup_sum += parts.supervised;
                    cons_sum += parts.consistency;
                }
            }
        }
        let report =
            evaluate(&net, &store, &plan.test, cfg.crop_size, &manifest.classes, false)?;
        let row = EpochRow {
            epoch,
            sup_loss: sup_sum / sched.steps as f32,
            cons_loss: cons_sum / sched.steps as f32,
            eval_acc: report.accuracy,
        };
        let improved = best.as_ref().map(|(_, acc, _, _)| report.accuracy > *acc).unwrap_or(true);
        if improved {
            best = Some((epoch, report.accuracy, net.cast::<f32>(), report.clone()));
        }
        log.push(row);
        if let Some(dir) = out_dir {
            fs::write(dir.join("epochs.csv"), epochs_csv(&log))
                .map_err(Error::io(dir.join("epochs.csv")))?;
            crate::checkpoint::save(&dir.join("final.ckpt"), &net)?;
            if improved {
                crate::checkpoint::save(&dir.join("best.ckpt"), &net)?;
            }
        }
    }
    let (best_epoch, _, best_net, best_report) = best.expect("epochs >= 1");
    if let Some(dir) = out_dir {
        let csv = crate::report::run_report_csv(
            &best_report,
            plan.labeled.len(),
            plan.unlabeled.len(),
            cfg.alpha,
        );
        fs::write(dir.join("report.csv"), csv).map_err(Error::io(dir.join("report.csv")))?;
    }
    Ok(FitOutcome { net, best: best_net, best_epoch, best_report, log })
}

fn check_finite(v: f32) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(
            "training loss is not finite; run aborted, last completed checkpoint retained".into(),
        ))
    }
}
