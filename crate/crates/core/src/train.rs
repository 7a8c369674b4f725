//! Minibatch maximum-likelihood training with early stopping.
//!
//! The optimizers minimize the mean negative log-likelihood. Gradients are
//! produced by [`grad::batch_gradient`] in the configured flavor; Adam is
//! applied entrywise to whatever that flavor returns, so for relative flavors
//! the moments track the already-transformed gradient.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grad::{self, GradientFlavor, LayerGradient};
use crate::linalg::{Rng, Vector};
use crate::model::{self, BaseDistribution, Network};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Sgd { lr } | Optimizer::Adam { lr, .. } => lr,
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam(1e-3)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Validation is evaluated every `eval_every` epochs and after the last.
    pub eval_every: usize,
    /// Consecutive non-improving evaluations tolerated before stopping.
    pub patience: usize,
    pub gradient_flavor: GradientFlavor,
    pub seed: u64,
    pub base_distribution: BaseDistribution,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::default(),
            batch_size: 100,
            max_epochs: 2000,
            eval_every: 25,
            patience: 5,
            gradient_flavor: GradientFlavor::RelativeRight,
            seed: 0,
            base_distribution: BaseDistribution::StandardNormal,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is accepted (it freezes the parameters).
    pub fn validate(&self) -> Result<()> {
        let lr = self.optimizer.lr();
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be >= 0, got {lr}"
            )));
        }
        if let Optimizer::Adam {
            beta1, beta2, eps, ..
        } = self.optimizer
        {
            let ok = (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0;
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "bad Adam parameters beta1={beta1} beta2={beta2} eps={eps}"
                )));
            }
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, eval_every and max_epochs must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub epoch: usize,
    pub nll: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Mean training NLL at the end of each epoch.
    pub train_nll: Vec<f64>,
    pub validation: Vec<Evaluation>,
    pub best: Network,
    pub best_epoch: usize,
    pub best_validation_nll: f64,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
}

#[derive(Serialize)]
struct ReportSummary<'a> {
    epochs_run: usize,
    stop_reason: StopReason,
    best_epoch: usize,
    best_validation_nll: f64,
    final_train_nll: Option<f64>,
    validation: &'a [Evaluation],
    dim: usize,
    depth: usize,
    parameters: usize,
}

impl TrainReport {
    /// One `epoch,split,nll` row per training epoch and per evaluation.
    pub fn write_metrics(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "epoch,split,nll")?;
        let mut evals = self.validation.iter().peekable();
        for (i, nll) in self.train_nll.iter().enumerate() {
            let epoch = i + 1;
            writeln!(w, "{epoch},train,{nll}")?;
            while let Some(e) = evals.next_if(|e| e.epoch == epoch) {
                writeln!(w, "{},validation,{}", e.epoch, e.nll)?;
            }
        }
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ReportSummary {
            epochs_run: self.epochs_run,
            stop_reason: self.stop_reason,
            best_epoch: self.best_epoch,
            best_validation_nll: self.best_validation_nll,
            final_train_nll: self.train_nll.last().copied(),
            validation: &self.validation,
            dim: self.best.dim(),
            depth: self.best.depth(),
            parameters: self.best.param_count(),
        })?)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let metrics = dir.join("metrics.csv");
        let f = std::fs::File::create(&metrics).map_err(|e| Error::io(&metrics, e))?;
        self.write_metrics(std::io::BufWriter::new(f))?;
        let report = dir.join("report.json");
        std::fs::write(&report, self.summary_json()?).map_err(|e| Error::io(&report, e))?;
        model::io::save(&self.best, dir.join("model.bin"))
    }
}

/// Mean negative log-likelihood over `xs`, evaluating each `slogdet` once.
pub fn evaluate(net: &Network, bd: BaseDistribution, xs: &[Vector]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate on an empty split".into(),
        ));
    }
    let cache = net.log_det_cache();
    if let Some(layer) = cache.singular_layer() {
        return Err(Error::SingularLayer { layer });
    }
    let mut sum = 0.0;
    for x in xs {
        sum -= model::log_likelihood_cached(net, bd, x, &cache)?.total;
    }
    Ok(sum / xs.len() as f64)
}

/// First and second moment estimates for every parameter block.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    m: Vec<(Vec<f64>, Vec<f64>)>,
    v: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        let d = net.dim();
        let zeros = || {
            (0..net.depth())
                .map(|_| (vec![0.0; d * d], vec![0.0; d]))
                .collect()
        };
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One Adam update on a flat parameter block, descending along `-ascent`.
/// `bc1`, `bc2` are the bias-correction denominators `1 − βᵗ`.
#[allow(clippy::too_many_arguments)]
fn adam_block(
    params: &mut [f64],
    ascent: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    (beta1, beta2): (f64, f64),
    eps: f64,
    (bc1, bc2): (f64, f64),
) {
    for i in 0..params.len() {
        let g = -ascent[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Bias-corrected Adam step. `grads` are log-likelihood (ascent) gradients.
pub fn adam_step(
    state: &mut AdamState,
    net: &mut Network,
    grads: &[LayerGradient],
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc = (1.0 - betas.0.powi(t), 1.0 - betas.1.powi(t));
    let use_bias = net.use_bias();
    for (k, (layer, g)) in net.layers_mut().iter_mut().zip(grads).enumerate() {
        let (mw, mb) = &mut state.m[k];
        let (vw, vb) = &mut state.v[k];
        adam_block(
            layer.weight.as_mut_slice(),
            g.d_weight.as_slice(),
            mw,
            vw,
            lr,
            betas,
            eps,
            bc,
        );
        if use_bias {
            adam_block(&mut layer.bias, &g.d_bias, mb, vb, lr, betas, eps, bc);
        }
    }
}

pub fn sgd_step(net: &mut Network, grads: &[LayerGradient], lr: f64) {
    let use_bias = net.use_bias();
    for (layer, g) in net.layers_mut().iter_mut().zip(grads) {
        layer.weight.axpy(lr, &g.d_weight);
        if use_bias {
            layer.bias.axpy(lr, &g.d_bias);
        }
    }
}

fn aborted(reason: String, last_good: &Network) -> Error {
    Error::TrainingAborted {
        reason,
        last_good: Box::new(last_good.clone()),
    }
}

/// Train `net` on `data.train`, early-stopping on `data.validation`, and
/// return the best snapshot by validation NLL.
pub fn train(mut net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.dim != net.dim() {
        return Err(Error::DimensionMismatch {
            expected: net.dim(),
            actual: data.dim,
        });
    }
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs non-empty train and validation splits".into(),
        ));
    }
    let bd = cfg.base_distribution;
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut adam = AdamState::new(&net);
    let mut batch: Vec<&Vector> = Vec::with_capacity(cfg.batch_size);

    let mut train_nll = Vec::with_capacity(cfg.max_epochs);
    let mut validation = Vec::new();
    let mut best = net.clone();
    let mut best_nll = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut last_good = net.clone();

    for epoch in 1..=cfg.max_epochs {
        if cfg.shuffle {
            rng.shuffle(&mut order);
        }
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &data.train[i]));
            let g = grad::batch_gradient(&net, bd, &batch, cfg.gradient_flavor)?;
            if !g.layers.iter().all(LayerGradient::is_finite) {
                return Err(aborted(
                    format!("non-finite gradient in epoch {epoch}"),
                    &last_good,
                ));
            }
            match cfg.optimizer {
                Optimizer::Sgd { lr } => sgd_step(&mut net, &g.layers, lr),
                Optimizer::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => adam_step(&mut adam, &mut net, &g.layers, lr, (beta1, beta2), eps),
            }
        }

        let nll = match evaluate(&net, bd, &data.train) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => {
                return Err(aborted(
                    format!("training NLL {v} in epoch {epoch}"),
                    &last_good,
                ))
            }
            Err(Error::SingularLayer { layer }) => {
                return Err(aborted(
                    format!("weight matrix {layer} became singular in epoch {epoch}"),
                    &last_good,
                ))
            }
            Err(e) => return Err(e),
        };
        train_nll.push(nll);
        last_good = net.clone();

        if epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs {
            let v = evaluate(&net, bd, &data.validation)?;
            validation.push(Evaluation { epoch, nll: v });
            if v < best_nll {
                best_nll = v;
                best = net.clone();
                best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    stop_reason = StopReason::Patience;
                    break;
                }
            }
        }
    }

    Ok(TrainReport {
        epochs_run: train_nll.len(),
        train_nll,
        validation,
        best,
        best_epoch,
        best_validation_nll: best_nll,
        stop_reason,
    })
}
