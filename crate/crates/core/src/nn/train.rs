use super::{Batch, Gradients, Network, NnError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let g = grads.layers.iter().flatten().flatten();
        let p = net.params_mut().into_iter().flat_map(|s| s.iter_mut());
        for (((p, g), m), v) in p.zip(g).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr0: f64,
    /// Learning rate multiplier applied every `decay_every` epochs.
    pub decay_mult: f64,
    pub decay_every: usize,
    pub patience: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            max_epochs: 1000,
            lr0: 1e-3,
            decay_mult: (-0.1f64).exp(),
            decay_every: 10,
            patience: 25,
            checkpoint_every: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay_mult.powi((epoch / self.decay_every) as i32)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if !(self.decay_mult > 0.0 && self.decay_mult <= 1.0) {
            return bad("decay_mult must be in (0, 1]");
        }
        if self.decay_every == 0 || self.checkpoint_every == 0 || self.patience == 0 {
            return bad("decay_every, checkpoint_every and patience must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpochStop {
    MaxEpochs,
    Patience,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub lr: Vec<f64>,
    /// Epoch (0-based) whose checkpoint was restored.
    pub best_epoch: usize,
    pub stop: EpochStop,
}

impl History {
    pub fn stopped_early(&self) -> bool {
        self.stop == EpochStop::Patience
    }
}

/// One minibatch update. Returns the batch objective.
pub fn backward_and_step(
    net: &mut Network,
    opt: &mut Adam,
    batch: &Batch,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64, NnError> {
    let (loss, grads, stats) = net.loss_and_gradients(batch.inputs.view(), batch.targets.view(), rng)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(NnError::NonFiniteGradient);
    }
    opt.step(net, &grads, lr);
    net.update_running(&stats);
    Ok(loss)
}

fn eval_loss(net: &Network, data: &Batch) -> Result<f64, NnError> {
    let pred = net.predict(data.inputs.view())?;
    super::mae_loss(pred.view(), data.targets.view())
}

/// Minibatch Adam with staircase decay, early stopping on the validation
/// loss and periodic checkpoints. The best checkpoint is restored on return.
pub fn fit(net: &mut Network, train: &Batch, val: Option<&Batch>, cfg: &TrainConfig) -> Result<History, NnError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if train.inputs.ncols() != net.in_dim() || train.targets.ncols() != net.out_dim() {
        return Err(NnError::DimMismatch(format!(
            "data is {}->{}, network is {}->{}",
            train.inputs.ncols(),
            train.targets.ncols(),
            net.in_dim(),
            net.out_dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(net.param_count());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut hist = History {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        lr: Vec::new(),
        best_epoch: 0,
        stop: EpochStop::MaxEpochs,
    };
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;
    let mut ckpt: Option<(f64, usize, Network)> = None;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let b = train.rows(chunk);
            total += backward_and_step(net, &mut opt, &b, lr, &mut rng)? * chunk.len() as f64;
        }
        let tr = total / train.len() as f64;
        let vl = match val {
            Some(v) if !v.is_empty() => eval_loss(net, v)?,
            _ => eval_loss(net, train)?,
        };
        if !vl.is_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        hist.train_loss.push(tr);
        hist.val_loss.push(vl);
        hist.lr.push(lr);

        if vl < best_val {
            best_val = vl;
            since_best = 0;
        } else {
            since_best += 1;
        }
        let last = epoch + 1 == cfg.max_epochs || since_best >= cfg.patience;
        if (epoch + 1) % cfg.checkpoint_every == 0 || last {
            let better = ckpt.as_ref().is_none_or(|(v, _, _)| vl < *v);
            if better {
                ckpt = Some((vl, epoch, net.clone()));
            }
        }
        if since_best >= cfg.patience {
            hist.stop = EpochStop::Patience;
            break;
        }
    }
    if let Some((_, epoch, best)) = ckpt {
        *net = best;
        hist.best_epoch = epoch;
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::super::{init_network, Activation, LayerSpec};
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> Batch {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x: Array2<f64> = Array2::from_shape_fn((n, 3), |_| r.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((n, 2), |(i, j)| {
            if j == 0 {
                x[[i, 0]] * 0.5 - x[[i, 1]]
            } else {
                (x[[i, 2]] * 1.5f64).tanh()
            }
        });
        Batch::new(x, y).unwrap()
    }

    #[test]
    fn staircase_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 1e-3);
        assert_eq!(c.lr_at(9), 1e-3);
        assert!((c.lr_at(10) - 1e-3 * (-0.1f64).exp()).abs() < 1e-18);
        assert!((c.lr_at(25) - 1e-3 * (-0.2f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn fit_reduces_loss_and_is_deterministic() {
        let data = toy(400, 1);
        let val = toy(100, 2);
        let specs = [LayerSpec::new(3, 16, Activation::Tanh), LayerSpec::new(16, 2, Activation::Linear)];
        let cfg = TrainConfig {
            max_epochs: 60,
            lr0: 1e-2,
            batch_size: 32,
            seed: 4,
            ..TrainConfig::default()
        };
        let run = || {
            let mut net = init_network(&specs, 9).unwrap();
            let h = fit(&mut net, &data, Some(&val), &cfg).unwrap();
            (net, h)
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_eq!(ha, hb);
        assert!(ha.val_loss[ha.best_epoch] < ha.val_loss[0] * 0.5, "{:?}", ha.val_loss);
        assert!(ha.best_epoch % 5 == 4 || ha.best_epoch + 1 == ha.val_loss.len());
    }

    #[test]
    fn early_stopping_fires() {
        // targets are pure noise, so the validation loss stalls quickly
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((200, 3), |_| r.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((200, 1), |_| r.random_range(-1.0..1.0));
        let vx = Array2::from_shape_fn((100, 3), |_| r.random_range(-1.0..1.0));
        let vy = Array2::from_shape_fn((100, 1), |_| r.random_range(-1.0..1.0));
        let mut net = init_network(&[LayerSpec::new(3, 32, Activation::Tanh), LayerSpec::new(32, 1, Activation::Linear)], 0).unwrap();
        let cfg = TrainConfig {
            lr0: 3e-2,
            batch_size: 20,
            max_epochs: 1000,
            ..TrainConfig::default()
        };
        let h = fit(&mut net, &Batch::new(x, y).unwrap(), Some(&Batch::new(vx, vy).unwrap()), &cfg).unwrap();
        assert!(h.stopped_early());
        assert!(h.val_loss.len() < 1000);
    }

    #[test]
    fn rejects_bad_config_and_data() {
        let mut net = init_network(&[LayerSpec::new(3, 2, Activation::Linear)], 0).unwrap();
        let data = toy(10, 0);
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(matches!(fit(&mut net, &data, None, &bad), Err(NnError::InvalidConfig(_))));
        let mut wrong = init_network(&[LayerSpec::new(4, 2, Activation::Linear)], 0).unwrap();
        assert!(matches!(fit(&mut wrong, &data, None, &TrainConfig::default()), Err(NnError::DimMismatch(_))));
    }

    #[test]
    fn diverging_run_reports_non_finite() {
        let mut net = init_network(&[LayerSpec::new(3, 2, Activation::Linear)], 0).unwrap();
        let mut data = toy(10, 0);
        data.inputs[[0, 0]] = f64::NAN;
        let r = fit(&mut net, &data, None, &TrainConfig { max_epochs: 2, ..TrainConfig::default() });
        assert_eq!(r.unwrap_err(), NnError::NonFiniteGradient);
    }

    #[test]
    fn learns_a_scalar_gain() {
        let x: Array2<f64> = Array2::from_shape_fn((200, 1), |(i, _)| i as f64 / 100.0 - 1.0);
        let data = Batch::new(x.clone(), x.mapv(|v| 2.0 * v)).unwrap();
        let mut net = init_network(&[LayerSpec::new(1, 1, Activation::Linear)], 1).unwrap();
        let cfg = TrainConfig {
            lr0: 1e-2,
            batch_size: 20,
            max_epochs: 400,
            ..TrainConfig::default()
        };
        fit(&mut net, &data, None, &cfg).unwrap();
        assert!((net.layers[0].w[[0, 0]] - 2.0).abs() < 1e-3, "{}", net.layers[0].w[[0, 0]]);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = init_network(&[LayerSpec::new(2, 2, Activation::Linear)], 3).unwrap();
        let x: Array2<f64> = Array2::from_shape_fn((8, 2), |(i, j)| (i * 2 + j) as f64 * 0.1);
        let y = net.predict(x.view()).unwrap();
        let before = net.flat_params();
        let mut opt = Adam::new(net.param_count());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = backward_and_step(&mut net, &mut opt, &Batch::new(x, y).unwrap(), 1e-3, &mut rng).unwrap();
        assert_eq!(loss, 0.0);
        for (a, b) in before.iter().zip(net.flat_params()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn diverging_lr_hits_patience() {
        let data = toy(100, 3);
        let mut net = init_network(&[LayerSpec::new(3, 8, Activation::Selu), LayerSpec::new(8, 2, Activation::Linear)], 2).unwrap();
        let cfg = TrainConfig {
            lr0: 5.0,
            patience: 1,
            max_epochs: 200,
            ..TrainConfig::default()
        };
        let h = fit(&mut net, &data, None, &cfg).unwrap();
        assert!(h.stopped_early() && h.val_loss.len() < 200);
    }

    #[test]
    fn linear_task_loss_keeps_falling() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let x: Array2<f64> = Array2::from_shape_fn((500, 4), |_| r.random_range(-1.0..1.0));
        let a: Array2<f64> = Array2::from_shape_fn((4, 3), |_| r.random_range(-1.0..1.0));
        let data = Batch::new(x.clone(), x.dot(&a)).unwrap();
        let mut net = init_network(&[LayerSpec::new(4, 3, Activation::Linear)], 0).unwrap();
        let cfg = TrainConfig {
            max_epochs: 40,
            ..TrainConfig::default()
        };
        let h = fit(&mut net, &data, None, &cfg).unwrap();
        for w in h.train_loss[5..].windows(2) {
            assert!(w[1] < w[0], "{:?}", h.train_loss);
        }
    }
}
