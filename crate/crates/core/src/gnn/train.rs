use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::graph::{edge_drop, BrainGraph, MUTANT};
use super::loss::{class_weights, weighted_bce, weighted_bce_grad_logit, weighted_bce_logit};
use super::scaler::FeatureScaler;
use super::model::{mean_weighted_degree, DropoutMasks, GnnArchitecture, GnnModel};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, derive_seed, seeded, AdamConfig, AdamState};

pub const MIN_PER_CLASS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_patience: usize,
    pub stop_patience: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    pub edge_drop: f64,
    pub max_epochs: usize,
    /// `(w_mutant, w_wild)`; derived from the training labels when absent.
    pub class_weights: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            lr_decay_factor: 0.5,
            lr_patience: 10,
            stop_patience: 20,
            weight_decay: 1e-4,
            dropout: 0.5,
            edge_drop: 0.1,
            max_epochs: 300,
            class_weights: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!("decay factor must lie in (0, 1], got {}", self.lr_decay_factor));
        }
        if self.lr_patience == 0 || self.stop_patience == 0 {
            return bad("patiences must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(0.0..1.0).contains(&self.edge_drop) {
            return bad(format!("edge drop must lie in [0, 1), got {}", self.edge_drop));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if let Some((a, b)) = self.class_weights {
            if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                return bad(format!("class weights must be positive, got ({a}, {b})"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub class_weights: (f64, f64),
}

/// Indices into the cohort, each list sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Rounds `0.2 · n` to the nearest integer.
fn fifth(n: usize) -> usize {
    (2 * n + 5) / 10
}

/// Splits `total` items across classes in proportion to `counts` using
/// largest remainders; ties go to the lower class index.
fn allocate(total: usize, counts: &[usize]) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return vec![0; counts.len()];
    }
    let mut out: Vec<usize> = counts.iter().map(|&c| total * c / n).collect();
    let mut rem: Vec<(usize, usize)> = counts.iter().enumerate().map(|(k, &c)| (total * c % n, k)).collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total - out.iter().sum::<usize>();
    for &(_, k) in rem.iter().take(short) {
        out[k] += 1;
    }
    out
}

/// Stratified 80:20 test holdout, then 80:20 train/validation on the remainder.
pub fn split_cohort(labels: &[u8], seed: u64) -> Result<CohortSplit> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(), Vec::new()];
    for (k, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(Error::Data(format!("label {y} at index {k} is not binary")));
        }
        by_class[y as usize].push(k);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < MIN_PER_CLASS {
            return Err(Error::Data(format!(
                "class {c} has {} subjects; at least {MIN_PER_CLASS} are required",
                members.len()
            )));
        }
    }
    let mut rng = seeded(derive_seed(seed, "split"));
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let test_per = allocate(fifth(labels.len()), &counts);
    let pool: Vec<usize> = counts.iter().zip(&test_per).map(|(c, t)| c - t).collect();
    let val_per = allocate(fifth(pool.iter().sum()), &pool);

    let mut split = CohortSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (c, members) in by_class.iter().enumerate() {
        let (t, v) = (test_per[c], val_per[c]);
        split.test.extend_from_slice(&members[..t]);
        split.val.extend_from_slice(&members[t..t + v]);
        split.train.extend_from_slice(&members[t + v..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlateauEvent {
    Improved,
    Wait,
    Decay,
    Stop,
}

/// Patience counters for plateau LR decay and early stopping. The decay
/// counter resets after each decay; both reset on improvement.
#[derive(Debug, Clone)]
struct Plateau {
    lr_patience: usize,
    stop_patience: usize,
    best: f64,
    lr_wait: usize,
    stop_wait: usize,
}

impl Plateau {
    fn new(lr_patience: usize, stop_patience: usize) -> Self {
        Self {
            lr_patience,
            stop_patience,
            best: f64::INFINITY,
            lr_wait: 0,
            stop_wait: 0,
        }
    }

    fn observe(&mut self, loss: f64) -> PlateauEvent {
        if loss < self.best {
            self.best = loss;
            self.lr_wait = 0;
            self.stop_wait = 0;
            return PlateauEvent::Improved;
        }
        self.lr_wait += 1;
        self.stop_wait += 1;
        if self.stop_wait >= self.stop_patience {
            PlateauEvent::Stop
        } else if self.lr_wait >= self.lr_patience {
            self.lr_wait = 0;
            PlateauEvent::Decay
        } else {
            PlateauEvent::Wait
        }
    }
}

fn mean_loss(model: &GnnModel, graphs: &[BrainGraph], w: (f64, f64)) -> Result<f64> {
    let mut total = 0.0;
    for g in graphs {
        total += weighted_bce(model.predict(g)?, g.label, w.0, w.1);
    }
    Ok(total / graphs.len() as f64)
}

/// Per-graph Adam training with edge drop, dropout, plateau LR decay and
/// early stopping on validation loss. Returns the best-validation snapshot.
pub fn train_gnn(
    train: &[BrainGraph],
    val: &[BrainGraph],
    arch: &GnnArchitecture,
    config: &TrainConfig,
) -> Result<(GnnModel, TrainLog)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    let weights = config.class_weights.unwrap_or_else(|| {
        let mutants = train.iter().filter(|g| g.label == MUTANT).count();
        class_weights(mutants, train.len() - mutants)
    });
    let scaler = FeatureScaler::fit(train)?;
    let scaled: Vec<BrainGraph> = train.iter().map(|g| scaler.apply(g)).collect();
    let mut model = GnnModel::new(arch.clone(), mean_weighted_degree(&scaled), derive_seed(config.seed, "gnn-init"))?;
    model.scaler = scaler;
    let mut adam = AdamState::new(AdamConfig {
        learning_rate: config.learning_rate,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    });
    let mut rng = seeded(derive_seed(config.seed, "gnn-train"));
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = (model.clone(), f64::INFINITY, 0usize);
    let mut schedule = Plateau::new(config.lr_patience, config.stop_patience);
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for &k in &order {
            let g = edge_drop(&train[k], config.edge_drop, &mut rng)?;
            let masks = DropoutMasks::sample(&mut rng, arch.hidden_dim, config.dropout);
            let fwd = model.forward(&g, None, Some(&masks))?;
            let loss = weighted_bce_logit(fwd.logit, g.label, weights.0, weights.1);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("epoch {epoch}: loss {loss} on graph {}", g.id)));
            }
            train_loss += loss;
            let d_logit = weighted_bce_grad_logit(fwd.logit, g.label, weights.0, weights.1);
            let grads = model.backward(&g, &fwd, d_logit)?;
            for (name, t) in grads.params {
                model.params.set_grad(&name, t)?;
            }
            adam_step(&mut model.params, &mut adam)?;
        }
        train_loss /= train.len() as f64;
        let val_loss = mean_loss(&model, val, weights)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence(format!("epoch {epoch}: validation loss {val_loss}")));
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            learning_rate: adam.config.learning_rate,
        });

        match schedule.observe(val_loss) {
            PlateauEvent::Improved => best = (model.clone(), val_loss, epoch),
            PlateauEvent::Decay => adam.config.learning_rate *= config.lr_decay_factor,
            PlateauEvent::Stop => {
                stopped_early = true;
                break;
            }
            PlateauEvent::Wait => {}
        }
    }

    let (mut model, best_val_loss, best_epoch) = best;
    model.params.zero_grads();
    Ok((
        model,
        TrainLog {
            epochs,
            best_epoch,
            best_val_loss,
            stopped_early,
            class_weights: weights,
        },
    ))
}
