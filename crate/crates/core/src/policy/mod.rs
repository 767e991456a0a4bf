//! Pixel-input policy: a one-hidden-layer tanh network trained by behaviour
//! cloning with plain SGD.

pub mod checkpoint;
pub mod net;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{nav2d, Action, Domain, Observation, Policy, Token, Trajectory, OBS_LEN};
use crate::error::{DfaError, Result};
use net::{Net, SparseInput, Target};

pub const DEFAULT_HIDDEN: usize = 128;

/// Regression outputs are in units of the maximum step.
pub const ACTION_SCALE: f64 = nav2d::MAX_STEP;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Regression,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub domain: Domain,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub head: Head,
    pub activation: String,
}

impl Architecture {
    pub fn for_domain(domain: Domain, hidden: usize) -> Self {
        let head = match domain {
            Domain::Nav2d => Head::Regression,
            Domain::Doorkey => Head::Categorical,
        };
        Self { domain, input: OBS_LEN, hidden, output: domain.action_dim(), head, activation: "tanh".into() }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Architecture::for_domain(self.domain, self.hidden);
        if self.hidden == 0 || *self != expected {
            return Err(DfaError::InvalidConfig(format!("unsupported architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub arch: Architecture,
    pub seed: u64,
    pub(crate) net: Net<f32>,
}

impl PolicyParams {
    /// All-zero weights and biases.
    pub fn zeros(arch: Architecture) -> Self {
        let net = Net::zeros(arch.input, arch.hidden, arch.output);
        Self { arch, seed: 0, net }
    }

    pub fn domain(&self) -> Domain {
        self.arch.domain
    }

    pub fn parameter_count(&self) -> usize {
        self.net.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.net.all_finite()
    }

    /// Largest absolute parameter difference.
    pub fn max_abs_diff(&self, other: &PolicyParams) -> f32 {
        self.net
            .tensors()
            .iter()
            .zip(other.net.tensors())
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f32::max)
    }
}

/// Uniform in `±1/sqrt(fan_in)` for weights, zero biases.
pub fn init(arch: &Architecture, seed: u64) -> Result<PolicyParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Net::zeros(arch.input, arch.hidden, arch.output);
    let b1 = 1.0 / (arch.input as f32).sqrt();
    net.w1.iter_mut().for_each(|w| *w = rng.gen_range(-b1..b1));
    let b2 = 1.0 / (arch.hidden as f32).sqrt();
    net.w2.iter_mut().for_each(|w| *w = rng.gen_range(-b2..b2));
    Ok(PolicyParams { arch: arch.clone(), seed, net })
}

fn decode(arch: &Architecture, out: &[f32]) -> Action {
    match arch.head {
        Head::Regression => {
            let d = [out[0] as f64 * ACTION_SCALE, out[1] as f64 * ACTION_SCALE];
            Action::Continuous(nav2d::clip(d))
        }
        Head::Categorical => {
            // First maximum wins ties.
            let mut best = 0;
            for (i, &v) in out.iter().enumerate() {
                if v > out[best] {
                    best = i;
                }
            }
            Action::Discrete(Token::from_index(best).expect("six outputs"))
        }
    }
}

pub fn predict(params: &PolicyParams, obs: &Observation) -> Result<Action> {
    if obs.len() != params.arch.input {
        return Err(DfaError::ShapeMismatch { expected: params.arch.input, got: obs.len() });
    }
    let x = SparseInput::from_dense(obs.as_slice());
    Ok(decode(&params.arch, &params.net.forward(&x).output))
}

impl Policy for PolicyParams {
    fn act(&self, obs: &Observation) -> Result<Action> {
        predict(self, obs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    CrossEntropy,
}

impl LossKind {
    pub fn for_domain(domain: Domain) -> Self {
        match domain {
            Domain::Nav2d => LossKind::SquaredError,
            Domain::Doorkey => LossKind::CrossEntropy,
        }
    }

    fn head(self) -> Head {
        match self {
            LossKind::SquaredError => Head::Regression,
            LossKind::CrossEntropy => Head::Categorical,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    #[serde(default)]
    pub finetune: bool,
}

impl TrainConfig {
    pub fn for_domain(domain: Domain, seed: u64) -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 300,
            batch_size: 1,
            seed,
            loss: LossKind::for_domain(domain),
            finetune: false,
        }
    }

    pub fn finetuning(domain: Domain, seed: u64) -> Self {
        Self { epochs: 100, finetune: true, ..Self::for_domain(domain, seed) }
    }

    fn validate(&self, arch: &Architecture) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DfaError::InvalidConfig(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 && !self.finetune {
            return Err(DfaError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(DfaError::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.loss.head() != arch.head {
            return Err(DfaError::InvalidConfig(format!("{:?} loss does not fit a {:?} head", self.loss, arch.head)));
        }
        Ok(())
    }
}

fn target_of(arch: &Architecture, action: &Action) -> Result<Target> {
    match (arch.head, action) {
        (Head::Regression, Action::Continuous(d)) => {
            let [dx, dy] = nav2d::clip(*d);
            Ok(Target::Continuous([dx / ACTION_SCALE, dy / ACTION_SCALE]))
        }
        (Head::Categorical, Action::Discrete(t)) => Ok(Target::Discrete(t.index())),
        (_, a) => Err(DfaError::MalformedAction(format!("{a:?} does not fit a {} policy", arch.domain))),
    }
}

/// Flatten demonstrations into sparse (observation, target) pairs.
pub fn samples(arch: &Architecture, demos: &[Trajectory]) -> Result<Vec<(SparseInput<f32>, Target)>> {
    if demos.is_empty() {
        return Err(DfaError::EmptyDataset);
    }
    let mut out = Vec::new();
    for demo in demos {
        if demo.domain() != arch.domain {
            return Err(DfaError::DomainMismatch { expected: arch.domain.to_string(), got: demo.domain().to_string() });
        }
        if demo.len() != arch.domain.horizon() {
            return Err(DfaError::LengthMismatch { expected: arch.domain.horizon(), got: demo.len() });
        }
        for step in &demo.steps {
            out.push((SparseInput::from_dense(step.observation.as_slice()), target_of(arch, &step.action)?));
        }
    }
    Ok(out)
}

/// Per-epoch mean training loss.
pub type LossHistory = Vec<f64>;

/// Inputs carrying the same nonzero value in every sample, as `(index, value)`.
fn shared_inputs(data: &[(SparseInput<f32>, Target)]) -> Vec<(u32, f32)> {
    let Some((first, _)) = data.first() else {
        return Vec::new();
    };
    let mut shared: Vec<(u32, f32)> = first.index.iter().copied().zip(first.value.iter().copied()).collect();
    for (x, _) in &data[1..] {
        shared.retain(|&(i, v)| x.index.binary_search(&i).is_ok_and(|k| x.value[k] == v));
    }
    shared
}

/// SGD with shared-input folding: every update to the first-layer row of an
/// input that is identical across all samples equals its value times the
/// bias update, so those rows are folded into an effective bias while
/// training and written back at the end.
fn run_sgd(mut params: PolicyParams, demos: &[Trajectory], cfg: &TrainConfig) -> Result<(PolicyParams, LossHistory)> {
    cfg.validate(&params.arch)?;
    let mut data = samples(&params.arch, demos)?;
    let head = params.arch.head;
    let hidden = params.arch.hidden;

    let shared = shared_inputs(&data);
    for (x, _) in data.iter_mut() {
        let keep: Vec<usize> = (0..x.index.len()).filter(|&k| shared.binary_search_by_key(&x.index[k], |s| s.0).is_err()).collect();
        *x = SparseInput { index: keep.iter().map(|&k| x.index[k]).collect(), value: keep.iter().map(|&k| x.value[k]).collect() };
    }
    let b1_start = params.net.b1.clone();
    let shared_sq: f32 = shared.iter().map(|(_, v)| v * v).sum();
    let mut shared_pre = vec![0f32; hidden];
    for &(i, v) in &shared {
        let row = &params.net.w1[i as usize * hidden..(i as usize + 1) * hidden];
        shared_pre.iter_mut().zip(row).for_each(|(p, w)| *p += v * w);
    }
    // Effective bias = b1 + shared contribution at init + drift of the shared rows.
    let fold = |net: &mut Net<f32>| {
        for h in 0..hidden {
            net.b1[h] += shared_pre[h] + shared_sq * (net.b1[h] - b1_start[h]);
        }
    };
    let unfold = |net: &mut Net<f32>, saved_b1: &[f32]| net.b1.copy_from_slice(saved_b1);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let step = (cfg.learning_rate / batch.len() as f64) as f32;
            let saved_b1 = params.net.b1.clone();
            fold(&mut params.net);
            let grads: Vec<_> = batch
                .iter()
                .map(|&i| {
                    let (x, t) = &data[i];
                    let (loss, g) = params.net.sample_grad(head, x, *t);
                    total += loss as f64;
                    (i, g)
                })
                .collect();
            unfold(&mut params.net, &saved_b1);
            for (i, g) in &grads {
                params.net.apply(&data[*i].0, g, step);
            }
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(DfaError::NonFiniteLoss { epoch, last_loss: history.last().copied() });
        }
        history.push(mean);
    }
    for &(i, v) in &shared {
        let row = &mut params.net.w1[i as usize * hidden..(i as usize + 1) * hidden];
        for (h, w) in row.iter_mut().enumerate() {
            *w += v * (params.net.b1[h] - b1_start[h]);
        }
    }
    if !params.is_finite() {
        return Err(DfaError::NonFiniteLoss { epoch: cfg.epochs, last_loss: history.last().copied() });
    }
    Ok((params, history))
}

/// Behaviour cloning from `params` (normally a fresh [`init`]).
pub fn train_bc(params: PolicyParams, demos: &[Trajectory], cfg: &TrainConfig) -> Result<(PolicyParams, LossHistory)> {
    run_sgd(params, demos, cfg)
}

/// Continue training from existing params. Zero epochs returns them unchanged.
pub fn finetune(params: &PolicyParams, demos: &[Trajectory], cfg: &TrainConfig) -> Result<(PolicyParams, LossHistory)> {
    let cfg = TrainConfig { finetune: true, ..cfg.clone() };
    run_sgd(params.clone(), demos, &cfg)
}

/// Mean per-sample loss over `demos`.
pub fn evaluate_loss(params: &PolicyParams, demos: &[Trajectory]) -> Result<f64> {
    let data = samples(&params.arch, demos)?;
    let total: f64 = data
        .iter()
        .map(|(x, t)| {
            let out = params.net.forward(x).output;
            Net::loss(params.arch.head, &out, *t).0 as f64
        })
        .sum();
    Ok(total / data.len() as f64)
}

pub const GRAD_CHECK_STEP: f64 = 1e-4;
const GRAD_CHECK_ABS_FLOOR: f64 = 1e-7;

/// Compare analytic gradients with central finite differences, in double
/// precision, on `coords` randomly chosen parameters. Half of the picks come
/// from first-layer rows of nonzero pixels, where the gradient is nonzero.
pub fn grad_check(params: &PolicyParams, obs: &Observation, action: &Action, coords: usize, seed: u64) -> Result<f64> {
    let arch = &params.arch;
    let target = target_of(arch, action)?;
    let mut net: Net<f64> = params.net.cast();
    let x = SparseInput::<f64>::from_dense(obs.as_slice());
    let (_, grads) = net.gradient(arch.head, &x, target);
    let analytic = [grads.w1, grads.b1, grads.w2, grads.b2];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut worst = 0.0f64;
    for k in 0..coords {
        let (tensor, idx) = if k % 2 == 0 && !x.index.is_empty() {
            let i = x.index[rng.gen_range(0..x.index.len())] as usize;
            (0, i * arch.hidden + rng.gen_range(0..arch.hidden))
        } else {
            let mut flat = rng.gen_range(0..total);
            let mut t = 0;
            while flat >= sizes[t] {
                flat -= sizes[t];
                t += 1;
            }
            (t, flat)
        };
        let orig = net.tensors()[tensor][idx];
        net.tensors_mut()[tensor][idx] = orig + GRAD_CHECK_STEP;
        let plus = Net::loss(arch.head, &net.forward(&x).output, target).0;
        net.tensors_mut()[tensor][idx] = orig - GRAD_CHECK_STEP;
        let minus = Net::loss(arch.head, &net.forward(&x).output, target).0;
        net.tensors_mut()[tensor][idx] = orig;
        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
        let a = analytic[tensor][idx];
        let scale = a.abs().max(numeric.abs());
        let err = if scale < GRAD_CHECK_ABS_FLOOR { (a - numeric).abs() } else { (a - numeric).abs() / scale };
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{doorkey, reset};

    fn obs(domain: Domain) -> Observation {
        let scene = match domain {
            Domain::Nav2d => nav2d::train_scene("red"),
            Domain::Doorkey => doorkey::train_scene("red", "green", "blue"),
        };
        reset(&scene).unwrap().1
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let arch = Architecture::for_domain(Domain::Nav2d, 16);
        assert_eq!(init(&arch, 3).unwrap(), init(&arch, 3).unwrap());
        assert_ne!(init(&arch, 3).unwrap(), init(&arch, 4).unwrap());
    }

    #[test]
    fn doorkey_head_has_six_outputs() {
        let p = init(&Architecture::for_domain(Domain::Doorkey, 8), 0).unwrap();
        assert_eq!(p.arch.output, 6);
        assert_eq!(p.net.b2.len(), 6);
    }

    #[test]
    fn zero_network_outputs() {
        let nav = PolicyParams::zeros(Architecture::for_domain(Domain::Nav2d, 8));
        assert_eq!(predict(&nav, &obs(Domain::Nav2d)).unwrap(), Action::Continuous([0.0, 0.0]));
        let dk = PolicyParams::zeros(Architecture::for_domain(Domain::Doorkey, 8));
        assert_eq!(predict(&dk, &obs(Domain::Doorkey)).unwrap(), Action::Discrete(Token::Up));
    }

    #[test]
    fn predict_is_pure() {
        let p = init(&Architecture::for_domain(Domain::Doorkey, 32), 1).unwrap();
        let o = obs(Domain::Doorkey);
        assert_eq!(predict(&p, &o).unwrap(), predict(&p, &o).unwrap());
    }

    #[test]
    fn regression_output_is_clipped() {
        let mut p = PolicyParams::zeros(Architecture::for_domain(Domain::Nav2d, 4));
        p.net.b2 = vec![5.0, -0.5];
        let Action::Continuous([dx, dy]) = predict(&p, &obs(Domain::Nav2d)).unwrap() else { panic!() };
        assert_eq!(dx, 0.1);
        assert!((dy + 0.05).abs() < 1e-7);
    }

    #[test]
    fn finite_differences_agree_on_both_heads() {
        for (domain, action) in
            [(Domain::Nav2d, Action::Continuous([0.07, -0.02])), (Domain::Doorkey, Action::Discrete(Token::Pickup))]
        {
            let p = init(&Architecture::for_domain(domain, 32), 9).unwrap();
            let err = grad_check(&p, &obs(domain), &action, 200, 1).unwrap();
            assert!(err < 1e-4, "{domain}: {err}");
        }
    }

    #[test]
    fn zero_gradient_coordinates_use_absolute_error() {
        // A blank frame has no active first-layer rows.
        let blank = Observation::new(vec![0.0; OBS_LEN]).unwrap();
        let p = init(&Architecture::for_domain(Domain::Nav2d, 8), 2).unwrap();
        assert!(grad_check(&p, &blank, &Action::Continuous([0.0, 0.0]), 100, 0).unwrap() < 1e-4);
    }

    #[test]
    fn config_is_validated() {
        let arch = Architecture::for_domain(Domain::Nav2d, 4);
        let p = PolicyParams::zeros(arch.clone());
        let mut cfg = TrainConfig::for_domain(Domain::Nav2d, 0);
        cfg.learning_rate = 0.0;
        assert!(cfg.validate(&arch).is_err());
        cfg = TrainConfig::for_domain(Domain::Doorkey, 0);
        assert!(cfg.validate(&arch).is_err());
        assert!(matches!(train_bc(p, &[], &TrainConfig::for_domain(Domain::Nav2d, 0)), Err(DfaError::EmptyDataset)));
    }

    #[test]
    fn shared_input_folding_matches_plain_sgd() {
        use crate::oracle::{expert_demo, RewardSpec};
        let reward = RewardSpec::any_goal(Domain::Doorkey);
        let demos: Vec<_> = ["red", "blue"]
            .iter()
            .map(|c| expert_demo(&doorkey::train_scene(c, "green", "yellow"), &reward).unwrap())
            .collect();
        let arch = Architecture::for_domain(Domain::Doorkey, 16);
        let start = init(&arch, 5).unwrap();
        let cfg = TrainConfig { epochs: 3, batch_size: 4, learning_rate: 0.01, ..TrainConfig::for_domain(Domain::Doorkey, 2) };
        let (folded, history) = train_bc(start.clone(), &demos, &cfg).unwrap();

        // Reference: same shuffle, full inputs, no folding.
        let data = samples(&arch, &demos).unwrap();
        let mut net = start.net.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        assert_eq!(history.len(), cfg.epochs);
        for recorded in &history {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let grads: Vec<_> = batch.iter().map(|&i| net.sample_grad(arch.head, &data[i].0, data[i].1)).collect();
                for (&i, (loss, g)) in batch.iter().zip(&grads) {
                    total += *loss as f64;
                    net.apply(&data[i].0, g, (cfg.learning_rate / batch.len() as f64) as f32);
                }
            }
            assert!((total / data.len() as f64 - recorded).abs() < 1e-4);
        }
        let reference = PolicyParams { net, ..start };
        assert!(folded.max_abs_diff(&reference) < 1e-4, "{}", folded.max_abs_diff(&reference));
    }
}
