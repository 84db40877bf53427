//! Three-term minimax training of a discriminator `D` and a generator `G`.
//!
//! The discriminator minimizes
//!
//! ```text
//! L(D, G) = mean_InD[-log D(x)_y] − β_OoD · mean_OoD[S(D(x))] + β_z · mean_z[S(D(G(z)))]
//! ```
//!
//! and the generator maximizes `β_z · mean_z[S(D(G(z)))]` with `D` frozen.
//! Each outer iteration runs `n_d` discriminator descent steps, then `n_g`
//! generator ascent steps, both with Adam. Every step draws fresh minibatches
//! uniformly with replacement. The WOOD baseline is the same discriminator
//! update without the generator.
//!
//! Loss-layer convention: all three terms hand `∂L/∂logits` to
//! [`Mlp::accumulate_backward`]. For cross-entropy that is `p − e_y`; for a
//! score term with active cost column `c` it is `p ⊙ (c − ⟨p, c⟩)`, the
//! softmax Jacobian applied to the score subgradient.

use crate::data::{sample_noise, Dataset, LabeledPoint, Point};
use crate::error::{Error, Result};
use crate::nn::{adam_step, log_sum_exp, Activation, AdamState, Gradients, Mlp, OutputHead};
use crate::rng::Rng;
use crate::wasserstein::{check_scoring_net, score_of, CostMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SeeOod,
    Wood,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::SeeOod => "see_ood",
            Method::Wood => "wood",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "see_ood" => Ok(Method::SeeOod),
            "wood" => Ok(Method::Wood),
            other => Err(Error::domain(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub beta_ood: f64,
    pub beta_z: f64,
    /// Discriminator steps per outer iteration.
    pub n_d: usize,
    /// Generator steps per outer iteration.
    pub n_g: usize,
    pub lr_d: f64,
    pub lr_g: f64,
    pub batch_ind: usize,
    /// Requested OoD batch; the effective size is `min(batch_ood, |ood_train|)`.
    pub batch_ood: usize,
    pub batch_gen: usize,
    pub noise_dim: usize,
    pub iterations: usize,
    pub seed: u64,
    pub discriminator_arch: Vec<usize>,
    pub generator_arch: Vec<usize>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::setting1()
    }
}

impl TrainConfig {
    /// Discriminator-dominant regime: `(β_OoD, β_z, n_d, n_g, η_D, η_G) = (1, 0.001, 2, 1, 1e-4, 1e-4)`.
    pub fn setting1() -> Self {
        Self {
            beta_ood: 1.0,
            beta_z: 0.001,
            n_d: 2,
            n_g: 1,
            lr_d: 1e-4,
            lr_g: 1e-4,
            batch_ind: 64,
            batch_ood: 32,
            batch_gen: 64,
            noise_dim: 2,
            iterations: 2000,
            seed: 0,
            discriminator_arch: vec![2, 128, 3],
            generator_arch: vec![2, 128, 2],
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }

    /// Generator-dominant regime: `(1, 100, 1, 3, 1e-4, 1e-3)`.
    pub fn setting2() -> Self {
        Self {
            beta_ood: 1.0,
            beta_z: 100.0,
            n_d: 1,
            n_g: 3,
            lr_d: 1e-4,
            lr_g: 1e-3,
            ..Self::setting1()
        }
    }

    /// WOOD on the 2D benchmark: `β = 1`, learning rate `1e-3`.
    pub fn wood2d() -> Self {
        Self {
            beta_ood: 1.0,
            beta_z: 0.0,
            n_d: 1,
            n_g: 0,
            lr_d: 1e-3,
            ..Self::setting1()
        }
    }

    pub fn validate(&self, method: Method) -> Result<()> {
        let positive = [("lr_d", self.lr_d), ("adam_epsilon", self.adam_epsilon)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.beta_ood.is_finite() && self.beta_ood >= 0.0) {
            return Err(Error::domain("beta_ood must be nonnegative"));
        }
        if !(self.beta_z.is_finite() && self.beta_z >= 0.0) {
            return Err(Error::domain("beta_z must be nonnegative"));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::domain(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        for (name, v) in [
            ("n_d", self.n_d),
            ("batch_ind", self.batch_ind),
            ("batch_ood", self.batch_ood),
        ] {
            if v == 0 {
                return Err(Error::domain(format!("{name} must be positive")));
            }
        }
        if self.discriminator_arch.len() < 2 || self.discriminator_arch.contains(&0) {
            return Err(Error::domain(
                "discriminator_arch needs >= 2 positive sizes",
            ));
        }
        if method == Method::SeeOod {
            if !(self.lr_g.is_finite() && self.lr_g > 0.0) {
                return Err(Error::domain("lr_g must be positive"));
            }
            for (name, v) in [
                ("n_g", self.n_g),
                ("batch_gen", self.batch_gen),
                ("noise_dim", self.noise_dim),
            ] {
                if v == 0 {
                    return Err(Error::domain(format!("{name} must be positive")));
                }
            }
            if self.generator_arch.len() < 2 || self.generator_arch.contains(&0) {
                return Err(Error::domain("generator_arch needs >= 2 positive sizes"));
            }
            if self.generator_arch[0] != self.noise_dim {
                return Err(Error::domain(format!(
                    "generator input {} does not match noise_dim {}",
                    self.generator_arch[0], self.noise_dim
                )));
            }
            if self.generator_arch.last() != self.discriminator_arch.first() {
                return Err(Error::domain(
                    "generator output must match the discriminator input",
                ));
            }
        }
        Ok(())
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if self.discriminator_arch[0] != data.dim {
            return Err(Error::shape(format!(
                "discriminator input {} does not match data dimension {}",
                self.discriminator_arch[0], data.dim
            )));
        }
        if *self.discriminator_arch.last().expect("validated") != data.num_classes {
            return Err(Error::shape(format!(
                "discriminator output does not match K = {}",
                data.num_classes
            )));
        }
        if data.ind_train.is_empty() {
            return Err(Error::domain("no InD training data"));
        }
        if data.ood_train.is_empty() {
            return Err(Error::domain(
                "at least one observed OoD training sample is required",
            ));
        }
        Ok(())
    }

    /// `min(batch_ood, n_ood)`.
    pub fn effective_batch_ood(&self, n_ood: usize) -> usize {
        self.batch_ood.min(n_ood)
    }
}

/// Discriminator loss value, its three terms, and `∂L/∂θ_D`.
#[derive(Debug, Clone)]
pub struct DiscriminatorLoss {
    pub loss: f64,
    /// Mean cross-entropy on the InD batch.
    pub ce: f64,
    /// Mean Wasserstein score on the OoD batch (0 when empty).
    pub ood_score: f64,
    /// Mean Wasserstein score on the generated batch (0 when empty).
    pub gen_score: f64,
    pub grads: Gradients,
}

pub fn discriminator_loss_and_grads(
    disc: &Mlp,
    ind_batch: &[LabeledPoint],
    ood_batch: &[Point],
    gen_batch: &[Point],
    beta_ood: f64,
    beta_z: f64,
    cost: &CostMatrix,
) -> Result<DiscriminatorLoss> {
    check_scoring_net(disc, cost)?;
    if ind_batch.is_empty() {
        return Err(Error::domain("empty InD batch"));
    }
    let k = cost.k();
    let mut grads = Gradients::zeros_like(disc);

    let inv_n = 1.0 / ind_batch.len() as f64;
    let mut ce = 0.0;
    for sample in ind_batch {
        if sample.label >= k {
            return Err(Error::domain(format!(
                "label {} out of range",
                sample.label
            )));
        }
        let (p, cache) = disc.forward(&sample.x)?;
        let logits = cache.logits();
        ce += log_sum_exp(logits) - logits[sample.label];
        let mut g: Vec<f64> = p.iter().map(|pj| pj * inv_n).collect();
        g[sample.label] -= inv_n;
        disc.accumulate_backward(&cache, &g, &mut grads)?;
    }
    ce *= inv_n;

    let ood_score = score_term(disc, ood_batch, -beta_ood, cost, &mut grads)?;
    let gen_score = score_term(disc, gen_batch, beta_z, cost, &mut grads)?;

    let loss = ce - beta_ood * ood_score + beta_z * gen_score;
    if !loss.is_finite() {
        return Err(Error::numeric(format!("discriminator loss is {loss}")));
    }
    Ok(DiscriminatorLoss {
        loss,
        ce,
        ood_score,
        gen_score,
        grads,
    })
}

/// Adds `weight · ∂ mean S(D(x)) / ∂θ` into `grads`; returns the mean score.
fn score_term(
    disc: &Mlp,
    batch: &[Point],
    weight: f64,
    cost: &CostMatrix,
    grads: &mut Gradients,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let scale = weight / batch.len() as f64;
    let mut total = 0.0;
    for x in batch {
        let (p, cache) = disc.forward(x)?;
        let (s, active) = score_of(&p, cost);
        total += s;
        if scale != 0.0 {
            let g = score_logit_gradient(&p, active, cost, scale);
            disc.accumulate_backward(&cache, &g, grads)?;
        }
    }
    Ok(total / batch.len() as f64)
}

/// `scale · J_softmax(p)ᵀ c`, with `c` the active cost column.
fn score_logit_gradient(p: &[f64], active: usize, cost: &CostMatrix, scale: f64) -> Vec<f64> {
    let dot: f64 = p
        .iter()
        .enumerate()
        .map(|(j, pj)| pj * cost.get(j, active))
        .sum();
    p.iter()
        .enumerate()
        .map(|(j, pj)| scale * pj * (cost.get(j, active) - dot))
        .collect()
}

#[derive(Debug, Clone)]
pub struct GeneratorObjective {
    /// `β_z · mean S(D(G(z)))`.
    pub objective: f64,
    pub mean_score: f64,
    /// `∂objective/∂θ_G`; ascend along it.
    pub grads: Gradients,
}

/// Generator objective and its gradient, chained through a frozen `D`.
pub fn generator_objective_and_grads(
    disc: &Mlp,
    gen: &Mlp,
    noise_batch: &[Point],
    beta_z: f64,
    cost: &CostMatrix,
) -> Result<GeneratorObjective> {
    check_scoring_net(disc, cost)?;
    if gen.output_dim() != disc.input_dim() {
        return Err(Error::shape(format!(
            "generator emits {} dims, discriminator expects {}",
            gen.output_dim(),
            disc.input_dim()
        )));
    }
    if noise_batch.is_empty() {
        return Err(Error::domain("empty noise batch"));
    }
    let scale = beta_z / noise_batch.len() as f64;
    let mut grads = Gradients::zeros_like(gen);
    let mut total = 0.0;
    for z in noise_batch {
        let (x, gen_cache) = gen.forward(z)?;
        let (p, disc_cache) = disc.forward(&x)?;
        let (s, active) = score_of(&p, cost);
        total += s;
        if scale != 0.0 {
            let g = score_logit_gradient(&p, active, cost, scale);
            let dx = disc.input_gradient(&disc_cache, &g)?;
            gen.accumulate_backward(&gen_cache, &dx, &mut grads)?;
        }
    }
    let mean_score = total / noise_batch.len() as f64;
    let objective = beta_z * mean_score;
    if !objective.is_finite() {
        return Err(Error::numeric(format!(
            "generator objective is {objective}"
        )));
    }
    Ok(GeneratorObjective {
        objective,
        mean_score,
        grads,
    })
}

/// `count` generated points `G(z)`, `z ~ N(0, I_n)`.
pub fn sample_generator(gen: &Mlp, count: usize, n: usize, rng: &mut Rng) -> Result<Vec<Point>> {
    if gen.input_dim() != n {
        return Err(Error::shape(format!(
            "generator takes {} inputs, noise has {n}",
            gen.input_dim()
        )));
    }
    sample_noise(n, count, rng)
        .iter()
        .map(|z| gen.predict(z))
        .collect()
}

/// One outer iteration. Discriminator quantities are averaged over its `n_d`
/// steps; generator quantities over its `n_g` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub ce: f64,
    pub ood_score: f64,
    /// Mean score of the generated batch seen by `D`; `None` for WOOD.
    pub gen_score: Option<f64>,
    pub gen_objective: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainHistory {
    pub method: Method,
    pub records: Vec<IterationRecord>,
    pub discriminator: Mlp,
    pub generator: Option<Mlp>,
}

impl TrainHistory {
    /// CSV with columns `iteration,loss,ce,ood_score_mean,gen_score_mean,gen_objective`.
    /// Generator columns are empty for WOOD runs.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("iteration,loss,ce,ood_score_mean,gen_score_mean,gen_objective\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{},{}\n",
                r.iteration,
                r.loss,
                r.ce,
                r.ood_score,
                opt(r.gen_score),
                opt(r.gen_objective)
            ));
        }
        out
    }
}

fn sample_ind(data: &Dataset, count: usize, rng: &mut Rng) -> Vec<LabeledPoint> {
    (0..count)
        .map(|_| data.ind_train[rng.index(data.ind_train.len())].clone())
        .collect()
}

fn sample_ood(data: &Dataset, count: usize, rng: &mut Rng) -> Vec<Point> {
    (0..count)
        .map(|_| data.ood_train[rng.index(data.ood_train.len())].clone())
        .collect()
}

fn new_discriminator(config: &TrainConfig, rng: &mut Rng) -> Result<(Mlp, AdamState)> {
    let d = Mlp::glorot(
        &config.discriminator_arch,
        Activation::Relu,
        OutputHead::Softmax,
        rng,
    )?;
    let state = AdamState::new(
        &d,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    )?;
    Ok((d, state))
}

/// Alternating discriminator descent / generator ascent under the binary
/// cost matrix.
pub fn train_see_ood(config: &TrainConfig, data: &Dataset, rng: &mut Rng) -> Result<TrainHistory> {
    let cost = CostMatrix::binary(data.num_classes)?;
    see_ood_with_cost(config, data, &cost, rng)
}

fn see_ood_with_cost(
    config: &TrainConfig,
    data: &Dataset,
    cost: &CostMatrix,
    rng: &mut Rng,
) -> Result<TrainHistory> {
    config.validate(Method::SeeOod)?;
    config.check_data(data)?;
    check_cost(cost, data)?;
    let (mut disc, mut disc_adam) = new_discriminator(config, rng)?;
    let mut gen = Mlp::glorot(
        &config.generator_arch,
        Activation::Relu,
        OutputHead::Identity,
        rng,
    )?;
    let mut gen_adam = AdamState::new(
        &gen,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    )?;
    let b_ood = config.effective_batch_ood(data.ood_train.len());

    let mut records = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let mut acc = [0.0; 4];
        for _ in 0..config.n_d {
            let ind = sample_ind(data, config.batch_ind, rng);
            let ood = sample_ood(data, b_ood, rng);
            let generated = sample_generator(&gen, config.batch_gen, config.noise_dim, rng)?;
            let step = discriminator_loss_and_grads(
                &disc,
                &ind,
                &ood,
                &generated,
                config.beta_ood,
                config.beta_z,
                cost,
            )?;
            adam_step(&mut disc, &step.grads, &mut disc_adam, config.lr_d)?;
            acc[0] += step.loss;
            acc[1] += step.ce;
            acc[2] += step.ood_score;
            acc[3] += step.gen_score;
        }
        let mut objective = 0.0;
        for _ in 0..config.n_g {
            let noise = sample_noise(config.noise_dim, config.batch_gen, rng);
            let mut step = generator_objective_and_grads(&disc, &gen, &noise, config.beta_z, cost)?;
            step.grads.scale(-1.0);
            adam_step(&mut gen, &step.grads, &mut gen_adam, config.lr_g)?;
            objective += step.objective;
        }
        let nd = config.n_d as f64;
        records.push(IterationRecord {
            iteration,
            loss: acc[0] / nd,
            ce: acc[1] / nd,
            ood_score: acc[2] / nd,
            gen_score: Some(acc[3] / nd),
            gen_objective: Some(objective / config.n_g as f64),
        });
    }
    Ok(TrainHistory {
        method: Method::SeeOod,
        records,
        discriminator: disc,
        generator: Some(gen),
    })
}

/// Classifier trained on `CE − β · mean S(OoD)` with no generator.
///
/// Uses `beta_ood`, `lr_d`, `n_d`, `batch_ind` and `batch_ood`; generator
/// settings are ignored.
pub fn train_wood(config: &TrainConfig, data: &Dataset, rng: &mut Rng) -> Result<TrainHistory> {
    let cost = CostMatrix::binary(data.num_classes)?;
    wood_with_cost(config, data, &cost, rng)
}

fn wood_with_cost(
    config: &TrainConfig,
    data: &Dataset,
    cost: &CostMatrix,
    rng: &mut Rng,
) -> Result<TrainHistory> {
    config.validate(Method::Wood)?;
    config.check_data(data)?;
    check_cost(cost, data)?;
    let (mut disc, mut adam) = new_discriminator(config, rng)?;
    let b_ood = config.effective_batch_ood(data.ood_train.len());

    let mut records = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let mut acc = [0.0; 3];
        for _ in 0..config.n_d {
            let ind = sample_ind(data, config.batch_ind, rng);
            let ood = sample_ood(data, b_ood, rng);
            let step =
                discriminator_loss_and_grads(&disc, &ind, &ood, &[], config.beta_ood, 0.0, cost)?;
            adam_step(&mut disc, &step.grads, &mut adam, config.lr_d)?;
            acc[0] += step.loss;
            acc[1] += step.ce;
            acc[2] += step.ood_score;
        }
        let nd = config.n_d as f64;
        records.push(IterationRecord {
            iteration,
            loss: acc[0] / nd,
            ce: acc[1] / nd,
            ood_score: acc[2] / nd,
            gen_score: None,
            gen_objective: None,
        });
    }
    Ok(TrainHistory {
        method: Method::Wood,
        records,
        discriminator: disc,
        generator: None,
    })
}

pub fn train(
    method: Method,
    config: &TrainConfig,
    data: &Dataset,
    rng: &mut Rng,
) -> Result<TrainHistory> {
    let cost = CostMatrix::binary(data.num_classes)?;
    train_with_cost(method, config, data, &cost, rng)
}

/// [`train`] with a caller-supplied cost matrix in every score term.
pub fn train_with_cost(
    method: Method,
    config: &TrainConfig,
    data: &Dataset,
    cost: &CostMatrix,
    rng: &mut Rng,
) -> Result<TrainHistory> {
    match method {
        Method::SeeOod => see_ood_with_cost(config, data, cost, rng),
        Method::Wood => wood_with_cost(config, data, cost, rng),
    }
}

fn check_cost(cost: &CostMatrix, data: &Dataset) -> Result<()> {
    if cost.k() != data.num_classes {
        return Err(Error::shape(format!(
            "cost matrix is {k}x{k}, data has K = {}",
            data.num_classes,
            k = cost.k()
        )));
    }
    Ok(())
}

/// Generator-only Adam ascent against a frozen discriminator. Returns the
/// objective measured before each step.
pub fn train_generator_only(
    disc: &Mlp,
    gen: &mut Mlp,
    config: &TrainConfig,
    steps: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let cost = CostMatrix::binary(disc.output_dim())?;
    let mut adam = AdamState::new(
        gen,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    )?;
    let mut objectives = Vec::with_capacity(steps);
    for _ in 0..steps {
        let noise = sample_noise(config.noise_dim, config.batch_gen, rng);
        let mut step = generator_objective_and_grads(disc, gen, &noise, config.beta_z, &cost)?;
        objectives.push(step.objective);
        step.grads.scale(-1.0);
        adam_step(gen, &step.grads, &mut adam, config.lr_g)?;
    }
    Ok(objectives)
}
