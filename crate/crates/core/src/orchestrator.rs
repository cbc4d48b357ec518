//! The federated round loop.
//!
//! Each round: sample participants, broadcast, run `T` local steps at every
//! participant and at the server, measure gradient diversity, aggregate,
//! and optionally evaluate. All randomness comes from per-party streams
//! keyed by round and step, so running the local updates on any number of
//! threads gives bit-identical results.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{fedavg, grouping_average, make_groups, sample_participants, AggregationPlan};
use crate::augment::{strong_augment, weak_augment};
use crate::config::{Averaging, ExperimentConfig, Objective};
use crate::dataset::{load_dataset, DataSplits, Dataset};
use crate::diversity::{cumulative_delta, diversity_report, full_data_gradient, DiversityValue, RoundGradients};
use crate::error::{Result, SsflError};
use crate::losses::{self, LossOutput};
use crate::model::{cosine_lr, sgd_step, Mode, Model, ParameterState};
use crate::partitioner::{synthesize_assignment, Assignment, AssignmentPlan};
use crate::rng::{self, Purpose, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Threads for local updates; 0 uses rayon's default.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Learning rate at the first local step of the round.
    pub lr: f64,
    pub participants: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
    pub mean_user_loss: f64,
    pub server_loss: f64,
    /// Fraction of user samples that passed the confidence gate.
    pub pseudo_label_rate: f64,
    pub test_accuracy: Option<f64>,
    #[serde(flatten)]
    pub diversity: BTreeMap<String, DiversityValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<RoundRecord>,
    pub final_state: ParameterState,
}

/// Mutable federation state between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationState {
    pub rounds_completed: usize,
    /// `w_avg^t`.
    pub global: ParameterState,
    /// Server weights at the end of the last round.
    pub server: ParameterState,
    /// Each user's weights at the end of its last participation.
    pub users: Vec<Option<ParameterState>>,
    /// Group index of each user in the previous round.
    pub previous_group: Vec<Option<usize>>,
    /// Group averages produced by the previous round.
    pub group_states: Vec<ParameterState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Party {
    User(usize),
    Server,
}

struct LocalOutcome {
    state: ParameterState,
    mean_loss: f64,
    active: usize,
    seen: usize,
    fullgrad: Vec<f64>,
    delta: Vec<f64>,
}

/// Draws `batch` local indices uniformly with replacement.
pub fn draw_batch(rng: &mut Stream, local_len: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.random_range(0..local_len)).collect()
}

/// Fraction of test samples whose eval-mode argmax matches the label.
pub fn evaluate(model: &Model, state: &ParameterState, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(SsflError::invalid("cannot evaluate on an empty test set"));
    }
    let logits = model.predict(state, &test.inputs, test.len())?;
    let classes = model.classes();
    let correct = logits
        .chunks(classes)
        .zip(&test.labels)
        .filter(|(row, &label)| losses::argmax(row) == label)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

pub struct Simulator {
    config: ExperimentConfig,
    model: Model,
    assignment: Assignment,
    user_data: Vec<Dataset>,
    server_data: Dataset,
    test: Dataset,
}

impl Simulator {
    /// Loads the dataset (relative paths resolve against `base_dir`) and
    /// partitions it.
    pub fn new(config: ExperimentConfig, base_dir: &Path) -> Result<Self> {
        config.validate()?;
        let splits = load_dataset(&config.dataset, base_dir)?;
        Self::from_splits(config, splits)
    }

    pub fn from_splits(config: ExperimentConfig, splits: DataSplits) -> Result<Self> {
        config.validate()?;
        let DataSplits { train, test } = splits;
        if test.is_empty() {
            return Err(SsflError::invalid("test split is empty"));
        }
        config.augment.validate(&train.shape).map_err(|e| SsflError::Config(e.to_string()))?;
        let model = Model::new(config.model.spec(train.shape, train.classes)).map_err(|e| SsflError::Config(e.to_string()))?;
        let f = &config.federation;
        let plan = AssignmentPlan::new(&train.class_counts(), f.users, f.noniid, f.server_samples)?;
        let assignment = synthesize_assignment(&train.labels, &plan, config.seeds.partition)?;
        if let Some(k) = assignment.user_indices.iter().position(Vec::is_empty) {
            return Err(SsflError::invalid(format!("user {k} received no samples")));
        }
        let user_data = assignment.user_indices.iter().map(|ids| train.subset(ids)).collect();
        let server_data = train.subset(&assignment.server_indices);
        Ok(Self { config, model, assignment, user_data, server_data, test })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn rounds(&self) -> usize {
        self.config.rounds()
    }

    pub fn initial_state(&self) -> FederationState {
        let w0 = self.model.init(self.config.seeds.weights);
        let k = self.config.federation.users;
        FederationState {
            rounds_completed: 0,
            global: w0.clone(),
            server: w0,
            users: vec![None; k],
            previous_group: vec![None; k],
            group_states: Vec::new(),
        }
    }

    fn broadcast_for(&self, state: &FederationState, user: usize) -> ParameterState {
        match state.previous_group[user] {
            Some(i) => state.group_states[i].clone(),
            None => state.global.clone(),
        }
    }

    fn lr_at(&self, step: usize) -> Result<f64> {
        let schedule = &self.config.optimizer.schedule;
        // The last round may overrun the schedule; it stays at the final rate.
        cosine_lr(step.min(schedule.total_steps() - 1), schedule)
    }

    fn step_loss(&self, state: &mut ParameterState, party: Party, data: &Dataset, rng: &mut Stream) -> Result<(LossOutput, Vec<f64>)> {
        let cfg = &self.config;
        let b = cfg.optimizer.schedule.batch_size;
        let shape = data.shape;
        let classes = self.model.classes();
        let picks = draw_batch(rng, data.len(), b);
        let labels: Vec<usize> = picks.iter().map(|&i| data.labels[i]).collect();
        let mut weak = Vec::with_capacity(b * shape.size());
        for &i in &picks {
            weak.extend(weak_augment(data.sample(i), &shape, &cfg.augment.weak, rng));
        }
        let objective = match party {
            Party::Server => Objective::SupervisedOracle,
            Party::User(_) => cfg.federation.objective,
        };
        let tau = cfg.federation.threshold;
        let (loss, cache) = match objective {
            Objective::SupervisedOracle => {
                let (logits, cache) = self.model.forward(state, &weak, b, Mode::Train)?;
                (losses::server_supervised_loss(&logits, &labels, classes)?, cache)
            }
            Objective::SelfTraining => {
                let (logits, cache) = self.model.forward(state, &weak, b, Mode::Train)?;
                (losses::self_training_loss(&logits, classes, tau)?, cache)
            }
            Objective::Crl => {
                let (weak_logits, _) = self.model.forward_frozen(state, &weak, b, Mode::Train)?;
                let mut strong = Vec::with_capacity(weak.len());
                for &i in &picks {
                    strong.extend(strong_augment(data.sample(i), &shape, &cfg.augment.strong, rng));
                }
                let (strong_logits, cache) = self.model.forward(state, &strong, b, Mode::Train)?;
                (losses::crl_user_loss(&weak_logits, &strong_logits, classes, tau)?, cache)
            }
        };
        let grad = if loss.active_count == 0 {
            vec![0.0; state.len()]
        } else {
            self.model.backward(state, &cache, &loss.logit_gradients)?
        };
        Ok((loss, grad))
    }

    fn local_train(&self, start: &ParameterState, party: Party, round: usize) -> Result<LocalOutcome> {
        let cfg = &self.config;
        let t_steps = cfg.federation.period;
        let (data, objective) = match party {
            Party::User(k) => (&self.user_data[k], cfg.federation.objective),
            Party::Server => (&self.server_data, Objective::SupervisedOracle),
        };
        let fullgrad = full_data_gradient(&self.model, start, &data.inputs, &data.labels, objective, cfg.federation.threshold)?;
        let mut state = start.clone();
        let mut loss_sum = 0.0;
        let mut active = 0;
        for s in 0..t_steps {
            let step = round * t_steps + s;
            let mut stream = match party {
                Party::User(k) => rng::stream(cfg.seeds.schedule, Purpose::UserStep, &[k as u64, round as u64, s as u64]),
                Party::Server => rng::stream(cfg.seeds.schedule, Purpose::ServerStep, &[round as u64, s as u64]),
            };
            let (loss, grad) = self.step_loss(&mut state, party, data, &mut stream)?;
            sgd_step(&mut state, &grad, self.lr_at(step)?, &cfg.optimizer)?;
            loss_sum += loss.value;
            active += loss.active_count;
        }
        let mean_loss = loss_sum / t_steps as f64;
        if !state.is_finite() || !mean_loss.is_finite() {
            let who = match party {
                Party::User(k) => format!("user {k}"),
                Party::Server => "server".to_string(),
            };
            return Err(SsflError::Diverged { round, detail: format!("non-finite weights or loss at {who}") });
        }
        let delta = cumulative_delta(start, &state)?;
        Ok(LocalOutcome { state, mean_loss, active, seen: t_steps * cfg.optimizer.schedule.batch_size, fullgrad, delta })
    }

    /// Runs one round in place and returns its record.
    pub fn run_round(&self, state: &mut FederationState, evaluate_now: bool) -> Result<RoundRecord> {
        let cfg = &self.config;
        let f = &cfg.federation;
        let t = state.rounds_completed;
        let participants = sample_participants(f.users, f.participants, &mut rng::stream(cfg.seeds.schedule, Purpose::Participants, &[t as u64]))?;

        let mut tasks: Vec<(Party, ParameterState)> =
            participants.iter().map(|&k| (Party::User(k), self.broadcast_for(state, k))).collect();
        tasks.push((Party::Server, state.global.clone()));
        let mut outcomes = tasks
            .par_iter()
            .map(|(party, start)| self.local_train(start, *party, t))
            .collect::<Result<Vec<LocalOutcome>>>()?;
        let server = outcomes.pop().expect("server task");

        let report = diversity_report(&RoundGradients {
            round: t,
            user_fullgrad: outcomes.iter().map(|o| o.fullgrad.clone()).collect(),
            server_fullgrad: server.fullgrad.clone(),
            user_delta: outcomes.iter().map(|o| o.delta.clone()).collect(),
            server_delta: server.delta.clone(),
        })?;

        let user_states: Vec<ParameterState> = outcomes.iter().map(|o| o.state.clone()).collect();
        let (plan, result) = match cfg.aggregation {
            Averaging::Fedavg => (AggregationPlan::single(participants.clone()), fedavg(&server.state, &user_states)?),
            Averaging::Grouping { groups } => {
                let plan = make_groups(&participants, groups, &mut rng::stream(cfg.seeds.schedule, Purpose::Groups, &[t as u64]))?;
                let result = grouping_average(&server.state, &user_states, &plan)?;
                (plan, result)
            }
        };
        if !result.global_avg.is_finite() {
            return Err(SsflError::Diverged { round: t, detail: "non-finite aggregate".into() });
        }

        let mean_user_loss = outcomes.iter().map(|o| o.mean_loss).sum::<f64>() / outcomes.len() as f64;
        let active: usize = outcomes.iter().map(|o| o.active).sum();
        let seen: usize = outcomes.iter().map(|o| o.seen).sum();

        state.previous_group.iter_mut().for_each(|g| *g = None);
        if !result.group_avgs.is_empty() {
            for (i, group) in plan.groups.iter().enumerate() {
                for &k in group {
                    state.previous_group[k] = Some(i);
                }
            }
        }
        for (&k, o) in participants.iter().zip(outcomes) {
            state.users[k] = Some(o.state);
        }
        state.group_states = result.group_avgs;
        state.global = result.global_avg;
        state.server = server.state;
        state.rounds_completed += 1;

        let test_accuracy = if evaluate_now { Some(evaluate(&self.model, &state.global, &self.test)?) } else { None };
        Ok(RoundRecord {
            round: t,
            lr: self.lr_at(t * f.period)?,
            participants,
            groups: plan.groups,
            mean_user_loss,
            server_loss: server.mean_loss,
            pseudo_label_rate: active as f64 / seen as f64,
            test_accuracy,
            diversity: report,
        })
    }

    /// Runs every round, handing each record to `on_round` as it completes.
    pub fn run(&self, options: RunOptions, mut on_round: impl FnMut(&RoundRecord)) -> Result<ExperimentOutput> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| SsflError::Config(format!("thread pool: {e}")))?;
        let rounds = self.rounds();
        let every = self.config.federation.eval_every;
        let mut state = self.initial_state();
        let mut records = Vec::with_capacity(rounds);
        for t in 0..rounds {
            let evaluate_now = (t + 1) % every == 0 || t + 1 == rounds;
            let record = pool.install(|| self.run_round(&mut state, evaluate_now))?;
            on_round(&record);
            records.push(record);
        }
        Ok(ExperimentOutput { records, final_state: state.global })
    }
}

/// Loads, partitions and trains according to `config`.
pub fn run_experiment(config: ExperimentConfig, base_dir: &Path, options: RunOptions) -> Result<ExperimentOutput> {
    Simulator::new(config, base_dir)?.run(options, |_| {})
}
