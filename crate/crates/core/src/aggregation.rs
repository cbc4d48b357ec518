//! Server-side model averaging.
//!
//! FedAvg averages the server model with every participant uniformly.
//! Grouping-based averaging splits the participants into `S` random groups,
//! averages each group together with the server model, and takes the plain
//! mean of the group averages as the global model. Momentum buffers and
//! batch-norm running statistics are averaged exactly like weights.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsflError};
use crate::model::ParameterState;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationPlan {
    pub participants: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
}

impl AggregationPlan {
    /// A single group holding every participant, which is what FedAvg does.
    pub fn single(participants: Vec<usize>) -> Self {
        let groups = if participants.is_empty() { Vec::new() } else { vec![participants.clone()] };
        Self { participants, groups }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.participants.len();
        let s = self.groups.len();
        if c > 0 && !(1..=c).contains(&s) {
            return Err(SsflError::invalid(format!("{s} groups for {c} participants")));
        }
        let mut members: Vec<usize> = self.groups.iter().flatten().copied().collect();
        let mut expected = self.participants.clone();
        members.sort_unstable();
        expected.sort_unstable();
        if members != expected || expected.windows(2).any(|w| w[0] == w[1]) {
            return Err(SsflError::invalid("groups do not partition the participants"));
        }
        let sizes = self.groups.iter().map(Vec::len);
        if sizes.clone().max().unwrap_or(0) - sizes.min().unwrap_or(0) > 1 {
            return Err(SsflError::invalid("group sizes differ by more than one"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub global_avg: ParameterState,
    /// Per-group averages in plan order; empty for FedAvg.
    pub group_avgs: Vec<ParameterState>,
}

/// Draws `c` distinct user ids out of `k`, in random order.
pub fn sample_participants(k: usize, c: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if c == 0 || c > k {
        return Err(SsflError::invalid(format!("cannot sample {c} participants from {k} users")));
    }
    Ok(index::sample(rng, k, c).into_vec())
}

/// Shuffles the participants and cuts them into `s` contiguous blocks; the
/// first `C mod S` blocks get one extra member. Members of each group keep
/// their participant order.
pub fn make_groups(participants: &[usize], s: usize, rng: &mut impl Rng) -> Result<AggregationPlan> {
    let c = participants.len();
    if s == 0 || s > c {
        return Err(SsflError::invalid(format!("cannot form {s} groups from {c} participants")));
    }
    let mut shuffled = participants.to_vec();
    shuffled.shuffle(rng);
    let mut groups = Vec::with_capacity(s);
    let mut start = 0;
    for i in 0..s {
        let size = c / s + usize::from(i < c % s);
        let mut group = shuffled[start..start + size].to_vec();
        group.sort_by_key(|id| participants.iter().position(|p| p == id));
        groups.push(group);
        start += size;
    }
    Ok(AggregationPlan { participants: participants.to_vec(), groups })
}

/// `(server + sum(members)) / (len + 1)`, summing in the given order.
fn mean_with_server(server: &ParameterState, members: &[&ParameterState]) -> Result<ParameterState> {
    let mut acc = server.clone();
    for m in members {
        acc.check_compatible(m)?;
        acc.zip_apply(m, |a, b| *a += b);
    }
    let scale = (members.len() + 1) as f64;
    acc.map_all(|v| *v /= scale);
    Ok(acc)
}

pub fn fedavg(server: &ParameterState, users: &[ParameterState]) -> Result<AggregateResult> {
    let members: Vec<&ParameterState> = users.iter().collect();
    Ok(AggregateResult { global_avg: mean_with_server(server, &members)?, group_avgs: Vec::new() })
}

/// `users[i]` is the state of `plan.participants[i]`.
pub fn grouping_average(server: &ParameterState, users: &[ParameterState], plan: &AggregationPlan) -> Result<AggregateResult> {
    plan.validate()?;
    if users.len() != plan.participants.len() {
        return Err(SsflError::invalid(format!(
            "{} user states for {} participants",
            users.len(),
            plan.participants.len()
        )));
    }
    if users.is_empty() {
        return Ok(AggregateResult { global_avg: server.clone(), group_avgs: Vec::new() });
    }
    let position = |id: usize| plan.participants.iter().position(|&p| p == id).expect("validated plan");
    let mut group_avgs = Vec::with_capacity(plan.groups.len());
    for group in &plan.groups {
        // Sum members in participant order so a single group reproduces
        // FedAvg bit for bit.
        let mut pos: Vec<usize> = group.iter().map(|&id| position(id)).collect();
        pos.sort_unstable();
        let members: Vec<&ParameterState> = pos.iter().map(|&p| &users[p]).collect();
        group_avgs.push(mean_with_server(server, &members)?);
    }
    let mut global = group_avgs[0].clone();
    for g in &group_avgs[1..] {
        global.zip_apply(g, |a, b| *a += b);
    }
    let s = group_avgs.len() as f64;
    global.map_all(|v| *v /= s);
    Ok(AggregateResult { global_avg: global, group_avgs })
}
