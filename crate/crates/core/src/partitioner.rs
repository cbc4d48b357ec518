//! Non-iid data synthesis and measurement.
//!
//! The server receives a class-balanced labeled subset. Every user gets a
//! *main class*; a fraction `R` of the main class's remaining stock is split
//! among the users that share it, and the remaining `1 - R` is spread over all
//! classes in proportion to the global residual distribution `q`. Under this
//! construction any two users with different main classes sit at total
//! variation distance exactly `R` from each other.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsflError};
use crate::rng::{self, Purpose};

/// Seed used for partitioning when the config does not override it.
pub const DEFAULT_PARTITION_SEED: u64 = 2019;

const SUM_TOLERANCE: f64 = 1e-9;

/// Per-class fractions of a user's (or the server's) data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.len() < 2 {
            return Err(SsflError::invalid("a class distribution needs at least two classes"));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(SsflError::invalid("class probabilities must be finite and non-negative"));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(SsflError::invalid(format!("class probabilities sum to {sum}, not 1")));
        }
        Ok(Self(probabilities))
    }

    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(SsflError::invalid("cannot form a distribution from zero samples"));
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        Self::new(vec![1.0 / classes as f64; classes])
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Half the L1 distance, i.e. the total variation distance.
    pub fn total_variation(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0
    }
}

/// Mean pairwise total-variation distance between user class distributions.
pub fn compute_noniid_r(histograms: &[ClassDistribution]) -> Result<f64> {
    let k = histograms.len();
    if k < 2 {
        return Err(SsflError::invalid(format!("non-iid level needs at least two users, got {k}")));
    }
    let d = histograms[0].classes();
    if histograms.iter().any(|h| h.classes() != d) {
        return Err(SsflError::invalid("histograms have mismatched class counts"));
    }
    let mut total = 0.0;
    for a in 0..k {
        for b in a + 1..k {
            total += histograms[a].total_variation(&histograms[b]);
        }
    }
    let pairs = (k * (k - 1) / 2) as f64;
    Ok((total / pairs).clamp(0.0, 1.0))
}

/// Expected class distribution of a user whose main class is `main_class`.
pub fn expected_user_distribution(q: &ClassDistribution, r: f64, main_class: usize) -> Result<ClassDistribution> {
    check_fraction(r)?;
    if main_class >= q.classes() {
        return Err(SsflError::invalid(format!(
            "main class {main_class} out of range for {} classes",
            q.classes()
        )));
    }
    let probs = q
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &qi)| if i == main_class { r + qi * (1.0 - r) } else { qi * (1.0 - r) })
        .collect();
    ClassDistribution::new(probs)
}

fn check_fraction(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(SsflError::invalid(format!("non-iid level {r} outside [0, 1]")));
    }
    Ok(())
}

/// Inputs of the assignment procedure once the server share is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentPlan {
    pub classes: usize,
    /// Per-class samples left for users after the server allocation (`n_j`).
    pub remaining: Vec<usize>,
    /// Number of users whose main class is `j` (`m_j`).
    pub users_per_class: Vec<usize>,
    /// Target non-iid level `R`.
    pub noniid: f64,
    /// Total labeled samples at the server (`N_s`).
    pub server_samples: usize,
}

impl AssignmentPlan {
    /// Builds a plan from the per-class sample counts of a labeled pool,
    /// spreading the users over classes round-robin.
    pub fn new(class_counts: &[usize], users: usize, noniid: f64, server_samples: usize) -> Result<Self> {
        let d = class_counts.len();
        if d < 2 {
            return Err(SsflError::invalid("need at least two classes"));
        }
        if users == 0 {
            return Err(SsflError::invalid("need at least one user"));
        }
        let mut remaining = Vec::with_capacity(d);
        for (class, &count) in class_counts.iter().enumerate() {
            let share = server_share(server_samples, d, class);
            if share > count {
                return Err(SsflError::Capacity { class, needed: share, available: count });
            }
            remaining.push(count - share);
        }
        let users_per_class = (0..d).map(|j| users / d + usize::from(j < users % d)).collect();
        Self::from_parts(remaining, users_per_class, noniid, server_samples)
    }

    pub fn from_parts(remaining: Vec<usize>, users_per_class: Vec<usize>, noniid: f64, server_samples: usize) -> Result<Self> {
        check_fraction(noniid)?;
        let classes = remaining.len();
        if classes < 2 || users_per_class.len() != classes {
            return Err(SsflError::invalid("plan vectors must cover the same number (>= 2) of classes"));
        }
        if users_per_class.iter().sum::<usize>() == 0 {
            return Err(SsflError::invalid("plan assigns no users"));
        }
        if remaining.iter().sum::<usize>() == 0 {
            return Err(SsflError::invalid("no samples left for users"));
        }
        Ok(Self { classes, remaining, users_per_class, noniid, server_samples })
    }

    pub fn users(&self) -> usize {
        self.users_per_class.iter().sum()
    }

    /// Residual global class distribution `q` after the server allocation.
    pub fn residual_distribution(&self) -> Result<ClassDistribution> {
        ClassDistribution::from_counts(&self.remaining)
    }

    /// Main class of each user, interleaving classes while they have quota.
    pub fn main_classes(&self) -> Vec<usize> {
        let mut used = vec![0; self.classes];
        let mut out = Vec::with_capacity(self.users());
        while out.len() < self.users() {
            for (j, u) in used.iter_mut().enumerate() {
                if *u < self.users_per_class[j] {
                    *u += 1;
                    out.push(j);
                }
            }
        }
        out
    }

    /// Per-user sample totals: `n_j / m_j`, with the remainder going to the
    /// first users of the class.
    pub fn user_totals(&self) -> Vec<usize> {
        let mut seen = vec![0; self.classes];
        self.main_classes()
            .into_iter()
            .map(|j| {
                let m = self.users_per_class[j];
                let total = self.remaining[j] / m + usize::from(seen[j] < self.remaining[j] % m);
                seen[j] += 1;
                total
            })
            .collect()
    }

    /// Fractional (pre-rounding) count matrix, one row per user.
    pub fn fractional_counts(&self) -> Result<Vec<Vec<f64>>> {
        let q = self.residual_distribution()?;
        self.main_classes()
            .into_iter()
            .zip(self.user_totals())
            .map(|(j, total)| {
                let p = expected_user_distribution(&q, self.noniid, j)?;
                Ok(p.as_slice().iter().map(|pi| pi * total as f64).collect())
            })
            .collect()
    }

    /// Bound on `|realized R - target R|` caused by integer rounding:
    /// `2 d m_max / N_min`.
    pub fn rounding_slack(&self) -> f64 {
        let m_max = self.users_per_class.iter().copied().max().unwrap_or(1) as f64;
        let n_min = self.user_totals().into_iter().min().unwrap_or(1).max(1) as f64;
        2.0 * self.classes as f64 * m_max / n_min
    }
}

/// Server samples drawn from `class`; the first `Ns mod d` classes take one extra.
pub fn server_share(server_samples: usize, classes: usize, class: usize) -> usize {
    server_samples / classes + usize::from(class < server_samples % classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub server_indices: Vec<usize>,
    pub user_indices: Vec<Vec<usize>>,
    pub user_histograms: Vec<ClassDistribution>,
    pub main_class: Vec<usize>,
    /// Integer per-class counts behind `user_histograms`.
    pub user_counts: Vec<Vec<usize>>,
}

impl Assignment {
    pub fn realized_noniid(&self) -> Result<f64> {
        compute_noniid_r(&self.user_histograms)
    }
}

/// Distributes sample ids to the server and users according to `plan`.
///
/// Within a class, ids are shuffled with the partition stream and handed out
/// in order: server first, then users by id.
pub fn synthesize_assignment(labels: &[usize], plan: &AssignmentPlan, seed: u64) -> Result<Assignment> {
    let d = plan.classes;
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); d];
    for (id, &label) in labels.iter().enumerate() {
        if label >= d {
            return Err(SsflError::invalid(format!("sample {id} has label {label} >= {d}")));
        }
        pools[label].push(id);
    }
    for (class, pool) in pools.iter().enumerate() {
        let needed = server_share(plan.server_samples, d, class) + plan.remaining[class];
        if pool.len() < needed {
            return Err(SsflError::Capacity { class, needed, available: pool.len() });
        }
    }

    let mut stream = rng::stream(seed, Purpose::Partition, &[]);
    for pool in pools.iter_mut() {
        pool.shuffle(&mut stream);
    }

    let mut cursor = vec![0usize; d];
    let mut server_indices = Vec::with_capacity(plan.server_samples);
    for (class, pool) in pools.iter().enumerate() {
        let share = server_share(plan.server_samples, d, class);
        server_indices.extend_from_slice(&pool[..share]);
        cursor[class] = share;
    }

    let totals = plan.user_totals();
    if let Some(k) = totals.iter().position(|&t| t == 0) {
        return Err(SsflError::invalid(format!("user {k} would receive no samples")));
    }
    let counts = integerize_counts(&plan.fractional_counts()?, &totals, &plan.remaining)?;

    let mut user_indices = Vec::with_capacity(counts.len());
    let mut user_histograms = Vec::with_capacity(counts.len());
    for row in &counts {
        let mut ids = Vec::with_capacity(row.iter().sum());
        for (class, &c) in row.iter().enumerate() {
            ids.extend_from_slice(&pools[class][cursor[class]..cursor[class] + c]);
            cursor[class] += c;
        }
        user_indices.push(ids);
        user_histograms.push(ClassDistribution::from_counts(row)?);
    }

    Ok(Assignment {
        server_indices,
        user_indices,
        user_histograms,
        main_class: plan.main_classes(),
        user_counts: counts,
    })
}

/// Largest-remainder rounding per row, ties to the lower column, followed by
/// a repair pass so that no column exceeds its `stock`.
pub fn integerize_counts(fractional: &[Vec<f64>], row_totals: &[usize], stock: &[usize]) -> Result<Vec<Vec<usize>>> {
    if fractional.len() != row_totals.len() {
        return Err(SsflError::invalid("one row total per fractional row required"));
    }
    let cols = stock.len();
    let mut out = Vec::with_capacity(fractional.len());
    for (row, &total) in fractional.iter().zip(row_totals) {
        if row.len() != cols {
            return Err(SsflError::invalid("fractional row width differs from stock length"));
        }
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SsflError::invalid("fractional counts must be finite and non-negative"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - total as f64).abs() > 1e-6 * (total as f64).max(1.0) {
            return Err(SsflError::invalid(format!("row sums to {sum}, expected {total}")));
        }
        let mut cells: Vec<usize> = row.iter().map(|v| v.floor() as usize).collect();
        let floor_sum: usize = cells.iter().sum();
        let mut order: Vec<usize> = (0..cols).collect();
        order.sort_by(|&a, &b| {
            let ra = row[a] - row[a].floor();
            let rb = row[b] - row[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &c in order.iter().take(total.saturating_sub(floor_sum)) {
            cells[c] += 1;
        }
        out.push(cells);
    }

    let demand: usize = row_totals.iter().sum();
    let supply: usize = stock.iter().sum();
    let mut col_sum: Vec<usize> = (0..cols).map(|c| out.iter().map(|r| r[c]).sum()).collect();
    if demand > supply {
        let class = (0..cols).find(|&c| col_sum[c] > stock[c]).unwrap_or(0);
        return Err(SsflError::Capacity { class, needed: col_sum[class], available: stock[class] });
    }

    while let Some(over) = (0..cols).find(|&c| col_sum[c] > stock[c]) {
        // Take back the unit that was rounded up with the least justification.
        let donor = (0..out.len())
            .filter(|&r| out[r][over] > 0)
            .min_by(|&a, &b| {
                let ea = fractional[a][over] - out[a][over] as f64;
                let eb = fractional[b][over] - out[b][over] as f64;
                ea.total_cmp(&eb).then(a.cmp(&b))
            })
            .expect("an over-subscribed column has a positive cell");
        let target = (0..cols)
            .filter(|&c| c != over && col_sum[c] < stock[c])
            .max_by(|&a, &b| {
                let da = fractional[donor][a] - out[donor][a] as f64;
                let db = fractional[donor][b] - out[donor][b] as f64;
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("total demand fits total stock");
        out[donor][over] -= 1;
        out[donor][target] += 1;
        col_sum[over] -= 1;
        col_sum[target] += 1;
    }
    Ok(out)
}
