//! Deterministic desk-scale simulator for semi-supervised federated learning.
//!
//! Labeled data lives only at the server; users hold unlabeled, class-skewed
//! data. The crate covers the whole pipeline: non-iid data synthesis
//! ([`partitioner`]), small networks with hand-derived gradients
//! ([`model`]), weak/strong augmentation ([`augment`]), the semi-supervised
//! objectives ([`losses`]), FedAvg and grouping-based averaging
//! ([`aggregation`]), gradient-diversity metrics ([`diversity`]) and the round
//! loop tying them together ([`orchestrator`]).

pub mod aggregation;
pub mod augment;
pub mod config;
pub mod dataset;
pub mod diversity;
pub mod error;
pub mod losses;
pub mod model;
pub mod orchestrator;
pub mod partitioner;
pub mod rng;
pub mod runlog;


pub use aggregation::{fedavg, grouping_average, make_groups, sample_participants, AggregateResult, AggregationPlan};
pub use augment::{strong_augment, weak_augment, AugmentConfig};
pub use config::{Averaging, ExperimentConfig, Objective};
pub use dataset::{load_dataset, DataSplits, Dataset, DatasetSource};
pub use diversity::{diversity, diversity_report, DiversityValue, DiversityVariant, GradientKind, GradientSet, NormOrder};
pub use error::{Result, SsflError};
pub use losses::LossOutput;
pub use model::{cosine_lr, sgd_step, Architecture, InputShape, LrSchedule, Mode, Model, ModelSpec, NormKind, OptimizerConfig, ParameterState};
pub use orchestrator::{evaluate, run_experiment, ExperimentOutput, RoundRecord, RunOptions, Simulator};
pub use partitioner::{compute_noniid_r, synthesize_assignment, Assignment, AssignmentPlan, ClassDistribution};
