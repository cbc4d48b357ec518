//! Gradient-diversity metrics.
//!
//! For a set of per-client vectors `g_k` the diversity is
//! `sum_k ||g_k||^p / ||sum_k g_k||^p`. Sixteen variants come from the
//! exponent (`p = 2` squared or `p = 1` linear), the norm (L2 or L1), whether
//! the server vector joins the set, and whether `g_k` is a full-data gradient
//! or the cumulative weight change over a round.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SsflError};
use crate::losses::{self, Objective};
use crate::model::{Mode, Model, ParameterState};

/// Denominators below this make the ratio divergent.
pub const DIVERGENCE_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormOrder {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientKind {
    FullDataGradient,
    CumulativeDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DiversityVariant {
    pub squared: bool,
    pub norm: NormOrder,
    pub include_server: bool,
    pub kind: GradientKind,
}

impl DiversityVariant {
    pub fn all() -> Vec<DiversityVariant> {
        let mut out = Vec::with_capacity(16);
        for kind in [GradientKind::FullDataGradient, GradientKind::CumulativeDelta] {
            for include_server in [false, true] {
                for norm in [NormOrder::L2, NormOrder::L1] {
                    for squared in [true, false] {
                        out.push(DiversityVariant { squared, norm, include_server, kind });
                    }
                }
            }
        }
        out
    }

    /// Stable metric name such as `div_sq_l2_users_fullgrad`.
    pub fn name(&self) -> String {
        format!(
            "div_{}_{}_{}_{}",
            if self.squared { "sq" } else { "lin" },
            match self.norm {
                NormOrder::L1 => "l1",
                NormOrder::L2 => "l2",
            },
            if self.include_server { "server" } else { "users" },
            match self.kind {
                GradientKind::FullDataGradient => "fullgrad",
                GradientKind::CumulativeDelta => "delta",
            }
        )
    }

    pub fn from_name(name: &str) -> Option<DiversityVariant> {
        Self::all().into_iter().find(|v| v.name() == name)
    }
}

/// Outcome of one metric evaluation as written to run logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DiversityValue {
    Value(f64),
    Flag(DiversityFlag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityFlag {
    /// The summed vector vanished while some member did not.
    Divergent,
    /// Every member vanished.
    Undefined,
}

impl DiversityValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            DiversityValue::Value(v) => Some(v),
            DiversityValue::Flag(_) => None,
        }
    }
}

/// One vector per participating user plus the server vector, all of the
/// same kind.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub round: usize,
    pub kind: GradientKind,
    pub users: Vec<Vec<f64>>,
    pub server: Option<Vec<f64>>,
}

fn norm(v: &[f64], order: NormOrder) -> f64 {
    match order {
        NormOrder::L1 => v.iter().map(|x| x.abs()).sum(),
        NormOrder::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
    }
}

pub fn diversity(set: &GradientSet, variant: DiversityVariant) -> Result<DiversityValue> {
    if set.kind != variant.kind {
        return Err(SsflError::invalid(format!("{} requested on a {:?} set", variant.name(), set.kind)));
    }
    let mut members: Vec<&[f64]> = set.users.iter().map(Vec::as_slice).collect();
    if variant.include_server {
        let server = set.server.as_deref().ok_or_else(|| SsflError::invalid("variant needs the server vector"))?;
        members.push(server);
    }
    let Some(first) = members.first() else {
        return Err(SsflError::invalid("diversity of an empty set"));
    };
    let len = first.len();
    if members.iter().any(|m| m.len() != len) {
        return Err(SsflError::invalid("gradient vectors differ in length"));
    }
    let power = |x: f64| if variant.squared { x * x } else { x };
    let numerator: f64 = members.iter().map(|m| power(norm(m, variant.norm))).sum();
    if numerator == 0.0 {
        return Err(SsflError::Undefined(format!("{} of all-zero vectors", variant.name())));
    }
    let mut total = vec![0.0; len];
    for m in &members {
        total.iter_mut().zip(m.iter()).for_each(|(t, v)| *t += v);
    }
    let denominator = power(norm(&total, variant.norm));
    if denominator < DIVERGENCE_FLOOR {
        return Ok(DiversityValue::Flag(DiversityFlag::Divergent));
    }
    Ok(DiversityValue::Value(numerator / denominator))
}

/// Per-round gradients feeding all sixteen variants.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundGradients {
    pub round: usize,
    pub user_fullgrad: Vec<Vec<f64>>,
    pub server_fullgrad: Vec<f64>,
    pub user_delta: Vec<Vec<f64>>,
    pub server_delta: Vec<f64>,
}

/// Evaluates every variant; undefined sets become flags instead of errors.
pub fn diversity_report(grads: &RoundGradients) -> Result<BTreeMap<String, DiversityValue>> {
    let full = GradientSet {
        round: grads.round,
        kind: GradientKind::FullDataGradient,
        users: grads.user_fullgrad.clone(),
        server: Some(grads.server_fullgrad.clone()),
    };
    let delta = GradientSet {
        round: grads.round,
        kind: GradientKind::CumulativeDelta,
        users: grads.user_delta.clone(),
        server: Some(grads.server_delta.clone()),
    };
    let mut out = BTreeMap::new();
    for variant in DiversityVariant::all() {
        let set = if variant.kind == GradientKind::FullDataGradient { &full } else { &delta };
        let value = match diversity(set, variant) {
            Ok(v) => v,
            Err(SsflError::Undefined(_)) => DiversityValue::Flag(DiversityFlag::Undefined),
            Err(e) => return Err(e),
        };
        out.insert(variant.name(), value);
    }
    Ok(out)
}

/// `after - before` over the trainable weights.
pub fn cumulative_delta(before: &ParameterState, after: &ParameterState) -> Result<Vec<f64>> {
    before.check_compatible(after)?;
    Ok(after.weights.iter().zip(&before.weights).map(|(a, b)| a - b).collect())
}

/// Gradient of the mean loss over a whole local dataset.
///
/// Evaluated in eval mode on un-augmented inputs, so batch norm uses the
/// running statistics and the result does not depend on how the data is
/// chunked. Consistency losses see the clean input as both views.
pub fn full_data_gradient(
    model: &Model,
    state: &ParameterState,
    inputs: &[f64],
    labels: &[usize],
    objective: Objective,
    threshold: f64,
) -> Result<Vec<f64>> {
    const CHUNK: usize = 256;
    let size = model.input_size();
    let classes = model.classes();
    let n = labels.len();
    if n == 0 || inputs.len() != n * size {
        return Err(SsflError::invalid("full-data gradient needs matching, non-empty inputs and labels"));
    }
    let mut grad = vec![0.0; model.param_count()];
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let (logits, cache) = model.forward_frozen(state, &inputs[start * size..end * size], end - start, Mode::Eval)?;
        let chunk_labels = &labels[start..end];
        let loss = match objective {
            Objective::SupervisedOracle => losses::server_supervised_loss(&logits, chunk_labels, classes)?,
            Objective::Crl => losses::crl_user_loss(&logits, &logits, classes, threshold)?,
            Objective::SelfTraining => losses::self_training_loss(&logits, classes, threshold)?,
        };
        if loss.active_count > 0 {
            let weight = (end - start) as f64 / n as f64;
            let dlogits: Vec<f64> = loss.logit_gradients.iter().map(|g| g * weight).collect();
            let g = model.backward(state, &cache, &dlogits)?;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        start = end;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, InputShape, ModelSpec, NormKind};
    use proptest::prelude::*;

    fn set(users: Vec<Vec<f64>>, server: Option<Vec<f64>>) -> GradientSet {
        GradientSet { round: 0, kind: GradientKind::FullDataGradient, users, server }
    }

    fn variant(squared: bool, norm: NormOrder, include_server: bool) -> DiversityVariant {
        DiversityVariant { squared, norm, include_server, kind: GradientKind::FullDataGradient }
    }

    fn value(s: &GradientSet, v: DiversityVariant) -> f64 {
        diversity(s, v).unwrap().as_f64().unwrap()
    }

    #[test]
    fn sixteen_distinct_names() {
        let names: std::collections::BTreeSet<String> = DiversityVariant::all().iter().map(|v| v.name()).collect();
        assert_eq!(names.len(), 16);
        assert!(names.contains("div_sq_l2_users_fullgrad"));
        assert!(names.contains("div_lin_l1_server_delta"));
        for v in DiversityVariant::all() {
            assert_eq!(DiversityVariant::from_name(&v.name()), Some(v));
        }
    }

    #[test]
    fn identical_vectors_give_inverse_count() {
        let g = vec![1.0, -2.0, 0.5];
        let s = set(vec![g.clone(); 4], None);
        assert!((value(&s, variant(true, NormOrder::L2, false)) - 0.25).abs() < 1e-15);
        assert!((value(&s, variant(false, NormOrder::L2, false)) - 1.0).abs() < 1e-15);
        assert!((value(&s, variant(false, NormOrder::L1, false)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_vectors_hand_values() {
        let s = set(vec![vec![1.0, 0.0], vec![0.0, 1.0]], Some(vec![1.0, 1.0]));
        assert!((value(&s, variant(true, NormOrder::L2, false)) - 1.0).abs() < 1e-15);
        assert!((value(&s, variant(false, NormOrder::L2, false)) - 2.0 / 2f64.sqrt()).abs() < 1e-15);
        // With the server: (1 + 1 + 2) / ||(2, 2)||^2 = 4 / 8.
        assert!((value(&s, variant(true, NormOrder::L2, true)) - 0.5).abs() < 1e-15);
        // L1: (1 + 1 + 2) / 4.
        assert!((value(&s, variant(false, NormOrder::L1, true)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn opposite_vectors_diverge_and_zeros_are_undefined() {
        let s = set(vec![vec![1.0, 2.0], vec![-1.0, -2.0]], None);
        assert_eq!(diversity(&s, variant(true, NormOrder::L2, false)).unwrap(), DiversityValue::Flag(DiversityFlag::Divergent));
        let z = set(vec![vec![0.0; 3]; 2], None);
        assert!(matches!(diversity(&z, variant(true, NormOrder::L2, false)), Err(SsflError::Undefined(_))));
    }

    #[test]
    fn missing_server_or_wrong_kind_rejected() {
        let s = set(vec![vec![1.0]], None);
        assert!(diversity(&s, variant(true, NormOrder::L2, true)).is_err());
        let delta = DiversityVariant { kind: GradientKind::CumulativeDelta, ..variant(true, NormOrder::L2, false) };
        assert!(diversity(&s, delta).is_err());
    }

    #[test]
    fn report_covers_all_variants_and_serializes() {
        let grads = RoundGradients {
            round: 3,
            user_fullgrad: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            server_fullgrad: vec![0.5, 0.5],
            user_delta: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            server_delta: vec![0.0, 0.0],
        };
        let report = diversity_report(&grads).unwrap();
        assert_eq!(report.len(), 16);
        assert_eq!(report["div_sq_l2_users_delta"], DiversityValue::Flag(DiversityFlag::Undefined));
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"div_sq_l2_users_delta\":\"undefined\""));
        let back: BTreeMap<String, DiversityValue> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let spec = ModelSpec {
            architecture: Architecture::Mlp { hidden: vec![6] },
            norm: NormKind::BatchNorm,
            input: InputShape::Vector { len: 3 },
            classes: 3,
        };
        let model = Model::new(spec).unwrap();
        let mut state = model.init(11);
        let n = 300;
        let inputs: Vec<f64> = (0..n * 3).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let g = full_data_gradient(&model, &state, &inputs, &labels, Objective::SupervisedOracle, 0.95).unwrap();
        let loss = |s: &ParameterState| {
            let logits = model.predict(s, &inputs, n).unwrap();
            losses::server_supervised_loss(&logits, &labels, 3).unwrap().value
        };
        let h = 1e-6;
        for i in [0, 5, 17, g.len() - 1] {
            let orig = state.weights[i];
            state.weights[i] = orig + h;
            let up = loss(&state);
            state.weights[i] = orig - h;
            let down = loss(&state);
            state.weights[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            assert!((numeric - g[i]).abs() / numeric.abs().max(g[i].abs()).max(1e-6) < 1e-5, "coord {i}");
        }
    }

    #[test]
    fn cumulative_delta_is_difference() {
        let spec = ModelSpec {
            architecture: Architecture::Mlp { hidden: vec![] },
            norm: NormKind::None,
            input: InputShape::Vector { len: 2 },
            classes: 2,
        };
        let model = Model::new(spec).unwrap();
        let a = model.init(1);
        let mut b = a.clone();
        b.weights[0] += 0.5;
        let d = cumulative_delta(&a, &b).unwrap();
        assert_eq!(d[0], 0.5);
        assert!(d[1..].iter().all(|&v| v == 0.0));
    }

    fn arb_set() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..6)
    }

    proptest! {
        #[test]
        fn squared_l2_bounded_below(users in arb_set()) {
            let k = users.len() as f64;
            let s = set(users, None);
            match diversity(&s, variant(true, NormOrder::L2, false)) {
                Ok(DiversityValue::Value(v)) => prop_assert!(v >= 1.0 / k - 1e-12),
                Ok(DiversityValue::Flag(_)) | Err(SsflError::Undefined(_)) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn linear_at_least_one(users in arb_set()) {
            let s = set(users, None);
            for n in [NormOrder::L1, NormOrder::L2] {
                if let Ok(DiversityValue::Value(v)) = diversity(&s, variant(false, n, false)) {
                    prop_assert!(v >= 1.0 - 1e-12);
                }
            }
        }

        #[test]
        fn scale_and_order_invariant(users in arb_set(), c in 0.01f64..100.0) {
            let base = set(users.clone(), None);
            let scaled = set(users.iter().map(|u| u.iter().map(|x| x * c).collect()).collect(), None);
            let mut rev = users.clone();
            rev.reverse();
            let reversed = set(rev, None);
            for v in DiversityVariant::all().into_iter().filter(|v| !v.include_server && v.kind == GradientKind::FullDataGradient) {
                if let Ok(DiversityValue::Value(a)) = diversity(&base, v) {
                    if a < 1e6 {
                        let b = diversity(&scaled, v).unwrap().as_f64().unwrap();
                        let r = diversity(&reversed, v).unwrap().as_f64().unwrap();
                        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
                        prop_assert!((a - r).abs() <= 1e-9 * a.max(1.0));
                    }
                }
            }
        }
    }
}
