//! Loss functions compared for ordinal classification.
//!
//! * [`ce_loss`]: categorical cross-entropy, which only looks at the
//!   confidence placed on the true class.
//! * [`cdw_ce_loss`]: class distance weighted cross-entropy. Every non-true
//!   class `i` contributes `-ln(1 - p_i) * |i - c|^power`, so confidence placed
//!   far from the true class `c` costs more than confidence placed nearby.
//!   It consumes the same N-logit softmax head as cross-entropy.
//! * [`corn_loss`]: the conditional ordinal baseline. An (N-1)-logit head
//!   where task `k` is a binary "label > k" classifier trained only on
//!   samples with label >= k.
//!
//! All losses take raw logits and return gradients with respect to them.

use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{
    clamped_log1m, log_sum_exp, shifted_exp, sigmoid, softplus, Mat2, OrdinalDistribution,
    DEFAULT_LOG_EPS,
};

/// Index of a class in `0..N`.
pub type ClassIndex = usize;

/// Exponent applied to the class distance in CDW-CE. Always positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PowerTerm(f64);

impl PowerTerm {
    pub fn new(power: f64) -> Result<Self> {
        if power.is_finite() && power > 0.0 {
            Ok(Self(power))
        } else {
            Err(Error::invalid(format!("power must be positive, got {power}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `|i - c|^power`.
    pub fn weight(self, i: usize, c: usize) -> f64 {
        (i.abs_diff(c) as f64).powf(self.0)
    }
}

impl TryFrom<f64> for PowerTerm {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        PowerTerm::new(value)
    }
}

impl From<PowerTerm> for f64 {
    fn from(p: PowerTerm) -> f64 {
        p.0
    }
}

impl fmt::Display for PowerTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Loss value plus its gradient with respect to the logits of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_logits: Vec<f64>,
}

/// Mean loss over a batch and the gradient of that mean with respect to every
/// row of logits.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    pub grad_logits: Mat2,
}

fn check_target(n: usize, target: ClassIndex) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 logits, got {n}")));
    }
    if target >= n {
        return Err(Error::invalid(format!(
            "target class {target} out of range for {n} classes"
        )));
    }
    Ok(())
}

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.iter().all(|z| z.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("logits contain non-finite values"))
    }
}

/// Categorical cross-entropy `-ln softmax(z)_c`.
pub fn ce_loss(logits: &[f64], target: ClassIndex) -> Result<LossResult> {
    check_target(logits.len(), target)?;
    check_logits(logits)?;
    let value = log_sum_exp(logits) - logits[target];
    let mut grad = vec![0.0; logits.len()];
    let sum = shifted_exp(logits, &mut grad);
    grad.iter_mut().for_each(|g| *g /= sum);
    grad[target] -= 1.0;
    Ok(LossResult {
        value,
        grad_logits: grad,
    })
}

/// CDW-CE with the default `1 - p` floor of [`DEFAULT_LOG_EPS`].
pub fn cdw_ce_loss(logits: &[f64], target: ClassIndex, power: PowerTerm) -> Result<LossResult> {
    cdw_ce_loss_with_eps(logits, target, power, DEFAULT_LOG_EPS)
}

/// CDW-CE, `-Σ_i ln(max(1 - p_i, eps)) |i - c|^power` with `p = softmax(z)`.
///
/// With `w_i = |i - c|^power` and `g_i = w_i p_i / (1 - p_i)`, the logit
/// gradient is `g_j - p_j Σ_i g_i`. Terms whose `1 - p_i` sits on the floor are
/// constant and contribute no gradient.
pub fn cdw_ce_loss_with_eps(
    logits: &[f64],
    target: ClassIndex,
    power: PowerTerm,
    eps: f64,
) -> Result<LossResult> {
    let n = logits.len();
    check_target(n, target)?;
    check_logits(logits)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!("eps {eps} outside (0, 1)")));
    }

    let mut exps = vec![0.0; n];
    let total = shifted_exp(logits, &mut exps);

    let mut value = 0.0;
    let mut g = vec![0.0; n];
    for i in (0..n).filter(|&i| i != target) {
        let w = power.weight(i, target);
        // 1 - p_i as the mass of the other classes, which avoids cancellation
        // when p_i is close to 1.
        let rest: f64 = exps
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, e)| e)
            .sum();
        let one_minus_p = rest / total;
        if one_minus_p > eps {
            value -= w * one_minus_p.ln();
            g[i] = w * exps[i] / rest;
        } else {
            value -= w * eps.ln();
        }
    }

    let g_sum: f64 = g.iter().sum();
    let grad = g
        .iter()
        .zip(&exps)
        .map(|(gj, ej)| gj - ej / total * g_sum)
        .collect();
    Ok(LossResult {
        value,
        grad_logits: grad,
    })
}

/// Cross-entropy evaluated directly on a probability vector.
pub fn ce_value(dist: &OrdinalDistribution, target: ClassIndex) -> Result<f64> {
    check_target(dist.n_classes(), target)?;
    Ok(-dist.probs()[target].ln())
}

/// CDW-CE evaluated directly on a probability vector (no gradient).
pub fn cdw_ce_value(dist: &OrdinalDistribution, target: ClassIndex, power: PowerTerm) -> Result<f64> {
    check_target(dist.n_classes(), target)?;
    let mut value = 0.0;
    for (i, &p) in dist.probs().iter().enumerate() {
        if i != target {
            value -= clamped_log1m(p, DEFAULT_LOG_EPS)? * power.weight(i, target);
        }
    }
    Ok(value)
}

/// CORN loss over a batch of `(batch, N-1)` task logits.
///
/// Task `k` sees only samples with `label >= k` and is trained towards
/// `1{label > k}` with binary cross-entropy on `sigmoid(logit_k)`. The sum of
/// all conditional terms is divided by the number of terms. Task 0 covers the
/// whole batch, so the denominator is never zero.
pub fn corn_loss(task_logits: ArrayView2<f64>, labels: &[ClassIndex]) -> Result<BatchLoss> {
    let (batch, tasks) = task_logits.dim();
    if batch == 0 {
        return Err(Error::invalid("CORN loss needs a non-empty batch"));
    }
    if tasks == 0 {
        return Err(Error::invalid("CORN head needs at least one task logit"));
    }
    if labels.len() != batch {
        return Err(Error::invalid(format!(
            "{} labels for {batch} logit rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > tasks) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {} classes",
            tasks + 1
        )));
    }
    if task_logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::invalid("task logits contain non-finite values"));
    }

    let mut total = 0.0;
    let mut count = 0usize;
    let mut grad = Mat2::zeros((batch, tasks));
    for (r, (row, &label)) in task_logits.outer_iter().zip(labels).enumerate() {
        // Sample is in subsets S_0..=S_label (capped at the last task).
        for k in 0..=label.min(tasks - 1) {
            let z = row[k];
            let positive = label > k;
            total += if positive { softplus(-z) } else { softplus(z) };
            grad[[r, k]] = sigmoid(z) - if positive { 1.0 } else { 0.0 };
            count += 1;
        }
    }
    let scale = 1.0 / count as f64;
    grad.mapv_inplace(|g| g * scale);
    Ok(BatchLoss {
        value: total * scale,
        grad_logits: grad,
    })
}

/// Cumulative probabilities `q_k = Π_{j<=k} sigmoid(logit_j)`, i.e. `P(y > k)`.
/// Non-increasing in `k`.
pub fn corn_cumulative(task_logits: &[f64]) -> Vec<f64> {
    let mut q = 1.0;
    task_logits
        .iter()
        .map(|&z| {
            q *= sigmoid(z);
            q
        })
        .collect()
}

/// Predicted rank: the number of thresholds with `P(y > k) > 0.5`.
pub fn corn_predict(task_logits: &[f64]) -> ClassIndex {
    corn_cumulative(task_logits)
        .iter()
        .filter(|&&q| q > 0.5)
        .count()
}

/// Mean of values and elementwise mean of gradients.
pub fn batch_reduce(per_sample: &[LossResult]) -> Result<LossResult> {
    let first = per_sample
        .first()
        .ok_or_else(|| Error::invalid("cannot reduce an empty batch"))?;
    let width = first.grad_logits.len();
    if per_sample.iter().any(|r| r.grad_logits.len() != width) {
        return Err(Error::invalid("gradient lengths differ within the batch"));
    }
    let n = per_sample.len() as f64;
    let mut grad = vec![0.0; width];
    let mut value = 0.0;
    for r in per_sample {
        value += r.value;
        for (g, x) in grad.iter_mut().zip(&r.grad_logits) {
            *g += x;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(LossResult {
        value: value / n,
        grad_logits: grad,
    })
}

/// Which loss a model is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    CdwCe,
    Corn,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::CdwCe => "cdw_ce",
            LossKind::Corn => "corn",
        }
    }

    pub fn head(self) -> HeadKind {
        match self {
            LossKind::Ce | LossKind::CdwCe => HeadKind::Softmax,
            LossKind::Corn => HeadKind::Corn,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossKind::Ce),
            "cdw_ce" => Ok(LossKind::CdwCe),
            "corn" => Ok(LossKind::Corn),
            other => Err(Error::invalid(format!(
                "unknown loss '{other}' (expected ce, cdw_ce or corn)"
            ))),
        }
    }
}

/// Shape of the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// N logits fed through softmax (CE and CDW-CE).
    Softmax,
    /// N-1 conditional task logits.
    Corn,
}

impl HeadKind {
    pub fn width(self, n_classes: usize) -> usize {
        match self {
            HeadKind::Softmax => n_classes,
            HeadKind::Corn => n_classes - 1,
        }
    }

    pub fn n_classes(self, width: usize) -> usize {
        match self {
            HeadKind::Softmax => width,
            HeadKind::Corn => width + 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Softmax => "softmax",
            HeadKind::Corn => "corn",
        }
    }

    /// Decodes one row of head outputs into a class.
    pub fn predict(self, logits: &[f64]) -> ClassIndex {
        match self {
            HeadKind::Softmax => crate::numeric::argmax(logits),
            HeadKind::Corn => corn_predict(logits),
        }
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(HeadKind::Softmax),
            "corn" => Ok(HeadKind::Corn),
            other => Err(Error::invalid(format!("unknown head '{other}'"))),
        }
    }
}

/// A fully specified training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Ce,
    CdwCe(PowerTerm),
    Corn,
}

impl Objective {
    /// Builds an objective, requiring a power exactly when the loss is CDW-CE.
    pub fn new(kind: LossKind, power: Option<f64>) -> Result<Self> {
        match (kind, power) {
            (LossKind::CdwCe, Some(p)) => Ok(Objective::CdwCe(PowerTerm::new(p)?)),
            (LossKind::CdwCe, None) => Err(Error::invalid("cdw_ce requires a power")),
            (LossKind::Ce, _) => Ok(Objective::Ce),
            (LossKind::Corn, _) => Ok(Objective::Corn),
        }
    }

    pub fn kind(self) -> LossKind {
        match self {
            Objective::Ce => LossKind::Ce,
            Objective::CdwCe(_) => LossKind::CdwCe,
            Objective::Corn => LossKind::Corn,
        }
    }

    pub fn power(self) -> Option<f64> {
        match self {
            Objective::CdwCe(p) => Some(p.get()),
            _ => None,
        }
    }

    pub fn head(self) -> HeadKind {
        self.kind().head()
    }

    /// Mean loss over a batch of head outputs and its gradient per row.
    pub fn batch_loss(self, logits: ArrayView2<f64>, labels: &[ClassIndex]) -> Result<BatchLoss> {
        let per_sample = |f: &dyn Fn(&[f64], ClassIndex) -> Result<LossResult>| -> Result<BatchLoss> {
            let batch = logits.nrows();
            if batch == 0 || labels.len() != batch {
                return Err(Error::invalid(format!(
                    "{} labels for {batch} logit rows",
                    labels.len()
                )));
            }
            let mut grad = Mat2::zeros(logits.dim());
            let mut value = 0.0;
            let scale = 1.0 / batch as f64;
            for (r, (row, &label)) in logits.axis_iter(Axis(0)).zip(labels).enumerate() {
                let row = row.to_vec();
                let res = f(&row, label)?;
                value += res.value;
                for (g, x) in grad.row_mut(r).iter_mut().zip(&res.grad_logits) {
                    *g = x * scale;
                }
            }
            Ok(BatchLoss {
                value: value * scale,
                grad_logits: grad,
            })
        };
        match self {
            Objective::Ce => per_sample(&ce_loss),
            Objective::CdwCe(power) => per_sample(&|z, c| cdw_ce_loss(z, c, power)),
            Objective::Corn => corn_loss(logits, labels),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn dist(p: &[f64]) -> OrdinalDistribution {
        OrdinalDistribution::new(p.to_vec()).unwrap()
    }

    fn power(p: f64) -> PowerTerm {
        PowerTerm::new(p).unwrap()
    }

    const CASE_1: [f64; 4] = [0.6, 0.3, 0.1, 0.0];
    const CASE_2: [f64; 4] = [0.6, 0.1, 0.3, 0.0];
    const CASE_3: [f64; 4] = [0.6, 0.0, 0.1, 0.3];

    #[test]
    fn ce_on_equal_confidence_cases() {
        for case in [CASE_1, CASE_2, CASE_3] {
            assert_abs_diff_eq!(ce_value(&dist(&case), 0).unwrap(), 0.510826, epsilon = 1e-6);
        }
        assert_eq!(ce_value(&dist(&[1.0, 0.0, 0.0, 0.0]), 0).unwrap(), 0.0);
    }

    #[test]
    fn cdw_ce_on_equal_confidence_cases() {
        let p1 = power(1.0);
        assert_abs_diff_eq!(cdw_ce_value(&dist(&CASE_1), 0, p1).unwrap(), 0.567396, epsilon = 1e-6);
        assert_abs_diff_eq!(cdw_ce_value(&dist(&CASE_2), 0, p1).unwrap(), 0.818711, epsilon = 1e-6);
        assert_abs_diff_eq!(cdw_ce_value(&dist(&CASE_3), 0, p1).unwrap(), 1.280746, epsilon = 1e-6);
        assert_eq!(cdw_ce_value(&dist(&[1.0, 0.0, 0.0, 0.0]), 0, p1).unwrap(), 0.0);
    }

    #[test]
    fn ce_from_logits_matches_probabilities() {
        let logits = [0.6f64.ln(), 0.3f64.ln(), 0.1f64.ln()];
        let r = ce_loss(&logits, 0).unwrap();
        assert_abs_diff_eq!(r.value, 0.510826, epsilon = 1e-6);
        assert_abs_diff_eq!(r.grad_logits[0], -0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(r.grad_logits[1], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn confident_correct_prediction_costs_nothing() {
        let logits = [40.0, -40.0, -40.0, -40.0];
        assert!(ce_loss(&logits, 0).unwrap().value < 1e-30);
        assert!(cdw_ce_loss(&logits, 0, power(3.0)).unwrap().value < 1e-30);
    }

    #[test]
    fn cdw_ce_saturation_is_bounded() {
        // Non-true class takes all the mass: the term sits on the floor.
        let r = cdw_ce_loss(&[-50.0, 50.0], 0, power(2.0)).unwrap();
        assert_abs_diff_eq!(r.value, -(1e-7f64).ln(), epsilon = 1e-9);
        assert!(r.grad_logits.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn small_shift_off_a_dominant_neighbour_can_lower_the_cost() {
        // -ln(1 - p) is steep near p = 1, so draining a dominant neighbour
        // slightly saves more than the heavier weight two classes away adds.
        let before = [0.01, 0.96, 0.01, 0.01, 0.01];
        let after = [0.01, 0.95, 0.02, 0.01, 0.01];
        let p = power(1.0);
        assert!(cdw_ce_value(&dist(&after), 0, p).unwrap() < cdw_ce_value(&dist(&before), 0, p).unwrap());
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(ce_loss(&[0.0, 0.0], 2).is_err());
        assert!(ce_loss(&[0.0], 0).is_err());
        assert!(cdw_ce_loss(&[0.0, 0.0, 0.0], 3, power(1.0)).is_err());
        assert!(PowerTerm::new(0.0).is_err());
        assert!(PowerTerm::new(-1.0).is_err());
        assert!(PowerTerm::new(f64::NAN).is_err());
        assert!(Objective::new(LossKind::CdwCe, None).is_err());
        assert!(Objective::new(LossKind::CdwCe, Some(0.0)).is_err());
    }

    #[test]
    fn corn_loss_examples() {
        // N = 3, labels [0, 1, 2]: S_0 has 3 samples, S_1 has 2, all ln 2.
        let logits = Mat2::zeros((3, 2));
        let r = corn_loss(logits.view(), &[0, 1, 2]).unwrap();
        assert_abs_diff_eq!(r.value, 2f64.ln(), epsilon = 1e-12);
        // Label-0 sample never reaches task 1.
        assert_eq!(r.grad_logits[[0, 1]], 0.0);

        let r = corn_loss(array![[-30.0]].view(), &[0]).unwrap();
        assert!(r.value < 1e-12);
    }

    #[test]
    fn corn_binary_is_plain_bce() {
        let logits = array![[0.3], [-1.2], [2.0]];
        let labels = [1, 0, 1];
        let r = corn_loss(logits.view(), &labels).unwrap();
        let expected = (softplus(-0.3) + softplus(-1.2) + softplus(-2.0)) / 3.0;
        assert_abs_diff_eq!(r.value, expected, epsilon = 1e-14);
    }

    #[test]
    fn corn_loss_rejects_bad_batches() {
        assert!(corn_loss(Mat2::zeros((0, 2)).view(), &[]).is_err());
        assert!(corn_loss(Mat2::zeros((1, 2)).view(), &[3]).is_err());
        assert!(corn_loss(Mat2::zeros((2, 2)).view(), &[0]).is_err());
    }

    #[test]
    fn corn_predict_examples() {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let z = [logit(0.9), logit(0.9), logit(0.4)];
        let q = corn_cumulative(&z);
        assert_abs_diff_eq!(q[0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(q[1], 0.81, epsilon = 1e-12);
        assert_abs_diff_eq!(q[2], 0.324, epsilon = 1e-12);
        assert_eq!(corn_predict(&z), 2);
        assert_eq!(corn_predict(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(corn_predict(&[30.0, 30.0, 30.0]), 3);
    }

    #[test]
    fn batch_reduce_examples() {
        let r = |v: f64, g: Vec<f64>| LossResult {
            value: v,
            grad_logits: g,
        };
        assert_eq!(batch_reduce(&[r(1.0, vec![0.0])]).unwrap().value, 1.0);
        let m = batch_reduce(&[r(1.0, vec![1.0, -2.0]), r(3.0, vec![3.0, 4.0])]).unwrap();
        assert_eq!(m.value, 2.0);
        assert_eq!(m.grad_logits, vec![2.0, 1.0]);
        assert!(batch_reduce(&[]).is_err());
        assert!(batch_reduce(&[r(1.0, vec![1.0]), r(1.0, vec![1.0, 2.0])]).is_err());
    }

    #[test]
    fn ce_and_cdw_share_a_head() {
        let z = array![[0.2, -0.1, 0.4, 1.0], [1.0, 0.0, -1.0, 0.5]];
        let labels = [1, 3];
        let ce = Objective::Ce.batch_loss(z.view(), &labels).unwrap();
        let cdw = Objective::CdwCe(power(2.0)).batch_loss(z.view(), &labels).unwrap();
        assert_eq!(ce.grad_logits.dim(), cdw.grad_logits.dim());
        assert_eq!(Objective::Ce.head().width(4), Objective::CdwCe(power(2.0)).head().width(4));
        assert_eq!(Objective::Corn.head().width(4), 3);
    }

    #[test]
    fn batch_loss_matches_batch_reduce() {
        let z = array![[0.2, -0.1, 0.4], [1.0, 0.0, -1.0]];
        let labels = [2, 0];
        let obj = Objective::CdwCe(power(3.0));
        let batched = obj.batch_loss(z.view(), &labels).unwrap();
        let singles: Vec<_> = (0..2)
            .map(|r| cdw_ce_loss(&z.row(r).to_vec(), labels[r], power(3.0)).unwrap())
            .collect();
        let reduced = batch_reduce(&singles).unwrap();
        assert_abs_diff_eq!(batched.value, reduced.value, epsilon = 1e-15);
    }

    #[test]
    fn loss_kind_parses() {
        for k in [LossKind::Ce, LossKind::CdwCe, LossKind::Corn] {
            assert_eq!(k.as_str().parse::<LossKind>().unwrap(), k);
        }
        assert!("mse".parse::<LossKind>().is_err());
    }

    fn random_dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..1.0, n).prop_map(|w| {
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn equal_ce_cases_keep_distance_order(p in 1.0f64..10.0) {
            let p = power(p);
            let c1 = cdw_ce_value(&dist(&CASE_1), 0, p).unwrap();
            let c2 = cdw_ce_value(&dist(&CASE_2), 0, p).unwrap();
            let c3 = cdw_ce_value(&dist(&CASE_3), 0, p).unwrap();
            prop_assert!(c1 < c2 && c2 < c3);
        }

        #[test]
        fn moving_mass_further_away_costs_more(
            probs in random_dist(5),
            c in 0usize..3,
            frac in 0.01f64..1.0,
            p in 0.1f64..8.0,
        ) {
            // The loss is convex in the moved mass and its slope at zero is
            // non-negative once the near class holds no more than the far one.
            let mut probs = probs;
            if probs[c + 1] > probs[c + 2] {
                probs.swap(c + 1, c + 2);
            }
            let eps = probs[c + 1] * frac;
            let mut moved = probs.clone();
            moved[c + 1] -= eps;
            moved[c + 2] += eps;
            let before = cdw_ce_value(&dist(&probs), c, power(p)).unwrap();
            let after = cdw_ce_value(&dist(&moved), c, power(p)).unwrap();
            prop_assert!(after > before, "{after} <= {before}");
        }

        #[test]
        fn swapping_near_and_far_mass_costs_more(
            probs in random_dist(5),
            c in 0usize..3,
            p in 0.1f64..8.0,
        ) {
            let (near, far) = (probs[c + 1], probs[c + 2]);
            prop_assume!((near - far).abs() > 1e-9);
            let mut closer = probs.clone();
            closer[c + 1] = near.max(far);
            closer[c + 2] = near.min(far);
            let mut further = closer.clone();
            further.swap(c + 1, c + 2);
            let lo = cdw_ce_value(&dist(&closer), c, power(p)).unwrap();
            let hi = cdw_ce_value(&dist(&further), c, power(p)).unwrap();
            prop_assert!(hi > lo);
        }

        #[test]
        fn cost_grows_with_power(
            probs in random_dist(5),
            c in 0usize..5,
            p in 0.1f64..6.0,
            dp in 0.1f64..2.0,
        ) {
            let d = dist(&probs);
            let lo = cdw_ce_value(&d, c, power(p)).unwrap();
            let hi = cdw_ce_value(&d, c, power(p + dp)).unwrap();
            prop_assert!(hi > lo);
        }

        #[test]
        fn binary_cdw_equals_ce(
            z0 in -5.0f64..5.0,
            z1 in -5.0f64..5.0,
            c in 0usize..2,
            p in 0.1f64..10.0,
        ) {
            let z = [z0, z1];
            let ce = ce_loss(&z, c).unwrap();
            let cdw = cdw_ce_loss(&z, c, power(p)).unwrap();
            prop_assert!((ce.value - cdw.value).abs() < 1e-12);
        }

        #[test]
        fn corn_cumulative_non_increasing(z in proptest::collection::vec(-40.0f64..40.0, 1..10)) {
            let q = corn_cumulative(&z);
            for w in q.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }
    }
}
