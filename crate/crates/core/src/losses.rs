//! Loss terms and the composite minimax objectives.
//!
//! The two player groups optimize opposing targets built from the same
//! forward pass: M1 (encoder, predictor, decoder) minimizes
//! `j_m1 = alpha*l_pred + beta*l_dec - gamma*(l_dis1 + l_dis2)` while M2
//! (the disentanglers) minimizes `j_m2 = l_dis1 + l_dis2`, i.e. each
//! disentangler improves its own prediction of the opposite embedding and
//! the encoder is rewarded for defeating them.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};

/// Loss weights `alpha` (prediction), `beta` (reconstruction) and `gamma`
/// (disentanglement). The ratio `eta = alpha / beta` governs the
/// prediction-vs-reconstruction competition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
}

impl LossWeights {
    /// The operating point used in the experiments: alpha=100, beta=0.1,
    /// gamma=1.
    pub fn paper_defaults() -> Self {
        LossWeights { alpha: 100.0, beta: 0.1, gamma: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative: alpha={}, beta={}, gamma={}",
                self.alpha, self.beta, self.gamma
            )));
        }
        if self.alpha == 0.0 && self.beta == 0.0 && self.gamma == 0.0 {
            return Err(Error::Config("all loss weights are zero".into()));
        }
        Ok(())
    }

    /// `eta = alpha / beta`; infinite when `beta == 0`.
    pub fn eta(&self) -> f64 {
        if self.beta == 0.0 {
            f64::INFINITY
        } else {
            self.alpha as f64 / self.beta as f64
        }
    }
}

/// Scalar values of every loss term and both player objectives for one
/// forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_pred: f32,
    pub l_dec: f32,
    pub l_dis1: f32,
    pub l_dis2: f32,
    pub j_m1: f32,
    pub j_m2: f32,
}

impl LossBreakdown {
    pub fn all_finite(&self) -> bool {
        [self.l_pred, self.l_dec, self.l_dis1, self.l_dis2, self.j_m1, self.j_m2]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Mean categorical cross-entropy of probability rows against class labels.
pub fn l_pred(tape: &mut Tape, probs: NodeId, labels: &[u32]) -> Result<NodeId> {
    tape.cross_entropy_from_probs(probs, labels)
}

/// Mean squared reconstruction error.
pub fn l_dec(tape: &mut Tape, x_hat: NodeId, x: NodeId) -> Result<NodeId> {
    tape.mse(x_hat, x)
}

/// Disentanglement losses: `l_dis1 = MSE(e2_hat, e2)` and
/// `l_dis2 = MSE(e1_hat, e1)`. Gradients flow into both arguments (the
/// target embeddings are not detached).
pub fn l_dis(
    tape: &mut Tape,
    e2_hat: NodeId,
    e2: NodeId,
    e1_hat: NodeId,
    e1: NodeId,
) -> Result<(NodeId, NodeId)> {
    let l1 = tape.mse(e2_hat, e2)?;
    let l2 = tape.mse(e1_hat, e1)?;
    Ok((l1, l2))
}

/// Tape nodes of the individual loss terms feeding the composite.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub l_pred: Option<NodeId>,
    pub l_dec: Option<NodeId>,
    pub l_dis1: Option<NodeId>,
    pub l_dis2: Option<NodeId>,
}

/// Tape nodes of the per-player minimization targets.
#[derive(Clone, Copy, Debug)]
pub struct Objectives {
    pub j_m1: NodeId,
    /// Present only when disentanglers are in the graph.
    pub j_m2: Option<NodeId>,
}

/// Builds `j_m1` and `j_m2` on the tape from the available loss terms.
/// Absent terms contribute nothing (baselines B0/B1 simply omit them).
pub fn composite_objectives(
    tape: &mut Tape,
    terms: &LossTerms,
    weights: &LossWeights,
) -> Result<Objectives> {
    weights.validate()?;
    let mut j_m1: Option<NodeId> = None;
    let add_term = |tape: &mut Tape, acc: &mut Option<NodeId>, node| -> Result<()> {
        *acc = Some(match *acc {
            Some(prev) => tape.add(prev, node)?,
            None => node,
        });
        Ok(())
    };

    if let Some(lp) = terms.l_pred {
        let scaled = tape.scale(lp, weights.alpha)?;
        add_term(tape, &mut j_m1, scaled)?;
    }
    if let Some(ld) = terms.l_dec {
        let scaled = tape.scale(ld, weights.beta)?;
        add_term(tape, &mut j_m1, scaled)?;
    }

    let j_m2 = match (terms.l_dis1, terms.l_dis2) {
        (Some(d1), Some(d2)) => {
            let sum = tape.add(d1, d2)?;
            let negated = tape.scale(sum, -weights.gamma)?;
            add_term(tape, &mut j_m1, negated)?;
            Some(sum)
        }
        (None, None) => None,
        _ => {
            return Err(Error::Contract(
                "disentanglement losses must be supplied as a pair".into(),
            ))
        }
    };

    let j_m1 = j_m1
        .ok_or_else(|| Error::Contract("composite objective has no loss terms".into()))?;
    Ok(Objectives { j_m1, j_m2 })
}

/// Reads the scalar values of all terms into a [`LossBreakdown`].
pub fn breakdown(tape: &Tape, terms: &LossTerms, objectives: &Objectives) -> LossBreakdown {
    let get = |n: Option<NodeId>| n.map_or(0.0, |id| tape.scalar_value(id));
    LossBreakdown {
        l_pred: get(terms.l_pred),
        l_dec: get(terms.l_dec),
        l_dis1: get(terms.l_dis1),
        l_dis2: get(terms.l_dis2),
        j_m1: tape.scalar_value(objectives.j_m1),
        j_m2: get(objectives.j_m2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_terms(tape: &mut Tape, lp: f32, ld: f32, d1: f32, d2: f32) -> LossTerms {
        LossTerms {
            l_pred: Some(tape.leaf(Tensor::scalar(lp))),
            l_dec: Some(tape.leaf(Tensor::scalar(ld))),
            l_dis1: Some(tape.leaf(Tensor::scalar(d1))),
            l_dis2: Some(tape.leaf(Tensor::scalar(d2))),
        }
    }

    #[test]
    fn composite_at_paper_weights() {
        // 100*0.1 + 0.1*0.2 - 1*(0.05+0.05) = 9.92
        let mut tape = Tape::new();
        let terms = scalar_terms(&mut tape, 0.1, 0.2, 0.05, 0.05);
        let obj =
            composite_objectives(&mut tape, &terms, &LossWeights::paper_defaults()).unwrap();
        let bd = breakdown(&tape, &terms, &obj);
        assert!((bd.j_m1 - 9.92).abs() < 1e-6, "j_m1 = {}", bd.j_m1);
        assert!((bd.j_m2 - 0.1).abs() < 1e-7);
    }

    #[test]
    fn gamma_zero_drops_disentanglement_from_m1() {
        let mut tape = Tape::new();
        let terms = scalar_terms(&mut tape, 0.3, 0.7, 0.9, 1.1);
        let weights = LossWeights { alpha: 2.0, beta: 0.5, gamma: 0.0 };
        let obj = composite_objectives(&mut tape, &terms, &weights).unwrap();
        let bd = breakdown(&tape, &terms, &obj);
        assert!((bd.j_m1 - (2.0 * 0.3 + 0.5 * 0.7)).abs() < 1e-6);
        // j_m2 still tracks the disentangler losses themselves.
        assert!((bd.j_m2 - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_losses_give_zero_objectives() {
        let mut tape = Tape::new();
        let terms = scalar_terms(&mut tape, 0.0, 0.0, 0.0, 0.0);
        let obj =
            composite_objectives(&mut tape, &terms, &LossWeights::paper_defaults()).unwrap();
        let bd = breakdown(&tape, &terms, &obj);
        assert_eq!(bd.j_m1, 0.0);
        assert_eq!(bd.j_m2, 0.0);
    }

    #[test]
    fn sign_opposition_of_objective_gradients() {
        // d j_m1 / d l_dis_i = -gamma and d j_m2 / d l_dis_i = +1.
        let weights = LossWeights { alpha: 100.0, beta: 0.1, gamma: 1.5 };
        let mut tape = Tape::new();
        let terms = scalar_terms(&mut tape, 0.2, 0.4, 0.6, 0.8);
        let obj = composite_objectives(&mut tape, &terms, &weights).unwrap();
        tape.backward(obj.j_m1).unwrap();
        assert!((tape.grad(terms.l_dis1.unwrap())[0] + weights.gamma).abs() < 1e-6);
        assert!((tape.grad(terms.l_dis2.unwrap())[0] + weights.gamma).abs() < 1e-6);
        assert!((tape.grad(terms.l_pred.unwrap())[0] - weights.alpha).abs() < 1e-4);
        assert!((tape.grad(terms.l_dec.unwrap())[0] - weights.beta).abs() < 1e-6);

        tape.backward(obj.j_m2.unwrap()).unwrap();
        assert_eq!(tape.grad(terms.l_dis1.unwrap())[0], 1.0);
        assert_eq!(tape.grad(terms.l_dis2.unwrap())[0], 1.0);
        assert_eq!(tape.grad(terms.l_pred.unwrap())[0], 0.0);
    }

    #[test]
    fn l_pred_label_out_of_range_is_data_error() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::new(vec![1, 3], vec![0.2, 0.3, 0.5]).unwrap());
        assert!(matches!(l_pred(&mut tape, p, &[3]), Err(Error::Data(_))));
    }

    #[test]
    fn l_dis_closed_forms() {
        let mut tape = Tape::new();
        let e2 = tape.leaf(Tensor::new(vec![2, 2], vec![0.5, -0.5, 1.0, 0.0]).unwrap());
        let e1 = tape.leaf(Tensor::new(vec![2, 3], vec![0.1; 6]).unwrap());
        // Perfect predictions -> (0, 0).
        let (d1, d2) = l_dis(&mut tape, e2, e2, e1, e1).unwrap();
        assert_eq!(tape.scalar_value(d1), 0.0);
        assert_eq!(tape.scalar_value(d2), 0.0);
        // e2_hat = e2 + 2 -> l_dis1 = 4.
        let shifted = {
            let two = tape.leaf(Tensor::filled(vec![2, 2], 2.0));
            tape.add(e2, two).unwrap()
        };
        let (d1, _) = l_dis(&mut tape, shifted, e2, e1, e1).unwrap();
        assert!((tape.scalar_value(d1) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights { alpha: -1.0, beta: 0.1, gamma: 1.0 }.validate().is_err());
        assert!(LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0 }.validate().is_err());
        assert!(LossWeights::paper_defaults().validate().is_ok());
        assert_eq!(LossWeights { alpha: 100.0, beta: 0.0, gamma: 1.0 }.eta(), f64::INFINITY);
        assert!((LossWeights::paper_defaults().eta() - 1000.0).abs() < 1e-3);
    }
}
