//! Behavioral models of the non-crossbar blocks: activation circuits, the
//! residual adder and the SE channel multiplier. They operate on decoded
//! activation units.

use crate::error::{Error, Result};
use crate::reference::Activation;
use crate::tensor::Tensor;

/// Diode limiter clamping its input to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimiterSpec {
    pub lo: f64,
    pub hi: f64,
}

impl LimiterSpec {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo < hi {
            Ok(LimiterSpec { lo, hi })
        } else {
            Err(Error::Parameter(format!(
                "limiter needs lo < hi, got [{lo}, {hi}]"
            )))
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

const HSIG_OFFSET: f64 = 3.0;
const HSIG_DIVISOR: f64 = 6.0;
const HSIG_LIMITER: LimiterSpec = LimiterSpec { lo: 0.0, hi: 1.0 };

/// Summing amp adds the +3 offset, divider amp scales by 1/6, limiter clamps to [0, 1].
pub fn hard_sigmoid_circuit(x: f64) -> f64 {
    let summed = x + HSIG_OFFSET;
    let divided = summed / HSIG_DIVISOR;
    HSIG_LIMITER.apply(divided)
}

/// The hard-sigmoid chain followed by a multiplier fed with `x`.
pub fn hard_swish_circuit(x: f64) -> f64 {
    x * hard_sigmoid_circuit(x)
}

pub fn relu_circuit(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn activation_circuit(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Relu => relu_circuit(x),
        Activation::HardSigmoid => hard_sigmoid_circuit(x),
        Activation::HardSwish => hard_swish_circuit(x),
    }
}

pub fn analog_add(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "adder inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x + y).collect())
}

/// Scales channel `c` of a `(C, ...)` tensor by `s[c]`.
pub fn analog_mul(x: &Tensor, s: &[f64]) -> Result<Tensor> {
    let c = x.shape().first().copied().unwrap_or(0);
    if c != s.len() {
        return Err(Error::Input(format!(
            "multiplier got {} gates for {c} channels",
            s.len()
        )));
    }
    let plane = x.len().checked_div(c).unwrap_or(0);
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * s[i / plane])
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    #[test]
    fn hard_sigmoid_points() {
        assert_eq!(hard_sigmoid_circuit(0.0), 0.5);
        assert_eq!(hard_sigmoid_circuit(3.0), 1.0);
        assert_eq!(hard_sigmoid_circuit(-3.0), 0.0);
        assert_eq!(hard_sigmoid_circuit(1.0), 4.0 / 6.0);
    }

    #[test]
    fn hard_swish_points() {
        assert_eq!(hard_swish_circuit(3.0), 3.0);
        assert_eq!(hard_swish_circuit(-3.0), 0.0);
        assert_eq!(hard_swish_circuit(0.0), 0.0);
        assert!((hard_swish_circuit(1.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn relu_points() {
        assert_eq!(relu_circuit(-1.0), 0.0);
        assert_eq!(relu_circuit(2.0), 2.0);
        assert_eq!(relu_circuit(0.0), 0.0);
    }

    #[test]
    fn circuits_match_reference_bitwise_on_grid() {
        for i in -2000..=2000 {
            let x = i as f64 * 0.00731;
            for kind in [
                Activation::Relu,
                Activation::HardSigmoid,
                Activation::HardSwish,
            ] {
                assert_eq!(
                    activation_circuit(kind, x).to_bits(),
                    reference::activation_scalar(kind, x).to_bits(),
                    "{kind:?} at {x}"
                );
            }
        }
    }

    #[test]
    fn adder_cases() {
        assert_eq!(
            analog_add(&[1.0, 2.0], &[3.0, 4.0]).unwrap(),
            vec![4.0, 6.0]
        );
        assert_eq!(
            analog_add(&[1.5, -2.0], &[0.0, 0.0]).unwrap(),
            vec![1.5, -2.0]
        );
        assert_eq!(
            analog_add(&[1.5, -2.0], &[-1.5, 2.0]).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(analog_add(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn multiplier_cases() {
        let x = Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(analog_mul(&x, &[1.0, 1.0]).unwrap(), x);
        assert!(analog_mul(&x, &[0.0, 0.0])
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let one = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        assert_eq!(analog_mul(&one, &[0.5]).unwrap().data(), &[1.0]);
        assert!(analog_mul(&x, &[1.0]).is_err());
    }

    #[test]
    fn limiter_requires_ordered_bounds() {
        assert!(LimiterSpec::new(1.0, 1.0).is_err());
        assert_eq!(LimiterSpec::new(-1.0, 1.0).unwrap().apply(5.0), 1.0);
    }
}
