use serde::{Deserialize, Deserializer, Serialize};

use super::EnvError;
use crate::pipeline::UserDecision;

/// A binary decision that accepts `true`/`false` or `0`/`1` on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Bit(pub bool);

impl<'de> Deserialize<'de> for Bit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            B(bool),
            N(f64),
        }
        match Repr::deserialize(d)? {
            Repr::B(b) => Ok(Bit(b)),
            Repr::N(0.0) => Ok(Bit(false)),
            Repr::N(1.0) => Ok(Bit(true)),
            Repr::N(n) => Err(serde::de::Error::custom(format!(
                "binary decision must be 0 or 1, got {n}"
            ))),
        }
    }
}

/// Policy output as sent by a learner: raw bits and unconstrained
/// allocation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAction {
    pub zf: Vec<Bit>,
    pub xb: Vec<Vec<Bit>>,
    pub zb: Vec<Vec<Bit>>,
    #[serde(rename = "wB")]
    pub w_bandwidth: Vec<f64>,
    #[serde(rename = "wF")]
    pub w_gpu: Vec<f64>,
}

/// Decoded per-slot control with absolute allocations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Action {
    pub fg_on_device: Vec<bool>,
    pub bg_render: Vec<Vec<bool>>,
    pub bg_on_device: Vec<Vec<bool>>,
    pub bandwidth_hz: Vec<f64>,
    pub gpu_hz: Vec<f64>,
}

impl Action {
    pub fn users(&self) -> usize {
        self.fg_on_device.len()
    }

    pub fn decision(&self, user: usize) -> UserDecision {
        UserDecision {
            fg_on_device: self.fg_on_device[user],
            bg_render: self.bg_render[user].clone(),
            bg_on_device: self.bg_on_device[user].clone(),
        }
    }

    /// Checks shapes, binary domains and that allocations are non-negative
    /// and within the totals.
    pub fn validate(
        &self,
        users: usize,
        window: usize,
        total_bandwidth_hz: f64,
        total_gpu_hz: f64,
    ) -> Result<(), EnvError> {
        let shape = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(EnvError::ActionShape(format!("{what}: got {got}, expected {want}")))
            }
        };
        shape("z^f", self.fg_on_device.len(), users)?;
        shape("x^b rows", self.bg_render.len(), users)?;
        shape("z^b rows", self.bg_on_device.len(), users)?;
        shape("bandwidth", self.bandwidth_hz.len(), users)?;
        shape("gpu", self.gpu_hz.len(), users)?;
        for u in 0..users {
            shape("x^b row length", self.bg_render[u].len(), window)?;
            shape("z^b row length", self.bg_on_device[u].len(), window)?;
        }
        for (name, alloc, total) in [
            ("bandwidth", &self.bandwidth_hz, total_bandwidth_hz),
            ("gpu", &self.gpu_hz, total_gpu_hz),
        ] {
            if let Some(v) = alloc.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(EnvError::Allocation(format!("{name} share {v} is not a non-negative number")));
            }
            let sum: f64 = alloc.iter().sum();
            if sum > total * (1.0 + 1e-9) {
                return Err(EnvError::Allocation(format!("{name} shares sum to {sum}, total is {total}")));
            }
        }
        Ok(())
    }
}

/// Splits `total` by a softmax over `weights`. Entries at `+inf` share the
/// total equally. The result sums to `total` exactly when added in order.
pub fn simplex_split(total: f64, weights: &[f64]) -> Result<Vec<f64>, EnvError> {
    if weights.is_empty() {
        return Ok(Vec::new());
    }
    if weights.iter().any(|w| w.is_nan()) {
        return Err(EnvError::Allocation("allocation weight is NaN".into()));
    }
    let infinite = weights.iter().filter(|w| **w == f64::INFINITY).count();
    let mut out: Vec<f64> = if infinite > 0 {
        weights
            .iter()
            .map(|&w| if w == f64::INFINITY { total / infinite as f64 } else { 0.0 })
            .collect()
    } else if weights.iter().all(|w| *w == f64::NEG_INFINITY) {
        vec![total / weights.len() as f64; weights.len()]
    } else {
        let m = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = weights.iter().map(|w| (w - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| total * x / s).collect()
    };
    // The last share absorbs the rounding residual so that the in-order sum
    // is exact; if that would go negative, shave the largest other share.
    let n = out.len();
    for _ in 0..64 {
        let head: f64 = out[..n - 1].iter().sum();
        let last = total - head;
        let big = (0..n.saturating_sub(1)).max_by(|&a, &b| out[a].total_cmp(&out[b]));
        if last < 0.0 {
            let big = big.expect("n > 1 when head exceeds total");
            out[big] = (out[big] + last).max(0.0);
            continue;
        }
        out[n - 1] = last;
        // `head + last` is monotone in `last`; stepping by one ulp usually
        // lands on `total`. A tie in the rounding can skip over it, in which
        // case perturb the head and retry.
        for _ in 0..4 {
            let sum = head + out[n - 1];
            if sum < total {
                out[n - 1] = out[n - 1].next_up();
            } else if sum > total && out[n - 1] > 0.0 {
                out[n - 1] = out[n - 1].next_down();
            } else {
                break;
            }
        }
        if head + out[n - 1] == total {
            break;
        }
        if let Some(big) = big {
            out[big] = out[big].next_down();
        }
    }
    Ok(out)
}

impl RawAction {
    pub fn decode(
        &self,
        users: usize,
        window: usize,
        total_bandwidth_hz: f64,
        total_gpu_hz: f64,
    ) -> Result<Action, EnvError> {
        let bits = |v: &[Bit]| v.iter().map(|b| b.0).collect::<Vec<bool>>();
        let check = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(EnvError::ActionShape(format!("{what}: got {got}, expected {want}")))
            }
        };
        check("wB", self.w_bandwidth.len(), users)?;
        check("wF", self.w_gpu.len(), users)?;
        let action = Action {
            fg_on_device: bits(&self.zf),
            bg_render: self.xb.iter().map(|r| bits(r)).collect(),
            bg_on_device: self.zb.iter().map(|r| bits(r)).collect(),
            bandwidth_hz: simplex_split(total_bandwidth_hz, &self.w_bandwidth)?,
            gpu_hz: simplex_split(total_gpu_hz, &self.w_gpu)?,
        };
        action.validate(users, window, total_bandwidth_hz, total_gpu_hz)?;
        Ok(action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_weights_split_evenly() {
        let b = simplex_split(500e6, &[0.3; 5]).unwrap();
        for x in &b {
            assert_eq!(*x, 100e6);
        }
    }

    #[test]
    fn infinite_weight_takes_everything() {
        let b = simplex_split(500e6, &[0.0, f64::INFINITY, 3.0]).unwrap();
        assert_eq!(b, vec![0.0, 500e6, 0.0]);
        let b = simplex_split(1.0, &[f64::INFINITY, f64::INFINITY]).unwrap();
        assert_eq!(b, vec![0.5, 0.5]);
    }

    #[test]
    fn huge_finite_weight_is_stable() {
        let b = simplex_split(1e9, &[1e300, 0.0, -1e300]).unwrap();
        assert_eq!(b, vec![1e9, 0.0, 0.0]);
    }

    #[test]
    fn nan_weight_is_rejected() {
        assert!(simplex_split(1.0, &[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn bits_accept_bool_and_integer() {
        let a: RawAction = serde_json::from_str(
            r#"{"zf":[1,false],"xb":[[0,1],[true,0]],"zb":[[0,0],[1,1]],"wB":[0,0],"wF":[1,2]}"#,
        )
        .unwrap();
        let d = a.decode(2, 2, 10.0, 10.0).unwrap();
        assert_eq!(d.fg_on_device, vec![true, false]);
        assert_eq!(d.bg_render, vec![vec![false, true], vec![true, false]]);
        let bad = serde_json::from_str::<RawAction>(
            r#"{"zf":[2],"xb":[[0]],"zb":[[0]],"wB":[0],"wF":[0]}"#,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let a = RawAction {
            zf: vec![Bit(false); 2],
            xb: vec![vec![Bit(false); 3]; 2],
            zb: vec![vec![Bit(false); 2]; 2],
            w_bandwidth: vec![0.0; 2],
            w_gpu: vec![0.0; 2],
        };
        assert!(matches!(a.decode(2, 2, 1.0, 1.0), Err(EnvError::ActionShape(_))));
    }

    proptest! {
        #[test]
        fn split_lies_on_the_simplex(
            total in 1.0f64..1e12,
            w in prop::collection::vec(-300.0f64..300.0, 1..12),
        ) {
            let x = simplex_split(total, &w).unwrap();
            prop_assert!(x.iter().all(|v| *v >= 0.0));
            prop_assert_eq!(x.iter().sum::<f64>(), total);
        }
    }
}
