//! Finite-difference validation of backward rules.
//!
//! The same graph is built twice: once at `f32` for the analytic gradients,
//! and once per probe at `f64` for central differences. Arbitrary op outputs
//! are reduced to a scalar through a fixed random-weight sum so every output
//! element influences the loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{NodeId, Tape};
use super::{Scalar, Tensor};
use crate::error::Result;

/// A computation expressible at any scalar precision.
///
/// Implementors must be deterministic functions of their inputs: each
/// `build` call may run on a fresh tape.
pub trait GraphBuilder {
    fn build<S: Scalar>(&self, tape: &mut Tape<S>, inputs: &[NodeId]) -> Result<NodeId>;
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Maximum admissible relative error.
    pub tolerance: f64,
    /// Cap on probed elements per input tensor (None = every element).
    pub max_checks_per_input: Option<usize>,
    /// Seed for loss weights and probe sampling.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            tolerance: 1e-3,
            max_checks_per_input: None,
            seed: 0x9e3779b9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over probes of |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_rel_err: f64,
    pub worst_input: usize,
    pub worst_elem: usize,
    pub checked: usize,
    pub tolerance: f64,
    /// Locations of non-finite analytic or numeric gradients.
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.max_rel_err < self.tolerance
    }
}

fn eval_scalar<B: GraphBuilder>(
    builder: &B,
    inputs: &[Tensor<f64>],
    weights: &Tensor<f64>,
) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = builder.build(&mut tape, &ids)?;
    let loss = tape.weighted_sum(out, weights)?;
    Ok(tape.value(loss).item())
}

/// Compare the analytic gradients of `builder` against central finite
/// differences of the same computation evaluated at `f64`.
pub fn grad_check<B: GraphBuilder>(
    builder: &B,
    inputs: &[Tensor<f32>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    // Analytic pass at f32.
    let mut tape = Tape::<f32>::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = builder.build(&mut tape, &ids)?;
    let weights = Tensor::<f32>::from_fn(tape.value(out).shape(), |_| rng.gen_range(0.5..1.5));
    let loss = tape.weighted_sum(out, &weights)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f32>> = ids.iter().map(|&id| tape.grad_or_zeros(id)).collect();

    // Numeric probes at f64.
    let inputs64: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast::<f64>()).collect();
    let weights64 = weights.cast::<f64>();
    let h = opts.step;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_input: 0,
        worst_elem: 0,
        checked: 0,
        tolerance: opts.tolerance,
        failures: Vec::new(),
    };

    for (ti, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let probe: Vec<usize> = match opts.max_checks_per_input {
            Some(cap) if cap < n => {
                let mut idx: Vec<usize> = (0..n).collect();
                // Partial Fisher-Yates: first `cap` entries form the sample.
                for i in 0..cap {
                    let j = rng.gen_range(i..n);
                    idx.swap(i, j);
                }
                idx.truncate(cap);
                idx
            }
            _ => (0..n).collect(),
        };

        for &e in &probe {
            let a = analytic[ti].data()[e].as_f64();
            if !a.is_finite() {
                report
                    .failures
                    .push(format!("non-finite analytic gradient at input {ti} elem {e}"));
                continue;
            }
            let mut probe_inputs = inputs64.clone();
            let base = probe_inputs[ti].data()[e];
            probe_inputs[ti].data_mut()[e] = base + h;
            let lp = eval_scalar(builder, &probe_inputs, &weights64)?;
            probe_inputs[ti].data_mut()[e] = base - h;
            let lm = eval_scalar(builder, &probe_inputs, &weights64)?;
            let numeric = (lp - lm) / (2.0 * h);
            if !numeric.is_finite() {
                report
                    .failures
                    .push(format!("non-finite numeric gradient at input {ti} elem {e}"));
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_input = ti;
                report.worst_elem = e;
            }
        }
    }
    Ok(report)
}

/// Ready-made [`GraphBuilder`]s for each tape operation, shared by the unit
/// tests, the acceptance suite, and the `gradcheck` example.
pub mod builders {
    use super::*;
    use crate::tensor::tape::{BnConfig, BnMode, BnRunning};

    pub struct AddOp;
    impl GraphBuilder for AddOp {
        fn build<S: Scalar>(&self, tape: &mut Tape<S>, inputs: &[NodeId]) -> Result<NodeId> {
            tape.add(inputs[0], inputs[1])
        }
    }

    pub struct ConcatOp;
    impl GraphBuilder for ConcatOp {
        fn build<S: Scalar>(&self, tape: &mut Tape<S>, inputs: &[NodeId]) -> Result<NodeId> {
            tape.concat(inputs[0], inputs[1])
        }
    }

    /// Inputs: `[input, kernel, bias]`.
    pub struct Conv2dOp;
    impl GraphBuilder for Conv2dOp {
        fn build<S: Scalar>(&self, tape: &mut Tape<S>, inputs: &[NodeId]) -> Result<NodeId> {
            tape.conv2d(inputs[0], inputs[1], inputs[2])
        }
    }

    pub struct MaxPoolOp;
    impl GraphBuilder for MaxPoolOp {
        fn build<S: Scalar>(&self, tape: &mut Tape<S>, inputs: &[NodeId]) -> Result<NodeId> {
            tape.maxpool2d(inputs[0])
        }
    }

    pub struct UpsampleOp;
    impl GraphBuilder for UpsampleOp {
        fn build<S: Scalar>(&self, tape: &mut Tape<S>, inputs: &[NodeId]) -> Result<NodeId> {
            tape.upsample2d(inputs[0])
        }
    }

    pub struct ReluOp;
    impl GraphBuilder for ReluOp {
        fn build<S: Scalar>(&self, tape: &mut Tape<S>, inputs: &[NodeId]) -> Result<NodeId> {
            Ok(tape.relu(inputs[0]))
        }
    }

    pub struct SeluOp;
    impl GraphBuilder for SeluOp {
        fn build<S: Scalar>(&self, tape: &mut Tape<S>, inputs: &[NodeId]) -> Result<NodeId> {
            Ok(tape.selu(inputs[0]))
        }
    }

    pub struct SigmoidOp;
    impl GraphBuilder for SigmoidOp {
        fn build<S: Scalar>(&self, tape: &mut Tape<S>, inputs: &[NodeId]) -> Result<NodeId> {
            Ok(tape.sigmoid(inputs[0]))
        }
    }

    /// Inputs: `[input, gamma, beta]`; train-mode statistics, fresh running
    /// buffers per build.
    pub struct BatchNormOp;
    impl GraphBuilder for BatchNormOp {
        fn build<S: Scalar>(&self, tape: &mut Tape<S>, inputs: &[NodeId]) -> Result<NodeId> {
            let c = tape.value(inputs[0]).shape()[1];
            let mut running = BnRunning::new(c);
            tape.batchnorm(
                inputs[0],
                inputs[1],
                inputs[2],
                BnMode::Train,
                BnConfig::default(),
                &mut running,
            )
        }
    }

    pub struct GlobalAvgPoolOp;
    impl GraphBuilder for GlobalAvgPoolOp {
        fn build<S: Scalar>(&self, tape: &mut Tape<S>, inputs: &[NodeId]) -> Result<NodeId> {
            tape.global_avg_pool(inputs[0])
        }
    }

    /// Input: `[pred]`; the binary target is a constant of the builder.
    pub struct CompositeLossOp {
        pub target: Tensor<f32>,
        pub lambda: f64,
        pub epsilon: f64,
        pub clamp: f64,
    }
    impl GraphBuilder for CompositeLossOp {
        fn build<S: Scalar>(&self, tape: &mut Tape<S>, inputs: &[NodeId]) -> Result<NodeId> {
            tape.composite_loss(
                inputs[0],
                &self.target.cast::<S>(),
                S::of_f64(self.lambda),
                S::of_f64(self.epsilon),
                S::of_f64(self.clamp),
            )
        }
    }

    pub struct BceLossOp {
        pub target: Tensor<f32>,
        pub clamp: f64,
    }
    impl GraphBuilder for BceLossOp {
        fn build<S: Scalar>(&self, tape: &mut Tape<S>, inputs: &[NodeId]) -> Result<NodeId> {
            tape.bce_loss(inputs[0], &self.target.cast::<S>(), S::of_f64(self.clamp))
        }
    }
}
