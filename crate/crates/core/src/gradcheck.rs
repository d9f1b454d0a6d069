//! Central finite-difference oracle for every differentiable op and for
//! the full joint loss on a tiny network. The oracle side evaluates the
//! forward computation only; it never touches the backward rules it
//! checks.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::loss::{joint_loss, ConsistencyTarget};
use crate::network::{LayerSpec, Network, ParamBinding};
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub cases: usize,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

/// Central differences of a scalar function over every element of every
/// input tensor, compared against the supplied analytic gradients.
fn fd_compare(
    inputs: &mut [Tensor<f64>],
    forward: &mut dyn FnMut(&[Tensor<f64>]) -> f64,
    analytic: &[Tensor<f64>],
) -> f64 {
    let mut worst = 0.0f64;
    for ti in 0..inputs.len() {
        for j in 0..inputs[ti].len() {
            let orig = inputs[ti].data()[j];
            inputs[ti].data_mut()[j] = orig + FD_STEP;
            let plus = forward(inputs);
            inputs[ti].data_mut()[j] = orig - FD_STEP;
            let minus = forward(inputs);
            inputs[ti].data_mut()[j] = orig;
            let fd = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[ti].data()[j], fd));
        }
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Random tensor with every element at least `margin` from zero, for ops
/// with a kink at the origin.
fn rand_tensor_off_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.random_range(margin..1.0);
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Random tensor whose 2x2 pooling windows have a clear argmax.
fn rand_tensor_pool_safe(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    loop {
        let t = rand_tensor(rng, shape);
        let (h, w) = (shape[2], shape[3]);
        let mut ok = true;
        'scan: for bc in 0..shape[0] * shape[1] {
            let plane = &t.data()[bc * h * w..(bc + 1) * h * w];
            for oy in 0..h / 2 {
                for ox in 0..w / 2 {
                    let mut vals = [
                        plane[2 * oy * w + 2 * ox],
                        plane[2 * oy * w + 2 * ox + 1],
                        plane[(2 * oy + 1) * w + 2 * ox],
                        plane[(2 * oy + 1) * w + 2 * ox + 1],
                    ];
                    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    if vals[0] - vals[1] < 1e-3 {
                        ok = false;
                        break 'scan;
                    }
                }
            }
        }
        if ok {
            return t;
        }
    }
}

/// Scalar projection loss used to cover the full Jacobian of a tensor op.
struct Projection {
    coeffs: Tensor<f64>,
}

impl Projection {
    fn new(rng: &mut ChaCha8Rng, shape: &[usize]) -> Self {
        Projection { coeffs: rand_tensor(rng, shape) }
    }

    fn apply(&self, out: &Tensor<f64>) -> f64 {
        out.data().iter().zip(self.coeffs.data()).map(|(&x, &c)| x * c).sum()
    }
}

macro_rules! op_check {
    ($name:literal, $rng:expr, $cases:expr, $make_inputs:expr, $tape_loss:expr, $forward:expr) => {{
        let mut worst = 0.0f64;
        for _ in 0..$cases {
            #[allow(clippy::redundant_closure_call)]
            let mut inputs: Vec<Tensor<f64>> = ($make_inputs)($rng);
            let mut tape = Tape::new();
            let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
            #[allow(clippy::redundant_closure_call)]
            let loss = ($tape_loss)(&mut tape, &vars);
            tape.backward(loss).expect("backward");
            let analytic: Vec<Tensor<f64>> = vars
                .iter()
                .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(v).shape())))
                .collect();
            #[allow(clippy::redundant_closure_call)]
            let mut fwd = $forward;
            worst = worst.max(fd_compare(&mut inputs, &mut fwd, &analytic));
        }
        OpCheck { name: $name, max_rel_err: worst, cases: $cases }
    }};
}

/// Run the whole finite-difference suite.
pub fn run_suite(seed: u64, cases_per_op: usize) -> Vec<OpCheck> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();

    // conv2d: gradients w.r.t. input and weight
    {
        let proj = core::cell::RefCell::new(Projection::new(rng, &[2, 3, 4, 4]));
        results.push(op_check!(
            "conv2d",
            rng,
            cases_per_op,
            |r: &mut ChaCha8Rng| {
                *proj.borrow_mut() = Projection::new(r, &[2, 3, 4, 4]);
                vec![rand_tensor(r, &[2, 2, 4, 4]), rand_tensor(r, &[3, 2, 3, 3])]
            },
            |tape: &mut Tape<f64>, vars: &[crate::tape::Var]| {
                let out = tape.conv2d(vars[0], vars[1]).unwrap();
                tape.dot_const(out, proj.borrow().coeffs.clone()).unwrap()
            },
            |inputs: &[Tensor<f64>]| {
                let out = crate::kernels::conv2d_forward(&inputs[0], &inputs[1]).unwrap();
                proj.borrow().apply(&out)
            }
        ));
    }

    // dense
    {
        let proj = core::cell::RefCell::new(Projection::new(rng, &[3, 4]));
        results.push(op_check!(
            "dense",
            rng,
            cases_per_op,
            |r: &mut ChaCha8Rng| {
                *proj.borrow_mut() = Projection::new(r, &[3, 4]);
                vec![rand_tensor(r, &[3, 5]), rand_tensor(r, &[5, 4])]
            },
            |tape: &mut Tape<f64>, vars: &[crate::tape::Var]| {
                let out = tape.dense(vars[0], vars[1]).unwrap();
                tape.dot_const(out, proj.borrow().coeffs.clone()).unwrap()
            },
            |inputs: &[Tensor<f64>]| {
                let out = crate::kernels::dense_forward(&inputs[0], &inputs[1]).unwrap();
                proj.borrow().apply(&out)
            }
        ));
    }

    // batch_norm (train mode): input, gamma, beta
    {
        let proj = core::cell::RefCell::new(Projection::new(rng, &[3, 2, 2, 2]));
        let eps = crate::network::BN_EPS;
        results.push(op_check!(
            "batch_norm",
            rng,
            cases_per_op,
            |r: &mut ChaCha8Rng| {
                *proj.borrow_mut() = Projection::new(r, &[3, 2, 2, 2]);
                let gamma = rand_tensor_off_zero(r, &[2], 0.2);
                vec![rand_tensor(r, &[3, 2, 2, 2]), gamma, rand_tensor(r, &[2])]
            },
            |tape: &mut Tape<f64>, vars: &[crate::tape::Var]| {
                let out = tape.batch_norm(vars[0], vars[1], vars[2], eps).unwrap();
                tape.dot_const(out, proj.borrow().coeffs.clone()).unwrap()
            },
            |inputs: &[Tensor<f64>]| {
                let (out, _) =
                    crate::kernels::bn_forward_train(&inputs[0], &inputs[1], &inputs[2], eps)
                        .unwrap();
                proj.borrow().apply(&out)
            }
        ));
    }

    // relu (inputs kept off the kink)
    {
        let proj = core::cell::RefCell::new(Projection::new(rng, &[2, 6]));
        results.push(op_check!(
            "relu",
            rng,
            cases_per_op,
            |r: &mut ChaCha8Rng| {
                *proj.borrow_mut() = Projection::new(r, &[2, 6]);
                vec![rand_tensor_off_zero(r, &[2, 6], 1e-3)]
            },
            |tape: &mut Tape<f64>, vars: &[crate::tape::Var]| {
                let out = tape.relu(vars[0]);
                tape.dot_const(out, proj.borrow().coeffs.clone()).unwrap()
            },
            |inputs: &[Tensor<f64>]| {
                proj.borrow().apply(&crate::kernels::relu_forward(&inputs[0]))
            }
        ));
    }

    // max_pool2 (windows kept off ties)
    {
        let proj = core::cell::RefCell::new(Projection::new(rng, &[2, 2, 2, 2]));
        results.push(op_check!(
            "max_pool2",
            rng,
            cases_per_op,
            |r: &mut ChaCha8Rng| {
                *proj.borrow_mut() = Projection::new(r, &[2, 2, 2, 2]);
                vec![rand_tensor_pool_safe(r, &[2, 2, 4, 4])]
            },
            |tape: &mut Tape<f64>, vars: &[crate::tape::Var]| {
                let out = tape.max_pool2(vars[0]).unwrap();
                tape.dot_const(out, proj.borrow().coeffs.clone()).unwrap()
            },
            |inputs: &[Tensor<f64>]| {
                let (out, _) = crate::kernels::max_pool2_forward(&inputs[0]).unwrap();
                proj.borrow().apply(&out)
            }
        ));
    }

    // global_avg_pool
    {
        let proj = core::cell::RefCell::new(Projection::new(rng, &[2, 3]));
        results.push(op_check!(
            "global_avg_pool",
            rng,
            cases_per_op,
            |r: &mut ChaCha8Rng| {
                *proj.borrow_mut() = Projection::new(r, &[2, 3]);
                vec![rand_tensor(r, &[2, 3, 4, 4])]
            },
            |tape: &mut Tape<f64>, vars: &[crate::tape::Var]| {
                let out = tape.global_avg_pool(vars[0]).unwrap();
                tape.dot_const(out, proj.borrow().coeffs.clone()).unwrap()
            },
            |inputs: &[Tensor<f64>]| {
                let out = crate::kernels::global_avg_pool_forward(&inputs[0]).unwrap();
                proj.borrow().apply(&out)
            }
        ));
    }

    // softmax
    {
        let proj = core::cell::RefCell::new(Projection::new(rng, &[3, 4]));
        results.push(op_check!(
            "softmax",
            rng,
            cases_per_op,
            |r: &mut ChaCha8Rng| {
                *proj.borrow_mut() = Projection::new(r, &[3, 4]);
                vec![rand_tensor(r, &[3, 4])]
            },
            |tape: &mut Tape<f64>, vars: &[crate::tape::Var]| {
                let out = tape.softmax(vars[0]).unwrap();
                tape.dot_const(out, proj.borrow().coeffs.clone()).unwrap()
            },
            |inputs: &[Tensor<f64>]| {
                proj.borrow().apply(&crate::kernels::softmax_forward(&inputs[0]).unwrap())
            }
        ));
    }

    // cross_entropy w.r.t. the probability input
    {
        let targets = core::cell::RefCell::new(Tensor::<f64>::zeros(&[3, 4]));
        results.push(op_check!(
            "cross_entropy",
            rng,
            cases_per_op,
            |r: &mut ChaCha8Rng| {
                let mut t = Tensor::zeros(&[3, 4]);
                for row in 0..3 {
                    t.data_mut()[row * 4 + r.random_range(0..4)] = 1.0;
                }
                *targets.borrow_mut() = t;
                // valid probability rows, comfortably away from the clamp
                let logits = rand_tensor(r, &[3, 4]);
                vec![crate::kernels::softmax_forward(&logits).unwrap()]
            },
            |tape: &mut Tape<f64>, vars: &[crate::tape::Var]| {
                tape.cross_entropy(targets.borrow().clone(), vars[0]).unwrap()
            },
            |inputs: &[Tensor<f64>]| {
                crate::kernels::cross_entropy_forward(&targets.borrow(), &inputs[0]).unwrap()
            }
        ));
    }

    // mse (both sides)
    results.push(op_check!(
        "consistency_mse",
        rng,
        cases_per_op,
        |r: &mut ChaCha8Rng| vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[3, 4])],
        |tape: &mut Tape<f64>, vars: &[crate::tape::Var]| {
            tape.mse_loss(vars[0], vars[1]).unwrap()
        },
        |inputs: &[Tensor<f64>]| {
            crate::kernels::mse_forward(&inputs[0], &inputs[1]).unwrap()
        }
    ));

    results.push(check_joint_loss(rng, cases_per_op));
    results
}

/// Full joint objective on a tiny 2-conv network with 8x8 inputs,
/// differentiated w.r.t. every network parameter.
fn check_joint_loss(rng: &mut ChaCha8Rng, cases: usize) -> OpCheck {
    use LayerSpec::*;
    let spec = vec![
        Conv { in_ch: 1, out_ch: 2 },
        BnReluConv { in_ch: 2, out_ch: 3 },
        MaxPool,
        GlobalAvgPool,
        Dense { in_features: 3, out: 2 },
    ];
    let mut worst = 0.0f64;
    let mut net_seed = 1000u64;
    for _ in 0..cases {
        // resample until the recorded graph is comfortably away from every
        // relu / pooling kink; finite differences are meaningless across one
        let (mut net, images, targets, v1, v2, tape, binding) = loop {
            net_seed += 1;
            let mut net = Network::<f64>::from_spec(spec.clone(), net_seed);
            let images = rand_tensor(rng, &[3, 1, 8, 8]);
            let mut targets = Tensor::zeros(&[3, 2]);
            for row in 0..3 {
                targets.data_mut()[row * 2 + rng.random_range(0..2)] = 1.0;
            }
            let v1 = rand_tensor(rng, &[3, 1, 8, 8]);
            let v2 = rand_tensor(rng, &[3, 1, 8, 8]);
            let mut tape = Tape::new();
            let mut binding = ParamBinding::new();
            let (loss, _) = joint_loss(
                &mut net,
                &mut tape,
                images.clone(),
                targets.clone(),
                Some((v1.clone(), v2.clone())),
                1.0,
                ConsistencyTarget::Probabilities,
                &mut binding,
            )
            .expect("joint loss");
            if tape.kink_margin() > 1e-3 {
                tape.backward(loss).expect("backward");
                break (net, images, targets, v1, v2, tape, binding);
            }
        };
        let alpha = 1.0;
        let ids = net.param_ids();
        let _ = &mut net;
        let analytic: Vec<Tensor<f64>> = ids
            .iter()
            .map(|&id| {
                let var = binding.var(id).expect("bound param");
                tape.grad(var).cloned().unwrap_or_else(|| Tensor::zeros(net.param(id).shape()))
            })
            .collect();

        // finite differences through a forward-only evaluation
        let mut params: Vec<Tensor<f64>> = ids.iter().map(|&id| net.param(id).clone()).collect();
        let mut forward = |p: &[Tensor<f64>]| -> f64 {
            let mut probe = net.cast::<f64>();
            for (&id, t) in ids.iter().zip(p.iter()) {
                *probe.param_mut(id) = t.clone();
            }
            let mut tape = Tape::new();
            let mut binding = ParamBinding::new();
            let (_, parts) = joint_loss(
                &mut probe,
                &mut tape,
                images.clone(),
                targets.clone(),
                Some((v1.clone(), v2.clone())),
                alpha,
                ConsistencyTarget::Probabilities,
                &mut binding,
            )
            .expect("joint loss forward");
            parts.total
        };
        worst = worst.max(fd_compare(&mut params, &mut forward, &analytic));
    }
    OpCheck { name: "joint_loss", max_rel_err: worst, cases }
}

/// One "name: err (PASS/FAIL)" line per op.
pub fn format_results(results: &[OpCheck]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "{:<16} cases={:<4} max_rel_err={:.3e}  {}\n",
            r.name,
            r.cases,
            r.max_rel_err,
            if r.passed() { "PASS" } else { "FAIL" }
        ));
    }
    out
}
