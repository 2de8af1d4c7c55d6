//! Reverse-mode automatic differentiation on dynamically shaped `f64` tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value and enough saved state to run its vector-Jacobian product. Calling
//! [`Graph::backward`] walks the tape once in reverse.
//!
//! Image tensors use NHWC layout throughout. Shape errors inside an op are
//! programming errors and panic; callers validate user-facing shapes first.

mod conv;
mod ops;

pub use conv::ConvSpec;
pub use ops::softmax_rows;

use ndarray::ArrayD;

/// Dense `f64` tensor with dynamic rank.
pub type Tensor = ArrayD<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Relu6(Var),
    Reshape(Var),
    ConcatLast(Vec<Var>),
    SliceLast {
        x: Var,
        start: usize,
        len: usize,
    },
    SelectStep {
        x: Var,
        t: usize,
    },
    BroadcastSpatial(Var),
    GlobalAvgPool(Var),
    GateChannels(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        spec: ConvSpec,
        cols: Tensor,
    },
    Depthwise {
        x: Var,
        w: Var,
        spec: ConvSpec,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Tensor,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Tensor,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        inv_std: Tensor,
        xhat: Tensor,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Tensor,
        probs: Tensor,
    },
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Operation tape.
#[derive(Debug, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when no path from `v` reaches the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient (inputs, targets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient (trainable parameters).
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Reverse pass from a scalar node. Panics when `loss` is not a scalar.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.nodes[loss.0].value.len(),
            1,
            "backward needs a scalar, got shape {:?}",
            self.shape(loss)
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.nodes[loss.0].value.raw_dim()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            // only leaf gradients are kept; intermediates are dropped as the tape unwinds
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Gradients { grads }
    }

    pub(crate) fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(
            g.shape(),
            self.nodes[v.0].value.shape(),
            "gradient shape for node {}",
            v.0
        );
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }
}
