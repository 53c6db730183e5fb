//! Tape-based reverse-mode automatic differentiation.
//!
//! Ops are evaluated eagerly as they are recorded; the tape keeps every
//! node's value, so a backward pass is a single reverse sweep applying each
//! op's vector-Jacobian product. One training step owns one tape. Every op
//! result is checked for NaN/Inf at record time and rejected as an error.

use super::{dft, NumericsError, Tensor};

/// Index of a recorded node. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    /// Row-broadcast add: `[m,n] + [n]`.
    AddRow(NodeId, NodeId),
    /// Elementwise `mul * x + add`; only the slope matters going backward.
    Affine { input: NodeId, mul: f64 },
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    Clamp { input: NodeId, lo: f64, hi: f64 },
    /// Row-wise sum: `[m,n] -> [m]`.
    RowSum(NodeId),
    /// Sum of all elements -> scalar.
    Sum(NodeId),
    /// Per-row squared spectral error between two `[m, steps*channels]`
    /// batches of flattened windows (step-major layout) -> `[m]`.
    FourierSqError {
        pred: NodeId,
        target: NodeId,
        steps: usize,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recording of primitive ops in topological order.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<NodeId, NumericsError> {
        value.validate_finite(name)?;
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Record an input node (parameter or constant; gradients are available
    /// for any leaf after a backward pass).
    pub fn leaf(&mut self, value: Tensor) -> Result<NodeId, NumericsError> {
        self.push(Op::Leaf, value, "leaf")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let value = self.value(a).add(self.value(b))?;
        self.push(Op::Add(a, b), value, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let value = self.value(a).sub(self.value(b))?;
        self.push(Op::Sub(a, b), value, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let value = self.value(a).mul(self.value(b))?;
        self.push(Op::Mul(a, b), value, "mul")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), value, "matmul")
    }

    /// Broadcast-add a length-n vector to every row of an `[m,n]` tensor.
    pub fn add_row(&mut self, a: NodeId, v: NodeId) -> Result<NodeId, NumericsError> {
        let (mat, vec) = (self.value(a), self.value(v));
        let n = mat.cols();
        if vec.len() != n {
            return Err(NumericsError::ShapeMismatch {
                op: "add_row",
                lhs: mat.shape().to_vec(),
                rhs: vec.shape().to_vec(),
            });
        }
        let mut out = mat.clone();
        for row in 0..mat.rows() {
            for col in 0..n {
                out.data_mut()[row * n + col] += vec.data()[col];
            }
        }
        self.push(Op::AddRow(a, v), out, "add_row")
    }

    pub fn affine(&mut self, input: NodeId, mul: f64, add: f64) -> Result<NodeId, NumericsError> {
        let value = self.value(input).map(|x| mul * x + add);
        self.push(Op::Affine { input, mul }, value, "affine")
    }

    pub fn scale(&mut self, input: NodeId, c: f64) -> Result<NodeId, NumericsError> {
        self.affine(input, c, 0.0)
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId, NumericsError> {
        let value = self.value(input).map(|x| x.max(0.0));
        self.push(Op::Relu(input), value, "relu")
    }

    pub fn tanh(&mut self, input: NodeId) -> Result<NodeId, NumericsError> {
        let value = self.value(input).map(f64::tanh);
        self.push(Op::Tanh(input), value, "tanh")
    }

    pub fn sigmoid(&mut self, input: NodeId) -> Result<NodeId, NumericsError> {
        let value = self.value(input).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(input), value, "sigmoid")
    }

    /// Natural log; non-positive inputs surface as a NonFinite error.
    pub fn ln(&mut self, input: NodeId) -> Result<NodeId, NumericsError> {
        let value = self.value(input).map(f64::ln);
        self.push(Op::Ln(input), value, "ln")
    }

    /// Square root. The derivative at exactly zero is taken as zero (the
    /// subgradient choice that keeps perfect-fit losses from exploding).
    pub fn sqrt(&mut self, input: NodeId) -> Result<NodeId, NumericsError> {
        let value = self.value(input).map(f64::sqrt);
        self.push(Op::Sqrt(input), value, "sqrt")
    }

    /// Clamp to `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, input: NodeId, lo: f64, hi: f64) -> Result<NodeId, NumericsError> {
        let value = self.value(input).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp { input, lo, hi }, value, "clamp")
    }

    pub fn row_sum(&mut self, input: NodeId) -> Result<NodeId, NumericsError> {
        let mat = self.value(input);
        let (m, n) = (mat.rows(), mat.cols());
        let value = Tensor::from_fn(&[m], |i| mat.data()[i * n..(i + 1) * n].iter().sum());
        self.push(Op::RowSum(input), value, "row_sum")
    }

    pub fn sum(&mut self, input: NodeId) -> Result<NodeId, NumericsError> {
        let value = Tensor::scalar(self.value(input).sum());
        self.push(Op::Sum(input), value, "sum")
    }

    pub fn mean(&mut self, input: NodeId) -> Result<NodeId, NumericsError> {
        let n = self.value(input).len().max(1);
        let s = self.sum(input)?;
        self.affine(s, 1.0 / n as f64, 0.0)
    }

    pub fn square(&mut self, input: NodeId) -> Result<NodeId, NumericsError> {
        self.mul(input, input)
    }

    /// Per-row squared complex-modulus error between the spectra of two
    /// batches of flattened `[steps x channels]` windows (step-major
    /// layout); the transform runs along the time axis per channel.
    pub fn fourier_sq_error(
        &mut self,
        pred: NodeId,
        target: NodeId,
        steps: usize,
        channels: usize,
    ) -> Result<NodeId, NumericsError> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "fourier_sq_error",
                lhs: p.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        if p.cols() != steps * channels || steps == 0 {
            return Err(NumericsError::ShapeMismatch {
                op: "fourier_sq_error",
                lhs: p.shape().to_vec(),
                rhs: vec![steps, channels],
            });
        }
        let rows = p.rows();
        let mut out = vec![0.0; rows];
        let mut seq_p = vec![0.0; steps];
        let mut seq_t = vec![0.0; steps];
        for (i, o) in out.iter_mut().enumerate() {
            let row_p = &p.data()[i * steps * channels..(i + 1) * steps * channels];
            let row_t = &t.data()[i * steps * channels..(i + 1) * steps * channels];
            for c in 0..channels {
                for j in 0..steps {
                    seq_p[j] = row_p[j * channels + c];
                    seq_t[j] = row_t[j * channels + c];
                }
                let spec_p = dft(&seq_p)?;
                let spec_t = dft(&seq_t)?;
                for k in 0..steps {
                    let dr = spec_p.re[k] - spec_t.re[k];
                    let di = spec_p.im[k] - spec_t.im[k];
                    *o += dr * dr + di * di;
                }
            }
        }
        let value = Tensor::from_vec(&[rows], out)?;
        self.push(
            Op::FourierSqError { pred, target, steps },
            value,
            "fourier_sq_error",
        )
    }
}

/// Per-node gradients from one backward pass.
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the backward output w.r.t. this node; `None` means the
    /// node is disconnected from the output (gradient identically zero).
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node[id.0].as_ref()
    }

    /// Like [`Gradients::get`] but materializing the zero tensor.
    pub fn get_or_zero(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

/// Reverse sweep from a scalar output; the tape is left untouched and each
/// node is visited exactly once.
pub fn backward_gradients(tape: &Tape, output: NodeId) -> Result<Gradients, NumericsError> {
    if tape.nodes.is_empty() {
        return Err(NumericsError::EmptyTape);
    }
    let out_value = tape.value(output);
    if !out_value.is_scalar() {
        return Err(NumericsError::NonScalarOutput {
            shape: out_value.shape().to_vec(),
        });
    }

    let mut grads: Vec<Option<Tensor>> = (0..tape.nodes.len()).map(|_| None).collect();
    grads[output.0] = Some(Tensor::filled(out_value.shape(), 1.0));

    for idx in (0..=output.0).rev() {
        let Some(grad) = grads[idx].take() else {
            continue;
        };
        apply_vjp(tape, idx, &grad, &mut grads);
        grads[idx] = Some(grad);
    }

    Ok(Gradients { by_node: grads })
}

fn accumulate(slot: &mut Option<Tensor>, contribution: Tensor) {
    match slot {
        Some(existing) => {
            let summed = existing
                .add(&contribution)
                .expect("gradient shapes agree by construction");
            *existing = summed;
        }
        None => *slot = Some(contribution),
    }
}

fn apply_vjp(tape: &Tape, idx: usize, grad: &Tensor, grads: &mut [Option<Tensor>]) {
    match &tape.nodes[idx].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(&mut grads[a.0], grad.clone());
            accumulate(&mut grads[b.0], grad.clone());
        }
        Op::Sub(a, b) => {
            accumulate(&mut grads[a.0], grad.clone());
            accumulate(&mut grads[b.0], grad.scale(-1.0));
        }
        Op::Mul(a, b) => {
            let ga = grad.mul(tape.value(*b)).expect("shapes agree");
            let gb = grad.mul(tape.value(*a)).expect("shapes agree");
            accumulate(&mut grads[a.0], ga);
            accumulate(&mut grads[b.0], gb);
        }
        Op::MatMul(a, b) => {
            let ga = grad
                .matmul(&tape.value(*b).transpose())
                .expect("shapes agree");
            let gb = tape
                .value(*a)
                .transpose()
                .matmul(grad)
                .expect("shapes agree");
            accumulate(&mut grads[a.0], ga);
            accumulate(&mut grads[b.0], gb);
        }
        Op::AddRow(a, v) => {
            accumulate(&mut grads[a.0], grad.clone());
            let n = tape.value(*v).len();
            let m = grad.rows();
            let gv = Tensor::from_fn(&[n], |j| (0..m).map(|i| grad.data()[i * n + j]).sum());
            accumulate(&mut grads[v.0], gv);
        }
        Op::Affine { input, mul } => {
            accumulate(&mut grads[input.0], grad.scale(*mul));
        }
        Op::Relu(input) => {
            let x = tape.value(*input);
            let g = x
                .zip_map(grad, "relu_vjp", |x, g| if x > 0.0 { g } else { 0.0 })
                .expect("shapes agree");
            accumulate(&mut grads[input.0], g);
        }
        Op::Tanh(input) => {
            let y = &tape.nodes[idx].value;
            let g = y
                .zip_map(grad, "tanh_vjp", |y, g| g * (1.0 - y * y))
                .expect("shapes agree");
            accumulate(&mut grads[input.0], g);
        }
        Op::Sigmoid(input) => {
            let y = &tape.nodes[idx].value;
            let g = y
                .zip_map(grad, "sigmoid_vjp", |y, g| g * y * (1.0 - y))
                .expect("shapes agree");
            accumulate(&mut grads[input.0], g);
        }
        Op::Ln(input) => {
            let x = tape.value(*input);
            let g = x
                .zip_map(grad, "ln_vjp", |x, g| g / x)
                .expect("shapes agree");
            accumulate(&mut grads[input.0], g);
        }
        Op::Sqrt(input) => {
            let y = &tape.nodes[idx].value;
            let g = y
                .zip_map(grad, "sqrt_vjp", |y, g| {
                    if y > 0.0 {
                        g * 0.5 / y
                    } else {
                        0.0
                    }
                })
                .expect("shapes agree");
            accumulate(&mut grads[input.0], g);
        }
        Op::Clamp { input, lo, hi } => {
            let x = tape.value(*input);
            let g = x
                .zip_map(grad, "clamp_vjp", |x, g| {
                    if x > *lo && x < *hi {
                        g
                    } else {
                        0.0
                    }
                })
                .expect("shapes agree");
            accumulate(&mut grads[input.0], g);
        }
        Op::RowSum(input) => {
            let x = tape.value(*input);
            let (m, n) = (x.rows(), x.cols());
            let g = Tensor::from_fn(x.shape(), |i| grad.data()[i / n]);
            debug_assert_eq!(g.len(), m * n);
            accumulate(&mut grads[input.0], g);
        }
        Op::Sum(input) => {
            let x = tape.value(*input);
            let g = Tensor::filled(x.shape(), grad.scalar_value());
            accumulate(&mut grads[input.0], g);
        }
        Op::FourierSqError { pred, target, steps } => {
            // d/dp sum_k |DFT(p - t)_k|^2 = 2 * steps * (p - t), per channel,
            // scaled by the upstream per-row gradient.
            let p = tape.value(*pred);
            let t = tape.value(*target);
            let cols = p.cols();
            let scale = 2.0 * *steps as f64;
            let gp = Tensor::from_fn(p.shape(), |i| {
                let row = i / cols;
                scale * (p.data()[i] - t.data()[i]) * grad.data()[row]
            });
            let gt = gp.scale(-1.0);
            accumulate(&mut grads[pred.0], gp);
            accumulate(&mut grads[target.0], gt);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient_at_three() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0)).unwrap();
        let y = tape.square(x).unwrap();
        let grads = backward_gradients(&tape, y).unwrap();
        assert_eq!(tape.value(y).scalar_value(), 9.0);
        assert_eq!(grads.get(x).unwrap().scalar_value(), 6.0);
    }

    #[test]
    fn product_rule() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0)).unwrap();
        let y = tape.leaf(Tensor::scalar(5.0)).unwrap();
        let z = tape.mul(x, y).unwrap();
        let grads = backward_gradients(&tape, z).unwrap();
        assert_eq!(grads.get(x).unwrap().scalar_value(), 5.0);
        assert_eq!(grads.get(y).unwrap().scalar_value(), 2.0);
    }

    #[test]
    fn disconnected_leaf_has_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0)).unwrap();
        let unused = tape.leaf(Tensor::scalar(9.0)).unwrap();
        let y = tape.square(x).unwrap();
        let grads = backward_gradients(&tape, y).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(
            grads.get_or_zero(unused, &[]).scalar_value(),
            0.0,
            "disconnected gradient is zero"
        );
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2])).unwrap();
        let y = tape.relu(x).unwrap();
        assert!(matches!(
            backward_gradients(&tape, y),
            Err(NumericsError::NonScalarOutput { .. })
        ));
    }

    #[test]
    fn empty_tape_rejected() {
        let tape = Tape::new();
        assert!(matches!(
            backward_gradients(&tape, NodeId(0)),
            Err(NumericsError::EmptyTape)
        ));
    }

    #[test]
    fn nan_result_rejected_at_record_time() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(-1.0)).unwrap();
        assert!(matches!(
            tape.ln(x),
            Err(NumericsError::NonFinite { .. })
        ));
    }

    #[test]
    fn tape_reusable_after_backward() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0)).unwrap();
        let y = tape.square(x).unwrap();
        let n = tape.node_count();
        let _ = backward_gradients(&tape, y).unwrap();
        let _ = backward_gradients(&tape, y).unwrap();
        assert_eq!(tape.node_count(), n);
    }

    #[test]
    fn matmul_chain_gradient() {
        // f(W) = sum(x W), x = [1, 2]; df/dW = x^T broadcast.
        let mut tape = Tape::new();
        let x = tape
            .leaf(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        let w = tape
            .leaf(Tensor::from_vec(&[2, 3], vec![0.1; 6]).unwrap())
            .unwrap();
        let y = tape.matmul(x, w).unwrap();
        let s = tape.sum(y).unwrap();
        let grads = backward_gradients(&tape, s).unwrap();
        let gw = grads.get(w).unwrap();
        assert_eq!(gw.data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn fourier_error_zero_for_identical_rows() {
        let mut tape = Tape::new();
        let a = tape
            .leaf(Tensor::from_vec(&[1, 6], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap())
            .unwrap();
        let b = tape
            .leaf(Tensor::from_vec(&[1, 6], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap())
            .unwrap();
        let e = tape.fourier_sq_error(a, b, 3, 2).unwrap();
        assert!(tape.value(e).data()[0].abs() < 1e-18);
    }

    #[test]
    fn fourier_error_matches_parseval() {
        // For a real difference e, sum_k |DFT(e)_k|^2 == steps * sum_j e_j^2.
        let mut tape = Tape::new();
        let a = tape
            .leaf(Tensor::from_vec(&[1, 4], vec![0.5, -1.0, 2.0, 0.25]).unwrap())
            .unwrap();
        let b = tape
            .leaf(Tensor::from_vec(&[1, 4], vec![0.0, 0.0, 0.0, 0.0]).unwrap())
            .unwrap();
        let e = tape.fourier_sq_error(a, b, 4, 1).unwrap();
        let expected = 4.0 * (0.25 + 1.0 + 4.0 + 0.0625);
        assert!((tape.value(e).data()[0] - expected).abs() < 1e-9);
    }
}
