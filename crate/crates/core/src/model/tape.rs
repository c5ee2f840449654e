//! Dense row-major matrices and a reverse-mode tape over the handful of ops the network needs.

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        Mat::from_vec(rows.len(), cols, rows.iter().flatten().copied().collect())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn matmul(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.rows, "matmul inner dimension");
        let mut out = Mat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &b.data[k * b.cols..(k + 1) * b.cols];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    // self · bᵀ
    fn matmul_bt(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.cols);
        let mut out = Mat::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..b.rows {
                out.data[i * b.rows + j] = arow.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    // selfᵀ · b
    fn matmul_at(&self, b: &Mat) -> Mat {
        assert_eq!(self.rows, b.rows);
        let mut out = Mat::zeros(self.cols, b.cols);
        for r in 0..self.rows {
            let arow = self.row(r);
            let brow = b.row(r);
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        out
    }
}

pub type NodeId = usize;

#[derive(Debug)]
enum Op {
    Input,
    Param {
        offset: usize,
        trainable: bool,
    },
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Gelu(NodeId),
    Concat(NodeId, NodeId),
    MeanRows(NodeId),
    BroadcastRows(NodeId),
    Gather {
        table: NodeId,
        index: Vec<usize>,
    },
    ScaleCols(NodeId, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
}

/// Records a forward computation so it can be differentiated.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, m: Mat) -> NodeId {
        self.push(m, Op::Input)
    }

    /// A `rows × cols` parameter block starting at `offset` in the flat vector.
    pub fn param(&mut self, params: &[f64], offset: usize, rows: usize, cols: usize, trainable: bool) -> NodeId {
        let value = Mat::from_vec(rows, cols, params[offset..offset + rows * cols].to_vec());
        self.push(value, Op::Param { offset, trainable })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let b = self.value(bias);
        assert_eq!(b.rows, 1);
        let mut v = self.value(x).clone();
        assert_eq!(v.cols, b.cols);
        for i in 0..v.rows {
            for (o, &bb) in v.row_mut(i).iter_mut().zip(&b.data) {
                *o += bb;
            }
        }
        self.push(v, Op::AddBias(x, bias))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let g = &self.value(gain).data;
        let b = &self.value(bias).data;
        let (rows, cols) = (xv.rows, xv.cols);
        let mut xhat = Mat::zeros(rows, cols);
        let mut out = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let r = xv.row(i);
            let mean = r.iter().sum::<f64>() / cols as f64;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for j in 0..cols {
                let h = (r[j] - mean) * is;
                xhat.data[i * cols + j] = h;
                out.data[i * cols + j] = g[j] * h + b[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let v = Mat::from_vec(xv.rows, xv.cols, xv.data.iter().map(|&a| gelu(a)).collect());
        self.push(v, Op::Gelu(x))
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows, bv.rows, "concat rows");
        let cols = av.cols + bv.cols;
        let mut v = Mat::zeros(av.rows, cols);
        for i in 0..av.rows {
            v.row_mut(i)[..av.cols].copy_from_slice(av.row(i));
            v.row_mut(i)[av.cols..].copy_from_slice(bv.row(i));
        }
        self.push(v, Op::Concat(a, b))
    }

    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut v = Mat::zeros(1, xv.cols);
        for i in 0..xv.rows {
            for (o, &a) in v.data.iter_mut().zip(xv.row(i)) {
                *o += a;
            }
        }
        let n = xv.rows.max(1) as f64;
        v.data.iter_mut().for_each(|a| *a /= n);
        self.push(v, Op::MeanRows(x))
    }

    pub fn broadcast_rows(&mut self, x: NodeId, rows: usize) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.rows, 1);
        let mut v = Mat::zeros(rows, xv.cols);
        for i in 0..rows {
            v.row_mut(i).copy_from_slice(&xv.data);
        }
        self.push(v, Op::BroadcastRows(x))
    }

    /// Rows of `table` selected by `index`.
    pub fn gather(&mut self, table: NodeId, index: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut v = Mat::zeros(index.len(), t.cols);
        for (i, &k) in index.iter().enumerate() {
            v.row_mut(i).copy_from_slice(t.row(k));
        }
        self.push(
            v,
            Op::Gather {
                table,
                index: index.to_vec(),
            },
        )
    }

    pub fn scale_cols(&mut self, x: NodeId, factors: &[f64]) -> NodeId {
        let mut v = self.value(x).clone();
        assert_eq!(v.cols, factors.len());
        for i in 0..v.rows {
            for (o, &f) in v.row_mut(i).iter_mut().zip(factors) {
                *o *= f;
            }
        }
        self.push(v, Op::ScaleCols(x, factors.to_vec()))
    }

    /// Accumulates `∂(⟨adjoint, output⟩)/∂params` into `grad`.
    pub fn backward(&self, output: NodeId, adjoint: &Mat, grad: &mut [f64]) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::NoTape);
        }
        let out = &self.nodes[output].value;
        if (out.rows, out.cols) != (adjoint.rows, adjoint.cols) {
            return Err(Error::DimMismatch {
                expected: out.rows * out.cols,
                got: adjoint.rows * adjoint.cols,
            });
        }
        let mut grads: Vec<Option<Mat>> = (0..=output).map(|_| None).collect();
        grads[output] = Some(adjoint.clone());
        fn acc(grads: &mut [Option<Mat>], id: NodeId, g: Mat) {
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        for id in (0..=output).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::Param { offset, trainable } => {
                    if *trainable {
                        for (o, v) in grad[*offset..*offset + g.data.len()].iter_mut().zip(&g.data) {
                            *o += v;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    acc(&mut grads, *a, g.matmul_bt(bv));
                    acc(&mut grads, *b, av.matmul_at(&g));
                }
                Op::AddBias(x, bias) => {
                    let mut gb = Mat::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (o, &v) in gb.data.iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *bias, gb);
                    acc(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = &self.nodes[*gain].value.data;
                    let (rows, cols) = (g.rows, g.cols);
                    let mut ggain = Mat::zeros(1, cols);
                    let mut gbias = Mat::zeros(1, cols);
                    let mut gx = Mat::zeros(rows, cols);
                    for i in 0..rows {
                        let gr = g.row(i);
                        let hr = xhat.row(i);
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for j in 0..cols {
                            ggain.data[j] += gr[j] * hr[j];
                            gbias.data[j] += gr[j];
                            let d = gr[j] * gv[j];
                            sum_d += d;
                            sum_dh += d * hr[j];
                        }
                        let n = cols as f64;
                        for j in 0..cols {
                            let d = gr[j] * gv[j];
                            gx.data[i * cols + j] = inv_std[i] * (d - sum_d / n - hr[j] * sum_dh / n);
                        }
                    }
                    acc(&mut grads, *gain, ggain);
                    acc(&mut grads, *bias, gbias);
                    acc(&mut grads, *x, gx);
                }
                Op::Gelu(x) => {
                    let xv = &self.nodes[*x].value;
                    let data = g.data.iter().zip(&xv.data).map(|(gg, &a)| gg * gelu_grad(a)).collect();
                    acc(&mut grads, *x, Mat::from_vec(g.rows, g.cols, data));
                }
                Op::Concat(a, b) => {
                    let ac = self.nodes[*a].value.cols;
                    let bc = self.nodes[*b].value.cols;
                    let mut ga = Mat::zeros(g.rows, ac);
                    let mut gb = Mat::zeros(g.rows, bc);
                    for i in 0..g.rows {
                        ga.row_mut(i).copy_from_slice(&g.row(i)[..ac]);
                        gb.row_mut(i).copy_from_slice(&g.row(i)[ac..]);
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MeanRows(x) => {
                    let rows = self.nodes[*x].value.rows;
                    let mut gx = Mat::zeros(rows, g.cols);
                    let inv = 1.0 / rows.max(1) as f64;
                    for i in 0..rows {
                        for (o, &v) in gx.row_mut(i).iter_mut().zip(&g.data) {
                            *o = v * inv;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::BroadcastRows(x) => {
                    let mut gx = Mat::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (o, &v) in gx.data.iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Gather { table, index } => {
                    let t = &self.nodes[*table].value;
                    let mut gt = Mat::zeros(t.rows, t.cols);
                    for (i, &k) in index.iter().enumerate() {
                        for (o, &v) in gt.row_mut(k).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::ScaleCols(x, f) => {
                    let mut gx = g;
                    for i in 0..gx.rows {
                        for (o, &s) in gx.row_mut(i).iter_mut().zip(f) {
                            *o *= s;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use rand::Rng;

    fn random_mat(rng: &mut impl Rng, r: usize, c: usize) -> Mat {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    // ⟨w, f(params)⟩ for a graph exercising every op.
    fn build(tape: &mut Tape, params: &[f64]) -> NodeId {
        let x = tape.input(Mat::from_vec(3, 2, vec![0.3, -0.2, 1.1, 0.5, -0.7, 0.9]));
        let w = tape.param(params, 0, 2, 4, true);
        let b = tape.param(params, 8, 1, 4, true);
        let h = tape.matmul(x, w);
        let h = tape.add_bias(h, b);
        let g = tape.param(params, 12, 1, 4, true);
        let beta = tape.param(params, 16, 1, 4, true);
        let h = tape.layer_norm(h, g, beta);
        let h = tape.gelu(h);
        let table = tape.param(params, 20, 3, 4, true);
        let e = tape.gather(table, &[2, 0, 2]);
        let h2 = tape.add(h, e);
        let m = tape.mean_rows(h2);
        let m = tape.broadcast_rows(m, 3);
        let c = tape.concat(h2, m);
        tape.scale_cols(c, &[1.0, 2.0, 0.5, 1.0, 3.0, 1.0, 1.0, -1.0])
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = seeded_rng(61);
        let params: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let adj = random_mat(&mut rng, 3, 8);
        let mut tape = Tape::new();
        let out = build(&mut tape, &params);
        let mut grad = vec![0.0; params.len()];
        tape.backward(out, &adj, &mut grad).unwrap();
        let f = |p: &[f64]| -> f64 {
            let mut t = Tape::new();
            let o = build(&mut t, p);
            t.value(o).data.iter().zip(&adj.data).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        for k in 0..params.len() {
            let mut p = params.clone();
            p[k] += h;
            let up = f(&p);
            p[k] -= 2.0 * h;
            let down = f(&p);
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(grad[k].abs()).max(1e-7);
            assert!((fd - grad[k]).abs() / denom < 1e-6, "param {k}: {fd} vs {}", grad[k]);
        }
        // table row 1 is never gathered
        assert!(grad[24..28].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn empty_tape_has_no_backward() {
        let t = Tape::new();
        assert!(matches!(t.backward(0, &Mat::zeros(1, 1), &mut []), Err(Error::NoTape)));
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let params = vec![1.0, 2.0];
        let mut t = Tape::new();
        let p = t.param(&params, 0, 1, 2, false);
        let mut g = vec![0.0; 2];
        t.backward(p, &Mat::from_vec(1, 2, vec![1.0, 1.0]), &mut g).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = seeded_rng(62);
        let a = random_mat(&mut rng, 4, 3);
        let b = random_mat(&mut rng, 5, 3);
        let bt = Mat::from_vec(3, 5, (0..15).map(|k| b.get(k % 5, k / 5)).collect());
        let x = a.matmul_bt(&b);
        let y = a.matmul(&bt);
        for (p, q) in x.data.iter().zip(&y.data) {
            assert!((p - q).abs() < 1e-14);
        }
        let at = Mat::from_vec(3, 4, (0..12).map(|k| a.get(k % 4, k / 4)).collect());
        let c = random_mat(&mut rng, 4, 2);
        let u = a.matmul_at(&c);
        let v = at.matmul(&c);
        for (p, q) in u.data.iter().zip(&v.data) {
            assert!((p - q).abs() < 1e-14);
        }
    }
}
