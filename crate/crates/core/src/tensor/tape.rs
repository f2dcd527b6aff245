use super::{matmul_at_into, matmul_bt_into, matmul_into, sigmoid, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Binary(Binary, Var, Var),
    Affine { x: Var, scale: f64 },
    Concat { parts: Vec<Var>, axis: usize },
    SliceCols { x: Var, start: usize },
    Gather { table: Var, ids: Vec<usize> },
    Sigmoid(Var),
    Gelu(Var),
    Softmax { x: Var, axis: usize },
    Log { x: Var, floor: f64 },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Mean { x: Var, axis: usize },
    Sum(Var),
    Pick { x: Var, idx: Vec<usize> },
    ScatterCols { x: Var, ids: Vec<Option<usize>> },
    RestrictRenorm { x: Var, mask: Vec<bool>, sums: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic computation record. Build one per forward pass, call
/// [`Tape::backward`] on a scalar, then read leaf gradients.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const LN_EPS: f64 = 1e-5;
const RENORM_TINY: f64 = 1e-300;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; its gradient accumulates across backward calls.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a trainable leaf, if any backward reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.leaf_grads {
            *g = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = av.matmul(bv)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols != bv.cols {
            return Err(TensorError::Shape {
                op: "matmul_bt",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let mut out = Tensor::zeros(av.rows, bv.rows);
        matmul_bt_into(&av.data, &bv.data, &mut out.data, av.rows, av.cols, bv.rows);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulBt(a, b), rg))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let rows = broadcast_dim(av.rows, bv.rows);
        let cols = broadcast_dim(av.cols, bv.cols);
        let (Some(rows), Some(cols)) = (rows, cols) else {
            return Err(TensorError::Shape {
                op: name,
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        };
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let x = av.get(bidx(av.rows, i), bidx(av.cols, j));
                let y = bv.get(bidx(bv.rows, i), bidx(bv.cols, j));
                out.data[i * cols + j] = match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => x / y,
                };
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Binary(kind, a, b), rg))
    }

    /// Elementwise sum; either operand may broadcast along a unit dimension.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b, "div")
    }

    /// `x * scale + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            *v = *v * scale + shift;
        }
        let rg = self.rg(x);
        self.push(out, Op::Affine { x, scale }, rg)
    }

    pub fn scalar_mul(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Invalid {
            op: "concat",
            reason: "no inputs".into(),
        })?;
        let base = self.shape(first);
        let out = match axis {
            0 => {
                let mut rows = 0;
                let mut data = Vec::new();
                for &p in parts {
                    let v = self.value(p);
                    if v.cols != base[1] {
                        return Err(TensorError::Shape {
                            op: "concat",
                            lhs: base,
                            rhs: v.shape(),
                        });
                    }
                    rows += v.rows;
                    data.extend_from_slice(&v.data);
                }
                Tensor {
                    rows,
                    cols: base[1],
                    data,
                }
            }
            1 => {
                let mut cols = 0;
                for &p in parts {
                    let v = self.value(p);
                    if v.rows != base[0] {
                        return Err(TensorError::Shape {
                            op: "concat",
                            lhs: base,
                            rhs: v.shape(),
                        });
                    }
                    cols += v.cols;
                }
                let mut out = Tensor::zeros(base[0], cols);
                let mut offset = 0;
                for &p in parts {
                    let v = self.value(p);
                    for r in 0..v.rows {
                        out.data[r * cols + offset..r * cols + offset + v.cols]
                            .copy_from_slice(v.row_slice(r));
                    }
                    offset += v.cols;
                }
                out
            }
            _ => {
                return Err(TensorError::Invalid {
                    op: "concat",
                    reason: format!("axis {axis}"),
                })
            }
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let v = self.value(x);
        if start + width > v.cols {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: start + width,
                bound: v.cols,
            });
        }
        let mut out = Tensor::zeros(v.rows, width);
        for r in 0..v.rows {
            out.data[r * width..(r + 1) * width]
                .copy_from_slice(&v.row_slice(r)[start..start + width]);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceCols { x, start }, rg))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding_gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            if id >= t.rows {
                return Err(TensorError::Index {
                    op: "embedding_gather",
                    index: id,
                    bound: t.rows,
                });
            }
            out.data[r * t.cols..(r + 1) * t.cols].copy_from_slice(t.row_slice(id));
        }
        let rg = self.rg(table);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            *v = sigmoid(*v);
        }
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            let x = *v;
            *v = 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh());
        }
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Softmax along `axis` (1 normalizes each row, 0 each column).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        let mut out = v.clone();
        match axis {
            1 => {
                for r in 0..v.rows {
                    super::softmax_inplace(&mut out.data[r * v.cols..(r + 1) * v.cols]);
                }
            }
            0 => {
                let mut col = vec![0.0; v.rows];
                for c in 0..v.cols {
                    for r in 0..v.rows {
                        col[r] = v.get(r, c);
                    }
                    super::softmax_inplace(&mut col);
                    for r in 0..v.rows {
                        out.set(r, c, col[r]);
                    }
                }
            }
            _ => {
                return Err(TensorError::Invalid {
                    op: "softmax",
                    reason: format!("axis {axis}"),
                })
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax { x, axis }, rg))
    }

    /// Natural log with inputs clamped below at `floor`.
    pub fn log(&mut self, x: Var, floor: f64) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            *v = v.max(floor).ln();
        }
        let rg = self.rg(x);
        self.push(out, Op::Log { x, floor }, rg)
    }

    /// Per-row layer normalization with `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let v = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.shape() != [1, v.cols] || b.shape() != [1, v.cols] {
            return Err(TensorError::Shape {
                op: "layer_norm",
                lhs: v.shape(),
                rhs: g.shape(),
            });
        }
        let n = v.cols as f64;
        let mut out = Tensor::zeros(v.rows, v.cols);
        let mut xhat = vec![0.0; v.len()];
        let mut rstd = vec![0.0; v.rows];
        for r in 0..v.rows {
            let row = v.row_slice(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..v.cols {
                let h = (row[c] - mean) * rs;
                xhat[r * v.cols + c] = h;
                out.data[r * v.cols + c] = h * g.data[c] + b.data[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Mean along `axis`: 0 gives a `1 x n` row, 1 gives an `m x 1` column.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        let out = match axis {
            0 => {
                let mut out = Tensor::zeros(1, v.cols);
                for r in 0..v.rows {
                    for (o, x) in out.data.iter_mut().zip(v.row_slice(r)) {
                        *o += x;
                    }
                }
                out.scale_inplace(1.0 / v.rows as f64);
                out
            }
            1 => {
                let data = (0..v.rows)
                    .map(|r| v.row_slice(r).iter().sum::<f64>() / v.cols as f64)
                    .collect();
                Tensor {
                    rows: v.rows,
                    cols: 1,
                    data,
                }
            }
            _ => {
                return Err(TensorError::Invalid {
                    op: "mean",
                    reason: format!("axis {axis}"),
                })
            }
        };
        let rg = self.rg(x);
        Ok(self.push(out, Op::Mean { x, axis }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `out[i] = x[i, idx[i]]`, an `m x 1` column.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if idx.len() != v.rows {
            return Err(TensorError::Shape {
                op: "pick",
                lhs: v.shape(),
                rhs: [idx.len(), 1],
            });
        }
        let mut data = Vec::with_capacity(idx.len());
        for (r, &c) in idx.iter().enumerate() {
            if c >= v.cols {
                return Err(TensorError::Index {
                    op: "pick",
                    index: c,
                    bound: v.cols,
                });
            }
            data.push(v.get(r, c));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor {
                rows: idx.len(),
                cols: 1,
                data,
            },
            Op::Pick {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Scatter-add columns: `out[i, ids[j]] += x[i, j]`; `None` columns are dropped.
    pub fn scatter_cols(&mut self, x: Var, ids: &[Option<usize>], width: usize) -> Result<Var> {
        let v = self.value(x);
        if ids.len() != v.cols {
            return Err(TensorError::Shape {
                op: "scatter_cols",
                lhs: v.shape(),
                rhs: [1, ids.len()],
            });
        }
        let mut out = Tensor::zeros(v.rows, width);
        for (j, id) in ids.iter().enumerate() {
            let Some(id) = *id else { continue };
            if id >= width {
                return Err(TensorError::Index {
                    op: "scatter_cols",
                    index: id,
                    bound: width,
                });
            }
            for r in 0..v.rows {
                out.data[r * width + id] += v.data[r * v.cols + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::ScatterCols {
                x,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Zeroes columns outside `mask` and rescales each row to sum to one.
    /// A row with no mass inside the mask becomes uniform over the mask.
    pub fn restrict_renorm(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let v = self.value(x);
        if mask.len() != v.cols {
            return Err(TensorError::Shape {
                op: "restrict_renorm",
                lhs: v.shape(),
                rhs: [1, mask.len()],
            });
        }
        let on = mask.iter().filter(|&&m| m).count();
        if on == 0 {
            return Err(TensorError::Invalid {
                op: "restrict_renorm",
                reason: "mask selects no positions".into(),
            });
        }
        let mut out = Tensor::zeros(v.rows, v.cols);
        let mut sums = vec![0.0; v.rows];
        for r in 0..v.rows {
            let row = v.row_slice(r);
            let s: f64 = row.iter().zip(mask).filter(|(_, &m)| m).map(|(x, _)| x).sum();
            sums[r] = s;
            for c in 0..v.cols {
                if mask[c] {
                    out.data[r * v.cols + c] = if s > RENORM_TINY {
                        row[c] / s
                    } else {
                        1.0 / on as f64
                    };
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::RestrictRenorm {
                x,
                mask: mask.to_vec(),
                sums,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar. Leaf gradients are added to whatever a
    /// previous call left there.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_scaled(loss, 1.0)
    }

    /// As [`Tape::backward`] with the seed gradient set to `seed`.
    pub fn backward_scaled(&mut self, loss: Var, seed: f64) -> Result<()> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(seed));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let wants = |v: Var| nodes[v.0].requires_grad;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if wants(*a) {
                    let mut da = Tensor::zeros(av.rows, av.cols);
                    matmul_bt_into(&g.data, &bv.data, &mut da.data, g.rows, g.cols, bv.rows);
                    accum(grads, *a, da);
                }
                if wants(*b) {
                    let mut db = Tensor::zeros(bv.rows, bv.cols);
                    matmul_at_into(&av.data, &g.data, &mut db.data, av.rows, av.cols, g.cols);
                    accum(grads, *b, db);
                }
            }
            Op::MatMulBt(a, b) => {
                // out = a b^T; da = g b; db = g^T a
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if wants(*a) {
                    let mut da = Tensor::zeros(av.rows, av.cols);
                    matmul_into(&g.data, &bv.data, &mut da.data, g.rows, g.cols, bv.cols);
                    accum(grads, *a, da);
                }
                if wants(*b) {
                    let mut db = Tensor::zeros(bv.rows, bv.cols);
                    matmul_at_into(&g.data, &av.data, &mut db.data, g.rows, g.cols, av.cols);
                    accum(grads, *b, db);
                }
            }
            Op::Binary(kind, a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let mut da = wants(*a).then(|| Tensor::zeros(av.rows, av.cols));
                let mut db = wants(*b).then(|| Tensor::zeros(bv.rows, bv.cols));
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        let gi = g.data[r * g.cols + c];
                        let ai = bidx(av.rows, r) * av.cols + bidx(av.cols, c);
                        let bi = bidx(bv.rows, r) * bv.cols + bidx(bv.cols, c);
                        let (x, y) = (av.data[ai], bv.data[bi]);
                        let (dx, dy) = match kind {
                            Binary::Add => (gi, gi),
                            Binary::Sub => (gi, -gi),
                            Binary::Mul => (gi * y, gi * x),
                            Binary::Div => (gi / y, -gi * x / (y * y)),
                        };
                        if let Some(da) = da.as_mut() {
                            da.data[ai] += dx;
                        }
                        if let Some(db) = db.as_mut() {
                            db.data[bi] += dy;
                        }
                    }
                }
                if let Some(da) = da {
                    accum(grads, *a, da);
                }
                if let Some(db) = db {
                    accum(grads, *b, db);
                }
            }
            Op::Affine { x, scale } => {
                let mut dx = g.clone();
                dx.scale_inplace(*scale);
                accum(grads, *x, dx);
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for &p in parts {
                    let pv = &nodes[p.0].value;
                    if wants(p) {
                        let mut dp = Tensor::zeros(pv.rows, pv.cols);
                        if *axis == 0 {
                            dp.data.copy_from_slice(
                                &g.data[offset * g.cols..(offset + pv.rows) * g.cols],
                            );
                        } else {
                            for r in 0..pv.rows {
                                dp.data[r * pv.cols..(r + 1) * pv.cols].copy_from_slice(
                                    &g.row_slice(r)[offset..offset + pv.cols],
                                );
                            }
                        }
                        accum(grads, p, dp);
                    }
                    offset += if *axis == 0 { pv.rows } else { pv.cols };
                }
            }
            Op::SliceCols { x, start } => {
                let xv = &nodes[x.0].value;
                let mut dx = Tensor::zeros(xv.rows, xv.cols);
                for r in 0..g.rows {
                    dx.data[r * xv.cols + start..r * xv.cols + start + g.cols]
                        .copy_from_slice(g.row_slice(r));
                }
                accum(grads, *x, dx);
            }
            Op::Gather { table, ids } => {
                let tv = &nodes[table.0].value;
                let mut dt = Tensor::zeros(tv.rows, tv.cols);
                for (r, &id) in ids.iter().enumerate() {
                    for (d, gv) in dt.data[id * tv.cols..(id + 1) * tv.cols]
                        .iter_mut()
                        .zip(g.row_slice(r))
                    {
                        *d += gv;
                    }
                }
                accum(grads, *table, dt);
            }
            Op::Sigmoid(x) => {
                let mut dx = g.clone();
                for (d, y) in dx.data.iter_mut().zip(&out.data) {
                    *d *= y * (1.0 - y);
                }
                accum(grads, *x, dx);
            }
            Op::Gelu(x) => {
                let xv = &nodes[x.0].value;
                let mut dx = g.clone();
                for (d, &x) in dx.data.iter_mut().zip(&xv.data) {
                    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
                    let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                    *d *= 0.5 * (1.0 + t) + 0.5 * x * dt;
                }
                accum(grads, *x, dx);
            }
            Op::Softmax { x, axis } => {
                let mut dx = Tensor::zeros(out.rows, out.cols);
                if *axis == 1 {
                    for r in 0..out.rows {
                        let y = out.row_slice(r);
                        let gr = g.row_slice(r);
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..out.cols {
                            dx.data[r * out.cols + c] = y[c] * (gr[c] - dot);
                        }
                    }
                } else {
                    for c in 0..out.cols {
                        let dot: f64 = (0..out.rows).map(|r| out.get(r, c) * g.get(r, c)).sum();
                        for r in 0..out.rows {
                            dx.set(r, c, out.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                }
                accum(grads, *x, dx);
            }
            Op::Log { x, floor } => {
                let xv = &nodes[x.0].value;
                let mut dx = g.clone();
                for (d, &x) in dx.data.iter_mut().zip(&xv.data) {
                    *d = if x > *floor { *d / x } else { 0.0 };
                }
                accum(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = &nodes[gamma.0].value;
                let (rows, cols) = (g.rows, g.cols);
                if wants(*gamma) || wants(*beta) {
                    let mut dg = Tensor::zeros(1, cols);
                    let mut db = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let gi = g.data[r * cols + c];
                            dg.data[c] += gi * xhat[r * cols + c];
                            db.data[c] += gi;
                        }
                    }
                    if wants(*gamma) {
                        accum(grads, *gamma, dg);
                    }
                    if wants(*beta) {
                        accum(grads, *beta, db);
                    }
                }
                if wants(*x) {
                    let mut dx = Tensor::zeros(rows, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for c in 0..cols {
                            let dh = g.data[r * cols + c] * gv.data[c];
                            m1 += dh;
                            m2 += dh * xhat[r * cols + c];
                        }
                        m1 /= n;
                        m2 /= n;
                        for c in 0..cols {
                            let dh = g.data[r * cols + c] * gv.data[c];
                            dx.data[r * cols + c] = rstd[r] * (dh - m1 - xhat[r * cols + c] * m2);
                        }
                    }
                    accum(grads, *x, dx);
                }
            }
            Op::Mean { x, axis } => {
                let xv = &nodes[x.0].value;
                let mut dx = Tensor::zeros(xv.rows, xv.cols);
                if *axis == 0 {
                    let s = 1.0 / xv.rows as f64;
                    for r in 0..xv.rows {
                        for c in 0..xv.cols {
                            dx.data[r * xv.cols + c] = g.data[c] * s;
                        }
                    }
                } else {
                    let s = 1.0 / xv.cols as f64;
                    for r in 0..xv.rows {
                        for c in 0..xv.cols {
                            dx.data[r * xv.cols + c] = g.data[r] * s;
                        }
                    }
                }
                accum(grads, *x, dx);
            }
            Op::Sum(x) => {
                let xv = &nodes[x.0].value;
                accum(grads, *x, Tensor::filled(xv.rows, xv.cols, g.data[0]));
            }
            Op::Pick { x, idx } => {
                let xv = &nodes[x.0].value;
                let mut dx = Tensor::zeros(xv.rows, xv.cols);
                for (r, &c) in idx.iter().enumerate() {
                    dx.data[r * xv.cols + c] += g.data[r];
                }
                accum(grads, *x, dx);
            }
            Op::ScatterCols { x, ids } => {
                let xv = &nodes[x.0].value;
                let mut dx = Tensor::zeros(xv.rows, xv.cols);
                for (j, id) in ids.iter().enumerate() {
                    if let Some(id) = *id {
                        for r in 0..xv.rows {
                            dx.data[r * xv.cols + j] = g.data[r * g.cols + id];
                        }
                    }
                }
                accum(grads, *x, dx);
            }
            Op::RestrictRenorm { x, mask, sums } => {
                let mut dx = Tensor::zeros(out.rows, out.cols);
                for r in 0..out.rows {
                    let s = sums[r];
                    if s <= RENORM_TINY {
                        continue;
                    }
                    let y = out.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = (0..out.cols).filter(|&c| mask[c]).map(|c| gr[c] * y[c]).sum();
                    for c in 0..out.cols {
                        if mask[c] {
                            dx.data[r * out.cols + c] = (gr[c] - dot) / s;
                        }
                    }
                }
                accum(grads, *x, dx);
            }
        }
    }
}

fn accum(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn bidx(dim: usize, i: usize) -> usize {
    if dim == 1 {
        0
    } else {
        i
    }
}
