//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Values are computed eagerly as nodes are appended; calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and
//! accumulates gradients into every node that requires them. One graph
//! is built per optimization step and dropped afterwards.
//!
//! All tensors are `f64` in dynamic-dimension layout. Shape mismatches
//! are programming errors and panic.

use ndarray::{ArrayD, Axis, Ix1, Ix2, Ix3, IxDyn};

/// Handle to a node in a [`Graph`]. Only valid for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type GradFn = Box<dyn FnOnce(&ArrayD<f64>) -> Vec<Option<ArrayD<f64>>>>;

struct Node {
    value: ArrayD<f64>,
    parents: Vec<usize>,
    grad_fn: Option<GradFn>,
    needs_grad: bool,
}

/// Gradients keyed by node index, produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<ArrayD<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Append-only computation tape.
pub struct Graph {
    nodes: Vec<Node>,
}

fn as2(a: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("expected 2-d tensor")
}

fn as3(a: &ArrayD<f64>) -> ndarray::ArrayView3<'_, f64> {
    a.view().into_dimensionality::<Ix3>().expect("expected 3-d tensor")
}

fn as1(a: &ArrayD<f64>) -> ndarray::ArrayView1<'_, f64> {
    a.view().into_dimensionality::<Ix1>().expect("expected 1-d tensor")
}

/// Reshape that tolerates non-standard input layout.
fn reshape_owned(a: ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let a = if a.is_standard_layout() { a } else { a.as_standard_layout().into_owned() };
    a.into_shape_with_order(IxDyn(shape)).expect("reshape: element count mismatch")
}

fn mm(a: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    as2(a).dot(&as2(b)).into_dyn()
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a zero-dim or single-element node as a scalar.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar() on non-scalar node");
        *val.iter().next().unwrap()
    }

    fn push(&mut self, value: ArrayD<f64>, parents: Vec<usize>, grad_fn: Option<GradFn>) -> Var {
        let needs_grad = grad_fn.is_some();
        self.nodes.push(Node { value, parents, grad_fn, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Differentiable input (model parameter).
    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.nodes.push(Node { value, parents: vec![], grad_fn: None, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input (data, detached teacher output).
    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, vec![], None)
    }

    /// Run reverse-mode accumulation from a scalar `root`.
    pub fn backward(&mut self, root: Var) -> Gradients {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(ArrayD::ones(self.nodes[root.0].value.raw_dim()));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad && self.nodes[i].grad_fn.is_none() {
                continue;
            }
            let Some(gf) = self.nodes[i].grad_fn.take() else { continue };
            let Some(gout) = grads[i].take() else { continue };
            let parent_grads = gf(&gout);
            let parents = std::mem::take(&mut self.nodes[i].parents);
            assert_eq!(parent_grads.len(), parents.len());
            for (p, pg) in parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[*p].needs_grad && self.nodes[*p].grad_fn.is_none() {
                    // pure constant; caller asked for a grad it can't use
                    continue;
                }
                match &mut grads[*p] {
                    Some(acc) => *acc += &pg,
                    slot => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }

    // ------------------------------------------------------------------
    // Elementwise and scalar ops
    // ------------------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add: shape mismatch");
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let (na, nb) = (self.needs(a.0), self.needs(b.0));
        let gf: Option<GradFn> = (na || nb).then(|| {
            Box::new(move |g: &ArrayD<f64>| {
                vec![na.then(|| g.clone()), nb.then(|| g.clone())]
            }) as GradFn
        });
        self.push(value, vec![a.0, b.0], gf)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "sub: shape mismatch");
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let (na, nb) = (self.needs(a.0), self.needs(b.0));
        let gf: Option<GradFn> = (na || nb).then(|| {
            Box::new(move |g: &ArrayD<f64>| {
                vec![na.then(|| g.clone()), nb.then(|| g.mapv(|x| -x))]
            }) as GradFn
        });
        self.push(value, vec![a.0, b.0], gf)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "mul: shape mismatch");
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let (na, nb) = (self.needs(a.0), self.needs(b.0));
        let gf: Option<GradFn> = (na || nb).then(|| {
            let va = na.then(|| self.nodes[b.0].value.clone());
            let vb = nb.then(|| self.nodes[a.0].value.clone());
            Box::new(move |g: &ArrayD<f64>| {
                vec![va.map(|v| g * &v), vb.map(|v| g * &v)]
            }) as GradFn
        });
        self.push(value, vec![a.0, b.0], gf)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x * c);
        let gf: Option<GradFn> = self.needs(a.0).then(|| {
            Box::new(move |g: &ArrayD<f64>| vec![Some(g.mapv(|x| x * c))]) as GradFn
        });
        self.push(value, vec![a.0], gf)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x + c);
        let gf: Option<GradFn> =
            self.needs(a.0).then(|| Box::new(move |g: &ArrayD<f64>| vec![Some(g.clone())]) as GradFn);
        self.push(value, vec![a.0], gf)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        let gf: Option<GradFn> = self.needs(a.0).then(|| {
            let mask = self.nodes[a.0].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
            Box::new(move |g: &ArrayD<f64>| vec![Some(g * &mask)]) as GradFn
        });
        self.push(value, vec![a.0], gf)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let gf: Option<GradFn> = self.needs(a.0).then(|| {
            let y = value.clone();
            Box::new(move |g: &ArrayD<f64>| vec![Some(g * &y.mapv(|v| v * (1.0 - v)))]) as GradFn
        });
        self.push(value, vec![a.0], gf)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::tanh);
        let gf: Option<GradFn> = self.needs(a.0).then(|| {
            let y = value.clone();
            Box::new(move |g: &ArrayD<f64>| vec![Some(g * &y.mapv(|v| 1.0 - v * v))]) as GradFn
        });
        self.push(value, vec![a.0], gf)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::exp);
        let gf: Option<GradFn> = self.needs(a.0).then(|| {
            let y = value.clone();
            Box::new(move |g: &ArrayD<f64>| vec![Some(g * &y)]) as GradFn
        });
        self.push(value, vec![a.0], gf)
    }

    /// Elementwise `a^k` for a constant exponent. `k = 0` is treated as
    /// the constant 1 with zero gradient. For fractional exponents the
    /// base is floored at 1e-12 in the derivative.
    pub fn pow_const(&mut self, a: Var, k: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.powf(k));
        let gf: Option<GradFn> = (self.needs(a.0) && k != 0.0).then(|| {
            let base = self.nodes[a.0].value.clone();
            Box::new(move |g: &ArrayD<f64>| {
                let d = base.mapv(|x| {
                    let x = if k < 1.0 { x.max(1e-12) } else { x };
                    k * x.powf(k - 1.0)
                });
                vec![Some(g * &d)]
            }) as GradFn
        });
        // k == 0 with a trainable parent still records an (empty) gradient path
        if gf.is_none() && self.needs(a.0) {
            let n = 1usize;
            let _ = n;
            let zero_gf: GradFn = Box::new(move |_g: &ArrayD<f64>| vec![None]);
            return self.push(value, vec![a.0], Some(zero_gf));
        }
        self.push(value, vec![a.0], gf)
    }

    // ------------------------------------------------------------------
    // Linear algebra
    // ------------------------------------------------------------------

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        assert_eq!(sa.len(), 2, "matmul lhs must be 2-d");
        assert_eq!(sb.len(), 2, "matmul rhs must be 2-d");
        assert_eq!(sa[1], sb[0], "matmul: inner dims {} vs {}", sa[1], sb[0]);
        let value = mm(&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (na, nb) = (self.needs(a.0), self.needs(b.0));
        let gf: Option<GradFn> = (na || nb).then(|| {
            let va = nb.then(|| self.nodes[a.0].value.clone());
            let vb = na.then(|| self.nodes[b.0].value.clone());
            Box::new(move |g: &ArrayD<f64>| {
                let g2 = as2(g);
                let da = vb.map(|b| g2.dot(&as2(&b).t()).into_dyn());
                let db = va.map(|a| as2(&a).t().dot(&g2).into_dyn());
                vec![da, db]
            }) as GradFn
        });
        self.push(value, vec![a.0, b.0], gf)
    }

    /// `[N,m,k] x [N,k,n] -> [N,m,n]`, independent matmul per leading index.
    pub fn batched_matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        assert_eq!(sa.len(), 3, "batched_matmul lhs must be 3-d");
        assert_eq!(sb.len(), 3, "batched_matmul rhs must be 3-d");
        assert_eq!(sa[0], sb[0], "batched_matmul: batch dims differ");
        assert_eq!(sa[2], sb[1], "batched_matmul: inner dims differ");
        let (n, m, out_n) = (sa[0], sa[1], sb[2]);
        let va = as3(&self.nodes[a.0].value).to_owned();
        let vb = as3(&self.nodes[b.0].value).to_owned();
        let mut value = ndarray::Array3::<f64>::zeros((n, m, out_n));
        for i in 0..n {
            value
                .index_axis_mut(Axis(0), i)
                .assign(&va.index_axis(Axis(0), i).dot(&vb.index_axis(Axis(0), i)));
        }
        let (na, nb) = (self.needs(a.0), self.needs(b.0));
        let gf: Option<GradFn> = (na || nb).then(|| {
            Box::new(move |g: &ArrayD<f64>| {
                let g3 = as3(g);
                let da = na.then(|| {
                    let mut da = ndarray::Array3::<f64>::zeros((n, sa[1], sa[2]));
                    for i in 0..n {
                        da.index_axis_mut(Axis(0), i).assign(
                            &g3.index_axis(Axis(0), i).dot(&vb.index_axis(Axis(0), i).t()),
                        );
                    }
                    da.into_dyn()
                });
                let db = nb.then(|| {
                    let mut db = ndarray::Array3::<f64>::zeros((n, sb[1], sb[2]));
                    for i in 0..n {
                        db.index_axis_mut(Axis(0), i).assign(
                            &va.index_axis(Axis(0), i).t().dot(&g3.index_axis(Axis(0), i)),
                        );
                    }
                    db.into_dyn()
                });
                vec![da, db]
            }) as GradFn
        });
        self.push(value.into_dyn(), vec![a.0, b.0], gf)
    }

    /// Add a `[D]` bias to every row of a `[N,D]` matrix.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Var {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(bias).shape().to_vec();
        assert_eq!(sa.len(), 2);
        assert_eq!(sb, vec![sa[1]], "add_row_bias: bias shape mismatch");
        let value = (&as2(&self.nodes[a.0].value) + &as1(&self.nodes[bias.0].value)).into_dyn();
        let (na, nb) = (self.needs(a.0), self.needs(bias.0));
        let gf: Option<GradFn> = (na || nb).then(|| {
            Box::new(move |g: &ArrayD<f64>| {
                let db = nb.then(|| as2(g).sum_axis(Axis(0)).into_dyn());
                vec![na.then(|| g.clone()), db]
            }) as GradFn
        });
        self.push(value, vec![a.0, bias.0], gf)
    }

    // ------------------------------------------------------------------
    // Shape ops
    // ------------------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let orig: Vec<usize> = self.value(a).shape().to_vec();
        let value = reshape_owned(self.nodes[a.0].value.clone(), shape);
        let gf: Option<GradFn> = self.needs(a.0).then(|| {
            Box::new(move |g: &ArrayD<f64>| vec![Some(reshape_owned(g.clone(), &orig))]) as GradFn
        });
        self.push(value, vec![a.0], gf)
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Var {
        let axes_v = axes.to_vec();
        let value = self
            .nodes[a.0]
            .value
            .clone()
            .permuted_axes(IxDyn(&axes_v))
            .as_standard_layout()
            .into_owned();
        let gf: Option<GradFn> = self.needs(a.0).then(|| {
            let mut inv = vec![0usize; axes_v.len()];
            for (i, &ax) in axes_v.iter().enumerate() {
                inv[ax] = i;
            }
            Box::new(move |g: &ArrayD<f64>| {
                vec![Some(g.clone().permuted_axes(IxDyn(&inv)).as_standard_layout().into_owned())]
            }) as GradFn
        });
        self.push(value, vec![a.0], gf)
    }

    /// Select rows of a `[N,D]` matrix; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let sa = self.value(a).shape().to_vec();
        assert_eq!(sa.len(), 2, "gather_rows expects 2-d input");
        let idx = indices.to_vec();
        let src = as2(&self.nodes[a.0].value);
        let mut value = ndarray::Array2::<f64>::zeros((idx.len(), sa[1]));
        for (j, &i) in idx.iter().enumerate() {
            assert!(i < sa[0], "gather_rows: index {i} out of bounds {}", sa[0]);
            value.row_mut(j).assign(&src.row(i));
        }
        let gf: Option<GradFn> = self.needs(a.0).then(|| {
            Box::new(move |g: &ArrayD<f64>| {
                let g2 = as2(g);
                let mut da = ndarray::Array2::<f64>::zeros((sa[0], sa[1]));
                for (j, &i) in idx.iter().enumerate() {
                    let mut row = da.row_mut(i);
                    row += &g2.row(j);
                }
                vec![Some(da.into_dyn())]
            }) as GradFn
        });
        self.push(value.into_dyn(), vec![a.0], gf)
    }

    /// Stack `[N,D]` matrices vertically in order.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let d = self.value(parts[0]).shape()[1];
        let mut rows = Vec::new();
        let mut sizes = Vec::new();
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.shape().len(), 2);
            assert_eq!(v.shape()[1], d, "concat_rows: column count mismatch");
            sizes.push(v.shape()[0]);
            rows.push(as2(v).to_owned());
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).unwrap().into_dyn();
        let needs: Vec<bool> = parts.iter().map(|p| self.needs(p.0)).collect();
        let any = needs.iter().any(|&b| b);
        let gf: Option<GradFn> = any.then(|| {
            Box::new(move |g: &ArrayD<f64>| {
                let g2 = as2(g);
                let mut out = Vec::with_capacity(sizes.len());
                let mut start = 0usize;
                for (sz, need) in sizes.iter().zip(&needs) {
                    let part = need
                        .then(|| g2.slice(ndarray::s![start..start + sz, ..]).to_owned().into_dyn());
                    out.push(part);
                    start += sz;
                }
                out
            }) as GradFn
        });
        self.push(value, parts.iter().map(|p| p.0).collect(), gf)
    }

    /// Columns `[start, start+len)` of a `[N,D]` matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let sa = self.value(a).shape().to_vec();
        assert_eq!(sa.len(), 2);
        assert!(start + len <= sa[1], "slice_cols out of bounds");
        let value =
            as2(&self.nodes[a.0].value).slice(ndarray::s![.., start..start + len]).to_owned();
        let gf: Option<GradFn> = self.needs(a.0).then(|| {
            Box::new(move |g: &ArrayD<f64>| {
                let mut da = ndarray::Array2::<f64>::zeros((sa[0], sa[1]));
                da.slice_mut(ndarray::s![.., start..start + len]).assign(&as2(g));
                vec![Some(da.into_dyn())]
            }) as GradFn
        });
        self.push(value.into_dyn(), vec![a.0], gf)
    }

    // ------------------------------------------------------------------
    // Reductions and row-wise nonlinearities
    // ------------------------------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self.nodes[a.0].value.sum();
        let shape = self.value(a).raw_dim();
        let value = ndarray::arr0(total).into_dyn();
        let gf: Option<GradFn> = self.needs(a.0).then(|| {
            Box::new(move |g: &ArrayD<f64>| {
                let s = *g.iter().next().unwrap();
                vec![Some(ArrayD::from_elem(shape, s))]
            }) as GradFn
        });
        self.push(value, vec![a.0], gf)
    }

    /// Entry `a[i, idx[i]]` per row of a `[N,C]` matrix -> `[N]`.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Var {
        let sa = self.value(a).shape().to_vec();
        assert_eq!(sa.len(), 2);
        assert_eq!(indices.len(), sa[0], "pick: one index per row required");
        let idx = indices.to_vec();
        let src = as2(&self.nodes[a.0].value);
        let value = ndarray::Array1::from_iter(idx.iter().enumerate().map(|(i, &c)| {
            assert!(c < sa[1], "pick: class index {c} out of bounds {}", sa[1]);
            src[(i, c)]
        }));
        let gf: Option<GradFn> = self.needs(a.0).then(|| {
            Box::new(move |g: &ArrayD<f64>| {
                let g1 = as1(g);
                let mut da = ndarray::Array2::<f64>::zeros((sa[0], sa[1]));
                for (i, &c) in idx.iter().enumerate() {
                    da[(i, c)] = g1[i];
                }
                vec![Some(da.into_dyn())]
            }) as GradFn
        });
        self.push(value.into_dyn(), vec![a.0], gf)
    }

    /// Row-wise softmax of a `[N,C]` matrix (log-sum-exp stabilized).
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let src = as2(&self.nodes[a.0].value);
        let mut value = src.to_owned();
        for mut row in value.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        let gf: Option<GradFn> = self.needs(a.0).then(|| {
            let y = value.clone();
            Box::new(move |g: &ArrayD<f64>| {
                let g2 = as2(g);
                let mut da = ndarray::Array2::<f64>::zeros(y.raw_dim());
                for i in 0..y.nrows() {
                    let yr = y.row(i);
                    let gr = g2.row(i);
                    let dot = yr.dot(&gr);
                    for c in 0..y.ncols() {
                        da[(i, c)] = yr[c] * (gr[c] - dot);
                    }
                }
                vec![Some(da.into_dyn())]
            }) as GradFn
        });
        self.push(value.into_dyn(), vec![a.0], gf)
    }

    /// Row-wise log-softmax of a `[N,C]` matrix.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let src = as2(&self.nodes[a.0].value);
        let mut value = src.to_owned();
        for mut row in value.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            row.mapv_inplace(|x| x - lse);
        }
        let gf: Option<GradFn> = self.needs(a.0).then(|| {
            let soft = value.mapv(f64::exp);
            Box::new(move |g: &ArrayD<f64>| {
                let g2 = as2(g);
                let mut da = ndarray::Array2::<f64>::zeros(soft.raw_dim());
                for i in 0..soft.nrows() {
                    let gsum = g2.row(i).sum();
                    for c in 0..soft.ncols() {
                        da[(i, c)] = g2[(i, c)] - soft[(i, c)] * gsum;
                    }
                }
                vec![Some(da.into_dyn())]
            }) as GradFn
        });
        self.push(value.into_dyn(), vec![a.0], gf)
    }

    /// Row-wise layer normalization of `[N,D]` with learnable gain/shift.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let src = as2(&self.nodes[a.0].value).to_owned();
        let (n, d) = src.dim();
        assert_eq!(self.value(gamma).shape(), [d]);
        assert_eq!(self.value(beta).shape(), [d]);
        let gm = as1(&self.nodes[gamma.0].value).to_owned();
        let bt = as1(&self.nodes[beta.0].value).to_owned();
        let mut xhat = ndarray::Array2::<f64>::zeros((n, d));
        let mut inv_std = ndarray::Array1::<f64>::zeros(n);
        for i in 0..n {
            let row = src.row(i);
            let mean = row.mean().unwrap();
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for c in 0..d {
                xhat[(i, c)] = (row[c] - mean) * is;
            }
        }
        let mut value = ndarray::Array2::<f64>::zeros((n, d));
        for i in 0..n {
            for c in 0..d {
                value[(i, c)] = xhat[(i, c)] * gm[c] + bt[c];
            }
        }
        let (na, ng, nb) = (self.needs(a.0), self.needs(gamma.0), self.needs(beta.0));
        let gf: Option<GradFn> = (na || ng || nb).then(|| {
            Box::new(move |g: &ArrayD<f64>| {
                let g2 = as2(g);
                let dgamma = ng.then(|| {
                    let mut dg = ndarray::Array1::<f64>::zeros(d);
                    for i in 0..n {
                        for c in 0..d {
                            dg[c] += g2[(i, c)] * xhat[(i, c)];
                        }
                    }
                    dg.into_dyn()
                });
                let dbeta = nb.then(|| g2.sum_axis(Axis(0)).into_dyn());
                let dx = na.then(|| {
                    let mut dx = ndarray::Array2::<f64>::zeros((n, d));
                    for i in 0..n {
                        let mut mean_gh = 0.0;
                        let mut mean_gh_xhat = 0.0;
                        for c in 0..d {
                            let gh = g2[(i, c)] * gm[c];
                            mean_gh += gh;
                            mean_gh_xhat += gh * xhat[(i, c)];
                        }
                        mean_gh /= d as f64;
                        mean_gh_xhat /= d as f64;
                        for c in 0..d {
                            let gh = g2[(i, c)] * gm[c];
                            dx[(i, c)] = inv_std[i] * (gh - mean_gh - xhat[(i, c)] * mean_gh_xhat);
                        }
                    }
                    dx.into_dyn()
                });
                vec![dx, dgamma, dbeta]
            }) as GradFn
        });
        self.push(value.into_dyn(), vec![a.0, gamma.0, beta.0], gf)
    }

    // ------------------------------------------------------------------
    // Convolutional ops
    // ------------------------------------------------------------------

    /// 2-d convolution of `[B,Ci,H,W]` with `[Co,Ci,kh,kw]` weights,
    /// zero padding, and a `[Co]` bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Var {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be 4-d");
        assert_eq!(ws.len(), 4, "conv2d weight must be 4-d");
        assert_eq!(xs[1], ws[1], "conv2d: channel mismatch");
        assert!(stride >= 1);
        let (bsz, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, kh, kw) = (ws[0], ws[2], ws[3]);
        assert_eq!(self.value(b).shape(), [co], "conv2d: bias shape");
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (wd + 2 * padding - kw) / stride + 1;
        let k = ci * kh * kw;

        let cols = im2col(&self.nodes[x.0].value, kh, kw, stride, padding, oh, ow);
        // [B*OH*OW, K] x [K, Co]
        let wmat =
            reshape_owned(self.nodes[w.0].value.clone(), &[co, k]).permuted_axes(IxDyn(&[1, 0]));
        let wmat = wmat.as_standard_layout().into_owned();
        let prod = mm(&cols, &wmat); // [B*OH*OW, Co]
        let bias = as1(&self.nodes[b.0].value).to_owned();
        let mut out = reshape_owned(prod, &[bsz, oh, ow, co]);
        {
            let mut o4 = out.view_mut().into_dimensionality::<ndarray::Ix4>().unwrap();
            for mut lane in o4.lanes_mut(Axis(3)) {
                lane += &bias;
            }
        }
        let value = out.permuted_axes(IxDyn(&[0, 3, 1, 2])).as_standard_layout().into_owned();

        let (nx, nw, nb) = (self.needs(x.0), self.needs(w.0), self.needs(b.0));
        let gf: Option<GradFn> = (nx || nw || nb).then(|| {
            let wmat_for_dx = nx.then(|| wmat.clone());
            let cols_for_dw = nw.then(|| cols.clone());
            Box::new(move |g: &ArrayD<f64>| {
                // g: [B,Co,OH,OW] -> [B*OH*OW, Co]
                let gmat = g
                    .clone()
                    .permuted_axes(IxDyn(&[0, 2, 3, 1]))
                    .as_standard_layout()
                    .into_owned();
                let gmat = reshape_owned(gmat, &[bsz * oh * ow, co]);
                let db = nb.then(|| as2(&gmat).sum_axis(Axis(0)).into_dyn());
                let dw = cols_for_dw.map(|cols| {
                    let dwmat = as2(&cols).t().dot(&as2(&gmat)); // [K, Co]
                    reshape_owned(
                        dwmat.into_dyn().permuted_axes(IxDyn(&[1, 0])).as_standard_layout().into_owned(),
                        &[co, ci, kh, kw],
                    )
                });
                let dx = wmat_for_dx.map(|wmat| {
                    let dcols = as2(&gmat).dot(&as2(&wmat).t()).into_dyn(); // [B*OH*OW, K]
                    col2im(&dcols, bsz, ci, h, wd, kh, kw, stride, padding, oh, ow)
                });
                vec![dx, dw, db]
            }) as GradFn
        });
        self.push(value, vec![x.0, w.0, b.0], gf)
    }

    /// Batch normalization over `[B,C,H,W]` using batch statistics.
    /// Returns the output plus the per-channel biased mean and variance
    /// so the caller can maintain running statistics.
    pub fn batch_norm2d_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> (Var, Vec<f64>, Vec<f64>) {
        let xs = self.value(x).shape().to_vec();
        assert_eq!(xs.len(), 4);
        let (bsz, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let n = (bsz * h * w) as f64;
        assert_eq!(self.value(gamma).shape(), [c]);
        assert_eq!(self.value(beta).shape(), [c]);
        let plane = h * w;
        let xs = self.nodes[x.0].value.as_standard_layout().into_owned();
        let xs = xs.as_slice().unwrap();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for bi in 0..bsz {
            for ch in 0..c {
                let base = (bi * c + ch) * plane;
                for &v in &xs[base..base + plane] {
                    mean[ch] += v;
                }
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        for bi in 0..bsz {
            for ch in 0..c {
                let base = (bi * c + ch) * plane;
                let m = mean[ch];
                for &v in &xs[base..base + plane] {
                    var[ch] += (v - m) * (v - m);
                }
            }
        }
        for v in var.iter_mut() {
            *v /= n;
        }
        let gm = as1(&self.nodes[gamma.0].value).to_owned();
        let bt = as1(&self.nodes[beta.0].value).to_owned();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; bsz * c * plane];
        let mut value = ndarray::Array4::<f64>::zeros((bsz, c, h, w));
        {
            let vs = value.as_slice_mut().unwrap();
            for bi in 0..bsz {
                for ch in 0..c {
                    let base = (bi * c + ch) * plane;
                    let (m, is, ga, be) = (mean[ch], inv_std[ch], gm[ch], bt[ch]);
                    for k in base..base + plane {
                        let xh = (xs[k] - m) * is;
                        xhat[k] = xh;
                        vs[k] = xh * ga + be;
                    }
                }
            }
        }
        let (nx, ng, nb) = (self.needs(x.0), self.needs(gamma.0), self.needs(beta.0));
        let mean_out = mean.clone();
        let var_out = var.clone();
        let gf: Option<GradFn> = (nx || ng || nb).then(|| {
            Box::new(move |g: &ArrayD<f64>| {
                let gs = g.as_standard_layout().into_owned();
                let gs = gs.as_slice().unwrap();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for bi in 0..bsz {
                    for ch in 0..c {
                        let base = (bi * c + ch) * plane;
                        for k in base..base + plane {
                            dgamma[ch] += gs[k] * xhat[k];
                            dbeta[ch] += gs[k];
                        }
                    }
                }
                let dx = nx.then(|| {
                    let mut dx = ndarray::Array4::<f64>::zeros((bsz, c, h, w));
                    let ds = dx.as_slice_mut().unwrap();
                    for bi in 0..bsz {
                        for ch in 0..c {
                            let base = (bi * c + ch) * plane;
                            let mg = dbeta[ch] / n;
                            let mgx = dgamma[ch] / n;
                            let scale = gm[ch] * inv_std[ch];
                            for k in base..base + plane {
                                ds[k] = scale * (gs[k] - mg - xhat[k] * mgx);
                            }
                        }
                    }
                    dx.into_dyn()
                });
                vec![
                    dx,
                    ng.then(|| ndarray::Array1::from_vec(dgamma).into_dyn()),
                    nb.then(|| ndarray::Array1::from_vec(dbeta).into_dyn()),
                ]
            }) as GradFn
        });
        let out = self.push(value.into_dyn(), vec![x.0, gamma.0, beta.0], gf);
        (out, mean_out, var_out)
    }

    /// Batch normalization over `[B,C,H,W]` using fixed running statistics.
    pub fn batch_norm2d_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Var {
        let xs = self.value(x).shape().to_vec();
        assert_eq!(xs.len(), 4);
        let (bsz, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        assert_eq!(running_mean.len(), c);
        assert_eq!(running_var.len(), c);
        let gm = as1(&self.nodes[gamma.0].value).to_owned();
        let bt = as1(&self.nodes[beta.0].value).to_owned();
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let plane = h * w;
        let xs = self.nodes[x.0].value.as_standard_layout().into_owned();
        let xs_slice = xs.as_slice().unwrap();
        let mut xhat = vec![0.0; bsz * c * plane];
        let mut value = ndarray::Array4::<f64>::zeros((bsz, c, h, w));
        {
            let vs = value.as_slice_mut().unwrap();
            for bi in 0..bsz {
                for ch in 0..c {
                    let base = (bi * c + ch) * plane;
                    let (m, is, ga, be) = (running_mean[ch], inv_std[ch], gm[ch], bt[ch]);
                    for k in base..base + plane {
                        let xh = (xs_slice[k] - m) * is;
                        xhat[k] = xh;
                        vs[k] = xh * ga + be;
                    }
                }
            }
        }
        let (nx, ng, nb) = (self.needs(x.0), self.needs(gamma.0), self.needs(beta.0));
        let gf: Option<GradFn> = (nx || ng || nb).then(|| {
            Box::new(move |g: &ArrayD<f64>| {
                let gs = g.as_standard_layout().into_owned();
                let gs = gs.as_slice().unwrap();
                let dx = nx.then(|| {
                    let mut dx = ndarray::Array4::<f64>::zeros((bsz, c, h, w));
                    let ds = dx.as_slice_mut().unwrap();
                    for bi in 0..bsz {
                        for ch in 0..c {
                            let base = (bi * c + ch) * plane;
                            let s = gm[ch] * inv_std[ch];
                            for k in base..base + plane {
                                ds[k] = gs[k] * s;
                            }
                        }
                    }
                    dx.into_dyn()
                });
                let dgamma = ng.then(|| {
                    let mut dg = vec![0.0; c];
                    for bi in 0..bsz {
                        for ch in 0..c {
                            let base = (bi * c + ch) * plane;
                            for k in base..base + plane {
                                dg[ch] += gs[k] * xhat[k];
                            }
                        }
                    }
                    ndarray::Array1::from_vec(dg).into_dyn()
                });
                let dbeta = nb.then(|| {
                    let mut db = vec![0.0; c];
                    for bi in 0..bsz {
                        for ch in 0..c {
                            let base = (bi * c + ch) * plane;
                            for k in base..base + plane {
                                db[ch] += gs[k];
                            }
                        }
                    }
                    ndarray::Array1::from_vec(db).into_dyn()
                });
                vec![dx, dgamma, dbeta]
            }) as GradFn
        });
        self.push(value.into_dyn(), vec![x.0, gamma.0, beta.0], gf)
    }

    /// Adaptive max pooling of `[B,C,H,W]` to a fixed `(oh, ow)` grid.
    /// Window bounds follow `start = floor(i*H/oh)`, `end = ceil((i+1)*H/oh)`.
    pub fn adaptive_max_pool2d(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let xs = self.value(x).shape().to_vec();
        assert_eq!(xs.len(), 4);
        let (bsz, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        assert!(oh >= 1 && ow >= 1 && oh <= h && ow <= w, "pool grid larger than input");
        let xv = self.nodes[x.0].value.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let mut value = ndarray::Array4::<f64>::zeros((bsz, c, oh, ow));
        let mut argmax = vec![0usize; bsz * c * oh * ow];
        let mut slot = 0usize;
        for bi in 0..bsz {
            for ch in 0..c {
                for i in 0..oh {
                    let hs = i * h / oh;
                    let he = ((i + 1) * h).div_ceil(oh);
                    for j in 0..ow {
                        let ws = j * w / ow;
                        let we = ((j + 1) * w).div_ceil(ow);
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for ii in hs..he {
                            for jj in ws..we {
                                let v = xv[(bi, ch, ii, jj)];
                                if v > best {
                                    best = v;
                                    best_idx = ii * w + jj;
                                }
                            }
                        }
                        value[(bi, ch, i, j)] = best;
                        argmax[slot] = best_idx;
                        slot += 1;
                    }
                }
            }
        }
        let gf: Option<GradFn> = self.needs(x.0).then(|| {
            Box::new(move |g: &ArrayD<f64>| {
                let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                let mut dx = ndarray::Array4::<f64>::zeros((bsz, c, h, w));
                let mut slot = 0usize;
                for bi in 0..bsz {
                    for ch in 0..c {
                        for i in 0..oh {
                            for j in 0..ow {
                                let flat = argmax[slot];
                                slot += 1;
                                dx[(bi, ch, flat / w, flat % w)] += g4[(bi, ch, i, j)];
                            }
                        }
                    }
                }
                vec![Some(dx.into_dyn())]
            }) as GradFn
        });
        self.push(value.into_dyn(), vec![x.0], gf)
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Unfold `[B,Ci,H,W]` into `[B*OH*OW, Ci*kh*kw]` patches.
fn im2col(
    x: &ArrayD<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> ArrayD<f64> {
    let xv = x.view().into_dimensionality::<ndarray::Ix4>().unwrap();
    let (bsz, ci, h, w) = xv.dim();
    let k = ci * kh * kw;
    let mut cols = ndarray::Array2::<f64>::zeros((bsz * oh * ow, k));
    let xs = xv.as_standard_layout();
    let xs = xs.as_slice().unwrap();
    let cs = cols.as_slice_mut().unwrap();
    for bi in 0..bsz {
        for oi in 0..oh {
            let i0 = (oi * stride) as isize - padding as isize;
            for oj in 0..ow {
                let j0 = (oj * stride) as isize - padding as isize;
                let row = ((bi * oh + oi) * ow + oj) * k;
                for ch in 0..ci {
                    let xbase = (bi * ci + ch) * h * w;
                    for di in 0..kh {
                        let ii = i0 + di as isize;
                        let rbase = row + (ch * kh + di) * kw;
                        if ii < 0 || ii >= h as isize {
                            continue; // zero padding
                        }
                        let xrow = xbase + ii as usize * w;
                        for dj in 0..kw {
                            let jj = j0 + dj as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            cs[rbase + dj] = xs[xrow + jj as usize];
                        }
                    }
                }
            }
        }
    }
    cols.into_dyn()
}

/// Fold `[B*OH*OW, Ci*kh*kw]` patch gradients back onto `[B,Ci,H,W]`.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &ArrayD<f64>,
    bsz: usize,
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> ArrayD<f64> {
    let k = ci * kh * kw;
    let cv = cols.view().into_dimensionality::<Ix2>().unwrap();
    let cv = cv.as_standard_layout();
    let cs = cv.as_slice().unwrap();
    let mut dx = ndarray::Array4::<f64>::zeros((bsz, ci, h, w));
    let ds = dx.as_slice_mut().unwrap();
    for bi in 0..bsz {
        for oi in 0..oh {
            let i0 = (oi * stride) as isize - padding as isize;
            for oj in 0..ow {
                let j0 = (oj * stride) as isize - padding as isize;
                let row = ((bi * oh + oi) * ow + oj) * k;
                for ch in 0..ci {
                    let xbase = (bi * ci + ch) * h * w;
                    for di in 0..kh {
                        let ii = i0 + di as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let xrow = xbase + ii as usize * w;
                        let rbase = row + (ch * kh + di) * kw;
                        for dj in 0..kw {
                            let jj = j0 + dj as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            ds[xrow + jj as usize] += cs[rbase + dj];
                        }
                    }
                }
            }
        }
    }
    dx.into_dyn()
}

/// Direct sliding-window convolution used as a test oracle for the
/// im2col path.
#[cfg(test)]
pub(crate) fn conv2d_reference(
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    b: &[f64],
    stride: usize,
    padding: usize,
) -> ArrayD<f64> {
    let xv = x.view().into_dimensionality::<ndarray::Ix4>().unwrap();
    let wv = w.view().into_dimensionality::<ndarray::Ix4>().unwrap();
    let (bsz, ci, h, wd) = xv.dim();
    let (co, _, kh, kw) = wv.dim();
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (wd + 2 * padding - kw) / stride + 1;
    let mut out = ndarray::Array4::<f64>::zeros((bsz, co, oh, ow));
    for bi in 0..bsz {
        for oc in 0..co {
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut acc = b[oc];
                    for ch in 0..ci {
                        for di in 0..kh {
                            for dj in 0..kw {
                                let ii = (oi * stride + di) as isize - padding as isize;
                                let jj = (oj * stride + dj) as isize - padding as isize;
                                if ii < 0 || ii >= h as isize || jj < 0 || jj >= wd as isize {
                                    continue;
                                }
                                acc += xv[(bi, ch, ii as usize, jj as usize)]
                                    * wv[(oc, ch, di, dj)];
                            }
                        }
                    }
                    out[(bi, oc, oi, oj)] = acc;
                }
            }
        }
    }
    out.into_dyn()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    /// Central finite differences against the tape gradient for every
    /// entry of every input.
    fn fd_check(
        build: impl Fn(&mut Graph, &[Var]) -> Var,
        inputs: &[ArrayD<f64>],
        tol: f64,
    ) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|v| g.leaf(v.clone())).collect();
        let out = build(&mut g, &vars);
        let mut grads = g.backward(out);
        let h = 1e-5;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads
                .take(vars[k])
                .unwrap_or_else(|| ArrayD::zeros(input.raw_dim()));
            for flat in 0..input.len() {
                let eval = |delta: f64| -> f64 {
                    let mut g2 = Graph::new();
                    let vars2: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(i, v)| {
                            let mut v = v.clone();
                            if i == k {
                                v.as_slice_mut().unwrap()[flat] += delta;
                            }
                            g2.leaf(v)
                        })
                        .collect();
                    let o = build(&mut g2, &vars2);
                    g2.scalar(o)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = analytic.as_slice().unwrap()[flat];
                let denom = fd.abs().max(an.abs()).max(1.0);
                assert!(
                    (fd - an).abs() / denom < tol,
                    "input {k} entry {flat}: fd={fd} analytic={an}"
                );
            }
        }
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = randn(&mut rng, &[3, 4]);
        let b = randn(&mut rng, &[3, 4]);
        fd_check(
            |g, v| {
                let s = g.add(v[0], v[1]);
                let d = g.sub(s, v[1]);
                let m = g.mul(d, v[1]);
                let sc = g.scale(m, 1.7);
                let r = g.relu(sc);
                let sg = g.sigmoid(r);
                let t = g.tanh(sg);
                let e = g.exp(t);
                g.sum_all(e)
            },
            &[a, b],
            1e-6,
        );
    }

    #[test]
    fn pow_const_matches_finite_differences_and_handles_zero_exponent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = randn(&mut rng, &[5]).mapv(|x| x.abs() + 0.1);
        fd_check(
            |g, v| {
                let p = g.pow_const(v[0], 2.0);
                g.sum_all(p)
            },
            &[a.clone()],
            1e-6,
        );
        // exponent 0 is the constant 1, with zero gradient
        let mut g = Graph::new();
        let v = g.leaf(a);
        let p = g.pow_const(v, 0.0);
        assert!(g.value(p).iter().all(|&x| (x - 1.0).abs() < 1e-15));
        let s = g.sum_all(p);
        let mut grads = g.backward(s);
        assert!(grads.take(v).is_none());
    }

    #[test]
    fn matmul_and_bias_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = randn(&mut rng, &[4, 3]);
        let b = randn(&mut rng, &[3, 5]);
        let bias = randn(&mut rng, &[5]);
        fd_check(
            |g, v| {
                let y = g.matmul(v[0], v[1]);
                let y = g.add_row_bias(y, v[2]);
                let y = g.tanh(y);
                g.sum_all(y)
            },
            &[a, b, bias],
            1e-6,
        );
    }

    #[test]
    fn batched_matmul_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = randn(&mut rng, &[3, 2, 4]);
        let b = randn(&mut rng, &[3, 4, 2]);
        fd_check(
            |g, v| {
                let y = g.batched_matmul(v[0], v[1]);
                let y = g.sigmoid(y);
                g.sum_all(y)
            },
            &[a, b],
            1e-6,
        );
    }

    #[test]
    fn shape_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = randn(&mut rng, &[2, 3, 4]);
        fd_check(
            |g, v| {
                let p = g.permute(v[0], &[1, 0, 2]);
                let r = g.reshape(p, &[3, 8]);
                let s = g.slice_cols(r, 2, 5);
                let gath = g.gather_rows(s, &[0, 2, 2, 1]);
                let e = g.exp(gath);
                g.sum_all(e)
            },
            &[a],
            1e-6,
        );
    }

    #[test]
    fn concat_and_pick_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = randn(&mut rng, &[2, 3]);
        let b = randn(&mut rng, &[4, 3]);
        fd_check(
            |g, v| {
                let c = g.concat_rows(&[v[0], v[1]]);
                let p = g.pick(c, &[0, 2, 1, 1, 0, 2]);
                let sq = g.mul(p, p);
                g.sum_all(sq)
            },
            &[a, b],
            1e-6,
        );
    }

    #[test]
    fn softmax_rows_sums_to_one_and_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = randn(&mut rng, &[3, 6]).mapv(|x| x * 3.0);
        let mut g = Graph::new();
        let v = g.constant(a.clone());
        let sm = g.softmax_rows(v);
        for row in as2(g.value(sm)).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        fd_check(
            |g, v| {
                let s = g.softmax_rows(v[0]);
                let p = g.pick(s, &[1, 0, 3]);
                let l = g.mul(p, p);
                g.sum_all(l)
            },
            &[a],
            1e-6,
        );
    }

    #[test]
    fn log_softmax_matches_softmax_log_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = randn(&mut rng, &[4, 5]).mapv(|x| x * 4.0);
        let mut g = Graph::new();
        let v = g.constant(a.clone());
        let ls = g.log_softmax_rows(v);
        let sm = g.softmax_rows(v);
        let diff = g.value(ls).mapv(f64::exp) - g.value(sm);
        assert!(diff.iter().all(|d| d.abs() < 1e-12));
        fd_check(
            |g, v| {
                let ls = g.log_softmax_rows(v[0]);
                let p = g.pick(ls, &[0, 4, 2, 2]);
                g.sum_all(p)
            },
            &[a],
            1e-6,
        );
    }

    #[test]
    fn layer_norm_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = randn(&mut rng, &[3, 6]);
        let gamma = randn(&mut rng, &[6]).mapv(|v| v + 1.5);
        let beta = randn(&mut rng, &[6]);
        fd_check(
            |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5);
                let y = g.mul(y, y);
                g.sum_all(y)
            },
            &[x, gamma, beta],
            1e-5,
        );
    }

    #[test]
    fn conv2d_matches_reference_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = randn(&mut rng, &[2, 3, 6, 5]);
        let w = randn(&mut rng, &[4, 3, 3, 3]);
        let b = randn(&mut rng, &[4]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv2d(xv, wv, bv, 2, 1);
        let reference = conv2d_reference(&x, &w, b.as_slice().unwrap(), 2, 1);
        let diff = g.value(y) - &reference;
        assert!(diff.iter().all(|d| d.abs() < 1e-12), "im2col path disagrees with direct conv");

        fd_check(
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], 2, 1);
                let y = g.tanh(y);
                g.sum_all(y)
            },
            &[x, w, b],
            1e-5,
        );
    }

    #[test]
    fn conv2d_stride_one_no_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = randn(&mut rng, &[1, 2, 4, 4]);
        let w = randn(&mut rng, &[3, 2, 2, 2]);
        let b = randn(&mut rng, &[3]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv2d(xv, wv, bv, 1, 0);
        assert_eq!(g.value(y).shape(), [1, 3, 3, 3]);
        let reference = conv2d_reference(&x, &w, b.as_slice().unwrap(), 1, 0);
        let diff = g.value(y) - &reference;
        assert!(diff.iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn batch_norm_train_normalizes_and_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = randn(&mut rng, &[3, 2, 4, 3]).mapv(|v| v * 2.0 + 0.5);
        let gamma = ndarray::arr1(&[1.3, 0.7]).into_dyn();
        let beta = ndarray::arr1(&[0.1, -0.2]).into_dyn();
        {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let gm = g.constant(gamma.clone());
            let bt = g.constant(beta.clone());
            let (y, mean, var) = g.batch_norm2d_train(xv, gm, bt, 1e-5);
            // per-channel output mean ~ beta, std ~ gamma
            let y4 = g.value(y).view().into_dimensionality::<ndarray::Ix4>().unwrap();
            for ch in 0..2 {
                let lane = y4.index_axis(Axis(1), ch);
                let m = lane.sum() / lane.len() as f64;
                assert!((m - beta[ch]).abs() < 1e-10);
            }
            assert_eq!(mean.len(), 2);
            assert_eq!(var.len(), 2);
        }
        fd_check(
            |g, v| {
                let (y, _, _) = g.batch_norm2d_train(v[0], v[1], v[2], 1e-5);
                let y = g.sigmoid(y);
                g.sum_all(y)
            },
            &[x, gamma, beta],
            1e-5,
        );
    }

    #[test]
    fn batch_norm_eval_is_affine_and_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = randn(&mut rng, &[2, 2, 3, 3]);
        let gamma = ndarray::arr1(&[1.1, 0.9]).into_dyn();
        let beta = ndarray::arr1(&[0.0, 0.3]).into_dyn();
        let rm = vec![0.2, -0.1];
        let rv = vec![1.5, 0.8];
        let (rm2, rv2) = (rm.clone(), rv.clone());
        fd_check(
            move |g, v| {
                let y = g.batch_norm2d_eval(v[0], v[1], v[2], &rm2, &rv2, 1e-5);
                let y = g.tanh(y);
                g.sum_all(y)
            },
            &[x.clone(), gamma.clone(), beta.clone()],
            1e-6,
        );
        // eval mode is elementwise affine: doubling one entry of x moves only that output
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let gm = g.constant(gamma);
        let bt = g.constant(beta);
        let y = g.batch_norm2d_eval(xv, gm, bt, &rm, &rv, 1e-5);
        let expected = (x[[0, 0, 0, 0]] - rm[0]) / (rv[0] + 1e-5).sqrt() * 1.1;
        assert!((g.value(y)[[0, 0, 0, 0]] - expected).abs() < 1e-12);
    }

    #[test]
    fn adaptive_max_pool_shapes_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        // 7x5 input to a 4x4 grid exercises uneven windows
        let x = randn(&mut rng, &[2, 3, 7, 5]);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = g.adaptive_max_pool2d(xv, 4, 4);
        assert_eq!(g.value(y).shape(), [2, 3, 4, 4]);
        fd_check(
            |g, v| {
                let y = g.adaptive_max_pool2d(v[0], 4, 4);
                let y = g.mul(y, y);
                g.sum_all(y)
            },
            &[x],
            1e-5,
        );
    }

    #[test]
    fn shared_leaf_accumulates_gradient_across_uses() {
        // y = w*w used twice: d/dw (w^2 + w^2) = 4w
        let w = ndarray::arr1(&[1.5, -2.0]).into_dyn();
        let mut g = Graph::new();
        let wv = g.leaf(w.clone());
        let a = g.mul(wv, wv);
        let b = g.mul(wv, wv);
        let s = g.add(a, b);
        let total = g.sum_all(s);
        let mut grads = g.backward(total);
        let gw = grads.take(wv).unwrap();
        for i in 0..2 {
            assert!((gw.as_slice().unwrap()[i] - 4.0 * w.as_slice().unwrap()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(ndarray::arr1(&[1.0, 2.0]).into_dyn());
        let l = g.leaf(ndarray::arr1(&[3.0, 4.0]).into_dyn());
        let m = g.mul(c, l);
        let s = g.sum_all(m);
        let mut grads = g.backward(s);
        assert!(grads.take(c).is_none());
        assert!(grads.take(l).is_some());
    }
}
