use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{Real, Tensor, TensorError};

type Backward<T> = Box<dyn Fn(&[T]) -> Vec<Vec<T>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<Backward<T>>,
    requires_grad: bool,
}

/// Records operations in creation order; `backward` replays them in reverse.
///
/// A tape belongs to one training step on one thread. Nodes are never
/// mutated once pushed.
pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of a scalar root with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros when the root does not depend on it.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

type BinaryGrad<T> = fn(T, T, T) -> (T, T);

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.insert(value, Vec::new(), None, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.insert(value, Vec::new(), None, false)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(value))
    }

    fn insert(
        &self,
        value: Tensor<T>,
        parents: Vec<usize>,
        backward: Option<Backward<T>>,
        requires_grad: bool,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push<F>(
        &self,
        op: &'static str,
        value: Tensor<T>,
        parents: Vec<usize>,
        backward: F,
    ) -> Result<Var<'_, T>, TensorError>
    where
        F: Fn(&[T]) -> Vec<Vec<T>> + 'static,
    {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        let backward: Option<Backward<T>> = if requires_grad { Some(Box::new(backward)) } else { None };
        Ok(self.insert(value, parents, backward, requires_grad))
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse-mode sweep from a one-element root.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>, TensorError> {
        let nodes = self.nodes.borrow();
        let root_shape = nodes[root.id].value.shape().to_vec();
        if nodes[root.id].value.len() != 1 {
            return Err(TensorError::NonScalarRoot(root_shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        if nodes[root.id].requires_grad {
            grads[root.id] = Some(vec![T::one()]);
        }
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let (lower, upper) = grads.split_at_mut(id);
            let Some(g) = upper[0].as_ref() else {
                continue;
            };
            let parent_grads = backward(g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                if !nodes[p].requires_grad {
                    continue;
                }
                match &mut lower[p] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(pg) {
                            *a = *a + v;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, node)| {
                g.map(|data| Tensor {
                    shape: node.value.shape().to_vec(),
                    data,
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Concatenate along axis 0. Trailing extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>, TensorError> {
        let first = parts.first().ok_or(TensorError::InvalidShape {
            op: "concat",
            shape: vec![],
            reason: "no operands".into(),
        })?;
        let trailing = first.shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        let mut sizes = Vec::with_capacity(parts.len());
        for part in parts {
            let v = part.value();
            if v.shape().is_empty() || v.shape()[1..] != trailing[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape(),
                    rhs: v.shape().to_vec(),
                });
            }
            lead += v.shape()[0];
            sizes.push(v.len());
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend(trailing);
        let parents = parts.iter().map(|p| p.id).collect();
        self.push("concat", Tensor { shape, data }, parents, move |g| {
            let mut out = Vec::with_capacity(sizes.len());
            let mut at = 0;
            for &n in &sizes {
                out.push(g[at..at + n].to_vec());
                at += n;
            }
            out
        })
    }
}

fn rows_of(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        Some((&n, lead)) => (lead.iter().product(), n),
        None => (1, 1),
    }
}

fn reduced_shape(shape: &[usize]) -> Vec<usize> {
    if shape.len() <= 1 {
        vec![1]
    } else {
        shape[..shape.len() - 1].to_vec()
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.value().data().to_vec()
    }

    /// Value of a one-element node.
    pub fn item(&self) -> Option<T> {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Constant copy; gradients stop here.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant((*self.value()).clone())
    }

    fn binary(
        &self,
        other: &Var<'t, T>,
        op: &'static str,
        f: fn(T, T) -> T,
        df: BinaryGrad<T>,
    ) -> Result<Var<'t, T>, TensorError> {
        let a = self.value();
        let b = other.value();
        let (shape, n) = if a.shape() == b.shape() || b.len() == 1 {
            (a.shape().to_vec(), a.len())
        } else if a.len() == 1 {
            (b.shape().to_vec(), b.len())
        } else {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        };
        let ia = move |i: usize, len: usize| if len == 1 { 0 } else { i };
        let (la, lb) = (a.len(), b.len());
        let data = (0..n)
            .map(|i| f(a.data()[ia(i, la)], b.data()[ia(i, lb)]))
            .collect::<Vec<_>>();
        let out = Rc::new(Tensor {
            shape: shape.clone(),
            data,
        });
        let out_c = Rc::clone(&out);
        let value = (*out).clone();
        self.tape.push(op, value, vec![self.id, other.id], move |g| {
            let mut ga = vec![T::zero(); la];
            let mut gb = vec![T::zero(); lb];
            for i in 0..n {
                let (da, db) = df(a.data()[ia(i, la)], b.data()[ia(i, lb)], out_c.data()[i]);
                ga[ia(i, la)] = ga[ia(i, la)] + g[i] * da;
                gb[ia(i, lb)] = gb[ia(i, lb)] + g[i] * db;
            }
            vec![ga, gb]
        })
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.binary(other, "add", |a, b| a + b, |_, _, _| (T::one(), T::one()))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.binary(other, "sub", |a, b| a - b, |_, _, _| (T::one(), -T::one()))
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.binary(other, "mul", |a, b| a * b, |a, b, _| (b, a))
    }

    pub fn div(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.binary(other, "div", |a, b| a / b, |_, b, y| (T::one() / b, -y / b))
    }

    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var<'t, T>, TensorError> {
        let x = self.value();
        let data: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
        let out = Rc::new(Tensor {
            shape: x.shape().to_vec(),
            data,
        });
        let out_c = Rc::clone(&out);
        self.tape.push(op, (*out).clone(), vec![self.id], move |g| {
            vec![x
                .data()
                .iter()
                .zip(out_c.data())
                .zip(g)
                .map(|((&xv, &yv), &gv)| gv * df(xv, yv))
                .collect()]
        })
    }

    pub fn neg(&self) -> Result<Var<'t, T>, TensorError> {
        self.unary("neg", |x| -x, |_, _| -T::one())
    }

    pub fn scale(&self, c: T) -> Result<Var<'t, T>, TensorError> {
        self.unary("scale", move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: T) -> Result<Var<'t, T>, TensorError> {
        self.unary("add_scalar", move |x| x + c, |_, _| T::one())
    }

    pub fn square(&self) -> Result<Var<'t, T>, TensorError> {
        self.unary("square", |x| x * x, |x, _| x + x)
    }

    /// Subgradient 0 at the kink.
    pub fn relu(&self) -> Result<Var<'t, T>, TensorError> {
        self.unary(
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn tanh(&self) -> Result<Var<'t, T>, TensorError> {
        self.unary("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>, TensorError> {
        let reshaped = self.value().reshape(shape)?;
        self.tape.push("reshape", reshaped, vec![self.id], |g| vec![g.to_vec()])
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Result<Var<'t, T>, TensorError> {
        let x = self.value();
        let n = x.len();
        let total = x.data().iter().copied().sum();
        self.tape.push("sum", Tensor::scalar(total), vec![self.id], move |g| {
            vec![vec![g[0]; n]]
        })
    }

    /// Sum along the last axis.
    pub fn sum_last(&self) -> Result<Var<'t, T>, TensorError> {
        let x = self.value();
        let (rows, cols) = rows_of(x.shape());
        let data = x.data().chunks(cols.max(1)).map(|r| r.iter().copied().sum()).collect();
        let data = if cols == 0 { vec![T::zero(); rows] } else { data };
        let out = Tensor {
            shape: reduced_shape(x.shape()),
            data,
        };
        self.tape.push("sum_last", out, vec![self.id], move |g| {
            let mut gx = Vec::with_capacity(rows * cols);
            for &gr in g.iter().take(rows) {
                gx.extend(std::iter::repeat_n(gr, cols));
            }
            vec![gx]
        })
    }

    /// Maximum along the last axis; the gradient goes to the first maximal entry.
    pub fn max_last(&self) -> Result<Var<'t, T>, TensorError> {
        let x = self.value();
        let (rows, cols) = rows_of(x.shape());
        if cols == 0 {
            return Err(TensorError::InvalidShape {
                op: "max_last",
                shape: x.shape().to_vec(),
                reason: "empty reduction axis".into(),
            });
        }
        let mut argmax = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows);
        for row in x.data().chunks(cols) {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            argmax.push(best);
            data.push(row[best]);
        }
        let out = Tensor {
            shape: reduced_shape(x.shape()),
            data,
        };
        self.tape.push("max_last", out, vec![self.id], move |g| {
            let mut gx = vec![T::zero(); rows * cols];
            for (r, &k) in argmax.iter().enumerate() {
                gx[r * cols + k] = g[r];
            }
            vec![gx]
        })
    }

    /// Euclidean norm along the last axis (subgradient 0 at the origin).
    pub fn norm_last(&self) -> Result<Var<'t, T>, TensorError> {
        let x = self.value();
        let (rows, cols) = rows_of(x.shape());
        let norms: Vec<T> = x
            .data()
            .chunks(cols.max(1))
            .map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        let out = Tensor {
            shape: reduced_shape(x.shape()),
            data: norms.clone(),
        };
        self.tape.push("norm_last", out, vec![self.id], move |g| {
            let mut gx = vec![T::zero(); rows * cols];
            for r in 0..rows {
                if norms[r] > T::zero() {
                    for c in 0..cols {
                        gx[r * cols + c] = g[r] * x.data()[r * cols + c] / norms[r];
                    }
                }
            }
            vec![gx]
        })
    }

    /// L2-normalizes along the last axis; all-zero rows stay zero.
    pub fn l2_normalize_last(&self) -> Result<Var<'t, T>, TensorError> {
        let x = self.value();
        let (rows, cols) = rows_of(x.shape());
        let mut norms = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows * cols);
        for row in x.data().chunks(cols.max(1)) {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            norms.push(n);
            if n > T::zero() {
                data.extend(row.iter().map(|&v| v / n));
            } else {
                data.extend(std::iter::repeat_n(T::zero(), row.len()));
            }
        }
        let out = Rc::new(Tensor {
            shape: x.shape().to_vec(),
            data,
        });
        let y = Rc::clone(&out);
        self.tape.push("l2_normalize", (*out).clone(), vec![self.id], move |g| {
            let mut gx = vec![T::zero(); rows * cols];
            for r in 0..rows {
                if norms[r] == T::zero() {
                    continue;
                }
                let yr = &y.data()[r * cols..(r + 1) * cols];
                let gr = &g[r * cols..(r + 1) * cols];
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for c in 0..cols {
                    gx[r * cols + c] = (gr[c] - yr[c] * dot) / norms[r];
                }
            }
            vec![gx]
        })
    }

    /// Rank-2 matrix product `(m,k) x (k,n) -> (m,n)`.
    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        let a = self.value();
        let b = other.value();
        let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        };
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = matmul_raw(a.data(), b.data(), m, k, n);
        let out = Tensor {
            shape: vec![m, n],
            data,
        };
        self.tape.push("matmul", out, vec![self.id, other.id], move |g| {
            // dA = G B^T, dB = A^T G
            let mut ga = vec![T::zero(); m * k];
            for i in 0..m {
                for j in 0..n {
                    let gij = g[i * n + j];
                    if gij == T::zero() {
                        continue;
                    }
                    for l in 0..k {
                        ga[i * k + l] = ga[i * k + l] + gij * b.data()[l * n + j];
                    }
                }
            }
            let mut gb = vec![T::zero(); k * n];
            for i in 0..m {
                for l in 0..k {
                    let ail = a.data()[i * k + l];
                    if ail == T::zero() {
                        continue;
                    }
                    for j in 0..n {
                        gb[l * n + j] = gb[l * n + j] + ail * g[i * n + j];
                    }
                }
            }
            vec![ga, gb]
        })
    }

    pub fn transpose(&self) -> Result<Var<'t, T>, TensorError> {
        let x = self.value();
        let &[r, c] = x.shape() else {
            return Err(TensorError::InvalidShape {
                op: "transpose",
                shape: x.shape().to_vec(),
                reason: "rank 2 required".into(),
            });
        };
        let out = Tensor {
            shape: vec![c, r],
            data: transpose_raw(x.data(), r, c),
        };
        self.tape
            .push("transpose", out, vec![self.id], move |g| vec![transpose_raw(g, c, r)])
    }

    /// Picks flat elements by index into a tensor of `shape`.
    pub fn gather(&self, indices: &[usize], shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>, TensorError> {
        let x = self.value();
        let shape = shape.into();
        if shape.iter().product::<usize>() != indices.len() {
            return Err(TensorError::InvalidShape {
                op: "gather",
                shape,
                reason: format!("{} indices", indices.len()),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(TensorError::InvalidShape {
                op: "gather",
                shape: x.shape().to_vec(),
                reason: format!("index {bad} out of range"),
            });
        }
        let data = indices.iter().map(|&i| x.data()[i]).collect();
        let indices = indices.to_vec();
        let n = x.len();
        self.tape
            .push("gather", Tensor { shape, data }, vec![self.id], move |g| {
                let mut gx = vec![T::zero(); n];
                for (k, &i) in indices.iter().enumerate() {
                    gx[i] = gx[i] + g[k];
                }
                vec![gx]
            })
    }

    /// Column concatenation of `(n,p)` and `(n,r)` into `(n,p+r)`.
    pub fn concat_cols(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        let a = self.value();
        let b = other.value();
        let (&[n, p], &[n2, r]) = (a.shape(), b.shape()) else {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        };
        if n != n2 {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(n * (p + r));
        for i in 0..n {
            data.extend_from_slice(&a.data()[i * p..(i + 1) * p]);
            data.extend_from_slice(&b.data()[i * r..(i + 1) * r]);
        }
        let out = Tensor {
            shape: vec![n, p + r],
            data,
        };
        self.tape.push("concat_cols", out, vec![self.id, other.id], move |g| {
            let mut ga = Vec::with_capacity(n * p);
            let mut gb = Vec::with_capacity(n * r);
            for i in 0..n {
                let row = &g[i * (p + r)..(i + 1) * (p + r)];
                ga.extend_from_slice(&row[..p]);
                gb.extend_from_slice(&row[p..]);
            }
            vec![ga, gb]
        })
    }

    /// Bilinear sampling of a `(h, w, d)` grid at `(n, 2)` normalized `(x, y)`
    /// coordinates. Grid corners sit at -1 and 1; samples outside the grid
    /// read zeros. Differentiable in both the grid and the coordinates.
    pub fn bilinear_sample(&self, coords: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        let grid = self.value();
        let pts = coords.value();
        let (&[h, w, d], &[n, 2]) = (grid.shape(), pts.shape()) else {
            return Err(TensorError::ShapeMismatch {
                op: "bilinear_sample",
                lhs: grid.shape().to_vec(),
                rhs: pts.shape().to_vec(),
            });
        };
        let half = T::lit(0.5);
        let sx = T::from_usize(w - 1).unwrap() * half;
        let sy = T::from_usize(h - 1).unwrap() * half;
        let taps = move |i: usize| -> [(Option<usize>, T, T, T); 4] {
            let x = (pts.data()[2 * i] + T::one()) * sx;
            let y = (pts.data()[2 * i + 1] + T::one()) * sy;
            let x0 = x.floor();
            let y0 = y.floor();
            let fx = x - x0;
            let fy = y - y0;
            let cell = |yy: T, xx: T| -> Option<usize> {
                let (xi, yi) = (xx.to_i64()?, yy.to_i64()?);
                (xi >= 0 && yi >= 0 && (xi as usize) < w && (yi as usize) < h).then(|| yi as usize * w + xi as usize)
            };
            let one = T::one();
            // (cell, weight, d weight / d x_cell, d weight / d y_cell)
            [
                (cell(y0, x0), (one - fx) * (one - fy), -(one - fy), -(one - fx)),
                (cell(y0, x0 + one), fx * (one - fy), one - fy, -fx),
                (cell(y0 + one, x0), (one - fx) * fy, -fy, one - fx),
                (cell(y0 + one, x0 + one), fx * fy, fy, fx),
            ]
        };
        let mut data = vec![T::zero(); n * d];
        for i in 0..n {
            for (c, wgt, _, _) in taps(i) {
                if let Some(c) = c {
                    for k in 0..d {
                        data[i * d + k] = data[i * d + k] + wgt * grid.data()[c * d + k];
                    }
                }
            }
        }
        let out = Tensor {
            shape: vec![n, d],
            data,
        };
        let grid_c = Rc::clone(&grid);
        self.tape
            .push("bilinear_sample", out, vec![self.id, coords.id], move |g| {
                let mut gg = vec![T::zero(); h * w * d];
                let mut gc = vec![T::zero(); n * 2];
                for i in 0..n {
                    let gi = &g[i * d..(i + 1) * d];
                    for (c, wgt, dwx, dwy) in taps(i) {
                        let Some(c) = c else { continue };
                        let mut dot = T::zero();
                        for k in 0..d {
                            gg[c * d + k] = gg[c * d + k] + wgt * gi[k];
                            dot = dot + gi[k] * grid_c.data()[c * d + k];
                        }
                        gc[2 * i] = gc[2 * i] + dot * dwx * sx;
                        gc[2 * i + 1] = gc[2 * i + 1] + dot * dwy * sy;
                    }
                }
                vec![gg, gc]
            })
    }

    /// Thin-plate radial basis `U = r^2 ln(r^2)` of `(n, 2)` offsets, with
    /// `U(0) = 0` and zero gradient at the origin.
    pub fn tps_radial(&self) -> Result<Var<'t, T>, TensorError> {
        let x = self.value();
        let &[n, 2] = x.shape() else {
            return Err(TensorError::InvalidShape {
                op: "tps_radial",
                shape: x.shape().to_vec(),
                reason: "expects (n, 2) offsets".into(),
            });
        };
        let sq = |i: usize| {
            let (dx, dy) = (x.data()[2 * i], x.data()[2 * i + 1]);
            dx * dx + dy * dy
        };
        let data = (0..n)
            .map(|i| {
                let s = sq(i);
                if s > T::zero() {
                    s * s.ln()
                } else {
                    T::zero()
                }
            })
            .collect();
        let x_c = Rc::clone(&x);
        self.tape
            .push("tps_radial", Tensor { shape: vec![n], data }, vec![self.id], move |g| {
                let mut gx = vec![T::zero(); 2 * n];
                for i in 0..n {
                    let (dx, dy) = (x_c.data()[2 * i], x_c.data()[2 * i + 1]);
                    let s = dx * dx + dy * dy;
                    if s > T::zero() {
                        let k = g[i] * (s.ln() + T::one()) * T::lit(2.0);
                        gx[2 * i] = k * dx;
                        gx[2 * i + 1] = k * dy;
                    }
                }
                vec![gx]
            })
    }
}

pub(crate) fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for l in 0..k {
            let ail = a[i * k + l];
            if ail == T::zero() {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + ail * bv;
            }
        }
    }
    out
}

fn transpose_raw<T: Real>(x: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn relu_forward() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(t(&[-1.0, 0.0, 2.0]));
        assert_eq!(x.relu().unwrap().to_vec(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn normalize_three_four_five() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let y = x.l2_normalize_last().unwrap().to_vec();
        assert!((y[0] - 0.6).abs() < 1e-7 && (y[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn normalize_keeps_zero_rows() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::new([2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap());
        let y = x.l2_normalize_last().unwrap();
        assert_eq!(&y.to_vec()[..2], &[0.0, 0.0]);
        let g = tape.backward(y.sum().unwrap()).unwrap();
        assert_eq!(&g.wrt(x).data()[..2], &[0.0, 0.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[0.3, -2.0, 5.0]));
        let g = tape.backward(x.sum().unwrap()).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn relu_subgradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[-1.0, 2.0]));
        let g = tape.backward(x.relu().unwrap().sum().unwrap()).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 1.0]);
    }

    #[test]
    fn max_ties_route_to_first() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new([1, 3], vec![2.0, 2.0, 1.0]).unwrap());
        let g = tape.backward(x.max_last().unwrap().sum().unwrap()).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1.0, 2.0]));
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NonScalarRoot(s)) if s == vec![2]
        ));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(t(&[1.0, 2.0]));
        let b = tape.constant(t(&[1.0, 2.0, 3.0]));
        let err = a.add(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn division_by_zero_is_numeric_error() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(t(&[1.0]));
        let b = tape.constant(t(&[0.0]));
        assert_eq!(a.div(&b).unwrap_err(), TensorError::NonFinite { op: "div" });
    }

    #[test]
    fn scalar_broadcast_accumulates_gradient() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(t(&[1.0, 2.0, 3.0]));
        let s = tape.leaf(t(&[2.0]));
        let y = a.mul(&s).unwrap().sum().unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(s).data(), &[6.0]);
        assert_eq!(g.wrt(a).data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn reused_leaf_accumulates_once_per_use() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3.0]));
        let y = x.mul(&x).unwrap().add(&x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[7.0]);
    }

    #[test]
    fn constants_record_no_backward() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(t(&[1.0, 2.0]));
        let y = a.square().unwrap().sum().unwrap();
        assert!(!y.requires_grad());
        let g = tape.backward(y).unwrap();
        assert!(g.get(a).is_none());
    }

    #[test]
    fn bilinear_sample_hits_grid_nodes() {
        let tape = Tape::<f64>::new();
        let grid = tape.constant(Tensor::new([2, 3, 1], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        let pts = tape.constant(Tensor::new([3, 2], vec![-1.0, -1.0, 1.0, 1.0, 0.0, 0.0]).unwrap());
        let v = grid.bilinear_sample(&pts).unwrap().to_vec();
        assert_eq!(v, vec![0.0, 5.0, 2.5]);
        let outside = tape.constant(Tensor::new([1, 2], vec![3.5, 0.0]).unwrap());
        assert_eq!(grid.bilinear_sample(&outside).unwrap().to_vec(), vec![0.0]);
    }

    #[test]
    fn tps_radial_values() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new([2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap());
        let u = x.tps_radial().unwrap();
        let v = u.to_vec();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 2.0 * 2f64.ln()).abs() < 1e-12);
        let g = tape.backward(u.sum().unwrap()).unwrap();
        assert_eq!(&g.wrt(x).data()[..2], &[0.0, 0.0]);
    }
}
