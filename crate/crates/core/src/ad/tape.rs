//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation eagerly (values are computed when the
//! node is created). [`Var`] is a cheap handle into the tape. Binary
//! elementwise operations broadcast along any axis of length one, and the
//! backward pass sums gradients back down to the operand shape.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use ndarray::{concatenate, s, Array2, Axis};

pub type Tensor = Array2<f64>;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    /// `y = scale * x + shift`
    Affine(usize, f64),
    /// `y = f(x)`, with `f'(x)` stored elementwise.
    Unary(usize, Tensor),
    SumAll(usize),
    /// Sum over rows, producing `1 x n`.
    SumRows(usize),
    /// Sum over columns, producing `n x 1`.
    SumCols(usize),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Transpose(usize),
    Reshape(usize),
    Broadcast(usize),
}

#[derive(Default)]
struct Inner {
    values: Vec<Tensor>,
    ops: Vec<Op>,
}

/// Recording context. Cloning shares the same underlying tape.
#[derive(Clone, Default)]
pub struct Tape(Rc<RefCell<Inner>>);

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.0.borrow().values.len())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
    shape: (usize, usize),
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape)
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("incompatible shapes for broadcast: {a:?} vs {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

fn expand(t: &Tensor, shape: (usize, usize)) -> Tensor {
    if t.dim() == shape {
        t.clone()
    } else {
        t.broadcast(shape)
            .unwrap_or_else(|| panic!("cannot broadcast {:?} to {shape:?}", t.dim()))
            .to_owned()
    }
}

/// Sum a gradient down to `shape` (inverse of broadcasting).
fn reduce_to(g: Tensor, shape: (usize, usize)) -> Tensor {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.0.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let shape = value.dim();
        let mut inner = self.0.borrow_mut();
        inner.values.push(value);
        inner.ops.push(op);
        Var {
            tape: self.clone(),
            id: inner.values.len() - 1,
            shape,
        }
    }

    /// A constant (non-differentiated) input.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, c: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), c))
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Var {
        self.constant(Array2::zeros((rows, cols)))
    }

    /// A column vector `n x 1`.
    pub fn column(&self, values: &[f64]) -> Var {
        self.constant(Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap())
    }

    /// A trainable parameter bound to slot `index` of a parameter store.
    pub fn param(&self, index: usize, value: Tensor) -> Var {
        self.push(value, Op::Param(index))
    }
}

/// Gradients produced by [`Var::backward`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, usize)>,
}

impl Grads {
    /// Gradient with respect to `v`, or `None` if `v` does not influence the output.
    pub fn wrt(&self, v: &Var) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// `(parameter slot, gradient)` for every parameter leaf reached.
    pub fn params(&self) -> impl Iterator<Item = (usize, &Tensor)> + '_ {
        self.params
            .iter()
            .filter_map(|&(slot, id)| self.grads[id].as_ref().map(|g| (slot, g)))
    }
}

impl Var {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.0
    }

    pub fn cols(&self) -> usize {
        self.shape.1
    }

    pub fn value(&self) -> Tensor {
        self.tape.0.borrow().values[self.id].clone()
    }

    /// Apply `f` to a borrowed view of the value.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.0.borrow().values[self.id])
    }

    /// The single entry of a `1 x 1` node.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape, (1, 1), "item() on non-scalar {:?}", self.shape);
        self.with_value(|v| v[[0, 0]])
    }

    fn same_tape(&self, other: &Var) {
        debug_assert!(
            Rc::ptr_eq(&self.tape.0, &other.tape.0),
            "operands recorded on different tapes"
        );
    }

    fn binary(&self, other: &Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        self.same_tape(other);
        let shape = broadcast_shape(self.shape, other.shape);
        let value = {
            let inner = self.tape.0.borrow();
            let a = &inner.values[self.id];
            let b = &inner.values[other.id];
            let a = a.broadcast(shape).unwrap();
            let b = b.broadcast(shape).unwrap();
            let mut out = Array2::zeros(shape);
            ndarray::Zip::from(&mut out)
                .and(&a)
                .and(&b)
                .for_each(|o, &x, &y| *o = f(x, y));
            out
        };
        self.tape.push(value, op)
    }

    pub fn add(&self, other: &Var) -> Var {
        self.binary(other, |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var) -> Var {
        self.binary(other, |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var) -> Var {
        self.binary(other, |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: &Var) -> Var {
        self.binary(other, |a, b| a / b, Op::Div(self.id, other.id))
    }

    pub fn matmul(&self, other: &Var) -> Var {
        self.same_tape(other);
        assert_eq!(
            self.shape.1, other.shape.0,
            "matmul shape mismatch {:?} x {:?}",
            self.shape, other.shape
        );
        let value = {
            let inner = self.tape.0.borrow();
            inner.values[self.id].dot(&inner.values[other.id])
        };
        self.tape.push(value, Op::MatMul(self.id, other.id))
    }

    /// `scale * self + shift`
    pub fn affine(&self, scale: f64, shift: f64) -> Var {
        let value = self.with_value(|v| v.mapv(|x| scale * x + shift));
        self.tape.push(value, Op::Affine(self.id, scale))
    }

    pub fn scale(&self, c: f64) -> Var {
        self.affine(c, 0.0)
    }

    pub fn shift(&self, c: f64) -> Var {
        self.affine(1.0, c)
    }

    /// Elementwise map with known derivative.
    pub fn unary(&self, f: impl Fn(f64) -> (f64, f64)) -> Var {
        let (value, deriv) = self.with_value(|v| {
            let mut val = Array2::zeros(v.dim());
            let mut der = Array2::zeros(v.dim());
            ndarray::Zip::from(&mut val)
                .and(&mut der)
                .and(v)
                .for_each(|y, dy, &x| {
                    let (a, b) = f(x);
                    *y = a;
                    *dy = b;
                });
            (val, der)
        });
        self.tape.push(value, Op::Unary(self.id, deriv))
    }

    pub fn tanh(&self) -> Var {
        self.unary(|x| {
            let y = x.tanh();
            (y, 1.0 - y * y)
        })
    }

    pub fn exp(&self) -> Var {
        self.unary(|x| {
            let y = x.exp();
            (y, y)
        })
    }

    pub fn ln(&self) -> Var {
        self.unary(|x| (x.ln(), 1.0 / x))
    }

    /// Square root; the derivative at exactly zero is taken as zero so that
    /// norms of vanishing vectors stay differentiable.
    pub fn sqrt(&self) -> Var {
        self.unary(|x| {
            let y = x.sqrt();
            (y, if y > 0.0 { 0.5 / y } else { 0.0 })
        })
    }

    pub fn powf(&self, p: f64) -> Var {
        self.unary(|x| (x.powf(p), p * x.powf(p - 1.0)))
    }

    pub fn square(&self) -> Var {
        self.unary(|x| (x * x, 2.0 * x))
    }

    pub fn recip(&self) -> Var {
        self.unary(|x| (1.0 / x, -1.0 / (x * x)))
    }

    pub fn sin(&self) -> Var {
        self.unary(|x| (x.sin(), x.cos()))
    }

    pub fn cos(&self) -> Var {
        self.unary(|x| (x.cos(), -x.sin()))
    }

    pub fn abs(&self) -> Var {
        self.unary(|x| (x.abs(), if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 }))
    }

    pub fn signum(&self) -> Var {
        let value = self.with_value(|v| {
            v.mapv(|x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
        });
        self.tape.constant(value)
    }

    /// `max(x, c)`; gradient passes only where `x > c`.
    pub fn clamp_min(&self, c: f64) -> Var {
        self.unary(|x| if x > c { (x, 1.0) } else { (c, 0.0) })
    }

    /// A copy of the value with no gradient path back to `self`.
    pub fn detach(&self) -> Var {
        self.tape.constant(self.value())
    }

    pub fn sum(&self) -> Var {
        let value = self.with_value(|v| Array2::from_elem((1, 1), v.sum()));
        self.tape.push(value, Op::SumAll(self.id))
    }

    pub fn mean(&self) -> Var {
        let n = (self.shape.0 * self.shape.1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum down the rows, giving `1 x cols`.
    pub fn sum_rows(&self) -> Var {
        let value = self.with_value(|v| v.sum_axis(Axis(0)).insert_axis(Axis(0)));
        self.tape.push(value, Op::SumRows(self.id))
    }

    /// Sum across the columns, giving `rows x 1`.
    pub fn sum_cols(&self) -> Var {
        let value = self.with_value(|v| v.sum_axis(Axis(1)).insert_axis(Axis(1)));
        self.tape.push(value, Op::SumCols(self.id))
    }

    pub fn cols_range(&self, start: usize, len: usize) -> Var {
        assert!(start + len <= self.shape.1, "column slice out of range");
        if start == 0 && len == self.shape.1 {
            return self.clone();
        }
        let value = self.with_value(|v| v.slice(s![.., start..start + len]).to_owned());
        self.tape.push(value, Op::SliceCols(self.id, start))
    }

    pub fn col(&self, j: usize) -> Var {
        self.cols_range(j, 1)
    }

    pub fn rows_range(&self, start: usize, len: usize) -> Var {
        assert!(start + len <= self.shape.0, "row slice out of range");
        if start == 0 && len == self.shape.0 {
            return self.clone();
        }
        let value = self.with_value(|v| v.slice(s![start..start + len, ..]).to_owned());
        self.tape.push(value, Op::SliceRows(self.id, start))
    }

    pub fn concat_cols(parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let tape = parts[0].tape.clone();
        let rows = parts.iter().map(|p| p.rows()).max().unwrap();
        let parts: Vec<Var> = parts.iter().map(|p| p.broadcast_to((rows, p.cols()))).collect();
        let value = {
            let inner = tape.0.borrow();
            let views: Vec<_> = parts.iter().map(|p| inner.values[p.id].view()).collect();
            concatenate(Axis(1), &views).unwrap()
        };
        tape.push(value, Op::ConcatCols(parts.iter().map(|p| p.id).collect()))
    }

    pub fn concat_rows(parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let tape = parts[0].tape.clone();
        let cols = parts.iter().map(|p| p.cols()).max().unwrap();
        let parts: Vec<Var> = parts.iter().map(|p| p.broadcast_to((p.rows(), cols))).collect();
        let value = {
            let inner = tape.0.borrow();
            let views: Vec<_> = parts.iter().map(|p| inner.values[p.id].view()).collect();
            concatenate(Axis(0), &views).unwrap()
        };
        tape.push(value, Op::ConcatRows(parts.iter().map(|p| p.id).collect()))
    }

    pub fn t(&self) -> Var {
        let value = self.with_value(|v| v.t().to_owned());
        self.tape.push(value, Op::Transpose(self.id))
    }

    /// Row-major reshape.
    pub fn reshape(&self, rows: usize, cols: usize) -> Var {
        assert_eq!(rows * cols, self.shape.0 * self.shape.1, "reshape size mismatch");
        if (rows, cols) == self.shape {
            return self.clone();
        }
        let value = self.with_value(|v| {
            let flat: Vec<f64> = v.iter().copied().collect();
            Array2::from_shape_vec((rows, cols), flat).unwrap()
        });
        self.tape.push(value, Op::Reshape(self.id))
    }

    pub fn broadcast_to(&self, shape: (usize, usize)) -> Var {
        if shape == self.shape {
            return self.clone();
        }
        let value = self.with_value(|v| expand(v, shape));
        self.tape.push(value, Op::Broadcast(self.id))
    }

    /// Reverse pass from a `1 x 1` output.
    pub fn backward(&self) -> Grads {
        assert_eq!(self.shape, (1, 1), "backward() requires a scalar output");
        let inner = self.tape.0.borrow();
        let n = self.id + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[self.id] = Some(Array2::ones((1, 1)));
        let mut params = Vec::new();

        fn acc(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
            match &mut grads[id] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for id in (0..n).rev() {
            let op = &inner.ops[id];
            match op {
                Op::Leaf => continue,
                Op::Param(slot) => {
                    params.push((*slot, id));
                    continue;
                }
                _ => {}
            }
            let Some(g) = grads[id].take() else { continue };
            let vals = &inner.values;
            match op {
                Op::Leaf | Op::Param(_) => unreachable!(),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, reduce_to(g.clone(), vals[*a].dim()));
                    acc(&mut grads, *b, reduce_to(g, vals[*b].dim()));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, reduce_to(g.clone(), vals[*a].dim()));
                    acc(&mut grads, *b, reduce_to(-g, vals[*b].dim()));
                }
                Op::Mul(a, b) => {
                    let ga = &g * &vals[*b];
                    let gb = &g * &vals[*a];
                    acc(&mut grads, *a, reduce_to(ga, vals[*a].dim()));
                    acc(&mut grads, *b, reduce_to(gb, vals[*b].dim()));
                }
                Op::Div(a, b) => {
                    let shape = g.dim();
                    let bv = expand(&vals[*b], shape);
                    let ga = &g / &bv;
                    let gb = -(&ga * &vals[id]);
                    acc(&mut grads, *a, reduce_to(ga, vals[*a].dim()));
                    acc(&mut grads, *b, reduce_to(gb, vals[*b].dim()));
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&vals[*b].t());
                    let gb = vals[*a].t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Affine(a, scale) => acc(&mut grads, *a, g * *scale),
                Op::Unary(a, deriv) => acc(&mut grads, *a, g * deriv),
                Op::SumAll(a) => {
                    let c = g[[0, 0]];
                    acc(&mut grads, *a, Array2::from_elem(vals[*a].dim(), c));
                }
                Op::SumRows(a) => acc(&mut grads, *a, expand(&g, vals[*a].dim())),
                Op::SumCols(a) => acc(&mut grads, *a, expand(&g, vals[*a].dim())),
                Op::SliceCols(a, start) => {
                    let mut full = Array2::zeros(vals[*a].dim());
                    full.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, full);
                }
                Op::SliceRows(a, start) => {
                    let mut full = Array2::zeros(vals[*a].dim());
                    full.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, full);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = vals[p].ncols();
                        acc(&mut grads, p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = vals[p].nrows();
                        acc(&mut grads, p, g.slice(s![offset..offset + h, ..]).to_owned());
                        offset += h;
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Reshape(a) => {
                    let (r, c) = vals[*a].dim();
                    let flat: Vec<f64> = g.iter().copied().collect();
                    acc(&mut grads, *a, Array2::from_shape_vec((r, c), flat).unwrap());
                }
                Op::Broadcast(a) => acc(&mut grads, *a, reduce_to(g, vals[*a].dim())),
            }
            // keep gradients of leaves only; interior nodes are consumed
        }
        // restore the seed so callers can inspect d(out)/d(out)
        if grads[self.id].is_none() {
            grads[self.id] = Some(Array2::ones((1, 1)));
        }
        Grads { grads, params }
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $inherent:ident) => {
        impl $trait<Var> for Var {
            type Output = Var;
            fn $method(self, rhs: Var) -> Var {
                Var::$inherent(&self, &rhs)
            }
        }
        impl<'a> $trait<&'a Var> for Var {
            type Output = Var;
            fn $method(self, rhs: &'a Var) -> Var {
                Var::$inherent(&self, rhs)
            }
        }
        impl<'a> $trait<Var> for &'a Var {
            type Output = Var;
            fn $method(self, rhs: Var) -> Var {
                Var::$inherent(self, &rhs)
            }
        }
        impl<'a, 'b> $trait<&'b Var> for &'a Var {
            type Output = Var;
            fn $method(self, rhs: &'b Var) -> Var {
                Var::$inherent(self, rhs)
            }
        }
    };
}

binop!(Add, add, add);
binop!(Sub, sub, sub);
binop!(Mul, mul, mul);
binop!(Div, div, div);

impl Add<f64> for Var {
    type Output = Var;
    fn add(self, rhs: f64) -> Var {
        self.shift(rhs)
    }
}

impl Add<f64> for &Var {
    type Output = Var;
    fn add(self, rhs: f64) -> Var {
        self.shift(rhs)
    }
}

impl Sub<f64> for Var {
    type Output = Var;
    fn sub(self, rhs: f64) -> Var {
        self.shift(-rhs)
    }
}

impl Sub<f64> for &Var {
    type Output = Var;
    fn sub(self, rhs: f64) -> Var {
        self.shift(-rhs)
    }
}

impl Mul<f64> for Var {
    type Output = Var;
    fn mul(self, rhs: f64) -> Var {
        self.scale(rhs)
    }
}

impl Mul<f64> for &Var {
    type Output = Var;
    fn mul(self, rhs: f64) -> Var {
        self.scale(rhs)
    }
}

impl Div<f64> for Var {
    type Output = Var;
    fn div(self, rhs: f64) -> Var {
        self.scale(1.0 / rhs)
    }
}

impl Div<f64> for &Var {
    type Output = Var;
    fn div(self, rhs: f64) -> Var {
        self.scale(1.0 / rhs)
    }
}

impl Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        self.scale(-1.0)
    }
}

impl Neg for &Var {
    type Output = Var;
    fn neg(self) -> Var {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_check(build: impl Fn(&Tape, &Var) -> Var, x0: Tensor) {
        let tape = Tape::new();
        let x = tape.param(0, x0.clone());
        let y = build(&tape, &x);
        let grads = y.backward();
        let g = grads.wrt(&x).unwrap().clone();
        let h = 1e-6;
        for idx in 0..x0.len() {
            let (r, c) = (idx / x0.ncols(), idx % x0.ncols());
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp[[r, c]] += delta;
                let t = Tape::new();
                build(&t, &t.constant(xp)).item()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(
                (fd - g[[r, c]]).abs() < 1e-6 * (1.0 + fd.abs()),
                "entry {idx}: fd {fd} vs ad {}",
                g[[r, c]]
            );
        }
    }

    #[test]
    fn matmul_tanh_chain_matches_fd() {
        let w = array![[0.3, -0.2, 0.5], [0.1, 0.7, -0.4]];
        fd_check(
            move |t, x| {
                let w = t.constant(w.clone());
                x.matmul(&w).tanh().square().sum()
            },
            array![[0.2, -0.1], [0.5, 0.3], [-0.6, 0.9]],
        );
    }

    #[test]
    fn broadcast_ops_reduce_gradients() {
        fd_check(
            |t, x| {
                let row = t.constant(array![[1.0, 2.0, -1.0]]);
                let col = x.sum_cols();
                ((x + &row) * &col / (x.square() + 1.0)).sum()
            },
            array![[0.2, -0.1, 0.4], [0.5, 0.3, -0.2]],
        );
    }

    #[test]
    fn slicing_concat_reshape_roundtrip() {
        fd_check(
            |_, x| {
                let a = x.cols_range(0, 1);
                let b = x.cols_range(1, 2);
                let c = Var::concat_cols(&[b.clone(), a.clone()]);
                let r = c.reshape(3, 2).t();
                let rows = Var::concat_rows(&[r.rows_range(0, 1), r.rows_range(1, 1).sin()]);
                (rows.sum_rows().exp().sum() + c.powf(3.0).mean()).ln()
            },
            array![[0.2, -0.1, 0.4], [0.5, 0.3, -0.2]],
        );
    }

    #[test]
    fn sqrt_at_zero_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.param(0, array![[0.0, 4.0]]);
        let y = x.sqrt().sum();
        let g = y.backward();
        assert_eq!(g.wrt(&x).unwrap(), &array![[0.0, 0.25]]);
        assert_eq!(y.item(), 2.0);
    }

    #[test]
    fn params_are_reported_by_slot() {
        let tape = Tape::new();
        let a = tape.param(3, array![[2.0]]);
        let b = tape.param(7, array![[5.0]]);
        let y = &a * &b;
        let grads = y.backward();
        let mut got: Vec<(usize, f64)> = grads.params().map(|(s, g)| (s, g[[0, 0]])).collect();
        got.sort_by_key(|p| p.0);
        assert_eq!(got, vec![(3, 5.0), (7, 2.0)]);
    }
}
