//! Tape-based reverse-mode automatic differentiation over real scalars.
//!
//! The field computation is recorded as a flat Wengert tape during the
//! forward pass; a single reverse sweep then yields the gradient of a
//! scalar loss with respect to every leaf. Complex quantities are pairs
//! of real variables ([`CVar`]), so no special complex-differentiation
//! convention is needed: the loss is real and every complex operation
//! decomposes into real primitives.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Floor applied inside guarded square roots so path powers that
/// underflow do not produce NaN gradients.
pub const SQRT_FLOOR: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Pow,
    Sigmoid,
    Relu,
    Abs,
    Recip,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

#[derive(Clone, Copy)]
struct Node {
    n: u8,
    parents: [u32; 2],
    partials: [f64; 2],
}

#[derive(Debug, thiserror::Error)]
pub enum AdError {
    #[error("loss is not finite (value {value}); first non-finite node: #{node} ({kind})")]
    NonFiniteLoss { value: f64, node: u32, kind: OpKind },
}

/// Append-only record of primitives. Parent indices are strictly less
/// than child indices, so a single reverse sweep visits each node once.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    first_non_finite: Cell<Option<(u32, OpKind)>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            first_non_finite: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Creates a leaf variable (constant or trainable parameter).
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(OpKind::Leaf, value, &[], &[])
    }

    fn push(&self, kind: OpKind, value: f64, parents: &[u32], partials: &[f64]) -> Var<'_> {
        debug_assert_eq!(parents.len(), partials.len());
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        let mut p = [0u32; 2];
        let mut d = [0f64; 2];
        p[..parents.len()].copy_from_slice(parents);
        d[..partials.len()].copy_from_slice(partials);
        nodes.push(Node {
            n: parents.len() as u8,
            parents: p,
            partials: d,
        });
        if !value.is_finite() && self.first_non_finite.get().is_none() {
            self.first_non_finite.set(Some((idx, kind)));
        }
        Var {
            tape: self,
            idx,
            val: value,
        }
    }

    /// Reverse sweep from `loss`. Returns the adjoint of every node;
    /// leaves that do not contribute to the loss get adjoint 0.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, AdError> {
        assert!(
            std::ptr::eq(loss.tape, self),
            "backward called with a variable from a different tape"
        );
        if !loss.val.is_finite() {
            let (node, kind) = self
                .first_non_finite
                .get()
                .unwrap_or((loss.idx, OpKind::Leaf));
            return Err(AdError::NonFiniteLoss {
                value: loss.val,
                node,
                kind,
            });
        }
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[loss.idx as usize] = 1.0;
        for i in (0..=loss.idx as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for k in 0..node.n as usize {
                adj[node.parents[k] as usize] += a * node.partials[k];
            }
        }
        Ok(Gradients { adj })
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adj: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adj[v.idx as usize]
    }
}

/// A real scalar recorded on a tape. Copyable; ties its lifetime to the
/// tape that owns the underlying node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

fn same_tape<'t>(a: Var<'t>, b: Var<'t>) -> &'t Tape {
    assert!(
        std::ptr::eq(a.tape, b.tape),
        "arithmetic between variables from different tapes"
    );
    a.tape
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.val
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.val.exp();
        self.tape.push(OpKind::Exp, v, &[self.idx], &[v])
    }

    pub fn ln(self) -> Var<'t> {
        self.tape
            .push(OpKind::Ln, self.val.ln(), &[self.idx], &[1.0 / self.val])
    }

    pub fn sqrt(self) -> Var<'t> {
        let v = self.val.sqrt();
        self.tape
            .push(OpKind::Sqrt, v, &[self.idx], &[0.5 / v])
    }

    /// sqrt with the argument floored at [`SQRT_FLOOR`]; the partial is
    /// zeroed below the floor so underflowed powers do not blow up.
    pub fn sqrt_guarded(self) -> Var<'t> {
        if self.val <= SQRT_FLOOR {
            let v = SQRT_FLOOR.sqrt();
            self.tape.push(OpKind::Sqrt, v, &[self.idx], &[0.0])
        } else {
            self.sqrt()
        }
    }

    pub fn sin(self) -> Var<'t> {
        self.tape
            .push(OpKind::Sin, self.val.sin(), &[self.idx], &[self.val.cos()])
    }

    pub fn cos(self) -> Var<'t> {
        self.tape
            .push(OpKind::Cos, self.val.cos(), &[self.idx], &[-self.val.sin()])
    }

    pub fn powi(self, k: i32) -> Var<'t> {
        let v = self.val.powi(k);
        self.tape.push(
            OpKind::Pow,
            v,
            &[self.idx],
            &[k as f64 * self.val.powi(k - 1)],
        )
    }

    pub fn sigmoid(self) -> Var<'t> {
        let s = 1.0 / (1.0 + (-self.val).exp());
        self.tape
            .push(OpKind::Sigmoid, s, &[self.idx], &[s * (1.0 - s)])
    }

    pub fn relu(self) -> Var<'t> {
        let on = self.val > 0.0;
        self.tape.push(
            OpKind::Relu,
            if on { self.val } else { 0.0 },
            &[self.idx],
            &[if on { 1.0 } else { 0.0 }],
        )
    }

    pub fn abs(self) -> Var<'t> {
        self.tape.push(
            OpKind::Abs,
            self.val.abs(),
            &[self.idx],
            &[if self.val >= 0.0 { 1.0 } else { -1.0 }],
        )
    }

    pub fn recip(self) -> Var<'t> {
        let v = 1.0 / self.val;
        self.tape
            .push(OpKind::Recip, v, &[self.idx], &[-v * v])
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        same_tape(self, rhs).push(
            OpKind::Add,
            self.val + rhs.val,
            &[self.idx, rhs.idx],
            &[1.0, 1.0],
        )
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        same_tape(self, rhs).push(
            OpKind::Sub,
            self.val - rhs.val,
            &[self.idx, rhs.idx],
            &[1.0, -1.0],
        )
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        same_tape(self, rhs).push(
            OpKind::Mul,
            self.val * rhs.val,
            &[self.idx, rhs.idx],
            &[rhs.val, self.val],
        )
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        same_tape(self, rhs).push(
            OpKind::Div,
            self.val / rhs.val,
            &[self.idx, rhs.idx],
            &[1.0 / rhs.val, -self.val / (rhs.val * rhs.val)],
        )
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape
            .push(OpKind::Neg, -self.val, &[self.idx], &[-1.0])
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.tape
            .push(OpKind::Add, self.val + rhs, &[self.idx], &[1.0])
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.tape
            .push(OpKind::Sub, self.val - rhs, &[self.idx], &[1.0])
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.tape
            .push(OpKind::Sub, self - rhs.val, &[rhs.idx], &[-1.0])
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.tape
            .push(OpKind::Mul, self.val * rhs, &[self.idx], &[rhs])
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self * (1.0 / rhs)
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        rhs.recip() * self
    }
}

/// Dot product of two equal-length slices of variables.
pub fn dot<'t>(xs: &[Var<'t>], ys: &[Var<'t>]) -> Var<'t> {
    assert_eq!(xs.len(), ys.len());
    assert!(!xs.is_empty());
    let mut acc = xs[0] * ys[0];
    for (x, y) in xs.iter().zip(ys).skip(1) {
        acc = acc + *x * *y;
    }
    acc
}

/// Complex scalar as a pair of real tape variables.
#[derive(Clone, Copy)]
pub struct CVar<'t> {
    pub re: Var<'t>,
    pub im: Var<'t>,
}

impl<'t> CVar<'t> {
    pub fn new(re: Var<'t>, im: Var<'t>) -> Self {
        CVar { re, im }
    }

    pub fn constant(tape: &'t Tape, re: f64, im: f64) -> Self {
        CVar {
            re: tape.var(re),
            im: tape.var(im),
        }
    }

    pub fn from_real(re: Var<'t>) -> Self {
        CVar {
            re,
            im: re.tape().var(0.0),
        }
    }

    pub fn value(self) -> (f64, f64) {
        (self.re.value(), self.im.value())
    }

    pub fn conj(self) -> Self {
        CVar {
            re: self.re,
            im: -self.im,
        }
    }

    pub fn abs_sq(self) -> Var<'t> {
        self.re * self.re + self.im * self.im
    }

    pub fn abs(self) -> Var<'t> {
        self.abs_sq().sqrt_guarded()
    }

    pub fn scale(self, s: Var<'t>) -> Self {
        CVar {
            re: self.re * s,
            im: self.im * s,
        }
    }

    pub fn scale_const(self, s: f64) -> Self {
        CVar {
            re: self.re * s,
            im: self.im * s,
        }
    }

    /// Multiplication by a complex constant (not on the tape).
    pub fn mul_const(self, re: f64, im: f64) -> Self {
        CVar {
            re: self.re * re - self.im * im,
            im: self.re * im + self.im * re,
        }
    }

    /// Principal square root (real part >= 0), the standard branch for
    /// lossy-medium permittivities.
    pub fn sqrt(self) -> Self {
        let mag = self.abs();
        let re = ((mag + self.re) * 0.5).sqrt_guarded();
        let im_mag = ((mag - self.re) * 0.5).sqrt_guarded();
        let im = if self.im.value() >= 0.0 { im_mag } else { -im_mag };
        CVar { re, im }
    }
}

impl<'t> Add for CVar<'t> {
    type Output = CVar<'t>;
    fn add(self, rhs: CVar<'t>) -> CVar<'t> {
        CVar {
            re: self.re + rhs.re,
            im: self.im + rhs.im,
        }
    }
}

impl<'t> Sub for CVar<'t> {
    type Output = CVar<'t>;
    fn sub(self, rhs: CVar<'t>) -> CVar<'t> {
        CVar {
            re: self.re - rhs.re,
            im: self.im - rhs.im,
        }
    }
}

impl<'t> Mul for CVar<'t> {
    type Output = CVar<'t>;
    fn mul(self, rhs: CVar<'t>) -> CVar<'t> {
        CVar {
            re: self.re * rhs.re - self.im * rhs.im,
            im: self.re * rhs.im + self.im * rhs.re,
        }
    }
}

impl<'t> Div for CVar<'t> {
    type Output = CVar<'t>;
    fn div(self, rhs: CVar<'t>) -> CVar<'t> {
        let d = rhs.abs_sq();
        let num = self * rhs.conj();
        CVar {
            re: num.re / d,
            im: num.im / d,
        }
    }
}

impl<'t> Neg for CVar<'t> {
    type Output = CVar<'t>;
    fn neg(self) -> CVar<'t> {
        CVar {
            re: -self.re,
            im: -self.im,
        }
    }
}

/// One line of a gradient check report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GradcheckEntry {
    pub param: usize,
    pub grad_ad: f64,
    pub grad_fd: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub max_rel_err: f64,
    pub non_finite: bool,
}

/// Compares reverse-mode gradients of `f` against central finite
/// differences at `point`. Relative error per parameter is
/// |g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|).
pub fn finite_diff_check<F>(f: F, point: &[f64], step: f64) -> GradcheckReport
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let eval = |xs: &[f64]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|&x| tape.var(x)).collect();
        f(&tape, &vars).value()
    };

    let tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|&x| tape.var(x)).collect();
    let loss = f(&tape, &vars);
    let mut non_finite = !loss.value().is_finite();
    let grads = tape.backward(loss).ok();

    let mut entries = Vec::with_capacity(point.len());
    let mut max_rel_err: f64 = 0.0;
    for i in 0..point.len() {
        let mut hi = point.to_vec();
        let mut lo = point.to_vec();
        hi[i] += step;
        lo[i] -= step;
        let (fh, fl) = (eval(&hi), eval(&lo));
        if !fh.is_finite() || !fl.is_finite() {
            non_finite = true;
        }
        let grad_fd = (fh - fl) / (2.0 * step);
        let grad_ad = grads.as_ref().map(|g| g.wrt(vars[i])).unwrap_or(f64::NAN);
        let rel_err = (grad_ad - grad_fd).abs() / (1e-12f64).max(grad_ad.abs() + grad_fd.abs());
        max_rel_err = max_rel_err.max(rel_err);
        entries.push(GradcheckEntry {
            param: i,
            grad_ad,
            grad_fd,
            rel_err,
        });
    }
    GradcheckReport {
        entries,
        max_rel_err,
        non_finite,
    }
}
