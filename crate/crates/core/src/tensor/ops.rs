use super::{BackwardCtx, Tensor};
use crate::error::{Error, Result};

/// Floor applied to `|x|` inside `log` and to division denominators.
pub const STABILIZER: f64 = 1e-12;

#[inline]
fn stable_denominator(d: f64) -> f64 {
    if d.abs() >= STABILIZER {
        d
    } else if d < 0.0 {
        -STABILIZER
    } else {
        STABILIZER
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `tanh(softplus(x))`, `sech²(softplus(x))` and `sigmoid(x)` from one exp.
#[inline]
fn mish_tanh(x: f64) -> (f64, f64, f64) {
    if x > 20.0 {
        return (1.0, 0.0, 1.0);
    }
    let e = x.exp();
    let n = e * (e + 2.0);
    let d = n + 2.0;
    (n / d, 4.0 * (n + 1.0) / (d * d), e / (1.0 + e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Neg,
    Exp,
    /// `ln(max(|x|, STABILIZER))`
    Log,
    Abs,
    Pow(f64),
    Tanh,
    Sqrt,
    Mish,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
}

fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Broadcast, Vec<usize>)> {
    if a.shape() == b.shape() {
        Ok((Broadcast::Same, a.shape().to_vec()))
    } else if b.numel() == 1 {
        Ok((Broadcast::RhsScalar, a.shape().to_vec()))
    } else if a.numel() == 1 {
        Ok((Broadcast::LhsScalar, b.shape().to_vec()))
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

/// Reduce a full-size gradient onto an operand that may have been broadcast.
fn reduce_to(g: Vec<f64>, scalar: bool) -> Vec<f64> {
    if scalar {
        vec![g.iter().sum()]
    } else {
        g
    }
}

impl Tensor {
    pub fn elementwise(&self, op: UnaryOp) -> Tensor {
        match op {
            UnaryOp::Neg => self.neg(),
            UnaryOp::Exp => self.exp(),
            UnaryOp::Log => self.log(),
            UnaryOp::Abs => self.abs(),
            UnaryOp::Pow(p) => self.pow(p),
            UnaryOp::Tanh => self.tanh(),
            UnaryOp::Sqrt => self.sqrt(),
            UnaryOp::Mish => self.mish(),
        }
    }

    pub fn binary(&self, op: BinaryOp, other: &Tensor) -> Result<Tensor> {
        let name = match op {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        };
        let (mode, shape) = broadcast(name, self, other)?;
        let a = self.data();
        let b = other.data();
        let n = shape.iter().product::<usize>();
        let pick = |i: usize| -> (f64, f64) {
            match mode {
                Broadcast::Same => (a[i], b[i]),
                Broadcast::LhsScalar => (a[0], b[i]),
                Broadcast::RhsScalar => (a[i], b[0]),
            }
        };
        let out: Vec<f64> = (0..n)
            .map(|i| {
                let (x, y) = pick(i);
                match op {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    BinaryOp::Mul => x * y,
                    BinaryOp::Div => x / stable_denominator(y),
                }
            })
            .collect();
        drop(a);
        drop(b);

        let lhs_scalar = matches!(mode, Broadcast::LhsScalar);
        let rhs_scalar = matches!(mode, Broadcast::RhsScalar);
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let a = ctx.parents[0].data();
                let b = ctx.parents[1].data();
                let n = ctx.grad.len();
                let at = |i: usize| if lhs_scalar { a[0] } else { a[i] };
                let bt = |i: usize| if rhs_scalar { b[0] } else { b[i] };
                let (ga, gb): (Vec<f64>, Vec<f64>) = match op {
                    BinaryOp::Add => (ctx.grad.to_vec(), ctx.grad.to_vec()),
                    BinaryOp::Sub => (ctx.grad.to_vec(), ctx.grad.iter().map(|g| -g).collect()),
                    BinaryOp::Mul => (
                        (0..n).map(|i| ctx.grad[i] * bt(i)).collect(),
                        (0..n).map(|i| ctx.grad[i] * at(i)).collect(),
                    ),
                    BinaryOp::Div => (0..n)
                        .map(|i| {
                            let d = bt(i);
                            let ds = stable_denominator(d);
                            let ga = ctx.grad[i] / ds;
                            let gb = if d.abs() >= STABILIZER {
                                -ctx.grad[i] * at(i) / (ds * ds)
                            } else {
                                0.0
                            };
                            (ga, gb)
                        })
                        .unzip(),
                };
                let wants_a = ctx.parents[0].requires_grad();
                let wants_b = ctx.parents[1].requires_grad();
                vec![
                    wants_a.then(|| reduce_to(ga, lhs_scalar)),
                    wants_b.then(|| reduce_to(gb, rhs_scalar)),
                ]
            }),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Mul, other)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Div, other)
    }

    /// Elementwise map with a local derivative `d(x, y)` where `y` is the output.
    fn map_unary(&self, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let x = ctx.parents[0].data();
                let g = ctx
                    .grad
                    .iter()
                    .zip(x.iter().zip(ctx.out))
                    .map(|(g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.map_unary(|x| -x, |_, _| -1.0)
    }

    pub fn exp(&self) -> Tensor {
        self.map_unary(f64::exp, |_, y| y)
    }

    /// `ln(max(|x|, STABILIZER))`; the derivative is `1/x` above the floor and
    /// zero below it.
    pub fn log(&self) -> Tensor {
        self.map_unary(
            |x| x.abs().max(STABILIZER).ln(),
            |x, _| if x.abs() >= STABILIZER { 1.0 / x } else { 0.0 },
        )
    }

    /// `|x|` with `sign(x)` as derivative (0 at the origin).
    pub fn abs(&self) -> Tensor {
        self.map_unary(f64::abs, |x, _| sign(x))
    }

    pub fn tanh(&self) -> Tensor {
        self.map_unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sqrt(&self) -> Tensor {
        self.map_unary(|x| x.max(0.0).sqrt(), |_, y| 0.5 / y.max(STABILIZER))
    }

    pub fn recip(&self) -> Tensor {
        self.map_unary(
            |x| 1.0 / stable_denominator(x),
            |x, y| if x.abs() >= STABILIZER { -y * y } else { 0.0 },
        )
    }

    /// `x^p` for a constant exponent.
    pub fn pow(&self, p: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| x.powf(p)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let x = ctx.parents[0].data();
                let g = ctx
                    .grad
                    .iter()
                    .zip(x.iter())
                    .map(|(g, &x)| if p == 0.0 { 0.0 } else { g * p * x.powf(p - 1.0) })
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    /// `x^p` with a learnable one-element exponent. Intended for `x > 0`; the
    /// exponent gradient uses `ln x` and is zero where `x <= 0`.
    pub fn pow_tensor(&self, p: &Tensor) -> Result<Tensor> {
        if p.numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "pow_tensor",
                lhs: self.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        let pv = p.item();
        let out: Vec<f64> = self.data().iter().map(|x| x.powf(pv)).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), p.clone()],
            Box::new(|ctx: &BackwardCtx<'_>| {
                let x = ctx.parents[0].data();
                let pv = ctx.parents[1].item();
                let gx = ctx.parents[0].requires_grad().then(|| {
                    ctx.grad
                        .iter()
                        .zip(x.iter())
                        .map(|(g, &x)| g * pv * x.powf(pv - 1.0))
                        .collect()
                });
                let gp = ctx.parents[1].requires_grad().then(|| {
                    let s: f64 = ctx
                        .grad
                        .iter()
                        .zip(x.iter().zip(ctx.out))
                        .map(|(g, (&x, &y))| if x > 0.0 { g * y * x.ln() } else { 0.0 })
                        .sum();
                    vec![s]
                });
                vec![gx, gp]
            }),
        ))
    }

    /// `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&self, floor: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| x.max(floor)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let x = ctx.parents[0].data();
                let g = ctx
                    .grad
                    .iter()
                    .zip(x.iter())
                    .map(|(g, &x)| if x > floor { *g } else { 0.0 })
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    /// `x * tanh(softplus(x))`
    pub fn mish(&self) -> Tensor {
        self.map_unary(
            |x| x * mish_tanh(x).0,
            |x, _| {
                let (t, sech2, sig) = mish_tanh(x);
                t + x * sech2 * sig
            },
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map_unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| x * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| vec![Some(ctx.grad.iter().map(|g| g * c).collect())]),
        )
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| vec![Some(vec![ctx.grad[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1);
        self.sum().mul_scalar(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape,
            });
        }
        Ok(Tensor::from_op(
            shape,
            self.to_vec(),
            vec![self.clone()],
            Box::new(|ctx: &BackwardCtx<'_>| vec![Some(ctx.grad.to_vec())]),
        ))
    }

    /// `[m×k] · [k×n]`
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(&self.data(), &other.data(), m, k, n);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let a = ctx.parents[0].data();
                let b = ctx.parents[1].data();
                let g = ctx.grad;
                // dA = G·Bᵀ
                let ga = ctx.parents[0].requires_grad().then(|| matmul_grad_a(g, &b, m, k, n));
                // dB = Aᵀ·G
                let gb = ctx.parents[1].requires_grad().then(|| matmul_grad_b(&a, g, k, n));
                vec![ga, gb]
            }),
        ))
    }

    /// Adds a length-`n` row vector to every row of an `[m×n]` tensor.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let n = self.cols();
        if row.numel() != n {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.shape().to_vec(),
                rhs: row.shape().to_vec(),
            });
        }
        let r = row.data();
        let mut out = self.to_vec();
        if n > 0 {
            for orow in out.chunks_exact_mut(n) {
                orow.iter_mut().zip(r.iter()).for_each(|(o, b)| *o += b);
            }
        }
        drop(r);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), row.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let gr = ctx.parents[1].requires_grad().then(|| {
                    let mut gr = vec![0.0; n];
                    if n > 0 {
                        for grow in ctx.grad.chunks_exact(n) {
                            gr.iter_mut().zip(grow).for_each(|(a, g)| *a += g);
                        }
                    }
                    gr
                });
                vec![Some(ctx.grad.to_vec()), gr]
            }),
        ))
    }

    /// Multiplies row `i` of an `[m×n]` tensor by `col[i]`.
    pub fn mul_col(&self, col: &Tensor) -> Result<Tensor> {
        let m = self.rows();
        if col.numel() != m {
            return Err(Error::ShapeMismatch {
                op: "mul_col",
                lhs: self.shape().to_vec(),
                rhs: col.shape().to_vec(),
            });
        }
        let n = self.cols();
        let c = col.data();
        let out: Vec<f64> = self.data().iter().enumerate().map(|(i, x)| x * c[i / n]).collect();
        drop(c);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), col.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let x = ctx.parents[0].data();
                let c = ctx.parents[1].data();
                let gx = ctx.parents[0]
                    .requires_grad()
                    .then(|| ctx.grad.iter().enumerate().map(|(i, g)| g * c[i / n]).collect());
                let gc = ctx.parents[1].requires_grad().then(|| {
                    let mut gc = vec![0.0; m];
                    for (i, g) in ctx.grad.iter().enumerate() {
                        gc[i / n] += g * x[i];
                    }
                    gc
                });
                vec![gx, gc]
            }),
        ))
    }

    /// Stacks `[mᵢ×n]` tensors vertically.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let n = parts.first().map_or(0, Tensor::cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            rows += p.rows();
            data.extend_from_slice(&p.data());
        }
        let sizes: Vec<usize> = parts.iter().map(Tensor::numel).collect();
        Ok(Tensor::from_op(
            vec![rows, n],
            data,
            parts.to_vec(),
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut offset = 0;
                sizes
                    .iter()
                    .zip(ctx.parents)
                    .map(|(&len, p)| {
                        let g = p.requires_grad().then(|| ctx.grad[offset..offset + len].to_vec());
                        offset += len;
                        g
                    })
                    .collect()
            }),
        ))
    }

    /// Places `[m×nᵢ]` tensors side by side.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        let m = parts.first().map_or(0, Tensor::rows);
        if let Some(bad) = parts.iter().find(|p| p.rows() != m) {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: parts[0].shape().to_vec(),
                rhs: bad.shape().to_vec(),
            });
        }
        let widths: Vec<usize> = parts.iter().map(Tensor::cols).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        let views: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for i in 0..m {
            for (v, &w) in views.iter().zip(&widths) {
                data.extend_from_slice(&v[i * w..(i + 1) * w]);
            }
        }
        drop(views);
        Ok(Tensor::from_op(
            vec![m, total],
            data,
            parts.to_vec(),
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut offset = 0;
                widths
                    .iter()
                    .zip(ctx.parents)
                    .map(|(&w, p)| {
                        let g = p.requires_grad().then(|| {
                            let mut g = Vec::with_capacity(m * w);
                            for i in 0..m {
                                let start = i * total + offset;
                                g.extend_from_slice(&ctx.grad[start..start + w]);
                            }
                            g
                        });
                        offset += w;
                        g
                    })
                    .collect()
            }),
        ))
    }

    /// Rows `start..end` of a row-major tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let m = self.rows();
        if start > end || end > m {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: self.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let n = self.cols();
        let data = self.data()[start * n..end * n].to_vec();
        let total = self.numel();
        let mut shape = self.shape().to_vec();
        shape[0] = end - start;
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; total];
                g[start * n..end * n].copy_from_slice(ctx.grad);
                vec![Some(g)]
            }),
        ))
    }

    /// Row gather: output row `r` is input row `index[r]`. The reverse pass
    /// scatter-adds.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Tensor> {
        let m = self.rows();
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: self.shape().to_vec(),
                rhs: vec![bad],
            });
        }
        let n = self.cols();
        let src = self.data();
        let mut data = Vec::with_capacity(index.len() * n);
        for &i in index {
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        drop(src);
        let index = index.to_vec();
        let total = self.numel();
        Ok(Tensor::from_op(
            vec![index.len(), n],
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; total];
                for (r, &i) in index.iter().enumerate() {
                    let dst = &mut g[i * n..(i + 1) * n];
                    dst.iter_mut()
                        .zip(&ctx.grad[r * n..(r + 1) * n])
                        .for_each(|(d, s)| *d += s);
                }
                vec![Some(g)]
            }),
        ))
    }
}

/// Calls the fixed-size kernel for the small shapes MLPs and GNN layers use.
macro_rules! dispatch_small {
    ($k:expr, $n:expr, $fixed:ident, $general:expr, ($($arg:expr),*)) => {
        match ($k, $n) {
            (1, 1) => $fixed::<1, 1>($($arg),*),
            (1, 2) => $fixed::<1, 2>($($arg),*),
            (1, 4) => $fixed::<1, 4>($($arg),*),
            (2, 1) => $fixed::<2, 1>($($arg),*),
            (2, 2) => $fixed::<2, 2>($($arg),*),
            (2, 4) => $fixed::<2, 4>($($arg),*),
            (4, 1) => $fixed::<4, 1>($($arg),*),
            (4, 2) => $fixed::<4, 2>($($arg),*),
            (4, 4) => $fixed::<4, 4>($($arg),*),
            (1, 16) => $fixed::<1, 16>($($arg),*),
            (16, 1) => $fixed::<16, 1>($($arg),*),
            (16, 16) => $fixed::<16, 16>($($arg),*),
            _ => $general,
        }
    };
}

fn fixed_b<const K: usize, const N: usize>(b: &[f64]) -> [[f64; N]; K] {
    let mut bm = [[0.0; N]; K];
    for (dst, src) in bm.iter_mut().zip(b.chunks_exact(N)) {
        dst.copy_from_slice(src);
    }
    bm
}

fn matmul_fixed<const K: usize, const N: usize>(a: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let bm = fixed_b::<K, N>(b);
    let mut out = vec![0.0; m * N];
    for (row, arow) in out.chunks_exact_mut(N).zip(a.chunks_exact(K)) {
        let mut acc = [0.0; N];
        for p in 0..K {
            for j in 0..N {
                acc[j] += arow[p] * bm[p][j];
            }
        }
        row.copy_from_slice(&acc);
    }
    out
}

fn matmul_grad_a_fixed<const K: usize, const N: usize>(g: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let bm = fixed_b::<K, N>(b);
    let mut ga = vec![0.0; m * K];
    for (garow, grow) in ga.chunks_exact_mut(K).zip(g.chunks_exact(N)) {
        for p in 0..K {
            let mut acc = 0.0;
            for j in 0..N {
                acc += grow[j] * bm[p][j];
            }
            garow[p] = acc;
        }
    }
    ga
}

fn matmul_grad_b_fixed<const K: usize, const N: usize>(a: &[f64], g: &[f64]) -> Vec<f64> {
    let mut acc = [[0.0; N]; K];
    for (arow, grow) in a.chunks_exact(K).zip(g.chunks_exact(N)) {
        for p in 0..K {
            for j in 0..N {
                acc[p][j] += arow[p] * grow[j];
            }
        }
    }
    acc.concat()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    dispatch_small!(
        k,
        n,
        matmul_fixed,
        {
            let mut out = vec![0.0; m * n];
            if k > 0 && n > 0 {
                for (row, arow) in out.chunks_exact_mut(n).zip(a.chunks_exact(k)) {
                    for (&aip, brow) in arow.iter().zip(b.chunks_exact(n)) {
                        row.iter_mut().zip(brow).for_each(|(o, b)| *o += aip * b);
                    }
                }
            }
            out
        },
        (a, b, m)
    )
}

/// `G·Bᵀ` for `G: [m×n]`, `B: [k×n]`.
fn matmul_grad_a(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    dispatch_small!(
        k,
        n,
        matmul_grad_a_fixed,
        {
            let mut ga = vec![0.0; m * k];
            if k > 0 && n > 0 {
                for (garow, grow) in ga.chunks_exact_mut(k).zip(g.chunks_exact(n)) {
                    for (dst, brow) in garow.iter_mut().zip(b.chunks_exact(n)) {
                        *dst = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
            }
            ga
        },
        (g, b, m)
    )
}

/// `Aᵀ·G` for `A: [m×k]`, `G: [m×n]`.
fn matmul_grad_b(a: &[f64], g: &[f64], k: usize, n: usize) -> Vec<f64> {
    dispatch_small!(
        k,
        n,
        matmul_grad_b_fixed,
        {
            let mut gb = vec![0.0; k * n];
            if k > 0 && n > 0 {
                for (arow, grow) in a.chunks_exact(k).zip(g.chunks_exact(n)) {
                    for (&aip, dst) in arow.iter().zip(gb.chunks_exact_mut(n)) {
                        dst.iter_mut().zip(grow).for_each(|(d, g)| *d += aip * g);
                    }
                }
            }
            gb
        },
        (a, g)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, v: Vec<f64>) -> Tensor {
        Tensor::param(shape, v).unwrap()
    }

    #[test]
    fn exp_values() {
        let y = Tensor::new(vec![2], vec![0.0, 1.0]).unwrap().exp();
        assert_eq!(y.to_vec()[0], 1.0);
        assert!((y.to_vec()[1] - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn abs_uses_sign_derivative() {
        let x = t(vec![2], vec![-3.0, 2.0]);
        let y = x.abs();
        assert_eq!(y.to_vec(), vec![3.0, 2.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![-1.0, 1.0]);

        let z = t(vec![1], vec![0.0]);
        z.abs().sum().backward().unwrap();
        assert_eq!(z.grad().unwrap(), vec![0.0]);
    }

    #[test]
    fn pow_power_rule() {
        let x = t(vec![1], vec![2.0]);
        let y = x.pow(3.0);
        assert_eq!(y.to_vec(), vec![8.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
    }

    #[test]
    fn log_and_div_never_fail_on_zero() {
        let z = Tensor::new(vec![2], vec![0.0, -0.0]).unwrap();
        let l = z.log();
        assert!(l.to_vec().iter().all(|v| v.is_finite()));
        assert!((l.to_vec()[0] - STABILIZER.ln()).abs() < 1e-12);
        let one = Tensor::scalar(1.0);
        let q = one.div(&z).unwrap();
        assert!(q.to_vec().iter().all(|v| v.is_finite()));
        assert_eq!(q.to_vec()[0], 1.0 / STABILIZER);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![3, 2]);
        match a.add(&b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![3, 2]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scalar_broadcast_grad_sums() {
        let a = t(vec![3], vec![1.0, 2.0, 3.0]);
        let s = Tensor::scalar_param(2.0);
        a.mul(&s).unwrap().sum().backward().unwrap();
        assert_eq!(s.grad().unwrap(), vec![6.0]);
        assert_eq!(a.grad().unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn matmul_identity_and_product() {
        let i = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = Tensor::new(vec![2, 1], vec![5.0, 7.0]).unwrap();
        assert_eq!(i.matmul(&v).unwrap().to_vec(), vec![5.0, 7.0]);

        let a = t(vec![1, 2], vec![1.0, 2.0]);
        let b = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let p = a.matmul(&b).unwrap();
        assert_eq!(p.to_vec(), vec![11.0]);
        p.sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn mish_values() {
        let x = Tensor::new(vec![3], vec![0.0, 10.0, -1.0]).unwrap();
        let y = x.mish().to_vec();
        assert_eq!(y[0], 0.0);
        assert!((y[1] - 10.0).abs() < 1e-7);
        // -1 * tanh(ln(1 + e^-1))
        let expected = -(1.0 + (-1.0f64).exp()).ln().tanh();
        assert!((y[2] - expected).abs() < 1e-14);
        assert!((y[2] + 0.3034).abs() < 1e-4);
    }

    #[test]
    fn gather_and_concat_roundtrip_grads() {
        let x = t(vec![3, 1], vec![1.0, 2.0, 3.0]);
        let g = x.gather_rows(&[2, 0, 2]).unwrap();
        assert_eq!(g.to_vec(), vec![3.0, 1.0, 3.0]);
        g.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 2.0]);

        let a = t(vec![2, 1], vec![1.0, 2.0]);
        let b = t(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]);
        let c = Tensor::concat_cols(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.to_vec(), vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        c.mul(&w).unwrap().sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 4.0]);
        assert_eq!(b.grad().unwrap(), vec![2.0, 3.0, 5.0, 6.0]);
    }
}
