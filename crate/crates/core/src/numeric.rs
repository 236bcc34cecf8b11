//! Dense vector/matrix primitives with hand-written vector-Jacobian products,
//! plus a central-difference gradient checker.

use rand::Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    context: "matrix row",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "matrix buffer",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Entries drawn uniformly from `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension {
                context: "matrix-vector product",
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `selfᵀ · y`.
    pub fn matvec_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::Dimension {
                context: "transposed matrix-vector product",
                expected: self.rows,
                got: y.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            axpy(yr, self.row(r), &mut out);
        }
        Ok(out)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Parameters of a fully connected layer followed by `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTanhParams {
    /// `d × d_in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients with the same layout as [`LinearTanhParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTanhGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearTanhParams {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() == 0 || weight.cols() == 0 {
            return Err(Error::Empty("linear layer with zero rows or columns"));
        }
        if bias.len() != weight.rows() {
            return Err(Error::Dimension {
                context: "linear bias",
                expected: weight.rows(),
                got: bias.len(),
            });
        }
        Ok(Self { weight, bias })
    }

    /// `W ~ U(-1/√d_in, 1/√d_in)`, `b = 0`.
    pub fn init<R: Rng + ?Sized>(d: usize, d_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Self {
            weight: Matrix::uniform(d, d_in, bound, rng),
            bias: vec![0.0; d],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weight.as_slice());
        out.extend_from_slice(&self.bias);
    }

    pub(crate) fn read_params(&mut self, src: &mut &[f64]) {
        let (w, rest) = src.split_at(self.weight.as_slice().len());
        self.weight.as_mut_slice().copy_from_slice(w);
        let (b, rest) = rest.split_at(self.bias.len());
        self.bias.copy_from_slice(b);
        *src = rest;
    }
}

impl LinearTanhGrad {
    pub fn zeros_like(p: &LinearTanhParams) -> Self {
        Self {
            weight: Matrix::zeros(p.out_dim(), p.in_dim()),
            bias: vec![0.0; p.out_dim()],
        }
    }

    pub fn accumulate(&mut self, other: &LinearTanhGrad) {
        axpy(1.0, other.weight.as_slice(), self.weight.as_mut_slice());
        axpy(1.0, &other.bias, &mut self.bias);
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weight.as_slice());
        out.extend_from_slice(&self.bias);
    }
}

/// Largest f64 below one. `tanh` rounds to ±1 beyond |x| ≈ 19.1.
const TANH_LIMIT: f64 = 1.0 - f64::EPSILON / 2.0;

/// `tanh(W·f + b)`, kept strictly inside `(-1, 1)`.
pub fn linear_tanh(p: &LinearTanhParams, f: &[f64]) -> Result<Vec<f64>> {
    let mut z = p.weight.matvec(f)?;
    for (zi, bi) in z.iter_mut().zip(&p.bias) {
        *zi = (*zi + bi).tanh().clamp(-TANH_LIMIT, TANH_LIMIT);
    }
    Ok(z)
}

/// Backward pass of [`linear_tanh`]. `upstream` is `∂L/∂e`; returns
/// `(∂L/∂W, ∂L/∂b, ∂L/∂f)`.
pub fn linear_tanh_vjp(
    p: &LinearTanhParams,
    f: &[f64],
    upstream: &[f64],
) -> Result<(LinearTanhGrad, Vec<f64>)> {
    let e = linear_tanh(p, f)?;
    linear_tanh_vjp_with_output(p, f, &e, upstream)
}

/// Same as [`linear_tanh_vjp`] but reuses a cached forward output `e`.
pub fn linear_tanh_vjp_with_output(
    p: &LinearTanhParams,
    f: &[f64],
    e: &[f64],
    upstream: &[f64],
) -> Result<(LinearTanhGrad, Vec<f64>)> {
    let d = p.out_dim();
    if upstream.len() != d {
        return Err(Error::Dimension {
            context: "linear_tanh upstream gradient",
            expected: d,
            got: upstream.len(),
        });
    }
    if f.len() != p.in_dim() {
        return Err(Error::Dimension {
            context: "linear_tanh input",
            expected: p.in_dim(),
            got: f.len(),
        });
    }
    let pre: Vec<f64> = upstream
        .iter()
        .zip(e)
        .map(|(g, ei)| g * (1.0 - ei * ei))
        .collect();
    let mut dw = Matrix::zeros(d, f.len());
    for (r, &g) in pre.iter().enumerate() {
        if g != 0.0 {
            let row = &mut dw.as_mut_slice()[r * f.len()..(r + 1) * f.len()];
            axpy(g, f, row);
        }
    }
    let df = p.weight.matvec_t(&pre)?;
    Ok((
        LinearTanhGrad {
            weight: dw,
            bias: pre,
        },
        df,
    ))
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Empty("softmax of an empty vector"));
    }
    if !all_finite(scores) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|x| x / total).collect())
}

/// Cosine similarity together with a flag set when either input has zero norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    pub degenerate: bool,
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<Cosine> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            context: "cosine similarity",
            expected: u.len(),
            got: v.len(),
        });
    }
    let uu = dot(u, u);
    let vv = dot(v, v);
    if uu == 0.0 || vv == 0.0 {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    let value = (dot(u, v) / (uu * vv).sqrt()).clamp(-1.0, 1.0);
    Ok(Cosine {
        value,
        degenerate: false,
    })
}

/// `u·v / (‖u‖‖v‖)`; zero-norm inputs give `0.0`.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    cosine(u, v).map(|c| c.value)
}

/// Gradients of `upstream · cosine_sim(u, v)` with respect to `u` and `v`.
/// Zero-norm inputs receive zero gradient.
pub fn cosine_sim_vjp(u: &[f64], v: &[f64], upstream: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            context: "cosine similarity",
            expected: u.len(),
            got: v.len(),
        });
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 || upstream == 0.0 {
        return Ok((vec![0.0; u.len()], vec![0.0; v.len()]));
    }
    let c = dot(u, v) / (nu * nv);
    let inv = 1.0 / (nu * nv);
    let du = u
        .iter()
        .zip(v)
        .map(|(ui, vi)| upstream * (vi * inv - c * ui / (nu * nu)))
        .collect();
    let dv = u
        .iter()
        .zip(v)
        .map(|(ui, vi)| upstream * (ui * inv - c * vi / (nv * nv)))
        .collect();
    Ok((du, dv))
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Result of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Parameter index where the worst error occurred.
    pub worst_index: usize,
}

impl GradCheck {
    pub fn within(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares `analytic` against `(f(x+h) − f(x−h)) / 2h` for every component
/// of `params`. The relative error uses the denominator `max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &[f64], analytic: &[f64], h: f64) -> Result<GradCheck>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Dimension {
            context: "analytic gradient",
            expected: params.len(),
            got: analytic.len(),
        });
    }
    let mut x = params.to_vec();
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst_index: 0,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x)?;
        x[i] = orig - h;
        let minus = f(&x)?;
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective evaluated at parameter {i} ± {h}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_err {
            report = GradCheck {
                max_rel_err: rel,
                worst_index: i,
            };
        }
    }
    Ok(report)
}
