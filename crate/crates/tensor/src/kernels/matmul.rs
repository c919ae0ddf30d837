use crate::error::{Result, TensorError};
use crate::macs;
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// Operand layout of a (batched) matrix product.
#[derive(Debug, Clone, Copy)]
pub struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// `b` is a single `[K, N]` matrix shared across the batch.
    pub shared_rhs: bool,
}

impl MatmulDims {
    pub fn macs(&self) -> u64 {
        (self.batch * self.m * self.k * self.n) as u64
    }
}

/// `a: [..., M, K]`, `b: [..., K, N]` (same leading axes) or `b: [K, N]`.
pub fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(MatmulDims, Vec<usize>)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(TensorError::Rank {
            op: "matmul",
            expected: 2,
            shape: if a.len() < 2 { a.to_vec() } else { b.to_vec() },
        });
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != kb {
        return Err(TensorError::Dimension {
            op: "matmul",
            dim: "inner",
            expected: k.to_string(),
            got: kb,
        });
    }
    let shared_rhs = b.len() == 2;
    if !shared_rhs && a[..a.len() - 2] != b[..b.len() - 2] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    let batch = numel(&a[..a.len() - 2]);
    let mut out = a[..a.len() - 2].to_vec();
    out.extend([m, n]);
    Ok((
        MatmulDims {
            batch,
            m,
            k,
            n,
            shared_rhs,
        },
        out,
    ))
}

/// Batched product; `trans_b` reads `b` as `[..., N, K]`.
pub fn matmul_raw<T: Real>(d: MatmulDims, a: &[T], b: &[T], trans_b: bool, out: &mut [T], beta: T) {
    let (m, k, n) = (d.m, d.k, d.n);
    for i in 0..d.batch {
        let bo = if d.shared_rhs { 0 } else { i * k * n };
        let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &a[i * m * k..(i + 1) * m * k],
            k as isize,
            1,
            &b[bo..bo + k * n],
            rsb,
            csb,
            beta,
            &mut out[i * m * n..(i + 1) * m * n],
            n as isize,
            1,
        );
    }
}

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, shape) = matmul_dims(a.shape(), b.shape())?;
    let mut out = Tensor::zeros(&shape);
    matmul_raw(d, a.data(), b.data(), false, out.data_mut(), T::zero());
    macs::add(d.macs());
    Ok(out)
}

/// `x[..., K] · wᵀ + bias` with `w: [N, K]`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let [n, k] = match *w.shape() {
        [n, k] => [n, k],
        _ => {
            return Err(TensorError::Rank {
                op: "linear",
                expected: 2,
                shape: w.shape().to_vec(),
            })
        }
    };
    let xs = x.shape();
    if xs.last() != Some(&k) {
        return Err(TensorError::Dimension {
            op: "linear",
            dim: "features",
            expected: k.to_string(),
            got: xs.last().copied().unwrap_or(0),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "linear bias",
                lhs: vec![n],
                rhs: b.shape().to_vec(),
            });
        }
    }
    let rows = x.numel() / k.max(1);
    let mut shape = xs.to_vec();
    *shape.last_mut().unwrap() = n;
    let mut out = Tensor::zeros(&shape);
    let d = MatmulDims {
        batch: 1,
        m: rows,
        k,
        n,
        shared_rhs: true,
    };
    matmul_raw(d, x.data(), w.data(), true, out.data_mut(), T::zero());
    if let Some(b) = bias {
        for row in out.data_mut().chunks_exact_mut(n.max(1)) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
    }
    macs::add(d.macs());
    Ok(out)
}
