//! Dense row-major `f64` tensors and the kernels the autodiff graph is built on.
//!
//! Broadcasting follows the numpy rule restricted to equal rank: every axis
//! must either match or be 1 on one side.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Row `i` of a tensor viewed as `(shape[0], rest)`.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.numel() / self.shape[0];
        &self.data[i * w..(i + 1) * w]
    }

    /// Selects the given rows (first-axis entries) into a new tensor.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let w = self.numel() / self.shape[0].max(1);
        let mut data = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            data.extend_from_slice(&self.data[r * w..(r + 1) * w]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Self { shape, data }
    }

    /// Concatenates along the first axis.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::Shape(format!(
                    "concat: trailing shapes {:?} vs {:?}",
                    &p.shape[1..],
                    tail
                )));
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Self { shape, data })
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}")));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Strides of `src` when read at the coordinates of `out` (0 on broadcast axes).
fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(src);
    src.iter()
        .zip(out)
        .zip(s)
        .map(|((&d, &o), st)| if d == 1 && o != 1 { 0 } else { st })
        .collect()
}

/// Calls `f(out_index, src_index)` for every element of `out`.
fn for_each_broadcast(src: &[usize], out: &[usize], mut f: impl FnMut(usize, usize)) {
    let bs = broadcast_strides(src, out);
    let n: usize = out.iter().product();
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for o in 0..n {
        f(o, off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += bs[ax];
            if idx[ax] < out[ax] {
                break;
            }
            off -= bs[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor {
            shape: a.shape.clone(),
            data,
        });
    }
    let out = broadcast_shape(&a.shape, &b.shape)?;
    let a_full = broadcast_to(a, &out)?;
    let b_full = broadcast_to(b, &out)?;
    let data = a_full
        .data
        .iter()
        .zip(&b_full.data)
        .map(|(&x, &y)| f(x, y))
        .collect();
    Ok(Tensor { shape: out, data })
}

pub(crate) fn broadcast_to(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if a.shape == shape {
        return Ok(a.clone());
    }
    if broadcast_shape(&a.shape, shape)? != shape {
        return Err(Error::Shape(format!(
            "cannot broadcast {:?} to {:?}",
            a.shape, shape
        )));
    }
    let n: usize = shape.iter().product();
    let mut data = vec![0.0; n];
    for_each_broadcast(&a.shape, shape, |o, s| data[o] = a.data[s]);
    Ok(Tensor {
        shape: shape.to_vec(),
        data,
    })
}

/// Sums `a` over the axes where `shape` is 1, the adjoint of `broadcast_to`.
pub(crate) fn sum_to(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if a.shape == shape {
        return Ok(a.clone());
    }
    if broadcast_shape(shape, &a.shape)? != a.shape {
        return Err(Error::Shape(format!(
            "cannot reduce {:?} to {:?}",
            a.shape, shape
        )));
    }
    let n: usize = shape.iter().product();
    let mut data = vec![0.0; n];
    for_each_broadcast(shape, &a.shape, |o, s| data[s] += a.data[o]);
    Ok(Tensor {
        shape: shape.to_vec(),
        data,
    })
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Shape(format!(
            "matmul {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let (n, k, m) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Ok(Tensor {
        shape: vec![n, m],
        data: out,
    })
}

pub(crate) fn transpose(a: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 {
        return Err(Error::Shape(format!("transpose of rank {}", a.rank())));
    }
    let (r, c) = (a.shape[0], a.shape[1]);
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = a.data[i * c + j];
        }
    }
    Ok(Tensor {
        shape: vec![c, r],
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_and_reduce_are_adjoint() {
        let a = Tensor::new(vec![2, 1, 3], (0..6).map(f64::from).collect()).unwrap();
        let b = broadcast_to(&a, &[2, 4, 3]).unwrap();
        assert_eq!(b.row(1)[..3], [3.0, 4.0, 5.0]);
        let s = sum_to(&b, &[2, 1, 3]).unwrap();
        assert_eq!(s.data(), a.map(|v| 4.0 * v).data());
        let total = sum_to(&b, &[1, 1, 1]).unwrap();
        assert_eq!(total.item(), 4.0 * 15.0);
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
        assert_eq!(transpose(&a).unwrap().data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn rank_mismatch_is_an_error() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3]);
        assert!(zip_broadcast(&a, &b, |x, y| x + y).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
