//! Dense NCHW tensors, a tape-based reverse-mode autodiff graph over the
//! layer set used by the segmentation network, and the Adam optimizer.

mod adam;
pub mod check;
mod conv;
mod graph;

use std::fmt;
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamState, NamedParam};
pub use graph::{BnMode, Graph, RunningStats, Var};

/// Floating-point element type. Implemented for `f32` (training) and `f64`
/// (tight gradient checks running the same graph code).
pub trait Element: Float + Default + Sum + fmt::Debug + Send + Sync + 'static {
    /// `c = a · b + beta · c` for row-major `a` (m×k) and `b` (k×n).
    /// `a_t` / `b_t` read the operand as transposed storage of the other shape.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_t: bool,
        b: &[Self],
        b_t: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("representable constant")
    }
}

macro_rules! impl_element {
    ($t:ty, $gemm:path) => {
        impl Element for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_t: bool,
                b: &[Self],
                b_t: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: the length assertion above covers every index the
                // strides can reach for an m×k, k×n, m×n problem.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_element!(f32, matrixmultiply::sgemm);
impl_element!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one spatial plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements per batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}×{}×{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense (batch, channel, height, width) array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T = f32> {
    data: Vec<T>,
    shape: Shape4,
    pub requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Element> Tensor4<T> {
    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::input(format!(
                "buffer of {} elements does not fit shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor4 {
            data,
            shape,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Shape4) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape4, value: T) -> Self {
        Tensor4 {
            data: vec![value; shape.len()],
            shape,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::input(format!(
                "gradient of {} elements for tensor {}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + y) * s.w + x]
    }

    /// The channel plane `(n, c)` as a slice.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise conversion to another precision.
    pub fn cast<U: Element>(&self) -> Tensor4<U> {
        Tensor4 {
            data: self
                .data
                .iter()
                .map(|&v| U::of(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
            shape: self.shape,
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    /// Stacks single-item tensors along the batch axis.
    pub fn stack(items: &[Tensor4<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::input("cannot stack an empty list"))?
            .shape;
        let mut data = Vec::with_capacity(first.item() * items.len());
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(Error::input(format!("cannot stack {s} with {first}")));
            }
            data.extend_from_slice(&t.data);
            n += s.n;
        }
        Tensor4::from_vec(Shape4::new(n, first.c, first.h, first.w), data)
    }

    /// Batch item `i` as a 1×C×H×W tensor.
    pub fn item(&self, i: usize) -> Tensor4<T> {
        let s = self.shape;
        let span = s.item();
        Tensor4 {
            data: self.data[i * span..(i + 1) * span].to_vec(),
            shape: Shape4::new(1, s.c, s.h, s.w),
            requires_grad: false,
            grad: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffer_length_must_match_shape() {
        assert!(Tensor4::<f32>::from_vec(Shape4::new(1, 2, 2, 2), vec![0.0; 7]).is_err());
        let t = Tensor4::<f32>::from_vec(Shape4::new(1, 2, 2, 2), vec![0.0; 8]).unwrap();
        assert_eq!(t.shape().len(), 8);
    }

    #[test]
    fn gemm_transposed_operands() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        // aᵀ · b
        f64::gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        // a · bᵀ, accumulated onto the previous result
        f64::gemm(2, 2, 2, &a, false, &b, true, 1.0, &mut c);
        assert_eq!(c, [26.0 + 17.0, 30.0 + 23.0, 38.0 + 39.0, 44.0 + 53.0]);
    }

    #[test]
    fn stack_and_item_are_inverse() {
        let a = Tensor4::<f32>::full(Shape4::new(1, 2, 3, 3), 1.0);
        let b = Tensor4::<f32>::full(Shape4::new(1, 2, 3, 3), 2.0);
        let s = Tensor4::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), Shape4::new(2, 2, 3, 3));
        assert_eq!(s.item(0), a);
        assert_eq!(s.item(1), b);
    }
}
