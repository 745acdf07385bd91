use super::matrix::Matrix;
use super::real::Real;

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

/// `max(x, 0)²`.
pub fn sq_relu<T: Real>(x: T) -> T {
    let r = x.max(T::zero());
    r * r
}

pub(crate) fn sigmoid_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() - s)
}

pub(crate) fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s + x * s * (T::one() - s)
}

pub(crate) fn sq_relu_grad<T: Real>(x: T) -> T {
    (T::one() + T::one()) * x.max(T::zero())
}

/// Elementwise activation selector, shared by the kernels and the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Sigmoid,
    Silu,
    SqRelu,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Silu => silu(x),
            Activation::SqRelu => sq_relu(x),
        }
    }

    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Sigmoid => sigmoid_grad(x),
            Activation::Silu => silu_grad(x),
            Activation::SqRelu => sq_relu_grad(x),
        }
    }

    pub fn apply_matrix<T: Real>(self, m: &Matrix<T>) -> Matrix<T> {
        m.map(|x| self.apply(x))
    }
}
