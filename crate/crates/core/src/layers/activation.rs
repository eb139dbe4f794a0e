use crate::numerics::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Identity,
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl Activation {
    pub fn apply<T: Real>(self, v: &mut [T]) {
        match self {
            Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(T::zero())),
            Activation::LeakyRelu(s) => {
                let s = T::lit(s);
                v.iter_mut().for_each(|x| {
                    if *x < T::zero() {
                        *x *= s
                    }
                })
            }
            Activation::Sigmoid => v.iter_mut().for_each(|x| *x = sigmoid(*x)),
            Activation::Identity => {}
        }
    }

    /// Multiplies `dy` in place by the derivative, expressed through the output `y`.
    pub fn backward_in_place<T: Real>(self, y: &[T], dy: &mut [T]) {
        match self {
            Activation::Relu => dy.iter_mut().zip(y).for_each(|(d, &o)| {
                if o <= T::zero() {
                    *d = T::zero()
                }
            }),
            Activation::LeakyRelu(s) => {
                let s = T::lit(s);
                dy.iter_mut().zip(y).for_each(|(d, &o)| {
                    if o <= T::zero() {
                        *d *= s
                    }
                })
            }
            Activation::Sigmoid => dy
                .iter_mut()
                .zip(y)
                .for_each(|(d, &o)| *d *= o * (T::one() - o)),
            Activation::Identity => {}
        }
    }
}
