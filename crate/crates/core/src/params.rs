//! Named parameter trees.
//!
//! Parameter blocks are plain structs generic over the leaf type: the same
//! struct holds [`Tensor`]s at rest and [`Var`]s once registered on a tape.
//! Traversal order is fixed and doubles as the checkpoint manifest order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

/// A struct of named leaves visited in a fixed order.
pub trait ParamTree<T> {
    type Mapped<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T));
    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(String, &T) -> U) -> Self::Mapped<U>;

    /// Leaves with their dotted names, in traversal order.
    fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t| out.push((n, t)));
        out
    }
}

/// Declares a parameter struct whose fields are all leaves.
macro_rules! param_struct {
    ($(#[$m:meta])* pub struct $name:ident<T> { $($(#[$fm:meta])* pub $field:ident),* $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name<T> {
            $($(#[$fm])* pub $field: T,)*
        }

        impl<T> $crate::params::ParamTree<T> for $name<T> {
            type Mapped<U> = $name<U>;

            fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(alloc::string::String, &'a T)) {
                $(f($crate::params::join(prefix, stringify!($field)), &self.$field);)*
            }

            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(alloc::string::String, &mut T)) {
                $(f($crate::params::join(prefix, stringify!($field)), &mut self.$field);)*
            }

            fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(alloc::string::String, &T) -> U) -> $name<U> {
                $name {
                    $($field: f($crate::params::join(prefix, stringify!($field)), &self.$field),)*
                }
            }
        }
    };
}
pub(crate) use param_struct;

/// Operations on a tree of tensors.
pub trait TensorTree: ParamTree<Tensor> + Sized {
    /// Records every tensor as a differentiable leaf.
    fn register(&self, tape: &mut Tape) -> Self::Mapped<Var> {
        self.map("", &mut |_, t| tape.leaf(t))
    }

    /// Records every tensor as a constant (no gradients).
    fn register_frozen(&self, tape: &mut Tape) -> Self::Mapped<Var> {
        self.map("", &mut |_, t| tape.constant(t))
    }

    /// Adds the tape gradients of `vars` into each tensor's `grad`.
    fn absorb_grads<V: ParamTree<Var>>(&mut self, tape: &Tape, vars: &V) -> Result<()> {
        let mut ids = Vec::new();
        vars.visit("", &mut |_, v| ids.push(*v));
        let mut count = 0;
        self.visit_mut("", &mut |_, t| count += usize::from(t.numel() > 0));
        if count != ids.len() {
            return Err(shape_err("absorb_grads", "parameter trees differ"));
        }
        let mut it = ids.into_iter();
        self.visit_mut("", &mut |_, t| {
            let v = it.next().expect("lengths checked");
            if let Some(g) = tape.grad(v) {
                match &mut t.grad {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    None => t.grad = Some(g.to_vec()),
                }
            }
        });
        Ok(())
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, t| t.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    /// Euclidean norm of all stored gradients.
    fn grad_norm(&self) -> f64 {
        let mut sq = 0.0;
        self.visit("", &mut |_, t| {
            if let Some(g) = &t.grad {
                sq += g.iter().map(|x| x * x).sum::<f64>();
            }
        });
        libm::sqrt(sq)
    }
}

impl<P: ParamTree<Tensor>> TensorTree for P {}
