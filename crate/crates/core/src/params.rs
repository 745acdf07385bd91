//! Named parameter groups, generic over the tensor handle so the same
//! structure holds stored weights (`Matrix<T>`) and their tape leaves (`Var`).

/// Implements `map`, `try_map`, `visit`, `visit_mut` and the `tensors` accessors over the listed fields,
/// in declaration order. Names are `prefix + field`.
macro_rules! param_group {
    ($name:ident { $($field:ident),* $(,)? }) => {
        impl<M> $name<M> {
            pub fn map<N>(&self, prefix: &str, f: &mut impl FnMut(&str, &M) -> N) -> $name<N> {
                $name { $($field: f(&format!("{prefix}{}", stringify!($field)), &self.$field)),* }
            }

            pub fn try_map<N, E>(
                &self,
                prefix: &str,
                f: &mut impl FnMut(&str, &M) -> Result<N, E>,
            ) -> Result<$name<N>, E> {
                Ok($name { $($field: f(&format!("{prefix}{}", stringify!($field)), &self.$field)?),* })
            }

            pub fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, &M)) {
                $(f(&format!("{prefix}{}", stringify!($field)), &self.$field);)*
            }

            pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut M)) {
                $(f(&format!("{prefix}{}", stringify!($field)), &mut self.$field);)*
            }

            pub fn tensors(&self) -> Vec<&M> {
                vec![$(&self.$field),*]
            }

            pub fn tensors_mut(&mut self) -> Vec<&mut M> {
                vec![$(&mut self.$field),*]
            }
        }
    };
}

pub(crate) use param_group;
