use ndarray::{Array, Dimension};

/// Flat views over every trainable tensor of a layer or model, in a fixed
/// order. Gradients use the same type as the parameters they belong to.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

impl<D: Dimension> ParamTensors for Array<f64, D> {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.as_slice().expect("parameters are kept in standard layout")]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_slice_mut().expect("parameters are kept in standard layout")]
    }
}

impl<T: ParamTensors> ParamTensors for Vec<T> {
    fn tensors(&self) -> Vec<&[f64]> {
        self.iter().flat_map(|t| t.tensors()).collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.iter_mut().flat_map(|t| t.tensors_mut()).collect()
    }
}

impl<T: ParamTensors> ParamTensors for Option<T> {
    fn tensors(&self) -> Vec<&[f64]> {
        self.as_ref().map(|t| t.tensors()).unwrap_or_default()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.as_mut().map(|t| t.tensors_mut()).unwrap_or_default()
    }
}

/// Implements [`ParamTensors`] by concatenating the listed fields.
macro_rules! impl_param_tensors {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::tensorcore::ParamTensors for $ty {
            fn tensors(&self) -> Vec<&[f64]> {
                let mut v = Vec::new();
                $( v.extend($crate::tensorcore::ParamTensors::tensors(&self.$field)); )*
                v
            }
            fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
                let mut v = Vec::new();
                $( v.extend($crate::tensorcore::ParamTensors::tensors_mut(&mut self.$field)); )*
                v
            }
        }
    };
}
pub(crate) use impl_param_tensors;

pub fn fill<P: ParamTensors>(p: &mut P, value: f64) {
    for t in p.tensors_mut() {
        t.fill(value);
    }
}

/// A zero-valued copy, used as a gradient accumulator.
pub fn zeros_like<P: ParamTensors + Clone>(p: &P) -> P {
    let mut z = p.clone();
    fill(&mut z, 0.0);
    z
}

/// `dst += alpha · src`, tensor by tensor.
pub fn add_scaled<P: ParamTensors>(dst: &mut P, src: &P, alpha: f64) {
    for (d, s) in dst.tensors_mut().into_iter().zip(src.tensors()) {
        for (a, b) in d.iter_mut().zip(s) {
            *a += alpha * b;
        }
    }
}

pub fn scale<P: ParamTensors>(p: &mut P, alpha: f64) {
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= alpha);
    }
}

/// L2 norm over every scalar of every tensor.
pub fn global_norm<P: ParamTensors>(p: &P) -> f64 {
    p.tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}
