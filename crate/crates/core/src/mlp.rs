//! Small fully connected networks with exact reverse-mode gradients.
//!
//! All parameters live in one contiguous vector. Layer `l` occupies
//! `n_out * n_in` weights (row-major, one row per output unit) followed by `n_out`
//! biases, so a whole network can be treated as a single flow particle.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{check_dim, FlowError, Result};
use crate::scalar::Scalar;

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Dot product with four independent accumulators so the adds can overlap.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(T::zero()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "relu" => Ok(Self::Relu),
            "identity" | "linear" => Ok(Self::Identity),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Tanh => "tanh",
            Self::Relu => "relu",
            Self::Identity => "identity",
        })
    }
}

/// All parameters of a network as one flat vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlatView<T>(pub Vec<T>);

impl<T> FlatView<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

/// Layer outputs recorded by a forward pass, needed for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Vec<T>>,
    generation: u64,
}

impl<T> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &[T] {
        &self.activations[0]
    }
}

#[derive(Debug, Clone)]
pub struct MlpParams<T> {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    data: Vec<T>,
    offsets: Vec<usize>,
    generation: u64,
}

/// Equal shapes and values; the cache generation is ignored.
impl<T: PartialEq> PartialEq for MlpParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.sizes == other.sizes && self.activations == other.activations && self.data == other.data
    }
}

/// `sum_l (n_in + 1) n_out`.
pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

fn validate_shape(sizes: &[usize], activations: &[Activation]) -> Result<Vec<usize>> {
    if sizes.len() < 2 {
        return Err(FlowError::InvalidInput(
            "a network needs at least input and output sizes".into(),
        ));
    }
    if sizes.contains(&0) {
        return Err(FlowError::InvalidInput("layer sizes must be positive".into()));
    }
    check_dim(sizes.len() - 1, activations.len())?;
    let mut offsets = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for w in sizes.windows(2) {
        offsets.push(at);
        at += (w[0] + 1) * w[1];
    }
    offsets.push(at);
    Ok(offsets)
}

impl<T: Scalar> MlpParams<T> {
    /// All-zero parameters.
    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        let offsets = validate_shape(sizes, activations)?;
        let len = *offsets.last().unwrap();
        Ok(Self {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            data: vec![T::zero(); len],
            offsets,
            generation: next_generation(),
        })
    }

    /// Weights uniform in `+-sqrt(6 / (n_in + n_out))`, biases zero.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(sizes, activations)?;
        for l in 0..p.layers() {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let start = p.offsets[l];
            for w in &mut p.data[start..start + n_in * n_out] {
                *w = T::lit(rng.random_range(-limit..limit));
            }
        }
        Ok(p)
    }

    /// Rebuilds parameters from a flat vector (inverse of [`MlpParams::flatten`]).
    pub fn from_flat(sizes: &[usize], activations: &[Activation], flat: FlatView<T>) -> Result<Self> {
        let offsets = validate_shape(sizes, activations)?;
        check_dim(*offsets.last().unwrap(), flat.len())?;
        if flat.0.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::InvalidInput("network parameters must be finite".into()));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            data: flat.0,
            offsets,
            generation: next_generation(),
        })
    }

    pub fn flatten(&self) -> FlatView<T> {
        FlatView(self.data.clone())
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn as_flat_mut(&mut self) -> &mut [T] {
        self.generation = next_generation();
        &mut self.data
    }

    /// Replaces all parameters; invalidates outstanding forward caches.
    pub fn set_flat(&mut self, values: &[T]) -> Result<()> {
        check_dim(self.data.len(), values.len())?;
        self.as_flat_mut().copy_from_slice(values);
        Ok(())
    }

    /// Row-major `n_out x n_in` weights of layer `l`.
    pub fn weights(&self, l: usize) -> &[T] {
        let start = self.offsets[l];
        &self.data[start..start + self.sizes[l] * self.sizes[l + 1]]
    }

    pub fn biases(&self, l: usize) -> &[T] {
        let start = self.offsets[l] + self.sizes[l] * self.sizes[l + 1];
        &self.data[start..self.offsets[l + 1]]
    }

    /// Mutable weights and biases of layer `l`; invalidates outstanding caches.
    pub fn layer_mut(&mut self, l: usize) -> (&mut [T], &mut [T]) {
        let split = self.sizes[l] * self.sizes[l + 1];
        let (start, end) = (self.offsets[l], self.offsets[l + 1]);
        self.generation = next_generation();
        self.data[start..end].split_at_mut(split)
    }

    fn layer_forward(&self, l: usize, input: &[T], out: &mut Vec<T>) {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = self.weights(l);
        let b = self.biases(l);
        let act = self.activations[l];
        out.clear();
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            out.push(act.apply(b[o] + dot(row, input)));
        }
    }

    /// Output only, without recording a cache.
    pub fn predict(&self, input: &[T]) -> Result<Vec<T>> {
        check_dim(self.input_dim(), input.len())?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for l in 0..self.layers() {
            self.layer_forward(l, &cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward(&self, input: &[T]) -> Result<(Vec<T>, ForwardCache<T>)> {
        check_dim(self.input_dim(), input.len())?;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(input.to_vec());
        for l in 0..self.layers() {
            let mut out = Vec::with_capacity(self.sizes[l + 1]);
            self.layer_forward(l, &activations[l], &mut out);
            activations.push(out);
        }
        let output = activations.last().unwrap().clone();
        Ok((
            output,
            ForwardCache {
                activations,
                generation: self.generation,
            },
        ))
    }

    /// Parameter gradient and input gradient of `<output_grad, output>`.
    pub fn backward(&self, cache: &ForwardCache<T>, output_grad: &[T]) -> Result<(FlatView<T>, Vec<T>)> {
        let mut grads = vec![T::zero(); self.data.len()];
        let input_grad = self.backward_into(cache, output_grad, Some(&mut grads), T::one())?;
        Ok((FlatView(grads), input_grad))
    }

    /// Adds `scale * d<output_grad, output>/d params` into `param_grads` (when given)
    /// and returns the input gradient.
    pub fn backward_into(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &[T],
        mut param_grads: Option<&mut [T]>,
        scale: T,
    ) -> Result<Vec<T>> {
        if cache.generation != self.generation {
            return Err(FlowError::StaleCache);
        }
        check_dim(self.output_dim(), output_grad.len())?;
        if let Some(g) = param_grads.as_deref() {
            check_dim(self.data.len(), g.len())?;
        }
        let mut delta = output_grad.to_vec();
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.activations[l];
            let y = &cache.activations[l + 1];
            let a = &cache.activations[l];
            for (d, &yo) in delta.iter_mut().zip(y) {
                *d = *d * act.derivative_from_output(yo);
            }
            if let Some(g) = param_grads.as_deref_mut() {
                let start = self.offsets[l];
                let (gw, gb) = g[start..self.offsets[l + 1]].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let dz = scale * delta[o];
                    if dz == T::zero() {
                        continue;
                    }
                    for (gwi, &ai) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(a) {
                        *gwi = *gwi + dz * ai;
                    }
                    gb[o] = gb[o] + dz;
                }
            }
            let w = self.weights(l);
            let mut prev = vec![T::zero(); n_in];
            for (o, &dz) in delta.iter().enumerate() {
                if dz == T::zero() {
                    continue;
                }
                for (p, &wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p = *p + wi * dz;
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Gradient of `<output_grad, f(input)>` with respect to `input`.
    pub fn input_gradient(&self, input: &[T], output_grad: &[T]) -> Result<Vec<T>> {
        let (_, cache) = self.forward(input)?;
        self.backward_into(&cache, output_grad, None, T::one())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::<f64>::zeros(&[3, 4, 2], &[Activation::Identity; 2]).unwrap();
        assert_eq!(p.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(p.len(), param_count(&[3, 4, 2]));
        assert_eq!(p.len(), 4 * 4 + 5 * 2);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut p = MlpParams::<f64>::zeros(&[3, 3], &[Activation::Identity]).unwrap();
        let (w, _) = p.layer_mut(0);
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        assert_eq!(p.predict(&[0.5, -1.0, 2.0]).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::<f64>::glorot(&[2, 3], &[Activation::Identity], &mut rng).unwrap();
        let x = [0.7, -1.3];
        let g = [1.0, 2.0, -0.5];
        let (_, cache) = p.forward(&x).unwrap();
        let (grads, _) = p.backward(&cache, &g).unwrap();
        for o in 0..3 {
            for i in 0..2 {
                assert_eq!(grads.0[o * 2 + i], g[o] * x[i]);
            }
            assert_eq!(grads.0[6 + o], g[o]);
        }
    }

    #[test]
    fn mutation_invalidates_cache() {
        let mut p = MlpParams::<f64>::zeros(&[1, 1], &[Activation::Tanh]).unwrap();
        let (_, cache) = p.forward(&[1.0]).unwrap();
        p.as_flat_mut()[0] = 0.5;
        assert_eq!(p.backward(&cache, &[1.0]).unwrap_err(), FlowError::StaleCache);
    }

    #[test]
    fn round_trip_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MlpParams::<f64>::glorot(&[4, 5, 2], &[Activation::Tanh, Activation::Identity], &mut rng).unwrap();
        let q = MlpParams::from_flat(p.sizes(), p.activations(), p.flatten()).unwrap();
        assert_eq!(p.as_flat(), q.as_flat());
        assert!(MlpParams::from_flat(&[4, 5, 2], p.activations(), FlatView(vec![0.0; 3])).is_err());
    }

    #[test]
    fn bounded_activations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = MlpParams::<f64>::glorot(&[2, 8], &[Activation::Tanh], &mut rng).unwrap();
        p.as_flat_mut().iter_mut().for_each(|v| *v *= 100.0);
        assert!(p.predict(&[3.0, -4.0]).unwrap().iter().all(|v| v.abs() <= 1.0));
        let r = MlpParams::<f64>::glorot(&[2, 8], &[Activation::Relu], &mut rng).unwrap();
        assert!(r.predict(&[3.0, -4.0]).unwrap().iter().all(|&v| v >= 0.0));
    }
}
