//! Dense layers used by the feature, inlier and aggregation stages.
//!
//! Weights follow the `out x in` convention; inputs are row matrices with one
//! point per row. Default parameters come from seeded initialisers (Kaiming
//! uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, semi-orthogonal, or zero)
//! and can be replaced with weights loaded from a file.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::sqrt;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    /// `out x in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl LinearLayer {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if bias.len() != weight.nrows() {
            return Err(Error::DimensionMismatch {
                context: "linear layer bias",
                expected: weight.nrows(),
                actual: bias.len(),
            });
        }
        if !weight.iter().chain(bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("weights", "non-finite entry"));
        }
        Ok(Self { weight, bias })
    }

    /// Seeded uniform initialisation of weights and bias.
    pub fn kaiming<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / sqrt(input.max(1) as f64);
        let weight = DMatrix::from_fn(output, input, |_, _| rng.random_range(-bound..=bound));
        let bias = DVector::from_fn(output, |_, _| rng.random_range(-bound..=bound));
        Self { weight, bias }
    }

    /// Seeded uniform weights with a zero bias (pure linear map).
    pub fn kaiming_unbiased<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let mut l = Self::kaiming(input, output, rng);
        l.bias.fill(0.0);
        l
    }

    /// Seeded semi-orthogonal weights (orthonormal columns when
    /// `output >= input`, orthonormal rows otherwise) and a zero bias, so
    /// inner products of the outputs equal those of the inputs.
    pub fn orthogonal<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let (tall, short) = (input.max(output), input.min(output));
        let gaussian = DMatrix::from_fn(tall, short, |_, _| -> f64 { rng.sample(StandardNormal) });
        let q = gaussian.qr().q();
        let weight = if output >= input { q } else { q.transpose() };
        Self {
            weight,
            bias: DVector::zeros(output),
        }
    }

    /// All-zero layer.
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DMatrix::zeros(output, input),
            bias: DVector::zeros(output),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weight
            .iter()
            .chain(self.bias.iter())
            .all(|v| *v == 0.0)
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// `input · Wᵀ + b` for an `n x in` input.
    pub fn forward(&self, input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if input.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "linear layer input",
                expected: self.input_dim(),
                actual: input.ncols(),
            });
        }
        let mut out = input * self.weight.transpose();
        for (mut col, b) in out.column_iter_mut().zip(self.bias.iter()) {
            col.add_scalar_mut(*b);
        }
        Ok(out)
    }
}

/// Stack of linear layers with ReLU between consecutive layers (none after
/// the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LinearLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<LinearLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("mlp layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::DimensionMismatch {
                    context: "mlp layer chain",
                    expected: pair[0].output_dim(),
                    actual: pair[1].input_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Seeded MLP with layer widths `dims[0] -> dims[1] -> ... -> dims[n]`.
    pub fn seeded<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(
            dims.len() >= 2,
            "an mlp needs at least input and output widths"
        );
        let layers = dims
            .windows(2)
            .map(|w| LinearLayer::kaiming(w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    /// Like [`Mlp::seeded`] but with the last layer zeroed, so the MLP
    /// starts as the zero map (for residual branches).
    pub fn seeded_zero_last<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let mut mlp = Self::seeded(dims, rng);
        let last = mlp.layers.len() - 1;
        let (i, o) = (mlp.layers[last].input_dim(), mlp.layers[last].output_dim());
        mlp.layers[last] = LinearLayer::zeros(i, o);
        mlp
    }

    /// `true` when the output layer is identically zero, i.e. the MLP maps
    /// every input to zero.
    pub fn is_zero_map(&self) -> bool {
        self.layers[self.layers.len() - 1].is_zero()
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn forward(&self, input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut x = self.layers[0].forward(input)?;
        for layer in &self.layers[1..] {
            x.apply(|v| *v = v.max(0.0));
            x = layer.forward(&x)?;
        }
        Ok(x)
    }
}

/// Named collection of layers, the in-memory image of a weight file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    layers: BTreeMap<String, LinearLayer>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, layer: LinearLayer) {
        self.layers.insert(name.into(), layer);
    }

    pub fn get(&self, name: &str) -> Option<&LinearLayer> {
        self.layers.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&LinearLayer> {
        self.get(name).ok_or_else(|| Error::Unknown {
            kind: "weight layer",
            value: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LinearLayer)> {
        self.layers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn insert_mlp(&mut self, prefix: &str, mlp: &Mlp) {
        for (i, layer) in mlp.layers().iter().enumerate() {
            self.insert(alloc::format!("{prefix}.{i}"), layer.clone());
        }
    }

    /// Collects `prefix.0`, `prefix.1`, ... into an MLP.
    pub fn mlp(&self, prefix: &str) -> Result<Mlp> {
        let mut layers = Vec::new();
        while let Some(l) = self.get(&alloc::format!("{prefix}.{}", layers.len())) {
            layers.push(l.clone());
        }
        if layers.is_empty() {
            return Err(Error::Unknown {
                kind: "weight layer",
                value: alloc::format!("{prefix}.0"),
            });
        }
        Mlp::new(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_forward_matches_manual() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, -1.0, 1.0, 0.0]);
        let b = DVector::from_vec(alloc::vec![0.5, -0.5]);
        let l = LinearLayer::new(w, b).unwrap();
        let x = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let y = l.forward(&x).unwrap();
        assert_eq!(y[(0, 0)], 7.5);
        assert_eq!(y[(0, 1)], 0.5);
        assert!(l.forward(&DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn kaiming_bounds_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = LinearLayer::kaiming(16, 8, &mut rng);
        assert!(l.weight.iter().all(|v| v.abs() <= 0.25));
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(l, LinearLayer::kaiming(16, 8, &mut rng2));
    }

    #[test]
    fn mlp_chain_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = LinearLayer::kaiming(4, 3, &mut rng);
        let b = LinearLayer::kaiming(2, 1, &mut rng);
        assert!(Mlp::new(alloc::vec![a.clone(), b]).is_err());
        let c = LinearLayer::kaiming(3, 1, &mut rng);
        let mlp = Mlp::new(alloc::vec![a, c]).unwrap();
        assert_eq!((mlp.input_dim(), mlp.output_dim()), (4, 1));
    }

    #[test]
    fn mlp_of_zero_is_constant_bias_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::seeded(&[3, 5, 2], &mut rng);
        let out = mlp.forward(&DMatrix::zeros(4, 3)).unwrap();
        for r in 1..4 {
            assert_eq!(out.row(r), out.row(0));
        }
    }

    #[test]
    fn store_roundtrip_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::seeded(&[3, 4, 2], &mut rng);
        let mut store = WeightStore::new();
        store.insert_mlp("agg.fuse", &mlp);
        assert_eq!(store.mlp("agg.fuse").unwrap(), mlp);
        assert!(store.mlp("missing").is_err());
    }

    #[test]
    fn orthogonal_preserves_inner_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = LinearLayer::orthogonal(5, 32, &mut rng);
        let gram = l.weight.transpose() * &l.weight;
        assert!((gram - DMatrix::<f64>::identity(5, 5)).amax() < 1e-12);
        let wide = LinearLayer::orthogonal(32, 5, &mut rng);
        let gram = &wide.weight * wide.weight.transpose();
        assert!((gram - DMatrix::<f64>::identity(5, 5)).amax() < 1e-12);
        let x = DMatrix::from_row_slice(2, 5, &[1.0, 2.0, 0.0, -1.0, 0.5, 0.3, 0.0, 4.0, 1.0, 1.0]);
        let y = l.forward(&x).unwrap();
        assert!(((&y * y.transpose()) - (&x * x.transpose())).amax() < 1e-12);
    }

    #[test]
    fn zero_last_layer_maps_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mlp = Mlp::seeded_zero_last(&[4, 4, 4], &mut rng);
        assert!(mlp.is_zero_map());
        assert!(!Mlp::seeded(&[4, 4, 4], &mut rng).is_zero_map());
        let out = mlp.forward(&DMatrix::from_element(3, 4, 2.0)).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }
}
