use std::fmt;

use crate::tensor::Scalar;

use super::{Module, ModelParams, TensorRole};

/// Published trainable-parameter figure for this architecture. The layer
/// definitions give `266_513 + 243 * dim` (+129 per extra class), which
/// exceeds this for every `dim >= 1`; reports print the comparison.
pub const REFERENCE_PARAM_COUNT: usize = 216_270;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamReport {
    /// One row per trainable tensor, in visiting order.
    pub tensors: Vec<ParamRow>,
    /// Per-layer totals (tensor name without its last component), in order.
    pub layers: Vec<(String, usize)>,
    pub total: usize,
}

/// Trainable scalar count per tensor, per layer, and overall. Batch-norm
/// scale/shift are counted; running statistics are not.
pub fn count_parameters<T: Scalar>(params: &ModelParams<T>) -> ParamReport {
    let mut tensors = Vec::new();
    params.visit("", &mut |name, t, role| {
        if role == TensorRole::Trainable {
            tensors.push(ParamRow {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                count: t.len(),
            });
        }
    });
    let mut layers: Vec<(String, usize)> = Vec::new();
    for row in &tensors {
        let layer = row.name.rsplit_once('.').map_or(row.name.as_str(), |(l, _)| l);
        match layers.last_mut() {
            Some((name, n)) if name == layer => *n += row.count,
            _ => layers.push((layer.to_string(), row.count)),
        }
    }
    let total = tensors.iter().map(|r| r.count).sum();
    ParamReport { tensors, layers, total }
}

impl ParamReport {
    pub fn layer(&self, name: &str) -> Option<usize> {
        self.layers.iter().find(|(n, _)| n == name).map(|(_, c)| *c)
    }

    /// Comparison against [`REFERENCE_PARAM_COUNT`].
    pub fn reference_note(&self) -> String {
        let diff = self.total as i64 - REFERENCE_PARAM_COUNT as i64;
        format!(
            "reference figure {REFERENCE_PARAM_COUNT} is not reachable from the layer definitions: \
             total = 266513 + 243*dim + 129*(num_classes-1) >= 266756 for every dim >= 1; \
             this model has {} ({diff:+} vs reference)",
            self.total
        )
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.layers.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<width$}  {:>10}", "layer", "params")?;
        for (name, count) in &self.layers {
            writeln!(f, "{name:<width$}  {count:>10}")?;
        }
        writeln!(f, "{:<width$}  {:>10}", "total", self.total)?;
        write!(f, "note: {}", self.reference_note())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;
    use crate::rng::SeededRng;

    #[test]
    fn stem_and_fc1_rows() {
        let mut rng = SeededRng::new(0);
        let p = ModelParams::<f32>::new(ModelConfig::default(), &mut rng).unwrap();
        let r = count_parameters(&p);
        assert_eq!(r.layer("initial_conv"), Some(896));
        assert_eq!(r.layer("initial_bn"), Some(64));
        assert_eq!(r.layer("fc1"), Some(65_792));
        assert_eq!(r.layer("classifier"), Some(129));
    }
}
