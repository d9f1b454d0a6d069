//! Deterministic evaluation: center crop, grayscale, eval-mode forward,
//! argmax, metrics.

use selfens_core::augment;
use selfens_core::metrics::{argmax, MetricsReport};
use selfens_core::network::Network;
use selfens_core::tensor::Tensor;

use crate::batches::ImageStore;
use crate::error::{Error, Result};

const EVAL_BATCH: usize = 64;

/// Evaluate `net` on the store records named by `indices`, all of which
/// must carry labels.
pub fn evaluate(
    net: &Network<f32>,
    store: &ImageStore,
    indices: &[usize],
    crop: usize,
    class_names: &[String],
    ordinal: bool,
) -> Result<MetricsReport> {
    if indices.is_empty() {
        return Err(Error::Data("evaluate: empty evaluation set".into()));
    }
    let k = class_names.len();
    let mut truth = Vec::with_capacity(indices.len());
    let mut pred = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let mut pixels = Vec::with_capacity(chunk.len() * crop * crop);
        for &i in chunk {
            let t = augment::eval_path(store.image(i), crop, crop)?;
            pixels.extend_from_slice(t.data());
            truth.push(
                store.labels[i]
                    .ok_or_else(|| Error::Data(format!("evaluate: record {i} has no label")))?,
            );
        }
        let batch = Tensor::new(&[chunk.len(), 1, crop, crop], pixels)?;
        let logits = net.forward_eval(&batch)?;
        for row in logits.data().chunks(k) {
            pred.push(argmax(row));
        }
    }
    Ok(MetricsReport::from_predictions(&truth, &pred, class_names, ordinal)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::make_split;
    use crate::synth::generate_synthetic;
    use selfens_core::augment::AugmentSpec;
    use selfens_core::network::compact_spec;

    #[test]
    fn evaluation_is_deterministic_and_complete() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic(dir.path(), 30, 1).unwrap();
        let plan = make_split(&m, 5, 1, true).unwrap();
        let spec = AugmentSpec::with_geometry(40, 32);
        let store = ImageStore::load(&m, &plan.test, &spec).unwrap();
        let net = Network::<f32>::from_spec(compact_spec(2), 4);
        let a = evaluate(&net, &store, &plan.test, 32, &m.classes, false).unwrap();
        let b = evaluate(&net, &store, &plan.test, 32, &m.classes, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples, plan.test.len());
        assert_eq!(a.confusion.iter().sum::<usize>(), plan.test.len());
    }
}
