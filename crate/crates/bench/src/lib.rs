//! Fixtures shared by the benchmarks.

use tsla_core::classification::{generate_gaussian_mixture, ClassificationOracle, MixtureSpec, ModelKind};

pub fn mixture_oracle(kind: ModelKind, num_classes: usize, dim: usize, n: usize) -> ClassificationOracle {
    let data = generate_gaussian_mixture(&MixtureSpec {
        num_classes,
        dim,
        n,
        class_separation: 3.0,
        label_noise_rate: 0.2,
        seed: 1,
    })
    .expect("valid mixture");
    ClassificationOracle::new(kind, data).expect("valid model")
}
