//! Named architectures used by the CLI and the desk-scale experiments.

use crate::error::{Error, Result};
use crate::nn::{Architecture, LayerSpec};

use LayerSpec::*;

/// Small CNN teacher for 28×28 digits; taps the 64-unit hidden layer.
pub fn mnist_teacher() -> Architecture {
    Architecture::new(
        vec![1, 28, 28],
        vec![
            Conv2d { in_channels: 1, out_channels: 16, kernel: 5, stride: 1 },
            Relu,
            MaxPool2d { size: 2, stride: 2 },
            Conv2d { in_channels: 16, out_channels: 32, kernel: 5, stride: 1 },
            Relu,
            MaxPool2d { size: 2, stride: 2 },
            Flatten,
            Dense { inputs: 512, outputs: 64 },
            Relu,
            Dense { inputs: 64, outputs: 10 },
        ],
        8,
    )
}

/// Half-width student with a 3-D embedding layer in front of the
/// classifier; taps that embedding.
pub fn mnist_student() -> Architecture {
    Architecture::new(
        vec![1, 28, 28],
        vec![
            Conv2d { in_channels: 1, out_channels: 8, kernel: 5, stride: 1 },
            Relu,
            MaxPool2d { size: 2, stride: 2 },
            Conv2d { in_channels: 8, out_channels: 16, kernel: 5, stride: 1 },
            Relu,
            MaxPool2d { size: 2, stride: 2 },
            Flatten,
            Dense { inputs: 256, outputs: 32 },
            Relu,
            Dense { inputs: 32, outputs: 3 },
            Dense { inputs: 3, outputs: 10 },
        ],
        9,
    )
}

/// Maxout variant of the teacher (two pieces per unit).
pub fn mnist_maxout_teacher() -> Architecture {
    Architecture::new(
        vec![1, 28, 28],
        vec![
            Conv2d { in_channels: 1, out_channels: 32, kernel: 5, stride: 1 },
            Maxout { pieces: 2 },
            MaxPool2d { size: 2, stride: 2 },
            Conv2d { in_channels: 16, out_channels: 64, kernel: 5, stride: 1 },
            Maxout { pieces: 2 },
            MaxPool2d { size: 2, stride: 2 },
            Flatten,
            Dense { inputs: 512, outputs: 128 },
            Maxout { pieces: 2 },
            Dense { inputs: 64, outputs: 10 },
        ],
        8,
    )
}

/// One-hidden-layer MLP; taps the hidden activations.
pub fn mlp(inputs: usize, hidden: usize, classes: usize) -> Architecture {
    Architecture::new(
        vec![inputs],
        vec![
            Dense { inputs, outputs: hidden },
            Relu,
            Dense { inputs: hidden, outputs: classes },
        ],
        1,
    )
}

/// MLP student with a low-dimensional embedding layer; taps the embedding.
pub fn mlp_embedding(inputs: usize, hidden: usize, embed: usize, classes: usize) -> Architecture {
    Architecture::new(
        vec![inputs],
        vec![
            Dense { inputs, outputs: hidden },
            Relu,
            Dense { inputs: hidden, outputs: embed },
            Dense { inputs: embed, outputs: classes },
        ],
        2,
    )
}

/// Resolves a preset name. `blobs-*` presets need the blob geometry.
pub fn by_name(name: &str, input_dim: usize, classes: usize) -> Result<Architecture> {
    match name {
        "mnist-teacher" => Ok(mnist_teacher()),
        "mnist-student" => Ok(mnist_student()),
        "mnist-maxout-teacher" => Ok(mnist_maxout_teacher()),
        "blobs-teacher" => Ok(mlp(input_dim, 64, classes)),
        "blobs-student" => Ok(mlp_embedding(input_dim, 16, 3, classes)),
        other => Err(Error::arg(
            "arch",
            format!(
                "unknown preset {other:?} (mnist-teacher, mnist-student, mnist-maxout-teacher, blobs-teacher, blobs-student)"
            ),
        )),
    }
}
