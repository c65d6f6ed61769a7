use std::path::Path;

use hashdistill::experiment::ExperimentConfig;

pub const TINY: &str = r#"
name = "tiny"
seed = 5

[dataset]
kind = "synthetic"
input_size = 64

[dataset.synthetic]
classes = 4
images_per_class = 12
image_size = 16
seed = 7

[teacher]
id = "small-cnn"
widths = [4, 8, 8]
feature_dim = 8

[teacher.pretrain]
epochs = 2
batch_size = 16
optimizer = { kind = "adam", learning_rate = 1e-3 }
source_seed = 11

[student]
variant = "custom"
stem_filters = 4
blocks_per_layer = [1, 1, 1, 1, 1]
layer_filters = [4, 4, 8, 8, 8]
transition_filters = [4, 8, 8, 8]

[distill]
epochs = 2
batch_size = 16
optimizer = { kind = "adam", learning_rate = 1e-3 }

[finetune]
framework = "csq"
n_bits = 8
epochs = 2
batch_size = 8
optimizer = { kind = "rmsprop", learning_rate = 1e-4 }

[evaluate]
top_n = 10
top_k = 3
"#;

pub fn tiny_config(dir: &Path) -> ExperimentConfig {
    let text = format!("output_dir = {:?}\n{TINY}", dir.display().to_string());
    ExperimentConfig::from_toml(&text).unwrap()
}
