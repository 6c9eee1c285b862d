//! Helpers shared by the integration suites: a linearly separable
//! synthetic scene and run-config scaffolding.

use bassnet::data::io::{write_labels, write_scene};
use bassnet::data::HyperCube;
use bassnet::rng::Rng;
use bassnet::tensor::{Shape3, Volume};
use std::path::{Path, PathBuf};

/// Two-class scene with opposed spectral signatures: the left half is
/// bright in the lower channels, the right half in the upper channels,
/// with a small jitter. The two columns at the seam stay unlabeled so
/// every labeled pixel has a spectrally pure patch neighborhood; the
/// classes are linearly separable with a wide margin.
pub fn toy_scene(width: usize, height: usize, channels: usize, seed: u64) -> HyperCube {
    let mut radiance = Volume::zeros(Shape3::new(height, width, channels).unwrap());
    let mut labels = vec![0u16; width * height];
    let mut rng = Rng::new(seed);
    for y in 0..height {
        for x in 0..width {
            let left = x < width / 2;
            let seam = x + 1 == width / 2 || x == width / 2;
            labels[y * width + x] = if seam {
                0
            } else if left {
                1
            } else {
                2
            };
            for k in 0..channels {
                let bright = (k < channels / 2) == left;
                let base = if bright { 0.9 } else { 0.0 };
                radiance.set(y, x, k, base + rng.next_f64() / 40.0);
            }
        }
    }
    HyperCube::new(width, height, radiance, labels).unwrap()
}

pub fn write_cube(dir: &Path, stem: &str, cube: &HyperCube) -> (PathBuf, PathBuf) {
    let scene = dir.join(format!("{}.hsc", stem));
    let labels = dir.join(format!("{}.hsl", stem));
    write_scene(&scene, cube).unwrap();
    write_labels(&labels, cube.width, cube.height, &cube.labels).unwrap();
    (scene, labels)
}

/// Run config around the toy scene with a small explicit network.
pub fn toy_config(
    scene: &Path,
    labels: &Path,
    output_dir: &Path,
    seed: u64,
) -> serde_json::Value {
    serde_json::json!({
        "scene": scene,
        "labels": labels,
        "output_dir": output_dir,
        "seed": seed,
        "network": {
            "configuration_id": 1,
            "patch_size": 3,
            "in_channels": 8,
            "phi": "identity",
            "n_b": 2,
            "block2": [{"kind": "fc", "width": 12}],
            "block3": [32, 2],
            "num_classes": 2,
            "parameter_sharing": true,
            "dropout_rate": 0.5,
        },
        "split": {"per_class_train": 100, "val_fraction_of_train": 0.25},
        "schedule": {"epochs": 8, "batch_size": 100},
    })
}

pub fn write_config(dir: &Path, name: &str, value: &serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path
}
