//! Image and annotation I/O, training-crop extraction and a synthetic
//! thermal/optical pair generator.

mod annotations;
mod crops;
mod pgm;
mod synth;

pub use annotations::{read_annotations, write_annotations, AnnotatedSample, SampleRecord};
pub use crops::{crops_for_samples, random_crops, CropSet, TrainingPair, MIN_CROP};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};
pub use synth::synth_pairs;

/// Class names for labels 1 to 5.
pub const CLASS_NAMES: [&str; 5] = ["nat", "ani", "hum", "cro", "inf"];
