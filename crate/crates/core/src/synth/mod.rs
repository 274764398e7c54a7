//! Desk-scale corpora and corruptions: speech-like clean signals, noise
//! families, simulated rooms, and seeded datasets with replayable manifests.

mod corrupt;
mod dataset;
mod noise;
mod rir;
mod speech;

pub use corrupt::{Corrupted, CorruptionSpec, DrawnParams, SnrDb, SnrDist, SynthesisContext, IDENTITY_POOL};
pub use dataset::{build_dataset, replay_dataset, CleanReferences, DatasetManifest, ManifestItem};
pub use noise::{
    band_energy_fraction, bandlimit, fit_to_length, generate_noise, standard_families, NoiseFamily, NoiseKind,
    Partition,
};
pub use rir::{
    energy_decay_curve_db, generate_rir, generate_rir_in, generate_rir_pool, identity_rir, image_source_rir,
    place_in_room, rt60_of, Rir, RoomGeometry, Rt60Bucket, RT60_BUCKETS, SPEED_OF_SOUND,
};
pub use speech::{generate_clean_corpus, generate_clean_corpus_with, generate_utterance, SpeechConfig};
