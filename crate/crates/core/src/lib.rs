//! Traffic-to-image malware detection toolkit.
//!
//! The pipeline: pcap captures (or synthetic corpora) are split into
//! payload chunks, each chunk is laid out along a Hilbert space-filling
//! curve as a grid of byte-class cells, and a small convolutional network
//! classifies the resulting image as benign or malicious.

pub mod byteclass;
pub mod cnn;
pub mod dataset;
pub mod hilbert;
pub mod label;
pub mod metrics;
pub mod pcap;
pub mod pipeline;
pub mod png;

pub use byteclass::{classify_byte, histogram, ByteClass, FeatureHistogram};
pub use hilbert::{d2xy, layout, xy2d, VisImage};
pub use label::{Family, Label};
pub use pcap::PayloadChunk;
