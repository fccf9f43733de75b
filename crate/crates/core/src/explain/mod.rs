//! Token attributions by Integrated Gradients, and per-class prosody
//! statistics of a corpus.

mod ig;
mod render;
mod stats;

pub use ig::{integrate_path, integrated_gradients, Attributable, AttributionMap, LinearFunction, ModelOutput, PathGrid, PathIntegral};
pub use render::{intensities, parse_text, render_html, render_text};
pub use stats::{corpus_stats, ClassMeans, ClassStats, CorpusStats};
