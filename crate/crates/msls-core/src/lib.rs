//! Simulation and recovery library for a single-microphone multi-source
//! listening system.
//!
//! A randomized enclosure model imprints a direction-dependent magnitude
//! frequency response on incoming sound. Band-limited magnitude spectra of
//! the received mixture are matched against a trained dictionary with one
//! column per (direction, audio) class, and the active sources are recovered
//! frame by frame with a variable-sparsity PCA projection followed by
//! orthogonal matching pursuit, then aggregated by majority voting.
//!
//! Modules:
//! - [`spectra`]: framing, windowed magnitude spectra on a band-limited bin
//!   grid, element-wise response application, and ideal mixing.
//! - [`enclosure`]: seeded generation of the directional filter model and
//!   coherence diagnostics.
//! - [`dictionary`]: measurement-matrix construction, lookup, and a bit-exact
//!   file format.
//! - [`recovery`]: variable-sparsity PCA, orthogonal matching pursuit, and
//!   majority voting.
//! - [`harness`]: synthetic audio library, scenario rendering, listening-test
//!   campaigns, and tracking runs.
//! - [`wav`]: minimal mono 16-bit PCM WAV reading and writing.

pub mod dictionary;
pub mod enclosure;
pub mod harness;
pub mod recovery;
pub mod spectra;
pub mod wav;

pub(crate) mod linalg;
pub(crate) mod util;
