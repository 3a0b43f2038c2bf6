//! Wi-Fi RSSI-fingerprint indoor localization toolkit.
//!
//! The pieces fit together like this: [`sim`] builds a radio map (a grid of
//! RSSI fingerprints) over a site model and simulates 802.11 scans against
//! it; [`locator`] answers "where am I" queries by k-nearest-neighbor search
//! in signal space followed by neighbor-position averaging; [`formats`]
//! parses scan records and persists radio maps as line-oriented text;
//! [`net`] serves location estimates over a newline-delimited wire protocol;
//! [`eval`] measures localization error over randomized trials.
//!
//! Everything is deterministic given an explicit seed, which keeps
//! experiments reproducible and the randomized test suites stable.

pub mod eval;
pub mod formats;
pub mod locator;
pub mod model;
pub mod net;
pub mod sim;

pub use model::{
    align_fingerprint, euclidean_distance, AccessPoint, Essid, Fingerprint, Mac, PositionEstimate,
    RadioMap, ScanMode, ScanObservation, ScanReading, RSSI_CEIL, RSSI_FLOOR,
};
pub use sim::{PathLossModel, Site};
