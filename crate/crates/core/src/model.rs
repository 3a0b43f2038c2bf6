//! Domain types shared by every module: access points, fingerprints, radio
//! maps, scan observations, and the Euclidean signal-space metric.
//!
//! A fingerprint is an ordered vector of RSSI values (dBm), one slot per
//! access point of a fixed roster. Scans are unordered (MAC, ESSID, RSSI)
//! readings; [`align_fingerprint`] bridges the two by filling roster slots
//! from readings and padding misses with [`RSSI_FLOOR`].
//!
//! All types are immutable after construction and hold no interior
//! mutability, so they can be shared freely across threads.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// RSSI reported for an access point that was not heard, and the lower
/// clamp for every stored value (dBm). Values at the floor mean "not heard".
pub const RSSI_FLOOR: f64 = -100.0;

/// Upper clamp for stored RSSI values (dBm); real 802.11b hardware never
/// reports hotter.
pub const RSSI_CEIL: f64 = -10.0;

/// Errors from domain-type construction and the signal-space metric.
#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid MAC address {0:?}: expected 17 chars of uppercase colon-separated hex pairs")]
    InvalidMac(String),
    #[error("RSSI {0} outside [{RSSI_FLOOR}, {RSSI_CEIL}] dBm")]
    RssiOutOfRange(f64),
    #[error("RSSI value is not finite")]
    NonFiniteRssi,
    #[error("fingerprint dimension mismatch: {left} vs {right} (incompatible rosters)")]
    DimensionMismatch { left: usize, right: usize },
    #[error("duplicate MAC {0} in roster or scan")]
    DuplicateMac(Mac),
    #[error("scan holds {0} readings, more than the 64-entry buffer")]
    TooManyReadings(usize),
    #[error("invalid ESSID {0:?}: double quotes are not representable")]
    InvalidEssid(String),
    #[error("access point {mac} has an invalid position: {reason}")]
    InvalidAccessPoint { mac: Mac, reason: &'static str },
    #[error("radio map roster is empty")]
    EmptyRoster,
    #[error("radio map has no entries")]
    EmptyMap,
    #[error("duplicate radio map entry position ({0}, {1})")]
    DuplicatePosition(f64, f64),
    #[error("grid spacing {0} is not a positive finite number")]
    InvalidSpacing(f64),
    #[error("entry position is not finite")]
    NonFinitePosition,
}

/// A 48-bit 802.11 MAC address. Rendered as six uppercase hex pairs
/// separated by colons, exactly 17 characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mac([u8; 6]);

impl Mac {
    pub fn new(octets: [u8; 6]) -> Self {
        Mac(octets)
    }

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }
}

impl fmt::Display for Mac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = &self.0;
        write!(
            f,
            "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl FromStr for Mac {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::InvalidMac(s.to_string());
        if s.len() != 17 {
            return Err(bad());
        }
        let bytes = s.as_bytes();
        let mut octets = [0u8; 6];
        for (i, chunk) in bytes.chunks(3).enumerate() {
            if chunk.len() == 3 && chunk[2] != b':' {
                return Err(bad());
            }
            let hi = hex_val(chunk[0]).ok_or_else(bad)?;
            let lo = hex_val(chunk[1]).ok_or_else(bad)?;
            octets[i] = hi << 4 | lo;
        }
        Ok(Mac(octets))
    }
}

/// Uppercase-only hex digit; the textual MAC form is strict.
fn hex_val(b: u8) -> Option<u8> {
    match b {
        b'0'..=b'9' => Some(b - b'0'),
        b'A'..=b'F' => Some(b - b'A' + 10),
        _ => None,
    }
}

/// An 802.11 access point: identity plus the 3-D position of its radio.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessPoint {
    pub mac: Mac,
    pub essid: String,
    /// Configured not to advertise its ESSID; invisible to active probing,
    /// still observable via passive beacon capture.
    pub cloaked: bool,
    /// Transmitter position (x, y, z) in metres; z is height above floor.
    pub pos: [f64; 3],
}

impl AccessPoint {
    pub fn new(mac: Mac, essid: impl Into<String>, cloaked: bool, pos: [f64; 3]) -> Self {
        AccessPoint {
            mac,
            essid: essid.into(),
            cloaked,
            pos,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), ModelError> {
        if !self.pos.iter().all(|c| c.is_finite()) {
            return Err(ModelError::InvalidAccessPoint {
                mac: self.mac,
                reason: "coordinates must be finite",
            });
        }
        if self.pos[2] < 0.0 {
            return Err(ModelError::InvalidAccessPoint {
                mac: self.mac,
                reason: "height must be non-negative",
            });
        }
        Ok(())
    }
}

/// Parses a token as a finite f64; text formats reject NaN and infinities.
pub(crate) fn parse_finite(tok: &str) -> Option<f64> {
    tok.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Checks MAC uniqueness across a roster or site AP list.
pub(crate) fn check_unique_macs(aps: &[AccessPoint]) -> Result<(), ModelError> {
    let mut seen = HashSet::with_capacity(aps.len());
    for ap in aps {
        if !seen.insert(ap.mac) {
            return Err(ModelError::DuplicateMac(ap.mac));
        }
    }
    Ok(())
}

/// An ordered RSSI vector (dBm) aligned to a fixed AP roster.
///
/// Every value lies in `[RSSI_FLOOR, RSSI_CEIL]`; a slot at exactly
/// [`RSSI_FLOOR`] means the roster AP was not heard.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    rssi: Vec<f64>,
}

impl Fingerprint {
    /// Builds a fingerprint from raw dBm values, rejecting anything outside
    /// the representable range.
    pub fn new(rssi: Vec<f64>) -> Result<Self, ModelError> {
        for &v in &rssi {
            if !v.is_finite() {
                return Err(ModelError::NonFiniteRssi);
            }
            if !(RSSI_FLOOR..=RSSI_CEIL).contains(&v) {
                return Err(ModelError::RssiOutOfRange(v));
            }
        }
        Ok(Fingerprint { rssi })
    }

    /// Builds a fingerprint by clamping each value into
    /// `[RSSI_FLOOR, RSSI_CEIL]`. Inputs must be finite.
    pub fn clamped(rssi: impl IntoIterator<Item = f64>) -> Self {
        Fingerprint {
            rssi: rssi
                .into_iter()
                .map(|v| v.clamp(RSSI_FLOOR, RSSI_CEIL))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.rssi.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.rssi
    }
}

/// Squared Euclidean distance between two equal-length slices, accumulated
/// in index order. Both the brute-force search and the kd-tree call this,
/// so their distances are bit-identical.
pub(crate) fn dist2_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        sum += d * d;
    }
    sum
}

/// Squared Euclidean distance between two fingerprints.
pub fn squared_distance(a: &Fingerprint, b: &Fingerprint) -> Result<f64, ModelError> {
    if a.dim() != b.dim() {
        return Err(ModelError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(dist2_slices(a.values(), b.values()))
}

/// Euclidean distance between two fingerprints in signal space: the lower
/// the distance, the higher the similarity.
pub fn euclidean_distance(a: &Fingerprint, b: &Fingerprint) -> Result<f64, ModelError> {
    squared_distance(a, b).map(f64::sqrt)
}

/// How a scan was acquired. Passive capture sees beacon frames from every
/// station including cloaked ones; active probing only hears probe
/// responses, which cloaked networks never send.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMode {
    Passive,
    Active,
}

/// The ESSID field of one scan reading. Cloaked networks observed passively
/// report `Hidden`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Essid {
    Named(String),
    Hidden,
}

impl Essid {
    pub fn named(s: impl Into<String>) -> Self {
        Essid::Named(s.into())
    }
}

/// One (MAC, ESSID, RSSI) reading from a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanReading {
    pub mac: Mac,
    pub essid: Essid,
    pub rssi: f64,
}

/// The unordered set of readings produced by one 802.11 scan.
///
/// Holds at most 64 readings (the scan tool's buffer size), with no
/// duplicate MACs and finite RSSI values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanObservation {
    readings: Vec<ScanReading>,
    mode: ScanMode,
}

/// Scan tools buffer at most this many AP entries per scan.
pub const MAX_SCAN_READINGS: usize = 64;

impl ScanObservation {
    pub fn new(readings: Vec<ScanReading>, mode: ScanMode) -> Result<Self, ModelError> {
        if readings.len() > MAX_SCAN_READINGS {
            return Err(ModelError::TooManyReadings(readings.len()));
        }
        let mut seen = HashSet::with_capacity(readings.len());
        for r in &readings {
            if !r.rssi.is_finite() {
                return Err(ModelError::NonFiniteRssi);
            }
            if let Essid::Named(name) = &r.essid {
                if name.contains('"') {
                    return Err(ModelError::InvalidEssid(name.clone()));
                }
            }
            if !seen.insert(r.mac) {
                return Err(ModelError::DuplicateMac(r.mac));
            }
        }
        Ok(ScanObservation { readings, mode })
    }

    pub fn empty(mode: ScanMode) -> Self {
        ScanObservation {
            readings: Vec::new(),
            mode,
        }
    }

    pub fn readings(&self) -> &[ScanReading] {
        &self.readings
    }

    pub fn mode(&self) -> ScanMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }
}

/// One radio-map entry: a grid position and the fingerprint recorded there.
#[derive(Debug, Clone, PartialEq)]
pub struct MapEntry {
    pub pos: (f64, f64),
    pub fingerprint: Fingerprint,
}

/// The example database: an AP roster plus (grid position, fingerprint)
/// entries collected a constant distance apart.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioMap {
    roster: Vec<AccessPoint>,
    spacing: f64,
    entries: Vec<MapEntry>,
}

impl RadioMap {
    pub fn new(
        roster: Vec<AccessPoint>,
        spacing: f64,
        entries: Vec<MapEntry>,
    ) -> Result<Self, ModelError> {
        if roster.is_empty() {
            return Err(ModelError::EmptyRoster);
        }
        if entries.is_empty() {
            return Err(ModelError::EmptyMap);
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(ModelError::InvalidSpacing(spacing));
        }
        for ap in &roster {
            ap.validate()?;
        }
        check_unique_macs(&roster)?;
        let dim = roster.len();
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.fingerprint.dim() != dim {
                return Err(ModelError::DimensionMismatch {
                    left: dim,
                    right: e.fingerprint.dim(),
                });
            }
            if !(e.pos.0.is_finite() && e.pos.1.is_finite()) {
                return Err(ModelError::NonFinitePosition);
            }
            if !seen.insert((e.pos.0.to_bits(), e.pos.1.to_bits())) {
                return Err(ModelError::DuplicatePosition(e.pos.0, e.pos.1));
            }
        }
        Ok(RadioMap {
            roster,
            spacing,
            entries,
        })
    }

    pub fn roster(&self) -> &[AccessPoint] {
        &self.roster
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn entries(&self) -> &[MapEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fingerprint dimension, equal to the roster size.
    pub fn dim(&self) -> usize {
        self.roster.len()
    }
}

/// An estimated client position with the neighbor evidence behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionEstimate {
    /// Estimated (x, y) in metres.
    pub pos: (f64, f64),
    /// The neighbors averaged into the estimate, as (entry index, signal
    /// distance), sorted by ascending distance.
    pub neighbors: Vec<(usize, f64)>,
    /// Number of neighbors actually used (k after clamping to map size).
    pub k_used: usize,
}

/// Converts a scan observation into a fingerprint aligned to `roster`.
///
/// Slot `i` holds the reading for `roster[i].mac` clamped into
/// `[RSSI_FLOOR, RSSI_CEIL]`, or exactly [`RSSI_FLOOR`] when that AP was not
/// heard. Readings for MACs outside the roster are ignored; foreign networks
/// show up in real scans all the time.
pub fn align_fingerprint(obs: &ScanObservation, roster: &[AccessPoint]) -> Fingerprint {
    Fingerprint::clamped(roster.iter().map(|ap| {
        obs.readings
            .iter()
            .find(|r| r.mac == ap.mac)
            .map_or(RSSI_FLOOR, |r| r.rssi)
    }))
}
