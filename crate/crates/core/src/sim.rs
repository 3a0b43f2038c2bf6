//! Synthetic signal propagation: builds radio maps over a site model and
//! simulates passive/active 802.11 scans.
//!
//! Propagation follows the log-distance path-loss model
//! `rssi = p0 - 10 n log10(d / d0)` with optional i.i.d. Gaussian shadowing
//! in dB. Scans are pure functions of their inputs plus an explicit seed:
//! the same site, position, mode, model, and seed always reproduce a
//! bit-identical observation.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::model::{
    check_unique_macs, parse_finite, AccessPoint, Essid, Fingerprint, Mac, MapEntry, ModelError,
    RadioMap, ScanMode, ScanObservation, ScanReading, MAX_SCAN_READINGS, RSSI_CEIL, RSSI_FLOOR,
};

/// Errors from site construction, propagation, and scan simulation.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("point coincides with AP {0}: zero-distance singularity")]
    ZeroDistance(Mac),
    #[error("client position ({x}, {y}) outside site bounds")]
    OutOfBounds { x: f64, y: f64 },
    #[error("grid spacing {0} is not a positive finite number")]
    InvalidSpacing(f64),
    #[error("spacing {spacing} would generate about {points:.0} grid points")]
    GridTooFine { spacing: f64, points: f64 },
    #[error("invalid site: {0}")]
    InvalidSite(String),
    #[error("invalid path-loss model: {0}")]
    InvalidModel(String),
    #[error("site file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A rectangular site: floor dimensions, the AP installation, and the height
/// at which clients hold their radio.
#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    width: f64,
    depth: f64,
    client_height: f64,
    aps: Vec<AccessPoint>,
}

impl Site {
    pub fn new(
        width: f64,
        depth: f64,
        client_height: f64,
        aps: Vec<AccessPoint>,
    ) -> Result<Self, SimError> {
        if !(width.is_finite() && width > 0.0) || !(depth.is_finite() && depth > 0.0) {
            return Err(SimError::InvalidSite(format!(
                "dimensions must be positive, got {width} x {depth}"
            )));
        }
        if aps.is_empty() {
            return Err(SimError::InvalidSite("site has no access points".into()));
        }
        for ap in &aps {
            ap.validate()?;
            if ap.essid.is_empty() || ap.essid.contains(|c: char| c.is_whitespace() || c == '"') {
                return Err(SimError::InvalidSite(format!(
                    "ESSID {:?} must be a non-empty token without quotes",
                    ap.essid
                )));
            }
        }
        check_unique_macs(&aps)?;
        let min_z = aps.iter().map(|a| a.pos[2]).fold(f64::INFINITY, f64::min);
        if !(client_height.is_finite() && (0.0..min_z).contains(&client_height)) {
            return Err(SimError::InvalidSite(format!(
                "client height {client_height} must lie in [0, {min_z}) below every AP"
            )));
        }
        Ok(Site {
            width,
            depth,
            client_height,
            aps,
        })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    pub fn client_height(&self) -> f64 {
        self.client_height
    }

    pub fn aps(&self) -> &[AccessPoint] {
        &self.aps
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x.is_finite()
            && y.is_finite()
            && (0.0..=self.width).contains(&x)
            && (0.0..=self.depth).contains(&y)
    }
}

/// Log-distance path-loss parameters with log-normal shadowing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossModel {
    p0_dbm: f64,
    d0_m: f64,
    exponent: f64,
    shadowing_sigma_db: f64,
}

impl PathLossModel {
    pub fn new(
        p0_dbm: f64,
        d0_m: f64,
        exponent: f64,
        shadowing_sigma_db: f64,
    ) -> Result<Self, SimError> {
        if !p0_dbm.is_finite() {
            return Err(SimError::InvalidModel(format!("p0 {p0_dbm} not finite")));
        }
        if !(d0_m.is_finite() && d0_m > 0.0) {
            return Err(SimError::InvalidModel(format!(
                "reference distance {d0_m} must be positive"
            )));
        }
        if !(exponent.is_finite() && exponent > 0.0) {
            return Err(SimError::InvalidModel(format!(
                "path-loss exponent {exponent} must be positive"
            )));
        }
        if !(shadowing_sigma_db.is_finite() && shadowing_sigma_db >= 0.0) {
            return Err(SimError::InvalidModel(format!(
                "shadowing sigma {shadowing_sigma_db} must be non-negative"
            )));
        }
        Ok(PathLossModel {
            p0_dbm,
            d0_m,
            exponent,
            shadowing_sigma_db,
        })
    }

    /// Same model with a different shadowing standard deviation.
    pub fn with_sigma(self, shadowing_sigma_db: f64) -> Result<Self, SimError> {
        Self::new(self.p0_dbm, self.d0_m, self.exponent, shadowing_sigma_db)
    }

    pub fn p0_dbm(&self) -> f64 {
        self.p0_dbm
    }

    pub fn d0_m(&self) -> f64 {
        self.d0_m
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn shadowing_sigma_db(&self) -> f64 {
        self.shadowing_sigma_db
    }
}

impl Default for PathLossModel {
    /// Indoor defaults: -40 dBm at 1 m, exponent 3 (a thick metal roof is
    /// well above free space), 4 dB shadowing.
    fn default() -> Self {
        PathLossModel {
            p0_dbm: -40.0,
            d0_m: 1.0,
            exponent: 3.0,
            shadowing_sigma_db: 4.0,
        }
    }
}

/// Deterministic (noise-free) RSSI of `ap` received at `point`, clamped to
/// `[RSSI_FLOOR, RSSI_CEIL]`. Errors when `point` coincides with the AP.
pub fn path_loss_rssi(
    ap: &AccessPoint,
    point: [f64; 3],
    model: &PathLossModel,
) -> Result<f64, SimError> {
    let dx = point[0] - ap.pos[0];
    let dy = point[1] - ap.pos[1];
    let dz = point[2] - ap.pos[2];
    let dist = (dx * dx + dy * dy + dz * dz).sqrt();
    if dist == 0.0 {
        return Err(SimError::ZeroDistance(ap.mac));
    }
    let rssi = model.p0_dbm - 10.0 * model.exponent * (dist / model.d0_m).log10();
    Ok(rssi.clamp(RSSI_FLOOR, RSSI_CEIL))
}

/// Builds a radio map by sampling noise-free fingerprints on a regular grid.
///
/// Grid points sit at `(i*spacing, j*spacing)` for every i, j whose
/// coordinate stays within the site; `(0, 0)` always exists, so the result
/// has at least one entry. The roster order is the site AP order.
pub fn build_radio_map(
    site: &Site,
    spacing: f64,
    model: &PathLossModel,
) -> Result<RadioMap, SimError> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(SimError::InvalidSpacing(spacing));
    }
    let points = ((site.width / spacing).floor() + 1.0) * ((site.depth / spacing).floor() + 1.0);
    if points > 5e7 {
        return Err(SimError::GridTooFine { spacing, points });
    }
    let mut entries = Vec::new();
    let mut i = 0u32;
    while f64::from(i) * spacing <= site.width {
        let x = f64::from(i) * spacing;
        let mut j = 0u32;
        while f64::from(j) * spacing <= site.depth {
            let y = f64::from(j) * spacing;
            let point = [x, y, site.client_height];
            let rssi: Vec<f64> = site
                .aps
                .iter()
                .map(|ap| path_loss_rssi(ap, point, model))
                .collect::<Result<_, _>>()?;
            entries.push(MapEntry {
                pos: (x, y),
                fingerprint: Fingerprint::new(rssi)?,
            });
            j += 1;
        }
        i += 1;
    }
    Ok(RadioMap::new(site.aps.clone(), spacing, entries)?)
}

/// Simulates one 802.11 scan at `client_pos`.
///
/// Each AP's reading is its path-loss RSSI plus Gaussian shadowing from a
/// generator seeded by `seed`, clamped to `[RSSI_FLOOR, RSSI_CEIL]`.
/// Readings whose pre-clamp value falls below the floor vanish (receiver
/// sensitivity). Active probing cannot see cloaked APs at all; passive
/// monitoring reports them with a hidden ESSID. When more than 64 readings
/// survive, the 64 strongest are kept, ties broken by roster order.
pub fn simulate_scan(
    site: &Site,
    client_pos: (f64, f64),
    mode: ScanMode,
    model: &PathLossModel,
    seed: u64,
) -> Result<ScanObservation, SimError> {
    let (x, y) = client_pos;
    if !site.contains(x, y) {
        return Err(SimError::OutOfBounds { x, y });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shadowing =
        Normal::new(0.0, model.shadowing_sigma_db).expect("sigma validated at model construction");
    let point = [x, y, site.client_height];

    let mut survivors: Vec<(usize, f64)> = Vec::new();
    for (i, ap) in site.aps.iter().enumerate() {
        // Draw noise for every AP regardless of mode so passive and active
        // scans share per-AP noise streams for the same seed.
        let noise = shadowing.sample(&mut rng);
        let pre_clamp = path_loss_rssi(ap, point, model)? + noise;
        if mode == ScanMode::Active && ap.cloaked {
            continue;
        }
        if pre_clamp < RSSI_FLOOR {
            continue;
        }
        survivors.push((i, pre_clamp.clamp(RSSI_FLOOR, RSSI_CEIL)));
    }

    if survivors.len() > MAX_SCAN_READINGS {
        // Stable sort keeps roster order among equal strengths.
        survivors.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        survivors.truncate(MAX_SCAN_READINGS);
        survivors.sort_by_key(|&(i, _)| i);
    }

    let readings = survivors
        .into_iter()
        .map(|(i, rssi)| {
            let ap = &site.aps[i];
            let essid = if ap.cloaked {
                Essid::Hidden
            } else {
                Essid::Named(ap.essid.clone())
            };
            ScanReading {
                mac: ap.mac,
                essid,
                rssi,
            }
        })
        .collect();
    Ok(ScanObservation::new(readings, mode)
        .expect("simulator output satisfies observation invariants"))
}

/// The UQ Centre hall: 30.5 x 52 m under a thick metal roof, six 802.11b
/// APs mounted 10.75 m above the floor on a symmetric 2 x 3 grid.
pub fn uq_centre_preset() -> Site {
    let xs = [7.625, 22.875];
    let ys = [13.0, 26.0, 39.0];
    let mut aps = Vec::with_capacity(6);
    let mut n = 0u8;
    for &x in &xs {
        for &y in &ys {
            n += 1;
            aps.push(AccessPoint::new(
                Mac::new([0x02, 0, 0, 0, 0, n]),
                format!("UQC-{n}"),
                false,
                [x, y, 10.75],
            ));
        }
    }
    Site::new(30.5, 52.0, 1.0, aps).expect("preset is a valid site")
}

/// Parses the line-oriented site format:
///
/// ```text
/// SITE <width> <depth> <client_height>
/// AP <mac> <essid> <cloaked:0|1> <x> <y> <z>
/// ```
///
/// `#` starts a comment; blank lines are skipped.
pub fn parse_site_text(text: &str) -> Result<Site, SimError> {
    let mut header: Option<(f64, f64, f64)> = None;
    let mut aps = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| SimError::Parse { line: line_no, msg };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "SITE" => {
                if header.is_some() {
                    return Err(err("duplicate SITE header".into()));
                }
                if tokens.len() != 4 {
                    return Err(err(format!(
                        "expected SITE <width> <depth> <client_height>, got {} fields",
                        tokens.len()
                    )));
                }
                let mut nums = [0.0f64; 3];
                for (slot, tok) in nums.iter_mut().zip(&tokens[1..]) {
                    *slot = parse_finite(tok).ok_or_else(|| err(format!("bad number {tok:?}")))?;
                }
                header = Some((nums[0], nums[1], nums[2]));
            }
            "AP" => {
                if header.is_none() {
                    return Err(err("AP line before SITE header".into()));
                }
                if tokens.len() != 7 {
                    return Err(err(format!(
                        "expected AP <mac> <essid> <cloaked> <x> <y> <z>, got {} fields",
                        tokens.len()
                    )));
                }
                let mac: Mac = tokens[1]
                    .parse()
                    .map_err(|e: ModelError| err(e.to_string()))?;
                let cloaked = match tokens[3] {
                    "0" => false,
                    "1" => true,
                    other => {
                        return Err(err(format!("cloaked flag must be 0 or 1, got {other:?}")))
                    }
                };
                let mut pos = [0.0f64; 3];
                for (slot, tok) in pos.iter_mut().zip(&tokens[4..]) {
                    *slot =
                        parse_finite(tok).ok_or_else(|| err(format!("bad coordinate {tok:?}")))?;
                }
                aps.push(AccessPoint::new(mac, tokens[2], cloaked, pos));
            }
            other => return Err(err(format!("unknown record {other:?}"))),
        }
    }
    let (width, depth, client_height) = header.ok_or(SimError::Parse {
        line: text.lines().count() + 1,
        msg: "missing SITE header".into(),
    })?;
    Site::new(width, depth, client_height, aps)
}

pub fn load_site(path: impl AsRef<Path>) -> Result<Site, SimError> {
    parse_site_text(&fs::read_to_string(path)?)
}
