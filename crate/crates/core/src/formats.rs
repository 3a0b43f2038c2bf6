//! Bit-exact text formats: the scan-record format produced by wireless scan
//! tools and the radio-map persistence format.
//!
//! Scan text is a sequence of cell blocks:
//!
//! ```text
//! CELL 1
//!   MAC: 02:00:00:00:00:01
//!   ESSID: "UQC-1"
//!   SIGNAL: -67 dBm
//! ```
//!
//! `ESSID: hidden` (unquoted) marks a cloaked network observed passively.
//! At most 64 cells are accepted, mirroring the scan tool's buffer.
//!
//! Radio maps persist as a header line `RADIOMAP v1 spacing=<m>`, roster
//! lines `AP <i> <mac> <essid> <x> <y> <z>`, and entry lines
//! `PT <x> <y> <rssi_0> ... <rssi_{D-1}>` with dBm values rendered at two
//! decimals. `#` starts a comment. Both formats accept CRLF or LF input;
//! serializers emit LF.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::model::{
    parse_finite, Essid, Fingerprint, Mac, MapEntry, ModelError, RadioMap, ScanMode,
    ScanObservation, ScanReading, MAX_SCAN_READINGS,
};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cannot serialize: {0}")]
    Unserializable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        msg: msg.into(),
    }
}

// ─── Scan text ───────────────────────────────────────────────────────────────

/// Renders a scan observation in the scan text format, cells numbered from 1
/// in reading order. The acquisition mode is not part of the format.
pub fn serialize_scan(obs: &ScanObservation) -> String {
    let mut out = String::new();
    for (i, r) in obs.readings().iter().enumerate() {
        writeln!(out, "CELL {}", i + 1).unwrap();
        writeln!(out, "  MAC: {}", r.mac).unwrap();
        match &r.essid {
            Essid::Named(name) => writeln!(out, "  ESSID: \"{name}\"").unwrap(),
            Essid::Hidden => writeln!(out, "  ESSID: hidden").unwrap(),
        }
        writeln!(out, "  SIGNAL: {} dBm", r.rssi).unwrap();
    }
    out
}

/// Parses scan text into an observation.
///
/// The format does not carry the acquisition mode, so parsed observations
/// report [`ScanMode::Passive`], the mode under which hidden entries can
/// legitimately appear. Zero cells yield a valid empty observation.
pub fn parse_scan_text(text: &str) -> Result<ScanObservation, FormatError> {
    let mut readings: Vec<ScanReading> = Vec::new();
    let mut lines = text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());

    while let Some((idx, line)) = lines.next() {
        let line_no = idx + 1;
        let cell_no = line
            .strip_prefix("CELL ")
            .and_then(|rest| rest.parse::<usize>().ok())
            .ok_or_else(|| parse_err(line_no, format!("expected CELL <n>, got {line:?}")))?;
        if cell_no != readings.len() + 1 {
            return Err(parse_err(
                line_no,
                format!("expected cell {}, got cell {cell_no}", readings.len() + 1),
            ));
        }
        if cell_no > MAX_SCAN_READINGS {
            return Err(parse_err(
                line_no,
                format!("cell {cell_no} exceeds the {MAX_SCAN_READINGS}-entry scan buffer"),
            ));
        }

        let (mac_line_no, mac_line) = lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| parse_err(line_no, "unexpected end of cell block"))?;
        let mac_text = mac_line.strip_prefix("  MAC: ").ok_or_else(|| {
            parse_err(
                mac_line_no,
                format!("expected `  MAC: ...`, got {mac_line:?}"),
            )
        })?;
        let mac: Mac = mac_text
            .parse()
            .map_err(|e: ModelError| parse_err(mac_line_no, e.to_string()))?;
        if readings.iter().any(|r| r.mac == mac) {
            return Err(parse_err(mac_line_no, format!("duplicate MAC {mac}")));
        }

        let (essid_line_no, essid_line) = lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| parse_err(mac_line_no, "unexpected end of cell block"))?;
        let essid_text = essid_line.strip_prefix("  ESSID: ").ok_or_else(|| {
            parse_err(
                essid_line_no,
                format!("expected `  ESSID: ...`, got {essid_line:?}"),
            )
        })?;
        let essid = if essid_text == "hidden" {
            Essid::Hidden
        } else {
            let inner = essid_text
                .strip_prefix('"')
                .and_then(|s| s.strip_suffix('"'))
                .ok_or_else(|| {
                    parse_err(
                        essid_line_no,
                        "ESSID must be quoted text or the word hidden",
                    )
                })?;
            if inner.contains('"') {
                return Err(parse_err(essid_line_no, "ESSID may not contain a quote"));
            }
            Essid::Named(inner.to_string())
        };

        let (sig_line_no, sig_line) = lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| parse_err(essid_line_no, "unexpected end of cell block"))?;
        let sig_text = sig_line
            .strip_prefix("  SIGNAL: ")
            .and_then(|s| s.strip_suffix(" dBm"))
            .ok_or_else(|| {
                parse_err(
                    sig_line_no,
                    format!("expected `  SIGNAL: <number> dBm`, got {sig_line:?}"),
                )
            })?;
        let rssi = parse_finite(sig_text)
            .ok_or_else(|| parse_err(sig_line_no, format!("bad signal value {sig_text:?}")))?;

        readings.push(ScanReading { mac, essid, rssi });
    }

    ScanObservation::new(readings, ScanMode::Passive)
        .map_err(|e| parse_err(text.lines().count(), e.to_string()))
}

pub fn save_scan(obs: &ScanObservation, path: impl AsRef<Path>) -> Result<(), FormatError> {
    fs::write(path, serialize_scan(obs))?;
    Ok(())
}

pub fn load_scan(path: impl AsRef<Path>) -> Result<ScanObservation, FormatError> {
    parse_scan_text(&fs::read_to_string(path)?)
}

// ─── Radio map ───────────────────────────────────────────────────────────────

/// Renders a radio map in the persistence format, dBm values at two
/// decimals. Roster ESSIDs must be single tokens without quotes; the format
/// is whitespace-delimited.
pub fn radio_map_to_string(map: &RadioMap) -> Result<String, FormatError> {
    let mut out = String::new();
    writeln!(out, "RADIOMAP v1 spacing={}", map.spacing()).unwrap();
    for (i, ap) in map.roster().iter().enumerate() {
        if ap.essid.is_empty() || ap.essid.contains(|c: char| c.is_whitespace() || c == '"') {
            return Err(FormatError::Unserializable(format!(
                "ESSID {:?} is not a single unquoted token",
                ap.essid
            )));
        }
        writeln!(
            out,
            "AP {i} {} {} {} {} {}",
            ap.mac, ap.essid, ap.pos[0], ap.pos[1], ap.pos[2]
        )
        .unwrap();
    }
    for e in map.entries() {
        write!(out, "PT {} {}", e.pos.0, e.pos.1).unwrap();
        for v in e.fingerprint.values() {
            write!(out, " {v:.2}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses the radio map format. Load errors carry the offending line
/// number. The format does not persist cloak flags; loaded rosters report
/// every AP as broadcasting.
pub fn parse_radio_map(text: &str) -> Result<RadioMap, FormatError> {
    let mut spacing: Option<f64> = None;
    let mut roster: Vec<crate::model::AccessPoint> = Vec::new();
    let mut entries: Vec<MapEntry> = Vec::new();
    let mut seen_pos: std::collections::HashSet<(u64, u64)> = std::collections::HashSet::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = raw
            .split('#')
            .next()
            .unwrap_or("")
            .trim_end_matches('\r')
            .trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "RADIOMAP" => {
                if spacing.is_some() {
                    return Err(parse_err(line_no, "duplicate RADIOMAP header"));
                }
                if tokens.len() != 3 || tokens[1] != "v1" {
                    return Err(parse_err(line_no, "expected RADIOMAP v1 spacing=<m>"));
                }
                let val = tokens[2]
                    .strip_prefix("spacing=")
                    .and_then(parse_finite)
                    .ok_or_else(|| {
                        parse_err(line_no, format!("bad spacing field {:?}", tokens[2]))
                    })?;
                spacing = Some(val);
            }
            "AP" => {
                if spacing.is_none() {
                    return Err(parse_err(line_no, "AP line before RADIOMAP header"));
                }
                if !entries.is_empty() {
                    return Err(parse_err(line_no, "AP line after the first PT entry"));
                }
                if tokens.len() != 7 {
                    return Err(parse_err(
                        line_no,
                        format!(
                            "expected AP <i> <mac> <essid> <x> <y> <z>, got {} fields",
                            tokens.len()
                        ),
                    ));
                }
                let i: usize = tokens[1]
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("bad AP index {:?}", tokens[1])))?;
                if i != roster.len() {
                    return Err(parse_err(
                        line_no,
                        format!("AP index {i} out of order, expected {}", roster.len()),
                    ));
                }
                let mac: Mac = tokens[2]
                    .parse()
                    .map_err(|e: ModelError| parse_err(line_no, e.to_string()))?;
                let mut pos = [0.0f64; 3];
                for (slot, tok) in pos.iter_mut().zip(&tokens[4..]) {
                    *slot = parse_finite(tok)
                        .ok_or_else(|| parse_err(line_no, format!("bad coordinate {tok:?}")))?;
                }
                roster.push(crate::model::AccessPoint::new(mac, tokens[3], false, pos));
            }
            "PT" => {
                if roster.is_empty() {
                    return Err(parse_err(line_no, "PT line before any AP line"));
                }
                let expected = 3 + roster.len();
                if tokens.len() != expected {
                    return Err(parse_err(
                        line_no,
                        format!(
                            "entry row has {} values, expected {} for a {}-AP roster",
                            tokens.len().saturating_sub(3),
                            roster.len(),
                            roster.len()
                        ),
                    ));
                }
                let x = parse_finite(tokens[1])
                    .ok_or_else(|| parse_err(line_no, format!("bad coordinate {:?}", tokens[1])))?;
                let y = parse_finite(tokens[2])
                    .ok_or_else(|| parse_err(line_no, format!("bad coordinate {:?}", tokens[2])))?;
                if !seen_pos.insert((x.to_bits(), y.to_bits())) {
                    return Err(parse_err(
                        line_no,
                        format!("duplicate entry position ({x}, {y})"),
                    ));
                }
                let rssi: Vec<f64> = tokens[3..]
                    .iter()
                    .map(|tok| {
                        parse_finite(tok)
                            .ok_or_else(|| parse_err(line_no, format!("bad RSSI value {tok:?}")))
                    })
                    .collect::<Result<_, _>>()?;
                let fp = Fingerprint::new(rssi).map_err(|e| parse_err(line_no, e.to_string()))?;
                entries.push(MapEntry {
                    pos: (x, y),
                    fingerprint: fp,
                });
            }
            other => return Err(parse_err(line_no, format!("unknown record {other:?}"))),
        }
    }

    let spacing = spacing.ok_or_else(|| parse_err(last_line + 1, "missing RADIOMAP header"))?;
    RadioMap::new(roster, spacing, entries).map_err(|e| parse_err(last_line, e.to_string()))
}

pub fn save_radio_map(map: &RadioMap, path: impl AsRef<Path>) -> Result<(), FormatError> {
    fs::write(path, radio_map_to_string(map)?)?;
    Ok(())
}

pub fn load_radio_map(path: impl AsRef<Path>) -> Result<RadioMap, FormatError> {
    parse_radio_map(&fs::read_to_string(path)?)
}
