//! Client/server location service over a newline-delimited text protocol.
//!
//! Clients transmit their scan readings to the central server holding the
//! radio map; the server answers with a position estimate. One request line
//! yields exactly one response line, and a connection carries any number of
//! requests:
//!
//! ```text
//! -> LOCATE k=3 02:00:00:00:00:01=-67,02:00:00:00:00:02=-72.5
//! <- OK x=15.00 y=25.00 k=3
//! -> LOCATE k=0
//! <- ERR 400 bad-k
//! ```
//!
//! Coordinates render with exactly two decimals. Errors are
//! `ERR <code> <reason>` with code 400 for bad requests and 500 for
//! internal failures; a malformed line never closes the connection.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use thiserror::Error;

use crate::locator::{locate, LocateError, NNIndex};
use crate::model::{
    parse_finite, Essid, Mac, ModelError, RadioMap, ScanMode, ScanObservation, ScanReading,
    MAX_SCAN_READINGS,
};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("protocol decode error: {0}")]
    Decode(String),
    #[error("service error {code}: {reason}")]
    Service { code: u16, reason: String },
    #[error("no response before the connection closed")]
    NoResponse,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn decode_err(msg: impl Into<String>) -> NetError {
    NetError::Decode(msg.into())
}

/// A locate request as carried on the wire: k plus (MAC, RSSI) pairs.
/// ESSIDs and the acquisition mode stay client-side; the server only needs
/// signal identity and strength.
#[derive(Debug, Clone, PartialEq)]
pub struct LocateRequest {
    pub k: usize,
    pub readings: Vec<(Mac, f64)>,
}

impl LocateRequest {
    pub fn from_observation(obs: &ScanObservation, k: usize) -> Self {
        LocateRequest {
            k,
            readings: obs.readings().iter().map(|r| (r.mac, r.rssi)).collect(),
        }
    }

    /// Rebuilds an observation for the locate chain. The wire format drops
    /// ESSIDs, so readings come back hidden; alignment only looks at MACs.
    pub fn to_observation(&self) -> Result<ScanObservation, ModelError> {
        let readings = self
            .readings
            .iter()
            .map(|&(mac, rssi)| ScanReading {
                mac,
                essid: Essid::Hidden,
                rssi,
            })
            .collect();
        ScanObservation::new(readings, ScanMode::Passive)
    }
}

/// A response line: an estimate or a coded error.
#[derive(Debug, Clone, PartialEq)]
pub enum LocateResponse {
    Ok { x: f64, y: f64, k_used: usize },
    Err { code: u16, reason: String },
}

/// `LOCATE k=<k>[ <mac>=<rssi>[,<mac>=<rssi>]*]`
pub fn encode_request(req: &LocateRequest) -> String {
    let mut line = format!("LOCATE k={}", req.k);
    for (i, (mac, rssi)) in req.readings.iter().enumerate() {
        line.push(if i == 0 { ' ' } else { ',' });
        line.push_str(&format!("{mac}={rssi}"));
    }
    line
}

pub fn decode_request(line: &str) -> Result<LocateRequest, NetError> {
    let rest = line
        .strip_prefix("LOCATE k=")
        .ok_or_else(|| decode_err("request must start with LOCATE k="))?;
    let (k_text, pairs_text) = match rest.split_once(' ') {
        Some((k, pairs)) => (k, Some(pairs)),
        None => (rest, None),
    };
    if k_text.is_empty() || !k_text.bytes().all(|b| b.is_ascii_digit()) {
        return Err(decode_err(format!("bad k field {k_text:?}")));
    }
    let k: usize = k_text
        .parse()
        .map_err(|_| decode_err(format!("bad k field {k_text:?}")))?;

    let mut readings = Vec::new();
    if let Some(pairs_text) = pairs_text {
        if pairs_text.is_empty() {
            return Err(decode_err("trailing space without readings"));
        }
        for pair in pairs_text.split(',') {
            let (mac_text, rssi_text) = pair
                .split_once('=')
                .ok_or_else(|| decode_err(format!("bad reading {pair:?}")))?;
            let mac: Mac = mac_text
                .parse()
                .map_err(|e: ModelError| decode_err(e.to_string()))?;
            if readings.iter().any(|&(m, _)| m == mac) {
                return Err(decode_err(format!("duplicate MAC {mac}")));
            }
            let rssi = parse_finite(rssi_text)
                .ok_or_else(|| decode_err(format!("bad RSSI {rssi_text:?}")))?;
            readings.push((mac, rssi));
        }
        if readings.len() > MAX_SCAN_READINGS {
            return Err(decode_err(format!(
                "{} readings exceed the {MAX_SCAN_READINGS}-entry scan buffer",
                readings.len()
            )));
        }
    }
    Ok(LocateRequest { k, readings })
}

/// `OK x=<x> y=<y> k=<k_used>` or `ERR <code> <reason>`; coordinates render
/// with exactly two decimals.
pub fn encode_response(resp: &LocateResponse) -> String {
    match resp {
        LocateResponse::Ok { x, y, k_used } => format!("OK x={x:.2} y={y:.2} k={k_used}"),
        LocateResponse::Err { code, reason } => format!("ERR {code} {reason}"),
    }
}

pub fn decode_response(line: &str) -> Result<LocateResponse, NetError> {
    let tokens: Vec<&str> = line.split(' ').collect();
    match tokens.as_slice() {
        ["OK", x, y, k] => {
            let x = x
                .strip_prefix("x=")
                .and_then(parse_finite)
                .ok_or_else(|| decode_err(format!("bad x field {x:?}")))?;
            let y = y
                .strip_prefix("y=")
                .and_then(parse_finite)
                .ok_or_else(|| decode_err(format!("bad y field {y:?}")))?;
            let k_used = k
                .strip_prefix("k=")
                .and_then(|t| t.parse::<usize>().ok())
                .ok_or_else(|| decode_err(format!("bad k field {k:?}")))?;
            Ok(LocateResponse::Ok { x, y, k_used })
        }
        ["ERR", code, reason] => {
            let code = code
                .parse::<u16>()
                .map_err(|_| decode_err(format!("bad error code {code:?}")))?;
            if reason.is_empty() {
                return Err(decode_err("empty error reason"));
            }
            Ok(LocateResponse::Err {
                code,
                reason: (*reason).to_string(),
            })
        }
        _ => Err(decode_err(format!("unrecognized response line {line:?}"))),
    }
}

struct ServerState {
    map: RadioMap,
    index: NNIndex,
    epsilon: f64,
}

/// The running location service. Shuts down when told to (or on drop); the
/// bound address is available for clients immediately after [`Server::bind`]
/// returns.
pub struct Server {
    local_addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl Server {
    /// Binds the service to `addr` and starts answering. The radio map and
    /// its index are shared read-only across all connection threads.
    pub fn bind(map: RadioMap, addr: &str, epsilon: f64) -> Result<Server, NetError> {
        let listener = TcpListener::bind(addr)?;
        let local_addr = listener.local_addr()?;
        let state = Arc::new(ServerState {
            index: NNIndex::build(&map),
            map,
            epsilon,
        });
        let shutdown = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&shutdown);
        let accept_thread = thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(stream) => {
                        let state = Arc::clone(&state);
                        thread::spawn(move || handle_connection(stream, &state));
                    }
                    Err(_) => continue,
                }
            }
        });
        Ok(Server {
            local_addr,
            shutdown,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Blocks the calling thread for the life of the service.
    pub fn join(mut self) {
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }

    /// Stops accepting connections and reaps the accept loop.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(handle) = self.accept_thread.take() {
            self.shutdown.store(true, Ordering::SeqCst);
            // Wake the blocking accept with a throwaway connection.
            let _ = TcpStream::connect(self.local_addr);
            let _ = handle.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop();
    }
}

/// One request line in, exactly one response line out, for as long as the
/// client keeps the connection open. Malformed lines answer with an error
/// and the connection stays usable.
fn handle_connection(stream: TcpStream, state: &ServerState) {
    let mut reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    });
    let mut writer = stream;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) | Err(_) => return,
            Ok(_) => {}
        }
        let response = respond(state, &buf);
        if writer
            .write_all(format!("{}\n", encode_response(&response)).as_bytes())
            .is_err()
        {
            return;
        }
    }
}

fn respond(state: &ServerState, raw: &[u8]) -> LocateResponse {
    let err = |code: u16, reason: &str| LocateResponse::Err {
        code,
        reason: reason.to_string(),
    };
    let line = match std::str::from_utf8(raw) {
        Ok(s) => s.trim_end_matches(['\n', '\r']),
        Err(_) => return err(400, "parse"),
    };
    let request = match decode_request(line) {
        Ok(r) => r,
        Err(_) => return err(400, "parse"),
    };
    let obs = match request.to_observation() {
        Ok(o) => o,
        Err(_) => return err(400, "parse"),
    };
    match locate(&state.map, &state.index, &obs, request.k, state.epsilon) {
        Ok(est) => LocateResponse::Ok {
            x: est.pos.0,
            y: est.pos.1,
            k_used: est.k_used,
        },
        Err(LocateError::BadK) => err(400, "bad-k"),
        Err(_) => err(500, "internal"),
    }
}

/// A position estimate received over the wire. The protocol carries the
/// coordinates at two decimals and the k actually used; neighbor details
/// stay on the server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemoteEstimate {
    pub x: f64,
    pub y: f64,
    pub k_used: usize,
}

/// Sends one scan to the service at `addr` and returns its estimate.
///
/// The result is what a local [`locate`] on the server's map would produce,
/// rendered at the protocol's two-decimal precision.
pub fn request_locate(
    addr: impl ToSocketAddrs,
    obs: &ScanObservation,
    k: usize,
) -> Result<RemoteEstimate, NetError> {
    let mut stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    stream.set_write_timeout(Some(Duration::from_secs(10)))?;
    let line = encode_request(&LocateRequest::from_observation(obs, k));
    stream.write_all(format!("{line}\n").as_bytes())?;
    stream.flush()?;

    let mut reader = BufReader::new(stream);
    let mut response = String::new();
    if reader.read_line(&mut response)? == 0 {
        return Err(NetError::NoResponse);
    }
    match decode_response(response.trim_end_matches(['\n', '\r']))? {
        LocateResponse::Ok { x, y, k_used } => Ok(RemoteEstimate { x, y, k_used }),
        LocateResponse::Err { code, reason } => Err(NetError::Service { code, reason }),
    }
}
