//! Message schema shared with UI clients.
//!
//! Text frames carry JSON objects tagged by `type`, each with the schema
//! version and a simulation `stamp`. Grid patches travel as binary frames;
//! see [`encode_grid_patch`] for the layout.

use ctxmap_core::geometry::Pose2;
use ctxmap_core::mapping::{CellRect, CellState, GridPatch, GridUpdate};
use ctxmap_core::slam::TrackingState;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

pub const PATCH_MAGIC: [u8; 4] = *b"CMGP";
pub const PATCH_FORMAT: u8 = 1;
/// Bytes before the first run.
pub const PATCH_HEADER_LEN: usize = 4 + 1 + 1 + 8 + 8 + 24 + 24;

const FLAG_SNAPSHOT: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMsg {
    pub schema: u32,
    pub stamp: f64,
    pub session: u64,
    pub tracking: TrackingState,
    pub kill: bool,
    /// This client holds the driver token.
    pub driver: bool,
    /// Some client holds the driver token.
    pub driver_taken: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notice: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseMsg {
    pub schema: u32,
    pub stamp: f64,
    pub truth: Pose2,
    /// Latest scaled odometry pose, if any has been published.
    pub estimate: Option<Pose2>,
    pub scale_valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryThumbnailMsg {
    pub schema: u32,
    pub stamp: f64,
    /// Obstacle points `(lateral, forward)` in metres, robot frame.
    pub obstacles: Vec<[f64; 2]>,
    pub filtered: u32,
    pub clear: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTickMsg {
    pub schema: u32,
    pub stamp: f64,
    pub tick: u64,
    pub map_epoch: u64,
    pub map_width: u32,
    pub map_height: u32,
    pub v: f64,
    pub w: f64,
    pub clamped: bool,
    pub killed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateMsg),
    Pose(PoseMsg),
    BoundaryThumbnail(BoundaryThumbnailMsg),
    ReportTick(ReportTickMsg),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionAction {
    Acquire,
    Release,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    CmdVel { schema: u32, stamp: f64, v: f64, w: f64 },
    Kill { schema: u32, stamp: f64, engage: bool },
    SessionControl { schema: u32, stamp: f64, action: SessionAction },
}

impl ClientMessage {
    pub fn schema(&self) -> u32 {
        match self {
            ClientMessage::CmdVel { schema, .. }
            | ClientMessage::Kill { schema, .. }
            | ClientMessage::SessionControl { schema, .. } => *schema,
        }
    }

    pub fn parse(text: &str) -> Result<ClientMessage, WireError> {
        let m: ClientMessage = serde_json::from_str(text).map_err(|e| WireError::Json(e.to_string()))?;
        if m.schema() != SCHEMA_VERSION {
            return Err(WireError::Schema(m.schema()));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Json(String),
    #[error("unsupported schema version {0}")]
    Schema(u32),
    #[error("patch frame too short")]
    Short,
    #[error("bad patch magic or format")]
    Magic,
    #[error("invalid cell state {0}")]
    State(u8),
    #[error("runs cover {got} cells, rect has {expected}")]
    RunTotal { expected: usize, got: usize },
    #[error("zero-length run")]
    EmptyRun,
    #[error("varint overflow")]
    Varint,
}

/// Decoded binary grid frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WirePatch {
    /// Bit pattern of the simulation stamp.
    pub stamp_bits: u64,
    pub snapshot: bool,
    pub patch: GridPatch,
}

impl WirePatch {
    pub fn stamp(&self) -> f64 {
        f64::from_bits(self.stamp_bits)
    }

    pub fn into_update(self) -> GridUpdate {
        if self.snapshot {
            GridUpdate::Snapshot(self.patch)
        } else {
            GridUpdate::Patch(self.patch)
        }
    }
}

fn put_rect(out: &mut Vec<u8>, r: &CellRect) {
    out.extend_from_slice(&r.x.to_le_bytes());
    out.extend_from_slice(&r.y.to_le_bytes());
    out.extend_from_slice(&r.width.to_le_bytes());
    out.extend_from_slice(&r.height.to_le_bytes());
}

fn put_varint(out: &mut Vec<u8>, mut n: u64) {
    while n >= 0x80 {
        out.push((n as u8) | 0x80);
        n >>= 7;
    }
    out.push(n as u8);
}

/// Run-length encodes cells as `(state, varint length)` pairs.
pub fn encode_runs(cells: &[CellState]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < cells.len() {
        let s = cells[i];
        let mut j = i + 1;
        while j < cells.len() && cells[j] == s {
            j += 1;
        }
        out.push(s.code());
        put_varint(&mut out, (j - i) as u64);
        i = j;
    }
    out
}

/// Binary frame, little-endian:
///
/// | bytes | field |
/// |---|---|
/// | 4 | magic `CMGP` |
/// | 1 | format version |
/// | 1 | flags, bit 0 set for a full snapshot |
/// | 8 | epoch, u64 |
/// | 8 | stamp, f64 |
/// | 24 | extent: x i64, y i64, width u32, height u32 |
/// | 24 | rect, same layout |
/// | .. | runs of `(state u8, length LEB128)` covering `rect` row-major from the south row |
///
/// States are 0 unknown, 1 free, 2 occupied.
pub fn encode_grid_patch(patch: &GridPatch, stamp: f64, snapshot: bool) -> Vec<u8> {
    let mut out = Vec::with_capacity(PATCH_HEADER_LEN + 16);
    out.extend_from_slice(&PATCH_MAGIC);
    out.push(PATCH_FORMAT);
    out.push(if snapshot { FLAG_SNAPSHOT } else { 0 });
    out.extend_from_slice(&patch.epoch.to_le_bytes());
    out.extend_from_slice(&stamp.to_le_bytes());
    put_rect(&mut out, &patch.extent);
    put_rect(&mut out, &patch.rect);
    out.extend_from_slice(&encode_runs(&patch.cells));
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        if self.buf.len() < N {
            return Err(WireError::Short);
        }
        let (head, rest) = self.buf.split_at(N);
        self.buf = rest;
        Ok(head.try_into().expect("split at N"))
    }

    fn rect(&mut self) -> Result<CellRect, WireError> {
        Ok(CellRect {
            x: i64::from_le_bytes(self.take()?),
            y: i64::from_le_bytes(self.take()?),
            width: u32::from_le_bytes(self.take()?),
            height: u32::from_le_bytes(self.take()?),
        })
    }

    fn varint(&mut self) -> Result<u64, WireError> {
        let mut n = 0u64;
        for shift in (0..64).step_by(7) {
            let [b] = self.take::<1>()?;
            n |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return Ok(n);
            }
        }
        Err(WireError::Varint)
    }
}

pub fn decode_grid_patch(bytes: &[u8]) -> Result<WirePatch, WireError> {
    let mut r = Reader { buf: bytes };
    if r.take::<4>()? != PATCH_MAGIC || r.take::<1>()? != [PATCH_FORMAT] {
        return Err(WireError::Magic);
    }
    let [flags] = r.take::<1>()?;
    let epoch = u64::from_le_bytes(r.take()?);
    let stamp_bits = u64::from_le_bytes(r.take()?);
    let extent = r.rect()?;
    let rect = r.rect()?;
    let expected = rect.area();
    let mut cells = Vec::with_capacity(expected.min(1 << 24));
    while !r.buf.is_empty() {
        let [code] = r.take::<1>()?;
        let state = CellState::from_code(code).ok_or(WireError::State(code))?;
        let n = r.varint()? as usize;
        if n == 0 {
            return Err(WireError::EmptyRun);
        }
        if cells.len() + n > expected {
            return Err(WireError::RunTotal {
                expected,
                got: cells.len() + n,
            });
        }
        cells.resize(cells.len() + n, state);
    }
    if cells.len() != expected {
        return Err(WireError::RunTotal {
            expected,
            got: cells.len(),
        });
    }
    Ok(WirePatch {
        stamp_bits,
        snapshot: flags & FLAG_SNAPSHOT != 0,
        patch: GridPatch {
            epoch,
            extent,
            rect,
            cells,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_delta_is_header_only() {
        let p = GridPatch {
            epoch: 4,
            extent: CellRect { x: -3, y: 2, width: 5, height: 5 },
            rect: CellRect::EMPTY,
            cells: vec![],
        };
        let b = encode_grid_patch(&p, 1.5, false);
        assert_eq!(b.len(), PATCH_HEADER_LEN);
        let d = decode_grid_patch(&b).unwrap();
        assert_eq!((d.stamp(), d.snapshot, d.patch), (1.5, false, p));
    }

    #[test]
    fn varint_lengths() {
        let cells = vec![CellState::Free; 300];
        // one run: state byte plus a two-byte varint
        assert_eq!(encode_runs(&cells), vec![1, 0xac, 0x02]);
    }

    #[test]
    fn rejects_bad_frames() {
        let p = GridPatch {
            epoch: 1,
            extent: CellRect::single(0, 0),
            rect: CellRect::single(0, 0),
            cells: vec![CellState::Occupied],
        };
        let good = encode_grid_patch(&p, 0.0, true);
        assert_eq!(decode_grid_patch(&good[..10]), Err(WireError::Short));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(decode_grid_patch(&bad), Err(WireError::Magic));
        let mut bad = good.clone();
        *bad.last_mut().unwrap() = 2;
        assert!(matches!(decode_grid_patch(&bad), Err(WireError::RunTotal { .. })));
        let mut bad = good.clone();
        bad[PATCH_HEADER_LEN] = 7;
        assert_eq!(decode_grid_patch(&bad), Err(WireError::State(7)));
    }

    #[test]
    fn client_messages_parse() {
        let m = ClientMessage::parse(r#"{"type":"cmd_vel","schema":1,"stamp":0.0,"v":0.5,"w":0}"#).unwrap();
        assert_eq!(m, ClientMessage::CmdVel { schema: 1, stamp: 0.0, v: 0.5, w: 0.0 });
        let m = ClientMessage::parse(r#"{"type":"session_control","schema":1,"stamp":2,"action":"acquire"}"#).unwrap();
        assert!(matches!(m, ClientMessage::SessionControl { action: SessionAction::Acquire, .. }));
        assert_eq!(
            ClientMessage::parse(r#"{"type":"kill","schema":9,"stamp":0,"engage":true}"#),
            Err(WireError::Schema(9))
        );
        assert!(ClientMessage::parse(r#"{"type":"kill","schema":1,"stamp":0,"engage":true,"x":1}"#).is_err());
    }

    #[test]
    fn server_messages_are_tagged() {
        let m = ServerMessage::Pose(PoseMsg {
            schema: SCHEMA_VERSION,
            stamp: 0.1,
            truth: Pose2::new(1.0, 2.0, 0.0),
            estimate: None,
            scale_valid: false,
        });
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["type"], "pose");
        assert_eq!(v["schema"], 1);
        assert_eq!(v["stamp"], 0.1);
    }
}
