//! Binary wire protocol shared by the in-process and socket transports.
//!
//! Every message is one length-prefixed frame:
//!
//! ```text
//! offset size field
//! 0      4    payload length + 12, little-endian u32
//! 4      1    message tag
//! 5      1    sender role (0xA1 sensor a, 0xB1 sensor b, 0x51 station)
//! 6      2    iteration, LE u16 (0 outside the registration loop)
//! 8      4    element count, LE u32
//! 12     4    CRC-32 of the payload, LE u32
//! 16     ...  payload
//! ```
//!
//! A SAMPLES frame carrying the default 250 points is therefore exactly
//! 16 + 250*6 = 1516 bytes on the wire. Layouts are documented
//! field-by-field in PROTOCOL.md at the repository root.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{Matrix3, Vector3};

use crate::checksum::crc32;
use crate::geometry::{Intrinsics, RigidTransform};

pub const PROTOCOL_VERSION: u16 = 1;

/// Frame overhead: 4-byte length prefix + 12-byte header.
pub const FRAME_OVERHEAD: usize = 16;

/// Marker for a sample that does not project into the peer's frame.
pub const SAMPLE_SENTINEL: WireSample = WireSample { i: 0xffff, j: 0xffff, z_mm: 0 };

pub const NORMAL_SCALE: f64 = 32767.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolError {
    Truncated,
    BadLength,
    BadTag(u8),
    BadRole(u8),
    BadCrc,
    BadVersion(u16),
    /// Handshake fields disagree between the two endpoints.
    HandshakeMismatch,
    /// A well-formed frame arrived where a different tag was required.
    UnexpectedMessage(u8),
}

impl fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolError::Truncated => write!(f, "frame shorter than its length field"),
            ProtocolError::BadLength => write!(f, "frame length inconsistent with contents"),
            ProtocolError::BadTag(t) => write!(f, "unknown message tag {t:#04x}"),
            ProtocolError::BadRole(r) => write!(f, "unknown sender role {r:#04x}"),
            ProtocolError::BadCrc => write!(f, "payload checksum mismatch"),
            ProtocolError::BadVersion(v) => write!(f, "unsupported protocol version {v}"),
            ProtocolError::HandshakeMismatch => write!(f, "handshake fields do not match"),
            ProtocolError::UnexpectedMessage(t) => write!(f, "unexpected message tag {t:#04x}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ProtocolError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Role {
    SensorA = 0xa1,
    SensorB = 0xb1,
    Station = 0x51,
}

impl Role {
    fn from_byte(b: u8) -> Result<Self, ProtocolError> {
        match b {
            0xa1 => Ok(Role::SensorA),
            0xb1 => Ok(Role::SensorB),
            0x51 => Ok(Role::Station),
            other => Err(ProtocolError::BadRole(other)),
        }
    }
}

pub mod tag {
    pub const HELLO: u8 = 0x01;
    pub const SAMPLES: u8 = 0x02;
    pub const MATCHES: u8 = 0x03;
    pub const POSE_UPDATE: u8 = 0x04;
    pub const CONVERGED: u8 = 0x05;
    pub const ABORT: u8 = 0x06;
    pub const BLOCK_SET: u8 = 0x07;
    pub const CONTAINER: u8 = 0x08;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum AbortCode {
    InsufficientData = 1,
    DegenerateGeometry = 2,
    Protocol = 3,
}

impl AbortCode {
    fn from_byte(b: u8) -> Result<Self, ProtocolError> {
        match b {
            1 => Ok(AbortCode::InsufficientData),
            2 => Ok(AbortCode::DegenerateGeometry),
            3 => Ok(AbortCode::Protocol),
            _ => Err(ProtocolError::BadLength),
        }
    }
}

/// One sampled point as transmitted: pixel coordinates in the receiver's
/// image plane plus raw millimeter depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireSample {
    pub i: u16,
    pub j: u16,
    pub z_mm: u16,
}

impl WireSample {
    pub fn is_sentinel(&self) -> bool {
        self.z_mm == 0
    }
}

/// Reply entry for one forward sample: the matched pixel in frame b and
/// the quantized surface normal there. `found == 0` leaves the rest zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchEntry {
    pub found: bool,
    pub i: u16,
    pub j: u16,
    pub z_mm: u16,
    pub normal: [i16; 3],
}

/// One of role b's own samples with its normal, in frame-b coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleEntry {
    pub valid: bool,
    pub i: u16,
    pub j: u16,
    pub z_mm: u16,
    pub normal: [i16; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        version: u16,
        role: Role,
        intrinsics_hash: u64,
    },
    /// Role a's samples warped into frame b, quantized.
    Samples {
        iteration: u16,
        points: Vec<WireSample>,
    },
    /// Role b's reply: per-sample matches plus its own sample set.
    Matches {
        iteration: u16,
        matches: Vec<MatchEntry>,
        samples: Vec<SampleEntry>,
    },
    /// Final relative pose, sensor a to sensor b.
    PoseUpdate { pose: RigidTransform },
    /// Registration statistics following the pose.
    Converged {
        iterations: u32,
        converged: bool,
        final_cost: f64,
    },
    Abort { code: AbortCode },
    /// Block bitmap (prediction set) from role a.
    BlockSet {
        grid_w: u16,
        grid_h: u16,
        bitmap: Vec<u8>,
    },
    /// An encoded payload container, opaque at this layer.
    Container { bytes: Vec<u8> },
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Hello { .. } => tag::HELLO,
            Message::Samples { .. } => tag::SAMPLES,
            Message::Matches { .. } => tag::MATCHES,
            Message::PoseUpdate { .. } => tag::POSE_UPDATE,
            Message::Converged { .. } => tag::CONVERGED,
            Message::Abort { .. } => tag::ABORT,
            Message::BlockSet { .. } => tag::BLOCK_SET,
            Message::Container { .. } => tag::CONTAINER,
        }
    }

    fn iteration(&self) -> u16 {
        match self {
            Message::Samples { iteration, .. } | Message::Matches { iteration, .. } => *iteration,
            _ => 0,
        }
    }

    fn count(&self) -> u32 {
        match self {
            Message::Samples { points, .. } => points.len() as u32,
            Message::Matches { matches, samples, .. } => (matches.len() + samples.len()) as u32,
            Message::BlockSet { bitmap, .. } => bitmap.len() as u32,
            Message::Container { bytes } => bytes.len() as u32,
            _ => 0,
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Message::Hello { version, role, intrinsics_hash } => {
                out.extend_from_slice(&version.to_le_bytes());
                out.push(*role as u8);
                out.extend_from_slice(&intrinsics_hash.to_le_bytes());
            }
            Message::Samples { points, .. } => {
                for p in points {
                    out.extend_from_slice(&p.i.to_le_bytes());
                    out.extend_from_slice(&p.j.to_le_bytes());
                    out.extend_from_slice(&p.z_mm.to_le_bytes());
                }
            }
            Message::Matches { matches, samples, .. } => {
                out.extend_from_slice(&(matches.len() as u32).to_le_bytes());
                out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
                for m in matches {
                    out.push(m.found as u8);
                    out.extend_from_slice(&m.i.to_le_bytes());
                    out.extend_from_slice(&m.j.to_le_bytes());
                    out.extend_from_slice(&m.z_mm.to_le_bytes());
                    for c in m.normal {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                }
                for s in samples {
                    out.push(s.valid as u8);
                    out.extend_from_slice(&s.i.to_le_bytes());
                    out.extend_from_slice(&s.j.to_le_bytes());
                    out.extend_from_slice(&s.z_mm.to_le_bytes());
                    for c in s.normal {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                }
            }
            Message::PoseUpdate { pose } => {
                encode_pose(&mut out, pose);
            }
            Message::Converged { iterations, converged, final_cost } => {
                out.extend_from_slice(&iterations.to_le_bytes());
                out.push(*converged as u8);
                out.extend_from_slice(&final_cost.to_le_bytes());
            }
            Message::Abort { code } => out.push(*code as u8),
            Message::BlockSet { grid_w, grid_h, bitmap } => {
                out.extend_from_slice(&grid_w.to_le_bytes());
                out.extend_from_slice(&grid_h.to_le_bytes());
                out.extend_from_slice(bitmap);
            }
            Message::Container { bytes } => out.extend_from_slice(bytes),
        }
        out
    }

    /// Serializes to a complete frame, length prefix included.
    pub fn encode(&self, sender: Role) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(FRAME_OVERHEAD + payload.len());
        out.extend_from_slice(&((payload.len() + 12) as u32).to_le_bytes());
        out.push(self.tag());
        out.push(sender as u8);
        out.extend_from_slice(&self.iteration().to_le_bytes());
        out.extend_from_slice(&self.count().to_le_bytes());
        out.extend_from_slice(&crc32(&payload).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    /// Parses a complete frame (length prefix included).
    pub fn decode(frame: &[u8]) -> Result<(Message, Role), ProtocolError> {
        let mut r = Reader::new(frame);
        let declared = r.u32()? as usize;
        if declared < 12 || frame.len() != declared + 4 {
            return Err(ProtocolError::BadLength);
        }
        let tag_byte = r.u8()?;
        let sender = Role::from_byte(r.u8()?)?;
        let iteration = r.u16()?;
        let count = r.u32()? as usize;
        let crc = r.u32()?;
        let payload = &frame[FRAME_OVERHEAD..];
        if crc32(payload) != crc {
            return Err(ProtocolError::BadCrc);
        }
        let mut p = Reader::new(payload);
        let msg = match tag_byte {
            tag::HELLO => {
                let version = p.u16()?;
                let role = Role::from_byte(p.u8()?)?;
                let intrinsics_hash = p.u64()?;
                Message::Hello { version, role, intrinsics_hash }
            }
            tag::SAMPLES => {
                if payload.len() != count * 6 {
                    return Err(ProtocolError::BadLength);
                }
                let mut points = Vec::with_capacity(count);
                for _ in 0..count {
                    points.push(WireSample { i: p.u16()?, j: p.u16()?, z_mm: p.u16()? });
                }
                Message::Samples { iteration, points }
            }
            tag::MATCHES => {
                let n_matches = p.u32()? as usize;
                let n_samples = p.u32()? as usize;
                if n_matches + n_samples != count
                    || payload.len() != 8 + 13 * (n_matches + n_samples)
                {
                    return Err(ProtocolError::BadLength);
                }
                let mut matches = Vec::with_capacity(n_matches);
                for _ in 0..n_matches {
                    matches.push(MatchEntry {
                        found: p.u8()? != 0,
                        i: p.u16()?,
                        j: p.u16()?,
                        z_mm: p.u16()?,
                        normal: [p.i16()?, p.i16()?, p.i16()?],
                    });
                }
                let mut samples = Vec::with_capacity(n_samples);
                for _ in 0..n_samples {
                    samples.push(SampleEntry {
                        valid: p.u8()? != 0,
                        i: p.u16()?,
                        j: p.u16()?,
                        z_mm: p.u16()?,
                        normal: [p.i16()?, p.i16()?, p.i16()?],
                    });
                }
                Message::Matches { iteration, matches, samples }
            }
            tag::POSE_UPDATE => Message::PoseUpdate { pose: decode_pose(&mut p)? },
            tag::CONVERGED => Message::Converged {
                iterations: p.u32()?,
                converged: p.u8()? != 0,
                final_cost: p.f64()?,
            },
            tag::ABORT => Message::Abort { code: AbortCode::from_byte(p.u8()?)? },
            tag::BLOCK_SET => {
                let grid_w = p.u16()?;
                let grid_h = p.u16()?;
                let bitmap = p.take(payload.len() - 4)?.to_vec();
                if bitmap.len() != count {
                    return Err(ProtocolError::BadLength);
                }
                Message::BlockSet { grid_w, grid_h, bitmap }
            }
            tag::CONTAINER => Message::Container { bytes: p.take(payload.len())?.to_vec() },
            other => return Err(ProtocolError::BadTag(other)),
        };
        if !p.is_empty() {
            return Err(ProtocolError::BadLength);
        }
        Ok((msg, sender))
    }
}

fn encode_pose(out: &mut Vec<u8>, pose: &RigidTransform) {
    for r in 0..3 {
        for c in 0..3 {
            out.extend_from_slice(&pose.rotation[(r, c)].to_le_bytes());
        }
    }
    for r in 0..3 {
        out.extend_from_slice(&pose.translation[r].to_le_bytes());
    }
}

fn decode_pose(p: &mut Reader<'_>) -> Result<RigidTransform, ProtocolError> {
    let mut rot = Matrix3::zeros();
    for r in 0..3 {
        for c in 0..3 {
            rot[(r, c)] = p.f64()?;
        }
    }
    let t = Vector3::new(p.f64()?, p.f64()?, p.f64()?);
    RigidTransform::new(rot, t).map_err(|_| ProtocolError::BadLength)
}

/// FNV-1a hash over the canonical encoding of the intrinsics, pinned by the
/// handshake so both endpoints agree on the camera model.
pub fn intrinsics_hash(k: &Intrinsics) -> u64 {
    let mut bytes = Vec::with_capacity(8 * 5 + 8);
    for v in [k.fx, k.fy, k.ic, k.jc, k.depth_scale] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(&k.width.to_le_bytes());
    bytes.extend_from_slice(&k.height.to_le_bytes());
    crate::checksum::fnv1a64(&bytes)
}

pub fn quantize_normal(n: &Vector3<f64>) -> [i16; 3] {
    let q = |x: f64| {
        let v = crate::mathf::round(x * NORMAL_SCALE);
        v.clamp(-NORMAL_SCALE, NORMAL_SCALE) as i16
    };
    [q(n.x), q(n.y), q(n.z)]
}

/// Inverse of [`quantize_normal`], re-normalized to unit length.
pub fn dequantize_normal(q: &[i16; 3]) -> Option<Vector3<f64>> {
    let v = Vector3::new(
        q[0] as f64 / NORMAL_SCALE,
        q[1] as f64 / NORMAL_SCALE,
        q[2] as f64 / NORMAL_SCALE,
    );
    let norm = v.norm();
    if norm <= 0.0 {
        None
    } else {
        Some(v / norm)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.pos + n > self.buf.len() {
            return Err(ProtocolError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn i16(&mut self) -> Result<i16, ProtocolError> {
        Ok(i16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ProtocolError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
