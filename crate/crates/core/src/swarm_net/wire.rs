//! Fixed little-endian binary encoding of swarm messages.
//!
//! Header: magic `SLIO`, version, type, sender id, sequence number (u32),
//! timestamp (f64). Ego payload: row-major rotation (9 x f64), position,
//! velocity. Observation payload: observed id, position in the sender body
//! frame.

use serde::Serialize;
use thiserror::Error;

use crate::manifold::{Mat3, Rotation, Vec3};

pub const MAGIC: [u8; 4] = *b"SLIO";
pub const VERSION: u8 = 1;
pub const TYPE_EGO: u8 = 1;
pub const TYPE_OBS: u8 = 2;
pub const HEADER_LEN: usize = 4 + 1 + 1 + 1 + 4 + 8;
pub const EGO_LEN: usize = HEADER_LEN + 9 * 8 + 3 * 8 + 3 * 8;
pub const OBS_LEN: usize = HEADER_LEN + 1 + 3 * 8;

/// A drone's own pose estimate in its global frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoMsg {
    pub sender: u8,
    pub seq: u32,
    pub timestamp: f64,
    pub rot: Rotation,
    pub pos: Vec3,
    pub vel: Vec3,
}

/// A detection of drone `observed` by the sender, in the sender body frame
/// at `timestamp`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsMsg {
    pub sender: u8,
    pub seq: u32,
    pub timestamp: f64,
    pub observed: u8,
    pub pos: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Message {
    Ego(EgoMsg),
    Obs(ObsMsg),
}

impl Message {
    pub fn sender(&self) -> u8 {
        match self {
            Message::Ego(m) => m.sender,
            Message::Obs(m) => m.sender,
        }
    }

    pub fn seq(&self) -> u32 {
        match self {
            Message::Ego(m) => m.seq,
            Message::Obs(m) => m.seq,
        }
    }

    pub fn timestamp(&self) -> f64 {
        match self {
            Message::Ego(m) => m.timestamp,
            Message::Obs(m) => m.timestamp,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::Ego(_) => "ego",
            Message::Obs(_) => "obs",
        }
    }

    pub fn encoded_len(&self) -> usize {
        match self {
            Message::Ego(_) => EGO_LEN,
            Message::Obs(_) => OBS_LEN,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
pub enum WireError {
    #[error("truncated message: need {need} bytes, got {got}")]
    Truncated { need: usize, got: usize },
    #[error("bad magic at byte 0")]
    BadMagic,
    #[error("unsupported version {found} at byte 4")]
    BadVersion { found: u8 },
    #[error("unknown message type {found} at byte 5")]
    UnknownType { found: u8 },
    #[error("{extra} trailing bytes after offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("non-finite value at byte {offset}")]
    NonFinite { offset: usize },
    #[error("rotation at byte {offset} is not orthonormal")]
    NotRotation { offset: usize },
}

struct Writer(Vec<u8>);

impl Writer {
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn vec3(&mut self, v: &Vec3) {
        for x in v.iter() {
            self.f64(*x);
        }
    }
}

fn header(w: &mut Writer, ty: u8, sender: u8, seq: u32, t: f64) {
    w.0.extend_from_slice(&MAGIC);
    w.0.push(VERSION);
    w.0.push(ty);
    w.0.push(sender);
    w.0.extend_from_slice(&seq.to_le_bytes());
    w.f64(t);
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(msg.encoded_len()));
    match msg {
        Message::Ego(m) => {
            header(&mut w, TYPE_EGO, m.sender, m.seq, m.timestamp);
            let r = m.rot.matrix();
            for i in 0..3 {
                for j in 0..3 {
                    w.f64(r[(i, j)]);
                }
            }
            w.vec3(&m.pos);
            w.vec3(&m.vel);
        }
        Message::Obs(m) => {
            header(&mut w, TYPE_OBS, m.sender, m.seq, m.timestamp);
            w.0.push(m.observed);
            w.vec3(&m.pos);
        }
    }
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn u8(&mut self) -> u8 {
        let v = self.buf[self.at];
        self.at += 1;
        v
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        let offset = self.at;
        let v = f64::from_le_bytes(self.buf[offset..offset + 8].try_into().expect("length checked"));
        self.at += 8;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(WireError::NonFinite { offset })
        }
    }

    fn vec3(&mut self) -> Result<Vec3, WireError> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
}

pub fn decode(buf: &[u8]) -> Result<Message, WireError> {
    if buf.len() < HEADER_LEN {
        return Err(WireError::Truncated { need: HEADER_LEN, got: buf.len() });
    }
    if buf[..4] != MAGIC {
        return Err(WireError::BadMagic);
    }
    if buf[4] != VERSION {
        return Err(WireError::BadVersion { found: buf[4] });
    }
    let need = match buf[5] {
        TYPE_EGO => EGO_LEN,
        TYPE_OBS => OBS_LEN,
        found => return Err(WireError::UnknownType { found }),
    };
    if buf.len() < need {
        return Err(WireError::Truncated { need, got: buf.len() });
    }
    if buf.len() > need {
        return Err(WireError::TrailingBytes { offset: need, extra: buf.len() - need });
    }
    let mut r = Reader { buf, at: 6 };
    let sender = r.u8();
    let seq = u32::from_le_bytes(buf[7..11].try_into().expect("length checked"));
    r.at = 11;
    let timestamp = r.f64()?;
    if buf[5] == TYPE_EGO {
        let rot_at = r.at;
        let mut m = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = r.f64()?;
            }
        }
        let rot = Rotation::from_matrix(m).map_err(|_| WireError::NotRotation { offset: rot_at })?;
        let pos = r.vec3()?;
        let vel = r.vec3()?;
        Ok(Message::Ego(EgoMsg { sender, seq, timestamp, rot, pos, vel }))
    } else {
        let observed = r.u8();
        let pos = r.vec3()?;
        Ok(Message::Obs(ObsMsg { sender, seq, timestamp, observed, pos }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::so3_exp;
    use proptest::prelude::*;

    fn ego() -> Message {
        Message::Ego(EgoMsg {
            sender: 2,
            seq: 77,
            timestamp: 12.3,
            rot: so3_exp(&Vec3::new(0.1, -0.2, 1.3)).unwrap(),
            pos: Vec3::new(1.0, 2.0, 3.0),
            vel: Vec3::new(-0.5, 0.0, 0.25),
        })
    }

    #[test]
    fn sizes() {
        assert_eq!(EGO_LEN, 139);
        assert_eq!(OBS_LEN, 44);
        assert_eq!(encode(&ego()).len(), EGO_LEN);
    }

    #[test]
    fn errors_carry_offsets() {
        let mut b = encode(&ego());
        b[0] = b'X';
        assert_eq!(decode(&b), Err(WireError::BadMagic));
        let mut b = encode(&ego());
        b[4] = 9;
        assert_eq!(decode(&b), Err(WireError::BadVersion { found: 9 }));
        let mut b = encode(&ego());
        b[19..27].copy_from_slice(&f64::NAN.to_le_bytes());
        assert_eq!(decode(&b), Err(WireError::NonFinite { offset: 19 }));
        let mut b = encode(&ego());
        b[19..27].copy_from_slice(&2.0f64.to_le_bytes());
        assert_eq!(decode(&b), Err(WireError::NotRotation { offset: 19 }));
        let b = encode(&ego());
        assert_eq!(decode(&b[..100]), Err(WireError::Truncated { need: 139, got: 100 }));
        let mut b = encode(&ego());
        b.push(0);
        assert_eq!(decode(&b), Err(WireError::TrailingBytes { offset: 139, extra: 1 }));
    }

    proptest! {
        #[test]
        fn obs_roundtrip_is_bit_exact(sender: u8, seq: u32, observed: u8,
            t in -1e6f64..1e6, x in -1e3f64..1e3, y in -1e3f64..1e3, z in -1e3f64..1e3) {
            let m = Message::Obs(ObsMsg { sender, seq, timestamp: t, observed, pos: Vec3::new(x, y, z) });
            let b = encode(&m);
            prop_assert_eq!(b.len(), OBS_LEN);
            prop_assert_eq!(decode(&b).unwrap(), m);
        }

        #[test]
        fn ego_roundtrip_is_bit_exact(rx in -3.0f64..3.0, ry in -3.0f64..3.0, rz in -3.0f64..3.0, seq: u32, t in 0f64..1e5) {
            let m = Message::Ego(EgoMsg {
                sender: 1, seq, timestamp: t,
                rot: so3_exp(&Vec3::new(rx, ry, rz)).unwrap(),
                pos: Vec3::new(rx, ry, rz) * 10.0,
                vel: Vec3::new(rz, rx, ry),
            });
            let d = decode(&encode(&m)).unwrap();
            prop_assert_eq!(encode(&d), encode(&m));
        }

        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = decode(&bytes);
        }
    }
}
