//! Message framing for the certification protocol.
//!
//! Every message travels as one frame: a tag byte, a little-endian u32
//! payload length, and the payload. Field elements are 8-byte
//! little-endian canonical representatives; decoding rejects anything at
//! or above the modulus, so a malformed peer cannot smuggle a
//! non-canonical value into the arithmetic. The same bytes flow whether
//! the two parties share a process or a TCP connection, which is what
//! makes transcripts comparable across the two deployments.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::circuit::GateId;
use crate::field::{Fp, Poly2};

/// Sentinel for "no free variable" in an evaluation challenge.
const NO_FREE: u32 = u32::MAX;

/// Upper bound on a sane payload (a total point over a few hundred
/// variables is far below this).
const MAX_PAYLOAD: u32 = 1 << 24;

const TAG_CHALLENGE_EVAL: u8 = 0x01;
const TAG_CHALLENGE_DISTINCT: u8 = 0x02;
const TAG_ANSWER_POLY: u8 = 0x03;
const TAG_ANSWER_POINT: u8 = 0x04;
const TAG_ANSWER_ASSIGNMENT: u8 = 0x05;
const TAG_VERDICT: u8 = 0x06;

/// A protocol message. Challenges flow verifier -> prover, answers flow
/// back, and the verdict closes the session.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Message {
    /// Evaluate a gate's stage polynomial at `sigma`, with `free` (when
    /// given) left symbolic. Expects [`Message::AnswerPoint`] when total,
    /// [`Message::AnswerPoly`] when a variable is free.
    ChallengeEval {
        gate: GateId,
        free: Option<u32>,
        sigma: Vec<Fp>,
    },
    /// Ask for a boolean point separating two gates. Expects
    /// [`Message::AnswerAssignment`].
    ChallengeDistinct { g1: GateId, g2: GateId },
    /// A univariate polynomial of degree at most two.
    AnswerPoly(Poly2),
    /// A single field element.
    AnswerPoint(Fp),
    /// A total assignment, sent as field elements (the verifier insists
    /// they are boolean).
    AnswerAssignment(Vec<Fp>),
    /// Final verdict; the prover sends no reply.
    Verdict { accept: bool, reason: String },
}

#[derive(Error, Debug)]
pub enum WireError {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("non-canonical field element")]
    NonCanonical,
}

fn push_fp(out: &mut Vec<u8>, x: Fp) {
    out.extend_from_slice(&x.to_bytes());
}

fn take_fp(bytes: &[u8], at: usize) -> Result<Fp, WireError> {
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&bytes[at..at + 8]);
    Fp::from_bytes(buf).ok_or(WireError::NonCanonical)
}

fn take_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Encodes one message as a complete frame.
pub fn encode(msg: &Message) -> Vec<u8> {
    let (tag, payload) = match msg {
        Message::ChallengeEval { gate, free, sigma } => {
            let mut p = Vec::with_capacity(8 + 8 * sigma.len());
            p.extend_from_slice(&gate.to_le_bytes());
            p.extend_from_slice(&free.unwrap_or(NO_FREE).to_le_bytes());
            for &x in sigma {
                push_fp(&mut p, x);
            }
            (TAG_CHALLENGE_EVAL, p)
        }
        Message::ChallengeDistinct { g1, g2 } => {
            let mut p = Vec::with_capacity(8);
            p.extend_from_slice(&g1.to_le_bytes());
            p.extend_from_slice(&g2.to_le_bytes());
            (TAG_CHALLENGE_DISTINCT, p)
        }
        Message::AnswerPoly(poly) => {
            let mut p = Vec::with_capacity(24);
            for c in poly.c {
                push_fp(&mut p, c);
            }
            (TAG_ANSWER_POLY, p)
        }
        Message::AnswerPoint(k) => {
            let mut p = Vec::with_capacity(8);
            push_fp(&mut p, *k);
            (TAG_ANSWER_POINT, p)
        }
        Message::AnswerAssignment(coords) => {
            let mut p = Vec::with_capacity(8 * coords.len());
            for &x in coords {
                push_fp(&mut p, x);
            }
            (TAG_ANSWER_ASSIGNMENT, p)
        }
        Message::Verdict { accept, reason } => {
            let mut p = Vec::with_capacity(1 + reason.len());
            p.push(*accept as u8);
            p.extend_from_slice(reason.as_bytes());
            (TAG_VERDICT, p)
        }
    };
    let mut frame = Vec::with_capacity(5 + payload.len());
    frame.push(tag);
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.extend_from_slice(&payload);
    frame
}

/// Decodes one complete frame.
pub fn decode(frame: &[u8]) -> Result<Message, WireError> {
    if frame.len() < 5 {
        return Err(WireError::Malformed("truncated header".into()));
    }
    let tag = frame[0];
    let len = take_u32(frame, 1) as usize;
    if frame.len() != 5 + len {
        return Err(WireError::Malformed(format!(
            "frame length {} does not match header {}",
            frame.len() - 5,
            len
        )));
    }
    let p = &frame[5..];
    match tag {
        TAG_CHALLENGE_EVAL => {
            if p.len() < 8 || (p.len() - 8) % 8 != 0 {
                return Err(WireError::Malformed("bad evaluation challenge size".into()));
            }
            let gate = take_u32(p, 0);
            let free_raw = take_u32(p, 4);
            let free = if free_raw == NO_FREE { None } else { Some(free_raw) };
            let mut sigma = Vec::with_capacity((p.len() - 8) / 8);
            let mut at = 8;
            while at < p.len() {
                sigma.push(take_fp(p, at)?);
                at += 8;
            }
            Ok(Message::ChallengeEval { gate, free, sigma })
        }
        TAG_CHALLENGE_DISTINCT => {
            if p.len() != 8 {
                return Err(WireError::Malformed("bad distinctness challenge size".into()));
            }
            Ok(Message::ChallengeDistinct {
                g1: take_u32(p, 0),
                g2: take_u32(p, 4),
            })
        }
        TAG_ANSWER_POLY => {
            if p.len() != 24 {
                return Err(WireError::Malformed("bad polynomial size".into()));
            }
            Ok(Message::AnswerPoly(Poly2 {
                c: [take_fp(p, 0)?, take_fp(p, 8)?, take_fp(p, 16)?],
            }))
        }
        TAG_ANSWER_POINT => {
            if p.len() != 8 {
                return Err(WireError::Malformed("bad point size".into()));
            }
            Ok(Message::AnswerPoint(take_fp(p, 0)?))
        }
        TAG_ANSWER_ASSIGNMENT => {
            if p.len() % 8 != 0 {
                return Err(WireError::Malformed("bad assignment size".into()));
            }
            let mut coords = Vec::with_capacity(p.len() / 8);
            let mut at = 0;
            while at < p.len() {
                coords.push(take_fp(p, at)?);
                at += 8;
            }
            Ok(Message::AnswerAssignment(coords))
        }
        TAG_VERDICT => {
            if p.is_empty() || p[0] > 1 {
                return Err(WireError::Malformed("bad verdict".into()));
            }
            let reason = std::str::from_utf8(&p[1..])
                .map_err(|_| WireError::Malformed("verdict reason is not UTF-8".into()))?
                .to_string();
            Ok(Message::Verdict {
                accept: p[0] == 1,
                reason,
            })
        }
        other => Err(WireError::Malformed(format!("unknown tag {other:#04x}"))),
    }
}

/// Reads one frame (header and payload) from a stream.
pub fn read_frame(r: &mut impl Read) -> Result<Vec<u8>, WireError> {
    let mut header = [0u8; 5];
    r.read_exact(&mut header)?;
    let len = u32::from_le_bytes(header[1..5].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(WireError::Malformed(format!("oversized payload ({len} bytes)")));
    }
    let mut frame = vec![0u8; 5 + len as usize];
    frame[..5].copy_from_slice(&header);
    r.read_exact(&mut frame[5..])?;
    Ok(frame)
}

/// Writes one already-encoded frame to a stream.
pub fn write_frame(w: &mut impl Write, frame: &[u8]) -> Result<(), WireError> {
    w.write_all(frame)?;
    w.flush()?;
    Ok(())
}
