//! Interactive certification of solver traces.
//!
//! The protocol has two ends. The prover ([`ProverSession`]) holds the
//! decision diagrams and answers evaluation challenges about the stage
//! polynomials of the claimed computation; the verifier
//! ([`run_verification`]) holds only the compiled circuit and randomness,
//! and certifies every recorded assertion by reducing field-evaluation
//! claims gate by gate until they bottom out at inputs. The two sides
//! talk through a [`ByteChannel`], which is either an in-process call
//! into a prover session or a TCP stream; the bytes exchanged are
//! identical either way, so transcripts can be compared across transports.

pub mod prover;
pub mod verifier;
pub mod wire;

use std::io::{self, Write};
use std::net::TcpStream;

pub use prover::{
    flip_assertion, ProverError, ProverSession, Retention, TamperClass, TamperPlan,
};
pub use verifier::{
    run_verification, Verdict, VerifyOptions, VerifyOutcome, VerifyStats,
};
pub use wire::{Message, WireError};

/// A reliable, ordered frame transport between verifier and prover.
pub trait ByteChannel {
    /// Sends one frame and waits for the single reply frame.
    fn roundtrip(&mut self, frame: &[u8]) -> io::Result<Vec<u8>>;
    /// Sends one frame that expects no reply (the verdict).
    fn send(&mut self, frame: &[u8]) -> io::Result<()>;
}

/// In-process transport: frames are handed straight to a prover session.
pub struct LocalChannel<'a> {
    prover: &'a mut ProverSession,
}

impl<'a> LocalChannel<'a> {
    pub fn new(prover: &'a mut ProverSession) -> LocalChannel<'a> {
        LocalChannel { prover }
    }
}

fn prover_io_err(e: ProverError) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

impl ByteChannel for LocalChannel<'_> {
    fn roundtrip(&mut self, frame: &[u8]) -> io::Result<Vec<u8>> {
        match self.prover.handle_frame(frame).map_err(prover_io_err)? {
            Some(reply) => Ok(reply),
            None => Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "prover produced no reply",
            )),
        }
    }

    fn send(&mut self, frame: &[u8]) -> io::Result<()> {
        self.prover.handle_frame(frame).map_err(prover_io_err)?;
        Ok(())
    }
}

/// TCP transport, used by the split binaries.
pub struct TcpChannel {
    stream: TcpStream,
}

impl TcpChannel {
    pub fn new(stream: TcpStream) -> TcpChannel {
        TcpChannel { stream }
    }
}

fn wire_io_err(e: WireError) -> io::Error {
    match e {
        WireError::Io(e) => e,
        other => io::Error::new(io::ErrorKind::InvalidData, other.to_string()),
    }
}

impl ByteChannel for TcpChannel {
    fn roundtrip(&mut self, frame: &[u8]) -> io::Result<Vec<u8>> {
        wire::write_frame(&mut self.stream, frame).map_err(wire_io_err)?;
        self.stream.flush()?;
        wire::read_frame(&mut self.stream).map_err(wire_io_err)
    }

    fn send(&mut self, frame: &[u8]) -> io::Result<()> {
        wire::write_frame(&mut self.stream, frame).map_err(wire_io_err)?;
        self.stream.flush()?;
        Ok(())
    }
}

/// Serves one verification session over an accepted TCP stream: reads
/// frames, feeds them to the prover, writes replies, and returns the
/// verifier's verdict once it arrives (`None` if the peer disconnects
/// without sending one).
pub fn serve_connection(
    prover: &mut ProverSession,
    stream: &mut TcpStream,
) -> io::Result<Option<Verdict>> {
    let mut reader = stream.try_clone()?;
    loop {
        let frame = match wire::read_frame(&mut reader) {
            Ok(f) => f,
            Err(WireError::Io(e)) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(wire_io_err(e)),
        };
        let verdict = match wire::decode(&frame) {
            Ok(Message::Verdict { accept, reason }) => Some(Verdict { accept, reason }),
            _ => None,
        };
        match prover.handle_frame(&frame).map_err(prover_io_err)? {
            Some(reply) => {
                wire::write_frame(&mut *stream, &reply).map_err(wire_io_err)?;
                stream.flush()?;
            }
            None => {
                if verdict.is_some() {
                    return Ok(verdict);
                }
            }
        }
    }
}
