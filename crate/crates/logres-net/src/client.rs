//! Client-side operations: submit entries and fetch the latest
//! certificate, validating it locally against the public registry.

use std::io::{self};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use logres_core::log::LogCertificate;
use logres_core::wire::{self, Frame, FrameType, SUBMIT_OK};

use crate::transport::{read_frame, write_frame};

/// A persistent client connection to one node.
pub struct ClientConn {
    stream: TcpStream,
}

impl ClientConn {
    pub fn connect(addr: &str, timeout: Duration) -> io::Result<ClientConn> {
        let sock: SocketAddr = addr
            .parse()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, format!("{addr}: {e}")))?;
        let stream = TcpStream::connect_timeout(&sock, timeout)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        Ok(ClientConn { stream })
    }

    /// Submits one entry; returns the node's status byte.
    pub fn submit(&mut self, entry: &[u8]) -> io::Result<u8> {
        write_frame(
            &mut self.stream,
            &Frame::new(FrameType::ClientSubmit, wire::encode_submit(entry)),
        )?;
        let reply = read_frame(&mut self.stream)?;
        if reply.ftype != FrameType::ClientSubmit || reply.body.len() != 1 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "malformed submit acknowledgement",
            ));
        }
        Ok(reply.body[0])
    }

    /// Fetches the most recently published certificate, if any.
    pub fn get_certificate(&mut self) -> io::Result<Option<LogCertificate>> {
        write_frame(
            &mut self.stream,
            &Frame::new(FrameType::GetCertificate, Vec::new()),
        )?;
        let reply = read_frame(&mut self.stream)?;
        if reply.ftype != FrameType::CertificateResponse {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "expected a certificate response",
            ));
        }
        wire::decode_certificate_response(&reply.body)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
    }
}

/// Submits an entry to each address (clients send every request to f+1
/// distinct nodes so at least one correct node receives it). Returns the
/// per-node outcome; `Ok(true)` means the node acknowledged acceptance.
pub fn submit(addrs: &[String], entry: &[u8], timeout: Duration) -> Vec<(String, io::Result<bool>)> {
    addrs
        .iter()
        .map(|addr| {
            let outcome = ClientConn::connect(addr, timeout)
                .and_then(|mut conn| conn.submit(entry))
                .map(|status| status == SUBMIT_OK);
            (addr.clone(), outcome)
        })
        .collect()
}

/// One-shot certificate fetch.
pub fn get_certificate(addr: &str, timeout: Duration) -> io::Result<Option<LogCertificate>> {
    ClientConn::connect(addr, timeout)?.get_certificate()
}
