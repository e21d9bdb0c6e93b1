//! Framed TCP transport: blocking frame I/O, an accept loop feeding the
//! node's event queue, and per-peer sender threads with reconnect and
//! optional link-delay emulation.
//!
//! Frames are length-prefixed; anything that fails to parse poisons the
//! connection, which is dropped whole and re-established on demand. An
//! unreachable peer is indistinguishable from a faulty one: frames to it
//! are silently discarded and the protocol's fault tolerance absorbs the
//! loss.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, Sender, SyncSender};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::Duration;

use logres_core::wire::{Frame, FrameType, MAX_FRAME_BYTES};

const CONNECT_TIMEOUT: Duration = Duration::from_millis(250);

pub fn read_frame(stream: &mut TcpStream) -> io::Result<Frame> {
    let mut len_buf = [0u8; 4];
    stream.read_exact(&mut len_buf)?;
    let len = u32::from_be_bytes(len_buf) as usize;
    if len == 0 || len > MAX_FRAME_BYTES {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame length {len} out of range"),
        ));
    }
    let mut payload = vec![0u8; len];
    stream.read_exact(&mut payload)?;
    let ftype = FrameType::from_byte(payload[0])
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    Ok(Frame {
        ftype,
        body: payload[1..].to_vec(),
    })
}

pub fn write_frame(stream: &mut TcpStream, frame: &Frame) -> io::Result<()> {
    stream.write_all(&frame.encode())
}

/// Handle for answering a client on the connection its request came from.
#[derive(Clone)]
pub struct Replier {
    stream: Arc<Mutex<TcpStream>>,
}

impl Replier {
    pub fn send(&self, frame: &Frame) {
        if let Ok(mut stream) = self.stream.lock() {
            let _ = write_frame(&mut stream, frame);
        }
    }
}

/// An inbound frame together with its reply handle.
pub struct Inbound {
    pub frame: Frame,
    pub replier: Replier,
}

/// Binds the listener and pumps every inbound frame into `events`.
/// Returns the bound address (useful with port 0 in tests).
pub fn spawn_listener(
    bind: &str,
    events: SyncSender<Inbound>,
    shutdown: Arc<AtomicBool>,
) -> io::Result<SocketAddr> {
    let listener = TcpListener::bind(bind)?;
    let addr = listener.local_addr()?;
    thread::Builder::new()
        .name(format!("logres-accept-{addr}"))
        .spawn(move || {
            for conn in listener.incoming() {
                if shutdown.load(Ordering::Relaxed) {
                    return;
                }
                let Ok(stream) = conn else { continue };
                let _ = stream.set_nodelay(true);
                let events = events.clone();
                let shutdown = shutdown.clone();
                thread::Builder::new()
                    .name("logres-conn".into())
                    .spawn(move || read_loop(stream, events, shutdown))
                    .ok();
            }
        })?;
    Ok(addr)
}

fn read_loop(stream: TcpStream, events: SyncSender<Inbound>, shutdown: Arc<AtomicBool>) {
    let replier = Replier {
        stream: Arc::new(Mutex::new(match stream.try_clone() {
            Ok(s) => s,
            Err(_) => return,
        })),
    };
    let mut reader = stream;
    loop {
        if shutdown.load(Ordering::Relaxed) {
            return;
        }
        match read_frame(&mut reader) {
            Ok(frame) => {
                if events
                    .send(Inbound {
                        frame,
                        replier: replier.clone(),
                    })
                    .is_err()
                {
                    return;
                }
            }
            // corrupted or closed: drop the whole connection
            Err(_) => return,
        }
    }
}

/// Outbound link to one peer: frames are queued and written by a
/// dedicated thread that reconnects on demand and, when configured,
/// sleeps `link_delay` before each write to emulate link latency.
pub struct PeerLink {
    tx: Sender<Frame>,
}

impl PeerLink {
    pub fn spawn(addr: String, link_delay: Duration, shutdown: Arc<AtomicBool>) -> PeerLink {
        let (tx, rx): (Sender<Frame>, Receiver<Frame>) = mpsc::channel();
        thread::Builder::new()
            .name(format!("logres-peer-{addr}"))
            .spawn(move || {
                let mut conn: Option<TcpStream> = None;
                while let Ok(frame) = rx.recv() {
                    if shutdown.load(Ordering::Relaxed) {
                        return;
                    }
                    if !link_delay.is_zero() {
                        thread::sleep(link_delay);
                    }
                    if conn.is_none() {
                        conn = connect(&addr);
                    }
                    if let Some(stream) = conn.as_mut() {
                        if write_frame(stream, &frame).is_err() {
                            // one reconnect attempt per frame; a dead peer
                            // costs us exactly the frames sent while it is
                            // down, which the protocol tolerates
                            conn = connect(&addr);
                            if let Some(stream) = conn.as_mut() {
                                if write_frame(stream, &frame).is_err() {
                                    conn = None;
                                }
                            }
                        }
                    }
                }
            })
            .expect("spawn peer link");
        PeerLink { tx }
    }

    /// Best effort; a full or closed queue means the peer is treated as
    /// silent.
    pub fn send(&self, frame: Frame) {
        let _ = self.tx.send(frame);
    }
}

fn connect(addr: &str) -> Option<TcpStream> {
    let sock_addr: SocketAddr = addr.parse().ok()?;
    let stream = TcpStream::connect_timeout(&sock_addr, CONNECT_TIMEOUT).ok()?;
    stream.set_nodelay(true).ok();
    Some(stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::mpsc::sync_channel;

    #[test]
    fn frames_roundtrip_over_loopback() {
        let shutdown = Arc::new(AtomicBool::new(false));
        let (tx, rx) = sync_channel(16);
        let addr = spawn_listener("127.0.0.1:0", tx, shutdown.clone()).unwrap();

        let mut client = TcpStream::connect(addr).unwrap();
        let frame = Frame::new(FrameType::ClientSubmit, vec![1, 2, 3]);
        write_frame(&mut client, &frame).unwrap();
        let inbound = rx.recv_timeout(Duration::from_secs(2)).unwrap();
        assert_eq!(inbound.frame, frame);

        // replies travel back on the same connection
        let reply = Frame::new(FrameType::ClientSubmit, vec![0]);
        inbound.replier.send(&reply);
        assert_eq!(read_frame(&mut client).unwrap(), reply);
        shutdown.store(true, Ordering::Relaxed);
    }

    #[test]
    fn corrupt_frame_drops_connection() {
        let shutdown = Arc::new(AtomicBool::new(false));
        let (tx, rx) = sync_channel(16);
        let addr = spawn_listener("127.0.0.1:0", tx, shutdown.clone()).unwrap();

        let mut client = TcpStream::connect(addr).unwrap();
        // a valid frame, then garbage with an unknown type byte
        write_frame(
            &mut client,
            &Frame::new(FrameType::GetCertificate, Vec::new()),
        )
        .unwrap();
        client.write_all(&[0, 0, 0, 1, 0x7F]).unwrap();
        // the valid one arrives, then the reader gives up on the stream
        assert!(rx.recv_timeout(Duration::from_secs(2)).is_ok());
        assert!(rx.recv_timeout(Duration::from_millis(300)).is_err());
        shutdown.store(true, Ordering::Relaxed);
    }

    #[test]
    fn peer_link_survives_unreachable_peer() {
        let shutdown = Arc::new(AtomicBool::new(false));
        // nothing listens here; frames are dropped without blocking
        let link = PeerLink::spawn(
            "127.0.0.1:1".to_string(),
            Duration::ZERO,
            shutdown.clone(),
        );
        for _ in 0..3 {
            link.send(Frame::new(FrameType::GetCertificate, Vec::new()));
        }
        shutdown.store(true, Ordering::Relaxed);
    }
}
