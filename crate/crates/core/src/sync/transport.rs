//! Drivers that run a [`SyncSession`] over byte streams.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::thread;
use std::time::Duration;

use crossbeam_channel::{Receiver, Sender};

use super::frame::{Frame, FrameError};
use super::session::{SessionConfig, SessionReport, SyncSession};
use crate::cache::CacheStore;

/// Runs one session to completion. Frames are read on a helper thread so
/// that both directions make progress while this thread writes.
pub fn run_session<R, W>(
    reader: R,
    mut writer: W,
    cache: &CacheStore,
    now: u64,
    config: SessionConfig,
) -> SessionReport
where
    R: Read + Send + 'static,
    W: Write,
{
    let (tx, rx) = crossbeam_channel::unbounded();
    thread::spawn(move || read_loop(reader, tx));

    let mut session = SyncSession::new(cache.clone(), now, config);
    let mut outgoing = session.start();
    loop {
        for frame in outgoing.drain(..) {
            if let Err(e) = frame.write_to(&mut writer).and_then(|_| writer.flush()) {
                session.abort(format!("channel write failed: {e}"));
                return session.report();
            }
            session.record_sent(&frame);
        }
        if session.is_finished() {
            return session.report();
        }
        match rx.recv() {
            Ok(Ok(frame)) => outgoing = session.handle(frame),
            Ok(Err(e)) => {
                session.abort(format!("channel read failed: {e}"));
                return session.report();
            }
            Err(_) => {
                session.abort("channel closed");
                return session.report();
            }
        }
    }
}

fn read_loop<R: Read>(mut reader: R, tx: Sender<Result<Frame, FrameError>>) {
    loop {
        match Frame::read_from(&mut reader) {
            Ok(Some(frame)) => {
                if tx.send(Ok(frame)).is_err() {
                    return;
                }
            }
            Ok(None) => return,
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        }
    }
}

/// Runs a session over a TCP connection and closes it afterwards.
pub fn run_tcp_session(
    stream: TcpStream,
    cache: &CacheStore,
    now: u64,
    config: SessionConfig,
    idle_timeout: Duration,
) -> io::Result<SessionReport> {
    stream.set_read_timeout(Some(idle_timeout))?;
    stream.set_nodelay(true)?;
    let reader = stream.try_clone()?;
    let report = run_session(reader, io::BufWriter::new(&stream), cache, now, config);
    let _ = stream.shutdown(Shutdown::Both);
    Ok(report)
}

/// Write half of an in-memory byte pipe.
pub struct PipeWriter {
    tx: Option<Sender<Vec<u8>>>,
    budget: Option<usize>,
}

/// Read half of an in-memory byte pipe.
pub struct PipeReader {
    rx: Receiver<Vec<u8>>,
    buf: VecDeque<u8>,
}

/// Creates a one-directional in-memory pipe. With a byte budget the pipe
/// delivers at most that many bytes and then breaks, cutting any frame in
/// flight, which models a contact ending mid-transfer.
pub fn pipe(budget: Option<usize>) -> (PipeWriter, PipeReader) {
    let (tx, rx) = crossbeam_channel::unbounded();
    (PipeWriter { tx: Some(tx), budget }, PipeReader { rx, buf: VecDeque::new() })
}

impl Write for PipeWriter {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        let Some(tx) = &self.tx else {
            return Err(io::ErrorKind::BrokenPipe.into());
        };
        if data.is_empty() {
            return Ok(0);
        }
        let allowed = self.budget.map_or(data.len(), |b| b.min(data.len()));
        if allowed == 0 {
            self.tx = None;
            return Err(io::ErrorKind::BrokenPipe.into());
        }
        if tx.send(data[..allowed].to_vec()).is_err() {
            self.tx = None;
            return Err(io::ErrorKind::BrokenPipe.into());
        }
        if let Some(b) = &mut self.budget {
            *b -= allowed;
        }
        Ok(allowed)
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Read for PipeReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if out.is_empty() {
            return Ok(0);
        }
        while self.buf.is_empty() {
            match self.rx.recv() {
                Ok(chunk) => self.buf.extend(chunk),
                Err(_) => return Ok(0),
            }
        }
        let n = out.len().min(self.buf.len());
        for (slot, byte) in out.iter_mut().zip(self.buf.drain(..n)) {
            *slot = byte;
        }
        Ok(n)
    }
}

/// Runs a session between two local caches over in-memory pipes, each on
/// its own thread. `budget_ab` / `budget_ba` cap the bytes each direction
/// carries before the link breaks.
pub fn run_local_pair(
    a: &CacheStore,
    a_config: SessionConfig,
    b: &CacheStore,
    b_config: SessionConfig,
    now: u64,
    budget_ab: Option<usize>,
    budget_ba: Option<usize>,
) -> (SessionReport, SessionReport) {
    let (a_tx, b_rx) = pipe(budget_ab);
    let (b_tx, a_rx) = pipe(budget_ba);
    thread::scope(|s| {
        let peer = s.spawn(|| run_session(b_rx, b_tx, b, now, b_config));
        let ours = run_session(a_rx, a_tx, a, now, a_config);
        (ours, peer.join().expect("peer session panicked"))
    })
}
