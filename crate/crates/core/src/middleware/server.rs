use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::{CoreStub, Middleware};
use crate::records::now_ms;
use crate::wire::{Frame, FrameHandler};

const POLL: Duration = Duration::from_millis(50);

#[derive(Clone, Copy, Debug)]
pub struct ServeOptions {
    /// How often complete applications are forwarded to core and decided.
    /// `None` leaves that to the caller.
    pub core_interval: Option<Duration>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            core_interval: Some(Duration::from_millis(200)),
        }
    }
}

/// A running middleware listener. Dropping it shuts the server down.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    core: Arc<Mutex<CoreStub>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn core(&self) -> Arc<Mutex<CoreStub>> {
        Arc::clone(&self.core)
    }

    /// Stop accepting, let open sessions finish their current frame, and wait.
    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    /// Block until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

/// Listen on `addr` and serve each connection on its own thread.
/// Every store mutation is written through before it is acknowledged.
pub fn serve(
    addr: impl ToSocketAddrs,
    mw: Arc<Middleware>,
    core: CoreStub,
    opts: ServeOptions,
) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let core = Arc::new(Mutex::new(core));
    let acceptor = {
        let stop = Arc::clone(&stop);
        let core = Arc::clone(&core);
        thread::spawn(move || accept_loop(listener, mw, core, stop, opts))
    };
    Ok(ServerHandle {
        addr: local,
        stop,
        acceptor: Some(acceptor),
        core,
    })
}

fn accept_loop(
    listener: TcpListener,
    mw: Arc<Middleware>,
    core: Arc<Mutex<CoreStub>>,
    stop: Arc<AtomicBool>,
    opts: ServeOptions,
) {
    let mut sessions: Vec<JoinHandle<()>> = Vec::new();
    let mut last_tick = Instant::now();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let mw = Arc::clone(&mw);
                let stop = Arc::clone(&stop);
                sessions.push(thread::spawn(move || {
                    let _ = connection(stream, &mw, &stop);
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(_) => thread::sleep(POLL),
        }
        sessions.retain(|h| !h.is_finished());
        if let Some(every) = opts.core_interval {
            if last_tick.elapsed() >= every {
                last_tick = Instant::now();
                let mut core = core.lock().unwrap_or_else(|e| e.into_inner());
                let _ = mw.forward_to_core(&mut core);
                let _ = mw.core_decide(&mut core);
            }
        }
    }
    for h in sessions {
        let _ = h.join();
    }
}

fn connection(mut stream: TcpStream, mw: &Arc<Middleware>, stop: &AtomicBool) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL * 2))?;
    let mut session = mw.session();
    let mut buf = Vec::new();
    let mut tmp = [0u8; 16 * 1024];
    loop {
        loop {
            let (reply, used) = match Frame::try_decode(&buf) {
                Ok(Some((frame, used))) => (session.handle(frame, now_ms()), used),
                Ok(None) => break,
                Err(e) => (session.malformed(&e), buf.len()),
            };
            buf.drain(..used);
            for f in &reply.frames {
                stream.write_all(&f.encode())?;
            }
            if reply.close {
                return Ok(());
            }
        }
        if stop.load(Ordering::SeqCst) {
            return Ok(());
        }
        match stream.read(&mut tmp) {
            Ok(0) => return Ok(()),
            Ok(n) => buf.extend_from_slice(&tmp[..n]),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
    }
}
