//! Websocket transport for [`Session`]: one thread and one kernel per
//! connection, commands handled strictly in arrival order.

use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use lgs_core::config::ModelConfig;
use lgs_core::model::Preset;
use tungstenite::error::ProtocolError;
use tungstenite::{Message, WebSocket};

use crate::session::{ErrorCode, ServerMessage, Session};

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub preset: Preset,
    pub config: ModelConfig,
    /// Pause between automatic macro-cycles while a session is running.
    pub tick: Duration,
    pub start_paused: bool,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            preset: Preset::Ground,
            config: ModelConfig::default(),
            tick: Duration::from_millis(200),
            start_paused: false,
        }
    }
}

/// Accepts connections forever. A failing session is logged and dropped;
/// it never takes the server down.
pub fn serve(listener: TcpListener, opts: ServeOptions) -> std::io::Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                eprintln!("accept failed: {e}");
                continue;
            }
        };
        let opts = opts.clone();
        thread::spawn(move || {
            let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
            if let Err(e) = run_connection(stream, &opts) {
                eprintln!("session {peer}: {e}");
            }
        });
    }
    Ok(())
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> tungstenite::Result<()> {
    ws.send(Message::text(msg.to_json()))
}

fn run_connection(stream: TcpStream, opts: &ServeOptions) -> tungstenite::Result<()> {
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_ref().set_read_timeout(Some(opts.tick.max(Duration::from_millis(1))))?;
    let mut session = Session::new(opts.preset, opts.config.clone());
    session.paused = opts.start_paused;
    send(&mut ws, &session.push())?;
    loop {
        match ws.read() {
            Ok(Message::Text(text)) => {
                let reply = match session.handle_text(text.as_str()) {
                    Ok(()) => session.push(),
                    Err(e) => e.into_message(),
                };
                send(&mut ws, &reply)?;
            }
            Ok(Message::Binary(_)) => {
                let err = ServerMessage::Error {
                    code: ErrorCode::BadMessage,
                    detail: "binary frames are not accepted".into(),
                };
                send(&mut ws, &err)?;
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if !session.paused && !session.is_quiescent() {
                    session.run_cycle();
                    send(&mut ws, &session.push())?;
                }
            }
            Err(
                tungstenite::Error::ConnectionClosed
                | tungstenite::Error::AlreadyClosed
                | tungstenite::Error::Protocol(ProtocolError::ResetWithoutClosingHandshake),
            ) => return Ok(()),
            Err(e) => return Err(e),
        }
    }
}
