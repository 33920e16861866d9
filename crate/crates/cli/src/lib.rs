//! WebSocket transport for the bus bridge: one text message per envelope.

use futures::{SinkExt, StreamExt};
use rai_core::msgbus::bridge::{BridgeConfig, BridgeSession};
use rai_core::msgbus::{encode_envelope_string, Bus, Envelope};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;

fn frame(e: &Envelope) -> Message {
    Message::text(encode_envelope_string(e).trim_end())
}

async fn session(stream: TcpStream, session: BridgeSession) {
    let Ok(ws) = tokio_tungstenite::accept_async(stream).await else {
        return;
    };
    let (mut tx, mut rx) = ws.split();
    loop {
        tokio::select! {
            biased;
            msg = rx.next() => {
                let data = match msg {
                    Some(Ok(m @ (Message::Text(_) | Message::Binary(_)))) => m.into_data(),
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                    Some(Ok(_)) => continue,
                };
                for reply in session.handle_frame(&data).await {
                    if tx.send(frame(&reply)).await.is_err() {
                        return;
                    }
                }
            }
            env = session.next_outbound() => {
                if tx.send(frame(&env)).await.is_err() {
                    return;
                }
            }
        }
    }
}

/// Accepts WebSocket connections on `listener` until it fails.
pub async fn serve_ws(bus: Bus, listener: TcpListener, cfg: BridgeConfig) -> std::io::Result<()> {
    loop {
        let (stream, _) = listener.accept().await?;
        let s = BridgeSession::open(bus.clone(), cfg.clone())
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        tokio::spawn(session(stream, s));
    }
}
