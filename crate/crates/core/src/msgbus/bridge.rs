//! Relays between the in-process bus and remote peers speaking the wire
//! protocol. Framing (TCP lines or WebSocket text messages) is left to the
//! caller; [`serve_tcp`] is the line-framed variant.

use std::sync::Arc;
use std::time::Duration;

use serde_json::json;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use uuid::Uuid;

use super::{decode_envelope, encode_envelope, Bus, BusError, Envelope, Kind, Queue, Subscription};

pub const ERROR_TOPIC: &str = "bridge/error";

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    /// Topics remote peers may publish on.
    pub inbound: Vec<String>,
    /// Topics relayed to remote peers.
    pub outbound: Vec<String>,
    pub service_timeout: Duration,
    pub queue_capacity: usize,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            inbound: vec!["hri/in".into()],
            outbound: vec![
                "hri/out".into(),
                "mission/status".into(),
                "world/snapshot".into(),
            ],
            service_timeout: Duration::from_secs(5),
            queue_capacity: super::DEFAULT_QUEUE_CAPACITY,
        }
    }
}

impl Bus {
    /// One queue fed by several topics, preserving arrival order across them.
    pub fn subscribe_many(
        &self,
        topics: &[String],
        capacity: usize,
    ) -> Result<Subscription, BusError> {
        if capacity == 0 {
            return Err(BusError::InvalidCapacity);
        }
        for t in topics {
            super::validate_topic(t)?;
        }
        let queue = Queue::new(capacity);
        {
            let mut reg = self.inner.registry.lock();
            for t in topics {
                reg.topics
                    .entry(t.clone())
                    .or_default()
                    .push(Arc::downgrade(&queue));
            }
        }
        Ok(Subscription {
            topic: topics.join(","),
            queue,
        })
    }
}

/// Per-connection relay state.
pub struct BridgeSession {
    bus: Bus,
    cfg: BridgeConfig,
    outbound: Subscription,
}

impl BridgeSession {
    pub fn open(bus: Bus, cfg: BridgeConfig) -> Result<Self, BusError> {
        let outbound = bus.subscribe_many(&cfg.outbound, cfg.queue_capacity)?;
        Ok(Self { bus, cfg, outbound })
    }

    /// Next envelope to forward to the peer.
    pub async fn next_outbound(&self) -> Envelope {
        self.outbound.recv().await
    }

    /// Processes one inbound frame and returns the frames to send back.
    pub async fn handle_frame(&self, frame: &[u8]) -> Vec<Envelope> {
        let env = match decode_envelope(frame) {
            Ok(e) => e,
            Err(e) => return vec![error_frame(&e.to_string())],
        };
        match env.kind {
            Kind::Pub => {
                if !self.cfg.inbound.contains(&env.topic) {
                    return vec![error_frame(&format!(
                        "publishing on {:?} is not allowed",
                        env.topic
                    ))];
                }
                match self.bus.publish(&env.topic, env.payload) {
                    Ok(_) => Vec::new(),
                    Err(e) => vec![error_frame(&e.to_string())],
                }
            }
            Kind::SrvReq => {
                let payload = match self
                    .bus
                    .call_service(&env.topic, env.payload, self.cfg.service_timeout)
                    .await
                {
                    Ok(v) => v,
                    Err(e) => json!({ "error": e.to_string() }),
                };
                vec![Envelope {
                    version: super::WIRE_VERSION,
                    kind: Kind::SrvRes,
                    id: Uuid::new_v4(),
                    topic: env.topic,
                    corr: Some(env.id),
                    ts: self.bus.now_ms(),
                    payload,
                }]
            }
            other => vec![error_frame(&format!(
                "{} frames are not accepted from remote peers",
                other.as_str()
            ))],
        }
    }
}

pub fn error_frame(msg: &str) -> Envelope {
    Envelope {
        version: super::WIRE_VERSION,
        kind: Kind::Pub,
        id: Uuid::new_v4(),
        topic: ERROR_TOPIC.to_string(),
        corr: None,
        ts: 0,
        payload: json!({ "error": msg }),
    }
}

/// Serves newline-delimited frames on every accepted TCP connection.
pub async fn serve_tcp(bus: Bus, listener: TcpListener, cfg: BridgeConfig) -> std::io::Result<()> {
    loop {
        let (stream, _) = listener.accept().await?;
        let session = match BridgeSession::open(bus.clone(), cfg.clone()) {
            Ok(s) => Arc::new(s),
            Err(e) => return Err(std::io::Error::other(e.to_string())),
        };
        tokio::spawn(async move {
            let (rd, mut wr) = stream.into_split();
            let (tx, mut rx) = mpsc::unbounded_channel::<Envelope>();
            let out = session.clone();
            let tx_out = tx.clone();
            let forward = tokio::spawn(async move {
                loop {
                    let e = out.next_outbound().await;
                    if tx_out.send(e).is_err() {
                        break;
                    }
                }
            });
            let writer = tokio::spawn(async move {
                while let Some(e) = rx.recv().await {
                    if wr.write_all(&encode_envelope(&e)).await.is_err() {
                        break;
                    }
                }
            });
            let mut lines = BufReader::new(rd).lines();
            while let Ok(Some(line)) = lines.next_line().await {
                if line.trim().is_empty() {
                    continue;
                }
                for reply in session.handle_frame(line.as_bytes()).await {
                    let _ = tx.send(reply);
                }
            }
            forward.abort();
            drop(tx);
            let _ = writer.await;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msgbus::encode_envelope_string;
    use serde_json::Value;

    fn frame(kind: Kind, topic: &str, payload: Value) -> Vec<u8> {
        encode_envelope(&Envelope {
            version: 1,
            kind,
            id: Uuid::from_u128(1),
            topic: topic.into(),
            corr: None,
            ts: 0,
            payload,
        })
    }

    #[tokio::test]
    async fn chat_frame_is_republished() {
        let bus = Bus::new();
        let inbox = bus.subscribe("hri/in", 8).unwrap();
        let s = BridgeSession::open(bus.clone(), BridgeConfig::default()).unwrap();
        let replies = s
            .handle_frame(&frame(
                Kind::Pub,
                "hri/in",
                json!({"text": "Navigate to the chair"}),
            ))
            .await;
        assert!(replies.is_empty());
        let got = inbox.drain();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].payload["text"], "Navigate to the chair");
    }

    #[tokio::test]
    async fn malformed_and_disallowed_frames_get_errors() {
        let bus = Bus::new();
        let s = BridgeSession::open(bus, BridgeConfig::default()).unwrap();
        let r = s.handle_frame(b"{not json").await;
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].topic, ERROR_TOPIC);
        let r = s
            .handle_frame(&frame(Kind::Pub, "mission/status", json!({})))
            .await;
        assert!(r[0].payload["error"]
            .as_str()
            .unwrap()
            .contains("not allowed"));
    }

    #[tokio::test]
    async fn service_request_round_trip() {
        let bus = Bus::new();
        let _reg = bus.register_service_fn("echo", Ok).unwrap();
        let s = BridgeSession::open(bus, BridgeConfig::default()).unwrap();
        let r = s
            .handle_frame(&frame(Kind::SrvReq, "echo", json!({"x": 1})))
            .await;
        assert_eq!(r[0].kind, Kind::SrvRes);
        assert_eq!(r[0].corr, Some(Uuid::from_u128(1)));
        assert_eq!(r[0].payload, json!({"x": 1}));
    }

    #[tokio::test]
    async fn outbound_topics_are_merged_in_order() {
        let bus = Bus::new();
        let s = BridgeSession::open(bus.clone(), BridgeConfig::default()).unwrap();
        bus.publish("mission/status", json!(1)).unwrap();
        bus.publish("hri/out", json!(2)).unwrap();
        bus.publish("hri/in", json!(3)).unwrap();
        assert_eq!(s.next_outbound().await.payload, json!(1));
        assert_eq!(s.next_outbound().await.payload, json!(2));
        assert!(s.outbound.is_empty());
    }

    #[tokio::test]
    async fn tcp_loopback() {
        let bus = Bus::new();
        let inbox = bus.subscribe("hri/in", 8).unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(serve_tcp(bus.clone(), listener, BridgeConfig::default()));
        let stream = tokio::net::TcpStream::connect(addr).await.unwrap();
        let (rd, mut wr) = stream.into_split();
        let mut lines = BufReader::new(rd).lines();
        wr.write_all(b"garbage\n").await.unwrap();
        let err = decode_envelope(lines.next_line().await.unwrap().unwrap().as_bytes()).unwrap();
        assert_eq!(err.topic, ERROR_TOPIC);
        wr.write_all(&frame(Kind::Pub, "hri/in", json!({"text": "hi"})))
            .await
            .unwrap();
        let got = inbox.recv_timeout(Duration::from_secs(5)).await.unwrap();
        assert_eq!(got.payload["text"], "hi");
        let sent = bus.make_envelope(Kind::Pub, "hri/out", None, json!({"text": "hello"}));
        bus.publish("hri/out", sent.payload.clone()).unwrap();
        let line = lines.next_line().await.unwrap().unwrap();
        let back = decode_envelope(line.as_bytes()).unwrap();
        assert_eq!(back.payload, sent.payload);
        assert!(encode_envelope_string(&back).ends_with('\n'));
    }
}
