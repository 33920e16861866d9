//! The bus message unit and its newline-delimited JSON frame codec.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use uuid::Uuid;

pub const WIRE_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Pub,
    SrvReq,
    SrvRes,
    ActGoal,
    ActAccept,
    ActFeedback,
    ActResult,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Pub,
        Kind::SrvReq,
        Kind::SrvRes,
        Kind::ActGoal,
        Kind::ActAccept,
        Kind::ActFeedback,
        Kind::ActResult,
    ];

    /// Reply kinds carry `corr`; originating kinds must not.
    pub fn is_reply(self) -> bool {
        matches!(
            self,
            Kind::SrvRes | Kind::ActAccept | Kind::ActFeedback | Kind::ActResult
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Pub => "pub",
            Kind::SrvReq => "srv_req",
            Kind::SrvRes => "srv_res",
            Kind::ActGoal => "act_goal",
            Kind::ActAccept => "act_accept",
            Kind::ActFeedback => "act_feedback",
            Kind::ActResult => "act_result",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub version: u8,
    pub kind: Kind,
    pub id: Uuid,
    pub topic: String,
    pub corr: Option<Uuid>,
    /// Sender clock, milliseconds since the epoch.
    pub ts: u64,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid topic {0:?}")]
pub struct InvalidTopic(pub String);

/// Non-empty `/`-separated segments of `[a-z0-9_]`.
pub fn validate_topic(topic: &str) -> Result<(), InvalidTopic> {
    let ok = !topic.is_empty()
        && topic.split('/').all(|seg| {
            !seg.is_empty()
                && seg
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        });
    if ok {
        Ok(())
    } else {
        Err(InvalidTopic(topic.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Wire {
    v: u8,
    kind: Kind,
    id: Uuid,
    topic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    corr: Option<Uuid>,
    ts: u64,
    payload: Value,
}

impl Envelope {
    /// Checks the corr/kind pairing, the version and the topic grammar.
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.version != WIRE_VERSION {
            return Err(CodecError::MalformedFrame(format!(
                "unsupported version {}",
                self.version
            )));
        }
        validate_topic(&self.topic).map_err(|e| CodecError::MalformedFrame(e.to_string()))?;
        match (self.kind.is_reply(), self.corr.is_some()) {
            (true, false) => Err(CodecError::MalformedFrame(format!(
                "{} requires corr",
                self.kind.as_str()
            ))),
            (false, true) => Err(CodecError::MalformedFrame(format!(
                "{} must not carry corr",
                self.kind.as_str()
            ))),
            _ => Ok(()),
        }
    }

    /// JSON document form (the frame body without its trailing newline).
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self.wire()).expect("envelope serializes")
    }

    fn wire(&self) -> Wire {
        Wire {
            v: self.version,
            kind: self.kind,
            id: self.id,
            topic: self.topic.clone(),
            corr: self.corr,
            ts: self.ts,
            payload: self.payload.clone(),
        }
    }
}

/// One frame: compact JSON followed by `\n`.
pub fn encode_envelope(e: &Envelope) -> Vec<u8> {
    let mut out = serde_json::to_vec(&e.wire()).expect("envelope serializes");
    out.push(b'\n');
    out
}

pub fn encode_envelope_string(e: &Envelope) -> String {
    String::from_utf8(encode_envelope(e)).expect("json is utf-8")
}

/// Decodes a single frame; the trailing newline is optional.
pub fn decode_envelope(bytes: &[u8]) -> Result<Envelope, CodecError> {
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let body = body.strip_suffix(b"\r").unwrap_or(body);
    if body.contains(&b'\n') {
        return Err(CodecError::MalformedFrame(
            "frame spans several lines".into(),
        ));
    }
    let text = std::str::from_utf8(body)
        .map_err(|e| CodecError::MalformedFrame(format!("not utf-8: {e}")))?;
    let wire: Wire =
        serde_json::from_str(text).map_err(|e| CodecError::MalformedFrame(e.to_string()))?;
    let env = Envelope {
        version: wire.v,
        kind: wire.kind,
        id: wire.id,
        topic: wire.topic,
        corr: wire.corr,
        ts: wire.ts,
        payload: wire.payload,
    };
    env.validate()?;
    Ok(env)
}
