//! Radio message catalog and its versioned wire codec.
//!
//! | kind        | fields                                              |
//! |-------------|-----------------------------------------------------|
//! | PROFILE     | interests, budget, reply                            |
//! | DIGEST      | entries (item id, held version + fingerprint or tombstone) |
//! | ITEMS       | item                                                |
//! | SYNC_QUERY  | query, selector, ttl, deadline                      |
//! | SYNC_REPLY  | query, items                                        |
//! | ASRQ        | routed envelope carrying an ASRQ and its market     |
//! | CHUNK       | routed envelope carrying a result chunk and the initiator's plan |
//! | PUB         | routed envelope carrying a publication              |
//! | PROBE       | routed envelope without application payload         |
//! | ACK         | msg                                                 |
//! | MKT_ADV     | descriptors                                         |
//! | SUP_LOOKUP  | (empty)                                             |

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ads::{Asrq, Category, DigestEntry, InfoItem, ItemId, ResultChunk, Selector, SyncQueryId};
use crate::kernel::Wire;
use crate::market::{MarketDescriptor, MarketId};
use crate::plan::MovementPlan;
use crate::routing::{MsgId, RoutedMessage};

pub const CODEC_VERSION: u32 = 1;

/// Application payload of a geographically routed message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RoutedPayload {
    Publish { item: InfoItem, market: MarketId },
    Asrq { asrq: Asrq, market: MarketId },
    /// The initiator's plan rides along so carriers can re-target.
    Chunk { chunk: ResultChunk, plan: MovementPlan },
    Probe,
}

impl RoutedPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            RoutedPayload::Publish { .. } => "PUB",
            RoutedPayload::Asrq { .. } => "ASRQ",
            RoutedPayload::Chunk { .. } => "CHUNK",
            RoutedPayload::Probe => "PROBE",
        }
    }
}

pub type Routed = RoutedMessage<RoutedPayload>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Message {
    Profile { interests: BTreeSet<Category>, budget: usize, reply: bool },
    Digest { entries: Vec<(ItemId, DigestEntry)> },
    Items { item: InfoItem },
    SyncQuery { query: SyncQueryId, selector: Selector, ttl: u32, deadline: f64 },
    SyncReply { query: SyncQueryId, items: Vec<InfoItem> },
    Routed(Box<Routed>),
    Ack { msg: MsgId },
    MarketAdv { descriptors: Vec<MarketDescriptor> },
    SupLookup,
}

impl Wire for Message {
    fn kind(&self) -> &'static str {
        match self {
            Message::Profile { .. } => "PROFILE",
            Message::Digest { .. } => "DIGEST",
            Message::Items { .. } => "ITEMS",
            Message::SyncQuery { .. } => "SYNC_QUERY",
            Message::SyncReply { .. } => "SYNC_REPLY",
            Message::Routed(r) => r.payload.kind(),
            Message::Ack { .. } => "ACK",
            Message::MarketAdv { .. } => "MKT_ADV",
            Message::SupLookup => "SUP_LOOKUP",
        }
    }
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("unsupported codec version {0}")]
    Version(u32),
    #[error("malformed frame: {0}")]
    Malformed(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
struct Frame<M> {
    v: u32,
    msg: M,
}

pub fn encode(msg: &Message) -> Vec<u8> {
    serde_json::to_vec(&Frame { v: CODEC_VERSION, msg }).expect("messages always serialize")
}

pub fn decode(bytes: &[u8]) -> Result<Message, CodecError> {
    #[derive(Deserialize)]
    struct Header {
        v: u32,
    }
    let h: Header = serde_json::from_slice(bytes)?;
    if h.v != CODEC_VERSION {
        return Err(CodecError::Version(h.v));
    }
    let f: Frame<Message> = serde_json::from_slice(bytes)?;
    Ok(f.msg)
}
