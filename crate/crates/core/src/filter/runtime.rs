//! Round-synchronous message passing between filter nodes.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Interface data sent from `sender` to `receiver` for one consensus round:
/// the sender's estimates at the receiver's interface vertices after the
/// previous round and the round before it, and the matching covariance
/// diagonal (carried for diagnostics only).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMessage {
    pub sender: usize,
    pub receiver: usize,
    pub round: u64,
    pub current: Vec<f64>,
    pub previous: Vec<f64>,
    pub variances: Vec<f64>,
}

/// One logged delivery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub round: u64,
    pub sender: usize,
    pub receiver: usize,
    pub payload: usize,
}

/// Delivery boundary between the filter and whatever carries messages.
pub trait Transport {
    fn send(&mut self, msg: BoundaryMessage) -> Result<()>;

    /// Messages for `receiver` tagged `round`, exactly one from each of
    /// `senders`, in the order of `senders`.
    fn collect(&mut self, receiver: usize, round: u64, senders: &[usize]) -> Result<Vec<BoundaryMessage>>;
}

/// Per-node mailboxes in one address space.
#[derive(Debug, Default)]
pub struct InProcessTransport {
    mailboxes: Vec<Vec<BoundaryMessage>>,
    last_round: HashMap<(usize, usize), u64>,
    trace: Option<Vec<TraceEntry>>,
}

impl InProcessTransport {
    pub fn new(nodes: usize) -> Self {
        Self {
            mailboxes: vec![Vec::new(); nodes],
            last_round: HashMap::new(),
            trace: None,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn trace(&self) -> &[TraceEntry] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn pending(&self) -> usize {
        self.mailboxes.iter().map(Vec::len).sum()
    }
}

impl Transport for InProcessTransport {
    fn send(&mut self, msg: BoundaryMessage) -> Result<()> {
        if msg.receiver >= self.mailboxes.len() {
            return Err(Error::Protocol(format!("no node {}", msg.receiver)));
        }
        let key = (msg.sender, msg.receiver);
        if let Some(&last) = self.last_round.get(&key) {
            if msg.round <= last {
                return Err(Error::Protocol(format!(
                    "round tag {} from {} to {} does not increase (last {last})",
                    msg.round, msg.sender, msg.receiver
                )));
            }
        }
        self.last_round.insert(key, msg.round);
        if let Some(trace) = &mut self.trace {
            trace.push(TraceEntry {
                round: msg.round,
                sender: msg.sender,
                receiver: msg.receiver,
                payload: msg.current.len(),
            });
        }
        self.mailboxes[msg.receiver].push(msg);
        Ok(())
    }

    fn collect(&mut self, receiver: usize, round: u64, senders: &[usize]) -> Result<Vec<BoundaryMessage>> {
        let inbox = std::mem::take(&mut self.mailboxes[receiver]);
        let mut out = Vec::with_capacity(senders.len());
        for &j in senders {
            let mut found = inbox.iter().filter(|m| m.sender == j && m.round == round);
            let msg = found
                .next()
                .ok_or_else(|| Error::Protocol(format!("node {receiver} got no round-{round} message from {j}")))?;
            if found.next().is_some() {
                return Err(Error::Protocol(format!(
                    "node {receiver} got two round-{round} messages from {j}"
                )));
            }
            out.push(msg.clone());
        }
        if let Some(stray) = inbox.iter().find(|m| m.round != round || !senders.contains(&m.sender)) {
            return Err(Error::Protocol(format!(
                "node {receiver} got an unexpected message from {} for round {}",
                stray.sender, stray.round
            )));
        }
        Ok(out)
    }
}
