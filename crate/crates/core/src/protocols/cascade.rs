//! Cascade error reconciliation.
//!
//! The receiver drives the exchange and corrects its key toward the sender's.
//! Pass 1 uses blocks of `k1 = clamp(ceil(coefficient / max(qber, 1/n)), 1, n)`
//! bits in key order; every later pass doubles the block size and works on a
//! permutation whose seed the sender announces. The sender discloses one
//! parity per block at the start of a pass and one parity per step of a
//! binary search. Each correction re-opens every block, in any pass so far,
//! that contains the corrected bit and now has odd relative parity.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{bits_from_str, bits_to_string, QBER_ESTIMATE, RECONCILED_KEY, SIFTED_KEY};
use crate::framework::{ParamSpec, RoleContext, RoleError, RoleExit, RoleFuture, RoleSpec};
use crate::rng::RandomStream;

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeParams {
    pub passes: u32,
    pub block_coefficient: f64,
}

impl Default for CascadeParams {
    fn default() -> Self {
        Self {
            passes: 4,
            block_coefficient: 0.73,
        }
    }
}

impl CascadeParams {
    fn from_context(ctx: &RoleContext) -> Self {
        let d = Self::default();
        let p = ctx.params();
        Self {
            passes: p.f64("passes").map_or(d.passes, |x| x as u32),
            block_coefficient: p.f64("block_coefficient").unwrap_or(d.block_coefficient),
        }
    }
}

/// What one side knows after reconciliation.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconciliationRecord {
    pub corrected_bits: Vec<u8>,
    /// Parity bits disclosed over the classical channel.
    pub leaked_bits: u64,
    pub corrections_made: u64,
    pub corrections_per_pass: Vec<u64>,
}

impl ReconciliationRecord {
    fn publish(&self, ctx: &RoleContext, initial_block: usize) {
        let key = bits_to_string(&self.corrected_bits);
        ctx.blackboard_put(RECONCILED_KEY, json!(key));
        ctx.output(RECONCILED_KEY, json!(key));
        ctx.output("corrections_per_pass", json!(self.corrections_per_pass));
        ctx.metric("leaked_bits", self.leaked_bits as f64);
        ctx.metric("corrections_made", self.corrections_made as f64);
        ctx.metric("key_length", self.corrected_bits.len() as f64);
        ctx.metric("initial_block_size", initial_block as f64);
    }
}

/// First-pass block size.
pub fn initial_block_size(coefficient: f64, qber: f64, n: usize) -> usize {
    if n == 0 {
        return 1;
    }
    let q = qber.max(1.0 / n as f64);
    ((coefficient / q).ceil() as usize).clamp(1, n)
}

/// Block size of pass `pass` (zero-based).
pub fn block_size(initial: usize, pass: u32, n: usize) -> usize {
    initial
        .checked_shl(pass)
        .filter(|b| *b >> pass == initial)
        .unwrap_or(usize::MAX)
        .clamp(1, n.max(1))
}

/// Key positions visited by one pass, in block order.
#[derive(Clone, Debug)]
pub struct PassLayout {
    order: Vec<usize>,
    rank: Vec<usize>,
    block: usize,
}

impl PassLayout {
    /// Identity order for `seed == None`, otherwise a seeded shuffle.
    pub fn new(n: usize, block: usize, seed: Option<u64>) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        if let Some(seed) = seed {
            RandomStream::new(seed).shuffle(&mut order);
        }
        let mut rank = vec![0; n];
        for (r, pos) in order.iter().enumerate() {
            rank[*pos] = r;
        }
        Self { order, rank, block }
    }

    pub fn block_count(&self) -> usize {
        self.order.len().div_ceil(self.block)
    }

    /// Range of ranks covered by block `b`.
    pub fn block_range(&self, b: usize) -> (usize, usize) {
        let start = b * self.block;
        (start, (start + self.block).min(self.order.len()))
    }

    pub fn block_of(&self, pos: usize) -> usize {
        self.rank[pos] / self.block
    }

    pub fn parity(&self, key: &[u8], start: usize, end: usize) -> u8 {
        self.order[start..end].iter().fold(0, |acc, p| acc ^ key[*p])
    }

    pub fn block_parities(&self, key: &[u8]) -> Vec<u8> {
        (0..self.block_count())
            .map(|b| {
                let (s, e) = self.block_range(b);
                self.parity(key, s, e)
            })
            .collect()
    }

    pub fn position(&self, rank: usize) -> usize {
        self.order[rank]
    }

    fn len(&self) -> usize {
        self.order.len()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Message {
    Start { key_length: u64 },
    Ready,
    BeginPass { pass: u32, block_size: u64 },
    PassParities { seed: Option<u64>, parities: String },
    Query { pass: u32, start: u64, end: u64 },
    Parity { bit: u8 },
    Finish { corrections: u64, corrections_per_pass: Vec<u64> },
    Fail { reason: String },
}

fn unexpected(peer: &str, got: &Message) -> RoleError {
    match got {
        Message::Fail { reason } => RoleError::Protocol(format!("peer {peer} failed: {reason}")),
        other => RoleError::Message {
            peer: peer.to_string(),
            detail: format!("unexpected message {other:?}"),
        },
    }
}

/// Reads the sifted key and QBER estimate left by an earlier stage.
fn read_inputs(ctx: &RoleContext) -> Result<(Vec<u8>, f64), RoleError> {
    let key = ctx
        .blackboard_get(SIFTED_KEY)
        .and_then(|v| v.as_str().and_then(bits_from_str))
        .ok_or_else(|| RoleError::MissingInput(SIFTED_KEY.into()))?;
    let qber = ctx
        .blackboard_get(QBER_ESTIMATE)
        .and_then(|v| v.as_f64())
        .ok_or_else(|| RoleError::MissingInput(QBER_ESTIMATE.into()))?;
    Ok((key, qber))
}

async fn sender(mut ctx: RoleContext) -> Result<RoleExit, RoleError> {
    let peer = ctx.peer()?;
    let inputs = read_inputs(&ctx);
    let first: Message = ctx.receive_json(&peer).await?;
    let (key, _) = match inputs {
        Ok(inputs) => inputs,
        Err(e) => {
            ctx.send_json(&peer, &Message::Fail { reason: e.to_string() })?;
            return Err(e);
        }
    };
    match first {
        Message::Start { key_length } if key_length == key.len() as u64 => {
            ctx.send_json(&peer, &Message::Ready)?
        }
        Message::Start { key_length } => {
            let reason = format!("key lengths differ: {} vs {key_length}", key.len());
            ctx.send_json(&peer, &Message::Fail { reason: reason.clone() })?;
            return Err(RoleError::Protocol(reason));
        }
        other => return Err(unexpected(&peer, &other)),
    }

    let n = key.len();
    let mut layouts: Vec<PassLayout> = Vec::new();
    let mut leaked = 0u64;
    let mut first_block = 0;
    let (corrections, per_pass) = loop {
        match ctx.receive_json(&peer).await? {
            Message::BeginPass { pass, block_size } => {
                if pass as usize != layouts.len() || block_size == 0 {
                    return Err(RoleError::Protocol(format!("out-of-order pass {pass}")));
                }
                let seed = (pass > 0).then(|| ctx.rng().next_u64());
                let layout = PassLayout::new(n, (block_size as usize).min(n.max(1)), seed);
                if pass == 0 {
                    first_block = layout.block;
                }
                let parities = layout.block_parities(&key);
                leaked += parities.len() as u64;
                ctx.send_json_disclosing(
                    &peer,
                    &Message::PassParities {
                        seed,
                        parities: bits_to_string(&parities),
                    },
                    parities.len() as u32,
                )?;
                layouts.push(layout);
            }
            Message::Query { pass, start, end } => {
                let layout = layouts.get(pass as usize).filter(|l| {
                    start < end && (end as usize) <= l.len()
                });
                let Some(layout) = layout else {
                    return Err(RoleError::Protocol(format!(
                        "invalid parity query {pass}:{start}..{end}"
                    )));
                };
                let bit = layout.parity(&key, start as usize, end as usize);
                leaked += 1;
                ctx.send_json_disclosing(&peer, &Message::Parity { bit }, 1)?;
            }
            Message::Finish {
                corrections,
                corrections_per_pass,
            } => break (corrections, corrections_per_pass),
            other => return Err(unexpected(&peer, &other)),
        }
    };

    ReconciliationRecord {
        corrected_bits: key,
        leaked_bits: leaked,
        corrections_made: corrections,
        corrections_per_pass: per_pass,
    }
    .publish(&ctx, first_block);
    Ok(RoleExit::Completed)
}

/// Receiver-side bookkeeping for one pass.
struct PassState {
    layout: PassLayout,
    sender_parities: Vec<u8>,
}

struct Receiver<'a> {
    ctx: &'a RoleContext,
    peer: String,
    key: Vec<u8>,
    passes: Vec<PassState>,
    cache: HashMap<(usize, usize, usize), u8>,
    leaked: u64,
}

impl Receiver<'_> {
    async fn sender_parity(&mut self, pass: usize, start: usize, end: usize) -> Result<u8, RoleError> {
        if let Some(bit) = self.cache.get(&(pass, start, end)) {
            return Ok(*bit);
        }
        self.ctx.send_json(
            &self.peer,
            &Message::Query {
                pass: pass as u32,
                start: start as u64,
                end: end as u64,
            },
        )?;
        let bit = match self.ctx.receive_json(&self.peer).await? {
            Message::Parity { bit } => bit & 1,
            other => return Err(unexpected(&self.peer, &other)),
        };
        self.leaked += 1;
        self.cache.insert((pass, start, end), bit);
        Ok(bit)
    }

    /// BINARY: finds one erroneous position in a block with odd relative parity.
    async fn binary_search(&mut self, pass: usize, block: usize) -> Result<usize, RoleError> {
        let (mut start, mut end) = self.passes[pass].layout.block_range(block);
        while end - start > 1 {
            let mid = start + (end - start).div_ceil(2);
            let theirs = self.sender_parity(pass, start, mid).await?;
            let ours = self.passes[pass].layout.parity(&self.key, start, mid);
            if theirs != ours {
                end = mid;
            } else {
                start = mid;
            }
        }
        Ok(self.passes[pass].layout.position(start))
    }

    fn block_is_odd(&self, pass: usize, block: usize) -> bool {
        let state = &self.passes[pass];
        let (s, e) = state.layout.block_range(block);
        state.layout.parity(&self.key, s, e) != state.sender_parities[block]
    }

    fn odd_entry(&self, pass: usize, block: usize) -> (usize, usize, usize) {
        let (s, e) = self.passes[pass].layout.block_range(block);
        (e - s, pass, block)
    }

    /// Runs one pass including the cascade into earlier passes. Returns the
    /// number of corrections made.
    async fn run_pass(&mut self, pass: u32, block: usize) -> Result<u64, RoleError> {
        self.ctx.send_json(
            &self.peer,
            &Message::BeginPass {
                pass,
                block_size: block as u64,
            },
        )?;
        let (seed, parities) = match self.ctx.receive_json(&self.peer).await? {
            Message::PassParities { seed, parities } => (seed, parities),
            other => return Err(unexpected(&self.peer, &other)),
        };
        let layout = PassLayout::new(self.key.len(), block, seed);
        let sender_parities = bits_from_str(&parities)
            .filter(|p| p.len() == layout.block_count())
            .ok_or_else(|| RoleError::Message {
                peer: self.peer.clone(),
                detail: "parity list does not match block count".into(),
            })?;
        self.leaked += sender_parities.len() as u64;
        self.passes.push(PassState {
            layout,
            sender_parities,
        });
        let current = self.passes.len() - 1;

        // Smallest blocks first: they localise errors with the fewest parities.
        let mut odd: BTreeSet<(usize, usize, usize)> = (0..self.passes[current].layout.block_count())
            .filter(|b| self.block_is_odd(current, *b))
            .map(|b| self.odd_entry(current, b))
            .collect();
        let mut corrections = 0;
        while let Some((_, p, b)) = odd.pop_first() {
            if !self.block_is_odd(p, b) {
                continue;
            }
            let pos = self.binary_search(p, b).await?;
            self.key[pos] ^= 1;
            corrections += 1;
            for q in 0..self.passes.len() {
                let qb = self.passes[q].layout.block_of(pos);
                let entry = self.odd_entry(q, qb);
                if self.block_is_odd(q, qb) {
                    odd.insert(entry);
                } else {
                    odd.remove(&entry);
                }
            }
        }
        Ok(corrections)
    }
}

async fn receiver(ctx: RoleContext) -> Result<RoleExit, RoleError> {
    let params = CascadeParams::from_context(&ctx);
    let peer = ctx.peer()?;
    let (key, qber) = match read_inputs(&ctx) {
        Ok(inputs) => inputs,
        Err(e) => {
            ctx.send_json(&peer, &Message::Fail { reason: e.to_string() })?;
            return Err(e);
        }
    };
    ctx.send_json(
        &peer,
        &Message::Start {
            key_length: key.len() as u64,
        },
    )?;
    match ctx.receive_json(&peer).await? {
        Message::Ready => {}
        other => return Err(unexpected(&peer, &other)),
    }

    let n = key.len();
    let first_block = initial_block_size(params.block_coefficient, qber, n);
    let mut bob = Receiver {
        ctx: &ctx,
        peer: peer.clone(),
        key,
        passes: Vec::new(),
        cache: HashMap::new(),
        leaked: 0,
    };
    let mut per_pass = Vec::new();
    if n > 0 {
        for pass in 0..params.passes {
            let corrections = bob.run_pass(pass, block_size(first_block, pass, n)).await?;
            per_pass.push(corrections);
        }
    }
    let corrections: u64 = per_pass.iter().sum();
    ctx.send_json(
        &peer,
        &Message::Finish {
            corrections,
            corrections_per_pass: per_pass.clone(),
        },
    )?;
    let record = ReconciliationRecord {
        corrected_bits: bob.key,
        leaked_bits: bob.leaked,
        corrections_made: corrections,
        corrections_per_pass: per_pass,
    };
    record.publish(&ctx, first_block);
    Ok(RoleExit::Completed)
}

fn params() -> Vec<ParamSpec> {
    let d = CascadeParams::default();
    vec![
        ParamSpec::integer("passes", i64::from(d.passes), "Number of Cascade passes")
            .at_least(1.0)
            .at_most(32.0),
        ParamSpec::number(
            "block_coefficient",
            d.block_coefficient,
            "First-pass block size is this coefficient divided by the QBER estimate",
        )
        .above(0.0)
        .at_most(1e6),
        ParamSpec::optional_string("peer", "Peer node; defaults to the only neighbor"),
    ]
}

pub fn role_specs() -> Vec<RoleSpec> {
    vec![
        RoleSpec {
            name: "cascade_sender".into(),
            description: "Cascade sender: answers block parity queries against its sifted key".into(),
            params: params(),
            factory: |ctx| -> RoleFuture { Box::pin(sender(ctx)) },
        },
        RoleSpec {
            name: "cascade_receiver".into(),
            description: "Cascade receiver: corrects its sifted key toward the sender's".into(),
            params: params(),
            factory: |ctx| -> RoleFuture { Box::pin(receiver(ctx)) },
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_block_size() {
        assert_eq!(initial_block_size(0.73, 0.05, 10_000), 15);
        assert_eq!(initial_block_size(0.73, 0.05, 8), 6);
        // Zero QBER falls back to 1/n.
        assert_eq!(initial_block_size(0.73, 0.0, 1024), 748);
        assert_eq!(initial_block_size(0.73, 1.0, 100), 1);
    }

    #[test]
    fn block_doubling_is_clamped() {
        assert_eq!(block_size(15, 0, 100), 15);
        assert_eq!(block_size(15, 2, 100), 60);
        assert_eq!(block_size(15, 3, 100), 100);
        assert_eq!(block_size(15, 63, 100), 100);
    }

    #[test]
    fn layout_blocks_cover_key() {
        let layout = PassLayout::new(10, 4, Some(3));
        assert_eq!(layout.block_count(), 3);
        assert_eq!(layout.block_range(2), (8, 10));
        let mut seen: Vec<usize> = (0..10).map(|r| layout.position(r)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        for pos in 0..10 {
            let (s, e) = layout.block_range(layout.block_of(pos));
            assert!((s..e).any(|r| layout.position(r) == pos));
        }
    }

    #[test]
    fn identity_layout_parities() {
        let layout = PassLayout::new(8, 4, None);
        assert_eq!(layout.block_parities(&[1, 0, 0, 0, 1, 1, 0, 0]), vec![1, 0]);
    }
}
