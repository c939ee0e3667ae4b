//! Entanglement distribution: the source prepares Bell pairs, keeps one half
//! in memory and sends the other; both halves are measured in Z.
//!
//! Pairs are handled one at a time. For pair `i` the source announces the
//! index on the classical channel, sends the photon, waits for the receiver's
//! outcome (or loss report), then retrieves and measures its stored half.

use serde::{Deserialize, Serialize};

use crate::framework::{ParamSpec, RoleContext, RoleError, RoleExit, RoleFuture, RoleSpec};
use crate::quantum::{Basis, Gate};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Message {
    Start { num_pairs: u64 },
    Pair { index: u64 },
    Abort { reason: String },
    Outcome { index: u64, bit: Option<u8> },
    /// Source-side bits of every delivered pair, in pair order.
    Summary { bits: Vec<u8> },
}

fn unexpected(peer: &str, got: &Message) -> RoleError {
    match got {
        Message::Abort { reason } => RoleError::Protocol(format!("source {peer} aborted: {reason}")),
        other => RoleError::Message {
            peer: peer.to_string(),
            detail: format!("unexpected message {other:?}"),
        },
    }
}

fn record(ctx: &RoleContext, num_pairs: u64, delivered: u64, agreements: u64) {
    ctx.metric("num_pairs", num_pairs as f64);
    ctx.metric("delivered_pairs", delivered as f64);
    ctx.metric("agreements", agreements as f64);
    ctx.metric(
        "correlation_rate",
        if delivered == 0 {
            0.0
        } else {
            agreements as f64 / delivered as f64
        },
    );
}

async fn source(mut ctx: RoleContext) -> Result<RoleExit, RoleError> {
    let peer = ctx.peer()?;
    let num_pairs = ctx.params().f64("num_pairs").map_or(1000, |x| x as u64);
    ctx.send_json(&peer, &Message::Start { num_pairs })?;

    let mut delivered = 0;
    let mut agreements = 0;
    let mut source_bits = Vec::new();
    for index in 0..num_pairs {
        ctx.await_emission_slot().await;
        let local = ctx.allocate_qubit(0);
        let remote = ctx.allocate_qubit(0);
        ctx.apply_gate(Gate::H, &[local])?;
        ctx.apply_gate(Gate::Cnot, &[local, remote])?;
        ctx.apply_source_noise(remote)?;
        if let Err(e) = ctx.store_qubit(local) {
            ctx.send_json(&peer, &Message::Abort { reason: e.to_string() })?;
            return Err(e);
        }
        ctx.send_json(&peer, &Message::Pair { index })?;
        ctx.send_qubit(&peer, remote, index)?;

        let theirs = match ctx.receive_json(&peer).await? {
            Message::Outcome { index: i, bit } if i == index => bit,
            other => return Err(unexpected(&peer, &other)),
        };
        let local = ctx.retrieve_qubit(local)?;
        match theirs {
            Some(bit) => {
                let ours = ctx.measure(local, Basis::Z)?;
                delivered += 1;
                agreements += u64::from(ours == bit);
                source_bits.push(ours);
            }
            None => ctx.discard(local)?,
        }
    }
    ctx.send_json(&peer, &Message::Summary { bits: source_bits })?;
    record(&ctx, num_pairs, delivered, agreements);
    Ok(RoleExit::Completed)
}

async fn receiver(mut ctx: RoleContext) -> Result<RoleExit, RoleError> {
    let peer = ctx.peer()?;
    let num_pairs = match ctx.receive_json(&peer).await? {
        Message::Start { num_pairs } => num_pairs,
        other => return Err(unexpected(&peer, &other)),
    };
    let mut ours = Vec::new();
    for index in 0..num_pairs {
        match ctx.receive_json(&peer).await? {
            Message::Pair { index: i } if i == index => {}
            other => return Err(unexpected(&peer, &other)),
        }
        let arrival = ctx.receive_qubit(&peer).await?;
        let bit = match arrival.qubit {
            Some(q) => Some(ctx.measure(q, Basis::Z)?),
            None => None,
        };
        ours.extend(bit);
        ctx.send_json(&peer, &Message::Outcome { index, bit })?;
    }
    let theirs = match ctx.receive_json(&peer).await? {
        Message::Summary { bits } if bits.len() == ours.len() => bits,
        other => return Err(unexpected(&peer, &other)),
    };
    let agreements = ours.iter().zip(&theirs).filter(|(a, b)| a == b).count() as u64;
    record(&ctx, num_pairs, ours.len() as u64, agreements);
    Ok(RoleExit::Completed)
}

pub fn role_specs() -> Vec<RoleSpec> {
    vec![
        RoleSpec {
            name: "ent_dist_source".into(),
            description: "Bell-pair source: keeps one half in memory, sends the other, compares Z outcomes".into(),
            params: vec![
                ParamSpec::integer("num_pairs", 1000, "Bell pairs to distribute")
                    .at_least(1.0)
                    .at_most(1e7),
                ParamSpec::optional_string("peer", "Peer node; defaults to the only neighbor"),
            ],
            factory: |ctx| -> RoleFuture { Box::pin(source(ctx)) },
        },
        RoleSpec {
            name: "ent_dist_receiver".into(),
            description: "Bell-pair receiver: measures arriving halves in Z and reports outcomes".into(),
            params: vec![ParamSpec::optional_string(
                "peer",
                "Peer node; defaults to the only neighbor",
            )],
            factory: |ctx| -> RoleFuture { Box::pin(receiver(ctx)) },
        },
    ]
}
