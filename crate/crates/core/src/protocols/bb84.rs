//! BB84 prepare-and-measure key distribution with sifting and QBER sampling.
//!
//! Sender steps:
//! 1. announce the pulse count;
//! 2. for each pulse draw a bit and a basis, emit `|bit>` and rotate with H for
//!    the X basis, then send it;
//! 3. receive the receiver's arrived indices and bases, reply with the
//!    indices whose bases match;
//! 4. disclose a random sample of the sifted bits and learn the error count;
//! 5. drop the sample, publish the key and QBER estimate.
//!
//! The receiver measures every arrival in a random basis and mirrors steps 3-5.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{bits_to_string, QBER_ESTIMATE, SIFTED_KEY};
use crate::framework::{ParamSpec, RoleContext, RoleError, RoleExit, RoleFuture, RoleSpec};
use crate::quantum::{Basis, Gate};

#[derive(Clone, Debug, PartialEq)]
pub struct Bb84Params {
    pub num_pulses: u64,
    pub sample_fraction: f64,
    pub qber_abort_threshold: f64,
}

impl Default for Bb84Params {
    fn default() -> Self {
        Self {
            num_pulses: 10_000,
            sample_fraction: 0.1,
            qber_abort_threshold: 0.11,
        }
    }
}

impl Bb84Params {
    fn from_context(ctx: &RoleContext) -> Self {
        let d = Self::default();
        let p = ctx.params();
        Self {
            num_pulses: p.f64("num_pulses").map_or(d.num_pulses, |x| x as u64),
            sample_fraction: p.f64("sample_fraction").unwrap_or(d.sample_fraction),
            qber_abort_threshold: p
                .f64("qber_abort_threshold")
                .unwrap_or(d.qber_abort_threshold),
        }
    }
}

/// Key material left after sifting and sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct SiftedKeyRecord {
    pub bits: Vec<u8>,
    pub qber_estimate: f64,
    pub pulse_count: u64,
    pub arrival_count: u64,
    pub sift_count: u64,
    pub sample_count: u64,
}

impl SiftedKeyRecord {
    /// Records metrics; the key reaches the blackboard only when `threshold`
    /// is not exceeded, so an aborted exchange cannot feed later stages.
    fn publish(&self, ctx: &RoleContext, threshold: f64) {
        let key = bits_to_string(&self.bits);
        if self.qber_estimate <= threshold {
            ctx.blackboard_put(SIFTED_KEY, json!(key));
            ctx.blackboard_put(QBER_ESTIMATE, json!(self.qber_estimate));
        }
        ctx.output(SIFTED_KEY, json!(key));
        ctx.metric("pulses", self.pulse_count as f64);
        ctx.metric("arrivals", self.arrival_count as f64);
        ctx.metric("sifted", self.sift_count as f64);
        ctx.metric("sampled", self.sample_count as f64);
        ctx.metric("key_length", self.bits.len() as f64);
        ctx.metric(QBER_ESTIMATE, self.qber_estimate);
        if self.arrival_count > 0 {
            ctx.metric(
                "sifted_fraction",
                self.sift_count as f64 / self.arrival_count as f64,
            );
        }
        ctx.metric(
            "arrival_rate",
            self.arrival_count as f64 / self.pulse_count.max(1) as f64,
        );
    }

    fn exit(&self, threshold: f64) -> RoleExit {
        if self.qber_estimate > threshold {
            RoleExit::Aborted(format!(
                "QBER estimate {:.4} exceeds threshold {threshold}",
                self.qber_estimate
            ))
        } else {
            RoleExit::Completed
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Message {
    Start { num_pulses: u64 },
    Arrivals { indices: Vec<u64>, bases: String },
    Matches { indices: Vec<u64> },
    Sample { positions: Vec<u64>, bits: String },
    SampleResult { errors: u64 },
}

fn unexpected(peer: &str, got: &Message) -> RoleError {
    RoleError::Message {
        peer: peer.to_string(),
        detail: format!("unexpected message {got:?}"),
    }
}

fn qber(errors: u64, sampled: u64) -> f64 {
    if sampled == 0 {
        0.0
    } else {
        errors as f64 / sampled as f64
    }
}

fn remove_positions(bits: &[u8], sorted_positions: &[u64]) -> Vec<u8> {
    let mut skip = sorted_positions.iter().peekable();
    bits.iter()
        .enumerate()
        .filter_map(|(i, b)| {
            if skip.peek().is_some_and(|p| **p == i as u64) {
                skip.next();
                None
            } else {
                Some(*b)
            }
        })
        .collect()
}

async fn sender(mut ctx: RoleContext) -> Result<RoleExit, RoleError> {
    let params = Bb84Params::from_context(&ctx);
    let peer = ctx.peer()?;
    let n = params.num_pulses;
    ctx.send_json(&peer, &Message::Start { num_pulses: n })?;

    let mut bits = Vec::with_capacity(n as usize);
    let mut bases = Vec::with_capacity(n as usize);
    for pulse in 0..n {
        let bit = ctx.rng().bit();
        let basis = Basis::from_bit(ctx.rng().bit());
        let q = ctx.emit_qubit(bit).await?;
        if basis == Basis::X {
            ctx.apply_gate(Gate::H, &[q])?;
        }
        ctx.send_qubit(&peer, q, pulse)?;
        bits.push(bit);
        bases.push(basis);
    }

    let (arrived, their_bases) = match ctx.receive_json(&peer).await? {
        Message::Arrivals { indices, bases } => (indices, bases),
        other => return Err(unexpected(&peer, &other)),
    };
    if arrived.len() != their_bases.chars().count() || arrived.iter().any(|i| *i >= n) {
        return Err(RoleError::Message {
            peer,
            detail: "arrival list does not match the announced pulses".into(),
        });
    }
    let matches: Vec<u64> = arrived
        .iter()
        .zip(their_bases.chars())
        .filter(|(i, b)| bases[**i as usize].as_char() == *b)
        .map(|(i, _)| *i)
        .collect();
    ctx.send_json(
        &peer,
        &Message::Matches {
            indices: matches.clone(),
        },
    )?;
    if matches.is_empty() {
        return Err(RoleError::Protocol(format!(
            "no sifted bits out of {} arrivals",
            arrived.len()
        )));
    }

    let sifted: Vec<u8> = matches.iter().map(|i| bits[*i as usize]).collect();
    let sample_count =
        ((params.sample_fraction * sifted.len() as f64).round() as usize).min(sifted.len());
    let positions: Vec<u64> = ctx
        .rng()
        .sample_indices(sifted.len(), sample_count)
        .into_iter()
        .map(|p| p as u64)
        .collect();
    let sample_bits: Vec<u8> = positions.iter().map(|p| sifted[*p as usize]).collect();
    ctx.send_json(
        &peer,
        &Message::Sample {
            positions: positions.clone(),
            bits: bits_to_string(&sample_bits),
        },
    )?;
    let errors = match ctx.receive_json(&peer).await? {
        Message::SampleResult { errors } => errors,
        other => return Err(unexpected(&peer, &other)),
    };

    let record = SiftedKeyRecord {
        bits: remove_positions(&sifted, &positions),
        qber_estimate: qber(errors, sample_count as u64),
        pulse_count: n,
        arrival_count: arrived.len() as u64,
        sift_count: sifted.len() as u64,
        sample_count: sample_count as u64,
    };
    record.publish(&ctx, params.qber_abort_threshold);
    Ok(record.exit(params.qber_abort_threshold))
}

async fn receiver(mut ctx: RoleContext) -> Result<RoleExit, RoleError> {
    let params = Bb84Params::from_context(&ctx);
    let peer = ctx.peer()?;
    let n = match ctx.receive_json(&peer).await? {
        Message::Start { num_pulses } => num_pulses,
        other => return Err(unexpected(&peer, &other)),
    };

    let mut indices = Vec::new();
    let mut bases = String::new();
    let mut outcomes = Vec::new();
    for _ in 0..n {
        let arrival = ctx.receive_qubit(&peer).await?;
        if let Some(q) = arrival.qubit {
            let basis = Basis::from_bit(ctx.rng().bit());
            outcomes.push(ctx.measure(q, basis)?);
            indices.push(arrival.pulse_index);
            bases.push(basis.as_char());
        }
    }
    let arrival_count = indices.len() as u64;
    ctx.send_json(&peer, &Message::Arrivals { indices: indices.clone(), bases })?;

    let matches = match ctx.receive_json(&peer).await? {
        Message::Matches { indices } => indices,
        other => return Err(unexpected(&peer, &other)),
    };
    if matches.is_empty() {
        return Err(RoleError::Protocol(format!(
            "no sifted bits out of {arrival_count} arrivals"
        )));
    }
    let mut sifted = Vec::with_capacity(matches.len());
    let mut cursor = 0;
    for m in &matches {
        while cursor < indices.len() && indices[cursor] < *m {
            cursor += 1;
        }
        if cursor == indices.len() || indices[cursor] != *m {
            return Err(RoleError::Message {
                peer,
                detail: format!("matched pulse {m} never arrived"),
            });
        }
        sifted.push(outcomes[cursor]);
    }

    let (positions, their_bits) = match ctx.receive_json(&peer).await? {
        Message::Sample { positions, bits } => (positions, bits),
        other => return Err(unexpected(&peer, &other)),
    };
    let their_bits = super::bits_from_str(&their_bits).filter(|b| b.len() == positions.len());
    let Some(their_bits) = their_bits.filter(|_| positions.iter().all(|p| (*p as usize) < sifted.len()))
    else {
        return Err(RoleError::Message {
            peer,
            detail: "malformed QBER sample".into(),
        });
    };
    let errors = positions
        .iter()
        .zip(&their_bits)
        .filter(|(p, b)| sifted[**p as usize] != **b)
        .count() as u64;
    ctx.send_json(&peer, &Message::SampleResult { errors })?;

    let record = SiftedKeyRecord {
        bits: remove_positions(&sifted, &positions),
        qber_estimate: qber(errors, positions.len() as u64),
        pulse_count: n,
        arrival_count,
        sift_count: sifted.len() as u64,
        sample_count: positions.len() as u64,
    };
    record.publish(&ctx, params.qber_abort_threshold);
    Ok(record.exit(params.qber_abort_threshold))
}

fn params() -> Vec<ParamSpec> {
    let d = Bb84Params::default();
    vec![
        ParamSpec::integer("num_pulses", d.num_pulses as i64, "Pulses emitted by the sender")
            .at_least(1.0)
            .at_most(1e7),
        ParamSpec::number(
            "sample_fraction",
            d.sample_fraction,
            "Fraction of sifted bits disclosed to estimate the QBER",
        )
        .above(0.0)
        .below(1.0),
        ParamSpec::number(
            "qber_abort_threshold",
            d.qber_abort_threshold,
            "Abort when the QBER estimate exceeds this value",
        )
        .at_least(0.0)
        .at_most(1.0),
        ParamSpec::optional_string("peer", "Peer node; defaults to the only neighbor"),
    ]
}

pub fn role_specs() -> Vec<RoleSpec> {
    vec![
        RoleSpec {
            name: "bb84_sender".into(),
            description: "BB84 sender: emits random bits in random Z/X bases, sifts, samples the QBER".into(),
            params: params(),
            factory: |ctx| -> RoleFuture { Box::pin(sender(ctx)) },
        },
        RoleSpec {
            name: "bb84_receiver".into(),
            description: "BB84 receiver: measures arrivals in random bases and sifts with the sender".into(),
            params: params(),
            factory: |ctx| -> RoleFuture { Box::pin(receiver(ctx)) },
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn removes_sampled_positions() {
        assert_eq!(remove_positions(&[1, 0, 1, 1, 0], &[0, 3]), vec![0, 1, 0]);
        assert_eq!(remove_positions(&[1, 0], &[]), vec![1, 0]);
    }

    #[test]
    fn qber_of_empty_sample_is_zero() {
        assert_eq!(qber(0, 0), 0.0);
        assert_eq!(qber(5, 100), 0.05);
    }
}
