//! Clipping, fixed-point ring encoding, pairwise one-time masks and the
//! threshold-gated masked sum.
//!
//! Every client submits `encode(w_k · clip(Δ_k, C)) + mask_k` in the ring
//! `Z/2^64`. Masks are built from one seed per unordered client pair, added
//! by the lower id and subtracted by the higher one, so they vanish in the
//! sum of all submissions while each single submission looks uniform.

use std::collections::BTreeMap;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::crypto_rng;
use crate::segnet::ParamVec;
use crate::{Error, Result};

/// Fractional bits of the fixed-point encoding.
pub const SCALE_BITS: u32 = 24;
/// Magnitude bound (exclusive) of an encodable real, `2^39 / 2^24`.
pub const MAX_ABS: f64 = (1u64 << (39 - SCALE_BITS)) as f64;
/// Default participation threshold.
pub const DEFAULT_K_MIN: usize = 3;

const SCALE: f64 = (1u64 << SCALE_BITS) as f64;

/// Ring elements carrying one fixed-point vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedVec {
    pub values: Vec<u64>,
}

impl FixedVec {
    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Element-wise ring addition.
    pub fn add_assign(&mut self, other: &FixedVec) -> Result<()> {
        check_dim(self.dim(), other.dim())?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a = a.wrapping_add(*b);
        }
        Ok(())
    }

    /// Two's-complement reading of each element at scale `2^24`.
    pub fn decode(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as i64 as f64 / SCALE).collect()
    }
}

fn check_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a.to_string(),
            actual: b.to_string(),
        });
    }
    Ok(())
}

/// Outcome of clipping one client update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipReport {
    pub client: u32,
    pub preclip_norm: f64,
    pub scale: f64,
    pub postclip_norm: f64,
}

/// Scales `delta` onto the ℓ₂ ball of radius `c` when it lies outside.
pub fn clip_update(client: u32, delta: &ParamVec, c: f64) -> Result<(ParamVec, ClipReport)> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid("clip_norm", "must be finite and > 0"));
    }
    let norm = delta.norm();
    if !norm.is_finite() {
        return Err(Error::invalid("delta", "update has a non-finite norm"));
    }
    let mut out = delta.clone();
    let mut scale = 1.0;
    if norm > c {
        scale = c / norm;
        out.scale(scale);
        // Rounding can leave the norm a few ulps above the bound.
        while out.norm() > c {
            scale *= 1.0 - f64::EPSILON;
            out = delta.clone();
            out.scale(scale);
        }
    }
    let report = ClipReport {
        client,
        preclip_norm: norm,
        scale,
        postclip_norm: out.norm(),
    };
    Ok((out, report))
}

/// Nearest-integer encoding of `weight · v` at scale `2^24`.
pub fn encode_fixed(v: &[f64], weight: f64) -> Result<FixedVec> {
    let values = v
        .iter()
        .map(|&x| {
            let y = weight * x;
            if !(y.abs() < MAX_ABS) {
                return Err(Error::FixedPointOverflow { value: y });
            }
            Ok((y * SCALE).round() as i64 as u64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FixedVec { values })
}

/// One 128-bit seed per unordered client pair.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseSeeds {
    seeds: BTreeMap<(u32, u32), u128>,
}

impl PairwiseSeeds {
    /// Trusted-setup stand-in: derives every pair seed from a master seed.
    pub fn generate(master: u64, clients: &[u32]) -> Self {
        let mut seeds = BTreeMap::new();
        for (a, &i) in clients.iter().enumerate() {
            for &j in &clients[a + 1..] {
                let (lo, hi) = (i.min(j), i.max(j));
                let mut rng = crypto_rng(master, "secagg-pair", ((lo as u64) << 32) | hi as u64);
                let s = ((rng.next_u64() as u128) << 64) | rng.next_u64() as u128;
                seeds.insert((lo, hi), s);
            }
        }
        Self { seeds }
    }

    pub fn insert(&mut self, i: u32, j: u32, seed: u128) {
        self.seeds.insert((i.min(j), i.max(j)), seed);
    }

    /// Symmetric lookup.
    pub fn get(&self, i: u32, j: u32) -> Option<u128> {
        self.seeds.get(&(i.min(j), i.max(j))).copied()
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }
}

/// ChaCha20 stream keyed by `SHA-256(seed ‖ round)`.
fn pair_stream(seed: u128, round: u64) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(b"secagg-mask");
    h.update(seed.to_le_bytes());
    h.update(round.to_le_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

/// `Σ_{j ∈ S, j ≠ i} sign(i, j) · PRG(seed(i, j) ‖ round)[0..dim)`, with
/// sign +1 when `i < j`.
pub fn mask_for(client: u32, round: u64, peers: &[u32], seeds: &PairwiseSeeds, dim: usize) -> Result<FixedVec> {
    if !peers.contains(&client) {
        return Err(Error::invalid("peers", format!("client {client} is not a participant")));
    }
    if peers.len() < 2 {
        return Err(Error::invalid("peers", "masking needs at least two participants"));
    }
    let mut out = FixedVec::zeros(dim);
    for &j in peers {
        if j == client {
            continue;
        }
        let seed = seeds
            .get(client, j)
            .ok_or(Error::MissingPairSeed(client.min(j), client.max(j)))?;
        let mut rng = pair_stream(seed, round);
        if client < j {
            for v in &mut out.values {
                *v = v.wrapping_add(rng.next_u64());
            }
        } else {
            for v in &mut out.values {
                *v = v.wrapping_sub(rng.next_u64());
            }
        }
    }
    Ok(out)
}

/// Client side: clip, weight, encode and mask one update.
pub fn submit(
    client: u32,
    round: u64,
    delta: &ParamVec,
    clip: f64,
    weight: f64,
    peers: &[u32],
    seeds: &PairwiseSeeds,
) -> Result<(FixedVec, ClipReport)> {
    let (clipped, report) = clip_update(client, delta, clip)?;
    let mut enc = encode_fixed(clipped.values(), weight)?;
    let mask = mask_for(client, round, peers, seeds, enc.dim())?;
    enc.add_assign(&mask)?;
    Ok((enc, report))
}

/// Ring sum without decoding.
pub fn ring_sum(updates: &[FixedVec]) -> Result<FixedVec> {
    let dim = updates.first().map_or(0, FixedVec::dim);
    let mut acc = FixedVec::zeros(dim);
    for u in updates {
        acc.add_assign(u)?;
    }
    Ok(acc)
}

/// Server side: refuses below `k_min` submissions, otherwise decodes the
/// ring sum of all masked submissions.
pub fn masked_sum(masked: &[FixedVec], k_min: usize) -> Result<Vec<f64>> {
    if masked.len() < k_min {
        return Err(Error::ThresholdNotMet {
            got: masked.len(),
            required: k_min,
        });
    }
    Ok(ring_sum(masked)?.decode())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::rng::{sim_rng, uniform};
    use crate::segnet::Layout;

    fn pv(vals: Vec<f64>) -> ParamVec {
        let mut l = Layout::new();
        l.push("x", &[vals.len()]);
        ParamVec::from_values(Arc::new(l), vals).unwrap()
    }

    #[test]
    fn clipping_rule() {
        let (out, r) = clip_update(0, &pv(vec![0.3, 0.4]), 1.0).unwrap();
        assert_eq!(out.values(), &[0.3, 0.4]);
        assert_eq!(r.scale, 1.0);
        let (out, r) = clip_update(1, &pv(vec![1.2, 1.6]), 1.0).unwrap();
        assert_eq!(r.scale, 0.5);
        assert_eq!(out.norm(), 1.0);
        assert!(clip_update(0, &pv(vec![1.0]), 0.0).is_err());
        let mut rng = sim_rng(1, "clip", 0);
        for _ in 0..200 {
            let v: Vec<f64> = (0..37).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
            let (o, r) = clip_update(0, &pv(v), 1.0).unwrap();
            assert!(o.norm() <= 1.0);
            assert_eq!(r.postclip_norm, o.norm());
        }
    }

    #[test]
    fn encoding_examples() {
        assert_eq!(encode_fixed(&[0.0], 1.0).unwrap().values, vec![0]);
        assert_eq!(encode_fixed(&[1.0], 1.0).unwrap().values, vec![1 << 24]);
        assert_eq!(encode_fixed(&[-1.0], 1.0).unwrap().decode(), vec![-1.0]);
        assert!(matches!(
            encode_fixed(&[MAX_ABS], 1.0),
            Err(Error::FixedPointOverflow { .. })
        ));
        let mut rng = sim_rng(2, "enc", 0);
        let v: Vec<f64> = (0..1000).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        for (a, b) in encode_fixed(&v, 1.0).unwrap().decode().iter().zip(&v) {
            assert!((a - b).abs() <= 2f64.powi(-25));
        }
    }

    #[test]
    fn two_party_masks_are_negatives() {
        let seeds = PairwiseSeeds::generate(7, &[0, 1]);
        let a = mask_for(0, 3, &[0, 1], &seeds, 16).unwrap();
        let b = mask_for(1, 3, &[0, 1], &seeds, 16).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_eq!(x.wrapping_add(*y), 0);
        }
    }

    #[test]
    fn masks_cancel_for_any_subset_and_round() {
        let all: Vec<u32> = (0..6).collect();
        let seeds = PairwiseSeeds::generate(9, &all);
        assert_eq!(seeds.len(), 15);
        for (round, peers) in [(0u64, vec![0u32, 1, 2]), (5, vec![1, 3, 4, 5]), (2, all.clone())] {
            let masks: Vec<FixedVec> = peers
                .iter()
                .map(|&i| mask_for(i, round, &peers, &seeds, 33).unwrap())
                .collect();
            assert!(ring_sum(&masks).unwrap().values.iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn streams_are_one_time() {
        let seeds = PairwiseSeeds::generate(1, &[0, 1]);
        let r0 = mask_for(0, 0, &[0, 1], &seeds, 8).unwrap();
        let r0b = mask_for(0, 0, &[0, 1], &seeds, 8).unwrap();
        let r1 = mask_for(0, 1, &[0, 1], &seeds, 8).unwrap();
        assert_eq!(r0, r0b);
        assert_ne!(r0, r1);
        assert_eq!(seeds.get(1, 0), seeds.get(0, 1));
    }

    #[test]
    fn missing_seed_and_threshold_refusals() {
        let seeds = PairwiseSeeds::generate(1, &[0, 1]);
        assert!(matches!(
            mask_for(0, 0, &[0, 1, 2], &seeds, 4),
            Err(Error::MissingPairSeed(0, 2))
        ));
        let subs = vec![FixedVec::zeros(4), FixedVec::zeros(4)];
        assert!(matches!(
            masked_sum(&subs, 3),
            Err(Error::ThresholdNotMet { got: 2, required: 3 })
        ));
    }

    #[test]
    fn masked_sum_equals_plain_fixed_point_sum() {
        let peers = [0u32, 1, 2];
        let seeds = PairwiseSeeds::generate(4, &peers);
        let mut rng = sim_rng(3, "ms", 0);
        let deltas: Vec<ParamVec> = (0..3)
            .map(|_| pv((0..50).map(|_| uniform(&mut rng, -0.5, 0.5)).collect()))
            .collect();
        let w = [0.5, 0.3, 0.2];
        let mut masked = Vec::new();
        let mut plain = Vec::new();
        for (k, d) in deltas.iter().enumerate() {
            let (m, _) = submit(k as u32, 11, d, 1.0, w[k], &peers, &seeds).unwrap();
            masked.push(m);
            let (c, _) = clip_update(k as u32, d, 1.0).unwrap();
            plain.push(encode_fixed(c.values(), w[k]).unwrap());
        }
        assert_eq!(masked_sum(&masked, 3).unwrap(), ring_sum(&plain).unwrap().decode());
    }
}
