//! Binary checkpoints: an 8-byte little-endian manifest length, a JSON
//! manifest, then each tensor as raw little-endian `f64`s in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::agent::{Agent, NetSeeds};
use super::config::{Algo, RunConfig};
use crate::approximator::{Mlp, MlpSpec};
use crate::envs::EnvKind;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub spec: MlpSpec,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub algo: Algo,
    pub env: EnvKind,
    pub step: u64,
    pub config: RunConfig,
    pub scalar_multiplier: Option<f64>,
    pub tensors: Vec<TensorEntry>,
}

fn named_nets(agent: &Agent) -> Vec<(&'static str, &Mlp)> {
    let b = &agent.bundle;
    let mut nets = vec![
        ("actor", &b.actor.net),
        ("actor_target", &b.actor.target),
        ("q1", &b.q1.net),
        ("q1_target", &b.q1.target),
        ("q2", &b.q2.net),
        ("q2_target", &b.q2.target),
        ("qc", &b.qc.net),
        ("qc_target", &b.qc.target),
    ];
    if let Some(s) = &agent.safety {
        nets.push(("safety_g", &s.model.g_net));
    }
    if let Some(r) = &agent.risk {
        nets.push(("q_risk", &r.q_risk.net));
        nets.push(("q_risk_target", &r.q_risk.target));
        nets.push(("pi_risk", &r.pi_risk));
    }
    if let Some(m) = &agent.multiplier_net {
        nets.push(("multiplier_net", &m.net));
    }
    nets
}

fn named_nets_mut(agent: &mut Agent) -> Vec<(&'static str, &mut Mlp)> {
    let b = &mut agent.bundle;
    let mut nets = vec![
        ("actor", &mut b.actor.net),
        ("actor_target", &mut b.actor.target),
        ("q1", &mut b.q1.net),
        ("q1_target", &mut b.q1.target),
        ("q2", &mut b.q2.net),
        ("q2_target", &mut b.q2.target),
        ("qc", &mut b.qc.net),
        ("qc_target", &mut b.qc.target),
    ];
    if let Some(s) = &mut agent.safety {
        nets.push(("safety_g", &mut s.model.g_net));
    }
    if let Some(r) = &mut agent.risk {
        nets.push(("q_risk", &mut r.q_risk.net));
        nets.push(("q_risk_target", &mut r.q_risk.target));
        nets.push(("pi_risk", &mut r.pi_risk));
    }
    if let Some(m) = &mut agent.multiplier_net {
        nets.push(("multiplier_net", &mut m.net));
    }
    nets
}

pub fn to_bytes(agent: &Agent, step: u64) -> Result<Vec<u8>> {
    let nets = named_nets(agent);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        algo: agent.config.algo,
        env: agent.config.env,
        step,
        config: agent.config.clone(),
        scalar_multiplier: agent.multiplier.map(|m| m.lambda),
        tensors: nets
            .iter()
            .map(|(name, net)| TensorEntry {
                name: name.to_string(),
                spec: net.spec().clone(),
                len: net.params().len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(8 + json.len() + nets.iter().map(|(_, n)| n.params().len() * 8).sum::<usize>());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, net) in nets {
        for p in net.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save(path: &Path, agent: &Agent, step: u64) -> Result<()> {
    std::fs::write(path, to_bytes(agent, step)?)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub agent: Agent,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let header: [u8; 8] = bytes
        .get(..8)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| corrupt("file shorter than its length prefix"))?;
    let manifest_len = usize::try_from(u64::from_le_bytes(header)).map_err(|_| corrupt("manifest length overflows"))?;
    let body = bytes
        .get(8..8usize.saturating_add(manifest_len))
        .filter(|b| b.len() == manifest_len)
        .ok_or_else(|| corrupt("truncated manifest"))?;
    let value: serde_json::Value = serde_json::from_slice(body).map_err(|e| corrupt(format!("unreadable manifest: {e}")))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt("manifest has no format version"))?;
    if found != FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: found as u32,
            expected: FORMAT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| corrupt(format!("invalid manifest: {e}")))?;

    let mut agent = Agent::new(
        &manifest.config,
        NetSeeds {
            backbone: 0,
            safety: 0,
            risk: 0,
            multiplier: 0,
        },
    )?;
    if let (Some(m), Some(l)) = (agent.multiplier.as_mut(), manifest.scalar_multiplier) {
        m.lambda = l;
        agent.last_lambda = l;
    }
    let mut offset = 8 + manifest_len;
    let slots = named_nets_mut(&mut agent);
    if slots.len() != manifest.tensors.len() {
        return Err(corrupt(format!(
            "manifest lists {} tensors, algorithm needs {}",
            manifest.tensors.len(),
            slots.len()
        )));
    }
    for ((name, slot), entry) in slots.into_iter().zip(&manifest.tensors) {
        if entry.name != name || &entry.spec != slot.spec() || entry.len != slot.params().len() {
            return Err(corrupt(format!("tensor `{}` does not match the expected `{name}`", entry.name)));
        }
        let end = offset + entry.len * 8;
        let raw = bytes.get(offset..end).ok_or_else(|| corrupt(format!("truncated tensor `{name}`")))?;
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        *slot = Mlp::from_params(entry.spec.clone(), params)?;
        offset = end;
    }
    if offset != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok(Checkpoint { manifest, agent })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_bytes(&std::fs::read(path)?)
}

/// Loads a checkpoint and insists it was trained by `algo`.
pub fn load_for(path: &Path, algo: Algo) -> Result<Checkpoint> {
    let ck = load(path)?;
    if ck.manifest.algo != algo {
        return Err(Error::AlgoMismatch {
            found: ck.manifest.algo.to_string(),
            requested: algo.to_string(),
        });
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn agent(algo: Algo) -> Agent {
        let mut rng = ChaCha8Rng::seed_from_u64(algo as u64);
        Agent::new(&RunConfig::new(algo, EnvKind::HazardWorld), NetSeeds::draw(&mut rng)).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        for algo in Algo::ALL {
            let a = agent(algo);
            let back = from_bytes(&to_bytes(&a, 42).unwrap()).unwrap();
            assert_eq!(back.manifest.step, 42);
            assert_eq!(back.manifest.algo, algo);
            let (orig, loaded) = (named_nets(&a), named_nets(&back.agent));
            assert_eq!(orig.len(), loaded.len());
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for ((_, x), (_, y)) in orig.iter().zip(&loaded) {
                for _ in 0..100 {
                    let input: Vec<f64> = (0..x.input_dim()).map(|_| rng.gen_range(-3.0..3.0)).collect();
                    let (u, v) = (x.forward(&input).unwrap(), y.forward(&input).unwrap());
                    assert!(u.iter().zip(&v).all(|(p, q)| p.to_bits() == q.to_bits()));
                }
            }
        }
    }

    #[test]
    fn truncation_is_reported_as_corruption() {
        let bytes = to_bytes(&agent(Algo::Usl), 0).unwrap();
        for cut in [0, 4, 20, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(from_bytes(&extra), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let bytes = to_bytes(&agent(Algo::Td3), 0).unwrap();
        let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let mut manifest: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
        manifest["format_version"] = serde_json::json!(99);
        let json = serde_json::to_vec(&manifest).unwrap();
        let mut patched = (json.len() as u64).to_le_bytes().to_vec();
        patched.extend_from_slice(&json);
        patched.extend_from_slice(&bytes[8 + len..]);
        assert!(matches!(
            from_bytes(&patched),
            Err(Error::VersionMismatch { found: 99, expected: FORMAT_VERSION })
        ));
    }

    #[test]
    fn algo_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save(&path, &agent(Algo::Fac), 0).unwrap();
        assert!(load_for(&path, Algo::Fac).is_ok());
        assert!(matches!(load_for(&path, Algo::Usl), Err(Error::AlgoMismatch { .. })));
    }
}
