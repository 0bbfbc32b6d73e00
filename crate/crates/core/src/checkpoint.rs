//! Binary agent checkpoints.
//!
//! Everything is little-endian. Tensor blocks are written in the order
//! `w1, b1, w2, b2, lstm_wx, lstm_wh, lstm_b, w_out, b_out`, each as a `u64`
//! element count followed by that many `f64`.
//!
//! ```text
//! magic "FXDRQNCK" | version u32
//! shape        input u32, hidden u32, lstm u32, output u32
//! config       seq_len u64, memory_capacity u64, gamma f64, tau f64, lr f64,
//!              grad_clip f64 (NaN = disabled), exploration u8 (0 greedy, 1 eps), epsilon f64
//! train_steps  u64
//! online       9 tensor blocks
//! target       9 tensor blocks
//! adam         step u64, 9 first-moment blocks, 9 second-moment blocks
//! rng          ChaCha8 seed [u8; 32], stream u64, word_pos u128
//! acting state h block, c block
//! ```

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::agent::{Agent, AgentConfig, ExplorationMode};
use crate::error::{Error, Result};
use crate::market_data::ByteReader;
use crate::nn::{AdamState, NetShape, QNetwork, RecurrentState, Tensors};

const MAGIC: &[u8; 8] = b"FXDRQNCK";
pub const VERSION: u32 = 1;

fn put_block(buf: &mut Vec<u8>, v: &[f64]) {
    buf.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_tensors(buf: &mut Vec<u8>, t: &Tensors) {
    for s in t.slices() {
        put_block(buf, s);
    }
}

fn get_block(r: &mut ByteReader<'_>) -> Result<Vec<f64>> {
    let n = r.u64()? as usize;
    if n > 1 << 28 {
        return Err(Error::Format(format!("implausible tensor length {n}")));
    }
    (0..n).map(|_| r.f64()).collect()
}

fn get_tensors(r: &mut ByteReader<'_>, shape: &NetShape) -> Result<Tensors> {
    let mut t = Tensors::zeros(shape);
    for dst in t.slices_mut() {
        let v = get_block(r)?;
        if v.len() != dst.len() {
            return Err(Error::Format("tensor size does not match shape".into()));
        }
        dst.copy_from_slice(&v);
    }
    Ok(t)
}

pub fn to_bytes(agent: &Agent) -> Vec<u8> {
    let shape = agent.online.shape();
    let cfg = &agent.config;
    let mut buf = Vec::with_capacity(shape.param_count() * 8 * 4 + 256);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for d in [shape.input, shape.hidden, shape.lstm, shape.output] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(cfg.seq_len as u64).to_le_bytes());
    buf.extend_from_slice(&(cfg.memory_capacity as u64).to_le_bytes());
    for v in [cfg.gamma, cfg.tau, cfg.lr, cfg.grad_clip.unwrap_or(f64::NAN)] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let (tag, eps) = match cfg.exploration {
        ExplorationMode::Greedy => (0u8, 0.0),
        ExplorationMode::EpsilonGreedy { epsilon } => (1u8, epsilon),
    };
    buf.push(tag);
    buf.extend_from_slice(&eps.to_le_bytes());
    buf.extend_from_slice(&agent.train_steps.to_le_bytes());
    put_tensors(&mut buf, &agent.online.params);
    put_tensors(&mut buf, &agent.target.params);
    buf.extend_from_slice(&agent.adam.step.to_le_bytes());
    put_tensors(&mut buf, &agent.adam.m);
    put_tensors(&mut buf, &agent.adam.v);
    buf.extend_from_slice(&agent.rng.get_seed());
    buf.extend_from_slice(&agent.rng.get_stream().to_le_bytes());
    buf.extend_from_slice(&agent.rng.get_word_pos().to_le_bytes());
    put_block(&mut buf, &agent.acting_state.h);
    put_block(&mut buf, &agent.acting_state.c);
    buf
}

pub fn from_bytes(bytes: &[u8]) -> Result<Agent> {
    let mut r = ByteReader::new(bytes);
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not an agent checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let shape = NetShape::new(
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
    );
    let seq_len = r.u64()? as usize;
    let memory_capacity = r.u64()? as usize;
    let gamma = r.f64()?;
    let tau = r.f64()?;
    let lr = r.f64()?;
    let clip = r.f64()?;
    let tag = r.take(1)?[0];
    let epsilon = r.f64()?;
    let exploration = match tag {
        0 => ExplorationMode::Greedy,
        1 => ExplorationMode::EpsilonGreedy { epsilon },
        t => return Err(Error::Format(format!("unknown exploration tag {t}"))),
    };
    let config = AgentConfig {
        seq_len,
        memory_capacity,
        gamma,
        tau,
        lr,
        grad_clip: (!clip.is_nan()).then_some(clip),
        exploration,
    };
    let train_steps = r.u64()?;
    let online = QNetwork::from_tensors(shape, get_tensors(&mut r, &shape)?)?;
    let target = QNetwork::from_tensors(shape, get_tensors(&mut r, &shape)?)?;
    let step = r.u64()?;
    let m = get_tensors(&mut r, &shape)?;
    let v = get_tensors(&mut r, &shape)?;
    let mut seed = [0u8; 32];
    seed.copy_from_slice(r.take(32)?);
    let stream = r.u64()?;
    let word_pos = r.u128()?;
    let h = get_block(&mut r)?;
    let c = get_block(&mut r)?;
    if h.len() != shape.lstm || c.len() != shape.lstm {
        return Err(Error::Format("acting state width mismatch".into()));
    }
    if !r.is_at_end() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }

    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    Ok(Agent {
        config,
        online,
        target,
        adam: AdamState { m, v, step },
        rng,
        acting_state: RecurrentState { h, c },
        train_steps,
    })
}

pub fn save(agent: &Agent, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(agent)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Agent> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
