//! Binary checkpoint: config snapshot, model tensors, optional optimizer state.
//!
//! Layout (little endian):
//! `FSCNCKPT`, u32 version, u32 + config TOML, f64 best val loss,
//! u64 best epoch (`u64::MAX` if none), u32 tensor count, then per tensor
//! u16 + name, u8 role, u8 rank, u64 dims, f32 values. Finally u8 flag and,
//! if set, the optimizer step count, hyperparameters and both moment lists.

use std::path::Path;

use fscnet::nn::{Module, ModelParams, TensorRole};
use fscnet::optim::OptimState;
use fscnet::{SeededRng, Tensor};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

const MAGIC: &[u8; 8] = b"FSCNCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub best_val_loss: f64,
    pub best_epoch: Option<u64>,
    pub model: ModelParams<f32>,
    pub optim: Option<OptimState<f32>>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(msg.into())
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor<f32>) {
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> CliResult<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> CliResult<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> CliResult<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn name(&mut self) -> CliResult<String> {
        let n = u16::from_le_bytes(self.array()?) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))
    }

    fn tensor(&mut self) -> CliResult<Tensor<f32>> {
        let rank = self.u8()? as usize;
        let shape = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<CliResult<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n.ok_or_else(|| bad(format!("tensor shape {shape:?} overflows")))?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| bad("tensor too large"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        Tensor::from_vec(shape, data).map_err(|e| bad(e.to_string()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let config = self.config.to_toml();
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&self.best_val_loss.to_le_bytes());
        out.extend_from_slice(&self.best_epoch.unwrap_or(u64::MAX).to_le_bytes());

        let mut tensors = Vec::new();
        self.model.visit("", &mut |name, t, role| tensors.push((name.to_string(), t, role)));
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t, role) in tensors {
            put_name(&mut out, &name);
            out.push(matches!(role, TensorRole::Statistic) as u8);
            put_tensor(&mut out, t);
        }

        match &self.optim {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                out.extend_from_slice(&o.step_count.to_le_bytes());
                for h in [o.learning_rate, o.beta1, o.beta2, o.eps] {
                    out.extend_from_slice(&h.to_le_bytes());
                }
                out.extend_from_slice(&(o.names.len() as u32).to_le_bytes());
                for ((name, m), v) in o.names.iter().zip(&o.first_moment).zip(&o.second_moment) {
                    put_name(&mut out, name);
                    put_tensor(&mut out, m);
                    put_tensor(&mut out, v);
                }
            }
        }
        out
    }

    /// Parses a checkpoint and rebuilds the model from its config. Every
    /// tensor name and shape must match that architecture exactly.
    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok() != Some(MAGIC.as_slice()) {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| bad("config snapshot is not UTF-8"))?;
        let config = ExperimentConfig::from_toml(text)?;
        let best_val_loss = r.f64()?;
        let best_epoch = Some(r.u64()?).filter(|&e| e != u64::MAX);

        let count = r.u32()? as usize;
        let mut stored = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.name()?;
            let role = r.u8()?;
            stored.push((name, role, r.tensor()?));
        }
        let mut model = ModelParams::<f32>::new(config.model, &mut SeededRng::new(0))?;
        let mut expected = 0;
        let mut mismatch = None;
        model.visit_mut("", &mut |name, t, role| {
            let slot = stored.get(expected);
            expected += 1;
            if mismatch.is_some() {
                return;
            }
            match slot {
                Some((n, r, v)) if n == name && *r == matches!(role, TensorRole::Statistic) as u8 => {
                    if v.shape() == t.shape() {
                        t.data_mut().copy_from_slice(v.data());
                    } else {
                        mismatch = Some(format!(
                            "`{name}` has shape {:?} in the checkpoint, model expects {:?}",
                            v.shape(),
                            t.shape()
                        ));
                    }
                }
                Some((n, _, _)) => mismatch = Some(format!("expected tensor `{name}`, found `{n}`")),
                None => mismatch = Some(format!("checkpoint is missing `{name}`")),
            }
        });
        if let Some(m) = mismatch {
            return Err(bad(format!("incompatible checkpoint: {m}")));
        }
        if expected != stored.len() {
            return Err(bad(format!(
                "incompatible checkpoint: {} tensors stored, model has {expected}",
                stored.len()
            )));
        }

        let optim = match r.u8()? {
            0 => None,
            1 => {
                let step_count = r.u64()?;
                let (learning_rate, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
                let n = r.u32()? as usize;
                let mut state = OptimState::new(&model, learning_rate)?;
                if n != state.names.len() {
                    return Err(bad(format!(
                        "optimizer state has {n} entries, model has {}",
                        state.names.len()
                    )));
                }
                for i in 0..n {
                    let name = r.name()?;
                    let (m, v) = (r.tensor()?, r.tensor()?);
                    if name != state.names[i] || m.shape() != state.first_moment[i].shape() || v.shape() != m.shape() {
                        return Err(bad(format!("optimizer entry `{name}` does not match the model")));
                    }
                    state.first_moment[i] = m;
                    state.second_moment[i] = v;
                }
                state.step_count = step_count;
                state.beta1 = beta1;
                state.beta2 = beta2;
                state.eps = eps;
                Some(state)
            }
            f => return Err(bad(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            best_val_loss,
            best_epoch,
            model,
            optim,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fscnet::nn::ModelConfig;

    fn sample(with_optim: bool) -> Checkpoint {
        let mut config = ExperimentConfig::default();
        config.model = ModelConfig { dim: 4, num_classes: 1 };
        let model = ModelParams::<f32>::new(config.model, &mut SeededRng::new(3)).unwrap();
        let optim = with_optim.then(|| {
            let mut o = OptimState::new(&model, 1e-3).unwrap();
            o.step_count = 5;
            o.first_moment[0].data_mut()[0] = 0.25;
            o
        });
        Checkpoint {
            config: config.resolved().unwrap(),
            best_val_loss: 0.3,
            best_epoch: Some(2),
            model,
            optim,
        }
    }

    #[test]
    fn round_trip() {
        for with_optim in [false, true] {
            let c = sample(with_optim);
            let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
            assert_eq!(back.model, c.model);
            assert_eq!(back.optim, c.optim);
            assert_eq!(back.config, c.config);
            assert_eq!((back.best_val_loss, back.best_epoch), (0.3, Some(2)));
            assert_eq!(back.to_bytes(), c.to_bytes());
        }
    }

    #[test]
    fn rejects_other_architecture() {
        let c = sample(false);
        let mut bytes = c.to_bytes();
        // claim dim 8 in the config snapshot while the tensors are for dim 4
        let text = c.config.to_toml();
        let patched = text.replace("dim = 4", "dim = 8");
        let start = 12 + 4;
        bytes.splice(start - 4..start + text.len(), {
            let mut v = (patched.len() as u32).to_le_bytes().to_vec();
            v.extend_from_slice(patched.as_bytes());
            v
        });
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("incompatible"), "{err}");
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(Checkpoint::from_bytes(b"nonsense").is_err());
        let bytes = sample(true).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
