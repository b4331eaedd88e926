//! Versioned binary checkpoints. Layout:
//!
//! ```text
//! magic   4 bytes       "DATN"
//! version u32 LE        currently 1
//! config  u32 LE length + UTF-8 key=value text (config echo)
//! count   u32 LE        number of tensor records
//! record  u32 LE name length, name bytes,
//!         u32 LE rank, rank x u32 LE dims,
//!         product(dims) x f64 LE values
//! ```
//!
//! Model parameters are stored under their registered names; trainer
//! and optimizer state under reserved `__` names. Saving, loading and
//! saving again reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use datn_core::{Optimizer, OptimizerKind, Tensor};
use datn_model::params::ParamSet;

use crate::config::RunConfig;
use crate::error::HarnessError;
use crate::Result;

const MAGIC: &[u8; 4] = b"DATN";
const VERSION: u32 = 1;

/// Everything needed to continue or evaluate a run: the config echo,
/// the frozen concept predictor, the task head, the active optimizer
/// and the global step counter.
#[derive(Debug, Clone)]
pub struct TrainedState {
    pub config: RunConfig,
    pub concept: ParamSet,
    pub task: ParamSet,
    pub optimizer: Optimizer,
    pub step: u64,
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_record(buf: &mut Vec<u8>, name: &str, tensor: &Tensor) {
    push_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    push_u32(buf, tensor.rank() as u32);
    for &d in tensor.shape() {
        push_u32(buf, d as u32);
    }
    for &v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(HarnessError::checkpoint(self.path, "unexpected end of file"));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("eight bytes")))
    }

    fn record(&mut self) -> Result<(String, Tensor)> {
        let name_len = self.u32()? as usize;
        let name = String::from_utf8(self.take(name_len)?.to_vec())
            .map_err(|_| HarnessError::checkpoint(self.path, "record name is not UTF-8"))?;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(self.f64()?);
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| HarnessError::checkpoint(self.path, e.to_string()))?;
        Ok((name, tensor))
    }
}

impl TrainedState {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut records: Vec<(String, Tensor)> = Vec::new();
        for (name, tensor) in self.concept.iter() {
            records.push((name.to_owned(), tensor.clone()));
        }
        for (name, tensor) in self.task.iter() {
            records.push((name.to_owned(), tensor.clone()));
        }
        records.push((
            "__trainer.step".to_owned(),
            Tensor::scalar(self.step as f64),
        ));
        let opt = &self.optimizer;
        let kind_code = match opt.kind {
            OptimizerKind::Sgd => 0.0,
            OptimizerKind::RmsProp => 1.0,
            OptimizerKind::Adam => 2.0,
        };
        records.push((
            "__opt.hyper".to_owned(),
            Tensor::vector(vec![
                kind_code,
                opt.learning_rate,
                opt.beta1,
                opt.beta2,
                opt.rho,
                opt.epsilon,
                opt.step_count as f64,
            ]),
        ));
        for (i, m) in opt.m.iter().enumerate() {
            records.push((format!("__opt.m.{i}"), Tensor::vector(m.clone())));
        }
        for (i, v) in opt.v.iter().enumerate() {
            records.push((format!("__opt.v.{i}"), Tensor::vector(v.clone())));
        }

        let config_text = self.config.to_text();
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        push_u32(&mut buf, VERSION);
        push_u32(&mut buf, config_text.len() as u32);
        buf.extend_from_slice(config_text.as_bytes());
        push_u32(&mut buf, records.len() as u32);
        for (name, tensor) in &records {
            push_record(&mut buf, name, tensor);
        }
        fs::write(path, buf).map_err(|e| HarnessError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<TrainedState> {
        let display = path.display().to_string();
        let bytes =
            fs::read(path).map_err(|e| HarnessError::io(display.clone(), e))?;
        let mut reader = Reader {
            bytes: &bytes,
            pos: 0,
            path: &display,
        };
        if reader.take(4)? != MAGIC {
            return Err(HarnessError::checkpoint(&display, "bad magic bytes"));
        }
        let version = reader.u32()?;
        if version != VERSION {
            return Err(HarnessError::checkpoint(
                &display,
                format!("unsupported format version {version}"),
            ));
        }
        let config_len = reader.u32()? as usize;
        let config_text = String::from_utf8(reader.take(config_len)?.to_vec())
            .map_err(|_| HarnessError::checkpoint(&display, "config echo is not UTF-8"))?;
        let mut config = RunConfig::default();
        config.apply_text(&config_text, &display)?;

        let count = reader.u32()? as usize;
        let mut concept = ParamSet::new();
        let mut task = ParamSet::new();
        let mut step = 0u64;
        let mut hyper: Option<Vec<f64>> = None;
        let mut moments_m: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut moments_v: Vec<(usize, Vec<f64>)> = Vec::new();
        for _ in 0..count {
            let (name, tensor) = reader.record()?;
            if let Some(rest) = name.strip_prefix("__opt.m.") {
                let idx: usize = rest
                    .parse()
                    .map_err(|_| HarnessError::checkpoint(&display, "bad moment index"))?;
                moments_m.push((idx, tensor.data().to_vec()));
            } else if let Some(rest) = name.strip_prefix("__opt.v.") {
                let idx: usize = rest
                    .parse()
                    .map_err(|_| HarnessError::checkpoint(&display, "bad moment index"))?;
                moments_v.push((idx, tensor.data().to_vec()));
            } else if name == "__opt.hyper" {
                hyper = Some(tensor.data().to_vec());
            } else if name == "__trainer.step" {
                step = tensor.item() as u64;
            } else if name.starts_with("concept.") {
                concept.insert(name, tensor);
            } else {
                task.insert(name, tensor);
            }
        }
        let hyper =
            hyper.ok_or_else(|| HarnessError::checkpoint(&display, "missing optimizer state"))?;
        if hyper.len() != 7 {
            return Err(HarnessError::checkpoint(&display, "malformed optimizer state"));
        }
        let kind = match hyper[0] as u32 {
            0 => OptimizerKind::Sgd,
            1 => OptimizerKind::RmsProp,
            2 => OptimizerKind::Adam,
            _ => return Err(HarnessError::checkpoint(&display, "unknown optimizer kind")),
        };
        let mut optimizer = Optimizer::new(kind, hyper[1]);
        optimizer.beta1 = hyper[2];
        optimizer.beta2 = hyper[3];
        optimizer.rho = hyper[4];
        optimizer.epsilon = hyper[5];
        optimizer.step_count = hyper[6] as u64;
        moments_m.sort_by_key(|(i, _)| *i);
        moments_v.sort_by_key(|(i, _)| *i);
        optimizer.m = moments_m.into_iter().map(|(_, v)| v).collect();
        optimizer.v = moments_v.into_iter().map(|(_, v)| v).collect();

        Ok(TrainedState {
            config,
            concept,
            task,
            optimizer,
            step,
        })
    }
}
