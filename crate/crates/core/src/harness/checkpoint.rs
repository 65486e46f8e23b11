//! Binary model checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "ALCM" | u32 version | u8 kind (0 teacher, 1 consistency)
//! u32 × 8 architecture (data_dim seq_len width blocks heads ffn num_classes num_timesteps)
//! u8 toggle bits (1 rope, 2 rmsnorm, 4 swiglu)
//! u32 N | f64 beta_start beta_end sigma_data kappa
//! u32 k | f64 omega_min omega_max mu eta          (zeros for a teacher)
//! u16 len + utf-8 dataset name
//! u8 parameter-set count (1 teacher, 2 student then EMA)
//! per set: u32 count, then per array: u16 len + name | u8 ndim | u32 dims | f32 data
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::data::ToyDataset;
use crate::lcm::{ConsistencyModel, DistillParams};
use crate::nn::{DenoiserNet, NetConfig, Toggles};
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::teacher::TeacherModel;
use crate::tensor::RngStream;

pub const MAGIC: [u8; 4] = *b"ALCM";
pub const VERSION: u32 = 1;

const KIND_TEACHER: u8 = 0;
const KIND_CONSISTENCY: u8 = 1;

#[derive(Debug, Clone)]
pub enum Model {
    Teacher(TeacherModel<f32>),
    Consistency(ConsistencyModel<f32>),
}

impl Model {
    pub fn net_config(&self) -> &NetConfig {
        match self {
            Model::Teacher(t) => t.net.config(),
            Model::Consistency(m) => m.student.config(),
        }
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        match self {
            Model::Teacher(t) => &t.schedule,
            Model::Consistency(m) => &m.schedule,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub dataset: ToyDataset,
    pub model: Model,
}

impl Checkpoint {
    pub fn teacher(dataset: ToyDataset, model: TeacherModel<f32>) -> Self {
        Checkpoint {
            dataset,
            model: Model::Teacher(model),
        }
    }

    pub fn consistency(dataset: ToyDataset, model: ConsistencyModel<f32>) -> Self {
        Checkpoint {
            dataset,
            model: Model::Consistency(model),
        }
    }

    pub fn into_teacher(self) -> Result<TeacherModel<f32>> {
        match self.model {
            Model::Teacher(t) => Ok(t),
            Model::Consistency(_) => Err(Error::InvalidArgument("expected a teacher checkpoint".into())),
        }
    }

    pub fn into_consistency(self) -> Result<ConsistencyModel<f32>> {
        match self.model {
            Model::Consistency(m) => Ok(m),
            Model::Teacher(_) => Err(Error::InvalidArgument("expected a distilled checkpoint".into())),
        }
    }

    /// Fail unless the stored architecture equals `expected`.
    pub fn expect_architecture(&self, expected: &NetConfig) -> Result<()> {
        let found = self.model.net_config();
        if found != expected {
            return Err(Error::ArchitectureMismatch(format!("checkpoint has {found:?}, expected {expected:?}")));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(&MAGIC);
        put_u32(&mut w, VERSION);
        let (kind, nets, hyper): (u8, Vec<&DenoiserNet<f32>>, DistillParams) = match &self.model {
            Model::Teacher(t) => (
                KIND_TEACHER,
                vec![&t.net],
                DistillParams {
                    k: 0,
                    omega_min: 0.0,
                    omega_max: 0.0,
                    mu: 0.0,
                    eta: 0.0,
                },
            ),
            Model::Consistency(m) => (KIND_CONSISTENCY, vec![&m.student, &m.ema], m.params),
        };
        w.push(kind);
        let c = self.model.net_config();
        for v in [c.data_dim, c.seq_len, c.width, c.blocks, c.heads, c.ffn, c.num_classes, c.num_timesteps] {
            put_u32(&mut w, v as u32);
        }
        let t = c.toggles;
        w.push(t.use_rope as u8 | (t.use_rmsnorm as u8) << 1 | (t.use_swiglu as u8) << 2);
        let s = self.model.schedule().params();
        put_u32(&mut w, s.n as u32);
        for v in [s.beta_start, s.beta_end, s.sigma_data, s.kappa] {
            w.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut w, hyper.k as u32);
        for v in [hyper.omega_min, hyper.omega_max, hyper.mu, hyper.eta] {
            w.extend_from_slice(&v.to_le_bytes());
        }
        put_str(&mut w, &self.dataset.to_string());
        w.push(nets.len() as u8);
        for net in nets {
            put_u32(&mut w, net.params().len() as u32);
            for (name, tensor) in net.params().iter() {
                put_str(&mut w, name);
                w.push(tensor.shape().len() as u8);
                for &d in tensor.shape() {
                    put_u32(&mut w, d as u32);
                }
                for &x in tensor.data() {
                    w.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let kind = r.u8()?;
        let mut a = [0usize; 8];
        for v in a.iter_mut() {
            *v = r.u32()? as usize;
        }
        let bits = r.u8()?;
        let config = NetConfig {
            data_dim: a[0],
            seq_len: a[1],
            width: a[2],
            blocks: a[3],
            heads: a[4],
            ffn: a[5],
            num_classes: a[6],
            num_timesteps: a[7],
            toggles: Toggles {
                use_rope: bits & 1 != 0,
                use_rmsnorm: bits & 2 != 0,
                use_swiglu: bits & 4 != 0,
            },
        };
        let schedule = NoiseSchedule::new(ScheduleParams {
            n: r.u32()? as usize,
            beta_start: r.f64()?,
            beta_end: r.f64()?,
            sigma_data: r.f64()?,
            kappa: r.f64()?,
        })?;
        let hyper = DistillParams {
            k: r.u32()? as usize,
            omega_min: r.f64()?,
            omega_max: r.f64()?,
            mu: r.f64()?,
            eta: r.f64()?,
        };
        let dataset: ToyDataset = r.string()?.parse()?;
        let sets = r.u8()?;
        let expected_sets = match kind {
            KIND_TEACHER => 1,
            KIND_CONSISTENCY => 2,
            other => return Err(Error::InvalidArgument(format!("unknown checkpoint kind {other}"))),
        };
        if sets != expected_sets {
            return Err(Error::InvalidArgument(format!("expected {expected_sets} parameter sets, found {sets}")));
        }
        let mut nets = Vec::new();
        for _ in 0..sets {
            nets.push(read_net(&mut r, config)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::InvalidArgument(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let model = if kind == KIND_TEACHER {
            let net = nets.pop().expect("one set");
            Model::Teacher(TeacherModel { net, schedule })
        } else {
            let ema = nets.pop().expect("two sets");
            let student = nets.pop().expect("two sets");
            Model::Consistency(ConsistencyModel::new(student, ema, schedule, hyper)?)
        };
        Ok(Checkpoint { dataset, model })
    }

    /// Write to a temporary file next to `path`, then rename over it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Whole-file write via a sibling temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_net(r: &mut Reader<'_>, config: NetConfig) -> Result<DenoiserNet<f32>> {
    let mut net = DenoiserNet::<f32>::new(config, &RngStream::new(0))?;
    let count = r.u32()? as usize;
    if count != net.params().len() {
        return Err(Error::ArchitectureMismatch(format!(
            "descriptor implies {} arrays, file has {count}",
            net.params().len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for (name, tensor) in net.params().iter() {
        let stored = r.string()?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        if stored != name || shape != tensor.shape() {
            return Err(Error::ArchitectureMismatch(format!(
                "array {stored:?} {shape:?} where the descriptor implies {name:?} {:?}",
                tensor.shape()
            )));
        }
        let raw = r.take(4 * tensor.numel())?;
        values.push(
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect(),
        );
    }
    net.params_mut().replace_all(values)?;
    Ok(net)
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    w.extend_from_slice(&(s.len() as u16).to_le_bytes());
    w.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated)?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::InvalidArgument(format!("bad utf-8 name: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> NetConfig {
        NetConfig {
            width: 8,
            heads: 2,
            ffn: 16,
            ..NetConfig::toy(2, 1, 8, 50)
        }
    }

    fn teacher() -> TeacherModel<f32> {
        let schedule = NoiseSchedule::new(ScheduleParams {
            n: 50,
            ..ScheduleParams::default()
        })
        .unwrap();
        TeacherModel::new(config(), schedule, &RngStream::new(3)).unwrap()
    }

    #[test]
    fn consistency_round_trip_is_byte_identical() {
        let t = teacher();
        let mut m = ConsistencyModel::from_teacher(&t, DistillParams { k: 5, ..Default::default() }).unwrap();
        m.student.params_mut().set("out_proj.bias", vec![0.25, -1.5]).unwrap();
        let ck = Checkpoint::consistency(ToyDataset::Rings2d, m.clone());
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        let m2 = back.into_consistency().unwrap();
        assert!(m2.student.params().bitwise_eq(m.student.params()));
        assert!(m2.ema.params().bitwise_eq(m.ema.params()));
        assert_eq!(m2.params, m.params);
        assert!(m2.student.params().tensors().iter().all(|t| t.requires_grad()));
        assert!(m2.ema.params().tensors().iter().all(|t| !t.requires_grad()));
    }

    #[test]
    fn corrupt_files_give_distinct_errors() {
        let bytes = Checkpoint::teacher(ToyDataset::Rings2d, teacher()).to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic(_))));

        let mut bad = bytes.clone();
        bad[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::VersionMismatch { found: 7, .. })));

        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Truncated)));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..2]), Err(Error::Truncated)));

        // widen the descriptor without touching the arrays
        let mut bad = bytes.clone();
        bad[17..21].copy_from_slice(&16u32.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::ArchitectureMismatch(_))));
    }

    #[test]
    fn architecture_expectation() {
        let ck = Checkpoint::teacher(ToyDataset::Rings2d, teacher());
        assert!(ck.expect_architecture(&config()).is_ok());
        let other = NetConfig { blocks: 3, ..config() };
        assert!(matches!(ck.expect_architecture(&other), Err(Error::ArchitectureMismatch(_))));
        assert!(ck.into_consistency().is_err());
    }

    #[test]
    fn save_load_save_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        Checkpoint::teacher(ToyDataset::Seqtoy, teacher()).save(&a).unwrap();
        let loaded = Checkpoint::load(&a).unwrap();
        assert_eq!(loaded.dataset, ToyDataset::Seqtoy);
        loaded.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert!(matches!(Checkpoint::load(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
