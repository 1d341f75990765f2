//! Checkpoint directory:
//!
//! ```text
//! meta.json           architecture, role, task, vocab hash, creation seed
//! params/<name>.f64   raw little-endian 64-bit floats, one file per parameter
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{ArchConfig, Network, Student, Teacher};
use super::params::Group;
use crate::data::io::write_json_pretty;
use crate::distill::losses::Task;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: Group,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub role: String,
    pub task: Option<Task>,
    pub arch: ArchConfig,
    pub vocab_hash: String,
    pub creation_seed: u64,
    pub parameters: Vec<ParamMeta>,
}

fn save_network<T: Scalar>(net: &Network<T>, dir: &Path, role: &str, task: Option<Task>, vocab_hash: &str, seed: u64) -> Result<()> {
    let pdir = dir.join("params");
    fs::create_dir_all(&pdir)?;
    let mut parameters = Vec::new();
    for p in net.params().iter() {
        let mut bytes = Vec::with_capacity(p.value.len() * 8);
        for &x in p.value.data() {
            bytes.extend_from_slice(&x.as_f64().to_le_bytes());
        }
        fs::write(pdir.join(format!("{}.f64", p.name)), bytes)?;
        parameters.push(ParamMeta { name: p.name.clone(), shape: p.value.shape().to_vec(), group: p.group });
    }
    let meta = CheckpointMeta {
        role: role.to_string(),
        task,
        arch: net.arch().clone(),
        vocab_hash: vocab_hash.to_string(),
        creation_seed: seed,
        parameters,
    };
    write_json_pretty(&dir.join("meta.json"), &meta)
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join("meta.json");
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn load_network<T: Scalar>(dir: &Path, role: &str) -> Result<(Network<T>, CheckpointMeta)> {
    let meta = read_meta(dir)?;
    if meta.role != role {
        return Err(Error::Checkpoint(format!("{} holds a {}, expected a {role}", dir.display(), meta.role)));
    }
    let mut net = Network::<T>::new(meta.arch.clone(), meta.creation_seed)?;
    if net.params().len() != meta.parameters.len() {
        return Err(Error::Checkpoint(format!(
            "meta lists {} parameters, architecture has {}",
            meta.parameters.len(),
            net.params().len()
        )));
    }
    for (i, pm) in meta.parameters.iter().enumerate() {
        let expected = net.params().get(i);
        if expected.name != pm.name || expected.value.shape() != pm.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter {i} is {} {:?} in meta but {} {:?} in the architecture",
                pm.name,
                pm.shape,
                expected.name,
                expected.value.shape()
            )));
        }
        let path = dir.join("params").join(format!("{}.f64", pm.name));
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let bytes = fs::read(&path)?;
        let n = expected.value.len();
        if bytes.len() != n * 8 {
            return Err(Error::Checkpoint(format!("{} holds {} bytes, expected {}", path.display(), bytes.len(), n * 8)));
        }
        let dst = net.params_mut().value_mut(i).data_mut();
        for (d, chunk) in dst.iter_mut().zip(bytes.chunks_exact(8)) {
            *d = T::lit(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
        }
    }
    Ok((net, meta))
}

pub fn save_teacher<T: Scalar>(teacher: &Teacher<T>, dir: &Path, vocab_hash: &str, seed: u64) -> Result<()> {
    save_network(teacher.network(), dir, "teacher", Some(teacher.task()), vocab_hash, seed)
}

pub fn save_student<T: Scalar>(student: &Student<T>, dir: &Path, vocab_hash: &str, seed: u64) -> Result<()> {
    save_network(student.network(), dir, "student", None, vocab_hash, seed)
}

pub fn load_teacher<T: Scalar>(dir: &Path) -> Result<(Teacher<T>, CheckpointMeta)> {
    let (net, meta) = load_network(dir, "teacher")?;
    Ok((Teacher::new(net)?, meta))
}

pub fn load_student<T: Scalar>(dir: &Path) -> Result<(Student<T>, CheckpointMeta)> {
    let (net, meta) = load_network(dir, "student")?;
    Ok((Student::new(net)?, meta))
}
