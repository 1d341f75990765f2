use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::dataset::mix64;
use crate::distill::losses::Task;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which part of a network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Backbone,
    Head(Task),
}

impl Group {
    pub fn label(self) -> String {
        match self {
            Group::Backbone => "backbone".into(),
            Group::Head(t) => format!("head_{}", t.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub group: Group,
    pub value: Tensor<T>,
}

/// Ordered, named parameter list of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    /// `U(−√(gain/fan_in), +√(gain/fan_in))`
    FanIn { fan_in: usize, gain: f64 },
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Adds a parameter initialized from a stream seeded by `seed` and `name`.
    pub fn add(&mut self, name: &str, group: Group, shape: &[usize], init: Init, seed: u64) -> usize {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::FanIn { fan_in, gain } => {
                let bound = (gain / fan_in.max(1) as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ name_hash(name)));
                (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect()
            }
        };
        self.params.push(Param {
            name: name.to_string(),
            group,
            value: Tensor::from_vec(shape, data).expect("shape matches data"),
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Param<T> {
        &self.params[i]
    }

    pub fn value(&self, i: usize) -> &Tensor<T> {
        &self.params[i].value
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.params[i].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn count_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), group: p.group, value: p.value.cast() })
                .collect(),
        }
    }

    /// SHA-256 over the 64-bit little-endian bit patterns of every parameter
    /// in `group`, in store order.
    pub fn checksum(&self, group: Group) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| p.group == group) {
            h.update(p.name.as_bytes());
            for &x in p.value.data() {
                h.update(x.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Checksum over the whole store.
    pub fn checksum_all(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for &x in p.value.data() {
                h.update(x.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn groups(&self) -> Vec<Group> {
        let mut g: Vec<Group> = self.params.iter().map(|p| p.group).collect();
        g.sort();
        g.dedup();
        g
    }
}

fn name_hash(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initialization_is_seeded_and_bounded() {
        let mut a = ParamStore::<f64>::new();
        let mut b = ParamStore::<f64>::new();
        a.add("w", Group::Backbone, &[4, 9], Init::FanIn { fan_in: 9, gain: 6.0 }, 7);
        b.add("w", Group::Backbone, &[4, 9], Init::FanIn { fan_in: 9, gain: 6.0 }, 7);
        assert_eq!(a, b);
        let bound = (6.0f64 / 9.0).sqrt();
        assert!(a.value(0).data().iter().all(|x| x.abs() < bound));
    }

    #[test]
    fn checksums_are_per_group() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Group::Backbone, &[3], Init::FanIn { fan_in: 3, gain: 3.0 }, 1);
        s.add("b", Group::Head(Task::Report), &[3], Init::FanIn { fan_in: 3, gain: 3.0 }, 1);
        let head = s.checksum(Group::Head(Task::Report));
        s.value_mut(0).data_mut()[0] += 1.0;
        assert_eq!(s.checksum(Group::Head(Task::Report)), head);
        let backbone = s.checksum(Group::Backbone);
        s.value_mut(0).data_mut()[0] -= 1.0;
        assert_ne!(s.checksum(Group::Backbone), backbone);
    }
}
