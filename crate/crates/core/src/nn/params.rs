use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Ordered, named trainable tensors. Serialized as a list of named arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    /// Inserts a tensor with entries uniform in `[-range, range]`.
    pub fn insert_uniform<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: &[usize], range: f64, rng: &mut R) -> usize {
        let n = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-range..=range)).collect();
        self.insert(name, Tensor::from_parts(shape.to_vec(), values))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Contract(format!("no parameter named {name:?}")))
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.tensors[self.id(name)?])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Records every tensor on the tape, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Checks names and shapes against `expected`.
    pub fn check_layout(&self, expected: &[(String, Vec<usize>)]) -> Result<()> {
        if self.len() != expected.len() {
            return Err(Error::parse(
                "params",
                format!("expected {} arrays, found {}", expected.len(), self.len()),
            ));
        }
        for ((name, shape), (n, t)) in expected.iter().zip(self.names.iter().zip(&self.tensors)) {
            if name != n || shape.as_slice() != t.shape() {
                return Err(Error::parse(
                    "params",
                    format!("expected {name} {shape:?}, found {n} {:?}", t.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.names.iter().cloned().zip(self.tensors.iter().map(|t| t.shape().to_vec())).collect()
    }
}

impl Serialize for ParamSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let arrays: Vec<NamedArray> = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| NamedArray {
                name: n.clone(),
                shape: t.shape().to_vec(),
                values: t.values().to_vec(),
            })
            .collect();
        arrays.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let arrays = Vec::<NamedArray>::deserialize(d)?;
        let mut set = ParamSet::new();
        for a in arrays {
            let t = Tensor::new(a.shape, a.values).map_err(serde::de::Error::custom)?;
            if set.names.contains(&a.name) {
                return Err(serde::de::Error::custom(format!("duplicate parameter {}", a.name)));
            }
            set.insert(a.name, t);
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Domain};

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = stream_rng(1, Domain::Init, 0, 0, 0);
        let mut p = ParamSet::new();
        p.insert_uniform("w", &[3, 2], 0.08, &mut rng);
        p.insert("b", Tensor::zeros(&[3, 1]));
        let text = serde_json::to_string(&p).unwrap();
        let back: ParamSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        assert!(p.get(0).values().iter().all(|v| v.abs() <= 0.08));
    }

    #[test]
    fn layout_mismatch_reported() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(&[2, 2]));
        let err = p.check_layout(&[("w".into(), vec![2, 3])]).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn bad_shape_rejected_on_load() {
        let text = r#"[{"name":"w","shape":[2,2],"values":[1.0]}]"#;
        assert!(serde_json::from_str::<ParamSet>(text).is_err());
    }
}
