use crate::error::{Error, Result};
use crate::tensor::{Element, Gradients, RngStream, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named parameter tensors.
///
/// Layers refer to their weights by [`ParamId`], so the whole network can be
/// copied, averaged, cast, or serialized by walking one flat list.
#[derive(Debug, Clone)]
pub struct ParamStore<T: Element> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

impl<T: Element> ParamStore<T> {
    /// Register a trainable tensor drawn from a stream keyed by its name, so
    /// that a parameter's initial value does not depend on which other
    /// parameters exist.
    pub(crate) fn register(&mut self, name: String, shape: &[usize], init: Init, root: &RngStream) -> ParamId {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Normal(std) => root
                .split_named(&name)
                .normals(n)
                .into_iter()
                .map(|v| T::of(v * std))
                .collect(),
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
        };
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors
            .push(Tensor::parameter(data, shape).expect("shape matches data"));
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replace the values of parameter `name`, keeping its trainability.
    pub fn set(&mut self, name: &str, data: Vec<T>) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))?;
        self.set_index(i, data)
    }

    pub(crate) fn set_index(&mut self, i: usize, data: Vec<T>) -> Result<()> {
        let old = &self.tensors[i];
        let fresh = Tensor::new(data, old.shape())?;
        self.tensors[i] = if old.requires_grad() { fresh.to_parameter() } else { fresh };
        Ok(())
    }

    /// Same values with every tensor cut from gradient tracking.
    pub fn frozen(&self) -> Self {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::detach).collect(),
        }
    }

    /// Same values as fresh trainable leaves.
    pub fn trainable(&self) -> Self {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::to_parameter).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| {
                    let data = t.data().iter().map(|x| U::of(x.as_f64())).collect();
                    let u = Tensor::new(data, t.shape()).expect("same shape");
                    if t.requires_grad() {
                        u.to_parameter()
                    } else {
                        u
                    }
                })
                .collect(),
        }
    }

    /// Gradient per parameter in store order, zero where unreachable.
    pub fn gradients(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| grads.wrt(t)).collect()
    }

    /// Names and shapes match `other` exactly.
    pub fn same_layout<U: Element>(&self, other: &ParamStore<U>) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.same_layout(other)
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.bitwise_eq(b))
    }

    /// Rebuild from raw `(name, shape, data)` triples in the order of `self`.
    pub(crate) fn replace_all(&mut self, values: Vec<Vec<T>>) -> Result<()> {
        if values.len() != self.tensors.len() {
            return Err(Error::ArchitectureMismatch(format!(
                "expected {} parameter arrays, got {}",
                self.tensors.len(),
                values.len()
            )));
        }
        for (i, v) in values.into_iter().enumerate() {
            self.set_index(i, v)?;
        }
        Ok(())
    }
}
