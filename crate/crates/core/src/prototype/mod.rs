//! Class prototypes: the per-class mean of L2-normalized support embeddings.
//!
//! Onboarding a class never touches existing prototypes, and a store is
//! immutable once handed to the matcher.

pub(crate) mod store_file;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::embedding::{dot, l2_norm, l2_normalize, Embedding, EPS_NORM};
use crate::error::{Error, Result};

pub use store_file::{load_store, save_store, STORE_MAGIC, STORE_VERSION};

/// BOP object id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone)]
pub struct SupportSet {
    pub class_id: ClassId,
    pub name: Option<String>,
    pub embeddings: Vec<Embedding>,
}

impl SupportSet {
    pub fn new(class_id: ClassId, embeddings: Vec<Embedding>) -> Self {
        Self {
            class_id,
            name: None,
            embeddings,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    class_id: ClassId,
    name: Option<String>,
    vector: Vec<f64>,
    k_support: u16,
}

impl Prototype {
    pub(crate) fn from_parts(class_id: ClassId, name: Option<String>, vector: Vec<f64>, k_support: u16) -> Self {
        Self {
            class_id,
            name: name.filter(|n| !n.is_empty()),
            vector,
            k_support,
        }
    }

    pub fn class_id(&self) -> ClassId {
        self.class_id
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn k_support(&self) -> u16 {
        self.k_support
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.vector)
    }
}

/// Mean of the normalized support embeddings, accumulated in input order.
pub fn build_prototype(support: &SupportSet) -> Result<Prototype> {
    let first = support
        .embeddings
        .first()
        .ok_or(Error::EmptySupport(support.class_id.0))?;
    let k = support.embeddings.len();
    let k_support = u16::try_from(k)
        .map_err(|_| Error::InvalidConfig(format!("class {} has {k} supports (max 65535)", support.class_id)))?;
    let dim = first.dim();
    let mut sum = vec![0.0f64; dim];
    for (i, e) in support.embeddings.iter().enumerate() {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: e.dim(),
            });
        }
        let z = l2_normalize(e).map_err(|_| Error::ZeroVector { index: Some(i) })?;
        for (acc, v) in sum.iter_mut().zip(z.values()) {
            *acc += v;
        }
    }
    let vector = sum.into_iter().map(|v| v / k as f64).collect();
    Ok(Prototype::from_parts(support.class_id, support.name.clone(), vector, k_support))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeStore {
    dimension: usize,
    prototypes: Vec<Prototype>,
    provenance: String,
}

impl PrototypeStore {
    pub fn new(dimension: usize, provenance: impl Into<String>) -> Self {
        Self {
            dimension,
            prototypes: Vec::new(),
            provenance: provenance.into(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Prototypes in ascending class id order.
    pub fn prototypes(&self) -> &[Prototype] {
        &self.prototypes
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn get(&self, class_id: ClassId) -> Option<&Prototype> {
        self.prototypes
            .binary_search_by_key(&class_id, |p| p.class_id)
            .ok()
            .map(|i| &self.prototypes[i])
    }

    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.prototypes.iter().map(|p| p.class_id)
    }

    /// Onboards one class. Existing prototypes are left untouched.
    pub fn add_class(&mut self, support: &SupportSet) -> Result<&Prototype> {
        let prototype = build_prototype(support)?;
        self.insert(prototype)
    }

    pub(crate) fn insert(&mut self, prototype: Prototype) -> Result<&Prototype> {
        if prototype.vector.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: prototype.vector.len(),
            });
        }
        match self
            .prototypes
            .binary_search_by_key(&prototype.class_id, |p| p.class_id)
        {
            Ok(_) => Err(Error::DuplicateClass(prototype.class_id.0)),
            Err(pos) => {
                self.prototypes.insert(pos, prototype);
                Ok(&self.prototypes[pos])
            }
        }
    }
}

/// Builds one prototype per support set. The dimension is taken from the first embedding.
pub fn build_store(supports: &[SupportSet], provenance: impl Into<String>) -> Result<PrototypeStore> {
    let dimension = supports
        .iter()
        .find_map(|s| s.embeddings.first().map(Embedding::dim))
        .ok_or(Error::EmptyStore)?;
    let mut store = PrototypeStore::new(dimension, provenance);
    for support in supports {
        store.add_class(support)?;
    }
    Ok(store)
}

/// Pairwise cosine between prototypes, each normalized first. Row/column order
/// follows [`PrototypeStore::prototypes`].
pub fn prototype_similarity_matrix(store: &PrototypeStore) -> Result<Vec<Vec<f64>>> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let units = store
        .prototypes
        .iter()
        .map(|p| {
            let n = p.norm();
            if n <= EPS_NORM {
                Err(Error::ZeroVector { index: None })
            } else {
                Ok(p.vector.iter().map(|v| v / n).collect::<Vec<f64>>())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let n = units.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        // self-similarity is 1 by definition; the dot of a rounded unit vector may miss by an ulp
        m[i][i] = 1.0;
        for j in i + 1..n {
            let c = dot(&units[i], &units[j]);
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    Ok(m)
}
