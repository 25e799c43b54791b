use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::markup::Demonstration;

/// Embedded demonstration pool. Rows align with payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    vectors: Array2<f64>,
    payloads: Vec<Demonstration>,
    provider_id: String,
}

#[derive(Serialize, Deserialize)]
struct IndexManifest {
    provider: String,
    rows: usize,
    dim: usize,
    vectors_file: String,
    vectors_sha256: String,
    payloads: Vec<Demonstration>,
}

const VECTORS_FILE: &str = "vectors.f64le";
const MANIFEST_FILE: &str = "index.json";

pub fn build_index(pool: &[Demonstration], provider: &dyn EmbeddingProvider) -> Result<VectorIndex> {
    if pool.is_empty() {
        return Err(Error::Input("cannot index an empty pool".into()));
    }
    let mut vectors = Array2::zeros((pool.len(), provider.dim()));
    for (i, demo) in pool.iter().enumerate() {
        let v = provider.embed(&demo.text)?;
        if v.len() != provider.dim() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Provider {
                text: demo.text.clone(),
                reason: "embedding has the wrong size or non-finite entries".into(),
            });
        }
        vectors.row_mut(i).assign(&v);
    }
    Ok(VectorIndex {
        vectors,
        payloads: pool.to_vec(),
        provider_id: provider.id(),
    })
}

impl VectorIndex {
    /// An index over precomputed vectors.
    pub fn from_parts(vectors: Array2<f64>, payloads: Vec<Demonstration>, provider_id: String) -> Result<Self> {
        if vectors.nrows() != payloads.len() || payloads.is_empty() {
            return Err(Error::Input(format!(
                "{} vectors for {} payloads",
                vectors.nrows(),
                payloads.len()
            )));
        }
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("index vectors must be finite".into()));
        }
        Ok(Self {
            vectors,
            payloads,
            provider_id,
        })
    }

    pub fn len(&self) -> usize {
        self.payloads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payloads.is_empty()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn vector(&self, row: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(row)
    }

    pub fn payloads(&self) -> &[Demonstration] {
        &self.payloads
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn embed_query(&self, provider: &dyn EmbeddingProvider, query: &str) -> Result<Array1<f64>> {
        if provider.id() != self.provider_id {
            return Err(Error::Config(format!(
                "index was built with {:?} but the query provider is {:?}",
                self.provider_id,
                provider.id()
            )));
        }
        provider.embed(query)
    }

    /// Writes `index.json` and the raw vector file into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bytes: Vec<u8> = self.vectors.iter().flat_map(|v| v.to_le_bytes()).collect();
        let manifest = IndexManifest {
            provider: self.provider_id.clone(),
            rows: self.vectors.nrows(),
            dim: self.vectors.ncols(),
            vectors_file: VECTORS_FILE.into(),
            vectors_sha256: hex::encode(Sha256::digest(&bytes)),
            payloads: self.payloads.clone(),
        };
        let vpath = dir.join(VECTORS_FILE);
        fs::write(&vpath, bytes).map_err(|e| Error::io(&vpath, e))?;
        let mpath = dir.join(MANIFEST_FILE);
        fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let manifest: IndexManifest =
            serde_json::from_str(&fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?)?;
        let vpath = dir.join(&manifest.vectors_file);
        let bytes = fs::read(&vpath).map_err(|e| Error::io(&vpath, e))?;
        if hex::encode(Sha256::digest(&bytes)) != manifest.vectors_sha256 {
            return Err(Error::Input(format!("{}: checksum mismatch", vpath.display())));
        }
        if bytes.len() != manifest.rows * manifest.dim * 8 {
            return Err(Error::Input(format!("{}: size does not match the manifest", vpath.display())));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let vectors = Array2::from_shape_vec((manifest.rows, manifest.dim), values)
            .map_err(|e| Error::Input(e.to_string()))?;
        Self::from_parts(vectors, manifest.payloads, manifest.provider)
    }
}
