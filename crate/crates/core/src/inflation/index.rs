use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use ndarray::{Array1, Array2};

use crate::embedding::{cosine_similarity, Embedding, EmbeddingProvider};
use crate::error::{invalid, Result};
use crate::text::TokenId;

fn unit_rows(embs: &[Embedding], dim: usize) -> Array2<f32> {
    let mut m = Array2::zeros((embs.len(), dim));
    for (mut row, e) in m.rows_mut().into_iter().zip(embs) {
        let n = e.norm() as f32;
        if n > 0.0 {
            row.iter_mut().zip(e.iter()).for_each(|(r, &v)| *r = v / n);
        }
    }
    m
}

fn top_indices(scores: &Array1<f32>, n: usize, skip: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| !skip(i)).collect();
    // Ties break on index so rankings are reproducible.
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if idx.len() > n {
        idx.select_nth_unstable_by(n, cmp);
        idx.truncate(n);
    }
    idx.sort_by(cmp);
    idx
}

/// Neighbour lists keyed by token and list length.
type NeighborCache = HashMap<(TokenId, usize), Arc<[TokenId]>>;

/// Cosine nearest neighbours within a vocabulary, computed on demand.
pub struct NeighborIndex {
    ids: Vec<TokenId>,
    matrix: Array2<f32>,
    position: HashMap<TokenId, usize>,
    cache: RwLock<NeighborCache>,
}

impl std::fmt::Debug for NeighborIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NeighborIndex").field("size", &self.ids.len()).finish()
    }
}

impl NeighborIndex {
    pub fn build(ids: Vec<TokenId>, provider: &dyn EmbeddingProvider) -> Result<Self> {
        if ids.is_empty() {
            return Err(invalid("neighbour index needs a non-empty vocabulary"));
        }
        let embs = provider.embed_tokens(&ids)?;
        let matrix = unit_rows(&embs, provider.dim());
        let position = ids.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        Ok(NeighborIndex {
            ids,
            matrix,
            position,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    /// The `n` most similar vocabulary tokens, most similar first, never
    /// including `token` itself.
    pub fn neighbors(&self, token: TokenId, provider: &dyn EmbeddingProvider, n: usize) -> Result<Arc<[TokenId]>> {
        if let Some(hit) = self.cache.read().unwrap().get(&(token, n)) {
            return Ok(hit.clone());
        }
        let query = match self.position.get(&token) {
            Some(&i) => self.matrix.row(i).to_owned(),
            None => unit_rows(&[provider.embed_token(token)?], self.matrix.ncols())
                .row(0)
                .to_owned(),
        };
        let scores = self.matrix.dot(&query);
        let top: Arc<[TokenId]> = top_indices(&scores, n, |i| self.ids[i] == token)
            .into_iter()
            .map(|i| self.ids[i])
            .collect();
        self.cache.write().unwrap().insert((token, n), top.clone());
        Ok(top)
    }
}

/// Passages embedded as blocks, ranked by cosine to a query.
pub struct RetrievalIndex {
    passages: Vec<Vec<TokenId>>,
    owners: Vec<Option<usize>>,
    matrix: Array2<f32>,
}

impl std::fmt::Debug for RetrievalIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RetrievalIndex")
            .field("passages", &self.passages.len())
            .finish()
    }
}

impl RetrievalIndex {
    /// `owners[i]` names the record passage `i` came from, so a query can
    /// exclude its own record. Empty passages are dropped.
    pub fn build(
        passages: Vec<Vec<TokenId>>,
        owners: Vec<Option<usize>>,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self> {
        if passages.len() != owners.len() {
            return Err(invalid("one owner entry per passage"));
        }
        let (passages, owners): (Vec<_>, Vec<_>) =
            passages.into_iter().zip(owners).filter(|(p, _)| !p.is_empty()).unzip();
        let embs = passages
            .iter()
            .map(|p| provider.embed_block(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(RetrievalIndex {
            matrix: unit_rows(&embs, provider.dim()),
            passages,
            owners,
        })
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn passage(&self, i: usize) -> &[TokenId] {
        &self.passages[i]
    }

    /// Indices of the `top` passages most similar to `query`, best first,
    /// skipping passages owned by `exclude`.
    pub fn query(&self, query: &Embedding, top: usize, exclude: Option<usize>) -> Vec<usize> {
        let n = query.norm() as f32;
        let q: Array1<f32> = query.iter().map(|&v| if n > 0.0 { v / n } else { 0.0 }).collect();
        let scores = self.matrix.dot(&q);
        top_indices(&scores, top, |i| exclude.is_some() && self.owners[i] == exclude)
    }

    pub fn similarity(&self, i: usize, query: &Embedding) -> f64 {
        cosine_similarity(self.matrix.row(i).as_slice().expect("standard layout"), query)
            .map(|c| c.value)
            .unwrap_or(0.0)
    }
}
