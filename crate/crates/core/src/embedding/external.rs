use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{Embedding, EmbeddingProvider};
use crate::error::{invalid, AuditError, Result};
use crate::text::{TokenId, Vocabulary, UNK_SURFACE};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

struct Transport {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Embeddings served by a subprocess over line-delimited JSON.
///
/// Each request is one line `{"texts": [...]}`; the process answers with one
/// line `{"vectors": [[...], ...]}`. The dimension is read from a probe
/// request at startup. Token texts come from the vocabulary; a block is sent
/// as its space-joined surfaces, so block vectors are whatever the external
/// model makes of the sequence (order may matter).
pub struct ExternalProvider {
    name: String,
    dim: usize,
    vocab: Arc<Vocabulary>,
    transport: Mutex<Transport>,
    cache: RwLock<HashMap<TokenId, Embedding>>,
}

impl std::fmt::Debug for ExternalProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalProvider")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

fn unavailable(e: impl std::fmt::Display) -> AuditError {
    AuditError::ProviderUnavailable(e.to_string())
}

impl ExternalProvider {
    pub fn spawn(program: &str, args: &[String], vocab: Arc<Vocabulary>) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(unavailable)?;
        let stdin = child.stdin.take().ok_or_else(|| unavailable("no stdin"))?;
        let stdout = BufReader::new(child.stdout.take().ok_or_else(|| unavailable("no stdout"))?);
        let mut transport = Transport { child, stdin, stdout };
        let probe = request(&mut transport, &["dimension probe".to_string()])?;
        let dim = probe[0].len();
        if dim == 0 {
            return Err(unavailable("external provider returned an empty vector"));
        }
        Ok(ExternalProvider {
            name: format!("external:{program}"),
            dim,
            vocab,
            transport: Mutex::new(transport),
            cache: RwLock::new(HashMap::new()),
        })
    }

    /// Embeds raw texts in one round trip.
    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        let mut transport = self.transport.lock().unwrap();
        let vectors = request(&mut transport, texts)?;
        vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(unavailable(format!(
                        "external provider changed dimension from {} to {}",
                        self.dim,
                        v.len()
                    )));
                }
                Ok(Embedding::new(v))
            })
            .collect()
    }

    fn surface(&self, t: TokenId) -> String {
        self.vocab.surface(t).unwrap_or(UNK_SURFACE).to_string()
    }
}

fn request(transport: &mut Transport, texts: &[String]) -> Result<Vec<Vec<f32>>> {
    let mut line = serde_json::to_string(&EmbedRequest { texts }).map_err(unavailable)?;
    line.push('\n');
    transport
        .stdin
        .write_all(line.as_bytes())
        .and_then(|_| transport.stdin.flush())
        .map_err(unavailable)?;
    let mut reply = String::new();
    let n = transport.stdout.read_line(&mut reply).map_err(unavailable)?;
    if n == 0 {
        return Err(unavailable("external provider closed its output"));
    }
    let resp: EmbedResponse = serde_json::from_str(&reply).map_err(unavailable)?;
    if resp.vectors.len() != texts.len() {
        return Err(unavailable(format!(
            "asked for {} vectors, got {}",
            texts.len(),
            resp.vectors.len()
        )));
    }
    Ok(resp.vectors)
}

impl Drop for ExternalProvider {
    fn drop(&mut self) {
        if let Ok(t) = self.transport.get_mut() {
            let _ = t.child.kill();
            let _ = t.child.wait();
        }
    }
}

impl EmbeddingProvider for ExternalProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_token(&self, token: TokenId) -> Result<Embedding> {
        if let Some(e) = self.cache.read().unwrap().get(&token) {
            return Ok(e.clone());
        }
        let e = self.embed_texts(&[self.surface(token)])?.remove(0);
        self.cache.write().unwrap().insert(token, e.clone());
        Ok(e)
    }

    fn embed_tokens(&self, tokens: &[TokenId]) -> Result<Vec<Embedding>> {
        let missing: Vec<TokenId> = {
            let cache = self.cache.read().unwrap();
            tokens.iter().copied().filter(|t| !cache.contains_key(t)).collect()
        };
        if !missing.is_empty() {
            let texts: Vec<String> = missing.iter().map(|&t| self.surface(t)).collect();
            let embs = self.embed_texts(&texts)?;
            let mut cache = self.cache.write().unwrap();
            for (t, e) in missing.into_iter().zip(embs) {
                cache.insert(t, e);
            }
        }
        let cache = self.cache.read().unwrap();
        Ok(tokens.iter().map(|t| cache[t].clone()).collect())
    }

    fn embed_block(&self, tokens: &[TokenId]) -> Result<Embedding> {
        if tokens.is_empty() {
            return Err(invalid("cannot embed an empty block"));
        }
        let text = tokens.iter().map(|&t| self.surface(t)).collect::<Vec<_>>().join(" ");
        Ok(self.embed_texts(&[text])?.remove(0))
    }
}
