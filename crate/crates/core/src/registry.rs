//! Content-addressed model store and append-only hash chain.
//!
//! Miners publish model text into a store keyed by SHA-256 digest;
//! each publication appends a block committing to the model digest,
//! the miner, and the previous block's digest. The serialized chain
//! ends in a `head` line committing to the final block, so any
//! single-byte edit to the file, including one in the last block, is
//! caught on load.

use crate::canonical::{decode_partial_forest, encode_partial_forest, f64_repr, Digest};
use crate::error::Error;
use crate::features::LabeledDataset;
use crate::forest::{self, validate_miner_id, FederatedForest, ForestParams, PartialForest};
use crate::seeding::derive_seed;
use std::fs;
use std::path::{Path, PathBuf};

/// A directory of files named by the SHA-256 digest of their content.
#[derive(Debug, Clone)]
pub struct ContentStore {
    root: PathBuf,
}

impl ContentStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<ContentStore, Error> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(ContentStore { root })
    }

    /// The store's root directory.
    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_of(&self, digest: &Digest) -> PathBuf {
        self.root.join(digest.to_hex())
    }

    /// Stores bytes, returning their digest. Idempotent; the write is
    /// temp-file-then-rename so readers never observe partial content.
    pub fn put(&self, bytes: &[u8]) -> Result<Digest, Error> {
        let digest = Digest::of(bytes);
        let path = self.path_of(&digest);
        if path.exists() {
            return Ok(digest);
        }
        let tmp = self.root.join(format!(".tmp-{}", digest.to_hex()));
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        Ok(digest)
    }

    /// Fetches bytes by digest, re-hashing to catch on-disk tampering.
    pub fn get(&self, digest: &Digest) -> Result<Vec<u8>, Error> {
        let path = self.path_of(digest);
        if !path.exists() {
            return Err(Error::NotFound(format!("no object {digest} in store")));
        }
        let bytes = fs::read(&path)?;
        let actual = Digest::of(&bytes);
        if actual != *digest {
            return Err(Error::Tamper(format!(
                "object {digest} hashes to {actual}"
            )));
        }
        Ok(bytes)
    }

    /// Whether the store holds an object with this digest.
    pub fn contains(&self, digest: &Digest) -> bool {
        self.path_of(digest).exists()
    }
}

/// Encodes and stores a partial forest, returning its digest.
pub fn store_model(store: &ContentStore, model: &PartialForest) -> Result<Digest, Error> {
    store.put(encode_partial_forest(model).as_bytes())
}

/// Fetches and decodes a partial forest by digest.
pub fn fetch_model(store: &ContentStore, digest: &Digest) -> Result<PartialForest, Error> {
    let bytes = store.get(digest)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Tamper(format!("object {digest} is not UTF-8 model text")))?;
    decode_partial_forest(&text)
}

/// One chain entry committing a published model.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistryBlock {
    /// Position in the chain, starting at 0.
    pub index: u64,
    /// Digest of the previous block's record; zero for the genesis.
    pub prev_hash: Digest,
    /// Digest of the published model text.
    pub model_hash: Digest,
    /// Publishing miner.
    pub miner_id: String,
    /// Publication timestamp (callers may use logical time).
    pub timestamp: f64,
}

impl RegistryBlock {
    /// The block's canonical one-line record.
    pub fn encode(&self) -> String {
        format!(
            "block {} {} {} {} {}",
            self.index,
            self.prev_hash,
            self.model_hash,
            self.miner_id,
            f64_repr(self.timestamp)
        )
    }

    /// Parses a canonical block record.
    pub fn decode(line: &str, line_no: usize) -> Result<RegistryBlock, Error> {
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 6 || tokens[0] != "block" {
            return Err(err("expected `block <index> <prev> <model> <miner> <time>`".into()));
        }
        let index: u64 = tokens[1]
            .parse()
            .map_err(|_| err(format!("bad block index {:?}", tokens[1])))?;
        let prev_hash: Digest = tokens[2].parse().map_err(|e: Error| err(e.to_string()))?;
        let model_hash: Digest = tokens[3].parse().map_err(|e: Error| err(e.to_string()))?;
        validate_miner_id(tokens[4]).map_err(|e| err(e.to_string()))?;
        let timestamp: f64 = tokens[5]
            .parse()
            .map_err(|_| err(format!("bad timestamp {:?}", tokens[5])))?;
        if !timestamp.is_finite() {
            return Err(err("timestamp must be finite".into()));
        }
        Ok(RegistryBlock {
            index,
            prev_hash,
            model_hash,
            miner_id: tokens[4].to_string(),
            timestamp,
        })
    }

    /// Digest of the canonical record (no trailing newline).
    pub fn digest(&self) -> Digest {
        Digest::of(self.encode().as_bytes())
    }
}

/// The append-only block chain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Chain {
    blocks: Vec<RegistryBlock>,
}

impl Chain {
    /// An empty chain.
    pub fn new() -> Chain {
        Chain { blocks: Vec::new() }
    }

    /// All blocks in order.
    pub fn blocks(&self) -> &[RegistryBlock] {
        &self.blocks
    }

    /// Number of blocks.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    /// Whether the chain has no blocks.
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Digest of the last block, if any.
    pub fn head_digest(&self) -> Option<Digest> {
        self.blocks.last().map(RegistryBlock::digest)
    }

    /// Deterministic stand-in for wall-clock time: the next index.
    pub fn logical_timestamp(&self) -> f64 {
        self.blocks.len() as f64
    }

    /// Verifies the whole chain, then appends a new block.
    pub fn append(
        &mut self,
        model_hash: Digest,
        miner_id: &str,
        timestamp: f64,
    ) -> Result<&RegistryBlock, Error> {
        validate_miner_id(miner_id)?;
        if !timestamp.is_finite() {
            return Err(Error::InvalidInput("timestamp must be finite".into()));
        }
        self.verify()?;
        let prev_hash = self.head_digest().unwrap_or(Digest::ZERO);
        self.blocks.push(RegistryBlock {
            index: self.blocks.len() as u64,
            prev_hash,
            model_hash,
            miner_id: miner_id.to_string(),
            timestamp,
        });
        Ok(self.blocks.last().expect("just pushed"))
    }

    /// Checks indices and back-links.
    ///
    /// A broken link between blocks `i-1` and `i` is reported against
    /// block `i-1`: its current record no longer matches the digest
    /// its successor committed to, so the earlier block is the one
    /// whose bytes cannot be trusted.
    pub fn verify(&self) -> Result<(), Error> {
        for (i, block) in self.blocks.iter().enumerate() {
            if block.index != i as u64 {
                return Err(Error::ChainBroken { index: i });
            }
            if i == 0 {
                if block.prev_hash != Digest::ZERO {
                    return Err(Error::ChainBroken { index: 0 });
                }
            } else if block.prev_hash != self.blocks[i - 1].digest() {
                return Err(Error::ChainBroken { index: i - 1 });
            }
        }
        Ok(())
    }

    /// Verifies the chain against a content store as well: every
    /// model digest must resolve to intact, decodable model text.
    pub fn verify_with_store(&self, store: &ContentStore) -> Result<(), Error> {
        self.verify()?;
        for block in &self.blocks {
            fetch_model(store, &block.model_hash)?;
        }
        Ok(())
    }

    /// Serializes the chain: one line per block plus a `head` line.
    pub fn encode(&self) -> String {
        let mut out = String::new();
        for block in &self.blocks {
            out.push_str(&block.encode());
            out.push('\n');
        }
        if let Some(head) = self.head_digest() {
            out.push_str(&format!("head {head}\n"));
        }
        out
    }

    /// Parses and fully verifies a serialized chain, including the
    /// trailing `head` commitment.
    ///
    /// Parsing is strict: every line must be byte-identical to the
    /// canonical re-encoding of what it parses to. Without this, an
    /// edit that only changes the representation (say, rewriting a
    /// timestamp to a different spelling of the same float) would
    /// survive digest checks, because digests commit to canonical
    /// records rather than file bytes.
    pub fn decode(text: &str) -> Result<Chain, Error> {
        if text.is_empty() {
            return Ok(Chain::new());
        }
        let lines: Vec<&str> = text.lines().collect();
        let (&head_line, block_lines) = lines.split_last().expect("non-empty text");
        let head_no = lines.len();
        let head_tokens: Vec<&str> = head_line.split_whitespace().collect();
        if head_tokens.len() != 2 || head_tokens[0] != "head" {
            return Err(Error::Parse {
                line: head_no,
                msg: "chain must end with `head <digest>`".into(),
            });
        }
        let declared: Digest = head_tokens[1].parse().map_err(|e: Error| Error::Parse {
            line: head_no,
            msg: e.to_string(),
        })?;
        if head_line != format!("head {declared}") {
            return Err(Error::Parse {
                line: head_no,
                msg: "non-canonical head record".into(),
            });
        }
        let blocks = block_lines
            .iter()
            .enumerate()
            .map(|(i, &line)| {
                let block = RegistryBlock::decode(line, i + 1)?;
                if block.encode() != line {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: "non-canonical block record".into(),
                    });
                }
                Ok(block)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let chain = Chain { blocks };
        chain.verify()?;
        match chain.head_digest() {
            Some(actual) if actual == declared => Ok(chain),
            Some(_) => Err(Error::ChainBroken {
                index: chain.len() - 1,
            }),
            None => Err(Error::Parse {
                line: head_no,
                msg: "head line without blocks".into(),
            }),
        }
    }

    /// Writes the chain to a file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    /// Loads and verifies a chain file. A missing file is an empty
    /// chain.
    pub fn load(path: impl AsRef<Path>) -> Result<Chain, Error> {
        let path = path.as_ref();
        if !path.exists() {
            return Ok(Chain::new());
        }
        Chain::decode(&fs::read_to_string(path)?)
    }
}

/// Full federated round through the registry: shard, train partials,
/// publish each through the store and chain, then aggregate what was
/// fetched back so the served model is exactly what was published.
pub fn train_with_registry(
    train: &LabeledDataset,
    k: usize,
    params: &ForestParams,
    seed: u64,
    store: &ContentStore,
    chain: &mut Chain,
) -> Result<FederatedForest, Error> {
    let shards = forest::shard(train, k, derive_seed(seed, "shard"))?;
    let mut fetched = Vec::with_capacity(k);
    for (i, s) in shards.iter().enumerate() {
        let miner_id = format!("miner{i:02}");
        let partial = forest::train_partial(
            s,
            &miner_id,
            params,
            derive_seed(seed, &format!("miner/{i}")),
        )?;
        let digest = store_model(store, &partial)?;
        let timestamp = chain.logical_timestamp();
        chain.append(digest, &miner_id, timestamp)?;
        fetched.push(fetch_model(store, &digest)?);
    }
    forest::aggregate(fetched)
}
