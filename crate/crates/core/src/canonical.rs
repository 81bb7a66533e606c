//! Canonical byte encodings for stored models.
//!
//! Model artifacts are content-addressed, so two structurally equal
//! models must serialize to identical bytes on every platform. Floats
//! are written with 17 significant digits (`{:.16e}`), which
//! round-trips every finite f64 exactly.

use crate::error::Error;
use crate::forest::{DecisionTree, ForestParams, PartialForest, TreeNode, TreeParams};
use crate::substitute::{MlpSubstitute, SvmSubstitute};
use crate::types::TrafficClass;
use sha2::{Digest as _, Sha256};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

/// A SHA-256 digest, displayed as 64 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    /// The all-zero digest used as the genesis back-link.
    pub const ZERO: Digest = Digest([0u8; 32]);

    /// Digest of a byte string.
    pub fn of(bytes: &[u8]) -> Digest {
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        Digest(hasher.finalize().into())
    }

    /// Lowercase hex form.
    pub fn to_hex(self) -> String {
        let mut s = String::with_capacity(64);
        for b in self.0 {
            write!(s, "{b:02x}").expect("write to string");
        }
        s
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Digest, Error> {
        if s.len() != 64 {
            return Err(Error::InvalidInput(format!(
                "digest must be 64 hex characters, got {}",
                s.len()
            )));
        }
        let mut out = [0u8; 32];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::InvalidInput(format!("bad hex digest {s:?}")))?;
        }
        Ok(Digest(out))
    }
}

/// Exact decimal form of a finite f64: 17 significant digits.
pub fn f64_repr(x: f64) -> String {
    debug_assert!(x.is_finite(), "canonical floats must be finite");
    format!("{x:.16e}")
}

fn parse_f64(token: &str, line: usize) -> Result<f64, Error> {
    let v: f64 = token
        .parse()
        .map_err(|_| parse_err(line, format!("bad float {token:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite float {token:?}")));
    }
    Ok(v)
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn classes_line(classes: &[TrafficClass]) -> String {
    let names: Vec<&str> = classes.iter().map(|c| c.name()).collect();
    format!("classes {}", names.join(" "))
}

fn parse_classes(rest: &[&str], line: usize) -> Result<Vec<TrafficClass>, Error> {
    if rest.is_empty() {
        return Err(parse_err(line, "empty class list"));
    }
    let mut classes = Vec::with_capacity(rest.len());
    for token in rest {
        let class = TrafficClass::parse(token)
            .map_err(|_| parse_err(line, format!("unknown class {token:?}")))?;
        if classes.contains(&class) {
            return Err(parse_err(line, format!("duplicate class {token:?}")));
        }
        classes.push(class);
    }
    Ok(classes)
}

/// Encodes a partial forest as deterministic line-oriented text.
pub fn encode_partial_forest(model: &PartialForest) -> String {
    let mut out = String::new();
    out.push_str("partial-forest v1\n");
    writeln!(out, "miner {}", model.miner_id).unwrap();
    writeln!(out, "{}", classes_line(&model.classes)).unwrap();
    writeln!(out, "shard_size {}", model.shard_size).unwrap();
    writeln!(out, "seed {}", model.seed).unwrap();
    writeln!(out, "n_trees {}", model.params.n_trees).unwrap();
    writeln!(out, "bootstrap {}", u8::from(model.params.bootstrap)).unwrap();
    writeln!(out, "max_depth {}", model.params.tree.max_depth).unwrap();
    writeln!(out, "min_leaf {}", model.params.tree.min_leaf).unwrap();
    writeln!(out, "feature_subsample {}", model.params.tree.feature_subsample).unwrap();
    for (t, tree) in model.trees.iter().enumerate() {
        writeln!(out, "tree {t} {}", tree.nodes.len()).unwrap();
        for (i, node) in tree.nodes.iter().enumerate() {
            match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    writeln!(
                        out,
                        "node {i} split {feature} {} {left} {right}",
                        f64_repr(*threshold)
                    )
                    .unwrap();
                }
                TreeNode::Leaf { counts } => {
                    let joined: Vec<String> = counts.iter().map(u64::to_string).collect();
                    writeln!(out, "node {i} leaf {}", joined.join(" ")).unwrap();
                }
            }
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
        }
    }

    /// Next line as (1-based number, tokens).
    fn next(&mut self) -> Result<(usize, Vec<&'a str>), Error> {
        match self.inner.next() {
            Some((i, line)) => Ok((i + 1, line.split_whitespace().collect())),
            None => Err(parse_err(0, "unexpected end of model text")),
        }
    }

    /// Consumes a line of the form `<key> <value>` and returns the value.
    fn keyed<'b>(&mut self, key: &'b str) -> Result<(usize, &'a str), Error> {
        let (n, tokens) = self.next()?;
        if tokens.len() != 2 || tokens[0] != key {
            return Err(parse_err(n, format!("expected `{key} <value>`")));
        }
        Ok((n, tokens[1]))
    }
}

fn parse_num<T: FromStr>(token: &str, line: usize, what: &str) -> Result<T, Error> {
    token
        .parse()
        .map_err(|_| parse_err(line, format!("bad {what} {token:?}")))
}

/// Decodes a partial forest, validating structure as it goes.
pub fn decode_partial_forest(text: &str) -> Result<PartialForest, Error> {
    let mut lines = Lines::new(text);
    let (n, header) = lines.next()?;
    if header != ["partial-forest", "v1"] {
        return Err(parse_err(n, "expected header `partial-forest v1`"));
    }
    let (n, miner) = lines.keyed("miner")?;
    crate::forest::validate_miner_id(miner).map_err(|e| parse_err(n, e.to_string()))?;
    let (n, tokens) = lines.next()?;
    if tokens.first() != Some(&"classes") {
        return Err(parse_err(n, "expected `classes ...`"));
    }
    let classes = parse_classes(&tokens[1..], n)?;
    let (n, v) = lines.keyed("shard_size")?;
    let shard_size: usize = parse_num(v, n, "shard_size")?;
    let (n, v) = lines.keyed("seed")?;
    let seed: u64 = parse_num(v, n, "seed")?;
    let (n, v) = lines.keyed("n_trees")?;
    let n_trees: usize = parse_num(v, n, "n_trees")?;
    let (n, v) = lines.keyed("bootstrap")?;
    let bootstrap = match v {
        "0" => false,
        "1" => true,
        _ => return Err(parse_err(n, format!("bootstrap must be 0 or 1, got {v:?}"))),
    };
    let (n, v) = lines.keyed("max_depth")?;
    let max_depth: usize = parse_num(v, n, "max_depth")?;
    let (n, v) = lines.keyed("min_leaf")?;
    let min_leaf: usize = parse_num(v, n, "min_leaf")?;
    let (n, v) = lines.keyed("feature_subsample")?;
    let feature_subsample: usize = parse_num(v, n, "feature_subsample")?;

    let mut trees = Vec::with_capacity(n_trees);
    for t in 0..n_trees {
        let (n, tokens) = lines.next()?;
        if tokens.len() != 3 || tokens[0] != "tree" {
            return Err(parse_err(n, format!("expected `tree {t} <n_nodes>`")));
        }
        let idx: usize = parse_num(tokens[1], n, "tree index")?;
        if idx != t {
            return Err(parse_err(n, format!("tree index {idx} out of order, expected {t}")));
        }
        let n_nodes: usize = parse_num(tokens[2], n, "node count")?;
        if n_nodes == 0 {
            return Err(parse_err(n, "tree must have at least one node"));
        }
        let mut nodes = Vec::with_capacity(n_nodes);
        for i in 0..n_nodes {
            let (ln, tokens) = lines.next()?;
            if tokens.len() < 3 || tokens[0] != "node" {
                return Err(parse_err(ln, format!("expected `node {i} ...`")));
            }
            let idx: usize = parse_num(tokens[1], ln, "node index")?;
            if idx != i {
                return Err(parse_err(ln, format!("node index {idx} out of order, expected {i}")));
            }
            let node = match tokens[2] {
                "split" => {
                    if tokens.len() != 7 {
                        return Err(parse_err(ln, "split needs feature, threshold, left, right"));
                    }
                    let feature: usize = parse_num(tokens[3], ln, "feature")?;
                    if feature >= crate::features::FEATURE_DIM {
                        return Err(parse_err(ln, format!("feature index {feature} out of range")));
                    }
                    let threshold = parse_f64(tokens[4], ln)?;
                    let left: usize = parse_num(tokens[5], ln, "left child")?;
                    let right: usize = parse_num(tokens[6], ln, "right child")?;
                    if left >= n_nodes || right >= n_nodes || left <= i || right <= i {
                        return Err(parse_err(ln, "child index out of range"));
                    }
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    }
                }
                "leaf" => {
                    let counts: Vec<u64> = tokens[3..]
                        .iter()
                        .map(|t| parse_num(t, ln, "leaf count"))
                        .collect::<Result<_, _>>()?;
                    if counts.len() != classes.len() {
                        return Err(parse_err(
                            ln,
                            format!("leaf has {} counts for {} classes", counts.len(), classes.len()),
                        ));
                    }
                    if counts.iter().all(|&c| c == 0) {
                        return Err(parse_err(ln, "leaf must cover at least one row"));
                    }
                    TreeNode::Leaf { counts }
                }
                other => return Err(parse_err(ln, format!("unknown node kind {other:?}"))),
            };
            nodes.push(node);
        }
        trees.push(DecisionTree {
            nodes,
            classes: classes.clone(),
        });
    }
    let (n, tokens) = lines.next()?;
    if tokens != ["end"] {
        return Err(parse_err(n, "expected trailing `end`"));
    }
    Ok(PartialForest {
        miner_id: miner.to_string(),
        trees,
        classes,
        shard_size,
        seed,
        params: ForestParams {
            n_trees,
            bootstrap,
            tree: TreeParams {
                max_depth,
                min_leaf,
                feature_subsample,
            },
        },
    })
}

fn encode_matrix(out: &mut String, key: &str, rows: &[Vec<f64>]) {
    for (i, row) in rows.iter().enumerate() {
        let joined: Vec<String> = row.iter().map(|&v| f64_repr(v)).collect();
        writeln!(out, "{key} {i} {}", joined.join(" ")).unwrap();
    }
}

fn encode_vector(out: &mut String, key: &str, values: &[f64]) {
    let joined: Vec<String> = values.iter().map(|&v| f64_repr(v)).collect();
    writeln!(out, "{key} {}", joined.join(" ")).unwrap();
}

/// Encodes a trained MLP substitute.
pub fn encode_mlp(model: &MlpSubstitute) -> String {
    let mut out = String::new();
    out.push_str("mlp-substitute v1\n");
    writeln!(out, "{}", classes_line(&model.classes)).unwrap();
    writeln!(out, "hidden {}", model.hidden).unwrap();
    encode_matrix(&mut out, "w1", &model.w1);
    encode_vector(&mut out, "b1", &model.b1);
    encode_matrix(&mut out, "w2", &model.w2);
    encode_vector(&mut out, "b2", &model.b2);
    encode_matrix(&mut out, "w3", &model.w3);
    encode_vector(&mut out, "b3", &model.b3);
    out.push_str("end\n");
    out
}

/// Encodes a trained one-vs-rest linear SVM substitute.
pub fn encode_svm(model: &SvmSubstitute) -> String {
    let mut out = String::new();
    out.push_str("svm-substitute v1\n");
    writeln!(out, "{}", classes_line(&model.classes)).unwrap();
    for (i, w) in model.weights.iter().enumerate() {
        let joined: Vec<String> = w.iter().map(|&v| f64_repr(v)).collect();
        writeln!(out, "w {i} {}", joined.join(" ")).unwrap();
    }
    encode_vector(&mut out, "b", &model.biases);
    out.push_str("end\n");
    out
}
