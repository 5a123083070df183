//! Little-endian binary formats: dataset bundle, LFA factors, model checkpoint.

use lfagcl_core::linalg::Matrix;
use lfagcl_core::{AdamState, DatasetSplit, EmbeddingTables, Interaction, LatentFactors, Model};

pub const BUNDLE_MAGIC: &[u8; 8] = b"LFGCDATA";
pub const LFA_MAGIC: &[u8; 8] = b"LFGCLFA\0";
pub const MODEL_MAGIC: &[u8; 8] = b"LFGCMODL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("{section}: file ends early")]
    Truncated { section: &'static str },
    #[error("not a {expected} file")]
    BadMagic { expected: &'static str },
    #[error("unsupported version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("{what} is {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        found: u64,
        expected: u64,
    },
    #[error("{section}: {reason}")]
    Invalid { section: &'static str, reason: String },
    #[error("{extra} unexpected trailing bytes")]
    Trailing { extra: usize },
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
    fn string(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(FormatError::Truncated { section })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, section: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn u64(&mut self, section: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    fn f64(&mut self, section: &'static str) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: u64, section: &'static str) -> Result<Vec<f64>, FormatError> {
        let bytes = usize::try_from(n)
            .ok()
            .and_then(|n| n.checked_mul(8))
            .ok_or(FormatError::Truncated { section })?;
        let raw = self.take(bytes, section)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn matrix(&mut self, rows: u64, cols: u64, section: &'static str) -> Result<Matrix, FormatError> {
        let n = rows.checked_mul(cols).ok_or(FormatError::Truncated { section })?;
        let data = self.f64s(n, section)?;
        Ok(Matrix::from_vec(rows as usize, cols as usize, data))
    }

    fn string(&mut self, section: &'static str) -> Result<String, FormatError> {
        let len = self.u64(section)?;
        let len = usize::try_from(len).map_err(|_| FormatError::Truncated { section })?;
        let raw = self.take(len, section)?;
        String::from_utf8(raw.to_vec()).map_err(|e| FormatError::Invalid {
            section,
            reason: e.to_string(),
        })
    }

    fn header(&mut self, magic: &[u8; 8], expected: &'static str) -> Result<(), FormatError> {
        if self.take(8, "header")? != magic {
            return Err(FormatError::BadMagic { expected });
        }
        let version = self.u32("header")?;
        if version != VERSION {
            return Err(FormatError::Version { found: version });
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), FormatError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            extra => Err(FormatError::Trailing { extra }),
        }
    }
}

fn check_dim(what: &'static str, found: u64, expected: Option<usize>) -> Result<(), FormatError> {
    match expected {
        Some(e) if e as u64 != found => Err(FormatError::Dimension {
            what,
            found,
            expected: e as u64,
        }),
        _ => Ok(()),
    }
}

// Dataset bundle: magic, version, |U|, |I|, split seed, three edge counts,
// then (user u32, item u32, rating f64) records per split in index order.

pub fn encode_bundle(split: &DatasetSplit) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(BUNDLE_MAGIC);
    w.u32(VERSION);
    w.u64(split.n_users as u64);
    w.u64(split.n_items as u64);
    w.u64(split.split_seed);
    for part in [&split.train, &split.validation, &split.test] {
        w.u64(part.len() as u64);
    }
    for part in [&split.train, &split.validation, &split.test] {
        for e in part {
            w.u32(e.user);
            w.u32(e.item);
            w.f64(e.rating);
        }
    }
    w.0
}

pub fn decode_bundle(bytes: &[u8]) -> Result<DatasetSplit, FormatError> {
    let mut r = Reader::new(bytes);
    r.header(BUNDLE_MAGIC, "dataset bundle")?;
    let n_users = r.u64("header")? as usize;
    let n_items = r.u64("header")? as usize;
    let split_seed = r.u64("header")?;
    let counts = [r.u64("header")?, r.u64("header")?, r.u64("header")?];
    let names = ["train edges", "validation edges", "test edges"];
    let mut parts: Vec<Vec<Interaction>> = Vec::with_capacity(3);
    for (&count, section) in counts.iter().zip(names) {
        let available = (bytes.len() - r.pos) as u64 / 16;
        if count > available {
            return Err(FormatError::Truncated { section });
        }
        let mut edges = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let user = r.u32(section)?;
            let item = r.u32(section)?;
            let rating = r.f64(section)?;
            if user as usize >= n_users || item as usize >= n_items {
                return Err(FormatError::Invalid {
                    section,
                    reason: format!("edge ({user}, {item}) outside {n_users}x{n_items}"),
                });
            }
            edges.push(Interaction { user, item, rating });
        }
        if !edges.windows(2).all(|w| (w[0].user, w[0].item) < (w[1].user, w[1].item)) {
            return Err(FormatError::Invalid {
                section,
                reason: "edges are not sorted and unique".into(),
            });
        }
        parts.push(edges);
    }
    r.finish()?;
    let test = parts.pop().unwrap();
    let validation = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok(DatasetSplit {
        n_users,
        n_items,
        train,
        validation,
        test,
        split_seed,
    })
}

// LFA checkpoint: magic, version, |U|, |I|, f, λ, P row-major, Q row-major.

pub fn encode_factors(factors: &LatentFactors) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(LFA_MAGIC);
    w.u32(VERSION);
    write_factor_body(&mut w, factors);
    w.0
}

fn write_factor_body(w: &mut Writer, factors: &LatentFactors) {
    w.u64(factors.n_users() as u64);
    w.u64(factors.n_items() as u64);
    w.u64(factors.rank() as u64);
    w.f64(factors.lambda);
    w.f64s(factors.p.as_slice());
    w.f64s(factors.q.as_slice());
}

fn read_factor_body(r: &mut Reader<'_>, users: Option<usize>, items: Option<usize>) -> Result<LatentFactors, FormatError> {
    let n_users = r.u64("factor header")?;
    let n_items = r.u64("factor header")?;
    let f = r.u64("factor header")?;
    let lambda = r.f64("factor header")?;
    check_dim("user count", n_users, users)?;
    check_dim("item count", n_items, items)?;
    let p = r.matrix(n_users, f, "P")?;
    let q = r.matrix(n_items, f, "Q")?;
    Ok(LatentFactors::new(p, q, lambda))
}

/// Decodes factors, checking counts against `(users, items)` when given.
pub fn decode_factors(bytes: &[u8], users: Option<usize>, items: Option<usize>) -> Result<LatentFactors, FormatError> {
    let mut r = Reader::new(bytes);
    r.header(LFA_MAGIC, "LFA checkpoint")?;
    let factors = read_factor_body(&mut r, users, items)?;
    r.finish()?;
    Ok(factors)
}

/// Everything persisted for a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub model: Model,
    pub adam: AdamState,
    /// SHA-256 of the training configuration.
    pub config_hash: [u8; 32],
    /// Effective configuration, as TOML.
    pub config: String,
    pub best_epoch: Option<u64>,
}

/// Shape a loaded checkpoint must have.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExpectedShape {
    pub n_users: Option<usize>,
    pub n_items: Option<usize>,
    pub embed_dim: Option<usize>,
    pub layers: Option<usize>,
}

// Model checkpoint: magic, version, |U|, |I|, d, L, best epoch (u64::MAX for
// none), config hash, config text, user table, item table, factor body, Adam.

pub fn encode_model(ckpt: &ModelCheckpoint) -> Vec<u8> {
    let model = &ckpt.model;
    let mut w = Writer::default();
    w.bytes(MODEL_MAGIC);
    w.u32(VERSION);
    w.u64(model.embeddings.user.rows() as u64);
    w.u64(model.embeddings.item.rows() as u64);
    w.u64(model.embeddings.dim() as u64);
    w.u64(model.layers as u64);
    w.u64(ckpt.best_epoch.unwrap_or(u64::MAX));
    w.bytes(&ckpt.config_hash);
    w.string(&ckpt.config);
    w.f64s(model.embeddings.user.as_slice());
    w.f64s(model.embeddings.item.as_slice());
    write_factor_body(&mut w, &model.factors);
    let adam = &ckpt.adam;
    w.f64(adam.beta1);
    w.f64(adam.beta2);
    w.f64(adam.epsilon);
    w.u64(adam.step);
    w.u64(adam.first_moment.len() as u64);
    for (m, v) in adam.first_moment.iter().zip(&adam.second_moment) {
        w.u64(m.len() as u64);
        w.f64s(m);
        w.f64s(v);
    }
    w.0
}

pub fn decode_model(bytes: &[u8], expected: ExpectedShape) -> Result<ModelCheckpoint, FormatError> {
    let mut r = Reader::new(bytes);
    r.header(MODEL_MAGIC, "model checkpoint")?;
    let n_users = r.u64("header")?;
    let n_items = r.u64("header")?;
    let dim = r.u64("header")?;
    let layers = r.u64("header")?;
    let best = r.u64("header")?;
    check_dim("user count", n_users, expected.n_users)?;
    check_dim("item count", n_items, expected.n_items)?;
    check_dim("embedding dimension", dim, expected.embed_dim)?;
    check_dim("layer count", layers, expected.layers)?;
    let config_hash: [u8; 32] = r.take(32, "config hash")?.try_into().unwrap();
    let config = r.string("config")?;
    let user = r.matrix(n_users, dim, "user embeddings")?;
    let item = r.matrix(n_items, dim, "item embeddings")?;
    let factors = read_factor_body(&mut r, Some(n_users as usize), Some(n_items as usize))?;

    let beta1 = r.f64("optimizer")?;
    let beta2 = r.f64("optimizer")?;
    let epsilon = r.f64("optimizer")?;
    let step = r.u64("optimizer")?;
    let tables = r.u64("optimizer")?;
    let sizes = [user.as_slice().len(), item.as_slice().len()];
    if tables != 2 {
        return Err(FormatError::Dimension {
            what: "optimizer table count",
            found: tables,
            expected: 2,
        });
    }
    let mut adam = AdamState::new(&sizes);
    for (t, &size) in sizes.iter().enumerate() {
        let len = r.u64("optimizer")?;
        check_dim("optimizer table size", len, Some(size))?;
        adam.first_moment[t] = r.f64s(len, "optimizer")?;
        adam.second_moment[t] = r.f64s(len, "optimizer")?;
    }
    adam.beta1 = beta1;
    adam.beta2 = beta2;
    adam.epsilon = epsilon;
    adam.step = step;
    r.finish()?;

    Ok(ModelCheckpoint {
        model: Model {
            embeddings: EmbeddingTables::new(user, item),
            factors,
            layers: layers as usize,
        },
        adam,
        config_hash,
        config,
        best_epoch: (best != u64::MAX).then_some(best),
    })
}
