use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::extlm::{ExternalLm, ExternalLmConfig};
use crate::model::{
    EmbeddingDecoderConfig, EncoderConfig, HatConfig, HatModel, MhatConfig, MhatModel, Vocabulary,
};
use crate::numerics::{ParameterSet, Tensor};

const FORMAT: &str = "mhat-checkpoint 1";
const MANIFEST: &str = "manifest.txt";
const BLOB: &str = "params.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Mhat,
    Hat,
    Lm,
}

impl CheckpointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckpointKind::Mhat => "mhat",
            CheckpointKind::Hat => "hat",
            CheckpointKind::Lm => "lm",
        }
    }
}

/// Anything that can be loaded back from a checkpoint directory.
#[derive(Debug, Clone)]
pub enum Checkpoint {
    Mhat(MhatModel),
    Hat(HatModel),
    Lm(ExternalLm),
}

impl Checkpoint {
    pub fn kind(&self) -> CheckpointKind {
        match self {
            Checkpoint::Mhat(_) => CheckpointKind::Mhat,
            Checkpoint::Hat(_) => CheckpointKind::Hat,
            Checkpoint::Lm(_) => CheckpointKind::Lm,
        }
    }

    fn mismatch(&self, expected: CheckpointKind) -> Error {
        Error::KindMismatch {
            expected: expected.as_str().into(),
            found: self.kind().as_str().into(),
        }
    }

    pub fn into_mhat(self) -> Result<MhatModel> {
        match self {
            Checkpoint::Mhat(m) => Ok(m),
            other => Err(other.mismatch(CheckpointKind::Mhat)),
        }
    }

    pub fn into_hat(self) -> Result<HatModel> {
        match self {
            Checkpoint::Hat(m) => Ok(m),
            other => Err(other.mismatch(CheckpointKind::Hat)),
        }
    }

    pub fn into_lm(self) -> Result<ExternalLm> {
        match self {
            Checkpoint::Lm(m) => Ok(m),
            other => Err(other.mismatch(CheckpointKind::Lm)),
        }
    }
}

/// Borrowed view used for saving, so callers keep ownership of their models.
#[derive(Debug, Clone, Copy)]
pub enum CheckpointRef<'a> {
    Mhat(&'a MhatModel),
    Hat(&'a HatModel),
    Lm(&'a ExternalLm),
}

impl<'a> From<&'a MhatModel> for CheckpointRef<'a> {
    fn from(m: &'a MhatModel) -> Self {
        CheckpointRef::Mhat(m)
    }
}

impl<'a> From<&'a HatModel> for CheckpointRef<'a> {
    fn from(m: &'a HatModel) -> Self {
        CheckpointRef::Hat(m)
    }
}

impl<'a> From<&'a ExternalLm> for CheckpointRef<'a> {
    fn from(m: &'a ExternalLm) -> Self {
        CheckpointRef::Lm(m)
    }
}

impl<'a> From<&'a Checkpoint> for CheckpointRef<'a> {
    fn from(c: &'a Checkpoint) -> Self {
        match c {
            Checkpoint::Mhat(m) => CheckpointRef::Mhat(m),
            Checkpoint::Hat(m) => CheckpointRef::Hat(m),
            Checkpoint::Lm(m) => CheckpointRef::Lm(m),
        }
    }
}

fn encoder_entries(e: &EncoderConfig, out: &mut Vec<(String, String)>) {
    out.push(("config.encoder.d_x".into(), e.d_x.to_string()));
    out.push(("config.encoder.context".into(), e.context.to_string()));
    out.push(("config.encoder.layers".into(), e.layers.to_string()));
    out.push(("config.encoder.d_f".into(), e.d_f.to_string()));
}

fn decoder_entries(prefix: &str, d: &EmbeddingDecoderConfig, out: &mut Vec<(String, String)>) {
    out.push((
        format!("config.{prefix}.embed_dim"),
        d.embed_dim.to_string(),
    ));
    out.push((
        format!("config.{prefix}.tied_tables"),
        d.tied_tables.to_string(),
    ));
}

impl CheckpointRef<'_> {
    fn kind(&self) -> CheckpointKind {
        match self {
            CheckpointRef::Mhat(_) => CheckpointKind::Mhat,
            CheckpointRef::Hat(_) => CheckpointKind::Hat,
            CheckpointRef::Lm(_) => CheckpointKind::Lm,
        }
    }

    fn parts(&self) -> (&Vocabulary, &ParameterSet, Vec<(String, String)>) {
        use crate::model::Transducer;
        let mut cfg = Vec::new();
        match self {
            CheckpointRef::Mhat(m) => {
                let c = m.config();
                encoder_entries(&c.encoder, &mut cfg);
                decoder_entries("blank_decoder", &c.blank_decoder, &mut cfg);
                decoder_entries("label_decoder", &c.label_decoder, &mut cfg);
                cfg.push(("config.joint_dim".into(), c.joint_dim.to_string()));
                let alpha = m
                    .trained_alpha()
                    .map_or_else(|| "none".to_string(), |a| a.to_string());
                cfg.push(("meta.trained_alpha".into(), alpha));
                (m.vocab(), m.params(), cfg)
            }
            CheckpointRef::Hat(m) => {
                let c = m.config();
                encoder_entries(&c.encoder, &mut cfg);
                decoder_entries("decoder", &c.decoder, &mut cfg);
                cfg.push(("config.joint_dim".into(), c.joint_dim.to_string()));
                (m.vocab(), m.params(), cfg)
            }
            CheckpointRef::Lm(m) => {
                decoder_entries("decoder", &m.config().decoder, &mut cfg);
                (m.vocab(), m.params(), cfg)
            }
        }
    }
}

fn shape_str(shape: &[usize]) -> String {
    shape
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("x")
}

/// Writes `dir/manifest.txt` (kind, vocabulary, configuration and tensor
/// table) and `dir/params.bin` (every value as little-endian `f32`, in
/// manifest order). Values are stored at single precision, so a model whose
/// parameters are already `f32`-representable round-trips exactly.
pub fn save_checkpoint<'a>(model: impl Into<CheckpointRef<'a>>, dir: &Path) -> Result<()> {
    let model = model.into();
    let (vocab, params, cfg) = model.parts();
    let mut manifest = String::new();
    let _ = writeln!(manifest, "format = {FORMAT}");
    let _ = writeln!(manifest, "kind = {}", model.kind().as_str());
    let _ = writeln!(manifest, "vocab.size = {}", vocab.size());
    let _ = writeln!(manifest, "vocab.hash = {}", vocab.hash());
    let _ = writeln!(manifest, "vocab.names = {}", vocab.names().join(" "));
    for (k, v) in &cfg {
        let _ = writeln!(manifest, "{k} = {v}");
    }
    let mut blob = Vec::with_capacity(4 * params.num_values());
    for (name, group, t) in params.iter() {
        let _ = writeln!(manifest, "tensor = {name} {group} {}", shape_str(t.shape()));
        for v in t.data() {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let _ = writeln!(manifest, "blob.bytes = {}", blob.len());
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    let bpath = dir.join(BLOB);
    fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))
}

struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Reads a checkpoint written by [`save_checkpoint`]. Every stored tensor is
/// checked against the layout implied by the stored configuration; the first
/// disagreement is reported by name.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let corrupt = |reason: String| Error::CorruptCheckpoint {
        path: dir.to_path_buf(),
        reason,
    };
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut manifest = Manifest {
        entries: Vec::new(),
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| corrupt(format!("manifest line {} is not `key = value`", i + 1)))?;
        manifest
            .entries
            .push((k.trim().to_string(), v.trim().to_string()));
    }
    let field = |key: &str| {
        manifest
            .get(key)
            .ok_or_else(|| corrupt(format!("manifest lacks {key}")))
    };
    if field("format")? != FORMAT {
        return Err(corrupt(format!(
            "unsupported format {:?}",
            field("format")?
        )));
    }
    let number = |key: &str| -> Result<usize> {
        field(key)?
            .parse()
            .map_err(|_| corrupt(format!("{key} is not a non-negative integer")))
    };
    let flag = |key: &str| -> Result<bool> {
        field(key)?
            .parse()
            .map_err(|_| corrupt(format!("{key} is not a boolean")))
    };
    let decoder = |prefix: &str| -> Result<EmbeddingDecoderConfig> {
        Ok(EmbeddingDecoderConfig {
            embed_dim: number(&format!("config.{prefix}.embed_dim"))?,
            tied_tables: flag(&format!("config.{prefix}.tied_tables"))?,
        })
    };
    let encoder = || -> Result<EncoderConfig> {
        Ok(EncoderConfig {
            d_x: number("config.encoder.d_x")?,
            context: number("config.encoder.context")?,
            layers: number("config.encoder.layers")?,
            d_f: number("config.encoder.d_f")?,
        })
    };

    let names: Vec<String> = field("vocab.names")?
        .split(' ')
        .map(str::to_string)
        .collect();
    let vocab = Vocabulary::with_names(names).map_err(|e| corrupt(e.to_string()))?;
    if vocab.size() != number("vocab.size")? {
        return Err(corrupt(format!(
            "vocab.size disagrees with {} stored names",
            vocab.size()
        )));
    }
    if vocab.hash() != field("vocab.hash")? {
        return Err(corrupt(
            "vocabulary hash does not match the stored names".into(),
        ));
    }

    // A freshly initialised model of the stored configuration supplies the
    // expected tensor table.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let kind = field("kind")?;
    let reference = match kind {
        "mhat" => {
            let cfg = MhatConfig {
                encoder: encoder()?,
                blank_decoder: decoder("blank_decoder")?,
                label_decoder: decoder("label_decoder")?,
                joint_dim: number("config.joint_dim")?,
            };
            Checkpoint::Mhat(
                MhatModel::new(vocab.clone(), cfg, &mut rng).map_err(|e| corrupt(e.to_string()))?,
            )
        }
        "hat" => {
            let cfg = HatConfig {
                encoder: encoder()?,
                decoder: decoder("decoder")?,
                joint_dim: number("config.joint_dim")?,
            };
            Checkpoint::Hat(
                HatModel::new(vocab.clone(), cfg, &mut rng).map_err(|e| corrupt(e.to_string()))?,
            )
        }
        "lm" => {
            let cfg = ExternalLmConfig {
                decoder: decoder("decoder")?,
            };
            Checkpoint::Lm(
                ExternalLm::new(vocab.clone(), cfg, &mut rng)
                    .map_err(|e| corrupt(e.to_string()))?,
            )
        }
        other => return Err(corrupt(format!("unknown checkpoint kind {other:?}"))),
    };
    let reference_ref = CheckpointRef::from(&reference);
    let (_, expected, _) = reference_ref.parts();

    let stored: Vec<&str> = manifest
        .entries
        .iter()
        .filter(|(k, _)| k == "tensor")
        .map(|(_, v)| v.as_str())
        .collect();
    for (i, (name, group, t)) in expected.iter().enumerate() {
        let want = format!("{name} {group} {}", shape_str(t.shape()));
        match stored.get(i) {
            Some(s) if *s == want => {}
            Some(s) => {
                let found = s.split(' ').next().unwrap_or("");
                return Err(corrupt(format!(
                    "tensor {found:?}: manifest entry {s:?}, expected {want:?}"
                )));
            }
            None => return Err(corrupt(format!("tensor {name:?} missing from manifest"))),
        }
    }
    if let Some(extra) = stored.get(expected.len()) {
        return Err(corrupt(format!("unexpected tensor entry {extra:?}")));
    }

    let bpath = dir.join(BLOB);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    if blob.len() != number("blob.bytes")? {
        let declared = number("blob.bytes")?;
        let mut offset = 0;
        for (name, _, t) in expected.iter() {
            offset += 4 * t.len();
            if offset > blob.len() {
                return Err(corrupt(format!(
                    "tensor {name:?} truncated: blob has {} bytes, {declared} declared",
                    blob.len()
                )));
            }
        }
        return Err(corrupt(format!(
            "blob has {} bytes, {declared} declared",
            blob.len()
        )));
    }
    let mut params = ParameterSet::new();
    let mut offset = 0;
    for (name, group, t) in expected.iter() {
        let end = offset + 4 * t.len();
        let bytes = blob
            .get(offset..end)
            .ok_or_else(|| corrupt(format!("tensor {name:?} truncated")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let tensor = Tensor::new(t.shape().to_vec(), data)
            .map_err(|e| corrupt(format!("tensor {name:?}: {e}")))?;
        params.insert(name, group, tensor)?;
        offset = end;
    }
    if offset != blob.len() {
        return Err(corrupt(format!(
            "{} trailing bytes after the last tensor",
            blob.len() - offset
        )));
    }

    Ok(match reference {
        Checkpoint::Mhat(m) => {
            let mut m = m.with_params(params).map_err(|e| corrupt(e.to_string()))?;
            let alpha = match field("meta.trained_alpha")? {
                "none" => None,
                a => Some(
                    a.parse::<f64>()
                        .map_err(|_| corrupt(format!("bad trained_alpha {a:?}")))?,
                ),
            };
            m.set_trained_alpha(alpha);
            Checkpoint::Mhat(m)
        }
        Checkpoint::Hat(m) => {
            Checkpoint::Hat(m.with_params(params).map_err(|e| corrupt(e.to_string()))?)
        }
        Checkpoint::Lm(m) => Checkpoint::Lm(
            ExternalLm::from_params(vocab, *m.config(), params)
                .map_err(|e| corrupt(e.to_string()))?,
        ),
    })
}
