//! `SRDN` model container.
//!
//! ```text
//! "SRDN" | version u32 | spec word count u32 | spec words u32...
//! | encoder blobs (weight, bias per layer) | generator blobs, layer order
//! | attack flag u32 | [attack word count u32 | attack words | attack blobs]
//! ```
//! All integers little-endian. Conv layers are tagged 0, dense layers 1.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{HyperNetParams, HyperNetSpec};
use crate::advtrain::AttackNet;
use crate::error::{Error, Result};
use crate::nncore::{read_blob, read_u32, write_blob, DenseParams, ImageShape, LayerSpec, MlpParams, MlpSpec, TargetNetSpec};

pub const MODEL_MAGIC: [u8; 4] = *b"SRDN";
pub const MODEL_VERSION: u32 = 1;

/// Contents of a model file: the HyperNet and, optionally, its attack network.
#[derive(Debug, Clone)]
pub struct ModelFile {
    pub hypernet: HyperNetParams<f32>,
    pub attack: Option<AttackNet<f32>>,
}

fn push_list(words: &mut Vec<u32>, xs: &[usize]) {
    words.push(xs.len() as u32);
    words.extend(xs.iter().map(|&x| x as u32));
}

fn spec_words(spec: &HyperNetSpec) -> Vec<u32> {
    let t = &spec.target;
    let mut w = vec![t.input.channels as u32, t.input.height as u32, t.input.width as u32, t.layers.len() as u32];
    for l in &t.layers {
        match *l {
            LayerSpec::Conv { filters, kernel } => w.extend([0, filters as u32, kernel as u32]),
            LayerSpec::Dense { width } => w.extend([1, width as u32, 0]),
        }
    }
    w.push(t.classes as u32);
    w.push(spec.latent_dim as u32);
    w.push(spec.code_dim as u32);
    push_list(&mut w, &spec.encoder_hidden);
    push_list(&mut w, &spec.generator_hidden);
    w
}

struct Words<'a> {
    w: &'a [u32],
    pos: usize,
}

impl Words<'_> {
    fn next(&mut self) -> Result<usize> {
        let v = *self.w.get(self.pos).ok_or_else(|| Error::format("spec block ended early"))?;
        self.pos += 1;
        Ok(v as usize)
    }

    fn list(&mut self) -> Result<Vec<usize>> {
        let n = self.next()?;
        if n > self.w.len() {
            return Err(Error::format("spec list length exceeds block"));
        }
        (0..n).map(|_| self.next()).collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.w.len() {
            return Err(Error::format("trailing words in spec block"));
        }
        Ok(())
    }
}

fn parse_spec(words: &[u32]) -> Result<HyperNetSpec> {
    let mut r = Words { w: words, pos: 0 };
    let input = ImageShape { channels: r.next()?, height: r.next()?, width: r.next()? };
    let n_layers = r.next()?;
    if n_layers > words.len() {
        return Err(Error::format("layer count exceeds spec block"));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let (kind, a, b) = (r.next()?, r.next()?, r.next()?);
        layers.push(match kind {
            0 => LayerSpec::Conv { filters: a, kernel: b },
            1 => LayerSpec::Dense { width: a },
            k => return Err(Error::format(format!("unknown layer tag {k}"))),
        });
    }
    let classes = r.next()?;
    let spec = HyperNetSpec {
        target: TargetNetSpec { input, layers, classes },
        latent_dim: r.next()?,
        code_dim: r.next()?,
        encoder_hidden: r.list()?,
        generator_hidden: r.list()?,
    };
    r.finish()?;
    spec.validate().map_err(|e| Error::format(format!("invalid spec block: {e}")))?;
    Ok(spec)
}

fn write_words<W: Write>(w: &mut W, words: &[u32]) -> Result<()> {
    w.write_all(&(words.len() as u32).to_le_bytes())?;
    for x in words {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_words<R: Read>(r: &mut R) -> Result<Vec<u32>> {
    let n = read_u32(r)? as usize;
    if n > 1 << 16 {
        return Err(Error::format("implausible spec block length"));
    }
    (0..n).map(|_| read_u32(r)).collect()
}

fn write_mlp<W: Write>(w: &mut W, p: &MlpParams<f32>) -> Result<()> {
    for l in &p.layers {
        write_blob(w, &l.weight)?;
        write_blob(w, &l.bias)?;
    }
    Ok(())
}

fn read_mlp<R: Read>(r: &mut R, spec: &MlpSpec) -> Result<MlpParams<f32>> {
    let mut layers = Vec::with_capacity(spec.layer_count());
    for _ in 0..spec.layer_count() {
        let weight = read_blob(r)?;
        let bias = read_blob(r)?;
        layers.push(DenseParams { weight, bias });
    }
    let p = MlpParams { layers };
    p.check(spec).map_err(|e| Error::format(format!("tensor does not match spec: {e}")))?;
    Ok(p)
}

pub fn write_model<W: Write>(w: &mut W, model: &ModelFile) -> Result<()> {
    model.hypernet.check()?;
    w.write_all(&MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    write_words(w, &spec_words(&model.hypernet.spec))?;
    write_mlp(w, &model.hypernet.encoder)?;
    for g in &model.hypernet.generators {
        write_mlp(w, g)?;
    }
    match &model.attack {
        None => w.write_all(&0u32.to_le_bytes())?,
        Some(a) => {
            w.write_all(&1u32.to_le_bytes())?;
            let mut words = vec![a.image.channels as u32, a.image.height as u32, a.image.width as u32];
            push_list(&mut words, &a.spec.widths);
            words.push(a.eps_clip.to_bits());
            write_words(w, &words)?;
            write_mlp(w, &a.params)?;
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<ModelFile> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::format("file too short for magic"))?;
    if magic != MODEL_MAGIC {
        return Err(Error::format("not an SRDN model file"));
    }
    let version = read_u32(r)?;
    if version != MODEL_VERSION {
        return Err(Error::format(format!("unsupported model version {version}")));
    }
    let spec = parse_spec(&read_words(r)?)?;
    let encoder = read_mlp(r, &spec.encoder_spec())?;
    let generators = spec.generator_specs().iter().map(|g| read_mlp(r, g)).collect::<Result<Vec<_>>>()?;
    let hypernet = HyperNetParams { spec, encoder, generators };
    let attack = match read_u32(r)? {
        0 => None,
        1 => {
            let words = read_words(r)?;
            let mut wr = Words { w: &words, pos: 0 };
            let image = ImageShape { channels: wr.next()?, height: wr.next()?, width: wr.next()? };
            let widths = wr.list()?;
            let eps_clip = f32::from_bits(wr.next()? as u32);
            wr.finish()?;
            let spec = MlpSpec::new(widths).map_err(|e| Error::format(e.to_string()))?;
            let params = read_mlp(r, &spec)?;
            let net = AttackNet { spec, params, eps_clip, image };
            net.check().map_err(|e| Error::format(e.to_string()))?;
            Some(net)
        }
        f => return Err(Error::format(format!("bad attack section flag {f}"))),
    };
    Ok(ModelFile { hypernet, attack })
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    read_model(&mut BufReader::new(File::open(path)?))
}
