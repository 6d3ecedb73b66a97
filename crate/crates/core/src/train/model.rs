use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::ArrayView2;

use super::backend::{BackendTape, ToyBackend};
use crate::controller::{apcen_backward, apcen_forward_tape, ApcenTape, ControllerConfig, ControllerWeights, ParamTrajectory};
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::norm::{
    pcen_backward, pcen_forward_tape, simp_pcen_backward, simp_pcen_forward_tape, FeatureMap, PcenParams, PcenTape,
    SimpPcenParams, SimpPcenTape,
};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// PCEN frozen at its initial values.
    Fixed,
    Pcen,
    SimpPcen,
    Apcen,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Fixed, Variant::Pcen, Variant::SimpPcen, Variant::Apcen];

    fn code(self) -> u8 {
        match self {
            Variant::Fixed => 0,
            Variant::Pcen => 1,
            Variant::SimpPcen => 2,
            Variant::Apcen => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    /// Whether a checkpoint is needed to run this variant.
    pub fn is_trained(self) -> bool {
        self != Variant::Fixed
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Fixed => "fixed",
            Variant::Pcen => "pcen",
            Variant::SimpPcen => "simp_pcen",
            Variant::Apcen => "apcen",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "fixed" => Ok(Variant::Fixed),
            "pcen" => Ok(Variant::Pcen),
            "simp_pcen" | "simppcen" => Ok(Variant::SimpPcen),
            "apcen" => Ok(Variant::Apcen),
            other => Err(Error::ConfigInvalid(format!("unknown variant '{other}'"))),
        }
    }
}

/// Normalization stage parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Normalizer {
    Pcen(PcenParams),
    Simp(SimpPcenParams),
    Apcen(ControllerWeights),
}

impl Normalizer {
    pub fn initial(variant: Variant, channels: usize, controller: Option<ControllerConfig>, seed: u64) -> Result<Self> {
        Ok(match variant {
            Variant::Fixed | Variant::Pcen => Normalizer::Pcen(PcenParams::init(channels)),
            Variant::SimpPcen => Normalizer::Simp(SimpPcenParams::init(channels)),
            Variant::Apcen => {
                let cfg = controller.unwrap_or_else(|| ControllerConfig::new(channels));
                if cfg.channels != channels {
                    return Err(Error::ConfigInvalid("controller channels differ from the filterbank".into()));
                }
                Normalizer::Apcen(ControllerWeights::init(cfg, rng::derive_seed(seed, "model.controller", 0))?)
            }
        })
    }

    pub fn channels(&self) -> usize {
        match self {
            Normalizer::Pcen(p) => p.channels(),
            Normalizer::Simp(p) => p.channels(),
            Normalizer::Apcen(w) => w.config.channels,
        }
    }

    /// Normalized features; the exponent trajectory is present for the
    /// adaptive normalizer.
    pub fn apply(&self, e: ArrayView2<f64>) -> Result<(FeatureMap, Option<ParamTrajectory>)> {
        match self {
            Normalizer::Pcen(p) => Ok((crate::norm::pcen_forward(e, p)?, None)),
            Normalizer::Simp(p) => Ok((crate::norm::simp_pcen_forward(e, p, None)?, None)),
            Normalizer::Apcen(w) => crate::controller::apcen_process(e, w).map(|(x, t)| (x, Some(t))),
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            Normalizer::Pcen(p) => {
                let z = vec![0.0; p.channels()];
                Normalizer::Pcen(PcenParams { s: z.clone(), alpha: z.clone(), delta: z.clone(), gamma: z, eps: p.eps })
            }
            Normalizer::Simp(p) => {
                let z = vec![0.0; p.channels()];
                Normalizer::Simp(SimpPcenParams { alpha: z.clone(), gamma: z, s: p.s, eps: p.eps })
            }
            Normalizer::Apcen(w) => Normalizer::Apcen(w.zeros_like()),
        }
    }

    fn blocks(&self) -> Vec<&[f64]> {
        match self {
            Normalizer::Pcen(p) => vec![&p.s, &p.alpha, &p.delta, &p.gamma],
            Normalizer::Simp(p) => vec![&p.alpha, &p.gamma],
            Normalizer::Apcen(w) => w.blocks(),
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Normalizer::Pcen(p) => vec![&mut p.s, &mut p.alpha, &mut p.delta, &mut p.gamma],
            Normalizer::Simp(p) => vec![&mut p.alpha, &mut p.gamma],
            Normalizer::Apcen(w) => w.blocks_mut(),
        }
    }
}

/// Everything past the fixed front-end: normalization plus classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub frontend: FrontendConfig,
    pub variant: Variant,
    pub norm: Normalizer,
    pub backend: ToyBackend,
}

#[derive(Clone, Debug)]
enum NormTape {
    Fixed,
    Pcen(PcenTape),
    Simp(SimpPcenTape),
    Apcen(ApcenTape),
}

/// Forward values for one clip, consumed by [`Model::backward`].
#[derive(Clone, Debug)]
pub struct ModelTape {
    norm: NormTape,
    backend: BackendTape,
}

impl Model {
    pub fn new(
        frontend: FrontendConfig,
        variant: Variant,
        classes: usize,
        controller: Option<ControllerConfig>,
        backend_hidden: usize,
        seed: u64,
    ) -> Result<Self> {
        frontend.validate()?;
        if classes < 2 {
            return Err(Error::ConfigInvalid("need at least two classes".into()));
        }
        let n = frontend.n_filters;
        let norm = Normalizer::initial(variant, n, controller, seed)?;
        let mut r = rng::stream(seed, "model.backend");
        let backend = ToyBackend::init(n, classes, backend_hidden, &mut r);
        Ok(Self { frontend, variant, norm, backend })
    }

    pub fn channels(&self) -> usize {
        self.frontend.n_filters
    }

    pub fn classes(&self) -> usize {
        self.backend.classes
    }

    /// Same shape, all trainable values zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            frontend: self.frontend.clone(),
            variant: self.variant,
            norm: self.norm.zeros_like(),
            backend: self.backend.zeros_like(),
        }
    }

    /// Blocks updated by the optimizer, in a stable order.
    pub fn trainable_blocks(&self) -> Vec<&[f64]> {
        let mut b: Vec<&[f64]> = self.backend.blocks().into();
        if self.variant != Variant::Fixed {
            b.extend(self.norm.blocks());
        }
        b
    }

    pub fn trainable_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut b: Vec<&mut [f64]> = self.backend.blocks_mut().into();
        if self.variant != Variant::Fixed {
            b.extend(self.norm.blocks_mut());
        }
        b
    }

    /// Names matching [`Self::trainable_blocks`].
    pub fn trainable_block_names(&self) -> Vec<String> {
        let mut n: Vec<String> = ["backend.w1", "backend.b1", "backend.w2", "backend.b2"].map(String::from).into();
        if self.variant != Variant::Fixed {
            match &self.norm {
                Normalizer::Pcen(_) => n.extend(["pcen.s", "pcen.alpha", "pcen.delta", "pcen.gamma"].map(String::from)),
                Normalizer::Simp(_) => n.extend(["simp.alpha", "simp.gamma"].map(String::from)),
                Normalizer::Apcen(w) => n.extend(w.block_names().into_iter().map(|b| format!("controller.{b}"))),
            }
        }
        n
    }

    /// Clamps normalization parameters back into their valid ranges.
    pub fn project(&mut self) {
        match &mut self.norm {
            Normalizer::Pcen(p) => p.project(),
            Normalizer::Simp(p) => p.project(),
            Normalizer::Apcen(_) => {}
        }
    }

    pub fn is_finite(&self) -> bool {
        self.trainable_blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Adds `other` (same shape) into `self`, all blocks.
    pub fn add_assign(&mut self, other: &Model) {
        let src: Vec<&[f64]> = other.backend.blocks().into_iter().chain(other.norm.blocks()).collect();
        let dst = self.backend.blocks_mut().into_iter().chain(self.norm.blocks_mut());
        for (d, s) in dst.zip(src) {
            d.iter_mut().zip(s).for_each(|(d, s)| *d += s);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for b in self.backend.blocks_mut().into_iter().chain(self.norm.blocks_mut()) {
            b.iter_mut().for_each(|v| *v *= k);
        }
    }

    /// Normalized feature map for an energy map; the trajectory is present
    /// for the adaptive variant.
    pub fn normalize(&self, e: ArrayView2<f64>) -> Result<(FeatureMap, Option<ParamTrajectory>)> {
        self.norm.apply(e)
    }

    pub fn logits(&self, e: ArrayView2<f64>) -> Result<Vec<f64>> {
        let (x, _) = self.normalize(e)?;
        Ok(self.backend.forward(x.view())?.0)
    }

    pub fn forward_tape(&self, e: ArrayView2<f64>) -> Result<(Vec<f64>, ModelTape)> {
        let (x, norm) = match (&self.norm, self.variant) {
            (Normalizer::Pcen(p), Variant::Fixed) => (crate::norm::pcen_forward(e, p)?, NormTape::Fixed),
            (Normalizer::Pcen(p), _) => {
                let (x, t) = pcen_forward_tape(e, p)?;
                (x, NormTape::Pcen(t))
            }
            (Normalizer::Simp(p), _) => {
                let (x, t) = simp_pcen_forward_tape(e, p, None)?;
                (x, NormTape::Simp(t))
            }
            (Normalizer::Apcen(w), _) => {
                let (x, _, t) = apcen_forward_tape(e, w)?;
                (x, NormTape::Apcen(t))
            }
        };
        let (logits, backend) = self.backend.forward(x.view())?;
        Ok((logits, ModelTape { norm, backend }))
    }

    /// Accumulates gradients of a loss with logit gradient `g_logits` into
    /// `grad`. `bptt_window` truncates the adaptive recursion.
    pub fn backward(
        &self,
        tape: &ModelTape,
        g_logits: &[f64],
        grad: &mut Model,
        bptt_window: Option<usize>,
    ) -> Result<()> {
        let g_x = self.backend.backward(&tape.backend, g_logits, &mut grad.backend);
        match (&tape.norm, &self.norm, &mut grad.norm) {
            (NormTape::Fixed, _, _) => {}
            (NormTape::Pcen(t), Normalizer::Pcen(p), Normalizer::Pcen(g)) => {
                let pg = pcen_backward(t, p, g_x.view())?;
                for (dst, src) in [(&mut g.s, &pg.s), (&mut g.alpha, &pg.alpha), (&mut g.delta, &pg.delta), (&mut g.gamma, &pg.gamma)] {
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
            (NormTape::Simp(t), Normalizer::Simp(_), Normalizer::Simp(g)) => {
                let (ga, gg) = simp_pcen_backward(t, g_x.view())?.per_channel();
                g.alpha.iter_mut().zip(&ga).for_each(|(d, s)| *d += s);
                g.gamma.iter_mut().zip(&gg).for_each(|(d, s)| *d += s);
            }
            (NormTape::Apcen(t), Normalizer::Apcen(w), Normalizer::Apcen(g)) => {
                g.add_assign(&apcen_backward(t, w, g_x.view(), bptt_window)?);
            }
            _ => return Err(Error::ConfigInvalid("gradient buffer does not match the model".into())),
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(&MODEL_MAGIC);
        w.u16(MODEL_VERSION);
        w.u8(self.variant.code());
        w.u8(match self.norm {
            Normalizer::Pcen(_) => 0,
            Normalizer::Simp(_) => 1,
            Normalizer::Apcen(_) => 2,
        });
        let f = &self.frontend;
        for v in [f.n_filters, f.kernel_len, f.pool_len, f.hop, f.window] {
            w.u32(v as u32);
        }
        w.u32(f.sample_rate);
        w.f64(f.f_min);
        w.f64(f.f_max);
        match &self.norm {
            Normalizer::Pcen(p) => {
                w.f64(p.eps);
                w.u32(p.channels() as u32);
                for b in [&p.s, &p.alpha, &p.delta, &p.gamma] {
                    w.f64s(b);
                }
            }
            Normalizer::Simp(p) => {
                w.f64(p.eps);
                w.f64(p.s);
                w.u32(p.channels() as u32);
                w.f64s(&p.alpha);
                w.f64s(&p.gamma);
            }
            Normalizer::Apcen(c) => {
                let rec = c.to_bytes();
                w.u64(rec.len() as u64);
                w.bytes(&rec);
            }
        }
        let b = &self.backend;
        for v in [b.channels, b.mlp.hidden, b.classes] {
            w.u32(v as u32);
        }
        for blk in b.blocks() {
            w.f64s(blk);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != MODEL_MAGIC {
            return Err(Error::BadMagic { expected: MODEL_MAGIC, found: magic });
        }
        let version = r.u16()?;
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedFormat(format!("model checkpoint version {version}")));
        }
        let variant = Variant::from_code(r.u8()?).ok_or_else(|| corrupt("unknown variant code"))?;
        let norm_kind = r.u8()?;
        let mut dims = [0usize; 5];
        for d in dims.iter_mut() {
            *d = r.u32()? as usize;
        }
        let frontend = FrontendConfig {
            n_filters: dims[0],
            kernel_len: dims[1],
            pool_len: dims[2],
            hop: dims[3],
            window: dims[4],
            sample_rate: r.u32()?,
            f_min: r.f64()?,
            f_max: r.f64()?,
        };
        frontend.validate()?;
        let n = frontend.n_filters;
        let norm = match norm_kind {
            0 => {
                let eps = r.f64()?;
                let ch = r.u32()? as usize;
                let mut blocks = (0..4).map(|_| r.f64s(ch));
                let (s, alpha, delta, gamma) = (
                    blocks.next().unwrap()?,
                    blocks.next().unwrap()?,
                    blocks.next().unwrap()?,
                    blocks.next().unwrap()?,
                );
                Normalizer::Pcen(PcenParams { s, alpha, delta, gamma, eps })
            }
            1 => {
                let eps = r.f64()?;
                let s = r.f64()?;
                let ch = r.u32()? as usize;
                let alpha = r.f64s(ch)?;
                let gamma = r.f64s(ch)?;
                Normalizer::Simp(SimpPcenParams { alpha, gamma, s, eps })
            }
            2 => {
                let len = r.u64()? as usize;
                Normalizer::Apcen(ControllerWeights::from_bytes(r.take(len)?)?)
            }
            _ => return Err(corrupt("unknown normalizer code")),
        };
        let consistent = match (&norm, variant) {
            (Normalizer::Pcen(p), Variant::Fixed | Variant::Pcen) => p.channels() == n,
            (Normalizer::Simp(p), Variant::SimpPcen) => p.channels() == n,
            (Normalizer::Apcen(w), Variant::Apcen) => w.config.channels == n,
            _ => false,
        };
        if !consistent {
            return Err(corrupt("normalizer does not match variant or channel count"));
        }
        let (ch, hidden, classes) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        if ch != n {
            return Err(corrupt("backend channel count differs from filterbank"));
        }
        let mut backend = ToyBackend::zeros(ch, classes, hidden);
        for blk in backend.blocks_mut() {
            let vals = r.f64s(blk.len())?;
            blk.copy_from_slice(&vals);
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes after model record"));
        }
        Ok(Self { frontend, variant, norm, backend })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub const MODEL_MAGIC: [u8; 4] = *b"APCM";
pub const MODEL_VERSION: u16 = 1;

fn corrupt(m: &str) -> Error {
    Error::Checkpoint(m.to_string())
}

#[derive(Default)]
struct ByteWriter(Vec<u8>);

impl ByteWriter {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
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
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|x| self.f64(*x));
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("model record truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| corrupt("block length overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_frontend() -> FrontendConfig {
        FrontendConfig { n_filters: 4, ..Default::default() }
    }

    #[test]
    fn checkpoint_round_trip_every_variant() {
        for v in Variant::ALL {
            let ctl = ControllerConfig::new(4).with_sizes(3, 3);
            let mut m = Model::new(small_frontend(), v, 3, Some(ctl), 5, 7).unwrap();
            if let Normalizer::Pcen(p) = &mut m.norm {
                p.alpha[1] = 0.123;
            }
            let back = Model::from_bytes(&m.to_bytes()).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.to_bytes(), m.to_bytes());
        }
    }

    #[test]
    fn truncated_or_foreign_records_rejected() {
        let m = Model::new(small_frontend(), Variant::Pcen, 3, None, 5, 7).unwrap();
        let b = m.to_bytes();
        assert!(matches!(Model::from_bytes(&b[..b.len() - 1]), Err(Error::Checkpoint(_))));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(Model::from_bytes(&bad), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn fixed_variant_trains_backend_only() {
        let m = Model::new(small_frontend(), Variant::Fixed, 3, None, 5, 7).unwrap();
        assert_eq!(m.trainable_blocks().len(), 4);
        let m = Model::new(small_frontend(), Variant::Pcen, 3, None, 5, 7).unwrap();
        assert_eq!(m.trainable_blocks().len(), 8);
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("leaf".parse::<Variant>().is_err());
    }
}
