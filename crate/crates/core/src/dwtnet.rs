//! The wavelet-structured encoder/decoder.
//!
//! Three sections:
//!
//! * an input encoder/decoder (`inp`, `d0`…`d10`) that halves down to 1/32 of
//!   the input extent and climbs back to half resolution with `dwf` channels;
//! * a DWT section that slices that tensor into four single-channel planes
//!   (`ca1`, `ch1`, `cv1`, `cd1`), runs the approximation plane through a
//!   ReLU chain that halves once more and slices again (`ca2`…`cd2`), runs
//!   every detail plane through its own small encoder/decoder, and tiles the
//!   seven results into one full-resolution plane `op1` exactly like a
//!   two-level wavelet decomposition;
//! * an output encoder/decoder over `op1` with channel skips from `d0`…`d3`
//!   and a final single-channel sigmoid convolution.
//!
//! Every conv block is convolution → activation → batch norm → dropout, with
//! the normalization and dropout stages optional per block.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::dropout::DROPOUT_RATE;
use crate::nn::{Activation, Mode, Network, NodeId, Op};
use crate::tensor::Tensor;

/// Depth of the tensors that are sliced into sub-band planes. Equals `dwf`
/// at the default width.
pub const SUBBANDS: usize = 4;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"TOFW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Base filter multiplier.
    pub dwf: usize,
    pub height: usize,
    pub width: usize,
    /// Seeds weight initialization and the dropout stream.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dwf: 4,
            height: 128,
            width: 128,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn square(dwf: usize, extent: usize, seed: u64) -> Self {
        Self {
            dwf,
            height: extent,
            width: extent,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dwf == 0 {
            return Err(Error::Build("dwf must be at least 1".into()));
        }
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(32)
            || !self.width.is_multiple_of(32)
        {
            return Err(Error::Build(format!(
                "input extent {}x{} must be a positive multiple of 32",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    EncodeSame,
    EncodeHalf,
    EncodeDouble,
    /// Stride-1 convolution block with ReLU, used on approximation planes.
    Ll,
    IntermediateEncDec,
    Slice,
    Concat,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    InputEncoder,
    DwtLayer,
    OutputEncoder,
}

/// Metadata for one named block of the architecture.
#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    pub section: Section,
    /// Enclosing intermediate encoder/decoder, for its internal blocks.
    pub parent: Option<String>,
    /// Activation node of conv blocks.
    pub activation_node: Option<NodeId>,
    pub output: NodeId,
}

#[derive(Debug, Clone, Copy)]
struct Flags {
    dropout: bool,
    norm: bool,
}

const T: Flags = Flags {
    dropout: true,
    norm: true,
};
const NO_DROPOUT: Flags = Flags {
    dropout: false,
    norm: true,
};
const F: Flags = Flags {
    dropout: false,
    norm: false,
};

struct Builder {
    net: Network,
    blocks: Vec<Block>,
    section: Section,
    parent: Option<String>,
}

impl Builder {
    fn record(
        &mut self,
        name: &str,
        kind: BlockKind,
        activation_node: Option<NodeId>,
        output: NodeId,
    ) {
        self.blocks.push(Block {
            name: name.to_string(),
            kind,
            section: self.section,
            parent: self.parent.clone(),
            activation_node,
            output,
        });
    }

    fn encode(
        &mut self,
        name: &str,
        input: NodeId,
        kind: BlockKind,
        filters: usize,
        flags: Flags,
    ) -> Result<NodeId> {
        let conv = format!("{name}/conv");
        let mut x = match kind {
            BlockKind::EncodeSame | BlockKind::Ll => self.net.conv2d(&conv, input, filters, 1)?,
            BlockKind::EncodeHalf => self.net.conv2d(&conv, input, filters, 2)?,
            BlockKind::EncodeDouble => self.net.conv_transpose2d(&conv, input, filters)?,
            other => unreachable!("{other:?} is not a conv block"),
        };
        let act = if kind == BlockKind::Ll {
            Activation::Relu
        } else {
            Activation::LeakyRelu
        };
        x = self.net.activation(&format!("{name}/act"), x, act)?;
        let act_node = x;
        if flags.norm {
            x = self.net.batchnorm(&format!("{name}/bn"), x)?;
        }
        if flags.dropout {
            x = self
                .net
                .dropout(&format!("{name}/dropout"), x, DROPOUT_RATE)?;
        }
        self.record(name, kind, Some(act_node), x);
        Ok(x)
    }

    fn same(&mut self, name: &str, input: NodeId, filters: usize, flags: Flags) -> Result<NodeId> {
        self.encode(name, input, BlockKind::EncodeSame, filters, flags)
    }

    fn half(&mut self, name: &str, input: NodeId, filters: usize, flags: Flags) -> Result<NodeId> {
        self.encode(name, input, BlockKind::EncodeHalf, filters, flags)
    }

    fn double(
        &mut self,
        name: &str,
        input: NodeId,
        filters: usize,
        flags: Flags,
    ) -> Result<NodeId> {
        self.encode(name, input, BlockKind::EncodeDouble, filters, flags)
    }

    fn ll(&mut self, name: &str, input: NodeId, filters: usize, flags: Flags) -> Result<NodeId> {
        self.encode(name, input, BlockKind::Ll, filters, flags)
    }

    fn slice4(&mut self, names: [&str; 4], input: NodeId) -> Result<[NodeId; 4]> {
        let mut out = [0; 4];
        for (c, name) in names.iter().enumerate() {
            out[c] = self.net.slice(name, input, c)?;
            self.record(name, BlockKind::Slice, None, out[c]);
        }
        Ok(out)
    }

    fn concat(&mut self, name: &str, a: NodeId, b: NodeId, axis: usize) -> Result<NodeId> {
        let id = self.net.concat(name, a, b, axis)?;
        self.record(name, BlockKind::Concat, None, id);
        Ok(id)
    }

    /// Small encoder/decoder applied to a single detail plane; preserves the
    /// spatial extent and emits depth 1.
    fn intermediate_enc_dec(&mut self, name: &str, input: NodeId, dwf: usize) -> Result<NodeId> {
        let [h, w, _] = self.net.node(input).shape;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::shape(format!(
                "{name}: intermediate encoder/decoder needs extents divisible by 4, got {h}x{w}"
            )));
        }
        self.parent = Some(name.to_string());
        let p = |i: usize| format!("{name}.p{i}");
        let mut x = self.same(&p(0), input, dwf, T)?;
        x = self.half(&p(1), x, dwf * 4, T)?;
        x = self.half(&p(2), x, dwf * 16, T)?;
        x = self.same(&p(3), x, dwf * 64, T)?;
        x = self.double(&p(4), x, dwf * 16, T)?;
        x = self.double(&p(5), x, dwf * 4, NO_DROPOUT)?;
        x = self.same(&p(6), x, 1, F)?;
        self.parent = None;
        self.record(name, BlockKind::IntermediateEncDec, None, x);
        Ok(x)
    }

    /// Tiles the seven sub-band planes into one plane of twice the level-1 extent.
    fn assemble(&mut self, bands: &SubbandNodes) -> Result<NodeId> {
        let ll2_1 = self.concat("ll2_1", bands.ll2, bands.hl2, 2)?;
        let ll2_2 = self.concat("ll2_2", bands.lh2, bands.hh2, 2)?;
        let ll1 = self.concat("ll1_tiled", ll2_1, ll2_2, 1)?;
        let a = self.concat("a", ll1, bands.hl1, 2)?;
        let b = self.concat("b", bands.lh1, bands.hh1, 2)?;
        self.concat("op1", a, b, 1)
    }
}

#[derive(Debug, Clone, Copy)]
struct SubbandNodes {
    ll2: NodeId,
    hl2: NodeId,
    lh2: NodeId,
    hh2: NodeId,
    hl1: NodeId,
    lh1: NodeId,
    hh1: NodeId,
}

/// Names of the seven planes fed to the tiling stage, in input order.
pub const SUBBAND_ORDER: [&str; 7] = ["ll2", "hl2", "lh2", "hh2", "hl1", "lh1", "hh1"];

/// The tiling stage on its own: a network whose inputs are the seven planes
/// in [`SUBBAND_ORDER`] (level-2 planes `q × q`, level-1 planes `2q × 2q`)
/// and whose output is the `4q × 4q` assembled plane.
pub fn tiling_network(q: usize) -> Result<Network> {
    let mut b = Builder {
        net: Network::new(0),
        blocks: Vec::new(),
        section: Section::DwtLayer,
        parent: None,
    };
    let mut ids = [0; 7];
    for (i, name) in SUBBAND_ORDER.iter().enumerate() {
        let e = if i < 4 { q } else { 2 * q };
        ids[i] = b.net.add_input(*name, [e, e, 1])?;
    }
    let out = b.assemble(&SubbandNodes {
        ll2: ids[0],
        hl2: ids[1],
        lh2: ids[2],
        hh2: ids[3],
        hl1: ids[4],
        lh1: ids[5],
        hh1: ids[6],
    })?;
    b.net.set_output(out);
    Ok(b.net)
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    net: Network,
    blocks: Vec<Block>,
}

pub fn build_model(cfg: &ModelConfig) -> Result<Model> {
    cfg.validate()?;
    let dwf = cfg.dwf;
    let mut b = Builder {
        net: Network::new(cfg.seed),
        blocks: Vec::new(),
        section: Section::InputEncoder,
        parent: None,
    };
    let input = b.net.add_input("input", [cfg.height, cfg.width, 1])?;

    let inp = b.same("inp", input, dwf, F)?;
    let d0 = b.half("d0", inp, dwf * 4, T)?;
    let d1 = b.half("d1", d0, dwf * 16, T)?;
    let d2 = b.half("d2", d1, dwf * 64, T)?;
    let d3 = b.half("d3", d2, dwf * 128, T)?;
    let d4 = b.half("d4", d3, dwf * 256, T)?;
    let d5 = b.double("d5", d4, dwf * 128, T)?;
    let d6 = b.double("d6", d5, dwf * 64, T)?;
    let d7 = b.same("d7", d6, dwf * 64, T)?;
    let d8 = b.double("d8", d7, dwf * 16, T)?;
    let d9 = b.double("d9", d8, dwf * 4, T)?;
    let d10 = b.same("d10", d9, SUBBANDS, T)?;

    b.section = Section::DwtLayer;
    let [ca1, ch1, cv1, cd1] = b.slice4(["ca1", "ch1", "cv1", "cd1"], d10)?;
    let mut ll1 = b.ll("ll1.0", ca1, dwf, T)?;
    ll1 = b.ll("ll1.1", ll1, dwf * 4, T)?;
    ll1 = b.ll("ll1.2", ll1, dwf * 16, T)?;
    ll1 = b.ll("ll1.3", ll1, dwf * 32, T)?;
    ll1 = b.half("ll1.4", ll1, dwf * 64, T)?;
    ll1 = b.same("ll1.5", ll1, dwf * 16, T)?;
    ll1 = b.same("ll1.6", ll1, dwf * 4, T)?;
    ll1 = b.same("ll1.7", ll1, SUBBANDS, T)?;
    let [ca2, ch2, cv2, cd2] = b.slice4(["ca2", "ch2", "cv2", "cd2"], ll1)?;
    let mut ll2 = b.ll("ll2.0", ca2, dwf, T)?;
    ll2 = b.ll("ll2.1", ll2, dwf * 4, T)?;
    ll2 = b.ll("ll2.2", ll2, dwf * 16, T)?;
    ll2 = b.ll("ll2.3", ll2, dwf * 64, T)?;
    ll2 = b.ll("ll2.4", ll2, dwf * 16, T)?;
    ll2 = b.ll("ll2.5", ll2, dwf * 4, NO_DROPOUT)?;
    ll2 = b.ll("ll2.6", ll2, 1, F)?;
    let hl2 = b.intermediate_enc_dec("hl2", ch2, dwf)?;
    let lh2 = b.intermediate_enc_dec("lh2", cv2, dwf)?;
    let hh2 = b.intermediate_enc_dec("hh2", cd2, dwf)?;
    let hl1 = b.intermediate_enc_dec("hl1", ch1, dwf)?;
    let lh1 = b.intermediate_enc_dec("lh1", cv1, dwf)?;
    let hh1 = b.intermediate_enc_dec("hh1", cd1, dwf)?;
    let op1 = b.assemble(&SubbandNodes {
        ll2,
        hl2,
        lh2,
        hh2,
        hl1,
        lh1,
        hh1,
    })?;

    b.section = Section::OutputEncoder;
    let mut op2 = b.same("op2.0", op1, dwf * 4, T)?;
    op2 = b.half("op2.1", op2, dwf * 16, T)?;
    op2 = b.concat("op2.2", op2, d0, 3)?;
    op2 = b.half("op2.3", op2, dwf * 64, T)?;
    op2 = b.concat("op2.4", op2, d1, 3)?;
    op2 = b.half("op2.5", op2, dwf * 128, T)?;
    op2 = b.concat("op2.6", op2, d2, 3)?;
    op2 = b.half("op2.7", op2, dwf * 256, T)?;
    op2 = b.concat("op2.8", op2, d3, 3)?;
    op2 = b.same("op2.9", op2, dwf * 256, T)?;
    op2 = b.double("op2.10", op2, dwf * 128, T)?;
    op2 = b.double("op2.11", op2, dwf * 64, T)?;
    op2 = b.double("op2.12", op2, dwf * 16, T)?;
    op2 = b.double("op2.13", op2, dwf * 4, NO_DROPOUT)?;
    let conv = b.net.conv2d("output/conv", op2, 1, 1)?;
    let out = b.net.activation("output/act", conv, Activation::Sigmoid)?;
    b.record("output", BlockKind::Output, Some(out), out);
    b.net.set_output(out);

    Ok(Model {
        config: *cfg,
        net: b.net,
        blocks: b.blocks,
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn mode(&self) -> Mode {
        self.net.mode()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.net.set_mode(mode);
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Maps a `[N, H, W, 1]` batch of thermal images in `[0, 1]` to masks in `(0, 1)`.
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor> {
        let want = [self.config.height, self.config.width, 1];
        match batch.shape() {
            [n, rest @ ..] if *n > 0 && rest == want => {}
            s => {
                return Err(Error::shape(format!(
                    "model expects [N, {}, {}, 1], got {s:?}",
                    want[0], want[1]
                )))
            }
        }
        if let Some(v) = batch.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!("input value {v} outside [0, 1]")));
        }
        self.net.forward(std::slice::from_ref(batch))
    }

    /// Per-sample `[rows, cols, depth]` of every top-level block, from the
    /// tensors produced by the last forward pass.
    pub fn shape_audit(&self) -> Vec<(String, [usize; 3])> {
        self.blocks
            .iter()
            .filter(|b| b.parent.is_none())
            .filter_map(|b| {
                let t = self.net.node_output(b.output)?;
                let s = t.shape();
                Some((b.name.clone(), [s[1], s[2], s[3]]))
            })
            .collect()
    }

    /// Activation actually wired after the convolution of block `name`.
    pub fn block_activation(&self, name: &str) -> Option<Activation> {
        let node = self.block(name)?.activation_node?;
        match self.net.node(node).op {
            Op::Activation(a) => Some(a),
            _ => None,
        }
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = encode_weights(&self.net)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Overwrites every parameter from a weights file. All names and shapes
    /// must match this model.
    pub fn load_weights_into(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let tensors = decode_weights(&bytes)?;
        self.assign(tensors)
    }

    fn assign(&mut self, tensors: Vec<(String, Tensor)>) -> Result<()> {
        let params = self.net.params_mut();
        if tensors.len() != params.len() {
            return Err(Error::format(format!(
                "weights file holds {} tensors, model has {}",
                tensors.len(),
                params.len()
            )));
        }
        let mut by_name: std::collections::HashMap<String, Tensor> = tensors.into_iter().collect();
        for p in params.iter_mut() {
            let t = by_name
                .remove(&p.name)
                .ok_or_else(|| Error::format(format!("weights file lacks `{}`", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::format(format!(
                    "`{}` has shape {:?} in file, {:?} in model",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t;
        }
        Ok(())
    }
}

/// Reads a weights file and builds a `height × width` model around it; the
/// base filter count is recovered from the first block's kernel.
pub fn load_weights(path: impl AsRef<Path>, height: usize, width: usize) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = decode_weights(&bytes)?;
    let dwf = tensors
        .iter()
        .find(|(n, _)| n == "inp/conv/kernel")
        .map(|(_, t)| t.channels())
        .ok_or_else(|| Error::format("weights file lacks `inp/conv/kernel`"))?;
    let mut model = build_model(&ModelConfig {
        dwf,
        height,
        width,
        seed: 0,
    })?;
    model.assign(tensors)?;
    Ok(model)
}

fn encode_weights(net: &Network) -> Result<Vec<u8>> {
    let params = net.params();
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::format(format!("parameter name `{}` too long", p.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        let shape = p.value.shape();
        out.push(u8::try_from(shape.len()).map_err(|_| Error::format("rank above 255"))?);
        for &e in shape {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(format!("weights file truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(4)?.read_exact(&mut b).expect("length checked");
        Ok(u32::from_le_bytes(b))
    }
}

fn decode_weights(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::format("bad magic: not a TOFW weights file"));
    }
    let version = c.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(format!(
            "unsupported weights version {version}"
        )));
    }
    let count = c.u32()? as usize;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::format("parameter name is not UTF-8"))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::format(format!("duplicate parameter name `{name}`")));
        }
        let rank = c.take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| c.u32().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::format("tensor too large"))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let t =
            Tensor::from_vec(&shape, data).map_err(|e| Error::format(format!("`{name}`: {e}")))?;
        out.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - c.pos
        )));
    }
    Ok(out)
}

/// Writes `tensors` in the weights format. Exposed for tooling and tests.
pub fn write_weights_raw<W: Write>(net: &Network, mut w: W) -> Result<()> {
    let bytes = encode_weights(net)?;
    w.write_all(&bytes).map_err(|e| Error::io("<writer>", e))
}
