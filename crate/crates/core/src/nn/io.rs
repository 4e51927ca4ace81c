//! Binary model files. Layout: magic `UXPROP-MODEL\n`, version u32, task u8,
//! activation mode u8, input shape (rank u8 + u32 dims), layer count u32,
//! then one record per layer (kind u8 + dims + little-endian f64 payload).
//! Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ActivationMode, Layer, Model, Task};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const MAGIC: &[u8] = b"UXPROP-MODEL\n";
const VERSION: u32 = 1;

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&[match model.task() {
        Task::Regression => 0u8,
        Task::Classification => 1,
    }])
    .map_err(io_err)?;
    w.write_all(&[match model.activation_mode() {
        ActivationMode::Relu => 0u8,
        ActivationMode::Linear => 1,
    }])
    .map_err(io_err)?;
    let shape = model.input_shape();
    w.write_all(&[shape.len() as u8]).map_err(io_err)?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
    }
    w.write_all(&(model.layers().len() as u32).to_le_bytes())
        .map_err(io_err)?;

    for layer in model.layers() {
        match layer {
            Layer::Dense { weight, bias } => {
                w.write_all(&[0u8]).map_err(io_err)?;
                w.write_all(&(weight.rows() as u32).to_le_bytes()).map_err(io_err)?;
                w.write_all(&(weight.cols() as u32).to_le_bytes()).map_err(io_err)?;
                write_f64s(&mut w, weight.data()).map_err(io_err)?;
                write_f64s(&mut w, bias).map_err(io_err)?;
            }
            Layer::Relu => w.write_all(&[1u8]).map_err(io_err)?,
            Layer::Conv2D {
                out_ch,
                in_ch,
                kh,
                kw,
                kernel,
                bias,
            } => {
                w.write_all(&[2u8]).map_err(io_err)?;
                for d in [*out_ch, *in_ch, *kh, *kw] {
                    w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
                }
                write_f64s(&mut w, kernel).map_err(io_err)?;
                write_f64s(&mut w, bias).map_err(io_err)?;
            }
            Layer::MaxPool2x2 => w.write_all(&[3u8]).map_err(io_err)?,
            Layer::Flatten => w.write_all(&[4u8]).map_err(io_err)?,
            Layer::Softmax => w.write_all(&[5u8]).map_err(io_err)?,
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path: path.display().to_string(),
    };

    let magic = r.bytes(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(r.bad("magic", "not a model file (bad magic string)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.bad("version", format!("unsupported version {version}")));
    }
    let task = match r.u8("task")? {
        0 => Task::Regression,
        1 => Task::Classification,
        t => return Err(r.bad("task", format!("unknown task tag {t}"))),
    };
    let mode = match r.u8("activation_mode")? {
        0 => ActivationMode::Relu,
        1 => ActivationMode::Linear,
        t => return Err(r.bad("activation_mode", format!("unknown mode tag {t}"))),
    };
    let rank = r.u8("input_rank")? as usize;
    let mut input_shape = Vec::with_capacity(rank);
    for i in 0..rank {
        input_shape.push(r.u32(&format!("input_dim[{i}]"))? as usize);
    }
    let layer_count = r.u32("layer_count")? as usize;
    if layer_count > 1024 {
        return Err(r.bad("layer_count", format!("implausible layer count {layer_count}")));
    }

    let mut layers = Vec::with_capacity(layer_count);
    for i in 0..layer_count {
        let field = |name: &str| format!("layer[{i}].{name}");
        let kind = r.u8(&field("kind"))?;
        let layer = match kind {
            0 => {
                let rows = r.u32(&field("rows"))? as usize;
                let cols = r.u32(&field("cols"))? as usize;
                if rows == 0 || cols == 0 || rows.saturating_mul(cols) > 100_000_000 {
                    return Err(r.bad(&field("dims"), format!("implausible Dense dims {rows}x{cols}")));
                }
                let weights = r.f64s(rows * cols, &field("weights"))?;
                let bias = r.f64s(rows, &field("bias"))?;
                Layer::Dense {
                    weight: Matrix::new(rows, cols, weights)?,
                    bias,
                }
            }
            1 => Layer::Relu,
            2 => {
                let out_ch = r.u32(&field("out_ch"))? as usize;
                let in_ch = r.u32(&field("in_ch"))? as usize;
                let kh = r.u32(&field("kh"))? as usize;
                let kw = r.u32(&field("kw"))? as usize;
                let len = out_ch
                    .saturating_mul(in_ch)
                    .saturating_mul(kh)
                    .saturating_mul(kw);
                if len == 0 || len > 100_000_000 {
                    return Err(r.bad(&field("dims"), "implausible Conv2D dims"));
                }
                let kernel = r.f64s(len, &field("kernel"))?;
                let bias = r.f64s(out_ch, &field("bias"))?;
                Layer::Conv2D {
                    out_ch,
                    in_ch,
                    kh,
                    kw,
                    kernel,
                    bias,
                }
            }
            3 => Layer::MaxPool2x2,
            4 => Layer::Flatten,
            5 => Layer::Softmax,
            t => return Err(r.bad(&field("kind"), format!("unknown layer tag {t}"))),
        };
        layers.push(layer);
    }

    let mut trailing = [0u8; 1];
    match r.inner.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(r.bad("eof", "trailing bytes after model payload")),
        Err(e) => return Err(Error::parse(r.path.clone(), format!("eof check: {e}"))),
    }

    Model::new(layers, task, input_shape, mode)
        .map_err(|e| Error::parse(path.display().to_string(), format!("inconsistent model: {e}")))
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Reader {
    inner: BufReader<File>,
    path: String,
}

impl Reader {
    fn bytes(&mut self, n: usize, field: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::parse(self.path.clone(), format!("reading {field}: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.bytes(1, field)?[0])
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.bytes(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let raw = self.bytes(n * 8, field)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }

    fn bad(&self, field: &str, detail: impl Into<String>) -> Error {
        Error::parse(self.path.clone(), format!("{field}: {}", detail.into()))
    }
}
