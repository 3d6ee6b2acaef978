//! Model checkpoints.
//!
//! Binary layout (little endian):
//!
//! ```text
//! b"DLCK" | u32 version | u8 arch (0 linear, 1 mlp2) | u64 hidden_width
//! u64 input_dim | u64 output_dim
//! u8 has_projection [| u64 rows | u64 cols | rows*cols f64]
//! u64 n_params | n_params f64
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{Arch, ParamModel, Projection};

const MAGIC: &[u8; 4] = b"DLCK";
const VERSION: u32 = 1;

pub fn to_bytes(model: &ParamModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * model.theta.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let (tag, width) = match model.arch {
        Arch::Linear => (0u8, 0u64),
        Arch::Mlp2 { hidden_width } => (1u8, hidden_width as u64),
    };
    out.push(tag);
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&(model.input_dim as u64).to_le_bytes());
    out.extend_from_slice(&(model.output_dim as u64).to_le_bytes());
    match &model.projection {
        None => out.push(0),
        Some(p) => {
            out.push(1);
            out.extend_from_slice(&(p.rows as u64).to_le_bytes());
            out.extend_from_slice(&(p.cols as u64).to_le_bytes());
            for v in &p.matrix {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out.extend_from_slice(&(model.theta.len() as u64).to_le_bytes());
    for v in &model.theta {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Structural("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Structural("checkpoint size overflows".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Structural("checkpoint size overflows".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ParamModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Structural("not a model checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Structural(format!("unsupported checkpoint version {version}")));
    }
    let arch = match (r.u8()?, r.u64()?) {
        (0, _) => Arch::Linear,
        (1, w) => Arch::Mlp2 { hidden_width: w },
        (t, _) => return Err(Error::Structural(format!("unknown architecture tag {t}"))),
    };
    let input_dim = r.u64()?;
    let output_dim = r.u64()?;
    let projection = match r.u8()? {
        0 => None,
        1 => {
            let rows = r.u64()?;
            let cols = r.u64()?;
            let matrix = r.f64s(rows * cols)?;
            Some(Projection { rows, cols, matrix })
        }
        t => return Err(Error::Structural(format!("bad projection flag {t}"))),
    };
    let n = r.u64()?;
    let theta = r.f64s(n)?;
    if r.pos != buf.len() {
        return Err(Error::Structural("trailing bytes in checkpoint".into()));
    }
    let model = ParamModel {
        arch,
        theta,
        input_dim,
        output_dim,
        projection,
    };
    if model.theta.len() != model.param_count() {
        return Err(Error::Shape {
            expected: format!("{} parameters", model.param_count()),
            got: format!("{}", model.theta.len()),
        });
    }
    Ok(model)
}

pub fn write(model: &ParamModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<ParamModel> {
    from_bytes(&std::fs::read(path)?)
}

pub fn write_json(model: &ParamModel, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string(model)?)?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<ParamModel> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let proj = Projection::random(3, 5, 1);
        let mut m = ParamModel::init(Arch::Mlp2 { hidden_width: 4 }, 5, 2, Some(proj), 9).unwrap();
        m.theta[0] = f64::MIN_POSITIVE;
        let back = from_bytes(&to_bytes(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = ParamModel::init(Arch::Linear, 4, 1, None, 0).unwrap();
        let path = dir.path().join("m.json");
        write_json(&m, &path).unwrap();
        assert_eq!(read_json(&path).unwrap(), m);
    }

    #[test]
    fn rejects_garbage() {
        assert!(from_bytes(b"nope").is_err());
        let m = ParamModel::init(Arch::Linear, 2, 1, None, 0).unwrap();
        let mut b = to_bytes(&m);
        b.pop();
        assert!(from_bytes(&b).is_err());
    }
}
