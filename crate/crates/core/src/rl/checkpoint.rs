//! Binary checkpoint container. All integers and floats are little-endian.
//!
//! ```text
//! magic    b"MCMPCKPT"
//! version  u32 (= 1)
//! config   u64 length + UTF-8 JSON of the policy config
//! count    u32 number of tensors
//! tensor*  u32 name length, name bytes, u32 rows, u32 cols, rows*cols f64
//! adam     u64 step, then first and second moments (rows*cols f64 each,
//!          tensor order, shapes as above)
//! baseline u8 flag, f64 value (present only when the flag is 1)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::RlError;
use crate::rl::net::{AdamState, PolicyConfig, PolicyParams};

const MAGIC: &[u8; 8] = b"MCMPCKPT";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> RlError {
    RlError::Checkpoint(msg.into())
}

fn write_floats<W: Write>(w: &mut W, t: &Array2<f64>) -> std::io::Result<()> {
    for x in t.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

impl PolicyParams {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), RlError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let cfg = serde_json::to_vec(&self.config).map_err(|e| bad(e.to_string()))?;
        w.write_all(&(cfg.len() as u64).to_le_bytes())?;
        w.write_all(&cfg)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.nrows() as u32).to_le_bytes())?;
            w.write_all(&(t.ncols() as u32).to_le_bytes())?;
            write_floats(&mut w, t)?;
        }
        w.write_all(&self.adam.step.to_le_bytes())?;
        for t in self.adam.m.iter().chain(&self.adam.v) {
            write_floats(&mut w, t)?;
        }
        match self.baseline {
            Some(b) => {
                w.write_all(&[1])?;
                w.write_all(&b.to_le_bytes())?;
            }
            None => w.write_all(&[0])?,
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, RlError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u64(&mut r)? as usize;
        let mut cfg = vec![0u8; len];
        r.read_exact(&mut cfg)?;
        let config: PolicyConfig = serde_json::from_slice(&cfg).map_err(|e| bad(e.to_string()))?;
        config.validate()?;
        let shapes = config.shapes();
        let count = read_u32(&mut r)? as usize;
        if count != shapes.len() {
            return Err(bad(format!("{count} tensors, config implies {}", shapes.len())));
        }
        let mut names = Vec::with_capacity(count);
        let mut tensors = Vec::with_capacity(count);
        for (want, rows, cols) in &shapes {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
            let (rr, cc) = (read_u32(&mut r)? as usize, read_u32(&mut r)? as usize);
            if &name != want || (rr, cc) != (*rows, *cols) {
                return Err(bad(format!("tensor {name} {rr}x{cc}, expected {want} {rows}x{cols}")));
            }
            tensors.push(read_tensor(&mut r, rr, cc)?);
            names.push(name);
        }
        let step = read_u64(&mut r)?;
        let mut moments = Vec::with_capacity(2 * count);
        for _ in 0..2 {
            for t in &tensors {
                moments.push(read_tensor(&mut r, t.nrows(), t.ncols())?);
            }
        }
        let v = moments.split_off(count);
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let baseline = match flag[0] {
            0 => None,
            1 => Some(f64::from_le_bytes(read_array(&mut r)?)),
            f => return Err(bad(format!("bad baseline flag {f}"))),
        };
        Ok(PolicyParams { config, names, tensors, adam: AdamState { step, m: moments, v }, baseline })
    }

    pub fn save(&self, path: &Path) -> Result<(), RlError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RlError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], RlError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, RlError> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, RlError> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_tensor<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Array2<f64>, RlError> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(f64::from_le_bytes(read_array(r)?));
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length matches shape"))
}
