//! Binary frame dump.
//!
//! Layout, all little-endian:
//!
//! | field       | type                  | count        |
//! |-------------|-----------------------|--------------|
//! | magic       | bytes `VBJEDFR1`      | 8            |
//! | M, K, T     | u64                   | 3            |
//! | N0          | f64                   | 1            |
//! | pilot mask  | u8 (0 or 1)           | T            |
//! | symbol idx  | u32, slot-major       | T·K          |
//! | H_0, H_1..T | f64 re/im, col-major  | (T+1)·M·K·2  |
//! | X           | f64 re/im, col-major  | K·T·2        |
//! | Y           | f64 re/im, col-major  | M·T·2        |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::channel::ChannelFrame;
use crate::error::{Error, Result};
use crate::numerics::CMatrix;

pub const DUMP_MAGIC: &[u8; 8] = b"VBJEDFR1";

/// Contents of a frame dump.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDump {
    pub n0: f64,
    pub pilot_mask: Vec<bool>,
    pub symbol_idx: Vec<Vec<usize>>,
    pub h0: CMatrix,
    pub h: Vec<CMatrix>,
    pub x: CMatrix,
    pub y: CMatrix,
}

fn write_matrix(w: &mut impl Write, m: &CMatrix) -> std::io::Result<()> {
    for z in m.iter() {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_frame_dump(path: &Path, frame: &ChannelFrame) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    let (m, k, t) = (frame.obs.antennas(), frame.obs.users(), frame.slots());
    let mut body = || -> std::io::Result<()> {
        w.write_all(DUMP_MAGIC)?;
        for v in [m, k, t] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&frame.n0.to_le_bytes())?;
        for &p in frame.pilot_mask() {
            w.write_all(&[u8::from(p)])?;
        }
        for row in &frame.symbol_idx {
            for &s in row {
                w.write_all(&(s as u32).to_le_bytes())?;
            }
        }
        write_matrix(&mut w, &frame.h0)?;
        for h in &frame.h {
            write_matrix(&mut w, h)?;
        }
        write_matrix(&mut w, &frame.x)?;
        write_matrix(&mut w, &frame.obs.y)?;
        w.flush()
    };
    body().map_err(io)
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn u64(&mut self) -> std::io::Result<u64> {
        self.bytes::<8>().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> std::io::Result<f64> {
        self.bytes::<8>().map(f64::from_le_bytes)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> std::io::Result<CMatrix> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let re = self.f64()?;
            let im = self.f64()?;
            data.push(Complex64::new(re, im));
        }
        Ok(CMatrix::from_vec(rows, cols, data))
    }
}

pub fn read_frame_dump(path: &Path) -> Result<FrameDump> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io)?;
    let mut c = Cursor {
        inner: BufReader::new(file),
    };
    let magic = c.bytes::<8>().map_err(io)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "not a frame dump (bad magic)".into(),
        });
    }
    let read = |c: &mut Cursor<BufReader<File>>| -> std::io::Result<FrameDump> {
        let m = c.u64()? as usize;
        let k = c.u64()? as usize;
        let t = c.u64()? as usize;
        let n0 = c.f64()?;
        let mut pilot_mask = Vec::with_capacity(t);
        for _ in 0..t {
            pilot_mask.push(c.bytes::<1>()?[0] != 0);
        }
        let mut symbol_idx = Vec::with_capacity(t);
        for _ in 0..t {
            let mut row = Vec::with_capacity(k);
            for _ in 0..k {
                row.push(u32::from_le_bytes(c.bytes::<4>()?) as usize);
            }
            symbol_idx.push(row);
        }
        let h0 = c.matrix(m, k)?;
        let h = (0..t).map(|_| c.matrix(m, k)).collect::<std::io::Result<_>>()?;
        let x = c.matrix(k, t)?;
        let y = c.matrix(m, t)?;
        Ok(FrameDump {
            n0,
            pilot_mask,
            symbol_idx,
            h0,
            h,
            x,
            y,
        })
    };
    read(&mut c).map_err(io)
}
