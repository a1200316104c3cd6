//! Binary dictionary-state checkpoints.
//!
//! Layout, all little-endian:
//!
//! | field            | type            |
//! |------------------|-----------------|
//! | magic            | `b"RTRSTATE"`   |
//! | version          | `u32`           |
//! | order `N`        | `u32`           |
//! | rank `r`         | `u32`           |
//! | minibatch count  | `u64`           |
//! | extents          | `N × u64`       |
//! | per mode: `L_i`, `A_i`, `D_i` | `f64`, row-major |
//!
//! The size depends only on the minibatch shape and rank.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::state::DictionaryState;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 8] = b"RTRSTATE";
pub const VERSION: u32 = 1;

fn write_matrix(w: &mut impl Write, m: &Matrix) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const K: usize>(r: &mut impl Read) -> Result<[u8; K]> {
    let mut buf = [0u8; K];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let v = f64::from_le_bytes(read_array(r)?);
            if !v.is_finite() {
                return Err(Error::Checkpoint("non-finite matrix entry".into()));
            }
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

impl DictionaryState {
    /// Exact size in bytes of the serialised state.
    pub fn serialized_len(&self) -> usize {
        8 + 4 * 3 + 8 + 8 * self.order() + 8 * self.scalar_count()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.order() as u32).to_le_bytes())?;
        w.write_all(&(self.rank as u32).to_le_bytes())?;
        w.write_all(&self.minibatch_count.to_le_bytes())?;
        for &e in &self.minibatch_shape {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for mode in 0..self.order() {
            write_matrix(w, &self.dictionaries[mode])?;
            write_matrix(w, &self.grams[mode])?;
            write_matrix(w, &self.cross[mode])?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.serialized_len());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let magic: [u8; 8] = read_array(r)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a dictionary checkpoint".into()));
        }
        let version = u32::from_le_bytes(read_array(r)?);
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {VERSION}"
            )));
        }
        let order = u32::from_le_bytes(read_array(r)?) as usize;
        let rank = u32::from_le_bytes(read_array(r)?) as usize;
        let count = u64::from_le_bytes(read_array(r)?);
        if !(2..=64).contains(&order) || rank == 0 {
            return Err(Error::Checkpoint(format!("implausible order {order} / rank {rank}")));
        }
        let shape = (0..order)
            .map(|_| Ok(u64::from_le_bytes(read_array(r)?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let (mut dicts, mut grams, mut cross) = (Vec::new(), Vec::new(), Vec::new());
        for &ext in &shape {
            dicts.push(read_matrix(r, ext, rank)?);
            grams.push(read_matrix(r, rank, rank)?);
            cross.push(read_matrix(r, ext, rank)?);
        }
        DictionaryState::from_parts(shape, rank, count, dicts, grams, cross)
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Loads a checkpoint and checks it against the expected minibatch shape and rank.
    pub fn load_matching(path: &Path, minibatch_shape: &[usize], rank: usize) -> Result<Self> {
        let st = Self::load(path)?;
        if st.minibatch_shape != minibatch_shape || st.rank != rank {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds shape {:?} rank {}, expected shape {minibatch_shape:?} rank {rank}",
                st.minibatch_shape, st.rank
            )));
        }
        Ok(st)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{init_state, RunConfig};

    fn state() -> DictionaryState {
        init_state(
            &[4, 3, 2],
            &RunConfig {
                rank: 2,
                seed: 42,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let st = state();
        let bytes = st.to_bytes();
        assert_eq!(bytes.len(), st.serialized_len());
        assert_eq!(&bytes[..8], MAGIC);
        let back = DictionaryState::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, st);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let bytes = state().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(DictionaryState::read_from(&mut bad.as_slice()).is_err());
        let mut bad = bytes.clone();
        bad[8] = 2;
        let err = DictionaryState::read_from(&mut bad.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version"));
        assert!(DictionaryState::read_from(&mut &bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn load_matching_checks_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        let st = state();
        st.save(&path).unwrap();
        assert_eq!(DictionaryState::load_matching(&path, &[4, 3, 2], 2).unwrap(), st);
        assert!(DictionaryState::load_matching(&path, &[4, 3, 3], 2).is_err());
        assert!(DictionaryState::load_matching(&path, &[4, 3, 2], 3).is_err());
    }
}
