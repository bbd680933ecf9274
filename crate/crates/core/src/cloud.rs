//! Point clouds in R^d with CSV and binary serialization.

use std::io::{self, BufRead, Read, Write};

use thiserror::Error;

const MAGIC: &[u8; 8] = b"SIMDIMPC";

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed point cloud: {0}")]
    Format(String),
}

/// `count` points of dimension `d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    d: usize,
    data: Vec<f64>,
    pub seed: u64,
    /// Human-readable stop rule used to generate the samples.
    pub stop: String,
}

impl PointCloud {
    pub fn new(d: usize, data: Vec<f64>) -> Self {
        assert!(
            d > 0 && data.len().is_multiple_of(d),
            "data length must be a multiple of d"
        );
        Self {
            d,
            data,
            seed: 0,
            stop: String::new(),
        }
    }

    pub fn with_meta(mut self, seed: u64, stop: impl Into<String>) -> Self {
        self.seed = seed;
        self.stop = stop.into();
        self
    }

    pub fn from_points(points: &[Vec<f64>]) -> Self {
        let d = points.first().map_or(1, Vec::len);
        Self::new(d, points.iter().flatten().copied().collect())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.d)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Applies `f` to each point in place.
    pub fn map_points(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> PointCloud {
        let mut out = vec![0.0; self.data.len()];
        for (src, dst) in self.data.chunks(self.d).zip(out.chunks_mut(self.d)) {
            f(src, dst);
        }
        PointCloud {
            d: self.d,
            data: out,
            seed: self.seed,
            stop: self.stop.clone(),
        }
    }

    pub fn translated(&self, v: &[f64]) -> PointCloud {
        self.map_points(|p, q| {
            for k in 0..p.len() {
                q[k] = p[k] + v[k];
            }
        })
    }

    pub fn scaled(&self, c: f64) -> PointCloud {
        self.map_points(|p, q| {
            for k in 0..p.len() {
                q[k] = c * p[k];
            }
        })
    }

    /// Contiguous subsample of points `range`.
    pub fn slice(&self, start: usize, end: usize) -> PointCloud {
        PointCloud::new(self.d, self.data[start * self.d..end * self.d].to_vec())
    }

    /// Euclidean norms of all points.
    pub fn norms(&self) -> Vec<f64> {
        self.points()
            .map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for p in self.points() {
            for k in 0..self.d {
                m[k] += p[k];
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|x| *x /= n);
        m
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), CloudError> {
        writeln!(
            w,
            "# d={} count={} seed={} stop={}",
            self.d,
            self.len(),
            self.seed,
            self.stop
        )?;
        for p in self.points() {
            let row: Vec<String> = p.iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, CloudError> {
        let mut d = None;
        let mut seed = 0;
        let mut stop = String::new();
        let mut data = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if let Some(header) = line.strip_prefix('#') {
                let header = header.trim();
                let (fields, stop_part) = header.split_once("stop=").unwrap_or((header, ""));
                stop = stop_part.to_string();
                for kv in fields.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("d", v)) => d = Some(v.parse().map_err(|_| CloudError::Format(kv.into()))?),
                        Some(("seed", v)) => seed = v.parse().map_err(|_| CloudError::Format(kv.into()))?,
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = line.split(',').map(|x| x.trim().parse::<f64>()).collect();
            let row = row.map_err(|_| CloudError::Format(line.to_string()))?;
            match d {
                None => d = Some(row.len()),
                Some(k) if k != row.len() => {
                    return Err(CloudError::Format(format!(
                        "row has {} values, expected {k}",
                        row.len()
                    )))
                }
                _ => {}
            }
            data.extend(row);
        }
        let d = d.ok_or_else(|| CloudError::Format("empty file".into()))?;
        Ok(PointCloud::new(d, data).with_meta(seed, stop))
    }

    /// Magic, `u32` d, `u64` count, `u64` seed, `u32` stop length, stop bytes,
    /// then little-endian `f64` coordinates.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), CloudError> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.d as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.stop.len() as u32).to_le_bytes())?;
        w.write_all(self.stop.as_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, CloudError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CloudError::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        r.read_exact(&mut b4)?;
        let mut stop = vec![0u8; u32::from_le_bytes(b4) as usize];
        r.read_exact(&mut stop)?;
        let stop = String::from_utf8(stop).map_err(|_| CloudError::Format("stop rule is not utf-8".into()))?;
        if d == 0 {
            return Err(CloudError::Format("d = 0".into()));
        }
        let mut data = Vec::with_capacity(d * count);
        for _ in 0..d * count {
            r.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        Ok(PointCloud::new(d, data).with_meta(seed, stop))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PointCloud {
        PointCloud::new(2, vec![0.1, -2.5, 1.0 / 3.0, 7.0, f64::MIN_POSITIVE, 1e300]).with_meta(42, "kappa=1e-9")
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = PointCloud::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn binary_round_trip_is_lossless() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_binary(&mut buf).unwrap();
        assert_eq!(PointCloud::read_binary(buf.as_slice()).unwrap(), c);
        buf[0] = b'X';
        assert!(PointCloud::read_binary(buf.as_slice()).is_err());
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let text = "1,2\n3\n";
        assert!(PointCloud::read_csv(text.as_bytes()).is_err());
    }
}
