//! On-disk eigenstate cache.
//!
//! One file per `(frame, parameter hash)`. Layout, all little-endian:
//!
//! ```text
//! magic      8 bytes  "ATOMEIG\0"
//! version    u32
//! frame      u16 length + UTF-8 tag
//! key hash   32 bytes (SHA-256 of the JSON cache key)
//! ndim       u32, then per axis: extent f64, points u64
//! nstates    u32, then per state: energy f64, parity i8, exchange i8,
//!            residual f64, iterations u64
//! amplitudes nstates × Π points × f64
//! checksum   32 bytes (SHA-256 of everything above)
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::eigensolve::{StateDiagnostics, WaveFn};
use crate::error::{Error, Result};
use crate::grid::{make_grid, Grid1D};
use crate::hamiltonians::Frame;
use crate::potentials::ModelParams;

pub const MAGIC: &[u8; 8] = b"ATOMEIG\0";
pub const VERSION: u32 = 1;
/// Environment variable naming the cache root.
pub const CACHE_ENV: &str = "ATOMION_CACHE";
pub const EXTENSION: &str = "eig";

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Everything that determines a set of eigenstates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheKey<S: Serialize> {
    pub format: u32,
    pub frame: Frame,
    pub params: ModelParams,
    pub grids: Vec<Grid1D>,
    pub states: usize,
    pub solver: S,
}

impl<S: Serialize> CacheKey<S> {
    pub fn new(frame: Frame, params: ModelParams, grids: Vec<Grid1D>, states: usize, solver: S) -> Self {
        CacheKey {
            format: VERSION,
            frame,
            params,
            grids,
            states,
            solver,
        }
    }

    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("cache key serialises");
        Sha256::digest(&json).into()
    }

    pub fn hash(&self) -> String {
        hex(&self.digest())
    }
}

/// Eigenstates of one frame and parameter point, lowest first.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSet {
    pub frame: Frame,
    pub grids: Vec<Grid1D>,
    pub energies: Vec<f64>,
    pub diagnostics: Vec<StateDiagnostics>,
    pub states: Vec<WaveFn>,
}

/// Header fields of a cache file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheEntry {
    pub path: PathBuf,
    pub frame: Frame,
    pub hash: String,
    pub grids: Vec<Grid1D>,
    pub energies: Vec<f64>,
    pub bytes: u64,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Cache("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
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

    fn i8(&mut self) -> Result<i8> {
        Ok(self.take(1)?[0] as i8)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

struct Header {
    frame: Frame,
    digest: [u8; 32],
    grids: Vec<Grid1D>,
    energies: Vec<f64>,
    diagnostics: Vec<StateDiagnostics>,
    parity: Vec<i8>,
    exchange: Vec<i8>,
}

fn read_header(r: &mut Reader) -> Result<Header> {
    if r.take(8)? != MAGIC {
        return Err(Error::Cache("not an eigenstate cache file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Cache(format!(
            "unsupported cache version {version} (expected {VERSION})"
        )));
    }
    let len = r.u16()? as usize;
    let tag = std::str::from_utf8(r.take(len)?)
        .map_err(|_| Error::Cache("frame tag is not UTF-8".into()))?;
    let frame =
        Frame::from_tag(tag).ok_or_else(|| Error::Cache(format!("unknown frame `{tag}`")))?;
    let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
    let ndim = r.u32()? as usize;
    if ndim == 0 || ndim > 3 {
        return Err(Error::Cache(format!("bad dimension {ndim}")));
    }
    let mut grids = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let extent = r.f64()?;
        let points = r.u64()? as usize;
        grids.push(make_grid(extent, points).map_err(|e| Error::Cache(e.to_string()))?);
    }
    let nstates = r.u32()? as usize;
    let mut h = Header {
        frame,
        digest,
        grids,
        energies: Vec::with_capacity(nstates),
        diagnostics: Vec::with_capacity(nstates),
        parity: Vec::with_capacity(nstates),
        exchange: Vec::with_capacity(nstates),
    };
    for _ in 0..nstates {
        h.energies.push(r.f64()?);
        h.parity.push(r.i8()?);
        h.exchange.push(r.i8()?);
        let residual = r.f64()?;
        let iterations = r.u64()? as usize;
        h.diagnostics.push(StateDiagnostics {
            residual,
            iterations,
        });
    }
    Ok(h)
}

/// Serialises a state set under the key digest.
pub fn encode(set: &StateSet, digest: &[u8; 32]) -> Result<Vec<u8>> {
    let size: usize = set.grids.iter().map(|g| g.len()).product();
    let n = set.states.len();
    if set.energies.len() != n || set.diagnostics.len() != n {
        return Err(Error::Cache("inconsistent state set".into()));
    }
    let mut out = Vec::with_capacity(128 + n * (size * 8 + 32));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let tag = set.frame.tag().as_bytes();
    out.extend_from_slice(&(tag.len() as u16).to_le_bytes());
    out.extend_from_slice(tag);
    out.extend_from_slice(digest);
    out.extend_from_slice(&(set.grids.len() as u32).to_le_bytes());
    for g in &set.grids {
        out.extend_from_slice(&g.extent().to_le_bytes());
        out.extend_from_slice(&(g.len() as u64).to_le_bytes());
    }
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for ((e, d), s) in set.energies.iter().zip(&set.diagnostics).zip(&set.states) {
        out.extend_from_slice(&e.to_le_bytes());
        out.push(s.parity as u8);
        out.push(s.exchange as u8);
        out.extend_from_slice(&d.residual.to_le_bytes());
        out.extend_from_slice(&(d.iterations as u64).to_le_bytes());
    }
    for s in &set.states {
        if s.amplitudes.len() != size || s.grids != set.grids || s.frame != set.frame {
            return Err(Error::Cache("state does not match the set's grids".into()));
        }
        for a in &s.amplitudes {
            out.extend_from_slice(&a.to_le_bytes());
        }
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    Ok(out)
}

/// Parses a cache file, checking its checksum and, if given, the key digest.
pub fn decode(bytes: &[u8], expect: Option<&[u8; 32]>) -> Result<StateSet> {
    if bytes.len() < 32 {
        return Err(Error::Cache("truncated file".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::Cache("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    let h = read_header(&mut r)?;
    if let Some(d) = expect {
        if *d != h.digest {
            return Err(Error::Cache("parameter hash mismatch".into()));
        }
    }
    let size: usize = h.grids.iter().map(|g| g.len()).product();
    let mut states = Vec::with_capacity(h.energies.len());
    for k in 0..h.energies.len() {
        let raw = r.take(size * 8)?;
        let amplitudes = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        states.push(WaveFn {
            frame: h.frame,
            grids: h.grids.clone(),
            amplitudes,
            exchange: h.exchange[k],
            parity: h.parity[k],
        });
    }
    if r.pos != body.len() {
        return Err(Error::Cache("trailing bytes".into()));
    }
    Ok(StateSet {
        frame: h.frame,
        grids: h.grids,
        energies: h.energies,
        diagnostics: h.diagnostics,
        states,
    })
}

/// A directory of cache files.
#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Cache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, frame: Frame, hash: &str) -> PathBuf {
        self.root
            .join(format!("{}-{}.{EXTENSION}", frame.tag(), &hash[..16]))
    }

    /// The cached set for `key`, or `None` if absent. Unreadable or stale
    /// files are reported as errors so the caller can recompute.
    pub fn load<S: Serialize>(&self, key: &CacheKey<S>) -> Result<Option<StateSet>> {
        let path = self.path_for(key.frame, &key.hash());
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        decode(&bytes, Some(&key.digest()))
            .map(Some)
            .map_err(|e| Error::Cache(format!("{}: {e}", path.display())))
    }

    /// Writes through a temporary file so readers never see a partial file.
    pub fn store<S: Serialize>(&self, key: &CacheKey<S>, set: &StateSet) -> Result<PathBuf> {
        fs::create_dir_all(&self.root)?;
        let path = self.path_for(key.frame, &key.hash());
        let bytes = encode(set, &key.digest())?;
        let tmp = path.with_extension(format!("{EXTENSION}.tmp{}", std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    /// Headers of every cache file, sorted by file name.
    pub fn list(&self) -> Result<Vec<CacheEntry>> {
        let dir = match fs::read_dir(&self.root) {
            Ok(d) => d,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for entry in dir {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(EXTENSION) {
                continue;
            }
            let bytes = fs::read(&path)?;
            let mut r = Reader {
                buf: &bytes,
                pos: 0,
            };
            let h = read_header(&mut r)
                .map_err(|e| Error::Cache(format!("{}: {e}", path.display())))?;
            out.push(CacheEntry {
                frame: h.frame,
                hash: hex(&h.digest),
                grids: h.grids,
                energies: h.energies,
                bytes: bytes.len() as u64,
                path,
            });
        }
        out.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(out)
    }

    /// Deletes the entries whose hash starts with one of `prefixes`, or all
    /// entries if `prefixes` is empty. Returns the removed paths.
    pub fn remove(&self, prefixes: &[String]) -> Result<Vec<PathBuf>> {
        let mut removed = Vec::new();
        for e in self.list()? {
            if prefixes.is_empty() || prefixes.iter().any(|p| e.hash.starts_with(p.as_str())) {
                fs::remove_file(&e.path)?;
                removed.push(e.path);
            }
        }
        Ok(removed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::default_params;

    fn sample() -> StateSet {
        let grids = vec![make_grid(2.0, 8).unwrap(), make_grid(2.0, 8).unwrap()];
        let states: Vec<WaveFn> = (0..2)
            .map(|k| WaveFn {
                frame: Frame::CmfRelative,
                grids: grids.clone(),
                amplitudes: (0..64).map(|i| (i as f64 * 0.37 + k as f64).sin()).collect(),
                exchange: 1,
                parity: if k == 0 { 1 } else { -1 },
            })
            .collect();
        StateSet {
            frame: Frame::CmfRelative,
            grids,
            energies: vec![-1.5, 2.25],
            diagnostics: vec![
                StateDiagnostics {
                    residual: 1e-10,
                    iterations: 17,
                };
                2
            ],
            states,
        }
    }

    fn key(g: f64) -> CacheKey<u32> {
        CacheKey::new(
            Frame::CmfRelative,
            default_params().with_g(g),
            vec![make_grid(2.0, 8).unwrap(); 2],
            2,
            7,
        )
    }

    #[test]
    fn encode_decode_round_trip() {
        let set = sample();
        let k = key(1.0);
        let bytes = encode(&set, &k.digest()).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), VERSION);
        assert_eq!(decode(&bytes, Some(&k.digest())).unwrap(), set);
        assert!(decode(&bytes, Some(&key(2.0).digest())).is_err());
        let mut bad = bytes.clone();
        bad[40] ^= 1;
        assert!(decode(&bad, None).unwrap_err().to_string().contains("checksum"));
        assert!(decode(&bytes[..bytes.len() - 1], None).is_err());
    }

    #[test]
    fn version_is_checked() {
        let set = sample();
        let mut bytes = encode(&set, &key(0.0).digest()).unwrap();
        bytes[8] = 99;
        let n = bytes.len();
        let sum = Sha256::digest(&bytes[..n - 32]);
        bytes[n - 32..].copy_from_slice(&sum);
        assert!(decode(&bytes, None).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn keys_separate_parameters() {
        assert_ne!(key(1.0).hash(), key(1.0 + 1e-15).hash());
        assert_eq!(key(1.0).hash(), key(1.0).hash());
        assert_eq!(key(1.0).hash().len(), 64);
    }

    #[test]
    fn directory_operations() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(dir.path().join("c"));
        assert!(cache.list().unwrap().is_empty());
        let (k1, k2) = (key(1.0), key(2.0));
        assert!(cache.load(&k1).unwrap().is_none());
        cache.store(&k1, &sample()).unwrap();
        cache.store(&k2, &sample()).unwrap();
        assert_eq!(cache.load(&k1).unwrap().unwrap(), sample());
        let ls = cache.list().unwrap();
        assert_eq!(ls.len(), 2);
        assert_eq!(ls[0].energies, vec![-1.5, 2.25]);
        let removed = cache.remove(&[k1.hash()[..10].to_string()]).unwrap();
        assert_eq!(removed.len(), 1);
        assert!(cache.load(&k1).unwrap().is_none());
        fs::write(cache.path_for(k2.frame, &k2.hash()), b"garbage").unwrap();
        assert!(cache.load(&k2).is_err());
        assert!(cache.list().is_err());
        fs::remove_file(cache.path_for(k2.frame, &k2.hash())).unwrap();
        assert!(cache.remove(&[]).unwrap().is_empty());
    }
}
