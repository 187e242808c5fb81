//! Thinned posterior draw storage with provenance metadata, plus the
//! compact binary container formats used for persistence and export.
//!
//! Chain files: magic `MFBC`, version, a fixed-layout header, the draw
//! payload (little-endian doubles), then a timing section. The payload
//! digest deliberately excludes timings so that two runs with the same seed
//! produce identical digests.
//!
//! Matrix files: magic `MFBM`, version, `rows`/`cols` header, column-major
//! doubles.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{MfbvarError, Result};
use crate::fsv::SvParams;

const CHAIN_MAGIC: &[u8; 4] = b"MFBC";
const MATRIX_MAGIC: &[u8; 4] = b"MFBM";
const FORMAT_VERSION: u32 = 1;

/// Names of the Gibbs blocks in execution order; timing rows follow this
/// layout.
pub const BLOCK_NAMES: [&str; 7] = [
    "sv_params",
    "loadings",
    "factors",
    "regression",
    "latent",
    "indicators",
    "volatilities",
];

/// Run-level metadata stored with every chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainMeta {
    pub n_monthly: usize,
    pub n_quarterly: usize,
    pub lags: usize,
    pub n_factors: usize,
    /// Full sample length.
    pub n_periods: usize,
    /// Effective sample length (periods with a full lag window).
    pub n_effective: usize,
    pub total_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chain_id: u64,
    pub quarter_phase: usize,
    pub sampler: String,
    pub store_latent: bool,
    /// Digest of the run configuration.
    pub config_digest: u64,
}

impl ChainMeta {
    pub fn n_vars(&self) -> usize {
        self.n_monthly + self.n_quarterly
    }

    pub fn expected_draws(&self) -> usize {
        (self.total_iterations - self.burn_in) / self.thin
    }
}

/// One retained draw of every sampled block.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    /// Iteration the draw was taken at (1-based).
    pub iteration: usize,
    /// `n x (np+1)` coefficients, intercept first.
    pub pi: DMatrix<f64>,
    /// `n x r` loadings.
    pub loadings: DMatrix<f64>,
    /// `T_eff x r` factor path.
    pub factors: DMatrix<f64>,
    /// `T_eff x n` idiosyncratic log-volatilities.
    pub idio_logvol: DMatrix<f64>,
    /// `T_eff x r` factor log-volatilities.
    pub factor_logvol: DMatrix<f64>,
    pub idio_sv: Vec<SvParams>,
    pub factor_sv: Vec<SvParams>,
    /// `T x n` latent monthly path, or `0 x 0` when not stored.
    pub latent: DMatrix<f64>,
}

/// Thinned posterior draws plus run metadata and per-block wall-clock.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStore {
    pub meta: ChainMeta,
    pub draws: Vec<Draw>,
    /// Seconds spent in each block, one row per iteration.
    pub block_seconds: Vec<[f64; 7]>,
    /// Mean Metropolis acceptance rate of the persistence steps.
    pub phi_acceptance: f64,
}

impl ChainStore {
    pub fn new(meta: ChainMeta) -> Self {
        Self { meta, draws: Vec::new(), block_seconds: Vec::new(), phi_acceptance: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn has_latent(&self) -> bool {
        self.meta.store_latent && self.draws.iter().all(|d| d.latent.nrows() > 0)
    }

    /// Canonical byte encoding of metadata and draws. Timings are excluded:
    /// they are the one part of a run that is not reproducible.
    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        write_meta(&mut w, &self.meta);
        w.u64(self.draws.len() as u64);
        for d in &self.draws {
            w.u64(d.iteration as u64);
            w.matrix(&d.pi);
            w.matrix(&d.loadings);
            w.matrix(&d.factors);
            w.matrix(&d.idio_logvol);
            w.matrix(&d.factor_logvol);
            w.sv_params(&d.idio_sv);
            w.sv_params(&d.factor_sv);
            w.matrix(&d.latent);
        }
        w.into_bytes()
    }

    /// FNV-1a digest of the payload.
    pub fn payload_digest(&self) -> u64 {
        fnv1a64(&self.payload_bytes())
    }

    /// Full container encoding (payload plus the timing section).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHAIN_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let payload = self.payload_bytes();
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        let mut w = ByteWriter::default();
        w.u64(self.block_seconds.len() as u64);
        for row in &self.block_seconds {
            for v in row {
                w.f64(*v);
            }
        }
        w.f64(self.phi_acceptance);
        out.extend_from_slice(&w.into_bytes());
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(CHAIN_MAGIC)?;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(MfbvarError::Format(format!("unsupported chain version {version}")));
        }
        let _payload_len = r.u64()?;
        let meta = read_meta(&mut r)?;
        let n_draws = r.u64()? as usize;
        let mut draws = Vec::with_capacity(n_draws);
        for _ in 0..n_draws {
            let iteration = r.u64()? as usize;
            let pi = r.matrix()?;
            let loadings = r.matrix()?;
            let factors = r.matrix()?;
            let idio_logvol = r.matrix()?;
            let factor_logvol = r.matrix()?;
            let idio_sv = r.sv_params()?;
            let factor_sv = r.sv_params()?;
            let latent = r.matrix()?;
            draws.push(Draw {
                iteration,
                pi,
                loadings,
                factors,
                idio_logvol,
                factor_logvol,
                idio_sv,
                factor_sv,
                latent,
            });
        }
        let n_timed = r.u64()? as usize;
        let mut block_seconds = Vec::with_capacity(n_timed);
        for _ in 0..n_timed {
            let mut row = [0.0; 7];
            for v in row.iter_mut() {
                *v = r.f64()?;
            }
            block_seconds.push(row);
        }
        let phi_acceptance = r.f64()?;
        Ok(Self { meta, draws, block_seconds, phi_acceptance })
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

fn write_meta(w: &mut ByteWriter, meta: &ChainMeta) {
    w.u64(meta.n_monthly as u64);
    w.u64(meta.n_quarterly as u64);
    w.u64(meta.lags as u64);
    w.u64(meta.n_factors as u64);
    w.u64(meta.n_periods as u64);
    w.u64(meta.n_effective as u64);
    w.u64(meta.total_iterations as u64);
    w.u64(meta.burn_in as u64);
    w.u64(meta.thin as u64);
    w.u64(meta.seed);
    w.u64(meta.chain_id);
    w.u64(meta.quarter_phase as u64);
    w.string(&meta.sampler);
    w.u8(meta.store_latent as u8);
    w.u64(meta.config_digest);
}

fn read_meta(r: &mut ByteReader) -> Result<ChainMeta> {
    Ok(ChainMeta {
        n_monthly: r.u64()? as usize,
        n_quarterly: r.u64()? as usize,
        lags: r.u64()? as usize,
        n_factors: r.u64()? as usize,
        n_periods: r.u64()? as usize,
        n_effective: r.u64()? as usize,
        total_iterations: r.u64()? as usize,
        burn_in: r.u64()? as usize,
        thin: r.u64()? as usize,
        seed: r.u64()?,
        chain_id: r.u64()?,
        quarter_phase: r.u64()? as usize,
        sampler: r.string()?,
        store_latent: r.u8()? != 0,
        config_digest: r.u64()?,
    })
}

/// FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Writes a matrix in the compact export format (magic, version, dims,
/// column-major doubles).
pub fn write_matrix_binary(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = Vec::with_capacity(24 + m.len() * 8);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix_binary`].
pub fn read_matrix_binary(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    r.expect_magic(MATRIX_MAGIC)?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(MfbvarError::Format(format!("unsupported matrix version {version}")));
    }
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(r.f64()?);
    }
    Ok(DMatrix::from_column_slice(rows, cols, &data))
}

#[derive(Default)]
pub(crate) struct ByteWriter {
    bytes: Vec<u8>,
}

impl ByteWriter {
    pub fn u8(&mut self, v: u8) {
        self.bytes.push(v);
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    pub fn string(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.bytes.extend_from_slice(s.as_bytes());
    }

    pub fn matrix(&mut self, m: &DMatrix<f64>) {
        self.u64(m.nrows() as u64);
        self.u64(m.ncols() as u64);
        for v in m.iter() {
            self.f64(*v);
        }
    }

    pub fn sv_params(&mut self, params: &[SvParams]) {
        self.u64(params.len() as u64);
        for p in params {
            self.f64(p.mu);
            self.f64(p.phi);
            self.f64(p.sigma);
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(MfbvarError::Format("unexpected end of file".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn take_bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(MfbvarError::Format("bad magic bytes".into()));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn string(&mut self) -> Result<String> {
        let len = self.u64()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| MfbvarError::Format("invalid string encoding".into()))
    }

    pub fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        if rows.saturating_mul(cols) > 1 << 32 {
            return Err(MfbvarError::Format("matrix dimensions implausibly large".into()));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Ok(DMatrix::from_column_slice(rows, cols, &data))
    }

    pub fn sv_params(&mut self) -> Result<Vec<SvParams>> {
        let len = self.u64()? as usize;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let mu = self.f64()?;
            let phi = self.f64()?;
            let sigma = self.f64()?;
            out.push(SvParams { mu, phi, sigma });
        }
        Ok(out)
    }

}
