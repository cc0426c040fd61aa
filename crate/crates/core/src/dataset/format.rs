//! Little-endian binary corpus format.
//!
//! ```text
//! header   magic "CTPR" | version u16 | reserved u16 | count u64 | seq_len u32
//!          | base_seed u64 | sha256(config) [32] | config_len u32 | config TOML
//! offsets  (count + 1) x u64 absolute record offsets; the last is the file size
//! records  see `encode_record`
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::PairedSample;
use crate::error::{Error, Result};
use crate::prior::PriorConfig;
use crate::scm::{
    Activation, CausalModel, FamilyTag, InterventionAction, InterventionKind, InterventionSpec, LaggedDag, Mechanism,
    NoiseFamily, NoiseSpec, Parent, Profile, QueryTuple, Regime, RegimeSwitchingTscm, Series, Tscm,
};

pub const MAGIC: &[u8; 4] = b"CTPR";
pub const FORMAT_VERSION: u16 = 1;

const FIXED_HEADER: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusHeader {
    pub count: u64,
    pub seq_len: u32,
    pub base_seed: u64,
    pub config_toml: String,
}

impl CorpusHeader {
    pub fn config_digest(&self) -> [u8; 32] {
        Sha256::digest(self.config_toml.as_bytes()).into()
    }

    fn table_offset(&self) -> u64 {
        (FIXED_HEADER + self.config_toml.len()) as u64
    }

    fn records_offset(&self) -> u64 {
        self.table_offset() + 8 * (self.count + 1)
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FIXED_HEADER + self.config_toml.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.count.to_le_bytes());
        out.extend_from_slice(&self.seq_len.to_le_bytes());
        out.extend_from_slice(&self.base_seed.to_le_bytes());
        out.extend_from_slice(&self.config_digest());
        out.extend_from_slice(&(self.config_toml.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_toml.as_bytes());
        out
    }
}

/// Streams records to a temporary file next to the destination and renames
/// it into place on `finish`. Dropping an unfinished writer removes the
/// temporary file.
pub struct CorpusWriter {
    out: BufWriter<File>,
    tmp: PathBuf,
    dest: PathBuf,
    header: CorpusHeader,
    offsets: Vec<u64>,
    pos: u64,
    finished: bool,
}

impl CorpusWriter {
    pub fn create(path: &Path, header: CorpusHeader) -> Result<Self> {
        let name = path
            .file_name()
            .ok_or_else(|| Error::input(format!("not a file path: {}", path.display())))?;
        let tmp = path.with_file_name(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
        let file = File::create(&tmp)?;
        let mut writer = CorpusWriter {
            out: BufWriter::new(file),
            tmp,
            dest: path.to_path_buf(),
            offsets: Vec::with_capacity(header.count as usize + 1),
            pos: header.records_offset(),
            header,
            finished: false,
        };
        let head = writer.header.encode();
        writer.out.write_all(&head)?;
        writer.out.write_all(&vec![0u8; 8 * (writer.header.count as usize + 1)])?;
        Ok(writer)
    }

    pub fn append(&mut self, sample: &PairedSample) -> Result<()> {
        self.append_encoded(&sample.encode())
    }

    pub fn append_encoded(&mut self, record: &[u8]) -> Result<()> {
        if self.offsets.len() as u64 == self.header.count {
            return Err(Error::input(format!("corpus declared {} records", self.header.count)));
        }
        self.offsets.push(self.pos);
        self.out.write_all(record)?;
        self.pos += record.len() as u64;
        Ok(())
    }

    /// Writes the offset table and moves the file into place. Returns the
    /// file size in bytes.
    pub fn finish(mut self) -> Result<u64> {
        if self.offsets.len() as u64 != self.header.count {
            return Err(Error::input(format!(
                "corpus declared {} records but {} were written",
                self.header.count,
                self.offsets.len()
            )));
        }
        self.offsets.push(self.pos);
        let mut table = Vec::with_capacity(8 * self.offsets.len());
        for off in &self.offsets {
            table.extend_from_slice(&off.to_le_bytes());
        }
        self.out.seek(SeekFrom::Start(self.header.table_offset()))?;
        self.out.write_all(&table)?;
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        fs::rename(&self.tmp, &self.dest)?;
        self.finished = true;
        Ok(self.pos)
    }
}

impl Drop for CorpusWriter {
    fn drop(&mut self) {
        if !self.finished {
            let _ = fs::remove_file(&self.tmp);
        }
    }
}

/// Random-access reader. Records are read with positional reads, so one
/// reader can be shared across threads.
#[derive(Debug)]
pub struct CorpusReader {
    file: File,
    header: CorpusHeader,
    offsets: Vec<u64>,
}

impl CorpusReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let file_len = file.metadata()?.len();
        let read = |offset: u64, len: usize| -> Result<Vec<u8>> {
            if offset + len as u64 > file_len {
                return Err(Error::format(file_len, format!("truncated header: need {} bytes", offset + len as u64)));
            }
            let mut buf = vec![0u8; len];
            file.read_exact_at(&mut buf, offset)?;
            Ok(buf)
        };
        let head = read(0, FIXED_HEADER)?;
        let mut c = Cursor::new(&head, 0);
        if c.bytes(4)? != MAGIC {
            return Err(Error::format(0, "bad magic"));
        }
        let version = c.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        c.u16()?;
        let count = c.u64()?;
        let seq_len = c.u32()?;
        let base_seed = c.u64()?;
        let digest: [u8; 32] = c.bytes(32)?.try_into().expect("32 bytes");
        let config_len = c.u32()? as usize;
        let config = read(FIXED_HEADER as u64, config_len)?;
        if Sha256::digest(&config).as_slice() != digest {
            return Err(Error::format(28, "config digest mismatch"));
        }
        let config_toml = String::from_utf8(config).map_err(|_| Error::format(FIXED_HEADER as u64, "config is not UTF-8"))?;
        let header = CorpusHeader {
            count,
            seq_len,
            base_seed,
            config_toml,
        };

        let table_at = header.table_offset();
        let table_len = count
            .checked_add(1)
            .and_then(|n| n.checked_mul(8))
            .filter(|&n| table_at + n <= file_len)
            .ok_or_else(|| Error::format(file_len, format!("truncated offset table for {count} records")))?;
        let table = read(table_at, table_len as usize)?;
        let offsets: Vec<u64> = table.chunks_exact(8).map(|b| u64::from_le_bytes(b.try_into().unwrap())).collect();
        if offsets[0] != header.records_offset() {
            return Err(Error::format(table_at, "offset table does not start at the first record"));
        }
        if let Some(i) = offsets.windows(2).position(|w| w[0] > w[1]) {
            return Err(Error::format(table_at + 8 * (i as u64 + 1), "offset table is not monotone"));
        }
        let expected = offsets[count as usize];
        if expected != file_len {
            return Err(Error::format(
                file_len.min(expected),
                format!("file is {file_len} bytes but the offset table expects {expected}"),
            ));
        }
        Ok(CorpusReader { file, header, offsets })
    }

    pub fn header(&self) -> &CorpusHeader {
        &self.header
    }

    /// Prior configuration embedded in the header.
    pub fn config(&self) -> Result<PriorConfig> {
        PriorConfig::from_toml(&self.header.config_toml)
    }

    pub fn len(&self) -> u64 {
        self.header.count
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    pub fn record_offset(&self, index: u64) -> u64 {
        self.offsets[index as usize]
    }

    pub fn read_raw(&self, index: u64) -> Result<Vec<u8>> {
        if index >= self.header.count {
            return Err(Error::input(format!("record {index} out of range for {} records", self.header.count)));
        }
        let (start, end) = (self.offsets[index as usize], self.offsets[index as usize + 1]);
        let mut buf = vec![0u8; (end - start) as usize];
        self.file.read_exact_at(&mut buf, start)?;
        Ok(buf)
    }

    pub fn read_record(&self, index: u64) -> Result<PairedSample> {
        let raw = self.read_raw(index)?;
        let sample = decode_record(&raw, self.offsets[index as usize])?;
        if sample.seq_len() != self.header.seq_len as usize {
            return Err(Error::format(
                self.offsets[index as usize] + 4,
                format!("record length {} differs from header {}", sample.seq_len(), self.header.seq_len),
            ));
        }
        Ok(sample)
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<PairedSample>> + '_ {
        (0..self.len()).map(move |i| self.read_record(i))
    }
}

/// Appends the record encoding of `s` to `out`.
///
/// ```text
/// n_vars u16 | max_lag u16 | seq_len u16 | family u8 | kind u8 | n_regimes u8
/// | has_edge_prob u8 | edge_prob f64
/// per regime: topo_order u16 x N | (K+1) adjacency bitsets of ceil(N*N/8)
///             bytes, bit from*N+to | per variable: n_parents u16, then
///             (var u16, lag u16, activation u8, weight f32) x n_parents, bias f32
/// transition f64 x R*R (if R > 1) | noise (family u8, scale f32) x N
/// | regime path u8 x T (if R > 1) | obs f32 x T*N | int f32 x T*N
/// | n_targets u16, targets u16... | n_times u16, times u16...
/// | hard: value f32 | soft: shift f32 x n_targets
/// | time-varying: profile u8, a f32, b f32, period u16, trajectory f32 x n_times
/// | query var u16, time u16, target f32 | seed u64
/// ```
pub fn encode_record(s: &PairedSample, out: &mut Vec<u8>) {
    let m = &s.model;
    let n = m.n_vars();
    let r = m.n_regimes();
    let put_u16 = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u16).to_le_bytes());
    let put_f32 = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());

    put_u16(out, n);
    put_u16(out, m.max_lag());
    put_u16(out, s.seq_len());
    out.push(m.family().code());
    out.push(s.intervention.kind().code());
    out.push(r as u8);
    out.push(u8::from(m.edge_prob().is_some()));
    out.extend_from_slice(&m.edge_prob().unwrap_or(0.0).to_le_bytes());

    for regime in 0..r {
        let g = m.regime_graph(regime);
        for &v in &g.topo_order {
            put_u16(out, v);
        }
        for lag in &g.adjacency {
            let mut bits = vec![0u8; (n * n).div_ceil(8)];
            for (b, _) in lag.iter().enumerate().filter(|(_, &e)| e) {
                bits[b / 8] |= 1 << (b % 8);
            }
            out.extend_from_slice(&bits);
        }
        for mech in m.regime_mechanisms(regime) {
            put_u16(out, mech.parents.len());
            for ((p, w), a) in mech.parents.iter().zip(&mech.weights).zip(&mech.activations) {
                put_u16(out, p.var);
                put_u16(out, p.lag);
                out.push(a.code());
                put_f32(out, *w);
            }
            put_f32(out, mech.bias);
        }
    }
    if let Some(tr) = m.transition() {
        for v in tr.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for ns in m.noise() {
        out.push(ns.family.code());
        put_f32(out, ns.scale);
    }
    if let Some(path) = s.regime_path() {
        out.extend_from_slice(path);
    }
    for &v in s.obs.values.iter().chain(&s.int.values) {
        put_f32(out, v);
    }

    let spec = &s.intervention;
    put_u16(out, spec.targets.len());
    spec.targets.iter().for_each(|&v| put_u16(out, v));
    put_u16(out, spec.times.len());
    spec.times.iter().for_each(|&t| put_u16(out, t));
    match &spec.action {
        InterventionAction::Hard { value } => put_f32(out, *value),
        InterventionAction::Soft { shifts } => shifts.iter().for_each(|&d| put_f32(out, d)),
        InterventionAction::TimeVarying { profile, trajectory } => {
            out.push(profile.code());
            let (a, b, period) = match *profile {
                Profile::Step { level } => (level, 0.0, 0),
                Profile::Ramp { start, end } => (start, end, 0),
                Profile::Sinusoidal { amplitude, period } => (amplitude, 0.0, period as usize),
                Profile::Sampled => (0.0, 0.0, 0),
            };
            put_f32(out, a);
            put_f32(out, b);
            put_u16(out, period);
            trajectory.iter().for_each(|&c| put_f32(out, c));
        }
    }
    put_u16(out, s.query.var);
    put_u16(out, s.query.time);
    put_f32(out, s.query.target);
    out.extend_from_slice(&s.seed.to_le_bytes());
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8], base: u64) -> Self {
        Cursor { data, pos: 0, base }
    }

    fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::format(self.offset(), msg))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return self.fail("unexpected end of record");
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const W: usize>(&mut self) -> Result<[u8; W]> {
        Ok(self.bytes(W)?.try_into().expect("exact width"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn usize16(&mut self) -> Result<usize> {
        self.u16().map(usize::from)
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f64> {
        self.array().map(|b| f32::from_le_bytes(b) as f64)
    }

    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }

    /// A u16 index that must be below `bound`.
    fn index(&mut self, bound: usize, what: &str) -> Result<usize> {
        let at = self.offset();
        let v = self.usize16()?;
        if v >= bound {
            return Err(Error::format(at, format!("{what} {v} out of range (< {bound})")));
        }
        Ok(v)
    }
}

/// Decodes one record. `base` is the record's file offset, used in errors.
pub fn decode_record(data: &[u8], base: u64) -> Result<PairedSample> {
    let mut c = Cursor::new(data, base);
    let n = c.usize16()?;
    let k = c.usize16()?;
    let len = c.usize16()?;
    if n == 0 || len == 0 {
        return c.fail("empty model or series");
    }
    let family_at = c.offset();
    let family = FamilyTag::from_code(c.u8()?).ok_or_else(|| Error::format(family_at, "unknown family code"))?;
    let kind_at = c.offset();
    let kind = InterventionKind::from_code(c.u8()?).ok_or_else(|| Error::format(kind_at, "unknown intervention kind"))?;
    let r = c.u8()? as usize;
    if r == 0 {
        return c.fail("zero regimes");
    }
    let has_p = c.u8()?;
    let p = c.f64()?;
    let edge_prob = (has_p != 0).then_some(p);

    let mut regimes = Vec::with_capacity(r);
    for _ in 0..r {
        let mut graph = LaggedDag::empty(n, k);
        graph.topo_order = (0..n).map(|_| c.index(n, "topological order entry")).collect::<Result<_>>()?;
        for lag in 0..=k {
            let bits = c.bytes((n * n).div_ceil(8))?;
            for b in 0..n * n {
                graph.adjacency[lag][b] = bits[b / 8] >> (b % 8) & 1 == 1;
            }
        }
        let mut mechanisms = Vec::with_capacity(n);
        for _ in 0..n {
            let np = c.usize16()?;
            let mut mech = Mechanism::constant(0.0);
            for _ in 0..np {
                let var = c.index(n, "parent variable")?;
                let lag = c.index(k + 1, "parent lag")?;
                let act_at = c.offset();
                let act = Activation::from_code(c.u8()?).ok_or_else(|| Error::format(act_at, "unknown activation"))?;
                mech.parents.push(Parent { var, lag });
                mech.activations.push(act);
                mech.weights.push(c.f32()?);
            }
            mech.bias = c.f32()?;
            mechanisms.push(mech);
        }
        regimes.push(Regime { graph, mechanisms });
    }
    let transition = if r > 1 {
        Some((0..r).map(|_| (0..r).map(|_| c.f64()).collect::<Result<Vec<_>>>()).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let mut noise = Vec::with_capacity(n);
    for _ in 0..n {
        let at = c.offset();
        let family = NoiseFamily::from_code(c.u8()?).ok_or_else(|| Error::format(at, "unknown noise family"))?;
        noise.push(NoiseSpec { family, scale: c.f32()? });
    }
    let regime_path = if r > 1 {
        let at = c.offset();
        let path = c.bytes(len)?.to_vec();
        if path.iter().any(|&x| x as usize >= r) {
            return Err(Error::format(at, "regime path entry out of range"));
        }
        Some(path)
    } else {
        None
    };
    let mut series = || -> Result<Series> {
        Ok(Series {
            n_vars: n,
            values: (0..len * n).map(|_| c.f32()).collect::<Result<_>>()?,
            regime_path: regime_path.clone(),
        })
    };
    let obs = series()?;
    let int = series()?;

    let spec_at = c.offset();
    let n_targets = c.usize16()?;
    let targets: Vec<usize> = (0..n_targets).map(|_| c.index(n, "target")).collect::<Result<_>>()?;
    let n_times = c.usize16()?;
    let times: Vec<usize> = (0..n_times).map(|_| c.index(len, "intervention time")).collect::<Result<_>>()?;
    let action = match kind {
        InterventionKind::Hard => InterventionAction::Hard { value: c.f32()? },
        InterventionKind::Soft => InterventionAction::Soft {
            shifts: (0..n_targets).map(|_| c.f32()).collect::<Result<_>>()?,
        },
        InterventionKind::TimeVarying => {
            let at = c.offset();
            let code = c.u8()?;
            let a = c.f32()?;
            let b = c.f32()?;
            let period = c.u16()? as u32;
            let profile = match code {
                0 => Profile::Step { level: a },
                1 => Profile::Ramp { start: a, end: b },
                2 => Profile::Sinusoidal { amplitude: a, period },
                3 => Profile::Sampled,
                _ => return Err(Error::format(at, "unknown profile shape")),
            };
            InterventionAction::TimeVarying {
                profile,
                trajectory: (0..n_times).map(|_| c.f32()).collect::<Result<_>>()?,
            }
        }
    };
    let intervention = InterventionSpec { targets, times, action };
    intervention
        .check(n, len)
        .map_err(|e| Error::format(spec_at, format!("bad intervention: {e}")))?;
    let query = QueryTuple {
        var: c.index(n, "query variable")?,
        time: c.index(len, "query time")?,
        target: c.f32()?,
    };
    let seed = c.u64()?;
    if c.pos != data.len() {
        return c.fail(format!("{} trailing bytes", data.len() - c.pos));
    }

    let model = match transition {
        None => {
            let Regime { graph, mechanisms } = regimes.pop().expect("one regime");
            CausalModel::Single(Tscm {
                graph,
                mechanisms,
                noise,
                family,
                edge_prob,
            })
        }
        Some(transition) => {
            if family != FamilyTag::RegimeSwitching {
                return Err(Error::format(base + 6, "multi-regime record with a single-regime family"));
            }
            CausalModel::Switching(RegimeSwitchingTscm {
                regimes,
                noise,
                transition,
                edge_prob,
            })
        }
    };
    Ok(PairedSample {
        model,
        intervention,
        obs,
        int,
        query,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_corpus, generate_sample, generate_samples};

    #[test]
    fn records_round_trip_exactly() {
        let cfg = PriorConfig::default();
        for s in generate_samples(&cfg, 17, 300).unwrap() {
            let bytes = s.encode();
            let back = decode_record(&bytes, 0).unwrap();
            assert_eq!(back, s);
            assert_eq!(back.encode(), bytes);
        }
    }

    #[test]
    fn corrupted_bytes_never_panic() {
        let s = generate_sample(&PriorConfig::default(), 3).unwrap();
        let bytes = s.encode();
        for cut in [0, 1, 7, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_record(&bytes[..cut], 0), Err(Error::Format { .. })));
        }
        let mut flipped = bytes.clone();
        for i in 0..flipped.len() {
            flipped[i] ^= 0xA5;
            let _ = decode_record(&flipped, 0);
            flipped[i] ^= 0xA5;
        }
    }

    #[test]
    fn reader_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ctpr");
        let cfg = PriorConfig::default();
        generate_corpus(&cfg, 9, 40, 2, &path).unwrap();
        let reader = CorpusReader::open(&path).unwrap();
        assert_eq!(reader.len(), 40);
        assert_eq!(reader.header().base_seed, 9);
        assert_eq!(reader.header().config_digest(), cfg.digest());
        assert_eq!(reader.config().unwrap(), cfg);
        let samples = generate_samples(&cfg, 9, 40).unwrap();
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(&reader.read_record(i as u64).unwrap(), s);
        }
    }

    #[test]
    fn bad_magic_and_truncation_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ctpr");
        generate_corpus(&PriorConfig::default(), 1, 5, 1, &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        let err = CorpusReader::open(&path).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
        assert!(err.to_string().contains("bad magic"));

        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(CorpusReader::open(&path), Err(Error::Format { .. })));

        let mut versioned = good.clone();
        versioned[4] = 9;
        std::fs::write(&path, &versioned).unwrap();
        assert!(matches!(CorpusReader::open(&path), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn writer_rejects_wrong_record_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ctpr");
        let header = CorpusHeader {
            count: 2,
            seq_len: 50,
            base_seed: 0,
            config_toml: String::new(),
        };
        let mut w = CorpusWriter::create(&path, header).unwrap();
        w.append(&generate_sample(&PriorConfig::default(), 1).unwrap()).unwrap();
        assert!(w.finish().is_err());
        assert!(!path.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn non_finite_values_are_stored() {
        let mut s = generate_sample(&PriorConfig::default(), 2).unwrap();
        s.int.values[0] = f64::NAN;
        s.obs.values[1] = f64::INFINITY;
        let back = decode_record(&s.encode(), 0).unwrap();
        assert!(back.int.values[0].is_nan());
        assert_eq!(back.obs.values[1], f64::INFINITY);
        assert!(!back.is_finite());
    }
}
