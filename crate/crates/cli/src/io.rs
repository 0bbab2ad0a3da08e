//! File formats: sparse tensors (`.tns`), factor model directories, trace
//! CSVs, and run manifests.
//!
//! Tensor files are plain text, one nonzero per line as 1-based indices
//! followed by the value; `#` starts a comment, and an optional
//! `# dims: I1 I2 ...` header pins the shape (otherwise the maximum index
//! per mode is used). Duplicate coordinates are summed on load. Models are
//! saved as a directory holding one factor file per mode, a weight file,
//! and a key-value metadata header; text is the default, with a versioned
//! binary layout behind `FileFormat::Binary`. All paths round-trip
//! bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use sustain_core::solver::SolverTrace;
use sustain_core::{IntegerFactorModel, SparseTensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Core(#[from] sustain_core::Error),
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        Self::Parse {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        Self::Format {
            path: path.display().to_string(),
            message: message.into(),
        }
    }
}

pub type IoResult<T> = std::result::Result<T, IoError>;

/// Parses a `.tns` file.
pub fn load_tensor(path: &Path) -> IoResult<SparseTensor> {
    let content = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut dims_override: Option<Vec<usize>> = None;
    let mut order: Option<usize> = None;
    let mut max_index: Vec<usize> = Vec::new();
    let mut entries: Vec<(Vec<usize>, f64)> = Vec::new();

    for (i, raw) in content.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(spec) = comment.trim_start().strip_prefix("dims:") {
                let dims: Vec<usize> = spec
                    .split_whitespace()
                    .map(|tok| {
                        tok.parse::<usize>().map_err(|_| {
                            IoError::parse(path, lineno, format!("bad dimension '{tok}'"))
                        })
                    })
                    .collect::<IoResult<_>>()?;
                if dims.len() < 2 || dims.contains(&0) {
                    return Err(IoError::parse(path, lineno, "dims header needs at least two positive sizes"));
                }
                order = Some(dims.len());
                dims_override = Some(dims);
            }
            continue;
        }

        let tokens: Vec<&str> = line.split_whitespace().collect();
        let d = *order.get_or_insert(tokens.len().saturating_sub(1));
        if d < 2 {
            return Err(IoError::parse(
                path,
                lineno,
                "a nonzero needs at least two indices and a value",
            ));
        }
        if tokens.len() != d + 1 {
            return Err(IoError::parse(
                path,
                lineno,
                format!("expected {} fields, found {}", d + 1, tokens.len()),
            ));
        }
        let mut idx = Vec::with_capacity(d);
        for (mode, tok) in tokens[..d].iter().enumerate() {
            let one_based: usize = tok.parse().map_err(|_| {
                IoError::parse(path, lineno, format!("bad index '{tok}'"))
            })?;
            if one_based < 1 {
                return Err(IoError::parse(path, lineno, "indices are 1-based"));
            }
            if let Some(dims) = &dims_override {
                if one_based > dims[mode] {
                    return Err(IoError::parse(
                        path,
                        lineno,
                        format!("index {one_based} exceeds declared size {}", dims[mode]),
                    ));
                }
            }
            idx.push(one_based - 1);
        }
        let value: f64 = tokens[d].parse().map_err(|_| {
            IoError::parse(path, lineno, format!("bad value '{}'", tokens[d]))
        })?;
        if !value.is_finite() {
            return Err(IoError::parse(path, lineno, "non-finite value"));
        }
        if value < 0.0 {
            return Err(IoError::parse(path, lineno, "negative value"));
        }
        if max_index.len() < d {
            max_index.resize(d, 0);
        }
        for (m, &i) in idx.iter().enumerate() {
            max_index[m] = max_index[m].max(i + 1);
        }
        entries.push((idx, value));
    }

    let dims = match dims_override {
        Some(dims) => dims,
        None => {
            if entries.is_empty() {
                return Err(IoError::format(
                    path,
                    "cannot infer dims from a file with no entries (add a '# dims:' header)",
                ));
            }
            max_index
        }
    };
    Ok(SparseTensor::new(dims, entries)?)
}

/// Writes a `.tns` file with a dims header; inverse of [`load_tensor`].
pub fn save_tensor(path: &Path, x: &SparseTensor) -> IoResult<()> {
    let mut out = String::new();
    out.push_str("# dims:");
    for d in x.dims() {
        let _ = write!(out, " {d}");
    }
    out.push('\n');
    for (idx, v) in x.iter() {
        for i in idx {
            let _ = write!(out, "{} ", i + 1);
        }
        let _ = writeln!(out, "{v}");
    }
    fs::write(path, out).map_err(|e| IoError::io(path, e))
}

/// How factor and weight files are laid out on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Text,
    Binary,
}

impl FileFormat {
    fn name(self) -> &'static str {
        match self {
            FileFormat::Text => "text",
            FileFormat::Binary => "binary",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "text" => Some(FileFormat::Text),
            "binary" => Some(FileFormat::Binary),
            _ => None,
        }
    }
}

/// Metadata header stored next to the factor files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub format_version: u32,
    pub dims: Vec<usize>,
    pub rank: usize,
    pub tau: u32,
    pub seed: u64,
    pub fit: f64,
}

const FACTOR_MAGIC: &[u8; 4] = b"SUSF";
const LAMBDA_MAGIC: &[u8; 4] = b"SUSL";

fn factor_file(dir: &Path, mode: usize, format: FileFormat) -> PathBuf {
    let ext = match format {
        FileFormat::Text => "txt",
        FileFormat::Binary => "bin",
    };
    dir.join(format!("factor_{}.{ext}", mode + 1))
}

fn lambda_file(dir: &Path, format: FileFormat) -> PathBuf {
    match format {
        FileFormat::Text => dir.join("lambda.txt"),
        FileFormat::Binary => dir.join("lambda.bin"),
    }
}

/// Saves a model as a directory: `meta.txt`, one factor file per mode, and
/// the weight vector.
pub fn save_model(
    dir: &Path,
    model: &IntegerFactorModel,
    meta: &ModelMeta,
    format: FileFormat,
) -> IoResult<()> {
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let meta_path = dir.join("meta.txt");
    let mut header = String::new();
    let _ = writeln!(header, "format_version: {}", meta.format_version);
    let _ = writeln!(header, "storage: {}", format.name());
    let _ = writeln!(header, "order: {}", model.order());
    let _ = write!(header, "dims:");
    for d in &meta.dims {
        let _ = write!(header, " {d}");
    }
    header.push('\n');
    let _ = writeln!(header, "rank: {}", meta.rank);
    let _ = writeln!(header, "tau: {}", meta.tau);
    let _ = writeln!(header, "seed: {}", meta.seed);
    let _ = writeln!(header, "fit: {}", meta.fit);
    fs::write(&meta_path, header).map_err(|e| IoError::io(&meta_path, e))?;

    for (n, factor) in model.factors.iter().enumerate() {
        let path = factor_file(dir, n, format);
        match format {
            FileFormat::Text => {
                let mut out = String::new();
                for i in 0..factor.nrows() {
                    for r in 0..factor.ncols() {
                        if r > 0 {
                            out.push(' ');
                        }
                        let _ = write!(out, "{}", factor[[i, r]] as i64);
                    }
                    out.push('\n');
                }
                fs::write(&path, out).map_err(|e| IoError::io(&path, e))?;
            }
            FileFormat::Binary => {
                let mut out = Vec::new();
                out.extend_from_slice(FACTOR_MAGIC);
                out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
                out.extend_from_slice(&(factor.nrows() as u64).to_le_bytes());
                out.extend_from_slice(&(factor.ncols() as u64).to_le_bytes());
                for i in 0..factor.nrows() {
                    for r in 0..factor.ncols() {
                        out.extend_from_slice(&(factor[[i, r]] as i64).to_le_bytes());
                    }
                }
                fs::write(&path, out).map_err(|e| IoError::io(&path, e))?;
            }
        }
    }

    let path = lambda_file(dir, format);
    match format {
        FileFormat::Text => {
            let mut out = String::new();
            for l in &model.lambda {
                let _ = writeln!(out, "{l}");
            }
            fs::write(&path, out).map_err(|e| IoError::io(&path, e))?;
        }
        FileFormat::Binary => {
            let mut out = Vec::new();
            out.extend_from_slice(LAMBDA_MAGIC);
            out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
            out.extend_from_slice(&(model.lambda.len() as u64).to_le_bytes());
            for l in &model.lambda {
                out.extend_from_slice(&l.to_le_bytes());
            }
            fs::write(&path, out).map_err(|e| IoError::io(&path, e))?;
        }
    }
    Ok(())
}

fn read_binary_matrix(path: &Path, magic: &[u8; 4]) -> IoResult<(usize, usize, Vec<i64>)> {
    let mut file = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| IoError::io(path, e))?;
    if buf.len() < 24 || &buf[..4] != magic {
        return Err(IoError::format(path, "bad magic or truncated header"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(IoError::format(
            path,
            format!("unsupported binary version {version}"),
        ));
    }
    let rows = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(buf[16..24].try_into().unwrap()) as usize;
    let need = 24 + rows * cols * 8;
    if buf.len() != need {
        return Err(IoError::format(path, "payload size mismatch"));
    }
    let values = buf[24..]
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, values))
}

/// Loads a model directory written by [`save_model`].
pub fn load_model(dir: &Path) -> IoResult<(IntegerFactorModel, ModelMeta)> {
    let meta_path = dir.join("meta.txt");
    let content = fs::read_to_string(&meta_path).map_err(|e| IoError::io(&meta_path, e))?;
    let mut format_version = None;
    let mut storage = None;
    let mut order = None;
    let mut dims: Option<Vec<usize>> = None;
    let mut rank = None;
    let mut tau = None;
    let mut seed = None;
    let mut fit = None;
    for (i, raw) in content.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| {
            IoError::parse(&meta_path, lineno, "expected 'key: value'")
        })?;
        let value = value.trim();
        let bad = |what: &str| IoError::parse(&meta_path, lineno, format!("bad {what} '{value}'"));
        match key.trim() {
            "format_version" => {
                format_version = Some(value.parse::<u32>().map_err(|_| bad("version"))?)
            }
            "storage" => {
                storage =
                    Some(FileFormat::parse(value).ok_or_else(|| bad("storage format"))?)
            }
            "order" => order = Some(value.parse::<usize>().map_err(|_| bad("order"))?),
            "dims" => {
                dims = Some(
                    value
                        .split_whitespace()
                        .map(|t| t.parse::<usize>().map_err(|_| bad("dims")))
                        .collect::<IoResult<_>>()?,
                )
            }
            "rank" => rank = Some(value.parse::<usize>().map_err(|_| bad("rank"))?),
            "tau" => tau = Some(value.parse::<u32>().map_err(|_| bad("tau"))?),
            "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad("seed"))?),
            "fit" => fit = Some(value.parse::<f64>().map_err(|_| bad("fit"))?),
            other => {
                return Err(IoError::parse(
                    &meta_path,
                    lineno,
                    format!("unknown key '{other}'"),
                ))
            }
        }
    }
    let missing = |what: &str| IoError::format(&meta_path, format!("missing {what}"));
    let format_version = format_version.ok_or_else(|| missing("format_version"))?;
    if format_version != FORMAT_VERSION {
        return Err(IoError::format(
            &meta_path,
            format!("unsupported format version {format_version}"),
        ));
    }
    let storage = storage.ok_or_else(|| missing("storage"))?;
    let order = order.ok_or_else(|| missing("order"))?;
    let dims = dims.ok_or_else(|| missing("dims"))?;
    let rank = rank.ok_or_else(|| missing("rank"))?;
    let tau = tau.ok_or_else(|| missing("tau"))?;
    let seed = seed.ok_or_else(|| missing("seed"))?;
    let fit = fit.ok_or_else(|| missing("fit"))?;
    if dims.len() != order {
        return Err(IoError::format(&meta_path, "order and dims disagree"));
    }

    let mut factors = Vec::with_capacity(order);
    for n in 0..order {
        let path = factor_file(dir, n, storage);
        let (rows, cols, values) = match storage {
            FileFormat::Text => {
                let content = fs::read_to_string(&path).map_err(|e| IoError::io(&path, e))?;
                let mut values = Vec::new();
                let mut rows = 0;
                let mut cols = None;
                for (i, line) in content.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() {
                        continue;
                    }
                    let row: Vec<i64> = line
                        .split_whitespace()
                        .map(|t| {
                            t.parse::<i64>().map_err(|_| {
                                IoError::parse(&path, i + 1, format!("bad entry '{t}'"))
                            })
                        })
                        .collect::<IoResult<_>>()?;
                    if *cols.get_or_insert(row.len()) != row.len() {
                        return Err(IoError::parse(&path, i + 1, "ragged row"));
                    }
                    values.extend(row);
                    rows += 1;
                }
                (rows, cols.unwrap_or(0), values)
            }
            FileFormat::Binary => read_binary_matrix(&path, FACTOR_MAGIC)?,
        };
        if rows != dims[n] || cols != rank {
            return Err(IoError::format(
                &path,
                format!("factor is {rows}x{cols}, expected {}x{rank}", dims[n]),
            ));
        }
        let mut f = Array2::<f64>::zeros((rows, cols));
        for i in 0..rows {
            for r in 0..cols {
                f[[i, r]] = values[i * cols + r] as f64;
            }
        }
        factors.push(f);
    }

    let path = lambda_file(dir, storage);
    let lambda: Vec<i64> = match storage {
        FileFormat::Text => {
            let content = fs::read_to_string(&path).map_err(|e| IoError::io(&path, e))?;
            content
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    l.trim()
                        .parse::<i64>()
                        .map_err(|_| IoError::parse(&path, i + 1, format!("bad weight '{l}'")))
                })
                .collect::<IoResult<_>>()?
        }
        FileFormat::Binary => {
            let (rows, cols, values) = {
                // Same layout as a factor with one column worth of header.
                let mut file = fs::File::open(&path).map_err(|e| IoError::io(&path, e))?;
                let mut buf = Vec::new();
                file.read_to_end(&mut buf).map_err(|e| IoError::io(&path, e))?;
                if buf.len() < 16 || &buf[..4] != LAMBDA_MAGIC {
                    return Err(IoError::format(&path, "bad magic or truncated header"));
                }
                let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
                if version != FORMAT_VERSION {
                    return Err(IoError::format(
                        &path,
                        format!("unsupported binary version {version}"),
                    ));
                }
                let len = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
                if buf.len() != 16 + len * 8 {
                    return Err(IoError::format(&path, "payload size mismatch"));
                }
                let values: Vec<i64> = buf[16..]
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                (len, 1, values)
            };
            let _ = cols;
            if rows != rank {
                return Err(IoError::format(&path, "weight count does not match rank"));
            }
            values
        }
    };
    if lambda.len() != rank {
        return Err(IoError::format(&path, "weight count does not match rank"));
    }

    let model = IntegerFactorModel::new(factors, lambda, tau)?;
    let meta = ModelMeta {
        format_version,
        dims,
        rank,
        tau,
        seed,
        fit,
    };
    Ok((model, meta))
}

/// Writes the per-sweep trace with the fixed column set.
pub fn write_trace_csv(path: &Path, trace: &SolverTrace) -> IoResult<()> {
    let mut out = String::from("sweep,objective,fit,seconds,zero_lock_repairs\n");
    for rec in &trace.sweeps {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            rec.sweep, rec.objective, rec.fit, rec.seconds, rec.zero_lock_repairs
        );
    }
    fs::write(path, out).map_err(|e| IoError::io(path, e))
}

/// Everything needed to rerun a command, persisted next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub input: String,
    pub out_dir: String,
    pub rank: usize,
    pub tau: u32,
    pub tol: f64,
    pub max_iters: usize,
    pub init: String,
    pub seed: u64,
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> IoResult<()> {
    let path = dir.join("manifest.json");
    let file = fs::File::create(&path).map_err(|e| IoError::io(&path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, manifest)
        .map_err(|e| IoError::format(&path, e.to_string()))?;
    writer
        .write_all(b"\n")
        .map_err(|e| IoError::io(&path, e))?;
    Ok(())
}
