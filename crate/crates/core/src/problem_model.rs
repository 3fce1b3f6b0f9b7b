//! Finite-alphabet problem instances: source law `P_UZ`, channel `T_Y|X`,
//! and the encoder/decoder distortion tables over `U x Z x V`.
//!
//! The text format is sectioned:
//!
//! ```text
//! # comment
//! [alphabets]
//! u = 2
//! z = 2
//! x = 2
//! y = 2
//! v = 2
//! [p_uz]
//! 0.35 0.15
//! 0.15 0.35
//! [channel]
//! 1 0
//! 0 1
//! [d_e]          # u_size * z_size rows, (u, z) lexicographic
//! 0 1
//! ...
//! [d_d]
//! ...
//! ```
//!
//! `x`, `y` and `[channel]` are optional: when the capacity is supplied
//! directly the channel does not need to be described.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid {what}: {msg}")]
    Validation { what: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ProblemError {
    fn parse(line: usize, msg: impl Into<String>) -> Self {
        ProblemError::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(what: impl Into<String>, msg: impl Into<String>) -> Self {
        ProblemError::Validation {
            what: what.into(),
            msg: msg.into(),
        }
    }
}

/// Checks that `row` is a probability vector and renormalizes it in place.
pub(crate) fn normalize_row<T: Real>(row: &mut [T], what: &str) -> Result<(), ProblemError> {
    let mut sum = T::zero();
    for (i, &p) in row.iter().enumerate() {
        if !p.is_finite() {
            return Err(ProblemError::invalid(what, format!("entry {i} is not finite")));
        }
        if p < T::zero() {
            return Err(ProblemError::invalid(
                what,
                format!("entry {i} is negative ({p})"),
            ));
        }
        sum += p;
    }
    if (sum - T::one()).abs() > T::prob_tol() {
        return Err(ProblemError::invalid(what, format!("sums to {sum}, expected 1")));
    }
    for p in row.iter_mut() {
        *p = *p / sum;
    }
    Ok(())
}

/// Memoryless channel `T(y|x)`, one row per input symbol.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Channel<T = f64> {
    rows: Vec<Vec<T>>,
}

impl<T: Real> Channel<T> {
    pub fn new(mut rows: Vec<Vec<T>>) -> Result<Self, ProblemError> {
        if rows.is_empty() {
            return Err(ProblemError::invalid("channel", "no input symbols"));
        }
        let y_size = rows[0].len();
        if y_size == 0 {
            return Err(ProblemError::invalid("channel", "no output symbols"));
        }
        for (x, row) in rows.iter_mut().enumerate() {
            if row.len() != y_size {
                return Err(ProblemError::invalid(
                    format!("channel row {x}"),
                    format!("has {} entries, expected {y_size}", row.len()),
                ));
            }
            normalize_row(row, &format!("channel row {x}"))?;
        }
        Ok(Self { rows })
    }

    /// Noiseless channel on `size` symbols.
    pub fn identity(size: usize) -> Self {
        let rows = (0..size)
            .map(|x| {
                (0..size)
                    .map(|y| if x == y { T::one() } else { T::zero() })
                    .collect()
            })
            .collect();
        Self { rows }
    }

    /// Binary symmetric channel with crossover probability `eps`.
    pub fn bsc(eps: T) -> Result<Self, ProblemError> {
        Self::new(vec![vec![T::one() - eps, eps], vec![eps, T::one() - eps]])
    }

    pub fn x_size(&self) -> usize {
        self.rows.len()
    }

    pub fn y_size(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.rows
    }

    #[inline]
    pub fn prob(&self, x: usize, y: usize) -> T {
        self.rows[x][y]
    }
}

/// Distortion table indexed by `(u, z, v)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistortionTable<T = f64> {
    u_size: usize,
    z_size: usize,
    v_size: usize,
    data: Vec<T>,
}

impl<T: Real> DistortionTable<T> {
    /// `rows[u * z_size + z][v]`.
    pub fn from_rows(
        u_size: usize,
        z_size: usize,
        rows: Vec<Vec<T>>,
    ) -> Result<Self, ProblemError> {
        if rows.len() != u_size * z_size {
            return Err(ProblemError::invalid(
                "distortion table",
                format!("has {} rows, expected {}", rows.len(), u_size * z_size),
            ));
        }
        let v_size = rows.first().map_or(0, Vec::len);
        if v_size == 0 {
            return Err(ProblemError::invalid("distortion table", "no output symbols"));
        }
        let mut data = Vec::with_capacity(u_size * z_size * v_size);
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != v_size {
                return Err(ProblemError::invalid(
                    format!("distortion row {r}"),
                    format!("has {} entries, expected {v_size}", row.len()),
                ));
            }
            if let Some(v) = row.iter().position(|d| !d.is_finite()) {
                return Err(ProblemError::invalid(
                    format!("distortion row {r}"),
                    format!("entry {v} is not finite"),
                ));
            }
            data.extend(row);
        }
        Ok(Self {
            u_size,
            z_size,
            v_size,
            data,
        })
    }

    /// Table that ignores the side information: `d(u, z, v) = by_uv[u][v]`.
    pub fn independent_of_z(z_size: usize, by_uv: &[Vec<T>]) -> Result<Self, ProblemError> {
        let rows = by_uv
            .iter()
            .flat_map(|row| std::iter::repeat_n(row.clone(), z_size))
            .collect();
        Self::from_rows(by_uv.len(), z_size, rows)
    }

    /// Hamming distortion with `V = U`.
    pub fn hamming(u_size: usize, z_size: usize) -> Self {
        let by_uv: Vec<Vec<T>> = (0..u_size)
            .map(|u| {
                (0..u_size)
                    .map(|v| if u == v { T::zero() } else { T::one() })
                    .collect()
            })
            .collect();
        Self::independent_of_z(z_size, &by_uv).expect("hamming table is well formed")
    }

    #[inline]
    pub fn get(&self, u: usize, z: usize, v: usize) -> T {
        self.data[(u * self.z_size + z) * self.v_size + v]
    }

    pub fn u_size(&self) -> usize {
        self.u_size
    }

    pub fn z_size(&self) -> usize {
        self.z_size
    }

    pub fn v_size(&self) -> usize {
        self.v_size
    }

    pub fn row(&self, u: usize, z: usize) -> &[T] {
        let start = (u * self.z_size + z) * self.v_size;
        &self.data[start..start + self.v_size]
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }
}

/// A validated problem instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProblemSpec<T = f64> {
    u_size: usize,
    z_size: usize,
    v_size: usize,
    p_uz: Vec<Vec<T>>,
    channel: Option<Channel<T>>,
    d_e: DistortionTable<T>,
    d_d: DistortionTable<T>,
    #[serde(skip)]
    p_u: Vec<T>,
    #[serde(skip)]
    p_z_given_u: Vec<Vec<T>>,
}

impl<T: Real> ProblemSpec<T> {
    pub fn new(
        p_uz: Vec<Vec<T>>,
        channel: Option<Channel<T>>,
        d_e: DistortionTable<T>,
        d_d: DistortionTable<T>,
    ) -> Result<Self, ProblemError> {
        let u_size = p_uz.len();
        if u_size == 0 {
            return Err(ProblemError::invalid("p_uz", "no source symbols"));
        }
        let z_size = p_uz[0].len();
        if z_size == 0 {
            return Err(ProblemError::invalid("p_uz", "no side-information symbols"));
        }
        let mut flat = Vec::with_capacity(u_size * z_size);
        for (u, row) in p_uz.iter().enumerate() {
            if row.len() != z_size {
                return Err(ProblemError::invalid(
                    format!("p_uz row {u}"),
                    format!("has {} entries, expected {z_size}", row.len()),
                ));
            }
            flat.extend_from_slice(row);
        }
        normalize_row(&mut flat, "p_uz")?;
        let p_uz: Vec<Vec<T>> = flat.chunks(z_size).map(<[T]>::to_vec).collect();

        for (name, table) in [("d_e", &d_e), ("d_d", &d_d)] {
            if table.u_size() != u_size || table.z_size() != z_size {
                return Err(ProblemError::invalid(
                    name,
                    format!(
                        "shape {}x{} does not match p_uz {u_size}x{z_size}",
                        table.u_size(),
                        table.z_size()
                    ),
                ));
            }
        }
        if d_e.v_size() != d_d.v_size() {
            return Err(ProblemError::invalid(
                "d_d",
                format!("has {} outputs, d_e has {}", d_d.v_size(), d_e.v_size()),
            ));
        }
        let v_size = d_e.v_size();

        let p_u: Vec<T> = p_uz.iter().map(|row| row.iter().copied().sum()).collect();
        let uniform = T::one() / T::from_usize(z_size).expect("alphabet size");
        let p_z_given_u = p_uz
            .iter()
            .zip(&p_u)
            .map(|(row, &pu)| {
                if pu > T::zero() {
                    row.iter().map(|&p| p / pu).collect()
                } else {
                    // Unused symbol: any row works since beliefs over the
                    // support of P_U never charge it.
                    vec![uniform; z_size]
                }
            })
            .collect();

        Ok(Self {
            u_size,
            z_size,
            v_size,
            p_uz,
            channel,
            d_e,
            d_d,
            p_u,
            p_z_given_u,
        })
    }

    pub fn u_size(&self) -> usize {
        self.u_size
    }

    pub fn z_size(&self) -> usize {
        self.z_size
    }

    pub fn v_size(&self) -> usize {
        self.v_size
    }

    pub fn x_size(&self) -> Option<usize> {
        self.channel.as_ref().map(Channel::x_size)
    }

    pub fn y_size(&self) -> Option<usize> {
        self.channel.as_ref().map(Channel::y_size)
    }

    pub fn p_uz(&self) -> &[Vec<T>] {
        &self.p_uz
    }

    pub fn channel(&self) -> Option<&Channel<T>> {
        self.channel.as_ref()
    }

    pub fn with_channel(mut self, channel: Option<Channel<T>>) -> Self {
        self.channel = channel;
        self
    }

    pub fn d_e(&self) -> &DistortionTable<T> {
        &self.d_e
    }

    pub fn d_d(&self) -> &DistortionTable<T> {
        &self.d_d
    }

    /// Same source and channel with a different pair of distortion tables.
    pub fn with_distortions(
        &self,
        d_e: DistortionTable<T>,
        d_d: DistortionTable<T>,
    ) -> Result<Self, ProblemError> {
        Self::new(self.p_uz.clone(), self.channel.clone(), d_e, d_d)
    }

    /// Source marginal `P_U`.
    pub fn p_u(&self) -> &[T] {
        &self.p_u
    }

    /// Side-information channel `P(z|u)`; rows of unused symbols are uniform.
    pub fn p_z_given_u(&self) -> &[Vec<T>] {
        &self.p_z_given_u
    }

    /// Source symbols with zero marginal probability.
    pub fn unused_symbols(&self) -> Vec<usize> {
        (0..self.u_size)
            .filter(|&u| self.p_u[u] <= T::zero())
            .collect()
    }

    /// Source symbols with positive marginal probability.
    pub fn support(&self) -> Vec<usize> {
        (0..self.u_size)
            .filter(|&u| self.p_u[u] > T::zero())
            .collect()
    }

    /// Casts every table to another scalar type.
    pub fn cast<S: Real>(&self) -> ProblemSpec<S> {
        let c = |x: T| S::from_f64(x.to_f64_lossy()).expect("finite");
        let rows = |t: &[Vec<T>]| -> Vec<Vec<S>> {
            t.iter().map(|r| r.iter().map(|&x| c(x)).collect()).collect()
        };
        let table = |t: &DistortionTable<T>| DistortionTable {
            u_size: t.u_size,
            z_size: t.z_size,
            v_size: t.v_size,
            data: t.data.iter().map(|&x| c(x)).collect(),
        };
        ProblemSpec::new(
            rows(&self.p_uz),
            self.channel.as_ref().map(|ch| Channel {
                rows: rows(ch.rows()),
            }),
            table(&self.d_e),
            table(&self.d_d),
        )
        .expect("cast of a valid problem is valid")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let fmt = |x: T| format!("{}", x.to_f64_lossy());
        let row = |out: &mut String, r: &[T]| {
            let line: Vec<String> = r.iter().map(|&x| fmt(x)).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        };
        out.push_str("[alphabets]\n");
        let _ = writeln!(out, "u = {}", self.u_size);
        let _ = writeln!(out, "z = {}", self.z_size);
        if let Some(ch) = &self.channel {
            let _ = writeln!(out, "x = {}", ch.x_size());
            let _ = writeln!(out, "y = {}", ch.y_size());
        }
        let _ = writeln!(out, "v = {}", self.v_size);
        out.push_str("[p_uz]\n");
        for r in &self.p_uz {
            row(&mut out, r);
        }
        if let Some(ch) = &self.channel {
            out.push_str("[channel]\n");
            for r in ch.rows() {
                row(&mut out, r);
            }
        }
        for (name, table) in [("d_e", &self.d_e), ("d_d", &self.d_d)] {
            let _ = writeln!(out, "[{name}]");
            for u in 0..self.u_size {
                for z in 0..self.z_size {
                    row(&mut out, table.row(u, z));
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ProblemError> {
        let sections = parse_sections(text)?;
        let alphabets = sections
            .get("alphabets")
            .ok_or_else(|| ProblemError::parse(0, "missing [alphabets] section"))?;
        let sizes = parse_key_values(alphabets)?;
        let size = |key: &str| -> Result<Option<usize>, ProblemError> {
            match sizes.iter().find(|(k, _, _)| k == key) {
                None => Ok(None),
                Some((_, value, line)) => {
                    let n: usize = value.parse().map_err(|_| {
                        ProblemError::parse(*line, format!("alphabet size `{key}` is not an integer"))
                    })?;
                    if n == 0 {
                        return Err(ProblemError::parse(*line, format!("alphabet size `{key}` must be positive")));
                    }
                    Ok(Some(n))
                }
            }
        };
        let required = |key: &str| -> Result<usize, ProblemError> {
            size(key)?.ok_or_else(|| {
                ProblemError::parse(alphabets.line, format!("[alphabets] is missing `{key}`"))
            })
        };
        let u_size = required("u")?;
        let z_size = required("z")?;
        let v_size = required("v")?;
        let x_size = size("x")?;
        let y_size = size("y")?;

        let p_uz = sections.matrix::<T>("p_uz", u_size, z_size)?;
        let channel = match sections.get("channel") {
            Some(_) => {
                let (xs, ys) = match (x_size, y_size) {
                    (Some(x), Some(y)) => (x, y),
                    _ => {
                        return Err(ProblemError::parse(
                            alphabets.line,
                            "[channel] present but `x`/`y` sizes missing",
                        ))
                    }
                };
                let rows = sections.matrix::<T>("channel", xs, ys)?;
                Some(Channel::new(rows)?)
            }
            None => None,
        };
        let d_e = sections.matrix::<T>("d_e", u_size * z_size, v_size)?;
        let d_d = sections.matrix::<T>("d_d", u_size * z_size, v_size)?;
        Self::new(
            p_uz,
            channel,
            DistortionTable::from_rows(u_size, z_size, d_e)?,
            DistortionTable::from_rows(u_size, z_size, d_d)?,
        )
    }
}

pub fn load_problem<T: Real>(path: impl AsRef<Path>) -> Result<ProblemSpec<T>, ProblemError> {
    let text = read_text(path.as_ref())?;
    ProblemSpec::from_text(&text)
}

pub fn save_problem<T: Real>(
    problem: &ProblemSpec<T>,
    path: impl AsRef<Path>,
) -> Result<(), ProblemError> {
    let path = path.as_ref();
    fs::write(path, problem.to_text()).map_err(|source| ProblemError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a file whose `[channel]` section describes `T(y|x)`; `[alphabets]`
/// is optional and, when present, checked against the rows.
pub fn load_channel<T: Real>(path: impl AsRef<Path>) -> Result<Channel<T>, ProblemError> {
    let text = read_text(path.as_ref())?;
    parse_channel(&text)
}

pub fn parse_channel<T: Real>(text: &str) -> Result<Channel<T>, ProblemError> {
    let sections = parse_sections(text)?;
    let section = sections
        .get("channel")
        .ok_or_else(|| ProblemError::parse(0, "missing [channel] section"))?;
    let rows = section.numeric_rows::<T>()?;
    if let Some(alphabets) = sections.get("alphabets") {
        for (key, value, line) in parse_key_values(alphabets)? {
            let expected = match key.as_str() {
                "x" => rows.len(),
                "y" => rows.first().map_or(0, Vec::len),
                _ => continue,
            };
            if value.parse::<usize>().ok() != Some(expected) {
                return Err(ProblemError::parse(
                    line,
                    format!("alphabet size `{key}` = {value} does not match [channel] ({expected})"),
                ));
            }
        }
    }
    Channel::new(rows)
}

pub(crate) fn read_text(path: &Path) -> Result<String, ProblemError> {
    fs::read_to_string(path).map_err(|source| ProblemError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug)]
pub(crate) struct Section {
    pub name: String,
    pub line: usize,
    pub rows: Vec<(usize, String)>,
}

impl Section {
    pub(crate) fn numeric_rows<T: Real>(&self) -> Result<Vec<Vec<T>>, ProblemError> {
        self.rows
            .iter()
            .map(|(line, text)| {
                text.split_whitespace()
                    .enumerate()
                    .map(|(col, tok)| parse_decimal(tok, *line, col))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Default)]
pub(crate) struct Sections(Vec<Section>);

impl Sections {
    pub(crate) fn get(&self, name: &str) -> Option<&Section> {
        self.0.iter().find(|s| s.name == name)
    }

    pub(crate) fn matrix<T: Real>(
        &self,
        name: &str,
        rows: usize,
        cols: usize,
    ) -> Result<Vec<Vec<T>>, ProblemError> {
        let section = self
            .get(name)
            .ok_or_else(|| ProblemError::parse(0, format!("missing [{name}] section")))?;
        let data = section.numeric_rows::<T>()?;
        if data.len() != rows {
            return Err(ProblemError::parse(
                section.line,
                format!("[{name}] has {} rows, expected {rows}", data.len()),
            ));
        }
        for ((line, _), row) in section.rows.iter().zip(&data) {
            if row.len() != cols {
                return Err(ProblemError::parse(
                    *line,
                    format!("[{name}] row has {} entries, expected {cols}", row.len()),
                ));
            }
        }
        Ok(data)
    }
}

fn parse_decimal<T: Real>(tok: &str, line: usize, col: usize) -> Result<T, ProblemError> {
    // Rust's float parser also accepts `inf`/`nan`; only plain decimals are allowed.
    let plain = tok
        .chars()
        .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
    let value: f64 = if plain { tok.parse().ok() } else { None }
        .ok_or_else(|| ProblemError::parse(line, format!("entry {col}: `{tok}` is not a decimal number")))?;
    T::from_f64(value).ok_or_else(|| ProblemError::parse(line, format!("entry {col}: `{tok}` out of range")))
}

pub(crate) fn parse_sections(text: &str) -> Result<Sections, ProblemError> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ProblemError::parse(line_no, "unterminated section header"))?
                .trim()
                .to_string();
            if sections.iter().any(|s| s.name == name) {
                return Err(ProblemError::parse(line_no, format!("duplicate section [{name}]")));
            }
            sections.push(Section {
                name,
                line: line_no,
                rows: Vec::new(),
            });
            continue;
        }
        match sections.last_mut() {
            Some(section) => section.rows.push((line_no, line.to_string())),
            None => return Err(ProblemError::parse(line_no, "data before the first section header")),
        }
    }
    Ok(Sections(sections))
}

fn parse_key_values(section: &Section) -> Result<Vec<(String, String, usize)>, ProblemError> {
    section
        .rows
        .iter()
        .map(|(line, text)| {
            let (k, v) = text
                .split_once('=')
                .ok_or_else(|| ProblemError::parse(*line, "expected `key = value`"))?;
            Ok((k.trim().to_string(), v.trim().to_string(), *line))
        })
        .collect()
}

/// Binary source/side-information family of the worked examples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DsbsParams<T = f64> {
    /// Prior probability of `u1`.
    pub p0: T,
    /// `P(z1 | u0)`.
    pub delta0: T,
    /// `P(z0 | u1)`.
    pub delta1: T,
    /// Decoder's extra cost for answering `v1`.
    pub kappa: T,
    /// Channel capacity in bits per symbol.
    pub capacity: T,
}

impl<T: Real> DsbsParams<T> {
    pub fn new(p0: T, delta0: T, delta1: T, kappa: T, capacity: T) -> Result<Self, ProblemError> {
        let params = Self {
            p0,
            delta0,
            delta1,
            kappa,
            capacity,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn symmetric(p0: T, delta: T, kappa: T, capacity: T) -> Result<Self, ProblemError> {
        Self::new(p0, delta, delta, kappa, capacity)
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let unit = |name: &str, x: T| {
            if x.is_finite() && x >= T::zero() && x <= T::one() {
                Ok(())
            } else {
                Err(ProblemError::invalid(name, format!("{x} is outside [0, 1]")))
            }
        };
        unit("p0", self.p0)?;
        unit("delta0", self.delta0)?;
        unit("delta1", self.delta1)?;
        unit("kappa", self.kappa)?;
        if !(self.capacity.is_finite() && self.capacity >= T::zero()) {
            return Err(ProblemError::invalid(
                "capacity",
                format!("{} must be a non-negative number", self.capacity),
            ));
        }
        Ok(())
    }

    /// `delta0 == delta1 < 1/2` and `kappa == 0`.
    pub fn is_symmetric_hamming(&self) -> bool {
        self.delta0 == self.delta1 && self.delta0 < T::half() && self.kappa == T::zero()
    }
}

/// Builds the binary instance: Hamming `d_e`, `d_d = [[0, 1 + kappa], [1, kappa]]`.
pub fn dsbs_to_problem<T: Real>(
    params: &DsbsParams<T>,
    channel: Option<Channel<T>>,
) -> Result<ProblemSpec<T>, ProblemError> {
    params.validate()?;
    let one = T::one();
    let DsbsParams {
        p0,
        delta0,
        delta1,
        kappa,
        ..
    } = *params;
    let p_uz = vec![
        vec![(one - p0) * (one - delta0), (one - p0) * delta0],
        vec![p0 * delta1, p0 * (one - delta1)],
    ];
    let d_e = DistortionTable::hamming(2, 2);
    let d_d = DistortionTable::independent_of_z(
        2,
        &[vec![T::zero(), one + kappa], vec![one, kappa]],
    )?;
    ProblemSpec::new(p_uz, channel, d_e, d_d)
}
