//! File formats.
//!
//! * Cube: a text header of `key: value` lines ending with `end_header`,
//!   followed by little-endian `f32` values, band-interleaved-by-pixel with
//!   pixels in row-major order.
//! * Curves: comma-separated; first column wavelength in nm, then one column
//!   per channel. A `:pan` suffix on a channel name marks it panchromatic.
//! * Endmembers: like curves, with an optional `kind` column (`sel`/`pan`)
//!   after the wavelength and one column per endmember.
//! * Abundances: comma-separated `id,<endmember names…>`, one row per pixel
//!   or patch, with an optional `# width=W height=H sum_to_one=1` comment.
//! * Abundance maps: binary PGM (P5), 8 bits per pixel.
//!
//! Text numbers are written in decimal with 9 significant digits. Lines
//! starting with `#` are comments unless noted. Every write goes through a
//! temporary file in the target directory followed by a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::bandsim::{SensitivityChannel, SensitivityModel};
use crate::error::{Error, Position, Result};
use crate::spectral::{AbundanceField, BandKind, EndmemberSet, SpectralCube, Spectrum, WavelengthAxis};

pub const CUBE_MAGIC: &str = "MSUNMIX-CUBE 1";
const END_HEADER: &str = "end_header";

/// Decimal text with 9 significant digits.
pub fn fmt9(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().unwrap_or(v);
    if rounded == 0.0 {
        "0".to_string()
    } else {
        format!("{rounded}")
    }
}

/// Write `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidInput, "not a file path")))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|e| {
        Error::format(path, Position::Byte(e.utf8_error().valid_up_to() as u64), "file is not valid UTF-8")
    })
}

fn kind_tag(kind: BandKind) -> &'static str {
    match kind {
        BandKind::Selective => "sel",
        BandKind::Panchromatic => "pan",
    }
}

fn parse_kind(s: &str) -> Option<BandKind> {
    match s {
        "sel" | "selective" => Some(BandKind::Selective),
        "pan" | "panchromatic" => Some(BandKind::Panchromatic),
        _ => None,
    }
}

fn parse_number(cell: &str, path: &Path, line: usize, what: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::format(path, Position::Line(line), format!("{what}: cannot parse '{}'", cell.trim())))?;
    if !v.is_finite() {
        return Err(Error::format(path, Position::Line(line), format!("{what}: non-finite value '{}'", cell.trim())));
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// cubes

pub fn cube_to_bytes(cube: &SpectralCube) -> Result<Vec<u8>> {
    let mut header = String::new();
    header.push_str(CUBE_MAGIC);
    header.push('\n');
    header.push_str(&format!("width: {}\n", cube.width()));
    header.push_str(&format!("height: {}\n", cube.height()));
    header.push_str(&format!("bands: {}\n", cube.bands()));
    if cube.units().contains('\n') {
        return Err(Error::Config("units label cannot contain a newline".into()));
    }
    header.push_str(&format!("units: {}\n", cube.units()));
    let wl: Vec<String> = cube.axis().samples().iter().map(|w| format!("{w}")).collect();
    header.push_str(&format!("wavelengths: {}\n", wl.join(" ")));
    if cube.band_kinds().iter().any(|k| k.is_panchromatic()) || cube.band_names().is_some() {
        let kinds: Vec<&str> = cube.band_kinds().iter().map(|k| kind_tag(*k)).collect();
        header.push_str(&format!("kinds: {}\n", kinds.join(" ")));
    }
    if let Some(names) = cube.band_names() {
        if names.iter().any(|n| n.contains(',') || n.contains('\n')) {
            return Err(Error::Config("band names cannot contain ',' or newlines".into()));
        }
        header.push_str(&format!("names: {}\n", names.join(",")));
    }
    header.push_str(END_HEADER);
    header.push('\n');

    let mut out = header.into_bytes();
    out.reserve(cube.data().len() * 4);
    for (i, &v) in cube.data().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::InvalidValue {
                what: "cube value (f32 overflow)",
                index: i,
                value: v,
            });
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn cube_from_bytes(bytes: &[u8], path: &Path) -> Result<SpectralCube> {
    let marker = format!("\n{END_HEADER}\n");
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| Error::format(path, Position::Line(1), format!("missing '{END_HEADER}' line")))?;
    let header_len = end + marker.len();
    let header = std::str::from_utf8(&bytes[..end])
        .map_err(|e| Error::format(path, Position::Byte(e.valid_up_to() as u64), "header is not valid UTF-8"))?;

    let mut lines = header.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == CUBE_MAGIC => {}
        _ => return Err(Error::format(path, Position::Line(1), format!("expected '{CUBE_MAGIC}'"))),
    }
    let (mut width, mut height, mut bands) = (None, None, None);
    let mut units = String::new();
    let mut wavelengths: Option<(usize, Vec<f64>)> = None;
    let mut kinds: Option<(usize, Vec<BandKind>)> = None;
    let mut names: Option<(usize, Vec<String>)> = None;
    for (i, line) in lines {
        let no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| Error::format(path, Position::Line(no), format!("expected 'key: value', got '{line}'")))?;
        let value = value.trim();
        let int = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::format(path, Position::Line(no), format!("{key}: cannot parse '{v}'")))
        };
        match key.trim() {
            "width" => width = Some(int(value)?),
            "height" => height = Some(int(value)?),
            "bands" => bands = Some(int(value)?),
            "units" => units = value.to_string(),
            "wavelengths" => {
                let w = value
                    .split_whitespace()
                    .map(|c| parse_number(c, path, no, "wavelengths"))
                    .collect::<Result<Vec<_>>>()?;
                wavelengths = Some((no, w));
            }
            "kinds" => {
                let k = value
                    .split_whitespace()
                    .map(|c| {
                        parse_kind(c).ok_or_else(|| Error::format(path, Position::Line(no), format!("unknown band kind '{c}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                kinds = Some((no, k));
            }
            "names" => names = Some((no, value.split(',').map(|s| s.trim().to_string()).collect())),
            other => {
                return Err(Error::format(path, Position::Line(no), format!("unknown header key '{other}'")));
            }
        }
    }
    let header_end_line = header.lines().count() + 1;
    let missing = |k: &str| Error::format(path, Position::Line(header_end_line), format!("header lacks '{k}'"));
    let width = width.ok_or_else(|| missing("width"))?;
    let height = height.ok_or_else(|| missing("height"))?;
    let bands = bands.ok_or_else(|| missing("bands"))?;
    let (wl_line, wavelengths) = wavelengths.ok_or_else(|| missing("wavelengths"))?;
    if wavelengths.len() != bands {
        return Err(Error::format(
            path,
            Position::Line(wl_line),
            format!("bands is {bands} but {} wavelengths are listed", wavelengths.len()),
        ));
    }
    let axis = WavelengthAxis::new(wavelengths).map_err(|e| Error::format(path, Position::Line(wl_line), e.to_string()))?;

    let payload = &bytes[header_len..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bands))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, Position::Line(header_end_line), "dimensions overflow"))?;
    if payload.len() != expected {
        return Err(Error::format(
            path,
            Position::Byte(header_len as u64),
            format!("payload has {} bytes, expected {expected} ({width}x{height}x{bands} f32)", payload.len()),
        ));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::format(
            path,
            Position::Byte((header_len + 4 * i) as u64),
            format!("invalid value {} (must be finite and >= 0)", data[i]),
        ));
    }
    let cube = SpectralCube::new(width, height, axis, data, units)
        .map_err(|e| Error::format(path, Position::Line(header_end_line), e.to_string()))?;
    match (kinds, names) {
        (None, None) => Ok(cube),
        (k, n) => {
            let line = k.as_ref().map(|x| x.0).or(n.as_ref().map(|x| x.0)).unwrap_or(header_end_line);
            let kinds = k.map(|x| x.1).unwrap_or_else(|| vec![BandKind::Selective; bands]);
            cube.with_band_info(kinds, n.map(|x| x.1))
                .map_err(|e| Error::format(path, Position::Line(line), e.to_string()))
        }
    }
}

pub fn write_cube(cube: &SpectralCube, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &cube_to_bytes(cube)?)
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<SpectralCube> {
    let path = path.as_ref();
    cube_from_bytes(&read_bytes(path)?, path)
}

// ---------------------------------------------------------------------------
// delimited tables

/// Header cells and numeric rows of a comma-separated file, with line numbers.
struct Table {
    header_line: usize,
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
    comments: Vec<String>,
}

fn split_table(text: &str, path: &Path) -> Result<Table> {
    let mut header = None;
    let mut rows = Vec::new();
    let mut comments = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(c) = t.strip_prefix('#') {
            comments.push(c.trim().to_string());
            continue;
        }
        let cells: Vec<String> = t.split(',').map(|c| c.trim().to_string()).collect();
        match header {
            None => header = Some((no, cells)),
            Some((_, ref h)) => {
                if cells.len() != h.len() {
                    return Err(Error::format(
                        path,
                        Position::Line(no),
                        format!("{} columns, header has {}", cells.len(), h.len()),
                    ));
                }
                rows.push((no, cells));
            }
        }
    }
    let (header_line, header) = header.ok_or_else(|| Error::format(path, Position::Line(1), "no header row"))?;
    Ok(Table {
        header_line,
        header,
        rows,
        comments,
    })
}

/// Wavelength column checked strictly increasing, duplicates named as such.
fn wavelength_column(table: &Table, path: &Path) -> Result<WavelengthAxis> {
    let mut wl: Vec<f64> = Vec::with_capacity(table.rows.len());
    for (no, cells) in &table.rows {
        let w = parse_number(&cells[0], path, *no, "wavelength")?;
        if let Some(&prev) = wl.last() {
            if w == prev {
                return Err(Error::format(path, Position::Line(*no), format!("duplicate wavelength {w}")));
            }
            if w < prev {
                return Err(Error::format(path, Position::Line(*no), format!("wavelength {w} after {prev} is not increasing")));
            }
        }
        if w <= 0.0 {
            return Err(Error::format(path, Position::Line(*no), format!("wavelength {w} must be > 0")));
        }
        wl.push(w);
    }
    let line = table.rows.last().map(|r| r.0).unwrap_or(table.header_line);
    WavelengthAxis::new(wl).map_err(|e| Error::format(path, Position::Line(line), e.to_string()))
}

fn numeric_column(table: &Table, col: usize, path: &Path, what: &str) -> Result<Vec<f64>> {
    table
        .rows
        .iter()
        .map(|(no, cells)| {
            let v = parse_number(&cells[col], path, *no, what)?;
            if v < 0.0 {
                return Err(Error::format(path, Position::Line(*no), format!("negative {what} {v} in column '{}'", table.header[col])));
            }
            Ok(v)
        })
        .collect()
}

fn check_names(names: &[String]) -> Result<()> {
    for n in names {
        if n.is_empty() || n.contains(',') || n.contains('\n') || n.starts_with('#') {
            return Err(Error::Config(format!("name '{n}' cannot be written to a CSV header")));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sensitivity curves

pub fn parse_curves(text: &str, path: &Path) -> Result<SensitivityModel> {
    let table = split_table(text, path)?;
    if table.header.len() < 2 {
        return Err(Error::format(path, Position::Line(table.header_line), "need a wavelength column and at least one channel"));
    }
    let axis = wavelength_column(&table, path)?;
    let mut channels = Vec::with_capacity(table.header.len() - 1);
    for col in 1..table.header.len() {
        let raw = &table.header[col];
        let (name, kind) = match raw.strip_suffix(":pan") {
            Some(n) => (n.to_string(), BandKind::Panchromatic),
            None => (raw.clone(), BandKind::Selective),
        };
        let response = numeric_column(&table, col, path, "response")?;
        let ch = SensitivityChannel::new(name, axis.clone(), response, kind)
            .map_err(|e| Error::format(path, Position::Line(table.header_line), e.to_string()))?;
        channels.push(ch);
    }
    SensitivityModel::new(channels, None).map_err(|e| Error::format(path, Position::Line(table.header_line), e.to_string()))
}

pub fn read_curves(path: impl AsRef<Path>) -> Result<SensitivityModel> {
    let path = path.as_ref();
    parse_curves(&read_text(path)?, path)
}

/// A single-column curve file read as a spectrum (e.g. an illuminant).
pub fn read_spectrum(path: impl AsRef<Path>) -> Result<Spectrum> {
    let path = path.as_ref();
    let model = read_curves(path)?;
    if model.channels().len() != 1 {
        return Err(Error::format(
            path,
            Position::Line(1),
            format!("expected exactly one data column, found {}", model.channels().len()),
        ));
    }
    let ch = &model.channels()[0];
    Spectrum::new(ch.axis().clone(), ch.response().to_vec())
}

pub fn curves_to_string(model: &SensitivityModel) -> Result<String> {
    let axis = model.channels()[0].axis();
    if model.channels().iter().any(|c| c.axis() != axis) {
        return Err(Error::Shape("all channels must share one wavelength axis to be written".into()));
    }
    let names: Vec<String> = model
        .channels()
        .iter()
        .map(|c| match c.kind() {
            BandKind::Panchromatic => format!("{}:pan", c.name()),
            BandKind::Selective => c.name().to_string(),
        })
        .collect();
    check_names(&names)?;
    let mut out = format!("wavelength,{}\n", names.join(","));
    for (i, w) in axis.samples().iter().enumerate() {
        out.push_str(&fmt9(*w));
        for c in model.channels() {
            out.push(',');
            out.push_str(&fmt9(c.response()[i]));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_curves(model: &SensitivityModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), curves_to_string(model)?.as_bytes())
}

// ---------------------------------------------------------------------------
// endmembers

pub fn endmembers_to_string(set: &EndmemberSet, kinds: &[BandKind]) -> Result<String> {
    if kinds.len() != set.axis().len() {
        return Err(Error::Shape(format!("{} band kinds for {} bands", kinds.len(), set.axis().len())));
    }
    let names: Vec<String> = (0..set.len()).map(|k| set.name(k)).collect();
    check_names(&names)?;
    let mut out = format!("wavelength,kind,{}\n", names.join(","));
    for (b, w) in set.axis().samples().iter().enumerate() {
        out.push_str(&fmt9(*w));
        out.push(',');
        out.push_str(kind_tag(kinds[b]));
        for k in 0..set.len() {
            out.push(',');
            out.push_str(&fmt9(set.signature(k)[b]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Endmembers and per-band kinds (all selective when the file has no
/// `kind` column).
pub fn parse_endmembers(text: &str, path: &Path) -> Result<(EndmemberSet, Vec<BandKind>)> {
    let table = split_table(text, path)?;
    let has_kind = table.header.get(1).map(|h| h == "kind").unwrap_or(false);
    let first = if has_kind { 2 } else { 1 };
    if table.header.len() <= first {
        return Err(Error::format(path, Position::Line(table.header_line), "no endmember columns"));
    }
    let axis = wavelength_column(&table, path)?;
    let kinds = if has_kind {
        table
            .rows
            .iter()
            .map(|(no, cells)| {
                parse_kind(&cells[1]).ok_or_else(|| Error::format(path, Position::Line(*no), format!("unknown band kind '{}'", cells[1])))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![BandKind::Selective; axis.len()]
    };
    let sigs = (first..table.header.len())
        .map(|c| numeric_column(&table, c, path, "endmember value"))
        .collect::<Result<Vec<_>>>()?;
    let names = table.header[first..].to_vec();
    let set = EndmemberSet::new(axis, sigs)
        .and_then(|s| s.with_names(names))
        .map_err(|e| Error::format(path, Position::Line(table.header_line), e.to_string()))?;
    Ok((set, kinds))
}

pub fn write_endmembers(set: &EndmemberSet, kinds: &[BandKind], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), endmembers_to_string(set, kinds)?.as_bytes())
}

pub fn read_endmembers(path: impl AsRef<Path>) -> Result<(EndmemberSet, Vec<BandKind>)> {
    let path = path.as_ref();
    parse_endmembers(&read_text(path)?, path)
}

/// Plot-ready table: wavelength then one column per named series, with
/// panchromatic bands dropped unless `include_pan`.
pub fn spectra_table_to_string(
    axis: &WavelengthAxis,
    kinds: &[BandKind],
    series: &[(String, Vec<f64>)],
    include_pan: bool,
) -> Result<String> {
    let names: Vec<String> = series.iter().map(|s| s.0.clone()).collect();
    check_names(&names)?;
    if kinds.len() != axis.len() || series.iter().any(|s| s.1.len() != axis.len()) {
        return Err(Error::Shape("spectra table series do not match the axis".into()));
    }
    let mut out = String::from("wavelength");
    for n in &names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (b, w) in axis.samples().iter().enumerate() {
        if kinds[b].is_panchromatic() && !include_pan {
            continue;
        }
        out.push_str(&fmt9(*w));
        for s in series {
            out.push(',');
            out.push_str(&fmt9(s.1[b]));
        }
        out.push('\n');
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// abundances

/// Rows of fractions with identifiers, as stored in an abundance file.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceTable {
    pub ids: Vec<String>,
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Image shape, when the rows are the pixels of a cube.
    pub shape: Option<(usize, usize)>,
    pub sum_to_one: bool,
}

impl AbundanceTable {
    pub fn from_field(field: &AbundanceField, names: &[String]) -> Result<Self> {
        if names.len() != field.endmember_count() {
            return Err(Error::Shape(format!("{} names for {} endmembers", names.len(), field.endmember_count())));
        }
        Ok(AbundanceTable {
            ids: (0..field.num_pixels()).map(|j| j.to_string()).collect(),
            names: names.to_vec(),
            rows: field.rows().map(|r| r.to_vec()).collect(),
            shape: Some((field.width(), field.height())),
            sum_to_one: field.sum_to_one(),
        })
    }

    /// Image-shaped field; a table without a shape is treated as `n x 1`.
    pub fn to_field(&self) -> Result<AbundanceField> {
        let (w, h) = self.shape.unwrap_or((self.rows.len(), 1));
        let p = self.names.len();
        let flat: Vec<f64> = self.rows.iter().flatten().copied().collect();
        AbundanceField::new(w, h, p, flat, self.sum_to_one)
    }

    /// Reorder columns so that column `k` moves to `perm[k]`.
    pub fn permuted(&self, perm: &[usize], names: Vec<String>) -> Result<Self> {
        let p = self.names.len();
        if perm.len() != p || names.len() != p {
            return Err(Error::Shape("permutation does not match endmember count".into()));
        }
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut out = vec![0.0; p];
                for (k, &dst) in perm.iter().enumerate() {
                    out[dst] = r[k];
                }
                out
            })
            .collect();
        Ok(AbundanceTable {
            ids: self.ids.clone(),
            names,
            rows,
            shape: self.shape,
            sum_to_one: self.sum_to_one,
        })
    }
}

pub fn abundances_to_string(table: &AbundanceTable) -> Result<String> {
    check_names(&table.names)?;
    if table.ids.len() != table.rows.len() {
        return Err(Error::Shape("abundance ids and rows differ in count".into()));
    }
    let mut out = String::new();
    if let Some((w, h)) = table.shape {
        out.push_str(&format!("# width={w} height={h} sum_to_one={}\n", u8::from(table.sum_to_one)));
    } else if table.sum_to_one {
        out.push_str("# sum_to_one=1\n");
    }
    out.push_str("id,");
    out.push_str(&table.names.join(","));
    out.push('\n');
    for (id, row) in table.ids.iter().zip(&table.rows) {
        if id.contains(',') || id.is_empty() {
            return Err(Error::Config(format!("identifier '{id}' cannot be written to CSV")));
        }
        out.push_str(id);
        for v in row {
            out.push(',');
            out.push_str(&fmt9(*v));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_abundances(text: &str, path: &Path) -> Result<AbundanceTable> {
    let table = split_table(text, path)?;
    if table.header.len() < 2 {
        return Err(Error::format(path, Position::Line(table.header_line), "need an id column and at least one endmember"));
    }
    let mut shape = (None, None);
    let mut sum_to_one = false;
    for c in &table.comments {
        for kv in c.split_whitespace() {
            if let Some((k, v)) = kv.split_once('=') {
                match k {
                    "width" => shape.0 = v.parse::<usize>().ok(),
                    "height" => shape.1 = v.parse::<usize>().ok(),
                    "sum_to_one" => sum_to_one = v == "1" || v == "true",
                    _ => {}
                }
            }
        }
    }
    let names = table.header[1..].to_vec();
    let mut ids = Vec::with_capacity(table.rows.len());
    let mut rows = Vec::with_capacity(table.rows.len());
    for (no, cells) in &table.rows {
        ids.push(cells[0].clone());
        let mut row = Vec::with_capacity(names.len());
        for c in &cells[1..] {
            let v = parse_number(c, path, *no, "fraction")?;
            if v < 0.0 {
                return Err(Error::format(path, Position::Line(*no), format!("negative fraction {v}")));
            }
            row.push(v);
        }
        rows.push(row);
    }
    let shape = match shape {
        (Some(w), Some(h)) => {
            if w.checked_mul(h) != Some(rows.len()) {
                return Err(Error::format(
                    path,
                    Position::Line(table.header_line),
                    format!("shape {w}x{h} does not match {} rows", rows.len()),
                ));
            }
            Some((w, h))
        }
        _ => None,
    };
    Ok(AbundanceTable {
        ids,
        names,
        rows,
        shape,
        sum_to_one,
    })
}

pub fn write_abundances(table: &AbundanceTable, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), abundances_to_string(table)?.as_bytes())
}

pub fn read_abundances(path: impl AsRef<Path>) -> Result<AbundanceTable> {
    let path = path.as_ref();
    parse_abundances(&read_text(path)?, path)
}

// ---------------------------------------------------------------------------
// abundance maps

/// `round(255 * clamp(f, 0, 1))` with halves rounded up.
pub fn gray_level(fraction: f64) -> u8 {
    (255.0 * fraction.clamp(0.0, 1.0) + 0.5).floor() as u8
}

pub fn pgm_bytes(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| gray_level(v)));
    out
}

/// Parse a binary PGM written by [`pgm_bytes`]: `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, Position::Byte(pos as u64), "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::format(path, Position::Byte(0), "not an 8-bit binary PGM"));
    }
    let w: usize = fields[1].parse().map_err(|_| Error::format(path, Position::Byte(3), "bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| Error::format(path, Position::Byte(3), "bad height"))?;
    let pixels = bytes.get(pos..).unwrap_or_default();
    if Some(pixels.len()) != w.checked_mul(h) {
        return Err(Error::format(
            path,
            Position::Byte(pos as u64),
            format!("{} pixel bytes, expected {w}x{h}", pixels.len()),
        ));
    }
    Ok((w, h, pixels.to_vec()))
}

fn file_stem_for(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with('.') {
        format!("em{s}")
    } else {
        s
    }
}

/// One grayscale map per endmember, named after the endmember.
pub fn write_abundance_maps(field: &AbundanceField, names: &[String], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if names.len() != field.endmember_count() {
        return Err(Error::Shape(format!("{} names for {} endmembers", names.len(), field.endmember_count())));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut used = std::collections::HashSet::new();
    let mut written = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let mut stem = file_stem_for(name);
        if !used.insert(stem.clone()) {
            stem = format!("{stem}_{}", k + 1);
            used.insert(stem.clone());
        }
        let path = dir.join(format!("{stem}.pgm"));
        write_atomic(&path, &pgm_bytes(field.width(), field.height(), &field.map(k)))?;
        written.push(path);
    }
    Ok(written)
}
