//! CSV cells and atomic file output.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

/// Six significant digits, trailing zeros trimmed. Non-finite values print as
/// `nan` / `inf` / `-inf`.
pub fn real(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    // round first so 999999.7 is seen as 1e6
    let rounded: f64 = format!("{x:.5e}").parse().expect("float round-trips");
    let exp = rounded.abs().log10().floor() as i32;
    if !(-5..=15).contains(&exp) {
        return format!("{rounded:.5e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    let mut s = format!("{rounded:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

pub fn opt_real(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

pub struct Csv {
    columns: Vec<&'static str>,
    body: String,
}

impl Csv {
    pub fn new(columns: &[&'static str]) -> Self {
        let mut body = columns.join(",");
        body.push('\n');
        Csv { columns: columns.to_vec(), body }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.columns.len(), "row width");
        self.body.push_str(&cells.join(","));
        self.body.push('\n');
    }

    pub fn into_string(self) -> String {
        self.body
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// `--out` if given, stdout otherwise.
pub fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, contents),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}
