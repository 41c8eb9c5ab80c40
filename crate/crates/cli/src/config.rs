//! Flag parsing helpers, failure kinds and output formatting.

use jdr_core::{Error, FrequencyBudget, QuantTable};

/// Why a command stopped, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// A checked property did not hold.
    Assertion(String),
    /// Bad flags or flag values.
    Usage(String),
    /// Unreadable, malformed or incompatible input.
    Input(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Assertion(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Input(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Assertion(m) | Failure::Usage(m) | Failure::Input(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidBudget(_) | Error::InvalidQuant(_) => Failure::Usage(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

pub fn with_path(path: &str) -> impl Fn(Error) -> Failure + '_ {
    move |e| match Failure::from(e) {
        Failure::Input(m) => Failure::Input(format!("{path}: {m}")),
        other => other,
    }
}

pub fn read_file(path: &str) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::Input(format!("{path}: {e}")))
}

pub fn write_file(path: &str, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::Input(format!("{path}: {e}")))
}

pub fn parse_budget(n: usize) -> Result<FrequencyBudget, Failure> {
    FrequencyBudget::new(n).map_err(|_| Failure::Usage(format!("--budget {n} outside 1..=15")))
}

/// Resolves `--quant`: a builtin name or a file of 64 integers.
pub fn parse_quant(spec: &str) -> Result<QuantTable, Failure> {
    let usage = |m: String| Failure::Usage(format!("--quant {spec}: {m}"));
    match spec {
        "ones" => return Ok(QuantTable::ones()),
        "luma" => return Ok(QuantTable::annex_k_luma()),
        "chroma" => return Ok(QuantTable::annex_k_chroma()),
        _ => {}
    }
    if let Some(q) = spec.strip_prefix('q').and_then(|q| q.parse::<u8>().ok()) {
        return QuantTable::luma_quality(q).map_err(|e| usage(e.to_string()));
    }
    let text = std::fs::read_to_string(spec).map_err(|e| usage(format!("not a table name, and unreadable: {e}")))?;
    let values = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u16>().map_err(|_| usage(format!("`{t}` is not an integer"))))
        .collect::<Result<Vec<_>, _>>()?;
    QuantTable::new(&values).map_err(|e| usage(e.to_string()))
}

/// Fixed nine-significant-digit decimal rendering.
pub fn sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}
