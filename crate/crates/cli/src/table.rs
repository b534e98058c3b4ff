//! Per-horizon error tables: one row per model variant, one column per horizon.
//!
//! On disk: `# key=value` metadata lines, then a `variant,<ms>...` header and
//! one row per variant. Numbers use Rust's shortest round-trip formatting.

use std::path::Path;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub metadata: Vec<(String, String)>,
    pub horizons_ms: Vec<f64>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl ResultTable {
    pub fn new(horizons_ms: &[f64]) -> Self {
        Self {
            metadata: Vec::new(),
            horizons_ms: horizons_ms.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push_row(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.horizons_ms.len() {
            return Err(CliError::validation(format!(
                "row has {} values for {} horizons",
                values.len(),
                self.horizons_ms.len()
            )));
        }
        self.rows.push((name.into(), values));
        Ok(())
    }

    pub fn row(&self, name: &str) -> Option<&[f64]> {
        self.rows.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn get_meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.metadata {
            s.push_str(&format!("# {k}={v}\n"));
        }
        s.push_str("variant");
        for h in &self.horizons_ms {
            s.push_str(&format!(",{h}"));
        }
        s.push('\n');
        for (name, vals) in &self.rows {
            s.push_str(name);
            for v in vals {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| CliError::validation(format!("result table line {line}: {msg}"));
        let mut table = ResultTable::new(&[]);
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if let Some(meta) = line.strip_prefix("# ") {
                let (k, v) = meta.split_once('=').ok_or_else(|| bad(n, "metadata without `=`"))?;
                table.metadata.push((k.into(), v.into()));
                continue;
            }
            let mut fields = line.split(',');
            let first = fields.next().unwrap_or_default();
            let nums: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|_| bad(n, &format!("not a number: `{f}`"))))
                .collect::<Result<_>>()?;
            if !header_seen {
                if first != "variant" {
                    return Err(bad(n, "expected `variant` header"));
                }
                table.horizons_ms = nums;
                header_seen = true;
            } else {
                table
                    .push_row(first, nums)
                    .map_err(|_| bad(n, "wrong number of columns"))?;
            }
        }
        if !header_seen {
            return Err(bad(0, "missing header"));
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = ResultTable::new(&[80.0, 1000.0]);
        t.meta("seed", 3);
        t.push_row("model", vec![1.5, 0.1 + 0.2]).unwrap();
        assert_eq!(t.to_csv(), "# seed=3\nvariant,80,1000\nmodel,1.5,0.30000000000000004\n");
    }

    #[test]
    fn round_trip_is_exact() {
        let mut t = ResultTable::new(&[80.0, 160.0, 562.5]);
        t.meta("config_hash", "abc").meta("wall_time_s", 1.25);
        t.push_row("a", vec![1.0 / 3.0, 2e-300, 1e10]).unwrap();
        t.push_row("zero-velocity", vec![0.0; 3]).unwrap();
        assert_eq!(ResultTable::parse(&t.to_csv()).unwrap(), t);
    }

    #[test]
    fn ragged_row_is_rejected() {
        let mut t = ResultTable::new(&[80.0]);
        assert!(t.push_row("x", vec![1.0, 2.0]).is_err());
        assert!(ResultTable::parse("variant,80\nx,1,2\n").is_err());
        assert!(ResultTable::parse("# a=1\n").is_err());
    }
}
