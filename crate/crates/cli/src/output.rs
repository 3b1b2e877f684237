//! CSV and metadata writers. Every file opens with `# config_hash=<hex>`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

/// Float with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Csv {
    w: BufWriter<File>,
}

impl Csv {
    pub fn create(path: &Path, hash: &str, columns: &[&str]) -> io::Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# config_hash={hash}")?;
        writeln!(w, "{}", columns.join(","))?;
        w.flush()?;
        Ok(Csv { w })
    }

    /// Writes and flushes one row.
    pub fn row(&mut self, cells: &[String]) -> io::Result<()> {
        writeln!(self.w, "{}", cells.join(","))?;
        self.w.flush()
    }
}

pub fn write_text(path: &Path, hash: &str, body: &str) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# config_hash={hash}")?;
    w.write_all(body.as_bytes())?;
    w.flush()
}
