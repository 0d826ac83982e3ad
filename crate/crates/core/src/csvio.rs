//! CSV output helpers: every file starts with a schema comment line.

use std::io::Write;

use crate::error::Result;

/// Writes the schema comment plus header, then returns the writer for
/// row-by-row appends.
pub fn begin_csv<W: Write>(mut w: W, schema: &str, header: &str) -> Result<W> {
    writeln!(w, "# {schema}")?;
    writeln!(w, "{header}")?;
    Ok(w)
}
