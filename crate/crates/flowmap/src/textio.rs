//! Small line-oriented parsing helper shared by the plain-text serializers.

use crate::error::{Error, Result};

/// Cursor over the lines of a text artifact, tracking line numbers for errors.
pub(crate) struct LineCursor<'a> {
    what: &'static str,
    lines: std::str::Lines<'a>,
    pos: usize,
}

impl<'a> LineCursor<'a> {
    pub fn new(what: &'static str, text: &'a str) -> Self {
        LineCursor {
            what,
            lines: text.lines(),
            pos: 0,
        }
    }

    /// Next non-empty, non-comment line.
    pub fn next_line(&mut self) -> Result<&'a str> {
        loop {
            self.pos += 1;
            match self.lines.next() {
                Some(line) => {
                    let trimmed = line.trim();
                    if !trimmed.is_empty() && !trimmed.starts_with('#') {
                        return Ok(trimmed);
                    }
                }
                None => {
                    return Err(Error::format(self.what, self.pos, "unexpected end of file"))
                }
            }
        }
    }

    /// Parse the next line as whitespace-separated values of one type.
    pub fn next_values<T: std::str::FromStr>(&mut self) -> Result<Vec<T>> {
        let line = self.next_line()?;
        let what = self.what;
        let lineno = self.pos;
        line.split_whitespace()
            .map(|tok| {
                tok.parse()
                    .map_err(|_| Error::format(what, lineno, format!("cannot parse `{tok}`")))
            })
            .collect()
    }

    /// Parse the next line expecting exactly `count` values.
    pub fn next_exact<T: std::str::FromStr>(&mut self, count: usize) -> Result<Vec<T>> {
        let vals = self.next_values()?;
        if vals.len() != count {
            return Err(Error::format(
                self.what,
                self.pos,
                format!("expected {count} values, found {}", vals.len()),
            ));
        }
        Ok(vals)
    }

    pub fn error(&self, detail: impl Into<String>) -> Error {
        Error::format(self.what, self.pos, detail)
    }
}
