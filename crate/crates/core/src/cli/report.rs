use std::io::{self, Write};

use crate::model::Violation;

/// A report value and its text form.
pub trait Render {
    fn render(&self) -> String;
}

impl Render for f64 {
    /// Exponent form outside `[1e-4, 1e15)`; both forms round-trip.
    fn render(&self) -> String {
        let a = self.abs();
        if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
            format!("{self}")
        } else {
            format!("{self:e}")
        }
    }
}

macro_rules! render_display {
    ($($t:ty),*) => {
        $(impl Render for $t {
            fn render(&self) -> String {
                self.to_string()
            }
        })*
    };
}

render_display!(usize, u64, bool, str, String, Violation);

impl<T: Render + ?Sized> Render for &T {
    fn render(&self) -> String {
        (**self).render()
    }
}

/// Ordered `key=value` summary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, key: impl Into<String>, value: impl Render) -> &mut Self {
        self.entries.push((key.into(), value.render()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(out, "{k}={v}")?;
        }
        Ok(())
    }

    /// Keys padded to a common width.
    pub fn table(&self) -> String {
        let width = self.entries.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        self.entries
            .iter()
            .map(|(k, v)| format!("{k:<width$}  {v}\n"))
            .collect()
    }

    /// Parses the output of [`Report::write_to`].
    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self { entries }
    }
}
