use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named contiguous block inside a [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Flat parameter store with named segments.
///
/// Segments are contiguous, non-overlapping, and cover the values exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    segments: Vec<Segment>,
    values: Vec<f64>,
}

impl ParamVector {
    /// Zero-initialised vector with the given `(name, length)` layout.
    pub fn zeros(layout: &[(&str, usize)]) -> Result<Self> {
        let total = layout.iter().map(|(_, l)| l).sum();
        Self::from_layout(layout, vec![0.0; total])
    }

    pub fn from_layout(layout: &[(&str, usize)], values: Vec<f64>) -> Result<Self> {
        let mut segments = Vec::with_capacity(layout.len());
        let mut offset = 0;
        for (name, len) in layout {
            if segments.iter().any(|s: &Segment| s.name == *name) {
                return Err(Error::InvalidArgument(format!("duplicate segment name {name}")));
            }
            segments.push(Segment {
                name: (*name).to_string(),
                offset,
                len: *len,
            });
            offset += len;
        }
        if offset != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "layout covers {offset} values but {} were given",
                values.len()
            )));
        }
        Ok(Self { segments, values })
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: self.values.len(),
            });
        }
        Ok(Self {
            segments: self.segments.clone(),
            values,
        })
    }

    /// Checks that the segments tile the value buffer.
    pub fn validate(&self) -> Result<()> {
        let mut offset = 0;
        for (i, s) in self.segments.iter().enumerate() {
            if s.offset != offset {
                return Err(Error::Schema(format!("segment {} is not contiguous", s.name)));
            }
            if self.segments[..i].iter().any(|t| t.name == s.name) {
                return Err(Error::Schema(format!("duplicate segment {}", s.name)));
            }
            offset += s.len;
        }
        if offset != self.values.len() {
            return Err(Error::Schema("segments do not cover the values".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.offset..s.offset + s.len)
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.range(name).map(|r| &self.values[r])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.range(name).map(move |r| &mut self.values[r])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_tile_values() {
        let p = ParamVector::from_layout(&[("a", 2), ("b", 3)], vec![1., 2., 3., 4., 5.]).unwrap();
        assert_eq!(p.segment("a").unwrap(), &[1., 2.]);
        assert_eq!(p.segment("b").unwrap(), &[3., 4., 5.]);
        assert!(p.segment("c").is_none());
        p.validate().unwrap();
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(ParamVector::from_layout(&[("a", 2)], vec![1.0]).is_err());
        assert!(ParamVector::zeros(&[("a", 1), ("a", 1)]).is_err());
    }
}
