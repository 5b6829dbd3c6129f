//! Flat parameter storage with a named segment layout.

use std::fmt;

use crate::error::{Error, Result};

/// One named block of parameters, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Segment {
            name: name.into(),
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered list of segments describing how a flat vector is carved up.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        for s in &segments {
            if s.shape.is_empty() || s.shape.contains(&0) {
                return Err(Error::Layout(format!(
                    "segment {} has non-positive shape {:?}",
                    s.name, s.shape
                )));
            }
        }
        Ok(Layout { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Total number of scalars described by the layout.
    pub fn size(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    /// `(segment, offset)` pairs in storage order.
    pub fn offsets(&self) -> impl Iterator<Item = (&Segment, usize)> {
        self.segments.iter().scan(0usize, |off, s| {
            let start = *off;
            *off += s.len();
            Some((s, start))
        })
    }

    fn locate(&self, name: &str) -> Option<(&Segment, usize)> {
        self.offsets().find(|(s, _)| s.name == name)
    }

    /// Name of the segment owning flat index `idx`.
    pub fn segment_of(&self, idx: usize) -> Option<&str> {
        self.offsets()
            .find(|(s, off)| idx >= *off && idx < off + s.len())
            .map(|(s, _)| s.name.as_str())
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .segments
            .iter()
            .map(|s| format!("{}{:?}", s.name, s.shape))
            .collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// A flat vector of learner parameters tagged with its layout.
///
/// Arithmetic between two vectors is only defined when their layouts are
/// identical; every constructor rejects non-finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.size() {
            return Err(Error::Layout(format!(
                "{} values for layout {} of size {}",
                values.len(),
                layout,
                layout.size()
            )));
        }
        let p = ParamVector { values, layout };
        p.check_finite()?;
        Ok(p)
    }

    pub fn zeros(layout: Layout) -> Self {
        ParamVector {
            values: vec![0.0; layout.size()],
            layout,
        }
    }

    /// Single-segment vector named `theta`; handy for scalar surrogates.
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let layout = Layout::new(vec![Segment::new("theta", vec![values.len()])])?;
        ParamVector::new(values.to_vec(), layout)
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector::zeros(self.layout.clone())
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

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .locate(name)
            .map(|(s, off)| &self.values[off..off + s.len()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let (len, off) = self.layout.locate(name).map(|(s, off)| (s.len(), off))?;
        Some(&mut self.values[off..off + len])
    }

    pub fn ensure_same_layout(&self, other: &ParamVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Layout(format!("{} vs {}", self.layout, other.layout)));
        }
        Ok(())
    }

    /// Fails with the name of the first segment holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            let seg = self.layout.segment_of(i).unwrap_or("?");
            return Err(Error::numeric(
                seg,
                format!("non-finite value {} at index {i}", self.values[i]),
            ));
        }
        Ok(())
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &ParamVector) -> Result<()> {
        self.ensure_same_layout(other)?;
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &ParamVector) -> Result<()> {
        self.ensure_same_layout(other)?;
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += y;
        }
        Ok(())
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.ensure_same_layout(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x - y).collect();
        Ok(ParamVector {
            values,
            layout: self.layout.clone(),
        })
    }

    pub fn scale(&self, a: f64) -> ParamVector {
        ParamVector {
            values: self.values.iter().map(|x| a * x).collect(),
            layout: self.layout.clone(),
        }
    }

    /// `self - a * dir`, the shape of every descent step in this crate.
    pub fn step(&self, a: f64, dir: &ParamVector) -> Result<ParamVector> {
        self.ensure_same_layout(dir)?;
        let values = self.values.iter().zip(&dir.values).map(|(x, g)| x - a * g).collect();
        Ok(ParamVector {
            values,
            layout: self.layout.clone(),
        })
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.ensure_same_layout(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(x, y)| x * y).sum())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Cosine of the angle between two vectors; zero if either is zero.
    pub fn cosine(&self, other: &ParamVector) -> Result<f64> {
        let d = self.dot(other)?;
        let n = self.norm() * other.norm();
        Ok(if n == 0.0 { 0.0 } else { d / n })
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
