//! Synthetic ground-truth conductivity phantoms.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::ConductivityField;
use crate::mesh::Mesh;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InclusionSize {
    Scalar(f64),
    Pair([f64; 2]),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Inclusion {
    /// "disk" (size = radius) or "rect" (size = side length or [w, h])
    pub shape: String,
    pub center: [f64; 2],
    pub size: InclusionSize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phantom {
    pub background: f64,
    #[serde(default)]
    pub inclusions: Vec<Inclusion>,
}

impl Phantom {
    pub fn from_json(text: &str) -> Result<Phantom> {
        let p: Phantom = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("phantom serialization cannot fail")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.background > 0.0) {
            return Err(Error::config("phantom background conductivity must be positive"));
        }
        for (i, inc) in self.inclusions.iter().enumerate() {
            if !(inc.value > 0.0) {
                return Err(Error::config(format!("inclusion {i} value must be positive")));
            }
            match (inc.shape.as_str(), &inc.size) {
                ("disk", InclusionSize::Scalar(r)) if *r > 0.0 => {}
                ("rect", InclusionSize::Scalar(s)) if *s > 0.0 => {}
                ("rect", InclusionSize::Pair([w, h])) if *w > 0.0 && *h > 0.0 => {}
                _ => {
                    return Err(Error::config(format!(
                        "inclusion {i}: shape {:?} with invalid size",
                        inc.shape
                    )))
                }
            }
        }
        Ok(())
    }

    fn contains(inc: &Inclusion, p: [f64; 2]) -> bool {
        let dx = p[0] - inc.center[0];
        let dy = p[1] - inc.center[1];
        match (inc.shape.as_str(), &inc.size) {
            ("disk", InclusionSize::Scalar(r)) => dx * dx + dy * dy <= r * r,
            ("rect", InclusionSize::Scalar(s)) => dx.abs() <= s / 2.0 && dy.abs() <= s / 2.0,
            ("rect", InclusionSize::Pair([w, h])) => dx.abs() <= w / 2.0 && dy.abs() <= h / 2.0,
            _ => false,
        }
    }

    /// Rasterizes to per-element conductivity by centroid membership (later
    /// inclusions override earlier ones). Errors if some inclusion covers no
    /// element, which indicates it lies outside the meshed domain.
    pub fn to_field(&self, mesh: &Mesh) -> Result<ConductivityField> {
        self.validate()?;
        let n = mesh.n_elements();
        let mut values = DVector::from_element(n, self.background);
        let mut hit = vec![false; self.inclusions.len()];
        for e in 0..n {
            let c = mesh.element_centroid(e);
            for (i, inc) in self.inclusions.iter().enumerate() {
                if Self::contains(inc, c) {
                    values[e] = inc.value;
                    hit[i] = true;
                }
            }
        }
        if let Some(i) = hit.iter().position(|&h| !h) {
            return Err(Error::config(format!(
                "inclusion {i} does not cover any mesh element (outside the domain?)"
            )));
        }
        ConductivityField::new(values)
    }

    /// Elements whose truth value equals the background and whose centroid is
    /// at least `margin` away from every inclusion (used for background
    /// statistics in comparisons).
    pub fn background_elements(&self, mesh: &Mesh, margin: f64) -> Vec<usize> {
        (0..mesh.n_elements())
            .filter(|&e| {
                let c = mesh.element_centroid(e);
                self.inclusions.iter().all(|inc| {
                    let dx = c[0] - inc.center[0];
                    let dy = c[1] - inc.center[1];
                    let dist = (dx * dx + dy * dy).sqrt();
                    let reach = match (&inc.size, inc.shape.as_str()) {
                        (InclusionSize::Scalar(r), "disk") => *r,
                        (InclusionSize::Scalar(s), _) => s * std::f64::consts::SQRT_2 / 2.0,
                        (InclusionSize::Pair([w, h]), _) => 0.5 * (w * w + h * h).sqrt(),
                    };
                    dist > reach + margin
                })
            })
            .collect()
    }
}
