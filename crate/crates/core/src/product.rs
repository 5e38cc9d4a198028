//! Product-of-spheres latent manifold: D ambient dimensions split into N
//! contiguous chunks of dimension d', each living on its own sphere. The
//! concatenated latent has norm sqrt(N) by construction and must not be
//! re-normalized downstream.

use crate::error::{Error, Result};
use crate::power_spherical::{
    kl_to_uniform, rsample, PowerSphericalParams, SampleTrace,
};
use crate::sphere::{project_to_sphere, slerp, SpherePoint};
use crate::util::norm2;
use rand::Rng;

/// Shape of the product manifold: N spheres of dimension d' each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProductSphereSpec {
    n_spheres: usize,
    sphere_dim: usize,
}

impl ProductSphereSpec {
    pub fn new(n_spheres: usize, sphere_dim: usize) -> Result<Self> {
        if n_spheres == 0 {
            return Err(Error::InvalidDimension { d: 0 });
        }
        if sphere_dim < 2 {
            return Err(Error::InvalidDimension { d: sphere_dim });
        }
        Ok(Self {
            n_spheres,
            sphere_dim,
        })
    }

    pub fn n_spheres(&self) -> usize {
        self.n_spheres
    }

    pub fn sphere_dim(&self) -> usize {
        self.sphere_dim
    }

    pub fn total_dim(&self) -> usize {
        self.n_spheres * self.sphere_dim
    }
}

/// A point on the product manifold: N unit vectors of dimension d'.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductLatent {
    parts: Vec<SpherePoint>,
}

impl ProductLatent {
    pub fn new(parts: Vec<SpherePoint>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidDimension { d: 0 });
        }
        let d = parts[0].dim();
        for p in &parts[1..] {
            if p.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.dim(),
                });
            }
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &[SpherePoint] {
        &self.parts
    }

    pub fn spec(&self) -> ProductSphereSpec {
        ProductSphereSpec {
            n_spheres: self.parts.len(),
            sphere_dim: self.parts[0].dim(),
        }
    }

    /// Concatenation [z1, ..., zN]; its norm is sqrt(N), not 1.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec().total_dim());
        for p in &self.parts {
            out.extend_from_slice(p.coords());
        }
        out
    }
}

/// Per-sphere distribution parameters over a common product spec.
#[derive(Debug, Clone)]
pub struct ProductParams {
    per_sphere: Vec<PowerSphericalParams>,
}

impl ProductParams {
    pub fn new(per_sphere: Vec<PowerSphericalParams>) -> Result<Self> {
        if per_sphere.is_empty() {
            return Err(Error::InvalidDimension { d: 0 });
        }
        let d = per_sphere[0].dim();
        for p in &per_sphere[1..] {
            if p.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.dim(),
                });
            }
        }
        Ok(Self { per_sphere })
    }

    pub fn per_sphere(&self) -> &[PowerSphericalParams] {
        &self.per_sphere
    }

    pub fn spec(&self) -> ProductSphereSpec {
        ProductSphereSpec {
            n_spheres: self.per_sphere.len(),
            sphere_dim: self.per_sphere[0].dim(),
        }
    }
}

/// Splits a flat D-vector into N chunks and projects each to its sphere.
pub fn split(flat: &[f64], spec: &ProductSphereSpec) -> Result<ProductLatent> {
    if flat.len() != spec.total_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.total_dim(),
            got: flat.len(),
        });
    }
    let mut parts = Vec::with_capacity(spec.n_spheres);
    for (i, chunk) in flat.chunks_exact(spec.sphere_dim).enumerate() {
        if norm2(chunk) <= 1e-12 {
            return Err(Error::ZeroChunk { index: i });
        }
        parts.push(project_to_sphere(chunk)?);
    }
    Ok(ProductLatent { parts })
}

/// Total KL against the uniform product prior: the sum of per-sphere terms.
pub fn kl_total(p: &ProductParams) -> Result<f64> {
    let mut acc = 0.0;
    for ps in &p.per_sphere {
        acc += kl_to_uniform(ps)?;
    }
    Ok(acc)
}

/// A joint draw with the per-sphere traces needed for gradients.
#[derive(Debug, Clone)]
pub struct ProductSample {
    pub latent: ProductLatent,
    pub traces: Vec<SampleTrace>,
}

/// Independent reparameterized draw per sphere, in sphere order from one
/// stream, so a fixed seed reproduces the joint latent.
pub fn rsample_product<R: Rng + ?Sized>(p: &ProductParams, rng: &mut R) -> Result<ProductSample> {
    let mut parts = Vec::with_capacity(p.per_sphere.len());
    let mut traces = Vec::with_capacity(p.per_sphere.len());
    for ps in &p.per_sphere {
        let tr = rsample(ps, rng)?;
        parts.push(tr.z.clone());
        traces.push(tr);
    }
    Ok(ProductSample {
        latent: ProductLatent { parts },
        traces,
    })
}

/// Per-part geodesic interpolation; endpoints are exact.
pub fn slerp_product(a: &ProductLatent, b: &ProductLatent, t: f64) -> Result<ProductLatent> {
    if a.spec() != b.spec() {
        return Err(Error::DimensionMismatch {
            expected: a.spec().total_dim(),
            got: b.spec().total_dim(),
        });
    }
    let parts = a
        .parts
        .iter()
        .zip(&b.parts)
        .map(|(x, y)| slerp(x, y, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProductLatent { parts })
}
