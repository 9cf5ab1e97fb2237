//! Points and minimum-image displacements on the unit torus [0,1)^d.

use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Spatial dimension. Static Coulomb energies support both; field dynamics
/// are two-dimensional.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dim {
    Two,
    Three,
}

impl Dim {
    #[inline]
    pub fn as_usize(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }

    pub fn from_usize(d: usize) -> Option<Dim> {
        match d {
            2 => Some(Dim::Two),
            3 => Some(Dim::Three),
            _ => None,
        }
    }
}

/// A point on the unit torus; coordinates are kept reduced mod 1.
/// The third lane is zero in dimension two.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusPoint<T> {
    coords: [T; 3],
    dim: Dim,
}

#[inline]
fn wrap_unit<T: Real>(x: T) -> T {
    let y = x - x.floor();
    // floor can round to 1.0 for tiny negatives
    if y >= T::one() {
        y - T::one()
    } else {
        y
    }
}

impl<T: Real> TorusPoint<T> {
    pub fn new(coords: &[T], dim: Dim) -> Self {
        assert_eq!(coords.len(), dim.as_usize(), "coordinate count must match dimension");
        let mut c = [T::zero(); 3];
        for (lane, &x) in c.iter_mut().zip(coords) {
            *lane = wrap_unit(x);
        }
        TorusPoint { coords: c, dim }
    }

    pub fn origin(dim: Dim) -> Self {
        TorusPoint { coords: [T::zero(); 3], dim }
    }

    #[inline]
    pub fn dim(&self) -> Dim {
        self.dim
    }

    #[inline]
    pub fn coords(&self) -> &[T] {
        &self.coords[..self.dim.as_usize()]
    }

    /// Translate by `shift` (wrapping back into the unit cell).
    pub fn translated(&self, shift: &[T]) -> Self {
        let mut c = [T::zero(); 3];
        for i in 0..self.dim.as_usize() {
            c[i] = wrap_unit(self.coords[i] + shift[i]);
        }
        TorusPoint { coords: c, dim: self.dim }
    }

    /// Minimum-image displacement self - other.
    pub fn displacement_to(&self, other: &TorusPoint<T>) -> Displacement<T> {
        assert_eq!(self.dim, other.dim);
        let mut v = [T::zero(); 3];
        for i in 0..self.dim.as_usize() {
            v[i] = min_image(self.coords[i] - other.coords[i]);
        }
        Displacement::from_lanes(v, self.dim)
    }
}

/// Reduce a coordinate difference to its minimum-image representative in
/// [-1/2, 1/2).
#[inline]
pub fn min_image<T: Real>(t: T) -> T {
    let mut r = t - t.round();
    let half = T::from_f64(0.5).unwrap();
    if r >= half {
        r -= T::one();
    }
    if r < -half {
        r += T::one();
    }
    r
}

/// Minimum-image difference vector with cached Euclidean norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Displacement<T> {
    vector: [T; 3],
    norm: T,
    dim: Dim,
}

impl<T: Real> Displacement<T> {
    /// Build from a raw difference (reduced to minimum image per coordinate).
    pub fn new(diff: &[T], dim: Dim) -> Self {
        assert_eq!(diff.len(), dim.as_usize());
        let mut v = [T::zero(); 3];
        for i in 0..dim.as_usize() {
            v[i] = min_image(diff[i]);
        }
        Self::from_lanes(v, dim)
    }

    #[inline]
    fn from_lanes(v: [T; 3], dim: Dim) -> Self {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        Displacement { vector: v, norm, dim }
    }

    #[inline]
    pub fn vector(&self) -> &[T] {
        &self.vector[..self.dim.as_usize()]
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.norm
    }

    #[inline]
    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn negated(&self) -> Self {
        let mut v = [T::zero(); 3];
        for i in 0..self.dim.as_usize() {
            v[i] = -self.vector[i];
            // -(-1/2) = 1/2 must wrap back to the canonical representative
            v[i] = min_image(v[i]);
        }
        Self::from_lanes(v, self.dim)
    }
}
