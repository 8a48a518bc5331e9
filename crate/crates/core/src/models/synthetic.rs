use nalgebra::{DMatrix, DVector};

use super::{PtoMap, SolveCounts};
use crate::error::{check_dim, Error, Result};
use crate::sensitivity::Linearization;

/// `G(z) = J z + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub jacobian: DMatrix<f64>,
    pub offset: DVector<f64>,
}

/// `G_i(z) = c_i + J_i z + z^T T_i z / 2` with symmetric slices `T_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticMap {
    pub jacobian: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub slices: Vec<DMatrix<f64>>,
}

impl AffineMap {
    pub fn new(jacobian: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        check_dim("offset", offset.len(), jacobian.nrows())?;
        Ok(Self { jacobian, offset })
    }
}

impl QuadraticMap {
    pub fn new(jacobian: DMatrix<f64>, offset: DVector<f64>, slices: Vec<DMatrix<f64>>) -> Result<Self> {
        check_dim("offset", offset.len(), jacobian.nrows())?;
        check_dim("slices", slices.len(), jacobian.nrows())?;
        for t in &slices {
            let d = jacobian.ncols();
            if t.shape() != (d, d) || (t - t.transpose()).amax() > 1e-12 * t.amax().max(1.0) {
                return Err(Error::InvalidArgument("quadratic slices must be symmetric d x d".into()));
            }
        }
        Ok(Self { jacobian, offset, slices })
    }

    fn quad(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.slices.len(), self.slices.iter().map(|t| a.dot(&(t * b))))
    }
}

/// Exact derivatives of a polynomial map at a point.
pub struct PolyLinearization {
    point: DVector<f64>,
    value: DVector<f64>,
    jacobian: DMatrix<f64>,
    slices: Vec<DMatrix<f64>>,
}

impl Linearization for PolyLinearization {
    fn point(&self) -> &DVector<f64> {
        &self.point
    }

    fn value(&self) -> &DVector<f64> {
        &self.value
    }

    fn directional(
        &self,
        dz: &DVector<f64>,
        second: bool,
        counts: &mut SolveCounts,
    ) -> Result<(DVector<f64>, Option<DVector<f64>>)> {
        check_dim("direction", dz.len(), self.point.len())?;
        counts.sensitivity += 1 + second as u64;
        let h = second.then(|| self.second(dz, dz));
        Ok((&self.jacobian * dz, h))
    }

    fn jacobian_transpose_action(&self, y: &DVector<f64>, counts: &mut SolveCounts) -> Result<DVector<f64>> {
        counts.adjoint += 1;
        Ok(self.jacobian.transpose() * y)
    }

    fn hessian_bilinear(&self, a: &DVector<f64>, b: &DVector<f64>, counts: &mut SolveCounts) -> Result<DVector<f64>> {
        counts.sensitivity += 1;
        Ok(self.second(a, b))
    }
}

impl PolyLinearization {
    fn second(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        if self.slices.is_empty() {
            return DVector::zeros(self.value.len());
        }
        DVector::from_iterator(self.slices.len(), self.slices.iter().map(|t| a.dot(&(t * b))))
    }
}

impl PtoMap for AffineMap {
    fn param_dim(&self) -> usize {
        self.jacobian.ncols()
    }

    fn obs_dim(&self) -> usize {
        self.jacobian.nrows()
    }

    fn evaluate(&self, z: &DVector<f64>, counts: &mut SolveCounts) -> Result<DVector<f64>> {
        check_dim("parameter", z.len(), self.param_dim())?;
        counts.forward += 1;
        Ok(&self.jacobian * z + &self.offset)
    }

    fn linearize(&self, z: &DVector<f64>, counts: &mut SolveCounts) -> Result<Box<dyn Linearization + '_>> {
        let value = self.evaluate(z, counts)?;
        Ok(Box::new(PolyLinearization {
            point: z.clone(),
            value,
            jacobian: self.jacobian.clone(),
            slices: Vec::new(),
        }))
    }
}

impl PtoMap for QuadraticMap {
    fn param_dim(&self) -> usize {
        self.jacobian.ncols()
    }

    fn obs_dim(&self) -> usize {
        self.jacobian.nrows()
    }

    fn evaluate(&self, z: &DVector<f64>, counts: &mut SolveCounts) -> Result<DVector<f64>> {
        check_dim("parameter", z.len(), self.param_dim())?;
        counts.forward += 1;
        Ok(&self.offset + &self.jacobian * z + self.quad(z, z) * 0.5)
    }

    fn linearize(&self, z: &DVector<f64>, counts: &mut SolveCounts) -> Result<Box<dyn Linearization + '_>> {
        let value = self.evaluate(z, counts)?;
        let mut jacobian = self.jacobian.clone();
        for (i, t) in self.slices.iter().enumerate() {
            let row = t * z;
            for j in 0..jacobian.ncols() {
                jacobian[(i, j)] += row[j];
            }
        }
        Ok(Box::new(PolyLinearization { point: z.clone(), value, jacobian, slices: self.slices.clone() }))
    }
}
