use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::cholesky2;

/// Generative parameters of one defect class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class_id: usize,
    pub name: String,
    pub mu: [f64; 2],
    pub sigma: [[f64; 2]; 2],
    pub nominal_count: usize,
}

impl ClassSpec {
    pub fn new(class_id: usize, name: &str, mu: [f64; 2], var: [f64; 2], nominal_count: usize) -> Self {
        ClassSpec {
            class_id,
            name: name.to_string(),
            mu,
            sigma: [[var[0], 0.0], [0.0, var[1]]],
            nominal_count,
        }
    }

    /// Sets the off-diagonal term to `rho·σx·σy`.
    pub fn with_correlation(mut self, rho: f64) -> Self {
        let cov = rho * (self.sigma[0][0] * self.sigma[1][1]).sqrt();
        self.sigma[0][1] = cov;
        self.sigma[1][0] = cov;
        self
    }

    pub fn std(&self) -> [f64; 2] {
        [self.sigma[0][0].sqrt(), self.sigma[1][1].sqrt()]
    }

    pub fn validate(&self) -> Result<()> {
        cholesky2(self.sigma).map(|_| ())
    }
}

/// The five drilling-pattern classes: counts, means and axis variances of
/// the recorded hole positions.
pub fn ase_catalog() -> Vec<ClassSpec> {
    vec![
        ClassSpec::new(0, "Type-0 (normal)", [0.04, -0.05], [3.71, 3.52], 225),
        ClassSpec::new(1, "Type-1 (defective)", [2.73, 0.59], [7.38, 5.52], 92),
        ClassSpec::new(2, "Type-2 (defective)", [6.43, -3.21], [8.27, 8.63], 44),
        ClassSpec::new(3, "Type-3 (defective)", [-1.10, 0.65], [8.14, 6.44], 50),
        ClassSpec::new(4, "Type-4 (defective)", [-0.21, -0.01], [9.44, 8.77], 44),
    ]
}

pub fn validate_catalog(catalog: &[ClassSpec]) -> Result<()> {
    if catalog.is_empty() {
        return Err(Error::Config("empty class catalog".into()));
    }
    for (i, spec) in catalog.iter().enumerate() {
        spec.validate()?;
        if catalog[..i].iter().any(|s| s.class_id == spec.class_id) {
            return Err(Error::Config(format!("duplicate class id {}", spec.class_id)));
        }
        if spec.class_id >= catalog.len() {
            return Err(Error::Config(format!(
                "class ids must be 0..{}, got {}",
                catalog.len(),
                spec.class_id
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_totals() {
        let c = ase_catalog();
        validate_catalog(&c).unwrap();
        assert_eq!(c.iter().map(|s| s.nominal_count).sum::<usize>(), 455);
    }

    #[test]
    fn correlation_keeps_psd() {
        let s = ase_catalog()[2].clone().with_correlation(-0.4);
        s.validate().unwrap();
        assert!(s.sigma[0][1] < 0.0 && s.sigma[0][1] == s.sigma[1][0]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut c = ase_catalog();
        c[1].class_id = 0;
        assert!(validate_catalog(&c).is_err());
    }
}
