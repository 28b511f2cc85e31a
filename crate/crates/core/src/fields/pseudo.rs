use super::{check_point, FieldError};
use crate::constants::ELEMENTARY_CHARGE;
use crate::geometry::TrapModel;
use crate::scalar::Real;

/// Rf field amplitude (V/m) at `p`.
pub fn rf_field<T: Real>(model: &TrapModel<T>, p: [T; 3]) -> Result<[T; 3], FieldError> {
    check_point(p)?;
    let v = model.rf_drive().amplitude;
    let mut e = [T::zero(); 3];
    for i in model.rf_indices() {
        let g = model.boundary(i).gradient(p);
        for k in 0..3 {
            e[k] = e[k] - v * g[k];
        }
    }
    Ok(e)
}

/// Rf field amplitude and its Jacobian `J[i][k] = dE_i/dx_k` (V/m^2).
pub fn rf_field_jacobian<T: Real>(
    model: &TrapModel<T>,
    p: [T; 3],
) -> Result<([T; 3], [[T; 3]; 3]), FieldError> {
    check_point(p)?;
    let v = model.rf_drive().amplitude;
    let mut e = [T::zero(); 3];
    let mut j = [[T::zero(); 3]; 3];
    for i in model.rf_indices() {
        let (_, g, h) = model.boundary(i).hessian(p);
        for r in 0..3 {
            e[r] = e[r] - v * g[r];
            for k in 0..3 {
                j[r][k] = j[r][k] - v * h[r][k];
            }
        }
    }
    Ok((e, j))
}

/// eV per (V/m)^2: q^2 / (4 m Omega^2 e).
pub(crate) fn pseudo_scale<T: Real>(model: &TrapModel<T>) -> T {
    let s = model.species();
    let omega = model.rf_drive().omega;
    s.charge * s.charge / (T::lit(4.0) * s.mass * omega * omega * T::lit(ELEMENTARY_CHARGE))
}

/// Ponderomotive pseudopotential in eV.
pub fn rf_pseudopotential<T: Real>(model: &TrapModel<T>, p: [T; 3]) -> Result<T, FieldError> {
    let e = rf_field(model, p)?;
    Ok(pseudo_scale(model) * (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]))
}

/// Gradient of the pseudopotential in eV/m.
pub fn rf_pseudopotential_gradient<T: Real>(
    model: &TrapModel<T>,
    p: [T; 3],
) -> Result<[T; 3], FieldError> {
    let (e, j) = rf_field_jacobian(model, p)?;
    let c = T::lit(2.0) * pseudo_scale(model);
    let mut g = [T::zero(); 3];
    for k in 0..3 {
        for i in 0..3 {
            g[k] = g[k] + c * j[i][k] * e[i];
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_ring_layout, RfDrive, RingLayoutParams};

    #[test]
    fn scales_quadratically_with_amplitude() {
        let m = build_ring_layout(&RingLayoutParams::<f64>::default()).unwrap();
        let p = [610e-6, 30e-6, 70e-6];
        let base = rf_pseudopotential(&m, p).unwrap();
        let d = m.rf_drive();
        let doubled = m.with_rf_drive(RfDrive::new(2.0 * d.amplitude, d.omega).unwrap());
        let zero = m.with_rf_drive(RfDrive::new(0.0, d.omega).unwrap());
        assert!((rf_pseudopotential(&doubled, p).unwrap() / base - 4.0).abs() < 1e-12);
        assert_eq!(rf_pseudopotential(&zero, p).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_differences() {
        let m = build_ring_layout(&RingLayoutParams::<f64>::default()).unwrap();
        let p = [640e-6, -20e-6, 100e-6];
        let g = rf_pseudopotential_gradient(&m, p).unwrap();
        let h = 1e-8;
        for k in 0..3 {
            let mut a = p;
            let mut b = p;
            a[k] += h;
            b[k] -= h;
            let fd = (rf_pseudopotential(&m, a).unwrap() - rf_pseudopotential(&m, b).unwrap())
                / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * g.iter().fold(0.0f64, |s, v| s.max(v.abs())));
        }
    }
}
