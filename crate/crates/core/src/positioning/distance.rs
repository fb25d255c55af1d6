use crate::sim::RadioParams;

use super::PositioningError;

/// Inverts the log-distance model:
/// `d = d0 * 10^((p0 - rssi) / (10 n))`, never below `d0`.
pub fn estimate_distance(rssi_dbm: f64, params: &RadioParams) -> Result<f64, PositioningError> {
    if !(params.path_loss_exponent.is_finite() && params.path_loss_exponent > 0.0) {
        return Err(PositioningError::InvalidParams(
            "path_loss_exponent must be > 0".into(),
        ));
    }
    if !(params.d0_m.is_finite() && params.d0_m > 0.0) {
        return Err(PositioningError::InvalidParams("d0_m must be > 0".into()));
    }
    if !rssi_dbm.is_finite() {
        return Err(PositioningError::InvalidParams(format!(
            "rssi {rssi_dbm} is not finite"
        )));
    }
    let exponent = (params.p0_dbm - rssi_dbm) / (10.0 * params.path_loss_exponent);
    Ok((params.d0_m * 10f64.powf(exponent)).max(params.d0_m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radio() -> RadioParams {
        RadioParams::default()
    }

    #[test]
    fn reference_distance_identity() {
        assert_eq!(estimate_distance(-40.0, &radio()).unwrap(), 1.0);
    }

    #[test]
    fn ten_meters() {
        // Forward model at 10 m gives -60 dBm.
        assert_eq!(radio().mean_rssi(10.0), -60.0);
        assert!((estimate_distance(-60.0, &radio()).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn two_meters() {
        assert!((radio().mean_rssi(2.0) - (-46.0206)).abs() < 1e-4);
        assert!((estimate_distance(-46.0206, &radio()).unwrap() - 2.0).abs() < 1e-4);
    }

    #[test]
    fn stronger_than_reference_clamps() {
        assert_eq!(estimate_distance(-30.0, &radio()).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_exponent() {
        let mut p = radio();
        p.path_loss_exponent = 0.0;
        assert!(matches!(
            estimate_distance(-50.0, &p),
            Err(PositioningError::InvalidParams(_))
        ));
        p.path_loss_exponent = -2.0;
        assert!(estimate_distance(-50.0, &p).is_err());
    }

    #[test]
    fn inverts_forward_model() {
        let p = RadioParams {
            p0_dbm: -59.0,
            d0_m: 0.5,
            path_loss_exponent: 2.7,
            ..radio()
        };
        for d in [0.5, 0.8, 1.0, 3.3, 12.0, 40.0] {
            let back = estimate_distance(p.mean_rssi(d), &p).unwrap();
            assert!(((back - d) / d).abs() < 1e-9, "{d} -> {back}");
        }
    }
}
