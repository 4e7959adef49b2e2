//! Radio-link arithmetic for one D2D pair.
//!
//! Active D2D transmission uses a probabilistic LOS/NLOS path-loss model
//! averaged in the dB domain. The backscatter link reflects the BS downlink
//! and, after the receiver cancels the direct BS signal, sees an SNR of
//! `alpha * P_t * g_st * g_tr / sigma^2` with free-space style gains
//! `A_e / (4 pi d^2)`.
//!
//! Power values are linear watts internally; dBm only appears in the
//! conversion helpers and in [`LinkGeometry::d2d_power_dbm`].

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Convert a dBm power to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) / 1000.0
}

/// Convert a power in watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts * 1000.0).log10()
}

/// Radio situation of a single D2D pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    /// D2D-Tx to D2D-Rx distance, meters.
    pub d_tr: f64,
    /// BS to D2D-Tx distance, meters.
    pub d_st: f64,
    /// Center frequency, GHz.
    pub freq_ghz: f64,
    /// Bandwidth, Hz.
    pub bandwidth_hz: f64,
    /// D2D transmit power, watts.
    pub d2d_power_w: f64,
    /// BS transmit power, watts.
    pub bs_power_w: f64,
    /// Noise power, watts.
    pub noise_w: f64,
    /// Backscatter reflection coefficient in `[0, 1]`.
    pub alpha: f64,
    /// Effective antenna area, m^2.
    pub antenna_area: f64,
}

impl LinkGeometry {
    /// The evaluation setup: 2 GHz, 20 MHz, `P_d` = 23 dBm, `P_t` = 40 dBm,
    /// noise -114 dBm, alpha 0.6, `A_e` = 0.0086 m^2.
    pub fn reference(d_tr: f64, d_st: f64) -> Self {
        LinkGeometry {
            d_tr,
            d_st,
            freq_ghz: 2.0,
            bandwidth_hz: 20e6,
            d2d_power_w: dbm_to_watts(23.0),
            bs_power_w: dbm_to_watts(40.0),
            noise_w: dbm_to_watts(-114.0),
            alpha: 0.6,
            antenna_area: 0.0086,
        }
    }

    pub fn with_distances(&self, d_tr: f64, d_st: f64) -> Self {
        LinkGeometry { d_tr, d_st, ..*self }
    }

    pub fn d2d_power_dbm(&self) -> f64 {
        watts_to_dbm(self.d2d_power_w)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_tr", self.d_tr),
            ("d_st", self.d_st),
            ("freq_ghz", self.freq_ghz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_w", self.noise_w),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Domain(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        let non_negative = [
            ("d2d_power_w", self.d2d_power_w),
            ("bs_power_w", self.bs_power_w),
            ("antenna_area", self.antenna_area),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive and finite, got {v}")))
    }
}

/// LOS path loss in dB for distance in meters and frequency in GHz.
pub fn path_loss_los(d_tr: f64, freq_ghz: f64) -> Result<f64> {
    check_positive("d_tr", d_tr)?;
    check_positive("freq_ghz", freq_ghz)?;
    Ok(16.9 * d_tr.log10() + 32.8 + 20.0 * freq_ghz.log10())
}

/// NLOS path loss in dB.
pub fn path_loss_nlos(d_tr: f64, freq_ghz: f64) -> Result<f64> {
    check_positive("d_tr", d_tr)?;
    check_positive("freq_ghz", freq_ghz)?;
    Ok(40.0 * d_tr.log10() + 79.0 + 30.0 * freq_ghz.log10())
}

/// Probability of a line-of-sight D2D link.
///
/// The middle branch is inclusive at 60 m; beyond that the link is NLOS.
pub fn p_los(d_tr: f64) -> Result<f64> {
    check_positive("d_tr", d_tr)?;
    Ok(if d_tr <= 4.0 {
        1.0
    } else if d_tr <= 60.0 {
        (-(d_tr - 4.0) / 3.0).exp()
    } else {
        0.0
    })
}

/// Average D2D path loss in dB (probability-weighted mix of LOS and NLOS).
pub fn mean_path_loss(d_tr: f64, freq_ghz: f64) -> Result<f64> {
    let p = p_los(d_tr)?;
    Ok(p * path_loss_los(d_tr, freq_ghz)? + (1.0 - p) * path_loss_nlos(d_tr, freq_ghz)?)
}

/// Achievable active D2D rate, bits/second.
pub fn d2d_rate(geom: &LinkGeometry) -> Result<f64> {
    geom.validate()?;
    let loss_db = mean_path_loss(geom.d_tr, geom.freq_ghz)?;
    let received_w = geom.d2d_power_w * 10f64.powf(-loss_db / 10.0);
    Ok(geom.bandwidth_hz * (1.0 + received_w / geom.noise_w).log2())
}

/// Channel power gain `A_e / (4 pi d^2)`.
pub fn aperture_gain(antenna_area: f64, distance: f64) -> f64 {
    antenna_area / (4.0 * PI * distance * distance)
}

/// SNR of the backscattered signal after interference cancellation.
pub fn backscatter_snr(geom: &LinkGeometry) -> Result<f64> {
    geom.validate()?;
    let g_st = aperture_gain(geom.antenna_area, geom.d_st);
    let g_tr = aperture_gain(geom.antenna_area, geom.d_tr);
    Ok(geom.alpha * geom.bs_power_w * g_st * g_tr / geom.noise_w)
}

/// Achievable backscatter rate, bits/second.
pub fn backscatter_rate(geom: &LinkGeometry) -> Result<f64> {
    Ok(geom.bandwidth_hz * (1.0 + backscatter_snr(geom)?).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn los_values() {
        assert_relative_eq!(path_loss_los(1.0, 1.0).unwrap(), 32.8, epsilon = 1e-12);
        assert_relative_eq!(path_loss_los(10.0, 2.0).unwrap(), 55.7206, epsilon = 1e-4);
        assert_relative_eq!(path_loss_los(100.0, 2.0).unwrap(), 72.6206, epsilon = 1e-4);
    }

    #[test]
    fn nlos_values() {
        assert_relative_eq!(path_loss_nlos(1.0, 1.0).unwrap(), 79.0, epsilon = 1e-12);
        assert_relative_eq!(path_loss_nlos(10.0, 2.0).unwrap(), 128.0309, epsilon = 1e-4);
        assert_relative_eq!(path_loss_nlos(100.0, 2.0).unwrap(), 168.0309, epsilon = 1e-4);
    }

    #[test]
    fn path_loss_rejects_non_positive() {
        assert!(path_loss_los(0.0, 2.0).is_err());
        assert!(path_loss_los(10.0, -1.0).is_err());
        assert!(path_loss_nlos(-3.0, 2.0).is_err());
        assert!(p_los(0.0).is_err());
    }

    #[test]
    fn p_los_branches() {
        assert_eq!(p_los(2.0).unwrap(), 1.0);
        assert_eq!(p_los(4.0).unwrap(), 1.0);
        assert_relative_eq!(p_los(7.0).unwrap(), 0.367879, epsilon = 1e-6);
        assert_relative_eq!(p_los(60.0).unwrap(), (-56.0f64 / 3.0).exp());
        assert_eq!(p_los(60.0001).unwrap(), 0.0);
    }

    #[test]
    fn d2d_rate_at_noise_floor_is_bandwidth() {
        // pick P_d so that received power equals noise exactly
        let mut g = LinkGeometry::reference(10.0, 100.0);
        let loss = mean_path_loss(g.d_tr, g.freq_ghz).unwrap();
        g.d2d_power_w = g.noise_w * 10f64.powf(loss / 10.0);
        assert_relative_eq!(d2d_rate(&g).unwrap(), g.bandwidth_hz, max_relative = 1e-12);
    }

    #[test]
    fn reference_rates() {
        // independent scalar evaluation in dBm
        let c10 = d2d_rate(&LinkGeometry::reference(10.0, 100.0)).unwrap();
        let l = (-2f64).exp() * 55.72059991327962 + (1.0 - (-2f64).exp()) * 128.0308998699194;
        let snr = 10f64.powf((23.0 - l + 114.0) / 10.0);
        assert_relative_eq!(c10, 20e6 * (1.0 + snr).log2(), max_relative = 1e-9);
        assert!((c10 / 1e6 - 124.5).abs() < 0.5, "{c10}");

        let c100 = d2d_rate(&LinkGeometry::reference(100.0, 100.0)).unwrap();
        // 22.75 kbps; the rounded figure 22.9 comes from taking log10(2) = 0.3
        assert!((c100 / 22.9e3 - 1.0).abs() < 0.01, "{c100}");
    }

    #[test]
    fn backscatter_reference_rates() {
        let mut g = LinkGeometry::reference(10.0, 100.0);
        g.alpha = 0.0;
        assert_eq!(backscatter_rate(&g).unwrap(), 0.0);

        let near = backscatter_rate(&LinkGeometry::reference(10.0, 100.0)).unwrap();
        assert!((near / 1e6 - 189.0).abs() < 1.0, "{near}");
        let far = backscatter_rate(&LinkGeometry::reference(100.0, 1000.0)).unwrap();
        assert!((far / 1e6 - 1.97).abs() < 0.01, "{far}");
    }

    #[test]
    fn invalid_geometry() {
        let mut g = LinkGeometry::reference(10.0, 100.0);
        g.alpha = 1.5;
        assert!(d2d_rate(&g).is_err());
        let mut g = LinkGeometry::reference(10.0, 100.0);
        g.noise_w = 0.0;
        assert!(backscatter_rate(&g).is_err());
    }

    proptest! {
        #[test]
        fn path_loss_monotone(d in 0.5f64..500.0, f in 0.1f64..60.0, dd in 0.01f64..10.0, df in 0.01f64..5.0) {
            prop_assert!(path_loss_los(d + dd, f).unwrap() > path_loss_los(d, f).unwrap());
            prop_assert!(path_loss_los(d, f + df).unwrap() > path_loss_los(d, f).unwrap());
            prop_assert!(path_loss_nlos(d + dd, f).unwrap() > path_loss_nlos(d, f).unwrap());
            prop_assert!(path_loss_nlos(d, f + df).unwrap() > path_loss_nlos(d, f).unwrap());
        }

        #[test]
        fn p_los_bounded_non_increasing(d in 0.01f64..200.0, dd in 0.0f64..50.0) {
            let a = p_los(d).unwrap();
            let b = p_los(d + dd).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b <= a);
        }

        #[test]
        fn rates_decrease_with_distance(d_tr in 5.0f64..200.0, d_st in 50.0f64..2000.0, k in 1.01f64..3.0) {
            let g = LinkGeometry::reference(d_tr, d_st);
            let c = d2d_rate(&g).unwrap();
            prop_assert!(c >= 0.0 && c.is_finite());
            prop_assert!(d2d_rate(&g.with_distances(d_tr * k, d_st)).unwrap() < c);
            let b = backscatter_rate(&g).unwrap();
            prop_assert!(b >= 0.0);
            prop_assert!(backscatter_rate(&g.with_distances(d_tr * k, d_st)).unwrap() < b);
            prop_assert!(backscatter_rate(&g.with_distances(d_tr, d_st * k)).unwrap() < b);
        }

        #[test]
        fn backscatter_increases_with_alpha_and_power(a in 0.0f64..0.9, da in 0.01f64..0.1, k in 1.01f64..10.0) {
            let g = LinkGeometry { alpha: a, ..LinkGeometry::reference(30.0, 300.0) };
            let b = backscatter_rate(&g).unwrap();
            let more_alpha = LinkGeometry { alpha: a + da, ..g };
            prop_assert!(backscatter_rate(&more_alpha).unwrap() > b);
            let more_power = LinkGeometry { bs_power_w: g.bs_power_w * k, ..g };
            prop_assert!(backscatter_rate(&more_power).unwrap() > b);
        }

        #[test]
        fn dbm_round_trip(x in 1e-18f64..1e3) {
            let back = dbm_to_watts(watts_to_dbm(x));
            prop_assert!(((back - x) / x).abs() < 1e-12);
        }
    }
}
