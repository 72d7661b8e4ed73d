//! The per-bus physical state vector shared by the channel, controllers,
//! and metrics.

/// Nameplate scales used to normalize state features.
pub mod rated {
    /// Active load scale, kW.
    pub const P_LOAD_KW: f64 = 1800.0;
    /// Reactive load scale, kVAr.
    pub const Q_LOAD_KVAR: f64 = 900.0;
    /// PV scale, kW.
    pub const SOLAR_KW: f64 = 500.0;
    /// Wind scale, kW.
    pub const WIND_KW: f64 = 300.0;
    /// EV charging scale, kW.
    pub const EV_KW: f64 = 110.0;
}

/// The 9-feature measurement vector reported by each bus:
/// voltage, angle, P/Q load, solar, wind, battery SOC, EV load, frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct BusState {
    /// Voltage magnitude, per-unit.
    pub voltage: f64,
    /// Voltage angle, rad.
    pub angle: f64,
    /// Active load, kW.
    pub p_load: f64,
    /// Reactive load, kVAr.
    pub q_load: f64,
    /// PV injection, kW.
    pub solar: f64,
    /// Wind injection, kW.
    pub wind: f64,
    /// Battery state of charge, fraction.
    pub soc: f64,
    /// EV charging load, kW.
    pub ev_load: f64,
    /// Frequency, Hz.
    pub frequency: f64,
}

impl Default for BusState {
    fn default() -> Self {
        Self {
            voltage: 1.0,
            angle: 0.0,
            p_load: 0.0,
            q_load: 0.0,
            solar: 0.0,
            wind: 0.0,
            soc: 0.5,
            ev_load: 0.0,
            frequency: 50.0,
        }
    }
}

impl BusState {
    /// Normalized feature vector: deviations for voltage and frequency,
    /// nameplate-scaled powers, SOC as-is.
    pub fn normalized(&self) -> [f64; 9] {
        [
            self.voltage - 1.0,
            self.angle,
            self.p_load / rated::P_LOAD_KW,
            self.q_load / rated::Q_LOAD_KVAR,
            self.solar / rated::SOLAR_KW,
            self.wind / rated::WIND_KW,
            self.soc,
            self.ev_load / rated::EV_KW,
            self.frequency - 50.0,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_centers_nominal_values() {
        let s = BusState { soc: 0.0, ..Default::default() };
        assert_eq!(s.normalized(), [0.0; 9]);
    }
}
