//! The per-(step, bus) log record and its CSV serialization.
//!
//! The column set and order are fixed; floats are written with six
//! significant digits through a shortest-representation formatter so that
//! identical runs produce byte-identical files.

use std::io::Write;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// The 28-column record header.
pub const CSV_HEADER: &str = "Timestamp,BusID,Voltage(pu),Angle(rad),LoadP(kW),LoadQ(kVAR),SolarGen(kW),WindGen(kW),BatterySOC(%),EVLoad(kW),Frequency(Hz),FeederPower(kW),CommunicationDelay(ms),PacketLossRate,FDI_Attack,FDI_Severity,MeasurementError,ADP_ValueFunction,ADP_ControlAction,PPO_Action,PPO_Reward,DQN_QValue,DQN_Action,ResilienceIndex,Edge_EstimatedState,Cloud_OptimizedState,Edge_ControlAction,Cloud_UpdateFlag";

/// One measurement-and-control row. Physical columns hold the delivered
/// edge observation (what the measurement layer reported), not the hidden
/// true state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub timestamp: String,
    pub bus_id: usize,
    pub voltage: f64,
    pub angle: f64,
    pub load_p: f64,
    pub load_q: f64,
    pub solar: f64,
    pub wind: f64,
    pub soc_pct: f64,
    pub ev_load: f64,
    pub frequency: f64,
    pub feeder_kw: f64,
    pub comm_delay_ms: f64,
    pub packet_loss_rate: f64,
    pub fdi_attack: u8,
    pub fdi_severity: f64,
    pub measurement_error: f64,
    pub adp_value: f64,
    /// RMS magnitude of the edge ADP command vector.
    pub adp_action: f64,
    /// Binned index of the continuous PPO action (the continuous value is
    /// kept on the record but not part of the tabular schema).
    pub ppo_action_bin: usize,
    pub ppo_reward: f64,
    pub dqn_q: f64,
    pub dqn_action: usize,
    pub resilience: f64,
    /// "V=<v>;A=<a>" snapshot of the edge-estimated state.
    pub edge_state: String,
    /// "V=<v>;A=<a>" snapshot of the delayed clean cloud state.
    pub cloud_state: String,
    /// RMS magnitude of the actually applied per-bus action.
    pub edge_action: f64,
    pub cloud_update: u8,
    /// First component of the continuous PPO action (not serialized).
    pub ppo_action_value: f64,
}

/// Rounds to six significant digits and prints the shortest representation
/// that round-trips, e.g. `0.954`, `50.0413`, `139.134`.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(5 - magnitude);
    let rounded = (x * scale).round() / scale;
    format!("{rounded}")
}

/// Formats a state snapshot cell like `V=0.954;A=0.003`.
pub fn state_cell(v: f64, a: f64) -> String {
    format!("V={v:.3};A={a:.3}")
}

impl StepRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.timestamp,
            self.bus_id,
            fmt6(self.voltage),
            fmt6(self.angle),
            fmt6(self.load_p),
            fmt6(self.load_q),
            fmt6(self.solar),
            fmt6(self.wind),
            fmt6(self.soc_pct),
            fmt6(self.ev_load),
            fmt6(self.frequency),
            fmt6(self.feeder_kw),
            fmt6(self.comm_delay_ms),
            fmt6(self.packet_loss_rate),
            self.fdi_attack,
            fmt6(self.fdi_severity),
            fmt6(self.measurement_error),
            fmt6(self.adp_value),
            fmt6(self.adp_action),
            self.ppo_action_bin,
            fmt6(self.ppo_reward),
            fmt6(self.dqn_q),
            self.dqn_action,
            fmt6(self.resilience),
            self.edge_state,
            self.cloud_state,
            fmt6(self.edge_action),
            self.cloud_update,
        )
    }

    pub fn from_csv_row(line: &str, line_no: usize) -> Result<Self, RecordError> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 28 {
            return Err(RecordError::Parse {
                line: line_no,
                reason: format!("expected 28 columns, found {}", fields.len()),
            });
        }
        let err = |what: &str| RecordError::Parse { line: line_no, reason: format!("bad {what}") };
        let f = |i: usize, what: &str| -> Result<f64, RecordError> {
            fields[i].parse().map_err(|_| err(what))
        };
        let u = |i: usize, what: &str| -> Result<usize, RecordError> {
            fields[i].parse().map_err(|_| err(what))
        };
        Ok(Self {
            timestamp: fields[0].to_string(),
            bus_id: u(1, "BusID")?,
            voltage: f(2, "Voltage")?,
            angle: f(3, "Angle")?,
            load_p: f(4, "LoadP")?,
            load_q: f(5, "LoadQ")?,
            solar: f(6, "SolarGen")?,
            wind: f(7, "WindGen")?,
            soc_pct: f(8, "BatterySOC")?,
            ev_load: f(9, "EVLoad")?,
            frequency: f(10, "Frequency")?,
            feeder_kw: f(11, "FeederPower")?,
            comm_delay_ms: f(12, "CommunicationDelay")?,
            packet_loss_rate: f(13, "PacketLossRate")?,
            fdi_attack: fields[14].parse().map_err(|_| err("FDI_Attack"))?,
            fdi_severity: f(15, "FDI_Severity")?,
            measurement_error: f(16, "MeasurementError")?,
            adp_value: f(17, "ADP_ValueFunction")?,
            adp_action: f(18, "ADP_ControlAction")?,
            ppo_action_bin: u(19, "PPO_Action")?,
            ppo_reward: f(20, "PPO_Reward")?,
            dqn_q: f(21, "DQN_QValue")?,
            dqn_action: u(22, "DQN_Action")?,
            resilience: f(23, "ResilienceIndex")?,
            edge_state: fields[24].to_string(),
            cloud_state: fields[25].to_string(),
            edge_action: f(26, "Edge_ControlAction")?,
            cloud_update: fields[27].parse().map_err(|_| err("Cloud_UpdateFlag"))?,
            ppo_action_value: 0.0,
        })
    }
}

/// Writes the record table in the fixed column schema.
pub fn write_records<W: Write>(records: &[StepRecord], mut out: W) -> Result<(), RecordError> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.to_csv_row())?;
    }
    Ok(())
}

pub fn write_records_to_path(records: &[StepRecord], path: &std::path::Path) -> Result<(), RecordError> {
    let file = std::fs::File::create(path)?;
    write_records(records, std::io::BufWriter::new(file))
}

/// Parses a record table produced by [`write_records`].
pub fn read_records(text: &str) -> Result<Vec<StepRecord>, RecordError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, other)) => {
            return Err(RecordError::Parse {
                line: 1,
                reason: format!("unexpected header: {other:?}"),
            })
        }
        None => return Err(RecordError::Parse { line: 1, reason: "empty file".into() }),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| StepRecord::from_csv_row(l, i + 1))
        .collect()
}

/// Maps a step index to the record timestamp string (`M/D/YYYY H:MM`).
pub fn timestamp_for_step(start_date: &str, start_hour: f64, dt_s: f64, step: usize) -> String {
    let total_minutes = (start_hour * 60.0 + step as f64 * dt_s / 60.0).floor() as u64;
    let hour = (total_minutes / 60) % 24;
    let minute = total_minutes % 60;
    format!("{start_date} {hour}:{minute:02}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> StepRecord {
        StepRecord {
            timestamp: "11/1/2025 0:00".into(),
            bus_id: 1,
            voltage: 0.9540271,
            angle: 0.0025312,
            load_p: 120.91923,
            load_q: 35.08518,
            solar: 0.0,
            wind: 4.6272881,
            soc_pct: 49.41123,
            ev_load: 0.0,
            frequency: 50.041323,
            feeder_kw: 139.13441,
            comm_delay_ms: 46.86114,
            packet_loss_rate: 0.0281844,
            fdi_attack: 0,
            fdi_severity: 0.0,
            measurement_error: 0.0064253,
            adp_value: 0.46661,
            adp_action: 0.38312,
            ppo_action_bin: 2,
            ppo_reward: -0.0376923,
            dqn_q: 0.1563123,
            dqn_action: 0,
            resilience: 0.9389612,
            edge_state: state_cell(0.954, 0.003),
            cloud_state: state_cell(0.966, 0.005),
            edge_action: 0.26131,
            cloud_update: 0,
            ppo_action_value: 0.41,
        }
    }

    #[test]
    fn header_is_the_28_column_schema() {
        assert_eq!(CSV_HEADER.split(',').count(), 28);
        assert!(CSV_HEADER.starts_with("Timestamp,BusID,Voltage(pu)"));
        assert!(CSV_HEADER.ends_with("Edge_ControlAction,Cloud_UpdateFlag"));
    }

    #[test]
    fn fmt6_matches_reference_shapes() {
        assert_eq!(fmt6(0.954), "0.954");
        assert_eq!(fmt6(50.041323), "50.0413");
        assert_eq!(fmt6(139.13441), "139.134");
        assert_eq!(fmt6(0.0025312), "0.0025312");
        assert_eq!(fmt6(0.0), "0");
        assert_eq!(fmt6(-0.0376923), "-0.0376923");
        assert_eq!(fmt6(120919.231), "120919");
    }

    #[test]
    fn state_cell_format() {
        assert_eq!(state_cell(0.954, 0.00253), "V=0.954;A=0.003");
        assert_eq!(state_cell(1.0168, -0.04082), "V=1.017;A=-0.041");
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let records = vec![sample_record()];
        let mut buf = Vec::new();
        write_records(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let parsed = read_records(&text).unwrap();
        assert_eq!(parsed.len(), 1);

        let mut buf2 = Vec::new();
        write_records(&parsed, &mut buf2).unwrap();
        let text2 = String::from_utf8(buf2).unwrap();
        assert_eq!(text, text2, "re-emission must be byte-identical");
    }

    #[test]
    fn wrong_column_count_is_reported() {
        let text = format!("{CSV_HEADER}\n1,2,3\n");
        match read_records(&text) {
            Err(RecordError::Parse { line: 2, .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn timestamps_use_minute_resolution() {
        assert_eq!(timestamp_for_step("11/1/2025", 0.0, 1.0, 0), "11/1/2025 0:00");
        assert_eq!(timestamp_for_step("11/1/2025", 0.0, 1.0, 59), "11/1/2025 0:00");
        assert_eq!(timestamp_for_step("11/1/2025", 0.0, 1.0, 60), "11/1/2025 0:01");
        assert_eq!(timestamp_for_step("11/1/2025", 0.0, 1.0, 5999), "11/1/2025 1:39");
        assert_eq!(timestamp_for_step("11/1/2025", 23.5, 1.0, 3600), "11/1/2025 0:30");
    }
}
