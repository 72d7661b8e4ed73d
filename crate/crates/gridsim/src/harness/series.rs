//! Named time-series export with moving averages.

use std::io::Write;

use thiserror::Error;

use crate::metrics::moving_average;

use super::SimulationResult;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("unknown series {name:?}; available: {available}")]
    Unknown { name: String, available: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Series names accepted by [`export_series`].
pub const SERIES_NAMES: &[&str] = &[
    "feeder_power",
    "wind",
    "solar",
    "load",
    "bus5_voltage",
    "load_pv_wind_pu",
    "resilience",
    "cost_total",
    "cost_adp",
    "cost_ppo",
    "cost_dqn",
];

fn single_series<'a>(result: &'a SimulationResult, name: &str) -> Option<&'a [f64]> {
    Some(match name {
        "feeder_power" => &result.feeder_kw,
        "wind" => &result.wind_kw,
        "solar" => &result.solar_kw,
        "load" => &result.load_kw,
        "bus5_voltage" => &result.bus5_voltage,
        "resilience" => &result.resilience,
        "cost_total" => &result.cost_total,
        "cost_adp" => &result.cost_adp,
        "cost_ppo" => &result.cost_ppo,
        "cost_dqn" => &result.cost_dqn,
        _ => return None,
    })
}

/// Writes `step,value,moving_avg` rows for the named series (the bus-5
/// per-unit profile uses one column triple per quantity instead).
pub fn export_series<W: Write>(
    result: &SimulationResult,
    name: &str,
    window: usize,
    mut out: W,
) -> Result<(), SeriesError> {
    if name == "load_pv_wind_pu" {
        writeln!(out, "step,load_pu,pv_pu,wind_pu")?;
        for (k, ((l, p), w)) in result
            .bus5_load_pu
            .iter()
            .zip(&result.bus5_pv_pu)
            .zip(&result.bus5_wind_pu)
            .enumerate()
        {
            writeln!(out, "{k},{l:.6},{p:.6},{w:.6}")?;
        }
        return Ok(());
    }
    let series = single_series(result, name).ok_or_else(|| SeriesError::Unknown {
        name: name.to_string(),
        available: SERIES_NAMES.join(", "),
    })?;
    let ma = moving_average(series, window);
    writeln!(out, "step,value,moving_avg")?;
    for (k, (v, m)) in series.iter().zip(&ma).enumerate() {
        writeln!(out, "{k},{v:.6},{m:.6}")?;
    }
    Ok(())
}

pub fn export_series_to_path(
    result: &SimulationResult,
    name: &str,
    window: usize,
    path: &std::path::Path,
) -> Result<(), SeriesError> {
    let file = std::fs::File::create(path)?;
    export_series(result, name, window, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_result() -> SimulationResult {
        SimulationResult {
            records: Vec::new(),
            cost_total: vec![3.0, 3.0, 3.0],
            cost_adp: vec![1.0; 3],
            cost_ppo: vec![1.5; 3],
            cost_dqn: vec![0.5; 3],
            resilience: vec![1.0; 3],
            feeder_kw: vec![100.0, 110.0, 120.0],
            solar_kw: vec![0.0; 3],
            wind_kw: vec![5.0; 3],
            load_kw: vec![90.0; 3],
            bus5_voltage: vec![0.98, 0.97, 0.99],
            bus5_load_pu: vec![0.1; 3],
            bus5_pv_pu: vec![0.0; 3],
            bus5_wind_pu: vec![0.02; 3],
            hybrid_selected: vec![None; 3],
            diverged_steps: 0,
            violation_log: Vec::new(),
        }
    }

    #[test]
    fn constant_series_moving_average_is_identity() {
        let mut buf = Vec::new();
        export_series(&tiny_result(), "cost_adp", 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[1], cols[2]);
        }
    }

    #[test]
    fn bus5_voltage_is_exported() {
        let mut buf = Vec::new();
        export_series(&tiny_result(), "bus5_voltage", 1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("0,0.98"));
    }

    #[test]
    fn unknown_series_lists_available_names() {
        let mut buf = Vec::new();
        let err = export_series(&tiny_result(), "nope", 1, &mut buf).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("nope"));
        for name in SERIES_NAMES {
            assert!(text.contains(name), "missing {name} in {text}");
        }
    }
}
