//! Grid syntax: `start:stop:step` (stop included when reachable within 1e-9), a single
//! number, or a comma-separated list.

use thiserror::Error;

pub const MAX_GRID_POINTS: usize = 100_000;
const STOP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("empty grid specification")]
    Empty,
    #[error("cannot parse {0:?} as a number")]
    Number(String),
    #[error("expected start:stop:step, got {0:?}")]
    Shape(String),
    #[error("grid values must be finite")]
    NonFinite,
    #[error("grid step must be positive")]
    Step,
    #[error("grid start {start} exceeds stop {stop}")]
    Reversed { start: f64, stop: f64 },
    #[error("grid has more than {MAX_GRID_POINTS} points")]
    TooLarge,
}

fn number(s: &str) -> Result<f64, GridError> {
    let t = s.trim();
    let v: f64 = t.parse().map_err(|_| GridError::Number(t.to_string()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(GridError::NonFinite)
    }
}

/// Removes representation noise such as `0.15000000000000002`.
fn tidy(v: f64) -> f64 {
    let scaled = (v * 1e12).round() / 1e12;
    if scaled.is_finite() {
        scaled
    } else {
        v
    }
}

pub fn parse_grid(spec: &str) -> Result<Vec<f64>, GridError> {
    let spec = spec.trim();
    if spec.is_empty() {
        return Err(GridError::Empty);
    }
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(GridError::Shape(spec.to_string()));
        };
        let (start, stop, step) = (number(start)?, number(stop)?, number(step)?);
        if step <= 0.0 {
            return Err(GridError::Step);
        }
        if start > stop {
            return Err(GridError::Reversed { start, stop });
        }
        let count = ((stop - start + STOP_TOLERANCE) / step).floor();
        if !count.is_finite() || count >= MAX_GRID_POINTS as f64 {
            return Err(GridError::TooLarge);
        }
        return Ok((0..=count as usize)
            .map(|i| tidy(start + i as f64 * step))
            .collect());
    }
    let values = spec
        .split(',')
        .map(number)
        .collect::<Result<Vec<f64>, _>>()?;
    if values.len() > MAX_GRID_POINTS {
        return Err(GridError::TooLarge);
    }
    Ok(values)
}
