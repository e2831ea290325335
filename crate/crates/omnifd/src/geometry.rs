//! Array layout and pairwise ranges/angles.
//!
//! The transmit and receive antennas are uniform linear arrays along +y from
//! their anchors; the surface is a uniform planar array in the y–z plane when
//! the element count is a perfect square, otherwise a linear array along +y.
//! Spherical angles use the +x axis (array boresight / surface normal) as the
//! polar axis: the elevation is the angle between the link direction and ±x
//! folded into `[0, π/2]`, the azimuth is `atan2(dz, dy)` in `[0, 2π)`.

use nalgebra::DMatrix;

use crate::config::{Point, SystemConfig};
use crate::error::{Error, Result};
use crate::units::wrap_phase;

/// Ranges and look angles between two element sets, one entry per pair.
/// `range[(i, j)]` is the distance from element `i` of the first set to
/// element `j` of the second; the angles are those of element `j` seen from
/// element `i`.
#[derive(Debug, Clone)]
pub struct AngledPairs {
    pub range: DMatrix<f64>,
    pub elevation: DMatrix<f64>,
    pub azimuth: DMatrix<f64>,
}

/// Full 3-D layout of the link: element positions plus every pairwise range
/// and angle the channel synthesis needs.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub tx_positions: Vec<Point>,
    pub rx_positions: Vec<Point>,
    pub ios_positions: Vec<Point>,
    pub dest_position: Point,
    /// Surface element -> transmit antenna (L×M).
    pub ios_tx: AngledPairs,
    /// Transmit antenna -> receive antenna (M×N).
    pub tx_rx: AngledPairs,
    /// Receive antenna -> transmit antenna (N×M).
    pub rx_tx: AngledPairs,
    /// Surface element -> receive antenna (L×N).
    pub ios_rx: AngledPairs,
    /// Surface element -> destination (L).
    pub ios_dest_range: Vec<f64>,
}

fn add(p: Point, d: [f64; 3]) -> Point {
    [p[0] + d[0], p[1] + d[1], p[2] + d[2]]
}

fn linear_array(anchor: Point, count: usize, spacing: f64) -> Vec<Point> {
    (0..count)
        .map(|i| add(anchor, [0.0, i as f64 * spacing, 0.0]))
        .collect()
}

fn surface_array(anchor: Point, count: usize, spacing: f64) -> Vec<Point> {
    let side = (count as f64).sqrt().round() as usize;
    if side * side == count {
        let mut positions = Vec::with_capacity(count);
        for row in 0..side {
            for col in 0..side {
                positions.push(add(
                    anchor,
                    [0.0, col as f64 * spacing, row as f64 * spacing],
                ));
            }
        }
        positions
    } else {
        linear_array(anchor, count, spacing)
    }
}

/// Range plus (elevation, azimuth) of `to` as seen from `from`.
fn look(from: Point, to: Point) -> (f64, f64, f64) {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let elevation = (d[0].abs() / r).clamp(0.0, 1.0).acos();
    let azimuth = wrap_phase(d[2].atan2(d[1]));
    (r, elevation, azimuth)
}

fn pair_table(from: &[Point], to: &[Point]) -> Result<AngledPairs> {
    let (rows, cols) = (from.len(), to.len());
    let mut range = DMatrix::zeros(rows, cols);
    let mut elevation = DMatrix::zeros(rows, cols);
    let mut azimuth = DMatrix::zeros(rows, cols);
    for (i, &p) in from.iter().enumerate() {
        for (j, &q) in to.iter().enumerate() {
            let (r, el, az) = look(p, q);
            if r <= 0.0 {
                return Err(Error::Config(format!(
                    "coincident positions at pair ({i}, {j})"
                )));
            }
            range[(i, j)] = r;
            elevation[(i, j)] = el;
            azimuth[(i, j)] = az;
        }
    }
    Ok(AngledPairs {
        range,
        elevation,
        azimuth,
    })
}

/// Lays out the arrays and fills every pairwise table. Deterministic; rejects
/// layouts that place two linked elements at the same point.
pub fn build_geometry(config: &SystemConfig) -> Result<Geometry> {
    config.validate()?;
    let tx_positions = linear_array(config.tx_anchor, config.num_tx, config.spacing);
    let rx_positions = linear_array(config.rx_anchor, config.num_rx, config.spacing);
    let ios_positions = surface_array(config.ios_anchor, config.num_elements, config.spacing);

    let ios_tx = pair_table(&ios_positions, &tx_positions)?;
    let tx_rx = pair_table(&tx_positions, &rx_positions)?;
    let rx_tx = pair_table(&rx_positions, &tx_positions)?;
    let ios_rx = pair_table(&ios_positions, &rx_positions)?;

    let mut ios_dest_range = Vec::with_capacity(config.num_elements);
    for (l, &p) in ios_positions.iter().enumerate() {
        let (r, _, _) = look(p, config.dest_position);
        if r <= 0.0 {
            return Err(Error::Config(format!(
                "surface element {l} coincides with the destination"
            )));
        }
        ios_dest_range.push(r);
    }

    Ok(Geometry {
        tx_positions,
        rx_positions,
        ios_positions,
        dest_position: config.dest_position,
        ios_tx,
        tx_rx,
        rx_tx,
        ios_rx,
        ios_dest_range,
    })
}

/// Elevation-dependent antenna pattern `G0 cos^q(θ)`; azimuth-independent,
/// isotropic at `q = 0`.
pub fn antenna_gain(theta: f64, _phi: f64, exponent: f64, peak: f64) -> f64 {
    debug_assert!((0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&theta));
    if exponent == 0.0 {
        return peak;
    }
    peak * theta.cos().max(0.0).powf(exponent)
}
