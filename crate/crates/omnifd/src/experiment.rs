//! Scenario sweeps: cross-products of surface modes, element counts, receive
//! antennas, thresholds, geometry offsets, CSI quality and phase
//! quantization, each averaged over seeded channel draws.
//!
//! A scenario is a JSON document; running it yields one CSV row per
//! (point, seed) plus a JSON manifest echoing the scenario and the build.
//! Points run in a worker pool but the CSV order is canonical (point index,
//! then seed), so byte-identical reruns produce byte-identical records apart
//! from the wall-time column.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::channel::{corrupt_csi, sample_channels};
use crate::config::{SystemConfig, SystemConfigFile};
use crate::error::{Error, Result};
use crate::geometry::build_geometry;
use crate::optimizer::{
    maximize_rate, minimize_si, Objective, OptConfig, OptStatus, SurfaceMode,
};
use crate::surface::{data_rate, effective_channels, quantize_phases, si_power};
use crate::units::{dbm_to_watts, watts_to_dbm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    MaximizeRate,
    MinimizeSi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    Es,
    Ms,
    Wo,
}

impl From<SurfaceKind> for SurfaceMode {
    fn from(kind: SurfaceKind) -> Self {
        match kind {
            SurfaceKind::Es => SurfaceMode::Es,
            SurfaceKind::Ms => SurfaceMode::Ms,
            SurfaceKind::Wo => SurfaceMode::Wo,
        }
    }
}

impl SurfaceKind {
    fn label(self) -> &'static str {
        match self {
            SurfaceKind::Es => "es",
            SurfaceKind::Ms => "ms",
            SurfaceKind::Wo => "wo",
        }
    }
}

fn one_f64() -> Vec<f64> {
    vec![1.0]
}
fn zero_f64() -> Vec<f64> {
    vec![0.0]
}
fn zero_u32() -> Vec<u32> {
    vec![0]
}
fn one_usize() -> Vec<usize> {
    vec![1]
}
fn default_seeds() -> usize {
    1
}

/// Sweep axes. Absent axes default to a single neutral value; present axes
/// must be nonempty.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    /// Surface element counts L.
    pub elements: Vec<usize>,
    /// Receive antenna counts N.
    #[serde(default = "one_usize")]
    pub rx_antennas: Vec<usize>,
    /// Interference caps in dBm (rate maximization only).
    #[serde(default)]
    pub si_cap_dbm: Vec<f64>,
    /// Rate floors in bps/Hz (interference minimization only).
    #[serde(default)]
    pub rate_floor_bps: Vec<f64>,
    /// Offsets added to the surface anchor x-coordinate, in meters
    /// (transmitter↔surface distance sweep).
    #[serde(default = "zero_f64")]
    pub ios_distance_offset_m: Vec<f64>,
    /// Channel-estimation quality η in `[0, 1]`; 1 is perfect knowledge.
    #[serde(default = "one_f64")]
    pub csi_eta: Vec<f64>,
    /// Phase quantization bits applied to the converged surface; 0 keeps the
    /// continuous phases.
    #[serde(default = "zero_u32")]
    pub quantization_bits: Vec<u32>,
}

/// A complete experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    #[serde(default)]
    pub system: SystemConfigFile,
    pub objective: ObjectiveKind,
    pub surfaces: Vec<SurfaceKind>,
    pub sweep: SweepAxes,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub max_outer_iters: Option<usize>,
    #[serde(default)]
    pub randomizations: Option<usize>,
    /// Write per-run objective traces as JSON next to the CSV.
    #[serde(default)]
    pub emit_traces: bool,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text)
            .map_err(|e| Error::Scenario(format!("scenario parse error: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let axis_err =
            |name: &str| Err(Error::Scenario(format!("sweep axis `{name}` is empty")));
        if self.id.is_empty() {
            return Err(Error::Scenario("scenario id is empty".into()));
        }
        if self.surfaces.is_empty() {
            return axis_err("surfaces");
        }
        if self.sweep.elements.is_empty() {
            return axis_err("elements");
        }
        if self.sweep.rx_antennas.is_empty() {
            return axis_err("rx_antennas");
        }
        if self.sweep.ios_distance_offset_m.is_empty() {
            return axis_err("ios_distance_offset_m");
        }
        if self.sweep.csi_eta.is_empty() {
            return axis_err("csi_eta");
        }
        if self.sweep.quantization_bits.is_empty() {
            return axis_err("quantization_bits");
        }
        match self.objective {
            ObjectiveKind::MaximizeRate => {
                if self.sweep.si_cap_dbm.is_empty() {
                    return axis_err("si_cap_dbm");
                }
            }
            ObjectiveKind::MinimizeSi => {
                if self.sweep.rate_floor_bps.is_empty() {
                    return axis_err("rate_floor_bps");
                }
            }
        }
        if self.seeds == 0 {
            return Err(Error::Scenario("seeds must be at least 1".into()));
        }
        for &eta in &self.sweep.csi_eta {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::Scenario(format!("csi_eta {eta} outside [0, 1]")));
            }
        }
        self.system.resolve()?;
        Ok(())
    }

    fn points(&self) -> Vec<SweepPoint> {
        let thresholds: Vec<f64> = match self.objective {
            ObjectiveKind::MaximizeRate => self.sweep.si_cap_dbm.clone(),
            ObjectiveKind::MinimizeSi => self.sweep.rate_floor_bps.clone(),
        };
        let mut points = Vec::new();
        let mut index = 0;
        for &surface in &self.surfaces {
            for &elements in &self.sweep.elements {
                for &rx in &self.sweep.rx_antennas {
                    for &threshold in &thresholds {
                        for &offset in &self.sweep.ios_distance_offset_m {
                            for &eta in &self.sweep.csi_eta {
                                for &bits in &self.sweep.quantization_bits {
                                    points.push(SweepPoint {
                                        index,
                                        surface,
                                        elements,
                                        rx_antennas: rx,
                                        threshold,
                                        distance_offset: offset,
                                        csi_eta: eta,
                                        quantization_bits: bits,
                                    });
                                    index += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        points
    }
}

#[derive(Debug, Clone, Copy)]
struct SweepPoint {
    index: usize,
    surface: SurfaceKind,
    elements: usize,
    rx_antennas: usize,
    threshold: f64,
    distance_offset: f64,
    csi_eta: f64,
    quantization_bits: u32,
}

/// One CSV row of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResultRecord {
    pub scenario_id: String,
    pub surface: String,
    pub elements: usize,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    /// Interference cap in dBm or rate floor in bps/Hz, per the objective.
    pub threshold: f64,
    pub distance_offset_m: f64,
    pub csi_eta: f64,
    pub quantization_bits: u32,
    pub seed: u64,
    pub rate_bps: f64,
    pub si_watts: f64,
    pub si_dbm: f64,
    pub iterations: usize,
    pub status: String,
    pub wall_time_s: f64,
}

fn status_label(status: OptStatus) -> &'static str {
    match status {
        OptStatus::Converged => "converged",
        OptStatus::MaxIters => "max_iters",
        OptStatus::Infeasible => "infeasible",
    }
}

fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut h = a ^ 0x9E37_79B9_7F4A_7C15;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9) ^ b;
    h = h.wrapping_mul(0x94D0_49BB_1331_11EB) ^ c;
    h ^ (h >> 31)
}

struct RunOutput {
    record: ResultRecord,
    trace: Option<String>,
}

fn run_point(
    scenario: &Scenario,
    base: &SystemConfig,
    point: &SweepPoint,
    seed_index: u64,
    seed_base: u64,
) -> Result<RunOutput> {
    let start = Instant::now();
    let mut system = base.clone();
    system.num_elements = point.elements;
    system.num_rx = point.rx_antennas;
    system.ios_anchor[0] += point.distance_offset;
    system.validate()?;

    let geometry = build_geometry(&system)?;
    // the channel draw is shared across surfaces and thresholds: it depends
    // only on the seed index (and the geometry through its dimensions)
    let channel_seed = mix(seed_base, seed_index, 0x0C41);
    let channels = sample_channels(&geometry, &system, channel_seed)?;

    // optimize on the estimated channels, evaluate on the true ones
    let design_channels = if point.csi_eta < 1.0 {
        corrupt_csi(
            &channels,
            &geometry,
            &system,
            point.csi_eta,
            mix(seed_base, seed_index, 0xE57A),
        )?
    } else {
        channels.clone()
    };

    let objective = match scenario.objective {
        ObjectiveKind::MaximizeRate => Objective::MaximizeRate {
            si_cap: dbm_to_watts(point.threshold),
        },
        ObjectiveKind::MinimizeSi => Objective::MinimizeSi {
            rate_floor: point.threshold,
        },
    };
    let mut config = OptConfig::new(objective, point.surface.into());
    if let Some(eps) = scenario.epsilon {
        config.epsilon = eps;
    }
    if let Some(iters) = scenario.max_outer_iters {
        config.max_outer_iters = iters;
    }
    if let Some(g) = scenario.randomizations {
        config.randomizations = g;
    }
    config.seed = mix(seed_base, point.index as u64, seed_index);

    let result = match scenario.objective {
        ObjectiveKind::MaximizeRate => maximize_rate(&system, &config, &design_channels)?,
        ObjectiveKind::MinimizeSi => minimize_si(&system, &config, &design_channels)?,
    };

    // quantize the converged phases when asked, then re-evaluate on the true
    // channels
    let coeffs = if point.quantization_bits > 0 {
        quantize_phases(&result.coeffs, point.quantization_bits)
    } else {
        result.coeffs.clone()
    };
    let eff = effective_channels(&channels, &coeffs)?;
    let rate = data_rate(&eff, &result.w, system.sigma_d2);
    let si = si_power(&eff, &result.w);

    let record = ResultRecord {
        scenario_id: scenario.id.clone(),
        surface: point.surface.label().to_string(),
        elements: point.elements,
        tx_antennas: system.num_tx,
        rx_antennas: point.rx_antennas,
        threshold: point.threshold,
        distance_offset_m: point.distance_offset,
        csi_eta: point.csi_eta,
        quantization_bits: point.quantization_bits,
        seed: seed_index,
        rate_bps: rate,
        si_watts: si,
        si_dbm: watts_to_dbm(si),
        iterations: result.iters,
        status: status_label(result.status).to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let trace = if scenario.emit_traces {
        Some(result.to_json()?)
    } else {
        None
    };
    Ok(RunOutput { record, trace })
}

/// Executes every (point, seed) pair of a scenario. Failures of individual
/// points are recorded in the status column as `error`, never aborting the
/// sweep.
pub fn run_scenario(
    scenario: &Scenario,
    seed_base: u64,
    parallel: Option<usize>,
) -> Result<Vec<ResultRecord>> {
    scenario.validate()?;
    let base = scenario.system.resolve()?;
    let points = scenario.points();
    let mut jobs: Vec<(usize, SweepPoint, u64)> = Vec::new();
    for point in &points {
        for seed_index in 0..scenario.seeds as u64 {
            jobs.push((point.index, *point, seed_index));
        }
    }

    let run_all = |jobs: &[(usize, SweepPoint, u64)]| -> Vec<(usize, u64, Result<RunOutput>)> {
        jobs.par_iter()
            .map(|(idx, point, seed_index)| {
                (
                    *idx,
                    *seed_index,
                    run_point(scenario, &base, point, *seed_index, seed_base),
                )
            })
            .collect()
    };

    let mut outputs = match parallel {
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.max(1))
                .build()
                .map_err(|e| Error::Scenario(format!("worker pool: {e}")))?;
            pool.install(|| run_all(&jobs))
        }
        None => run_all(&jobs),
    };
    // canonical order regardless of completion order
    outputs.sort_by_key(|(idx, seed, _)| (*idx, *seed));

    let mut records = Vec::with_capacity(outputs.len());
    for ((idx, seed, output), point) in outputs
        .into_iter()
        .zip(jobs.iter().map(|(_, p, _)| *p))
    {
        debug_assert_eq!(idx, point.index);
        match output {
            Ok(run) => {
                records.push((run, point));
            }
            Err(e) => {
                records.push((
                    RunOutput {
                        record: ResultRecord {
                            scenario_id: scenario.id.clone(),
                            surface: point.surface.label().to_string(),
                            elements: point.elements,
                            tx_antennas: base.num_tx,
                            rx_antennas: point.rx_antennas,
                            threshold: point.threshold,
                            distance_offset_m: point.distance_offset,
                            csi_eta: point.csi_eta,
                            quantization_bits: point.quantization_bits,
                            seed,
                            rate_bps: f64::NAN,
                            si_watts: f64::NAN,
                            si_dbm: f64::NAN,
                            iterations: 0,
                            status: format!("error: {e}"),
                            wall_time_s: 0.0,
                        },
                        trace: None,
                    },
                    point,
                ));
            }
        }
    }
    Ok(records.into_iter().map(|(run, _)| run.record).collect())
}

/// Runs a scenario and writes `<id>_records.csv`, `<id>_manifest.json` and,
/// when traces are requested, `traces/<id>_p<point>_s<seed>.json` under
/// `out_dir`. Returns the records.
pub fn run_scenario_to_dir(
    scenario: &Scenario,
    out_dir: &Path,
    seed_base: u64,
    parallel: Option<usize>,
) -> Result<Vec<ResultRecord>> {
    scenario.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let base = scenario.system.resolve()?;

    // traces require per-run outputs; reuse the in-memory path for records
    let records = run_scenario(scenario, seed_base, parallel)?;

    let csv_path = out_dir.join(format!("{}_records.csv", scenario.id));
    write_records_csv(&csv_path, &records)?;

    if scenario.emit_traces {
        let trace_dir = out_dir.join("traces");
        std::fs::create_dir_all(&trace_dir)?;
        for point in scenario.points() {
            for seed_index in 0..scenario.seeds as u64 {
                let run = run_point(scenario, &base, &point, seed_index, seed_base)?;
                if let Some(trace) = run.trace {
                    let path = trace_dir.join(format!(
                        "{}_p{:03}_s{:02}.json",
                        scenario.id, point.index, seed_index
                    ));
                    std::fs::write(path, trace)?;
                }
            }
        }
    }

    let manifest = serde_json::json!({
        "scenario": scenario,
        "seed_base": seed_base,
        "build": format!("omnifd {}", env!("CARGO_PKG_VERSION")),
        "records_csv": csv_path.file_name().and_then(|n| n.to_str()),
    });
    let manifest_path = out_dir.join(format!("{}_manifest.json", scenario.id));
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(records)
}

pub fn write_records_csv(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<ResultRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut records = Vec::new();
    for row in reader.deserialize() {
        records.push(row?);
    }
    Ok(records)
}

/// Aggregate of one sweep point over its seeds.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SummaryRow {
    pub scenario_id: String,
    pub surface: String,
    pub elements: usize,
    pub rx_antennas: usize,
    pub threshold: f64,
    pub distance_offset_m: f64,
    pub csi_eta: f64,
    pub quantization_bits: u32,
    pub seeds_used: usize,
    pub excluded: usize,
    pub rate_mean: f64,
    pub rate_std: f64,
    pub si_watts_mean: f64,
    pub si_dbm_of_mean: f64,
}

/// Per-point means and standard deviations over seeds. Runs that did not
/// produce a feasible point (infeasible or errored) are excluded from the
/// statistics and counted in the `excluded` column.
pub fn summarize(records: &[ResultRecord]) -> Vec<SummaryRow> {
    #[derive(Default)]
    struct Acc {
        rates: Vec<f64>,
        sis: Vec<f64>,
        excluded: usize,
    }
    let mut groups: BTreeMap<(String, String, usize, usize, String, String, String, u32), Acc> =
        BTreeMap::new();
    for r in records {
        let key = (
            r.scenario_id.clone(),
            r.surface.clone(),
            r.elements,
            r.rx_antennas,
            format!("{:.9}", r.threshold),
            format!("{:.9}", r.distance_offset_m),
            format!("{:.9}", r.csi_eta),
            r.quantization_bits,
        );
        let acc = groups.entry(key).or_default();
        if r.status == "converged" || r.status == "max_iters" {
            acc.rates.push(r.rate_bps);
            acc.sis.push(r.si_watts);
        } else {
            acc.excluded += 1;
        }
    }
    groups
        .into_iter()
        .map(|(key, acc)| {
            let n = acc.rates.len();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
            let rate_mean = if n > 0 { mean(&acc.rates) } else { f64::NAN };
            let rate_std = if n > 1 {
                (acc.rates
                    .iter()
                    .map(|r| (r - rate_mean).powi(2))
                    .sum::<f64>()
                    / (n - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            let si_mean = if n > 0 { mean(&acc.sis) } else { f64::NAN };
            SummaryRow {
                scenario_id: key.0,
                surface: key.1,
                elements: key.2,
                rx_antennas: key.3,
                threshold: key.4.parse().unwrap_or(f64::NAN),
                distance_offset_m: key.5.parse().unwrap_or(f64::NAN),
                csi_eta: key.6.parse().unwrap_or(f64::NAN),
                quantization_bits: key.7,
                seeds_used: n,
                excluded: acc.excluded,
                rate_mean,
                rate_std,
                si_watts_mean: si_mean,
                si_dbm_of_mean: watts_to_dbm(si_mean),
            }
        })
        .collect()
}

/// Plain-text table of a summary, aligned for reading.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let header = format!(
        "{:<14} {:<4} {:>5} {:>3} {:>10} {:>7} {:>5} {:>4} {:>5} {:>4} {:>10} {:>10} {:>12} {:>9}\n",
        "scenario", "surf", "L", "N", "threshold", "dist_m", "eta", "bits", "seeds", "excl",
        "rate_mean", "rate_std", "si_mean_w", "si_dbm"
    );
    out.push_str(&header);
    for r in rows {
        out.push_str(&format!(
            "{:<14} {:<4} {:>5} {:>3} {:>10.3} {:>7.2} {:>5.2} {:>4} {:>5} {:>4} {:>10.4} {:>10.4} {:>12.4e} {:>9.2}\n",
            r.scenario_id,
            r.surface,
            r.elements,
            r.rx_antennas,
            r.threshold,
            r.distance_offset_m,
            r.csi_eta,
            r.quantization_bits,
            r.seeds_used,
            r.excluded,
            r.rate_mean,
            r.rate_std,
            r.si_watts_mean,
            r.si_dbm_of_mean,
        ));
    }
    out
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes the summary CSV and text table next to a records file.
pub fn summarize_file(records_csv: &Path, out_dir: Option<&Path>) -> Result<PathBuf> {
    let records = read_records_csv(records_csv)?;
    if records.is_empty() {
        return Err(Error::Scenario("no records to summarize".into()));
    }
    let rows = summarize(&records);
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| records_csv.parent().unwrap_or(Path::new(".")).to_path_buf());
    std::fs::create_dir_all(&dir)?;
    let stem = records_csv
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("records");
    let csv_path = dir.join(format!("{stem}_summary.csv"));
    write_summary_csv(&csv_path, &rows)?;
    let table_path = dir.join(format!("{stem}_summary.txt"));
    let mut file = std::fs::File::create(&table_path)?;
    file.write_all(summary_table(&rows).as_bytes())?;
    Ok(csv_path)
}
