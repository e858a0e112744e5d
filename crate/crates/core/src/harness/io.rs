//! CSV dataset I/O.
//!
//! | file | header                                                      | units |
//! |------|-------------------------------------------------------------|-------|
//! | IMU  | `t,fx,fy,fz,wx,wy,wz`                                       | s, m/s^2, rad/s |
//! | DVL  | `t,b1,b2,b3,b4` (beam) or `t,vx,vy,vz` (body frame)         | s, m/s |
//! | GT   | `t,lat_deg,lon_deg,h,vn,ve,vd,roll_deg,pitch_deg,yaw_deg`   | s, deg, m, m/s, deg |
//!
//! Angles are degrees on disk and radians in memory. Sample times must be
//! strictly increasing and every interval must be within 1% of the nominal
//! rate.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Vector3, Vector4};

use crate::eskf::{DvlVelocity, SensorStreams};
use crate::nav::{Dcm, EulerAngles, GeodeticPosition};
use crate::sensors::{estimate_dvl_velocity, BeamMeasurement, DvlConfig};
use crate::strapdown::{ImuSample, NavState};
use crate::{Error, Result};

pub const IMU_HEADER: &[&str] = &["t", "fx", "fy", "fz", "wx", "wy", "wz"];
pub const DVL_BEAM_HEADER: &[&str] = &["t", "b1", "b2", "b3", "b4"];
pub const DVL_VEL_HEADER: &[&str] = &["t", "vx", "vy", "vz"];
pub const GT_HEADER: &[&str] = &[
    "t",
    "lat_deg",
    "lon_deg",
    "h",
    "vn",
    "ve",
    "vd",
    "roll_deg",
    "pitch_deg",
    "yaw_deg",
];

pub const IMU_RATE_HZ: f64 = 100.0;
pub const DVL_RATE_HZ: f64 = 1.0;
/// Allowed relative deviation of each sample interval from nominal.
pub const RATE_TOLERANCE: f64 = 0.01;

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            path: display(path),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Read a numeric CSV whose header must equal one of `headers`.
/// Returns the index of the matched header and the rows.
fn read_table(path: &Path, headers: &[&[&str]]) -> Result<(usize, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let found: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let Some(which) = headers.iter().position(|h| h.iter().eq(found.iter())) else {
        return Err(Error::MalformedHeader {
            path: display(path),
            expected: headers
                .iter()
                .map(|h| h.join(","))
                .collect::<Vec<_>>()
                .join(" | "),
            found: found.join(","),
        });
    };
    let width = headers[which].len();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != width {
            return Err(Error::Parse {
                path: display(path),
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    path: display(path),
                    line,
                    message: format!("`{s}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((which, rows))
}

/// Strict monotonicity, then every interval within tolerance of `1/rate`.
pub fn check_timing(path: &Path, times: &[f64], rate_hz: f64) -> Result<()> {
    for (i, w) in times.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::NonMonotonicTime {
                path: display(path),
                line: i + 3,
            });
        }
    }
    let nominal = 1.0 / rate_hz;
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        if (dt - nominal).abs() > RATE_TOLERANCE * nominal {
            return Err(Error::RateViolation {
                path: display(path),
                measured: 1.0 / dt,
                expected: rate_hz,
            });
        }
    }
    Ok(())
}

fn write_table(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_imu_csv(path: &Path, imu: &[ImuSample]) -> Result<()> {
    write_table(
        path,
        IMU_HEADER,
        imu.iter()
            .map(|s| vec![s.t, s.f.x, s.f.y, s.f.z, s.w.x, s.w.y, s.w.z]),
    )
}

pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample>> {
    let (_, rows) = read_table(path, &[IMU_HEADER])?;
    let imu: Vec<ImuSample> = rows
        .iter()
        .map(|r| {
            ImuSample::new(
                r[0],
                Vector3::new(r[1], r[2], r[3]),
                Vector3::new(r[4], r[5], r[6]),
            )
        })
        .collect();
    check_timing(
        path,
        &imu.iter().map(|s| s.t).collect::<Vec<_>>(),
        IMU_RATE_HZ,
    )?;
    Ok(imu)
}

/// Contents of a DVL file in whichever form it was recorded.
#[derive(Debug, Clone, PartialEq)]
pub enum DvlRecord {
    Beams(Vec<BeamMeasurement>),
    Velocity(Vec<DvlVelocity>),
}

impl DvlRecord {
    /// Body-frame velocities, solving beam records by least squares.
    pub fn to_velocity(&self, cfg: &DvlConfig) -> Result<Vec<DvlVelocity>> {
        match self {
            DvlRecord::Velocity(v) => Ok(v.clone()),
            DvlRecord::Beams(b) => b
                .iter()
                .map(|m| {
                    Ok(DvlVelocity {
                        t: m.t,
                        v: estimate_dvl_velocity(m, cfg)?,
                    })
                })
                .collect(),
        }
    }
}

pub fn write_dvl_beams_csv(path: &Path, beams: &[BeamMeasurement]) -> Result<()> {
    write_table(
        path,
        DVL_BEAM_HEADER,
        beams
            .iter()
            .map(|b| vec![b.t, b.y[0], b.y[1], b.y[2], b.y[3]]),
    )
}

pub fn write_dvl_velocity_csv(path: &Path, dvl: &[DvlVelocity]) -> Result<()> {
    write_table(
        path,
        DVL_VEL_HEADER,
        dvl.iter().map(|d| vec![d.t, d.v.x, d.v.y, d.v.z]),
    )
}

pub fn read_dvl_csv(path: &Path) -> Result<DvlRecord> {
    let (which, rows) = read_table(path, &[DVL_BEAM_HEADER, DVL_VEL_HEADER])?;
    check_timing(
        path,
        &rows.iter().map(|r| r[0]).collect::<Vec<_>>(),
        DVL_RATE_HZ,
    )?;
    Ok(if which == 0 {
        DvlRecord::Beams(
            rows.iter()
                .map(|r| BeamMeasurement {
                    t: r[0],
                    y: Vector4::new(r[1], r[2], r[3], r[4]),
                })
                .collect(),
        )
    } else {
        DvlRecord::Velocity(
            rows.iter()
                .map(|r| DvlVelocity {
                    t: r[0],
                    v: Vector3::new(r[1], r[2], r[3]),
                })
                .collect(),
        )
    })
}

/// Ground-truth sample; biases are not part of the file format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtSample {
    pub t: f64,
    pub state: NavState,
}

pub fn write_gt_csv(path: &Path, gt: &[GtSample]) -> Result<()> {
    let rows = gt
        .iter()
        .map(|g| {
            let s = &g.state;
            let e = s.att.to_euler()?.to_degrees();
            Ok(vec![
                g.t,
                s.pos.lat.to_degrees(),
                s.pos.lon.to_degrees(),
                s.pos.h,
                s.vel.x,
                s.vel.y,
                s.vel.z,
                e[0],
                e[1],
                e[2],
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    write_table(path, GT_HEADER, rows.into_iter())
}

pub fn read_gt_csv(path: &Path) -> Result<Vec<GtSample>> {
    let (_, rows) = read_table(path, &[GT_HEADER])?;
    let gt: Vec<GtSample> = rows
        .iter()
        .map(|r| GtSample {
            t: r[0],
            state: NavState::new(
                GeodeticPosition::from_degrees(r[1], r[2], r[3]),
                Vector3::new(r[4], r[5], r[6]),
                Dcm::from_euler(EulerAngles::from_degrees(r[7], r[8], r[9])),
            ),
        })
        .collect();
    check_timing(
        path,
        &gt.iter().map(|g| g.t).collect::<Vec<_>>(),
        IMU_RATE_HZ,
    )?;
    Ok(gt)
}

/// A recorded or exported mission.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub streams: SensorStreams,
    pub truth: Option<Vec<GtSample>>,
}

pub fn load_dataset(
    imu: &Path,
    dvl: &Path,
    gt: Option<&Path>,
    dvl_cfg: &DvlConfig,
) -> Result<Dataset> {
    let imu = read_imu_csv(imu)?;
    let dvl = read_dvl_csv(dvl)?.to_velocity(dvl_cfg)?;
    let truth = gt.map(read_gt_csv).transpose()?;
    if let Some(t) = &truth {
        if t.len() != imu.len() {
            return Err(Error::LengthMismatch(t.len(), imu.len()));
        }
    }
    Ok(Dataset {
        streams: SensorStreams { imu, dvl },
        truth,
    })
}

/// Write `imu.csv`, `dvl.csv` (beams), `gt.csv` and the generating
/// `scenario.json` into `dir`.
pub fn export_scenario(scenario: &super::scenario::Scenario, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("scenario.json"),
        serde_json::to_string_pretty(&scenario.spec)?,
    )?;
    write_imu_csv(&dir.join("imu.csv"), &scenario.imu)?;
    write_dvl_beams_csv(&dir.join("dvl.csv"), &scenario.dvl_beams)?;
    let gt: Vec<GtSample> = scenario
        .imu
        .iter()
        .zip(&scenario.truth)
        .map(|(s, state)| GtSample {
            t: s.t,
            state: *state,
        })
        .collect();
    write_gt_csv(&dir.join("gt.csv"), &gt)
}

/// Unit conversions at file and configuration boundaries.
pub mod units {
    pub const MILLI_G: f64 = 9.80665e-3;

    pub fn mg_to_mps2(mg: f64) -> f64 {
        mg * MILLI_G
    }

    pub fn deg_per_hour_to_rad_per_s(d: f64) -> f64 {
        d.to_radians() / 3600.0
    }
}
