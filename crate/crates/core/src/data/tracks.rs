use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DataError, Point};

/// Column layout of a track file.
///
/// * `generic-csv`: `vehicle_id, frame, x, y` with `x` lateral and `y`
///   longitudinal, in meters.
/// * `highd-csv`: a highD `tracks.csv`; `id` is the vehicle, the highD `y`
///   axis is lateral and `x` longitudinal. When `width`/`height` columns are
///   present the bounding-box centre is used. Defaults to 25 Hz.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackFormat {
    GenericCsv,
    HighdCsv,
}

impl FromStr for TrackFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "generic-csv" => Ok(Self::GenericCsv),
            "highd-csv" => Ok(Self::HighdCsv),
            other => Err(format!("unknown track format `{other}` (expected generic-csv or highd-csv)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackPoint {
    pub vehicle_id: i64,
    pub frame: i64,
    pub x: f64,
    pub y: f64,
}

/// Positions of one vehicle ordered by strictly increasing frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub vehicle_id: i64,
    pub frames: Vec<i64>,
    pub points: Vec<Point>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Index of `frame`, if present.
    pub fn position_of(&self, frame: i64) -> Option<usize> {
        self.frames.binary_search(&frame).ok()
    }
}

/// Reads a track file and resamples it to `time_step`.
///
/// The frame rate comes from a `# rate_hz=<value>` line before the header,
/// or from `rate_hz` when the file has none. Resampled frames are integer
/// multiples of `time_step`.
pub fn load_tracks(
    path: &Path,
    format: TrackFormat,
    rate_hz: Option<f64>,
    time_step: f64,
) -> Result<Vec<Track>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_tracks(&text, format, rate_hz, time_step)
}

/// [`load_tracks`] on in-memory file content.
pub fn parse_tracks(
    text: &str,
    format: TrackFormat,
    rate_hz: Option<f64>,
    time_step: f64,
) -> Result<Vec<Track>, DataError> {
    let mut declared = None;
    let mut skipped = 0u64;
    let mut body_start = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if let Some(directive) = trimmed.strip_prefix('#') {
            if let Some(value) = directive.trim().strip_prefix("rate_hz=") {
                let rate: f64 = value.trim().parse().map_err(|_| DataError::Parse {
                    line: skipped + 1,
                    message: format!("bad rate directive `{trimmed}`"),
                })?;
                declared = Some(rate);
            }
        } else if !trimmed.is_empty() {
            break;
        }
        skipped += 1;
        body_start += line.len();
    }

    let rate = match (declared, rate_hz) {
        (Some(d), Some(g)) if (d - g).abs() > 1e-9 => return Err(DataError::RateConflict { declared: d, given: g }),
        (Some(d), _) => d,
        (None, Some(g)) => g,
        (None, None) if format == TrackFormat::HighdCsv => 25.0,
        (None, None) => return Err(DataError::MissingRate),
    };
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(DataError::InvalidRate(rate));
    }

    let points = read_points(&text[body_start..], format, skipped)?;
    let tracks = group_tracks(points)?;
    Ok(tracks.iter().map(|t| resample(t, rate, time_step)).collect())
}

struct Columns {
    id: usize,
    frame: usize,
    lateral: usize,
    longitudinal: usize,
    // highD box extents: lateral extent is `height`, longitudinal is `width`.
    lateral_extent: Option<usize>,
    longitudinal_extent: Option<usize>,
}

fn find(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

fn columns(headers: &csv::StringRecord, format: TrackFormat) -> Result<Columns, DataError> {
    Ok(match format {
        TrackFormat::GenericCsv => Columns {
            id: find(headers, "vehicle_id")?,
            frame: find(headers, "frame")?,
            lateral: find(headers, "x")?,
            longitudinal: find(headers, "y")?,
            lateral_extent: None,
            longitudinal_extent: None,
        },
        TrackFormat::HighdCsv => Columns {
            id: find(headers, "id")?,
            frame: find(headers, "frame")?,
            lateral: find(headers, "y")?,
            longitudinal: find(headers, "x")?,
            lateral_extent: find(headers, "height").ok(),
            longitudinal_extent: find(headers, "width").ok(),
        },
    })
}

/// `(line number, point)` pairs in file order.
fn read_points(body: &str, format: TrackFormat, offset: u64) -> Result<Vec<(u64, TrackPoint)>, DataError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let cols = columns(reader.headers()?, format)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = offset + record.position().map_or(0, |p| p.line());
        let field = |idx: usize, name: &str| -> Result<&str, DataError> {
            record.get(idx).ok_or_else(|| DataError::Parse {
                line,
                message: format!("missing value for `{name}`"),
            })
        };
        let int = |idx: usize, name: &str| -> Result<i64, DataError> {
            let raw = field(idx, name)?;
            raw.parse::<i64>()
                .or_else(|_| raw.parse::<f64>().ok().filter(|v| v.fract() == 0.0).map(|v| v as i64).ok_or(()))
                .map_err(|_| DataError::Parse {
                    line,
                    message: format!("`{name}` is not an integer: `{raw}`"),
                })
        };
        let real = |idx: usize, name: &str| -> Result<f64, DataError> {
            let raw = field(idx, name)?;
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DataError::Parse {
                line,
                message: format!("`{name}` is not a finite number: `{raw}`"),
            })
        };
        let mut x = real(cols.lateral, "lateral")?;
        let mut y = real(cols.longitudinal, "longitudinal")?;
        if let Some(i) = cols.lateral_extent {
            x += real(i, "height")? / 2.0;
        }
        if let Some(i) = cols.longitudinal_extent {
            y += real(i, "width")? / 2.0;
        }
        out.push((
            line,
            TrackPoint {
                vehicle_id: int(cols.id, "vehicle id")?,
                frame: int(cols.frame, "frame")?,
                x,
                y,
            },
        ));
    }
    Ok(out)
}

fn group_tracks(points: Vec<(u64, TrackPoint)>) -> Result<Vec<Track>, DataError> {
    let mut by_vehicle: BTreeMap<i64, Track> = BTreeMap::new();
    for (line, p) in points {
        let track = by_vehicle.entry(p.vehicle_id).or_insert_with(|| Track {
            vehicle_id: p.vehicle_id,
            frames: Vec::new(),
            points: Vec::new(),
        });
        if let Some(&previous) = track.frames.last() {
            if p.frame == previous {
                return Err(DataError::DuplicateRow {
                    line,
                    vehicle: p.vehicle_id,
                    frame: p.frame,
                });
            }
            if p.frame < previous {
                return Err(DataError::NonMonotone {
                    line,
                    vehicle: p.vehicle_id,
                    frame: p.frame,
                    previous,
                });
            }
        }
        track.frames.push(p.frame);
        track.points.push([p.x, p.y]);
    }
    Ok(by_vehicle.into_values().collect())
}

/// Resamples a track recorded at `rate_hz` onto the `time_step` grid by
/// linear interpolation.
///
/// Output frame `k` is time `k * time_step`. When the rate ratio is an
/// integer the retained input frames are copied exactly, so resampling a
/// track already at `1 / time_step` is the identity.
pub fn resample(track: &Track, rate_hz: f64, time_step: f64) -> Track {
    let ratio = rate_hz * time_step;
    let integral = (ratio - ratio.round()).abs() < 1e-9 && ratio.round() >= 1.0;
    let mut frames = Vec::new();
    let mut points = Vec::new();
    let (Some(&first), Some(&last)) = (track.frames.first(), track.frames.last()) else {
        return Track {
            vehicle_id: track.vehicle_id,
            frames,
            points,
        };
    };

    let (k_start, k_end) = if integral {
        let r = ratio.round() as i64;
        (first.div_euclid(r) + i64::from(first.rem_euclid(r) != 0), last.div_euclid(r))
    } else {
        (
            (first as f64 / ratio - 1e-9).ceil() as i64,
            (last as f64 / ratio + 1e-9).floor() as i64,
        )
    };

    let mut cursor = 0;
    for k in k_start..=k_end {
        let target = if integral {
            (k * ratio.round() as i64) as f64
        } else {
            k as f64 * ratio
        };
        while cursor + 1 < track.frames.len() && (track.frames[cursor + 1] as f64) <= target {
            cursor += 1;
        }
        let f0 = track.frames[cursor] as f64;
        let p0 = track.points[cursor];
        let point = if f0 == target || cursor + 1 == track.frames.len() {
            p0
        } else {
            let f1 = track.frames[cursor + 1] as f64;
            let p1 = track.points[cursor + 1];
            let w = (target - f0) / (f1 - f0);
            [p0[0] + w * (p1[0] - p0[0]), p0[1] + w * (p1[1] - p0[1])]
        };
        frames.push(k);
        points.push(point);
    }
    Track {
        vehicle_id: track.vehicle_id,
        frames,
        points,
    }
}
