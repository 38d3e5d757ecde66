//! Directional samples, the centroid grid and neighborhood extraction.

use std::fs;
use std::path::Path;

use crate::circular::{Direction, Neighborhood};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub direction: Direction,
    /// Strictly positive magnitude (metres for storm peak wave height).
    pub value: f64,
}

/// Paired (direction, value) observations with all values positive.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DirectionalSample {
    observations: Vec<Observation>,
}

impl DirectionalSample {
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        for (i, o) in observations.iter().enumerate() {
            if !(o.value > 0.0) || !o.value.is_finite() {
                return Err(Error::Domain(format!(
                    "observation {i} has non-positive value {}",
                    o.value
                )));
            }
        }
        Ok(DirectionalSample { observations })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(d, v)| Observation {
                    direction: Direction::new(d),
                    value: v,
                })
                .collect(),
        )
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Serialize in the standard input format (header plus one record per line).
    pub fn to_delimited(&self, delimiter: char) -> String {
        let mut out = format!("direction{delimiter}value\n");
        for o in &self.observations {
            out.push_str(&format!("{}{delimiter}{}\n", o.direction.degrees(), o.value));
        }
        out
    }
}

/// Column layout of a delimited sample file.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFormat {
    pub delimiter: char,
    pub direction_column: String,
    pub value_column: String,
}

impl Default for SampleFormat {
    fn default() -> Self {
        SampleFormat {
            delimiter: ',',
            direction_column: "direction".into(),
            value_column: "value".into(),
        }
    }
}

pub fn load_sample(path: &Path, format: &SampleFormat) -> Result<DirectionalSample> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_sample(&text, format)
}

/// Parse delimited text. The header row is required; headers `dir` and
/// `direction` are both accepted for the direction column. Lines starting
/// with `#` and blank lines are skipped.
pub fn parse_sample(text: &str, format: &SampleFormat) -> Result<DirectionalSample> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_line, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header row".into(),
    })?;
    let columns: Vec<String> = header
        .split(format.delimiter)
        .map(|c| c.trim().to_ascii_lowercase())
        .collect();
    let find = |names: &[&str]| columns.iter().position(|c| names.contains(&c.as_str()));
    let dir_col = find(&[format.direction_column.as_str(), "direction", "dir"]).ok_or(Error::Parse {
        line: header_line,
        message: format!("no '{}' column in header", format.direction_column),
    })?;
    let val_col = find(&[format.value_column.as_str(), "value"]).ok_or(Error::Parse {
        line: header_line,
        message: format!("no '{}' column in header", format.value_column),
    })?;

    let mut obs = Vec::new();
    for (line, record) in lines {
        let fields: Vec<&str> = record.split(format.delimiter).map(str::trim).collect();
        let field = |c: usize| {
            fields.get(c).ok_or(Error::Parse {
                line,
                message: format!("expected at least {} fields", c + 1),
            })
        };
        let dir: f64 = field(dir_col)?.parse().map_err(|_| Error::Parse {
            line,
            message: format!("cannot parse direction '{}'", fields[dir_col]),
        })?;
        let value: f64 = field(val_col)?.parse().map_err(|_| Error::Parse {
            line,
            message: format!("cannot parse value '{}'", fields[val_col]),
        })?;
        if !dir.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("direction {dir} is not finite"),
            });
        }
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("value {value} must be positive"),
            });
        }
        obs.push(Observation {
            direction: Direction::new(dir),
            value,
        });
    }
    DirectionalSample::new(obs)
}

/// Strictly increasing centroid directions.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidGrid {
    centroids: Vec<Direction>,
}

impl CentroidGrid {
    pub fn new(angles: &[f64]) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::Empty("centroid grid"));
        }
        for w in angles.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Domain("centroid angles must be strictly increasing".into()));
            }
        }
        if angles[0] < 0.0 || *angles.last().unwrap() >= 360.0 {
            return Err(Error::Domain("centroid angles must lie in [0, 360)".into()));
        }
        Ok(CentroidGrid {
            centroids: angles.iter().map(|&a| Direction::new(a)).collect(),
        })
    }

    /// `m` equally spaced centroids starting at 0.
    pub fn regular(m: usize) -> Self {
        let step = 360.0 / m as f64;
        CentroidGrid {
            centroids: (0..m).map(|j| Direction::new(j as f64 * step)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn centroids(&self) -> &[Direction] {
        &self.centroids
    }

    pub fn get(&self, j: usize) -> Direction {
        self.centroids[j]
    }

    /// Index of the centroid closest to `x` in wrapped distance (ties go to
    /// the lower index).
    pub fn nearest(&self, x: Direction) -> usize {
        let a = x.degrees();
        let pos = self.centroids.partition_point(|c| c.degrees() <= a);
        let m = self.centroids.len();
        let cand = [(pos + m - 1) % m, pos % m];
        let da = crate::circular::wrapped_distance(self.centroids[cand[0]], x);
        let db = crate::circular::wrapped_distance(self.centroids[cand[1]], x);
        if db < da || (db == da && cand[1] < cand[0]) {
            cand[1]
        } else {
            cand[0]
        }
    }
}

impl Default for CentroidGrid {
    /// One centroid per whole degree, `0..=359`.
    fn default() -> Self {
        CentroidGrid::regular(360)
    }
}

/// Observations falling in one neighborhood, sorted ascending by value.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodSample {
    pub centroid: Direction,
    pub values: Vec<f64>,
    pub directions: Vec<Direction>,
}

impl NeighborhoodSample {
    pub fn tally(&self) -> usize {
        self.values.len()
    }

    /// Largest values first: `rank_from_top = 1` is the maximum.
    pub fn order_statistic(&self, rank_from_top: usize) -> Result<f64> {
        let n = self.values.len();
        if rank_from_top == 0 || rank_from_top > n {
            return Err(Error::OutOfRange(format!(
                "rank {rank_from_top} outside 1..={n}"
            )));
        }
        Ok(self.values[n - rank_from_top])
    }

    /// Number of values strictly above `u`.
    pub fn count_above(&self, u: f64) -> usize {
        self.values.len() - self.values.partition_point(|&v| v <= u)
    }
}

pub fn order_statistic(ns: &NeighborhoodSample, rank_from_top: usize) -> Result<f64> {
    ns.order_statistic(rank_from_top)
}

/// Direct extraction by scanning every observation.
pub fn extract_neighborhood(sample: &DirectionalSample, nbhd: &Neighborhood) -> NeighborhoodSample {
    let members: Vec<usize> = sample
        .observations()
        .iter()
        .enumerate()
        .filter(|(_, o)| nbhd.contains(o.direction))
        .map(|(i, _)| i)
        .collect();
    assemble(sample, nbhd.centroid(), members)
}

fn assemble(sample: &DirectionalSample, centroid: Direction, mut members: Vec<usize>) -> NeighborhoodSample {
    let obs = sample.observations();
    // ascending by value, ties by input order
    members.sort_by(|&a, &b| obs[a].value.total_cmp(&obs[b].value).then(a.cmp(&b)));
    NeighborhoodSample {
        centroid,
        values: members.iter().map(|&i| obs[i].value).collect(),
        directions: members.iter().map(|&i| obs[i].direction).collect(),
    }
}

/// Bins observations by whole degree so that extracting a neighborhood only
/// touches the bins it overlaps.
#[derive(Debug, Clone)]
pub struct NeighborhoodIndex<'a> {
    sample: &'a DirectionalSample,
    bins: Vec<Vec<usize>>,
}

impl<'a> NeighborhoodIndex<'a> {
    pub fn new(sample: &'a DirectionalSample) -> Self {
        let mut bins = vec![Vec::new(); 360];
        for (i, o) in sample.observations().iter().enumerate() {
            let b = (o.direction.degrees().floor() as usize).min(359);
            bins[b].push(i);
        }
        NeighborhoodIndex { sample, bins }
    }

    pub fn sample(&self) -> &DirectionalSample {
        self.sample
    }

    pub fn extract(&self, nbhd: &Neighborhood) -> NeighborhoodSample {
        let h = nbhd.half_width();
        if h >= 179.0 {
            return extract_neighborhood(self.sample, nbhd);
        }
        let c = nbhd.centroid().degrees();
        let lo = (c - h).floor() as i64 - 1;
        let hi = (c + h).floor() as i64 + 1;
        let mut members = Vec::new();
        for b in lo..=hi {
            let bin = b.rem_euclid(360) as usize;
            for &i in &self.bins[bin] {
                if nbhd.contains(self.sample.observations()[i].direction) {
                    members.push(i);
                }
            }
        }
        assemble(self.sample, nbhd.centroid(), members)
    }
}
