//! Time series produced by a simulation, plus CSV and JSON summary writers.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::model::RobotModel;

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    /// Torque applied over the step that ended at `t` (zero for the initial sample).
    pub u: Vec<f64>,
    /// Normal contact force per link, N (impulse / Δt for the time-stepping engine).
    pub f_n: Vec<f64>,
    pub f_t: Vec<f64>,
    pub gap: Vec<f64>,
    pub energy: f64,
    pub head: [f64; 2],
}

/// Solver health for one step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub active_contacts: usize,
    pub iterations: usize,
    pub complementarity: f64,
    pub cone: f64,
    pub nonnegativity: f64,
    pub penetration: f64,
    pub dynamics: f64,
    pub force_scale: f64,
    /// Change of total horizontal momentum caused by the contact impulses.
    pub contact_momentum_x: f64,
    /// `½ v⁺ᵀ M v⁺ − ½ ṽᵀ M ṽ`: kinetic energy change due to contact.
    pub contact_energy: f64,
    pub allocation_roundtrip: Option<f64>,
    pub allocation_objective: Option<f64>,
}

/// Per-link contact statistics accumulated at full integration resolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactStats {
    pub peak_force: f64,
    pub contact_time: f64,
    pub episodes: usize,
    /// Mean length of a contiguous contact episode, s.
    pub mean_duration: f64,
    #[serde(skip)]
    in_contact: bool,
}

impl ContactStats {
    pub fn observe(&mut self, force: f64, threshold: f64, dt: f64) {
        self.peak_force = self.peak_force.max(force);
        let touching = force > threshold;
        if touching {
            self.contact_time += dt;
            if !self.in_contact {
                self.episodes += 1;
            }
        }
        self.in_contact = touching;
        self.mean_duration = if self.episodes > 0 {
            self.contact_time / self.episodes as f64
        } else {
            0.0
        };
    }
}

/// Fraction of a link's weight above which it counts as in contact.
pub const CONTACT_THRESHOLD_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub engine: String,
    pub dt: f64,
    /// Integration steps per recorded sample.
    pub stride: usize,
    pub n_links: usize,
    pub samples: Vec<Sample>,
    pub steps: Vec<StepRecord>,
    pub contact_stats: Vec<ContactStats>,
}

impl TrajectoryLog {
    pub fn new(engine: &str, dt: f64, stride: usize, model: &RobotModel) -> Self {
        Self {
            engine: engine.to_string(),
            dt,
            stride,
            n_links: model.n_links(),
            samples: Vec::new(),
            steps: Vec::new(),
            contact_stats: vec![ContactStats::default(); model.n_links()],
        }
    }

    pub fn head_displacement(&self) -> [f64; 2] {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => [b.head[0] - a.head[0], b.head[1] - a.head[1]],
            _ => [0.0, 0.0],
        }
    }

    pub fn peak_torque(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|s| s.u.iter())
            .fold(0.0, |a, u| a.max(u.abs()))
    }

    pub fn mean_abs_torque(&self) -> f64 {
        let (sum, n) = self
            .samples
            .iter()
            .skip(1)
            .flat_map(|s| s.u.iter())
            .fold((0.0, 0usize), |(s, n), u| (s + u.abs(), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn peak_contact_force(&self) -> f64 {
        self.contact_stats
            .iter()
            .fold(0.0, |a, s| a.max(s.peak_force))
    }

    pub fn summary(&self) -> Summary {
        let disp = self.head_displacement();
        Summary {
            schema_version: LOG_SCHEMA_VERSION,
            engine: self.engine.clone(),
            dt: self.dt,
            samples: self.samples.len(),
            horizon: self.samples.last().map_or(0.0, |s| s.t),
            head_displacement: disp[0],
            head_displacement_vector: disp,
            peak_torque: self.peak_torque(),
            mean_abs_torque: self.mean_abs_torque(),
            peak_contact_force: self.peak_contact_force(),
            energy_initial: self.samples.first().map_or(0.0, |s| s.energy),
            energy_final: self.samples.last().map_or(0.0, |s| s.energy),
            energy_trace: self.samples.iter().map(|s| s.energy).collect(),
            contact_stats: self.contact_stats.clone(),
            max_residuals: self.max_residuals(),
        }
    }

    pub fn max_residuals(&self) -> StepRecord {
        let mut m = StepRecord::default();
        for s in &self.steps {
            m.active_contacts = m.active_contacts.max(s.active_contacts);
            m.iterations = m.iterations.max(s.iterations);
            m.complementarity = m.complementarity.max(s.complementarity);
            m.cone = m.cone.max(s.cone);
            m.nonnegativity = m.nonnegativity.max(s.nonnegativity);
            m.penetration = m.penetration.min(s.penetration);
            m.dynamics = m.dynamics.max(s.dynamics);
            m.force_scale = m.force_scale.max(s.force_scale);
            m.contact_momentum_x = m.contact_momentum_x.max(s.contact_momentum_x.abs());
            m.contact_energy = m.contact_energy.max(s.contact_energy);
            if let Some(r) = s.allocation_roundtrip {
                m.allocation_roundtrip = Some(m.allocation_roundtrip.unwrap_or(0.0).max(r));
            }
        }
        m
    }

    pub fn csv_header(&self) -> Vec<String> {
        let nq = self.n_links + 2;
        let nj = self.n_links - 1;
        let mut cols = vec!["t".to_string()];
        cols.extend((0..nq).map(|i| format!("q{i}")));
        cols.extend((0..nq).map(|i| format!("v{i}")));
        cols.extend((0..nj).map(|i| format!("u{i}")));
        for prefix in ["fn", "ft", "gap"] {
            cols.extend((0..self.n_links).map(|i| format!("{prefix}{i}")));
        }
        cols.extend(["energy", "head_x", "head_z"].map(String::from));
        cols
    }

    /// One row per recorded sample.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header())?;
        for s in &self.samples {
            let mut row = Vec::with_capacity(8 + 6 * self.n_links);
            row.push(s.t);
            row.extend(&s.q);
            row.extend(&s.v);
            row.extend(&s.u);
            row.extend(&s.f_n);
            row.extend(&s.f_t);
            row.extend(&s.gap);
            row.extend([s.energy, s.head[0], s.head[1]]);
            w.write_record(row.iter().map(|x| format!("{x:e}")))?;
        }
        w.flush()
    }

    /// Long-format per-contact table: `t,link,f_n,f_t,gap`.
    pub fn write_contact_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "link", "f_n", "f_t", "gap"])?;
        for s in &self.samples {
            for i in 0..self.n_links {
                w.write_record([
                    format!("{:e}", s.t),
                    i.to_string(),
                    format!("{:e}", s.f_n[i]),
                    format!("{:e}", s.f_t[i]),
                    format!("{:e}", s.gap[i]),
                ])?;
            }
        }
        w.flush()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub engine: String,
    pub dt: f64,
    pub samples: usize,
    pub horizon: f64,
    /// Forward (x) displacement of the head link's center of mass, m.
    pub head_displacement: f64,
    pub head_displacement_vector: [f64; 2],
    pub peak_torque: f64,
    pub mean_abs_torque: f64,
    pub peak_contact_force: f64,
    pub energy_initial: f64,
    pub energy_final: f64,
    pub energy_trace: Vec<f64>,
    pub contact_stats: Vec<ContactStats>,
    pub max_residuals: StepRecord,
}

/// A trajectory CSV read back as named columns.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    /// Reads a numeric table whose first column is `t`. Rows with a field count that
    /// differs from the header are rejected.
    pub fn read<R: Read>(input: R) -> Result<Self, String> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let columns: Vec<String> = reader
            .headers()
            .map_err(|e| e.to_string())?
            .iter()
            .map(String::from)
            .collect();
        if columns.first().map(String::as_str) != Some("t") {
            return Err("first column must be t".into());
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| e.to_string())?;
            let row: Vec<f64> = record
                .iter()
                .map(|x| x.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| format!("row {}: {e}", i + 2))?;
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}
