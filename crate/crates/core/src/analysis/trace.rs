//! Per-step rollout trace and its CSV form.
//!
//! The file starts with `#` lines (format tag, step time, faults, optional
//! collapse step, units) followed by a plain CSV table. Floats are written in
//! shortest round-trip form, so reading a file back gives identical values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::rollout::StepRecord;
use crate::scenarios::Fault;

pub const FORMAT_TAG: &str = "afe-rpb trace v1";

pub const COLUMNS: [&str; 38] = [
    "t", "w", "v_dc", "i_a", "i_b", "mb_a", "mb_b", "m_a", "m_b", "u_a", "u_b", "sigma", "v_a", "v_b",
    "tau_m", "loss_nom", "loss_vdc", "loss_ig", "p0", "p1", "p2", "p3", "p4", "p5", "p6", "p7", "p8",
    "p9", "ph0", "ph1", "ph2", "ph3", "ph4", "ph5", "ph6", "ph7", "ph8", "ph9",
];

pub const NCOL: usize = COLUMNS.len();

const UNITS: &str = "t s; w rad/s; v_dc V; i_a,i_b A; mb_*,m_* modulation; u_* modulation; \
sigma 0/1; v_a,v_b V; tau_m N*m; loss_* per-unit; p*,ph* slot units (w rad/s, v_dc V, i A, xi_w N*m, xi_vdc A, xi_i V, 8-9 A)";

/// Column indices.
pub mod col {
    pub const T: usize = 0;
    pub const W: usize = 1;
    pub const V_DC: usize = 2;
    pub const I_A: usize = 3;
    pub const I_B: usize = 4;
    pub const MB_A: usize = 5;
    pub const MB_B: usize = 6;
    pub const M_A: usize = 7;
    pub const M_B: usize = 8;
    pub const U_A: usize = 9;
    pub const U_B: usize = 10;
    pub const SIGMA: usize = 11;
    pub const V_A: usize = 12;
    pub const V_B: usize = 13;
    pub const TAU_M: usize = 14;
    pub const LOSS_NOM: usize = 15;
    pub const LOSS_VDC: usize = 16;
    pub const LOSS_IG: usize = 17;
    pub const P: usize = 18;
    pub const P_HAT: usize = 28;
}

pub type Row = [f64; NCOL];

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Step time (s).
    pub h: f64,
    pub faults: Vec<Fault>,
    /// Step at which the DC bus collapsed, if it did.
    pub collapse_step: Option<usize>,
    pub rows: Vec<Row>,
}

impl Trace {
    pub fn from_records(records: &[StepRecord], h: f64, faults: Vec<Fault>, collapse_step: Option<usize>) -> Self {
        let rows = records
            .iter()
            .map(|r| {
                let mut row = [0.0; NCOL];
                let (mb, m) = (r.m_g_b(), r.m_g());
                row[col::T] = r.t as f64 * h;
                row[col::W] = r.x.w;
                row[col::V_DC] = r.x.v_dc;
                row[col::I_A] = r.x.i_g.x;
                row[col::I_B] = r.x.i_g.y;
                row[col::MB_A] = mb.x;
                row[col::MB_B] = mb.y;
                row[col::M_A] = m.x;
                row[col::M_B] = m.y;
                row[col::U_A] = r.u.x;
                row[col::U_B] = r.u.y;
                row[col::SIGMA] = if r.sigma { 1.0 } else { 0.0 };
                row[col::V_A] = r.v_g.x;
                row[col::V_B] = r.v_g.y;
                row[col::TAU_M] = r.tau_m();
                row[col::LOSS_NOM] = r.loss.nominal;
                row[col::LOSS_VDC] = r.loss.vdc;
                row[col::LOSS_IG] = r.loss.ig;
                row[col::P..col::P + 10].copy_from_slice(&r.p);
                row[col::P_HAT..col::P_HAT + 10].copy_from_slice(&r.p_hat);
                row
            })
            .collect();
        Self {
            h,
            faults,
            collapse_step,
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(name: &str) -> Option<usize> {
        COLUMNS.iter().position(|c| *c == name)
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[idx]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Result<Vec<f64>> {
        Self::column_index(name)
            .map(|i| self.column(i))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown trace column {name:?}")))
    }

    pub fn time(&self) -> Vec<f64> {
        self.column(col::T)
    }

    pub fn i_norm(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[col::I_A].hypot(r[col::I_B])).collect()
    }

    pub fn m_norm(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[col::M_A].hypot(r[col::M_B])).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str(&format!("# {FORMAT_TAG}\n"));
        out.push_str(&format!("# h = {}\n", self.h));
        out.push_str(&format!("# faults = {}\n", serde_json::to_string(&self.faults)?));
        if let Some(s) = self.collapse_step {
            out.push_str(&format!("# collapse_step = {s}\n"));
        }
        out.push_str(&format!("# units: {UNITS}\n"));
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record(COLUMNS).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        out.push_str(&String::from_utf8(body).map_err(|e| Error::Parse(e.to_string()))?);
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut h = None;
        let mut faults = Vec::new();
        let mut collapse_step = None;
        let mut tagged = false;
        let mut body = String::new();
        for line in text.lines() {
            let Some(meta) = line.strip_prefix('#') else {
                body.push_str(line);
                body.push('\n');
                continue;
            };
            let meta = meta.trim();
            if meta == FORMAT_TAG {
                tagged = true;
            } else if let Some((k, v)) = meta.split_once('=') {
                let v = v.trim();
                match k.trim() {
                    "h" => h = Some(parse_f64(v)?),
                    "faults" => faults = serde_json::from_str(v)?,
                    "collapse_step" => {
                        collapse_step = Some(v.parse().map_err(|_| Error::Parse(format!("bad collapse step {v:?}")))?)
                    }
                    _ => {}
                }
            }
        }
        if !tagged {
            return Err(Error::Parse(format!("missing `# {FORMAT_TAG}` header")));
        }
        let h = h.ok_or_else(|| Error::Parse("missing step time header".into()))?;
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let header = rd.headers().map_err(|e| Error::Parse(e.to_string()))?;
        if header.iter().ne(COLUMNS.iter().copied()) {
            return Err(Error::Parse("trace columns do not match".into()));
        }
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.len() != NCOL {
                return Err(Error::Parse(format!("row {} has {} fields", rows.len(), rec.len())));
            }
            let mut row = [0.0; NCOL];
            for (dst, s) in row.iter_mut().zip(rec.iter()) {
                *dst = parse_f64(s)?;
            }
            rows.push(row);
        }
        Ok(Self {
            h,
            faults,
            collapse_step,
            rows,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse(format!("bad number {s:?}")))
}
