use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Where in a rollout a numerical failure happened.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Site {
    pub step: Option<usize>,
    pub scenario: Option<usize>,
    pub epoch: Option<usize>,
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(s) = self.scenario {
            write!(f, " [scenario {s}]")?;
        }
        if let Some(e) = self.epoch {
            write!(f, " [epoch {e}]")?;
        }
        if let Some(t) = self.step {
            write!(f, " [step {t}]")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("DC bus collapsed: v_dc = {v_dc} V at or below the floor{site}")]
    DcBusCollapse { v_dc: f64, site: Site },

    #[error("non-finite value in {what}{site}")]
    NonFinite { what: &'static str, site: Site },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("spectrum window spans {span} s, at least {required} s required")]
    WindowTooShort { span: f64, required: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn non_finite(what: &'static str) -> Self {
        Error::NonFinite {
            what,
            site: Site::default(),
        }
    }

    /// Numerical failures (as opposed to validation or I/O errors).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::DcBusCollapse { .. } | Error::NonFinite { .. })
    }

    pub fn at_step(mut self, step: usize) -> Self {
        if let Some(site) = self.site_mut() {
            site.step.get_or_insert(step);
        }
        self
    }

    pub fn in_scenario(mut self, scenario: usize) -> Self {
        if let Some(site) = self.site_mut() {
            site.scenario.get_or_insert(scenario);
        }
        self
    }

    pub fn in_epoch(mut self, epoch: usize) -> Self {
        if let Some(site) = self.site_mut() {
            site.epoch.get_or_insert(epoch);
        }
        self
    }

    pub fn site(&self) -> Option<Site> {
        match self {
            Error::DcBusCollapse { site, .. } | Error::NonFinite { site, .. } => Some(*site),
            _ => None,
        }
    }

    fn site_mut(&mut self) -> Option<&mut Site> {
        match self {
            Error::DcBusCollapse { site, .. } | Error::NonFinite { site, .. } => Some(site),
            _ => None,
        }
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
